#![allow(dead_code)]

use aps_core::oracle::{KernelConfig, SyntheticKernel};
use aps_core::population::{generate_synthetic_population, FeatureSpec, Population};
use aps_core::scenario::Scenario;
use aps_core::socialgraph::{build_ws_graph, SocialGraph};

/// Synthetic population, ring-rewired graph, generic scenario and a
/// deterministic kernel, all derived from one seed.
pub struct World {
    pub population: Population,
    pub graph: SocialGraph,
    pub scenario: Scenario,
    pub kernel: SyntheticKernel,
}

impl World {
    pub fn new(n: usize, rounds: usize, seed: u64) -> Self {
        Self::with_kernel(n, rounds, seed, KernelConfig { seed, ..KernelConfig::default() })
    }

    pub fn with_kernel(n: usize, rounds: usize, seed: u64, kernel: KernelConfig) -> Self {
        let population = generate_synthetic_population(&FeatureSpec::survey_like(), n, seed).unwrap();
        let graph = build_ws_graph(n, 10, 0.1, seed).unwrap();
        let scenario = Scenario::synthetic(kernel.n_options, rounds);
        let kernel = SyntheticKernel::new(KernelConfig { n_stages: rounds.max(kernel.n_stages), ..kernel }).unwrap();
        Self { population, graph, scenario, kernel }
    }
}

/// Builds `SimulationInputs` borrowing from a [`World`].
#[macro_export]
macro_rules! inputs {
    ($w:expr) => {
        inputs!($w, None)
    };
    ($w:expr, $init:expr) => {
        aps_core::engine::SimulationInputs {
            population: &$w.population,
            graph: &$w.graph,
            scenario: &$w.scenario,
            oracle: &$w.kernel,
            initial_states: $init,
        }
    };
}
