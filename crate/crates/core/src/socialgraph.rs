//! Fixed small-world context graph.
//!
//! Each agent owns a row of `k` context slots. The first `k/2` slots hold the
//! ring-lattice neighbors on the left, the last `k/2` the neighbors on the
//! right; only right-side slots are rewired. Storage is a flat `n * k` array
//! of `u32`, never a dense adjacency.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::rng::{keyed_rng, stream};
use crate::{Error, Result};

const REWIRE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SocialGraph {
    pub n: usize,
    pub k: usize,
    pub p_rewire: f64,
    pub seed: u64,
    neighbors: Vec<u32>,
}

impl SocialGraph {
    pub fn neighbors(&self, agent: usize) -> &[u32] {
        &self.neighbors[agent * self.k..(agent + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.neighbors
    }

    /// SHA-256 over the little-endian neighbor array.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.neighbors {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    /// Writes `graph.bin` (raw `u32` LE array) and `graph.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let bytes: Vec<u8> = self.neighbors.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join("graph.bin"), bytes)?;
        let sidecar = GraphSidecar {
            n: self.n,
            k: self.k,
            p_rewire: self.p_rewire,
            seed: self.seed,
            checksum: self.checksum(),
        };
        fs::write(dir.join("graph.json"), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar: GraphSidecar = serde_json::from_slice(&fs::read(dir.join("graph.json"))?)?;
        let bytes = fs::read(dir.join("graph.bin"))?;
        if bytes.len() != 4 * sidecar.n * sidecar.k {
            return Err(Error::config("graph.bin size does not match its sidecar"));
        }
        let neighbors = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let g = Self {
            n: sidecar.n,
            k: sidecar.k,
            p_rewire: sidecar.p_rewire,
            seed: sidecar.seed,
            neighbors,
        };
        if g.checksum() != sidecar.checksum {
            return Err(Error::config("graph checksum mismatch"));
        }
        Ok(g)
    }
}

#[derive(Serialize, Deserialize)]
struct GraphSidecar {
    n: usize,
    k: usize,
    p_rewire: f64,
    seed: u64,
    checksum: String,
}

/// Ring lattice with `k/2` neighbors per side, right-side slots rewired with
/// probability `p_rewire` to a uniform target that is neither the agent nor
/// already in its row (up to 100 draws, then the lattice target is kept).
pub fn build_ws_graph(n: usize, k: usize, p_rewire: f64, seed: u64) -> Result<SocialGraph> {
    if k == 0 || !k.is_multiple_of(2) {
        return Err(Error::config(format!("context degree {k} must be even and positive")));
    }
    if n <= k {
        return Err(Error::config(format!("agent count {n} must exceed the context degree {k}")));
    }
    if !(0.0..=1.0).contains(&p_rewire) {
        return Err(Error::config("rewiring probability must lie in [0, 1]"));
    }
    if n > u32::MAX as usize {
        return Err(Error::config("agent count exceeds the u32 index range"));
    }
    let half = k / 2;
    let mut neighbors = vec![0u32; n * k];
    for i in 0..n {
        let row = &mut neighbors[i * k..(i + 1) * k];
        for s in 0..half {
            row[s] = ((i + n - half + s) % n) as u32;
            row[half + s] = ((i + 1 + s) % n) as u32;
        }
    }
    let mut rng = keyed_rng(seed, &[stream::GRAPH]);
    for i in 0..n {
        for s in half..k {
            if rng.random::<f64>() >= p_rewire {
                continue;
            }
            for _ in 0..REWIRE_ATTEMPTS {
                let target = rng.random_range(0..n) as u32;
                let row = &neighbors[i * k..(i + 1) * k];
                if target as usize != i && !row.contains(&target) {
                    neighbors[i * k + s] = target;
                    break;
                }
            }
        }
    }
    Ok(SocialGraph { n, k, p_rewire, seed, neighbors })
}

/// Option counts over an agent's context slots.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateCounts {
    pub counts: Vec<u32>,
}

impl StateCounts {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }

    pub fn fractions(&self) -> Vec<f64> {
        let total = self.total();
        if total == 0 {
            return vec![0.0; self.counts.len()];
        }
        self.counts.iter().map(|&c| c as f64 / total as f64).collect()
    }
}

/// Counts the previous-round hard states (0-based options) of `agent`'s context slots.
pub fn neighbor_summary(graph: &SocialGraph, hard_states: &[u16], agent: usize, n_options: usize) -> Result<StateCounts> {
    if hard_states.len() != graph.n || agent >= graph.n {
        return Err(Error::config("hard state vector or agent index does not match the graph"));
    }
    let mut counts = vec![0u32; n_options];
    for &j in graph.neighbors(agent) {
        let s = hard_states[j as usize] as usize;
        if s >= n_options {
            return Err(Error::config(format!("state {s} outside the option range")));
        }
        counts[s] += 1;
    }
    Ok(StateCounts { counts })
}
