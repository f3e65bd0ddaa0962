use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use aps_core::checkpoint::RunControl;
use aps_core::engine::{run_simulation, RoundRecord, Seeds, SimulationInputs};
use aps_core::evaluation::{
    decompose_error, evaluate, run_baseline, run_reference, BaselineConfig, ErrorDecomposition, EvaluationReport,
    Trajectory,
};
use aps_core::oracle::{
    CallCounts, HttpOracle, KernelConfig, Oracle, PromptTemplate, ScriptedOracle, SyntheticKernel, DEFAULT_TEMPLATE,
};
use aps_core::population::{expand_from_seeds, generate_synthetic_population, read_seed_csv, FeatureSpec, Population};
use aps_core::scenario::Scenario;
use aps_core::socialgraph::{build_ws_graph, SocialGraph};
use aps_core::stratification::{
    audit_budget, core_budget, core_stratum_count, prototype_rate, tail_count, ScheduleConfig,
};
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::config::{from_table, read_table, OracleKind, PopulationSource, RunConfig};

/// Seeds recorded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub master: u64,
    pub run: u64,
    pub audit: u64,
    pub oracle: u64,
}

/// Schedule values at one population size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleValues {
    pub n: usize,
    pub prototype_rate: f64,
    pub core_budget: usize,
    pub core_strata: usize,
    pub tails: usize,
    pub audit_budget: usize,
}

impl ScheduleValues {
    pub fn at(n: usize, s: &ScheduleConfig) -> Self {
        Self {
            n,
            prototype_rate: prototype_rate(n, s),
            core_budget: core_budget(n, s),
            core_strata: core_stratum_count(n, s),
            tails: tail_count(n, s),
            audit_budget: audit_budget(n, s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub config_hash: String,
    pub seeds: SeedRecord,
    pub schedule: ScheduleValues,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub provenance: Provenance,
    pub method: String,
    pub oracle: serde_json::Value,
    pub n: usize,
    pub n_options: usize,
    pub rounds: usize,
    pub calls: CallCounts,
    pub calls_per_round: Vec<u64>,
    /// `N * T`.
    pub brute_force_calls: u64,
    pub reduction_factor: f64,
    pub final_distribution: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub provenance: Provenance,
    pub trajectory: Trajectory,
}

#[derive(Serialize)]
struct RoundLine<'a> {
    provenance: &'a Provenance,
    method: &'a str,
    round: usize,
    calls: &'a CallCounts,
    distribution: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    record: Option<&'a RoundRecord>,
}

#[derive(Serialize)]
struct EvaluationFile<'a> {
    provenance: &'a Provenance,
    method_config_hash: &'a str,
    reference_config_hash: &'a str,
    report: &'a EvaluationReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    decomposition: Option<&'a ErrorDecomposition>,
}

#[derive(Debug, Deserialize)]
struct ScenarioStage {
    text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    options: Vec<String>,
    stages: Vec<ScenarioStage>,
}

pub struct Workspace {
    pub cfg: RunConfig,
    pub hash: String,
    pub out: PathBuf,
}

impl Workspace {
    pub fn new(cfg: RunConfig) -> Self {
        let hash = cfg.hash();
        let out = cfg.output_dir.clone();
        Self { cfg, hash, out }
    }

    fn seeds(&self) -> SeedRecord {
        SeedRecord {
            master: self.cfg.seeds.master,
            run: self.cfg.seeds.master,
            audit: self.cfg.audit_seed(),
            oracle: self.cfg.oracle_seed(),
        }
    }

    fn provenance(&self, command: &str, n: usize) -> Provenance {
        Provenance {
            command: command.into(),
            config_hash: self.hash.clone(),
            seeds: self.seeds(),
            schedule: ScheduleValues::at(n, &self.cfg.engine.schedule),
        }
    }

    fn feature_spec(&self) -> Result<FeatureSpec> {
        match &self.cfg.population.features {
            Some(p) => {
                let spec: FeatureSpec = from_table(read_table(p)?, &p.display().to_string())?;
                spec.validate()?;
                Ok(spec)
            }
            None => Ok(FeatureSpec::survey_like()),
        }
    }

    pub fn population(&self) -> Result<Population> {
        let p = &self.cfg.population;
        let seed = self.cfg.seeds.master;
        Ok(match p.source {
            PopulationSource::Synthetic => generate_synthetic_population(&self.feature_spec()?, p.n, seed)?,
            PopulationSource::Seeds => {
                let spec = self.feature_spec()?;
                let path = p.seed_csv.as_ref().expect("validated");
                let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
                let records = read_seed_csv(file, &spec)?;
                expand_from_seeds(&records, &spec, p.n, &p.perturb, seed)?
            }
            PopulationSource::Saved => Population::load(p.dir.as_ref().expect("validated"))?,
        })
    }

    pub fn graph(&self, n: usize) -> Result<SocialGraph> {
        let g = &self.cfg.graph;
        let graph = match &g.dir {
            Some(dir) => SocialGraph::load(dir)?,
            None => build_ws_graph(n, g.k, g.p_rewire, self.cfg.seeds.master)?,
        };
        if graph.n != n {
            bail!("graph has {} nodes but the population has {n} agents", graph.n);
        }
        Ok(graph)
    }

    pub fn scenario(&self) -> Result<Scenario> {
        let s = &self.cfg.scenario;
        let full = match &s.file {
            Some(p) => {
                let f: ScenarioFile = from_table(read_table(p)?, &p.display().to_string())?;
                Scenario::new(f.options, f.stages.into_iter().map(|s| s.text).collect())?
            }
            None => Scenario::synthetic(s.options, s.stages),
        };
        let t = self.cfg.rounds.unwrap_or(full.rounds());
        if t > full.rounds() {
            bail!("`rounds` is {t} but the scenario has {} stages", full.rounds());
        }
        Ok(Scenario::new(full.options, full.stages[..t].to_vec())?)
    }

    pub fn oracle(&self, pop: &Population, scenario: &Scenario) -> Result<Box<dyn Oracle>> {
        let o = &self.cfg.oracle;
        Ok(match o.kind {
            OracleKind::Synthetic => {
                let s = &o.synthetic;
                Box::new(SyntheticKernel::new(KernelConfig {
                    n_features: pop.dim(),
                    n_options: scenario.n_options(),
                    n_stages: scenario.rounds(),
                    temperature: s.temperature,
                    weight_scale: s.weight_scale,
                    persistence: s.persistence,
                    social_weight: s.social_weight,
                    decoding: s.decoding,
                    seed: self.cfg.oracle_seed(),
                })?)
            }
            OracleKind::Http => {
                let text = match &o.template {
                    Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?,
                    None => DEFAULT_TEMPLATE.to_string(),
                };
                Box::new(HttpOracle::new(o.http.clone(), PromptTemplate::parse(&text)?)?)
            }
            OracleKind::Scripted => {
                let path = o.script.as_ref().expect("validated");
                Box::new(ScriptedOracle::from_csv(fs::File::open(path)?)?)
            }
        })
    }

    fn control(&self, resume: bool) -> RunControl {
        RunControl { resume, ..RunControl::in_dir(self.out.join("checkpoint"), self.hash.clone()) }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_slice(&bytes);
    serde_path_to_error::deserialize(de).map_err(|e| anyhow::anyhow!("{}: key `{}`: {}", path.display(), e.path(), e.inner()))
}

pub fn gen_pop(ctx: &Workspace) -> Result<()> {
    let pop = ctx.population()?;
    let dir = ctx.out.join("population");
    pop.save(&dir)?;
    write_json(
        &ctx.out.join("gen-pop.json"),
        &serde_json::json!({
            "provenance": ctx.provenance("gen-pop", pop.n),
            "n": pop.n,
            "dim": pop.dim(),
            "directory": "population",
        }),
    )?;
    info!(n = pop.n, dir = %dir.display(), "population written");
    Ok(())
}

pub fn gen_graph(ctx: &Workspace) -> Result<()> {
    let n = match ctx.cfg.population.source {
        PopulationSource::Saved => ctx.population()?.n,
        _ => ctx.cfg.population.n,
    };
    let graph = ctx.graph(n)?;
    let dir = ctx.out.join("graph");
    graph.save(&dir)?;
    write_json(
        &ctx.out.join("gen-graph.json"),
        &serde_json::json!({
            "provenance": ctx.provenance("gen-graph", n),
            "n": n,
            "k": graph.k,
            "checksum": graph.checksum(),
            "directory": "graph",
        }),
    )?;
    info!(n, checksum = %graph.checksum(), "graph written");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Reference,
    Aps,
    Baseline,
}

impl Method {
    fn command(self) -> &'static str {
        match self {
            Method::Reference => "run-reference",
            Method::Aps => "run-aps",
            Method::Baseline => "run-baseline",
        }
    }
}

fn baseline_budget(ctx: &Workspace) -> Result<usize> {
    let b = &ctx.cfg.baseline;
    match (b.budget, &b.match_summary) {
        (Some(budget), _) => Ok(budget),
        (None, Some(path)) => {
            let s: RunSummary = read_json(path)?;
            Ok(s.calls.total() as usize)
        }
        (None, None) => bail!("set `baseline.budget` or `baseline.match_summary`"),
    }
}

pub fn run(ctx: &Workspace, method: Method, resume: bool) -> Result<()> {
    let pop = ctx.population()?;
    let graph = ctx.graph(pop.n)?;
    let scenario = ctx.scenario()?;
    let oracle = ctx.oracle(&pop, &scenario)?;
    let inputs = SimulationInputs {
        population: &pop,
        graph: &graph,
        scenario: &scenario,
        oracle: oracle.as_ref(),
        initial_states: None,
    };
    fs::create_dir_all(&ctx.out)?;
    let control = ctx.control(resume);
    let seed = ctx.cfg.seeds.master;
    info!(command = method.command(), n = pop.n, rounds = scenario.rounds(), resume, "starting");
    let (trajectory, records) = match method {
        Method::Reference => (run_reference(&inputs, seed, &control)?, None),
        Method::Aps => {
            let seeds = Seeds { run: seed, audit: ctx.cfg.audit_seed() };
            let run = run_simulation(&inputs, &ctx.cfg.engine, seeds, &control)?;
            (Trajectory::from_aps(&run, scenario.n_options(), None), Some(run.records))
        }
        Method::Baseline => {
            let b = &ctx.cfg.baseline;
            let cfg = BaselineConfig { budget: baseline_budget(ctx)?, strata: b.strata, support_size: b.support_size };
            (run_baseline(b.kind, &inputs, &cfg, seed, &control)?, None)
        }
    };
    let provenance = ctx.provenance(method.command(), pop.n);
    write_outputs(ctx, &provenance, &trajectory, records.as_deref(), oracle.describe())?;
    let total = trajectory.total_calls().total();
    info!(method = %trajectory.method, calls = total, "finished");
    Ok(())
}

fn write_outputs(
    ctx: &Workspace,
    provenance: &Provenance,
    trajectory: &Trajectory,
    records: Option<&[RoundRecord]>,
    oracle: serde_json::Value,
) -> Result<()> {
    let mut lines = String::new();
    for (i, r) in trajectory.rounds.iter().enumerate() {
        let line = RoundLine {
            provenance,
            method: &trajectory.method,
            round: r.round,
            calls: &r.calls,
            distribution: &r.distribution,
            record: records.map(|recs| &recs[i]),
        };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    fs::write(ctx.out.join("rounds.jsonl"), lines)?;

    let calls = trajectory.total_calls();
    let rounds = trajectory.rounds.len();
    let brute_force_calls = (trajectory.n * rounds) as u64;
    let summary = RunSummary {
        provenance: provenance.clone(),
        method: trajectory.method.clone(),
        oracle,
        n: trajectory.n,
        n_options: trajectory.n_options,
        rounds,
        calls,
        calls_per_round: trajectory.rounds.iter().map(|r| r.calls.total()).collect(),
        brute_force_calls,
        reduction_factor: brute_force_calls as f64 / calls.total().max(1) as f64,
        final_distribution: trajectory.last().map(|r| r.distribution.clone()).unwrap_or_default(),
    };
    write_json(&ctx.out.join("summary.json"), &summary)?;
    write_json(
        &ctx.out.join("trajectory.json"),
        &TrajectoryFile { provenance: provenance.clone(), trajectory: trajectory.clone() },
    )
}

pub fn evaluate_cmd(ctx: &Workspace, method: &Path, reference: &Path, decompose: bool) -> Result<()> {
    let m: TrajectoryFile = read_json(method)?;
    let r: TrajectoryFile = read_json(reference)?;
    let ev = &ctx.cfg.evaluation;
    let report = evaluate(&m.trajectory, &r.trajectory, ev.resamples, ev.confidence, ctx.cfg.seeds.master)?;
    let decomposition = if decompose {
        let pop = ctx.population()?;
        let graph = ctx.graph(pop.n)?;
        let scenario = ctx.scenario()?;
        let oracle = ctx.oracle(&pop, &scenario)?;
        let inputs = SimulationInputs {
            population: &pop,
            graph: &graph,
            scenario: &scenario,
            oracle: oracle.as_ref(),
            initial_states: None,
        };
        Some(decompose_error(&m.trajectory, &r.trajectory, &inputs)?)
    } else {
        None
    };
    fs::create_dir_all(&ctx.out)?;
    let provenance = ctx.provenance("evaluate", m.trajectory.n);
    write_json(
        &ctx.out.join("evaluation.json"),
        &EvaluationFile {
            provenance: &provenance,
            method_config_hash: &m.provenance.config_hash,
            reference_config_hash: &r.provenance.config_hash,
            report: &report,
            decomposition: decomposition.as_ref(),
        },
    )?;
    let mut csv = String::from("config_hash,method,round,jsd,l1,exact_match,method_calls\n");
    for c in &report.rounds {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            ctx.hash, report.method, c.round, c.jsd, c.l1, c.exact_match, c.method_calls
        )?;
    }
    fs::write(ctx.out.join("evaluation_rounds.csv"), csv)?;
    info!(final_jsd = report.final_jsd, exact_match = report.final_exact_match, "evaluation written");
    Ok(())
}

/// Total calls of a production-schedule run at size `n` over `rounds` rounds.
pub fn scheduled_calls(v: &ScheduleValues, rounds: usize) -> u64 {
    (rounds * (v.core_budget + v.tails + v.audit_budget)) as u64
}

pub fn report(ctx: &Workspace, evaluations: &[PathBuf]) -> Result<()> {
    let rounds = ctx.cfg.rounds.unwrap_or(ctx.cfg.scenario.stages);
    let schedule = &ctx.cfg.engine.schedule;
    let mut scaling = String::from(
        "config_hash,n,rounds,prototype_rate,core_budget,core_strata,tails,audit_budget,total_calls,brute_force_calls,reduction_factor\n",
    );
    for &n in &ctx.cfg.report.sweep {
        let v = ScheduleValues::at(n, schedule);
        let total = scheduled_calls(&v, rounds);
        let brute = (n * rounds) as u64;
        writeln!(
            scaling,
            "{},{n},{rounds},{},{},{},{},{},{total},{brute},{}",
            ctx.hash,
            v.prototype_rate,
            v.core_budget,
            v.core_strata,
            v.tails,
            v.audit_budget,
            brute as f64 / total as f64
        )?;
    }
    fs::create_dir_all(&ctx.out)?;
    fs::write(ctx.out.join("call_scaling.csv"), scaling)?;

    let mut drift = String::from("config_hash,method,round,jsd,l1,exact_match,cumulative_calls\n");
    for path in evaluations {
        let file: serde_json::Value = read_json(path)?;
        let report: EvaluationReport = serde_json::from_value(file["report"].clone())
            .with_context(|| format!("{} holds no evaluation report", path.display()))?;
        let mut cumulative = 0;
        for c in &report.rounds {
            cumulative += c.method_calls;
            writeln!(
                drift,
                "{},{},{},{},{},{},{cumulative}",
                ctx.hash, report.method, c.round, c.jsd, c.l1, c.exact_match
            )?;
        }
    }
    fs::write(ctx.out.join("drift.csv"), drift)?;
    write_json(
        &ctx.out.join("report.json"),
        &serde_json::json!({
            "provenance": ctx.provenance("report", ctx.cfg.population.n),
            "sweep": ctx.cfg.report.sweep
                .iter()
                .map(|&n| ScheduleValues::at(n, schedule))
                .collect::<Vec<_>>(),
            "rounds": rounds,
            "evaluations": evaluations,
        }),
    )?;
    info!(sizes = ctx.cfg.report.sweep.len(), evaluations = evaluations.len(), "report written");
    Ok(())
}
