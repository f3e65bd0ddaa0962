//! Run configuration: one TOML file with dotted keys plus `key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use aps_core::engine::EngineConfig;
use aps_core::evaluation::BaselineKind;
use aps_core::oracle::{Decoding, HttpOracleConfig};
use aps_core::population::PerturbConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeedConfig {
    pub master: u64,
    /// Synthetic-kernel seed; defaults to `master`.
    pub oracle: Option<u64>,
    /// Audit-draw seed; defaults to `master`.
    pub audit: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PopulationSource {
    Synthetic,
    /// Seed CSV expanded to `n` agents.
    Seeds,
    /// A directory written by `gen-pop`.
    Saved,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    pub source: PopulationSource,
    pub n: usize,
    /// Feature spec file; the built-in survey-like spec when absent.
    pub features: Option<PathBuf>,
    pub seed_csv: Option<PathBuf>,
    pub dir: Option<PathBuf>,
    pub perturb: PerturbConfig,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            source: PopulationSource::Synthetic,
            n: 2000,
            features: None,
            seed_csv: None,
            dir: None,
            perturb: PerturbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub k: usize,
    pub p_rewire: f64,
    /// A directory written by `gen-graph`; built from `k` and `p_rewire` when absent.
    pub dir: Option<PathBuf>,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self { k: 10, p_rewire: 0.1, dir: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// Scenario file with `options` and `[[stages]]`; a generic scenario when absent.
    pub file: Option<PathBuf>,
    pub options: usize,
    pub stages: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self { file: None, options: 5, stages: 8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleKind {
    Synthetic,
    Http,
    Scripted,
}

/// Synthetic-kernel knobs; dimensions come from the population and scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticOracleConfig {
    pub temperature: f64,
    pub weight_scale: f64,
    pub persistence: f64,
    pub social_weight: f64,
    pub decoding: Decoding,
}

impl Default for SyntheticOracleConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            weight_scale: 1.0,
            persistence: 0.0,
            social_weight: 0.0,
            decoding: Decoding::Deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub kind: OracleKind,
    pub synthetic: SyntheticOracleConfig,
    pub http: HttpOracleConfig,
    /// Prompt template file for the HTTP oracle.
    pub template: Option<PathBuf>,
    /// `agent,round,option` CSV for the scripted oracle.
    pub script: Option<PathBuf>,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            kind: OracleKind::Synthetic,
            synthetic: SyntheticOracleConfig::default(),
            http: HttpOracleConfig::default(),
            template: None,
            script: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub kind: BaselineKind,
    /// Total calls; taken from `match_summary` when absent.
    pub budget: Option<usize>,
    /// A run summary whose total calls set the budget.
    pub match_summary: Option<PathBuf>,
    pub strata: Option<usize>,
    pub support_size: usize,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            kind: BaselineKind::LabelPropagation,
            budget: None,
            match_summary: None,
            strata: None,
            support_size: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub resamples: usize,
    pub confidence: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { resamples: 1000, confidence: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Population sizes of the call-scaling table.
    pub sweep: Vec<usize>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self { sweep: vec![5_000, 10_000, 100_000] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seeds: SeedConfig,
    /// Rounds `T`; every scenario stage when absent.
    pub rounds: Option<usize>,
    pub output_dir: PathBuf,
    pub population: PopulationConfig,
    pub graph: GraphConfig,
    pub scenario: ScenarioConfig,
    pub oracle: OracleConfig,
    pub engine: EngineConfig,
    pub baseline: BaselineSection,
    pub evaluation: EvaluationConfig,
    pub report: ReportConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seeds: SeedConfig::default(),
            rounds: None,
            output_dir: PathBuf::from("out"),
            population: PopulationConfig::default(),
            graph: GraphConfig::default(),
            scenario: ScenarioConfig::default(),
            oracle: OracleConfig::default(),
            engine: EngineConfig::default(),
            baseline: BaselineSection::default(),
            evaluation: EvaluationConfig::default(),
            report: ReportConfig::default(),
        }
    }
}

/// Parses an override value as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, value) = spec
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{spec}` is not of the form key=value"))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("override key `{key}` has an empty segment");
    }
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for (i, p) in path.iter().enumerate() {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| anyhow!("override key `{}` is not a table", parts[..=i].join(".")))?;
    }
    cur.insert(last.to_string(), parse_value(value.trim()));
    Ok(())
}

/// Deserializes with the full key path of the first offending field in the error.
pub fn from_table<T: DeserializeOwned>(table: toml::Table, origin: &str) -> Result<T> {
    serde_path_to_error::deserialize(toml::Value::Table(table))
        .map_err(|e| anyhow!("{origin}: key `{}`: {}", e.path(), e.inner()))
}

pub fn read_table(path: &Path) -> Result<toml::Table> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.parse::<toml::Table>()
        .map_err(|e| anyhow!("{}: {e}", path.display()))
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn require(p: &Option<PathBuf>, key: &str) -> Result<()> {
    match p {
        Some(path) if !path.exists() => bail!("`{key}` refers to {} which does not exist", path.display()),
        _ => Ok(()),
    }
}

impl RunConfig {
    /// Loads `path` (or defaults), applies overrides in order, resolves
    /// relative file references against the config's directory and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => read_table(p)?,
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let origin = path.map_or_else(|| "config".to_string(), |p| p.display().to_string());
        let mut cfg: RunConfig = from_table(table, &origin)?;
        let base = path.and_then(Path::parent).map(Path::to_path_buf).unwrap_or_default();
        for p in [
            &mut cfg.population.features,
            &mut cfg.population.seed_csv,
            &mut cfg.population.dir,
            &mut cfg.graph.dir,
            &mut cfg.scenario.file,
            &mut cfg.oracle.template,
            &mut cfg.oracle.script,
            &mut cfg.baseline.match_summary,
        ] {
            rebase(&base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rounds == Some(0) {
            bail!("`rounds` must be at least 1");
        }
        require(&self.population.features, "population.features")?;
        require(&self.population.seed_csv, "population.seed_csv")?;
        require(&self.population.dir, "population.dir")?;
        require(&self.graph.dir, "graph.dir")?;
        require(&self.scenario.file, "scenario.file")?;
        require(&self.oracle.template, "oracle.template")?;
        require(&self.oracle.script, "oracle.script")?;
        match self.population.source {
            PopulationSource::Seeds if self.population.seed_csv.is_none() => {
                bail!("`population.seed_csv` is required when `population.source` is \"seeds\"")
            }
            PopulationSource::Saved if self.population.dir.is_none() => {
                bail!("`population.dir` is required when `population.source` is \"saved\"")
            }
            _ => {}
        }
        if self.oracle.kind == OracleKind::Scripted && self.oracle.script.is_none() {
            bail!("`oracle.script` is required when `oracle.kind` is \"scripted\"");
        }
        self.engine.validate()?;
        Ok(())
    }

    pub fn oracle_seed(&self) -> u64 {
        self.seeds.oracle.unwrap_or(self.seeds.master)
    }

    pub fn audit_seed(&self) -> u64 {
        self.seeds.audit.unwrap_or(self.seeds.master)
    }

    /// SHA-256 of the canonical JSON form, ignoring the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dotted_overrides_create_nested_keys() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "engine.schedule.fixed_rate=0.3").unwrap();
        apply_override(&mut t, "oracle.kind=http").unwrap();
        let cfg: RunConfig = from_table(t, "test").unwrap();
        assert_eq!(cfg.engine.schedule.fixed_rate, Some(0.3));
        assert_eq!(cfg.oracle.kind, OracleKind::Http);
    }

    #[test]
    fn bad_value_names_its_key() {
        let mut t = toml::Table::new();
        apply_override(&mut t, "engine.schedule.baseline_n=\"many\"").unwrap();
        let err = from_table::<RunConfig>(t, "test").unwrap_err().to_string();
        assert!(err.contains("engine.schedule.baseline_n"), "{err}");
    }

    #[test]
    fn hash_ignores_output_dir_only() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seeds.master = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
