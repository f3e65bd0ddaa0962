//! Agent populations.
//!
//! A population is a mixed-type raw table (`n x d`) together with its
//! column-standardized copy. Raw values are encoded as `f64`:
//!
//! - categorical: index into the declared support,
//! - ordinal: the integer value itself,
//! - continuous: the value,
//! - missing: `NaN` (standardized to `0`).
//!
//! Populations come either from [`generate_synthetic_population`] or from a
//! seed table expanded with type-aware perturbation ([`expand_from_seeds`]).

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::rng::{keyed_rng, stream};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Categorical { support: Vec<String> },
    Ordinal { lower: i64, upper: i64 },
    /// Continuous feature clipped to `[lower, upper]`.
    Continuous { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDescriptor {
    pub name: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

impl FeatureDescriptor {
    pub fn categorical(name: &str, support: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Categorical {
                support: support.iter().map(|s| s.to_string()).collect(),
            },
        }
    }

    pub fn ordinal(name: &str, lower: i64, upper: i64) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Ordinal { lower, upper },
        }
    }

    pub fn continuous(name: &str, lower: f64, upper: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: FeatureKind::Continuous { lower, upper },
        }
    }

    /// Checks that an encoded raw value lies in the declared support.
    pub fn admits(&self, value: f64) -> bool {
        if value.is_nan() {
            return true;
        }
        match &self.kind {
            FeatureKind::Categorical { support } => {
                value.fract() == 0.0 && value >= 0.0 && (value as usize) < support.len()
            }
            FeatureKind::Ordinal { lower, upper } => {
                value.fract() == 0.0 && value >= *lower as f64 && value <= *upper as f64
            }
            FeatureKind::Continuous { lower, upper } => value >= *lower && value <= *upper,
        }
    }

    /// Parses one CSV cell into the raw encoding. Empty cells and `NA` are missing.
    pub fn parse_cell(&self, cell: &str) -> std::result::Result<f64, String> {
        let cell = cell.trim();
        if cell.is_empty() || cell.eq_ignore_ascii_case("na") {
            return Ok(f64::NAN);
        }
        match &self.kind {
            FeatureKind::Categorical { support } => support
                .iter()
                .position(|s| s == cell)
                .map(|i| i as f64)
                .ok_or_else(|| format!("{}: '{cell}' is not in the categorical support", self.name)),
            FeatureKind::Ordinal { lower, upper } => {
                let v: i64 = cell
                    .parse()
                    .map_err(|_| format!("{}: '{cell}' is not an integer", self.name))?;
                if v < *lower || v > *upper {
                    return Err(format!("{}: {v} outside [{lower}, {upper}]", self.name));
                }
                Ok(v as f64)
            }
            FeatureKind::Continuous { lower, upper } => {
                let v: f64 = cell
                    .parse()
                    .map_err(|_| format!("{}: '{cell}' is not a number", self.name))?;
                if !v.is_finite() || v < *lower || v > *upper {
                    return Err(format!("{}: {v} outside [{lower}, {upper}]", self.name));
                }
                Ok(v)
            }
        }
    }

    fn format_value(&self, value: f64) -> String {
        if value.is_nan() {
            return "unknown".to_string();
        }
        match &self.kind {
            FeatureKind::Categorical { support } => support[value as usize].clone(),
            FeatureKind::Ordinal { .. } => format!("{}", value as i64),
            FeatureKind::Continuous { .. } => format!("{value:.2}"),
        }
    }
}

/// Declarative description of the feature columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub features: Vec<FeatureDescriptor>,
}

impl FeatureSpec {
    pub fn new(features: Vec<FeatureDescriptor>) -> Result<Self> {
        let spec = Self { features };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::config("feature spec is empty"));
        }
        let mut seen = std::collections::HashSet::new();
        for f in &self.features {
            if !seen.insert(f.name.as_str()) {
                return Err(Error::config(format!("duplicate feature name '{}'", f.name)));
            }
            match &f.kind {
                FeatureKind::Categorical { support } if support.is_empty() => {
                    return Err(Error::config(format!("feature '{}' has an empty support", f.name)));
                }
                FeatureKind::Ordinal { lower, upper } if lower > upper => {
                    return Err(Error::config(format!("feature '{}' has lower > upper", f.name)));
                }
                FeatureKind::Continuous { lower, upper }
                    if !lower.is_finite() || !upper.is_finite() || lower > upper =>
                {
                    return Err(Error::config(format!(
                        "feature '{}' needs finite bounds with lower <= upper",
                        f.name
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// A mixed 19-column spec shaped like a survey profile: demographic
    /// categoricals, ordinal scales and continuous value indices.
    pub fn survey_like() -> Self {
        let mut f = vec![
            FeatureDescriptor::ordinal("age_group", 1, 6),
            FeatureDescriptor::categorical("gender", &["female", "male"]),
            FeatureDescriptor::ordinal("education", 0, 8),
            FeatureDescriptor::ordinal("income", 1, 10),
            FeatureDescriptor::categorical("marital_status", &["single", "married", "divorced", "widowed"]),
            FeatureDescriptor::categorical("region", &["north", "south", "east", "west", "central"]),
            FeatureDescriptor::ordinal("town_size", 1, 8),
            FeatureDescriptor::ordinal("health", 1, 5),
            FeatureDescriptor::ordinal("social_trust", 1, 4),
            FeatureDescriptor::ordinal("political_interest", 1, 4),
            FeatureDescriptor::ordinal("social_activity", 1, 4),
        ];
        for name in [
            "secular_values",
            "authority_respect",
            "nationalism",
            "defiance",
            "scepticism",
            "autonomy",
            "equality",
            "religiosity",
        ] {
            f.push(FeatureDescriptor::continuous(name, 0.0, 1.0));
        }
        Self { features: f }
    }
}

/// Agent population: raw mixed-type values plus the standardized matrix used
/// for stratification, tail scoring and interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Population {
    pub spec: FeatureSpec,
    pub n: usize,
    /// Row-major `n x d` raw encoding.
    pub raw: Vec<f64>,
    /// Row-major `n x d` z-scored features.
    pub standardized: Vec<f64>,
    pub feature_means: Vec<f64>,
    pub feature_sds: Vec<f64>,
    pub seed: u64,
    /// Seed-record index each agent was expanded from, when seed-expanded.
    pub anchors: Option<Vec<usize>>,
}

impl Population {
    /// Builds a population from an already-encoded raw table.
    pub fn from_raw(spec: FeatureSpec, raw: Vec<f64>, seed: u64) -> Result<Self> {
        spec.validate()?;
        let d = spec.dim();
        if raw.is_empty() || !raw.len().is_multiple_of(d) {
            return Err(Error::config("raw table shape does not match the feature spec"));
        }
        let n = raw.len() / d;
        for (i, row) in raw.chunks(d).enumerate() {
            for (f, &v) in spec.features.iter().zip(row) {
                if !f.admits(v) {
                    return Err(Error::Ingestion {
                        row: i,
                        message: format!("{}: value {v} outside its support", f.name),
                    });
                }
            }
        }
        let (standardized, feature_means, feature_sds) = standardize(&raw, n, d);
        Ok(Self {
            spec,
            n,
            raw,
            standardized,
            feature_means,
            feature_sds,
            seed,
            anchors: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn raw_row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.raw[i * d..(i + 1) * d]
    }

    pub fn features(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.standardized[i * d..(i + 1) * d]
    }

    /// Recovers raw values from standardized ones using the stored moments.
    /// Exact only for present values in columns with nonzero spread.
    pub fn destandardize(&self, i: usize) -> Vec<f64> {
        self.features(i)
            .iter()
            .zip(self.feature_means.iter().zip(&self.feature_sds))
            .map(|(&z, (&m, &s))| if s == 0.0 { m } else { z * s + m })
            .collect()
    }

    /// Human-readable profile line used in prompts.
    pub fn profile_text(&self, i: usize) -> String {
        self.spec
            .features
            .iter()
            .zip(self.raw_row(i))
            .map(|(f, &v)| format!("{}: {}", f.name, f.format_value(v)))
            .collect::<Vec<_>>()
            .join("; ")
    }

    /// Writes `population.bin` (column store) and `population.json` (sidecar).
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let d = self.dim();
        let mut buf = Vec::with_capacity(24 + 16 * self.n * d);
        buf.extend_from_slice(POP_MAGIC);
        buf.extend_from_slice(&(self.n as u64).to_le_bytes());
        buf.extend_from_slice(&(d as u64).to_le_bytes());
        for table in [&self.raw, &self.standardized] {
            for c in 0..d {
                for i in 0..self.n {
                    buf.extend_from_slice(&table[i * d + c].to_le_bytes());
                }
            }
        }
        fs::File::create(dir.join("population.bin"))?.write_all(&buf)?;
        let sidecar = PopulationSidecar {
            spec: self.spec.clone(),
            n: self.n,
            seed: self.seed,
            feature_means: self.feature_means.clone(),
            feature_sds: self.feature_sds.clone(),
            anchors: self.anchors.clone(),
        };
        fs::write(dir.join("population.json"), serde_json::to_vec_pretty(&sidecar)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let sidecar: PopulationSidecar =
            serde_json::from_slice(&fs::read(dir.join("population.json"))?)?;
        let mut bytes = Vec::new();
        fs::File::open(dir.join("population.bin"))?.read_to_end(&mut bytes)?;
        let d = sidecar.spec.dim();
        let n = sidecar.n;
        if bytes.len() != 24 + 16 * n * d || &bytes[..8] != POP_MAGIC {
            return Err(Error::config("population.bin does not match its sidecar"));
        }
        let read_u64 = |at: usize| u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        if read_u64(8) as usize != n || read_u64(16) as usize != d {
            return Err(Error::config("population.bin header does not match its sidecar"));
        }
        let mut tables = [vec![0.0; n * d], vec![0.0; n * d]];
        let mut at = 24;
        for table in tables.iter_mut() {
            for c in 0..d {
                for i in 0..n {
                    table[i * d + c] = f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                    at += 8;
                }
            }
        }
        let [raw, standardized] = tables;
        Ok(Self {
            spec: sidecar.spec,
            n,
            raw,
            standardized,
            feature_means: sidecar.feature_means,
            feature_sds: sidecar.feature_sds,
            seed: sidecar.seed,
            anchors: sidecar.anchors,
        })
    }
}

const POP_MAGIC: &[u8; 8] = b"APSPOP01";

#[derive(Serialize, Deserialize)]
struct PopulationSidecar {
    spec: FeatureSpec,
    n: usize,
    seed: u64,
    feature_means: Vec<f64>,
    feature_sds: Vec<f64>,
    anchors: Option<Vec<usize>>,
}

/// Column z-scoring with population (ddof = 0) moments over present values.
/// Missing entries and zero-spread columns standardize to `0`.
pub fn standardize(raw: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut means = vec![0.0; d];
    let mut sds = vec![0.0; d];
    let mut out = vec![0.0; n * d];
    for c in 0..d {
        let present: Vec<f64> = (0..n).map(|i| raw[i * d + c]).filter(|v| !v.is_nan()).collect();
        if present.is_empty() {
            continue;
        }
        let m = present.iter().sum::<f64>() / present.len() as f64;
        let var = present.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / present.len() as f64;
        let sd = var.sqrt();
        means[c] = m;
        if sd <= 1e-12 * m.abs().max(1.0) {
            continue;
        }
        sds[c] = sd;
        for i in 0..n {
            let v = raw[i * d + c];
            out[i * d + c] = if v.is_nan() { 0.0 } else { (v - m) / sd };
        }
    }
    (out, means, sds)
}

/// Draws a synthetic population. Categorical columns come from a seeded
/// categorical distribution, ordinal columns are uniform over their range and
/// continuous columns follow a seeded two-component Gaussian mixture clipped
/// to the declared bounds.
pub fn generate_synthetic_population(spec: &FeatureSpec, n: usize, seed: u64) -> Result<Population> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::config("population size must be at least 1"));
    }
    let d = spec.dim();
    let mut raw = vec![0.0; n * d];
    for (c, f) in spec.features.iter().enumerate() {
        let mut rng = keyed_rng(seed, &[stream::POPULATION, c as u64]);
        match &f.kind {
            FeatureKind::Categorical { support } => {
                let weights: Vec<f64> = (0..support.len()).map(|_| rng.random_range(0.2..1.0)).collect();
                let dist = WeightedIndex::new(&weights).expect("positive weights");
                for i in 0..n {
                    raw[i * d + c] = dist.sample(&mut rng) as f64;
                }
            }
            FeatureKind::Ordinal { lower, upper } => {
                for i in 0..n {
                    raw[i * d + c] = rng.random_range(*lower..=*upper) as f64;
                }
            }
            FeatureKind::Continuous { lower, upper } => {
                let width = upper - lower;
                let w: f64 = rng.random_range(0.3..0.7);
                let mu = [
                    lower + width * rng.random_range(0.2..0.4),
                    lower + width * rng.random_range(0.6..0.8),
                ];
                let sd = [
                    width * rng.random_range(0.08..0.15),
                    width * rng.random_range(0.08..0.15),
                ];
                for i in 0..n {
                    let k = usize::from(rng.random::<f64>() >= w);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    raw[i * d + c] = (mu[k] + sd[k] * z).clamp(*lower, *upper);
                }
            }
        }
    }
    Population::from_raw(spec.clone(), raw, seed)
}

/// Perturbation settings for seed expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbConfig {
    /// Probability an ordinal value keeps the seed category; the rest is split
    /// evenly over the two adjacent categories (renormalized at the bounds).
    pub stickiness: f64,
    /// Probability a categorical value is redrawn from the cell's empirical marginal.
    pub categorical_redraw: f64,
    /// Scale of continuous noise in standardized units.
    pub continuous_scale: f64,
    /// Weight pulling the local covariance toward the identity.
    pub shrinkage: f64,
    /// Nearest same-cell seeds used for the local covariance.
    pub neighbors: usize,
    pub clip_lower_quantile: f64,
    pub clip_upper_quantile: f64,
    /// Optional categorical column used as the coarse cell key.
    pub cell_column: Option<String>,
}

impl Default for PerturbConfig {
    fn default() -> Self {
        Self {
            stickiness: 0.6,
            categorical_redraw: 0.1,
            continuous_scale: 0.25,
            shrinkage: 0.5,
            neighbors: 10,
            clip_lower_quantile: 0.01,
            clip_upper_quantile: 0.99,
            cell_column: None,
        }
    }
}

impl PerturbConfig {
    /// No perturbation at all: expanded agents are exact copies of their anchors.
    pub fn identity() -> Self {
        Self {
            stickiness: 1.0,
            categorical_redraw: 0.0,
            continuous_scale: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.stickiness) || !unit(self.categorical_redraw) || !unit(self.shrinkage) {
            return Err(Error::config("perturbation probabilities must lie in [0, 1]"));
        }
        if self.continuous_scale < 0.0 || self.neighbors == 0 {
            return Err(Error::config("continuous_scale must be >= 0 and neighbors >= 1"));
        }
        if !(unit(self.clip_lower_quantile)
            && unit(self.clip_upper_quantile)
            && self.clip_lower_quantile <= self.clip_upper_quantile)
        {
            return Err(Error::config("clip quantiles must satisfy 0 <= lower <= upper <= 1"));
        }
        Ok(())
    }
}

/// Reads seed records from CSV. The header must name every spec feature
/// (extra columns are ignored). Returns the row-major raw encoding.
pub fn read_seed_csv<R: Read>(reader: R, spec: &FeatureSpec) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let columns: Vec<usize> = spec
        .features
        .iter()
        .map(|f| {
            headers
                .iter()
                .position(|h| h.trim() == f.name)
                .ok_or_else(|| Error::Ingestion { row: 0, message: format!("missing column '{}'", f.name) })
        })
        .collect::<Result<_>>()?;
    let mut raw = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for (f, &col) in spec.features.iter().zip(&columns) {
            let cell = record.get(col).unwrap_or("");
            let v = f.parse_cell(cell).map_err(|message| Error::Ingestion { row, message })?;
            raw.push(v);
        }
    }
    if raw.is_empty() {
        return Err(Error::Ingestion { row: 0, message: "no seed records".into() });
    }
    Ok(raw)
}

/// Expands seed records into a population of `target_n` agents.
///
/// Agents `0..R` are the seed records themselves. Each further agent is
/// anchored to a seed record drawn uniformly with replacement from the
/// `EXPANSION_ANCHOR` stream and perturbed per column type.
pub fn expand_from_seeds(
    seed_records: &[f64],
    spec: &FeatureSpec,
    target_n: usize,
    perturb: &PerturbConfig,
    seed: u64,
) -> Result<Population> {
    spec.validate()?;
    perturb.validate()?;
    let d = spec.dim();
    if seed_records.is_empty() || !seed_records.len().is_multiple_of(d) {
        return Err(Error::config("seed records must be a non-empty n x d table"));
    }
    let r = seed_records.len() / d;
    if target_n < r {
        return Err(Error::config(format!("target_n {target_n} is below the seed count {r}")));
    }
    for (i, row) in seed_records.chunks(d).enumerate() {
        for (f, &v) in spec.features.iter().zip(row) {
            if !f.admits(v) {
                return Err(Error::Ingestion {
                    row: i,
                    message: format!("{}: value {v} outside its support", f.name),
                });
            }
        }
    }

    let cell_col = match &perturb.cell_column {
        Some(name) => {
            let c = spec
                .index_of(name)
                .ok_or_else(|| Error::config(format!("unknown cell column '{name}'")))?;
            if !matches!(spec.features[c].kind, FeatureKind::Categorical { .. }) {
                return Err(Error::config("cell column must be categorical"));
            }
            Some(c)
        }
        None => None,
    };
    let cell_of = |row: usize| -> i64 {
        match cell_col {
            Some(c) => {
                let v = seed_records[row * d + c];
                if v.is_nan() {
                    -1
                } else {
                    v as i64
                }
            }
            None => 0,
        }
    };

    let mut anchor_rng = keyed_rng(seed, &[stream::EXPANSION_ANCHOR]);
    let anchors: Vec<usize> = (0..r)
        .chain((r..target_n).map(|_| anchor_rng.random_range(0..r)))
        .collect();

    let mut cells: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for row in 0..r {
        cells.entry(cell_of(row)).or_default().push(row);
    }

    let continuous: Vec<usize> = spec
        .features
        .iter()
        .enumerate()
        .filter(|(_, f)| matches!(f.kind, FeatureKind::Continuous { .. }))
        .map(|(c, _)| c)
        .collect();
    let cont = ContinuousModel::fit(seed_records, d, &continuous, perturb);

    // Local Cholesky factors for every anchor that will be perturbed.
    let mut used: Vec<usize> = anchors[r..].to_vec();
    used.sort_unstable();
    used.dedup();
    let factors: HashMap<usize, Option<Vec<f64>>> = if perturb.continuous_scale > 0.0 && !continuous.is_empty() {
        used.par_iter()
            .map(|&a| (a, cont.local_factor(a, &cells[&cell_of(a)], perturb)))
            .collect()
    } else {
        HashMap::new()
    };

    // Empirical categorical marginals per cell.
    let marginal = |cell: i64, c: usize| -> Vec<f64> {
        let mut counts = Vec::new();
        for &row in &cells[&cell] {
            let v = seed_records[row * d + c];
            if !v.is_nan() {
                let k = v as usize;
                if counts.len() <= k {
                    counts.resize(k + 1, 0.0);
                }
                counts[k] += 1.0;
            }
        }
        counts
    };
    let mut marginals: HashMap<(i64, usize), Vec<f64>> = HashMap::new();
    if perturb.categorical_redraw > 0.0 {
        for &cell in cells.keys() {
            for (c, f) in spec.features.iter().enumerate() {
                if matches!(f.kind, FeatureKind::Categorical { .. }) && Some(c) != cell_col {
                    marginals.insert((cell, c), marginal(cell, c));
                }
            }
        }
    }

    let mut raw = vec![0.0; target_n * d];
    raw[..r * d].copy_from_slice(seed_records);
    raw[r * d..]
        .par_chunks_mut(d)
        .enumerate()
        .for_each(|(offset, out)| {
            let agent = r + offset;
            let a = anchors[agent];
            let src = &seed_records[a * d..(a + 1) * d];
            out.copy_from_slice(src);
            let mut rng = keyed_rng(seed, &[stream::EXPANSION_PERTURB, agent as u64]);
            for (c, f) in spec.features.iter().enumerate() {
                let v = src[c];
                match &f.kind {
                    FeatureKind::Categorical { .. } => {
                        if Some(c) == cell_col || perturb.categorical_redraw == 0.0 {
                            continue;
                        }
                        if rng.random::<f64>() < perturb.categorical_redraw {
                            if let Some(w) = marginals.get(&(cell_of(a), c)) {
                                if let Ok(dist) = WeightedIndex::new(w) {
                                    out[c] = dist.sample(&mut rng) as f64;
                                }
                            }
                        }
                    }
                    FeatureKind::Ordinal { lower, upper } => {
                        if !v.is_nan() {
                            out[c] = ordinal_step(v as i64, *lower, *upper, perturb.stickiness, &mut rng) as f64;
                        }
                    }
                    FeatureKind::Continuous { .. } => {}
                }
            }
            if let Some(Some(l)) = factors.get(&a) {
                cont.perturb(src, out, l, perturb.continuous_scale, &mut rng);
            }
        });

    let mut pop = Population::from_raw(spec.clone(), raw, seed)?;
    pop.anchors = Some(anchors);
    Ok(pop)
}

/// Discrete local kernel: stay with `stickiness`, move one step either way
/// with the remaining mass split evenly; steps leaving the range are dropped
/// and the rest renormalized.
pub fn ordinal_step<R: Rng + ?Sized>(value: i64, lower: i64, upper: i64, stickiness: f64, rng: &mut R) -> i64 {
    let side = (1.0 - stickiness) / 2.0;
    let down = if value > lower { side } else { 0.0 };
    let up = if value < upper { side } else { 0.0 };
    let total = stickiness + down + up;
    if total <= 0.0 {
        return value;
    }
    let u = rng.random::<f64>() * total;
    let out = if u < down {
        value - 1
    } else if u < down + stickiness {
        value
    } else {
        value + 1
    };
    out.clamp(lower, upper)
}

/// Standardization and clip bounds for the continuous seed columns.
struct ContinuousModel<'a> {
    records: &'a [f64],
    d: usize,
    columns: Vec<usize>,
    mean: Vec<f64>,
    sd: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl<'a> ContinuousModel<'a> {
    fn fit(records: &'a [f64], d: usize, columns: &[usize], perturb: &PerturbConfig) -> Self {
        let r = records.len() / d;
        let mut mean = Vec::new();
        let mut sd = Vec::new();
        let mut lo = Vec::new();
        let mut hi = Vec::new();
        for &c in columns {
            let mut vals: Vec<f64> = (0..r).map(|i| records[i * d + c]).filter(|v| !v.is_nan()).collect();
            if vals.is_empty() {
                mean.push(0.0);
                sd.push(1.0);
                lo.push(f64::NEG_INFINITY);
                hi.push(f64::INFINITY);
                continue;
            }
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let s = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
            vals.sort_by(|a, b| a.total_cmp(b));
            mean.push(m);
            sd.push(if s > 0.0 { s } else { 1.0 });
            lo.push(linalg::quantile_sorted(&vals, perturb.clip_lower_quantile));
            hi.push(linalg::quantile_sorted(&vals, perturb.clip_upper_quantile));
        }
        Self { records, d, columns: columns.to_vec(), mean, sd, lo, hi }
    }

    fn z(&self, row: usize) -> Option<Vec<f64>> {
        self.columns
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let v = self.records[row * self.d + c];
                (!v.is_nan()).then(|| (v - self.mean[j]) / self.sd[j])
            })
            .collect()
    }

    /// Cholesky factor of the shrunk covariance of the anchor's nearest
    /// same-cell seeds (anchor included), in standardized units.
    fn local_factor(&self, anchor: usize, cell: &[usize], perturb: &PerturbConfig) -> Option<Vec<f64>> {
        let za = self.z(anchor)?;
        let p = za.len();
        let mut near: Vec<(f64, usize, Vec<f64>)> = cell
            .iter()
            .filter_map(|&row| self.z(row).map(|z| (linalg::sq_dist(&z, &za), row, z)))
            .collect();
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        near.truncate(perturb.neighbors.max(1));
        let k = near.len();
        let mut cov = vec![0.0; p * p];
        if k >= 2 {
            let mut m = vec![0.0; p];
            for (_, _, z) in &near {
                for j in 0..p {
                    m[j] += z[j] / k as f64;
                }
            }
            for (_, _, z) in &near {
                for i in 0..p {
                    for j in 0..p {
                        cov[i * p + j] += (z[i] - m[i]) * (z[j] - m[j]) / (k - 1) as f64;
                    }
                }
            }
        }
        let w = perturb.shrinkage;
        for i in 0..p {
            for j in 0..p {
                cov[i * p + j] *= 1.0 - w;
            }
            cov[i * p + i] += w + 1e-9;
        }
        linalg::cholesky(&cov, p)
    }

    fn perturb<R: Rng + ?Sized>(&self, src: &[f64], out: &mut [f64], l: &[f64], scale: f64, rng: &mut R) {
        let p = self.columns.len();
        let e: Vec<f64> = (0..p).map(|_| StandardNormal.sample(rng)).collect();
        for (i, &c) in self.columns.iter().enumerate() {
            let noise: f64 = (0..=i).map(|k| l[i * p + k] * e[k]).sum();
            let z = (src[c] - self.mean[i]) / self.sd[i] + scale * noise;
            out[c] = (z * self.sd[i] + self.mean[i]).clamp(self.lo[i], self.hi[i]);
        }
    }
}
