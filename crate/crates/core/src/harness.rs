//! Seeded experiments: configuration, replication, aggregation and persistence.
//!
//! Replica `i` of a run always uses `replica_seed(master, i)`, replicas are
//! evaluated in parallel and folded in index order, so a [`ResultRecord`] is a
//! pure function of its configuration.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{expansion_constants, summarize, ModelSummary, OffspringLaw, ResistanceLaw};
use crate::oracles::{effective_resistance_laplacian, random_walk_conductance, series_parallel_reduce, MAX_DENSE_VERTICES};
use crate::pool::{
    c0_from_expansion, estimate_c0, fit_log_correction, lambda_rescaled_trajectory, moment_trajectory, Estimate,
    MomentTrajectory, PoolOptions, DEFAULT_WORK_BUDGET,
};
use crate::rng::{replica_seed, StreamKey};
use crate::stats::{mean, pearson, Summary};
use crate::tree::{
    materialize_tree, sample_tree_observables, sample_tree_profile, FluctOptions, TreeObservables, TreeOptions,
    DEFAULT_NODE_BUDGET,
};

pub const MIN_DIAGNOSTIC_TREES: usize = 300;
pub const MIN_INVERSE_W_DEPTH: usize = 15;
pub const THREADS_ENV: &str = "GW_ELECTRIC_THREADS";
/// Accepted band for `var(n Y_n) / var(series)`.
pub const DEFAULT_VARIANCE_BAND: [f64; 2] = [0.6, 1.67];

/// Replica index reserved for the normalizing pool of a tree run.
const NORMALIZER_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tree,
    Pool,
    Oracle,
    Lambda,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Tree => "tree",
            Mode::Pool => "pool",
            Mode::Oracle => "oracle",
            Mode::Lambda => "lambda",
        }
    }
}

fn default_node_budget() -> u64 {
    DEFAULT_NODE_BUDGET
}

fn default_work_budget() -> f64 {
    DEFAULT_WORK_BUDGET
}

fn default_walk_trials() -> u64 {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TreeSection {
    pub depths: Vec<usize>,
    pub trees: usize,
    /// Levels `L` of the fluctuation series; depths `n <= L` skip it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fluct_truncation: Option<usize>,
    #[serde(default = "default_node_budget")]
    pub node_budget: u64,
    /// Independent pool estimating `E[C_n]` for `n Y_n`; the plug-in sample
    /// mean is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalizer: Option<NormalizerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse_w: Option<InverseWSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizerSection {
    pub pool_size: usize,
    pub replicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InverseWSection {
    pub depth: usize,
    pub trees: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSection {
    pub pool_size: usize,
    pub replicates: usize,
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(default = "default_work_budget")]
    pub work_budget: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c0_cutoffs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit_range: Option<[usize; 2]>,
}

impl PoolSection {
    fn options(&self) -> PoolOptions {
        PoolOptions {
            pool_size: self.pool_size,
            replicates: self.replicates,
            steps: self.steps,
            lambda: self.lambda,
            work_budget: self.work_budget,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambdaSection {
    pub lambdas: Vec<f64>,
    pub pool_size: usize,
    pub replicates: usize,
    pub steps: usize,
    #[serde(default = "default_work_budget")]
    pub work_budget: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub trees: usize,
    pub max_depth: usize,
    #[serde(default)]
    pub walk_trees: usize,
    #[serde(default = "default_walk_trials")]
    pub walk_trials: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub mode: Mode,
    pub seed: u64,
    pub offspring: OffspringLaw,
    pub resistance: ResistanceLaw,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<TreeSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<PoolSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidOption(msg.into())
}

fn positive(name: &str, value: usize) -> Result<()> {
    if value == 0 {
        return Err(invalid(format!("{name} must be positive")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        match self.mode {
            Mode::Tree => {
                let t = self.tree_section()?;
                positive("tree.trees", t.trees)?;
                if t.depths.is_empty() || t.depths[0] == 0 || t.depths.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(invalid("tree.depths must be positive and strictly increasing"));
                }
                if let Some(l) = t.fluct_truncation {
                    positive("tree.fluct_truncation", l)?;
                }
                if let Some(nz) = t.normalizer {
                    positive("tree.normalizer.pool_size", nz.pool_size)?;
                    positive("tree.normalizer.replicates", nz.replicates)?;
                }
                if let Some(iw) = t.inverse_w {
                    positive("tree.inverse_w.trees", iw.trees)?;
                }
            }
            Mode::Pool => {
                let p = self.pool_section()?;
                positive("pool.pool_size", p.pool_size)?;
                positive("pool.replicates", p.replicates)?;
                positive("pool.steps", p.steps)?;
                if let Some([lo, hi]) = p.fit_range {
                    if lo == 0 || hi <= lo || hi > p.steps {
                        return Err(invalid("pool.fit_range must satisfy 1 <= lo < hi <= steps"));
                    }
                }
                if p.c0_cutoffs.iter().any(|&i| i == 0 || i >= p.steps) {
                    return Err(invalid("pool.c0_cutoffs must lie in 1..steps"));
                }
            }
            Mode::Lambda => {
                let l = self.lambda_section()?;
                positive("lambda.pool_size", l.pool_size)?;
                positive("lambda.replicates", l.replicates)?;
                positive("lambda.steps", l.steps)?;
                let m = self.offspring.mean();
                if l.lambdas.is_empty() || l.lambdas.iter().any(|&x| !(x.is_finite() && x > m)) {
                    return Err(invalid(format!("lambda.lambdas must be non-empty and exceed m = {m}")));
                }
            }
            Mode::Oracle => {
                let o = self.oracle_section()?;
                positive("oracle.trees", o.trees)?;
                positive("oracle.max_depth", o.max_depth)?;
                if o.walk_trees > o.trees {
                    return Err(invalid("oracle.walk_trees exceeds oracle.trees"));
                }
            }
        }
        Ok(())
    }

    fn section<'a, T>(&self, s: &'a Option<T>, name: &str) -> Result<&'a T> {
        s.as_ref()
            .ok_or_else(|| invalid(format!("mode {} needs a \"{name}\" section", self.mode.as_str())))
    }

    pub fn tree_section(&self) -> Result<&TreeSection> {
        self.section(&self.tree, "tree")
    }

    pub fn pool_section(&self) -> Result<&PoolSection> {
        self.section(&self.pool, "pool")
    }

    pub fn lambda_section(&self) -> Result<&LambdaSection> {
        self.section(&self.lambda, "lambda")
    }

    pub fn oracle_section(&self) -> Result<&OracleSection> {
        self.section(&self.oracle, "oracle")
    }

    /// SHA-256 of the canonical JSON of everything but the output section.
    pub fn config_hash(&self) -> String {
        let canonical = ExperimentConfig {
            output: None,
            ..self.clone()
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn run_id(&self) -> String {
        self.config_hash()[..16].to_string()
    }
}

/// Per-depth (or per-step) aggregates, keyed by observable name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthStats {
    pub n: usize,
    pub observables: BTreeMap<String, Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivedStat {
    pub n: Option<usize>,
    pub observable: String,
    pub statistic: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthSamples {
    pub n: usize,
    pub trees: Vec<TreeObservables>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub run_id: String,
    pub mode: Mode,
    pub seed: u64,
    pub config_hash: String,
    pub code_version: String,
    pub config: ExperimentConfig,
    pub model: ModelSummary,
    pub depths: Vec<DepthStats>,
    pub derived: Vec<DerivedStat>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tree_samples: Vec<DepthSamples>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trajectories: Vec<MomentTrajectory>,
}

impl ResultRecord {
    pub fn derived_value(&self, n: Option<usize>, observable: &str, statistic: &str) -> Option<f64> {
        self.derived
            .iter()
            .find(|d| d.n == n && d.observable == observable && d.statistic == statistic)
            .map(|d| d.value)
    }

    pub fn summary(&self, n: usize, observable: &str) -> Option<&Summary> {
        self.depths.iter().find(|d| d.n == n)?.observables.get(observable)
    }
}

#[derive(Default)]
struct Collector {
    depths: BTreeMap<usize, BTreeMap<String, Summary>>,
    derived: Vec<DerivedStat>,
}

impl Collector {
    fn summary(&mut self, n: usize, observable: impl Into<String>, values: &[f64]) {
        self.depths.entry(n).or_default().insert(observable.into(), Summary::of(values));
    }

    fn put(&mut self, n: Option<usize>, observable: impl Into<String>, statistic: &str, value: f64) {
        self.derived.push(DerivedStat {
            n,
            observable: observable.into(),
            statistic: statistic.into(),
            value,
        });
    }

    fn estimate(&mut self, n: Option<usize>, observable: &str, e: Estimate) {
        self.put(n, observable, "value", e.value);
        self.put(n, observable, "se", e.se);
    }

    fn finish(self) -> (Vec<DepthStats>, Vec<DerivedStat>) {
        let depths = self
            .depths
            .into_iter()
            .map(|(n, observables)| DepthStats { n, observables })
            .collect();
        (depths, self.derived)
    }
}

/// Evaluates `f(i)` for `i < count` in parallel and returns the results in
/// index order; the first failing index wins.
fn replicate<T: Send>(count: usize, f: impl Fn(usize) -> Result<T> + Sync) -> Result<Vec<T>> {
    let results: Vec<Result<T>> = (0..count).into_par_iter().map(|i| f(i).map_err(|e| e.in_replica(i))).collect();
    results.into_iter().collect()
}

/// Runs an experiment in the current rayon pool.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultRecord> {
    config.validate()?;
    let model = summarize(&config.offspring, &config.resistance)?;
    let mut out = Collector::default();
    let mut tree_samples = Vec::new();
    let mut trajectories = Vec::new();
    match config.mode {
        Mode::Tree => tree_samples = run_tree(config, &model, &mut out)?,
        Mode::Pool => trajectories.push(run_pool(config, &model, &mut out)?),
        Mode::Lambda => trajectories = run_lambda(config, &model, &mut out)?,
        Mode::Oracle => run_oracle(config, &mut out)?,
    }
    let (depths, derived) = out.finish();
    Ok(ResultRecord {
        run_id: config.run_id(),
        mode: config.mode,
        seed: config.seed,
        config_hash: config.config_hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        model,
        depths,
        derived,
        tree_samples,
        trajectories,
    })
}

fn column(trees: &[TreeObservables], f: impl Fn(&TreeObservables) -> f64) -> Vec<f64> {
    trees.iter().map(f).collect()
}

fn run_tree(cfg: &ExperimentConfig, model: &ModelSummary, out: &mut Collector) -> Result<Vec<DepthSamples>> {
    let sec = cfg.tree_section()?;
    let (off, res) = (&cfg.offspring, &cfg.resistance);
    let c1 = model.constants.c1;
    let max_depth = *sec.depths.last().expect("validated non-empty");

    let normalizer = match sec.normalizer {
        Some(nz) => {
            let opts = PoolOptions::new(nz.pool_size, nz.replicates, max_depth);
            let traj = moment_trajectory(off, res, &opts, replica_seed(cfg.seed, NORMALIZER_STREAM))?;
            Some(traj)
        }
        None => None,
    };

    let mut samples = Vec::with_capacity(sec.depths.len());
    for &n in &sec.depths {
        let opts = TreeOptions {
            fluct: sec
                .fluct_truncation
                .filter(|&l| l < n)
                .map(|truncation| FluctOptions { truncation, c1 }),
            node_budget: sec.node_budget,
        };
        let trees = replicate(sec.trees, |t| {
            sample_tree_observables(off, res, n, &opts, replica_seed(cfg.seed, t as u64))
        })?;
        let norm = normalizer.as_ref().map(|traj| Estimate {
            value: traj.x_mean(n),
            se: traj.x_se(n),
        });
        record_depth(out, n, &trees, norm);
        samples.push(DepthSamples { n, trees });
    }

    if model.dubuc {
        let resistances: Vec<(usize, Vec<f64>)> = samples
            .iter()
            .map(|s| (s.n, column(&s.trees, |t| t.resistance())))
            .collect();
        let deepest = samples.last().expect("non-empty");
        let inv_w = column(&deepest.trees, |t| 1.0 / t.w_hat);
        for row in resistance_rows(&resistances, &inv_w, c1, model.constants.c4) {
            let n = Some(row.n);
            out.put(n, "r_over_n", "target", row.target);
            out.put(n, "r_over_n", "gap", row.gap.value);
            out.put(n, "r_over_n", "gap_se", row.gap.se);
            out.put(n, "r_over_n", "predicted_bias", row.predicted_bias);
        }
        let s = Summary::of(&inv_w);
        out.estimate(None, "inverse_w_paired", Estimate { value: s.mean, se: s.se });
    }
    if let Some(iw) = sec.inverse_w {
        let est = estimate_inverse_w(off, iw.depth, iw.trees, replica_seed(cfg.seed, NORMALIZER_STREAM - 1))?;
        out.put(None, "inverse_w", "value", est.value);
        out.put(None, "inverse_w", "se", est.se);
        out.put(None, "inverse_w", "depth", est.depth as f64);
    }
    Ok(samples)
}

fn record_depth(out: &mut Collector, n: usize, trees: &[TreeObservables], norm: Option<Estimate>) {
    let nf = n as f64;
    let c = column(trees, |t| t.c_n);
    let w = column(trees, |t| t.w_hat);
    let x_hat = mean(&c);
    let normalized: Vec<f64> = c.iter().map(|v| v / x_hat).collect();
    let abs_dev: Vec<f64> = normalized.iter().zip(&w).map(|(a, b)| (a - b).abs()).collect();
    let x_norm = norm.map_or(x_hat, |e| e.value);
    let n_y: Vec<f64> = c.iter().zip(&w).map(|(ci, wi)| nf * (ci / x_norm - wi)).collect();

    out.summary(n, "c_n", &c);
    out.summary(n, "r_n", &column(trees, |t| t.resistance()));
    out.summary(n, "r_over_n", &column(trees, |t| t.resistance() / nf));
    out.summary(n, "w_hat", &w);
    out.summary(n, "thomson_upper", &column(trees, |t| t.thomson_upper));
    out.summary(n, "nash_williams_lower", &column(trees, |t| t.nash_williams_lower));
    out.summary(n, "normalized_c", &normalized);
    out.summary(n, "abs_dev", &abs_dev);
    out.summary(n, "n_y", &n_y);

    out.put(Some(n), "n_x_hat", "value", nf * x_hat);
    out.put(Some(n), "normalized_c", "plugin_mean", mean(&normalized));
    match pearson(&normalized, &w) {
        Some(r) => out.put(Some(n), "corr", "value", r),
        None => out.put(Some(n), "corr", "degenerate", 1.0),
    }
    let violations = trees
        .iter()
        .filter(|t| {
            let r = t.resistance();
            t.nash_williams_lower > r * (1.0 + 1e-12) || r > t.thomson_upper * (1.0 + 1e-12)
        })
        .count();
    out.put(Some(n), "sandwich", "violations", violations as f64);
    if let Some(e) = norm {
        out.estimate(Some(n), "normalizer", e);
    }
    if trees.iter().all(|t| t.fluct_series.is_some()) {
        let series = column(trees, |t| t.fluct_series.unwrap_or(0.0));
        out.summary(n, "fluct_series", &series);
        let (vy, vs) = (Summary::of(&n_y).variance, Summary::of(&series).variance);
        if vs > 0.0 {
            out.put(Some(n), "n_y", "variance_ratio", vy / vs);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Row {
    pub n: usize,
    /// Mean of `|{C_n} - W_hat|` with the plug-in normalization.
    pub mad: f64,
    pub corr: Option<f64>,
    /// Set when either sample is constant and the correlation is undefined.
    pub degenerate: bool,
}

fn require_trees(samples: &DepthSamples) -> Result<()> {
    if samples.trees.len() < MIN_DIAGNOSTIC_TREES {
        return Err(Error::InsufficientSamples {
            got: samples.trees.len(),
            need: MIN_DIAGNOSTIC_TREES,
        });
    }
    Ok(())
}

pub fn theorem1_diagnostic(samples: &[DepthSamples]) -> Result<Vec<Theorem1Row>> {
    samples
        .iter()
        .map(|s| {
            require_trees(s)?;
            let c = column(&s.trees, |t| t.c_n);
            let w = column(&s.trees, |t| t.w_hat);
            let x_hat = mean(&c);
            let normalized: Vec<f64> = c.iter().map(|v| v / x_hat).collect();
            let mad = mean(&normalized.iter().zip(&w).map(|(a, b)| (a - b).abs()).collect::<Vec<_>>());
            let corr = pearson(&normalized, &w);
            Ok(Theorem1Row {
                n: s.n,
                mad,
                corr,
                degenerate: corr.is_none(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem4Check {
    pub n: usize,
    pub normalizer: Estimate,
    /// Mean of `n Y_n` with its standard error, including the normalizer's.
    pub mean: f64,
    pub se: f64,
    pub mean_ok: bool,
    /// `var(n Y_n) / var(series)`; `None` when the series is constant.
    pub variance_ratio: Option<f64>,
    pub band: [f64; 2],
    pub ratio_ok: bool,
}

/// Compares `n Y_n = n (C_n / x_n - W_hat)` with the truncated fluctuation
/// series. `normalizer` estimates `E[C_n]` independently of the trees; with
/// `None` the plug-in sample mean is used, which forces
/// `mean(n Y_n) = n (1 - mean(W_hat))`.
pub fn theorem4_variance_check(samples: &DepthSamples, normalizer: Option<Estimate>, band: [f64; 2]) -> Result<Theorem4Check> {
    require_trees(samples)?;
    let series: Vec<f64> = samples
        .trees
        .iter()
        .map(|t| t.fluct_series)
        .collect::<Option<_>>()
        .ok_or_else(|| invalid("theorem 4 check needs trees sampled with a fluctuation series"))?;
    let nf = samples.n as f64;
    let c = column(&samples.trees, |t| t.c_n);
    let norm = normalizer.unwrap_or(Estimate {
        value: mean(&c),
        se: 0.0,
    });
    let n_y: Vec<f64> = samples
        .trees
        .iter()
        .map(|t| nf * (t.c_n / norm.value - t.w_hat))
        .collect();
    let s = Summary::of(&n_y);
    // d mean / d x = -n mean(C) / x^2
    let norm_se = nf * mean(&c) / (norm.value * norm.value) * norm.se;
    let se = s.se.hypot(norm_se);
    let vs = Summary::of(&series).variance;
    let variance_ratio = (vs > 0.0).then(|| s.variance / vs);
    // floating-point resolution of n Y_n
    let roundoff = 1e-12 * nf;
    Ok(Theorem4Check {
        n: samples.n,
        normalizer: norm,
        mean: s.mean,
        se,
        mean_ok: s.mean.abs() <= 3.0 * se + roundoff,
        variance_ratio,
        band,
        ratio_ok: match variance_ratio {
            Some(r) => band[0] <= r && r <= band[1],
            None => s.variance <= roundoff * roundoff,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InverseWEstimate {
    pub value: f64,
    pub se: f64,
    pub depth: usize,
    pub trees: usize,
}

/// Mean of `1/W_hat_K` over independent generation-size chains. Only level
/// sizes are needed, so each generation is one multinomial draw. The estimate
/// is biased upwards at finite `K` (Jensen).
pub fn estimate_inverse_w(off: &OffspringLaw, depth: usize, trees: usize, seed: u64) -> Result<InverseWEstimate> {
    if !off.dubuc_condition() {
        return Err(Error::DubucViolated {
            p1m: off.p1() * off.mean(),
        });
    }
    if depth < MIN_INVERSE_W_DEPTH {
        return Err(invalid(format!("inverse-W depth must be at least {MIN_INVERSE_W_DEPTH}")));
    }
    positive("trees", trees)?;
    let scale = off.mean().powi(depth as i32);
    let largest = f64::from(off.max_support()).powi(depth as i32);
    if largest > 2f64.powi(62) {
        return Err(Error::DepthOverflow {
            projected: largest,
            budget: 1 << 62,
        });
    }
    let key = StreamKey::new(seed);
    let inv = replicate(trees, |t| {
        let mut rng = key.child(t as u64).rng();
        let mut z: u64 = 1;
        for _ in 0..depth {
            z = next_generation(off, z, &mut rng);
        }
        Ok(scale / z as f64)
    })?;
    let s = Summary::of(&inv);
    Ok(InverseWEstimate {
        value: s.mean,
        se: s.se,
        depth,
        trees,
    })
}

/// Total offspring of `parents` individuals, via conditional binomials.
fn next_generation<R: Rng + ?Sized>(off: &OffspringLaw, parents: u64, rng: &mut R) -> u64 {
    let mut remaining = parents;
    let mut rest = 1.0;
    let mut total = 0;
    let last = off.support().len() - 1;
    for (i, (&k, &p)) in off.support().iter().zip(off.probs()).enumerate() {
        if remaining == 0 {
            break;
        }
        let count = if i == last || p >= rest {
            remaining
        } else {
            Binomial::new(remaining, p / rest).expect("probability in [0, 1]").sample(rng)
        };
        total += count * u64::from(k);
        remaining -= count;
        rest -= p;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistanceRow {
    pub n: usize,
    pub r_over_n: Summary,
    /// `c1 E[1/W]`, with `E[1/W]` from `1/W_hat` at the deepest level of the same trees.
    pub target: f64,
    /// Signed relative gap `mean(R_n/n) / target - 1`.
    pub gap: Estimate,
    /// Leading finite-n correction `(c4 ln n) / (c1 n)`.
    pub predicted_bias: f64,
}

impl ResistanceRow {
    pub fn abs_gap(&self) -> f64 {
        self.gap.value.abs()
    }
}

/// Rows from per-depth resistances `R_n` and the paired `1/W_hat` of each tree.
fn resistance_rows(resistances: &[(usize, Vec<f64>)], inv_w: &[f64], c1: f64, c4: f64) -> Vec<ResistanceRow> {
    let targets: Vec<f64> = inv_w.iter().map(|v| c1 * v).collect();
    let b = mean(&targets);
    resistances
        .iter()
        .map(|(n, rs)| {
            let nf = *n as f64;
            let r: Vec<f64> = rs.iter().map(|v| v / nf).collect();
            let a = mean(&r);
            // delta method on the ratio of paired means
            let lin: Vec<f64> = r.iter().zip(&targets).map(|(ri, bi)| ri / b - a * bi / (b * b)).collect();
            ResistanceRow {
                n: *n,
                r_over_n: Summary::of(&r),
                target: b,
                gap: Estimate {
                    value: a / b - 1.0,
                    se: Summary::of(&lin).se,
                },
                predicted_bias: c4 * nf.ln() / (c1 * nf),
            }
        })
        .collect()
}

/// `R_n/n` against `c1 E[1/W]` on nested trees: every tree is traversed once
/// to the deepest level, which also supplies the paired `1/W_hat`.
pub fn resistance_limit_check(
    off: &OffspringLaw,
    res: &ResistanceLaw,
    depths: &[usize],
    trees: usize,
    seed: u64,
) -> Result<Vec<ResistanceRow>> {
    if !off.dubuc_condition() {
        return Err(Error::DubucViolated {
            p1m: off.p1() * off.mean(),
        });
    }
    if depths.is_empty() || depths[0] == 0 || depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("depths must be positive and strictly increasing"));
    }
    positive("trees", trees)?;
    let consts = expansion_constants(off, res)?;
    let max_depth = depths[depths.len() - 1];
    let profiles = replicate(trees, |t| {
        sample_tree_profile(off, res, max_depth, DEFAULT_NODE_BUDGET, replica_seed(seed, t as u64))
    })?;
    let resistances: Vec<(usize, Vec<f64>)> = depths
        .iter()
        .map(|&n| (n, profiles.iter().map(|p| 1.0 / p.c(n)).collect()))
        .collect();
    let inv_w: Vec<f64> = profiles.iter().map(|p| 1.0 / p.w_hat(max_depth)).collect();
    Ok(resistance_rows(&resistances, &inv_w, consts.c1, consts.c4))
}

fn run_pool(cfg: &ExperimentConfig, model: &ModelSummary, out: &mut Collector) -> Result<MomentTrajectory> {
    let sec = cfg.pool_section()?;
    let traj = moment_trajectory(&cfg.offspring, &cfg.resistance, &sec.options(), cfg.seed)?;
    let consts = &model.constants;
    let critical = traj.lambda == traj.m;
    let eps = traj.eps(consts.c1);
    let mut bound_violations = 0;
    for n in 1..=traj.steps() {
        let nf = n as f64;
        out.depths.entry(n).or_default().extend([
            ("x".to_string(), traj.x[n - 1]),
            ("y".to_string(), traj.y[n - 1]),
            ("z".to_string(), traj.z[n - 1]),
        ]);
        let x = traj.x_mean(n);
        out.put(Some(n), "n_x_hat", "value", nf * x);
        let (yr, zr) = traj.moment_ratios(n);
        out.put(Some(n), "y_over_x2", "value", yr);
        out.put(Some(n), "z_over_x3", "value", zr);
        if critical {
            let bound = model.inv_mean / nf;
            out.put(Some(n), "x", "upper_bound", bound);
            if x > bound * (1.0 + 1e-12) + 5.0 * traj.x_se(n) {
                bound_violations += 1;
            }
            if n < traj.steps() {
                out.estimate(Some(n), "eps", eps[n - 1]);
            }
            out.estimate(Some(n), "c0_expansion", c0_from_expansion(&traj, consts, n));
        }
    }
    if critical {
        out.put(None, "x", "bound_violations", f64::from(bound_violations));
        for &cutoff in &sec.c0_cutoffs {
            let c0 = estimate_c0(&traj, consts, model.inv_mean, cutoff)?;
            out.estimate(Some(cutoff), "c0", Estimate { value: c0.value, se: c0.se });
        }
        if let Some([lo, hi]) = sec.fit_range {
            let fit = fit_log_correction(&traj, consts, lo, hi)?;
            for (stat, v) in [
                ("slope", fit.slope),
                ("intercept", fit.intercept),
                ("slope_se", fit.slope_se),
                ("slope_ci95_lo", fit.slope_ci[0]),
                ("slope_ci95_hi", fit.slope_ci[1]),
                ("reference", fit.reference),
                ("max_noise", fit.max_noise),
                ("signal_range", fit.signal_range),
                ("noise_dominates", f64::from(u8::from(fit.noise_dominates))),
                ("n_lo", lo as f64),
                ("n_hi", hi as f64),
            ] {
                out.put(None, "log_fit", stat, v);
            }
        }
    }
    Ok(traj)
}

pub fn lambda_label(lambda: f64) -> String {
    format!("lambda={lambda}")
}

fn run_lambda(cfg: &ExperimentConfig, model: &ModelSummary, out: &mut Collector) -> Result<Vec<MomentTrajectory>> {
    let sec = cfg.lambda_section()?;
    let mut trajectories = Vec::with_capacity(sec.lambdas.len());
    for (i, &lambda) in sec.lambdas.iter().enumerate() {
        let opts = PoolOptions {
            pool_size: sec.pool_size,
            replicates: sec.replicates,
            steps: sec.steps,
            lambda: Some(lambda),
            work_budget: sec.work_budget,
        };
        let traj = moment_trajectory(&cfg.offspring, &cfg.resistance, &opts, replica_seed(cfg.seed, i as u64))?;
        let rescaled = lambda_rescaled_trajectory(&traj)?;
        let label = lambda_label(lambda);
        for n in 1..=traj.steps() {
            out.depths.entry(n).or_default().insert(format!("x@{label}"), traj.x[n - 1]);
            out.put(Some(n), format!("rescaled@{label}"), "value", rescaled.values[n - 1]);
            out.put(Some(n), format!("rescaled@{label}"), "se", rescaled.se[n - 1]);
        }
        out.put(None, format!("rescaled@{label}"), "limit", rescaled.limit());
        out.put(None, format!("rescaled@{label}"), "ratio_deviation", rescaled.ratio_deviation);
        out.put(
            None,
            format!("rescaled@{label}"),
            "monotonicity_violations",
            rescaled.monotonicity_violations.len() as f64,
        );
        trajectories.push(traj);
    }
    out.put(None, "inv_mean", "value", model.inv_mean);
    Ok(trajectories)
}

/// Cross-checks of the recursion against the three oracles on random trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleComparison {
    pub depth: usize,
    pub vertices: usize,
    pub c_n: f64,
    pub series_parallel: f64,
    pub laplacian: Option<f64>,
    pub walk: Option<(f64, f64)>,
}

impl OracleComparison {
    pub fn rel_diff_series(&self) -> f64 {
        (self.c_n * self.series_parallel - 1.0).abs()
    }

    pub fn rel_diff_laplacian(&self) -> Option<f64> {
        self.laplacian.map(|r| (self.c_n * r - 1.0).abs())
    }

    /// `(walk - c_n) / se`; zero when the walk is exact.
    pub fn walk_z(&self) -> Option<f64> {
        self.walk.map(|(est, se)| {
            let d = est - self.c_n;
            if se > 0.0 {
                d / se
            } else if d.abs() <= 1e-12 * self.c_n {
                0.0
            } else {
                f64::INFINITY
            }
        })
    }
}

pub fn compare_oracles(
    off: &OffspringLaw,
    res: &ResistanceLaw,
    sec: &OracleSection,
    seed: u64,
) -> Result<Vec<OracleComparison>> {
    replicate(sec.trees, |t| {
        let tree_seed = replica_seed(seed, t as u64);
        let depth = 1 + (StreamKey::new(tree_seed).value() % sec.max_depth as u64) as usize;
        let obs = sample_tree_observables(off, res, depth, &TreeOptions::default(), tree_seed)?;
        let tree = materialize_tree(off, res, depth, tree_seed)?;
        let net = tree.to_network()?;
        let laplacian = if net.vertex_count() <= MAX_DENSE_VERTICES {
            Some(effective_resistance_laplacian(&net)?)
        } else {
            None
        };
        let walk = if t < sec.walk_trees {
            let w = random_walk_conductance(&net, sec.walk_trials, tree_seed)?;
            Some((w.conductance, w.se))
        } else {
            None
        };
        Ok(OracleComparison {
            depth,
            vertices: net.vertex_count(),
            c_n: obs.c_n,
            series_parallel: series_parallel_reduce(&net)?,
            laplacian,
            walk,
        })
    })
}

fn run_oracle(cfg: &ExperimentConfig, out: &mut Collector) -> Result<()> {
    let sec = cfg.oracle_section()?;
    let rows = compare_oracles(&cfg.offspring, &cfg.resistance, sec, cfg.seed)?;
    let max = |it: &mut dyn Iterator<Item = f64>| it.fold(0.0, f64::max);
    out.put(None, "series_parallel", "max_rel_diff", max(&mut rows.iter().map(|r| r.rel_diff_series())));
    out.put(
        None,
        "laplacian",
        "max_rel_diff",
        max(&mut rows.iter().filter_map(|r| r.rel_diff_laplacian())),
    );
    out.put(
        None,
        "laplacian",
        "compared",
        rows.iter().filter(|r| r.laplacian.is_some()).count() as f64,
    );
    let z: Vec<f64> = rows.iter().filter_map(|r| r.walk_z()).collect();
    out.put(None, "walk", "compared", z.len() as f64);
    out.put(None, "walk", "max_abs_z", max(&mut z.iter().map(|v| v.abs())));
    out.put(None, "walk", "within_3se", z.iter().filter(|v| v.abs() <= 3.0).count() as f64);
    for depth in 1..=sec.max_depth {
        let c: Vec<f64> = rows.iter().filter(|r| r.depth == depth).map(|r| r.c_n).collect();
        if !c.is_empty() {
            out.summary(depth, "c_n", &c);
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize, Debug, Clone, PartialEq)]
pub struct CsvRow {
    pub run_id: String,
    pub mode: String,
    pub n: Option<usize>,
    pub observable: String,
    pub statistic: String,
    pub value: f64,
}

/// Flat rows: the summary statistics of every per-depth observable, then the
/// derived statistics in computation order.
pub fn csv_rows(record: &ResultRecord) -> Vec<CsvRow> {
    let row = |n: Option<usize>, observable: &str, statistic: &str, value: f64| CsvRow {
        run_id: record.run_id.clone(),
        mode: record.mode.as_str().to_string(),
        n,
        observable: observable.to_string(),
        statistic: statistic.to_string(),
        value,
    };
    let mut rows = Vec::new();
    for d in &record.depths {
        for (name, s) in &d.observables {
            rows.extend([
                row(Some(d.n), name, "count", s.count as f64),
                row(Some(d.n), name, "mean", s.mean),
                row(Some(d.n), name, "variance", s.variance),
                row(Some(d.n), name, "se", s.se),
                row(Some(d.n), name, "ci95_lo", s.ci95[0]),
                row(Some(d.n), name, "ci95_hi", s.ci95[1]),
            ]);
        }
    }
    rows.extend(record.derived.iter().map(|d| row(d.n, &d.observable, &d.statistic, d.value)));
    rows
}

pub fn record_to_csv(record: &ResultRecord) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in csv_rows(record) {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn read_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn record_to_json(record: &ResultRecord) -> Result<String> {
    let mut s = serde_json::to_string_pretty(record)?;
    s.push('\n');
    Ok(s)
}

pub fn record_from_json(text: &str) -> Result<ResultRecord> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub json: PathBuf,
    pub csv: PathBuf,
}

/// Writes `bytes` unless the file exists; an existing identical file is accepted.
fn write_once(path: &Path, bytes: &[u8]) -> Result<()> {
    match fs::read(path) {
        Ok(existing) if existing == bytes => Ok(()),
        Ok(_) => Err(Error::RunExists(path.display().to_string())),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let tmp = path.with_extension("partial");
            fs::write(&tmp, bytes)?;
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

/// Persists `<dir>/<run_id>.json` and `<dir>/<run_id>.csv`.
pub fn persist(record: &ResultRecord, dir: &Path) -> Result<RunPaths> {
    fs::create_dir_all(dir)?;
    let paths = RunPaths {
        json: dir.join(format!("{}.json", record.run_id)),
        csv: dir.join(format!("{}.csv", record.run_id)),
    };
    write_once(&paths.json, record_to_json(record)?.as_bytes())?;
    write_once(&paths.csv, record_to_csv(record)?.as_bytes())?;
    Ok(paths)
}

pub fn load_record(dir: &Path, run_id: &str) -> Result<ResultRecord> {
    let path = dir.join(format!("{run_id}.json"));
    match fs::read_to_string(&path) {
        Ok(text) => record_from_json(&text),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(Error::MissingRun(run_id.to_string())),
        Err(e) => Err(e.into()),
    }
}

/// Thread cap from `GW_ELECTRIC_THREADS`; `None` when unset.
pub fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(invalid(format!("{THREADS_ENV}: {e}"))),
    }
}

/// Runs `f` inside a dedicated pool of `threads` workers (default: all cores).
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| invalid(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(mode: &str, extra: &str) -> ExperimentConfig {
        ExperimentConfig::from_json(&format!(
            r#"{{"mode": "{mode}", "seed": 7,
                "offspring": {{"support": [2], "probs": [1.0]}},
                "resistance": {{"family": "point-mass", "value": 1.0}},
                {extra}}}"#
        ))
        .unwrap()
    }

    #[test]
    fn tree_mode_symmetric_case_is_exact() {
        let cfg = config("tree", r#""tree": {"depths": [1,2,3,4,5,6,7,8,9,10], "trees": 1}"#);
        let rec = run_experiment(&cfg).unwrap();
        for n in 1..=10 {
            assert!((rec.summary(n, "c_n").unwrap().mean - 1.0 / n as f64).abs() < 1e-15);
            assert_eq!(rec.derived_value(Some(n), "corr", "degenerate"), Some(1.0));
        }
    }

    #[test]
    fn pool_mode_symmetric_case_is_exact() {
        let cfg = config("pool", r#""pool": {"pool_size": 1000, "replicates": 4, "steps": 30, "c0_cutoffs": [10]}"#);
        let rec = run_experiment(&cfg).unwrap();
        for n in 1..=30 {
            assert!((rec.summary(n, "x").unwrap().mean - 1.0 / n as f64).abs() < 1e-15);
        }
        assert!(rec.derived_value(Some(10), "c0", "value").unwrap().abs() < 1e-12);
        assert_eq!(rec.derived_value(None, "x", "bound_violations"), Some(0.0));
    }

    #[test]
    fn config_validation() {
        let bad = [
            r#"{"mode": "tree", "seed": 1, "offspring": {"support": [2], "probs": [1.0]}, "resistance": {"family": "point-mass", "value": 1.0}}"#,
            r#"{"mode": "tree", "seed": 1, "offspring": {"support": [2], "probs": [1.0]}, "resistance": {"family": "point-mass", "value": 1.0}, "tree": {"depths": [3, 2], "trees": 5}}"#,
            r#"{"mode": "pool", "offspring": {"support": [2], "probs": [1.0]}, "resistance": {"family": "point-mass", "value": 1.0}}"#,
            r#"{"mode": "tree", "seed": 1, "offspring": {"support": [2], "probs": [0.9]}, "resistance": {"family": "point-mass", "value": 1.0}, "tree": {"depths": [3], "trees": 5}}"#,
            r#"{"mode": "tree", "seed": 1, "bogus": 1, "offspring": {"support": [2], "probs": [1.0]}, "resistance": {"family": "point-mass", "value": 1.0}, "tree": {"depths": [3], "trees": 5}}"#,
        ];
        for text in bad {
            let err = ExperimentConfig::from_json(text).unwrap_err();
            assert!(err.is_config(), "{err}");
        }
    }

    #[test]
    fn run_id_ignores_output_section() {
        let mut a = config("tree", r#""tree": {"depths": [3], "trees": 2}"#);
        let id = a.run_id();
        a.output = Some(OutputSection { dir: "elsewhere".into() });
        assert_eq!(a.run_id(), id);
        a.seed += 1;
        assert_ne!(a.run_id(), id);
    }

    #[test]
    fn inverse_w_examples() {
        let det = OffspringLaw::deterministic(3).unwrap();
        let e = estimate_inverse_w(&det, 15, 10, 0).unwrap();
        assert_eq!((e.value, e.se), (1.0, 0.0));
        let bad = OffspringLaw::new(vec![1, 5], vec![0.8, 0.2]).unwrap();
        assert!(matches!(estimate_inverse_w(&bad, 15, 10, 0), Err(Error::DubucViolated { .. })));
        let off = OffspringLaw::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        assert!(estimate_inverse_w(&off, 14, 10, 0).is_err());
    }

    #[test]
    fn generation_sizes_have_the_right_mean() {
        let off = OffspringLaw::new(vec![1, 2, 5], vec![0.3, 0.5, 0.2]).unwrap();
        let mut rng = StreamKey::new(3).rng();
        let draws: Vec<f64> = (0..4000).map(|_| next_generation(&off, 50, &mut rng) as f64).collect();
        let s = Summary::of(&draws);
        assert!((s.mean - 50.0 * off.mean()).abs() < 5.0 * s.se);
        // variance of a sum of 50 offspring numbers
        let var_nu = 0.3 + 0.5 * 4.0 + 0.2 * 25.0 - off.mean() * off.mean();
        assert!((s.variance / (50.0 * var_nu) - 1.0).abs() < 0.1);
    }

    #[test]
    fn theorem_diagnostics_on_symmetric_trees() {
        let off = OffspringLaw::deterministic(2).unwrap();
        let res = ResistanceLaw::point_mass(1.0).unwrap();
        let trees: Vec<TreeObservables> = (0..300)
            .map(|s| sample_tree_observables(&off, &res, 6, &TreeOptions::with_fluct(3, 1.0), s).unwrap())
            .collect();
        let samples = DepthSamples { n: 6, trees };
        let row = theorem1_diagnostic(std::slice::from_ref(&samples)).unwrap()[0];
        assert!(row.mad < 1e-12);
        assert!(row.degenerate);
        let t4 = theorem4_variance_check(&samples, None, DEFAULT_VARIANCE_BAND).unwrap();
        assert!(t4.mean.abs() < 1e-12);
        assert!(t4.mean_ok && t4.ratio_ok);
        assert_eq!(t4.variance_ratio, None);
        let few = DepthSamples {
            n: 6,
            trees: samples.trees[..10].to_vec(),
        };
        assert!(matches!(theorem1_diagnostic(&[few]), Err(Error::InsufficientSamples { .. })));
    }

    #[test]
    fn resistance_check_symmetric_case() {
        let off = OffspringLaw::deterministic(2).unwrap();
        let res = ResistanceLaw::point_mass(1.0).unwrap();
        let rows = resistance_limit_check(&off, &res, &[3, 6], 4, 1).unwrap();
        for r in rows {
            assert!((r.r_over_n.mean - 1.0).abs() < 1e-12);
            assert!((r.target - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn persistence_never_overwrites() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config("tree", r#""tree": {"depths": [2, 4], "trees": 3}"#);
        let rec = run_experiment(&cfg).unwrap();
        let paths = persist(&rec, dir.path()).unwrap();
        persist(&rec, dir.path()).unwrap();
        let mut other = rec.clone();
        other.code_version = "tampered".into();
        assert!(matches!(persist(&other, dir.path()), Err(Error::RunExists(_))));
        let back = load_record(dir.path(), &rec.run_id).unwrap();
        assert_eq!(back, rec);
        let rows = read_csv(&fs::read_to_string(paths.csv).unwrap()).unwrap();
        assert_eq!(rows, csv_rows(&rec));
        assert!(matches!(load_record(dir.path(), "nope"), Err(Error::MissingRun(_))));
    }

    #[test]
    fn threads_env_parsing() {
        // only checks the parser through with_threads; the variable itself is process-global
        assert_eq!(with_threads(Some(2), rayon::current_num_threads).unwrap(), 2);
    }
}
