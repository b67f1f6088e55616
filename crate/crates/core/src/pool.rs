//! Population dynamics for the law of `C_n`.
//!
//! A pool of `N` particles approximates the law of `C_n(lambda)`. Step `n + 1`
//! builds every new particle from a fresh offspring number, fresh weights and
//! parents resampled uniformly from the step-`n` pool:
//!
//! ```text
//! C' = (1/lambda) * sum_{i <= nu} C_i / (1 + xi_i C_i)
//! ```
//!
//! Particle `i` of step `s` draws from the stream `(seed, s, i)`, so a pool is
//! a pure function of its seed whatever the thread count. Standard errors come
//! from independent replicate pools; particles within a pool are correlated
//! through resampling.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExpansionConstants, OffspringLaw, ResistanceLaw};
use crate::rng::{replica_seed, StreamKey};
use crate::stats::{wls_coefficients, CompensatedSum, Summary, Z95};

pub const MIN_POOL_SIZE: usize = 1_000;
pub const MIN_REPLICATES: usize = 4;
/// Default cap on `steps * N * R * m` particle-child updates.
pub const DEFAULT_WORK_BUDGET: f64 = 1e11;
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone)]
pub struct PoolState {
    off: OffspringLaw,
    res: ResistanceLaw,
    lambda: f64,
    step: usize,
    key: StreamKey,
    particles: Vec<f64>,
    scratch: Vec<f64>,
}

/// Compensated sums of `c`, `c^2`, `c^3`.
type PowerSums = [CompensatedSum; 3];

fn accumulate(sums: &mut PowerSums, c: f64) {
    sums[0].add(c);
    sums[1].add(c * c);
    sums[2].add(c * c * c);
}

fn combine(parts: &[PowerSums], count: usize) -> [f64; 3] {
    let mut total = PowerSums::default();
    for p in parts {
        for (t, s) in total.iter_mut().zip(p) {
            t.add(s.value());
        }
    }
    let n = count as f64;
    total.map(|t| t.value() / n)
}

/// Particles per gather batch. Drawing a batch's parent indices before
/// reading any parent lets the loads overlap instead of stalling one by one.
const BATCH: usize = 256;

fn fill_chunk(
    out: &mut [f64],
    first: usize,
    step_key: StreamKey,
    off: &OffspringLaw,
    res: &ResistanceLaw,
    lambda: f64,
    prev: Option<&[f64]>,
) -> PowerSums {
    let mut sums = PowerSums::default();
    let Some(prev) = prev else {
        for (j, slot) in out.iter_mut().enumerate() {
            let mut rng = step_key.child((first + j) as u64).rng();
            let nu = off.sample(&mut rng);
            let acc: f64 = (0..nu).map(|_| 1.0 / res.sample(&mut rng)).sum();
            *slot = acc / lambda;
            accumulate(&mut sums, *slot);
        }
        return sums;
    };
    let cap = BATCH * off.max_support() as usize;
    let mut counts = Vec::with_capacity(BATCH);
    let mut parents = Vec::with_capacity(cap);
    let mut weights = Vec::with_capacity(cap);
    let mut values = Vec::with_capacity(cap);
    let len = prev.len() as u64;
    for (b, batch) in out.chunks_mut(BATCH).enumerate() {
        counts.clear();
        parents.clear();
        weights.clear();
        for j in 0..batch.len() {
            let mut rng = step_key.child((first + b * BATCH + j) as u64).rng();
            let nu = off.sample(&mut rng);
            counts.push(nu);
            for _ in 0..nu {
                parents.push(rng.random_range(0..len) as usize);
                weights.push(res.sample(&mut rng));
            }
        }
        values.clear();
        values.extend(parents.iter().map(|&i| prev[i]));
        let mut k = 0;
        for (slot, &nu) in batch.iter_mut().zip(&counts) {
            let mut acc = 0.0;
            for _ in 0..nu {
                let c = values[k];
                acc += c / (1.0 + weights[k] * c);
                k += 1;
            }
            *slot = acc / lambda;
            accumulate(&mut sums, *slot);
        }
    }
    sums
}

impl PoolState {
    /// Draws `N` samples of `C_1(lambda) = lambda^-1 sum_{i <= nu} 1/xi_i`.
    pub fn new(off: &OffspringLaw, res: &ResistanceLaw, pool_size: usize, lambda: f64, seed: u64) -> Result<Self> {
        if pool_size < MIN_POOL_SIZE {
            return Err(Error::PoolTooSmall(pool_size));
        }
        if !(lambda.is_finite() && lambda >= off.mean()) {
            return Err(Error::InvalidOption(format!(
                "lambda = {lambda} must be at least the offspring mean {}",
                off.mean()
            )));
        }
        let mut state = PoolState {
            off: off.clone(),
            res: *res,
            lambda,
            step: 0,
            key: StreamKey::new(seed),
            particles: Vec::new(),
            scratch: vec![0.0; pool_size],
        };
        state.advance();
        Ok(state)
    }

    /// Replaces the pool by the next generation and returns its first three moments.
    pub fn advance(&mut self) -> [f64; 3] {
        let step_key = self.key.child(self.step as u64);
        let prev = (self.step > 0).then_some(self.particles.as_slice());
        let (off, res, lambda) = (&self.off, &self.res, self.lambda);
        let partial: Vec<PowerSums> = self
            .scratch
            .par_chunks_mut(CHUNK)
            .enumerate()
            .map(|(ci, out)| fill_chunk(out, ci * CHUNK, step_key, off, res, lambda, prev))
            .collect();
        std::mem::swap(&mut self.particles, &mut self.scratch);
        if self.scratch.len() != self.particles.len() {
            self.scratch = vec![0.0; self.particles.len()];
        }
        self.step += 1;
        combine(&partial, self.particles.len())
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn pool_size(&self) -> usize {
        self.particles.len()
    }

    pub fn particles(&self) -> &[f64] {
        &self.particles
    }

    /// Empirical `(E[C], E[C^2], E[C^3])` of the current pool.
    pub fn moments(&self) -> [f64; 3] {
        let partial: Vec<PowerSums> = self
            .particles
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut sums = PowerSums::default();
                chunk.iter().for_each(|&c| accumulate(&mut sums, c));
                sums
            })
            .collect();
        combine(&partial, self.particles.len())
    }
}

pub fn init_pool(off: &OffspringLaw, res: &ResistanceLaw, pool_size: usize, lambda: f64, seed: u64) -> Result<PoolState> {
    PoolState::new(off, res, pool_size, lambda, seed)
}

pub fn step_pool(mut state: PoolState) -> PoolState {
    state.advance();
    state
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolOptions {
    pub pool_size: usize,
    pub replicates: usize,
    pub steps: usize,
    /// `None` means the critical weighting `lambda = m`.
    pub lambda: Option<f64>,
    pub work_budget: f64,
}

impl PoolOptions {
    pub fn new(pool_size: usize, replicates: usize, steps: usize) -> Self {
        PoolOptions {
            pool_size,
            replicates,
            steps,
            lambda: None,
            work_budget: DEFAULT_WORK_BUDGET,
        }
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        PoolOptions {
            lambda: Some(lambda),
            ..self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateMoments {
    pub seed: u64,
    /// `x[n - 1]` is the pool mean at step `n`.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
}

/// Replicate-averaged moments of `C_n` for `n = 1..=steps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentTrajectory {
    pub m: f64,
    pub lambda: f64,
    pub pool_size: usize,
    pub replicates: Vec<ReplicateMoments>,
    pub x: Vec<Summary>,
    pub y: Vec<Summary>,
    pub z: Vec<Summary>,
}

/// A derived quantity with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

impl Estimate {
    pub fn ci95(&self) -> [f64; 2] {
        [self.value - Z95 * self.se, self.value + Z95 * self.se]
    }
}

/// Value and standard error of `f(x_bar)` for `f` linearized around the
/// replicate means: `grad` holds `(step, df/dx_step)` pairs.
fn delta_se(traj: &MomentTrajectory, grad: &[(usize, f64)]) -> f64 {
    let devs: Vec<f64> = traj
        .replicates
        .iter()
        .map(|r| grad.iter().map(|&(n, g)| g * (r.x[n - 1] - traj.x[n - 1].mean)).sum())
        .collect();
    Summary::of(&devs).se
}

impl MomentTrajectory {
    pub fn steps(&self) -> usize {
        self.x.len()
    }

    /// Replicate-averaged `x_n`.
    pub fn x_mean(&self, n: usize) -> f64 {
        self.x[n - 1].mean
    }

    pub fn x_se(&self, n: usize) -> f64 {
        self.x[n - 1].se
    }

    /// `eps_n = 1/x_{n+1} - 1/x_n - c1` for `n = 1..steps`, delta-method SEs.
    pub fn eps(&self, c1: f64) -> Vec<Estimate> {
        (1..self.steps())
            .map(|n| {
                let (a, b) = (self.x_mean(n), self.x_mean(n + 1));
                Estimate {
                    value: 1.0 / b - 1.0 / a - c1,
                    se: delta_se(self, &[(n, 1.0 / (a * a)), (n + 1, -1.0 / (b * b))]),
                }
            })
            .collect()
    }

    /// `(y_n / x_n^2, z_n / x_n^3)`
    pub fn moment_ratios(&self, n: usize) -> (f64, f64) {
        let x = self.x_mean(n);
        (self.y[n - 1].mean / (x * x), self.z[n - 1].mean / (x * x * x))
    }
}

/// Runs `R` independent pools for `steps` generations.
pub fn moment_trajectory(off: &OffspringLaw, res: &ResistanceLaw, opts: &PoolOptions, seed: u64) -> Result<MomentTrajectory> {
    if opts.replicates < MIN_REPLICATES {
        return Err(Error::InsufficientSamples {
            got: opts.replicates,
            need: MIN_REPLICATES,
        });
    }
    if opts.steps == 0 {
        return Err(Error::InvalidOption("steps must be at least 1".into()));
    }
    let work = opts.steps as f64 * opts.pool_size as f64 * opts.replicates as f64 * off.mean();
    if work > opts.work_budget {
        return Err(Error::BudgetExceeded {
            work,
            budget: opts.work_budget,
        });
    }
    let lambda = opts.lambda.unwrap_or(off.mean());
    let replicates = (0..opts.replicates)
        .map(|r| run_replicate(off, res, opts, lambda, replica_seed(seed, r as u64)).map_err(|e| e.in_replica(r)))
        .collect::<Result<Vec<_>>>()?;
    let column = |pick: fn(&ReplicateMoments) -> &Vec<f64>| -> Vec<Summary> {
        (0..opts.steps)
            .map(|i| Summary::of(&replicates.iter().map(|r| pick(r)[i]).collect::<Vec<_>>()))
            .collect()
    };
    let (x, y, z) = (column(|r| &r.x), column(|r| &r.y), column(|r| &r.z));
    Ok(MomentTrajectory {
        m: off.mean(),
        lambda,
        pool_size: opts.pool_size,
        replicates,
        x,
        y,
        z,
    })
}

fn run_replicate(off: &OffspringLaw, res: &ResistanceLaw, opts: &PoolOptions, lambda: f64, seed: u64) -> Result<ReplicateMoments> {
    let mut out = ReplicateMoments {
        seed,
        x: Vec::with_capacity(opts.steps),
        y: Vec::with_capacity(opts.steps),
        z: Vec::with_capacity(opts.steps),
    };
    let mut state = PoolState::new(off, res, opts.pool_size, lambda, seed)?;
    let mut record = |s: [f64; 3]| {
        out.x.push(s[0]);
        out.y.push(s[1]);
        out.z.push(s[2]);
    };
    record(state.moments());
    for _ in 1..opts.steps {
        record(state.advance());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C0Estimate {
    pub value: f64,
    pub se: f64,
    pub cutoff: usize,
}

/// Truncated series `c0 ~ -c1 + 1/E[1/xi] + sum_{i <= I} (eps_i - c4/i)`.
///
/// The `eps` sum telescopes to `1/x_{I+1} - 1/x_1 - I c1`.
pub fn estimate_c0(traj: &MomentTrajectory, consts: &ExpansionConstants, inv_mean: f64, cutoff: usize) -> Result<C0Estimate> {
    if !(inv_mean.is_finite() && inv_mean > 0.0) {
        return Err(Error::MissingInverseMoment);
    }
    if cutoff == 0 || cutoff + 1 > traj.steps() {
        return Err(Error::InvalidOption(format!(
            "cutoff {cutoff} needs a trajectory of {} steps, have {}",
            cutoff + 1,
            traj.steps()
        )));
    }
    let (x1, xi) = (traj.x_mean(1), traj.x_mean(cutoff + 1));
    let harmonic: f64 = (1..=cutoff).map(|i| 1.0 / i as f64).sum();
    let value = -consts.c1 + 1.0 / inv_mean + 1.0 / xi - 1.0 / x1 - cutoff as f64 * consts.c1 - consts.c4 * harmonic;
    let se = delta_se(traj, &[(1, 1.0 / (x1 * x1)), (cutoff + 1, -1.0 / (xi * xi))]);
    Ok(C0Estimate { value, se, cutoff })
}

/// `1/x_n - c1 n - c4 (ln n + gamma)`, which tends to `c0`.
pub fn c0_from_expansion(traj: &MomentTrajectory, consts: &ExpansionConstants, n: usize) -> Estimate {
    let x = traj.x_mean(n);
    let nf = n as f64;
    Estimate {
        value: 1.0 / x - consts.c1 * nf - consts.c4 * (nf.ln() + EULER_GAMMA),
        se: delta_se(traj, &[(n, -1.0 / (x * x))]),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub slope_ci: [f64; 2],
    /// `-c4 / c1^2`
    pub reference: f64,
    pub n_lo: usize,
    pub n_hi: usize,
    /// Largest `n^2 SE(x_n)` over the fit range.
    pub max_noise: f64,
    /// Spread of the fitted line over the fit range.
    pub signal_range: f64,
    pub noise_dominates: bool,
}

impl LogFit {
    pub fn require_signal(&self) -> Result<&Self> {
        if self.noise_dominates {
            return Err(Error::NoiseDominates {
                noise: self.max_noise,
                signal: self.signal_range,
            });
        }
        Ok(self)
    }
}

/// Weighted least squares of `n^2 (x_n - 1/(c1 n))` against `ln n`.
///
/// Weights are `1/SE^2` with each SE floored at the floating-point resolution
/// of `x_n` after `n` steps. The slope uncertainty combines the spread of
/// per-replicate fits with the fit's own SE under the floored errors.
pub fn fit_log_correction(traj: &MomentTrajectory, consts: &ExpansionConstants, n_lo: usize, n_hi: usize) -> Result<LogFit> {
    if n_lo < 1 || n_hi <= n_lo || n_hi > traj.steps() {
        return Err(Error::InvalidOption(format!(
            "fit range [{n_lo}, {n_hi}] is not inside 1..={}",
            traj.steps()
        )));
    }
    let ns: Vec<usize> = (n_lo..=n_hi).collect();
    let logs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
    let transform = |n: usize, x: f64| {
        let nf = n as f64;
        nf * nf * (x - 1.0 / (consts.c1 * nf))
    };
    let noise: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let nf = n as f64;
            let floor = nf * f64::EPSILON * traj.x_mean(n);
            nf * nf * traj.x_se(n).max(floor)
        })
        .collect();
    let weights: Vec<f64> = noise.iter().map(|s| 1.0 / (s * s)).collect();
    let coefs = wls_coefficients(&logs, &weights);
    let fit = |xs: &dyn Fn(usize) -> f64| -> (f64, f64) {
        ns.iter()
            .zip(&coefs)
            .fold((0.0, 0.0), |(s, i), (&n, c)| {
                let y = transform(n, xs(n));
                (s + c.0 * y, i + c.1 * y)
            })
    };
    let (slope, intercept) = fit(&|n| traj.x_mean(n));
    let per_rep: Vec<f64> = traj.replicates.iter().map(|r| fit(&|n| r.x[n - 1]).0).collect();
    let rep_se = Summary::of(&per_rep).se;
    let model_se = coefs.iter().zip(&noise).map(|(c, s)| c.0 * c.0 * s * s).sum::<f64>().sqrt();
    let slope_se = rep_se.hypot(model_se);
    let max_noise = noise.iter().copied().fold(0.0, f64::max);
    let signal_range = slope.abs() * (logs[logs.len() - 1] - logs[0]);
    Ok(LogFit {
        slope,
        intercept,
        slope_se,
        slope_ci: [slope - Z95 * slope_se, slope + Z95 * slope_se],
        reference: consts.log_slope(),
        n_lo,
        n_hi,
        max_noise,
        signal_range,
        noise_dominates: max_noise > 0.5 * signal_range,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledTrajectory {
    pub lambda: f64,
    /// `values[n - 1] = (lambda/m)^n x_n`
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    /// `max |v_{n+1}/v_n - 1|` over the last quarter of steps.
    pub ratio_deviation: f64,
    /// Steps `n` with `v_{n+1} > v_n` by more than 5 combined SEs.
    pub monotonicity_violations: Vec<usize>,
}

impl RescaledTrajectory {
    pub fn limit(&self) -> f64 {
        self.values[self.values.len() - 1]
    }
}

pub fn lambda_rescaled_trajectory(traj: &MomentTrajectory) -> Result<RescaledTrajectory> {
    if traj.lambda <= traj.m {
        return Err(Error::InvalidOption(format!(
            "rescaling needs lambda > m, got lambda = {} and m = {}",
            traj.lambda, traj.m
        )));
    }
    if traj.steps() < 4 {
        return Err(Error::InvalidOption("rescaling needs at least 4 steps".into()));
    }
    let ratio = traj.lambda / traj.m;
    let scale: Vec<f64> = (1..=traj.steps() as i32).map(|n| ratio.powi(n)).collect();
    let values: Vec<f64> = traj.x.iter().zip(&scale).map(|(s, k)| s.mean * k).collect();
    let se: Vec<f64> = traj.x.iter().zip(&scale).map(|(s, k)| s.se * k).collect();
    let start = traj.steps() - traj.steps() / 4;
    let ratio_deviation = (start..values.len())
        .map(|i| (values[i] / values[i - 1] - 1.0).abs())
        .fold(0.0, f64::max);
    let monotonicity_violations = (1..values.len())
        .filter(|&i| values[i] - values[i - 1] > 5.0 * se[i].hypot(se[i - 1]))
        .collect();
    Ok(RescaledTrajectory {
        lambda: traj.lambda,
        values,
        se,
        ratio_deviation,
        monotonicity_violations,
    })
}

/// Per-step difference `x_n(2N) - x_n(N)` with combined SE, measuring the
/// resampling bias of the smaller pool.
pub fn resampling_bias(small: &MomentTrajectory, large: &MomentTrajectory) -> Vec<Estimate> {
    small
        .x
        .iter()
        .zip(&large.x)
        .map(|(a, b)| Estimate {
            value: b.mean - a.mean,
            se: a.se.hypot(b.se),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::expansion_constants;

    fn binary_unit() -> (OffspringLaw, ResistanceLaw) {
        (
            OffspringLaw::deterministic(2).unwrap(),
            ResistanceLaw::point_mass(1.0).unwrap(),
        )
    }

    #[test]
    fn init_examples() {
        let (off, res) = binary_unit();
        let p = init_pool(&off, &res, 1000, 2.0, 1).unwrap();
        assert!(p.particles().iter().all(|&c| c == 1.0));
        let p = init_pool(&off, &res, 1000, 3.0, 1).unwrap();
        assert!(p.particles().iter().all(|&c| (c - 2.0 / 3.0).abs() < 1e-15));
        let p = step_pool(p);
        assert!(p.particles().iter().all(|&c| (c - 4.0 / 15.0).abs() < 1e-15));
        assert!(matches!(init_pool(&off, &res, 999, 2.0, 1), Err(Error::PoolTooSmall(999))));
        assert!(init_pool(&off, &res, 1000, 1.5, 1).is_err());
    }

    #[test]
    fn symmetric_pool_tracks_one_over_n() {
        let (off, res) = binary_unit();
        let mut p = init_pool(&off, &res, 1000, 2.0, 5).unwrap();
        for k in 1..=50 {
            assert_eq!(p.step(), k);
            assert!(p.particles().iter().all(|&c| (c - 1.0 / k as f64).abs() < 1e-14));
            p = step_pool(p);
        }
    }

    #[test]
    fn first_generation_mean_is_inverse_moment() {
        let off = OffspringLaw::new(vec![1, 2], vec![0.5, 0.5]).unwrap();
        let res = ResistanceLaw::uniform(0.5, 1.5).unwrap();
        let p = init_pool(&off, &res, 200_000, 1.5, 3).unwrap();
        let s = Summary::of(p.particles());
        assert!((s.mean - 3f64.ln()).abs() < 5.0 * s.se);
    }

    #[test]
    fn trajectory_validation() {
        let (off, res) = binary_unit();
        assert!(matches!(
            moment_trajectory(&off, &res, &PoolOptions::new(1000, 3, 5), 0),
            Err(Error::InsufficientSamples { .. })
        ));
        let mut big = PoolOptions::new(1_000_000, 4, 100_000);
        big.work_budget = 1e9;
        assert!(matches!(moment_trajectory(&off, &res, &big, 0), Err(Error::BudgetExceeded { .. })));
        let err = moment_trajectory(&off, &res, &PoolOptions::new(10, 4, 5), 0).unwrap_err();
        assert!(matches!(err, Error::Replica { index: 0, .. }));
    }

    #[test]
    fn symmetric_trajectory_moments_and_series() {
        let (off, res) = binary_unit();
        let traj = moment_trajectory(&off, &res, &PoolOptions::new(1000, 4, 40), 9).unwrap();
        for n in 1..=40 {
            let nf = n as f64;
            assert!((traj.x_mean(n) - 1.0 / nf).abs() < 1e-14);
            assert!((traj.y[n - 1].mean - 1.0 / (nf * nf)).abs() < 1e-14);
            assert!((traj.z[n - 1].mean - 1.0 / (nf * nf * nf)).abs() < 1e-14);
            assert_eq!(traj.x_se(n), 0.0);
        }
        let consts = expansion_constants(&off, &res).unwrap();
        assert!(traj.eps(consts.c1).iter().all(|e| e.value.abs() < 1e-10));
        let c0 = estimate_c0(&traj, &consts, 1.0, 30).unwrap();
        assert!(c0.value.abs() < 1e-10);
        assert!(estimate_c0(&traj, &consts, 1.0, 40).is_err());
        assert!(matches!(
            estimate_c0(&traj, &consts, f64::INFINITY, 10),
            Err(Error::MissingInverseMoment)
        ));
        let fit = fit_log_correction(&traj, &consts, 10, 40).unwrap();
        assert!(fit.slope_ci[0] <= 0.0 && 0.0 <= fit.slope_ci[1]);
        assert!(fit.noise_dominates);
        assert!(fit.require_signal().is_err());
    }

    #[test]
    fn trajectories_are_reproducible() {
        let off = OffspringLaw::new(vec![1, 3], vec![0.5, 0.5]).unwrap();
        let res = ResistanceLaw::two_point(0.5, 0.5, 1.5).unwrap();
        let opts = PoolOptions::new(5000, 4, 10);
        let a = moment_trajectory(&off, &res, &opts, 21).unwrap();
        let b = moment_trajectory(&off, &res, &opts, 21).unwrap();
        assert_eq!(a, b);
        let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = single.install(|| moment_trajectory(&off, &res, &opts, 21).unwrap());
        assert_eq!(a, c);
    }

    #[test]
    fn lambda_rescaling_examples() {
        let (off, res) = binary_unit();
        let opts = PoolOptions::new(1000, 4, 60);
        let t3 = moment_trajectory(&off, &res, &opts.with_lambda(3.0), 0).unwrap();
        let r3 = lambda_rescaled_trajectory(&t3).unwrap();
        assert!((r3.values[0] - 1.0).abs() < 1e-14);
        assert!((r3.values[1] - 0.6).abs() < 1e-14);
        assert!(r3.values.windows(2).all(|w| w[1] <= w[0]));
        assert!(r3.ratio_deviation < 1e-6);
        let t4 = moment_trajectory(&off, &res, &opts.with_lambda(4.0), 0).unwrap();
        let r4 = lambda_rescaled_trajectory(&t4).unwrap();
        // 1/c_{n+1} = (lambda/2)(1/c_n + 1) gives the limit 1 - m/lambda, which grows with lambda
        assert!((r3.limit() - 1.0 / 3.0).abs() < 1e-9);
        assert!((r4.limit() - 0.5).abs() < 1e-9);
        let crit = moment_trajectory(&off, &res, &opts, 0).unwrap();
        assert!(lambda_rescaled_trajectory(&crit).is_err());
    }

    #[test]
    fn rescaled_scalar_iteration() {
        // det binary, unit weights: c_{n+1} = (2/lambda) c_n / (1 + c_n)
        let (off, res) = binary_unit();
        let traj = moment_trajectory(&off, &res, &PoolOptions::new(1000, 4, 20).with_lambda(3.0), 0).unwrap();
        let mut c = 2.0 / 3.0;
        for n in 1..=20 {
            assert!((traj.x_mean(n) - c).abs() < 1e-15);
            c = 2.0 * (c / (1.0 + c)) / 3.0;
        }
    }
}
