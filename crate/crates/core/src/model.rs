//! Offspring and resistance laws, and the analytic constants derived from them.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the total mass of an offspring pmf. Pmfs outside it are
/// rejected rather than renormalized.
pub const PMF_TOLERANCE: f64 = 1e-12;

/// Serialized form of an [`OffspringLaw`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffspringSpec {
    pub support: Vec<u32>,
    pub probs: Vec<f64>,
}

/// Finite-support offspring distribution with `p0 = 0` and mean `m > 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "OffspringSpec", into = "OffspringSpec")]
pub struct OffspringLaw {
    support: Vec<u32>,
    probs: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
}

impl OffspringLaw {
    pub fn new(support: Vec<u32>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::InvalidPmf("empty support".into()));
        }
        if support.len() != probs.len() {
            return Err(Error::InvalidPmf(format!(
                "support has {} points but probs has {}",
                support.len(),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidPmf(format!("probability {p} is not in [0, 1]")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PMF_TOLERANCE {
            return Err(Error::InvalidPmf(format!("probabilities sum to {total}, not 1")));
        }
        if support.contains(&0) {
            return Err(Error::ZeroOffspring);
        }
        let mean: f64 = support.iter().zip(&probs).map(|(&k, &p)| f64::from(k) * p).sum();
        if mean <= 1.0 {
            return Err(Error::SubcriticalOrCritical { mean });
        }
        let cdf = probs
            .iter()
            .scan(0.0, |acc, &p| {
                *acc += p;
                Some(*acc)
            })
            .collect();
        Ok(OffspringLaw {
            support,
            probs,
            cdf,
            mean,
        })
    }

    /// Law of a deterministic offspring number.
    pub fn deterministic(k: u32) -> Result<Self> {
        Self::new(vec![k], vec![1.0])
    }

    pub fn support(&self) -> &[u32] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Mean offspring number `m`.
    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn max_support(&self) -> u32 {
        self.atoms().map(|(k, _)| k).max().unwrap_or(0)
    }

    pub fn min_support(&self) -> u32 {
        self.atoms().map(|(k, _)| k).min().unwrap_or(0)
    }

    /// `P(nu = 1)`.
    pub fn p1(&self) -> f64 {
        self.atoms().filter(|&(k, _)| k == 1).fold(0.0, |acc, (_, p)| acc + p)
    }

    pub fn is_deterministic(&self) -> bool {
        self.constant().is_some()
    }

    /// The offspring number when it is almost surely constant.
    pub fn constant(&self) -> Option<u32> {
        let mut atoms = self.atoms().map(|(k, _)| k);
        let first = atoms.next()?;
        atoms.all(|k| k == first).then_some(first)
    }

    /// Support points carrying positive mass.
    fn atoms(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.support
            .iter()
            .zip(&self.probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&k, &p)| (k, p))
    }

    /// `E[nu (nu - 1) ... (nu - k + 1)]`, exact for the finite support.
    pub fn factorial_moment(&self, k: u32) -> f64 {
        self.atoms()
            .map(|(nu, p)| {
                let falling: f64 = (0..k).map(|j| f64::from(nu) - f64::from(j)).product();
                falling * p
            })
            .sum()
    }

    /// `E[W^2] = (E[nu^2] - m) / (m (m - 1))` for the martingale limit `W`.
    pub fn w_second_moment(&self) -> f64 {
        let m = self.mean;
        let second: f64 = self.atoms().map(|(k, p)| f64::from(k).powi(2) * p).sum();
        (second - m) / (m * (m - 1.0))
    }

    /// `p1 * m < 1`, equivalent to `E[1/W] < infinity`.
    pub fn dubuc_condition(&self) -> bool {
        self.p1() * self.mean < 1.0
    }

    /// Draws an offspring number by inversion.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        if self.support.len() == 1 {
            return self.support[0];
        }
        let u: f64 = rng.random();
        for (k, &c) in self.support.iter().zip(&self.cdf) {
            if u < c {
                return *k;
            }
        }
        // total mass can fall short of 1 by rounding
        self.atoms().last().map(|(k, _)| k).unwrap_or(self.support[0])
    }
}

impl TryFrom<OffspringSpec> for OffspringLaw {
    type Error = Error;

    fn try_from(raw: OffspringSpec) -> Result<Self> {
        OffspringLaw::new(raw.support, raw.probs)
    }
}

impl From<OffspringLaw> for OffspringSpec {
    fn from(law: OffspringLaw) -> Self {
        OffspringSpec {
            support: law.support,
            probs: law.probs,
        }
    }
}

/// Parametric family of the edge weight `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ResistanceFamily {
    PointMass { value: f64 },
    Uniform { low: f64, high: f64 },
    /// `value1` with probability `prob1`, else `value2`.
    TwoPoint { value1: f64, prob1: f64, value2: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

/// Analytic moments of `xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResistanceMoments {
    /// `E[xi]`
    pub b1: f64,
    /// `E[xi^2]`
    pub b2: f64,
    /// `E[xi^3]`
    pub b3: f64,
    /// `E[1/xi]`
    pub inv_mean: f64,
}

/// Law of the positive edge weight `xi`; the edge at depth `d` carries
/// resistance `m^d xi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ResistanceFamily", into = "ResistanceFamily")]
pub struct ResistanceLaw {
    family: ResistanceFamily,
    moments: ResistanceMoments,
}

impl ResistanceLaw {
    pub fn new(family: ResistanceFamily) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidResistanceLaw(msg));
        let positive = |v: f64| v.is_finite() && v > 0.0;
        match family {
            ResistanceFamily::PointMass { value } if !positive(value) => {
                return bad(format!("point mass {value} must be positive and finite"));
            }
            ResistanceFamily::Uniform { low, high } if !(positive(low) && high.is_finite() && high > low) => {
                return bad(format!("uniform({low}, {high}) needs 0 < low < high < inf"));
            }
            ResistanceFamily::TwoPoint { value1, prob1, value2 }
                if !(positive(value1) && positive(value2) && (0.0..=1.0).contains(&prob1)) =>
            {
                return bad(format!("two-point({value1}, {prob1}, {value2}) is invalid"));
            }
            ResistanceFamily::LogNormal { mu, sigma } if !(mu.is_finite() && sigma.is_finite() && sigma >= 0.0) => {
                return bad(format!("lognormal({mu}, {sigma}) is invalid"));
            }
            _ => {}
        }
        let moment = |k: i32| raw_moment(&family, k);
        let moments = ResistanceMoments {
            b1: moment(1),
            b2: moment(2),
            b3: moment(3),
            inv_mean: moment(-1),
        };
        // The strongest moment set used anywhere is required up front.
        for (name, v) in [
            ("E[xi]", moments.b1),
            ("E[xi^2]", moments.b2),
            ("E[xi^3]", moments.b3),
            ("E[1/xi]", moments.inv_mean),
        ] {
            if !v.is_finite() {
                return Err(Error::MissingMoment(name));
            }
        }
        Ok(ResistanceLaw { family, moments })
    }

    pub fn point_mass(value: f64) -> Result<Self> {
        Self::new(ResistanceFamily::PointMass { value })
    }

    pub fn uniform(low: f64, high: f64) -> Result<Self> {
        Self::new(ResistanceFamily::Uniform { low, high })
    }

    pub fn two_point(value1: f64, prob1: f64, value2: f64) -> Result<Self> {
        Self::new(ResistanceFamily::TwoPoint { value1, prob1, value2 })
    }

    pub fn log_normal(mu: f64, sigma: f64) -> Result<Self> {
        Self::new(ResistanceFamily::LogNormal { mu, sigma })
    }

    pub fn family(&self) -> ResistanceFamily {
        self.family
    }

    pub fn moments(&self) -> ResistanceMoments {
        self.moments
    }

    /// `E[xi^k]` for any integer `k`.
    pub fn moment(&self, k: i32) -> f64 {
        raw_moment(&self.family, k)
    }

    pub fn variance(&self) -> f64 {
        self.moments.b2 - self.moments.b1 * self.moments.b1
    }

    /// Whether sampling consumes no randomness.
    pub fn is_degenerate(&self) -> bool {
        self.constant().is_some()
    }

    /// The weight when it is a point mass.
    pub fn constant(&self) -> Option<f64> {
        match self.family {
            ResistanceFamily::PointMass { value } => Some(value),
            _ => None,
        }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            ResistanceFamily::PointMass { value } => value,
            ResistanceFamily::Uniform { low, high } => low + (high - low) * rng.random::<f64>(),
            ResistanceFamily::TwoPoint { value1, prob1, value2 } => {
                if rng.random::<f64>() < prob1 {
                    value1
                } else {
                    value2
                }
            }
            ResistanceFamily::LogNormal { mu, sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                (mu + sigma * z).exp()
            }
        }
    }
}

fn raw_moment(family: &ResistanceFamily, k: i32) -> f64 {
    match *family {
        ResistanceFamily::PointMass { value } => value.powi(k),
        ResistanceFamily::Uniform { low, high } => {
            if k == -1 {
                (high / low).ln() / (high - low)
            } else {
                let e = k + 1;
                (high.powi(e) - low.powi(e)) / (f64::from(e) * (high - low))
            }
        }
        ResistanceFamily::TwoPoint { value1, prob1, value2 } => {
            prob1 * value1.powi(k) + (1.0 - prob1) * value2.powi(k)
        }
        ResistanceFamily::LogNormal { mu, sigma } => {
            let k = f64::from(k);
            (k * mu + 0.5 * k * k * sigma * sigma).exp()
        }
    }
}

impl TryFrom<ResistanceFamily> for ResistanceLaw {
    type Error = Error;

    fn try_from(family: ResistanceFamily) -> Result<Self> {
        ResistanceLaw::new(family)
    }
}

impl From<ResistanceLaw> for ResistanceFamily {
    fn from(law: ResistanceLaw) -> Self {
        law.family
    }
}

/// Constants of the asymptotic expansion of `E[C_n]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpansionConstants {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
}

impl ExpansionConstants {
    /// Slope `-c4 / c1^2` of `n^2 (E[C_n] - 1/(c1 n))` against `log n`.
    pub fn log_slope(&self) -> f64 {
        -self.c4 / (self.c1 * self.c1)
    }
}

pub fn expansion_constants(off: &OffspringLaw, res: &ResistanceLaw) -> Result<ExpansionConstants> {
    let m = off.mean();
    let ResistanceMoments { b1, b2, .. } = res.moments();
    if !b1.is_finite() {
        return Err(Error::MissingMoment("E[xi]"));
    }
    if !b2.is_finite() {
        return Err(Error::MissingMoment("E[xi^2]"));
    }
    let a1 = off.factorial_moment(2) / (m * m);
    // nu (nu - 1) (nu - 2) vanishes on nu < 2, so the indicator is implicit
    let a2 = off.factorial_moment(3) / (m * m * m);
    let c1 = a1 * b1 / (1.0 - 1.0 / m);
    let c2 = (3.0 * a1 * a1 / (m - 1.0) + a2) / (1.0 - 1.0 / (m * m));
    let c3 = 2.0 * a1 * c1 / (m - 1.0) - 2.0 * b1 * c2 / m;
    let c4 = b1 / (1.0 - 1.0 / m) * (c3 / c1 + a1) - b2 * c2 / c1;
    Ok(ExpansionConstants {
        a1,
        a2,
        b1,
        b2,
        c1,
        c2,
        c3,
        c4,
    })
}

pub fn factorial_moment(law: &OffspringLaw, k: u32) -> f64 {
    law.factorial_moment(k)
}

pub fn w_second_moment(law: &OffspringLaw) -> f64 {
    law.w_second_moment()
}

pub fn dubuc_condition(law: &OffspringLaw) -> bool {
    law.dubuc_condition()
}

/// Everything printed by the `constants` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub m: f64,
    pub p1: f64,
    pub p1_m: f64,
    pub dubuc: bool,
    pub e_w2: f64,
    pub inv_mean: f64,
    pub b3: f64,
    pub constants: ExpansionConstants,
    /// Residuals of `c2 = 1`, `c3 = 0`, `c4 = b1 - b2/b1` when `nu` is deterministic.
    pub deterministic_check: Option<[f64; 3]>,
}

pub fn summarize(off: &OffspringLaw, res: &ResistanceLaw) -> Result<ModelSummary> {
    let constants = expansion_constants(off, res)?;
    let moments = res.moments();
    let deterministic_check = off.is_deterministic().then(|| {
        [
            constants.c2 - 1.0,
            constants.c3,
            constants.c4 - (moments.b1 - moments.b2 / moments.b1),
        ]
    });
    Ok(ModelSummary {
        m: off.mean(),
        p1: off.p1(),
        p1_m: off.p1() * off.mean(),
        dubuc: off.dubuc_condition(),
        e_w2: off.w_second_moment(),
        inv_mean: moments.inv_mean,
        b3: moments.b3,
        constants,
        deterministic_check,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;
    use proptest::prelude::*;

    fn law(support: &[u32], probs: &[f64]) -> OffspringLaw {
        OffspringLaw::new(support.to_vec(), probs.to_vec()).unwrap()
    }

    #[test]
    fn offspring_means() {
        assert_eq!(OffspringLaw::deterministic(2).unwrap().mean(), 2.0);
        assert_eq!(law(&[1, 2], &[0.5, 0.5]).mean(), 1.5);
    }

    #[test]
    fn offspring_validation() {
        assert!(matches!(OffspringLaw::new(vec![0, 2], vec![0.2, 0.8]), Err(Error::ZeroOffspring)));
        assert!(matches!(OffspringLaw::new(vec![1, 2], vec![0.5, 0.4]), Err(Error::InvalidPmf(_))));
        assert!(matches!(OffspringLaw::new(vec![1, 2], vec![1.5, -0.5]), Err(Error::InvalidPmf(_))));
        assert!(matches!(OffspringLaw::new(vec![1], vec![0.5, 0.5]), Err(Error::InvalidPmf(_))));
        assert!(matches!(OffspringLaw::new(vec![], vec![]), Err(Error::InvalidPmf(_))));
        assert!(matches!(OffspringLaw::new(vec![1], vec![1.0]), Err(Error::SubcriticalOrCritical { .. })));
        // off by more than the tolerance: refused, not renormalized
        assert!(matches!(
            OffspringLaw::new(vec![1, 2], vec![0.5, 0.5 + 1e-9]),
            Err(Error::InvalidPmf(_))
        ));
    }

    #[test]
    fn factorial_moments() {
        let det2 = OffspringLaw::deterministic(2).unwrap();
        assert_eq!(det2.factorial_moment(2), 2.0);
        assert_eq!(det2.factorial_moment(3), 0.0);
        assert_eq!(det2.factorial_moment(1), 2.0);
        // 0 * .5 + 2 * .5
        assert_eq!(law(&[1, 2], &[0.5, 0.5]).factorial_moment(2), 1.0);
        // 3*2*1*0.5 + 5*4*3*2*0.5 ... for k = 4 on [3, 5]: 0 + 120 * 0.5
        assert_eq!(law(&[3, 5], &[0.5, 0.5]).factorial_moment(4), 60.0);
    }

    #[test]
    fn w_second_moments() {
        assert_eq!(OffspringLaw::deterministic(3).unwrap().w_second_moment(), 1.0);
        assert!((law(&[1, 2], &[0.5, 0.5]).w_second_moment() - 4.0 / 3.0).abs() < 1e-15);
        assert!((law(&[1, 3], &[0.5, 0.5]).w_second_moment() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn dubuc() {
        assert!(OffspringLaw::deterministic(2).unwrap().dubuc_condition());
        assert!(law(&[1, 2], &[0.5, 0.5]).dubuc_condition());
        assert!(!law(&[1, 5], &[0.8, 0.2]).dubuc_condition());
    }

    #[test]
    fn deterministic_binary_uniform_constants() {
        let c = expansion_constants(
            &OffspringLaw::deterministic(2).unwrap(),
            &ResistanceLaw::uniform(0.5, 1.5).unwrap(),
        )
        .unwrap();
        assert!((c.c1 - 1.0).abs() < 1e-12);
        assert!((c.c2 - 1.0).abs() < 1e-12);
        assert!(c.c3.abs() < 1e-12);
        assert!((c.c4 + 1.0 / 12.0).abs() < 1e-12);
        assert!((c.log_slope() - 1.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn deterministic_binary_unit_constants() {
        let c = expansion_constants(
            &OffspringLaw::deterministic(2).unwrap(),
            &ResistanceLaw::point_mass(1.0).unwrap(),
        )
        .unwrap();
        assert_eq!(c.a1, 0.5);
        assert!((c.c1 - 1.0).abs() < 1e-15);
        assert!(c.c4.abs() < 1e-15);
    }

    #[test]
    fn mixed_offspring_constants_match_hand_fractions() {
        // a1 = 1/m^2 = 4/9, a2 = 0, c1 = (4/9)/(1/3) = 4/3,
        // c2 = (3 (16/81) / (1/2)) / (5/9) = 32/15,
        // c3 = 2 (4/9)(4/3) / (1/2) - 2 (32/15) / (3/2) = 64/27 - 128/45 = -64/135,
        // c4 = 3 (c3/c1 + a1) - c2/c1 = 3 (12/135) - 8/5 = -4/3
        let c = expansion_constants(&law(&[1, 2], &[0.5, 0.5]), &ResistanceLaw::point_mass(1.0).unwrap()).unwrap();
        let expect = [
            (c.a1, 4.0 / 9.0),
            (c.a2, 0.0),
            (c.c1, 4.0 / 3.0),
            (c.c2, 32.0 / 15.0),
            (c.c3, -64.0 / 135.0),
            (c.c4, -4.0 / 3.0),
        ];
        for (got, want) in expect {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        assert!((c.log_slope() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn resistance_moments_closed_form() {
        let u = ResistanceLaw::uniform(0.5, 1.5).unwrap().moments();
        assert!((u.b1 - 1.0).abs() < 1e-15);
        assert!((u.b2 - (1.0 + 1.0 / 12.0)).abs() < 1e-15);
        assert!((u.inv_mean - 3f64.ln()).abs() < 1e-15);
        let t = ResistanceLaw::two_point(0.5, 0.5, 1.5).unwrap().moments();
        assert_eq!(t.b2, 1.25);
        assert!((t.inv_mean - 4.0 / 3.0).abs() < 1e-15);
        let l = ResistanceLaw::log_normal(0.0, 0.5).unwrap().moments();
        assert!((l.b1 - 0.125f64.exp()).abs() < 1e-15);
        assert!((l.inv_mean - l.b1).abs() < 1e-15);
    }

    #[test]
    fn resistance_validation() {
        assert!(ResistanceLaw::uniform(0.0, 1.0).is_err());
        assert!(ResistanceLaw::uniform(2.0, 1.0).is_err());
        assert!(ResistanceLaw::point_mass(-1.0).is_err());
        assert!(ResistanceLaw::two_point(1.0, 1.5, 2.0).is_err());
        assert!(ResistanceLaw::log_normal(0.0, -1.0).is_err());
        assert!(matches!(ResistanceLaw::log_normal(0.0, 30.0), Err(Error::MissingMoment(_))));
    }

    #[test]
    fn empirical_moments_match_analytic() {
        let laws = [
            ResistanceLaw::uniform(0.5, 1.5).unwrap(),
            ResistanceLaw::two_point(0.5, 0.5, 1.5).unwrap(),
            ResistanceLaw::log_normal(0.1, 0.4).unwrap(),
            ResistanceLaw::point_mass(2.0).unwrap(),
        ];
        let samples = 1_000_000;
        for (i, law) in laws.iter().enumerate() {
            let mut rng = StreamKey::new(2024).child(i as u64).rng();
            let xs: Vec<f64> = (0..samples).map(|_| law.sample(&mut rng)).collect();
            assert!(xs.iter().all(|&x| x > 0.0));
            for k in [1, 2, 3, -1] {
                let vals: Vec<f64> = xs.iter().map(|x| x.powi(k)).collect();
                let mean = vals.iter().sum::<f64>() / samples as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
                let se = (var / samples as f64).sqrt();
                let exact = law.moment(k);
                assert!(
                    (mean - exact).abs() <= 5.0 * se + 1e-12 * exact.abs(),
                    "law {i} k {k}: {mean} vs {exact} (se {se})"
                );
            }
        }
    }

    #[test]
    fn offspring_sampler_frequencies() {
        let off = law(&[1, 3, 4], &[0.2, 0.5, 0.3]);
        let mut rng = StreamKey::new(5).rng();
        let n = 200_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[off.sample(&mut rng) as usize] += 1;
        }
        for (k, p) in [(1, 0.2), (3, 0.5), (4, 0.3)] {
            let f = counts[k] as f64 / n as f64;
            assert!((f - p).abs() < 5.0 * (p * (1.0 - p) / n as f64).sqrt());
        }
        assert_eq!(counts[0] + counts[2], 0);
    }

    #[test]
    fn serde_round_trip_validates() {
        let off: OffspringLaw = serde_json::from_str(r#"{"support":[1,2],"probs":[0.5,0.5]}"#).unwrap();
        assert_eq!(off.mean(), 1.5);
        assert!(serde_json::from_str::<OffspringLaw>(r#"{"support":[0,2],"probs":[0.2,0.8]}"#).is_err());
        let res: ResistanceLaw = serde_json::from_str(r#"{"family":"uniform","low":0.5,"high":1.5}"#).unwrap();
        assert_eq!(res, ResistanceLaw::uniform(0.5, 1.5).unwrap());
        assert!(serde_json::from_str::<ResistanceLaw>(r#"{"family":"point-mass","value":0}"#).is_err());
    }

    fn arb_offspring() -> impl Strategy<Value = (Vec<u32>, Vec<f64>)> {
        prop::collection::vec((1u32..7, 1u32..20), 1..5).prop_filter_map("supercritical", |atoms| {
            let total: u32 = atoms.iter().map(|a| a.1).sum();
            let support: Vec<u32> = atoms.iter().map(|a| a.0).collect();
            let probs: Vec<f64> = atoms.iter().map(|a| f64::from(a.1) / f64::from(total)).collect();
            OffspringLaw::new(support.clone(), probs.clone()).ok().map(|_| (support, probs))
        })
    }

    fn arb_resistance() -> impl Strategy<Value = ResistanceLaw> {
        prop_oneof![
            (0.1f64..3.0).prop_map(|v| ResistanceLaw::point_mass(v).unwrap()),
            (0.1f64..1.0, 0.1f64..2.0).prop_map(|(a, w)| ResistanceLaw::uniform(a, a + w).unwrap()),
            (0.1f64..2.0, 0.0f64..1.0, 0.1f64..2.0)
                .prop_map(|(a, q, b)| ResistanceLaw::two_point(a, q, b).unwrap()),
            (-0.5f64..0.5, 0.0f64..0.8).prop_map(|(mu, s)| ResistanceLaw::log_normal(mu, s).unwrap()),
        ]
    }

    proptest! {
        #[test]
        fn c1_equals_mean_xi_times_w_second_moment((support, probs) in arb_offspring(), res in arb_resistance()) {
            let off = OffspringLaw::new(support, probs).unwrap();
            let c = expansion_constants(&off, &res).unwrap();
            let identity = res.moments().b1 * off.w_second_moment();
            prop_assert!((c.c1 - identity).abs() <= 1e-12 * identity.max(1.0));
            prop_assert!(c.a1 >= 0.0 && c.a2 >= 0.0 && c.b1 > 0.0 && c.c1 > 0.0 && c.c2 > 0.0);
            prop_assert!(off.w_second_moment() >= 1.0 - 1e-12);
        }

        #[test]
        fn merging_duplicate_atoms_leaves_constants_unchanged(
            (support, probs) in arb_offspring(),
            split in 0.0f64..1.0,
            res in arb_resistance(),
        ) {
            let merged = OffspringLaw::new(support.clone(), probs.clone()).unwrap();
            let mut s2 = support.clone();
            let mut p2 = probs.clone();
            s2.push(support[0]);
            p2.push(probs[0] * split);
            p2[0] = probs[0] * (1.0 - split);
            let duplicated = OffspringLaw::new(s2, p2).unwrap();
            let a = expansion_constants(&merged, &res).unwrap();
            let b = expansion_constants(&duplicated, &res).unwrap();
            for (x, y) in [(a.a1, b.a1), (a.a2, b.a2), (a.c1, b.c1), (a.c2, b.c2), (a.c3, b.c3), (a.c4, b.c4)] {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{} vs {}", x, y);
            }
        }

        #[test]
        fn deterministic_specialization(k in 2u32..9, res in arb_resistance()) {
            let c = expansion_constants(&OffspringLaw::deterministic(k).unwrap(), &res).unwrap();
            let m = res.moments();
            prop_assert!((c.c2 - 1.0).abs() < 1e-12);
            prop_assert!(c.c3.abs() < 1e-12 * c.c1.max(1.0));
            prop_assert!((c.c4 - (m.b1 - m.b2 / m.b1)).abs() < 1e-12 * m.b2.max(1.0));
        }
    }
}
