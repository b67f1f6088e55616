//! Sample statistics. All reductions are sequential folds in index order so
//! that results are bit-reproducible.

use serde::{Deserialize, Serialize};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    /// Unbiased sample variance (0 for a single sample).
    pub variance: f64,
    pub se: f64,
    pub ci95: [f64; 2],
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let count = values.len();
        let mean = mean(values);
        let variance = if count > 1 {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1) as f64
        } else {
            0.0
        };
        let se = if count > 0 { (variance / count as f64).sqrt() } else { f64::NAN };
        Summary {
            count,
            mean,
            variance,
            se,
            ci95: [mean - Z95 * se, mean + Z95 * se],
        }
    }

    pub fn sd(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Pearson correlation; `None` when either sample is constant.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Weighted least-squares line `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard errors assuming independent points with variance `1/weight`.
    pub slope_se: f64,
    pub intercept_se: f64,
}

/// Per-point coefficients `(slope_coef, intercept_coef)` such that the fitted
/// slope and intercept are `sum(coef_i * y_i)`. The fit is linear in `y`.
pub fn wls_coefficients(xs: &[f64], weights: &[f64]) -> Vec<(f64, f64)> {
    assert_eq!(xs.len(), weights.len());
    let s: f64 = weights.iter().sum();
    let sx: f64 = xs.iter().zip(weights).map(|(x, w)| w * x).sum();
    let sxx: f64 = xs.iter().zip(weights).map(|(x, w)| w * x * x).sum();
    let det = s * sxx - sx * sx;
    xs.iter()
        .zip(weights)
        .map(|(x, w)| (w * (s * x - sx) / det, w * (sxx - sx * x) / det))
        .collect()
}

pub fn wls_line(xs: &[f64], ys: &[f64], weights: &[f64]) -> LineFit {
    assert_eq!(xs.len(), ys.len());
    let coefs = wls_coefficients(xs, weights);
    let slope = coefs.iter().zip(ys).map(|(c, y)| c.0 * y).sum();
    let intercept = coefs.iter().zip(ys).map(|(c, y)| c.1 * y).sum();
    let s: f64 = weights.iter().sum();
    let sx: f64 = xs.iter().zip(weights).map(|(x, w)| w * x).sum();
    let sxx: f64 = xs.iter().zip(weights).map(|(x, w)| w * x * x).sum();
    let det = s * sxx - sx * sx;
    LineFit {
        slope,
        intercept,
        slope_se: (s / det).sqrt(),
        intercept_se: (sxx / det).sqrt(),
    }
}
