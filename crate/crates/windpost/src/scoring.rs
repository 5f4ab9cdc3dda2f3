//! Proper scoring rules: closed-form CRPS for the truncated normal,
//! sampling-based weighted CRPS with chaining functions, and Brier scores.

use crate::dists::{ForecastDistribution, NoiseBlock, QuantileKernel};
use crate::error::{Error, Result};
use crate::math::{std_normal_cdf, std_normal_pdf, std_normal_sf, SQRT_2};
use serde::{Deserialize, Serialize};

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Loss-shaping weight applied to regions of the outcome space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightFunction {
    /// Unit weight everywhere; the plain CRPS.
    Constant,
    /// `1{z >= t}`: the threshold-weighted CRPS.
    Indicator { t: f64 },
    /// `c + Phi_{mu, sigma}(z)`: a vertically shifted Gaussian cdf.
    ShiftedGaussCdf { mu: f64, sigma: f64, c: f64 },
}

impl WeightFunction {
    pub fn indicator(t: f64) -> Self {
        WeightFunction::Indicator { t }
    }

    pub fn shifted_gauss_cdf(mu: f64, sigma: f64, c: f64) -> Self {
        WeightFunction::ShiftedGaussCdf { mu, sigma, c }
    }

    /// Named presets used throughout the verification workflows.
    pub fn preset(name: &str) -> Result<Self> {
        Ok(match name {
            "constant" => WeightFunction::Constant,
            "indicator12" => WeightFunction::indicator(12.0),
            "sharp_sigmoid" => WeightFunction::shifted_gauss_cdf(8.84, 1.07, 0.02),
            "sigmoid" => WeightFunction::shifted_gauss_cdf(7.05, 2.41, 0.06),
            "best_cnn" => WeightFunction::shifted_gauss_cdf(5.42, 7.82, 0.92),
            other => {
                return Err(Error::Config(format!(
                    "unknown weight preset '{other}' (expected constant, indicator12, \
                     sharp_sigmoid, sigmoid, or best_cnn)"
                )))
            }
        })
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["constant", "indicator12", "sharp_sigmoid", "sigmoid", "best_cnn"]
    }

    /// Weight at `z`; nonnegative and nondecreasing for all kinds.
    #[inline]
    pub fn weight_eval(&self, z: f64) -> f64 {
        match self {
            WeightFunction::Constant => 1.0,
            WeightFunction::Indicator { t } => {
                if z >= *t {
                    1.0
                } else {
                    0.0
                }
            }
            WeightFunction::ShiftedGaussCdf { mu, sigma, c } => {
                c + std_normal_cdf((z - mu) / sigma)
            }
        }
    }

    /// Antiderivative of the weight (the chaining function `v`).
    #[inline]
    pub fn chaining_eval(&self, z: f64) -> f64 {
        match self {
            WeightFunction::Constant => z,
            WeightFunction::Indicator { t } => z.max(*t),
            WeightFunction::ShiftedGaussCdf { mu, sigma, c } => {
                let s = (z - mu) / sigma;
                c * z + (z - mu) * std_normal_cdf(s) + sigma * std_normal_pdf(s)
            }
        }
    }
}

/// A scoring-rule value with estimator metadata. `estimator_n` is zero for
/// closed-form evaluations, and `std_error` carries the Monte Carlo
/// standard error when sampled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreValue {
    pub value: f64,
    pub estimator_n: usize,
    pub seed: u64,
    pub std_error: f64,
}

/// Closed-form CRPS of a zero-truncated normal.
///
/// With `p = Phi(mu / sigma)` and `s = (y - mu) / sigma`:
/// `CRPS = sigma / p^2 * [ s p (2 Phi(s) + p - 2) + 2 p phi(s)
///   - Phi(sqrt(2) mu / sigma) / sqrt(pi) ]`.
pub fn crps_closed_form_tn(d: &ForecastDistribution, y: f64) -> Result<ScoreValue> {
    let (loc, scale) = match d {
        ForecastDistribution::TruncNormal { loc, scale } => (*loc, *scale),
        other => {
            return Err(Error::UnsupportedFamily(format!(
                "closed-form CRPS requires a truncated normal, got {other:?}"
            )))
        }
    };
    if y < 0.0 {
        return Err(Error::Domain(format!("observation {y} below support")));
    }
    let (value, _, _) = crps_tn_with_grad(loc, scale, y);
    Ok(ScoreValue {
        value,
        estimator_n: 0,
        seed: 0,
        std_error: 0.0,
    })
}

/// Closed-form truncated-normal CRPS and its gradient in `(loc, scale)`.
///
/// `2 Phi(s) + p - 2` is computed as `p - 2 PhiBar(s)` through the
/// survival function so the bracket keeps relative accuracy when both
/// tails are tiny; without this the value has sign errors once
/// `Phi(s)` rounds to 1.
pub(crate) fn crps_tn_with_grad(loc: f64, scale: f64, y: f64) -> (f64, f64, f64) {
    // The cutoff keeps p^3 (the gradient denominator) clear of underflow.
    let p = std_normal_sf(-loc / scale);
    if p < 1e-80 {
        // Numerically a point mass at the truncation point: the score is
        // the distance to the observation and the parameters have no
        // local influence through this record.
        return (y, 0.0, 0.0);
    }
    let s = (y - loc) / scale;
    let phi_s = std_normal_pdf(s);
    let sf_s = std_normal_sf(s);
    let m = SQRT_2 * loc / scale;
    let b = s * p * (p - 2.0 * sf_s) + 2.0 * p * phi_s - std_normal_sf(-m) / SQRT_PI;
    let p2 = p * p;
    let value = scale * b / p2;

    // Partials of the building blocks.
    let phi_ratio = std_normal_pdf(loc / scale);
    let dp_dmu = phi_ratio / scale;
    let dp_dsigma = -phi_ratio * loc / (scale * scale);
    let ds_dmu = -1.0 / scale;
    let ds_dsigma = -s / scale;
    // dB/ds: the phi terms cancel.
    let db_ds = p * (p - 2.0 * sf_s);
    let db_dp = s * (2.0 * p - 2.0 * sf_s) + 2.0 * phi_s;
    let phi_m = std_normal_pdf(m);
    let db_dmu_direct = -phi_m * SQRT_2 / (scale * SQRT_PI);
    let db_dsigma_direct = phi_m * SQRT_2 * loc / (scale * scale * SQRT_PI);

    let db_dmu = db_ds * ds_dmu + db_dp * dp_dmu + db_dmu_direct;
    let db_dsigma = db_ds * ds_dsigma + db_dp * dp_dsigma + db_dsigma_direct;

    let d_mu = scale * (db_dmu / p2 - 2.0 * b * dp_dmu / (p2 * p));
    let d_sigma = b / p2 + scale * (db_dsigma / p2 - 2.0 * b * dp_dsigma / (p2 * p));
    (value, d_mu, d_sigma)
}

/// Sampling-based estimator of the weighted CRPS:
/// `(1/n) sum_i |v(x_i) - v(y)| - |v(x_i) - v(x_i')| / 2`
/// with `x_i` and `x_i'` drawn from the forecast distribution by
/// reparametrized sampling from two independent noise blocks.
pub fn wcrps_sample_estimate(
    d: &ForecastDistribution,
    y: f64,
    w: &WeightFunction,
    noise: &NoiseBlock,
    noise2: &NoiseBlock,
) -> Result<ScoreValue> {
    let n = noise.values.len();
    if n == 0 || noise2.values.len() != n {
        return Err(Error::Argument(format!(
            "noise blocks must have equal nonzero length, got {} and {}",
            n,
            noise2.values.len()
        )));
    }
    let kernel = QuantileKernel::new(d);
    let vy = w.chaining_eval(y);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (&u1, &u2) in noise.values.iter().zip(&noise2.values) {
        let v1 = w.chaining_eval(kernel.sample(u1));
        let v2 = w.chaining_eval(kernel.sample(u2));
        let term = (v1 - vy).abs() - 0.5 * (v1 - v2).abs();
        sum += term;
        sum_sq += term * term;
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean).max(0.0);
    let std_error = if n > 1 {
        (var / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(ScoreValue {
        value: mean,
        estimator_n: n,
        seed: noise.seed,
        std_error,
    })
}

/// Estimator value plus its pathwise gradient with respect to the flat
/// distribution parameters, holding the noise fixed. Gradient terms are
/// accumulated into `grad` scaled by `coef`.
pub(crate) fn wcrps_with_grad(
    d: &ForecastDistribution,
    y: f64,
    w: &WeightFunction,
    noise: &NoiseBlock,
    noise2: &NoiseBlock,
    coef: f64,
    grad: &mut [f64],
) -> f64 {
    let n = noise.values.len();
    debug_assert_eq!(noise2.values.len(), n);
    let kernel = QuantileKernel::new(d);
    let vy = w.chaining_eval(y);
    let inv_n = coef / n as f64;
    let mut sum = 0.0;
    for (&u1, &u2) in noise.values.iter().zip(&noise2.values) {
        let x1 = kernel.sample(u1);
        let x2 = kernel.sample(u2);
        let v1 = w.chaining_eval(x1);
        let v2 = w.chaining_eval(x2);
        sum += (v1 - vy).abs() - 0.5 * (v1 - v2).abs();
        // Subgradient 0 exactly at kinks.
        let s1 = sgn(v1 - vy);
        let s2 = sgn(v1 - v2);
        let c1 = (s1 - 0.5 * s2) * w.weight_eval(x1) * inv_n;
        let c2 = 0.5 * s2 * w.weight_eval(x2) * inv_n;
        if c1 != 0.0 {
            kernel.sample_with_grad(u1, c1, grad);
        }
        if c2 != 0.0 {
            kernel.sample_with_grad(u2, c2, grad);
        }
    }
    sum / n as f64
}

#[inline]
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Squared error of an exceedance probability against the binary outcome.
pub fn brier_score(prob_exceed: f64, occurred: bool) -> f64 {
    debug_assert!((0.0..=1.0).contains(&prob_exceed));
    let o = if occurred { 1.0 } else { 0.0 };
    (prob_exceed - o) * (prob_exceed - o)
}

/// `1 - bs_model / bs_ref`; positive means the model beats the reference.
pub fn brier_skill_score(bs_model: f64, bs_ref: f64) -> Result<f64> {
    if bs_ref == 0.0 {
        return Err(Error::UndefinedSkill);
    }
    Ok(1.0 - bs_model / bs_ref)
}
