//! Parametric predictive distributions for nonnegative wind speed.
//!
//! Four base families are supported: a normal truncated at zero, a
//! log-normal, a generalized extreme value distribution, and two-component
//! mixtures of these. An equal-weight ensemble variant backs bagged models.
//! All sampling is by inverse-cdf reparametrization, so a sample is a
//! smooth function of the distribution parameters for fixed base noise.

use crate::error::{Error, Result};
use crate::math::{std_normal_cdf, std_normal_pdf, std_normal_quantile};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Numerical floor for scale parameters after a model forward pass.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Shape values this close to zero use the Gumbel limit of the GEV.
pub const GEV_GUMBEL_EPS: f64 = 1e-6;

const BISECT_TOL: f64 = 1e-12;

/// A parametric predictive law, evaluated pointwise and sampled via its
/// quantile function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ForecastDistribution {
    /// Normal distribution truncated to `[0, inf)`. `loc` and `scale` are
    /// the parameters of the untruncated normal.
    TruncNormal { loc: f64, scale: f64 },
    /// `loc` and `scale` are the mean and standard deviation of the
    /// underlying normal.
    LogNormal { loc: f64, scale: f64 },
    /// Generalized extreme value; `shape` is free and the support may
    /// include negative values.
    Gev { loc: f64, scale: f64, shape: f64 },
    /// Two-component mixture: `weight F1 + (1 - weight) F2`.
    Mixture {
        weight: f64,
        components: Box<[ForecastDistribution; 2]>,
    },
    /// Equal-weight average of member cdfs (bagged models).
    Ensemble { components: Vec<ForecastDistribution> },
}

/// A block of base-distribution draws for reparametrized sampling.
/// Values are uniform on the open unit interval.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlock {
    pub values: Vec<f64>,
    pub seed: u64,
}

impl NoiseBlock {
    /// Deterministically generates `n` strictly-open-interval uniforms.
    pub fn generate(seed: u64, n: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let values = (0..n)
            .map(|_| {
                // Nudge away from the endpoints so quantile evaluations stay finite.
                let u: f64 = rng.gen();
                u.clamp(1e-12, 1.0 - 1e-12)
            })
            .collect();
        NoiseBlock { values, seed }
    }
}

/// Mixes independent seed components into one stream seed (splitmix64).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        state ^= p.wrapping_add(0x9e37_79b9_7f4a_7c15);
        state = splitmix64(state);
    }
    state
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ForecastDistribution {
    pub fn trunc_normal(loc: f64, scale: f64) -> Self {
        ForecastDistribution::TruncNormal { loc, scale }
    }

    pub fn log_normal(loc: f64, scale: f64) -> Self {
        ForecastDistribution::LogNormal { loc, scale }
    }

    pub fn gev(loc: f64, scale: f64, shape: f64) -> Self {
        ForecastDistribution::Gev { loc, scale, shape }
    }

    pub fn mixture(weight: f64, first: ForecastDistribution, second: ForecastDistribution) -> Self {
        ForecastDistribution::Mixture {
            weight,
            components: Box::new([first, second]),
        }
    }

    pub fn ensemble(components: Vec<ForecastDistribution>) -> Self {
        ForecastDistribution::Ensemble { components }
    }

    /// Checks the type invariants at every depth.
    pub fn validate(&self) -> Result<()> {
        match self {
            ForecastDistribution::TruncNormal { loc, scale }
            | ForecastDistribution::LogNormal { loc, scale } => {
                if !loc.is_finite() || !scale.is_finite() || *scale <= 0.0 {
                    return Err(Error::Validation(format!(
                        "invalid loc/scale: ({loc}, {scale})"
                    )));
                }
            }
            ForecastDistribution::Gev { loc, scale, shape } => {
                if !loc.is_finite() || !scale.is_finite() || !shape.is_finite() || *scale <= 0.0 {
                    return Err(Error::Validation(format!(
                        "invalid GEV parameters: ({loc}, {scale}, {shape})"
                    )));
                }
            }
            ForecastDistribution::Mixture { weight, components } => {
                if !(0.0..=1.0).contains(weight) {
                    return Err(Error::Validation(format!(
                        "mixture weight {weight} outside [0, 1]"
                    )));
                }
                components[0].validate()?;
                components[1].validate()?;
            }
            ForecastDistribution::Ensemble { components } => {
                if components.is_empty() {
                    return Err(Error::Validation("empty ensemble".into()));
                }
                for c in components {
                    c.validate()?;
                }
            }
        }
        Ok(())
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("cdf argument {x} is not finite")));
        }
        Ok(self.cdf_raw(x))
    }

    /// Probability density function.
    pub fn pdf(&self, x: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("pdf argument {x} is not finite")));
        }
        Ok(self.pdf_raw(x))
    }

    /// Quantile function for `p` in the open unit interval. Mixture and
    /// ensemble quantiles are solved by bisection.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile level {p} outside (0, 1)")));
        }
        Ok(self.quantile_raw(p))
    }

    /// One sample per noise value, via the quantile function. Identical
    /// noise and parameters give bit-identical output.
    pub fn sample_reparam(&self, noise: &NoiseBlock) -> Vec<f64> {
        noise.values.iter().map(|&u| self.quantile_raw(u)).collect()
    }

    pub(crate) fn cdf_raw(&self, x: f64) -> f64 {
        match self {
            ForecastDistribution::TruncNormal { loc, scale } => {
                if x < 0.0 {
                    return 0.0;
                }
                // Survival form: the truncation mass 1 - Phi(-loc/scale)
                // keeps full relative precision through erfc even when it
                // is far below the ulp of 1.
                let zs = crate::math::std_normal_sf(-loc / scale);
                if zs <= 0.0 {
                    // All mass sits at the truncation point.
                    return 1.0;
                }
                (1.0 - crate::math::std_normal_sf((x - loc) / scale) / zs).clamp(0.0, 1.0)
            }
            ForecastDistribution::LogNormal { loc, scale } => {
                if x <= 0.0 {
                    return 0.0;
                }
                std_normal_cdf((x.ln() - loc) / scale)
            }
            ForecastDistribution::Gev { loc, scale, shape } => {
                let z = (x - loc) / scale;
                let t = if shape.abs() < GEV_GUMBEL_EPS {
                    (-z).exp()
                } else {
                    let s = 1.0 + shape * z;
                    if s <= 0.0 {
                        // Below the lower endpoint (shape > 0) or above the
                        // upper endpoint (shape < 0).
                        return if *shape > 0.0 { 0.0 } else { 1.0 };
                    }
                    s.powf(-1.0 / shape)
                };
                (-t).exp()
            }
            ForecastDistribution::Mixture { weight, components } => {
                weight * components[0].cdf_raw(x) + (1.0 - weight) * components[1].cdf_raw(x)
            }
            ForecastDistribution::Ensemble { components } => {
                let sum: f64 = components.iter().map(|c| c.cdf_raw(x)).sum();
                sum / components.len() as f64
            }
        }
    }

    pub(crate) fn pdf_raw(&self, x: f64) -> f64 {
        match self {
            ForecastDistribution::TruncNormal { loc, scale } => {
                if x < 0.0 {
                    return 0.0;
                }
                let zs = crate::math::std_normal_sf(-loc / scale);
                if zs <= 0.0 {
                    return 0.0;
                }
                std_normal_pdf((x - loc) / scale) / (scale * zs)
            }
            ForecastDistribution::LogNormal { loc, scale } => {
                if x <= 0.0 {
                    return 0.0;
                }
                std_normal_pdf((x.ln() - loc) / scale) / (x * scale)
            }
            ForecastDistribution::Gev { loc, scale, shape } => {
                let z = (x - loc) / scale;
                if shape.abs() < GEV_GUMBEL_EPS {
                    let t = (-z).exp();
                    t * (-t).exp() / scale
                } else {
                    let s = 1.0 + shape * z;
                    if s <= 0.0 {
                        return 0.0;
                    }
                    let t = s.powf(-1.0 / shape);
                    t.powf(shape + 1.0) * (-t).exp() / scale
                }
            }
            ForecastDistribution::Mixture { weight, components } => {
                weight * components[0].pdf_raw(x) + (1.0 - weight) * components[1].pdf_raw(x)
            }
            ForecastDistribution::Ensemble { components } => {
                let sum: f64 = components.iter().map(|c| c.pdf_raw(x)).sum();
                sum / components.len() as f64
            }
        }
    }

    pub(crate) fn quantile_raw(&self, p: f64) -> f64 {
        match self {
            ForecastDistribution::TruncNormal { loc, scale } => {
                // Invert in whichever tail keeps precision: the survival
                // probability (1-p) * zs stays meaningful even when the
                // truncation mass zs is far below the ulp of 1.
                let zs = crate::math::std_normal_sf(-loc / scale);
                if zs <= 0.0 {
                    return 0.0;
                }
                let s = ((1.0 - p) * zs).max(1e-300);
                let g = if s <= 0.5 {
                    -std_normal_quantile(s)
                } else {
                    std_normal_quantile((1.0 - zs) + p * zs)
                };
                (loc + scale * g).max(0.0)
            }
            ForecastDistribution::LogNormal { loc, scale } => {
                (loc + scale * std_normal_quantile(p)).exp()
            }
            ForecastDistribution::Gev { loc, scale, shape } => {
                let lnw = (-p.ln()).ln();
                if shape.abs() < GEV_GUMBEL_EPS {
                    loc - scale * lnw
                } else {
                    // expm1 avoids cancellation in (w^-shape - 1) for
                    // shape near the Gumbel switch.
                    loc + scale * (-shape * lnw).exp_m1() / shape
                }
            }
            ForecastDistribution::Mixture { .. } | ForecastDistribution::Ensemble { .. } => {
                self.composite_quantile(p)
            }
        }
    }

    /// Bisection on the composite cdf, bracketed by the extreme component
    /// quantiles.
    fn composite_quantile(&self, p: f64) -> f64 {
        let comps: &[ForecastDistribution] = match self {
            ForecastDistribution::Mixture { components, .. } => &components[..],
            ForecastDistribution::Ensemble { components } => components,
            _ => unreachable!(),
        };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in comps {
            let q = c.quantile_raw(p);
            lo = lo.min(q);
            hi = hi.max(q);
        }
        if hi - lo <= BISECT_TOL {
            return 0.5 * (lo + hi);
        }
        // The composite cdf lies between the component cdfs, so the root
        // is inside [lo, hi]; widen slightly against round-off.
        let pad = 1e-9 * (1.0 + hi.abs() + lo.abs());
        let mut lo = lo - pad;
        let mut hi = hi + pad;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf_raw(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= BISECT_TOL {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    /// Number of free parameters in the flat layout used for gradients:
    /// `[loc, scale]`, `[loc, scale, shape]`, or
    /// `[comp1 .., comp2 .., weight]` for mixtures.
    pub fn n_dist_params(&self) -> usize {
        match self {
            ForecastDistribution::TruncNormal { .. } | ForecastDistribution::LogNormal { .. } => 2,
            ForecastDistribution::Gev { .. } => 3,
            ForecastDistribution::Mixture { components, .. } => {
                components[0].n_dist_params() + components[1].n_dist_params() + 1
            }
            ForecastDistribution::Ensemble { .. } => 0,
        }
    }

    /// Flat parameter vector in the gradient layout.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_dist_params());
        self.push_flat(&mut out);
        out
    }

    fn push_flat(&self, out: &mut Vec<f64>) {
        match self {
            ForecastDistribution::TruncNormal { loc, scale }
            | ForecastDistribution::LogNormal { loc, scale } => {
                out.push(*loc);
                out.push(*scale);
            }
            ForecastDistribution::Gev { loc, scale, shape } => {
                out.push(*loc);
                out.push(*scale);
                out.push(*shape);
            }
            ForecastDistribution::Mixture { weight, components } => {
                components[0].push_flat(out);
                components[1].push_flat(out);
                out.push(*weight);
            }
            ForecastDistribution::Ensemble { .. } => {}
        }
    }

    /// Same shape as `self` with parameters replaced from a flat vector.
    pub fn with_flat_params(&self, flat: &[f64]) -> Result<Self> {
        let mut idx = 0;
        let out = self.build_from_flat(flat, &mut idx)?;
        if idx != flat.len() {
            return Err(Error::Argument(format!(
                "flat parameter vector has {} entries, expected {idx}",
                flat.len()
            )));
        }
        Ok(out)
    }

    fn build_from_flat(&self, flat: &[f64], idx: &mut usize) -> Result<Self> {
        fn take<'a>(flat: &'a [f64], idx: &mut usize, n: usize) -> Result<&'a [f64]> {
            if *idx + n > flat.len() {
                return Err(Error::Argument("flat parameter vector too short".into()));
            }
            let s = &flat[*idx..*idx + n];
            *idx += n;
            Ok(s)
        }
        Ok(match self {
            ForecastDistribution::TruncNormal { .. } => {
                let s = take(flat, idx, 2)?;
                ForecastDistribution::TruncNormal {
                    loc: s[0],
                    scale: s[1],
                }
            }
            ForecastDistribution::LogNormal { .. } => {
                let s = take(flat, idx, 2)?;
                ForecastDistribution::LogNormal {
                    loc: s[0],
                    scale: s[1],
                }
            }
            ForecastDistribution::Gev { .. } => {
                let s = take(flat, idx, 3)?;
                ForecastDistribution::Gev {
                    loc: s[0],
                    scale: s[1],
                    shape: s[2],
                }
            }
            ForecastDistribution::Mixture { components, .. } => {
                let c0 = components[0].build_from_flat(flat, idx)?;
                let c1 = components[1].build_from_flat(flat, idx)?;
                let w = take(flat, idx, 1)?[0];
                ForecastDistribution::Mixture {
                    weight: w,
                    components: Box::new([c0, c1]),
                }
            }
            ForecastDistribution::Ensemble { components } => ForecastDistribution::Ensemble {
                components: components.clone(),
            },
        })
    }

    /// Gradient of `cdf(x)` with respect to the flat parameters,
    /// accumulated into `out` with multiplier `coef`.
    pub(crate) fn cdf_param_grad(&self, x: f64, coef: f64, out: &mut [f64]) {
        let mut idx = 0;
        self.cdf_param_grad_inner(x, coef, out, &mut idx);
    }

    fn cdf_param_grad_inner(&self, x: f64, coef: f64, out: &mut [f64], idx: &mut usize) {
        match self {
            ForecastDistribution::TruncNormal { loc, scale } => {
                let (dmu, dsigma) = tn_cdf_grad(*loc, *scale, x);
                out[*idx] += coef * dmu;
                out[*idx + 1] += coef * dsigma;
                *idx += 2;
            }
            ForecastDistribution::LogNormal { loc, scale } => {
                if x > 0.0 {
                    let z = (x.ln() - loc) / scale;
                    let phi = std_normal_pdf(z);
                    out[*idx] += coef * (-phi / scale);
                    out[*idx + 1] += coef * (-phi * z / scale);
                }
                *idx += 2;
            }
            ForecastDistribution::Gev { loc, scale, shape } => {
                let (dmu, dsigma, dxi) = gev_cdf_grad(*loc, *scale, *shape, x);
                out[*idx] += coef * dmu;
                out[*idx + 1] += coef * dsigma;
                out[*idx + 2] += coef * dxi;
                *idx += 3;
            }
            ForecastDistribution::Mixture { weight, components } => {
                components[0].cdf_param_grad_inner(x, coef * weight, out, idx);
                components[1].cdf_param_grad_inner(x, coef * (1.0 - weight), out, idx);
                out[*idx] += coef * (components[0].cdf_raw(x) - components[1].cdf_raw(x));
                *idx += 1;
            }
            ForecastDistribution::Ensemble { .. } => {}
        }
    }

    /// Pathwise derivative of the quantile at level `u` with respect to the
    /// flat parameters, by implicit differentiation of `cdf(q) = u`.
    /// Accumulates `coef * dq/dtheta` into `out` and returns the sample.
    pub(crate) fn quantile_with_param_grad(&self, u: f64, coef: f64, out: &mut [f64]) -> f64 {
        let q = self.quantile_raw(u);
        let dens = self.pdf_raw(q);
        // A vanishing density means the draw sits on an atom (for example
        // the truncation point mass of a degenerate component): the
        // quantile is locally constant there, so the implicit-function
        // gradient is zero rather than 1/density.
        if dens <= 1e-100 {
            return q;
        }
        self.cdf_param_grad(q, -coef / dens, out);
        q
    }
}

/// Per-distribution sampling kernel with hoisted per-record constants.
///
/// `sample_with_grad` returns the quantile at `u` and accumulates
/// `coef * dq/dtheta` (flat layout) into `out`. Base families use direct
/// quantile derivatives; mixtures fall back to implicit differentiation
/// through the bisection solve.
pub(crate) enum QuantileKernel<'a> {
    Tn {
        loc: f64,
        scale: f64,
        /// Truncation mass 1 - Phi(-loc/scale), carried in survival
        /// form for precision in the near-degenerate regime.
        zs: f64,
        phi_alpha: f64,
        alpha: f64,
    },
    Ln {
        loc: f64,
        scale: f64,
    },
    Gev {
        loc: f64,
        scale: f64,
        shape: f64,
    },
    Composite(&'a ForecastDistribution),
}

impl<'a> QuantileKernel<'a> {
    pub fn new(d: &'a ForecastDistribution) -> Self {
        match d {
            ForecastDistribution::TruncNormal { loc, scale } => {
                let alpha = -loc / scale;
                QuantileKernel::Tn {
                    loc: *loc,
                    scale: *scale,
                    zs: crate::math::std_normal_sf(alpha),
                    phi_alpha: std_normal_pdf(alpha),
                    alpha,
                }
            }
            ForecastDistribution::LogNormal { loc, scale } => QuantileKernel::Ln {
                loc: *loc,
                scale: *scale,
            },
            ForecastDistribution::Gev { loc, scale, shape } => QuantileKernel::Gev {
                loc: *loc,
                scale: *scale,
                shape: *shape,
            },
            other => QuantileKernel::Composite(other),
        }
    }

    #[inline]
    pub fn sample(&self, u: f64) -> f64 {
        match self {
            QuantileKernel::Tn {
                loc, scale, zs, ..
            } => {
                let s = ((1.0 - u) * zs).max(1e-300);
                let g = if s <= 0.5 {
                    -crate::math::std_normal_quantile_fast(s)
                } else {
                    crate::math::std_normal_quantile_fast((1.0 - zs) + u * zs)
                };
                (loc + scale * g).max(0.0)
            }
            QuantileKernel::Ln { loc, scale } => {
                (loc + scale * crate::math::std_normal_quantile_fast(u)).exp()
            }
            QuantileKernel::Gev { loc, scale, shape } => {
                let lnw = (-u.ln()).ln();
                if shape.abs() < GEV_GUMBEL_EPS {
                    loc - scale * lnw
                } else {
                    loc + scale * (-shape * lnw).exp_m1() / shape
                }
            }
            QuantileKernel::Composite(d) => {
                // A mixture whose weight sits on the clamp boundary is one
                // component exactly; sampling through that component's own
                // kernel skips the bisection and matches the standalone
                // family bit for bit.
                if let ForecastDistribution::Mixture { weight, components } = d {
                    if *weight >= 1.0 {
                        return QuantileKernel::new(&components[0]).sample(u);
                    }
                    if *weight <= 0.0 {
                        return QuantileKernel::new(&components[1]).sample(u);
                    }
                }
                d.quantile_raw(u)
            }
        }
    }

    pub fn sample_with_grad(&self, u: f64, coef: f64, out: &mut [f64]) -> f64 {
        match self {
            QuantileKernel::Tn {
                loc,
                scale,
                zs,
                phi_alpha,
                alpha,
            } => {
                let s = ((1.0 - u) * zs).max(1e-300);
                let g = if s <= 0.5 {
                    -crate::math::std_normal_quantile_fast(s)
                } else {
                    crate::math::std_normal_quantile_fast((1.0 - zs) + u * zs)
                };
                let q = loc + scale * g;
                if q <= 0.0 {
                    // Draw clamped to the truncation point: the pathwise
                    // derivative of the clamp is zero.
                    return 0.0;
                }
                let phi_g = std_normal_pdf(g).max(1e-300);
                let r = (1.0 - u) * phi_alpha / phi_g;
                out[0] += coef * (1.0 - r);
                out[1] += coef * (g - alpha * r);
                q
            }
            QuantileKernel::Ln { loc, scale } => {
                let g = crate::math::std_normal_quantile_fast(u);
                let q = (loc + scale * g).exp();
                out[0] += coef * q;
                out[1] += coef * q * g;
                q
            }
            QuantileKernel::Gev { loc, scale, shape } => {
                let w = -u.ln();
                let lnw = w.ln();
                if shape.abs() < GEV_GUMBEL_EPS {
                    out[0] += coef;
                    out[1] += coef * (-lnw);
                    out[2] += coef * scale * lnw * lnw / 2.0;
                    loc - scale * lnw
                } else {
                    let h = (-shape * lnw).exp_m1() / shape;
                    let wp = 1.0 + shape * h;
                    out[0] += coef;
                    out[1] += coef * h;
                    out[2] += coef * scale * (-(wp * lnw) / shape - h / shape);
                    loc + scale * h
                }
            }
            QuantileKernel::Composite(d) => d.quantile_with_param_grad(u, coef, out),
        }
    }
}

fn tn_cdf_grad(loc: f64, scale: f64, x: f64) -> (f64, f64) {
    if x < 0.0 {
        return (0.0, 0.0);
    }
    let alpha = -loc / scale;
    let zx = (x - loc) / scale;
    let zs = crate::math::std_normal_sf(alpha);
    if zs <= 0.0 {
        // Degenerate point mass at the truncation point.
        return (0.0, 0.0);
    }
    let phi_a = std_normal_pdf(alpha);
    let phi_x = std_normal_pdf(zx);
    // With F = 1 - sf(zx)/zs the quotient-rule terms collapse to survival
    // quantities, avoiding the 1 - Phi cancellation of the direct form.
    let one_minus_f = (crate::math::std_normal_sf(zx) / zs).clamp(0.0, 1.0);
    (
        (-phi_x + phi_a * one_minus_f) / (scale * zs),
        (-phi_x * zx + phi_a * alpha * one_minus_f) / (scale * zs),
    )
}

fn gev_cdf_grad(loc: f64, scale: f64, shape: f64, x: f64) -> (f64, f64, f64) {
    let z = (x - loc) / scale;
    let dz_dmu = -1.0 / scale;
    let dz_dsigma = -z / scale;
    if shape.abs() < GEV_GUMBEL_EPS {
        // Gumbel limit: t = exp(-z), dF/dtheta = exp(-t) * t * dz/dtheta;
        // dt/dxi -> -t z^2 / 2 as xi -> 0.
        let t = (-z).exp();
        let f = (-t).exp();
        let dmu = f * t * dz_dmu;
        let dsigma = f * t * dz_dsigma;
        let dt_dxi = t * z * z / 2.0;
        (dmu, dsigma, -f * dt_dxi)
    } else {
        let s = 1.0 + shape * z;
        if s <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let t = s.powf(-1.0 / shape);
        let f = (-t).exp();
        // dt/dz = -s^{-1/xi - 1}
        let dt_dz = -s.powf(-1.0 / shape - 1.0);
        let dt_dxi = t * (s.ln() / (shape * shape) - z / (shape * s));
        (
            -f * dt_dz * dz_dmu,
            -f * dt_dz * dz_dsigma,
            -f * dt_dxi,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_param_grad(d: &ForecastDistribution, x: f64) -> Vec<f64> {
        let flat = d.flat_params();
        let mut grad = vec![0.0; flat.len()];
        let h = 1e-6;
        for i in 0..flat.len() {
            let mut up = flat.clone();
            up[i] += h;
            let mut dn = flat.clone();
            dn[i] -= h;
            let fu = d.with_flat_params(&up).unwrap().cdf_raw(x);
            let fd_ = d.with_flat_params(&dn).unwrap().cdf_raw(x);
            grad[i] = (fu - fd_) / (2.0 * h);
        }
        grad
    }

    #[test]
    fn tn_cdf_at_truncation_point() {
        let d = ForecastDistribution::trunc_normal(0.0, 1.0);
        assert_eq!(d.cdf(0.0).unwrap(), 0.0);
        assert!(d.cdf(-1.0).unwrap() == 0.0);
        assert!((d.cdf(1e6).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_mixture_matches_component() {
        let tn = ForecastDistribution::trunc_normal(5.0, 2.0);
        let ln = ForecastDistribution::log_normal(1.0, 0.5);
        let m = ForecastDistribution::mixture(1.0, tn.clone(), ln);
        assert!((m.cdf(5.0).unwrap() - tn.cdf(5.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn gev_cdf_at_location() {
        // exp(-(1 + xi z)^(-1/xi)) at z = 0 is exp(-1) for any shape.
        let d = ForecastDistribution::gev(0.0, 1.0, 0.3);
        let expect = (-1.0_f64).exp();
        assert!((d.cdf(0.0).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn ln_median() {
        let d = ForecastDistribution::log_normal(0.0, 1.0);
        assert!((d.quantile(0.5).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tn_median_standard() {
        // cdf(x) = (Phi(x) - Phi(0)) / (1 - Phi(0)); median inverts Phi at 0.75.
        let d = ForecastDistribution::trunc_normal(0.0, 1.0);
        let q = d.quantile(0.5).unwrap();
        assert!((q - 0.6744897501960817).abs() < 1e-9);
    }

    #[test]
    fn mixture_of_identical_components() {
        let tn = ForecastDistribution::trunc_normal(5.0, 2.0);
        let m = ForecastDistribution::mixture(0.5, tn.clone(), tn.clone());
        for &p in &[0.05, 0.3, 0.5, 0.9, 0.99] {
            assert!((m.quantile(p).unwrap() - tn.quantile(p).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn gev_quantile_closed_form() {
        let d = ForecastDistribution::gev(2.0, 1.0, 0.3);
        let u: f64 = 0.73;
        let expect = 2.0 + ((-u.ln()).powf(-0.3) - 1.0) / 0.3;
        let q = d.quantile(u).unwrap();
        assert!((q - expect).abs() < 1e-12);
        assert!((d.cdf(q).unwrap() - u).abs() < 1e-12);
    }

    #[test]
    fn sample_reparam_is_quantile_of_noise() {
        let d = ForecastDistribution::trunc_normal(0.0, 1.0);
        let noise = NoiseBlock {
            values: vec![0.5],
            seed: 0,
        };
        let s = d.sample_reparam(&noise);
        assert_eq!(s[0], d.quantile(0.5).unwrap());

        let ln = ForecastDistribution::log_normal(0.0, 1.0);
        let noise = NoiseBlock {
            values: vec![0.5, 0.5],
            seed: 0,
        };
        let s = ln.sample_reparam(&noise);
        assert!((s[0] - 1.0).abs() < 1e-12);
        assert_eq!(s[0], s[1]);
    }

    #[test]
    fn tn_pdf_values() {
        let d = ForecastDistribution::trunc_normal(0.0, 1.0);
        assert_eq!(d.pdf(-1.0).unwrap(), 0.0);
        // Truncation at zero doubles the standard normal density.
        let expect = 2.0 * std_normal_pdf(0.5);
        assert!((d.pdf(0.5).unwrap() - expect).abs() < 1e-12);
        assert!((expect - 0.704130).abs() < 1e-6);
    }

    #[test]
    fn mixture_pdf_linearity() {
        let a = ForecastDistribution::trunc_normal(4.0, 1.5);
        let b = ForecastDistribution::log_normal(1.4, 0.4);
        let m = ForecastDistribution::mixture(0.3, a.clone(), b.clone());
        for &x in &[0.5, 3.0, 8.0, 15.0] {
            let expect = 0.3 * a.pdf(x).unwrap() + 0.7 * b.pdf(x).unwrap();
            assert_eq!(m.pdf(x).unwrap(), expect);
            let ce = 0.3 * a.cdf(x).unwrap() + 0.7 * b.cdf(x).unwrap();
            assert_eq!(m.cdf(x).unwrap(), ce);
        }
    }

    #[test]
    fn pdf_integrates_to_one() {
        // Simpson quadrature over the effective support.
        let dists = vec![
            ForecastDistribution::trunc_normal(3.0, 2.0),
            ForecastDistribution::log_normal(1.2, 0.6),
            ForecastDistribution::gev(5.0, 2.0, 0.2),
            ForecastDistribution::mixture(
                0.4,
                ForecastDistribution::trunc_normal(4.0, 1.0),
                ForecastDistribution::log_normal(1.8, 0.5),
            ),
        ];
        for d in dists {
            let lo = d.quantile(1e-10).unwrap().min(0.0) - 1.0;
            let hi = d.quantile(1.0 - 1e-10).unwrap() + 1.0;
            let n = 20_000;
            let h = (hi - lo) / n as f64;
            let mut sum = d.pdf(lo).unwrap() + d.pdf(hi).unwrap();
            for i in 1..n {
                let x = lo + i as f64 * h;
                let w = if i % 2 == 1 { 4.0 } else { 2.0 };
                sum += w * d.pdf(x).unwrap();
            }
            let integral = sum * h / 3.0;
            assert!((integral - 1.0).abs() < 1e-4, "{d:?}: {integral}");
        }
    }

    #[test]
    fn cdf_quantile_roundtrip_all_families() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let loc: f64 = rng.gen::<f64>() * 10.0 - 1.0;
            let scale: f64 = rng.gen::<f64>() * 3.0 + 0.05;
            let shape: f64 = rng.gen::<f64>() * 0.8 - 0.4;
            let fam = rng.gen_range(0..4);
            let d = match fam {
                0 => ForecastDistribution::trunc_normal(loc, scale),
                1 => ForecastDistribution::log_normal(loc * 0.3, scale * 0.3),
                2 => ForecastDistribution::gev(loc, scale, shape),
                _ => ForecastDistribution::mixture(
                    rng.gen(),
                    ForecastDistribution::trunc_normal(loc, scale),
                    ForecastDistribution::log_normal(loc.abs().max(0.1).ln(), 0.3 + scale * 0.1),
                ),
            };
            for i in 1..100 {
                let p = i as f64 / 100.0;
                let q = d.quantile(p).unwrap();
                assert!(
                    (d.cdf(q).unwrap() - p).abs() < 1e-8,
                    "{d:?} p={p} q={q} cdf={}",
                    d.cdf(q).unwrap()
                );
            }
        }
    }

    #[test]
    fn empirical_cdf_close_to_cdf() {
        // Kolmogorov-Smirnov distance on one million inverse-cdf draws.
        let dists = vec![
            ForecastDistribution::trunc_normal(4.0, 2.0),
            ForecastDistribution::log_normal(1.4, 0.5),
            ForecastDistribution::gev(4.0, 1.5, 0.2),
            ForecastDistribution::mixture(
                0.6,
                ForecastDistribution::trunc_normal(4.0, 1.5),
                ForecastDistribution::log_normal(1.9, 0.4),
            ),
        ];
        for d in dists {
            let noise = NoiseBlock::generate(42, 1_000_000);
            let mut samples = d.sample_reparam(&noise);
            samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = samples.len() as f64;
            let mut ks: f64 = 0.0;
            for (i, &x) in samples.iter().enumerate() {
                let f = d.cdf(x).unwrap();
                ks = ks.max((f - i as f64 / n).abs());
                ks = ks.max(((i + 1) as f64 / n - f).abs());
            }
            assert!(ks < 0.002, "{d:?}: KS = {ks}");
        }
    }

    #[test]
    fn gev_gumbel_switch_is_continuous() {
        let probe = [0.5, 2.0, 5.0];
        for &x in &probe {
            let below = ForecastDistribution::gev(2.0, 1.0, 0.999e-6);
            let above = ForecastDistribution::gev(2.0, 1.0, 1.001e-6);
            let diff = (below.cdf(x).unwrap() - above.cdf(x).unwrap()).abs();
            assert!(diff < 1e-6, "x={x} diff={diff}");
        }
    }

    #[test]
    fn cdf_param_grads_match_finite_differences() {
        let dists = vec![
            ForecastDistribution::trunc_normal(3.0, 1.5),
            ForecastDistribution::log_normal(1.2, 0.4),
            ForecastDistribution::gev(4.0, 1.2, 0.25),
            ForecastDistribution::gev(4.0, 1.2, -0.2),
            ForecastDistribution::mixture(
                0.35,
                ForecastDistribution::trunc_normal(3.5, 1.2),
                ForecastDistribution::log_normal(1.6, 0.5),
            ),
        ];
        for d in dists {
            for &x in &[0.5, 2.0, 4.5, 9.0] {
                let mut grad = vec![0.0; d.n_dist_params()];
                d.cdf_param_grad(x, 1.0, &mut grad);
                let fd = fd_param_grad(&d, x);
                for (g, f) in grad.iter().zip(&fd) {
                    let err = (g - f).abs() / f.abs().max(1e-4);
                    assert!(err < 1e-5, "{d:?} x={x}: {grad:?} vs {fd:?}");
                }
            }
        }
    }

    #[test]
    fn quantile_grad_via_implicit_function() {
        let d = ForecastDistribution::mixture(
            0.5,
            ForecastDistribution::trunc_normal(4.0, 1.5),
            ForecastDistribution::log_normal(1.8, 0.4),
        );
        let flat = d.flat_params();
        let h = 1e-6;
        for &u in &[0.1, 0.5, 0.93] {
            let mut grad = vec![0.0; flat.len()];
            d.quantile_with_param_grad(u, 1.0, &mut grad);
            for i in 0..flat.len() {
                let mut up = flat.clone();
                up[i] += h;
                let mut dn = flat.clone();
                dn[i] -= h;
                let qu = d.with_flat_params(&up).unwrap().quantile_raw(u);
                let qd = d.with_flat_params(&dn).unwrap().quantile_raw(u);
                let fd = (qu - qd) / (2.0 * h);
                assert!(
                    (grad[i] - fd).abs() / fd.abs().max(1e-3) < 1e-4,
                    "u={u} i={i}: {} vs {fd}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn quantile_kernel_matches_generic_path() {
        let dists = vec![
            ForecastDistribution::trunc_normal(3.0, 1.5),
            ForecastDistribution::log_normal(1.2, 0.4),
            ForecastDistribution::gev(4.0, 1.2, 0.25),
            ForecastDistribution::gev(4.0, 1.2, 0.0),
            ForecastDistribution::mixture(
                0.35,
                ForecastDistribution::trunc_normal(3.5, 1.2),
                ForecastDistribution::log_normal(1.6, 0.5),
            ),
        ];
        let h = 1e-6;
        for d in &dists {
            let kernel = QuantileKernel::new(d);
            let flat = d.flat_params();
            for &u in &[0.02, 0.4, 0.77, 0.995] {
                let q = kernel.sample(u);
                assert!((q - d.quantile_raw(u)).abs() < 1e-7, "{d:?} u={u}");
                let mut grad = vec![0.0; flat.len()];
                let q2 = kernel.sample_with_grad(u, 1.0, &mut grad);
                assert!((q - q2).abs() < 1e-12);
                for i in 0..flat.len() {
                    let mut up = flat.clone();
                    up[i] += h;
                    let mut dn = flat.clone();
                    dn[i] -= h;
                    let fd = (d.with_flat_params(&up).unwrap().quantile_raw(u)
                        - d.with_flat_params(&dn).unwrap().quantile_raw(u))
                        / (2.0 * h);
                    assert!(
                        (grad[i] - fd).abs() / fd.abs().max(1e-3) < 1e-4,
                        "{d:?} u={u} i={i}: {} vs {fd}",
                        grad[i]
                    );
                }
            }
        }
    }

    #[test]
    fn serialization_roundtrip() {
        let d = ForecastDistribution::mixture(
            0.4,
            ForecastDistribution::trunc_normal(5.0, 2.0),
            ForecastDistribution::gev(6.0, 1.0, 0.3),
        );
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"family\":\"mixture\""));
        assert!(json.contains("\"family\":\"trunc_normal\""));
        let back: ForecastDistribution = serde_json::from_str(&json).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn domain_errors() {
        let d = ForecastDistribution::trunc_normal(0.0, 1.0);
        assert!(d.cdf(f64::NAN).is_err());
        assert!(d.pdf(f64::INFINITY).is_err());
        assert!(d.quantile(0.0).is_err());
        assert!(d.quantile(1.2).is_err());
        assert!(ForecastDistribution::trunc_normal(0.0, -1.0).validate().is_err());
        assert!(ForecastDistribution::mixture(
            1.4,
            d.clone(),
            d.clone()
        )
        .validate()
        .is_err());
    }

    #[test]
    fn noise_block_determinism_and_range() {
        let a = NoiseBlock::generate(9, 1000);
        let b = NoiseBlock::generate(9, 1000);
        assert_eq!(a, b);
        assert!(a.values.iter().all(|&u| u > 0.0 && u < 1.0));
        let c = NoiseBlock::generate(10, 1000);
        assert_ne!(a.values, c.values);
    }
}
