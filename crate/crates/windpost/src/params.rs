//! Parameter models: map a predictor vector to the parameters of a
//! forecast distribution.
//!
//! Two model kinds are provided. The linear model regresses location and
//! scale on the predictors with a softplus link for the variance. The
//! dense model is a small ReLU network on the normalized predictors with
//! the raw wind-speed forecast passed around the hidden stack and
//! concatenated before the output layer.

use crate::dists::{ForecastDistribution, SCALE_FLOOR};
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Bounds for the adaptive-mixture coefficients, enforced by projection
/// after every optimizer step.
pub const ALPHA_RANGE: (f64, f64) = (4.0, 12.0);
pub const BETA_RANGE: (f64, f64) = (-6.0, -0.6);

/// A single input to a parameter model. `values` are normalized
/// predictors in registry order; `raw_wind` is the unnormalized
/// wind-speed forecast used for the skip connection and the adaptive
/// mixture weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorVector {
    pub values: Vec<f64>,
    pub wind_index: usize,
    pub raw_wind: f64,
}

impl PredictorVector {
    pub fn new(values: Vec<f64>, wind_index: usize, raw_wind: f64) -> Self {
        PredictorVector {
            values,
            wind_index,
            raw_wind,
        }
    }
}

/// Scalar distribution families available as mixture components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarFamily {
    TruncNormal,
    LogNormal,
    Gev,
}

/// How a mixture weight is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureWeightKind {
    /// A single free parameter in `[0, 1]`.
    Static,
    /// `sigmoid(alpha + beta * raw_wind)`, decreasing in wind speed so the
    /// heavy-tailed component takes over at high winds.
    Adaptive,
}

/// The distribution family a model predicts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilySpec {
    TruncNormal,
    LogNormal,
    Gev,
    Mixture {
        first: ScalarFamily,
        second: ScalarFamily,
        weight: MixtureWeightKind,
    },
}

impl FamilySpec {
    /// Fixed component ordering: truncated normal first, a heavy-tailed
    /// family second.
    pub fn validate(&self) -> Result<()> {
        if let FamilySpec::Mixture { first, second, .. } = self {
            if *first != ScalarFamily::TruncNormal {
                return Err(Error::Config(
                    "mixture component 1 must be the truncated normal".into(),
                ));
            }
            if *second == ScalarFamily::TruncNormal {
                return Err(Error::Config(
                    "mixture component 2 must be a heavy-tailed family (log-normal or GEV)".into(),
                ));
            }
        }
        Ok(())
    }

    /// Parses CLI-style names: tn, ln, gev, tn-ln, tn-gev (optionally
    /// suffixed with `-static`).
    pub fn parse(name: &str) -> Result<Self> {
        let (base, weight) = match name.strip_suffix("-static") {
            Some(b) => (b, MixtureWeightKind::Static),
            None => (name, MixtureWeightKind::Adaptive),
        };
        Ok(match base {
            "tn" => FamilySpec::TruncNormal,
            "ln" => FamilySpec::LogNormal,
            "gev" => FamilySpec::Gev,
            "tn-ln" => FamilySpec::Mixture {
                first: ScalarFamily::TruncNormal,
                second: ScalarFamily::LogNormal,
                weight,
            },
            "tn-gev" => FamilySpec::Mixture {
                first: ScalarFamily::TruncNormal,
                second: ScalarFamily::Gev,
                weight,
            },
            other => {
                return Err(Error::Config(format!(
                    "unknown family '{other}' (expected tn, ln, gev, tn-ln, tn-gev, \
                     optionally with -static)"
                )))
            }
        })
    }

    fn uses_gev(&self) -> bool {
        matches!(self, FamilySpec::Gev)
            || matches!(
                self,
                FamilySpec::Mixture {
                    second: ScalarFamily::Gev,
                    ..
                }
            )
    }
}

/// `1 / (1 + exp(-(alpha + beta x_w)))`: the adaptive mixture weight as a
/// function of the raw wind-speed forecast.
pub fn adaptive_weight(alpha: f64, beta: f64, x_w: f64) -> f64 {
    sigmoid(alpha + beta * x_w)
}

/// Coefficients of the linear model. `a`/`b` drive location and scale of
/// the first (or only) component, `a2`/`b2` the second mixture component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearEmosParams {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b2: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_w: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
}

/// Linear EMOS model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub family: FamilySpec,
    pub n_predictors: usize,
    pub params: LinearEmosParams,
}

impl LinearModel {
    /// Fixed initialization: all coefficient entries 1, GEV shape 0.3,
    /// static weight 0.5, adaptive weight at (5, -1).
    pub fn new(family: FamilySpec, n_predictors: usize) -> Result<Self> {
        family.validate()?;
        let ones = vec![1.0; n_predictors + 1];
        let mut params = LinearEmosParams {
            a: ones.clone(),
            b: ones.clone(),
            a2: None,
            b2: None,
            alpha: None,
            beta: None,
            static_w: None,
            xi: None,
        };
        if family.uses_gev() {
            params.xi = Some(0.3);
        }
        if let FamilySpec::Mixture { weight, .. } = &family {
            params.a2 = Some(ones.clone());
            params.b2 = Some(ones);
            match weight {
                MixtureWeightKind::Static => params.static_w = Some(0.5),
                MixtureWeightKind::Adaptive => {
                    params.alpha = Some(5.0);
                    params.beta = Some(-1.0);
                }
            }
        }
        Ok(LinearModel {
            family,
            n_predictors,
            params,
        })
    }

    fn affine(coefs: &[f64], x: &PredictorVector) -> f64 {
        let mut acc = coefs[0];
        for (c, v) in coefs[1..].iter().zip(&x.values) {
            acc += c * v;
        }
        acc
    }

    fn component(
        family: ScalarFamily,
        a: &[f64],
        b: &[f64],
        xi: Option<f64>,
        x: &PredictorVector,
    ) -> ForecastDistribution {
        let loc = Self::affine(a, x);
        let scale = softplus(Self::affine(b, x)).sqrt().max(SCALE_FLOOR);
        match family {
            ScalarFamily::TruncNormal => ForecastDistribution::trunc_normal(loc, scale),
            ScalarFamily::LogNormal => ForecastDistribution::log_normal(loc, scale),
            ScalarFamily::Gev => ForecastDistribution::gev(loc, scale, xi.unwrap_or(0.3)),
        }
    }

    pub fn forward(&self, x: &PredictorVector) -> ForecastDistribution {
        let p = &self.params;
        match &self.family {
            FamilySpec::TruncNormal => {
                Self::component(ScalarFamily::TruncNormal, &p.a, &p.b, None, x)
            }
            FamilySpec::LogNormal => Self::component(ScalarFamily::LogNormal, &p.a, &p.b, None, x),
            FamilySpec::Gev => Self::component(ScalarFamily::Gev, &p.a, &p.b, p.xi, x),
            FamilySpec::Mixture { first, second, weight } => {
                let c1 = Self::component(*first, &p.a, &p.b, None, x);
                let c2 = Self::component(
                    *second,
                    p.a2.as_ref().expect("mixture coefficients"),
                    p.b2.as_ref().expect("mixture coefficients"),
                    p.xi,
                    x,
                );
                let w = match weight {
                    MixtureWeightKind::Static => p.static_w.expect("static weight"),
                    MixtureWeightKind::Adaptive => adaptive_weight(
                        p.alpha.expect("alpha"),
                        p.beta.expect("beta"),
                        x.raw_wind,
                    ),
                };
                ForecastDistribution::mixture(w, c1, c2)
            }
        }
    }

    /// Number of free parameters in the flat training layout:
    /// `[a, b, a2, b2, weight params, xi]`.
    pub fn n_params(&self) -> usize {
        let base = 2 * (self.n_predictors + 1);
        let mut n = base;
        if matches!(self.family, FamilySpec::Mixture { .. }) {
            n += base;
            n += match self.family {
                FamilySpec::Mixture {
                    weight: MixtureWeightKind::Static,
                    ..
                } => 1,
                _ => 2,
            };
        }
        if self.family.uses_gev() {
            n += 1;
        }
        n
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let p = &self.params;
        let mut out = Vec::with_capacity(self.n_params());
        out.extend_from_slice(&p.a);
        out.extend_from_slice(&p.b);
        if let Some(a2) = &p.a2 {
            out.extend_from_slice(a2);
            out.extend_from_slice(p.b2.as_ref().unwrap());
            match self.family {
                FamilySpec::Mixture {
                    weight: MixtureWeightKind::Static,
                    ..
                } => out.push(p.static_w.unwrap()),
                _ => {
                    out.push(p.alpha.unwrap());
                    out.push(p.beta.unwrap());
                }
            }
        }
        if let Some(xi) = p.xi {
            out.push(xi);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let m = self.n_predictors + 1;
        let p = &mut self.params;
        p.a.copy_from_slice(&flat[..m]);
        p.b.copy_from_slice(&flat[m..2 * m]);
        let mut idx = 2 * m;
        if p.a2.is_some() {
            p.a2.as_mut().unwrap().copy_from_slice(&flat[idx..idx + m]);
            p.b2
                .as_mut()
                .unwrap()
                .copy_from_slice(&flat[idx + m..idx + 2 * m]);
            idx += 2 * m;
            match self.family {
                FamilySpec::Mixture {
                    weight: MixtureWeightKind::Static,
                    ..
                } => {
                    p.static_w = Some(flat[idx]);
                    idx += 1;
                }
                _ => {
                    p.alpha = Some(flat[idx]);
                    p.beta = Some(flat[idx + 1]);
                    idx += 2;
                }
            }
        }
        if p.xi.is_some() {
            p.xi = Some(flat[idx]);
        }
    }

    /// Accumulates the vector-Jacobian product of the forward map: maps a
    /// gradient in distribution-parameter layout to the flat coefficient
    /// layout.
    pub fn backward(&self, x: &PredictorVector, d_dist: &[f64], grad: &mut [f64]) {
        let m = self.n_predictors + 1;
        let p = &self.params;
        let comp_back = |a: &[f64], b: &[f64], d_loc: f64, d_scale: f64, grad: &mut [f64], off: usize| {
            let _ = a;
            let s_pre = {
                let mut acc = b[0];
                for (c, v) in b[1..].iter().zip(&x.values) {
                    acc += c * v;
                }
                acc
            };
            let scale = softplus(s_pre).sqrt();
            let d_spre = if scale <= SCALE_FLOOR {
                0.0
            } else {
                d_scale * sigmoid(s_pre) / (2.0 * scale)
            };
            grad[off] += d_loc;
            grad[off + m] += d_spre;
            for (j, v) in x.values.iter().enumerate() {
                grad[off + 1 + j] += d_loc * v;
                grad[off + m + 1 + j] += d_spre * v;
            }
        };
        match &self.family {
            FamilySpec::TruncNormal | FamilySpec::LogNormal => {
                comp_back(&p.a, &p.b, d_dist[0], d_dist[1], grad, 0);
            }
            FamilySpec::Gev => {
                comp_back(&p.a, &p.b, d_dist[0], d_dist[1], grad, 0);
                grad[2 * m] += d_dist[2];
            }
            FamilySpec::Mixture { second, weight, .. } => {
                // Distribution layout: [loc1, scale1, loc2, scale2(, xi), w].
                comp_back(&p.a, &p.b, d_dist[0], d_dist[1], grad, 0);
                comp_back(
                    p.a2.as_ref().unwrap(),
                    p.b2.as_ref().unwrap(),
                    d_dist[2],
                    d_dist[3],
                    grad,
                    2 * m,
                );
                let (d_w, d_xi) = if *second == ScalarFamily::Gev {
                    (d_dist[5], Some(d_dist[4]))
                } else {
                    (d_dist[4], None)
                };
                let mut idx = 4 * m;
                match weight {
                    MixtureWeightKind::Static => {
                        grad[idx] += d_w;
                        idx += 1;
                    }
                    MixtureWeightKind::Adaptive => {
                        let w = adaptive_weight(p.alpha.unwrap(), p.beta.unwrap(), x.raw_wind);
                        let dsig = w * (1.0 - w);
                        grad[idx] += d_w * dsig;
                        grad[idx + 1] += d_w * dsig * x.raw_wind;
                        idx += 2;
                    }
                }
                if let Some(d_xi) = d_xi {
                    grad[idx] += d_xi;
                }
            }
        }
    }

    /// Clamps the adaptive-mixture coefficients and the static weight back
    /// into their feasible ranges.
    pub fn project_constraints(&mut self) {
        let p = &mut self.params;
        if let Some(alpha) = p.alpha.as_mut() {
            *alpha = alpha.clamp(ALPHA_RANGE.0, ALPHA_RANGE.1);
        }
        if let Some(beta) = p.beta.as_mut() {
            *beta = beta.clamp(BETA_RANGE.0, BETA_RANGE.1);
        }
        if let Some(w) = p.static_w.as_mut() {
            *w = w.clamp(0.0, 1.0);
        }
    }
}

/// Hidden-layer sizes and penalty of the dense model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseConfig {
    pub layers: usize,
    pub units: usize,
    pub l2: f64,
}

impl Default for DenseConfig {
    fn default() -> Self {
        // Tuned defaults for the dense stack.
        DenseConfig {
            layers: 2,
            units: 170,
            l2: 0.031658,
        }
    }
}

/// Dense nonlinear parameter model with a raw-wind skip connection.
///
/// Layout of `params`: for each hidden layer, a row-major weight matrix
/// then biases; the output layer sees the last hidden activation with the
/// raw wind speed appended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseModel {
    pub family: FamilySpec,
    pub n_predictors: usize,
    pub config: DenseConfig,
    pub params: Vec<f64>,
}

impl DenseModel {
    pub fn n_heads(family: &FamilySpec) -> Result<usize> {
        match family {
            FamilySpec::TruncNormal | FamilySpec::LogNormal => Ok(2),
            FamilySpec::Mixture {
                first: ScalarFamily::TruncNormal,
                second: ScalarFamily::LogNormal,
                ..
            } => Ok(5),
            other => Err(Error::Config(format!(
                "dense models support tn, ln, and the tn-ln mixture, got {other:?}"
            ))),
        }
    }

    /// Uniform fan-in initialization with a fixed seed.
    pub fn new(
        family: FamilySpec,
        n_predictors: usize,
        config: DenseConfig,
        seed: u64,
    ) -> Result<Self> {
        family.validate()?;
        let n_heads = Self::n_heads(&family)?;
        if config.layers == 0 || config.layers > 5 || !(1..=200).contains(&config.units) {
            return Err(Error::Config(format!(
                "dense layout out of range: {} layers, {} units",
                config.layers, config.units
            )));
        }
        if config.l2 < 0.0 {
            return Err(Error::Config("negative l2 penalty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let push_layer = |inp: usize, out: usize, rng: &mut ChaCha8Rng, params: &mut Vec<f64>| {
            let bound = (1.0 / inp as f64).sqrt();
            for _ in 0..inp * out {
                params.push(rng.gen_range(-bound..bound));
            }
            params.extend(std::iter::repeat(0.0).take(out));
        };
        let mut inp = n_predictors;
        for _ in 0..config.layers {
            push_layer(inp, config.units, &mut rng, &mut params);
            inp = config.units;
        }
        push_layer(inp + 1, n_heads, &mut rng, &mut params);
        Ok(DenseModel {
            family,
            n_predictors,
            config,
            params,
        })
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.config.layers + 1);
        let mut inp = self.n_predictors;
        for _ in 0..self.config.layers {
            dims.push((inp, self.config.units));
            inp = self.config.units;
        }
        dims.push((inp + 1, Self::n_heads(&self.family).expect("validated")));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    /// Raw network heads before the distribution-parameter link functions.
    fn heads(&self, x: &PredictorVector) -> Vec<f64> {
        let dims = self.layer_dims();
        let mut act = x.values.clone();
        let mut off = 0;
        for (l, &(inp, out)) in dims.iter().enumerate() {
            let last = l == dims.len() - 1;
            let mut input = act;
            if last {
                input.push(x.raw_wind);
            }
            debug_assert_eq!(input.len(), inp);
            let w = &self.params[off..off + inp * out];
            let b = &self.params[off + inp * out..off + inp * out + out];
            off += inp * out + out;
            let mut next = vec![0.0; out];
            for o in 0..out {
                let row = &w[o * inp..(o + 1) * inp];
                let mut acc = b[o];
                for (wi, vi) in row.iter().zip(&input) {
                    acc += wi * vi;
                }
                next[o] = if last { acc } else { acc.max(0.0) };
            }
            act = next;
        }
        act
    }

    fn dist_from_heads(&self, heads: &[f64], x: &PredictorVector) -> ForecastDistribution {
        let _ = x;
        let scale_of = |h: f64| softplus(h).sqrt().max(SCALE_FLOOR);
        match &self.family {
            FamilySpec::TruncNormal => {
                ForecastDistribution::trunc_normal(heads[0], scale_of(heads[1]))
            }
            FamilySpec::LogNormal => {
                ForecastDistribution::log_normal(heads[0], scale_of(heads[1]))
            }
            FamilySpec::Mixture { .. } => ForecastDistribution::mixture(
                sigmoid(heads[4]),
                ForecastDistribution::trunc_normal(heads[0], scale_of(heads[1])),
                ForecastDistribution::log_normal(heads[2], scale_of(heads[3])),
            ),
            FamilySpec::Gev => unreachable!("rejected at construction"),
        }
    }

    pub fn forward(&self, x: &PredictorVector) -> ForecastDistribution {
        self.dist_from_heads(&self.heads(x), x)
    }

    /// Backpropagation of a distribution-parameter gradient through the
    /// link functions and the ReLU stack.
    pub fn backward(&self, x: &PredictorVector, d_dist: &[f64], grad: &mut [f64]) {
        let dims = self.layer_dims();
        // Forward pass, caching inputs to every layer.
        let mut inputs: Vec<Vec<f64>> = Vec::with_capacity(dims.len());
        let mut act = x.values.clone();
        let mut off = 0;
        for (l, &(inp, out)) in dims.iter().enumerate() {
            let last = l == dims.len() - 1;
            let mut input = act;
            if last {
                input.push(x.raw_wind);
            }
            let w = &self.params[off..off + inp * out];
            let b = &self.params[off + inp * out..off + inp * out + out];
            off += inp * out + out;
            let mut next = vec![0.0; out];
            for o in 0..out {
                let row = &w[o * inp..(o + 1) * inp];
                let mut acc = b[o];
                for (wi, vi) in row.iter().zip(&input) {
                    acc += wi * vi;
                }
                next[o] = if last { acc } else { acc.max(0.0) };
            }
            inputs.push(input);
            act = next;
        }
        let heads = act;

        // Distribution-parameter gradient -> head gradient.
        let d_scale_head = |h: f64, d: f64| {
            let scale = softplus(h).sqrt();
            if scale <= SCALE_FLOOR {
                0.0
            } else {
                d * sigmoid(h) / (2.0 * scale)
            }
        };
        let mut d_heads = vec![0.0; heads.len()];
        match &self.family {
            FamilySpec::TruncNormal | FamilySpec::LogNormal => {
                d_heads[0] = d_dist[0];
                d_heads[1] = d_scale_head(heads[1], d_dist[1]);
            }
            FamilySpec::Mixture { .. } => {
                d_heads[0] = d_dist[0];
                d_heads[1] = d_scale_head(heads[1], d_dist[1]);
                d_heads[2] = d_dist[2];
                d_heads[3] = d_scale_head(heads[3], d_dist[3]);
                let w = sigmoid(heads[4]);
                d_heads[4] = d_dist[4] * w * (1.0 - w);
            }
            FamilySpec::Gev => unreachable!(),
        }

        // Backward through the affine/ReLU stack.
        let mut layer_offsets = Vec::with_capacity(dims.len());
        let mut o = 0;
        for &(inp, out) in &dims {
            layer_offsets.push(o);
            o += inp * out + out;
        }
        let mut delta = d_heads;
        for l in (0..dims.len()).rev() {
            let (inp, out) = dims[l];
            let off = layer_offsets[l];
            let input = &inputs[l];
            let w = &self.params[off..off + inp * out];
            let mut d_input = vec![0.0; inp];
            for oo in 0..out {
                let d = delta[oo];
                if d == 0.0 {
                    continue;
                }
                let row = &w[oo * inp..(oo + 1) * inp];
                for i in 0..inp {
                    grad[off + oo * inp + i] += d * input[i];
                    d_input[i] += d * row[i];
                }
                grad[off + inp * out + oo] += d;
            }
            if l == dims.len() - 1 {
                // Drop the skip coordinate; it is data, not activation.
                d_input.pop();
            }
            if l > 0 {
                // ReLU gate: the stored input of layer l is the activation
                // output of layer l-1.
                for (di, a) in d_input.iter_mut().zip(&inputs[l]) {
                    if *a <= 0.0 {
                        *di = 0.0;
                    }
                }
                delta = d_input;
            }
        }
    }

    /// `l2 * sum of squared dense weights`, biases excluded.
    pub fn l2_penalty(&self) -> f64 {
        if self.config.l2 == 0.0 {
            return 0.0;
        }
        self.config.l2 * self.sum_sq_weights()
    }

    fn sum_sq_weights(&self) -> f64 {
        let dims = self.layer_dims();
        let mut off = 0;
        let mut sum = 0.0;
        for &(inp, out) in &dims {
            for v in &self.params[off..off + inp * out] {
                sum += v * v;
            }
            off += inp * out + out;
        }
        sum
    }

    pub fn l2_grad(&self, grad: &mut [f64]) {
        if self.config.l2 == 0.0 {
            return;
        }
        let dims = self.layer_dims();
        let mut off = 0;
        for &(inp, out) in &dims {
            for i in 0..inp * out {
                grad[off + i] += 2.0 * self.config.l2 * self.params[off + i];
            }
            off += inp * out + out;
        }
    }
}

/// A parameter model of either kind, the unit trained by the optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model_kind", rename_all = "snake_case")]
pub enum Model {
    Linear(LinearModel),
    Dense(DenseModel),
}

impl Model {
    pub fn family(&self) -> &FamilySpec {
        match self {
            Model::Linear(m) => &m.family,
            Model::Dense(m) => &m.family,
        }
    }

    pub fn n_predictors(&self) -> usize {
        match self {
            Model::Linear(m) => m.n_predictors,
            Model::Dense(m) => m.n_predictors,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            Model::Linear(m) => m.n_params(),
            Model::Dense(m) => m.n_params(),
        }
    }

    pub fn flat_params(&self) -> Vec<f64> {
        match self {
            Model::Linear(m) => m.flat_params(),
            Model::Dense(m) => m.params.clone(),
        }
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        match self {
            Model::Linear(m) => m.set_flat_params(flat),
            Model::Dense(m) => {
                assert_eq!(flat.len(), m.params.len());
                m.params.copy_from_slice(flat);
            }
        }
    }

    pub fn forward(&self, x: &PredictorVector) -> ForecastDistribution {
        match self {
            Model::Linear(m) => m.forward(x),
            Model::Dense(m) => m.forward(x),
        }
    }

    pub fn backward(&self, x: &PredictorVector, d_dist: &[f64], grad: &mut [f64]) {
        match self {
            Model::Linear(m) => m.backward(x, d_dist, grad),
            Model::Dense(m) => m.backward(x, d_dist, grad),
        }
    }

    pub fn project_constraints(&mut self) {
        if let Model::Linear(m) = self {
            m.project_constraints();
        }
    }

    pub fn l2_penalty(&self) -> f64 {
        match self {
            Model::Linear(_) => 0.0,
            Model::Dense(m) => m.l2_penalty(),
        }
    }

    pub fn l2_grad(&self, grad: &mut [f64]) {
        if let Model::Dense(m) = self {
            m.l2_grad(grad);
        }
    }
}
