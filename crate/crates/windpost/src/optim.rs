//! Gradient-based training: pathwise gradients of sampled losses, Adam and
//! SGD, constraint projection, mixture pre-training, early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dists::{derive_seed, NoiseBlock};
use crate::error::{Error, Result};
use crate::exec::{chunked_map, ExecMode};
use crate::params::{FamilySpec, LinearModel, Model, PredictorVector, ScalarFamily};
use crate::scoring::{crps_tn_with_grad, wcrps_with_grad, WeightFunction};
use crate::dists::ForecastDistribution;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;
/// Relative improvement below this over [`CONVERGENCE_EPOCHS`] consecutive
/// epochs counts as converged (used when early stopping is disabled).
pub const CONVERGENCE_TOL: f64 = 1e-5;
pub const CONVERGENCE_EPOCHS: usize = 5;

// Seed-stream tags, so noise for sampling, shuffling, pre-training and
// validation never collides.
const STREAM_NOISE1: u64 = 0;
const STREAM_NOISE2: u64 = 1;
const STREAM_SHUFFLE: u64 = 0x51f1;
const STREAM_EVAL: u64 = 0xe7a1;
const STREAM_PRETRAIN: u64 = 0x9123;

/// Training loss: a sampled weighted CRPS or the closed-form truncated
/// normal CRPS (exact, TN models only).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "loss", rename_all = "snake_case")]
pub enum LossSpec {
    SampledWcrps { weight: WeightFunction, n: usize },
    ClosedFormCrpsTn,
}

impl LossSpec {
    pub fn sampled(weight: WeightFunction, n: usize) -> Self {
        LossSpec::SampledWcrps { weight, n }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stopping patience in epochs; 0 disables early stopping and
    /// enables the convergence rule instead.
    pub patience: usize,
    /// Mixture components are trained separately for this many epochs
    /// before joint training; 0 skips pre-training.
    pub pretrain_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Linear-model defaults: Adam, lr 0.01, batch 256, estimator n = 250,
    /// 75 pre-training epochs.
    pub fn linear_default(weight: WeightFunction) -> Self {
        TrainConfig {
            loss: LossSpec::sampled(weight, 250),
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.01,
            batch_size: 256,
            max_epochs: 200,
            patience: 0,
            pretrain_epochs: 75,
            seed: 0,
        }
    }

    /// Network defaults: Adam, lr 0.000105, batch 64, estimator n = 1000,
    /// early stopping with patience 10.
    pub fn dense_default(weight: WeightFunction) -> Self {
        TrainConfig {
            loss: LossSpec::sampled(weight, 1000),
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.000105,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            pretrain_epochs: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let LossSpec::SampledWcrps { n, .. } = &self.loss {
            if *n == 0 {
                return Err(Error::Config("estimator sample size must be >= 1".into()));
            }
        }
        Ok(())
    }
}

/// Adam moment accumulators; empty for SGD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, n_params: usize) -> Self {
        let len = if kind == OptimizerKind::Adam { n_params } else { 0 };
        OptimizerState {
            kind,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        debug_assert_eq!(params.len(), grad.len());
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.step += 1;
                let t = self.step as i32;
                let bc1 = 1.0 - ADAM_BETA1.powi(t);
                let bc2 = 1.0 - ADAM_BETA2.powi(t);
                for i in 0..params.len() {
                    self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * grad[i];
                    self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                }
            }
        }
    }
}

/// One optimizer update at the configured learning rate.
pub fn optimizer_step(
    state: &mut OptimizerState,
    params: &mut [f64],
    grad: &[f64],
    cfg: &TrainConfig,
) {
    state.apply(params, grad, cfg.learning_rate);
}

/// A view of training records. `record_ids` seed the per-record noise
/// streams; they stay attached to records across epochs and shuffles.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a [PredictorVector],
    pub observations: &'a [f64],
    pub record_ids: &'a [u64],
}

impl<'a> Batch<'a> {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

fn record_loss_grad(
    model: &Model,
    x: &PredictorVector,
    y: f64,
    id: u64,
    loss: &LossSpec,
    epoch: usize,
    seed: u64,
    inv_n: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let dist = model.forward(x);
    let nd = dist.n_dist_params();
    let mut d_dist = vec![0.0; nd];
    let value = match loss {
        LossSpec::SampledWcrps { weight, n } => {
            let n1 = NoiseBlock::generate(derive_seed(&[seed, epoch as u64, id, STREAM_NOISE1]), *n);
            let n2 = NoiseBlock::generate(derive_seed(&[seed, epoch as u64, id, STREAM_NOISE2]), *n);
            wcrps_with_grad(&dist, y, weight, &n1, &n2, inv_n, &mut d_dist)
        }
        LossSpec::ClosedFormCrpsTn => match dist {
            ForecastDistribution::TruncNormal { loc, scale } => {
                let (v, d_mu, d_sigma) = crps_tn_with_grad(loc, scale, y);
                d_dist[0] = d_mu * inv_n;
                d_dist[1] = d_sigma * inv_n;
                v
            }
            other => {
                return Err(Error::UnsupportedFamily(format!(
                    "closed-form CRPS loss requires a truncated-normal model, got {other:?}"
                )))
            }
        },
    };
    if !value.is_finite() || d_dist.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            epoch,
            batch: 0,
            msg: format!("non-finite loss term for record {id}"),
        });
    }
    model.backward(x, &d_dist, grad);
    Ok(value)
}

/// Mean per-record loss over a batch (plus the l2 penalty for networks)
/// and its gradient in the flat parameter layout. The pathwise gradient
/// holds the per-record noise blocks fixed, so it is the exact derivative
/// of the reported estimate.
pub fn loss_and_grad(
    model: &Model,
    batch: &Batch,
    loss: &LossSpec,
    epoch: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Argument("empty training batch".into()));
    }
    let n = batch.len();
    let inv_n = 1.0 / n as f64;
    let n_params = model.n_params();
    // Chunked so parallel reduction order is fixed.
    let chunk = 16usize;
    let parts = chunked_map(mode, n, chunk, |range| -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; n_params];
        let mut sum = 0.0;
        for k in range {
            sum += record_loss_grad(
                model,
                &batch.inputs[k],
                batch.observations[k],
                batch.record_ids[k],
                loss,
                epoch,
                seed,
                inv_n,
                &mut g,
            )
            .map_err(|e| match e {
                Error::Divergence { epoch, msg, .. } => Error::Divergence {
                    epoch,
                    batch: k,
                    msg,
                },
                other => other,
            })?;
        }
        Ok((sum, g))
    });

    let mut total = 0.0;
    let mut grad = vec![0.0; n_params];
    for part in parts {
        let (s, g) = part?;
        total += s;
        for (acc, v) in grad.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let mut value = total * inv_n + model.l2_penalty();
    model.l2_grad(&mut grad);
    if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence {
            epoch,
            batch: 0,
            msg: "non-finite batch loss or gradient".into(),
        });
    }
    // Guard against -0.0 noise in traces.
    if value == 0.0 {
        value = 0.0;
    }
    Ok((value, grad))
}

/// Training inputs: normalized predictors aligned with observations.
#[derive(Debug, Clone, Copy)]
pub struct TrainData<'a> {
    pub inputs: &'a [PredictorVector],
    pub observations: &'a [f64],
}

impl<'a> TrainData<'a> {
    pub fn new(inputs: &'a [PredictorVector], observations: &'a [f64]) -> Self {
        debug_assert_eq!(inputs.len(), observations.len());
        TrainData {
            inputs,
            observations,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Per-epoch record of the loss trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub trace: Vec<EpochStats>,
    /// 1-based epoch whose parameters are returned; 0 when no epoch ran.
    pub best_epoch: usize,
}

/// Writes the loss trace as CSV (epoch, train_loss, val_loss).
pub fn write_trace_csv(trace: &[EpochStats], path: &std::path::Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "val_loss"])?;
    for e in trace {
        w.write_record([
            e.epoch.to_string(),
            format!("{}", e.train_loss),
            e.val_loss.map(|v| format!("{v}")).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Mean per-record loss of a model over a dataset, using a noise stream
/// independent of any training epoch (stable across evaluations).
pub fn dataset_loss(
    model: &Model,
    data: &TrainData,
    loss: &LossSpec,
    seed: u64,
    mode: ExecMode,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Argument("empty evaluation dataset".into()));
    }
    let n = data.len();
    let parts = chunked_map(mode, n, 64, |range| -> Result<f64> {
        let mut sum = 0.0;
        for k in range {
            let dist = model.forward(&data.inputs[k]);
            let y = data.observations[k];
            sum += match loss {
                LossSpec::SampledWcrps { weight, n: ns } => {
                    let n1 =
                        NoiseBlock::generate(derive_seed(&[seed, STREAM_EVAL, k as u64, 0]), *ns);
                    let n2 =
                        NoiseBlock::generate(derive_seed(&[seed, STREAM_EVAL, k as u64, 1]), *ns);
                    crate::scoring::wcrps_sample_estimate(&dist, y, weight, &n1, &n2)?.value
                }
                LossSpec::ClosedFormCrpsTn => {
                    crate::scoring::crps_closed_form_tn(&dist, y)?.value
                }
            };
        }
        Ok(sum)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / n as f64 + model.l2_penalty())
}

/// `round(2/3 * mean(best_epochs))`: the epoch budget when retraining on
/// the full training set without a validation split.
pub fn final_epoch_rule(best_epochs: &[usize]) -> Result<usize> {
    if best_epochs.is_empty() {
        return Err(Error::Argument("final_epoch_rule needs at least one fold".into()));
    }
    let mean = best_epochs.iter().sum::<usize>() as f64 / best_epochs.len() as f64;
    Ok((2.0 / 3.0 * mean).round() as usize)
}

struct EpochLoop<'a> {
    data: &'a TrainData<'a>,
    cfg: &'a TrainConfig,
    mode: ExecMode,
    /// When set, run exactly this many epochs with no stopping rule
    /// (component pre-training).
    fixed_epochs: Option<usize>,
    seed: u64,
}

fn run_training(
    mut model: Model,
    lp: &EpochLoop,
    validation: Option<&TrainData>,
) -> Result<TrainOutcome> {
    let cfg = lp.cfg;
    let data = lp.data;
    let n = data.len();
    let record_ids: Vec<u64> = (0..n as u64).collect();
    let max_epochs = lp.fixed_epochs.unwrap_or(cfg.max_epochs);
    let early_stopping = lp.fixed_epochs.is_none() && cfg.patience > 0;

    let mut state = OptimizerState::new(cfg.optimizer, model.n_params());
    let mut lr = cfg.learning_rate;
    let mut halved = false;

    let mut trace = Vec::with_capacity(max_epochs);
    let mut best_val = f64::INFINITY;
    let mut best_params = model.flat_params();
    let mut best_epoch = 0usize;
    let mut since_best = 0usize;
    let mut slow_epochs = 0usize;
    let mut prev_train = f64::INFINITY;

    let mut epoch = 0usize;
    while epoch < max_epochs {
        let params_snapshot = model.flat_params();
        let state_snapshot = state.clone();

        let mut order: Vec<usize> = (0..n).collect();
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(&[lp.seed, STREAM_SHUFFLE, epoch as u64]));
        order.shuffle(&mut rng);

        let mut epoch_sum = 0.0;
        let mut diverged: Option<Error> = None;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs: Vec<PredictorVector> =
                chunk.iter().map(|&i| data.inputs[i].clone()).collect();
            let obs: Vec<f64> = chunk.iter().map(|&i| data.observations[i]).collect();
            let ids: Vec<u64> = chunk.iter().map(|&i| record_ids[i]).collect();
            let batch = Batch {
                inputs: &inputs,
                observations: &obs,
                record_ids: &ids,
            };
            match loss_and_grad(&model, &batch, &cfg.loss, epoch, lp.seed, lp.mode) {
                Ok((value, grad)) => {
                    epoch_sum += value * chunk.len() as f64;
                    let mut params = model.flat_params();
                    state.apply(&mut params, &grad, lr);
                    model.set_flat_params(&params);
                    model.project_constraints();
                }
                Err(e @ Error::Divergence { .. }) => {
                    diverged = Some(e);
                    break;
                }
                Err(e) => return Err(e),
            }
        }

        if let Some(err) = diverged {
            // One retry at half the learning rate, restarting the epoch
            // from its entry state.
            if !halved {
                halved = true;
                lr *= 0.5;
                model.set_flat_params(&params_snapshot);
                state = state_snapshot;
                continue;
            }
            return Err(err);
        }

        let train_loss = epoch_sum / n as f64;
        let val_loss = match validation {
            Some(v) => Some(dataset_loss(&model, v, &cfg.loss, lp.seed, lp.mode)?),
            None => None,
        };
        trace.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_loss,
        });

        if early_stopping {
            let v = val_loss.expect("validation required when patience > 0");
            if v < best_val {
                best_val = v;
                best_params = model.flat_params();
                best_epoch = epoch + 1;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best > cfg.patience {
                    break;
                }
            }
        } else if lp.fixed_epochs.is_none() {
            // Convergence rule: small relative improvement for several
            // consecutive epochs.
            let rel = (prev_train - train_loss) / prev_train.abs().max(1e-12);
            if prev_train.is_finite() && rel < CONVERGENCE_TOL {
                slow_epochs += 1;
            } else {
                slow_epochs = 0;
            }
            prev_train = train_loss;
            if slow_epochs >= CONVERGENCE_EPOCHS {
                break;
            }
        }
        epoch += 1;
    }

    if early_stopping && best_epoch > 0 {
        model.set_flat_params(&best_params);
        model.project_constraints();
    } else {
        best_epoch = trace.len();
    }
    Ok(TrainOutcome {
        model,
        trace,
        best_epoch,
    })
}

fn pretrain_mixture(
    model: &mut LinearModel,
    data: &TrainData,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<()> {
    let (second, _weight) = match &model.family {
        FamilySpec::Mixture { second, weight, .. } => (*second, *weight),
        _ => return Ok(()),
    };
    let comp_specs = [
        (FamilySpec::TruncNormal, 0usize),
        (
            match second {
                ScalarFamily::LogNormal => FamilySpec::LogNormal,
                ScalarFamily::Gev => FamilySpec::Gev,
                ScalarFamily::TruncNormal => unreachable!("validated"),
            },
            1usize,
        ),
    ];
    for (family, which) in comp_specs {
        let sub = Model::Linear(LinearModel::new(family, model.n_predictors)?);
        let lp = EpochLoop {
            data,
            cfg,
            mode,
            fixed_epochs: Some(cfg.pretrain_epochs),
            seed: derive_seed(&[cfg.seed, STREAM_PRETRAIN, which as u64]),
        };
        let out = run_training(sub, &lp, None)?;
        let trained = match out.model {
            Model::Linear(l) => l,
            Model::Dense(_) => unreachable!(),
        };
        if which == 0 {
            model.params.a = trained.params.a;
            model.params.b = trained.params.b;
        } else {
            model.params.a2 = Some(trained.params.a);
            model.params.b2 = Some(trained.params.b);
            if trained.params.xi.is_some() {
                model.params.xi = trained.params.xi;
            }
        }
    }
    Ok(())
}

/// Trains a model from its initialization. Shuffling, noise and
/// pre-training are all derived from `cfg.seed`, so identical inputs give
/// bit-identical parameters.
pub fn train(
    init: &Model,
    data: &TrainData,
    validation: Option<&TrainData>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_mode(init, data, validation, cfg, ExecMode::default())
}

pub fn train_with_mode(
    init: &Model,
    data: &TrainData,
    validation: Option<&TrainData>,
    cfg: &TrainConfig,
    mode: ExecMode,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Argument("training dataset is empty".into()));
    }
    if cfg.patience > 0 && validation.is_none() {
        return Err(Error::Config(
            "early stopping (patience > 0) requires a validation dataset".into(),
        ));
    }
    let mut model = init.clone();
    if cfg.pretrain_epochs > 0 {
        if let Model::Linear(linear) = &mut model {
            if matches!(linear.family, FamilySpec::Mixture { .. }) {
                pretrain_mixture(linear, data, cfg, mode)?;
            }
        }
        // Network mixtures share one hidden stack across components, so
        // there is no separate component model to pre-train.
    }
    if cfg.max_epochs == 0 {
        return Ok(TrainOutcome {
            model,
            trace: Vec::new(),
            best_epoch: 0,
        });
    }
    let lp = EpochLoop {
        data,
        cfg,
        mode,
        fixed_epochs: None,
        seed: cfg.seed,
    };
    run_training(model, &lp, validation)
}
