//! Model selection: seeded random search over configurations with exact
//! Pareto-front extraction on the (CRPS, twCRPS12) trade-off.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, FoldAssignment, NormStats};
use crate::dists::derive_seed;
use crate::error::{Error, Result};
use crate::exec::{indexed_map, ExecMode};
use crate::optim::{
    dataset_loss, train_with_mode, LossSpec, OptimizerKind, TrainConfig, TrainData,
};
use crate::params::{DenseConfig, DenseModel, FamilySpec, LinearModel, Model};
use crate::scoring::WeightFunction;

/// Architecture choice for a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "arch", rename_all = "snake_case")]
pub enum ArchKind {
    Linear,
    Dense { layers: usize, units: usize, l2: f64 },
}

/// One sampled configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub family: FamilySpec,
    pub weight: WeightFunction,
    pub arch: ArchKind,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialStatus {
    Ok,
    Diverged,
}

/// A finished trial: configuration plus mean validation objectives across
/// folds (minimization). Objectives are NaN when diverged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub config: TrialConfig,
    pub crps: f64,
    pub twcrps12: f64,
    pub status: TrialStatus,
}

/// Sampling ranges for the search. Defaults follow the published CNN
/// search ranges; `sigma` and `l2` are log-uniform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub families: Vec<FamilySpec>,
    pub mu: (f64, f64),
    pub sigma: (f64, f64),
    pub c: (f64, f64),
    pub optimizers: Vec<OptimizerKind>,
    pub learning_rate: (f64, f64),
    pub l2: (f64, f64),
    pub layers: Vec<usize>,
    pub units: Vec<usize>,
    pub batch_sizes: Vec<usize>,
    pub dense_arch: bool,
    // Fixed training-protocol knobs shared by every trial.
    pub estimator_n: usize,
    pub max_epochs: usize,
    pub pretrain_epochs: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            families: vec![
                FamilySpec::TruncNormal,
                FamilySpec::LogNormal,
                FamilySpec::parse("tn-ln").expect("static family name"),
            ],
            mu: (-5.0, 15.0),
            sigma: (1e-4, 10.0),
            c: (1e-6, 1.0),
            optimizers: vec![OptimizerKind::Adam, OptimizerKind::Sgd],
            learning_rate: (1e-4, 0.03),
            l2: (5e-5, 0.1),
            layers: vec![1, 2, 3, 4, 5],
            units: (3..=20).map(|k| k * 10).collect(),
            batch_sizes: vec![16, 32, 64, 128, 256, 512, 1024],
            dense_arch: false,
            estimator_n: 250,
            max_epochs: 30,
            pretrain_epochs: 0,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Log-uniform draw on `[lo, hi]`.
pub fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (uniform(rng, lo.ln(), hi.ln())).exp()
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, items: &'a [T]) -> &'a T {
    &items[rng.gen_range(0..items.len())]
}

impl SearchSpace {
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> TrialConfig {
        let family = pick(rng, &self.families).clone();
        let weight = WeightFunction::shifted_gauss_cdf(
            uniform(rng, self.mu.0, self.mu.1),
            log_uniform(rng, self.sigma.0, self.sigma.1),
            uniform(rng, self.c.0, self.c.1),
        );
        let arch = if self.dense_arch {
            ArchKind::Dense {
                layers: *pick(rng, &self.layers),
                units: *pick(rng, &self.units),
                l2: log_uniform(rng, self.l2.0, self.l2.1),
            }
        } else {
            ArchKind::Linear
        };
        TrialConfig {
            family,
            weight,
            arch,
            optimizer: *pick(rng, &self.optimizers),
            learning_rate: uniform(rng, self.learning_rate.0, self.learning_rate.1),
            batch_size: *pick(rng, &self.batch_sizes),
        }
    }
}

fn build_model(config: &TrialConfig, n_predictors: usize, seed: u64) -> Result<Model> {
    Ok(match &config.arch {
        ArchKind::Linear => {
            Model::Linear(LinearModel::new(config.family.clone(), n_predictors)?)
        }
        ArchKind::Dense { layers, units, l2 } => Model::Dense(DenseModel::new(
            config.family.clone(),
            n_predictors,
            DenseConfig {
                layers: *layers,
                units: *units,
                l2: *l2,
            },
            seed,
        )?),
    })
}

fn run_trial(
    config: &TrialConfig,
    ds: &Dataset,
    folds: &FoldAssignment,
    space: &SearchSpace,
    seed: u64,
) -> Result<(f64, f64)> {
    let k = folds.folds.len();
    let mut crps_sum = 0.0;
    let mut tw_sum = 0.0;
    for val_fold in 0..k {
        let train_idx: Vec<usize> = (0..k)
            .filter(|&f| f != val_fold)
            .flat_map(|f| folds.folds[f].iter().copied())
            .collect();
        let stats = NormStats::from_records(&ds.records, &train_idx)?;
        let train_ds = ds.subset(&train_idx);
        let val_ds = ds.subset(&folds.folds[val_fold]);
        let ti = train_ds.inputs(&stats)?;
        let to = train_ds.observations();
        let vi = val_ds.inputs(&stats)?;
        let vo = val_ds.observations();
        let train_data = TrainData::new(&ti, &to);
        let val_data = TrainData::new(&vi, &vo);

        let cfg = TrainConfig {
            loss: LossSpec::sampled(config.weight.clone(), space.estimator_n),
            optimizer: config.optimizer,
            learning_rate: config.learning_rate,
            batch_size: config.batch_size,
            max_epochs: space.max_epochs,
            patience: 0,
            pretrain_epochs: space.pretrain_epochs,
            seed: derive_seed(&[seed, val_fold as u64]),
        };
        let init = build_model(config, crate::data::N_PREDICTORS, derive_seed(&[seed, 0xde]))?;
        let out = train_with_mode(&init, &train_data, None, &cfg, ExecMode::Sequential)?;
        crps_sum += dataset_loss(
            &out.model,
            &val_data,
            &LossSpec::sampled(WeightFunction::Constant, space.estimator_n),
            derive_seed(&[seed, 0xc0]),
            ExecMode::Sequential,
        )?;
        tw_sum += dataset_loss(
            &out.model,
            &val_data,
            &LossSpec::sampled(WeightFunction::indicator(12.0), space.estimator_n),
            derive_seed(&[seed, 0x712]),
            ExecMode::Sequential,
        )?;
    }
    Ok((crps_sum / k as f64, tw_sum / k as f64))
}

/// Samples `n_trials` configurations and scores each by 3-fold
/// cross-validation. Divergent trials are recorded and skipped, never
/// fatal. Trials run in parallel with independent seed streams.
pub fn random_search(
    space: &SearchSpace,
    n_trials: usize,
    ds: &Dataset,
    folds: &FoldAssignment,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<Trial>> {
    if n_trials == 0 {
        return Err(Error::Argument("n_trials must be >= 1".into()));
    }
    if folds.folds.len() < 2 {
        return Err(Error::FoldSpec(
            "cross-validation needs at least two training folds".into(),
        ));
    }
    let trials = indexed_map(mode, n_trials, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, i as u64, 0x5a]));
        let config = space.sample(&mut rng);
        match run_trial(&config, ds, folds, space, derive_seed(&[seed, i as u64])) {
            Ok((crps, twcrps12)) => Trial {
                index: i,
                config,
                crps,
                twcrps12,
                status: TrialStatus::Ok,
            },
            Err(_) => Trial {
                index: i,
                config,
                crps: f64::NAN,
                twcrps12: f64::NAN,
                status: TrialStatus::Diverged,
            },
        }
    });
    Ok(trials)
}

/// Non-dominated trials under (crps, twcrps12) minimization, sorted by
/// crps ascending. A trial is dominated when another is no worse in both
/// objectives and strictly better in at least one; diverged trials are
/// excluded. Single sorted sweep, O(n log n).
pub fn pareto_front(trials: &[Trial]) -> Vec<Trial> {
    let mut ok: Vec<&Trial> = trials
        .iter()
        .filter(|t| t.status == TrialStatus::Ok)
        .collect();
    ok.sort_by(|a, b| {
        a.crps
            .partial_cmp(&b.crps)
            .unwrap()
            .then(a.twcrps12.partial_cmp(&b.twcrps12).unwrap())
    });
    let mut front = Vec::new();
    let mut best_tw_before = f64::INFINITY; // min twcrps over strictly smaller crps
    let mut i = 0usize;
    while i < ok.len() {
        // Group of equal crps values.
        let mut j = i;
        while j < ok.len() && ok[j].crps == ok[i].crps {
            j += 1;
        }
        let group_min_tw = ok[i].twcrps12; // sorted within group
        for t in &ok[i..j] {
            // Survives when nothing with smaller crps is at least as good
            // in twcrps12, and nothing in its own group is strictly better.
            if t.twcrps12 < best_tw_before && t.twcrps12 == group_min_tw {
                front.push((*t).clone());
            }
        }
        best_tw_before = best_tw_before.min(group_min_tw);
        i = j;
    }
    front
}

/// One row per trial: flattened config columns plus objectives and status.
pub fn write_trials_csv(trials: &[Trial], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "index", "family", "weight", "arch", "optimizer", "learning_rate", "batch_size",
        "crps", "twcrps12", "status",
    ])?;
    for t in trials {
        let arch = match &t.config.arch {
            ArchKind::Linear => "linear".to_string(),
            ArchKind::Dense { layers, units, l2 } => {
                format!("dense(layers={layers},units={units},l2={l2})")
            }
        };
        w.write_record([
            t.index.to_string(),
            serde_json::to_string(&t.config.family)?,
            serde_json::to_string(&t.config.weight)?,
            arch,
            format!("{:?}", t.config.optimizer).to_lowercase(),
            format!("{}", t.config.learning_rate),
            t.config.batch_size.to_string(),
            format!("{}", t.crps),
            format!("{}", t.twcrps12),
            match t.status {
                TrialStatus::Ok => "ok".to_string(),
                TrialStatus::Diverged => "diverged".to_string(),
            },
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_front_json(front: &[Trial], path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(front)?)?;
    Ok(())
}
