//! Bagging: K models trained with the same configuration and different
//! seeds, combined by averaging their predictive cdfs.

use serde::{Deserialize, Serialize};

use crate::dists::ForecastDistribution;
use crate::error::{Error, Result};
use crate::exec::{indexed_map, ExecMode};
use crate::optim::{train_with_mode, TrainConfig, TrainData};
use crate::params::{Model, PredictorVector};

pub const DEFAULT_BAG_SIZE: usize = 10;

/// K independently trained copies of one model specification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaggedModel {
    pub members: Vec<Model>,
}

impl BaggedModel {
    pub fn new(members: Vec<Model>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::Argument("a bag needs at least one member".into()));
        }
        let family = members[0].family();
        let np = members[0].n_predictors();
        for m in &members[1..] {
            if m.family() != family || m.n_predictors() != np {
                return Err(Error::Config(
                    "bag members must share family and predictor registry".into(),
                ));
            }
        }
        Ok(BaggedModel { members })
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }
}

/// The bag's predictive distribution: an exact equal-weight mixture of the
/// member cdfs. A single-member bag collapses to that member's forecast.
pub fn bag_predict(bag: &BaggedModel, x: &PredictorVector) -> ForecastDistribution {
    if bag.members.len() == 1 {
        return bag.members[0].forward(x);
    }
    ForecastDistribution::ensemble(bag.members.iter().map(|m| m.forward(x)).collect())
}

/// Trains K members with seeds `base_seed + k` and fixed epochs (no early
/// stopping: the epoch budget comes from [`crate::optim::final_epoch_rule`]
/// upstream). Member training runs in parallel.
pub fn bag_train(
    init: &Model,
    data: &TrainData,
    cfg: &TrainConfig,
    k: usize,
    base_seed: u64,
) -> Result<BaggedModel> {
    bag_train_with_mode(init, data, cfg, k, base_seed, ExecMode::default())
}

pub fn bag_train_with_mode(
    init: &Model,
    data: &TrainData,
    cfg: &TrainConfig,
    k: usize,
    base_seed: u64,
    mode: ExecMode,
) -> Result<BaggedModel> {
    if k == 0 {
        return Err(Error::Argument("bag size must be >= 1".into()));
    }
    if cfg.patience != 0 {
        return Err(Error::Config(
            "bagged members train for fixed epochs; set patience = 0".into(),
        ));
    }
    // Members in parallel; each member's inner loops sequential.
    let results = indexed_map(mode, k, |i| {
        let mut member_cfg = cfg.clone();
        member_cfg.seed = base_seed + i as u64;
        train_with_mode(init, data, None, &member_cfg, ExecMode::Sequential)
            .map(|out| out.model)
            .map_err(|e| Error::Config(format!("bag member {i} failed: {e}")))
    });
    let mut members = Vec::with_capacity(k);
    for r in results {
        members.push(r?);
    }
    BaggedModel::new(members)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, NormStats, Scenario};
    use crate::optim::LossSpec;
    use crate::params::{FamilySpec, LinearModel};
    use crate::scoring::WeightFunction;

    fn data(n: usize, seed: u64) -> (Vec<PredictorVector>, Vec<f64>) {
        let ds = generate_synthetic(n, Scenario::Calibrated, seed).unwrap();
        let idx: Vec<usize> = (0..ds.len()).collect();
        let stats = NormStats::from_records(&ds.records, &idx).unwrap();
        (ds.inputs(&stats).unwrap(), ds.observations())
    }

    fn tn_model() -> Model {
        Model::Linear(LinearModel::new(FamilySpec::TruncNormal, 5).unwrap())
    }

    fn quick_cfg() -> TrainConfig {
        let mut cfg = TrainConfig::linear_default(WeightFunction::Constant);
        cfg.loss = LossSpec::sampled(WeightFunction::Constant, 30);
        cfg.max_epochs = 3;
        cfg.pretrain_epochs = 0;
        cfg.batch_size = 64;
        cfg
    }

    #[test]
    fn single_member_bag_is_the_member() {
        let (inputs, obs) = data(80, 1);
        let td = TrainData::new(&inputs, &obs);
        let bag = bag_train(&tn_model(), &td, &quick_cfg(), 1, 5).unwrap();
        let mut cfg = quick_cfg();
        cfg.seed = 5;
        let single = crate::optim::train(&tn_model(), &td, None, &cfg).unwrap().model;
        assert_eq!(bag.members[0].flat_params(), single.flat_params());
        let d_bag = bag_predict(&bag, &inputs[0]);
        let d_single = single.forward(&inputs[0]);
        assert_eq!(d_bag, d_single);
    }

    #[test]
    fn identical_members_collapse() {
        let m = tn_model();
        let bag = BaggedModel::new(vec![m.clone(), m.clone()]).unwrap();
        let (inputs, _) = data(5, 2);
        let d = bag_predict(&bag, &inputs[0]);
        let single = m.forward(&inputs[0]);
        for i in 0..=40 {
            let z = i as f64 * 0.5;
            let a = d.cdf(z).unwrap();
            let b = single.cdf(z).unwrap();
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn bag_cdf_is_mean_of_member_cdfs() {
        let (inputs, obs) = data(120, 3);
        let td = TrainData::new(&inputs, &obs);
        let bag = bag_train(&tn_model(), &td, &quick_cfg(), 10, 100).unwrap();
        let x = &inputs[7];
        let d = bag_predict(&bag, x);
        for i in 0..100 {
            let z = i as f64 * 0.2;
            let mean: f64 = bag
                .members
                .iter()
                .map(|m| m.forward(x).cdf(z).unwrap())
                .sum::<f64>()
                / bag.k() as f64;
            assert!((d.cdf(z).unwrap() - mean).abs() < 1e-14, "z={z}");
        }
    }

    #[test]
    fn bag_training_deterministic_in_base_seed() {
        let (inputs, obs) = data(60, 4);
        let td = TrainData::new(&inputs, &obs);
        let a = bag_train(&tn_model(), &td, &quick_cfg(), 3, 11).unwrap();
        let b = bag_train(&tn_model(), &td, &quick_cfg(), 3, 11).unwrap();
        for (x, y) in a.members.iter().zip(&b.members) {
            assert_eq!(x.flat_params(), y.flat_params());
        }
        // Different seeds give different members.
        let c = bag_train(&tn_model(), &td, &quick_cfg(), 3, 12).unwrap();
        assert_ne!(a.members[0].flat_params(), c.members[0].flat_params());
    }

    #[test]
    fn mismatched_members_rejected() {
        let tn = tn_model();
        let ln = Model::Linear(LinearModel::new(FamilySpec::LogNormal, 5).unwrap());
        assert!(BaggedModel::new(vec![tn, ln]).is_err());
        assert!(BaggedModel::new(vec![]).is_err());
    }

    #[test]
    fn early_stopping_config_rejected() {
        let (inputs, obs) = data(20, 6);
        let td = TrainData::new(&inputs, &obs);
        let mut cfg = quick_cfg();
        cfg.patience = 5;
        assert!(bag_train(&tn_model(), &td, &cfg, 2, 0).is_err());
    }
}
