//! Test-set verification: Brier skill curves with bootstrap bands,
//! reliability and sharpness diagrams, climatology reference forecasts,
//! scalar score summaries.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bagging::{bag_predict, BaggedModel};
use crate::data::{Dataset, NormStats, N_PREDICTORS};
use crate::dists::{derive_seed, ForecastDistribution, NoiseBlock};
use crate::error::{Error, Result};
use crate::exec::{chunked_map, ExecMode};
use crate::params::{Model, PredictorVector};
use crate::scoring::{
    brier_score, crps_closed_form_tn, wcrps_sample_estimate, WeightFunction,
};

/// A single trained forecaster: one model or a bag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "forecaster", rename_all = "snake_case")]
pub enum Forecaster {
    Single(Model),
    Bag(BaggedModel),
}

impl Forecaster {
    pub fn forward(&self, x: &PredictorVector) -> ForecastDistribution {
        match self {
            Forecaster::Single(m) => m.forward(x),
            Forecaster::Bag(b) => bag_predict(b, x),
        }
    }
}

/// Per-station empirical distribution of past observations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Climatology {
    /// Sorted ascending per station.
    pub stations: BTreeMap<String, Vec<f64>>,
}

impl Climatology {
    pub fn fit(ds: &Dataset) -> Result<Climatology> {
        if ds.is_empty() {
            return Err(Error::Argument(
                "cannot fit climatology on an empty dataset".into(),
            ));
        }
        let mut stations: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for r in &ds.records {
            stations
                .entry(r.station.clone())
                .or_default()
                .push(r.observation);
        }
        for obs in stations.values_mut() {
            obs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        }
        Ok(Climatology { stations })
    }

    /// Empirical exceedance fraction `#{obs > threshold} / N`.
    pub fn prob_exceed(&self, station: &str, threshold: f64) -> Result<f64> {
        let obs = self
            .stations
            .get(station)
            .ok_or_else(|| Error::UnknownStation(station.to_string()))?;
        let below = obs.partition_point(|&v| v <= threshold);
        Ok((obs.len() - below) as f64 / obs.len() as f64)
    }
}

pub fn climatology_prob_exceed(c: &Climatology, station: &str, threshold: f64) -> Result<f64> {
    c.prob_exceed(station, threshold)
}

/// Bootstrap band of the Brier skill score at one threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BssBand {
    pub threshold: f64,
    pub median: f64,
    pub lo: f64,
    pub hi: f64,
    /// Resamples dropped because the reference Brier score was zero.
    pub dropped: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx]
}

/// Record-level paired bootstrap of the Brier skill score. `probs` are
/// indexed `[threshold][record]`. Resample indices are shared across
/// thresholds so the bands are comparable along the curve.
pub fn bootstrap_bss(
    model_probs: &[Vec<f64>],
    ref_probs: &[Vec<f64>],
    outcomes: &[Vec<bool>],
    thresholds: &[f64],
    b: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<BssBand>> {
    let nt = thresholds.len();
    if model_probs.len() != nt || ref_probs.len() != nt || outcomes.len() != nt {
        return Err(Error::Argument(
            "bootstrap_bss arrays must be aligned with the threshold grid".into(),
        ));
    }
    if b == 0 {
        return Err(Error::Argument("bootstrap size must be >= 1".into()));
    }
    let n = model_probs.first().map(|v| v.len()).unwrap_or(0);
    if n == 0 {
        return Err(Error::Argument("bootstrap_bss needs at least one record".into()));
    }
    for t in 0..nt {
        if model_probs[t].len() != n || ref_probs[t].len() != n || outcomes[t].len() != n {
            return Err(Error::Argument(
                "bootstrap_bss arrays must be aligned across records".into(),
            ));
        }
    }

    // Precomputed per-record Brier scores per threshold.
    let bs: Vec<(Vec<f64>, Vec<f64>)> = (0..nt)
        .map(|t| {
            let bm = (0..n)
                .map(|i| brier_score(model_probs[t][i], outcomes[t][i]))
                .collect();
            let br = (0..n)
                .map(|i| brier_score(ref_probs[t][i], outcomes[t][i]))
                .collect();
            (bm, br)
        })
        .collect();

    // resamples[j][t] = Some(bss) or None when the reference degenerates.
    let chunks = chunked_map(mode, b, 64, |range| {
        let mut out = Vec::with_capacity(range.len() * nt);
        for j in range {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, j as u64]));
            let idx: Vec<usize> = (0..n).map(|_| rng.gen_range(0..n)).collect();
            for (bm, br) in &bs {
                let mut sm = 0.0;
                let mut sr = 0.0;
                for &i in &idx {
                    sm += bm[i];
                    sr += br[i];
                }
                out.push(if sr == 0.0 { None } else { Some(1.0 - sm / sr) });
            }
        }
        out
    });

    let mut per_threshold: Vec<Vec<f64>> = vec![Vec::with_capacity(b); nt];
    let mut dropped = vec![0usize; nt];
    for chunk in chunks {
        for (k, v) in chunk.into_iter().enumerate() {
            let t = k % nt;
            match v {
                Some(x) => per_threshold[t].push(x),
                None => dropped[t] += 1,
            }
        }
    }

    let mut bands = Vec::with_capacity(nt);
    for t in 0..nt {
        let vals = &mut per_threshold[t];
        if vals.is_empty() {
            return Err(Error::UndefinedSkill);
        }
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        bands.push(BssBand {
            threshold: thresholds[t],
            median: percentile(vals, 0.5),
            lo: percentile(vals, 0.05),
            hi: percentile(vals, 0.95),
            dropped: dropped[t],
        });
    }
    Ok(bands)
}

/// One reliability-diagram bin. `frequency` is `None` for empty bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityBin {
    pub lo: f64,
    pub hi: f64,
    pub mean_prob: Option<f64>,
    pub frequency: Option<f64>,
    pub count: usize,
}

/// Equal-width binning of forecast probabilities against outcomes. The
/// count column doubles as the sharpness histogram.
pub fn reliability_diagram(
    probs: &[f64],
    outcomes: &[bool],
    n_bins: usize,
) -> Result<Vec<ReliabilityBin>> {
    if n_bins == 0 {
        return Err(Error::Argument("n_bins must be >= 1".into()));
    }
    if probs.len() != outcomes.len() {
        return Err(Error::Argument("probs and outcomes must be aligned".into()));
    }
    let mut sum_p = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&p, &o) in probs.iter().zip(outcomes) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Argument(format!("probability {p} outside [0, 1]")));
        }
        let k = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sum_p[k] += p;
        count[k] += 1;
        if o {
            hits[k] += 1;
        }
    }
    Ok((0..n_bins)
        .map(|k| ReliabilityBin {
            lo: k as f64 / n_bins as f64,
            hi: (k + 1) as f64 / n_bins as f64,
            mean_prob: (count[k] > 0).then(|| sum_p[k] / count[k] as f64),
            frequency: (count[k] > 0).then(|| hits[k] as f64 / count[k] as f64),
            count: count[k],
        })
        .collect())
}

/// Reference forecaster for skill scores.
#[derive(Debug, Clone)]
pub enum ReferenceSpec<'a> {
    Climatology(&'a Climatology),
    Model(&'a Forecaster),
    /// The evaluated forecaster itself; BSS is identically zero (sanity
    /// baseline).
    SelfReference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub bootstrap: usize,
    pub estimator_n: usize,
    /// BSS curve stops at the last threshold with at least this many
    /// observed exceedances.
    pub min_exceedances: usize,
    pub n_bins: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: default_threshold_grid(),
            bootstrap: 10_000,
            estimator_n: 1000,
            min_exceedances: 10,
            n_bins: 10,
            seed: 0,
        }
    }
}

/// 0 to 20 m/s in steps of 0.5.
pub fn default_threshold_grid() -> Vec<f64> {
    (0..=40).map(|i| i as f64 * 0.5).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub thresholds: Vec<f64>,
    pub bss: Vec<BssBand>,
    pub reliability_5: Vec<ReliabilityBin>,
    pub reliability_12: Vec<ReliabilityBin>,
    pub crps_mean: f64,
    pub twcrps12_mean: f64,
    pub n_records: usize,
    pub seed: u64,
}

fn mean_score(
    dists: &[ForecastDistribution],
    obs: &[f64],
    weight: &WeightFunction,
    n: usize,
    seed: u64,
    stream: u64,
    mode: ExecMode,
) -> Result<f64> {
    // Closed form where the family permits (plain CRPS of TN forecasts),
    // sampled otherwise.
    let closed = *weight == WeightFunction::Constant
        && dists
            .iter()
            .all(|d| matches!(d, ForecastDistribution::TruncNormal { .. }));
    let parts = chunked_map(mode, dists.len(), 128, |range| -> Result<f64> {
        let mut sum = 0.0;
        for i in range {
            sum += if closed {
                crps_closed_form_tn(&dists[i], obs[i])?.value
            } else {
                let n1 = NoiseBlock::generate(derive_seed(&[seed, stream, i as u64, 0]), n);
                let n2 = NoiseBlock::generate(derive_seed(&[seed, stream, i as u64, 1]), n);
                wcrps_sample_estimate(&dists[i], obs[i], weight, &n1, &n2)?.value
            };
        }
        Ok(sum)
    });
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok(total / dists.len() as f64)
}

fn exceed_probs(
    dists: &[ForecastDistribution],
    threshold: f64,
    mode: ExecMode,
) -> Result<Vec<f64>> {
    let parts = chunked_map(mode, dists.len(), 256, |range| -> Result<Vec<f64>> {
        range.map(|i| Ok(1.0 - dists[i].cdf(threshold)?)).collect()
    });
    let mut out = Vec::with_capacity(dists.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Full test-set evaluation of a forecaster against a reference.
pub fn evaluate(
    forecaster: &Forecaster,
    ds: &Dataset,
    stats: &NormStats,
    reference: &ReferenceSpec,
    cfg: &EvalConfig,
) -> Result<VerificationReport> {
    evaluate_with_mode(forecaster, ds, stats, reference, cfg, ExecMode::default())
}

pub fn evaluate_with_mode(
    forecaster: &Forecaster,
    ds: &Dataset,
    stats: &NormStats,
    reference: &ReferenceSpec,
    cfg: &EvalConfig,
    mode: ExecMode,
) -> Result<VerificationReport> {
    if ds.is_empty() {
        return Err(Error::Argument("empty evaluation dataset".into()));
    }
    for r in &ds.records {
        if r.predictors.len() != N_PREDICTORS {
            return Err(Error::Config(
                "record predictor arity does not match the registry".into(),
            ));
        }
    }
    let inputs = ds.inputs(stats)?;
    let obs = ds.observations();
    let n = inputs.len();
    let dists: Vec<ForecastDistribution> =
        inputs.iter().map(|x| forecaster.forward(x)).collect();
    let ref_dists: Option<Vec<ForecastDistribution>> = match reference {
        ReferenceSpec::Model(f) => Some(inputs.iter().map(|x| f.forward(x)).collect()),
        _ => None,
    };

    // Trim the grid to thresholds where both outcome classes are observed
    // often enough. Below the lower cut every record exceeds, the reference
    // Brier score can be exactly zero and skill is undefined; above the
    // upper cut exceedances are too rare for a stable score.
    let mut thresholds: Vec<f64> = Vec::new();
    for &t in &cfg.thresholds {
        let exceed = obs.iter().filter(|&&y| y > t).count();
        if exceed >= cfg.min_exceedances && n - exceed >= cfg.min_exceedances {
            thresholds.push(t);
        }
    }
    if thresholds.is_empty() {
        return Err(Error::Validation(
            "no threshold has enough observed exceedances".into(),
        ));
    }

    let mut model_probs = Vec::with_capacity(thresholds.len());
    let mut ref_probs = Vec::with_capacity(thresholds.len());
    let mut outcomes = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let mp = exceed_probs(&dists, t, mode)?;
        let rp = match reference {
            ReferenceSpec::SelfReference => mp.clone(),
            ReferenceSpec::Model(_) => exceed_probs(ref_dists.as_ref().unwrap(), t, mode)?,
            ReferenceSpec::Climatology(c) => ds
                .records
                .iter()
                .map(|r| c.prob_exceed(&r.station, t))
                .collect::<Result<Vec<f64>>>()?,
        };
        model_probs.push(mp);
        ref_probs.push(rp);
        outcomes.push(obs.iter().map(|&y| y > t).collect());
    }

    let bss = bootstrap_bss(
        &model_probs,
        &ref_probs,
        &outcomes,
        &thresholds,
        cfg.bootstrap,
        cfg.seed,
        mode,
    )?;

    let mut reliability = Vec::new();
    for t in [5.0, 12.0] {
        let probs = exceed_probs(&dists, t, mode)?;
        let out: Vec<bool> = obs.iter().map(|&y| y > t).collect();
        reliability.push(reliability_diagram(&probs, &out, cfg.n_bins)?);
    }
    let reliability_12 = reliability.pop().unwrap();
    let reliability_5 = reliability.pop().unwrap();

    let crps_mean = mean_score(
        &dists,
        &obs,
        &WeightFunction::Constant,
        cfg.estimator_n,
        cfg.seed,
        0xc491,
        mode,
    )?;
    let twcrps12_mean = mean_score(
        &dists,
        &obs,
        &WeightFunction::indicator(12.0),
        cfg.estimator_n,
        cfg.seed,
        0x7012,
        mode,
    )?;

    Ok(VerificationReport {
        thresholds,
        bss,
        reliability_5,
        reliability_12,
        crps_mean,
        twcrps12_mean,
        n_records: n,
        seed: cfg.seed,
    })
}

fn write_reliability_csv(bins: &[ReliabilityBin], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_lo", "bin_hi", "mean_prob", "frequency", "count"])?;
    for b in bins {
        w.write_record([
            format!("{}", b.lo),
            format!("{}", b.hi),
            b.mean_prob.map(|v| format!("{v}")).unwrap_or_default(),
            b.frequency.map(|v| format!("{v}")).unwrap_or_default(),
            b.count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A minimal line plot of the BSS curve with its bootstrap band.
pub fn write_bss_svg(report: &VerificationReport, path: &Path) -> Result<()> {
    let (w, h, ml, mb) = (640.0, 360.0, 50.0, 30.0);
    let xmax = report
        .thresholds
        .last()
        .copied()
        .unwrap_or(1.0)
        .max(1e-9);
    let (ymin, ymax) = report.bss.iter().fold((-0.1f64, 0.1f64), |(lo, hi), b| {
        (lo.min(b.lo), hi.max(b.hi))
    });
    let sx = |t: f64| ml + t / xmax * (w - ml - 10.0);
    let sy = |v: f64| h - mb - (v - ymin) / (ymax - ymin) * (h - mb - 10.0);
    let path_of = |pick: &dyn Fn(&BssBand) -> f64| {
        report
            .bss
            .iter()
            .map(|b| format!("{:.2},{:.2}", sx(b.threshold), sy(pick(b))))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let svg = format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<line x1=\"{ml}\" y1=\"{y0}\" x2=\"{xr}\" y2=\"{y0}\" stroke=\"#999\"/>\n",
            "<polyline points=\"{lo}\" fill=\"none\" stroke=\"#9ecae1\"/>\n",
            "<polyline points=\"{hi}\" fill=\"none\" stroke=\"#9ecae1\"/>\n",
            "<polyline points=\"{med}\" fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\"/>\n",
            "<text x=\"{ml}\" y=\"14\" font-size=\"12\">Brier skill score vs threshold (m/s)</text>\n",
            "</svg>\n"
        ),
        w = w,
        h = h,
        ml = ml,
        y0 = sy(0.0),
        xr = w - 10.0,
        lo = path_of(&|b: &BssBand| b.lo),
        hi = path_of(&|b: &BssBand| b.hi),
        med = path_of(&|b: &BssBand| b.median),
    );
    std::fs::write(path, svg)?;
    Ok(())
}

/// Writes `report.json` plus flat CSVs (bss_curve.csv, reliability_5.csv,
/// reliability_12.csv, sharpness.csv) and an SVG of the BSS curve.
pub fn write_report(report: &VerificationReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report)?;
    std::fs::write(dir.join("report.json"), json)?;

    let mut w = csv::Writer::from_path(dir.join("bss_curve.csv"))?;
    w.write_record(["threshold", "bss_lo", "bss_median", "bss_hi", "dropped"])?;
    for b in &report.bss {
        w.write_record([
            format!("{}", b.threshold),
            format!("{}", b.lo),
            format!("{}", b.median),
            format!("{}", b.hi),
            b.dropped.to_string(),
        ])?;
    }
    w.flush()?;

    write_reliability_csv(&report.reliability_5, &dir.join("reliability_5.csv"))?;
    write_reliability_csv(&report.reliability_12, &dir.join("reliability_12.csv"))?;

    let mut w = csv::Writer::from_path(dir.join("sharpness.csv"))?;
    w.write_record(["bin_lo", "bin_hi", "count_5", "count_12"])?;
    for (b5, b12) in report.reliability_5.iter().zip(&report.reliability_12) {
        w.write_record([
            format!("{}", b5.lo),
            format!("{}", b5.hi),
            b5.count.to_string(),
            b12.count.to_string(),
        ])?;
    }
    w.flush()?;

    write_bss_svg(report, &dir.join("bss_curve.svg"))?;
    Ok(())
}
