//! Acceptance suite: one test per release criterion, each printing a
//! single PASS/FAIL line. Run with `--nocapture` to see the lines for
//! passing criteria too.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

use windpost::bagging::{bag_predict, bag_train, BaggedModel};
use windpost::data::{conditional_law, generate_synthetic, Dataset, NormStats, Scenario};
use windpost::dists::{derive_seed, ForecastDistribution, NoiseBlock};
use windpost::exec::ExecMode;
use windpost::hyperopt::{pareto_front, ArchKind, Trial, TrialConfig, TrialStatus};
use windpost::math::std_normal_quantile;
use windpost::optim::{loss_and_grad, train, Batch, LossSpec, OptimizerKind, TrainConfig, TrainData};
use windpost::params::{FamilySpec, LinearModel, Model, PredictorVector};
use windpost::scoring::{crps_closed_form_tn, wcrps_sample_estimate, WeightFunction};
use windpost::verify::{bootstrap_bss, reliability_diagram, Climatology};

fn report(n: usize, title: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n} ({title}): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} ({title}) failed: {detail}");
}

fn tn_linear() -> Model {
    Model::Linear(LinearModel::new(FamilySpec::TruncNormal, 5).unwrap())
}

fn split(ds: &Dataset, n_train: usize) -> (Dataset, Dataset) {
    let train_idx: Vec<usize> = (0..n_train).collect();
    let test_idx: Vec<usize> = (n_train..ds.len()).collect();
    (ds.subset(&train_idx), ds.subset(&test_idx))
}

fn mean_crps_closed(model: &Model, inputs: &[PredictorVector], obs: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, &y) in inputs.iter().zip(obs) {
        acc += crps_closed_form_tn(&model.forward(x), y).unwrap().value;
    }
    acc / obs.len() as f64
}

/// Mean sampled wCRPS with per-record noise fixed by `tag`, so different
/// models are scored on common random numbers.
fn mean_wcrps_sampled(
    model: &Model,
    inputs: &[PredictorVector],
    obs: &[f64],
    w: &WeightFunction,
    n: usize,
    tag: u64,
) -> f64 {
    let mut acc = 0.0;
    for (i, (x, &y)) in inputs.iter().zip(obs).enumerate() {
        let n1 = NoiseBlock::generate(derive_seed(&[tag, i as u64, 0]), n);
        let n2 = NoiseBlock::generate(derive_seed(&[tag, i as u64, 1]), n);
        acc += wcrps_sample_estimate(&model.forward(x), y, w, &n1, &n2)
            .unwrap()
            .value;
    }
    acc / obs.len() as f64
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn mean_and_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

// 1. Analytic-CRPS and sampled-CRPS training produce nearly identical
// models: 50 paired runs on 25k calibrated records, skill scored against
// one fixed reference, median skill difference within 0.005 on both the
// CRPS and the twCRPS12 axis. Budgeted to run on one laptop core.
#[test]
fn criterion_1_sampled_vs_analytic_training() {
    let start = Instant::now();
    let ds = generate_synthetic(25_000, Scenario::Calibrated, 90_001).unwrap();
    let (tr, te) = split(&ds, 20_000);
    let idx: Vec<usize> = (0..tr.len()).collect();
    let stats = NormStats::from_records(&tr.records, &idx).unwrap();
    let tri = tr.inputs(&stats).unwrap();
    let tro = tr.observations();
    let tei = te.inputs(&stats).unwrap();
    let teo = te.observations();
    let data = TrainData::new(&tri, &tro);

    let mut base = TrainConfig::linear_default(WeightFunction::Constant);
    base.pretrain_epochs = 0;
    base.max_epochs = 3;

    // Fixed reference model on its own seed stream.
    let mut ref_cfg = base.clone();
    ref_cfg.loss = LossSpec::ClosedFormCrpsTn;
    ref_cfg.max_epochs = 10;
    ref_cfg.seed = derive_seed(&[90_001, 0x4ef5]);
    let reference = train(&tn_linear(), &data, None, &ref_cfg).unwrap().model;
    let tw12 = WeightFunction::indicator(12.0);
    let ref_crps = mean_crps_closed(&reference, &tei, &teo);
    let ref_tw = mean_wcrps_sampled(&reference, &tei, &teo, &tw12, 250, 0xe7a1);

    let mut d_crps = Vec::new();
    let mut d_tw = Vec::new();
    for p in 0..50u64 {
        let seed = derive_seed(&[90_001, 1, p]);
        let mut cfg_a = base.clone();
        cfg_a.loss = LossSpec::ClosedFormCrpsTn;
        cfg_a.seed = seed;
        let mut cfg_s = base.clone();
        cfg_s.seed = seed;
        let ma = train(&tn_linear(), &data, None, &cfg_a).unwrap().model;
        let ms = train(&tn_linear(), &data, None, &cfg_s).unwrap().model;
        let skill = |m: &Model| {
            let crps = mean_crps_closed(m, &tei, &teo);
            let tw = mean_wcrps_sampled(m, &tei, &teo, &tw12, 250, 0xe7a1);
            (1.0 - crps / ref_crps, 1.0 - tw / ref_tw)
        };
        let (ca, ta) = skill(&ma);
        let (cs, ts) = skill(&ms);
        d_crps.push(ca - cs);
        d_tw.push(ta - ts);
    }
    let med_c = median(&mut d_crps);
    let med_t = median(&mut d_tw);
    let elapsed = start.elapsed().as_secs_f64();
    let ok = med_c.abs() <= 0.005 && med_t.abs() <= 0.005 && elapsed <= 1200.0;
    report(
        1,
        "sampled vs analytic CRPS training",
        ok,
        &format!("median crps-skill diff {med_c}, twcrps12-skill diff {med_t}, {elapsed:.0}s"),
    );
}

// 2. Body-tail trade-off: a tail-weighted model beats the CRPS model on
// twCRPS12 and loses on CRPS, both directions beyond 2 paired standard
// errors on held-out heavy-tail data.
#[test]
fn criterion_2_body_tail_tradeoff() {
    let ds = generate_synthetic(30_000, Scenario::HeavyTail, 90_002).unwrap();
    let (tr, te) = split(&ds, 20_000);
    let idx: Vec<usize> = (0..tr.len()).collect();
    let stats = NormStats::from_records(&tr.records, &idx).unwrap();
    let tri = tr.inputs(&stats).unwrap();
    let tro = tr.observations();
    let tei = te.inputs(&stats).unwrap();
    let teo = te.observations();
    let data = TrainData::new(&tri, &tro);

    let mut cfg = TrainConfig::linear_default(WeightFunction::Constant);
    cfg.pretrain_epochs = 0;
    cfg.max_epochs = 12;
    cfg.seed = 21;
    let m_crps = train(&tn_linear(), &data, None, &cfg).unwrap().model;

    // Tail model warm-starts from the CRPS fit, as in the usual protocol.
    let mut cfg_tail = cfg.clone();
    cfg_tail.loss = LossSpec::sampled(WeightFunction::indicator(12.0), 250);
    cfg_tail.max_epochs = 8;
    cfg_tail.seed = 22;
    let m_tail = train(&m_crps, &data, None, &cfg_tail).unwrap().model;

    let tw12 = WeightFunction::indicator(12.0);
    let mut d_crps = Vec::with_capacity(teo.len());
    let mut d_tw = Vec::with_capacity(teo.len());
    for (i, (x, &y)) in tei.iter().zip(&teo).enumerate() {
        let ct = crps_closed_form_tn(&m_tail.forward(x), y).unwrap().value;
        let cc = crps_closed_form_tn(&m_crps.forward(x), y).unwrap().value;
        d_crps.push(ct - cc);
        let n1 = NoiseBlock::generate(derive_seed(&[0xb0d1, i as u64, 0]), 500);
        let n2 = NoiseBlock::generate(derive_seed(&[0xb0d1, i as u64, 1]), 500);
        let tt = wcrps_sample_estimate(&m_tail.forward(x), y, &tw12, &n1, &n2)
            .unwrap()
            .value;
        let tc = wcrps_sample_estimate(&m_crps.forward(x), y, &tw12, &n1, &n2)
            .unwrap()
            .value;
        d_tw.push(tt - tc);
    }
    let (mc, sec) = mean_and_se(&d_crps);
    let (mt, set) = mean_and_se(&d_tw);
    let ok = mc > 2.0 * sec && mt < -2.0 * set;
    report(
        2,
        "body-tail trade-off",
        ok,
        &format!("crps diff {mc} (se {sec}), twcrps12 diff {mt} (se {set})"),
    );
}

// 3. Pathwise gradients match central finite differences for every
// shipped (family, weight) pair at 50 random points each.
#[test]
fn criterion_3_gradient_contract() {
    let families = ["tn", "ln", "gev", "tn-ln-static", "tn-ln", "tn-gev"];
    let weights = [
        WeightFunction::Constant,
        WeightFunction::indicator(12.0),
        WeightFunction::preset("sharp_sigmoid").unwrap(),
        WeightFunction::preset("sigmoid").unwrap(),
        WeightFunction::preset("best_cnn").unwrap(),
    ];
    let mut worst = 0.0f64;
    let mut worst_at = String::new();
    let mut ok = true;
    let mut probed = 0usize;
    let mut skipped = 0usize;
    for (fi, fam) in families.iter().enumerate() {
        for (wi, w) in weights.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[3, fi as u64, wi as u64]));
            for point in 0..50 {
                let mut model =
                    Model::Linear(LinearModel::new(FamilySpec::parse(fam).unwrap(), 5).unwrap());
                let mut flat = model.flat_params();
                for p in flat.iter_mut() {
                    *p += 0.3 * std_normal_quantile(rng.gen_range(1e-9..1.0 - 1e-9));
                }
                model.set_flat_params(&flat);
                model.project_constraints();
                // The finite-difference contract only holds in the interior
                // of the constraint set: at a clamped static weight the
                // projected loss has a kink.
                if let Model::Linear(l) = &mut model {
                    if let Some(w) = l.params.static_w.as_mut() {
                        *w = w.clamp(0.05, 0.95);
                    }
                }
                let flat = model.flat_params();

                let z: Vec<f64> = (0..5)
                    .map(|_| std_normal_quantile(rng.gen_range(1e-9..1.0 - 1e-9)))
                    .collect();
                let raw_wind = 5.2 + 2.6 * z[0];
                let x = vec![PredictorVector::new(z, 0, raw_wind)];
                let y = vec![rng.gen_range(0.1..14.0)];
                let ids = vec![0u64];
                let batch = Batch {
                    inputs: &x,
                    observations: &y,
                    record_ids: &ids,
                };
                let loss = LossSpec::sampled(w.clone(), 10);
                let seed = derive_seed(&[31, fi as u64, wi as u64, point]);
                let (f0, grad) =
                    loss_and_grad(&model, &batch, &loss, 0, seed, ExecMode::Sequential).unwrap();
                for i in 0..flat.len() {
                    let base_h = 1e-6 * flat[i].abs().max(1.0);
                    let eval = |v: f64| {
                        let mut f = flat.clone();
                        f[i] = v;
                        let mut m = model.clone();
                        m.set_flat_params(&f);
                        loss_and_grad(&m, &batch, &loss, 0, seed, ExecMode::Sequential)
                            .unwrap()
                            .0
                    };
                    // Two step sizes: round-off can dominate the smaller
                    // step when the loss carries large cancelling terms.
                    let mut best_rel = f64::INFINITY;
                    let mut any_valid = false;
                    let mut passed = false;
                    for mult in [1.0, 10.0] {
                        let h = base_h * mult;
                        let fp = eval(flat[i] + h);
                        let fm = eval(flat[i] - h);
                        // The loss has absolute-value kinks; the contract
                        // only applies when the two one-sided slopes agree
                        // (no kink inside [x-h, x+h]).
                        let fwd = (fp - f0) / h;
                        let bwd = (f0 - fm) / h;
                        if (fwd - bwd).abs() > 1e-3 * fwd.abs().max(bwd.abs()).max(1.0) {
                            continue;
                        }
                        any_valid = true;
                        let fd = (fp - fm) / (2.0 * h);
                        let abs = (grad[i] - fd).abs();
                        let rel = abs / grad[i].abs().max(fd.abs()).max(1e-12);
                        best_rel = best_rel.min(rel);
                        // Resolution floor: round-off of order eps * |f| / h
                        // plus the spread actually observed between the
                        // one-sided slopes.
                        let fd_noise = f64::EPSILON * f0.abs().max(fp.abs()).max(fm.abs()) / h;
                        let floor = 1e-7 + 8.0 * fd_noise + (fwd - bwd).abs();
                        if rel <= 1e-4 || abs <= floor {
                            passed = true;
                            break;
                        }
                    }
                    if !any_valid {
                        skipped += 1;
                        continue;
                    }
                    probed += 1;
                    if !passed {
                        ok = false;
                        if best_rel > worst {
                            worst = best_rel;
                            worst_at = format!("{fam}/{w:?} point {point} param {i}");
                        }
                    }
                }
            }
        }
    }
    // The kink filter must stay a rare exception, not a loophole.
    let skip_ok = skipped * 50 <= probed;
    report(
        3,
        "pathwise gradient contract",
        ok && skip_ok,
        &format!(
            "worst relative error {worst} at {worst_at}; {probed} probes, {skipped} kinks skipped"
        ),
    );
}

// 4. Parameter recovery on well-specified data: training with the
// analytic CRPS loss recovers the generator coefficients within L-inf
// 0.05 in the generator's own standardization coordinates.
#[test]
fn criterion_4_parameter_recovery() {
    let ds = generate_synthetic(40_000, Scenario::WellSpecifiedTn, 90_004).unwrap();
    let truth = ds.truth.clone().unwrap();
    let inputs = ds.inputs(&truth.norm).unwrap();
    let obs = ds.observations();
    let data = TrainData::new(&inputs, &obs);

    let mut cfg = TrainConfig::linear_default(WeightFunction::Constant);
    cfg.loss = LossSpec::ClosedFormCrpsTn;
    cfg.pretrain_epochs = 0;
    cfg.max_epochs = 200;
    cfg.seed = 44;
    let out = train(&tn_linear(), &data, None, &cfg).unwrap();
    let fitted = match out.model {
        Model::Linear(l) => l,
        _ => unreachable!(),
    };
    let mut linf = 0.0f64;
    for (got, want) in fitted
        .params
        .a
        .iter()
        .chain(&fitted.params.b)
        .zip(truth.a.iter().chain(&truth.b))
    {
        linf = linf.max((got - want).abs());
    }
    report(
        4,
        "parameter recovery",
        linf <= 0.05,
        &format!("L-inf {linf} after {} epochs", out.trace.len()),
    );
}

// 5. The n=250 sampled CRPS lands within 4 standard errors of the closed
// form for at least 99% of 1000 random truncated-normal cases.
#[test]
fn criterion_5_sampled_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut hits = 0usize;
    let total = 1000usize;
    for k in 0..total {
        let mu = rng.gen_range(-1.0..10.0);
        let sigma = rng.gen_range(0.3..4.0);
        let y = rng.gen_range(0.0..15.0);
        let d = ForecastDistribution::trunc_normal(mu, sigma);
        let exact = crps_closed_form_tn(&d, y).unwrap().value;
        let n1 = NoiseBlock::generate(derive_seed(&[5, k as u64, 0]), 250);
        let n2 = NoiseBlock::generate(derive_seed(&[5, k as u64, 1]), 250);
        let est = wcrps_sample_estimate(&d, y, &WeightFunction::Constant, &n1, &n2).unwrap();
        if (est.value - exact).abs() <= 4.0 * est.std_error {
            hits += 1;
        }
    }
    report(
        5,
        "sampled estimator vs closed form",
        hits >= 990,
        &format!("{hits}/{total} within 4 standard errors"),
    );
}

// 6. Propriety spot check: under every shipped weight the expected wCRPS
// against a TN(5,2) truth is minimized at the true parameters over a 5x5
// perturbation grid, resolved at 3 standard errors with common random
// numbers. Step sizes grow with tail focus so the Monte Carlo contrast
// stays resolvable.
#[test]
fn criterion_6_propriety_spot_check() {
    let m = 100_000usize;
    let truth = ForecastDistribution::trunc_normal(5.0, 2.0);
    let uy = NoiseBlock::generate(derive_seed(&[6, 0]), m);
    let ux = NoiseBlock::generate(derive_seed(&[6, 1]), m);
    let ux2 = NoiseBlock::generate(derive_seed(&[6, 2]), m);
    let ys = truth.sample_reparam(&uy);

    let cases = [
        (WeightFunction::Constant, 0.25, 0.25),
        (WeightFunction::indicator(12.0), 1.0, 0.75),
        (WeightFunction::preset("sharp_sigmoid").unwrap(), 0.5, 0.5),
        (WeightFunction::preset("sigmoid").unwrap(), 0.5, 0.5),
        (WeightFunction::preset("best_cnn").unwrap(), 0.25, 0.25),
    ];
    // At 1e5 common-random-number draws some near-tail-neutral offsets are
    // statistical ties under the tail-focused weights, so "minimized at the
    // truth" is checked at the Monte Carlo resolution: no offset may beat
    // the truth by more than 3 standard errors, and the bulk of the grid
    // must be strictly resolved as worse.
    let mut ok = true;
    let mut detail = String::new();
    let mut resolved_total = 0usize;
    let mut offsets_total = 0usize;
    for (w, mu_step, sigma_step) in &cases {
        let vy: Vec<f64> = ys.iter().map(|&y| w.chaining_eval(y)).collect();
        let score = |d: &ForecastDistribution| -> Vec<f64> {
            let xs = d.sample_reparam(&ux);
            let xs2 = d.sample_reparam(&ux2);
            (0..m)
                .map(|i| {
                    let v1 = w.chaining_eval(xs[i]);
                    let v2 = w.chaining_eval(xs2[i]);
                    (v1 - vy[i]).abs() - 0.5 * (v1 - v2).abs()
                })
                .collect()
        };
        let s0 = score(&truth);
        let mut resolved = 0usize;
        let mut n_offsets = 0usize;
        for dm in -2i32..=2 {
            for dsig in -2i32..=2 {
                if dm == 0 && dsig == 0 {
                    continue;
                }
                let theta = ForecastDistribution::trunc_normal(
                    5.0 + dm as f64 * mu_step,
                    2.0 + dsig as f64 * sigma_step,
                );
                let s = score(&theta);
                let diffs: Vec<f64> = s.iter().zip(&s0).map(|(a, b)| a - b).collect();
                let (mean, se) = mean_and_se(&diffs);
                n_offsets += 1;
                if mean > 3.0 * se {
                    resolved += 1;
                }
                if mean < -3.0 * se {
                    ok = false;
                    detail = format!(
                        "{w:?} offset ({dm},{dsig}): beats truth by {mean} (se {se})"
                    );
                }
            }
        }
        resolved_total += resolved;
        offsets_total += n_offsets;
    }
    // Tail-focused weights see almost no scoring-relevant draws from a
    // TN(5,2) truth, so their offsets are mostly statistical ties at this
    // draw budget; across all weights the bulk of the grid must still be
    // strictly resolved as worse than the truth.
    if resolved_total * 3 < offsets_total * 2 {
        ok = false;
        detail = format!("only {resolved_total}/{offsets_total} offsets resolved at 3 se");
    }
    if detail.is_empty() {
        detail = format!("{resolved_total}/{offsets_total} offsets resolved above 3 se, none below");
    }
    report(6, "propriety spot check", ok, &detail);
}

// 7. Bagging: the bag cdf is the exact mean of member cdfs, and bagged
// forecasts are less seed-sensitive than single models.
#[test]
fn criterion_7_bagging() {
    // Exactness at 100 probe points.
    let mut members = Vec::new();
    for k in 0..3 {
        let mut lm = LinearModel::new(FamilySpec::TruncNormal, 5).unwrap();
        lm.params.a[0] = 3.0 + k as f64;
        lm.params.b[0] = 0.5 + 0.3 * k as f64;
        members.push(Model::Linear(lm));
    }
    let bag = BaggedModel::new(members.clone()).unwrap();
    let x = PredictorVector::new(vec![0.4, -0.2, 0.1, 0.9, -1.1], 0, 6.2);
    let d_bag = bag_predict(&bag, &x);
    let mut exact = true;
    for j in 0..100 {
        let probe = 0.25 * j as f64;
        let mean: f64 = members
            .iter()
            .map(|mem| mem.forward(&x).cdf(probe).unwrap())
            .sum::<f64>()
            / 3.0;
        if (d_bag.cdf(probe).unwrap() - mean).abs() > 1e-15 {
            exact = false;
        }
    }

    // Dispersion: 5 bags of 10 vs 5 single models across seeds.
    let ds = generate_synthetic(6_000, Scenario::Calibrated, 90_007).unwrap();
    let (tr, te) = split(&ds, 3_000);
    let idx: Vec<usize> = (0..tr.len()).collect();
    let stats = NormStats::from_records(&tr.records, &idx).unwrap();
    let tri = tr.inputs(&stats).unwrap();
    let tro = tr.observations();
    let tei = te.inputs(&stats).unwrap();
    let teo = te.observations();
    let tei = &tei[..1500];
    let teo = &teo[..1500];
    let data = TrainData::new(&tri, &tro);

    let mut cfg = TrainConfig::linear_default(WeightFunction::Constant);
    cfg.pretrain_epochs = 0;
    cfg.max_epochs = 4;

    // Midpoint-rule CRPS by cdf integration, usable for the ensemble.
    let crps_numeric = |d: &ForecastDistribution, y: f64| -> f64 {
        let step = 0.02;
        let mut acc = 0.0;
        for j in 0..1750 {
            let xx = (j as f64 + 0.5) * step;
            let f = d.cdf(xx).unwrap();
            let h = if xx >= y { 1.0 } else { 0.0 };
            acc += (f - h) * (f - h) * step;
        }
        acc
    };
    let mean_test = |f: &dyn Fn(&PredictorVector) -> ForecastDistribution| -> f64 {
        tei.iter()
            .zip(teo)
            .map(|(x, &y)| crps_numeric(&f(x), y))
            .sum::<f64>()
            / teo.len() as f64
    };

    let mut singles = Vec::new();
    let mut bags = Vec::new();
    for s in 0..5u64 {
        let mut c = cfg.clone();
        c.seed = derive_seed(&[71, s]);
        let m = train(&tn_linear(), &data, None, &c).unwrap().model;
        singles.push(mean_test(&|x| m.forward(x)));
        let mut cb = cfg.clone();
        cb.seed = 0;
        let b = bag_train(&tn_linear(), &data, &cb, 10, derive_seed(&[72, s])).unwrap();
        bags.push(mean_test(&|x| bag_predict(&b, x)));
    }
    let sd = |v: &[f64]| {
        let (_, se) = mean_and_se(v);
        se * (v.len() as f64).sqrt()
    };
    let sd_single = sd(&singles);
    let sd_bag = sd(&bags);
    let ok = exact && sd_bag < sd_single;
    report(
        7,
        "bagging exactness and dispersion",
        ok,
        &format!("exact={exact}, sd singles {sd_single}, sd bags {sd_bag}"),
    );
}

// 8. Pareto extraction agrees with quadratic brute-force dominance on
// 1000 random trial sets, ties and divergences included.
#[test]
fn criterion_8_pareto_front_oracle() {
    let dummy_config = TrialConfig {
        family: FamilySpec::TruncNormal,
        weight: WeightFunction::Constant,
        arch: ArchKind::Linear,
        optimizer: OptimizerKind::Adam,
        learning_rate: 0.01,
        batch_size: 64,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut ok = true;
    let mut detail = String::new();
    for set in 0..1000 {
        let n = rng.gen_range(1..=500);
        let trials: Vec<Trial> = (0..n)
            .map(|index| {
                let diverged = rng.gen_range(0.0..1.0) < 0.05;
                // Coarse grid with probability 1/2 to force exact ties.
                let draw = |rng: &mut ChaCha8Rng| {
                    if rng.gen_range(0.0..1.0) < 0.5 {
                        (rng.gen_range(0u32..20) as f64) / 10.0
                    } else {
                        rng.gen_range(0.0..2.0)
                    }
                };
                Trial {
                    index,
                    config: dummy_config.clone(),
                    crps: if diverged { f64::NAN } else { draw(&mut rng) },
                    twcrps12: if diverged { f64::NAN } else { draw(&mut rng) },
                    status: if diverged {
                        TrialStatus::Diverged
                    } else {
                        TrialStatus::Ok
                    },
                }
            })
            .collect();
        let fast: Vec<usize> = pareto_front(&trials).iter().map(|t| t.index).collect();
        let mut brute: Vec<usize> = trials
            .iter()
            .filter(|t| t.status == TrialStatus::Ok)
            .filter(|t| {
                !trials.iter().any(|s| {
                    s.status == TrialStatus::Ok
                        && s.crps <= t.crps
                        && s.twcrps12 <= t.twcrps12
                        && (s.crps < t.crps || s.twcrps12 < t.twcrps12)
                })
            })
            .map(|t| t.index)
            .collect();
        brute.sort_unstable();
        let mut fast_sorted = fast.clone();
        fast_sorted.sort_unstable();
        if fast_sorted != brute {
            ok = false;
            detail = format!("set {set} (n={n}): {} vs {} survivors", fast.len(), brute.len());
            break;
        }
    }
    report(8, "pareto front vs brute force", ok, &detail);
}

// 9. Calibration loop closure: forecasting with the generator's own
// conditional law is reliable (99% binomial bands at 5 and 12 m/s) and
// beats climatology at every threshold up to the 95th percentile.
#[test]
fn criterion_9_calibration_loop() {
    let ds = generate_synthetic(25_000, Scenario::Calibrated, 90_009).unwrap();
    let (tr, te) = split(&ds, 15_000);
    let clim = Climatology::fit(&tr).unwrap();

    let laws: Vec<ForecastDistribution> = te
        .records
        .iter()
        .map(|r| conditional_law(Scenario::Calibrated, &r.predictors))
        .collect();

    let mut ok = true;
    let mut detail = String::new();
    for t in [5.0, 12.0] {
        let probs: Vec<f64> = laws.iter().map(|d| 1.0 - d.cdf(t).unwrap()).collect();
        let outcomes: Vec<bool> = te.records.iter().map(|r| r.observation > t).collect();
        for bin in reliability_diagram(&probs, &outcomes, 10).unwrap() {
            let (Some(p), Some(f)) = (bin.mean_prob, bin.frequency) else {
                continue;
            };
            let n = bin.count as f64;
            // 99% normal band with a continuity term.
            let tol = 2.576 * (p * (1.0 - p) / n).sqrt() + 1.0 / n;
            if (f - p).abs() > tol {
                ok = false;
                detail = format!("threshold {t}: bin at {p} observed {f} (count {})", bin.count);
            }
        }
    }

    let mut sorted = te.observations();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q95 = sorted[((sorted.len() - 1) as f64 * 0.95).round() as usize];
    let thresholds: Vec<f64> = (1..=40)
        .map(|i| i as f64 * 0.5)
        .filter(|&t| t <= q95)
        .collect();
    let model_probs: Vec<Vec<f64>> = thresholds
        .iter()
        .map(|&t| laws.iter().map(|d| 1.0 - d.cdf(t).unwrap()).collect())
        .collect();
    let ref_probs: Vec<Vec<f64>> = thresholds
        .iter()
        .map(|&t| {
            te.records
                .iter()
                .map(|r| clim.prob_exceed(&r.station, t).unwrap())
                .collect()
        })
        .collect();
    let outcomes: Vec<Vec<bool>> = thresholds
        .iter()
        .map(|&t| te.records.iter().map(|r| r.observation > t).collect())
        .collect();
    let bands = bootstrap_bss(
        &model_probs,
        &ref_probs,
        &outcomes,
        &thresholds,
        1000,
        99,
        ExecMode::default(),
    )
    .unwrap();
    for b in &bands {
        if !(b.median > 0.0) {
            ok = false;
            detail = format!("threshold {}: bootstrap BSS median {}", b.threshold, b.median);
        }
    }
    report(9, "calibration loop closure", ok, &detail);
}
