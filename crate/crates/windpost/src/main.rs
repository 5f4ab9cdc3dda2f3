//! Command-line workflows: synthetic data generation, training, bagging,
//! evaluation, random search, and the analytic-vs-sampled CRPS comparison.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use windpost::artifact::{load_artifact, save_artifact, write_manifest, Artifact};
use windpost::data::{
    generate_synthetic, load_csv, split_folds, write_csv, Dataset, FoldSpec, NormStats,
    Scenario, N_PREDICTORS,
};
use windpost::dists::derive_seed;
use windpost::error::Error;
use windpost::exec::configure_threads;
use windpost::hyperopt::{
    pareto_front, random_search, write_front_json, write_trials_csv, SearchSpace,
};
use windpost::optim::{
    dataset_loss, train, write_trace_csv, LossSpec, TrainConfig, TrainData,
};
use windpost::params::{DenseConfig, DenseModel, FamilySpec, LinearModel, Model};
use windpost::scoring::WeightFunction;
use windpost::verify::{
    evaluate, write_report, Climatology, EvalConfig, Forecaster, ReferenceSpec,
};
use windpost::Result;

#[derive(Parser)]
#[command(
    name = "windpost",
    version,
    about = "Distributional post-processing of wind-speed forecasts"
)]
struct Cli {
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Forecast-observation archive (CSV, fixed schema).
    #[arg(long)]
    data: PathBuf,
    /// Fold specification JSON; defaults to the standard chronological
    /// winter folds.
    #[arg(long)]
    folds: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Distribution family: tn, ln, gev, tn-ln, tn-gev (add -static for a
    /// static mixture weight).
    #[arg(long, default_value = "tn")]
    family: String,
    /// Weight-function preset: constant, indicator12, sharp_sigmoid,
    /// sigmoid, best_cnn.
    #[arg(long, default_value = "constant")]
    loss: String,
    /// Use the closed-form truncated-normal CRPS loss instead of the
    /// sampled estimator (tn family only).
    #[arg(long, default_value_t = false)]
    analytic: bool,
    /// Model architecture: linear or dense.
    #[arg(long, default_value = "linear")]
    arch: String,
    /// TrainConfig JSON overriding the architecture defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic forecast archive.
    Synth {
        /// well-specified-tn, heavy-tail, or calibrated.
        #[arg(long)]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on the training folds and write an artifact.
    Train(TrainArgs),
    /// Train a bag of K members with consecutive seeds.
    Bag {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long, default_value_t = windpost::bagging::DEFAULT_BAG_SIZE)]
        k: usize,
    },
    /// Evaluate an artifact on the test split and write report files.
    Evaluate {
        #[arg(long)]
        artifact: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        /// climatology, self, or a path to a reference artifact.
        #[arg(long, default_value = "climatology")]
        reference: String,
        /// Evaluate on every record instead of the test split.
        #[arg(long, default_value_t = false)]
        all_records: bool,
        #[arg(long, default_value_t = 10_000)]
        bootstrap: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random hyperparameter search with Pareto-front extraction.
    Search {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 20)]
        n_trials: usize,
        /// SearchSpace JSON overriding the default ranges.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Paired training runs on the analytic vs sampled CRPS loss; writes
    /// skill-score box-plot data.
    CompareCrps {
        /// Records of calibrated synthetic data to generate.
        #[arg(long, default_value_t = 25_000)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    configure_threads(cli.jobs);
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_fold_spec(path: &Option<PathBuf>) -> Result<FoldSpec> {
    let spec = match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => FoldSpec::standard(),
    };
    spec.validate()?;
    Ok(spec)
}

/// Training records (all training folds pooled) and optional validation
/// (the last fold) split off when early stopping needs one.
fn training_split(
    ds: &Dataset,
    spec: &FoldSpec,
    hold_out_validation: bool,
) -> Result<(Vec<usize>, Option<Vec<usize>>)> {
    let fa = split_folds(ds, spec)?;
    let n_folds = fa.folds.len();
    if n_folds == 0 || fa.folds.iter().all(Vec::is_empty) {
        return Err(Error::FoldSpec(
            "no records fall inside the training folds".into(),
        ));
    }
    if hold_out_validation && n_folds >= 2 {
        let val = fa.folds[n_folds - 1].clone();
        let train: Vec<usize> = fa.folds[..n_folds - 1]
            .iter()
            .flat_map(|f| f.iter().copied())
            .collect();
        if train.is_empty() || val.is_empty() {
            return Err(Error::FoldSpec(
                "validation hold-out leaves an empty split".into(),
            ));
        }
        Ok((train, Some(val)))
    } else {
        Ok((fa.folds.into_iter().flatten().collect(), None))
    }
}

fn resolve_train_config(args: &TrainArgs) -> Result<(TrainConfig, bool)> {
    let dense = match args.arch.as_str() {
        "linear" => false,
        "dense" => true,
        other => {
            return Err(Error::Config(format!(
                "unknown architecture '{other}' (expected linear or dense)"
            )))
        }
    };
    let weight = WeightFunction::preset(&args.loss)?;
    let mut cfg = match args.config {
        Some(ref p) => serde_json::from_str::<TrainConfig>(&std::fs::read_to_string(p)?)?,
        None if dense => TrainConfig::dense_default(weight),
        None => TrainConfig::linear_default(weight),
    };
    if args.analytic {
        cfg.loss = LossSpec::ClosedFormCrpsTn;
    }
    if let Some(e) = args.epochs {
        cfg.max_epochs = e;
    }
    cfg.seed = args.seed;
    cfg.validate()?;
    Ok((cfg, dense))
}

fn init_model(family: &str, dense: bool, seed: u64) -> Result<Model> {
    let family = FamilySpec::parse(family)?;
    Ok(if dense {
        Model::Dense(DenseModel::new(
            family,
            N_PREDICTORS,
            DenseConfig::default(),
            derive_seed(&[seed, 0x1417]),
        )?)
    } else {
        Model::Linear(LinearModel::new(family, N_PREDICTORS)?)
    })
}

fn run_train(args: &TrainArgs, bag_size: Option<usize>) -> Result<()> {
    let (cfg, dense) = resolve_train_config(args)?;
    let ds = load_csv(&args.data.data)?;
    let spec = load_fold_spec(&args.data.folds)?;
    let (train_idx, val_idx) = training_split(&ds, &spec, cfg.patience > 0)?;
    let stats = NormStats::from_records(&ds.records, &train_idx)?;
    let train_ds = ds.subset(&train_idx);
    let ti = train_ds.inputs(&stats)?;
    let to = train_ds.observations();
    let train_data = TrainData::new(&ti, &to);
    let val_ds = val_idx.map(|idx| ds.subset(&idx));
    let (vi, vo) = match &val_ds {
        Some(v) => (v.inputs(&stats)?, v.observations()),
        None => (Vec::new(), Vec::new()),
    };
    let val_data = val_ds.as_ref().map(|_| TrainData::new(&vi, &vo));

    let init = init_model(&args.family, dense, args.seed)?;
    std::fs::create_dir_all(&args.out)?;
    let artifact_path = args.out.join("artifact.json");
    let trace_path = args.out.join("trace.csv");

    let (forecaster, best_epoch, trace) = match bag_size {
        None => {
            let out = train(&init, &train_data, val_data.as_ref(), &cfg)?;
            (
                Forecaster::Single(out.model),
                out.best_epoch,
                Some(out.trace),
            )
        }
        Some(k) => {
            let mut bag_cfg = cfg.clone();
            bag_cfg.patience = 0;
            let bag = windpost::bagging::bag_train(&init, &train_data, &bag_cfg, k, args.seed)?;
            (Forecaster::Bag(bag), bag_cfg.max_epochs, None)
        }
    };

    save_artifact(
        &Artifact {
            forecaster,
            norm_stats: stats,
            train_config: Some(cfg.clone()),
            best_epoch: Some(best_epoch),
        },
        &artifact_path,
    )?;
    let mut outputs = vec![artifact_path];
    if let Some(trace) = trace {
        write_trace_csv(&trace, &trace_path)?;
        outputs.push(trace_path);
    }
    write_manifest(
        &args.out,
        if bag_size.is_some() { "bag" } else { "train" },
        serde_json::json!({
            "family": args.family,
            "arch": args.arch,
            "loss": args.loss,
            "analytic": args.analytic,
            "bag_size": bag_size,
            "train_config": cfg,
        }),
        args.seed,
        &outputs,
    )?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_evaluate(
    artifact: &Path,
    data: &DataArgs,
    reference: &str,
    all_records: bool,
    bootstrap: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let art = load_artifact(artifact)?;
    let ds = load_csv(&data.data)?;
    let spec = load_fold_spec(&data.folds)?;
    let fa = split_folds(&ds, &spec)?;
    let (eval_ds, train_ds) = if all_records {
        (ds.clone(), ds.clone())
    } else {
        if fa.test.is_empty() {
            return Err(Error::Validation(
                "no records fall inside the test ranges; pass --all-records to evaluate \
                 the whole file"
                    .into(),
            ));
        }
        let train_idx: Vec<usize> = fa.folds.iter().flatten().copied().collect();
        let clim_base = if train_idx.is_empty() {
            ds.subset(&fa.test)
        } else {
            ds.subset(&train_idx)
        };
        (ds.subset(&fa.test), clim_base)
    };

    let clim;
    let ref_art;
    let reference_spec = match reference {
        "climatology" => {
            clim = Climatology::fit(&train_ds)?;
            ReferenceSpec::Climatology(&clim)
        }
        "self" => ReferenceSpec::SelfReference,
        path => {
            ref_art = load_artifact(Path::new(path))?;
            ReferenceSpec::Model(&ref_art.forecaster)
        }
    };

    let cfg = EvalConfig {
        bootstrap,
        seed,
        ..EvalConfig::default()
    };
    let report = evaluate(
        &art.forecaster,
        &eval_ds,
        &art.norm_stats,
        &reference_spec,
        &cfg,
    )?;
    write_report(&report, out)?;
    let outputs: Vec<PathBuf> = [
        "report.json",
        "bss_curve.csv",
        "reliability_5.csv",
        "reliability_12.csv",
        "sharpness.csv",
        "bss_curve.svg",
    ]
    .iter()
    .map(|f| out.join(f))
    .collect();
    write_manifest(
        out,
        "evaluate",
        serde_json::json!({
            "artifact": artifact.to_string_lossy(),
            "reference": reference,
            "all_records": all_records,
            "eval_config": cfg,
        }),
        seed,
        &outputs,
    )?;
    Ok(())
}

fn run_search(
    data: &DataArgs,
    n_trials: usize,
    config: &Option<PathBuf>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let ds = load_csv(&data.data)?;
    let spec = load_fold_spec(&data.folds)?;
    let fa = split_folds(&ds, &spec)?;
    let space: SearchSpace = match config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => SearchSpace::default(),
    };
    let trials = random_search(
        &space,
        n_trials,
        &ds,
        &fa,
        seed,
        windpost::exec::ExecMode::default(),
    )?;
    let front = pareto_front(&trials);
    std::fs::create_dir_all(out)?;
    let trials_path = out.join("trials.csv");
    let front_path = out.join("front.json");
    write_trials_csv(&trials, &trials_path)?;
    write_front_json(&front, &front_path)?;
    write_manifest(
        out,
        "search",
        serde_json::json!({ "n_trials": n_trials, "space": space }),
        seed,
        &[trials_path, front_path],
    )?;
    Ok(())
}

fn run_compare_crps(
    n: usize,
    pairs: usize,
    seed: u64,
    epochs: Option<usize>,
    out: &Path,
) -> Result<()> {
    let ds = generate_synthetic(n, Scenario::Calibrated, seed)?;
    let spec = FoldSpec::standard();
    let fa = split_folds(&ds, &spec)?;
    let train_idx: Vec<usize> = fa.folds.iter().flatten().copied().collect();
    let stats = NormStats::from_records(&ds.records, &train_idx)?;
    let train_ds = ds.subset(&train_idx);
    let test_ds = ds.subset(&fa.test);
    let ti = train_ds.inputs(&stats)?;
    let to = train_ds.observations();
    let train_data = TrainData::new(&ti, &to);
    let vi = test_ds.inputs(&stats)?;
    let vo = test_ds.observations();
    let test_data = TrainData::new(&vi, &vo);

    let mut base_cfg = TrainConfig::linear_default(WeightFunction::Constant);
    base_cfg.pretrain_epochs = 0;
    if let Some(e) = epochs {
        base_cfg.max_epochs = e;
    }
    let init = Model::Linear(LinearModel::new(FamilySpec::TruncNormal, N_PREDICTORS)?);

    // Fixed reference model for the skill scores: one sampled-loss run on
    // its own seed stream.
    let mut ref_cfg = base_cfg.clone();
    ref_cfg.seed = derive_seed(&[seed, 0x4ef5]);
    let reference = train(&init, &train_data, None, &ref_cfg)?.model;
    let eval_seed = derive_seed(&[seed, 0xe7a1]);
    let crps = LossSpec::ClosedFormCrpsTn;
    let twcrps = LossSpec::sampled(WeightFunction::indicator(12.0), 1000);
    let mode = windpost::exec::ExecMode::default();
    let ref_crps = dataset_loss(&reference, &test_data, &crps, eval_seed, mode)?;
    let ref_tw = dataset_loss(&reference, &test_data, &twcrps, eval_seed, mode)?;

    std::fs::create_dir_all(out)?;
    let csv_path = out.join("compare_crps.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record([
        "pair",
        "crps_skill_analytic",
        "crps_skill_sampled",
        "twcrps12_skill_analytic",
        "twcrps12_skill_sampled",
    ])?;
    let med = |mut v: Vec<f64>| -> f64 {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    let mut skills: Vec<[f64; 4]> = Vec::with_capacity(pairs);
    for p in 0..pairs {
        let mut row = [0.0f64; 4];
        for (slot, analytic) in [(0usize, true), (1usize, false)] {
            let mut cfg = base_cfg.clone();
            cfg.seed = derive_seed(&[seed, p as u64]);
            cfg.loss = if analytic {
                LossSpec::ClosedFormCrpsTn
            } else {
                LossSpec::sampled(WeightFunction::Constant, 250)
            };
            let model = train(&init, &train_data, None, &cfg)?.model;
            let c = dataset_loss(&model, &test_data, &crps, eval_seed, mode)?;
            let t = dataset_loss(&model, &test_data, &twcrps, eval_seed, mode)?;
            row[slot] = 1.0 - c / ref_crps;
            row[slot + 2] = 1.0 - t / ref_tw;
        }
        w.write_record([
            p.to_string(),
            format!("{}", row[0]),
            format!("{}", row[1]),
            format!("{}", row[2]),
            format!("{}", row[3]),
        ])?;
        skills.push(row);
    }
    w.flush()?;

    let summary = serde_json::json!({
        "pairs": pairs,
        "median_crps_skill_analytic": med(skills.iter().map(|r| r[0]).collect()),
        "median_crps_skill_sampled": med(skills.iter().map(|r| r[1]).collect()),
        "median_twcrps12_skill_analytic": med(skills.iter().map(|r| r[2]).collect()),
        "median_twcrps12_skill_sampled": med(skills.iter().map(|r| r[3]).collect()),
    });
    let summary_path = out.join("summary.json");
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)?;
    write_manifest(
        out,
        "compare-crps",
        serde_json::json!({ "n": n, "pairs": pairs, "epochs": epochs }),
        seed,
        &[csv_path, summary_path],
    )?;
    Ok(())
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            scenario,
            n,
            seed,
            out,
        } => {
            let ds = generate_synthetic(n, Scenario::parse(&scenario)?, seed)?;
            if let Some(dir) = out.parent() {
                if !dir.as_os_str().is_empty() {
                    std::fs::create_dir_all(dir)?;
                }
            }
            write_csv(&ds, &out)?;
            if let Some(dir) = out.parent() {
                let dir = if dir.as_os_str().is_empty() {
                    Path::new(".")
                } else {
                    dir
                };
                write_manifest(
                    dir,
                    "synth",
                    serde_json::json!({ "scenario": scenario, "n": n }),
                    seed,
                    &[out.clone()],
                )?;
            }
            Ok(())
        }
        Command::Train(args) => run_train(&args, None),
        Command::Bag { train, k } => run_train(&train, Some(k)),
        Command::Evaluate {
            artifact,
            data,
            reference,
            all_records,
            bootstrap,
            seed,
            out,
        } => run_evaluate(
            &artifact,
            &data,
            &reference,
            all_records,
            bootstrap,
            seed,
            &out,
        ),
        Command::Search {
            data,
            n_trials,
            config,
            seed,
            out,
        } => run_search(&data, n_trials, &config, seed, &out),
        Command::CompareCrps {
            n,
            pairs,
            seed,
            epochs,
            out,
        } => run_compare_crps(n, pairs, seed, epochs, &out),
    }
}
