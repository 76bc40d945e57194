//! `mtj`: synthesize phantom datasets, train the attention U-Net, predict
//! junction positions, and evaluate them against specialist labels.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use mtj_core::dataio::{load_labels, load_manifest, Instrument, LabelRecord};
use mtj_core::localizer::{read_predictions, write_predictions, FilterCase, PredictionRow};
use mtj_core::metrics::{evaluate, write_figures, write_ledger, EvaluateOptions, Evaluation};
use mtj_core::network::{load_weights, NetworkConfig};
use mtj_core::pipeline::{
    curriculum_stages, frame_keys, load_frame, predict_frame, prediction_row, synthesize, SynthSpec, TargetSource,
    GROUND_TRUTH_ID, SPECIALIST_NOISE_PX,
};
use mtj_core::trainer::{train_curriculum, write_training_log, TrainConfig};

#[derive(Debug, Parser, Serialize)]
#[command(
    name = "mtj",
    version,
    about = "Muscle-tendon junction tracking on ultrasound frames"
)]
struct Cli {
    /// Root seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for prediction.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Directory receiving every output of the command.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "snake_case", tag = "command")]
enum Command {
    /// Write a synthetic phantom dataset.
    Synth(SynthArgs),
    /// Train the network over a cumulative curriculum of domains.
    Train(TrainArgs),
    /// Localize the junction in every frame of a manifest.
    Predict(PredictArgs),
    /// Filter predictions and compare them with the specialist labels.
    Evaluate(EvaluateArgs),
    /// Re-render figures and a summary from an evaluation.
    Report(ReportArgs),
}

#[derive(Debug, Args, Serialize)]
struct SynthArgs {
    /// Phantoms per domain.
    #[arg(long, short = 'n')]
    n: usize,
    #[arg(long, value_delimiter = ',', default_value = "SyntheticA")]
    domains: Vec<Instrument>,
    #[arg(long, default_value_t = 128)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    /// Per-axis SD of the simulated specialists, in label pixels.
    #[arg(long, default_value_t = SPECIALIST_NOISE_PX)]
    specialist_noise: f64,
}

#[derive(Debug, Args, Serialize)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Label CSV; defaults to the one named in the manifest.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Domain sequence, expanded cumulatively (A,B trains {A} then {A,B}).
    #[arg(long, value_delimiter = ',', required = true)]
    stages: Vec<Instrument>,
    /// JSON training configuration; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, default_value_t = 4)]
    depth: usize,
    #[arg(long, default_value_t = 64)]
    base_filters: usize,
    /// Network input width; frames are cropped and resized to it.
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 128)]
    height: usize,
    /// Train without random affine augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Training target: an annotator id, or `mean` for the specialist mean.
    #[arg(long, default_value = "mean")]
    target: String,
}

#[derive(Debug, Args, Serialize)]
struct PredictArgs {
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Only frames of these instruments.
    #[arg(long, value_delimiter = ',')]
    domains: Option<Vec<Instrument>>,
    /// Output file name inside the output directory.
    #[arg(long, default_value = "predictions.csv")]
    out: String,
}

#[derive(Debug, Args, Serialize)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Specialist label CSV; defaults to the one named in the manifest.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Annotators that are not specialists.
    #[arg(long, value_delimiter = ',', default_value = GROUND_TRUTH_ID)]
    exclude_annotators: Vec<String>,
    /// Prediction grid width for the Bland-Altman abscissa.
    #[arg(long, default_value_t = 256.0)]
    image_width: f64,
    #[arg(long, default_value_t = 128.0)]
    image_height: f64,
}

#[derive(Debug, Args, Serialize)]
struct ReportArgs {
    /// `evaluation.json` written by `evaluate`.
    #[arg(long)]
    evaluation: PathBuf,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    tool: &'static str,
    version: &'static str,
    seed: u64,
    threads: usize,
    out_dir: &'a Path,
    #[serde(flatten)]
    command: &'a Command,
    resolved: serde_json::Value,
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_run(cli: &Cli, resolved: serde_json::Value) -> anyhow::Result<()> {
    write_json(
        &cli.out_dir.join("run.json"),
        &RunRecord {
            tool: "mtj",
            version: env!("CARGO_PKG_VERSION"),
            seed: cli.seed,
            threads: cli.threads,
            out_dir: &cli.out_dir,
            command: &cli.command,
            resolved,
        },
    )
}

fn labels_for(manifest_labels: Option<PathBuf>, explicit: &Option<PathBuf>) -> anyhow::Result<Vec<LabelRecord>> {
    let path = match (explicit, manifest_labels) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => p,
        (None, None) => bail!(mtj_core::Error::InvalidInput(
            "no label file: pass --labels or name one in the manifest".into()
        )),
    };
    Ok(load_labels(&path)?)
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> anyhow::Result<()> {
    let mut spec = SynthSpec::new(args.n, args.domains.clone(), args.width, args.height, cli.seed);
    spec.specialist_noise_px = args.specialist_noise;
    let manifest = synthesize(&spec, &cli.out_dir)?;
    println!(
        "wrote {} frames in {} videos to {}",
        args.n * manifest.entries.len(),
        manifest.entries.len(),
        cli.out_dir.display()
    );
    write_run(cli, serde_json::to_value(&spec)?)
}

fn cmd_train(cli: &Cli, args: &TrainArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| mtj_core::Error::InvalidInput(format!("{}: {e}", p.display())))?
        }
        None => TrainConfig::default(),
    };
    config.rng_seed = cli.seed;
    if let Some(e) = args.epochs {
        config.epochs_per_stage = e;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    config.validate()?;
    let network = NetworkConfig {
        depth: args.depth,
        base_filters: args.base_filters,
        input_w: args.width,
        input_h: args.height,
        rng_seed: cli.seed,
        ..NetworkConfig::default()
    };
    network.validate()?;

    let manifest = load_manifest(&args.manifest)?;
    let labels = labels_for(manifest.labels_path(), &args.labels)?;
    let source = TargetSource::parse(&args.target);
    let stages = curriculum_stages(&manifest, &labels, &args.stages, args.width, args.height, &source)?;
    write_run(
        cli,
        serde_json::json!({ "train": config, "network": network, "augment": !args.no_augment }),
    )?;

    let checkpoints = cli.out_dir.join("checkpoints");
    let started = Instant::now();
    let mut observer = |r: &mtj_core::trainer::EpochRecord| {
        println!(
            "stage {} epoch {} mean_loss {:.6} elapsed {:.0}s",
            r.stage,
            r.epoch,
            r.mean_loss,
            started.elapsed().as_secs_f64()
        );
    };
    let outcome = train_curriculum(
        &network,
        &stages,
        &config,
        !args.no_augment,
        Some(&checkpoints),
        &mut observer,
    )?;
    let log_path = cli.out_dir.join("training_log.csv");
    let mut log = BufWriter::new(File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?);
    write_training_log(&mut log, &outcome.log)?;
    log.flush()?;
    for c in &outcome.checkpoints {
        println!("checkpoint {}", c.display());
    }
    Ok(())
}

fn cmd_predict(cli: &Cli, args: &PredictArgs) -> anyhow::Result<()> {
    let weights = load_weights(&args.weights)?;
    let (w, h) = (weights.config().input_w, weights.config().input_h);
    let manifest = load_manifest(&args.manifest)?;
    let keys = frame_keys(&manifest, args.domains.as_deref())?;
    write_run(
        cli,
        serde_json::json!({ "network": weights.config(), "frames": keys.len() }),
    )?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.max(1))
        .build()?;
    let started = Instant::now();
    let rows: Vec<PredictionRow> = pool.install(|| {
        keys.par_iter()
            .map(|(entry, key)| {
                let frame = load_frame(&manifest, &manifest.entries[*entry], key.frame_idx, w, h)?;
                let (pred, verdict) = predict_frame(&weights, &frame)?;
                Ok(prediction_row(key, &pred, &verdict, w, h))
            })
            .collect::<mtj_core::Result<Vec<_>>>()
    })?;
    let seconds = started.elapsed().as_secs_f64();

    let path = cli.out_dir.join(&args.out);
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_predictions(BufWriter::new(file), &rows)?;
    let flagged = rows.iter().filter(|r| r.filter_case != FilterCase::None).count();
    println!(
        "predicted {} frames ({flagged} flagged) into {}",
        rows.len(),
        path.display()
    );
    println!(
        "sec_per_frame={}",
        if rows.is_empty() {
            0.0
        } else {
            seconds / rows.len() as f64
        }
    );
    Ok(())
}

fn print_summary(ev: &Evaluation) {
    let r = &ev.report;
    println!("frames kept {} of {}", r.n_frames, r.n_predictions);
    for case in [
        FilterCase::Border,
        FilterCase::LowConfidencePad,
        FilterCase::SpecialistInconsistent,
    ] {
        println!("excluded {case}: {}", r.exclusions.get(case));
    }
    println!(
        "model rmse {:.3} mm, sem {:.3} mm, mae {:.3} mm",
        r.model.rmse, r.model.sem, r.model.mae
    );
    println!(
        "specialist rmse {:.3} +- {:.3} mm",
        r.specialist_rmse_mm.mean, r.specialist_rmse_mm.sd
    );
    match &r.icc {
        Some(icc) => println!("icc {:.3} [{:.3}, {:.3}]", icc.value, icc.ci_low, icc.ci_high),
        None => println!("icc not available ({} complete rows)", r.icc_rows),
    }
}

fn cmd_evaluate(cli: &Cli, args: &EvaluateArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&args.manifest)?;
    let labels = labels_for(manifest.labels_path(), &args.labels)?;
    let file = File::open(&args.predictions).with_context(|| format!("opening {}", args.predictions.display()))?;
    let predictions = read_predictions(file)?;
    let options = EvaluateOptions {
        exclude_annotators: args.exclude_annotators.clone(),
        image_width: args.image_width,
        image_height: args.image_height,
        ..EvaluateOptions::default()
    };
    write_run(cli, serde_json::to_value(&options)?)?;
    let ev = evaluate(&predictions, &labels, &manifest, &options)?;

    let ledger_path = cli.out_dir.join("excluded_frames.csv");
    let mut ledger = BufWriter::new(File::create(&ledger_path)?);
    write_ledger(&mut ledger, &ev.ledger)?;
    ledger.flush()?;
    write_json(&cli.out_dir.join("report.json"), &ev.report)?;
    write_json(&cli.out_dir.join("evaluation.json"), &ev)?;
    write_figures(&ev, cli.out_dir.join("figures"))?;
    print_summary(&ev);
    Ok(())
}

fn cmd_report(cli: &Cli, args: &ReportArgs) -> anyhow::Result<()> {
    let text =
        std::fs::read_to_string(&args.evaluation).with_context(|| format!("reading {}", args.evaluation.display()))?;
    let ev: Evaluation = serde_json::from_str(&text)
        .map_err(|e| mtj_core::Error::InvalidInput(format!("{}: {e}", args.evaluation.display())))?;
    write_run(cli, serde_json::Value::Null)?;
    write_figures(&ev, cli.out_dir.join("figures"))?;

    let r = &ev.report;
    let mut md = String::from("# Evaluation summary\n\n| statistic | value |\n|---|---|\n");
    let mut row = |k: &str, v: String| md.push_str(&format!("| {k} | {v} |\n"));
    row("frames kept", format!("{} of {}", r.n_frames, r.n_predictions));
    row("excluded (border)", r.exclusions.border.to_string());
    row(
        "excluded (low confidence near border)",
        r.exclusions.low_confidence_pad.to_string(),
    );
    row(
        "excluded (specialists inconsistent)",
        r.exclusions.specialist_inconsistent.to_string(),
    );
    row("model RMSE [mm]", format!("{:.3}", r.model.rmse));
    row("model SEM [mm]", format!("{:.3}", r.model.sem));
    row("model MAE [mm]", format!("{:.3}", r.model.mae));
    row(
        "specialist RMSE [mm]",
        format!("{:.3} ± {:.3}", r.specialist_rmse_mm.mean, r.specialist_rmse_mm.sd),
    );
    if let Some(icc) = &r.icc {
        row(
            "ICC(A,k)",
            format!("{:.3} [{:.3}, {:.3}]", icc.value, icc.ci_low, icc.ci_high),
        );
    }
    row("Bland-Altman bias x [mm]", format!("{:.3}", r.bland_altman.x.bias_mm));
    row("Bland-Altman bias y [mm]", format!("{:.3}", r.bland_altman.y.bias_mm));
    for b in &r.breakdowns {
        for (g, s) in &b.groups {
            row(
                &format!("RMSE {} = {g} [mm]", b.grouping),
                format!("{:.3} (n = {})", s.rmse, s.n),
            );
        }
    }
    let path = cli.out_dir.join("summary.md");
    std::fs::write(&path, md).with_context(|| format!("writing {}", path.display()))?;
    print_summary(&ev);
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    std::fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    match &cli.command {
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Train(a) => cmd_train(cli, a),
        Command::Predict(a) => cmd_predict(cli, a),
        Command::Evaluate(a) => cmd_evaluate(cli, a),
        Command::Report(a) => cmd_report(cli, a),
    }
}

/// 2 for bad data, 3 for numerical failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<mtj_core::Error>()) {
        Some(e) if e.is_numeric() => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if cli.threads == 0 {
        eprintln!("error: --threads must be at least 1");
        return ExitCode::from(1);
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
