//! `next`: trajectory synthesis, diagnostics, predictor training, and
//! checkpoint extrapolation as one deterministic pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error. Every
//! subcommand that writes files also writes a config echo with the fully
//! resolved flag values; timestamps live only there.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use next_core::dataset::{extract_dataset, load_dataset, save_dataset, ExtractOptions, SigmaTransform};
use next_core::extrapolate::{
    comparison_csv, extrapolate_checkpoint, frobenius_errors, linear_extrapolate, ComparisonRow,
    LinearVariant,
};
use next_core::lab::{
    analytic_ground_truth, gen_analytic_trajectory, gen_toy_training_trajectory,
    load_analytic_run, DynamicsKind, DynamicsSpec, ToyTrainSpec, TrainMode, MANIFEST_FILE,
};
use next_core::predictor::{load_bundle, save_bundle, train, TrainOptions};
use next_core::store::{load_checkpoint, load_manifest, save_checkpoint_f64, Trajectory};

#[derive(Parser)]
#[command(name = "next", version, about = "low-rank checkpoint trajectory extrapolation")]
struct Cli {
    /// Seed for all deterministic randomness
    #[arg(long, global = true, default_value_t = 17)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trajectory (analytic dynamics or a toy training run)
    Synth(SynthArgs),
    /// Summarize a checkpoint file: names, shapes, norms
    Inspect(InspectArgs),
    /// Trajectory diagnostics
    #[command(subcommand)]
    Diagnose(DiagnoseCmd),
    /// Extract the predictor training dataset from a trajectory
    Dataset(DatasetArgs),
    /// Train the trajectory predictor on an extracted dataset
    Train(TrainArgs),
    /// Extrapolate the last checkpoint with a trained predictor
    Extrapolate(ExtrapolateArgs),
    /// Extrapolate across a grid of extending coefficients
    Sweep(SweepArgs),
    /// Compare the trained pipeline against the linear baselines
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Linear,
    Saturating,
    Logistic,
    Toy,
}

#[derive(Args)]
struct SynthArgs {
    /// Dynamics family, or `toy` for an actual gradient-descent run
    #[arg(long, value_enum)]
    kind: KindArg,
    /// Parameter shapes as `MxN,MxN,...`
    #[arg(long, default_value = "16x12,12x16,8x10,10x8")]
    shapes: String,
    /// Number of saved checkpoints (analytic kinds)
    #[arg(long, default_value_t = 15)]
    checkpoints: usize,
    /// Per-entry Gaussian noise std (analytic kinds)
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1.0)]
    amplitude: f64,
    #[arg(long, default_value_t = 5.0)]
    timescale: f64,
    /// Toy-run trainable mode
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    #[arg(long, default_value_t = 4)]
    lora_rank: usize,
    /// Toy-run optimizer steps
    #[arg(long, default_value_t = 150)]
    steps: usize,
    /// Toy-run checkpoint interval
    #[arg(long, default_value_t = 10)]
    interval: usize,
    /// Toy-run learning rate
    #[arg(long, default_value_t = 0.05)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum, PartialEq)]
enum ModeArg {
    Full,
    Lora,
}

#[derive(Args)]
struct InspectArgs {
    /// Checkpoint file to summarize
    #[arg(long)]
    ckpt: PathBuf,
}

#[derive(Subcommand)]
enum DiagnoseCmd {
    /// Energy-ratio series of the global deltas (CSV)
    Energy(EnergyArgs),
    /// Per-parameter R^2 of affine extrapolation (CSV)
    R2(R2Args),
    /// Steps-per-improvement ratio, printed as a single decimal
    Icer(IcerArgs),
}

#[derive(Args)]
struct EnergyArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct R2Args {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, default_value_t = 10)]
    fit: usize,
    #[arg(long, default_value_t = 5)]
    predict: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct IcerArgs {
    #[arg(long)]
    steps: u64,
    #[arg(long)]
    baseline: f64,
    #[arg(long)]
    new: f64,
}

#[derive(Args)]
struct DatasetArgs {
    /// Trajectory manifest
    #[arg(long)]
    traj: PathBuf,
    /// Extrapolation distance in checkpoints
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// Store sigma examples under a log1p transform
    #[arg(long, default_value_t = false)]
    sigma_log1p: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset file from `dataset`
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long, default_value_t = 256)]
    hidden: usize,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    holdout: f64,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtrapolateArgs {
    #[arg(long)]
    traj: PathBuf,
    /// Trained predictor bundle
    #[arg(long)]
    bundle: PathBuf,
    /// Extending coefficient
    #[arg(long, default_value_t = 1.5)]
    alpha: f64,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    /// Comma-separated extending coefficients
    #[arg(long, default_value = "0.5,1.0,1.5,2.0,2.5,3.0,3.5,4.0")]
    alphas: String,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    hidden: usize,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    /// Also score the global-slope linear baseline
    #[arg(long, default_value_t = false)]
    global_slope: bool,
    #[arg(long)]
    out: PathBuf,
}

/// Any data-level failure maps to exit code 2 with a one-line diagnostic.
struct DataError(String);

impl<E: std::fmt::Display> From<E> for DataError {
    fn from(e: E) -> Self {
        DataError(e.to_string())
    }
}

type CmdResult = Result<(), DataError>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own message; help/version requests are not errors
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };

    if let Ok(threads) = std::env::var("NEXT_THREADS") {
        match threads.parse::<usize>() {
            Ok(0) => {} // auto
            Ok(n) => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: could not cap threads: {e}");
                }
            }
            Err(_) => eprintln!("warning: ignoring unparseable NEXT_THREADS='{threads}'"),
        }
    }

    let outcome = match &cli.command {
        Command::Synth(args) => run_synth(&cli, args),
        Command::Inspect(args) => run_inspect(args),
        Command::Diagnose(cmd) => run_diagnose(&cli, cmd),
        Command::Dataset(args) => run_dataset(&cli, args),
        Command::Train(args) => run_train(&cli, args),
        Command::Extrapolate(args) => run_extrapolate(&cli, args),
        Command::Sweep(args) => run_sweep(&cli, args),
        Command::Compare(args) => run_compare(&cli, args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(DataError(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(2)
        }
    }
}

fn parse_shapes(s: &str) -> Result<Vec<(usize, usize)>, DataError> {
    s.split(',')
        .map(|pair| {
            let (m, n) = pair
                .trim()
                .split_once(['x', 'X'])
                .ok_or_else(|| DataError(format!("bad shape '{pair}', expected MxN")))?;
            Ok((
                m.parse().map_err(|_| DataError(format!("bad shape '{pair}'")))?,
                n.parse().map_err(|_| DataError(format!("bad shape '{pair}'")))?,
            ))
        })
        .collect()
}

fn parse_alphas(s: &str) -> Result<Vec<f64>, DataError> {
    s.split(',')
        .map(|a| a.trim().parse::<f64>().map_err(|_| DataError(format!("bad alpha '{a}'"))))
        .collect()
}

/// Echo the resolved flags so no run depends on silent defaults.
fn write_config_echo(out: &Path, command: &str, flags: serde_json::Value) -> CmdResult {
    fs::create_dir_all(out).map_err(|e| DataError(format!("creating {}: {e}", out.display())))?;
    let echo = serde_json::json!({
        "command": command,
        "flags": flags,
        "timestamp_unix": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    let path = out.join(format!("config-{command}.json"));
    fs::write(&path, serde_json::to_string_pretty(&echo).expect("serializable echo"))
        .map_err(|e| DataError(format!("writing {}: {e}", path.display())))?;
    Ok(())
}

fn load_traj(path: &Path) -> Result<Trajectory, DataError> {
    let man = load_manifest(path)?;
    Ok(Trajectory::load(&man)?)
}

fn run_synth(cli: &Cli, args: &SynthArgs) -> CmdResult {
    let shapes = parse_shapes(&args.shapes)?;
    let manifest = match args.kind {
        KindArg::Toy => {
            let mode = match args.mode {
                ModeArg::Full => TrainMode::Full,
                ModeArg::Lora => TrainMode::Lora(args.lora_rank),
            };
            let spec = ToyTrainSpec {
                layer_shapes: shapes.clone(),
                task_seed: cli.seed,
                steps: args.steps,
                save_interval: args.interval,
                learning_rate: args.lr,
                mode,
            };
            gen_toy_training_trajectory(&spec, &args.out)?
        }
        kind => {
            let kind = match kind {
                KindArg::Linear => DynamicsKind::Linear,
                KindArg::Saturating => DynamicsKind::Saturating,
                KindArg::Logistic => DynamicsKind::Logistic,
                KindArg::Toy => unreachable!(),
            };
            let spec = DynamicsSpec {
                kind,
                amplitude: args.amplitude,
                timescale: args.timescale,
                noise_std: args.noise,
                seed: cli.seed,
            };
            gen_analytic_trajectory(&spec, &shapes, args.checkpoints, &args.out)?
        }
    };
    write_config_echo(
        &args.out,
        "synth",
        serde_json::json!({
            "seed": cli.seed,
            "kind": format!("{:?}", args.kind).to_lowercase(),
            "shapes": args.shapes,
            "checkpoints": args.checkpoints,
            "noise": args.noise,
            "amplitude": args.amplitude,
            "timescale": args.timescale,
            "mode": format!("{:?}", args.mode).to_lowercase(),
            "lora_rank": args.lora_rank,
            "steps": args.steps,
            "interval": args.interval,
            "lr": args.lr,
        }),
    )?;
    println!(
        "wrote {} checkpoints under {} (manifest {})",
        manifest.entries.len(),
        args.out.display(),
        MANIFEST_FILE
    );
    Ok(())
}

fn run_inspect(args: &InspectArgs) -> CmdResult {
    let ck = load_checkpoint(&args.ckpt)?;
    println!("step: {}", ck.step);
    println!("{:<40} {:>12} {:>14}", "tensor", "shape", "frobenius");
    for (name, m) in ck.tensors() {
        println!(
            "{name:<40} {:>12} {:>14.6}",
            format!("{}x{}", m.rows(), m.cols()),
            m.frobenius_norm()
        );
    }
    for (name, v) in ck.passthrough() {
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        println!("{name:<40} {:>12} {norm:>14.6}", format!("[{}]", v.len()));
    }
    Ok(())
}

fn run_diagnose(cli: &Cli, cmd: &DiagnoseCmd) -> CmdResult {
    match cmd {
        DiagnoseCmd::Energy(args) => {
            let traj = load_traj(&args.traj)?;
            let series = next_core::energy_ratio_series(&traj)?;
            write_config_echo(
                &args.out,
                "diagnose-energy",
                serde_json::json!({"seed": cli.seed, "traj": args.traj.display().to_string()}),
            )?;
            let path = args.out.join("energy.csv");
            fs::write(&path, next_core::energy_csv(&series))
                .map_err(|e| DataError(format!("writing {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
        DiagnoseCmd::R2(args) => {
            let traj = load_traj(&args.traj)?;
            let report = next_core::linear_r2(&traj, args.fit, args.predict)?;
            write_config_echo(
                &args.out,
                "diagnose-r2",
                serde_json::json!({
                    "seed": cli.seed,
                    "traj": args.traj.display().to_string(),
                    "fit": args.fit,
                    "predict": args.predict,
                    "regressed": report.regressed,
                }),
            )?;
            let path = args.out.join("r2.csv");
            fs::write(&path, next_core::r2_csv(&report))
                .map_err(|e| DataError(format!("writing {}: {e}", path.display())))?;
            println!("wrote {}", path.display());
        }
        DiagnoseCmd::Icer(args) => {
            let value = next_core::icer(args.steps, args.baseline, args.new)?;
            println!("{value:.1}");
        }
    }
    Ok(())
}

fn run_dataset(cli: &Cli, args: &DatasetArgs) -> CmdResult {
    let traj = load_traj(&args.traj)?;
    let opts = ExtractOptions {
        sigma_transform: if args.sigma_log1p { SigmaTransform::Log1p } else { SigmaTransform::None },
    };
    let ds = extract_dataset(&traj, args.k, &opts)?;
    write_config_echo(
        &args.out,
        "dataset",
        serde_json::json!({
            "seed": cli.seed,
            "traj": args.traj.display().to_string(),
            "k": args.k,
            "sigma_log1p": args.sigma_log1p,
        }),
    )?;
    let path = args.out.join("dataset.safetensors");
    save_dataset(&ds, &path)?;
    println!(
        "wrote {} ({} examples in {} groups, {} skipped as degenerate)",
        path.display(),
        ds.n_examples(),
        ds.groups.len(),
        ds.meta.skipped_examples
    );
    Ok(())
}

fn run_train(cli: &Cli, args: &TrainArgs) -> CmdResult {
    let ds = load_dataset(&args.dataset)?;
    let opts = TrainOptions {
        hidden_dim: args.hidden,
        encoder_layers: 2,
        decoder_layers: 2,
        seed: cli.seed,
        epochs: args.epochs,
        lr: args.lr,
        holdout_fraction: args.holdout,
        batch_size: args.batch,
    };
    let bundle = train(&ds, &opts)?;
    write_config_echo(
        &args.out,
        "train",
        serde_json::json!({
            "seed": cli.seed,
            "dataset": args.dataset.display().to_string(),
            "hidden": args.hidden,
            "epochs": args.epochs,
            "lr": args.lr,
            "holdout": args.holdout,
            "batch": args.batch,
        }),
    )?;
    let path = args.out.join("bundle.safetensors");
    save_bundle(&bundle, &path)?;
    for g in &bundle.meta.groups {
        let final_train = g.train_l1.last().copied().unwrap_or(f64::NAN);
        match g.holdout_l1.last() {
            Some(h) => println!(
                "group ({}, {:>3}): {:>4} train / {:>3} holdout examples, L1 {:.5} / {:.5}",
                g.field.name(),
                g.dimension,
                g.n_train,
                g.n_holdout,
                final_train,
                h
            ),
            None => println!(
                "group ({}, {:>3}): {:>4} train examples, L1 {:.5}",
                g.field.name(),
                g.dimension,
                g.n_train,
                final_train
            ),
        }
    }
    println!("wrote {} (bundle id {})", path.display(), bundle.id());
    Ok(())
}

fn run_extrapolate(cli: &Cli, args: &ExtrapolateArgs) -> CmdResult {
    let traj = load_traj(&args.traj)?;
    let bundle = load_bundle(&args.bundle)?;
    let (ck, report) = extrapolate_checkpoint(&traj, &bundle, args.alpha, args.k)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_config_echo(
        &args.out,
        "extrapolate",
        serde_json::json!({
            "seed": cli.seed,
            "traj": args.traj.display().to_string(),
            "bundle": args.bundle.display().to_string(),
            "alpha": args.alpha,
            "k": args.k,
            "bundle_id": report.bundle_id,
        }),
    )?;
    let ck_path = args.out.join("extrapolated.safetensors");
    save_checkpoint_f64(&ck, &ck_path)?;
    let report_path = args.out.join("report.jsonl");
    fs::write(&report_path, report.to_jsonl())
        .map_err(|e| DataError(format!("writing {}: {e}", report_path.display())))?;
    let skipped = report.records.iter().filter(|r| r.skipped).count();
    println!(
        "wrote {} (step {}, {} parameters, {} skipped)",
        ck_path.display(),
        ck.step,
        report.records.len(),
        skipped
    );
    Ok(())
}

fn run_sweep(cli: &Cli, args: &SweepArgs) -> CmdResult {
    let alphas = parse_alphas(&args.alphas)?;
    let traj = load_traj(&args.traj)?;
    let bundle = load_bundle(&args.bundle)?;
    write_config_echo(
        &args.out,
        "sweep",
        serde_json::json!({
            "seed": cli.seed,
            "traj": args.traj.display().to_string(),
            "bundle": args.bundle.display().to_string(),
            "alphas": alphas,
            "k": args.k,
        }),
    )?;

    // closed-form truth is available for analytic lab trajectories
    let truth = match args.traj.parent() {
        Some(dir) => load_analytic_run(dir)?
            .map(|run| analytic_ground_truth(&run, run.n_checkpoints + args.k)),
        None => None,
    };

    let mut rows = Vec::new();
    for &alpha in &alphas {
        let (ck, report) = extrapolate_checkpoint(&traj, &bundle, alpha, args.k)?;
        for w in &report.warnings {
            eprintln!("warning: {w}");
        }
        let path = args.out.join(format!("alpha_{alpha:.2}.safetensors"));
        save_checkpoint_f64(&ck, &path)?;
        if let Some(truth) = &truth {
            for (param, err) in frobenius_errors(&ck, truth)? {
                rows.push(ComparisonRow { method: "next".into(), alpha, param, frobenius_error: err });
            }
        }
    }
    if !rows.is_empty() {
        let path = args.out.join("sweep.csv");
        fs::write(&path, comparison_csv(&rows))
            .map_err(|e| DataError(format!("writing {}: {e}", path.display())))?;
        println!("wrote {} checkpoints and {}", alphas.len(), path.display());
    } else {
        println!("wrote {} checkpoints (no analytic truth for error CSV)", alphas.len());
    }
    Ok(())
}

fn run_compare(cli: &Cli, args: &CompareArgs) -> CmdResult {
    let full = load_traj(&args.traj)?;
    let analytic = match args.traj.parent() {
        Some(dir) => load_analytic_run(dir)?,
        None => None,
    };

    // analytic runs are scored against the closed form at c + k; anything
    // else holds out the last k checkpoints and predicts the final one
    let (traj, truth) = match &analytic {
        Some(run) => {
            let truth = analytic_ground_truth(run, run.n_checkpoints + args.k);
            (full, truth)
        }
        None => {
            let c = full.len();
            if c < args.k + 1 {
                return Err(DataError(format!(
                    "holdout comparison needs more than k = {} checkpoints, have {c}",
                    args.k
                )));
            }
            let truth = full.checkpoints[c - 1].clone();
            let prefix = Trajectory {
                base: full.base.clone(),
                checkpoints: full.checkpoints[..c - args.k].to_vec(),
            };
            (prefix, truth)
        }
    };

    let ds = extract_dataset(&traj, args.k, &ExtractOptions::default())?;
    let opts = TrainOptions {
        hidden_dim: args.hidden,
        encoder_layers: 2,
        decoder_layers: 2,
        seed: cli.seed,
        epochs: args.epochs,
        lr: args.lr,
        holdout_fraction: 0.1,
        batch_size: args.batch,
    };
    let bundle = train(&ds, &opts)?;
    let (ours, report) = extrapolate_checkpoint(&traj, &bundle, args.alpha, args.k)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }

    let mut rows = Vec::new();
    let mut add = |method: &str, ck: &next_core::Checkpoint| -> Result<f64, DataError> {
        let errors = frobenius_errors(ck, &truth)?;
        let mean = errors.iter().map(|(_, e)| e).sum::<f64>() / errors.len() as f64;
        for (param, err) in errors {
            rows.push(ComparisonRow {
                method: method.into(),
                alpha: args.alpha,
                param,
                frobenius_error: err,
            });
        }
        Ok(mean)
    };
    let mean_next = add("next", &ours)?;
    let mean_full =
        add("linear-full", &linear_extrapolate(&traj, args.alpha, args.k, LinearVariant::Full)?)?;
    let mean_rank1 =
        add("linear-rank1", &linear_extrapolate(&traj, args.alpha, args.k, LinearVariant::Rank1)?)?;
    let mut summary = format!(
        "mean frobenius error: next {mean_next:.6}, linear-full {mean_full:.6}, linear-rank1 {mean_rank1:.6}"
    );
    if args.global_slope {
        let mean_global = add(
            "linear-global",
            &linear_extrapolate(&traj, args.alpha, args.k, LinearVariant::FullGlobal)?,
        )?;
        summary.push_str(&format!(", linear-global {mean_global:.6}"));
    }

    write_config_echo(
        &args.out,
        "compare",
        serde_json::json!({
            "seed": cli.seed,
            "traj": args.traj.display().to_string(),
            "k": args.k,
            "alpha": args.alpha,
            "epochs": args.epochs,
            "hidden": args.hidden,
            "batch": args.batch,
            "lr": args.lr,
            "global_slope": args.global_slope,
            "truth": if analytic.is_some() { "analytic" } else { "holdout-tail" },
            "truth_note": if analytic.is_some() {
                "synthetic stand-in dynamics, not measured training curves"
            } else {
                "actual held-out checkpoint"
            },
            "baseline_note": "linear baselines are last-interval/global-slope approximations",
            "bundle_id": report.bundle_id,
        }),
    )?;
    let path = args.out.join("compare.csv");
    fs::write(&path, comparison_csv(&rows))
        .map_err(|e| DataError(format!("writing {}: {e}", path.display())))?;
    println!("{summary}");
    println!("wrote {}", path.display());
    Ok(())
}
