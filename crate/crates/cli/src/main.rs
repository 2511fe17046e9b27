//! Command-line surface over the engine: data synthesis, training (with
//! and without distillation), zero-shot and retrieval evaluation, and the
//! finite-difference gradient self-check.
//!
//! Config precedence is built-in defaults < `--config` JSON file < flags;
//! the resolved configuration is persisted as `run.json` next to every
//! command's outputs (minus `--threads`, which must never change output
//! bytes). All randomness flows from the command's single `--seed`.
//!
//! Exit codes: 0 success, 1 runtime/validation failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use xmodal_core::encoders::{load_checkpoint, Activation, Architecture};
use xmodal_core::error::{Error, Result};
use xmodal_core::evaluation::{
    run_retrieval, run_zero_shot, MetricsReport, QueryPath, RetrievalReport, DEFAULT_RECALL_KS,
};
use xmodal_core::gradcheck::{run_gradcheck, GradCheckConfig, DEFAULT_STEP, DEFAULT_TRIALS};
use xmodal_core::synthdata::{generate_dataset, split_dataset, GeneratorConfig};
use xmodal_core::training::{train, TrainConfig};

#[derive(Parser)]
#[command(
    name = "xmodal",
    about = "Cross-modal contrastive learning engine with teacher distillation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic paired dataset and split it.
    SynthData(SynthDataArgs),
    /// Train the audio-side student against the frozen encoders.
    Train(TrainArgs),
    /// Evaluate a trained checkpoint.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Compare the analytic training gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Zero-shot multi-label classification from prompt queries.
    Zeroshot(EvalArgs),
    /// Cross-modal retrieval of paired cases.
    Retrieval(EvalArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Master seed for this command.
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with defaults for this command's parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rayon thread count (0 = library default). Never changes outputs.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Args)]
struct SynthDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Output dataset directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of examples to generate.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_labels: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    audio_dim: Option<usize>,
    #[arg(long)]
    vision_dim: Option<usize>,
    #[arg(long)]
    text_dim: Option<usize>,
    #[arg(long)]
    speakers: Option<usize>,
    #[arg(long)]
    duration_mean: Option<f64>,
    #[arg(long)]
    duration_jitter: Option<f64>,
    #[arg(long)]
    frame_rate: Option<f64>,
    #[arg(long)]
    noise_latent: Option<f64>,
    #[arg(long)]
    noise_audio: Option<f64>,
    #[arg(long)]
    noise_vision: Option<f64>,
    #[arg(long)]
    noise_text: Option<f64>,
    #[arg(long)]
    speaker_offset_scale: Option<f64>,
    /// Fraction of examples tagged as the train split.
    #[arg(long)]
    train_fraction: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory produced by synth-data.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint and reports.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Distillation weight.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Train the contrastive-only baseline (forces lambda to 0).
    #[arg(long)]
    no_kd: bool,
    #[arg(long)]
    eval_every: Option<usize>,
    /// Student layer widths, input to output, e.g. 64,128,32.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long)]
    window_len: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset directory produced by synth-data.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint file written by train.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output directory for reports.
    #[arg(long)]
    out: PathBuf,
    /// Student layer widths matching the checkpoint, e.g. 64,128,32.
    #[arg(long)]
    arch: Option<String>,
    /// Query-side encoder: student (speech-only) or teacher (text
    /// reference).
    #[arg(long)]
    query_path: Option<String>,
    /// Evaluation split tag.
    #[arg(long)]
    split: Option<String>,
    /// Decision threshold on the two-way softmax score (zeroshot only).
    #[arg(long)]
    threshold: Option<f64>,
    /// Recall cutoffs, e.g. 5,10,50,100 (retrieval only).
    #[arg(long)]
    ks: Option<String>,
    #[arg(long)]
    window_len: Option<f64>,
    #[arg(long)]
    overlap: Option<f64>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Optional directory for the JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    /// Central-difference step size.
    #[arg(long)]
    step: Option<f64>,
    /// Test hook: corrupt one gradient coordinate; the check must fail.
    #[arg(long)]
    inject_sign_flip: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SynthData(args) => cmd_synth_data(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(EvalCommand::Zeroshot(args)) => cmd_eval(args, EvalKind::Zeroshot),
        Command::Eval(EvalCommand::Retrieval(args)) => cmd_eval(args, EvalKind::Retrieval),
        Command::Gradcheck(args) => cmd_gradcheck(args),
    }
}

/// Load the `--config` JSON file (an object of parameter overrides).
fn load_config_file(path: Option<&Path>) -> Result<Value> {
    match path {
        None => Ok(Value::Object(Default::default())),
        Some(p) => {
            let bytes = fs::read(p)?;
            let v: Value = serde_json::from_slice(&bytes)?;
            if !v.is_object() {
                return Err(Error::InvalidConfig(format!(
                    "config file {} must hold a JSON object",
                    p.display()
                )));
            }
            Ok(v)
        }
    }
}

/// defaults < config file < flag, for parameters with no "unset" state.
fn resolve<T: serde::de::DeserializeOwned>(
    flag: Option<T>,
    file: &Value,
    key: &str,
    default: T,
) -> Result<T> {
    Ok(resolve_opt(flag, file, key)?.unwrap_or(default))
}

/// config file < flag, for parameters that may stay unset.
fn resolve_opt<T: serde::de::DeserializeOwned>(
    flag: Option<T>,
    file: &Value,
    key: &str,
) -> Result<Option<T>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        Some(v) => serde_json::from_value(v.clone())
            .map(Some)
            .map_err(|e| Error::InvalidConfig(format!("config key '{key}': {e}"))),
        None => Ok(None),
    }
}

fn init_threads(threads: usize) {
    if threads > 0 {
        // Ignore failure when a global pool already exists.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
}

fn parse_arch(spec: &str) -> Result<Architecture> {
    let dims: Vec<usize> = spec
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("bad arch component '{s}'")))
        })
        .collect::<Result<_>>()?;
    if dims.len() < 2 {
        return Err(Error::InvalidConfig(
            "arch needs at least input and output dims, e.g. 64,128,32".into(),
        ));
    }
    Ok(Architecture {
        input_dim: dims[0],
        hidden_dims: dims[1..dims.len() - 1].to_vec(),
        output_dim: *dims.last().unwrap(),
        activation: Activation::Tanh,
    })
}

fn arch_string(arch: &Architecture) -> String {
    let mut parts = vec![arch.input_dim.to_string()];
    parts.extend(arch.hidden_dims.iter().map(|d| d.to_string()));
    parts.push(arch.output_dim.to_string());
    parts.join(",")
}

fn write_run_record(out_dir: &Path, record: &Value) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let mut bytes = serde_json::to_vec_pretty(record)?;
    bytes.push(b'\n');
    fs::write(out_dir.join("run.json"), bytes)?;
    Ok(())
}

fn cmd_synth_data(args: SynthDataArgs) -> Result<()> {
    init_threads(args.common.threads);
    let file = load_config_file(args.common.config.as_deref())?;
    let d = GeneratorConfig::default();
    let config = GeneratorConfig {
        n_examples: resolve(args.n, &file, "n_examples", d.n_examples)?,
        n_labels: resolve(args.n_labels, &file, "n_labels", d.n_labels)?,
        latent_dim: resolve(args.latent_dim, &file, "latent_dim", d.latent_dim)?,
        audio_dim: resolve(args.audio_dim, &file, "audio_dim", d.audio_dim)?,
        vision_dim: resolve(args.vision_dim, &file, "vision_dim", d.vision_dim)?,
        text_dim: resolve(args.text_dim, &file, "text_dim", d.text_dim)?,
        label_prevalences: resolve_opt::<Vec<f64>>(None, &file, "label_prevalences")?
            .or(d.label_prevalences),
        n_speakers: resolve(args.speakers, &file, "n_speakers", d.n_speakers)?,
        duration_mean_s: resolve(
            args.duration_mean,
            &file,
            "duration_mean_s",
            d.duration_mean_s,
        )?,
        duration_jitter: resolve(
            args.duration_jitter,
            &file,
            "duration_jitter",
            d.duration_jitter,
        )?,
        frame_rate_hz: resolve(args.frame_rate, &file, "frame_rate_hz", d.frame_rate_hz)?,
        noise_latent: resolve(args.noise_latent, &file, "noise_latent", d.noise_latent)?,
        noise_audio: resolve(args.noise_audio, &file, "noise_audio", d.noise_audio)?,
        noise_vision: resolve(args.noise_vision, &file, "noise_vision", d.noise_vision)?,
        noise_text: resolve(args.noise_text, &file, "noise_text", d.noise_text)?,
        speaker_offset_scale: resolve(
            args.speaker_offset_scale,
            &file,
            "speaker_offset_scale",
            d.speaker_offset_scale,
        )?,
        seed: resolve(args.common.seed, &file, "seed", 0)?,
    };
    let train_fraction = resolve(args.train_fraction, &file, "train_fraction", 0.8)?;
    config.validate()?;

    let manifest = generate_dataset(&config, &args.out)?;
    let manifest = split_dataset(&manifest, train_fraction, config.seed)?;
    manifest.save(&args.out.join("manifest.jsonl"))?;
    write_run_record(
        &args.out,
        &json!({
            "command": "synth-data",
            "generator": config,
            "train_fraction": train_fraction,
        }),
    )?;

    let n = manifest.records.len();
    let train_n = manifest.split_records("train").len();
    let durations: Vec<f64> = manifest.records.iter().map(|r| r.duration_s).collect();
    let mean = durations.iter().sum::<f64>() / n as f64;
    let (min, max) = durations
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &d| {
            (lo.min(d), hi.max(d))
        });
    println!("wrote {n} examples to {}", args.out.display());
    println!(
        "  labels {} | speakers {} | duration mean {:.1} s (min {:.1}, max {:.1})",
        config.n_labels, config.n_speakers, mean, min, max
    );
    println!("  split: {train_n} train / {} test", n - train_n);
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    init_threads(args.common.threads);
    let file = load_config_file(args.common.config.as_deref())?;
    let d = TrainConfig::default();
    let arch = match resolve_opt::<String>(args.arch, &file, "arch")? {
        Some(spec) => parse_arch(&spec)?,
        None => d.arch.clone(),
    };
    let kd_enabled = if args.no_kd {
        false
    } else {
        resolve(Option::<bool>::None, &file, "kd_enabled", d.kd_enabled)?
    };
    let config = TrainConfig {
        batch_size: resolve(args.batch_size, &file, "batch_size", d.batch_size)?,
        steps: resolve(args.steps, &file, "steps", d.steps)?,
        learning_rate: resolve(args.lr, &file, "learning_rate", d.learning_rate)?,
        lambda: resolve(args.lambda, &file, "lambda", d.lambda)?,
        temperature: resolve(args.temperature, &file, "temperature", d.temperature)?,
        beta1: resolve(None, &file, "beta1", d.beta1)?,
        beta2: resolve(None, &file, "beta2", d.beta2)?,
        epsilon: resolve(None, &file, "epsilon", d.epsilon)?,
        seed: resolve(args.common.seed, &file, "seed", 0)?,
        eval_every: resolve(args.eval_every, &file, "eval_every", d.eval_every)?,
        kd_enabled,
        window_len_s: resolve(args.window_len, &file, "window_len_s", d.window_len_s)?,
        overlap_s: resolve(args.overlap, &file, "overlap_s", d.overlap_s)?,
        arch,
    };
    config.validate()?;

    let report = train(&config, &args.data, &args.out)?;
    write_run_record(
        &args.out,
        &json!({
            "command": "train",
            "data": args.data.to_string_lossy(),
            "config": config,
        }),
    )?;

    println!(
        "trained {} steps ({} examples, kd={}) in {:.1} s",
        report.curve.len(),
        report.n_train_examples,
        config.kd_enabled,
        report.wall_clock_s
    );
    match report.curve.last() {
        Some(p) => println!(
            "final loss: total {} (con_sym {}, distill {}, lambda {})",
            p.loss.total, p.loss.con_symmetric, p.loss.distill, p.loss.lambda
        ),
        None => println!("final loss: n/a (0 steps)"),
    }
    println!(
        "checkpoint: {}",
        args.out.join(&report.checkpoint_path).display()
    );
    Ok(())
}

enum EvalKind {
    Zeroshot,
    Retrieval,
}

fn metrics_per_label_csv(report: &MetricsReport) -> String {
    let mut out = String::from("label,auroc,precision,recall,f1,accuracy,support\n");
    for m in &report.per_label {
        let auc = m.auroc.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.label, auc, m.precision, m.recall, m.f1, m.accuracy, m.support
        ));
    }
    out
}

fn retrieval_csv(report: &RetrievalReport) -> String {
    let mut out = String::from("k,recall\n");
    for &(k, r) in &report.recalls {
        out.push_str(&format!("{k},{r}\n"));
    }
    out
}

fn cmd_eval(args: EvalArgs, kind: EvalKind) -> Result<()> {
    init_threads(args.common.threads);
    let file = load_config_file(args.common.config.as_deref())?;
    let d = TrainConfig::default();
    let arch = match resolve_opt::<String>(args.arch, &file, "arch")? {
        Some(spec) => parse_arch(&spec)?,
        None => d.arch.clone(),
    };
    let query_path: QueryPath = resolve_opt::<String>(args.query_path, &file, "query_path")?
        .as_deref()
        .unwrap_or("student")
        .parse()?;
    let split =
        resolve_opt::<String>(args.split, &file, "split")?.unwrap_or_else(|| "test".to_string());
    let window_len_s = resolve(args.window_len, &file, "window_len_s", d.window_len_s)?;
    let overlap_s = resolve(args.overlap, &file, "overlap_s", d.overlap_s)?;
    let params = load_checkpoint(&args.checkpoint, &arch)?;
    fs::create_dir_all(&args.out)?;

    match kind {
        EvalKind::Zeroshot => {
            let threshold = resolve(args.threshold, &file, "threshold", 0.5)?;
            let report = run_zero_shot(
                &args.data,
                &split,
                &params,
                query_path,
                threshold,
                window_len_s,
                overlap_s,
            )?;
            let mut bytes = serde_json::to_vec_pretty(&report)?;
            bytes.push(b'\n');
            fs::write(args.out.join("metrics_report.json"), bytes)?;
            fs::write(
                args.out.join("metrics_per_label.csv"),
                metrics_per_label_csv(&report),
            )?;
            write_run_record(
                &args.out,
                &json!({
                    "command": "eval zeroshot",
                    "data": args.data.to_string_lossy(),
                    "checkpoint": args.checkpoint.to_string_lossy(),
                    "arch": arch_string(&arch),
                    "query_path": report.query_path,
                    "split": split,
                    "threshold": threshold,
                    "window_len_s": window_len_s,
                    "overlap_s": overlap_s,
                }),
            )?;
            println!(
                "zeroshot [{}] on {} ({} examples, {} labels):",
                report.query_path, report.split, report.n_examples, report.n_labels
            );
            println!(
                "  macro AUROC {:.4} | macro F1 {:.4} | weighted F1 {:.4} | macro acc {:.4} | macro prec {:.4}",
                report.macro_auroc,
                report.macro_f1,
                report.weighted_f1,
                report.macro_accuracy,
                report.macro_precision
            );
            if !report.auroc_excluded.is_empty() {
                println!(
                    "  AUROC undefined (single class) for: {}",
                    report.auroc_excluded.join(", ")
                );
            }
        }
        EvalKind::Retrieval => {
            let ks: Vec<usize> = match resolve_opt::<String>(args.ks, &file, "ks")? {
                Some(spec) => spec
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::InvalidConfig(format!("bad K '{s}'")))
                    })
                    .collect::<Result<_>>()?,
                None => DEFAULT_RECALL_KS.to_vec(),
            };
            let report = run_retrieval(
                &args.data,
                &split,
                &params,
                query_path,
                &ks,
                window_len_s,
                overlap_s,
            )?;
            let mut bytes = serde_json::to_vec_pretty(&report)?;
            bytes.push(b'\n');
            fs::write(args.out.join("retrieval_report.json"), bytes)?;
            fs::write(args.out.join("retrieval_report.csv"), retrieval_csv(&report))?;
            write_run_record(
                &args.out,
                &json!({
                    "command": "eval retrieval",
                    "data": args.data.to_string_lossy(),
                    "checkpoint": args.checkpoint.to_string_lossy(),
                    "arch": arch_string(&arch),
                    "query_path": report.query_path,
                    "split": split,
                    "ks": ks,
                    "window_len_s": window_len_s,
                    "overlap_s": overlap_s,
                }),
            )?;
            println!(
                "retrieval [{}] on {} (pool {}, {} queries):",
                report.query_path, report.split, report.pool_size, report.query_count
            );
            for &(k, r) in &report.recalls {
                println!("  recall@{k} = {r:.4}");
            }
        }
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<()> {
    init_threads(args.common.threads);
    let file = load_config_file(args.common.config.as_deref())?;
    let config = GradCheckConfig {
        trials: resolve(args.trials, &file, "trials", DEFAULT_TRIALS)?,
        seed: resolve(args.common.seed, &file, "seed", 0)?,
        step: resolve(args.step, &file, "step", DEFAULT_STEP)?,
        inject_sign_flip: args.inject_sign_flip,
    };
    let report = run_gradcheck(&config)?;
    println!(
        "gradcheck: {} trials, h = {:e}, max relative error {:.3e} (threshold {:e})",
        report.trials, report.step, report.max_rel_err, report.threshold
    );
    if let Some(out) = &args.out {
        fs::create_dir_all(out)?;
        let mut bytes = serde_json::to_vec_pretty(&report)?;
        bytes.push(b'\n');
        fs::write(out.join("gradcheck_report.json"), bytes)?;
        write_run_record(
            out,
            &json!({
                "command": "gradcheck",
                "trials": config.trials,
                "seed": config.seed,
                "step": config.step,
                "inject_sign_flip": config.inject_sign_flip,
            }),
        )?;
    }
    if report.pass {
        println!("PASS");
        Ok(())
    } else {
        let w = &report.worst;
        Err(Error::InvalidConfig(format!(
            "gradient check failed: trial {} (N={}, d={}, lambda={}, tau={:.3}) param {} analytic {:.6e} vs numeric {:.6e} (rel err {:.3e})",
            w.trial,
            w.batch_size,
            w.embed_dim,
            w.lambda,
            w.temperature,
            w.param_index,
            w.analytic,
            w.numeric,
            w.rel_err
        )))
    }
}
