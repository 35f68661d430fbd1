//! Command-line front end. Exit codes are part of the contract: 0 on
//! success, 1 for usage problems, 2 for data problems (missing or corrupt
//! corpus, unreadable files, mismatched inputs), 3 for numeric failures
//! during training or evaluation.

use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use drycast_core::error::Error;
use drycast_core::model::{EncoderKind, ModelConfig};
use drycast_core::sim::{SimConfig, CONDITIONS};

use crate::cache::{write_cache, write_fold_manifest, Dataset};
use crate::corpus::{corpus_hash, generate_corpus, load_corpus};
use crate::experiments::{compare_encoders, run_cv, sweep_frames, sweep_groups, Kind, Protocol};
use crate::report::{merge_reports, write_cv, write_encoders, write_frames_sweep, write_groups_sweep, Stamp};

#[derive(Parser)]
#[command(name = "drycast", version, about = "Cookie drying forecasts from oven video and process parameters")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Render a synthetic drying corpus to disk.
    GenData {
        /// Output corpus directory.
        #[arg(long)]
        out: PathBuf,
        /// Repetitions per oven condition (8 conditions total).
        #[arg(long, default_value_t = 3)]
        runs_per_condition: usize,
        /// Master seed for the whole corpus.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train and evaluate one model kind under leave-one-group-out CV.
    Train {
        /// Corpus directory produced by gen-data.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for tables and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// multi-modal, video-only, or baseline.
        #[arg(long, default_value = "multi-modal")]
        kind: String,
        /// Master seed; per-fold streams derive from it.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        /// Frames per input window.
        #[arg(long, default_value_t = 7)]
        b: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Squared-parameter penalty coefficient.
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
        /// Worker threads for fold-level parallelism.
        #[arg(long, default_value_t = 1)]
        parallel_folds: usize,
        /// Median-of-N repetitions for the inference timing; 0 disables.
        #[arg(long, default_value_t = 50)]
        timing_reps: usize,
        /// Optional model architecture file (key = value lines).
        #[arg(long)]
        model_config: Option<PathBuf>,
    },
    /// Frame-count, training-group, or encoder sweeps.
    Sweep {
        /// Corpus directory produced by gen-data.
        #[arg(long)]
        corpus: PathBuf,
        /// Output directory for sweep tables.
        #[arg(long)]
        out: PathBuf,
        /// frames, groups, or encoders.
        #[arg(long)]
        sweep: String,
        /// Window lengths for the frames sweep.
        #[arg(long, default_value = "1,3,5,7")]
        b: String,
        /// Training-group counts for the groups sweep.
        #[arg(long, default_value = "4,5,6,7")]
        k: String,
        /// Master seeds, comma separated.
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-4)]
        lambda: f64,
        #[arg(long, default_value_t = 1)]
        parallel_folds: usize,
        #[arg(long, default_value_t = 50)]
        timing_reps: usize,
    },
    /// Merge train outputs into one comparison table.
    Report {
        /// One or more train output directories.
        #[arg(long, required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Output directory for the merged table.
        #[arg(long)]
        out: PathBuf,
    },
}

type CmdResult = Result<(), (i32, String)>;

fn usage(msg: impl Into<String>) -> (i32, String) {
    (1, msg.into())
}

fn data(e: Error) -> (i32, String) {
    (2, e.to_string())
}

/// Training and evaluation failures; file problems keep the data code.
fn numeric(e: Error) -> (i32, String) {
    match e {
        Error::Decode { .. } => (2, e.to_string()),
        _ => (3, e.to_string()),
    }
}

/// Parses argv and runs the selected command, returning the process exit
/// code. Help and version requests exit 0 like any other success.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::GenData {
            out,
            runs_per_condition,
            seed,
        } => cmd_gen_data(&out, runs_per_condition, seed),
        Cmd::Train {
            corpus,
            out,
            kind,
            seed,
            epochs,
            b,
            lr,
            batch_size,
            lambda,
            parallel_folds,
            timing_reps,
            model_config,
        } => cmd_train(
            &corpus,
            &out,
            &kind,
            seed,
            epochs,
            b,
            lr,
            batch_size,
            lambda,
            parallel_folds,
            timing_reps,
            model_config.as_deref(),
        ),
        Cmd::Sweep {
            corpus,
            out,
            sweep,
            b,
            k,
            seeds,
            epochs,
            lr,
            batch_size,
            lambda,
            parallel_folds,
            timing_reps,
        } => cmd_sweep(
            &corpus,
            &out,
            &sweep,
            &b,
            &k,
            &seeds,
            epochs,
            lr,
            batch_size,
            lambda,
            parallel_folds,
            timing_reps,
        ),
        Cmd::Report { inputs, out } => cmd_report(&inputs, &out),
    };
    match result {
        Ok(()) => 0,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}

fn cmd_gen_data(out: &Path, runs_per_condition: usize, seed: u64) -> CmdResult {
    if runs_per_condition == 0 {
        return Err(usage("--runs-per-condition must be at least 1".into()));
    }
    let cfg = SimConfig::default();
    let summary = generate_corpus(out, runs_per_condition, seed, &cfg).map_err(data)?;
    let hash = corpus_hash(out).map_err(data)?;
    println!(
        "wrote {} runs ({} conditions x {runs_per_condition}) to {}",
        summary.runs.len(),
        CONDITIONS.len(),
        out.display()
    );
    println!("corpus hash {hash:016x}");
    for m in &summary.runs {
        println!(
            "run {:03}: {} C, {} RPM, ready at {} s",
            m.run_id, m.temperature, m.fan_rpm, m.ready_time
        );
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, (i32, String)> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.push(
            part.parse::<T>()
                .map_err(|_| usage(format!("bad {what} entry {part:?}")))?,
        );
    }
    if out.is_empty() {
        return Err(usage(format!("empty {what} list")));
    }
    Ok(out)
}

fn load_dataset(corpus: &Path) -> Result<(Dataset, u64), (i32, String)> {
    let runs = load_corpus(corpus).map_err(data)?;
    let hash = corpus_hash(corpus).map_err(data)?;
    Ok((Dataset::new(runs), hash))
}

#[allow(clippy::too_many_arguments)]
fn build_protocol(
    seed: u64,
    epochs: usize,
    b: usize,
    lr: f64,
    batch_size: usize,
    lambda: f64,
    parallel_folds: usize,
    timing_reps: usize,
    model_config: Option<&Path>,
) -> Result<Protocol, (i32, String)> {
    if b == 0 {
        return Err(usage("--b must be at least 1".into()));
    }
    let mut p = Protocol::new(seed);
    if let Some(path) = model_config {
        let text = fs::read_to_string(path)
            .map_err(|e| data(crate::corpus::io_err(path, e)))?;
        p.model = ModelConfig::from_text(&text).map_err(data)?;
    }
    p.hp.epochs = epochs;
    p.hp.lr = lr;
    p.hp.batch_size = batch_size;
    p.hp.lambda = lambda;
    p.parallel_folds = parallel_folds;
    p.timing_reps = timing_reps;
    p = p.with_frames(b);
    p.model.validate().map_err(|e| usage(e.to_string()))?;
    Ok(p)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    corpus: &Path,
    out: &Path,
    kind: &str,
    seed: u64,
    epochs: usize,
    b: usize,
    lr: f64,
    batch_size: usize,
    lambda: f64,
    parallel_folds: usize,
    timing_reps: usize,
    model_config: Option<&Path>,
) -> CmdResult {
    let kind = Kind::parse(kind).map_err(|e| usage(e.to_string()))?;
    let p = build_protocol(
        seed,
        epochs,
        b,
        lr,
        batch_size,
        lambda,
        parallel_folds,
        timing_reps,
        model_config,
    )?;
    let (dataset, hash) = load_dataset(corpus)?;
    let folds = dataset.logocv().map_err(numeric)?;
    let outcome = run_cv(&dataset, &folds, kind, &p).map_err(numeric)?;

    let stamp = Stamp::new(hash, kind, &p);
    let written = write_cv(out, &outcome, dataset.cadence(), stamp, kind, &p, corpus)
        .map_err(data)?;
    let samples = dataset.samples(b);
    write_cache(&out.join(format!("cache_b{b}.bin")), b, &samples).map_err(data)?;
    write_fold_manifest(&out.join("fold_manifest.txt"), &dataset, &folds).map_err(data)?;

    println!(
        "{} seed {seed}: fold-mean MAE {:.3} s, pooled {:.3} s over {} folds",
        kind.name(),
        outcome.fold_mean,
        outcome.pooled,
        outcome.folds.len()
    );
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    corpus: &Path,
    out: &Path,
    sweep: &str,
    b: &str,
    k: &str,
    seeds: &str,
    epochs: usize,
    lr: f64,
    batch_size: usize,
    lambda: f64,
    parallel_folds: usize,
    timing_reps: usize,
) -> CmdResult {
    let seeds: Vec<u64> = parse_list(seeds, "--seeds")?;
    let base = build_protocol(
        seeds[0],
        epochs,
        7,
        lr,
        batch_size,
        lambda,
        parallel_folds,
        timing_reps,
        None,
    )?;
    let (dataset, hash) = load_dataset(corpus)?;
    let stamp = Stamp::new(hash, Kind::MultiModal, &base);
    match sweep {
        "frames" => {
            let bs: Vec<usize> = parse_list(b, "--b")?;
            if bs.contains(&0) {
                return Err(usage("--b entries must be at least 1".into()));
            }
            let rows = sweep_frames(&dataset, &bs, &seeds, &base).map_err(numeric)?;
            let path = write_frames_sweep(out, &rows, stamp).map_err(data)?;
            for r in &rows {
                println!(
                    "b={} {}: fold-mean MAE {:.3} s, {:.2} ms/batch",
                    r.b,
                    r.kind.name(),
                    r.fold_mean,
                    r.inference_ms
                );
            }
            println!("wrote {}", path.display());
        }
        "groups" => {
            let ks: Vec<usize> = parse_list(k, "--k")?;
            let rows = sweep_groups(&dataset, &ks, &seeds, &base).map_err(numeric)?;
            let path = write_groups_sweep(out, &rows, stamp).map_err(data)?;
            for r in &rows {
                println!(
                    "k={} {}: fold-mean MAE {:.3} s",
                    r.k,
                    r.kind.name(),
                    r.fold_mean
                );
            }
            println!("wrote {}", path.display());
        }
        "encoders" => {
            let rows =
                compare_encoders(&dataset, &EncoderKind::ALL, &base).map_err(numeric)?;
            let path = write_encoders(out, &rows, stamp).map_err(data)?;
            for r in &rows {
                match (&r.result, &r.skip_reason) {
                    (Some(s), _) => println!(
                        "{}: fold-mean MAE {:.3} s, {} parameters",
                        r.encoder.name(),
                        s.fold_mean,
                        s.param_count
                    ),
                    (_, Some(reason)) => println!("{}: skipped ({reason})", r.encoder.name()),
                    _ => {}
                }
            }
            println!("wrote {}", path.display());
        }
        other => {
            return Err(usage(format!(
                "unknown sweep {other:?} (frames, groups, encoders)"
            )))
        }
    }
    Ok(())
}

fn cmd_report(inputs: &[PathBuf], out: &Path) -> CmdResult {
    let path = merge_reports(inputs, out).map_err(data)?;
    let text = fs::read_to_string(&path).map_err(|e| data(crate::corpus::io_err(&path, e)))?;
    print!("{text}");
    println!("wrote {}", path.display());
    Ok(())
}
