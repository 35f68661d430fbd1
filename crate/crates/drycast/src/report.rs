//! CSV and text outputs for cross-validation runs and sweeps, plus the
//! merge step that combines per-kind outputs into one comparison table.
//! Floats are printed with Rust's shortest-roundtrip formatting, so equal
//! results produce byte-equal files. Wall-clock numbers live in separate
//! timing_*.csv files, which are the only outputs expected to differ
//! between repeated runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use drycast_core::error::{Error, Result};
use drycast_core::metrics::{mae, per_timestamp_mae};

use crate::corpus::io_err;
use crate::experiments::{
    reduction_percent, CvOutcome, EncoderRow, FrameSweepRow, GroupSweepRow, Kind, Protocol,
};

/// Identifies which data and which configuration produced an output file.
/// Both halves are embedded in file names as sixteen hex digits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stamp {
    pub corpus: u64,
    pub config: u64,
}

impl Stamp {
    pub fn new(corpus: u64, kind: Kind, p: &Protocol) -> Self {
        Stamp {
            corpus,
            config: fnv1a64(semantic_text(kind, p).as_bytes()),
        }
    }

    fn suffix(&self) -> String {
        format!("{:016x}_{:016x}", self.corpus, self.config)
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x1000_0000_01b3);
    }
    h
}

/// The result-relevant part of a protocol as stable key=value text. The
/// master seed, thread count, and timing repetitions are excluded: seeds
/// get their own file-name slot and the other two cannot change results.
pub fn semantic_text(kind: Kind, p: &Protocol) -> String {
    format!(
        "kind = {}\nepochs = {}\nbatch_size = {}\nlr = {}\nlambda = {}\nframes = {}\n[model]\n{}",
        kind.name(),
        p.hp.epochs,
        p.hp.batch_size,
        p.hp.lr,
        p.hp.lambda,
        p.hp.frames,
        p.model.to_text(),
    )
}

/// Full configuration record for one training invocation. Holds paths, so
/// it is excluded from byte-level determinism checks.
pub fn config_text(kind: Kind, p: &Protocol, corpus_path: &Path, stamp: Stamp) -> String {
    format!(
        "version = {}\ncorpus_path = {}\ncorpus_hash = {:016x}\nconfig_hash = {:016x}\n\
         seed = {}\nparallel_folds = {}\ntiming_reps = {}\n{}",
        env!("CARGO_PKG_VERSION"),
        corpus_path.display(),
        stamp.corpus,
        stamp.config,
        p.hp.seed,
        p.parallel_folds,
        p.timing_reps,
        semantic_text(kind, p),
    )
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn join_conditions(conditions: &[usize]) -> String {
    let mut s = String::new();
    for (i, c) in conditions.iter().enumerate() {
        if i > 0 {
            s.push('|');
        }
        let _ = write!(s, "{c}");
    }
    s
}

/// Writes one cross-validation run's outputs into `dir`: the per-fold
/// summary, per-timestamp errors, raw predictions, timings, checkpoints,
/// and the configuration record. Returns the deterministic file paths
/// (everything except timing and config).
pub fn write_cv(
    dir: &Path,
    out: &CvOutcome,
    cadence: f64,
    stamp: Stamp,
    kind: Kind,
    p: &Protocol,
    corpus_path: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let name = kind.name();
    let seed = out.master_seed;
    let tail = stamp.suffix();
    let mut written = Vec::new();

    // Per-fold summary with the two aggregate rows every table reports.
    let mut csv = String::from("kind,seed,fold,eval_conditions,n,param_count,mae\n");
    let mut total_n = 0usize;
    for f in &out.folds {
        total_n += f.predictions.len();
        let _ = writeln!(
            csv,
            "{name},{seed},{},{},{},{},{}",
            f.fold,
            join_conditions(&f.eval_conditions),
            f.predictions.len(),
            f.param_count,
            f.mae,
        );
    }
    let params = out.folds[0].param_count;
    let _ = writeln!(csv, "{name},{seed},mean,,,{params},{}", out.fold_mean);
    let _ = writeln!(csv, "{name},{seed},pooled,,{total_n},{params},{}", out.pooled);
    let path = dir.join(format!("folds_{name}_s{seed}_{tail}.csv"));
    write_text(&path, &csv)?;
    written.push(path);

    // Error by remaining time, per fold and pooled over all folds.
    let mut csv = String::from("kind,seed,fold,label,count,mae,std\n");
    for f in &out.folds {
        for t in &f.per_ts {
            let _ = writeln!(
                csv,
                "{name},{seed},{},{},{},{},{}",
                f.fold, t.label, t.count, t.mae, t.std
            );
        }
    }
    let mut labels = Vec::with_capacity(total_n);
    let mut preds = Vec::with_capacity(total_n);
    let mut targets = Vec::with_capacity(total_n);
    for f in &out.folds {
        for (s, p) in &f.predictions {
            labels.push(s.label);
            preds.push(*p);
            targets.push(s.label);
        }
    }
    for t in per_timestamp_mae(&labels, &preds, &targets)? {
        let _ = writeln!(
            csv,
            "{name},{seed},pooled,{},{},{},{}",
            t.label, t.count, t.mae, t.std
        );
    }
    let path = dir.join(format!("per_timestamp_{name}_s{seed}_{tail}.csv"));
    write_text(&path, &csv)?;
    written.push(path);

    // Raw predictions, one row per held-out sample.
    let mut csv =
        String::from("kind,seed,fold,run,cookie,end_frame,padded,timestamp_s,label,prediction\n");
    for f in &out.folds {
        for (s, p) in &f.predictions {
            let _ = writeln!(
                csv,
                "{name},{seed},{},{},{},{},{},{},{},{p}",
                f.fold,
                s.run,
                s.cookie,
                s.end_frame,
                s.padded,
                s.timestamp(cadence),
                s.label,
            );
        }
    }
    let path = dir.join(format!("predictions_{name}_s{seed}_{tail}.csv"));
    write_text(&path, &csv)?;
    written.push(path);

    // Wall-clock block, deliberately outside the deterministic set.
    let mut csv = String::from("kind,seed,fold,inference_ms\n");
    let mut times = Vec::with_capacity(out.folds.len());
    for f in &out.folds {
        times.push(f.inference_ms);
        let _ = writeln!(csv, "{name},{seed},{},{}", f.fold, f.inference_ms);
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let _ = writeln!(csv, "{name},{seed},median,{}", times[times.len() / 2]);
    write_text(&dir.join(format!("timing_{name}_s{seed}.csv")), &csv)?;

    for f in &out.folds {
        if f.checkpoint.is_empty() {
            continue;
        }
        let path = dir.join(format!("ckpt_{name}_s{seed}_f{}.bin", f.fold));
        fs::write(&path, &f.checkpoint).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }

    write_text(
        &dir.join(format!("config_{name}_s{seed}.txt")),
        &config_text(kind, p, corpus_path, stamp),
    )?;
    Ok(written)
}

/// Frame-count sweep tables: the deterministic error table plus a timing
/// table with the per-b inference medians.
pub fn write_frames_sweep(dir: &Path, rows: &[FrameSweepRow], stamp: Stamp) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut csv = String::from("b,kind,seed,fold_mean,pooled\n");
    let mut timing = String::from("b,kind,inference_ms\n");
    for r in rows {
        for o in &r.per_seed {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                r.b,
                r.kind.name(),
                o.master_seed,
                o.fold_mean,
                o.pooled
            );
        }
        let _ = writeln!(
            csv,
            "{},{},mean,{},{}",
            r.b,
            r.kind.name(),
            r.fold_mean,
            r.pooled
        );
        let _ = writeln!(timing, "{},{},{}", r.b, r.kind.name(), r.inference_ms);
    }
    let path = dir.join(format!("frames_sweep_{}.csv", stamp.suffix()));
    write_text(&path, &csv)?;
    write_text(&dir.join(format!("timing_frames_{}.csv", stamp.suffix())), &timing)?;
    Ok(path)
}

/// Training-group sweep tables: per-k errors for both kinds and the
/// video-to-multi error reduction per k.
pub fn write_groups_sweep(dir: &Path, rows: &[GroupSweepRow], stamp: Stamp) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut csv = String::from("k,kind,seed,fold_mean,pooled\n");
    for r in rows {
        for o in &r.per_seed {
            let _ = writeln!(
                csv,
                "{},{},{},{},{}",
                r.k,
                r.kind.name(),
                o.master_seed,
                o.fold_mean,
                o.pooled
            );
        }
        let _ = writeln!(
            csv,
            "{},{},mean,{},{}",
            r.k,
            r.kind.name(),
            r.fold_mean,
            r.pooled
        );
    }
    let mut ks: Vec<usize> = rows.iter().map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut red = String::from("k,video_only_mae,multi_modal_mae,reduction_pct\n");
    for k in ks {
        let video = rows.iter().find(|r| r.k == k && r.kind == Kind::VideoOnly);
        let multi = rows.iter().find(|r| r.k == k && r.kind == Kind::MultiModal);
        if let (Some(v), Some(m)) = (video, multi) {
            let _ = writeln!(
                red,
                "{k},{},{},{}",
                v.fold_mean,
                m.fold_mean,
                reduction_percent(v.fold_mean, m.fold_mean)
            );
        }
    }
    let path = dir.join(format!("groups_sweep_{}.csv", stamp.suffix()));
    write_text(&path, &csv)?;
    write_text(&dir.join(format!("groups_reduction_{}.csv", stamp.suffix())), &red)?;
    Ok(path)
}

/// Encoder comparison tables. Error and size are deterministic; the timing
/// table carries inference medians and the min-max normalized triple,
/// whose time axis makes it non-reproducible byte-for-byte.
pub fn write_encoders(dir: &Path, rows: &[EncoderRow], stamp: Stamp) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut csv = String::from("variant,status,fold_mean,pooled,param_count,reason\n");
    let mut timing = String::from("variant,inference_ms,norm_mae,norm_params,norm_time\n");
    for r in rows {
        match (&r.result, &r.skip_reason) {
            (Some(s), _) => {
                let _ = writeln!(
                    csv,
                    "{},trained,{},{},{},",
                    r.encoder.name(),
                    s.fold_mean,
                    s.pooled,
                    s.param_count
                );
                let _ = writeln!(
                    timing,
                    "{},{},{},{},{}",
                    r.encoder.name(),
                    s.inference_ms,
                    s.normalized[0],
                    s.normalized[1],
                    s.normalized[2]
                );
            }
            (None, Some(reason)) => {
                let _ = writeln!(csv, "{},skipped,,,,{reason}", r.encoder.name());
            }
            (None, None) => unreachable!("a row either trained or carries a reason"),
        }
    }
    let path = dir.join(format!("encoders_{}.csv", stamp.suffix()));
    write_text(&path, &csv)?;
    write_text(&dir.join(format!("timing_encoders_{}.csv", stamp.suffix())), &timing)?;
    Ok(path)
}

// ── merging per-kind outputs into the comparison table ──────────────────────

#[derive(Debug)]
struct LoadedCv {
    kind: Kind,
    seed: u64,
    corpus_hex: String,
    fold_rows: Vec<(usize, usize, f64)>,
    fold_mean: f64,
    pooled: f64,
    predictions_name: String,
}

fn split_name<'a>(stem: &'a str, prefix: &str) -> Option<(Kind, u64, String, String)> {
    let rest = stem.strip_prefix(prefix)?;
    let parts: Vec<&str> = rest.split('_').collect();
    if parts.len() != 4 {
        return None;
    }
    let kind = Kind::parse(parts[0]).ok()?;
    let seed = parts[1].strip_prefix('s')?.parse().ok()?;
    Some((kind, seed, parts[2].to_string(), parts[3].to_string()))
}

fn parse_fold_csv(path: &Path) -> Result<LoadedCv> {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or_default();
    let (kind, seed, corpus_hex, config_hex) =
        split_name(stem, "folds_").ok_or_else(|| Error::Decode {
            what: format!("{}: not a fold summary name", path.display()),
        })?;
    let bad = |what: String| Error::Decode {
        what: format!("{}: {what}", path.display()),
    };
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("kind,seed,fold,eval_conditions,n,param_count,mae") {
        return Err(bad("unexpected header".into()));
    }
    let mut fold_rows = Vec::new();
    let (mut fold_mean, mut pooled) = (None, None);
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(bad(format!("expected 7 fields, got {}", f.len())));
        }
        let mae: f64 = f[6]
            .parse()
            .map_err(|_| bad(format!("bad mae {:?}", f[6])))?;
        match f[2] {
            "mean" => fold_mean = Some(mae),
            "pooled" => pooled = Some(mae),
            idx => {
                let fold = idx.parse().map_err(|_| bad(format!("bad fold {idx:?}")))?;
                let n = f[4].parse().map_err(|_| bad(format!("bad n {:?}", f[4])))?;
                fold_rows.push((fold, n, mae));
            }
        }
    }
    let predictions_name = format!(
        "predictions_{}_s{seed}_{corpus_hex}_{config_hex}.csv",
        kind.name()
    );
    Ok(LoadedCv {
        kind,
        seed,
        corpus_hex,
        fold_rows,
        fold_mean: fold_mean.ok_or_else(|| bad("missing mean row".into()))?,
        pooled: pooled.ok_or_else(|| bad("missing pooled row".into()))?,
        predictions_name,
    })
}

/// Per-fold (label, prediction) pairs from a predictions file, in row order.
fn parse_predictions_csv(path: &Path) -> Result<Vec<(usize, f64, f64)>> {
    let bad = |what: String| Error::Decode {
        what: format!("{}: {what}", path.display()),
    };
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines();
    if lines.next()
        != Some("kind,seed,fold,run,cookie,end_frame,padded,timestamp_s,label,prediction")
    {
        return Err(bad("unexpected header".into()));
    }
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 10 {
            return Err(bad(format!("expected 10 fields, got {}", f.len())));
        }
        let fold = f[2].parse().map_err(|_| bad(format!("bad fold {:?}", f[2])))?;
        let label = f[8].parse().map_err(|_| bad(format!("bad label {:?}", f[8])))?;
        let pred = f[9]
            .parse()
            .map_err(|_| bad(format!("bad prediction {:?}", f[9])))?;
        rows.push((fold, label, pred));
    }
    Ok(rows)
}

/// Merges the per-kind outputs found in `inputs` into one comparison table
/// at `out_dir/summary_<corpus hash>.csv`. Every input must come from the
/// same corpus; per-fold errors are recomputed from the raw predictions
/// and must agree with the stored summaries. Running the merge twice over
/// the same inputs writes identical bytes.
pub fn merge_reports(inputs: &[PathBuf], out_dir: &Path) -> Result<PathBuf> {
    let mut loaded: Vec<(PathBuf, LoadedCv)> = Vec::new();
    for dir in inputs {
        let mut names: Vec<PathBuf> = Vec::new();
        for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
            let entry = entry.map_err(|e| io_err(dir, e))?;
            names.push(entry.path());
        }
        names.sort();
        for path in names {
            let stem = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default();
            if stem.starts_with("folds_") && path.extension().is_some_and(|e| e == "csv") {
                loaded.push((dir.clone(), parse_fold_csv(&path)?));
            }
        }
    }
    if loaded.is_empty() {
        return Err(Error::Invalid {
            what: "no fold summaries found in the input directories".into(),
        });
    }

    let corpus_hex = loaded[0].1.corpus_hex.clone();
    for (dir, cv) in &loaded {
        if cv.corpus_hex != corpus_hex {
            return Err(Error::Invalid {
                what: format!(
                    "corpus mismatch: {} holds {} data, expected {corpus_hex}",
                    dir.display(),
                    cv.corpus_hex
                ),
            });
        }
    }

    // Cross-check the stored aggregates against the raw predictions.
    for (dir, cv) in &loaded {
        let rows = parse_predictions_csv(&dir.join(&cv.predictions_name))?;
        for &(fold, n, stored) in &cv.fold_rows {
            let (mut pred, mut target) = (Vec::new(), Vec::new());
            for &(f, label, p) in &rows {
                if f == fold {
                    pred.push(p);
                    target.push(label);
                }
            }
            let again = mae(&pred, &target)?;
            if pred.len() != n || (again - stored).abs() > 1e-9 {
                return Err(Error::Invalid {
                    what: format!(
                        "{} fold {fold}: stored mae {stored} but predictions give {again} over {} rows",
                        cv.predictions_name,
                        pred.len()
                    ),
                });
            }
        }
    }

    // Seed-averaged table in baseline, video-only, multi-modal order.
    let mut csv = String::from("kind,seeds,fold_mean_mae,pooled_mae,reduction_pct\n");
    let order = [Kind::Baseline, Kind::VideoOnly, Kind::MultiModal];
    let per_kind = |kind: Kind| -> Option<(String, f64, f64)> {
        let mut seeds: Vec<u64> = loaded
            .iter()
            .filter(|(_, cv)| cv.kind == kind)
            .map(|(_, cv)| cv.seed)
            .collect();
        if seeds.is_empty() {
            return None;
        }
        seeds.sort_unstable();
        seeds.dedup();
        let of: Vec<&LoadedCv> = loaded
            .iter()
            .filter(|(_, cv)| cv.kind == kind)
            .map(|(_, cv)| cv)
            .collect();
        let n = of.len() as f64;
        let fold_mean = of.iter().map(|cv| cv.fold_mean).sum::<f64>() / n;
        let pooled = of.iter().map(|cv| cv.pooled).sum::<f64>() / n;
        let mut s = String::new();
        for (i, seed) in seeds.iter().enumerate() {
            if i > 0 {
                s.push('|');
            }
            let _ = write!(s, "{seed}");
        }
        Some((s, fold_mean, pooled))
    };
    let baseline = per_kind(Kind::Baseline);
    for kind in order {
        if let Some((seeds, fold_mean, pooled)) = per_kind(kind) {
            let red = match (&baseline, kind) {
                (Some((_, base, _)), k) if k != Kind::Baseline => {
                    format!("{}", reduction_percent(*base, fold_mean))
                }
                _ => String::new(),
            };
            let _ = writeln!(csv, "{},{seeds},{fold_mean},{pooled},{red}", kind.name());
        }
    }

    fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;
    let path = out_dir.join(format!("summary_{corpus_hex}.csv"));
    write_text(&path, &csv)?;
    Ok(path)
}
