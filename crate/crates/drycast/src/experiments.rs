//! Cross-validated training and evaluation for the three model kinds, plus
//! the frame-count, training-group, and encoder sweeps. Every fold derives
//! its own random streams from (master seed, fold index), so fold results
//! do not depend on execution order and folds can run in parallel.

use std::time::Instant;

use drycast_core::baseline::BaselineParams;
use drycast_core::checkpoint;
use drycast_core::datapipe::{materialize_batch, FoldSpec, Normalizer, SampleRef};
use drycast_core::error::{Error, Result};
use drycast_core::metrics::{mae, per_timestamp_mae, TimestampStat};
use drycast_core::model::{EncoderKind, Model, ModelConfig, VideoOnlyModel};
use drycast_core::rng::mix;
use drycast_core::sim::CONDITIONS;
use drycast_core::train::{predict_all, train, Forecaster, Hyperparams};

use crate::cache::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    MultiModal,
    VideoOnly,
    Baseline,
}

impl Kind {
    pub const ALL: [Kind; 3] = [Kind::MultiModal, Kind::VideoOnly, Kind::Baseline];

    pub fn name(self) -> &'static str {
        match self {
            Kind::MultiModal => "multi-modal",
            Kind::VideoOnly => "video-only",
            Kind::Baseline => "baseline",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid {
                what: format!("unknown model kind {s:?} (multi-modal, video-only, baseline)"),
            })
    }
}

/// Everything one cross-validation run needs. `hp.seed` is the master seed;
/// per-fold streams are derived from it. `model.frames` follows `hp.frames`.
#[derive(Debug, Clone)]
pub struct Protocol {
    pub hp: Hyperparams,
    pub model: ModelConfig,
    pub parallel_folds: usize,
    /// Median-of-N predict calls per fold; 0 skips timing entirely.
    pub timing_reps: usize,
}

impl Protocol {
    /// Table-style defaults with the given master seed.
    pub fn new(seed: u64) -> Self {
        Protocol {
            hp: Hyperparams {
                seed,
                ..Hyperparams::default()
            },
            model: ModelConfig::default(),
            parallel_folds: 1,
            timing_reps: 50,
        }
    }

    /// The documented desk profile: 30 epochs at lr 1e-3 on the default
    /// corpus, window length 7.
    pub fn desk(seed: u64) -> Self {
        let mut p = Protocol::new(seed);
        p.hp.epochs = 30;
        p.hp.lr = 1e-3;
        p
    }

    pub fn with_frames(mut self, b: usize) -> Self {
        self.hp.frames = b;
        self.model.frames = b;
        self.model.slots = self.model.slots.max(b + 1);
        self
    }
}

/// One fold's evaluation record. Predictions are kept per sample so any
/// aggregate can be recomputed from the raw material.
#[derive(Debug, Clone)]
pub struct FoldOutcome {
    pub fold: usize,
    pub eval_conditions: Vec<usize>,
    pub mae: f64,
    pub per_ts: Vec<TimestampStat>,
    pub loss: Vec<f64>,
    /// Median wall-clock milliseconds of one batch-sized predict call.
    pub inference_ms: f64,
    pub param_count: usize,
    pub predictions: Vec<(SampleRef, f64)>,
    /// Encoded trained parameters; empty for the baseline.
    pub checkpoint: Vec<u8>,
}

/// All folds of one (kind, master seed) cross-validation run.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub kind: Kind,
    pub master_seed: u64,
    pub folds: Vec<FoldOutcome>,
    /// Unweighted mean of per-fold MAEs.
    pub fold_mean: f64,
    /// Sample-count-weighted MAE over all folds.
    pub pooled: f64,
}

fn aggregate(kind: Kind, master_seed: u64, folds: Vec<FoldOutcome>) -> CvOutcome {
    let fold_mean = folds.iter().map(|f| f.mae).sum::<f64>() / folds.len() as f64;
    let (mut num, mut den) = (0.0, 0usize);
    for f in &folds {
        num += f.mae * f.predictions.len() as f64;
        den += f.predictions.len();
    }
    CvOutcome {
        kind,
        master_seed,
        folds,
        fold_mean,
        pooled: num / den as f64,
    }
}

/// Trains and evaluates one kind across the given folds. Fold work is
/// distributed over `parallel_folds` threads; results land in fold order
/// regardless of scheduling because every stream is keyed by fold index.
pub fn run_cv(data: &Dataset, folds: &[FoldSpec], kind: Kind, p: &Protocol) -> Result<CvOutcome> {
    let b = p.hp.frames;
    let samples = data.samples(b);
    let workers = p.parallel_folds.clamp(1, folds.len());
    let mut outcomes: Vec<Option<Result<FoldOutcome>>> = Vec::new();
    outcomes.resize_with(folds.len(), || None);

    if workers == 1 {
        for (i, fold) in folds.iter().enumerate() {
            outcomes[i] = Some(run_fold(data, fold, &samples, kind, p));
        }
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<FoldOutcome>>>> =
            folds.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= folds.len() {
                        break;
                    }
                    let out = run_fold(data, &folds[i], &samples, kind, p);
                    *slots[i].lock().expect("no poisoned fold slot") = Some(out);
                });
            }
        });
        for (i, slot) in slots.into_iter().enumerate() {
            outcomes[i] = slot.into_inner().expect("no poisoned fold slot");
        }
    }

    let folds: Result<Vec<FoldOutcome>> = outcomes
        .into_iter()
        .map(|o| o.expect("every fold index visited"))
        .collect();
    Ok(aggregate(kind, p.hp.seed, folds?))
}

fn run_fold(
    data: &Dataset,
    fold: &FoldSpec,
    samples: &[SampleRef],
    kind: Kind,
    p: &Protocol,
) -> Result<FoldOutcome> {
    let train_set = data.filter_samples(samples, &fold.train);
    let eval_set = data.filter_samples(samples, &fold.eval);
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(Error::Invalid {
            what: format!("fold {} has an empty side", fold.fold),
        });
    }
    let target: Vec<f64> = eval_set.iter().map(|s| s.label).collect();
    let labels = target.clone();

    let (pred, loss, inference_ms, param_count, ckpt) = match kind {
        Kind::Baseline => baseline_fold(data, fold, &eval_set, p)?,
        Kind::MultiModal | Kind::VideoOnly => {
            let norm = Normalizer::fit(&data.tabular(&train_set))?;
            let hp = Hyperparams {
                seed: mix(&[p.hp.seed, fold.fold as u64, 1]),
                ..p.hp
            };
            let cfg = ModelConfig {
                seed: mix(&[p.hp.seed, fold.fold as u64, 2]),
                ..p.model.clone()
            };
            let runs = data.frames();
            if kind == Kind::MultiModal {
                let mut model = Model::init(&cfg)?;
                let report = train(&mut model, runs, &train_set, &norm, &hp)?;
                let pred = predict_all(&model, runs, &eval_set, &norm, hp.frames, hp.batch_size)?;
                let ms = time_inference(&model, runs, &eval_set, &norm, &hp, p.timing_reps)?;
                let names = model.param_names();
                let ckpt = checkpoint::encode(&names, &model.params());
                (pred, report.epoch_loss, ms, model.census().total(), ckpt)
            } else {
                let mut model = VideoOnlyModel::init(&cfg, cfg.seed);
                let report = train(&mut model, runs, &train_set, &norm, &hp)?;
                let pred = predict_all(&model, runs, &eval_set, &norm, hp.frames, hp.batch_size)?;
                let ms = time_inference(&model, runs, &eval_set, &norm, &hp, p.timing_reps)?;
                let names = model.param_names();
                let ckpt = checkpoint::encode(&names, &model.params());
                let count = model.params().iter().map(|t| t.data().len()).sum();
                (pred, report.epoch_loss, ms, count, ckpt)
            }
        }
    };

    let fold_mae = mae(&pred, &target)?;
    let per_ts = per_timestamp_mae(&labels, &pred, &target)?;
    Ok(FoldOutcome {
        fold: fold.fold,
        eval_conditions: fold.eval.clone(),
        mae: fold_mae,
        per_ts,
        loss,
        inference_ms,
        param_count,
        predictions: eval_set.into_iter().zip(pred).collect(),
        checkpoint: ckpt,
    })
}

/// The process-parameter baseline: least squares of per-condition mean
/// ready time on (1, temperature, fan), then ready minus elapsed per
/// sample. Never touches frames.
fn baseline_fold(
    data: &Dataset,
    fold: &FoldSpec,
    eval_set: &[SampleRef],
    p: &Protocol,
) -> Result<(Vec<f64>, Vec<f64>, f64, usize, Vec<u8>)> {
    let mut rows = Vec::with_capacity(fold.train.len());
    let mut means = Vec::with_capacity(fold.train.len());
    for &c in &fold.train {
        let cond = CONDITIONS[c];
        let ids = data.run_ids_for_conditions(&[c]);
        if ids.is_empty() {
            return Err(Error::Invalid {
                what: format!("no runs for training condition {c} in fold {}", fold.fold),
            });
        }
        rows.push([cond.temperature, cond.fan_speed]);
        means.push(ids.iter().map(|&i| data.ready_time(i)).sum::<f64>() / ids.len() as f64);
    }
    let params = BaselineParams::fit(&rows, &means)?;
    let predict_set = |set: &[SampleRef]| -> Vec<f64> {
        set.iter()
            .map(|s| {
                let cond = CONDITIONS[data.condition_idx(s.run)];
                let elapsed = data.ready_time(s.run) - s.label;
                params.predict(cond.temperature, cond.fan_speed, elapsed)
            })
            .collect()
    };
    let pred = predict_set(eval_set);
    let ms = if p.timing_reps == 0 {
        0.0
    } else {
        let batch: Vec<SampleRef> = eval_set.iter().copied().take(p.hp.batch_size).collect();
        median_ms(p.timing_reps, || {
            std::hint::black_box(predict_set(&batch));
        })
    };
    Ok((pred, Vec::new(), ms, 3, Vec::new()))
}

fn median_ms(reps: usize, mut f: impl FnMut()) -> f64 {
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t = Instant::now();
        f();
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    times[times.len() / 2]
}

/// Median wall-clock time of predicting one materialized batch, after the
/// warm-up the repetitions themselves provide. Materialization is excluded;
/// the number is the model's own forward cost.
fn time_inference<M: Forecaster>(
    model: &M,
    runs: &[drycast_core::datapipe::RunFrames],
    eval_set: &[SampleRef],
    norm: &Normalizer,
    hp: &Hyperparams,
    reps: usize,
) -> Result<f64> {
    if reps == 0 {
        return Ok(0.0);
    }
    let mut batch_refs: Vec<SampleRef> = Vec::with_capacity(hp.batch_size);
    while batch_refs.len() < hp.batch_size {
        let take = (hp.batch_size - batch_refs.len()).min(eval_set.len());
        batch_refs.extend_from_slice(&eval_set[..take]);
    }
    let (batch, _) = materialize_batch(runs, &batch_refs, hp.frames, norm)?;
    let mut sink = 0.0;
    let ms = median_ms(reps, || {
        let out = model.predict(&batch).expect("sized batch predicts");
        sink += out[0];
    });
    std::hint::black_box(sink);
    Ok(ms)
}

// ── sweeps ──────────────────────────────────────────────────────────────────

/// One (window length, kind) cell of the frame sweep, seed-averaged.
#[derive(Debug, Clone)]
pub struct FrameSweepRow {
    pub b: usize,
    pub kind: Kind,
    pub fold_mean: f64,
    pub pooled: f64,
    pub inference_ms: f64,
    pub per_seed: Vec<CvOutcome>,
}

/// Retrains both network kinds per window length. The per-row numbers are
/// means over the given master seeds; inference time is the median of all
/// per-fold medians.
pub fn sweep_frames(
    data: &Dataset,
    bs: &[usize],
    seeds: &[u64],
    base: &Protocol,
) -> Result<Vec<FrameSweepRow>> {
    let folds = data.logocv()?;
    let mut rows = Vec::new();
    for &b in bs {
        for kind in [Kind::MultiModal, Kind::VideoOnly] {
            let mut per_seed = Vec::new();
            for &s in seeds {
                let mut p = base.clone().with_frames(b);
                p.hp.seed = s;
                per_seed.push(run_cv(data, &folds, kind, &p)?);
            }
            rows.push(summarize_row(b, kind, per_seed));
        }
    }
    Ok(rows)
}

fn summarize_row(b: usize, kind: Kind, per_seed: Vec<CvOutcome>) -> FrameSweepRow {
    let n = per_seed.len() as f64;
    let fold_mean = per_seed.iter().map(|o| o.fold_mean).sum::<f64>() / n;
    let pooled = per_seed.iter().map(|o| o.pooled).sum::<f64>() / n;
    let mut times: Vec<f64> = per_seed
        .iter()
        .flat_map(|o| o.folds.iter().map(|f| f.inference_ms))
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
    let inference_ms = if times.is_empty() {
        0.0
    } else {
        times[times.len() / 2]
    };
    FrameSweepRow {
        b,
        kind,
        fold_mean,
        pooled,
        inference_ms,
        per_seed,
    }
}

/// One (training-group count, kind) cell of the group sweep.
#[derive(Debug, Clone)]
pub struct GroupSweepRow {
    pub k: usize,
    pub kind: Kind,
    pub fold_mean: f64,
    pub pooled: f64,
    pub per_seed: Vec<CvOutcome>,
}

/// Retrains both network kinds per training-group count k, evaluating on
/// the other 8−k conditions. k = 7 is exactly the leave-one-group-out
/// protocol.
pub fn sweep_groups(
    data: &Dataset,
    ks: &[usize],
    seeds: &[u64],
    base: &Protocol,
) -> Result<Vec<GroupSweepRow>> {
    let mut rows = Vec::new();
    for &k in ks {
        let folds = data.reduced_splits(k)?;
        for kind in [Kind::MultiModal, Kind::VideoOnly] {
            let mut per_seed = Vec::new();
            for &s in seeds {
                let mut p = base.clone();
                p.hp.seed = s;
                per_seed.push(run_cv(data, &folds, kind, &p)?);
            }
            let n = per_seed.len() as f64;
            rows.push(GroupSweepRow {
                k,
                kind,
                fold_mean: per_seed.iter().map(|o| o.fold_mean).sum::<f64>() / n,
                pooled: per_seed.iter().map(|o| o.pooled).sum::<f64>() / n,
                per_seed,
            });
        }
    }
    Ok(rows)
}

/// The multi-modal-over-video-only reduction, as a percentage of the
/// video-only error.
pub fn reduction_percent(video_only: f64, multi_modal: f64) -> f64 {
    (video_only - multi_modal) / video_only * 100.0
}

/// One encoder variant's scorecard, or the reason it cannot be trained.
#[derive(Debug, Clone)]
pub struct EncoderRow {
    pub encoder: EncoderKind,
    /// None with a reason when the variant needs pretrained weights.
    pub result: Option<EncoderScore>,
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EncoderScore {
    pub fold_mean: f64,
    pub pooled: f64,
    pub param_count: usize,
    pub inference_ms: f64,
    /// Min-max normalized (MAE, parameters, time) over the trained set;
    /// lower is better on every axis.
    pub normalized: [f64; 3],
}

/// Trains each requested variant under identical hyperparameters (one
/// master seed) and min-max normalizes the three comparison axes over the
/// variants that actually ran.
pub fn compare_encoders(
    data: &Dataset,
    variants: &[EncoderKind],
    base: &Protocol,
) -> Result<Vec<EncoderRow>> {
    let folds = data.logocv()?;
    let mut rows: Vec<EncoderRow> = Vec::new();
    for &enc in variants {
        if !enc.is_available() {
            rows.push(EncoderRow {
                encoder: enc,
                result: None,
                skip_reason: Some(format!(
                    "{} needs large-scale pretrained weights, which this build does not ship",
                    enc.name()
                )),
            });
            continue;
        }
        let mut p = base.clone();
        p.model.encoder = enc;
        let cv = run_cv(data, &folds, Kind::MultiModal, &p)?;
        let params = cv.folds[0].param_count;
        let mut times: Vec<f64> = cv.folds.iter().map(|f| f.inference_ms).collect();
        times.sort_by(|a, b| a.partial_cmp(b).expect("finite timings"));
        rows.push(EncoderRow {
            encoder: enc,
            result: Some(EncoderScore {
                fold_mean: cv.fold_mean,
                pooled: cv.pooled,
                param_count: params,
                inference_ms: times[times.len() / 2],
                normalized: [0.0; 3],
            }),
            skip_reason: None,
        });
    }

    let trained: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.result.is_some())
        .map(|(i, _)| i)
        .collect();
    for axis in 0..3 {
        let vals: Vec<f64> = trained
            .iter()
            .map(|&i| {
                let s = rows[i].result.as_ref().expect("trained row");
                match axis {
                    0 => s.fold_mean,
                    1 => s.param_count as f64,
                    _ => s.inference_ms,
                }
            })
            .collect();
        let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (&i, &v) in trained.iter().zip(&vals) {
            let s = rows[i].result.as_mut().expect("trained row");
            s.normalized[axis] = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
        }
    }
    Ok(rows)
}

/// Train/eval separation audit over actual sample sets: no shared run ids,
/// no shared conditions, and for the 8-fold split every condition is an
/// eval target exactly once.
pub fn audit_folds(data: &Dataset, folds: &[FoldSpec], expect_logocv: bool) -> Result<()> {
    let mut eval_hits = [0usize; 8];
    for fold in folds {
        if fold.train.iter().any(|c| fold.eval.contains(c)) {
            return Err(Error::Invalid {
                what: format!("fold {}: a condition sits on both sides", fold.fold),
            });
        }
        let train_ids = data.run_ids_for_conditions(&fold.train);
        let eval_ids = data.run_ids_for_conditions(&fold.eval);
        if train_ids.iter().any(|i| eval_ids.contains(i)) {
            return Err(Error::Invalid {
                what: format!("fold {}: a run sits on both sides", fold.fold),
            });
        }
        for &c in &fold.eval {
            eval_hits[c] += 1;
        }
    }
    if expect_logocv && eval_hits != [1; 8] {
        return Err(Error::Invalid {
            what: format!("conditions are not evaluated exactly once: {eval_hits:?}"),
        });
    }
    Ok(())
}
