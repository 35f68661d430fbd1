//! Dataset wrapper and on-disk sample cache. The wrapper separates metadata
//! reads (labels, conditions, ready times) from frame access so the
//! baseline's no-pixels property is checkable with a counter rather than by
//! code review; the cache files make sample sets and fold memberships
//! auditable without rerunning anything.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use drycast_core::datapipe::{
    label_grid_samples, tabular_rows, FoldSpec, RunFrames, SampleRef,
};
use drycast_core::error::{Error, Result};
use drycast_core::sim::CONDITIONS;

use crate::corpus::io_err;

/// Owns the loaded runs. Metadata queries go through dedicated methods that
/// never look at pixels; anything that needs frame bytes must call
/// [`Dataset::frames`], which bumps a counter. A model kind that claims to
/// ignore video can therefore be audited: its counter stays at zero.
pub struct Dataset {
    runs: Vec<RunFrames>,
    frame_taps: AtomicU64,
}

impl Dataset {
    pub fn new(runs: Vec<RunFrames>) -> Self {
        Dataset {
            runs,
            frame_taps: AtomicU64::new(0),
        }
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    /// Frame access for training and inference. Counted.
    pub fn frames(&self) -> &[RunFrames] {
        self.frame_taps.fetch_add(1, Ordering::Relaxed);
        &self.runs
    }

    /// How many times frame data was handed out.
    pub fn frame_taps(&self) -> u64 {
        self.frame_taps.load(Ordering::Relaxed)
    }

    /// The label grid over all runs. Reads run lengths and ready times only.
    pub fn samples(&self, b: usize) -> Vec<SampleRef> {
        label_grid_samples(&self.runs, b)
    }

    /// Raw (temperature, fan RPM) rows for the given samples.
    pub fn tabular(&self, samples: &[SampleRef]) -> Vec<[f64; 2]> {
        tabular_rows(&self.runs, samples)
    }

    pub fn condition_idx(&self, run: usize) -> usize {
        self.runs[run].condition_idx
    }

    pub fn ready_time(&self, run: usize) -> f64 {
        self.runs[run].ready_time
    }

    /// Seconds between frames; the whole corpus shares one cadence.
    pub fn cadence(&self) -> f64 {
        self.runs[0].cadence
    }

    pub fn run_ids_for_conditions(&self, conditions: &[usize]) -> Vec<usize> {
        self.runs
            .iter()
            .filter(|r| conditions.contains(&r.condition_idx))
            .map(|r| r.run_id)
            .collect()
    }

    /// Leave-one-group-out folds. Reads condition labels only.
    pub fn logocv(&self) -> Result<Vec<FoldSpec>> {
        drycast_core::datapipe::logocv_splits(&self.runs)
    }

    /// Reduced-training folds for k training conditions.
    pub fn reduced_splits(&self, k: usize) -> Result<Vec<FoldSpec>> {
        drycast_core::datapipe::reduced_training_splits(&self.runs, k)
    }

    /// Samples whose run's condition is on the given side of a fold.
    pub fn filter_samples(&self, samples: &[SampleRef], conditions: &[usize]) -> Vec<SampleRef> {
        drycast_core::datapipe::filter_by_conditions(&self.runs, samples, conditions)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"DRYCACHE";
const CACHE_VERSION: u32 = 1;

/// Writes the sample records for one window length: header (version, b,
/// count), then per sample (run, cookie, end_frame, padded, label). Pixel
/// data stays in the corpus; the cache pins which windows a training run
/// saw.
pub fn write_cache(path: &Path, b: usize, samples: &[SampleRef]) -> Result<()> {
    let mut out = Vec::with_capacity(16 + samples.len() * 21);
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    out.extend_from_slice(&(b as u32).to_le_bytes());
    out.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    for s in samples {
        out.extend_from_slice(&(s.run as u32).to_le_bytes());
        out.extend_from_slice(&(s.cookie as u32).to_le_bytes());
        out.extend_from_slice(&(s.end_frame as u32).to_le_bytes());
        out.push(s.padded as u8);
        out.extend_from_slice(&s.label.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| io_err(path, e))
}

pub fn read_cache(path: &Path) -> Result<(usize, Vec<SampleRef>)> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    let bad = |what: &str| Error::Decode {
        what: format!("{}: {what}", path.display()),
    };
    if bytes.len() < 20 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad("not a sample cache"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"));
    if word(8) != CACHE_VERSION {
        return Err(bad("unsupported cache version"));
    }
    let b = word(12) as usize;
    let count = word(16) as usize;
    if bytes.len() != 20 + count * 21 {
        return Err(bad("record payload length mismatch"));
    }
    let mut samples = Vec::with_capacity(count);
    for i in 0..count {
        let at = 20 + i * 21;
        samples.push(SampleRef {
            run: word(at) as usize,
            cookie: word(at + 4) as usize,
            end_frame: word(at + 8) as usize,
            padded: bytes[at + 12] != 0,
            label: f64::from_le_bytes(bytes[at + 13..at + 21].try_into().expect("8 bytes")),
        });
    }
    Ok((b, samples))
}

/// Human-readable fold memberships: which conditions and which run ids sit
/// on each side of every fold.
pub fn write_fold_manifest(path: &Path, data: &Dataset, folds: &[FoldSpec]) -> Result<()> {
    let mut text = String::from("# fold memberships: conditions as (temperature, fan RPM)\n");
    let side = |conds: &[usize]| {
        let names: Vec<String> = conds
            .iter()
            .map(|&c| format!("({}, {})", CONDITIONS[c].temperature, CONDITIONS[c].fan_speed))
            .collect();
        names.join(" ")
    };
    let ids = |conds: &[usize]| {
        let v: Vec<String> = data
            .run_ids_for_conditions(conds)
            .iter()
            .map(|i| i.to_string())
            .collect();
        v.join(",")
    };
    for f in folds {
        text.push_str(&format!(
            "fold {}\n  train conditions: {}\n  train runs: {}\n  eval conditions: {}\n  eval runs: {}\n",
            f.fold,
            side(&f.train),
            ids(&f.train),
            side(&f.eval),
            ids(&f.eval),
        ));
    }
    fs::write(path, text).map_err(|e| io_err(path, e))
}
