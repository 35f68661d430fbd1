//! On-disk corpus: one directory per run holding the composite frames, the
//! per-cookie crop frames the models consume, and a meta file; a top-level
//! manifest lists every run. Every byte is a pure function of
//! (runs_per_condition, master_seed, sim config), so regeneration is
//! byte-identical and one hash pins the whole artifact.

use std::fs;
use std::path::{Path, PathBuf};

use drycast_core::datapipe::RunFrames;
use drycast_core::error::{Error, Result};
use drycast_core::rng::mix;
use drycast_core::sim::{
    self, condition_index, render_composite, sample_run_cfg, SimConfig, CONDITIONS,
    COOKIES_PER_RUN,
};
use drycast_core::tensor::Tensor;

/// One manifest row.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub run_id: usize,
    pub temperature: f64,
    pub fan_rpm: f64,
    pub seed: u64,
    pub ready_time: f64,
    pub cadence: f64,
}

#[derive(Debug, Clone)]
pub struct CorpusSummary {
    pub root: PathBuf,
    pub runs: Vec<RunMeta>,
    pub cookie_series: usize,
}

pub(crate) fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Decode {
        what: format!("{}: {e}", path.display()),
    }
}

fn run_dir(root: &Path, run_id: usize) -> PathBuf {
    root.join(format!("run_{run_id:03}"))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn manifest_line(m: &RunMeta) -> String {
    format!(
        "{},{},{},{},{},{}\n",
        m.run_id, m.temperature, m.fan_rpm, m.seed, m.ready_time, m.cadence
    )
}

/// Renders and writes every run. The per-run seed is mixed from
/// (master_seed, condition index, repetition), so any single run can be
/// regenerated in isolation. An existing corpus at `root` is replaced;
/// unrelated files in the directory are left alone but will show up in the
/// corpus hash, so a fresh or dedicated directory is the norm.
pub fn generate_corpus(
    root: &Path,
    runs_per_condition: usize,
    master_seed: u64,
    cfg: &SimConfig,
) -> Result<CorpusSummary> {
    if runs_per_condition == 0 {
        return Err(Error::Invalid {
            what: "runs_per_condition must be at least 1".into(),
        });
    }
    fs::create_dir_all(root).map_err(|e| io_err(root, e))?;
    // Clear previous generations so leftovers from a larger corpus cannot
    // shadow the new one.
    for entry in fs::read_dir(root).map_err(|e| io_err(root, e))? {
        let entry = entry.map_err(|e| io_err(root, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with("run_") && entry.path().is_dir() {
            fs::remove_dir_all(entry.path()).map_err(|e| io_err(&entry.path(), e))?;
        } else if name == "manifest.txt" {
            fs::remove_file(entry.path()).map_err(|e| io_err(&entry.path(), e))?;
        }
    }

    let mut manifest = String::from("run_id,temperature,fan_rpm,seed,ready_time,cadence\n");
    let mut runs = Vec::new();
    for (c, cond) in CONDITIONS.iter().enumerate() {
        for rep in 0..runs_per_condition {
            let run_id = c * runs_per_condition + rep;
            let seed = mix(&[master_seed, c as u64, rep as u64]);
            let run = sample_run_cfg(cfg, *cond, seed)?;
            let meta = RunMeta {
                run_id,
                temperature: cond.temperature,
                fan_rpm: cond.fan_speed,
                seed,
                ready_time: run.ready_time,
                cadence: cfg.cadence,
            };
            write_run(root, cfg, &run, &meta)?;
            manifest.push_str(&manifest_line(&meta));
            runs.push(meta);
        }
    }
    write_file(&root.join("manifest.txt"), manifest.as_bytes())?;
    Ok(CorpusSummary {
        root: root.to_path_buf(),
        cookie_series: runs.len() * COOKIES_PER_RUN,
        runs,
    })
}

fn write_run(root: &Path, cfg: &SimConfig, run: &sim::DryingRun, meta: &RunMeta) -> Result<()> {
    let dir = run_dir(root, meta.run_id);
    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    let meta_text = format!(
        "run_id = {}\ntemperature = {}\nfan_rpm = {}\nseed = {}\nready_time = {}\n\
         cadence = {}\nframes = {}\ncrop = {}\ncookies = {}\n",
        meta.run_id,
        meta.temperature,
        meta.fan_rpm,
        meta.seed,
        meta.ready_time,
        meta.cadence,
        cfg.frame_count(),
        cfg.crop,
        COOKIES_PER_RUN,
    );
    write_file(&dir.join("meta.txt"), meta_text.as_bytes())?;
    for (f, t) in cfg.frame_times().iter().enumerate() {
        let composite = render_composite(cfg, run, *t)?;
        write_file(
            &dir.join(format!("frame_{f:03}.ppm")),
            &sim::encode_ppm(&composite)?,
        )?;
        for cookie in 0..COOKIES_PER_RUN {
            let crop = sim::render_crop(cfg, run, cookie, *t)?;
            write_file(
                &dir.join(format!("crop_{f:03}_{cookie}.ppm")),
                &sim::encode_ppm(&crop)?,
            )?;
        }
    }
    Ok(())
}

fn parse_kv(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Decode {
            what: format!("{}: expected key = value, got {line:?}", path.display()),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn field<'a>(path: &Path, kv: &'a [(String, String)], key: &str) -> Result<&'a str> {
    kv.iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::Decode {
            what: format!("{}: missing field {key:?}", path.display()),
        })
}

fn num<T: core::str::FromStr>(path: &Path, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| Error::Decode {
        what: format!("{}: field {key} has invalid value {v:?}", path.display()),
    })
}

/// Reads the manifest back. Order follows the file, which generation writes
/// in run_id order.
pub fn read_manifest(root: &Path) -> Result<Vec<RunMeta>> {
    let path = root.join("manifest.txt");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 {
            if line != "run_id,temperature,fan_rpm,seed,ready_time,cadence" {
                return Err(Error::Decode {
                    what: format!("{}: unexpected header {line:?}", path.display()),
                });
            }
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::Decode {
                what: format!("{}: line {}: expected 6 fields", path.display(), i + 1),
            });
        }
        out.push(RunMeta {
            run_id: num(&path, "run_id", parts[0])?,
            temperature: num(&path, "temperature", parts[1])?,
            fan_rpm: num(&path, "fan_rpm", parts[2])?,
            seed: num(&path, "seed", parts[3])?,
            ready_time: num(&path, "ready_time", parts[4])?,
            cadence: num(&path, "cadence", parts[5])?,
        });
    }
    if out.is_empty() {
        return Err(Error::Decode {
            what: format!("{}: no runs listed", path.display()),
        });
    }
    Ok(out)
}

fn quantize(img: &Tensor) -> Vec<u8> {
    img.data()
        .iter()
        .map(|v| drycast_core::fmath::round(v.clamp(0.0, 1.0) * 255.0) as u8)
        .collect()
}

/// Loads the per-cookie crop frames of every run into memory. Composite
/// frames are not read; they exist for the segmentation path and for
/// inspection. The returned pixel bytes are exactly what the simulator
/// produced, so a loaded corpus and a freshly rendered one are
/// interchangeable.
pub fn load_corpus(root: &Path) -> Result<Vec<RunFrames>> {
    let manifest = read_manifest(root)?;
    let mut runs = Vec::with_capacity(manifest.len());
    for (i, m) in manifest.iter().enumerate() {
        if m.run_id != i {
            return Err(Error::Decode {
                what: format!(
                    "{}: runs out of order (position {i} holds run_id {})",
                    root.display(),
                    m.run_id
                ),
            });
        }
        runs.push(load_run(root, m)?);
    }
    Ok(runs)
}

fn load_run(root: &Path, m: &RunMeta) -> Result<RunFrames> {
    let dir = run_dir(root, m.run_id);
    let meta_path = dir.join("meta.txt");
    let text = fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let kv = parse_kv(&meta_path, &text)?;
    let frames: usize = num(&meta_path, "frames", field(&meta_path, &kv, "frames")?)?;
    let crop: usize = num(&meta_path, "crop", field(&meta_path, &kv, "crop")?)?;
    let cookies: usize = num(&meta_path, "cookies", field(&meta_path, &kv, "cookies")?)?;
    let ready: f64 = num(&meta_path, "ready_time", field(&meta_path, &kv, "ready_time")?)?;
    if ready != m.ready_time {
        return Err(Error::Decode {
            what: format!(
                "{}: ready_time {ready} disagrees with the manifest's {}",
                meta_path.display(),
                m.ready_time
            ),
        });
    }
    if cookies != COOKIES_PER_RUN {
        return Err(Error::Decode {
            what: format!("{}: expected {COOKIES_PER_RUN} cookies", meta_path.display()),
        });
    }
    let condition_idx = condition_index(drycast_core::sim::ProcessCondition {
        temperature: m.temperature,
        fan_speed: m.fan_rpm,
    })
    .ok_or_else(|| Error::Decode {
        what: format!(
            "{}: condition ({} °F, {} RPM) is not in the design",
            meta_path.display(),
            m.temperature,
            m.fan_rpm
        ),
    })?;

    let mut cookie_bufs = vec![Vec::with_capacity(frames * 3 * crop * crop); cookies];
    for f in 0..frames {
        for (cookie, buf) in cookie_bufs.iter_mut().enumerate() {
            let path = dir.join(format!("crop_{f:03}_{cookie}.ppm"));
            let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
            let img = sim::decode_ppm(&bytes)?;
            let s = img.shape();
            if s[1] != crop || s[2] != crop {
                return Err(Error::Decode {
                    what: format!("{}: expected {crop}x{crop} crop", path.display()),
                });
            }
            buf.extend(quantize(&img));
        }
    }
    Ok(RunFrames {
        run_id: m.run_id,
        condition_idx,
        ready_time: m.ready_time,
        cadence: m.cadence,
        frame_count: frames,
        height: crop,
        width: crop,
        cookies: cookie_bufs,
    })
}

/// FNV-1a over every file under the root in sorted relative-path order,
/// path bytes included, so renaming, adding, or editing any file moves the
/// hash. Fast enough to run on every load.
pub fn corpus_hash(root: &Path) -> Result<u64> {
    let mut files = Vec::new();
    collect_files(root, root, &mut files)?;
    files.sort();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x1000_0000_01b3);
        }
    };
    for rel in &files {
        eat(rel.as_bytes());
        eat(&[0]);
        let path = root.join(rel);
        let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
        eat(&bytes);
    }
    Ok(h)
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| io_err(dir, e))? {
        let entry = entry.map_err(|e| io_err(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("entries live under root")
                .components()
                .map(|c| c.as_os_str().to_string_lossy())
                .collect::<Vec<_>>()
                .join("/");
            out.push(rel);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SimConfig {
        // Short runs keep generation cheap; 12 frames still cover the label
        // window for nothing (the loader never checks labels).
        SimConfig {
            duration: 120.0,
            ..SimConfig::default()
        }
    }

    #[test]
    fn corpus_round_trips_and_rehashes() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = small_cfg();
        let summary = generate_corpus(tmp.path(), 1, 7, &cfg).unwrap();
        assert_eq!(summary.runs.len(), 8);
        assert_eq!(summary.cookie_series, 24);
        let h1 = corpus_hash(tmp.path()).unwrap();

        let loaded = load_corpus(tmp.path()).unwrap();
        assert_eq!(loaded.len(), 8);
        for (i, r) in loaded.iter().enumerate() {
            assert_eq!(r.run_id, i);
            assert_eq!(r.frame_count, 12);
            let direct = RunFrames::from_sim(
                &cfg,
                &sample_run_cfg(&cfg, CONDITIONS[r.condition_idx], summary.runs[i].seed).unwrap(),
                i,
            )
            .unwrap();
            assert_eq!(r.cookies, direct.cookies, "run {i} pixel bytes differ");
            assert_eq!(r.ready_time, direct.ready_time);
        }

        generate_corpus(tmp.path(), 1, 7, &cfg).unwrap();
        assert_eq!(corpus_hash(tmp.path()).unwrap(), h1, "regeneration moved the hash");

        // A different master seed must not collide.
        generate_corpus(tmp.path(), 1, 8, &cfg).unwrap();
        assert_ne!(corpus_hash(tmp.path()).unwrap(), h1);
    }

    #[test]
    fn hotter_ovens_finish_sooner_in_the_manifest() {
        let tmp = tempfile::tempdir().unwrap();
        let summary = generate_corpus(tmp.path(), 3, 0, &small_cfg()).unwrap();
        let mean = |temp: f64| {
            let picked: Vec<f64> = summary
                .runs
                .iter()
                .filter(|m| m.temperature == temp)
                .map(|m| m.ready_time)
                .collect();
            picked.iter().sum::<f64>() / picked.len() as f64
        };
        assert!(mean(400.0) < mean(350.0));
    }

    #[test]
    fn manifest_mismatch_is_reported() {
        let tmp = tempfile::tempdir().unwrap();
        generate_corpus(tmp.path(), 1, 3, &small_cfg()).unwrap();
        let meta = tmp.path().join("run_000").join("meta.txt");
        let doctored = fs::read_to_string(&meta)
            .unwrap()
            .replace("ready_time = ", "ready_time = 9");
        fs::write(&meta, doctored).unwrap();
        let err = load_corpus(tmp.path()).unwrap_err();
        assert!(format!("{err}").contains("disagrees"), "{err}");
    }
}
