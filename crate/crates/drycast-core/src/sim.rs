//! Synthetic drying-run generator.
//!
//! Produces the full experimental design in miniature: 8 process conditions
//! (4 oven temperatures × 2 fan speeds), 3 cookies per run, one frame every
//! 10 s over a 9-minute drying window, and a ground-truth ready time per
//! run. The visual dynamics give a learnable pathway to that label: disk
//! area rises and peaks 60 s before readiness, and color browns
//! monotonically with elapsed fraction. Every constant is a surrogate
//! centralized in [`SimConfig`]; none is a measured physical value.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::rng::{mix, Rng};
use crate::tensor::Tensor;

/// Oven temperature (°F) and fan speed (RPM) of one drying environment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProcessCondition {
    pub temperature: f64,
    pub fan_speed: f64,
}

pub const TEMPERATURES: [f64; 4] = [350.0, 375.0, 385.0, 400.0];
pub const FAN_SPEEDS: [f64; 2] = [1000.0, 3000.0];

/// The eight conditions in canonical order: temperature-major, slow fan
/// first. Fold and rotation schemes index into this array.
pub const CONDITIONS: [ProcessCondition; 8] = [
    ProcessCondition { temperature: 350.0, fan_speed: 1000.0 },
    ProcessCondition { temperature: 350.0, fan_speed: 3000.0 },
    ProcessCondition { temperature: 375.0, fan_speed: 1000.0 },
    ProcessCondition { temperature: 375.0, fan_speed: 3000.0 },
    ProcessCondition { temperature: 385.0, fan_speed: 1000.0 },
    ProcessCondition { temperature: 385.0, fan_speed: 3000.0 },
    ProcessCondition { temperature: 400.0, fan_speed: 1000.0 },
    ProcessCondition { temperature: 400.0, fan_speed: 3000.0 },
];

pub fn condition_index(c: ProcessCondition) -> Option<usize> {
    CONDITIONS.iter().position(|k| *k == c)
}

/// Per-cookie appearance parameters, drawn once per run.
#[derive(Debug, Clone, Copy)]
pub struct SampleTraits {
    pub initial_radius: f64,
    pub growth_rate: f64,
    pub browning_rate: f64,
    pub texture_seed: u64,
    /// Fixed offset of the cookie from its nominal spot in the composite.
    pub jitter: (f64, f64),
}

pub const COOKIES_PER_RUN: usize = 3;

/// One drying run: a condition, three cookies, and the shared moment they
/// become ready. Frames are rendered on demand from this record.
#[derive(Debug, Clone)]
pub struct DryingRun {
    pub condition: ProcessCondition,
    pub traits: [SampleTraits; COOKIES_PER_RUN],
    pub ready_time: f64,
    pub run_seed: u64,
}

/// Every simulator constant in one place. These are invented surrogates:
/// the source experiments measure real ovens, and nothing here claims
/// physical fidelity beyond the orderings the tests pin down.
#[derive(Debug, Clone)]
pub struct SimConfig {
    /// Ready-time model: base − temp_coef·(T−350) − fan_coef·[fan=3000] + η.
    pub base_ready: f64,
    pub temp_coef: f64,
    pub fan_coef: f64,
    /// η is Normal(0, noise_sd) redrawn until |η| ≤ noise_cap.
    pub noise_sd: f64,
    pub noise_cap: f64,
    /// Round ready time to the frame cadence so labels land on the label
    /// grid. Turning this off keeps ready time exactly linear in
    /// (temperature, fan), which the baseline-exactness oracle needs; real
    /// corpora always snap.
    pub snap_ready: bool,
    pub cadence: f64,
    pub duration: f64,
    /// Per-cookie crop edge in pixels.
    pub crop: usize,
    /// Composite canvas (three cookies side by side).
    pub composite_h: usize,
    pub composite_w: usize,
    /// Max distance a cookie sits from its nominal composite spot.
    pub jitter_px: f64,
    pub radius_lo: f64,
    pub radius_hi: f64,
    /// Growth multipliers are uniform in [trait_lo, trait_hi].
    pub trait_lo: f64,
    pub trait_hi: f64,
    /// Browning multipliers get their own, much narrower band: shade then
    /// tracks drying progress tightly instead of per-cookie temperament,
    /// which is what makes remaining time readable from a clip at all.
    /// Size and texture still vary cookie to cookie through the other
    /// traits.
    pub browning_lo: f64,
    pub browning_hi: f64,
    /// Radius peaks at initial·(1 + growth_gain·growth_rate), 60 s before
    /// readiness, then contracts by `shrink` of the peak.
    pub growth_gain: f64,
    pub peak_lead: f64,
    pub shrink: f64,
    pub shrink_tau: f64,
    pub growth_power: f64,
    /// Dough color runs pale → brown as (t/ready)^browning_power·rate.
    pub pale: [f64; 3],
    pub brown: [f64; 3],
    pub browning_power: f64,
    /// Texture and glare are added to all three channels equally, so
    /// channel differences stay noise-free; glare is clipped at ±3σ so no
    /// in-disk pixel saturates and monotone color indices survive exactly.
    pub texture_amp: f64,
    pub glare_sd: f64,
    pub background: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            base_ready: 420.0,
            temp_coef: 2.4,
            fan_coef: 40.0,
            noise_sd: 15.0,
            noise_cap: 30.0,
            snap_ready: true,
            cadence: 10.0,
            duration: 540.0,
            crop: 64,
            composite_h: 80,
            composite_w: 240,
            jitter_px: 4.0,
            radius_lo: 10.0,
            radius_hi: 12.0,
            trait_lo: 0.85,
            trait_hi: 1.15,
            browning_lo: 0.97,
            browning_hi: 1.03,
            growth_gain: 0.30,
            peak_lead: 60.0,
            shrink: 0.03,
            shrink_tau: 40.0,
            growth_power: 0.8,
            pale: [0.90, 0.84, 0.68],
            brown: [0.55, 0.33, 0.15],
            browning_power: 1.1,
            texture_amp: 0.03,
            glare_sd: 0.02,
            background: 0.05,
        }
    }
}

impl SimConfig {
    pub fn frame_count(&self) -> usize {
        (self.duration / self.cadence) as usize
    }

    /// Frame timestamps: cadence, 2·cadence, …, duration.
    pub fn frame_times(&self) -> Vec<f64> {
        (1..=self.frame_count())
            .map(|k| k as f64 * self.cadence)
            .collect()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let on_grid = (t / self.cadence - fmath::floor(t / self.cadence + 0.5)).abs() < 1e-9
            || (t % self.cadence) == 0.0;
        if !(0.0..=self.duration).contains(&t) || !on_grid {
            return Err(Error::Invalid {
                what: format!(
                    "frame time {t} s is outside 0..={} s or off the {} s cadence",
                    self.duration, self.cadence
                ),
            });
        }
        Ok(())
    }
}

// Stream tags for per-frame noise, kept distinct from trait draws.
const STREAM_GLARE_CROP: u64 = 0x43524f50; // "CROP"
const STREAM_GLARE_FULL: u64 = 0x46554c4c; // "FULL"

/// Draws a run for one condition. Same seed, same run; the condition must
/// be one of the eight in the design.
pub fn sample_run(condition: ProcessCondition, seed: u64) -> Result<DryingRun> {
    sample_run_cfg(&SimConfig::default(), condition, seed)
}

pub fn sample_run_cfg(
    cfg: &SimConfig,
    condition: ProcessCondition,
    seed: u64,
) -> Result<DryingRun> {
    if condition_index(condition).is_none() {
        return Err(Error::Invalid {
            what: format!(
                "condition ({} °F, {} RPM) is not one of the eight in the design",
                condition.temperature, condition.fan_speed
            ),
        });
    }
    let mut rng = Rng::derive(seed, "drying-run");
    let eta = if cfg.noise_sd > 0.0 {
        loop {
            let e = rng.normal_scaled(0.0, cfg.noise_sd);
            if e.abs() <= cfg.noise_cap {
                break e;
            }
        }
    } else {
        0.0
    };
    let fan_on = if condition.fan_speed == 3000.0 { 1.0 } else { 0.0 };
    let raw = cfg.base_ready - cfg.temp_coef * (condition.temperature - 350.0)
        + eta
        - cfg.fan_coef * fan_on;
    let ready_time = if cfg.snap_ready {
        fmath::round(raw / cfg.cadence) * cfg.cadence
    } else {
        raw
    };

    let mut traits = [SampleTraits {
        initial_radius: 0.0,
        growth_rate: 0.0,
        browning_rate: 0.0,
        texture_seed: 0,
        jitter: (0.0, 0.0),
    }; COOKIES_PER_RUN];
    for t in &mut traits {
        t.initial_radius = rng.uniform_in(cfg.radius_lo, cfg.radius_hi);
        t.growth_rate = rng.uniform_in(cfg.trait_lo, cfg.trait_hi);
        t.browning_rate = rng.uniform_in(cfg.browning_lo, cfg.browning_hi);
        t.texture_seed = rng.next_u64();
        t.jitter = (
            rng.uniform_in(-cfg.jitter_px, cfg.jitter_px),
            rng.uniform_in(-cfg.jitter_px, cfg.jitter_px),
        );
    }

    Ok(DryingRun {
        condition,
        traits,
        ready_time,
        run_seed: seed,
    })
}

/// Remaining seconds until readiness at frame time t.
pub fn label_time_to_ready(run: &DryingRun, t: f64) -> Result<f64> {
    if t > run.ready_time {
        return Err(Error::Invalid {
            what: format!(
                "frame at {t} s is past readiness at {} s",
                run.ready_time
            ),
        });
    }
    Ok(run.ready_time - t)
}

/// Disk radius at time t: power-law growth to the peak 60 s before
/// readiness, then a small exponential contraction.
pub fn radius_at(cfg: &SimConfig, traits: &SampleTraits, ready: f64, t: f64) -> f64 {
    let peak_t = ready - cfg.peak_lead;
    let peak_r = traits.initial_radius * (1.0 + cfg.growth_gain * traits.growth_rate);
    if t <= peak_t {
        let u = (t / peak_t).max(0.0);
        traits.initial_radius
            * (1.0 + cfg.growth_gain * traits.growth_rate * fmath::powf(u, cfg.growth_power))
    } else {
        peak_r * (1.0 - cfg.shrink * (1.0 - fmath::exp(-(t - peak_t) / cfg.shrink_tau)))
    }
}

/// Browning fraction in [0,1], non-decreasing in t.
pub fn browning_at(cfg: &SimConfig, traits: &SampleTraits, ready: f64, t: f64) -> f64 {
    (fmath::powf(t / ready, cfg.browning_power) * traits.browning_rate).min(1.0)
}

/// Per-pixel dough texture in [−amp, amp], fixed over time, indexed
/// relative to the disk center so crops and composites agree.
fn texture(cfg: &SimConfig, seed: u64, dx: i64, dy: i64) -> f64 {
    let h = mix(&[seed, (dx + 1024) as u64, (dy + 1024) as u64]);
    let u = (h >> 11) as f64 / (1u64 << 53) as f64;
    cfg.texture_amp * (2.0 * u - 1.0)
}

/// Paints one anti-aliased disk onto a planar [3,h,w] canvas.
fn draw_disk(
    cfg: &SimConfig,
    img: &mut [f64],
    h: usize,
    w: usize,
    cx: f64,
    cy: f64,
    radius: f64,
    color: [f64; 3],
    tex_seed: u64,
) {
    let y0 = (fmath::floor(cy - radius - 1.0).max(0.0)) as usize;
    let y1 = (fmath::ceil(cy + radius + 2.0) as usize).min(h);
    let x0 = (fmath::floor(cx - radius - 1.0).max(0.0)) as usize;
    let x1 = (fmath::ceil(cx + radius + 2.0) as usize).min(w);
    for y in y0..y1 {
        for x in x0..x1 {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let dist = fmath::sqrt(dx * dx + dy * dy);
            let cov = (radius - dist + 0.5).clamp(0.0, 1.0);
            if cov == 0.0 {
                continue;
            }
            let tex = texture(cfg, tex_seed, fmath::round(dx) as i64, fmath::round(dy) as i64);
            for (c, col) in color.iter().enumerate() {
                let px = &mut img[c * h * w + y * w + x];
                *px += cov * (col - cfg.background) + cov * tex;
            }
        }
    }
}

/// Whole-canvas glare from the glass door: one luminance offset per pixel,
/// identical across channels, clipped at ±3σ.
fn add_glare(cfg: &SimConfig, img: &mut [f64], h: usize, w: usize, stream: u64) {
    let mut rng = Rng::new(stream);
    let cap = 3.0 * cfg.glare_sd;
    for y in 0..h {
        for x in 0..w {
            let g = rng.normal_scaled(0.0, cfg.glare_sd).clamp(-cap, cap);
            for c in 0..3 {
                img[c * h * w + y * w + x] += g;
            }
        }
    }
}

fn finish(img: Vec<f64>, h: usize, w: usize) -> Tensor {
    let clamped = img.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Tensor::new(&[3, h, w], clamped).expect("planar image")
}

fn disk_color(cfg: &SimConfig, traits: &SampleTraits, ready: f64, t: f64) -> [f64; 3] {
    let phi = browning_at(cfg, traits, ready, t);
    [
        cfg.pale[0] + phi * (cfg.brown[0] - cfg.pale[0]),
        cfg.pale[1] + phi * (cfg.brown[1] - cfg.pale[1]),
        cfg.pale[2] + phi * (cfg.brown[2] - cfg.pale[2]),
    ]
}

/// Renders one cookie centered in a crop-sized canvas.
pub fn render_crop(cfg: &SimConfig, run: &DryingRun, cookie: usize, t: f64) -> Result<Tensor> {
    cfg.check_time(t)?;
    if cookie >= COOKIES_PER_RUN {
        return Err(Error::Invalid {
            what: format!("cookie index {cookie} out of range"),
        });
    }
    let (h, w) = (cfg.crop, cfg.crop);
    let mut img = alloc::vec![cfg.background; 3 * h * w];
    let traits = &run.traits[cookie];
    let radius = radius_at(cfg, traits, run.ready_time, t);
    let color = disk_color(cfg, traits, run.ready_time, t);
    let c = (w / 2) as f64;
    draw_disk(cfg, &mut img, h, w, c, c, radius, color, traits.texture_seed);
    add_glare(
        cfg,
        &mut img,
        h,
        w,
        mix(&[run.run_seed, STREAM_GLARE_CROP, t as u64, cookie as u64]),
    );
    Ok(finish(img, h, w))
}

/// Renders the full three-cookie frame the segmentation path consumes.
pub fn render_composite(cfg: &SimConfig, run: &DryingRun, t: f64) -> Result<Tensor> {
    cfg.check_time(t)?;
    let (h, w) = (cfg.composite_h, cfg.composite_w);
    let mut img = alloc::vec![cfg.background; 3 * h * w];
    let spacing = w as f64 / COOKIES_PER_RUN as f64;
    for (i, traits) in run.traits.iter().enumerate() {
        let cx = spacing * (i as f64 + 0.5) + traits.jitter.0;
        let cy = h as f64 / 2.0 + traits.jitter.1;
        let radius = radius_at(cfg, traits, run.ready_time, t);
        let color = disk_color(cfg, traits, run.ready_time, t);
        draw_disk(cfg, &mut img, h, w, cx, cy, radius, color, traits.texture_seed);
    }
    add_glare(
        cfg,
        &mut img,
        h,
        w,
        mix(&[run.run_seed, STREAM_GLARE_FULL, t as u64]),
    );
    Ok(finish(img, h, w))
}

/// Nominal center and radius of each disk in the composite, for
/// segmentation oracles.
pub fn composite_geometry(cfg: &SimConfig, run: &DryingRun, t: f64) -> Vec<(f64, f64, f64)> {
    let spacing = cfg.composite_w as f64 / COOKIES_PER_RUN as f64;
    run.traits
        .iter()
        .enumerate()
        .map(|(i, traits)| {
            (
                spacing * (i as f64 + 0.5) + traits.jitter.0,
                cfg.composite_h as f64 / 2.0 + traits.jitter.1,
                radius_at(cfg, traits, run.ready_time, t),
            )
        })
        .collect()
}

// ── measurement helpers ─────────────────────────────────────────────────────

/// Count of pixels whose mean channel value clears the threshold; the
/// pixel-area proxy for the unimodality checks.
pub fn pixel_area(img: &Tensor, threshold: f64) -> usize {
    let s = img.shape();
    let (h, w) = (s[1], s[2]);
    let d = img.data();
    let mut n = 0;
    for i in 0..h * w {
        let m = (d[i] + d[h * w + i] + d[2 * h * w + i]) / 3.0;
        if m > threshold {
            n += 1;
        }
    }
    n
}

/// Mean red-minus-green over the central 12×12 patch. The patch sits inside
/// the disk at every radius the trait ranges allow, and channel-equal noise
/// cancels in the difference, so this is exactly monotone in browning.
pub fn brownness(img: &Tensor) -> f64 {
    let s = img.shape();
    let (h, w) = (s[1], s[2]);
    let d = img.data();
    let (cy, cx, half) = (h / 2, w / 2, 6);
    let mut sum = 0.0;
    for y in cy - half..cy + half {
        for x in cx - half..cx + half {
            sum += d[y * w + x] - d[h * w + y * w + x];
        }
    }
    sum / (4 * half * half) as f64
}

// ── portable image bytes ────────────────────────────────────────────────────

/// Binary PPM (P6, 8-bit) encoding of a [3,h,w] image in [0,1].
pub fn encode_ppm(img: &Tensor) -> Result<Vec<u8>> {
    let s = img.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::Invalid {
            what: format!("expected [3,h,w] image, got {s:?}"),
        });
    }
    let (h, w) = (s[1], s[2]);
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = img.data();
    for i in 0..h * w {
        for c in 0..3 {
            out.push(fmath::round(d[c * h * w + i].clamp(0.0, 1.0) * 255.0) as u8);
        }
    }
    Ok(out)
}

/// Decodes the P6 bytes written by [`encode_ppm`]; values come back as
/// k/255, so encode(decode(bytes)) is byte-identical.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let bad = |what: &str| Error::Decode {
        what: format!("ppm: {what}"),
    };
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Result<(usize, usize)> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        Ok((start, pos))
    };
    let (a, b) = token(bytes)?;
    if &bytes[a..b] != b"P6" {
        return Err(bad("not a P6 file"));
    }
    let mut num = |bytes: &[u8]| -> Result<usize> {
        let (a, b) = token(bytes)?;
        core::str::from_utf8(&bytes[a..b])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))
    };
    let w = num(bytes)?;
    let h = num(bytes)?;
    let maxval = num(bytes)?;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    pos += 1; // single whitespace after maxval
    let need = 3 * h * w;
    if bytes.len() - pos != need {
        return Err(bad("pixel payload length mismatch"));
    }
    let mut data = alloc::vec![0.0; need];
    for i in 0..h * w {
        for c in 0..3 {
            data[c * h * w + i] = bytes[pos + 3 * i + c] as f64 / 255.0;
        }
    }
    Tensor::new(&[3, h, w], data)
}
