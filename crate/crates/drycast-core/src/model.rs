//! The forecasting model: tabular encoder, video encoder, token fusion,
//! transformer decoder, scalar output head, plus the video-only ablation.
//!
//! Parameters form five named groups (tabular, frame, temporal, decoder,
//! head) whose counts the census reports. The decoder's positional table is
//! sized by a fixed slot capacity, not by the incoming window length, so the
//! census does not change with the number of frames fed in.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::datapipe::{LABEL_MAX, LABEL_MIN};
use crate::error::{Error, Result};
use crate::layers::{
    FcBlock, FcBlockVars, Gru, GruVars, Linear, LinearVars, ResCnn, ResCnnVars, Transformer,
    TransformerBlock, TransformerBlockVars, TransformerVars,
};
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const MODEL_WIDTH: usize = 32;
pub const FRAME_FEAT: usize = 64;
pub const CNN_CHANNELS: usize = 4;
pub const DECODER_DEPTH: usize = 2;
pub const DECODER_HEADS: usize = 4;
pub const FFN_WIDTH: usize = 64;
pub const TABULAR_INPUTS: usize = 2;
/// Token capacity of the decoder: a tabular slot plus up to 9 video tokens.
pub const DEFAULT_SLOTS: usize = 10;
pub const DEFAULT_FRAMES: usize = 7;
/// Patch edge for the space-time attention encoder.
const PATCH: usize = 8;

// ── variant registry ────────────────────────────────────────────────────────

/// Every video encoder this build knows by name. The last four need
/// large-scale pretraining and are registered only so that asking for them
/// fails with a clear error instead of a typo-shaped one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    ResidualCnnGru,
    ResidualCnnMeanpool,
    FrameCnn,
    TinySpacetimeAttention,
    VideoMae,
    TimeSformer,
    Mrn,
    PlainCnnPretrainedScale,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 8] = [
        EncoderKind::ResidualCnnGru,
        EncoderKind::ResidualCnnMeanpool,
        EncoderKind::FrameCnn,
        EncoderKind::TinySpacetimeAttention,
        EncoderKind::VideoMae,
        EncoderKind::TimeSformer,
        EncoderKind::Mrn,
        EncoderKind::PlainCnnPretrainedScale,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::ResidualCnnGru => "residual_cnn_gru",
            EncoderKind::ResidualCnnMeanpool => "residual_cnn_meanpool",
            EncoderKind::FrameCnn => "frame_cnn",
            EncoderKind::TinySpacetimeAttention => "tiny_spacetime_attention",
            EncoderKind::VideoMae => "video_mae",
            EncoderKind::TimeSformer => "timesformer",
            EncoderKind::Mrn => "mrn",
            EncoderKind::PlainCnnPretrainedScale => "plain_cnn_pretrained_scale",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Decode {
                what: format!("unknown encoder kind {s:?}"),
            })
    }

    pub fn is_available(self) -> bool {
        !matches!(
            self,
            EncoderKind::VideoMae
                | EncoderKind::TimeSformer
                | EncoderKind::Mrn
                | EncoderKind::PlainCnnPretrainedScale
        )
    }
}

/// How decoded tokens become the single vector fed to the output head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Pooling {
    #[default]
    Mean,
    Slot0,
}

impl Pooling {
    pub fn name(self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Slot0 => "slot0",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "slot0" => Ok(Pooling::Slot0),
            other => Err(Error::Decode {
                what: format!("unknown pooling rule {other:?}"),
            }),
        }
    }
}

// ── configuration ───────────────────────────────────────────────────────────

/// Flat key=value model configuration. `frames` is the video window length b
/// the data pipeline produces; `slots` is the decoder's token capacity and
/// must exceed it.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub encoder: EncoderKind,
    pub frames: usize,
    pub slots: usize,
    pub width: usize,
    pub frame_feat: usize,
    pub cnn_channels: usize,
    pub depth: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub pooling: Pooling,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderKind::ResidualCnnGru,
            frames: DEFAULT_FRAMES,
            slots: DEFAULT_SLOTS,
            width: MODEL_WIDTH,
            frame_feat: FRAME_FEAT,
            cnn_channels: CNN_CHANNELS,
            depth: DECODER_DEPTH,
            heads: DECODER_HEADS,
            ffn_width: FFN_WIDTH,
            pooling: Pooling::Mean,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn to_text(&self) -> String {
        format!(
            "encoder = {}\nframes = {}\nslots = {}\nwidth = {}\nframe_feat = {}\n\
             cnn_channels = {}\ndepth = {}\nheads = {}\nffn_width = {}\npooling = {}\nseed = {}\n",
            self.encoder.name(),
            self.frames,
            self.slots,
            self.width,
            self.frame_feat,
            self.cnn_channels,
            self.depth,
            self.heads,
            self.ffn_width,
            self.pooling.name(),
            self.seed,
        )
    }

    /// Parses `key = value` lines; `#` starts a comment, blank lines are
    /// skipped, unknown keys are rejected. Missing keys keep their defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (ln, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Decode {
                what: format!("config line {}: expected key = value, got {raw:?}", ln + 1),
            })?;
            let (key, value) = (key.trim(), value.trim());
            let parse_num = |what: &str, v: &str| -> Result<usize> {
                v.parse().map_err(|_| Error::Decode {
                    what: format!("config {what}: invalid count {v:?}"),
                })
            };
            match key {
                "encoder" => cfg.encoder = EncoderKind::parse(value)?,
                "frames" => cfg.frames = parse_num(key, value)?,
                "slots" => cfg.slots = parse_num(key, value)?,
                "width" => cfg.width = parse_num(key, value)?,
                "frame_feat" => cfg.frame_feat = parse_num(key, value)?,
                "cnn_channels" => cfg.cnn_channels = parse_num(key, value)?,
                "depth" => cfg.depth = parse_num(key, value)?,
                "heads" => cfg.heads = parse_num(key, value)?,
                "ffn_width" => cfg.ffn_width = parse_num(key, value)?,
                "pooling" => cfg.pooling = Pooling::parse(value)?,
                "seed" => {
                    cfg.seed = value.parse().map_err(|_| Error::Decode {
                        what: format!("config seed: invalid integer {value:?}"),
                    })?
                }
                other => {
                    return Err(Error::Decode {
                        what: format!("unknown config key {other:?}"),
                    })
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width % self.heads != 0 {
            return Err(Error::Invalid {
                what: format!(
                    "width {} is not divisible by {} attention heads",
                    self.width, self.heads
                ),
            });
        }
        if self.slots < self.frames + 1 {
            return Err(Error::Invalid {
                what: format!(
                    "{} decoder slots cannot hold {} video tokens plus the tabular token",
                    self.slots, self.frames
                ),
            });
        }
        Ok(())
    }
}

// ── video encoders ──────────────────────────────────────────────────────────

/// Space-time attention encoder: patch embedding, one attention block over
/// the patches of each frame, mean over patches, one attention block over
/// the per-frame tokens of each sample.
#[derive(Debug, Clone)]
pub struct SpaceTime {
    pub embed: Linear,
    pub spatial: TransformerBlock,
    pub temporal: TransformerBlock,
}

pub struct SpaceTimeVars {
    embed: LinearVars,
    spatial: TransformerBlockVars,
    temporal: TransformerBlockVars,
}

/// Rearranges [n, 3, h, w] frames into one row of 3·PATCH·PATCH values per
/// patch, patches row-major per frame. Inputs carry no gradient, so this
/// runs on plain tensors before anything touches the tape.
fn patchify(frames: &Tensor) -> Result<Tensor> {
    let s = frames.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    if h % PATCH != 0 || w % PATCH != 0 {
        return Err(Error::Invalid {
            what: format!("{h}x{w} frames do not divide into {PATCH} px patches"),
        });
    }
    let (gh, gw) = (h / PATCH, w / PATCH);
    let dim = c * PATCH * PATCH;
    let src = frames.data();
    let mut out = Vec::with_capacity(n * gh * gw * dim);
    for img in 0..n {
        for py in 0..gh {
            for px in 0..gw {
                for ch in 0..c {
                    for y in 0..PATCH {
                        let row = py * PATCH + y;
                        let base = ((img * c + ch) * h + row) * w + px * PATCH;
                        out.extend_from_slice(&src[base..base + PATCH]);
                    }
                }
            }
        }
    }
    Tensor::new(&[n * gh * gw, dim], out)
}

impl SpaceTime {
    pub fn init(
        width: usize,
        heads: usize,
        ffn_width: usize,
        frame_rng: &mut Rng,
        time_rng: &mut Rng,
    ) -> Self {
        SpaceTime {
            embed: Linear::init(3 * PATCH * PATCH, width, frame_rng),
            spatial: TransformerBlock::init(width, heads, ffn_width, frame_rng),
            temporal: TransformerBlock::init(width, heads, ffn_width, time_rng),
        }
    }
}

/// Parameters of whichever video encoder the config selected. Each maps a
/// sample's frames to its video tokens; only the GRU variant is sequential.
#[derive(Debug, Clone)]
pub enum Encoder {
    ResidualCnnGru { cnn: ResCnn, gru: Gru },
    ResidualCnnMeanpool { cnn: ResCnn, proj: Linear },
    FrameCnn { cnn: ResCnn, proj: Linear },
    TinySpacetimeAttention(SpaceTime),
}

pub enum EncoderVars {
    ResidualCnnGru { cnn: ResCnnVars, gru: GruVars },
    ResidualCnnMeanpool { cnn: ResCnnVars, proj: LinearVars },
    FrameCnn { cnn: ResCnnVars, proj: LinearVars },
    TinySpacetimeAttention(SpaceTimeVars),
}

/// Output head with its final bias started at the center of the label grid.
/// Predictions then begin near the per-sample target mean instead of at
/// zero, which spares early training the large shared error swing that can
/// drive the recurrent gates into saturation before per-clip differences
/// are learned.
fn prediction_head(width: usize, rng: &mut Rng) -> FcBlock {
    let mut head = FcBlock::init(width, width, 1, rng);
    head.fc2.b = Tensor::filled(&[1], (LABEL_MIN + LABEL_MAX) / 2.0);
    head
}

/// Constructs the selected encoder, or explains why it cannot be built.
pub fn build_encoder(kind: EncoderKind, cfg: &ModelConfig, seed: u64) -> Result<Encoder> {
    if !kind.is_available() {
        return Err(Error::Unavailable {
            what: format!("encoder {} (requires pretraining, out of scope)", kind.name()),
        });
    }
    let mut frame_rng = Rng::derive(seed, "theta-r");
    let mut time_rng = Rng::derive(seed, "theta-g");
    Ok(match kind {
        EncoderKind::ResidualCnnGru => Encoder::ResidualCnnGru {
            cnn: ResCnn::init(cfg.cnn_channels, cfg.frame_feat, &mut frame_rng),
            gru: Gru::init(cfg.frame_feat, cfg.width, &mut time_rng),
        },
        EncoderKind::ResidualCnnMeanpool => Encoder::ResidualCnnMeanpool {
            cnn: ResCnn::init(cfg.cnn_channels, cfg.frame_feat, &mut frame_rng),
            proj: Linear::init(cfg.frame_feat, cfg.width, &mut time_rng),
        },
        EncoderKind::FrameCnn => Encoder::FrameCnn {
            cnn: ResCnn::init(cfg.cnn_channels, cfg.frame_feat, &mut frame_rng),
            proj: Linear::init(cfg.frame_feat, cfg.width, &mut frame_rng),
        },
        EncoderKind::TinySpacetimeAttention => Encoder::TinySpacetimeAttention(SpaceTime::init(
            cfg.width,
            cfg.heads,
            cfg.ffn_width,
            &mut frame_rng,
            &mut time_rng,
        )),
        _ => unreachable!("unavailable kinds handled above"),
    })
}

impl Encoder {
    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::ResidualCnnGru { .. } => EncoderKind::ResidualCnnGru,
            Encoder::ResidualCnnMeanpool { .. } => EncoderKind::ResidualCnnMeanpool,
            Encoder::FrameCnn { .. } => EncoderKind::FrameCnn,
            Encoder::TinySpacetimeAttention(_) => EncoderKind::TinySpacetimeAttention,
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> EncoderVars {
        match self {
            Encoder::ResidualCnnGru { cnn, gru } => EncoderVars::ResidualCnnGru {
                cnn: cnn.stage(tape),
                gru: gru.stage(tape),
            },
            Encoder::ResidualCnnMeanpool { cnn, proj } => EncoderVars::ResidualCnnMeanpool {
                cnn: cnn.stage(tape),
                proj: proj.stage(tape),
            },
            Encoder::FrameCnn { cnn, proj } => EncoderVars::FrameCnn {
                cnn: cnn.stage(tape),
                proj: proj.stage(tape),
            },
            Encoder::TinySpacetimeAttention(st) => {
                EncoderVars::TinySpacetimeAttention(SpaceTimeVars {
                    embed: st.embed.stage(tape),
                    spatial: st.spatial.stage(tape),
                    temporal: st.temporal.stage(tape),
                })
            }
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        match self {
            Encoder::ResidualCnnGru { cnn, gru } => {
                cnn.collect(out);
                gru.collect(out);
            }
            Encoder::ResidualCnnMeanpool { cnn, proj } | Encoder::FrameCnn { cnn, proj } => {
                cnn.collect(out);
                proj.collect(out);
            }
            Encoder::TinySpacetimeAttention(st) => {
                st.embed.collect(out);
                st.spatial.collect(out);
                st.temporal.collect(out);
            }
        }
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        match self {
            Encoder::ResidualCnnGru { cnn, gru } => {
                cnn.collect_mut(out);
                gru.collect_mut(out);
            }
            Encoder::ResidualCnnMeanpool { cnn, proj } | Encoder::FrameCnn { cnn, proj } => {
                cnn.collect_mut(out);
                proj.collect_mut(out);
            }
            Encoder::TinySpacetimeAttention(st) => {
                st.embed.collect_mut(out);
                st.spatial.collect_mut(out);
                st.temporal.collect_mut(out);
            }
        }
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        match self {
            Encoder::ResidualCnnGru { cnn, gru } => {
                cnn.collect_names(&format!("{prefix}.cnn"), out);
                gru.collect_names(&format!("{prefix}.gru"), out);
            }
            Encoder::ResidualCnnMeanpool { cnn, proj } | Encoder::FrameCnn { cnn, proj } => {
                cnn.collect_names(&format!("{prefix}.cnn"), out);
                proj.collect_names(&format!("{prefix}.proj"), out);
            }
            Encoder::TinySpacetimeAttention(st) => {
                st.embed.collect_names(&format!("{prefix}.embed"), out);
                st.spatial.collect_names(&format!("{prefix}.spatial"), out);
                st.temporal.collect_names(&format!("{prefix}.temporal"), out);
            }
        }
    }

    /// (frame-stage, temporal-stage) parameter counts.
    fn stage_counts(&self) -> (usize, usize) {
        let count = |ts: &[&Tensor]| ts.iter().map(|t| t.numel()).sum::<usize>();
        match self {
            Encoder::ResidualCnnGru { cnn, gru } => {
                (cnn.param_count(), gru.param_count())
            }
            // The projection applies to the pooled sequence, so it sits in
            // the temporal stage; frame_cnn has no temporal stage at all and
            // its projection is per-frame.
            Encoder::ResidualCnnMeanpool { cnn, proj } => {
                let mut v = Vec::new();
                proj.collect(&mut v);
                (cnn.param_count(), count(&v))
            }
            Encoder::FrameCnn { cnn, proj } => {
                let mut v = Vec::new();
                proj.collect(&mut v);
                (cnn.param_count() + count(&v), 0)
            }
            Encoder::TinySpacetimeAttention(st) => {
                let mut frame = Vec::new();
                st.embed.collect(&mut frame);
                st.spatial.collect(&mut frame);
                let mut time = Vec::new();
                st.temporal.collect(&mut time);
                (count(&frame), count(&time))
            }
        }
    }
}

impl EncoderVars {
    /// frames: [b·batch, 3, h, w] in time-major row order (the row for
    /// sample s at step t is t·batch + s). Returns one token matrix per
    /// sample, [tokens, width]; the GRU and frame variants emit one token
    /// per frame, the meanpool variant a single token.
    pub fn encode(
        &self,
        tape: &mut Tape,
        frames: &Tensor,
        frame_count: usize,
    ) -> Result<Vec<Var>> {
        let rows = frames.shape()[0];
        if frame_count == 0 || rows % frame_count != 0 {
            return Err(Error::Invalid {
                what: format!("{rows} frame rows do not split into windows of {frame_count}"),
            });
        }
        let batch = rows / frame_count;
        match self {
            EncoderVars::ResidualCnnGru { cnn, gru } => {
                let fv = tape.constant(frames.clone());
                let feats = cnn.forward(tape, fv)?;
                let steps: Vec<Var> = (0..frame_count)
                    .map(|t| tape.narrow(feats, 0, t * batch, batch))
                    .collect::<Result<_>>()?;
                let states = gru.forward_all(tape, &steps)?;
                gather_per_sample(tape, &states, batch)
            }
            EncoderVars::FrameCnn { cnn, proj } => {
                let fv = tape.constant(frames.clone());
                let feats = cnn.forward(tape, fv)?;
                let tokens = proj.forward(tape, feats)?;
                let steps: Vec<Var> = (0..frame_count)
                    .map(|t| tape.narrow(tokens, 0, t * batch, batch))
                    .collect::<Result<_>>()?;
                gather_per_sample(tape, &steps, batch)
            }
            EncoderVars::ResidualCnnMeanpool { cnn, proj } => {
                let fv = tape.constant(frames.clone());
                let feats = cnn.forward(tape, fv)?;
                let mut out = Vec::with_capacity(batch);
                for s in 0..batch {
                    let rows: Vec<Var> = (0..frame_count)
                        .map(|t| tape.narrow(feats, 0, t * batch + s, 1))
                        .collect::<Result<_>>()?;
                    let stack = tape.concat(&rows, 0)?;
                    let mean = tape.mean_axis(stack, 0)?;
                    out.push(proj.forward(tape, mean)?);
                }
                Ok(out)
            }
            EncoderVars::TinySpacetimeAttention(st) => {
                let patches = patchify(frames)?;
                let per_frame = patches.shape()[0] / rows;
                let pv = tape.constant(patches);
                let embedded = st.embed.forward(tape, pv)?;
                // Spatial attention within each frame, then one token per
                // frame, then temporal attention within each sample.
                let mut frame_tokens = Vec::with_capacity(rows);
                for f in 0..rows {
                    let toks = tape.narrow(embedded, 0, f * per_frame, per_frame)?;
                    let mixed = st.spatial.forward(tape, toks)?;
                    frame_tokens.push(tape.mean_axis(mixed, 0)?);
                }
                let mut out = Vec::with_capacity(batch);
                for s in 0..batch {
                    let seq: Vec<Var> = (0..frame_count)
                        .map(|t| frame_tokens[t * batch + s])
                        .collect();
                    let stack = tape.concat(&seq, 0)?;
                    out.push(st.temporal.forward(tape, stack)?);
                }
                Ok(out)
            }
        }
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        match self {
            EncoderVars::ResidualCnnGru { cnn, gru } => {
                cnn.collect_vars(out);
                gru.collect_vars(out);
            }
            EncoderVars::ResidualCnnMeanpool { cnn, proj }
            | EncoderVars::FrameCnn { cnn, proj } => {
                cnn.collect_vars(out);
                proj.collect_vars(out);
            }
            EncoderVars::TinySpacetimeAttention(st) => {
                st.embed.collect_vars(out);
                st.spatial.collect_vars(out);
                st.temporal.collect_vars(out);
            }
        }
    }
}

/// states[t] is [batch, width]; returns per-sample [steps, width] matrices.
fn gather_per_sample(tape: &mut Tape, states: &[Var], batch: usize) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(batch);
    for s in 0..batch {
        let rows: Vec<Var> = states
            .iter()
            .map(|st| tape.narrow(*st, 0, s, 1))
            .collect::<Result<_>>()?;
        out.push(tape.concat(&rows, 0)?);
    }
    Ok(out)
}

// ── batches ─────────────────────────────────────────────────────────────────

/// One forward batch: per-sample tabular rows and the stacked frame windows
/// in time-major order.
#[derive(Debug, Clone)]
pub struct Batch {
    pub tabular: Tensor, // [batch, 2]
    pub frames: Tensor,  // [frames·batch, 3, h, w]
    pub frame_count: usize,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.tabular.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let b = self.len();
        if self.frames.shape()[0] != b * self.frame_count {
            return Err(Error::Invalid {
                what: format!(
                    "batch of {b} samples with {} frames each needs {} frame rows, got {}",
                    self.frame_count,
                    b * self.frame_count,
                    self.frames.shape()[0]
                ),
            });
        }
        Ok(())
    }
}

// ── census ──────────────────────────────────────────────────────────────────

/// Per-group parameter counts; always exactly these five groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Census {
    pub tabular: usize,
    pub frame: usize,
    pub temporal: usize,
    pub decoder: usize,
    pub head: usize,
}

impl Census {
    pub fn total(&self) -> usize {
        self.tabular + self.frame + self.temporal + self.decoder + self.head
    }
}

// ── the model ───────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Model {
    pub tabular: FcBlock,
    pub encoder: Encoder,
    pub decoder: Transformer,
    pub head: FcBlock,
    pub pooling: Pooling,
}

pub struct StagedModel {
    pub tabular: FcBlockVars,
    pub encoder: EncoderVars,
    pub decoder: TransformerVars,
    pub head: FcBlockVars,
    pooling: Pooling,
}

impl Model {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let encoder = build_encoder(cfg.encoder, cfg, cfg.seed)?;
        Ok(Model {
            tabular: FcBlock::init(
                TABULAR_INPUTS,
                cfg.width,
                cfg.width,
                &mut Rng::derive(cfg.seed, "theta-t"),
            ),
            encoder,
            decoder: Transformer::init(
                cfg.slots,
                cfg.width,
                cfg.depth,
                cfg.heads,
                cfg.ffn_width,
                &mut Rng::derive(cfg.seed, "theta-d"),
            ),
            head: prediction_head(cfg.width, &mut Rng::derive(cfg.seed, "theta-o")),
            pooling: cfg.pooling,
        })
    }

    pub fn census(&self) -> Census {
        let (frame, temporal) = self.encoder.stage_counts();
        Census {
            tabular: self.tabular.param_count(),
            frame,
            temporal,
            decoder: self.decoder.param_count(),
            head: self.head.param_count(),
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        self.tabular.collect(&mut v);
        self.encoder.collect(&mut v);
        self.decoder.collect(&mut v);
        self.head.collect(&mut v);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        self.tabular.collect_mut(&mut v);
        self.encoder.collect_mut(&mut v);
        self.decoder.collect_mut(&mut v);
        self.head.collect_mut(&mut v);
        v
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        self.tabular.collect_names("tabular", &mut v);
        self.encoder.collect_names("encoder", &mut v);
        self.decoder.collect_names("decoder", &mut v);
        self.head.collect_names("head", &mut v);
        v
    }

    pub fn stage(&self, tape: &mut Tape) -> StagedModel {
        StagedModel {
            tabular: self.tabular.stage(tape),
            encoder: self.encoder.stage(tape),
            decoder: self.decoder.stage(tape),
            head: self.head.stage(tape),
            pooling: self.pooling,
        }
    }

    /// Convenience inference on a fresh tape; one prediction per sample,
    /// in seconds, unclamped.
    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let staged = self.stage(&mut tape);
        let y = staged.forward(&mut tape, batch)?;
        Ok(tape.value(y).data().to_vec())
    }
}

impl StagedModel {
    /// x: [batch, 2] → [batch, width]
    pub fn encode_tabular(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        self.tabular.forward(tape, x)
    }

    /// Per-sample video token matrices; see EncoderVars::encode.
    pub fn encode_video(
        &self,
        tape: &mut Tape,
        frames: &Tensor,
        frame_count: usize,
    ) -> Result<Vec<Var>> {
        self.encoder.encode(tape, frames, frame_count)
    }

    /// Prepends the tabular token to the video tokens: slot 0 is the tabular
    /// encoding unchanged. Token widths must agree.
    pub fn fuse(&self, tape: &mut Tape, h_t: Var, h_v: Var) -> Result<Var> {
        tape.concat(&[h_t, h_v], 0)
    }

    /// Decoder stack plus the configured pooling rule: [tokens, width] →
    /// [1, width].
    pub fn decode(&self, tape: &mut Tape, tokens: Var) -> Result<Var> {
        let mixed = self.decoder.forward(tape, tokens)?;
        match self.pooling {
            Pooling::Mean => tape.mean_axis(mixed, 0),
            Pooling::Slot0 => tape.narrow(mixed, 0, 0, 1),
        }
    }

    /// Full forward pass: [batch, 1] predictions in seconds, unclamped.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        batch.validate()?;
        let xt = tape.constant(batch.tabular.clone());
        let ht = self.encode_tabular(tape, xt)?;
        let video = self.encode_video(tape, &batch.frames, batch.frame_count)?;
        let mut preds = Vec::with_capacity(video.len());
        for (s, hv) in video.into_iter().enumerate() {
            let ht_row = tape.narrow(ht, 0, s, 1)?;
            let tokens = self.fuse(tape, ht_row, hv)?;
            let pooled = self.decode(tape, tokens)?;
            preds.push(self.head.forward(tape, pooled)?);
        }
        tape.concat(&preds, 0)
    }

    /// Vars in the same canonical order as Model::params.
    pub fn param_vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        self.tabular.collect_vars(&mut v);
        self.encoder.collect_vars(&mut v);
        self.decoder.collect_vars(&mut v);
        self.head.collect_vars(&mut v);
        v
    }
}

// ── video-only ablation ─────────────────────────────────────────────────────

/// Ablation arm with no tabular pathway and no decoder: the frame encoder
/// and GRU are shaped exactly as in the full model, and the final GRU state
/// feeds a two-layer FC head.
#[derive(Debug, Clone)]
pub struct VideoOnlyModel {
    pub cnn: ResCnn,
    pub gru: Gru,
    pub head: FcBlock,
}

pub struct StagedVideoOnly {
    cnn: ResCnnVars,
    gru: GruVars,
    head: FcBlockVars,
}

impl VideoOnlyModel {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        VideoOnlyModel {
            cnn: ResCnn::init(
                cfg.cnn_channels,
                cfg.frame_feat,
                &mut Rng::derive(seed, "theta-r"),
            ),
            gru: Gru::init(cfg.frame_feat, cfg.width, &mut Rng::derive(seed, "theta-g")),
            head: prediction_head(cfg.width, &mut Rng::derive(seed, "head")),
        }
    }

    pub fn encoder_param_count(&self) -> usize {
        self.cnn.param_count() + self.gru.param_count()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut v = Vec::new();
        self.cnn.collect(&mut v);
        self.gru.collect(&mut v);
        self.head.collect(&mut v);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = Vec::new();
        self.cnn.collect_mut(&mut v);
        self.gru.collect_mut(&mut v);
        self.head.collect_mut(&mut v);
        v
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut v = Vec::new();
        self.cnn.collect_names("cnn", &mut v);
        self.gru.collect_names("gru", &mut v);
        self.head.collect_names("head", &mut v);
        v
    }

    pub fn stage(&self, tape: &mut Tape) -> StagedVideoOnly {
        StagedVideoOnly {
            cnn: self.cnn.stage(tape),
            gru: self.gru.stage(tape),
            head: self.head.stage(tape),
        }
    }

    pub fn predict(&self, batch: &Batch) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let staged = self.stage(&mut tape);
        let y = staged.forward(&mut tape, batch)?;
        Ok(tape.value(y).data().to_vec())
    }
}

impl StagedVideoOnly {
    /// Ignores batch.tabular entirely: [batch, 1] predictions from frames.
    pub fn forward(&self, tape: &mut Tape, batch: &Batch) -> Result<Var> {
        batch.validate()?;
        let batch_n = batch.len();
        let fv = tape.constant(batch.frames.clone());
        let feats = self.cnn.forward(tape, fv)?;
        let steps: Vec<Var> = (0..batch.frame_count)
            .map(|t| tape.narrow(feats, 0, t * batch_n, batch_n))
            .collect::<Result<_>>()?;
        let states = self.gru.forward_all(tape, &steps)?;
        let last = *states.last().expect("at least one step");
        self.head.forward(tape, last)
    }

    pub fn param_vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        self.cnn.collect_vars(&mut v);
        self.gru.collect_vars(&mut v);
        self.head.collect_vars(&mut v);
        v
    }
}
