//! Parameterized layers composed by the model.
//!
//! Convention: activations are row-major with tokens/samples as rows, so a
//! linear map is `x·W + b` with `W: [in, out]`. Literature that writes
//! column vectors (`W·x`, tokens as columns of a 32×T matrix) maps to this
//! layout by transposition; shapes in doc comments below use the row form.
//!
//! Every layer follows the same pattern: the struct owns its parameter
//! tensors; `stage` clones them onto a tape as differentiable leaves and
//! returns a `*Vars` mirror; `forward` composes tape ops on the staged vars.
//! `collect`/`collect_vars`/`collect_names` walk fields in one canonical
//! order shared by all three, which the optimizer and checkpoint rely on.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::rng::Rng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Fan-in-scaled uniform weights in (−1/√fan_in, 1/√fan_in).
fn init_weight(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let s = 1.0 / fmath::sqrt(fan_in as f64);
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_in(-s, s)).collect();
    Tensor::new(shape, data).expect("count matches shape")
}

// ── linear ──────────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Tensor, // [in, out]
    pub b: Tensor, // [out]
}

pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        Linear {
            w: init_weight(rng, &[input, output], input),
            b: Tensor::zeros(&[output]),
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> LinearVars {
        LinearVars {
            w: tape.param(self.w.clone()),
            b: tape.param(self.b.clone()),
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.push(&self.w);
        out.push(&self.b);
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        out.push(format!("{prefix}.w"));
        out.push(format!("{prefix}.b"));
    }
}

impl LinearVars {
    /// x: [rows, in] → [rows, out]
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.w)?;
        tape.add_bias(h, self.b)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        out.push(self.w);
        out.push(self.b);
    }
}

// ── convolution ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct Conv {
    pub w: Tensor, // [out_ch, in_ch, k, k]
    pub b: Tensor, // [out_ch]
}

pub struct ConvVars {
    pub w: Var,
    pub b: Var,
}

impl Conv {
    pub fn init(in_ch: usize, out_ch: usize, k: usize, rng: &mut Rng) -> Self {
        Conv {
            w: init_weight(rng, &[out_ch, in_ch, k, k], in_ch * k * k),
            b: Tensor::zeros(&[out_ch]),
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> ConvVars {
        ConvVars {
            w: tape.param(self.w.clone()),
            b: tape.param(self.b.clone()),
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.push(&self.w);
        out.push(&self.b);
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.w);
        out.push(&mut self.b);
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        out.push(format!("{prefix}.w"));
        out.push(format!("{prefix}.b"));
    }
}

impl ConvVars {
    pub fn forward(&self, tape: &mut Tape, x: Var, stride: usize) -> Result<Var> {
        tape.conv2d(x, self.w, self.b, stride)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        out.push(self.w);
        out.push(self.b);
    }
}

// ── tabular encoder ─────────────────────────────────────────────────────────

/// Two-layer fully connected block: `fc2(relu(fc1(x)))`. The second layer is
/// affine with no activation, so zero weights reproduce its bias exactly.
#[derive(Debug, Clone)]
pub struct FcBlock {
    pub fc1: Linear,
    pub fc2: Linear,
}

pub struct FcBlockVars {
    pub fc1: LinearVars,
    pub fc2: LinearVars,
}

impl FcBlock {
    pub fn init(input: usize, hidden: usize, output: usize, rng: &mut Rng) -> Self {
        FcBlock {
            fc1: Linear::init(input, hidden, rng),
            fc2: Linear::init(hidden, output, rng),
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> FcBlockVars {
        FcBlockVars {
            fc1: self.fc1.stage(tape),
            fc2: self.fc2.stage(tape),
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        self.fc1.collect(out);
        self.fc2.collect(out);
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.fc1.collect_mut(out);
        self.fc2.collect_mut(out);
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        self.fc1.collect_names(&format!("{prefix}.fc1"), out);
        self.fc2.collect_names(&format!("{prefix}.fc2"), out);
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.collect(&mut v);
        v.iter().map(|t| t.numel()).sum()
    }
}

impl FcBlockVars {
    /// x: [rows, in] → [rows, out]
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.fc1.forward(tape, x)?;
        let h = tape.relu(h);
        self.fc2.forward(tape, h)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        self.fc1.collect_vars(out);
        self.fc2.collect_vars(out);
    }
}

// ── residual frame encoder ──────────────────────────────────────────────────

/// Per-frame encoder: 2×2 max pool, strided stem convolution, four residual
/// blocks (two 3×3 convolutions with an identity skip, ReLU after the add)
/// with pooling between them, global average pool, linear projection to
/// `feat` values. Weights are shared across frames; each input row (frame)
/// maps to one output row independently.
#[derive(Debug, Clone)]
pub struct ResCnn {
    pub stem: Conv,
    pub blocks: Vec<(Conv, Conv)>,
    pub proj: Linear,
    pub channels: usize,
    pub feat: usize,
}

pub struct ResCnnVars {
    stem: ConvVars,
    blocks: Vec<(ConvVars, ConvVars)>,
    proj: LinearVars,
}

/// Minimum spatial extent: one halving by the input pool and one by the stem
/// leave H/4, which the four pooled residual stages reduce further; anything
/// under 16 px degenerates before the last block.
pub const MIN_FRAME_EXTENT: usize = 16;

impl ResCnn {
    pub fn init(channels: usize, feat: usize, rng: &mut Rng) -> Self {
        ResCnn {
            stem: Conv::init(3, channels, 3, rng),
            blocks: (0..4)
                .map(|_| {
                    (
                        Conv::init(channels, channels, 3, rng),
                        Conv::init(channels, channels, 3, rng),
                    )
                })
                .collect(),
            proj: Linear::init(channels, feat, rng),
            channels,
            feat,
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> ResCnnVars {
        ResCnnVars {
            stem: self.stem.stage(tape),
            blocks: self
                .blocks
                .iter()
                .map(|(a, b)| (a.stage(tape), b.stage(tape)))
                .collect(),
            proj: self.proj.stage(tape),
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        self.stem.collect(out);
        for (a, b) in &self.blocks {
            a.collect(out);
            b.collect(out);
        }
        self.proj.collect(out);
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        self.stem.collect_mut(out);
        for (a, b) in &mut self.blocks {
            a.collect_mut(out);
            b.collect_mut(out);
        }
        self.proj.collect_mut(out);
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        self.stem.collect_names(&format!("{prefix}.stem"), out);
        for (i, (a, b)) in self.blocks.iter().enumerate() {
            a.collect_names(&format!("{prefix}.block{i}.conv1"), out);
            b.collect_names(&format!("{prefix}.block{i}.conv2"), out);
        }
        self.proj.collect_names(&format!("{prefix}.proj"), out);
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.collect(&mut v);
        v.iter().map(|t| t.numel()).sum()
    }
}

impl ResCnnVars {
    /// frames: [n, 3, h, w] → features [n, feat]
    pub fn forward(&self, tape: &mut Tape, frames: Var) -> Result<Var> {
        let s = tape.value(frames).shape().to_vec();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape {
                op: "res_cnn",
                lhs: s,
                rhs: alloc::vec![0, 3, MIN_FRAME_EXTENT, MIN_FRAME_EXTENT],
            });
        }
        if s[2] < MIN_FRAME_EXTENT || s[3] < MIN_FRAME_EXTENT {
            return Err(Error::Invalid {
                what: format!(
                    "res_cnn frames are {}x{}, below the {MIN_FRAME_EXTENT} px minimum \
                     the pooling pyramid needs",
                    s[2], s[3]
                ),
            });
        }
        let pooled = tape.maxpool2(frames)?;
        let stem = self.stem.forward(tape, pooled, 2)?;
        let mut x = tape.relu(stem);
        let last = self.blocks.len() - 1;
        for (i, (c1, c2)) in self.blocks.iter().enumerate() {
            let h = c1.forward(tape, x, 1)?;
            let h = tape.relu(h);
            let h = c2.forward(tape, h, 1)?;
            let sum = tape.add(h, x)?;
            x = tape.relu(sum);
            if i < last {
                x = tape.maxpool2(x)?;
            }
        }
        let gap = tape.spatial_mean(x)?;
        self.proj.forward(tape, gap)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        self.stem.collect_vars(out);
        for (a, b) in &self.blocks {
            a.collect_vars(out);
            b.collect_vars(out);
        }
        self.proj.collect_vars(out);
    }
}

// ── recurrent encoder ───────────────────────────────────────────────────────

/// One GRU layer. Gates use sigmoid, the candidate uses tanh with the reset
/// gate applied to the hidden path, and the update gate weights the
/// candidate: h ← (1−z)⊙h + z⊙n.
#[derive(Debug, Clone)]
pub struct GruLayer {
    pub wz: Tensor,
    pub uz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub ur: Tensor,
    pub br: Tensor,
    pub wn: Tensor,
    pub un: Tensor,
    pub bn: Tensor,
    pub hidden: usize,
}

pub struct GruLayerVars {
    wz: Var,
    uz: Var,
    bz: Var,
    wr: Var,
    ur: Var,
    br: Var,
    wn: Var,
    un: Var,
    bn: Var,
    hidden: usize,
}

impl GruLayer {
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        GruLayer {
            wz: init_weight(rng, &[input, hidden], input),
            uz: init_weight(rng, &[hidden, hidden], hidden),
            bz: Tensor::zeros(&[hidden]),
            wr: init_weight(rng, &[input, hidden], input),
            ur: init_weight(rng, &[hidden, hidden], hidden),
            br: Tensor::zeros(&[hidden]),
            wn: init_weight(rng, &[input, hidden], input),
            un: init_weight(rng, &[hidden, hidden], hidden),
            bn: Tensor::zeros(&[hidden]),
            hidden,
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> GruLayerVars {
        GruLayerVars {
            wz: tape.param(self.wz.clone()),
            uz: tape.param(self.uz.clone()),
            bz: tape.param(self.bz.clone()),
            wr: tape.param(self.wr.clone()),
            ur: tape.param(self.ur.clone()),
            br: tape.param(self.br.clone()),
            wn: tape.param(self.wn.clone()),
            un: tape.param(self.un.clone()),
            bn: tape.param(self.bn.clone()),
            hidden: self.hidden,
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.extend([
            &self.wz, &self.uz, &self.bz, &self.wr, &self.ur, &self.br, &self.wn, &self.un,
            &self.bn,
        ]);
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.wz);
        out.push(&mut self.uz);
        out.push(&mut self.bz);
        out.push(&mut self.wr);
        out.push(&mut self.ur);
        out.push(&mut self.br);
        out.push(&mut self.wn);
        out.push(&mut self.un);
        out.push(&mut self.bn);
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        for n in ["wz", "uz", "bz", "wr", "ur", "br", "wn", "un", "bn"] {
            out.push(format!("{prefix}.{n}"));
        }
    }
}

impl GruLayerVars {
    /// One step: x [batch, in], h [batch, hidden] → new h.
    pub fn step(&self, tape: &mut Tape, x: Var, h: Var) -> Result<Var> {
        let zx = tape.matmul(x, self.wz)?;
        let zh = tape.matmul(h, self.uz)?;
        let z = tape.add(zx, zh)?;
        let z = tape.add_bias(z, self.bz)?;
        let z = tape.sigmoid(z);

        let rx = tape.matmul(x, self.wr)?;
        let rh = tape.matmul(h, self.ur)?;
        let r = tape.add(rx, rh)?;
        let r = tape.add_bias(r, self.br)?;
        let r = tape.sigmoid(r);

        let nx = tape.matmul(x, self.wn)?;
        let hr = tape.mul(r, h)?;
        let nh = tape.matmul(hr, self.un)?;
        let n = tape.add(nx, nh)?;
        let n = tape.add_bias(n, self.bn)?;
        let n = tape.tanh(n);

        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h)?;
        let new = tape.mul(z, n)?;
        tape.add(old, new)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        out.extend([
            self.wz, self.uz, self.bz, self.wr, self.ur, self.br, self.wn, self.un, self.bn,
        ]);
    }
}

/// Two stacked GRU layers; hidden states start at zero.
#[derive(Debug, Clone)]
pub struct Gru {
    pub layers: Vec<GruLayer>,
}

pub struct GruVars {
    layers: Vec<GruLayerVars>,
}

impl Gru {
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        Gru {
            layers: alloc::vec![
                GruLayer::init(input, hidden, rng),
                GruLayer::init(hidden, hidden, rng),
            ],
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> GruVars {
        GruVars {
            layers: self.layers.iter().map(|l| l.stage(tape)).collect(),
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        for l in &self.layers {
            l.collect(out);
        }
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for l in &mut self.layers {
            l.collect_mut(out);
        }
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        for (i, l) in self.layers.iter().enumerate() {
            l.collect_names(&format!("{prefix}.layer{i}"), out);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.collect(&mut v);
        v.iter().map(|t| t.numel()).sum()
    }
}

impl GruVars {
    /// steps[t]: [batch, in]. Returns the top layer's state after every step
    /// (each [batch, hidden]); the last element is the final state.
    pub fn forward_all(&self, tape: &mut Tape, steps: &[Var]) -> Result<Vec<Var>> {
        let batch = tape.value(steps[0]).shape()[0];
        let mut states: Vec<Var> = self
            .layers
            .iter()
            .map(|l| tape.constant(Tensor::zeros(&[batch, l.hidden])))
            .collect();
        let mut top = Vec::with_capacity(steps.len());
        for &x in steps {
            let mut input = x;
            for (li, layer) in self.layers.iter().enumerate() {
                let h = layer.step(tape, input, states[li])?;
                states[li] = h;
                input = h;
            }
            top.push(*states.last().expect("at least one layer"));
        }
        Ok(top)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        for l in &self.layers {
            l.collect_vars(out);
        }
    }
}

// ── attention decoder ───────────────────────────────────────────────────────

/// One attention head's projections.
#[derive(Debug, Clone)]
pub struct AttnHead {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
}

pub struct AttnHeadVars {
    q: LinearVars,
    k: LinearVars,
    v: LinearVars,
}

/// Multi-head self-attention at model width 32 with 4 heads of key width 8.
#[derive(Debug, Clone)]
pub struct Mhsa {
    pub heads: Vec<AttnHead>,
    pub out: Linear,
    pub dk: usize,
}

pub struct MhsaVars {
    heads: Vec<AttnHeadVars>,
    out: LinearVars,
    dk: usize,
}

impl Mhsa {
    pub fn init(width: usize, heads: usize, rng: &mut Rng) -> Self {
        let dk = width / heads;
        Mhsa {
            heads: (0..heads)
                .map(|_| AttnHead {
                    q: Linear::init(width, dk, rng),
                    k: Linear::init(width, dk, rng),
                    v: Linear::init(width, dk, rng),
                })
                .collect(),
            out: Linear::init(width, width, rng),
            dk,
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> MhsaVars {
        MhsaVars {
            heads: self
                .heads
                .iter()
                .map(|h| AttnHeadVars {
                    q: h.q.stage(tape),
                    k: h.k.stage(tape),
                    v: h.v.stage(tape),
                })
                .collect(),
            out: self.out.stage(tape),
            dk: self.dk,
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        for h in &self.heads {
            h.q.collect(out);
            h.k.collect(out);
            h.v.collect(out);
        }
        self.out.collect(out);
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        for h in &mut self.heads {
            h.q.collect_mut(out);
            h.k.collect_mut(out);
            h.v.collect_mut(out);
        }
        self.out.collect_mut(out);
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        for (i, h) in self.heads.iter().enumerate() {
            h.q.collect_names(&format!("{prefix}.head{i}.q"), out);
            h.k.collect_names(&format!("{prefix}.head{i}.k"), out);
            h.v.collect_names(&format!("{prefix}.head{i}.v"), out);
        }
        self.out.collect_names(&format!("{prefix}.out"), out);
    }
}

impl MhsaVars {
    /// tokens: [t, width] → [t, width]; also returns each head's attention
    /// matrix ([t, t], rows summing to 1) for inspection.
    pub fn forward_with_attn(&self, tape: &mut Tape, x: Var) -> Result<(Var, Vec<Var>)> {
        let scale = 1.0 / fmath::sqrt(self.dk as f64);
        let mut ctxs = Vec::with_capacity(self.heads.len());
        let mut attns = Vec::with_capacity(self.heads.len());
        for h in &self.heads {
            let q = h.q.forward(tape, x)?;
            let k = h.k.forward(tape, x)?;
            let v = h.v.forward(tape, x)?;
            let kt = tape.transpose(k)?;
            let logits = tape.matmul(q, kt)?;
            let scaled = tape.scale(logits, scale);
            let attn = tape.softmax(scaled, 1)?;
            let ctx = tape.matmul(attn, v)?;
            ctxs.push(ctx);
            attns.push(attn);
        }
        let cat = tape.concat(&ctxs, 1)?;
        let out = self.out.forward(tape, cat)?;
        Ok((out, attns))
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        Ok(self.forward_with_attn(tape, x)?.0)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        for h in &self.heads {
            h.q.collect_vars(out);
            h.k.collect_vars(out);
            h.v.collect_vars(out);
        }
        self.out.collect_vars(out);
    }
}

// ── transformer block ───────────────────────────────────────────────────────

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Pre-norm residual block: x + MHSA(LN(x)), then + FFN(LN(·)). Zeroing the
/// attention and FFN output projections makes the block an identity map.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub attn: Mhsa,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub ffn1: Linear,
    pub ffn2: Linear,
}

pub struct TransformerBlockVars {
    ln1_gain: Var,
    ln1_bias: Var,
    attn: MhsaVars,
    ln2_gain: Var,
    ln2_bias: Var,
    ffn1: LinearVars,
    ffn2: LinearVars,
}

impl TransformerBlock {
    pub fn init(width: usize, heads: usize, ffn_width: usize, rng: &mut Rng) -> Self {
        TransformerBlock {
            ln1_gain: Tensor::filled(&[width], 1.0),
            ln1_bias: Tensor::zeros(&[width]),
            attn: Mhsa::init(width, heads, rng),
            ln2_gain: Tensor::filled(&[width], 1.0),
            ln2_bias: Tensor::zeros(&[width]),
            ffn1: Linear::init(width, ffn_width, rng),
            ffn2: Linear::init(ffn_width, width, rng),
        }
    }

    pub fn stage(&self, tape: &mut Tape) -> TransformerBlockVars {
        TransformerBlockVars {
            ln1_gain: tape.param(self.ln1_gain.clone()),
            ln1_bias: tape.param(self.ln1_bias.clone()),
            attn: self.attn.stage(tape),
            ln2_gain: tape.param(self.ln2_gain.clone()),
            ln2_bias: tape.param(self.ln2_bias.clone()),
            ffn1: self.ffn1.stage(tape),
            ffn2: self.ffn2.stage(tape),
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.push(&self.ln1_gain);
        out.push(&self.ln1_bias);
        self.attn.collect(out);
        out.push(&self.ln2_gain);
        out.push(&self.ln2_bias);
        self.ffn1.collect(out);
        self.ffn2.collect(out);
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.ln1_gain);
        out.push(&mut self.ln1_bias);
        self.attn.collect_mut(out);
        out.push(&mut self.ln2_gain);
        out.push(&mut self.ln2_bias);
        self.ffn1.collect_mut(out);
        self.ffn2.collect_mut(out);
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        out.push(format!("{prefix}.ln1.gain"));
        out.push(format!("{prefix}.ln1.bias"));
        self.attn.collect_names(&format!("{prefix}.attn"), out);
        out.push(format!("{prefix}.ln2.gain"));
        out.push(format!("{prefix}.ln2.bias"));
        self.ffn1.collect_names(&format!("{prefix}.ffn1"), out);
        self.ffn2.collect_names(&format!("{prefix}.ffn2"), out);
    }
}

impl TransformerBlockVars {
    /// tokens: [t, width] → [t, width]
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let normed = tape.layer_norm(x, self.ln1_gain, self.ln1_bias, LAYER_NORM_EPS)?;
        let attn = self.attn.forward(tape, normed)?;
        let x = tape.add(x, attn)?;
        let normed = tape.layer_norm(x, self.ln2_gain, self.ln2_bias, LAYER_NORM_EPS)?;
        let h = self.ffn1.forward(tape, normed)?;
        let h = tape.relu(h);
        let h = self.ffn2.forward(tape, h)?;
        tape.add(x, h)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        out.push(self.ln1_gain);
        out.push(self.ln1_bias);
        self.attn.collect_vars(out);
        out.push(self.ln2_gain);
        out.push(self.ln2_bias);
        self.ffn1.collect_vars(out);
        self.ffn2.collect_vars(out);
    }
}

/// Stacked pre-norm blocks with learned positional embeddings added once
/// before the first block. Token count is capped by the embedding table.
#[derive(Debug, Clone)]
pub struct Transformer {
    pub pos: Tensor, // [slots, width]
    pub blocks: Vec<TransformerBlock>,
}

pub struct TransformerVars {
    pos: Var,
    blocks: Vec<TransformerBlockVars>,
}

impl Transformer {
    pub fn init(
        slots: usize,
        width: usize,
        depth: usize,
        heads: usize,
        ffn_width: usize,
        rng: &mut Rng,
    ) -> Self {
        Transformer {
            pos: init_weight(rng, &[slots, width], width),
            blocks: (0..depth)
                .map(|_| TransformerBlock::init(width, heads, ffn_width, rng))
                .collect(),
        }
    }

    pub fn slots(&self) -> usize {
        self.pos.shape()[0]
    }

    pub fn stage(&self, tape: &mut Tape) -> TransformerVars {
        TransformerVars {
            pos: tape.param(self.pos.clone()),
            blocks: self.blocks.iter().map(|b| b.stage(tape)).collect(),
        }
    }

    pub fn collect<'a>(&'a self, out: &mut Vec<&'a Tensor>) {
        out.push(&self.pos);
        for b in &self.blocks {
            b.collect(out);
        }
    }

    pub fn collect_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Tensor>) {
        out.push(&mut self.pos);
        for b in &mut self.blocks {
            b.collect_mut(out);
        }
    }

    pub fn collect_names(&self, prefix: &str, out: &mut Vec<String>) {
        out.push(format!("{prefix}.pos"));
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect_names(&format!("{prefix}.block{i}"), out);
        }
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.collect(&mut v);
        v.iter().map(|t| t.numel()).sum()
    }
}

impl TransformerVars {
    /// tokens: [t, width] → [t, width]
    pub fn forward(&self, tape: &mut Tape, tokens: Var) -> Result<Var> {
        let t = tape.value(tokens).shape()[0];
        let slots = tape.value(self.pos).shape()[0];
        if t > slots {
            return Err(Error::Invalid {
                what: format!("{t} tokens exceed the {slots} positional slots configured"),
            });
        }
        let pos = tape.narrow(self.pos, 0, 0, t)?;
        let mut x = tape.add(tokens, pos)?;
        for b in &self.blocks {
            x = b.forward(tape, x)?;
        }
        Ok(x)
    }

    pub fn collect_vars(&self, out: &mut Vec<Var>) {
        out.push(self.pos);
        for b in &self.blocks {
            b.collect_vars(out);
        }
    }
}
