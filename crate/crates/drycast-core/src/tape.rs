//! Reverse-mode automatic differentiation on a tape.
//!
//! A [`Tape`] records every operation as a node holding the forward value and
//! enough metadata to replay its backward rule. Nodes are appended in
//! execution order, so inputs always precede their consumers and a single
//! reverse sweep over the node list propagates gradients from a scalar loss
//! to every parameter leaf.
//!
//! Handles are [`Var`] indices into the tape rather than references, which
//! keeps the graph in one allocation and sidesteps ownership cycles. A tape
//! is built fresh for every training step and dropped afterwards.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    OneMinus(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    /// Row-wise broadcast add of a rank-1 bias onto a rank-2 operand.
    AddBias(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Softmax {
        x: usize,
        axis: usize,
    },
    /// Per-slice normalization over the last axis; mean and reciprocal
    /// standard deviation are cached at forward time for the backward rule.
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        mean: Vec<f64>,
        rstd: Vec<f64>,
    },
    Concat {
        axis: usize,
        parts: Vec<usize>,
    },
    Narrow {
        x: usize,
        axis: usize,
        start: usize,
        len: usize,
    },
    /// Mean over one axis, keeping it with extent 1.
    MeanAxis {
        x: usize,
        axis: usize,
    },
    MeanAll(usize),
    SumSquares(usize),
    SmoothL1 {
        pred: usize,
        target: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        stride: usize,
        pad: usize,
    },
    MaxPool2(usize),
    /// Mean over the two spatial axes of an NCHW tensor.
    SpatialMean(usize),
}

struct Node {
    value: Tensor,
    requires_grad: bool,
    op: Op,
}

/// Per-leaf gradients produced by [`Tape::backward`].
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss with respect to the node, if one was recorded.
    /// Differentiable leaves always hold a tensor (zero when unreachable).
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.slots.get(v.0).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.slots.get_mut(v.0).and_then(|s| s.take())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

// ── kernels ─────────────────────────────────────────────────────────────────

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0_f64; 4];
    let mut xc = x.chunks_exact(4);
    let mut yc = y.chunks_exact(4);
    for (xs, ys) in (&mut xc).zip(&mut yc) {
        acc[0] += xs[0] * ys[0];
        acc[1] += xs[1] * ys[1];
        acc[2] += xs[2] * ys[2];
        acc[3] += xs[3] * ys[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (xv, yv) in xc.remainder().iter().zip(yc.remainder()) {
        s += xv * yv;
    }
    s
}

/// out[m,n] += a[m,k] · b[k,n]
fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        let mut p = 0;
        while p + 4 <= k {
            let (a0, a1, a2, a3) = (arow[p], arow[p + 1], arow[p + 2], arow[p + 3]);
            let b0 = &b[p * n..(p + 1) * n];
            let b1 = &b[(p + 1) * n..(p + 2) * n];
            let b2 = &b[(p + 2) * n..(p + 3) * n];
            let b3 = &b[(p + 3) * n..(p + 4) * n];
            for (j, o) in orow.iter_mut().enumerate() {
                *o += (a0 * b0[j] + a1 * b1[j]) + (a2 * b2[j] + a3 * b3[j]);
            }
            p += 4;
        }
        while p < k {
            axpy(orow, arow[p], &b[p * n..(p + 1) * n]);
            p += 1;
        }
    }
}

/// out[m,q] += a[m,k] · b[q,k]ᵀ (b stored row-major, logically transposed).
/// Rows are paired so each loaded element feeds two dot products.
fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, q: usize, out: &mut [f64]) {
    let mut i = 0;
    while i + 2 <= m {
        let a0 = &a[i * k..(i + 1) * k];
        let a1 = &a[(i + 1) * k..(i + 2) * k];
        for j in 0..q {
            let brow = &b[j * k..(j + 1) * k];
            let (d0, d1) = dot2(a0, a1, brow);
            out[i * q + j] += d0;
            out[(i + 1) * q + j] += d1;
        }
        i += 2;
    }
    if i < m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * q..(i + 1) * q];
        for (j, o) in orow.iter_mut().enumerate() {
            *o += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// (x0·y, x1·y) in one pass over y.
fn dot2(x0: &[f64], x1: &[f64], y: &[f64]) -> (f64, f64) {
    let mut a0 = [0.0_f64; 4];
    let mut a1 = [0.0_f64; 4];
    let mut c0 = x0.chunks_exact(4);
    let mut c1 = x1.chunks_exact(4);
    let mut cy = y.chunks_exact(4);
    for ((s0, s1), sy) in (&mut c0).zip(&mut c1).zip(&mut cy) {
        for l in 0..4 {
            a0[l] += s0[l] * sy[l];
            a1[l] += s1[l] * sy[l];
        }
    }
    let mut d0 = (a0[0] + a0[1]) + (a0[2] + a0[3]);
    let mut d1 = (a1[0] + a1[1]) + (a1[2] + a1[3]);
    for ((v0, v1), vy) in c0.remainder().iter().zip(c1.remainder()).zip(cy.remainder()) {
        d0 += v0 * vy;
        d1 += v1 * vy;
    }
    (d0, d1)
}

/// out[m,n] += a[p,m]ᵀ · b[p,n] (a stored row-major, logically transposed)
fn mm_tn(a: &[f64], b: &[f64], p: usize, m: usize, n: usize, out: &mut [f64]) {
    for r in 0..p {
        let brow = &b[r * n..(r + 1) * n];
        let arow = &a[r * m..(r + 1) * m];
        for (i, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                axpy(&mut out[i * n..(i + 1) * n], av, brow);
            }
        }
    }
}

/// out[m,n] = a[p,m]ᵀ · b[p,n], overwriting out so callers can reuse a dirty
/// buffer without zeroing it first.
fn mm_tn_overwrite(a: &[f64], b: &[f64], p: usize, m: usize, n: usize, out: &mut [f64]) {
    let brow0 = &b[..n];
    for (i, &av) in a[..m].iter().enumerate() {
        let orow = &mut out[i * n..(i + 1) * n];
        for (o, &x) in orow.iter_mut().zip(brow0) {
            *o = av * x;
        }
    }
    for r in 1..p {
        let brow = &b[r * n..(r + 1) * n];
        let arow = &a[r * m..(r + 1) * m];
        for (i, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                axpy(&mut out[i * n..(i + 1) * n], av, brow);
            }
        }
    }
}

struct ConvDims {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

/// Output index range along one axis for which `stride·o + tap − pad` stays
/// inside `[0, extent)`, so tap loops need no per-pixel bounds checks.
fn tap_range(extent: usize, out_extent: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = if tap >= pad {
        0
    } else {
        (pad - tap).div_ceil(stride)
    };
    let hi = if extent + pad > tap {
        out_extent.min((extent - 1 + pad - tap) / stride + 1)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Writes the in-bounds cells of the patch matrix for one image: row
/// (ci·k+ky)·k+kx holds input tap (ky,kx) of channel ci for every output
/// pixel, matching the (ci,ky,kx) order of a weight row. Padding cells must
/// already be zero; they are never touched, so a buffer zeroed once can be
/// reused across images of the same geometry.
fn fill_patch(x: &[f64], d: &ConvDims, patch: &mut [f64]) {
    let (h, wd, oh, ow, k) = (d.h, d.w, d.oh, d.ow, d.k);
    let cols = oh * ow;
    for ci in 0..d.cin {
        let xplane = &x[ci * h * wd..(ci + 1) * h * wd];
        for ky in 0..k {
            let (y0, y1) = tap_range(h, oh, d.stride, ky, d.pad);
            for kx in 0..k {
                let (x0, x1) = tap_range(wd, ow, d.stride, kx, d.pad);
                if x0 >= x1 {
                    continue;
                }
                let row = &mut patch[((ci * k + ky) * k + kx) * cols..][..cols];
                for y in y0..y1 {
                    let sy = y * d.stride + ky - d.pad;
                    let sx0 = x0 * d.stride + kx - d.pad;
                    let dst = &mut row[y * ow + x0..y * ow + x1];
                    if d.stride == 1 {
                        dst.copy_from_slice(&xplane[sy * wd + sx0..sy * wd + sx0 + dst.len()]);
                    } else {
                        let src = &xplane[sy * wd..(sy + 1) * wd];
                        let mut sx = sx0;
                        for v in dst.iter_mut() {
                            *v = src[sx];
                            sx += d.stride;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of a patch matrix back onto one image plane set, the adjoint
/// of fill_patch. Padding cells of the patch are ignored.
fn add_patch(patch: &[f64], d: &ConvDims, dx: &mut [f64]) {
    let (h, wd, oh, ow, k) = (d.h, d.w, d.oh, d.ow, d.k);
    let cols = oh * ow;
    for ci in 0..d.cin {
        let xgrad = &mut dx[ci * h * wd..(ci + 1) * h * wd];
        for ky in 0..k {
            let (y0, y1) = tap_range(h, oh, d.stride, ky, d.pad);
            for kx in 0..k {
                let (x0, x1) = tap_range(wd, ow, d.stride, kx, d.pad);
                if x0 >= x1 {
                    continue;
                }
                let row = &patch[((ci * k + ky) * k + kx) * cols..][..cols];
                for y in y0..y1 {
                    let sy = y * d.stride + ky - d.pad;
                    let sx0 = x0 * d.stride + kx - d.pad;
                    let src = &row[y * ow + x0..y * ow + x1];
                    if d.stride == 1 {
                        axpy(&mut xgrad[sy * wd + sx0..sy * wd + sx0 + src.len()], 1.0, src);
                    } else {
                        let xrow = &mut xgrad[sy * wd..(sy + 1) * wd];
                        let mut sx = sx0;
                        for v in src {
                            xrow[sx] += *v;
                            sx += d.stride;
                        }
                    }
                }
            }
        }
    }
}

/// out[n,co] = b[co] + Σ_ci input[n,ci] ⊛ weight[co,ci], computed per image
/// as a [cout, cin·k²]·[cin·k², oh·ow] product against the patch matrix so
/// the hot loops run the full output plane at a time.
fn conv2d_forward(x: &[f64], w: &[f64], b: &[f64], d: &ConvDims, out: &mut [f64]) {
    let cols = d.oh * d.ow;
    let rows = d.cin * d.k * d.k;
    let mut patch = alloc::vec![0.0; rows * cols];
    for n in 0..d.n {
        fill_patch(&x[n * d.cin * d.h * d.w..], d, &mut patch);
        let oimg = &mut out[n * d.cout * cols..(n + 1) * d.cout * cols];
        for co in 0..d.cout {
            oimg[co * cols..(co + 1) * cols].fill(b[co]);
        }
        mm_nn(w, &patch, d.cout, rows, cols, oimg);
    }
}

fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    d: &ConvDims,
    dx: Option<&mut [f64]>,
    dw: Option<&mut [f64]>,
    db: Option<&mut [f64]>,
) {
    let cols = d.oh * d.ow;
    let rows = d.cin * d.k * d.k;
    if let Some(db) = db {
        for n in 0..d.n {
            for co in 0..d.cout {
                let gplane = &g[(n * d.cout + co) * cols..(n * d.cout + co + 1) * cols];
                db[co] += gplane.iter().sum::<f64>();
            }
        }
    }
    if let Some(dw) = dw {
        // dw[co,(ci,ky,kx)] += Σ_n g[n,co]·tap, with each tap row built in a
        // small reused buffer so it stays cache-resident for the cout dots.
        let (h, wd, oh, ow, k) = (d.h, d.w, d.oh, d.ow, d.k);
        let mut row = alloc::vec![0.0; cols];
        for n in 0..d.n {
            let ximg = &x[n * d.cin * h * wd..(n + 1) * d.cin * h * wd];
            let gimg = &g[n * d.cout * cols..(n + 1) * d.cout * cols];
            for ky in 0..k {
                let (y0, y1) = tap_range(h, oh, d.stride, ky, d.pad);
                for kx in 0..k {
                    let (x0, x1) = tap_range(wd, ow, d.stride, kx, d.pad);
                    // In-bounds geometry is shared by every ci at this tap,
                    // so the padding cells only need zeroing once per tap.
                    row.fill(0.0);
                    for ci in 0..d.cin {
                        if x0 < x1 {
                            let xplane = &ximg[ci * h * wd..(ci + 1) * h * wd];
                            for y in y0..y1 {
                                let sy = y * d.stride + ky - d.pad;
                                let sx0 = x0 * d.stride + kx - d.pad;
                                let dst = &mut row[y * ow + x0..y * ow + x1];
                                if d.stride == 1 {
                                    dst.copy_from_slice(
                                        &xplane[sy * wd + sx0..sy * wd + sx0 + dst.len()],
                                    );
                                } else {
                                    let src = &xplane[sy * wd..(sy + 1) * wd];
                                    let mut sx = sx0;
                                    for v in dst.iter_mut() {
                                        *v = src[sx];
                                        sx += d.stride;
                                    }
                                }
                            }
                        }
                        let r = (ci * k + ky) * k + kx;
                        let mut co = 0;
                        while co + 2 <= d.cout {
                            let (d0, d1) = dot2(
                                &gimg[co * cols..(co + 1) * cols],
                                &gimg[(co + 1) * cols..(co + 2) * cols],
                                &row,
                            );
                            dw[co * rows + r] += d0;
                            dw[(co + 1) * rows + r] += d1;
                            co += 2;
                        }
                        if co < d.cout {
                            dw[co * rows + r] += dot(&gimg[co * cols..(co + 1) * cols], &row);
                        }
                    }
                }
            }
        }
    }
    if let Some(dx) = dx {
        if d.stride == 1 {
            // Same-padded stride-1 case: dx is itself a convolution of g with
            // the spatially flipped, channel-transposed kernel, so each dx
            // pixel is written once by a plain matmul instead of scattered.
            let k = d.k;
            let mut wt = alloc::vec![0.0; d.cin * d.cout * k * k];
            for co in 0..d.cout {
                for ci in 0..d.cin {
                    for ky in 0..k {
                        for kx in 0..k {
                            wt[(ci * d.cout + co) * k * k + (k - 1 - ky) * k + (k - 1 - kx)] =
                                w[(co * d.cin + ci) * k * k + ky * k + kx];
                        }
                    }
                }
            }
            let tdims = ConvDims {
                n: 1,
                cin: d.cout,
                h: d.oh,
                w: d.ow,
                cout: d.cin,
                k,
                stride: 1,
                pad: k - 1 - d.pad,
                oh: d.h,
                ow: d.w,
            };
            let trows = d.cout * k * k;
            let tcols = d.h * d.w;
            let mut gpatch = alloc::vec![0.0; trows * tcols];
            for n in 0..d.n {
                fill_patch(&g[n * d.cout * cols..], &tdims, &mut gpatch);
                mm_nn(
                    &wt,
                    &gpatch,
                    d.cin,
                    trows,
                    tcols,
                    &mut dx[n * d.cin * tcols..(n + 1) * d.cin * tcols],
                );
            }
        } else {
            // gpatch = wᵀ·g per image, then scattered back through the taps.
            let mut gpatch = alloc::vec![0.0; rows * cols];
            for n in 0..d.n {
                let gimg = &g[n * d.cout * cols..(n + 1) * d.cout * cols];
                mm_tn_overwrite(w, gimg, d.cout, rows, cols, &mut gpatch);
                add_patch(&gpatch, d, &mut dx[n * d.cin * d.h * d.w..]);
            }
        }
    }
}

/// Iteration geometry for ops that act along one axis of a row-major tensor.
fn axis_geometry(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Differentiable leaf; its gradient is retrievable after `backward`.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, true, Op::Leaf)
    }

    /// Non-differentiable leaf (inputs, labels).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    // ── elementwise ─────────────────────────────────────────────────────────

    fn zip_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape(), data)?;
        let req = self.needs(&[a.0, b.0]);
        Ok(self.push(t, req, Op::Add(a.0, b.0)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.value(a).shape(), data)?;
        let req = self.needs(&[a.0, b.0]);
        Ok(self.push(t, req, Op::Sub(a.0, b.0)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape(), data)?;
        let req = self.needs(&[a.0, b.0]);
        Ok(self.push(t, req, Op::Mul(a.0, b.0)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let data = self.value(a).data().iter().map(|x| c * x).collect();
        let t = Tensor::new(self.value(a).shape(), data).expect("same shape");
        let req = self.needs(&[a.0]);
        self.push(t, req, Op::Scale(a.0, c))
    }

    /// 1 − x, used by gate blends.
    pub fn one_minus(&mut self, a: Var) -> Var {
        let data = self.value(a).data().iter().map(|x| 1.0 - x).collect();
        let t = Tensor::new(self.value(a).shape(), data).expect("same shape");
        let req = self.needs(&[a.0]);
        self.push(t, req, Op::OneMinus(a.0))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| if x > 0.0 { x } else { 0.0 })
            .collect();
        let t = Tensor::new(self.value(a).shape(), data).expect("same shape");
        let req = self.needs(&[a.0]);
        self.push(t, req, Op::Relu(a.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| fmath::sigmoid(x))
            .collect();
        let t = Tensor::new(self.value(a).shape(), data).expect("same shape");
        let req = self.needs(&[a.0]);
        self.push(t, req, Op::Sigmoid(a.0))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let data = self
            .value(a)
            .data()
            .iter()
            .map(|&x| fmath::tanh(x))
            .collect();
        let t = Tensor::new(self.value(a).shape(), data).expect("same shape");
        let req = self.needs(&[a.0]);
        self.push(t, req, Op::Tanh(a.0))
    }

    // ── linear algebra ──────────────────────────────────────────────────────

    /// Broadcasts a rank-1 bias over the rows of a rank-2 operand.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(bias).shape());
        if sa.len() != 2 || sb.len() != 1 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (r, c) = (sa[0], sa[1]);
        let mut data = self.value(a).data().to_vec();
        let bdata = self.value(bias).data();
        for row in data.chunks_exact_mut(c) {
            for (v, b) in row.iter_mut().zip(bdata) {
                *v += b;
            }
        }
        let t = Tensor::new(&[r, c], data)?;
        let req = self.needs(&[a.0, bias.0]);
        Ok(self.push(t, req, Op::AddBias(a.0, bias.0)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Shape {
                op: "matmul",
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        mm_nn(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let t = Tensor::new(&[m, n], out)?;
        let req = self.needs(&[a.0, b.0]);
        Ok(self.push(t, req, Op::MatMul(a.0, b.0)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let sa = self.value(a).shape();
        if sa.len() != 2 {
            return Err(Error::Axis {
                op: "transpose",
                axis: 1,
                rank: sa.len(),
            });
        }
        let (r, c) = (sa[0], sa[1]);
        let src = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let t = Tensor::new(&[c, r], out)?;
        let req = self.needs(&[a.0]);
        Ok(self.push(t, req, Op::Transpose(a.0)))
    }

    // ── normalization ───────────────────────────────────────────────────────

    /// Max-subtracted softmax along `axis`; each slice sums to 1.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis {
                op: "softmax",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_geometry(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut mx = f64::NEG_INFINITY;
                for k in 0..len {
                    mx = mx.max(src[base + k * inner]);
                }
                let mut sum = 0.0;
                for k in 0..len {
                    let e = fmath::exp(src[base + k * inner] - mx);
                    out[base + k * inner] = e;
                    sum += e;
                }
                let r = 1.0 / sum;
                for k in 0..len {
                    out[base + k * inner] *= r;
                }
            }
        }
        let t = Tensor::new(&shape, out)?;
        let req = self.needs(&[a.0]);
        Ok(self.push(t, req, Op::Softmax { x: a.0, axis }))
    }

    /// Zero-mean unit-variance normalization over the last axis, then an
    /// affine map by `gain` and `bias` (both rank 1 matching that axis).
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        let width = *shape.last().ok_or(Error::Axis {
            op: "layer_norm",
            axis: 0,
            rank: 0,
        })?;
        for aff in [gain, bias] {
            let s = self.value(aff).shape();
            if s != [width] {
                return Err(Error::Shape {
                    op: "layer_norm",
                    lhs: shape.clone(),
                    rhs: s.to_vec(),
                });
            }
        }
        let rows = self.value(a).numel() / width;
        let src = self.value(a).data();
        let gdata = self.value(gain).data();
        let bdata = self.value(bias).data();
        let mut out = vec![0.0; src.len()];
        let mut means = Vec::with_capacity(rows);
        let mut rstds = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * width..(r + 1) * width];
            let mean = row.iter().sum::<f64>() / width as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / width as f64;
            let rstd = 1.0 / fmath::sqrt(var + eps);
            for (j, v) in row.iter().enumerate() {
                out[r * width + j] = gdata[j] * ((v - mean) * rstd) + bdata[j];
            }
            means.push(mean);
            rstds.push(rstd);
        }
        let t = Tensor::new(&shape, out)?;
        let req = self.needs(&[a.0, gain.0, bias.0]);
        Ok(self.push(
            t,
            req,
            Op::LayerNorm {
                x: a.0,
                gain: gain.0,
                bias: bias.0,
                mean: means,
                rstd: rstds,
            },
        ))
    }

    // ── shape surgery ───────────────────────────────────────────────────────

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts.first().ok_or(Error::Invalid {
            what: alloc::string::String::from("concat of zero tensors"),
        })?;
        let base = self.value(*first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::Axis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: base,
                    rhs: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_geometry(&shape, axis);
        let mut out = vec![0.0; outer * total * inner];
        for o in 0..outer {
            let mut off = 0;
            for p in parts {
                let plen = self.value(*p).shape()[axis];
                let block = plen * inner;
                let src = &self.value(*p).data()[o * block..(o + 1) * block];
                out[(o * total + off) * inner..(o * total + off) * inner + block]
                    .copy_from_slice(src);
                off += plen;
            }
        }
        let t = Tensor::new(&shape, out)?;
        let idx: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let req = self.needs(&idx);
        Ok(self.push(t, req, Op::Concat { axis, parts: idx }))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis {
                op: "narrow",
                axis,
                rank: shape.len(),
            });
        }
        if len == 0 || start + len > shape[axis] {
            return Err(Error::Slice {
                op: "narrow",
                axis,
                start,
                len,
                size: shape[axis],
            });
        }
        let (outer, full, inner) = axis_geometry(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * len * inner];
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out[o * len * inner..(o + 1) * len * inner]
                .copy_from_slice(&src[from..from + len * inner]);
        }
        let mut oshape = shape;
        oshape[axis] = len;
        let t = Tensor::new(&oshape, out)?;
        let req = self.needs(&[a.0]);
        Ok(self.push(
            t,
            req,
            Op::Narrow {
                x: a.0,
                axis,
                start,
                len,
            },
        ))
    }

    // ── reductions ──────────────────────────────────────────────────────────

    /// Mean along `axis`, keeping the axis with extent 1.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.value(a).shape().to_vec();
        if axis >= shape.len() {
            return Err(Error::Axis {
                op: "mean_axis",
                axis,
                rank: shape.len(),
            });
        }
        let (outer, len, inner) = axis_geometry(&shape, axis);
        let src = self.value(a).data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let row = &src[(o * len + k) * inner..(o * len + k + 1) * inner];
                axpy(&mut out[o * inner..(o + 1) * inner], 1.0 / len as f64, row);
            }
        }
        let mut oshape = shape;
        oshape[axis] = 1;
        let t = Tensor::new(&oshape, out)?;
        let req = self.needs(&[a.0]);
        Ok(self.push(t, req, Op::MeanAxis { x: a.0, axis }))
    }

    /// Mean of all elements, as a scalar.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let src = self.value(a).data();
        let m = src.iter().sum::<f64>() / src.len() as f64;
        let req = self.needs(&[a.0]);
        self.push(Tensor::scalar(m), req, Op::MeanAll(a.0))
    }

    /// Σ x², as a scalar; the carrier for the L2 penalty.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let src = self.value(a).data();
        let s = dot(src, src);
        let req = self.needs(&[a.0]);
        self.push(Tensor::scalar(s), req, Op::SumSquares(a.0))
    }

    // ── loss ────────────────────────────────────────────────────────────────

    /// Elementwise smooth L1: 0.5e² for |e| < 1, |e| − 0.5 otherwise, with
    /// e = pred − target. Both branches meet at 0.5 when |e| = 1.
    pub fn smooth_l1(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.zip_same_shape("smooth_l1", pred, target)?;
        let data = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(p, t)| {
                let e = p - t;
                if e.abs() < 1.0 {
                    0.5 * e * e
                } else {
                    e.abs() - 0.5
                }
            })
            .collect();
        let t = Tensor::new(self.value(pred).shape(), data)?;
        let req = self.needs(&[pred.0, target.0]);
        Ok(self.push(
            t,
            req,
            Op::SmoothL1 {
                pred: pred.0,
                target: target.0,
            },
        ))
    }

    // ── image ops ───────────────────────────────────────────────────────────

    /// 2-D convolution over NCHW input with square odd kernel, zero padding
    /// of k/2, and stride 1 or 2.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride: usize) -> Result<Var> {
        let (sx, sw, sb) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: sx,
                rhs: sw,
            });
        }
        let k = sw[2];
        if sw[3] != k || k % 2 == 0 {
            return Err(Error::Invalid {
                what: alloc::format!("conv2d kernel must be square and odd, got {sw:?}"),
            });
        }
        if !(stride == 1 || stride == 2) {
            return Err(Error::Invalid {
                what: alloc::format!("conv2d stride must be 1 or 2, got {stride}"),
            });
        }
        if sb != [sw[0]] {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: sw,
                rhs: sb,
            });
        }
        let pad = k / 2;
        let (n, cin, h, wd) = (sx[0], sx[1], sx[2], sx[3]);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;
        let dims = ConvDims {
            n,
            cin,
            h,
            w: wd,
            cout: sw[0],
            k,
            stride,
            pad,
            oh,
            ow,
        };
        let mut out = vec![0.0; n * dims.cout * oh * ow];
        conv2d_forward(
            self.value(x).data(),
            self.value(w).data(),
            self.value(b).data(),
            &dims,
            &mut out,
        );
        let t = Tensor::new(&[n, dims.cout, oh, ow], out)?;
        let req = self.needs(&[x.0, w.0, b.0]);
        Ok(self.push(
            t,
            req,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                stride,
                pad,
            },
        ))
    }

    /// 2×2 max pooling with stride 2; odd extents keep their last row/column
    /// as a clipped window (ceil-mode output size).
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::Axis {
                op: "maxpool2",
                axis: 3,
                rank: s.len(),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c * oh * ow];
        for p in 0..n * c {
            let plane = &src[p * h * w..(p + 1) * h * w];
            let oplane = &mut out[p * oh * ow..(p + 1) * oh * ow];
            for y in 0..oh {
                // Rows 2y and 2y+1; an odd bottom edge reuses the last row.
                let r0 = &plane[(2 * y) * w..(2 * y) * w + w];
                let r1 = if 2 * y + 1 < h {
                    &plane[(2 * y + 1) * w..(2 * y + 1) * w + w]
                } else {
                    r0
                };
                let orow = &mut oplane[y * ow..(y + 1) * ow];
                let pairs = w / 2;
                for (i, o) in orow[..pairs].iter_mut().enumerate() {
                    let top = r0[2 * i].max(r0[2 * i + 1]);
                    let bot = r1[2 * i].max(r1[2 * i + 1]);
                    *o = top.max(bot);
                }
                if w % 2 == 1 {
                    orow[pairs] = r0[w - 1].max(r1[w - 1]);
                }
            }
        }
        let t = Tensor::new(&[n, c, oh, ow], out)?;
        let req = self.needs(&[x.0]);
        Ok(self.push(t, req, Op::MaxPool2(x.0)))
    }

    /// Mean over the spatial axes: [n, c, h, w] → [n, c].
    pub fn spatial_mean(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).shape().to_vec();
        if s.len() != 4 {
            return Err(Error::Axis {
                op: "spatial_mean",
                axis: 3,
                rank: s.len(),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let src = self.value(x).data();
        let mut out = vec![0.0; n * c];
        for (p, o) in out.iter_mut().enumerate() {
            *o = src[p * h * w..(p + 1) * h * w].iter().sum::<f64>() / (h * w) as f64;
        }
        let t = Tensor::new(&[n, c], out)?;
        let req = self.needs(&[x.0]);
        Ok(self.push(t, req, Op::SpatialMean(x.0)))
    }

    // ── backward ────────────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Returns gradients for every
    /// differentiable leaf; leaves the loss does not reach hold zeros.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: self.value(loss).shape().to_vec(),
            });
        }
        let mut bufs: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        bufs[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad || matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = bufs[i].take() else { continue };
            self.backprop_node(i, &g, &mut bufs);
        }

        let mut slots: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                let shape = node.value.shape();
                let t = match bufs[i].take() {
                    Some(data) => Tensor::new(shape, data)?,
                    None => Tensor::zeros(shape),
                };
                slots.push(Some(t));
            } else {
                slots.push(None);
            }
        }
        Ok(Gradients { slots })
    }

    fn wants(&self, idx: usize) -> bool {
        self.nodes[idx].requires_grad
    }

    fn backprop_node(&self, i: usize, g: &[f64], bufs: &mut [Option<Vec<f64>>]) {
        // Allocates the target's buffer on first touch so untouched nodes
        // never pay for zero-fill.
        fn slot<'a>(
            bufs: &'a mut [Option<Vec<f64>>],
            idx: usize,
            numel: usize,
        ) -> &'a mut [f64] {
            bufs[idx].get_or_insert_with(|| vec![0.0; numel])
        }

        match &self.nodes[i].op {
            Op::Leaf => {}
            &Op::Add(a, b) => {
                for (idx, _) in [(a, 0), (b, 1)] {
                    if self.wants(idx) {
                        axpy(slot(bufs, idx, g.len()), 1.0, g);
                    }
                }
            }
            &Op::Sub(a, b) => {
                if self.wants(a) {
                    axpy(slot(bufs, a, g.len()), 1.0, g);
                }
                if self.wants(b) {
                    axpy(slot(bufs, b, g.len()), -1.0, g);
                }
            }
            &Op::Mul(a, b) => {
                if self.wants(a) {
                    let bv = self.nodes[b].value.data();
                    let da = slot(bufs, a, g.len());
                    for ((d, gg), vv) in da.iter_mut().zip(g).zip(bv) {
                        *d += gg * vv;
                    }
                }
                if self.wants(b) {
                    let av = self.nodes[a].value.data();
                    let db = slot(bufs, b, g.len());
                    for ((d, gg), vv) in db.iter_mut().zip(g).zip(av) {
                        *d += gg * vv;
                    }
                }
            }
            &Op::Scale(a, c) => {
                if self.wants(a) {
                    axpy(slot(bufs, a, g.len()), c, g);
                }
            }
            &Op::OneMinus(a) => {
                if self.wants(a) {
                    axpy(slot(bufs, a, g.len()), -1.0, g);
                }
            }
            &Op::Relu(a) => {
                if self.wants(a) {
                    let xv = self.nodes[a].value.data();
                    let da = slot(bufs, a, g.len());
                    for ((d, gg), xx) in da.iter_mut().zip(g).zip(xv) {
                        if *xx > 0.0 {
                            *d += gg;
                        }
                    }
                }
            }
            &Op::Sigmoid(a) => {
                if self.wants(a) {
                    let yv = self.nodes[i].value.data();
                    let da = slot(bufs, a, g.len());
                    for ((d, gg), yy) in da.iter_mut().zip(g).zip(yv) {
                        *d += gg * yy * (1.0 - yy);
                    }
                }
            }
            &Op::Tanh(a) => {
                if self.wants(a) {
                    let yv = self.nodes[i].value.data();
                    let da = slot(bufs, a, g.len());
                    for ((d, gg), yy) in da.iter_mut().zip(g).zip(yv) {
                        *d += gg * (1.0 - yy * yy);
                    }
                }
            }
            &Op::AddBias(a, b) => {
                let c = self.nodes[b].value.numel();
                if self.wants(a) {
                    axpy(slot(bufs, a, g.len()), 1.0, g);
                }
                if self.wants(b) {
                    let db = slot(bufs, b, c);
                    for row in g.chunks_exact(c) {
                        axpy(db, 1.0, row);
                    }
                }
            }
            &Op::MatMul(a, b) => {
                let (m, k) = {
                    let s = self.nodes[a].value.shape();
                    (s[0], s[1])
                };
                let n = self.nodes[b].value.shape()[1];
                if self.wants(a) {
                    let bv = self.nodes[b].value.data();
                    mm_nt(g, bv, m, n, k, slot(bufs, a, m * k));
                }
                if self.wants(b) {
                    let av = self.nodes[a].value.data();
                    mm_tn(av, g, m, k, n, slot(bufs, b, k * n));
                }
            }
            &Op::Transpose(a) => {
                if self.wants(a) {
                    let s = self.nodes[a].value.shape();
                    let (r, c) = (s[0], s[1]);
                    let da = slot(bufs, a, r * c);
                    for j in 0..c {
                        for ii in 0..r {
                            da[ii * c + j] += g[j * r + ii];
                        }
                    }
                }
            }
            Op::Softmax { x, axis } => {
                if self.wants(*x) {
                    let y = self.nodes[i].value.data();
                    let shape = self.nodes[i].value.shape();
                    let (outer, len, inner) = axis_geometry(shape, *axis);
                    let dx = slot(bufs, *x, y.len());
                    for o in 0..outer {
                        for ii in 0..inner {
                            let base = o * len * inner + ii;
                            let mut gy = 0.0;
                            for k in 0..len {
                                gy += g[base + k * inner] * y[base + k * inner];
                            }
                            for k in 0..len {
                                let idx = base + k * inner;
                                dx[idx] += y[idx] * (g[idx] - gy);
                            }
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                mean,
                rstd,
            } => {
                let width = *self.nodes[i].value.shape().last().unwrap();
                let xv = self.nodes[*x].value.data();
                let gv = self.nodes[*gain].value.data();
                let rows = xv.len() / width;
                if self.wants(*bias) {
                    let db = slot(bufs, *bias, width);
                    for row in g.chunks_exact(width) {
                        axpy(db, 1.0, row);
                    }
                }
                if self.wants(*gain) {
                    let dg = slot(bufs, *gain, width);
                    for r in 0..rows {
                        for j in 0..width {
                            let xh = (xv[r * width + j] - mean[r]) * rstd[r];
                            dg[j] += g[r * width + j] * xh;
                        }
                    }
                }
                if self.wants(*x) {
                    let dx = slot(bufs, *x, xv.len());
                    let wf = width as f64;
                    for r in 0..rows {
                        // gy is the grad w.r.t. the normalized value.
                        let mut gy_sum = 0.0;
                        let mut gy_dot_xh = 0.0;
                        for j in 0..width {
                            let gy = g[r * width + j] * gv[j];
                            let xh = (xv[r * width + j] - mean[r]) * rstd[r];
                            gy_sum += gy;
                            gy_dot_xh += gy * xh;
                        }
                        for j in 0..width {
                            let gy = g[r * width + j] * gv[j];
                            let xh = (xv[r * width + j] - mean[r]) * rstd[r];
                            dx[r * width + j] +=
                                rstd[r] * (gy - gy_sum / wf - xh * gy_dot_xh / wf);
                        }
                    }
                }
            }
            Op::Concat { axis, parts } => {
                let shape = self.nodes[i].value.shape();
                let (outer, total, inner) = axis_geometry(shape, *axis);
                let mut off = 0;
                for p in parts {
                    let plen = self.nodes[*p].value.shape()[*axis];
                    if self.wants(*p) {
                        let numel = self.nodes[*p].value.numel();
                        let dp = slot(bufs, *p, numel);
                        for o in 0..outer {
                            let src = &g[(o * total + off) * inner
                                ..(o * total + off + plen) * inner];
                            axpy(&mut dp[o * plen * inner..(o + 1) * plen * inner], 1.0, src);
                        }
                    }
                    off += plen;
                }
            }
            &Op::Narrow {
                x,
                axis,
                start,
                len,
            } => {
                if self.wants(x) {
                    let shape = self.nodes[x].value.shape();
                    let (outer, full, inner) = axis_geometry(shape, axis);
                    let numel = self.nodes[x].value.numel();
                    let dx = slot(bufs, x, numel);
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        axpy(
                            &mut dx[dst..dst + len * inner],
                            1.0,
                            &g[o * len * inner..(o + 1) * len * inner],
                        );
                    }
                }
            }
            &Op::MeanAxis { x, axis } => {
                if self.wants(x) {
                    let shape = self.nodes[x].value.shape();
                    let (outer, len, inner) = axis_geometry(shape, axis);
                    let numel = self.nodes[x].value.numel();
                    let dx = slot(bufs, x, numel);
                    let scale = 1.0 / len as f64;
                    for o in 0..outer {
                        let grow = &g[o * inner..(o + 1) * inner];
                        for k in 0..len {
                            axpy(
                                &mut dx[(o * len + k) * inner..(o * len + k + 1) * inner],
                                scale,
                                grow,
                            );
                        }
                    }
                }
            }
            &Op::MeanAll(a) => {
                if self.wants(a) {
                    let numel = self.nodes[a].value.numel();
                    let da = slot(bufs, a, numel);
                    let gg = g[0] / numel as f64;
                    for d in da.iter_mut() {
                        *d += gg;
                    }
                }
            }
            &Op::SumSquares(a) => {
                if self.wants(a) {
                    let xv = self.nodes[a].value.data();
                    let da = slot(bufs, a, xv.len());
                    let gg = 2.0 * g[0];
                    for (d, xx) in da.iter_mut().zip(xv) {
                        *d += gg * xx;
                    }
                }
            }
            &Op::SmoothL1 { pred, target } => {
                let pv = self.nodes[pred].value.data();
                let tv = self.nodes[target].value.data();
                for (idx, sign) in [(pred, 1.0), (target, -1.0)] {
                    if self.wants(idx) {
                        let d = slot(bufs, idx, g.len());
                        for (j, (p, t)) in pv.iter().zip(tv).enumerate() {
                            let e = p - t;
                            let de = if e.abs() < 1.0 { e } else { e.signum() };
                            d[j] += sign * g[j] * de;
                        }
                    }
                }
            }
            &Op::Conv2d {
                x,
                w,
                b,
                stride,
                pad,
            } => {
                let sx = self.nodes[x].value.shape();
                let sw = self.nodes[w].value.shape();
                let so = self.nodes[i].value.shape();
                let dims = ConvDims {
                    n: sx[0],
                    cin: sx[1],
                    h: sx[2],
                    w: sx[3],
                    cout: sw[0],
                    k: sw[2],
                    stride,
                    pad,
                    oh: so[2],
                    ow: so[3],
                };
                let (want_x, want_w, want_b) = (self.wants(x), self.wants(w), self.wants(b));
                let xv = self.nodes[x].value.data();
                let wv = self.nodes[w].value.data();
                // The three grad buffers live in the same slice, so they are
                // materialized one at a time.
                if want_b {
                    let numel = self.nodes[b].value.numel();
                    conv2d_backward(xv, wv, g, &dims, None, None, Some(slot(bufs, b, numel)));
                }
                if want_w {
                    let numel = self.nodes[w].value.numel();
                    conv2d_backward(xv, wv, g, &dims, None, Some(slot(bufs, w, numel)), None);
                }
                if want_x {
                    let numel = self.nodes[x].value.numel();
                    conv2d_backward(xv, wv, g, &dims, Some(slot(bufs, x, numel)), None, None);
                }
            }
            &Op::MaxPool2(x) => {
                if self.wants(x) {
                    let s = self.nodes[x].value.shape();
                    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
                    let xv = self.nodes[x].value.data();
                    let dx = slot(bufs, x, xv.len());
                    // Re-derive the argmax; first maximum in row-major window
                    // order receives the gradient, matching the forward pass.
                    for p in 0..n * c {
                        let plane = &xv[p * h * w..(p + 1) * h * w];
                        let dplane = &mut dx[p * h * w..(p + 1) * h * w];
                        let gplane = &g[p * oh * ow..(p + 1) * oh * ow];
                        for y in 0..oh {
                            for xo in 0..ow {
                                let mut best = f64::NEG_INFINITY;
                                let mut arg = 0;
                                for yy in 2 * y..(2 * y + 2).min(h) {
                                    for xx in 2 * xo..(2 * xo + 2).min(w) {
                                        let v = plane[yy * w + xx];
                                        if v > best {
                                            best = v;
                                            arg = yy * w + xx;
                                        }
                                    }
                                }
                                dplane[arg] += gplane[y * ow + xo];
                            }
                        }
                    }
                }
            }
            &Op::SpatialMean(x) => {
                if self.wants(x) {
                    let s = self.nodes[x].value.shape();
                    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
                    let dx = slot(bufs, x, n * c * h * w);
                    let scale = 1.0 / (h * w) as f64;
                    for (p, gg) in g.iter().enumerate() {
                        let contrib = gg * scale;
                        for d in dx[p * h * w..(p + 1) * h * w].iter_mut() {
                            *d += contrib;
                        }
                    }
                }
            }
        }
    }
}
