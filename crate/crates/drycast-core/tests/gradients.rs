//! Finite-difference verification of every backward rule, from single tape
//! primitives through whole staged models.

use drycast_core::gradcheck::{grad_check, grad_check_sampled, DEFAULT_EPS};
use drycast_core::model::{Batch, Model, ModelConfig, VideoOnlyModel};
use drycast_core::rng::Rng;
use drycast_core::tape::Tape;
use drycast_core::tensor::Tensor;
use drycast_core::train::{training_loss, Forecaster};

const TOL: f64 = 1e-4;

fn rand_tensor(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_in(lo, hi)).collect()).unwrap()
}

// ── primitives ──────────────────────────────────────────────────────────────

#[test]
fn arithmetic_primitives() {
    let mut rng = Rng::new(1);
    let a = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);

    let err = grad_check(
        |t, v| {
            let s = t.add(v[0], v[1])?;
            Ok(t.mean_all(s))
        },
        &[a.clone(), b.clone()],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "add {err}");

    let err = grad_check(
        |t, v| {
            let s = t.sub(v[0], v[1])?;
            let m = t.mul(s, v[1])?;
            Ok(t.mean_all(m))
        },
        &[a.clone(), b.clone()],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "sub/mul {err}");

    let err = grad_check(
        |t, v| {
            let s = t.scale(v[0], -2.5);
            let o = t.one_minus(s);
            Ok(t.mean_all(o))
        },
        &[a.clone()],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "scale/one_minus {err}");
}

#[test]
fn activation_primitives() {
    let mut rng = Rng::new(2);
    // Keep relu inputs away from its kink at zero.
    let mut x = rand_tensor(&mut rng, &[4, 5], -2.0, 2.0);
    for v in x.data_mut() {
        if v.abs() < 0.05 {
            *v += 0.1;
        }
    }
    for (name, f) in [
        ("relu", 0usize),
        ("sigmoid", 1),
        ("tanh", 2),
    ] {
        let err = grad_check(
            move |t, v| {
                let y = match f {
                    0 => t.relu(v[0]),
                    1 => t.sigmoid(v[0]),
                    _ => t.tanh(v[0]),
                };
                Ok(t.mean_all(y))
            },
            &[x.clone()],
            DEFAULT_EPS,
        )
        .unwrap();
        assert!(err <= TOL, "{name} {err}");
    }
}

#[test]
fn matmul_transpose_bias() {
    let mut rng = Rng::new(3);
    let x = rand_tensor(&mut rng, &[3, 4], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2], -0.5, 0.5);
    let err = grad_check(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            let y = t.add_bias(y, v[2])?;
            let yt = t.transpose(y)?;
            let s = t.mul(yt, yt)?;
            Ok(t.mean_all(s))
        },
        &[x, w, b],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "matmul chain {err}");
}

#[test]
fn softmax_and_layer_norm() {
    let mut rng = Rng::new(4);
    let x = rand_tensor(&mut rng, &[3, 5], -2.0, 2.0);
    let gain = rand_tensor(&mut rng, &[5], 0.5, 1.5);
    let bias = rand_tensor(&mut rng, &[5], -0.3, 0.3);

    let err = grad_check(
        |t, v| {
            let s = t.softmax(v[0], 1)?;
            let w = t.mul(s, v[0])?;
            Ok(t.mean_all(w))
        },
        &[x.clone()],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "softmax {err}");

    let err = grad_check(
        |t, v| {
            let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
            let s = t.mul(y, y)?;
            Ok(t.mean_all(s))
        },
        &[x, gain, bias],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "layer_norm {err}");
}

#[test]
fn concat_narrow_means() {
    let mut rng = Rng::new(5);
    let a = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let b = rand_tensor(&mut rng, &[2, 3], -1.0, 1.0);
    let err = grad_check(
        |t, v| {
            let c = t.concat(&[v[0], v[1]], 0)?;
            let n = t.narrow(c, 0, 1, 2)?;
            let m = t.mean_axis(n, 0)?;
            let s = t.mul(m, m)?;
            Ok(t.mean_all(s))
        },
        &[a, b],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "concat/narrow/mean_axis {err}");
}

#[test]
fn conv_pool_spatial() {
    let mut rng = Rng::new(6);
    let x = rand_tensor(&mut rng, &[2, 3, 6, 6], -1.0, 1.0);
    let w = rand_tensor(&mut rng, &[2, 3, 3, 3], -0.4, 0.4);
    let b = rand_tensor(&mut rng, &[2], -0.2, 0.2);
    for stride in [1usize, 2] {
        let err = grad_check_sampled(
            move |t, v| {
                let y = t.conv2d(v[0], v[1], v[2], stride)?;
                let s = t.mul(y, y)?;
                Ok(t.mean_all(s))
            },
            &[x.clone(), w.clone(), b.clone()],
            DEFAULT_EPS,
            40,
            7,
        )
        .unwrap();
        assert!(err <= TOL, "conv2d stride {stride}: {err}");
    }

    // Maxpool gradients hold where the max is strict; random reals are.
    let err = grad_check_sampled(
        |t, v| {
            let y = t.maxpool2(v[0])?;
            let s = t.mul(y, y)?;
            Ok(t.mean_all(s))
        },
        &[x.clone()],
        DEFAULT_EPS,
        60,
        8,
    )
    .unwrap();
    assert!(err <= TOL, "maxpool2 {err}");

    let err = grad_check_sampled(
        |t, v| {
            let y = t.spatial_mean(v[0])?;
            let s = t.mul(y, y)?;
            Ok(t.mean_all(s))
        },
        &[x],
        DEFAULT_EPS,
        60,
        9,
    )
    .unwrap();
    assert!(err <= TOL, "spatial_mean {err}");
}

#[test]
fn loss_primitives() {
    let mut rng = Rng::new(10);
    // Keep |pred − target| away from the smooth-L1 knee at 1.
    let pred = rand_tensor(&mut rng, &[4, 1], 2.0, 5.0);
    let target = rand_tensor(&mut rng, &[4, 1], -0.5, 0.5);
    let err = grad_check(
        |t, v| {
            let l = t.smooth_l1(v[0], v[1])?;
            Ok(t.mean_all(l))
        },
        &[pred.clone(), target.clone()],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "smooth_l1 tail {err}");

    let near = rand_tensor(&mut rng, &[4, 1], -0.4, 0.4);
    let err = grad_check(
        |t, v| {
            let l = t.smooth_l1(v[0], v[1])?;
            Ok(t.mean_all(l))
        },
        &[near, target],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "smooth_l1 quadratic {err}");

    let err = grad_check(
        |t, v| Ok(t.sum_squares(v[0])),
        &[pred],
        DEFAULT_EPS,
    )
    .unwrap();
    assert!(err <= TOL, "sum_squares {err}");
}

// ── whole models ────────────────────────────────────────────────────────────

fn tiny_batch(rng: &mut Rng, n: usize, frames: usize, hw: usize) -> (Batch, Tensor) {
    let batch = Batch {
        tabular: rand_tensor(rng, &[n, 2], -1.0, 1.0),
        frames: rand_tensor(rng, &[frames * n, 3, hw, hw], 0.0, 1.0),
        frame_count: frames,
    };
    let targets = rand_tensor(rng, &[n, 1], 20.0, 100.0);
    (batch, targets)
}

fn loss_value<M: Forecaster>(model: &M, batch: &Batch, targets: &Tensor, lambda: f64) -> f64 {
    let mut tape = Tape::new();
    let (pred, params) = model.stage_forward(&mut tape, batch).unwrap();
    let loss = training_loss(&mut tape, pred, targets, &params, lambda).unwrap();
    tape.value(loss).data()[0]
}

/// Central-difference check of the full training objective with respect to
/// every parameter tensor, sampling a few coordinates from each.
fn check_model_params<M: Forecaster>(
    model: &mut M,
    batch: &Batch,
    targets: &Tensor,
    names: &[String],
    per_tensor: usize,
    seed: u64,
) {
    let lambda = 1e-3;
    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let (pred, params) = model.stage_forward(&mut tape, batch).unwrap();
        let loss = training_loss(&mut tape, pred, targets, &params, lambda).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        params.iter().map(|&v| grads.take(v).unwrap()).collect()
    };
    let mut rng = Rng::derive(seed, "e2e-grad-probe");
    let count = model.params().len();
    assert_eq!(analytic.len(), count);
    assert_eq!(names.len(), count);
    let eps = 1e-5;
    for pi in 0..count {
        let numel = model.params()[pi].numel();
        for _ in 0..per_tensor.min(numel) {
            let j = rng.below(numel as u64) as usize;
            let orig = model.params()[pi].data()[j];
            model.params_mut()[pi].data_mut()[j] = orig + eps;
            let up = loss_value(model, batch, targets, lambda);
            model.params_mut()[pi].data_mut()[j] = orig - eps;
            let down = loss_value(model, batch, targets, lambda);
            model.params_mut()[pi].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[pi].data()[j];
            let rel = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
            assert!(
                rel <= TOL,
                "{} coord {j}: analytic {a} vs numeric {numeric} (rel {rel})",
                names[pi]
            );
        }
    }
}

fn tiny_model_cfg() -> ModelConfig {
    ModelConfig {
        frames: 2,
        slots: 4,
        seed: 33,
        ..ModelConfig::default()
    }
}

#[test]
fn multi_modal_model_end_to_end() {
    let mut rng = Rng::new(77);
    let (batch, targets) = tiny_batch(&mut rng, 2, 2, 16);
    let mut model = Model::init(&tiny_model_cfg()).unwrap();
    let names = model.param_names();
    check_model_params(&mut model, &batch, &targets, &names, 4, 101);
}

#[test]
fn video_only_model_end_to_end() {
    let mut rng = Rng::new(78);
    let (batch, targets) = tiny_batch(&mut rng, 2, 2, 16);
    let mut model = VideoOnlyModel::init(&tiny_model_cfg(), 44);
    let names = model.param_names();
    check_model_params(&mut model, &batch, &targets, &names, 4, 102);
}

#[test]
fn alternative_encoders_end_to_end() {
    use drycast_core::model::EncoderKind;
    let mut rng = Rng::new(79);
    let (batch, targets) = tiny_batch(&mut rng, 2, 2, 16);
    for kind in [
        EncoderKind::ResidualCnnMeanpool,
        EncoderKind::FrameCnn,
        EncoderKind::TinySpacetimeAttention,
    ] {
        let mut model = Model::init(&ModelConfig {
            encoder: kind,
            ..tiny_model_cfg()
        })
        .unwrap();
        let names = model.param_names();
        check_model_params(&mut model, &batch, &targets, &names, 2, 103);
    }
}

/// The staged training objective must see every parameter: an unreachable
/// parameter would silently freeze at its initialization.
#[test]
fn every_parameter_receives_gradient_mass() {
    let mut rng = Rng::new(80);
    let (batch, targets) = tiny_batch(&mut rng, 3, 2, 16);
    let model = Model::init(&tiny_model_cfg()).unwrap();
    let mut tape = Tape::new();
    let (pred, params) = model.stage_forward(&mut tape, &batch).unwrap();
    // No regularizer here: mass must arrive through the data term alone.
    let loss = training_loss(&mut tape, pred, &targets, &params, 0.0).unwrap();
    let mut grads = tape.backward(loss).unwrap();
    let names = model.param_names();
    for (i, &v) in params.iter().enumerate() {
        let g = grads.take(v).unwrap();
        let mass: f64 = g.data().iter().map(|x| x.abs()).sum();
        assert!(mass > 0.0, "parameter {} got zero gradient", names[i]);
    }
}
