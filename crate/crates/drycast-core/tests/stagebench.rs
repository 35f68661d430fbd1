//! Ignored by default: per-stage wall-clock breakdown at the default batch
//! geometry.

use drycast_core::datapipe::{label_grid_samples, materialize_batch, tabular_rows, Normalizer, RunFrames};
use drycast_core::model::{Model, ModelConfig};
use drycast_core::sim::{sample_run, SimConfig, CONDITIONS};
use drycast_core::tape::Tape;
use drycast_core::tensor::Tensor;
use drycast_core::train::training_loss;

#[test]
#[ignore]
fn time_each_stage() {
    let cfg = SimConfig::default();
    let runs: Vec<RunFrames> = CONDITIONS
        .iter()
        .take(3)
        .enumerate()
        .map(|(i, c)| RunFrames::from_sim(&cfg, &sample_run(*c, 50 + i as u64).unwrap(), i).unwrap())
        .collect();
    let samples = label_grid_samples(&runs, 7);
    let norm = Normalizer::fit(&tabular_rows(&runs, &samples)).unwrap();
    let model = Model::init(&ModelConfig { frames: 7, ..ModelConfig::default() }).unwrap();
    let (batch, targets) = materialize_batch(&runs, &samples[..32], 7, &norm).unwrap();

    for round in 0..3 {
        let mut tape = Tape::new();
        let staged = model.stage(&mut tape);
        let t0 = std::time::Instant::now();
        let xt = tape.constant(batch.tabular.clone());
        let ht = staged.encode_tabular(&mut tape, xt).unwrap();
        let t1 = std::time::Instant::now();
        let video = staged.encode_video(&mut tape, &batch.frames, batch.frame_count).unwrap();
        let t2 = std::time::Instant::now();
        let _ = (ht, video);
        let pred = staged.forward(&mut tape, &batch).unwrap();
        let t3 = std::time::Instant::now();
        let loss = training_loss(&mut tape, pred, &targets, &staged.param_vars(), 1e-4).unwrap();
        let t4 = std::time::Instant::now();
        let _g = tape.backward(loss).unwrap();
        let t5 = std::time::Instant::now();
        if round > 0 {
            println!(
                "tabular {:?}  video {:?}  full-fwd {:?}  loss {:?}  backward {:?}",
                t1 - t0, t2 - t1, t3 - t2, t4 - t3, t5 - t4,
            );
        }
    }
}

#[test]
#[ignore]
fn time_cnn_alone() {
    // 224 frames through just the conv stack, forward.
    let mc = ModelConfig { frames: 7, ..ModelConfig::default() };
    let model = Model::init(&mc).unwrap();
    let mut rng = drycast_core::rng::Rng::new(7);
    let mut px = vec![0.0; 224 * 3 * 64 * 64];
    for v in px.iter_mut() {
        *v = rng.uniform();
    }
    let frames = Tensor::new(&[224, 3, 64, 64], px).unwrap();
    for round in 0..3 {
        let mut tape = Tape::new();
        let staged = model.stage(&mut tape);
        let t0 = std::time::Instant::now();
        let _ = staged.encode_video(&mut tape, &frames, 7).unwrap();
        if round > 0 {
            println!("encode_video fwd: {:?}", t0.elapsed());
        }
    }
}

#[test]
#[ignore]
fn time_video_only_step() {
    use drycast_core::model::VideoOnlyModel;
    use drycast_core::train::Forecaster;
    let cfg = SimConfig::default();
    let runs: Vec<RunFrames> = CONDITIONS
        .iter()
        .take(3)
        .enumerate()
        .map(|(i, c)| RunFrames::from_sim(&cfg, &sample_run(*c, 50 + i as u64).unwrap(), i).unwrap())
        .collect();
    let samples = label_grid_samples(&runs, 7);
    let norm = Normalizer::fit(&tabular_rows(&runs, &samples)).unwrap();
    let (batch, targets) = materialize_batch(&runs, &samples[..32], 7, &norm).unwrap();
    let model = VideoOnlyModel::init(&ModelConfig { frames: 7, ..ModelConfig::default() }, 3);
    for round in 0..2 {
        let reps = if round == 0 { 1 } else { 5 };
        let t0 = std::time::Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let (pred, params) = model.stage_forward(&mut tape, &batch).unwrap();
            let loss = training_loss(&mut tape, pred, &targets, &params, 1e-4).unwrap();
            let _ = tape.backward(loss).unwrap();
        }
        if round == 1 {
            println!("video-only step: {:?}", t0.elapsed() / reps);
        }
    }
}

#[test]
#[ignore]
fn time_cnn_fwd_bwd() {
    use drycast_core::layers::ResCnn;
    let mut rng = drycast_core::rng::Rng::new(7);
    let cnn = ResCnn::init(4, 64, &mut rng);
    let mut px = vec![0.0; 224 * 3 * 64 * 64];
    for v in px.iter_mut() {
        *v = rng.uniform();
    }
    let frames = Tensor::new(&[224, 3, 64, 64], px).unwrap();
    for round in 0..2 {
        let reps = if round == 0 { 1 } else { 5 };
        let t0 = std::time::Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let staged = cnn.stage(&mut tape);
            let x = tape.constant(frames.clone());
            let feats = staged.forward(&mut tape, x).unwrap();
            let loss = tape.mean_all(feats);
            let _ = tape.backward(loss).unwrap();
        }
        if round == 1 {
            println!("cnn-only fwd+bwd: {:?}", t0.elapsed() / reps);
        }
    }
}
