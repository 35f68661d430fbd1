//! Ignored by default: wall-clock probe for one training step at the
//! default batch geometry.

use drycast_core::datapipe::{label_grid_samples, materialize_batch, tabular_rows, Normalizer, RunFrames};
use drycast_core::model::{Model, ModelConfig};
use drycast_core::sim::{sample_run, SimConfig, CONDITIONS};
use drycast_core::tape::Tape;
use drycast_core::train::{training_loss, Forecaster};

#[test]
#[ignore]
fn time_one_training_step() {
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
    // Warm up once, then time.
    for label in ["warm", "timed"] {
        let reps = if label == "warm" { 3 } else { 20 };
        let t0 = std::time::Instant::now();
        for _ in 0..reps {
            let mut tape = Tape::new();
            let (pred, params) = model.stage_forward(&mut tape, &batch).unwrap();
            let loss = training_loss(&mut tape, pred, &targets, &params, 1e-4).unwrap();
            let _ = tape.backward(loss).unwrap();
        }
        println!("{label}: {:?}/step", t0.elapsed() / reps);
    }
    // Forward only (inference cost).
    let t0 = std::time::Instant::now();
    for _ in 0..5 {
        let _ = model.predict(&batch).unwrap();
    }
    println!("inference: {:?}/batch", t0.elapsed() / 5);
    // Batch materialization cost.
    let t0 = std::time::Instant::now();
    for _ in 0..5 {
        let _ = materialize_batch(&runs, &samples[..32], 7, &norm).unwrap();
    }
    println!("materialize: {:?}/batch", t0.elapsed() / 5);
}
