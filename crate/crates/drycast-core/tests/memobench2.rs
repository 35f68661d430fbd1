//! Ignored by default: video-only memorization probes.

use drycast_core::datapipe::{label_grid_samples, tabular_rows, Normalizer, RunFrames, SampleRef};
use drycast_core::metrics::mae;
use drycast_core::model::{ModelConfig, VideoOnlyModel};
use drycast_core::sim::{sample_run, SimConfig, CONDITIONS};
use drycast_core::train::{predict_all, train, Hyperparams};

fn runs(n: usize) -> Vec<RunFrames> {
    let cfg = SimConfig::default();
    CONDITIONS
        .iter()
        .take(n)
        .enumerate()
        .map(|(i, c)| {
            let run = sample_run(*c, 7000 + i as u64).unwrap();
            RunFrames::from_sim(&cfg, &run, i).unwrap()
        })
        .collect()
}

#[test]
#[ignore]
fn video_only_single_run_eight_labels() {
    let frames = 3;
    let rs = runs(1);
    let all = label_grid_samples(&rs, frames);
    // Eight labels from cookie 0 of the single run.
    let labels = [10.0, 20.0, 40.0, 50.0, 70.0, 80.0, 100.0, 120.0];
    let picked: Vec<SampleRef> = labels
        .iter()
        .map(|&l| *all.iter().find(|s| s.cookie == 0 && s.label == l).unwrap())
        .collect();
    let norm = Normalizer::fit(&tabular_rows(&rs, &picked)).unwrap();
    let target: Vec<f64> = picked.iter().map(|s| s.label).collect();
    for lr in [1e-3, 1.5e-3, 2.5e-3] {
        for seed in [9u64, 10, 11] {
            let hp = Hyperparams {
                batch_size: 8,
                lr,
                epochs: 500,
                lambda: 0.0,
                seed,
                frames,
            };
            let mc = ModelConfig { frames, seed: 11 + seed, ..ModelConfig::default() };
            let mut model = VideoOnlyModel::init(&mc, mc.seed);
            train(&mut model, &rs, &picked, &norm, &hp).unwrap();
            let pred = predict_all(&model, &rs, &picked, &norm, frames, 8).unwrap();
            let m = mae(&pred, &target).unwrap();
            let spread = pred.iter().cloned().fold(f64::MIN, f64::max)
                - pred.iter().cloned().fold(f64::MAX, f64::min);
            println!("single-run lr={lr} seed={seed}: MAE {m:.3} spread {spread:.4}");
        }
    }
}

#[test]
#[ignore]
fn video_only_collapse_autopsy() {
    use drycast_core::datapipe::materialize_batch;
    use drycast_core::tape::Tape;
    let frames = 3;
    let rs = runs(1);
    let all = label_grid_samples(&rs, frames);
    let labels = [10.0, 20.0, 40.0, 50.0, 70.0, 80.0, 100.0, 120.0];
    let picked: Vec<SampleRef> = labels
        .iter()
        .map(|&l| *all.iter().find(|s| s.cookie == 0 && s.label == l).unwrap())
        .collect();
    let norm = Normalizer::fit(&tabular_rows(&rs, &picked)).unwrap();
    let hp = Hyperparams { batch_size: 8, lr: 1e-3, epochs: 500, lambda: 0.0, seed: 9, frames };
    let mc = ModelConfig { frames, seed: 20, ..ModelConfig::default() };
    let mut model = VideoOnlyModel::init(&mc, mc.seed);

    let (batch, _) = materialize_batch(&rs, &picked, frames, &norm).unwrap();
    for stage in ["init", "trained"] {
        if stage == "trained" {
            train(&mut model, &rs, &picked, &norm, &hp).unwrap();
        }
        let mut tape = Tape::new();
        let cnn_vars = model.cnn.stage(&mut tape);
        let fv = tape.constant(batch.frames.clone());
        let feats = cnn_vars.forward(&mut tape, fv).unwrap();
        let fdata = tape.value(feats).data().to_vec();
        // feats: [24, 64]; per-row spread for the LAST time step rows 16..24.
        let spread = |rows: &[usize], data: &[f64], w: usize| -> f64 {
            let mut worst = 0.0_f64;
            for c in 0..w {
                let vals: Vec<f64> = rows.iter().map(|&r| data[r * w + c]).collect();
                let mx = vals.iter().cloned().fold(f64::MIN, f64::max);
                let mn = vals.iter().cloned().fold(f64::MAX, f64::min);
                worst = worst.max(mx - mn);
            }
            worst
        };
        let last_rows: Vec<usize> = (16..24).collect();
        println!("{stage}: cnn feat spread {:.6e}", spread(&last_rows, &fdata, 64));
        let mut mags = Vec::new();
        for (name, t) in model.param_names().iter().zip(model.params()) {
            let mx = t.data().iter().fold(0.0_f64, |a, v| a.max(v.abs()));
            mags.push(format!("{name}={mx:.2}"));
        }
        println!("{stage}: param max-abs {}", mags.join(" "));
    }
}

#[test]
#[ignore]
fn video_only_trap_autopsy() {
    use drycast_core::datapipe::materialize_batch;
    use drycast_core::tape::Tape;
    let frames = 3;
    let rs = runs(4);
    let all = label_grid_samples(&rs, frames);
    let mut picked: Vec<SampleRef> = Vec::new();
    for r in 0..rs.len() {
        for l in [20.0, 90.0] {
            picked.push(*all.iter().find(|s| s.run == r && s.cookie == 0 && s.label == l).unwrap());
        }
    }
    let norm = Normalizer::fit(&tabular_rows(&rs, &picked)).unwrap();
    let target: Vec<f64> = picked.iter().map(|s| s.label).collect();
    let (batch, _) = materialize_batch(&rs, &picked, frames, &norm).unwrap();

    let spread = |data: &[f64], rows: core::ops::Range<usize>, w: usize| -> f64 {
        let mut worst = 0.0_f64;
        for c in 0..w {
            let vals: Vec<f64> = rows.clone().map(|r| data[r * w + c]).collect();
            let mx = vals.iter().cloned().fold(f64::MIN, f64::max);
            let mn = vals.iter().cloned().fold(f64::MAX, f64::min);
            worst = worst.max(mx - mn);
        }
        worst
    };

    // Trapped configuration: model seed 22, lr 1e-3.
    let mc = ModelConfig { frames, seed: 22, ..ModelConfig::default() };
    let mut model = VideoOnlyModel::init(&mc, mc.seed);
    for chunk in 0..10 {
        let hp = Hyperparams { batch_size: 8, lr: 1e-3, epochs: 50, lambda: 0.0, seed: 11, frames };
        // Adam state resets between chunks; close enough for an autopsy.
        train(&mut model, &rs, &picked, &norm, &hp).unwrap();
        let mut tape = Tape::new();
        let cnn_vars = model.cnn.stage(&mut tape);
        let gru_vars = model.gru.stage(&mut tape);
        let fv = tape.constant(batch.frames.clone());
        let feats = cnn_vars.forward(&mut tape, fv).unwrap();
        let steps: Vec<_> = (0..frames).map(|t| tape.narrow(feats, 0, t * 8, 8).unwrap()).collect();
        let states = gru_vars.forward_all(&mut tape, &steps).unwrap();
        let last = *states.last().unwrap();
        let fdata = tape.value(feats).data().to_vec();
        let sdata = tape.value(last).data().to_vec();
        let pred = predict_all(&model, &rs, &picked, &norm, frames, 8).unwrap();
        let m = mae(&pred, &target).unwrap();
        println!(
            "step {:4}: cnn spread {:.4e}  gru spread {:.4e}  MAE {m:.3}",
            (chunk + 1) * 50,
            spread(&fdata, 16..24, 64),
            spread(&sdata, 0..8, 32),
        );
    }
}
