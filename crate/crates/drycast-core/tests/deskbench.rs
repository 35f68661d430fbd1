//! Ignored by default: learning-rate probe for the full 24-run profile
//! (leave-one-group-out fold 0, 30 epochs), with the linear baseline as the
//! reference point.

use std::time::Instant;

use drycast_core::baseline::BaselineParams;
use drycast_core::datapipe::{
    filter_by_conditions, label_grid_samples, logocv_splits, tabular_rows, Normalizer, RunFrames,
};
use drycast_core::metrics::mae;
use drycast_core::model::{Model, ModelConfig, VideoOnlyModel};
use drycast_core::rng::mix;
use drycast_core::sim::{sample_run, SimConfig, CONDITIONS};
use drycast_core::train::{predict_all, train, Hyperparams};

fn desk_corpus(reps: usize, master: u64) -> Vec<RunFrames> {
    let cfg = SimConfig::default();
    let mut runs = Vec::new();
    for (c, cond) in CONDITIONS.iter().enumerate() {
        for rep in 0..reps {
            let seed = mix(&[master, c as u64, rep as u64]);
            let run = sample_run(*cond, seed).unwrap();
            runs.push(RunFrames::from_sim(&cfg, &run, runs.len()).unwrap());
        }
    }
    runs
}

/// Closed-form readout of the visual clock, bypassing the network: per
/// frame, estimate browning progress from the red-minus-blue center shade
/// (texture and glare cancel between channels); across the window, progress
/// raised to 1/power is linear in time, so a line fit yields both the rate
/// and the elapsed fraction, hence remaining time. Measures how much signal
/// a perfect feature extractor could pull from clips alone.
#[test]
#[ignore]
fn visual_clock_oracle() {
    let b = 7usize;
    let runs = desk_corpus(3, 0);
    let folds = logocv_splits(&runs).unwrap();
    let all = label_grid_samples(&runs, b);
    let scfg = SimConfig::default();
    let (pale_rb, brown_rb) = (scfg.pale[0] - scfg.pale[2], scfg.brown[0] - scfg.brown[2]);

    let mut errs = Vec::new();
    for fold in &folds {
        for s in filter_by_conditions(&runs, &all, &fold.eval) {
            let run = &runs[s.run];
            let (hw, fl) = (run.height * run.width, run.frame_len());
            let cookie = &run.cookies[s.cookie];
            let (idx, _) = drycast_core::datapipe::window_indices(s.end_frame, b);
            let psi: Vec<f64> = idx
                .iter()
                .map(|&f| {
                    let fr = &cookie[f * fl..(f + 1) * fl];
                    let (mut acc, mut n) = (0.0, 0);
                    for y in 24..40 {
                        for x in 24..40 {
                            let p = y * run.width + x;
                            acc += (fr[p] as f64 - fr[2 * hw + p] as f64) / 255.0;
                            n += 1;
                        }
                    }
                    let phi = ((acc / n as f64 - pale_rb) / (brown_rb - pale_rb)).clamp(0.0, 1.0);
                    phi.powf(1.0 / scfg.browning_power)
                })
                .collect();
            // Least-squares line psi = a·(t0 + 10·i): slope/endpoint give
            // remaining = (1 − psi_end)/a.
            let n = b as f64;
            let mean_i = (n - 1.0) / 2.0;
            let mean_psi = psi.iter().sum::<f64>() / n;
            let mut num = 0.0;
            let mut den = 0.0;
            for (i, &p) in psi.iter().enumerate() {
                num += (i as f64 - mean_i) * (p - mean_psi);
                den += (i as f64 - mean_i) * (i as f64 - mean_i);
            }
            let a = num / den / 10.0;
            let rem = (1.0 - psi[b - 1]) / a;
            errs.push((rem - s.label).abs());
        }
    }
    let mae = errs.iter().sum::<f64>() / errs.len() as f64;
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!(
        "visual-clock oracle over {} held-out samples: MAE {:.2}, median {:.2}, p90 {:.2}",
        errs.len(),
        mae,
        errs[errs.len() / 2],
        errs[errs.len() * 9 / 10]
    );
}

/// Full 3-seed, 8-fold pass for both network kinds plus the baseline,
/// mirroring the production protocol: per-(seed, fold) derived streams,
/// 30 epochs, batch 32, lr 1e-3.
#[test]
#[ignore]
fn desk_profile_probe() {
    let b = 7;
    let runs = desk_corpus(3, 0);
    let folds = logocv_splits(&runs).unwrap();
    let all = label_grid_samples(&runs, b);

    let mut base_maes = Vec::new();
    for fold in &folds {
        let train_set = filter_by_conditions(&runs, &all, &fold.train);
        let eval_set = filter_by_conditions(&runs, &all, &fold.eval);
        let mut rows = Vec::new();
        let mut ready = Vec::new();
        for &c in &fold.train {
            let cond = CONDITIONS[c];
            let rs: Vec<&RunFrames> = runs.iter().filter(|r| r.condition_idx == c).collect();
            rows.push([cond.temperature, cond.fan_speed]);
            ready.push(rs.iter().map(|r| r.ready_time).sum::<f64>() / rs.len() as f64);
        }
        let bp = BaselineParams::fit(&rows, &ready).unwrap();
        let pred: Vec<f64> = eval_set
            .iter()
            .map(|s| {
                let c = runs[s.run].condition();
                bp.predict(c.temperature, c.fan_speed, runs[s.run].ready_time - s.label)
            })
            .collect();
        let target: Vec<f64> = eval_set.iter().map(|s| s.label).collect();
        base_maes.push(mae(&pred, &target).unwrap());
    }
    println!(
        "baseline per-fold {:?} mean {:.3}",
        base_maes.iter().map(|m| (m * 1e3).round() / 1e3).collect::<Vec<_>>(),
        base_maes.iter().sum::<f64>() / 8.0
    );

    for kind in ["multi", "video"] {
        let mut seed_means = Vec::new();
        for seed in 0..3u64 {
            let mut fold_maes = Vec::new();
            for fold in &folds {
                let train_set = filter_by_conditions(&runs, &all, &fold.train);
                let eval_set = filter_by_conditions(&runs, &all, &fold.eval);
                let norm = Normalizer::fit(&tabular_rows(&runs, &train_set)).unwrap();
                let hp = Hyperparams {
                    batch_size: 32,
                    lr: 1e-3,
                    epochs: 30,
                    lambda: 1e-4,
                    seed: mix(&[seed, fold.fold as u64, 1]),
                    frames: b,
                };
                let cfg = ModelConfig {
                    frames: b,
                    seed: mix(&[seed, fold.fold as u64, 2]),
                    ..ModelConfig::default()
                };
                let pred = if kind == "multi" {
                    let mut m = Model::init(&cfg).unwrap();
                    train(&mut m, &runs, &train_set, &norm, &hp).unwrap();
                    predict_all(&m, &runs, &eval_set, &norm, b, 32).unwrap()
                } else {
                    let mut m = VideoOnlyModel::init(&cfg, cfg.seed);
                    train(&mut m, &runs, &train_set, &norm, &hp).unwrap();
                    predict_all(&m, &runs, &eval_set, &norm, b, 32).unwrap()
                };
                let target: Vec<f64> = eval_set.iter().map(|s| s.label).collect();
                fold_maes.push(mae(&pred, &target).unwrap());
            }
            let mean = fold_maes.iter().sum::<f64>() / 8.0;
            println!(
                "{kind} seed {seed}: per-fold {:?} mean {mean:.3}",
                fold_maes.iter().map(|m| (m * 1e3).round() / 1e3).collect::<Vec<_>>(),
            );
            seed_means.push(mean);
        }
        println!(
            "{kind} seed-mean {:.3}",
            seed_means.iter().sum::<f64>() / 3.0
        );
    }
}

#[test]
#[ignore]
fn fold0_learning_rates() {
    let b = 7;
    let t0 = Instant::now();
    let runs = desk_corpus(3, 0);
    println!("corpus: {} runs in {:.1?}", runs.len(), t0.elapsed());

    let folds = logocv_splits(&runs).unwrap();
    let fold = &folds[0];
    let all = label_grid_samples(&runs, b);
    let train_set = filter_by_conditions(&runs, &all, &fold.train);
    let eval_set = filter_by_conditions(&runs, &all, &fold.eval);
    println!("fold 0: {} train / {} eval samples", train_set.len(), eval_set.len());

    let norm = Normalizer::fit(&tabular_rows(&runs, &train_set)).unwrap();
    let eval_target: Vec<f64> = eval_set.iter().map(|s| s.label).collect();

    // Baseline reference: fit ready-time on the training sample grid.
    let rows = tabular_rows(&runs, &train_set);
    let ready: Vec<f64> = train_set
        .iter()
        .map(|s| runs[s.run].ready_time)
        .collect();
    let bp = BaselineParams::fit(&rows, &ready).unwrap();
    let bpred: Vec<f64> = eval_set
        .iter()
        .map(|s| {
            let c = runs[s.run].condition();
            bp.predict(c.temperature, c.fan_speed, runs[s.run].ready_time - s.label)
        })
        .collect();
    println!("baseline MAE {:.3}", mae(&bpred, &eval_target).unwrap());

    for lr in [1e-3, 1.5e-3] {
        let hp = Hyperparams {
            batch_size: 32,
            lr,
            epochs: 30,
            lambda: 1e-4,
            seed: 0,
            frames: b,
        };
        let cfg = ModelConfig {
            frames: b,
            seed: 100,
            ..ModelConfig::default()
        };
        let t = Instant::now();
        let mut mm = Model::init(&cfg).unwrap();
        let rep = train(&mut mm, &runs, &train_set, &norm, &hp).unwrap();
        let pm = predict_all(&mm, &runs, &eval_set, &norm, b, 32).unwrap();
        println!(
            "multi lr={lr}: eval MAE {:.3} in {:.0?}  loss[0,5,10,20,29]={:?}",
            mae(&pm, &eval_target).unwrap(),
            t.elapsed(),
            [0usize, 5, 10, 20, 29].map(|i| (rep.epoch_loss[i] * 1e3).round() / 1e3),
        );

        let t = Instant::now();
        let mut vo = VideoOnlyModel::init(&cfg, cfg.seed);
        let rep = train(&mut vo, &runs, &train_set, &norm, &hp).unwrap();
        let pv = predict_all(&vo, &runs, &eval_set, &norm, b, 32).unwrap();
        println!(
            "video lr={lr}: eval MAE {:.3} in {:.0?}  loss[0,5,10,20,29]={:?}",
            mae(&pv, &eval_target).unwrap(),
            t.elapsed(),
            [0usize, 5, 10, 20, 29].map(|i| (rep.epoch_loss[i] * 1e3).round() / 1e3),
        );
    }
}
