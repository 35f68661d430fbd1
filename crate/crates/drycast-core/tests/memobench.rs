//! Ignored by default: hyperparameter probe for the 8-clip memorization
//! budget (target: MAE < 1 s within 500 optimizer steps).

use drycast_core::datapipe::{label_grid_samples, tabular_rows, Normalizer, RunFrames, SampleRef};
use drycast_core::metrics::mae;
use drycast_core::model::{Model, ModelConfig, VideoOnlyModel};
use drycast_core::sim::{sample_run, SimConfig, CONDITIONS};
use drycast_core::train::{predict_all, train, Hyperparams};

fn four_condition_runs() -> Vec<RunFrames> {
    let cfg = SimConfig::default();
    CONDITIONS
        .iter()
        .take(4)
        .enumerate()
        .map(|(i, c)| {
            let run = sample_run(*c, 7000 + i as u64).unwrap();
            RunFrames::from_sim(&cfg, &run, i).unwrap()
        })
        .collect()
}

/// Two labels from cookie 0 of each run: tabular separates the runs, vision
/// separates the two clips within a run.
fn eight_spread_samples(runs: &[RunFrames], frames: usize) -> Vec<SampleRef> {
    let all = label_grid_samples(runs, frames);
    let mut picked = Vec::new();
    for r in 0..runs.len() {
        for l in [20.0, 90.0] {
            picked.push(
                *all.iter()
                    .find(|s| s.run == r && s.cookie == 0 && s.label == l)
                    .unwrap(),
            );
        }
    }
    picked
}

#[test]
#[ignore]
fn memorization_budget_grid() {
    let frames = 3;
    let runs = four_condition_runs();
    let picked = eight_spread_samples(&runs, frames);
    let norm = Normalizer::fit(&tabular_rows(&runs, &picked)).unwrap();
    let target: Vec<f64> = picked.iter().map(|s| s.label).collect();
    for bs in [8usize] {
        for lr in [1e-3] {
            for lam in [1e-4] {
            for seed in [12u64] {
                for steps in [400usize, 450, 500] {
                    let spe = 8usize.div_ceil(bs);
                    let hp = Hyperparams {
                        batch_size: bs,
                        lr,
                        epochs: steps / spe,
                        lambda: lam,
                        seed,
                        frames,
                    };
                    let mc = ModelConfig {
                        frames,
                        seed: 11 + seed,
                        ..ModelConfig::default()
                    };
                    let mut mm = Model::init(&mc).unwrap();
                    train(&mut mm, &runs, &picked, &norm, &hp).unwrap();
                    let pm = predict_all(&mm, &runs, &picked, &norm, frames, 8).unwrap();
                    let mut vo = VideoOnlyModel::init(&mc, mc.seed);
                    train(&mut vo, &runs, &picked, &norm, &hp).unwrap();
                    let pv = predict_all(&vo, &runs, &picked, &norm, frames, 8).unwrap();
                    println!(
                        "bs={bs} lr={lr} lam={lam} seed={seed} steps={steps}: multi {:.3} video {:.3}",
                        mae(&pm, &target).unwrap(),
                        mae(&pv, &target).unwrap()
                    );
                }
            }
            }
        }
    }
}
