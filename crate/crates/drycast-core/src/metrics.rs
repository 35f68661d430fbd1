//! Evaluation metrics: pooled and per-timestamp absolute error, and rank
//! correlation for monotonicity checks.

use alloc::format;
use alloc::vec::Vec;

use crate::datapipe::{LABEL_COUNT, LABEL_MIN, LABEL_STEP};
use crate::error::{Error, Result};

/// Mean absolute error over paired predictions and targets.
pub fn mae(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() || pred.len() != target.len() {
        return Err(Error::Invalid {
            what: format!(
                "mae needs equal nonzero lengths, got {} and {}",
                pred.len(),
                target.len()
            ),
        });
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / pred.len() as f64)
}

/// Error statistics for one prediction-window label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestampStat {
    pub label: f64,
    pub count: usize,
    /// NaN when the bucket is empty.
    pub mae: f64,
    /// Population standard deviation of the absolute errors; NaN when empty.
    pub std: f64,
}

/// Groups absolute errors by their grid label. Always returns the full
/// 12-row grid in ascending label order; labels off the grid are an error.
pub fn per_timestamp_mae(labels: &[f64], pred: &[f64], target: &[f64]) -> Result<Vec<TimestampStat>> {
    if labels.len() != pred.len() || pred.len() != target.len() {
        return Err(Error::Invalid {
            what: "per-timestamp grouping needs equal-length inputs".into(),
        });
    }
    let mut buckets: Vec<Vec<f64>> = alloc::vec![Vec::new(); LABEL_COUNT];
    for ((l, p), t) in labels.iter().zip(pred).zip(target) {
        let k = (l - LABEL_MIN) / LABEL_STEP;
        let idx = crate::fmath::round(k);
        if (k - idx).abs() > 1e-9 || !(0.0..LABEL_COUNT as f64).contains(&idx) {
            return Err(Error::Invalid {
                what: format!("label {l} is off the prediction-window grid"),
            });
        }
        buckets[idx as usize].push((p - t).abs());
    }
    Ok(buckets
        .iter()
        .enumerate()
        .map(|(i, errs)| {
            let label = LABEL_MIN + i as f64 * LABEL_STEP;
            if errs.is_empty() {
                return TimestampStat {
                    label,
                    count: 0,
                    mae: f64::NAN,
                    std: f64::NAN,
                };
            }
            let n = errs.len() as f64;
            let mean = errs.iter().sum::<f64>() / n;
            let var = errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / n;
            TimestampStat {
                label,
                count: errs.len(),
                mae: mean,
                std: crate::fmath::sqrt(var),
            }
        })
        .collect())
}

/// Count-weighted mean of the per-timestamp MAEs; equals the pooled MAE.
pub fn pooled_from_stats(stats: &[TimestampStat]) -> f64 {
    let (mut num, mut den) = (0.0, 0usize);
    for s in stats {
        if s.count > 0 {
            num += s.mae * s.count as f64;
            den += s.count;
        }
    }
    num / den as f64
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].partial_cmp(&v[b]).expect("no NaN in rank input"));
    let mut ranks = alloc::vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        // Ties share the average of the ranks they span (1-based).
        let shared = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = shared;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Invalid {
            what: format!(
                "rank correlation needs two equal series of at least 2, got {} and {}",
                x.len(),
                y.len()
            ),
        });
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::Invalid {
            what: "rank correlation is undefined for a constant series".into(),
        });
    }
    Ok(cov / crate::fmath::sqrt(vx * vy))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mae_basics() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 4.0]).unwrap(), 1.0);
        assert!(mae(&[], &[]).is_err());
        assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn per_timestamp_grid_and_weighted_identity() {
        // Two samples at label 10, one at 120, rest empty.
        let labels = [10.0, 10.0, 120.0];
        let pred = [12.0, 8.0, 100.0];
        let target = [10.0, 10.0, 120.0];
        let stats = per_timestamp_mae(&labels, &pred, &target).unwrap();
        assert_eq!(stats.len(), 12);
        assert_eq!(stats[0].count, 2);
        assert_eq!(stats[0].mae, 2.0);
        assert_eq!(stats[0].std, 0.0);
        assert_eq!(stats[11].count, 1);
        assert_eq!(stats[11].mae, 20.0);
        assert!(stats[3].mae.is_nan() && stats[3].count == 0);
        let pooled = pooled_from_stats(&stats);
        assert!((pooled - mae(&pred, &target).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn per_timestamp_rejects_off_grid() {
        assert!(per_timestamp_mae(&[15.0], &[1.0], &[1.0]).is_err());
        assert!(per_timestamp_mae(&[130.0], &[1.0], &[1.0]).is_err());
        assert!(per_timestamp_mae(&[0.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn per_timestamp_population_std() {
        let labels = [50.0; 4];
        let pred = [1.0, 3.0, 5.0, 7.0];
        let target = [0.0; 4];
        let s = &per_timestamp_mae(&labels, &pred, &target).unwrap()[4];
        assert_eq!(s.label, 50.0);
        assert_eq!(s.mae, 4.0);
        // Population std of {1,3,5,7} is sqrt(5).
        assert!((s.std - 5.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn spearman_extremes_and_ties() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(spearman(&x, &[10.0, 20.0, 30.0, 40.0]).unwrap(), 1.0);
        assert_eq!(spearman(&x, &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        // A monotone but nonlinear map still gives 1.
        assert_eq!(spearman(&x, &[1.0, 8.0, 27.0, 64.0]).unwrap(), 1.0);
        // Ties get averaged ranks: y = [1,1,2] vs x = [1,2,3].
        let r = spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).unwrap();
        assert!((r - 0.866_025_403_784_438_6).abs() < 1e-12, "{r}");
        assert!(spearman(&[1.0, 1.0], &[1.0, 2.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
    }
}
