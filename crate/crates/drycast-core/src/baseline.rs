//! Tabular-only reference predictor: ordinary least squares of ready time
//! on (1, temperature, fan speed), with time-to-ready obtained by
//! subtracting elapsed time from the fitted ready time.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Fitted coefficients on the raw feature scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineParams {
    pub intercept: f64,
    pub temp_coef: f64,
    pub fan_coef: f64,
}

/// Solves a 3×3 system by Gaussian elimination with partial pivoting.
/// A pivot below tol relative to the largest entry means the design is
/// rank deficient.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Result<[f64; 3]> {
    let scale = a
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).expect("finite"))
            .expect("nonempty range");
        if a[pivot][col].abs() < 1e-10 * scale {
            return Err(Error::Invalid {
                what: "baseline design matrix is rank deficient".into(),
            });
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for col in (0..3).rev() {
        let mut v = b[col];
        for k in col + 1..3 {
            v -= a[col][k] * x[k];
        }
        x[col] = v / a[col][col];
    }
    Ok(x)
}

impl BaselineParams {
    /// Least-squares fit of targets on rows (temperature, fan speed).
    /// Features are standardized internally before forming the normal
    /// equations so the solve stays well conditioned, then mapped back.
    pub fn fit(rows: &[[f64; 2]], targets: &[f64]) -> Result<Self> {
        if rows.len() != targets.len() || rows.len() < 3 {
            return Err(Error::Invalid {
                what: format!(
                    "baseline fit needs at least 3 matched rows, got {} and {}",
                    rows.len(),
                    targets.len()
                ),
            });
        }
        let n = rows.len() as f64;
        let mut mean = [0.0; 2];
        for r in rows {
            mean[0] += r[0];
            mean[1] += r[1];
        }
        mean[0] /= n;
        mean[1] /= n;
        let mut var = [0.0; 2];
        for r in rows {
            var[0] += (r[0] - mean[0]) * (r[0] - mean[0]);
            var[1] += (r[1] - mean[1]) * (r[1] - mean[1]);
        }
        let sd = [
            if var[0] > 0.0 { crate::fmath::sqrt(var[0] / n) } else { 1.0 },
            if var[1] > 0.0 { crate::fmath::sqrt(var[1] / n) } else { 1.0 },
        ];
        // Normal equations XᵀX β = Xᵀy on standardized features.
        let mut xtx = [[0.0; 3]; 3];
        let mut xty = [0.0; 3];
        for (r, &y) in rows.iter().zip(targets) {
            let f = [
                1.0,
                (r[0] - mean[0]) / sd[0],
                (r[1] - mean[1]) / sd[1],
            ];
            for i in 0..3 {
                for j in 0..3 {
                    xtx[i][j] += f[i] * f[j];
                }
                xty[i] += f[i] * y;
            }
        }
        let beta = solve3(xtx, xty)?;
        let temp_coef = beta[1] / sd[0];
        let fan_coef = beta[2] / sd[1];
        Ok(BaselineParams {
            intercept: beta[0] - temp_coef * mean[0] - fan_coef * mean[1],
            temp_coef,
            fan_coef,
        })
    }

    /// Fitted ready time for a (temperature, fan speed) row.
    pub fn ready_time(&self, temperature: f64, fan_speed: f64) -> f64 {
        self.intercept + self.temp_coef * temperature + self.fan_coef * fan_speed
    }

    /// Time-to-ready estimate: fitted ready time minus elapsed time.
    pub fn predict(&self, temperature: f64, fan_speed: f64, elapsed: f64) -> f64 {
        self.ready_time(temperature, fan_speed) - elapsed
    }

    /// Per-row fit residuals y − ŷ.
    pub fn residuals(&self, rows: &[[f64; 2]], targets: &[f64]) -> Vec<f64> {
        rows.iter()
            .zip(targets)
            .map(|(r, &y)| y - self.ready_time(r[0], r[1]))
            .collect()
    }
}
