//! Decision function `f(x) = sum_j coef_j K(x_j, x) + b` shared by every
//! kernel solver, together with the slack and bias rules built on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{FeatureMatrix, KernelSpec};

/// `max(0, 1 - y_i f_i)` for every pattern.
pub fn slacks(f: &[f64], y: &[f64]) -> Vec<f64> {
    f.iter()
        .zip(y)
        .map(|(fi, yi)| (1.0 - yi * fi).max(0.0))
        .collect()
}

/// Bias refresh: the mean residual `y_i - (f_i - b_old)` over the patterns
/// with positive slack. `raw[i]` is `f(x_i) - b_old`, the kernel part of the
/// decision value. Returns `b_old` when no pattern has positive slack.
pub fn update_bias(raw: &[f64], y: &[f64], b_old: f64) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (r, yi) in raw.iter().zip(y) {
        if 1.0 - yi * (r + b_old) > 0.0 {
            sum += yi - r;
            n += 1;
        }
    }
    if n == 0 {
        b_old
    } else {
        sum / n as f64
    }
}

/// Maps decision values to labels; zero goes to +1.
pub fn sign_labels(f: &[f64]) -> Vec<f64> {
    f.iter()
        .map(|&v| if v >= 0.0 { 1.0 } else { -1.0 })
        .collect()
}

/// Trained kernel expansion over a set of centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelExpansion {
    pub kernel: KernelSpec,
    pub centers: FeatureMatrix,
    pub coef: Vec<f64>,
    pub b: f64,
}

impl KernelExpansion {
    pub fn decision(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        expansion_decision(&self.kernel, &self.centers, &self.coef, self.b, x)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(sign_labels(&self.decision(x)?))
    }
}

/// `sum_j coef_j k(c_j, x) + b` for every row of `x`; zero coefficients are
/// skipped.
pub fn expansion_decision(
    kernel: &KernelSpec,
    centers: &FeatureMatrix,
    coef: &[f64],
    b: f64,
    x: &FeatureMatrix,
) -> Result<Vec<f64>> {
    if x.cols() != centers.cols() {
        return Err(Error::input(format!(
            "model expects {} features, got {}",
            centers.cols(),
            x.cols()
        )));
    }
    if coef.len() != centers.rows() {
        return Err(Error::input("coefficient count does not match centers"));
    }
    let active: Vec<usize> = (0..coef.len()).filter(|&j| coef[j] != 0.0).collect();
    Ok(x.iter_rows()
        .map(|row| {
            active
                .iter()
                .map(|&j| coef[j] * kernel.eval(centers.row(j), row))
                .sum::<f64>()
                + b
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bias_single_active_pattern() {
        // y = 1, kernel part 0.2, b_old 0 -> slack 0.8 > 0 -> b = 1 - 0.2
        let b = update_bias(&[0.2], &[1.0], 0.0);
        assert!((b - 0.8).abs() < 1e-15);
    }

    #[test]
    fn bias_unchanged_without_slack() {
        assert_eq!(update_bias(&[2.0, -3.0], &[1.0, -1.0], 0.25), 0.25);
    }

    #[test]
    fn bias_matches_direct_formula() {
        let raw = [0.3, -1.2, 0.9, 0.1, -0.4, 2.5];
        let y = [1.0, -1.0, -1.0, 1.0, 1.0, 1.0];
        let b_old = 0.15;
        let f: Vec<f64> = raw.iter().map(|r| r + b_old).collect();
        let xi = slacks(&f, &y);
        let active: Vec<usize> = (0..6).filter(|&i| xi[i] > 0.0).collect();
        let want = active.iter().map(|&i| y[i] - (f[i] - b_old)).sum::<f64>() / active.len() as f64;
        assert!((update_bias(&raw, &y, b_old) - want).abs() < 1e-15);
    }

    #[test]
    fn zero_decision_maps_to_positive() {
        assert_eq!(sign_labels(&[0.0, -1e-300, 3.0]), vec![1.0, -1.0, 1.0]);
    }
}
