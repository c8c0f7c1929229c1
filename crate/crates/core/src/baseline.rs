//! Linear-loss (hinge) kernel SVM trained by SMO with second-order working
//! set selection. Serves as the standard-loss reference and as the solver
//! behind the linear-loss MKL variant.
//!
//! Solves `min 1/2 a'Qa - 1'a` s.t. `y'a = 0`, `0 <= a <= C`, `Q = YKY`.

use crate::budget::Deadline;
use crate::error::{Error, Result};
use crate::kernel::GramMatrix;
use crate::svm_dual::Termination;

/// KKT violation tolerance.
pub const DEFAULT_EPS: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct HingeOutcome {
    pub alpha: Vec<f64>,
    pub b: f64,
    pub objective: f64,
    pub iterations: usize,
    pub termination: Termination,
}

impl HingeOutcome {
    /// Expansion coefficients `alpha_i y_i`.
    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        self.alpha.iter().zip(y).map(|(a, y)| a * y).collect()
    }
}

/// `(i, j)` or `None` when the KKT conditions hold within `eps`.
fn select_working_set(
    k: &GramMatrix,
    y: &[f64],
    alpha: &[f64],
    grad: &[f64],
    c: f64,
    eps: f64,
) -> Option<(usize, usize)> {
    let l = y.len();
    let in_up = |t: usize| (y[t] > 0.0 && alpha[t] < c) || (y[t] < 0.0 && alpha[t] > 0.0);
    let in_low = |t: usize| (y[t] > 0.0 && alpha[t] > 0.0) || (y[t] < 0.0 && alpha[t] < c);

    let mut gmax = f64::NEG_INFINITY;
    let mut i = None;
    for t in 0..l {
        if in_up(t) && -y[t] * grad[t] > gmax {
            gmax = -y[t] * grad[t];
            i = Some(t);
        }
    }
    let i = i?;
    let ki = k.col(i);
    let mut gmax2 = f64::NEG_INFINITY;
    let mut best = None;
    let mut best_obj = f64::INFINITY;
    for t in 0..l {
        if !in_low(t) {
            continue;
        }
        gmax2 = gmax2.max(y[t] * grad[t]);
        let b = gmax + y[t] * grad[t];
        if b > 0.0 {
            let mut a = ki[i] + k.get(t, t) - 2.0 * ki[t];
            if a <= 0.0 {
                a = TAU;
            }
            let obj = -b * b / a;
            if obj < best_obj {
                best_obj = obj;
                best = Some(t);
            }
        }
    }
    if gmax + gmax2 < eps {
        return None;
    }
    best.map(|j| (i, j))
}

fn bias(y: &[f64], alpha: &[f64], grad: &[f64], c: f64) -> f64 {
    let mut ub = f64::INFINITY;
    let mut lb = f64::NEG_INFINITY;
    let mut sum = 0.0;
    let mut free = 0usize;
    for t in 0..y.len() {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            sum += yg;
        }
    }
    let rho = if free > 0 {
        sum / free as f64
    } else if ub.is_finite() && lb.is_finite() {
        (ub + lb) / 2.0
    } else if ub.is_finite() {
        ub
    } else if lb.is_finite() {
        lb
    } else {
        0.0
    };
    -rho
}

pub fn hinge_solve(
    k: &GramMatrix,
    y: &[f64],
    c: f64,
    eps: f64,
    deadline: &Deadline,
) -> Result<HingeOutcome> {
    let l = y.len();
    if l == 0 || k.size() != l {
        return Err(Error::input(
            "kernel and labels differ in size or are empty",
        ));
    }
    if !(c > 0.0) || !c.is_finite() {
        return Err(Error::input(format!("C must be positive, got {c}")));
    }
    let mut alpha = vec![0.0; l];
    let mut grad = vec![-1.0; l];
    let max_iter = (100 * l).max(10_000_000);
    let mut iterations = 0usize;
    let termination = loop {
        if deadline.expired() {
            break Termination::Timeout;
        }
        if iterations >= max_iter {
            break Termination::Stalled;
        }
        let Some((i, j)) = select_working_set(k, y, &alpha, &grad, c, eps) else {
            break Termination::Converged;
        };
        iterations += 1;
        let (ki, kj) = (k.col(i), k.col(j));
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * ki[j];
        if y[i] != y[j] {
            let quad = (ki[i] + kj[j] + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (ki[i] + kj[j] - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..l {
            grad[t] += y[t] * (y[i] * ki[t] * di + y[j] * kj[t] * dj);
        }
    };
    let b = bias(y, &alpha, &grad, c);
    // grad = Qa - 1, so 1/2 a'Qa - 1'a = 1/2 a'(grad - 1)
    let objective = 0.5
        * alpha
            .iter()
            .zip(&grad)
            .map(|(a, g)| a * (g - 1.0))
            .sum::<f64>();
    Ok(HingeOutcome {
        alpha,
        b,
        objective,
        iterations,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{build_gram, FeatureMatrix};
    use crate::predictor::sign_labels;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decision(k: &GramMatrix, out: &HingeOutcome, y: &[f64]) -> Vec<f64> {
        let coef = out.coefficients(y);
        k.mul_vec(&coef).iter().map(|v| v + out.b).collect()
    }

    #[test]
    fn two_points_closed_form() {
        // K = I: a_1 = a_2 = 1 when C >= 1, f = a1 y1 K(.,x1) + a2 y2 K(.,x2)
        let k = GramMatrix::identity(2);
        let y = [1.0, -1.0];
        let out = hinge_solve(&k, &y, 10.0, 1e-9, &Deadline::unlimited()).unwrap();
        assert!((out.alpha[0] - 1.0).abs() < 1e-9);
        assert!((out.alpha[1] - 1.0).abs() < 1e-9);
        assert!(out.b.abs() < 1e-9);
        assert!((out.objective + 1.0).abs() < 1e-9);
    }

    #[test]
    fn box_is_respected_and_kkt_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let l = 40;
        let x = FeatureMatrix::new(
            l,
            2,
            (0..2 * l).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let y: Vec<f64> = (0..l)
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        let k = build_gram(&x, 0.5).unwrap();
        let c = 0.7;
        let out = hinge_solve(&k, &y, c, 1e-6, &Deadline::unlimited()).unwrap();
        assert_eq!(out.termination, Termination::Converged);
        let ay: f64 = out.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        assert!(ay.abs() < 1e-9);
        let f = decision(&k, &out, &y);
        for t in 0..l {
            assert!((0.0..=c).contains(&out.alpha[t]));
            let m = y[t] * f[t];
            if out.alpha[t] <= 0.0 {
                assert!(m >= 1.0 - 1e-4, "{t}: {m}");
            } else if out.alpha[t] >= c {
                assert!(m <= 1.0 + 1e-4, "{t}: {m}");
            } else {
                assert!((m - 1.0).abs() < 1e-4, "{t}: {m}");
            }
        }
    }

    #[test]
    fn separable_clusters_are_fit() {
        let x = FeatureMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.3, 0.1],
            vec![3.0, 3.0],
            vec![3.2, 2.9],
        ])
        .unwrap();
        let y = [1.0, 1.0, -1.0, -1.0];
        let k = build_gram(&x, 0.5).unwrap();
        let out = hinge_solve(&k, &y, 10.0, DEFAULT_EPS, &Deadline::unlimited()).unwrap();
        assert_eq!(sign_labels(&decision(&k, &out, &y)), y.to_vec());
    }

    #[test]
    fn rejects_bad_c() {
        let k = GramMatrix::identity(2);
        assert!(hinge_solve(&k, &[1.0, -1.0], 0.0, 1e-3, &Deadline::unlimited()).is_err());
    }
}
