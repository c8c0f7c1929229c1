//! SMOS: coordinate ascent on the dual of the generalized-quadratic-loss SVM
//!
//! ```text
//! D(a, l) = a'1 - 1/2 a'YKYa - 1/(4C) (a + l)' S^-1 (a + l)
//! s.t. a'y = 0, a >= 0, l >= 0
//! ```
//!
//! Each step moves a pair `(alpha_i, alpha_j)` along `(+nu y_i, -nu y_j)`,
//! which keeps `a'y` fixed, and one multiplier `lambda_k` by `mu_k`.
//!
//! The state caches `m = K (a o y)` and `w = S^-1 (a + l)`. With those,
//! the gradient of `D` is `1 - y_p m_p - w_p / 2C` in `alpha_p` and
//! `-w_p / 2C` in `lambda_p`, so every candidate step is scored in O(1) and
//! applied in O(l).

use serde::{Deserialize, Serialize};

use crate::budget::{Deadline, DEFAULT_BUDGET_SECS};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{axpy, build_gram, dot, factorize_inverse, FactorizedInverse, GramMatrix};
use crate::predictor::{self, sign_labels};

/// Accepted updates between full rebuilds of the margin caches.
pub const CACHE_REFRESH_INTERVAL: usize = 1000;
/// Default relative primal-dual gap at which SMOS stops.
pub const DEFAULT_GAP_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub c: f64,
    pub gamma_k: f64,
    pub gamma_s: f64,
    pub budget_seconds: f64,
    pub gap_tol: f64,
}

impl SolverParams {
    pub fn new(c: f64, gamma_k: f64, gamma_s: f64) -> Self {
        SolverParams {
            c,
            gamma_k,
            gamma_s,
            budget_seconds: DEFAULT_BUDGET_SECS,
            gap_tol: DEFAULT_GAP_TOL,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("C", self.c),
            ("gamma_K", self.gamma_k),
            ("gamma_S", self.gamma_s),
            ("budget", self.budget_seconds),
            ("gap tolerance", self.gap_tol),
        ] {
            if !(v > 0.0) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Matrices and labels of one dual problem.
#[derive(Clone, Debug)]
pub struct DualProblem {
    pub k: GramMatrix,
    pub s: GramMatrix,
    pub s_inv: FactorizedInverse,
    pub y: Vec<f64>,
    pub c: f64,
}

impl DualProblem {
    pub fn new(k: GramMatrix, s: GramMatrix, y: Vec<f64>, c: f64) -> Result<Self> {
        let l = y.len();
        if k.size() != l || s.size() != l {
            return Err(Error::input("kernel, similarity and labels differ in size"));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::input("labels must be -1 or +1"));
        }
        if !(c > 0.0) {
            return Err(Error::input(format!("C must be positive, got {c}")));
        }
        let s_inv = factorize_inverse(&s)?;
        Ok(DualProblem { k, s, s_inv, y, c })
    }

    pub fn from_dataset(train: &Dataset, params: &SolverParams) -> Result<Self> {
        params.validate()?;
        let k = build_gram(&train.features, params.gamma_k)?;
        let s = build_gram(&train.features, params.gamma_s)?;
        Self::new(k, s, train.targets.clone(), params.c)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Curvature `omega` of the dual along the pair direction `(i, j)`.
    pub fn pair_curvature(&self, i: usize, j: usize) -> f64 {
        let (yi, yj) = (self.y[i], self.y[j]);
        let kpart = self.k.get(i, i) - 2.0 * self.k.get(i, j) + self.k.get(j, j);
        let spart =
            self.s_inv.get(i, i) - 2.0 * yi * yj * self.s_inv.get(i, j) + self.s_inv.get(j, j);
        kpart + spart / (2.0 * self.c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub alpha: Vec<f64>,
    pub lambda: Vec<f64>,
    pub b: f64,
    /// `m_p = sum_q alpha_q y_q K(x_p, x_q)`.
    margins: Vec<f64>,
    /// `w = S^-1 (alpha + lambda)`.
    sinv_sum: Vec<f64>,
}

impl DualState {
    pub fn zeros(p: &DualProblem) -> Self {
        let l = p.len();
        DualState {
            alpha: vec![0.0; l],
            lambda: vec![0.0; l],
            b: 0.0,
            margins: vec![0.0; l],
            sinv_sum: vec![0.0; l],
        }
    }

    /// Arbitrary state with caches computed from scratch. Feasibility is
    /// not checked here.
    pub fn new(alpha: Vec<f64>, lambda: Vec<f64>, b: f64, p: &DualProblem) -> Result<Self> {
        if alpha.len() != p.len() || lambda.len() != p.len() {
            return Err(Error::input("state length does not match problem"));
        }
        let mut st = DualState {
            alpha,
            lambda,
            b,
            margins: Vec::new(),
            sinv_sum: Vec::new(),
        };
        st.refresh(p);
        Ok(st)
    }

    fn refresh(&mut self, p: &DualProblem) {
        let l = p.len();
        self.margins = vec![0.0; l];
        self.sinv_sum = vec![0.0; l];
        for q in 0..l {
            let ay = self.alpha[q] * p.y[q];
            if ay != 0.0 {
                axpy(ay, p.k.col(q), &mut self.margins);
            }
            let al = self.alpha[q] + self.lambda[q];
            if al != 0.0 {
                axpy(al, p.s_inv.col(q), &mut self.sinv_sum);
            }
        }
    }

    /// Kernel part of the decision value on the training patterns.
    pub fn margins(&self) -> &[f64] {
        &self.margins
    }

    /// `sum_i alpha_i y_i`.
    pub fn alpha_dot_y(&self, y: &[f64]) -> f64 {
        dot(&self.alpha, y)
    }

    /// Dual objective from the caches; O(l).
    pub fn cached_objective(&self, p: &DualProblem) -> f64 {
        let lin: f64 = self.alpha.iter().sum();
        let quad: f64 = (0..p.len())
            .map(|q| self.alpha[q] * p.y[q] * self.margins[q])
            .sum();
        let coupled: f64 = (0..p.len())
            .map(|q| (self.alpha[q] + self.lambda[q]) * self.sinv_sum[q])
            .sum();
        lin - 0.5 * quad - coupled / (4.0 * p.c)
    }

    /// Decision values on the training patterns.
    pub fn train_decision(&self) -> Vec<f64> {
        self.margins.iter().map(|m| m + self.b).collect()
    }

    /// Representer coefficients `alpha_i y_i`.
    pub fn coefficients(&self, y: &[f64]) -> Vec<f64> {
        self.alpha.iter().zip(y).map(|(a, yi)| a * yi).collect()
    }

    fn apply(&mut self, p: &DualProblem, step: &Step) {
        if let Some((i, j, nu)) = step.pair {
            let (yi, yj) = (p.y[i], p.y[j]);
            self.alpha[i] = (self.alpha[i] + nu * yi).max(0.0);
            self.alpha[j] = (self.alpha[j] - nu * yj).max(0.0);
            // y_i * (nu y_i) = nu and -y_j * (nu y_j) = -nu
            axpy(nu, p.k.col(i), &mut self.margins);
            axpy(-nu, p.k.col(j), &mut self.margins);
            axpy(nu * yi, p.s_inv.col(i), &mut self.sinv_sum);
            axpy(-nu * yj, p.s_inv.col(j), &mut self.sinv_sum);
        }
        if let Some((k, new_lambda)) = step.lambda {
            let delta = new_lambda - self.lambda[k];
            self.lambda[k] = new_lambda;
            axpy(delta, p.s_inv.col(k), &mut self.sinv_sum);
        }
    }
}

/// Exact dual objective by dense evaluation of every term.
pub fn dual_objective(st: &DualState, p: &DualProblem) -> f64 {
    let l = p.len();
    let ay: Vec<f64> = st.coefficients(&p.y);
    let sum: Vec<f64> = (0..l).map(|q| st.alpha[q] + st.lambda[q]).collect();
    let lin: f64 = st.alpha.iter().sum();
    let kq = p.k.quad_form(&ay);
    let mut sq = 0.0;
    for q in 0..l {
        if sum[q] != 0.0 {
            sq += sum[q] * dot(p.s_inv.col(q), &sum);
        }
    }
    lin - 0.5 * kq - sq / (4.0 * p.c)
}

/// Derivative of the dual along the pair direction at `nu = 0`, with the
/// multipliers shifted by `mu`.
fn pair_slope(i: usize, j: usize, st: &DualState, p: &DualProblem, sinv_mu: (f64, f64)) -> f64 {
    let (yi, yj) = (p.y[i], p.y[j]);
    let wi = st.sinv_sum[i] + sinv_mu.0;
    let wj = st.sinv_sum[j] + sinv_mu.1;
    yi - yj - st.margins[i] + st.margins[j] - (yi * wi - yj * wj) / (2.0 * p.c)
}

/// Unconstrained maximizer `nu = psi / omega` of the dual along the pair
/// direction, holding `lambda + mu` fixed. `mu` has one entry per pattern
/// (usually all zero but one). Returns `None` for a degenerate pair
/// (`i == j` or `omega <= 0`).
pub fn compute_nu(i: usize, j: usize, st: &DualState, p: &DualProblem, mu: &[f64]) -> Option<f64> {
    if i == j {
        return None;
    }
    let omega = p.pair_curvature(i, j);
    if !(omega > 0.0) {
        return None;
    }
    let mut sinv_mu = (0.0, 0.0);
    for (k, &m) in mu.iter().enumerate() {
        if m != 0.0 {
            sinv_mu.0 += p.s_inv.get(i, k) * m;
            sinv_mu.1 += p.s_inv.get(j, k) * m;
        }
    }
    Some(pair_slope(i, j, st, p, sinv_mu) / omega)
}

/// Stationary `mu_k` of the dual in `lambda_k` after the pair step `nu`:
/// `mu_k = -(w_k + nu (y_i S^-1_ki - y_j S^-1_kj)) / S^-1_kk`.
pub fn compute_mu(k: usize, nu: f64, i: usize, j: usize, st: &DualState, p: &DualProblem) -> f64 {
    let shifted = shifted_sinv_sum(k, nu, i, j, st, p);
    -shifted / p.s_inv.get(k, k)
}

/// `w_k` after the pair step.
fn shifted_sinv_sum(k: usize, nu: f64, i: usize, j: usize, st: &DualState, p: &DualProblem) -> f64 {
    st.sinv_sum[k] + nu * (p.y[i] * p.s_inv.get(k, i) - p.y[j] * p.s_inv.get(k, j))
}

/// Clips `nu` so that `alpha_i + y_i nu >= 0` and then `alpha_j - y_j nu >= 0`.
pub fn clip_nu(st: &DualState, y: &[f64], i: usize, j: usize, nu: f64) -> f64 {
    let mut nu = nu;
    if st.alpha[i] + y[i] * nu < 0.0 {
        nu = -y[i] * st.alpha[i];
    }
    if st.alpha[j] - y[j] * nu < 0.0 {
        nu = y[j] * st.alpha[j];
    }
    nu
}

/// New value of `lambda_k` after adding `mu_k`; zero when it would go negative.
pub fn clip_lambda(st: &DualState, k: usize, mu: f64) -> f64 {
    if st.lambda[k] + mu < 0.0 {
        0.0
    } else {
        st.lambda[k] + mu
    }
}

/// Both clipping rules: returns the clipped `nu` and the new `lambda_k`.
pub fn clip_updates(
    st: &DualState,
    y: &[f64],
    i: usize,
    j: usize,
    k: usize,
    nu: f64,
    mu: f64,
) -> (f64, f64) {
    (clip_nu(st, y, i, j, nu), clip_lambda(st, k, mu))
}

/// Best clipped pair step from `i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairStep {
    pub j: usize,
    pub nu: f64,
    /// Dual increase of the clipped step.
    pub gain: f64,
}

/// Clipped optimal step along `(i, j)` with its dual increase, ignoring
/// `lambda` moves.
pub fn pair_step(i: usize, j: usize, st: &DualState, p: &DualProblem) -> Option<PairStep> {
    if i == j {
        return None;
    }
    let omega = p.pair_curvature(i, j);
    if !(omega > 0.0) {
        return None;
    }
    let slope = pair_slope(i, j, st, p, (0.0, 0.0));
    let nu = clip_nu(st, &p.y, i, j, slope / omega);
    Some(PairStep {
        j,
        nu,
        gain: nu * slope - 0.5 * nu * nu * omega,
    })
}

/// Every `j` whose clipped step gains at least `delta * best_gain`, where
/// `best_gain` is the largest gain over all `j` (the threshold
/// `beta = delta (best - previous) + previous` in objective terms).
pub fn select_patterns_delta(
    i: usize,
    st: &DualState,
    p: &DualProblem,
    delta: f64,
) -> Vec<PairStep> {
    let steps: Vec<PairStep> = (0..p.len())
        .filter_map(|j| pair_step(i, j, st, p))
        .collect();
    let best = steps
        .iter()
        .map(|s| s.gain)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(best > 0.0) {
        return Vec::new();
    }
    let beta = delta * best;
    steps
        .into_iter()
        .filter(|s| s.gain >= beta && s.gain > 0.0)
        .collect()
}

/// With `delta = 1`: the partner `j` of maximal dual gain, lowest index on
/// ties. `None` means no partner improves the dual.
pub fn select_patterns(i: usize, st: &DualState, p: &DualProblem) -> Option<PairStep> {
    let mut best: Option<PairStep> = None;
    for j in 0..p.len() {
        if let Some(s) = pair_step(i, j, st, p) {
            if s.gain > best.map_or(0.0, |b| b.gain) {
                best = Some(s);
            }
        }
    }
    best
}

/// Bias refresh on the current margins.
pub fn update_bias(st: &DualState, p: &DualProblem) -> f64 {
    predictor::update_bias(&st.margins, &p.y, st.b)
}

/// Decision values `f = K_eval' (alpha o y) + b`, where `k_eval[(p, q)]`
/// is `K(x_train_p, x_new_q)`.
pub fn decision(
    st: &DualState,
    k_eval: &nalgebra::DMatrix<f64>,
    y_train: &[f64],
) -> Result<Vec<f64>> {
    if k_eval.nrows() != st.alpha.len() || y_train.len() != st.alpha.len() {
        return Err(Error::input(
            "evaluation kernel does not match the training set",
        ));
    }
    let coef = st.coefficients(y_train);
    Ok((0..k_eval.ncols())
        .map(|q| dot(k_eval.column(q).as_slice(), &coef) + st.b)
        .collect())
}

pub fn predict(
    st: &DualState,
    k_eval: &nalgebra::DMatrix<f64>,
    y_train: &[f64],
) -> Result<Vec<f64>> {
    Ok(sign_labels(&decision(st, k_eval, y_train)?))
}

/// Primal objective `1/2 a'Ka + C xi'S xi` of the function the dual
/// state represents (`a = alpha o y`, current `b`).
pub fn reconstructed_primal(st: &DualState, p: &DualProblem) -> f64 {
    let reg: f64 = (0..p.len())
        .map(|q| st.alpha[q] * p.y[q] * st.margins[q])
        .sum();
    let xi = predictor::slacks(&st.train_decision(), &p.y);
    0.5 * reg + p.c * p.s.quad_form(&xi)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    /// A full sweep accepted no update.
    NoProgress,
    /// The primal solver went 100 steps without a new best objective.
    Stalled,
    Timeout,
    Diverged,
}

#[derive(Clone, Debug)]
pub struct SmosOutcome {
    pub state: DualState,
    pub termination: Termination,
    pub sweeps: usize,
    pub updates: usize,
    pub primal: f64,
    pub dual: f64,
}

impl SmosOutcome {
    pub fn relative_gap(&self) -> f64 {
        relative_gap(self.primal, self.dual)
    }
}

fn relative_gap(primal: f64, dual: f64) -> f64 {
    let scale = primal.abs().max(dual.abs());
    if scale == 0.0 {
        0.0
    } else {
        (primal - dual) / scale
    }
}

/// One accepted update, reported to observers.
pub struct SmosEvent<'a> {
    pub state: &'a DualState,
    pub i: usize,
    pub j: Option<usize>,
    pub k: Option<usize>,
    /// Predicted dual increase of the update.
    pub gain: f64,
}

#[derive(Clone, Copy, Debug)]
struct Step {
    pair: Option<(usize, usize, f64)>,
    lambda: Option<(usize, f64)>,
    gain: f64,
}

/// Best single-`lambda_k` move after the pair step (or none).
fn best_lambda_move(
    st: &DualState,
    p: &DualProblem,
    pair: Option<(usize, usize, f64)>,
) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64, f64)> = None;
    let two_c = 2.0 * p.c;
    for k in 0..p.len() {
        let wk = match pair {
            Some((i, j, nu)) => shifted_sinv_sum(k, nu, i, j, st, p),
            None => st.sinv_sum[k],
        };
        let skk = p.s_inv.get(k, k);
        let mu_star = -wk / skk;
        let new_lambda = clip_lambda(st, k, mu_star);
        let mu = new_lambda - st.lambda[k];
        let gain = -mu * wk / two_c - mu * mu * skk / (2.0 * two_c);
        if gain > best.map_or(0.0, |b| b.2) {
            best = Some((k, new_lambda, gain));
        }
    }
    best
}

/// Runs SMOS on prepared matrices. `observe` sees the state after every
/// accepted update.
pub fn smos_solve_problem(
    p: &DualProblem,
    gap_tol: f64,
    deadline: &Deadline,
    mut observe: impl FnMut(&SmosEvent),
) -> SmosOutcome {
    let l = p.len();
    let mut st = DualState::zeros(p);
    st.b = update_bias(&st, p);
    let mut updates = 0usize;
    let mut since_refresh = 0usize;
    let mut sweeps = 0usize;

    let finish = |mut st: DualState, termination, sweeps, updates| {
        settle_bias(&mut st, p);
        let primal = reconstructed_primal(&st, p);
        let dual = dual_objective(&st, p);
        SmosOutcome {
            state: st,
            termination,
            sweeps,
            updates,
            primal,
            dual,
        }
    };

    if l < 2 {
        // a'y = 0 with a >= 0 pins the only alpha to zero
        return finish(st, Termination::Converged, 0, 0);
    }

    loop {
        let mut accepted = 0usize;
        for i in 0..l {
            if deadline.expired() {
                return finish(st, Termination::Timeout, sweeps, updates);
            }
            let pair = select_patterns(i, &st, p).map(|s| (i, s.j, s.nu, s.gain));
            let pair_move = pair.map(|(i, j, nu, _)| (i, j, nu));
            let lam = best_lambda_move(&st, p, pair_move);
            let gain = pair.map_or(0.0, |s| s.3) + lam.map_or(0.0, |m| m.2);
            let floor = 1e-14 * (1.0 + st.cached_objective(p).abs());
            if !(gain > floor) {
                continue;
            }
            let step = Step {
                pair: pair_move,
                lambda: lam.map(|(k, v, _)| (k, v)),
                gain,
            };
            st.apply(p, &step);
            st.b = update_bias(&st, p);
            updates += 1;
            accepted += 1;
            since_refresh += 1;
            if since_refresh >= CACHE_REFRESH_INTERVAL {
                st.refresh(p);
                since_refresh = 0;
            }
            observe(&SmosEvent {
                state: &st,
                i,
                j: step.pair.map(|s| s.1),
                k: step.lambda.map(|s| s.0),
                gain: step.gain,
            });
        }
        sweeps += 1;
        if accepted == 0 {
            return finish(st, Termination::NoProgress, sweeps, updates);
        }
        let primal = reconstructed_primal(&st, p);
        let dual = st.cached_objective(p);
        if relative_gap(primal, dual) <= gap_tol {
            return finish(st, Termination::Converged, sweeps, updates);
        }
    }
}

/// Iterates the bias rule to a fixed point (bounded), keeping the value
/// with the lowest primal objective.
fn settle_bias(st: &mut DualState, p: &DualProblem) {
    let mut best = (reconstructed_primal(st, p), st.b);
    for _ in 0..50 {
        let nb = update_bias(st, p);
        if nb == st.b {
            break;
        }
        st.b = nb;
        let obj = reconstructed_primal(st, p);
        if obj < best.0 {
            best = (obj, nb);
        }
    }
    st.b = best.1;
}

/// Builds the matrices for `train` and runs SMOS under the parameter budget.
pub fn smos_solve(train: &Dataset, params: &SolverParams) -> Result<SmosOutcome> {
    let p = DualProblem::from_dataset(train, params)?;
    let deadline = Deadline::after(std::time::Duration::from_secs_f64(params.budget_seconds));
    Ok(smos_solve_problem(&p, params.gap_tol, &deadline, |_| {}))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{FeatureMatrix, KernelSpec};
    use approx::assert_abs_diff_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_problem(l: usize, seed: u64) -> DualProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = FeatureMatrix::new(
            l,
            2,
            (0..2 * l).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap();
        let y: Vec<f64> = (0..l)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        let k = build_gram(&x, 0.8).unwrap();
        let s = build_gram(&x, 1.5).unwrap();
        DualProblem::new(k, s, y, 0.7).unwrap()
    }

    fn random_state(p: &DualProblem, seed: u64) -> DualState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let alpha = (0..p.len()).map(|_| rng.random_range(0.0..1.0)).collect();
        let lambda = (0..p.len()).map(|_| rng.random_range(0.0..0.5)).collect();
        DualState::new(alpha, lambda, 0.1, p).unwrap()
    }

    #[test]
    fn objective_of_zero_state() {
        let p = random_problem(5, 1);
        assert_eq!(dual_objective(&DualState::zeros(&p), &p), 0.0);
    }

    #[test]
    fn single_pattern_objective_is_lambda_penalty() {
        let x = FeatureMatrix::from_rows(&[vec![0.0]]).unwrap();
        let k = build_gram(&x, 1.0).unwrap();
        let p = DualProblem::new(k.clone(), k, vec![1.0], 2.0).unwrap();
        let st = DualState::new(vec![0.0], vec![0.3], 0.0, &p).unwrap();
        assert_abs_diff_eq!(dual_objective(&st, &p), -0.09 / 8.0, epsilon = 1e-15);
        let out = smos_solve_problem(&p, 1e-3, &Deadline::unlimited(), |_| {});
        assert_eq!(out.state.alpha, vec![0.0]);
        assert_eq!(out.state.lambda, vec![0.0]);
    }

    #[test]
    fn objective_matches_dense_terms() {
        let p = random_problem(6, 2);
        let st = random_state(&p, 3);
        let y = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&p.y));
        let a = nalgebra::DVector::from_column_slice(&st.alpha);
        let al = &a + nalgebra::DVector::from_column_slice(&st.lambda);
        let sinv = p.s.matrix().clone().try_inverse().unwrap();
        let want = a.sum()
            - 0.5 * (a.transpose() * &y * p.k.matrix() * &y * &a)[(0, 0)]
            - (al.transpose() * sinv * &al)[(0, 0)] / (4.0 * p.c);
        assert_abs_diff_eq!(dual_objective(&st, &p), want, epsilon = 1e-9);
        assert_abs_diff_eq!(st.cached_objective(&p), want, epsilon = 1e-9);
    }

    #[test]
    fn nu_at_origin_is_two_over_omega() {
        let p = random_problem(4, 5);
        let st = DualState::zeros(&p);
        // y_0 = +1, y_1 = -1
        let nu = compute_nu(0, 1, &st, &p, &[0.0; 4]).unwrap();
        assert_abs_diff_eq!(nu, 2.0 / p.pair_curvature(0, 1), epsilon = 1e-14);
    }

    #[test]
    fn duplicate_pair_has_only_similarity_curvature() {
        let k = GramMatrix::from_matrix(
            DMatrix::from_element(2, 2, 1.0),
            KernelSpec::Rbf { gamma: 1.0 },
        )
        .unwrap();
        let s = GramMatrix::identity(2);
        let p = DualProblem::new(k, s, vec![1.0, -1.0], 1.0).unwrap();
        // kernel part vanishes; S^-1 = I -> (1 + 1) / 2C
        assert_abs_diff_eq!(p.pair_curvature(0, 1), 1.0, epsilon = 1e-15);
        assert!(compute_nu(0, 0, &DualState::zeros(&p), &p, &[0.0; 2]).is_none());
    }

    #[test]
    fn nu_is_stationary() {
        let p = random_problem(7, 8);
        let st = random_state(&p, 9);
        let mut mu = vec![0.0; 7];
        mu[3] = 0.2;
        let nu = compute_nu(1, 4, &st, &p, &mu).unwrap();
        let eval = |t: f64| {
            let mut a = st.alpha.clone();
            a[1] += t * p.y[1];
            a[4] -= t * p.y[4];
            let lam: Vec<f64> = st.lambda.iter().zip(&mu).map(|(l, m)| l + m).collect();
            dual_objective(&DualState::new(a, lam, 0.0, &p).unwrap(), &p)
        };
        let h = 1e-5;
        let slope = (eval(nu + h) - eval(nu - h)) / (2.0 * h);
        assert!(slope.abs() < 1e-6, "slope {slope}");
    }

    #[test]
    fn mu_cases() {
        let p = random_problem(6, 10);
        let st = DualState::zeros(&p);
        assert_eq!(compute_mu(2, 0.0, 0, 1, &st, &p), 0.0);

        let x = FeatureMatrix::from_rows(&[vec![0.0], vec![10.0], vec![20.0], vec![30.0]]).unwrap();
        let k = build_gram(&x, 1.0).unwrap();
        let s = GramMatrix::identity(4);
        let p = DualProblem::new(k, s, vec![1.0, -1.0, 1.0, -1.0], 1.0).unwrap();
        let st = DualState::zeros(&p);
        let nu = 0.4;
        assert_eq!(compute_mu(2, nu, 0, 1, &st, &p), 0.0);
        assert_abs_diff_eq!(
            compute_mu(0, nu, 0, 1, &st, &p),
            -nu * p.y[0],
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            compute_mu(1, nu, 0, 1, &st, &p),
            nu * p.y[1],
            epsilon = 1e-15
        );
    }

    #[test]
    fn clipping_rules() {
        let p = random_problem(4, 11);
        let st =
            DualState::new(vec![0.0, 0.5, 0.0, 0.0], vec![0.2, 0.0, 0.0, 0.0], 0.0, &p).unwrap();
        // y_0 = +1, alpha_0 = 0, nu = -0.3 -> 0
        assert_eq!(clip_nu(&st, &p.y, 0, 2, -0.3), 0.0);
        assert_eq!(clip_lambda(&st, 0, -0.5), 0.0);
        // slack constraints pass through: alpha_1 = 0.5, y_1 = -1
        let (nu, lam) = clip_updates(&st, &p.y, 1, 0, 0, -0.1, 0.05);
        assert_eq!(nu, -0.1);
        assert_abs_diff_eq!(lam, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn selection_matches_exhaustive_scan() {
        let p = random_problem(8, 12);
        let st = random_state(&p, 13);
        for i in 0..8 {
            let mut best: Option<(usize, f64)> = None;
            for j in 0..8 {
                if j == i {
                    continue;
                }
                let omega = p.pair_curvature(i, j);
                let nu = clip_nu(
                    &st,
                    &p.y,
                    i,
                    j,
                    compute_nu(i, j, &st, &p, &[0.0; 8]).unwrap(),
                );
                let mut a = st.alpha.clone();
                a[i] += nu * p.y[i];
                a[j] -= nu * p.y[j];
                let after =
                    dual_objective(&DualState::new(a, st.lambda.clone(), 0.0, &p).unwrap(), &p);
                let inc = after - dual_objective(&st, &p);
                assert!(omega > 0.0);
                if inc > best.map_or(1e-12, |b| b.1 + 1e-12) {
                    best = Some((j, inc));
                }
            }
            let got = select_patterns(i, &st, &p).map(|s| s.j);
            assert_eq!(got, best.map(|b| b.0), "i = {i}");
            let all = select_patterns_delta(i, &st, &p, 1.0);
            assert!(all.len() <= 1 || all.iter().all(|s| s.gain == all[0].gain));
        }
    }

    #[test]
    fn bias_uses_positive_slack_patterns() {
        let p = random_problem(6, 14);
        let st = random_state(&p, 15);
        let f = st.train_decision();
        let xi = predictor::slacks(&f, &p.y);
        let act: Vec<usize> = (0..6).filter(|&i| xi[i] > 0.0).collect();
        let want = if act.is_empty() {
            st.b
        } else {
            act.iter().map(|&i| p.y[i] - (f[i] - st.b)).sum::<f64>() / act.len() as f64
        };
        assert_abs_diff_eq!(update_bias(&st, &p), want, epsilon = 1e-14);
    }

    #[test]
    fn predict_sign_cases() {
        let p = random_problem(3, 16);
        let mut st = DualState::zeros(&p);
        let k_eval = DMatrix::from_element(3, 4, 0.5);
        st.b = 0.5;
        assert_eq!(predict(&st, &k_eval, &p.y).unwrap(), vec![1.0; 4]);
        st.b = -0.5;
        assert_eq!(predict(&st, &k_eval, &p.y).unwrap(), vec![-1.0; 4]);

        let st = random_state(&p, 17);
        let f = decision(&st, p.k.matrix(), &p.y).unwrap();
        for (q, fq) in f.iter().enumerate() {
            let direct: f64 = (0..3)
                .map(|j| st.alpha[j] * p.y[j] * p.k.get(j, q))
                .sum::<f64>()
                + st.b;
            assert_abs_diff_eq!(*fq, direct, epsilon = 1e-14);
        }
    }

    #[test]
    fn solver_is_monotone_and_feasible() {
        let p = random_problem(12, 18);
        let mut prev = 0.0;
        let out = smos_solve_problem(&p, 1e-6, &Deadline::unlimited(), |ev| {
            let d = dual_objective(ev.state, &p);
            assert!(d - prev >= -1e-10);
            assert!(ev.state.alpha.iter().all(|&a| a >= 0.0));
            assert!(ev.state.lambda.iter().all(|&a| a >= 0.0));
            assert!(ev.state.alpha_dot_y(&p.y).abs() < 1e-9);
            prev = d;
        });
        assert!(out.updates > 0);
        assert!(out.primal >= out.dual - 1e-9);
    }

    #[test]
    fn vanishing_c_keeps_alpha_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rows: Vec<Vec<f64>> = (0..10)
            .map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
            .collect();
        let y = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, -1.0, 1.0];
        let d = Dataset::new(
            "t",
            FeatureMatrix::from_rows(&rows).unwrap(),
            y,
            crate::data::Task::Classification,
        )
        .unwrap();
        let mut params = SolverParams::new(1e-5, 1.0, 1.0);
        params.budget_seconds = 10.0;
        let out = smos_solve(&d, &params).unwrap();
        assert!(out.state.alpha.iter().all(|&a| a < 1e-3));
        let f = out.state.train_decision();
        let labels = sign_labels(&f);
        assert!(labels.iter().all(|&l| l == sign_labels(&[out.state.b])[0]));
    }
}
