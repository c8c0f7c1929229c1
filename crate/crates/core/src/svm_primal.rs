//! Primal coordinate-Newton solvers over representer coefficients
//! `f(x) = sum_i a_i K(x_i, x) + b`.
//!
//! * RTS minimizes `1/2 a'Ka + C xi'S xi`.
//! * S minimizes the error term `xi'S xi` alone.
//!
//! Here `xi_p = max(0, 1 - y_p f(x_p))`. Neither needs `S^-1`.
//!
//! Derivatives in `a_i` are taken with the active set `A = {p : xi_p > 0}`
//! held fixed:
//!
//! ```text
//! dP/da_i   = (Ka)_i - 2C sum_{p in A} (S xi)_p y_p K_pi
//! d2P/da_i2 = K_ii  + 2C u'S u,   u_p = y_p K_pi for p in A, 0 otherwise
//! ```

use serde::{Deserialize, Serialize};

use crate::budget::{Deadline, DEFAULT_BUDGET_SECS};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{axpy, build_gram, dot, GramMatrix};
use crate::predictor::{self, slacks};
use crate::svm_dual::{SolverParams, Termination};

/// Consecutive non-improving steps after which the solver stops.
pub const STALL_LIMIT: usize = 100;
/// Objective value treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;
/// Coordinates with second derivative at or below this are skipped.
pub const CURVATURE_FLOOR: f64 = 1e-12;
/// Relative decrease a step must achieve to count as a new best.
pub const IMPROVE_REL_TOL: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct PrimalProblem {
    pub k: GramMatrix,
    pub s: GramMatrix,
    pub y: Vec<f64>,
    /// Error-term weight; `None` selects the unregularized S objective.
    pub c: Option<f64>,
}

impl PrimalProblem {
    pub fn new(k: GramMatrix, s: GramMatrix, y: Vec<f64>, c: Option<f64>) -> Result<Self> {
        let l = y.len();
        if l == 0 {
            return Err(Error::input("empty training set"));
        }
        if k.size() != l || s.size() != l {
            return Err(Error::input("kernel, similarity and labels differ in size"));
        }
        if y.iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::input("labels must be -1 or +1"));
        }
        if let Some(c) = c {
            if !(c >= 0.0) {
                return Err(Error::input(format!("C must be nonnegative, got {c}")));
            }
        }
        Ok(PrimalProblem { k, s, y, c })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Weight on `xi'S xi` (1 for the S objective).
    fn error_weight(&self) -> f64 {
        self.c.unwrap_or(1.0)
    }

    fn regularized(&self) -> bool {
        self.c.is_some()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlackVector {
    pub xi: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrimalState {
    pub a: Vec<f64>,
    pub b: f64,
    pub best_objective: f64,
    pub stall_count: usize,
    ka: Vec<f64>,
    xi: Vec<f64>,
    s_xi: Vec<f64>,
}

impl PrimalState {
    pub fn zeros(p: &PrimalProblem) -> Self {
        Self::new(vec![0.0; p.len()], 0.0, p).expect("length matches")
    }

    pub fn new(a: Vec<f64>, b: f64, p: &PrimalProblem) -> Result<Self> {
        if a.len() != p.len() {
            return Err(Error::input("coefficient length does not match problem"));
        }
        let mut st = PrimalState {
            a,
            b,
            best_objective: f64::INFINITY,
            stall_count: 0,
            ka: Vec::new(),
            xi: Vec::new(),
            s_xi: Vec::new(),
        };
        st.refresh(p);
        st.best_objective = st.cached_objective(p);
        Ok(st)
    }

    fn refresh(&mut self, p: &PrimalProblem) {
        self.ka = p.k.mul_vec(&self.a);
        let f: Vec<f64> = self.ka.iter().map(|v| v + self.b).collect();
        self.xi = slacks(&f, &p.y);
        self.s_xi = p.s.mul_vec(&self.xi);
    }

    fn cached_objective(&self, p: &PrimalProblem) -> f64 {
        let err = dot(&self.xi, &self.s_xi);
        match p.c {
            Some(c) => 0.5 * dot(&self.a, &self.ka) + c * err,
            None => err,
        }
    }

    /// Decision values on the training patterns.
    pub fn train_decision(&self) -> Vec<f64> {
        self.ka.iter().map(|v| v + self.b).collect()
    }

    pub fn slacks(&self) -> SlackVector {
        SlackVector {
            xi: self.xi.clone(),
        }
    }
}

/// Exact objective by direct evaluation from `(a, b)`.
pub fn primal_objective(st: &PrimalState, p: &PrimalProblem) -> f64 {
    let ka = p.k.mul_vec(&st.a);
    let f: Vec<f64> = ka.iter().map(|v| v + st.b).collect();
    let xi = slacks(&f, &p.y);
    let err = p.s.quad_form(&xi);
    match p.c {
        Some(c) => 0.5 * dot(&st.a, &ka) + c * err,
        None => err,
    }
}

/// First and second derivative of the objective in `a_i` on the current
/// active set.
pub fn coordinate_derivatives(i: usize, st: &PrimalState, p: &PrimalProblem) -> (f64, f64) {
    let mut scratch = Scratch::new(p.len());
    derivatives_into(i, st, p, &mut scratch)
}

/// Newton update of `a_i`; `None` when the curvature is below the floor.
pub fn newton_step(i: usize, st: &PrimalState, p: &PrimalProblem) -> Option<f64> {
    let (d1, d2) = coordinate_derivatives(i, st, p);
    (d2 > CURVATURE_FLOOR).then(|| st.a[i] - d1 / d2)
}

/// Per-coordinate work vectors: `u = y * K_i` on the active set (zero
/// elsewhere) and `w = S u`.
struct Scratch {
    u: Vec<f64>,
    w: Vec<f64>,
    active: Vec<usize>,
}

impl Scratch {
    fn new(l: usize) -> Self {
        Scratch {
            u: vec![0.0; l],
            w: vec![0.0; l],
            active: Vec::with_capacity(l),
        }
    }
}

fn derivatives_into(i: usize, st: &PrimalState, p: &PrimalProblem, sc: &mut Scratch) -> (f64, f64) {
    let ki = p.k.col(i);
    let weight = p.error_weight();
    sc.active.clear();
    sc.w.fill(0.0);
    let mut grad_err = 0.0;
    for q in 0..p.len() {
        if st.xi[q] > 0.0 {
            sc.u[q] = p.y[q] * ki[q];
            sc.active.push(q);
            grad_err += st.s_xi[q] * sc.u[q];
        } else {
            sc.u[q] = 0.0;
        }
    }
    for &r in &sc.active {
        axpy(sc.u[r], p.s.col(r), &mut sc.w);
    }
    let curv_err: f64 = sc.active.iter().map(|&q| sc.u[q] * sc.w[q]).sum();
    let (reg_grad, reg_curv) = if p.regularized() {
        (st.ka[i], ki[i])
    } else {
        (0.0, 0.0)
    };
    (
        reg_grad - 2.0 * weight * grad_err,
        reg_curv + 2.0 * weight * curv_err,
    )
}

#[derive(Clone, Debug)]
pub struct PrimalConfig {
    pub stall_limit: usize,
    pub improve_tol: f64,
}

impl Default for PrimalConfig {
    fn default() -> Self {
        PrimalConfig {
            stall_limit: STALL_LIMIT,
            improve_tol: IMPROVE_REL_TOL,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PrimalOutcome {
    /// Best state seen.
    pub state: PrimalState,
    pub termination: Termination,
    pub steps: usize,
    pub sweeps: usize,
    /// Objective after every step, accepted or not.
    pub trace: Vec<f64>,
}

impl PrimalOutcome {
    pub fn objective(&self) -> f64 {
        self.state.best_objective
    }
}

/// Scratch buffers for a tentative step.
struct Trial {
    ka: Vec<f64>,
    xi: Vec<f64>,
    s_xi: Vec<f64>,
}

impl Trial {
    fn new(l: usize) -> Self {
        Trial {
            ka: vec![0.0; l],
            xi: vec![0.0; l],
            s_xi: vec![0.0; l],
        }
    }

    /// Fills the buffers for the state with `a_i += delta` and bias `b`, and
    /// returns the resulting objective.
    fn evaluate(
        &mut self,
        st: &PrimalState,
        p: &PrimalProblem,
        coord: Option<(usize, f64)>,
        b: f64,
    ) -> f64 {
        self.ka.copy_from_slice(&st.ka);
        if let Some((i, delta)) = coord {
            axpy(delta, p.k.col(i), &mut self.ka);
        }
        self.s_xi.copy_from_slice(&st.s_xi);
        for q in 0..p.len() {
            let nx = (1.0 - p.y[q] * (self.ka[q] + b)).max(0.0);
            self.xi[q] = nx;
            let diff = nx - st.xi[q];
            if diff != 0.0 {
                axpy(diff, p.s.col(q), &mut self.s_xi);
            }
        }
        let err = dot(&self.xi, &self.s_xi);
        match p.c {
            Some(c) => {
                let a_dot = match coord {
                    Some((i, delta)) => {
                        // (a + d e_i)'K(a + d e_i) = a'Ka + 2d (Ka)_i + d^2 K_ii
                        dot(&st.a, &st.ka) + 2.0 * delta * st.ka[i] + delta * delta * p.k.get(i, i)
                    }
                    None => dot(&st.a, &st.ka),
                };
                0.5 * a_dot + c * err
            }
            None => err,
        }
    }

    /// Objective after `a_i += delta`. On the unchanged active set the slack
    /// change is `-delta u`, so `S xi` moves by `-delta w`; patterns that
    /// cross the hinge are corrected individually.
    fn evaluate_coord(
        &mut self,
        st: &PrimalState,
        p: &PrimalProblem,
        i: usize,
        delta: f64,
        sc: &Scratch,
    ) -> f64 {
        self.ka.copy_from_slice(&st.ka);
        axpy(delta, p.k.col(i), &mut self.ka);
        self.s_xi.copy_from_slice(&st.s_xi);
        axpy(-delta, &sc.w, &mut self.s_xi);
        for q in 0..p.len() {
            let nx = (1.0 - p.y[q] * (self.ka[q] + st.b)).max(0.0);
            self.xi[q] = nx;
            if (nx > 0.0) != (st.xi[q] > 0.0) {
                let r = nx - st.xi[q] + delta * sc.u[q];
                axpy(r, p.s.col(q), &mut self.s_xi);
            }
        }
        let err = dot(&self.xi, &self.s_xi);
        match p.c {
            Some(c) => {
                let a_dot =
                    dot(&st.a, &st.ka) + 2.0 * delta * st.ka[i] + delta * delta * p.k.get(i, i);
                0.5 * a_dot + c * err
            }
            None => err,
        }
    }

    fn commit(&mut self, st: &mut PrimalState) {
        std::mem::swap(&mut self.ka, &mut st.ka);
        std::mem::swap(&mut self.xi, &mut st.xi);
        std::mem::swap(&mut self.s_xi, &mut st.s_xi);
    }
}

/// Runs cyclic coordinate-Newton sweeps with one bias refresh per sweep.
/// Steps that raise the objective are rejected; the run ends after
/// `stall_limit` consecutive steps without a new best, on divergence, or at
/// the deadline. The best state seen is returned.
pub fn solve_primal(p: &PrimalProblem, cfg: &PrimalConfig, deadline: &Deadline) -> PrimalOutcome {
    let l = p.len();
    let mut st = PrimalState::zeros(p);
    let mut current = st.best_objective;
    let mut best = st.clone();
    let mut trial = Trial::new(l);
    let mut scratch = Scratch::new(l);
    let mut trace = Vec::new();
    let mut steps = 0usize;
    let mut sweeps = 0usize;
    let mut stall = 0usize;

    let done = |mut best: PrimalState, stall, termination, steps, sweeps, trace| {
        best.stall_count = stall;
        best.refresh(p);
        PrimalOutcome {
            state: best,
            termination,
            steps,
            sweeps,
            trace,
        }
    };

    loop {
        // l coordinate steps then one bias step
        for slot in 0..=l {
            if deadline.expired() {
                return done(best, stall, Termination::Timeout, steps, sweeps, trace);
            }
            steps += 1;
            let proposal = if slot < l {
                let (d1, d2) = derivatives_into(slot, &st, p, &mut scratch);
                (d2 > CURVATURE_FLOOR).then(|| (Some((slot, -d1 / d2)), st.b))
            } else {
                Some((None, predictor::update_bias(&st.ka, &p.y, st.b)))
            };
            if let Some((coord, b)) = proposal {
                let obj = match coord {
                    Some((i, delta)) => trial.evaluate_coord(&st, p, i, delta, &scratch),
                    None => trial.evaluate(&st, p, None, b),
                };
                if !obj.is_finite() || obj > DIVERGENCE_LIMIT {
                    return done(best, stall, Termination::Diverged, steps, sweeps, trace);
                }
                if obj <= current {
                    trial.commit(&mut st);
                    if let Some((i, delta)) = coord {
                        st.a[i] += delta;
                    }
                    st.b = b;
                    current = obj;
                }
                trace.push(obj);
            } else {
                trace.push(current);
            }
            if best.best_objective - current > cfg.improve_tol * best.best_objective.abs() {
                best.a.clone_from(&st.a);
                best.b = st.b;
                best.best_objective = current;
                stall = 0;
            } else {
                stall += 1;
                if stall >= cfg.stall_limit {
                    return done(best, stall, Termination::Stalled, steps, sweeps, trace);
                }
            }
        }
        sweeps += 1;
        st.refresh(p);
        current = st.cached_objective(p);
    }
}

fn budget_deadline(seconds: f64) -> Deadline {
    Deadline::after(std::time::Duration::from_secs_f64(seconds.max(0.0)))
}

/// RTS on the dataset's RBF matrices.
pub fn rts_solve(train: &Dataset, params: &SolverParams) -> Result<PrimalOutcome> {
    params.validate()?;
    let k = build_gram(&train.features, params.gamma_k)?;
    let s = build_gram(&train.features, params.gamma_s)?;
    let p = PrimalProblem::new(k, s, train.targets.clone(), Some(params.c))?;
    Ok(solve_primal(
        &p,
        &PrimalConfig::default(),
        &budget_deadline(params.budget_seconds),
    ))
}

/// The unregularized S solver.
pub fn s_solve(
    train: &Dataset,
    gamma_k: f64,
    gamma_s: f64,
    budget_seconds: Option<f64>,
) -> Result<PrimalOutcome> {
    let k = build_gram(&train.features, gamma_k)?;
    let s = build_gram(&train.features, gamma_s)?;
    let p = PrimalProblem::new(k, s, train.targets.clone(), None)?;
    Ok(solve_primal(
        &p,
        &PrimalConfig::default(),
        &budget_deadline(budget_seconds.unwrap_or(DEFAULT_BUDGET_SECS)),
    ))
}
