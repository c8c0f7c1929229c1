//! Algorithm catalogue, hyperparameters, the `fit` dispatcher for the kernel
//! algorithms, and the serialized form of a trained kernel model.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baseline::{self, hinge_solve};
use crate::budget::Deadline;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::kernel::{build_gram, build_mkl, FeatureMatrix, KernelSpec};
use crate::predictor::{expansion_decision, sign_labels};
use crate::svm_dual::{smos_solve, SolverParams, Termination, DEFAULT_GAP_TOL};
use crate::svm_primal::{solve_primal, PrimalConfig, PrimalProblem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Smos,
    Rts,
    S,
    /// Linear (hinge) loss with an MKL kernel.
    RtMkl,
    RtsMkl,
    /// Linear (hinge) loss with a single RBF kernel.
    Linear,
    Nn,
    GqlNn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Smos,
        Algorithm::Rts,
        Algorithm::S,
        Algorithm::RtMkl,
        Algorithm::RtsMkl,
        Algorithm::Linear,
        Algorithm::Nn,
        Algorithm::GqlNn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Smos => "smos",
            Algorithm::Rts => "rts",
            Algorithm::S => "s",
            Algorithm::RtMkl => "rt-mkl",
            Algorithm::RtsMkl => "rts-mkl",
            Algorithm::Linear => "linear",
            Algorithm::Nn => "nn",
            Algorithm::GqlNn => "gql-nn",
        }
    }

    pub fn is_kernel(self) -> bool {
        !matches!(self, Algorithm::Nn | Algorithm::GqlNn)
    }

    pub fn is_mkl(self) -> bool {
        matches!(self, Algorithm::RtMkl | Algorithm::RtsMkl)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::input(format!("unknown algorithm '{s}'")))
    }
}

/// One grid cell. Absent fields are not used by the algorithm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    #[serde(rename = "C", skip_serializing_if = "Option::is_none", default)]
    pub c: Option<f64>,
    #[serde(rename = "gamma_K", skip_serializing_if = "Option::is_none", default)]
    pub gamma_k: Option<f64>,
    #[serde(rename = "gamma_S", skip_serializing_if = "Option::is_none", default)]
    pub gamma_s: Option<f64>,
    #[serde(rename = "nK", skip_serializing_if = "Option::is_none", default)]
    pub n_k: Option<usize>,
    #[serde(rename = "nS", skip_serializing_if = "Option::is_none", default)]
    pub n_s: Option<usize>,
}

impl HyperParams {
    /// Total order used for tie-breaking: lexicographic on
    /// `(C, gamma_K, gamma_S, nK, nS)`, absent values first.
    pub fn cmp_lex(&self, other: &Self) -> std::cmp::Ordering {
        fn key(h: &HyperParams) -> [f64; 5] {
            let f = |v: Option<f64>| v.unwrap_or(f64::NEG_INFINITY);
            let n = |v: Option<usize>| v.map_or(f64::NEG_INFINITY, |v| v as f64);
            [f(h.c), f(h.gamma_k), f(h.gamma_s), n(h.n_k), n(h.n_s)]
        }
        let (a, b) = (key(self), key(other));
        a.iter()
            .zip(&b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    }

    fn need_f(v: Option<f64>, name: &str, algo: Algorithm) -> Result<f64> {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => Ok(x),
            Some(x) => Err(Error::input(format!("{name} must be positive, got {x}"))),
            None => Err(Error::input(format!("{algo} needs {name}"))),
        }
    }

    fn need_n(v: Option<usize>, name: &str, algo: Algorithm) -> Result<usize> {
        v.ok_or_else(|| Error::input(format!("{algo} needs {name}")))
    }
}

impl fmt::Display for HyperParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if let Some(v) = self.c {
            parts.push(format!("C={v:e}"));
        }
        if let Some(v) = self.gamma_k {
            parts.push(format!("gK={v:e}"));
        }
        if let Some(v) = self.gamma_s {
            parts.push(format!("gS={v:e}"));
        }
        if let Some(v) = self.n_k {
            parts.push(format!("nK={v}"));
        }
        if let Some(v) = self.n_s {
            parts.push(format!("nS={v}"));
        }
        f.write_str(&parts.join(" "))
    }
}

/// A trained kernel classifier, `f(x) = sum_j coef_j k(c_j, x) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub algorithm: Algorithm,
    #[serde(flatten)]
    pub params: HyperParams,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub a: Option<Vec<f64>>,
    pub b: f64,
    pub kernel: KernelSpec,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub similarity: Option<KernelSpec>,
    pub train_row_ids: Vec<usize>,
    pub centers: FeatureMatrix,
    pub coef: Vec<f64>,
    pub termination: Termination,
}

impl TrainedModel {
    pub fn decision(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        expansion_decision(&self.kernel, &self.centers, &self.coef, self.b, x)
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        Ok(sign_labels(&self.decision(x)?))
    }

    pub fn timed_out(&self) -> bool {
        self.termination == Termination::Timeout
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Trains a kernel algorithm on `train` with the given cell under a budget.
pub fn fit(
    algo: Algorithm,
    train: &Dataset,
    hp: &HyperParams,
    budget_seconds: f64,
) -> Result<TrainedModel> {
    if !algo.is_kernel() {
        return Err(Error::input(format!("{algo} is not a kernel algorithm")));
    }
    if !(budget_seconds > 0.0) {
        return Err(Error::input(format!(
            "budget must be positive, got {budget_seconds}"
        )));
    }
    let deadline = Deadline::after(std::time::Duration::from_secs_f64(budget_seconds));
    let x = &train.features;
    let y = &train.targets;
    let base = |kernel: KernelSpec, similarity, coef, b, termination| TrainedModel {
        algorithm: algo,
        params: *hp,
        alphas: None,
        lambdas: None,
        a: None,
        b,
        kernel,
        similarity,
        train_row_ids: x.row_ids().to_vec(),
        centers: x.clone(),
        coef,
        termination,
    };
    let model = match algo {
        Algorithm::Smos => {
            let params = SolverParams {
                c: HyperParams::need_f(hp.c, "C", algo)?,
                gamma_k: HyperParams::need_f(hp.gamma_k, "gamma_K", algo)?,
                gamma_s: HyperParams::need_f(hp.gamma_s, "gamma_S", algo)?,
                budget_seconds,
                gap_tol: DEFAULT_GAP_TOL,
            };
            let out = smos_solve(train, &params)?;
            let mut m = base(
                KernelSpec::Rbf {
                    gamma: params.gamma_k,
                },
                Some(KernelSpec::Rbf {
                    gamma: params.gamma_s,
                }),
                out.state.coefficients(y),
                out.state.b,
                out.termination,
            );
            m.alphas = Some(out.state.alpha);
            m.lambdas = Some(out.state.lambda);
            m
        }
        Algorithm::Rts | Algorithm::S | Algorithm::RtsMkl => {
            let (k, s, c) = match algo {
                Algorithm::Rts => (
                    build_gram(x, HyperParams::need_f(hp.gamma_k, "gamma_K", algo)?)?,
                    build_gram(x, HyperParams::need_f(hp.gamma_s, "gamma_S", algo)?)?,
                    Some(HyperParams::need_f(hp.c, "C", algo)?),
                ),
                Algorithm::S => (
                    build_gram(x, HyperParams::need_f(hp.gamma_k, "gamma_K", algo)?)?,
                    build_gram(x, HyperParams::need_f(hp.gamma_s, "gamma_S", algo)?)?,
                    None,
                ),
                _ => (
                    build_mkl(x, y, HyperParams::need_n(hp.n_k, "nK", algo)?)?,
                    build_mkl(x, y, HyperParams::need_n(hp.n_s, "nS", algo)?)?,
                    Some(HyperParams::need_f(hp.c, "C", algo)?),
                ),
            };
            let (kspec, sspec) = (k.spec().clone(), s.spec().clone());
            let p = PrimalProblem::new(k, s, y.clone(), c)?;
            let out = solve_primal(&p, &PrimalConfig::default(), &deadline);
            let mut m = base(
                kspec,
                Some(sspec),
                out.state.a.clone(),
                out.state.b,
                out.termination,
            );
            m.a = Some(out.state.a);
            m
        }
        Algorithm::Linear | Algorithm::RtMkl => {
            let c = HyperParams::need_f(hp.c, "C", algo)?;
            let k = if algo == Algorithm::Linear {
                build_gram(x, HyperParams::need_f(hp.gamma_k, "gamma_K", algo)?)?
            } else {
                build_mkl(x, y, HyperParams::need_n(hp.n_k, "nK", algo)?)?
            };
            let out = hinge_solve(&k, y, c, baseline::DEFAULT_EPS, &deadline)?;
            let mut m = base(
                k.spec().clone(),
                None,
                out.coefficients(y),
                out.b,
                out.termination,
            );
            m.alphas = Some(out.alpha);
            m
        }
        Algorithm::Nn | Algorithm::GqlNn => unreachable!("rejected above"),
    };
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use proptest::prelude::*;

    fn toy() -> Dataset {
        let x = FeatureMatrix::from_rows(&[
            vec![0.0, 0.0],
            vec![0.4, 0.1],
            vec![0.1, 0.5],
            vec![3.0, 3.0],
            vec![3.3, 2.8],
            vec![2.9, 3.4],
        ])
        .unwrap();
        Dataset::new(
            "toy",
            x,
            vec![1.0, 1.0, 1.0, -1.0, -1.0, -1.0],
            Task::Classification,
        )
        .unwrap()
    }

    fn cell(algo: Algorithm) -> HyperParams {
        let mut hp = HyperParams {
            c: Some(1.0),
            gamma_k: Some(0.5),
            gamma_s: Some(1.0),
            ..Default::default()
        };
        match algo {
            Algorithm::S => hp.c = None,
            Algorithm::Linear => hp.gamma_s = None,
            Algorithm::RtMkl => {
                hp.gamma_k = None;
                hp.gamma_s = None;
                hp.n_k = Some(5);
            }
            Algorithm::RtsMkl => {
                hp.gamma_k = None;
                hp.gamma_s = None;
                hp.n_k = Some(5);
                hp.n_s = Some(5);
            }
            _ => {}
        }
        hp
    }

    #[test]
    fn names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
            assert_eq!(
                serde_json::to_string(&a).unwrap(),
                format!("\"{}\"", a.name())
            );
        }
        assert!("svm".parse::<Algorithm>().is_err());
    }

    #[test]
    fn every_kernel_algorithm_fits_separable_toy() {
        let d = toy();
        for algo in Algorithm::ALL.into_iter().filter(|a| a.is_kernel()) {
            let m = fit(algo, &d, &cell(algo), 30.0).unwrap();
            assert_eq!(m.predict(&d.features).unwrap(), d.targets, "{algo}");
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back, m, "{algo}");
        }
    }

    #[test]
    fn missing_parameter_is_reported() {
        let d = toy();
        let err = fit(Algorithm::Rts, &d, &HyperParams::default(), 1.0).unwrap_err();
        assert!(err.to_string().contains("needs"));
        assert!(fit(Algorithm::Nn, &d, &cell(Algorithm::Rts), 1.0).is_err());
    }

    #[test]
    fn s_model_has_no_c() {
        let m = fit(Algorithm::S, &toy(), &cell(Algorithm::S), 30.0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert!(v.get("C").is_none());
        assert!(v.get("gamma_K").is_some());
        assert!(v.get("a").is_some());
    }

    #[test]
    fn lexicographic_order() {
        let a = HyperParams {
            c: Some(0.1),
            gamma_k: Some(10.0),
            ..Default::default()
        };
        let b = HyperParams {
            c: Some(1.0),
            gamma_k: Some(0.1),
            ..Default::default()
        };
        assert!(a.cmp_lex(&b).is_lt());
        assert!(a.cmp_lex(&a).is_eq());
    }

    proptest! {
        #[test]
        fn model_json_round_trip_is_bit_exact(
            coef in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 1..6),
            b in any::<f64>().prop_filter("finite", |v| v.is_finite()),
            gamma in 1e-300f64..1e300,
        ) {
            let n = coef.len();
            let centers = FeatureMatrix::new(n, 1, (0..n).map(|i| i as f64 * 0.1).collect()).unwrap();
            let m = TrainedModel {
                algorithm: Algorithm::Rts,
                params: HyperParams { c: Some(gamma), gamma_k: Some(gamma), gamma_s: Some(1.0 / gamma), ..Default::default() },
                alphas: None,
                lambdas: None,
                a: Some(coef.clone()),
                b,
                kernel: KernelSpec::Rbf { gamma },
                similarity: Some(KernelSpec::Rbf { gamma: 1.0 / gamma }),
                train_row_ids: (0..n).collect(),
                centers,
                coef: coef.clone(),
                termination: Termination::Stalled,
            };
            let back = TrainedModel::from_json(&m.to_json().unwrap()).unwrap();
            for (x, y) in back.coef.iter().zip(&m.coef) {
                prop_assert_eq!(x.to_bits(), y.to_bits());
            }
            prop_assert_eq!(back.b.to_bits(), m.b.to_bits());
            prop_assert_eq!(back, m);
        }
    }
}
