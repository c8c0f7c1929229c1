//! Metrics, hyperparameter grids, validation-driven grid search and the
//! k-fold driver.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::TimeBudget;
use crate::data::{kfold, Dataset};
use crate::error::{Error, Result};
use crate::kernel::MAX_MKL_COMPONENTS;
use crate::model::{fit, Algorithm, HyperParams, TrainedModel};

/// Default number of folds.
pub const DEFAULT_FOLDS: usize = 10;

/// F1 of the +1 class; 0 when there are no true positives.
pub fn f1(pred: &[f64], truth: &[f64]) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p > 0.0, t > 0.0) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter()
        .zip(truth)
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / pred.len() as f64
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `min, 10 min, 100 min, ...` up to `max`. Exact powers of ten are parsed
/// from their decimal form so that `1e-3` is the nearest double to 0.001.
pub fn pow10_axis(min: f64, max: f64) -> Result<Vec<f64>> {
    if !(min > 0.0) || !(max >= min) || !max.is_finite() {
        return Err(Error::input(format!("invalid grid bounds [{min}, {max}]")));
    }
    let lo = min.log10();
    let exact = (lo - lo.round()).abs() < 1e-9;
    let steps = ((max / min).log10() + 1e-9).floor() as i32;
    Ok((0..=steps)
        .map(|k| {
            if exact {
                format!("1e{}", lo.round() as i32 + k).parse().unwrap()
            } else {
                min * format!("1e{k}").parse::<f64>().unwrap()
            }
        })
        .collect())
}

/// Named axes of a hyperparameter grid; absent axes are unused.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(rename = "C", skip_serializing_if = "Option::is_none", default)]
    pub c: Option<Vec<f64>>,
    #[serde(rename = "gamma_K", skip_serializing_if = "Option::is_none", default)]
    pub gamma_k: Option<Vec<f64>>,
    #[serde(rename = "gamma_S", skip_serializing_if = "Option::is_none", default)]
    pub gamma_s: Option<Vec<f64>>,
    #[serde(rename = "nK", skip_serializing_if = "Option::is_none", default)]
    pub n_k: Option<Vec<usize>>,
    #[serde(rename = "nS", skip_serializing_if = "Option::is_none", default)]
    pub n_s: Option<Vec<usize>>,
}

impl GridSpec {
    /// The calibration grid used for `algo` unless overridden.
    pub fn default_for(algo: Algorithm) -> GridSpec {
        let wide = || pow10_axis(1e-3, 1e2).unwrap();
        let counts = || Some((1..=MAX_MKL_COMPONENTS).collect::<Vec<_>>());
        match algo {
            Algorithm::Smos | Algorithm::Rts => GridSpec {
                c: Some(wide()),
                gamma_k: Some(wide()),
                gamma_s: Some(wide()),
                ..Default::default()
            },
            Algorithm::S => GridSpec {
                gamma_k: Some(pow10_axis(1e-5, 1e4).unwrap()),
                gamma_s: Some(pow10_axis(1e-5, 1e4).unwrap()),
                ..Default::default()
            },
            Algorithm::Linear => GridSpec {
                c: Some(wide()),
                gamma_k: Some(wide()),
                ..Default::default()
            },
            Algorithm::RtMkl => GridSpec {
                c: Some(wide()),
                n_k: counts(),
                ..Default::default()
            },
            Algorithm::RtsMkl => GridSpec {
                c: Some(wide()),
                n_k: counts(),
                n_s: counts(),
                ..Default::default()
            },
            Algorithm::Nn => GridSpec::default(),
            Algorithm::GqlNn => GridSpec {
                gamma_s: Some(crate::nn::GAMMA_S_LINE_SEARCH.to_vec()),
                ..Default::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, axis) in [
            ("C", &self.c),
            ("gamma_K", &self.gamma_k),
            ("gamma_S", &self.gamma_s),
        ] {
            if let Some(v) = axis {
                if v.is_empty() || v.iter().any(|x| !(*x > 0.0)) {
                    return Err(Error::input(format!(
                        "{name} axis must be non-empty and positive"
                    )));
                }
            }
        }
        for (name, axis) in [("nK", &self.n_k), ("nS", &self.n_s)] {
            if let Some(v) = axis {
                if v.is_empty() || v.iter().any(|&n| n == 0 || n > MAX_MKL_COMPONENTS) {
                    return Err(Error::input(format!(
                        "{name} axis must be non-empty with values in 1..={MAX_MKL_COMPONENTS}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Cells in lexicographic order of `(C, gamma_K, gamma_S, nK, nS)`.
    pub fn cells(&self) -> Vec<HyperParams> {
        fn expand<T: Copy>(
            cells: Vec<HyperParams>,
            axis: &Option<Vec<T>>,
            set: impl Fn(&mut HyperParams, T),
        ) -> Vec<HyperParams> {
            match axis {
                None => cells,
                Some(vals) => cells
                    .into_iter()
                    .flat_map(|c| {
                        vals.iter()
                            .map(|&v| {
                                let mut c = c;
                                set(&mut c, v);
                                c
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            }
        }
        let mut cells = vec![HyperParams::default()];
        cells = expand(cells, &self.c, |h, v| h.c = Some(v));
        cells = expand(cells, &self.gamma_k, |h, v| h.gamma_k = Some(v));
        cells = expand(cells, &self.gamma_s, |h, v| h.gamma_s = Some(v));
        cells = expand(cells, &self.n_k, |h, v| h.n_k = Some(v));
        cells = expand(cells, &self.n_s, |h, v| h.n_s = Some(v));
        cells
    }

    pub fn len(&self) -> usize {
        [
            self.c.as_ref().map(Vec::len),
            self.gamma_k.as_ref().map(Vec::len),
            self.gamma_s.as_ref().map(Vec::len),
            self.n_k.as_ref().map(Vec::len),
            self.n_s.as_ref().map(Vec::len),
        ]
        .iter()
        .map(|v| v.unwrap_or(1))
        .product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Outcome of one grid cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellLog {
    pub params: HyperParams,
    /// Validation score; `None` when the cell failed.
    pub val_score: Option<f64>,
    pub wall_ms: u64,
    pub timeout: bool,
    pub error: Option<String>,
}

impl CellLog {
    fn selectable(&self) -> bool {
        !self.timeout && self.error.is_none() && self.val_score.is_some_and(f64::is_finite)
    }
}

/// What a cell run hands back to the search.
pub struct CellRun<M> {
    pub model: M,
    pub val_score: f64,
    pub timed_out: bool,
}

/// Index of the best selectable cell: highest validation score, ties to the
/// lexicographically smallest parameters. Lower-is-better metrics are
/// handled by `maximize = false`.
pub fn select_best(cells: &[CellLog], maximize: bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, c) in cells.iter().enumerate().filter(|(_, c)| c.selectable()) {
        let s = c.val_score.unwrap();
        best = match best {
            None => Some(i),
            Some(b) => {
                let bs = cells[b].val_score.unwrap();
                let better = if maximize { s > bs } else { s < bs };
                if better || (s == bs && c.params.cmp_lex(&cells[b].params).is_lt()) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

#[derive(Clone, Debug)]
pub struct SearchResult<M> {
    pub best_index: usize,
    pub best_model: M,
    pub cells: Vec<CellLog>,
}

impl<M> SearchResult<M> {
    pub fn best_params(&self) -> HyperParams {
        self.cells[self.best_index].params
    }

    pub fn validation_score(&self) -> f64 {
        self.cells[self.best_index].val_score.unwrap()
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::input(format!("cannot start worker pool: {e}")))
}

/// Runs every cell (in parallel up to `jobs`) and keeps the best model.
/// Only the winning model is retained; others are dropped as soon as a
/// better one is known.
pub fn grid_search_with<M, F>(
    cells: &[HyperParams],
    jobs: usize,
    maximize: bool,
    run: F,
) -> Result<SearchResult<M>>
where
    M: Send,
    F: Fn(&HyperParams) -> Result<CellRun<M>> + Sync,
{
    if cells.is_empty() {
        return Err(Error::input("empty grid"));
    }
    let results: Vec<(CellLog, Option<M>)> = pool(jobs)?.install(|| {
        cells
            .par_iter()
            .map(|params| {
                let start = Instant::now();
                let out = run(params);
                let wall_ms = start.elapsed().as_millis() as u64;
                match out {
                    Ok(r) => (
                        CellLog {
                            params: *params,
                            val_score: Some(r.val_score),
                            wall_ms,
                            timeout: r.timed_out,
                            error: None,
                        },
                        (!r.timed_out).then_some(r.model),
                    ),
                    Err(e) => (
                        CellLog {
                            params: *params,
                            val_score: None,
                            wall_ms,
                            timeout: false,
                            error: Some(e.to_string()),
                        },
                        None,
                    ),
                }
            })
            .collect()
    });
    let logs: Vec<CellLog> = results.iter().map(|(l, _)| l.clone()).collect();
    let best_index = select_best(&logs, maximize).ok_or(Error::NoCompletedCell)?;
    let best_model = results
        .into_iter()
        .nth(best_index)
        .and_then(|(_, m)| m)
        .expect("selectable cell keeps its model");
    Ok(SearchResult {
        best_index,
        best_model,
        cells: logs,
    })
}

/// Calibration of one kernel algorithm.
#[derive(Clone, Debug)]
pub struct CalibrationResult {
    pub algorithm: Algorithm,
    pub best_params: HyperParams,
    pub best_model: TrainedModel,
    pub validation_score: f64,
    pub test_score: Option<f64>,
    pub cells: Vec<CellLog>,
}

/// Trains one kernel model per cell on `train`, selects by validation F1 and
/// scores the winner on `test` when given.
pub fn grid_search(
    algo: Algorithm,
    train: &Dataset,
    val: &Dataset,
    test: Option<&Dataset>,
    grid: &GridSpec,
    budget: &TimeBudget,
    jobs: usize,
) -> Result<CalibrationResult> {
    grid.validate()?;
    if !algo.is_kernel() {
        return Err(Error::input(format!(
            "{algo} is not calibrated by grid search"
        )));
    }
    let cells = grid.cells();
    let search = grid_search_with(&cells, jobs, true, |hp| {
        let model = fit(algo, train, hp, budget.seconds)?;
        let val_score = f1(&model.predict(&val.features)?, &val.targets);
        let timed_out = model.timed_out();
        Ok(CellRun {
            model,
            val_score,
            timed_out,
        })
    })?;
    let test_score = test
        .map(|t| -> Result<f64> { Ok(f1(&search.best_model.predict(&t.features)?, &t.targets)) })
        .transpose()?;
    Ok(CalibrationResult {
        algorithm: algo,
        best_params: search.best_params(),
        validation_score: search.validation_score(),
        best_model: search.best_model,
        test_score,
        cells: search.cells,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub params: Option<HyperParams>,
    pub val_score: Option<f64>,
    pub test_score: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KfoldResult {
    pub folds: Vec<FoldRecord>,
    pub mean: f64,
    pub std: f64,
}

/// For each fold, calibrates on the fold's complement against the shared
/// validation set and scores on the shared test set. Failed folds are
/// recorded and left out of the aggregate.
#[allow(clippy::too_many_arguments)]
pub fn run_kfold(
    algo: Algorithm,
    train: &Dataset,
    val: &Dataset,
    test: &Dataset,
    k: usize,
    grid: &GridSpec,
    budget: &TimeBudget,
    jobs: usize,
    seed: u64,
) -> Result<KfoldResult> {
    let plan = kfold(train, k, seed)?;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let part = train.subset(&plan.complement(f))?;
        let rec = match grid_search(algo, &part, val, Some(test), grid, budget, jobs) {
            Ok(r) => FoldRecord {
                fold: f,
                params: Some(r.best_params),
                val_score: Some(r.validation_score),
                test_score: r.test_score,
                error: None,
            },
            Err(e) => FoldRecord {
                fold: f,
                params: None,
                val_score: None,
                test_score: None,
                error: Some(e.to_string()),
            },
        };
        folds.push(rec);
    }
    Ok(aggregate_folds(folds))
}

pub fn aggregate_folds(folds: Vec<FoldRecord>) -> KfoldResult {
    let scores: Vec<f64> = folds.iter().filter_map(|f| f.test_score).collect();
    let (mean, std) = mean_std(&scores);
    KfoldResult { folds, mean, std }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;
    use crate::kernel::FeatureMatrix;
    use proptest::prelude::*;

    #[test]
    fn f1_cases() {
        assert_eq!(f1(&[1.0, -1.0, 1.0], &[1.0, -1.0, 1.0]), 1.0);
        // TP=2, FP=1, FN=1
        let p = [1.0, 1.0, 1.0, -1.0, -1.0];
        let t = [1.0, 1.0, -1.0, 1.0, -1.0];
        assert!((f1(&p, &t) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(f1(&[-1.0, -1.0], &[-1.0, -1.0]), 0.0);
    }

    #[test]
    fn mse_cases() {
        assert_eq!(mse(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(mse(&[1.0, -1.0], &[0.0, 0.0]), 1.0);
    }

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[0.5, 0.5, 0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[0.6, 0.8]);
        assert!((m - 0.7).abs() < 1e-15 && (s - 0.1).abs() < 1e-12);
    }

    #[test]
    fn default_grids_match_protocol() {
        let g = GridSpec::default_for(Algorithm::Smos);
        assert_eq!(g.len(), 216);
        assert_eq!(g.cells().len(), 216);
        assert_eq!(
            g.c.as_ref().unwrap(),
            &vec![1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2]
        );
        assert_eq!(GridSpec::default_for(Algorithm::Rts), g);
        let s = GridSpec::default_for(Algorithm::S);
        assert_eq!(s.len(), 100);
        assert!(s.c.is_none());
        assert_eq!(s.gamma_k.as_ref().unwrap().first(), Some(&1e-5));
        assert_eq!(s.gamma_k.as_ref().unwrap().last(), Some(&1e4));
        let m = GridSpec::default_for(Algorithm::RtsMkl);
        assert_eq!(m.n_k.as_ref().unwrap().last(), Some(&10));
        assert_eq!(m.n_s.as_ref().unwrap().last(), Some(&10));
    }

    #[test]
    fn cells_are_lexicographic() {
        let g = GridSpec {
            c: Some(vec![0.1, 1.0]),
            gamma_k: Some(vec![1.0, 10.0]),
            ..Default::default()
        };
        let cells = g.cells();
        for w in cells.windows(2) {
            assert!(w[0].cmp_lex(&w[1]).is_lt());
        }
    }

    #[test]
    fn axis_rejects_bad_bounds() {
        assert!(pow10_axis(0.0, 1.0).is_err());
        assert!(pow10_axis(10.0, 1.0).is_err());
        assert_eq!(pow10_axis(2.0, 200.0).unwrap(), vec![2.0, 20.0, 200.0]);
    }

    fn log(c: f64, score: Option<f64>, timeout: bool) -> CellLog {
        CellLog {
            params: HyperParams {
                c: Some(c),
                ..Default::default()
            },
            val_score: score,
            wall_ms: 0,
            timeout,
            error: None,
        }
    }

    #[test]
    fn selection_rules() {
        assert_eq!(
            select_best(
                &[log(1.0, Some(0.6), false), log(2.0, Some(0.8), false)],
                true
            ),
            Some(1)
        );
        assert_eq!(
            select_best(
                &[log(2.0, Some(0.8), false), log(1.0, Some(0.8), false)],
                true
            ),
            Some(1)
        );
        assert_eq!(
            select_best(
                &[log(1.0, Some(0.9), true), log(2.0, Some(0.5), false)],
                true
            ),
            Some(1)
        );
        assert_eq!(select_best(&[log(1.0, Some(0.9), true)], true), None);
        assert_eq!(
            select_best(
                &[log(1.0, Some(0.2), false), log(2.0, Some(0.1), false)],
                false
            ),
            Some(1)
        );
    }

    #[test]
    fn all_timeouts_is_an_error() {
        let cells = [HyperParams::default()];
        let r = grid_search_with(&cells, 1, true, |_| {
            Ok(CellRun {
                model: (),
                val_score: 1.0,
                timed_out: true,
            })
        });
        assert!(matches!(r, Err(Error::NoCompletedCell)));
    }

    fn toy(n: usize, shift: f64) -> Dataset {
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let c = if i % 2 == 0 { 0.0 } else { 3.0 };
                vec![c + shift * (i as f64 / n as f64), c]
            })
            .collect();
        let y = (0..n)
            .map(|i| if i % 2 == 0 { 1.0 } else { -1.0 })
            .collect();
        Dataset::new(
            "toy",
            FeatureMatrix::from_rows(&rows).unwrap(),
            y,
            Task::Classification,
        )
        .unwrap()
    }

    #[test]
    fn one_cell_grid_returns_that_cell() {
        let grid = GridSpec {
            c: Some(vec![1.0]),
            gamma_k: Some(vec![0.5]),
            gamma_s: Some(vec![1.0]),
            ..Default::default()
        };
        let r = grid_search(
            Algorithm::Rts,
            &toy(10, 0.5),
            &toy(6, 0.3),
            Some(&toy(6, 0.7)),
            &grid,
            &TimeBudget::seconds(10.0),
            1,
        )
        .unwrap();
        assert_eq!(r.best_params, grid.cells()[0]);
        assert_eq!(r.validation_score, 1.0);
        assert_eq!(r.test_score, Some(1.0));
        assert_eq!(r.cells.len(), 1);
    }

    #[test]
    fn kfold_aggregates_every_fold() {
        let grid = GridSpec {
            c: Some(vec![1.0]),
            gamma_k: Some(vec![0.5]),
            ..Default::default()
        };
        let r = run_kfold(
            Algorithm::Linear,
            &toy(12, 0.5),
            &toy(6, 0.3),
            &toy(6, 0.7),
            3,
            &grid,
            &TimeBudget::seconds(10.0),
            2,
            1,
        )
        .unwrap();
        assert_eq!(r.folds.len(), 3);
        assert_eq!((r.mean, r.std), (1.0, 0.0));
    }

    proptest! {
        #[test]
        fn f1_is_bounded_and_permutation_invariant(
            pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..40),
            rot in 0usize..40,
        ) {
            let lab = |b: bool| if b { 1.0 } else { -1.0 };
            let p: Vec<f64> = pairs.iter().map(|x| lab(x.0)).collect();
            let t: Vec<f64> = pairs.iter().map(|x| lab(x.1)).collect();
            let v = f1(&p, &t);
            prop_assert!((0.0..=1.0).contains(&v));
            let mut pp = p.clone();
            let mut tt = t.clone();
            let r = rot % p.len();
            pp.rotate_left(r);
            tt.rotate_left(r);
            prop_assert_eq!(f1(&pp, &tt), v);
        }
    }
}
