//! Dataset ingestion, de-duplication, synthetic generators, splits and folds.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::FeatureMatrix;
use crate::rng::{streams, substream};

/// Half-width of the cube the uniform generator samples from.
pub const UNIFORM_HALF_WIDTH: f64 = 5.0;
/// Per-axis standard deviation of the normal generator.
pub const NORMAL_STD: f64 = 3.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    /// Targets in {-1, +1}.
    Classification,
    Regression,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: FeatureMatrix,
    pub targets: Vec<f64>,
    pub task: Task,
    /// Seed used by whatever shuffling produced this dataset.
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: FeatureMatrix,
        targets: Vec<f64>,
        task: Task,
    ) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(Error::input(format!(
                "{} feature rows but {} targets",
                features.rows(),
                targets.len()
            )));
        }
        if task == Task::Classification && targets.iter().any(|&t| t != 1.0 && t != -1.0) {
            return Err(Error::input("classification targets must be -1 or +1"));
        }
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::input("targets must be finite"));
        }
        Ok(Dataset {
            name: name.into(),
            features,
            targets,
            task,
            seed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    /// Sub-dataset with rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let features = self.features.select(idx)?;
        let targets = idx.iter().map(|&i| self.targets[i]).collect();
        Ok(Dataset {
            name: self.name.clone(),
            features,
            targets,
            task: self.task,
            seed: self.seed,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetEncoding {
    /// Two-valued labels: {-1,+1}, {0,1} or {2,4}; the larger maps to +1.
    Binary,
    Real,
}

#[derive(Clone, Debug)]
pub struct CsvOptions {
    pub target_col: usize,
    pub has_header: bool,
    pub encoding: TargetEncoding,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions {
            target_col: 0,
            has_header: false,
            encoding: TargetEncoding::Binary,
        }
    }
}

const LABEL_SETS: [(f64, f64); 3] = [(-1.0, 1.0), (0.0, 1.0), (2.0, 4.0)];

fn encode_binary(raw: &[f64]) -> Option<Vec<f64>> {
    LABEL_SETS.iter().find_map(|&(neg, pos)| {
        raw.iter().all(|&v| v == neg || v == pos).then(|| {
            raw.iter()
                .map(|&v| if v == pos { 1.0 } else { -1.0 })
                .collect()
        })
    })
}

fn dataset_name(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Reads a dense comma-separated file. Line numbers in errors are 1-based
/// and count the header line.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;

    let mut width = None;
    let mut data = Vec::new();
    let mut raw_targets = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        match width {
            None => {
                if rec.len() < 2 {
                    return Err(parse_err("need a target and at least one feature".into()));
                }
                if opts.target_col >= rec.len() {
                    return Err(parse_err(format!(
                        "target column {} out of range for {} fields",
                        opts.target_col,
                        rec.len()
                    )));
                }
                width = Some(rec.len());
            }
            Some(w) if w != rec.len() => {
                return Err(parse_err(format!(
                    "expected {w} fields, found {}",
                    rec.len()
                )));
            }
            _ => {}
        }
        for (c, field) in rec.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(format!("field {} is not a number: {field:?}", c + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(format!("field {} is not finite", c + 1)));
            }
            if c == opts.target_col {
                raw_targets.push(v);
            } else {
                data.push(v);
            }
        }
    }
    let Some(w) = width else {
        return Err(Error::input(format!(
            "{} holds no data rows",
            path.display()
        )));
    };
    let features = FeatureMatrix::new(raw_targets.len(), w - 1, data)?;
    finish(dataset_name(path), features, raw_targets, opts.encoding)
}

fn finish(
    name: String,
    features: FeatureMatrix,
    raw_targets: Vec<f64>,
    encoding: TargetEncoding,
) -> Result<Dataset> {
    match encoding {
        TargetEncoding::Binary => {
            let targets = encode_binary(&raw_targets)
                .ok_or_else(|| Error::input("labels are not binary ({-1,+1}, {0,1} or {2,4})"))?;
            Dataset::new(name, features, targets, Task::Classification)
        }
        TargetEncoding::Real => Dataset::new(name, features, raw_targets, Task::Regression),
    }
}

/// Reads the sparse `label index:value ...` format with 1-based indices.
/// Missing entries are zero; the dimension is the largest index seen.
pub fn load_sparse(path: impl AsRef<Path>, encoding: TargetEncoding) -> Result<Dataset> {
    let path = path.as_ref();
    let reader = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_targets = Vec::new();
    let mut dim = 0;
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let mut parts = line.split_whitespace();
        let label = parts.next().unwrap_or_default();
        let label: f64 = label
            .parse()
            .map_err(|_| parse_err(format!("bad label {label:?}")))?;
        let mut row = Vec::new();
        for tok in parts {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(format!("expected index:value, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .ok()
                .filter(|&i| i >= 1)
                .ok_or_else(|| parse_err(format!("bad index {idx:?}")))?;
            let val: f64 = val
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| parse_err(format!("bad value {val:?}")))?;
            dim = dim.max(idx);
            row.push((idx - 1, val));
        }
        raw_targets.push(label);
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::input(format!(
            "{} holds no data rows",
            path.display()
        )));
    }
    let dim = dim.max(1);
    let mut data = vec![0.0; rows.len() * dim];
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            data[r * dim + c] = v;
        }
    }
    let features = FeatureMatrix::new(rows.len(), dim, data)?;
    finish(dataset_name(path), features, raw_targets, encoding)
}

/// Writes the target in column 0 followed by the features, no header.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv_to(d, BufWriter::new(File::create(path)?))
}

/// As [`write_csv`], to any writer.
pub fn write_csv_to(d: &Dataset, mut out: impl Write) -> Result<()> {
    for (row, t) in d.features.iter_rows().zip(&d.targets) {
        write!(out, "{t}")?;
        for v in row {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Drops repeated feature rows (exact bitwise match), keeping the first
/// occurrence and the original order.
pub fn dedup(d: &Dataset) -> Dataset {
    let mut seen = HashSet::with_capacity(d.len());
    let keep: Vec<usize> = (0..d.len())
        .filter(|&i| {
            let key: Vec<u64> = d.features.row(i).iter().map(|v| v.to_bits()).collect();
            seen.insert(key)
        })
        .collect();
    d.subset(&keep).expect("subset of valid dataset")
}

fn random_labels(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
        .collect()
}

fn synth(
    name: &str,
    n: usize,
    seed: u64,
    sample: impl Fn(&mut crate::rng::Rng) -> f64,
) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::input("synthetic dataset needs n >= 1"));
    }
    let mut rng = substream(seed, streams::SYNTH);
    let data: Vec<f64> = (0..n * 3).map(|_| sample(&mut rng)).collect();
    let targets = random_labels(&mut rng, n);
    let features = FeatureMatrix::new(n, 3, data)?;
    let mut d = Dataset::new(name, features, targets, Task::Classification)?;
    d.seed = seed;
    Ok(d)
}

/// `n` points uniform on `[-5, 5]^3` with fair-coin labels.
pub fn synth_uniform(n: usize, seed: u64) -> Result<Dataset> {
    let dist = Uniform::new_inclusive(-UNIFORM_HALF_WIDTH, UNIFORM_HALF_WIDTH)
        .map_err(|e| Error::input(e.to_string()))?;
    synth("uniform", n, seed, |rng| dist.sample(rng))
}

/// `n` points with i.i.d. `N(0, 3^2)` coordinates and fair-coin labels.
pub fn synth_normal(n: usize, seed: u64) -> Result<Dataset> {
    let dist = Normal::new(0.0, NORMAL_STD).map_err(|e| Error::input(e.to_string()))?;
    synth("normal", n, seed, |rng| dist.sample(rng))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub shuffle: bool,
}

impl SplitSpec {
    pub fn new(n_train: usize, n_val: usize, n_test: usize) -> Self {
        SplitSpec {
            n_train,
            n_val,
            n_test,
            shuffle: true,
        }
    }

    pub fn total(&self) -> usize {
        self.n_train + self.n_val + self.n_test
    }
}

/// Index sets of a split, in dataset row order before subsetting.
pub fn split_indices(len: usize, spec: &SplitSpec, seed: u64) -> Result<[Vec<usize>; 3]> {
    if spec.total() > len {
        return Err(Error::input(format!(
            "split needs {} rows, dataset has {len}",
            spec.total()
        )));
    }
    let mut order: Vec<usize> = (0..len).collect();
    if spec.shuffle {
        order.shuffle(&mut substream(seed, streams::SHUFFLE));
    }
    let (train, rest) = order.split_at(spec.n_train);
    let (val, rest) = rest.split_at(spec.n_val);
    let test = &rest[..spec.n_test];
    Ok([train.to_vec(), val.to_vec(), test.to_vec()])
}

pub fn split(d: &Dataset, spec: &SplitSpec, seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let [tr, va, te] = split_indices(d.len(), spec, seed)?;
    let mut parts = [d.subset(&tr)?, d.subset(&va)?, d.subset(&te)?];
    for (p, suffix) in parts.iter_mut().zip(["train", "val", "test"]) {
        p.seed = seed;
        p.name = format!("{}-{suffix}", d.name);
    }
    let [a, b, c] = parts;
    Ok((a, b, c))
}

/// Balanced assignment of training patterns to `k` folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    /// Fold index of each training pattern.
    pub assignments: Vec<usize>,
}

impl FoldPlan {
    /// Patterns held out in fold `f`.
    pub fn held_out(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == f)
            .collect()
    }

    /// Patterns used for training in fold `f` (the fold complement).
    pub fn complement(&self, f: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] != f)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

pub fn kfold(train: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    let n = train.len();
    if k < 2 {
        return Err(Error::input(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::input(format!(
            "k = {k} exceeds {n} training patterns"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(seed, streams::FOLDS));
    let mut assignments = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan { k, assignments })
}

/// Per-column affine map onto `[0, 1]`, fitted on one dataset and applied
/// to others. Constant columns map to 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl MinMax {
    pub fn fit(x: &FeatureMatrix) -> Self {
        let mut lo = vec![f64::INFINITY; x.cols()];
        let mut hi = vec![f64::NEG_INFINITY; x.cols()];
        for row in x.iter_rows() {
            for (c, &v) in row.iter().enumerate() {
                lo[c] = lo[c].min(v);
                hi[c] = hi[c].max(v);
            }
        }
        MinMax { lo, hi }
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        let cols = d.features.cols();
        let data = d
            .features
            .as_slice()
            .iter()
            .enumerate()
            .map(|(p, &v)| {
                let c = p % cols;
                let span = self.hi[c] - self.lo[c];
                if span > 0.0 {
                    (v - self.lo[c]) / span
                } else {
                    0.0
                }
            })
            .collect();
        let features =
            FeatureMatrix::with_row_ids(d.len(), cols, data, d.features.row_ids().to_vec())?;
        Ok(Dataset {
            features,
            ..d.clone()
        })
    }
}
