//! RBF Gram matrices, the pattern-similarity matrix `S` and its inverse, and
//! multiple-kernel combinations.
//!
//! The same [`GramMatrix`] type serves as the kernel `K` of the decision
//! function and as the similarity matrix `S` that couples per-pattern errors
//! in the generalized quadratic loss.

use nalgebra::{Cholesky, DMatrix, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of RBF components in a multiple-kernel combination.
pub const MAX_MKL_COMPONENTS: usize = 10;

/// Gram entries below this are stored as exact zeros. Far-apart patterns
/// otherwise produce subnormal values whose arithmetic is very slow.
pub const GRAM_FLOOR: f64 = 1e-100;

/// Diagonal jitter added once when the Cholesky factorization hits a
/// non-positive pivot.
pub const FACTOR_JITTER: f64 = 1e-10;

/// Dense row-major pattern matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// Index of each row in the dataset it was drawn from.
    row_ids: Vec<usize>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        let row_ids = (0..rows).collect();
        Self::with_row_ids(rows, cols, data, row_ids)
    }

    pub fn with_row_ids(
        rows: usize,
        cols: usize,
        data: Vec<f64>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        if cols == 0 {
            return Err(Error::input("feature matrix needs at least one column"));
        }
        if data.len() != rows * cols {
            return Err(Error::input(format!(
                "feature buffer has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        if row_ids.len() != rows {
            return Err(Error::input("row id count does not match row count"));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!(
                "non-finite feature at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(FeatureMatrix {
            rows,
            cols,
            data,
            row_ids,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::input("rows have different lengths"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Rows `idx` in the given order; row ids are carried over.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        let mut ids = Vec::with_capacity(idx.len());
        for &i in idx {
            data.extend_from_slice(self.row(i));
            ids.push(self.row_ids[i]);
        }
        Self::with_row_ids(idx.len(), self.cols, data, ids)
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }
}

/// `exp(-gamma * |x - z|^2)`.
pub fn rbf(x: &[f64], z: &[f64], gamma: f64) -> Result<f64> {
    if x.len() != z.len() {
        return Err(Error::input(format!(
            "dimension mismatch: {} vs {}",
            x.len(),
            z.len()
        )));
    }
    if !(gamma > 0.0) {
        return Err(Error::input(format!("gamma must be positive, got {gamma}")));
    }
    Ok(rbf_unchecked(x, z, gamma))
}

#[inline]
pub(crate) fn rbf_unchecked(x: &[f64], z: &[f64], gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    (-gamma * d2).exp()
}

/// How a Gram matrix was built; also used to evaluate the kernel against
/// new patterns at prediction time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Rbf { gamma: f64 },
    Mkl(MklCombo),
}

impl KernelSpec {
    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match self {
            KernelSpec::Rbf { gamma } => rbf_unchecked(x, z, *gamma),
            KernelSpec::Mkl(combo) => combo
                .gammas
                .iter()
                .zip(&combo.weights)
                .map(|(&g, &w)| w * rbf_unchecked(x, z, g))
                .sum(),
        }
    }

    /// Matrix of kernel values, `out[(i, j)] = k(a_i, b_j)`.
    pub fn cross(&self, a: &FeatureMatrix, b: &FeatureMatrix) -> Result<DMatrix<f64>> {
        if a.cols() != b.cols() {
            return Err(Error::input(format!(
                "dimension mismatch: {} vs {}",
                a.cols(),
                b.cols()
            )));
        }
        Ok(DMatrix::from_fn(a.rows(), b.rows(), |i, j| {
            self.eval(a.row(i), b.row(j))
        }))
    }
}

/// Dense symmetric similarity matrix over a set of patterns.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    spec: KernelSpec,
    mat: DMatrix<f64>,
}

impl GramMatrix {
    /// Wraps an arbitrary symmetric matrix. Used for hand-built kernels in
    /// tests and for the identity similarity.
    pub fn from_matrix(mat: DMatrix<f64>, spec: KernelSpec) -> Result<Self> {
        if !mat.is_square() {
            return Err(Error::input("gram matrix must be square"));
        }
        let n = mat.nrows();
        for i in 0..n {
            for j in 0..i {
                if (mat[(i, j)] - mat[(j, i)]).abs() > 1e-12 {
                    return Err(Error::input(format!(
                        "gram matrix not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(GramMatrix { spec, mat })
    }

    pub fn identity(l: usize) -> Self {
        GramMatrix {
            spec: KernelSpec::Rbf {
                gamma: f64::INFINITY,
            },
            mat: DMatrix::identity(l, l),
        }
    }

    pub fn size(&self) -> usize {
        self.mat.nrows()
    }

    /// Exponent coefficient for single-RBF matrices.
    pub fn gamma(&self) -> Option<f64> {
        match self.spec {
            KernelSpec::Rbf { gamma } => Some(gamma),
            KernelSpec::Mkl(_) => None,
        }
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mat[(i, j)]
    }

    /// Column `i`, which equals row `i` by symmetry.
    #[inline]
    pub fn col(&self, i: usize) -> &[f64] {
        let l = self.size();
        &self.mat.as_slice()[i * l..(i + 1) * l]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.mat
    }

    /// `v' M v`.
    pub fn quad_form(&self, v: &[f64]) -> f64 {
        let l = self.size();
        debug_assert_eq!(v.len(), l);
        let mut acc = 0.0;
        for (j, &vj) in v.iter().enumerate() {
            if vj == 0.0 {
                continue;
            }
            acc += vj * dot(self.col(j), v);
        }
        acc
    }

    /// `M v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let l = self.size();
        let mut out = vec![0.0; l];
        for (j, &vj) in v.iter().enumerate() {
            if vj != 0.0 {
                axpy(vj, self.col(j), &mut out);
            }
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four independent accumulators; fixed order keeps results reproducible
    let n = a.len().min(b.len());
    let (ac, bc) = (a[..n].chunks_exact(4), b[..n].chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    let mut acc = [0.0; 4];
    for (x, y) in ac.zip(bc) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ar.iter().zip(br).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn build_gram(x: &FeatureMatrix, gamma: f64) -> Result<GramMatrix> {
    build_gram_with(x, &KernelSpec::Rbf { gamma })
}

pub fn build_gram_with(x: &FeatureMatrix, spec: &KernelSpec) -> Result<GramMatrix> {
    match spec {
        KernelSpec::Rbf { gamma } if !(*gamma > 0.0) => {
            return Err(Error::input(format!("gamma must be positive, got {gamma}")))
        }
        KernelSpec::Mkl(combo) => combo.validate()?,
        _ => {}
    }
    let l = x.rows();
    let mut mat = DMatrix::zeros(l, l);
    for i in 0..l {
        mat[(i, i)] = spec.eval(x.row(i), x.row(i));
        for j in 0..i {
            let mut v = spec.eval(x.row(i), x.row(j));
            if v < GRAM_FLOOR {
                v = 0.0;
            }
            mat[(i, j)] = v;
            mat[(j, i)] = v;
        }
    }
    Ok(GramMatrix {
        spec: spec.clone(),
        mat,
    })
}

/// Cholesky factor of `S` plus the explicit inverse, which the dual solver
/// reads entry- and column-wise.
#[derive(Clone, Debug)]
pub struct FactorizedInverse {
    chol: Cholesky<f64, Dyn>,
    inverse: DMatrix<f64>,
    jittered: bool,
}

impl FactorizedInverse {
    pub fn size(&self) -> usize {
        self.inverse.nrows()
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.inverse[(p, q)]
    }

    #[inline]
    pub fn col(&self, i: usize) -> &[f64] {
        let l = self.size();
        &self.inverse.as_slice()[i * l..(i + 1) * l]
    }

    /// Solves `S x = v` through the triangular factor.
    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        let rhs = nalgebra::DVector::from_column_slice(v);
        self.chol.solve(&rhs).as_slice().to_vec()
    }

    pub fn lower_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// Whether the diagonal jitter had to be applied.
    pub fn jittered(&self) -> bool {
        self.jittered
    }
}

pub fn factorize_inverse(s: &GramMatrix) -> Result<FactorizedInverse> {
    let (chol, jittered) = match Cholesky::new(s.mat.clone()) {
        Some(c) => (c, false),
        None => {
            let l = s.size();
            let shifted = &s.mat + DMatrix::<f64>::identity(l, l) * FACTOR_JITTER;
            match Cholesky::new(shifted) {
                Some(c) => (c, true),
                None => {
                    return Err(Error::Factorization(
                        "non-positive pivot; training set likely holds duplicated patterns".into(),
                    ))
                }
            }
        }
    };
    let raw = chol.inverse();
    let inverse = (&raw + raw.transpose()) * 0.5;
    if inverse.iter().any(|v| !v.is_finite()) {
        return Err(Error::Factorization(
            "inverse has non-finite entries".into(),
        ));
    }
    Ok(FactorizedInverse {
        chol,
        inverse,
        jittered,
    })
}

/// RBF exponents and nonnegative convex weights of a multiple-kernel matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MklCombo {
    pub gammas: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MklCombo {
    pub fn new(gammas: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let combo = MklCombo { gammas, weights };
        combo.validate()?;
        Ok(combo)
    }

    fn validate(&self) -> Result<()> {
        if self.gammas.is_empty() || self.gammas.len() > MAX_MKL_COMPONENTS {
            return Err(Error::input(format!(
                "MKL needs 1..={MAX_MKL_COMPONENTS} components, got {}",
                self.gammas.len()
            )));
        }
        if self.gammas.len() != self.weights.len() {
            return Err(Error::input("MKL gamma/weight length mismatch"));
        }
        if self.gammas.iter().any(|g| !(*g > 0.0)) {
            return Err(Error::input("MKL gammas must be positive"));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::input("MKL weights must be nonnegative"));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::input(format!(
                "MKL weights sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

/// The first `n` values of the exponent grid `1e-4, 1e-3, ..., 1e5`.
pub fn mkl_gamma_grid(n: usize) -> Result<Vec<f64>> {
    if n == 0 || n > MAX_MKL_COMPONENTS {
        return Err(Error::input(format!(
            "component count must be in 1..={MAX_MKL_COMPONENTS}, got {n}"
        )));
    }
    Ok((0..n).map(|i| 10f64.powi(i as i32 - 4)).collect())
}

/// Centered kernel-target alignment `<K_c, yy'>_F / |K_c|_F`, where
/// `K_c = H K H` and `H` is the centering projector.
pub fn centered_alignment(k: &GramMatrix, y: &[f64]) -> f64 {
    let l = k.size();
    let n = l as f64;
    let row_mean: Vec<f64> = (0..l).map(|i| k.col(i).iter().sum::<f64>() / n).collect();
    let total = row_mean.iter().sum::<f64>() / n;
    let mut inner = 0.0;
    let mut norm2 = 0.0;
    for j in 0..l {
        let col = k.col(j);
        for i in 0..l {
            let c = col[i] - row_mean[i] - row_mean[j] + total;
            inner += c * y[i] * y[j];
            norm2 += c * c;
        }
    }
    if norm2 <= 0.0 {
        0.0
    } else {
        inner / norm2.sqrt()
    }
}

const ALIGNMENT_FLOOR: f64 = 1e-9;

/// Heuristic combination weights: clipped centered alignments normalized to
/// sum 1, or uniform weights when no component aligns positively.
pub fn mkl_weights(components: &[GramMatrix], y: &[f64]) -> Result<Vec<f64>> {
    if components.is_empty() || components.len() > MAX_MKL_COMPONENTS {
        return Err(Error::input(format!(
            "MKL needs 1..={MAX_MKL_COMPONENTS} components, got {}",
            components.len()
        )));
    }
    let l = components[0].size();
    if components.iter().any(|c| c.size() != l) || y.len() != l {
        return Err(Error::input("MKL components and labels differ in size"));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::input("MKL weights need labels in {-1, +1}"));
    }
    let scores: Vec<f64> = components
        .iter()
        .map(|k| {
            // round-off-level alignments count as zero so the weights do not
            // depend on summation order
            let a = centered_alignment(k, y);
            if a > ALIGNMENT_FLOOR {
                a
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = scores.iter().sum();
    let n = components.len() as f64;
    if !(total > 0.0) {
        return Ok(vec![1.0 / n; components.len()]);
    }
    let mut w: Vec<f64> = scores.iter().map(|s| s / total).collect();
    // push the rounding residue onto the largest weight so the sum is 1
    let resid = 1.0 - w.iter().sum::<f64>();
    let imax = (0..w.len())
        .max_by(|&a, &b| w[a].total_cmp(&w[b]))
        .unwrap_or(0);
    w[imax] += resid;
    Ok(w)
}

pub fn mkl_combine(components: &[GramMatrix], weights: &[f64]) -> Result<GramMatrix> {
    if components.len() != weights.len() {
        return Err(Error::input(format!(
            "{} components but {} weights",
            components.len(),
            weights.len()
        )));
    }
    let gammas = components
        .iter()
        .map(|c| {
            c.gamma()
                .ok_or_else(|| Error::input("MKL components must be single-RBF matrices"))
        })
        .collect::<Result<Vec<_>>>()?;
    let combo = MklCombo::new(gammas, weights.to_vec())?;
    let l = components[0].size();
    if components.iter().any(|c| c.size() != l) {
        return Err(Error::input("MKL components differ in size"));
    }
    let mut mat = DMatrix::zeros(l, l);
    for (c, &w) in components.iter().zip(weights) {
        mat += &c.mat * w;
    }
    Ok(GramMatrix {
        spec: KernelSpec::Mkl(combo),
        mat,
    })
}

/// Builds the `n`-component MKL matrix over `x` with alignment weights for `y`.
pub fn build_mkl(x: &FeatureMatrix, y: &[f64], n: usize) -> Result<GramMatrix> {
    let components = mkl_gamma_grid(n)?
        .into_iter()
        .map(|g| build_gram(x, g))
        .collect::<Result<Vec<_>>>()?;
    let w = mkl_weights(&components, y)?;
    mkl_combine(&components, &w)
}
