//! Structured matrix signals: column-wise sparse, l1-column-flat matrices
//! and their sparsity patterns.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::rng_from_seed;

/// Dense square matrix signal with cached per-column l1 norms.
///
/// Entries are validated to be finite on construction and the value is
/// immutable afterwards, so the cache never goes stale.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixSignal {
    entries: DMatrix<f64>,
    col_l1: Vec<f64>,
}

impl MatrixSignal {
    pub fn new(entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(CoreError::Dimension(format!(
                "signal must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(CoreError::Parameter(
                "signal entries must be finite".into(),
            ));
        }
        let col_l1 = column_l1_norms(&entries);
        Ok(Self { entries, col_l1 })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: DMatrix::zeros(n, n),
            col_l1: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity is finite")
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(CoreError::Dimension("ragged row data".into()));
        }
        let entries = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(entries)
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    /// Cached l1 norm of column `j`.
    pub fn col_l1(&self, j: usize) -> f64 {
        self.col_l1[j]
    }

    pub fn col_l1_norms(&self) -> &[f64] {
        &self.col_l1
    }

    pub fn norm_fro(&self) -> f64 {
        self.entries.norm()
    }
}

impl std::ops::Index<(usize, usize)> for MatrixSignal {
    type Output = f64;
    fn index(&self, ij: (usize, usize)) -> &f64 {
        &self.entries[ij]
    }
}

pub(crate) fn column_l1_norms(m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum())
        .collect()
}

/// Per-column support sets with a declared maximum size `s`.
///
/// Indices are 0-based internally and in serialized output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityPattern {
    column_supports: Vec<Vec<usize>>,
    s: usize,
}

impl SparsityPattern {
    pub fn new(column_supports: Vec<Vec<usize>>, s: usize) -> Result<Self> {
        let n = column_supports.len();
        let mut sorted = Vec::with_capacity(n);
        for (j, sup) in column_supports.into_iter().enumerate() {
            let mut sup = sup;
            sup.sort_unstable();
            if sup.windows(2).any(|w| w[0] == w[1]) {
                return Err(CoreError::Parameter(format!(
                    "duplicate index in support of column {j}"
                )));
            }
            if sup.iter().any(|&i| i >= n) {
                return Err(CoreError::Parameter(format!(
                    "support index out of range in column {j}"
                )));
            }
            if sup.len() > s {
                return Err(CoreError::Parameter(format!(
                    "column {j} support size {} exceeds s = {s}",
                    sup.len()
                )));
            }
            sorted.push(sup);
        }
        Ok(Self {
            column_supports: sorted,
            s,
        })
    }

    /// Pattern with `s` set to the largest observed support size.
    pub fn from_supports(column_supports: Vec<Vec<usize>>) -> Result<Self> {
        let s = column_supports.iter().map(|c| c.len()).max().unwrap_or(0);
        Self::new(column_supports, s)
    }

    pub fn full(n: usize) -> Self {
        Self {
            column_supports: vec![(0..n).collect(); n],
            s: n,
        }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            column_supports: vec![Vec::new(); n],
            s: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.column_supports.len()
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn support(&self, j: usize) -> &[usize] {
        &self.column_supports[j]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.column_supports[j].binary_search(&i).is_ok()
    }

    /// Total number of indexed entries.
    pub fn size(&self) -> usize {
        self.column_supports.iter().map(|c| c.len()).sum()
    }

    /// Canonical coordinate order: by column, then by row.
    pub fn coords(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.size());
        for (j, sup) in self.column_supports.iter().enumerate() {
            for &i in sup {
                out.push((i, j));
            }
        }
        out
    }

    pub fn complement(&self) -> SparsityPattern {
        let n = self.n();
        let supports: Vec<Vec<usize>> = (0..n)
            .map(|j| (0..n).filter(|&i| !self.contains(i, j)).collect())
            .collect();
        let s = supports.iter().map(|c| c.len()).max().unwrap_or(0);
        SparsityPattern {
            column_supports: supports,
            s,
        }
    }
}

/// Generate a column-wise `s`-sparse signal with exactly `r` columns of
/// maximal (unit) l1 norm; the remaining columns stay below `1 - min_gap`.
///
/// Nonzero magnitudes are drawn as |N(0,1)| + 0.1 with random signs, then
/// each column is rescaled to its target norm. Deterministic per seed.
pub fn gen_sparse_flat_signal(
    n: usize,
    s: usize,
    r: usize,
    seed: u64,
    min_gap: f64,
) -> Result<MatrixSignal> {
    if n == 0 || s == 0 || s > n {
        return Err(CoreError::Parameter(format!(
            "need 1 <= s <= n, got n = {n}, s = {s}"
        )));
    }
    if r == 0 || r > n {
        return Err(CoreError::Parameter(format!(
            "need 1 <= r <= n, got r = {r}"
        )));
    }
    if !(min_gap > 0.0 && min_gap < 1.0) {
        return Err(CoreError::Parameter(format!(
            "need min_gap in (0,1), got {min_gap}"
        )));
    }
    let mut rng = rng_from_seed(seed);

    let mut maximal: Vec<usize> = (0..n).collect();
    maximal.shuffle(&mut rng);
    maximal.truncate(r);
    let mut is_max = vec![false; n];
    for &j in &maximal {
        is_max[j] = true;
    }

    let mut entries = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut rows: Vec<usize> = (0..n).collect();
        rows.shuffle(&mut rng);
        rows.truncate(s);
        let mut col_sum = 0.0;
        let mut vals = Vec::with_capacity(s);
        for _ in 0..s {
            let mag: f64 = {
                let g: f64 = StandardNormal.sample(&mut rng);
                g.abs() + 0.1
            };
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            vals.push(sign * mag);
            col_sum += mag;
        }
        let target = if is_max[j] {
            1.0
        } else {
            (1.0 - min_gap) * rng.gen_range(0.5..=1.0)
        };
        let scale = target / col_sum;
        for (&i, &v) in rows.iter().zip(vals.iter()) {
            entries[(i, j)] = v * scale;
        }
    }
    MatrixSignal::new(entries)
}

/// |v|_1 minus the sum of the `s` largest absolute entries.
pub fn sigma_s_tail(v: &[f64], s: usize) -> f64 {
    if s >= v.len() {
        return 0.0;
    }
    let mut mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    mags.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    mags[s..].iter().sum()
}

/// max_j |x_j|_1 - min_j |x_j|_1; zero exactly when the signal is flat.
pub fn flatness_defect(x: &MatrixSignal) -> f64 {
    let norms = x.col_l1_norms();
    if norms.is_empty() {
        return 0.0;
    }
    let max = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

/// Entries with magnitude above `tol` per column; `s` is the largest
/// observed support size.
pub fn support_pattern(x: &MatrixSignal, tol: f64) -> SparsityPattern {
    let n = x.n();
    let supports: Vec<Vec<usize>> = (0..n)
        .map(|j| (0..n).filter(|&i| x[(i, j)].abs() > tol).collect())
        .collect();
    SparsityPattern::from_supports(supports).expect("valid by construction")
}

/// X_S (entries outside the pattern zeroed) or X_{-S} when `complement`.
pub fn restrict_to_pattern(
    x: &MatrixSignal,
    pattern: &SparsityPattern,
    complement: bool,
) -> Result<MatrixSignal> {
    if pattern.n() != x.n() {
        return Err(CoreError::Dimension(format!(
            "pattern is for n = {}, signal has n = {}",
            pattern.n(),
            x.n()
        )));
    }
    Ok(MatrixSignal::new(mask_matrix(x.entries(), pattern, complement))
        .expect("masking preserves finiteness"))
}

/// Same masking on a raw matrix; used by operator internals and tests.
pub fn mask_matrix(
    z: &DMatrix<f64>,
    pattern: &SparsityPattern,
    complement: bool,
) -> DMatrix<f64> {
    DMatrix::from_fn(z.nrows(), z.ncols(), |i, j| {
        let inside = pattern.contains(i, j);
        if inside != complement {
            z[(i, j)]
        } else {
            0.0
        }
    })
}
