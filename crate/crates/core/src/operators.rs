//! Measurement operators: dense random maps, Kronecker-factored maps
//! A Z B^T and sums of them, with adjoints, support restrictions and the
//! pseudo-inverse of the restricted operator.
//!
//! Measurements are carried as flat vectors; a Kronecker operator of side
//! m yields length m^2 (column-major layout of the m-by-m measurement
//! matrix), so the l2 norm of the vector is the Frobenius norm of the
//! matrix form.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::rng::{rng_from_seed, Dist};
use crate::signal::{mask_matrix, MatrixSignal, SparsityPattern};

/// Size guard for materializing Kronecker operators as dense matrices.
pub const MATERIALIZE_GUARD_N: usize = 8;

/// Scale-invariant singularity threshold for Gram matrices.
pub const GRAM_BIJECTIVITY_RTOL: f64 = 1e-10;

#[derive(Debug, Clone)]
enum OpKind {
    /// Dense payload of shape m x n^2 acting on vectorized signals.
    Dense { payload: DMatrix<f64> },
    /// Z -> A Z B^T with factors of shape m x n.
    Kronecker { a: DMatrix<f64>, b: DMatrix<f64> },
    /// Z -> sum_mu A_mu Z B_mu^T.
    SumKronecker { factors: Vec<(DMatrix<f64>, DMatrix<f64>)> },
}

/// Linear map from n x n matrices to a measurement vector.
#[derive(Debug, Clone)]
pub struct MeasurementOp {
    kind: OpKind,
    n: usize,
    /// Dense: m. Kronecker kinds: the side m (measurement count m^2).
    m_side: usize,
    dist: Option<Dist>,
    seed: Option<u64>,
}

/// Reconstruction recipe recorded by the experiment harness.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpDescriptor {
    pub kind: String,
    pub n: usize,
    pub m: usize,
    pub dist: Option<Dist>,
    pub seed: Option<u64>,
}

impl MeasurementOp {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Length of the measurement vector.
    pub fn meas_dim(&self) -> usize {
        match self.kind {
            OpKind::Dense { .. } => self.m_side,
            _ => self.m_side * self.m_side,
        }
    }

    /// Dense: number of rows. Kronecker kinds: the side m.
    pub fn m_side(&self) -> usize {
        self.m_side
    }

    pub fn kind_tag(&self) -> &'static str {
        match self.kind {
            OpKind::Dense { .. } => "dense",
            OpKind::Kronecker { .. } => "kronecker",
            OpKind::SumKronecker { .. } => "sum_kronecker",
        }
    }

    pub fn dist(&self) -> Option<Dist> {
        self.dist
    }

    /// psi2 scale of the entry distribution, when one was recorded.
    pub fn psi2(&self) -> Option<f64> {
        self.dist.map(Dist::psi2)
    }

    pub fn descriptor(&self) -> OpDescriptor {
        OpDescriptor {
            kind: self.kind_tag().to_string(),
            n: self.n,
            m: self.m_side,
            dist: self.dist,
            seed: self.seed,
        }
    }

    pub fn apply_mat(&self, z: &DMatrix<f64>) -> DVector<f64> {
        debug_assert_eq!(z.nrows(), self.n);
        match &self.kind {
            OpKind::Dense { payload } => {
                let v = DVector::from_column_slice(z.as_slice());
                payload * v
            }
            OpKind::Kronecker { a, b } => {
                let y = a * z * b.transpose();
                DVector::from_column_slice(y.as_slice())
            }
            OpKind::SumKronecker { factors } => {
                let m = self.m_side;
                let mut y = DMatrix::<f64>::zeros(m, m);
                for (a, b) in factors {
                    y += a * z * b.transpose();
                }
                DVector::from_column_slice(y.as_slice())
            }
        }
    }

    pub fn adjoint_vec(&self, w: &DVector<f64>) -> DMatrix<f64> {
        debug_assert_eq!(w.len(), self.meas_dim());
        match &self.kind {
            OpKind::Dense { payload } => {
                let v = payload.transpose() * w;
                DMatrix::from_column_slice(self.n, self.n, v.as_slice())
            }
            OpKind::Kronecker { a, b } => {
                let m = self.m_side;
                let y = DMatrix::from_column_slice(m, m, w.as_slice());
                a.transpose() * y * b
            }
            OpKind::SumKronecker { factors } => {
                let m = self.m_side;
                let y = DMatrix::from_column_slice(m, m, w.as_slice());
                let mut out = DMatrix::<f64>::zeros(self.n, self.n);
                for (a, b) in factors {
                    out += a.transpose() * &y * b;
                }
                out
            }
        }
    }

    /// Measurement reshaped as an m x m matrix (Kronecker kinds only).
    pub fn measurement_as_matrix(&self, w: &DVector<f64>) -> Option<DMatrix<f64>> {
        match self.kind {
            OpKind::Dense { .. } => None,
            _ => Some(DMatrix::from_column_slice(
                self.m_side,
                self.m_side,
                w.as_slice(),
            )),
        }
    }

    /// Dense matrix representation acting on vectorized signals.
    ///
    /// Kronecker kinds are only materialized under the debug size guard;
    /// vec(A Z B^T) = (B kron A) vec(Z) in column-major layout.
    pub fn materialize(&self) -> Result<DMatrix<f64>> {
        match &self.kind {
            OpKind::Dense { payload } => Ok(payload.clone()),
            OpKind::Kronecker { a, b } => {
                self.check_guard()?;
                Ok(b.kronecker(a))
            }
            OpKind::SumKronecker { factors } => {
                self.check_guard()?;
                let mut out = DMatrix::zeros(self.meas_dim(), self.n * self.n);
                for (a, b) in factors {
                    out += b.kronecker(a);
                }
                Ok(out)
            }
        }
    }

    fn check_guard(&self) -> Result<()> {
        if self.n > MATERIALIZE_GUARD_N {
            return Err(CoreError::SizeGuard(format!(
                "kronecker materialization limited to n <= {MATERIALIZE_GUARD_N}, got n = {}",
                self.n
            )));
        }
        Ok(())
    }

    /// Largest eigenvalue of the normal operator, by power iteration.
    pub fn normal_opnorm_bound(&self, iters: usize, rel_tol: f64) -> f64 {
        let n = self.n;
        let mut rng = rng_from_seed(0x90E7);
        let mut v = DMatrix::from_fn(n, n, |_, _| Dist::Gaussian.sample(&mut rng));
        let mut norm = v.norm();
        if norm == 0.0 {
            return 1.0;
        }
        v /= norm;
        let mut lambda = 0.0;
        for _ in 0..iters.max(1) {
            let w = self.adjoint_vec(&self.apply_mat(&v));
            norm = w.norm();
            if norm == 0.0 {
                return 0.0;
            }
            let new_lambda = v.dot(&w);
            let next = w / norm;
            let done = (new_lambda - lambda).abs() <= rel_tol * new_lambda.abs().max(1e-300);
            v = next;
            lambda = new_lambda;
            if done {
                break;
            }
        }
        // Safety factor keeps the proximal step valid if the iteration
        // stopped slightly short of the true maximum.
        lambda.abs() * 1.02
    }
}

/// Dense operator with iid entries of the chosen distribution.
pub fn make_dense(m: usize, n: usize, dist: Dist, seed: u64) -> Result<MeasurementOp> {
    if m == 0 || n == 0 {
        return Err(CoreError::Parameter(format!(
            "need m >= 1 and n >= 1, got m = {m}, n = {n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let payload = DMatrix::from_fn(m, n * n, |_, _| dist.sample(&mut rng));
    Ok(MeasurementOp {
        kind: OpKind::Dense { payload },
        n,
        m_side: m,
        dist: Some(dist),
        seed: Some(seed),
    })
}

/// Dense operator wrapping an explicit payload (testing harness).
pub fn from_payload(payload: DMatrix<f64>, n: usize) -> Result<MeasurementOp> {
    if payload.ncols() != n * n {
        return Err(CoreError::Dimension(format!(
            "payload must have n^2 = {} columns, got {}",
            n * n,
            payload.ncols()
        )));
    }
    if payload.iter().any(|x| !x.is_finite()) {
        return Err(CoreError::Parameter("payload must be finite".into()));
    }
    let m = payload.nrows();
    Ok(MeasurementOp {
        kind: OpKind::Dense { payload },
        n,
        m_side: m,
        dist: None,
        seed: None,
    })
}

/// The identity operator (vectorization), m = n^2.
pub fn identity_op(n: usize) -> MeasurementOp {
    from_payload(DMatrix::identity(n * n, n * n), n).expect("identity payload is valid")
}

/// Z -> A Z B^T from explicit factors of shape m x n.
pub fn make_kronecker(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<MeasurementOp> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(CoreError::Dimension(format!(
            "factor shapes must agree, got {}x{} and {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let (m, n) = (a.nrows(), a.ncols());
    Ok(MeasurementOp {
        kind: OpKind::Kronecker { a, b },
        n,
        m_side: m,
        dist: None,
        seed: None,
    })
}

/// Random Kronecker operator with iid factor entries.
pub fn make_kronecker_random(m: usize, n: usize, dist: Dist, seed: u64) -> Result<MeasurementOp> {
    if m == 0 || n == 0 {
        return Err(CoreError::Parameter(format!(
            "need m >= 1 and n >= 1, got m = {m}, n = {n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let a = DMatrix::from_fn(m, n, |_, _| dist.sample(&mut rng));
    let b = DMatrix::from_fn(m, n, |_, _| dist.sample(&mut rng));
    let mut op = make_kronecker(a, b)?;
    op.dist = Some(dist);
    op.seed = Some(seed);
    Ok(op)
}

/// Random sum of Kronecker terms with iid factor entries.
pub fn make_sum_kronecker_random(
    terms: usize,
    m: usize,
    n: usize,
    dist: Dist,
    seed: u64,
) -> Result<MeasurementOp> {
    if terms == 0 {
        return Err(CoreError::Parameter("need at least one term".into()));
    }
    if m == 0 || n == 0 {
        return Err(CoreError::Parameter(format!(
            "need m >= 1 and n >= 1, got m = {m}, n = {n}"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let factors = (0..terms)
        .map(|_| {
            let a = DMatrix::from_fn(m, n, |_, _| dist.sample(&mut rng));
            let b = DMatrix::from_fn(m, n, |_, _| dist.sample(&mut rng));
            (a, b)
        })
        .collect();
    let mut op = make_sum_kronecker(factors)?;
    op.dist = Some(dist);
    op.seed = Some(seed);
    Ok(op)
}

/// Z -> sum_mu A_mu Z B_mu^T.
pub fn make_sum_kronecker(factors: Vec<(DMatrix<f64>, DMatrix<f64>)>) -> Result<MeasurementOp> {
    let Some((a0, _)) = factors.first() else {
        return Err(CoreError::Parameter("factor list must be nonempty".into()));
    };
    let (m, n) = (a0.nrows(), a0.ncols());
    for (a, b) in &factors {
        if a.nrows() != m || a.ncols() != n || b.nrows() != m || b.ncols() != n {
            return Err(CoreError::Dimension(
                "all factor pairs must share the same shape".into(),
            ));
        }
    }
    Ok(MeasurementOp {
        kind: OpKind::SumKronecker { factors },
        n,
        m_side: m,
        dist: None,
        seed: None,
    })
}

/// Operator restricted to a sparsity pattern: apply(Z) = base.apply(Z_S).
#[derive(Debug, Clone)]
pub struct RestrictedOp {
    base: MeasurementOp,
    pattern: SparsityPattern,
}

impl RestrictedOp {
    pub fn base(&self) -> &MeasurementOp {
        &self.base
    }

    pub fn pattern(&self) -> &SparsityPattern {
        &self.pattern
    }

    pub fn apply_mat(&self, z: &DMatrix<f64>) -> DVector<f64> {
        self.base.apply_mat(&mask_matrix(z, &self.pattern, false))
    }

    /// Adjoint; its support is always inside the pattern.
    pub fn adjoint_vec(&self, w: &DVector<f64>) -> DMatrix<f64> {
        mask_matrix(&self.base.adjoint_vec(w), &self.pattern, false)
    }
}

pub fn restrict_op(op: &MeasurementOp, pattern: &SparsityPattern) -> Result<RestrictedOp> {
    if pattern.n() != op.n() {
        return Err(CoreError::Dimension(format!(
            "pattern is for n = {}, operator has n = {}",
            pattern.n(),
            op.n()
        )));
    }
    Ok(RestrictedOp {
        base: op.clone(),
        pattern: pattern.clone(),
    })
}

/// Unified apply for either operator flavor.
pub fn apply(op: &MeasurementOp, z: &MatrixSignal) -> Result<DVector<f64>> {
    if z.n() != op.n() {
        return Err(CoreError::Dimension(format!(
            "signal n = {} does not match operator n = {}",
            z.n(),
            op.n()
        )));
    }
    Ok(op.apply_mat(z.entries()))
}

pub fn adjoint(op: &MeasurementOp, w: &DVector<f64>) -> Result<MatrixSignal> {
    if w.len() != op.meas_dim() {
        return Err(CoreError::Dimension(format!(
            "measurement length {} does not match operator dim {}",
            w.len(),
            op.meas_dim()
        )));
    }
    MatrixSignal::new(op.adjoint_vec(w))
}

/// The basis columns phi_(i,j) = apply(E_ij) for (i,j) in the pattern's
/// canonical coordinate order.
pub fn restricted_columns(op: &MeasurementOp, pattern: &SparsityPattern) -> DMatrix<f64> {
    let coords = pattern.coords();
    let mut cols = DMatrix::zeros(op.meas_dim(), coords.len());
    let mut basis = DMatrix::zeros(op.n(), op.n());
    for (c, &(i, j)) in coords.iter().enumerate() {
        basis[(i, j)] = 1.0;
        cols.set_column(c, &op.apply_mat(&basis));
        basis[(i, j)] = 0.0;
    }
    cols
}

/// Gram matrix of the operator on the pattern's coordinate space, with
/// its spectrum summary and a scale-invariant bijectivity flag.
#[derive(Debug, Clone)]
pub struct GramInfo {
    pub matrix: DMatrix<f64>,
    pub coords: Vec<(usize, usize)>,
    pub min_eig: f64,
    pub max_eig: f64,
    pub bijective: bool,
}

pub fn normal_matrix(op: &MeasurementOp, pattern: &SparsityPattern) -> Result<GramInfo> {
    if pattern.n() != op.n() {
        return Err(CoreError::Dimension(
            "pattern dimension does not match operator".into(),
        ));
    }
    if pattern.size() == 0 {
        return Err(CoreError::Parameter("pattern must be nonempty".into()));
    }
    let cols = restricted_columns(op, pattern);
    let gram = cols.transpose() * &cols;
    // Symmetrize away round-off before the eigendecomposition.
    let gram = (&gram + gram.transpose()) * 0.5;
    let eig = gram.clone().symmetric_eigen();
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_eig = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    Ok(GramInfo {
        matrix: gram,
        coords: pattern.coords(),
        min_eig,
        max_eig,
        bijective: min_eig > GRAM_BIJECTIVITY_RTOL * max_eig.max(1e-300),
    })
}

/// Y* = (Phi_S^T Phi_S)^{-1} Phi_S^T y, the least-squares signal on the
/// pattern space.
pub fn pseudo_inverse_apply(
    op: &MeasurementOp,
    pattern: &SparsityPattern,
    y: &DVector<f64>,
) -> Result<MatrixSignal> {
    if y.len() != op.meas_dim() {
        return Err(CoreError::Dimension(
            "measurement length does not match operator".into(),
        ));
    }
    let gram = normal_matrix(op, pattern)?;
    if !gram.bijective {
        return Err(CoreError::Singular {
            min_eig: gram.min_eig,
            max_eig: gram.max_eig,
        });
    }
    let cols = restricted_columns(op, pattern);
    let rhs = cols.transpose() * y;
    let chol = gram
        .matrix
        .clone()
        .cholesky()
        .ok_or(CoreError::Singular {
            min_eig: gram.min_eig,
            max_eig: gram.max_eig,
        })?;
    let u = chol.solve(&rhs);
    let n = op.n();
    let mut out = DMatrix::zeros(n, n);
    for (c, &(i, j)) in gram.coords.iter().enumerate() {
        out[(i, j)] = u[c];
    }
    MatrixSignal::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::sample_seed;
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn random_signal(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(&mut rng))
    }

    fn random_vec(len: usize, seed: u64) -> DVector<f64> {
        let mut rng = rng_from_seed(seed);
        DVector::from_fn(len, |_, _| StandardNormal.sample(&mut rng))
    }

    fn pairing_gap(op: &MeasurementOp, seed: u64) -> f64 {
        let z = random_signal(op.n(), seed);
        let w = random_vec(op.meas_dim(), seed ^ 0xA5A5);
        let lhs = op.apply_mat(&z).dot(&w);
        let rhs = z.dot(&op.adjoint_vec(&w));
        (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)
    }

    #[test]
    fn identity_operator_is_vectorization() {
        let op = identity_op(3);
        let z = random_signal(3, 1);
        let y = op.apply_mat(&z);
        assert_eq!(y.as_slice(), z.as_slice());
        let back = op.adjoint_vec(&y);
        assert_abs_diff_eq!((&back - &z).norm(), 0.0);
    }

    #[test]
    fn dense_is_deterministic_per_seed() {
        let a = make_dense(3, 2, Dist::Gaussian, 1).unwrap();
        let b = make_dense(3, 2, Dist::Gaussian, 1).unwrap();
        let z = random_signal(2, 9);
        assert_eq!(a.apply_mat(&z), b.apply_mat(&z));
    }

    #[test]
    fn dense_apply_matches_payload_times_vec() {
        let op = make_dense(4, 3, Dist::Uniform, 5).unwrap();
        let z = random_signal(3, 7);
        let payload = op.materialize().unwrap();
        let expect = &payload * DVector::from_column_slice(z.as_slice());
        assert_abs_diff_eq!((op.apply_mat(&z) - expect).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kronecker_identity_factors() {
        let op = make_kronecker(DMatrix::identity(3, 3), DMatrix::identity(3, 3)).unwrap();
        let z = random_signal(3, 2);
        let y = op.measurement_as_matrix(&op.apply_mat(&z)).unwrap();
        assert_abs_diff_eq!((&y - &z).norm(), 0.0);
    }

    #[test]
    fn kronecker_componentwise_against_triple_loop() {
        let mut rng = rng_from_seed(31);
        let m = 3;
        let n = 2;
        let a = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
        let b = DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(&mut rng));
        let z = random_signal(n, 17);
        let op = make_kronecker(a.clone(), b.clone()).unwrap();
        let y = op.measurement_as_matrix(&op.apply_mat(&z)).unwrap();
        for k in 0..m {
            for l in 0..m {
                let mut acc = 0.0;
                for i in 0..n {
                    for j in 0..n {
                        acc += a[(k, i)] * z[(i, j)] * b[(l, j)];
                    }
                }
                assert_abs_diff_eq!(y[(k, l)], acc, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn adjoint_pairing_all_kinds() {
        let dense = make_dense(5, 3, Dist::Gaussian, 3).unwrap();
        let kron = make_kronecker_random(2, 3, Dist::Rademacher, 4).unwrap();
        let sum = make_sum_kronecker(vec![
            (random_signal(3, 8).resize(2, 3, 0.0), random_signal(3, 9).resize(2, 3, 0.0)),
            (random_signal(3, 10).resize(2, 3, 0.0), random_signal(3, 11).resize(2, 3, 0.0)),
        ])
        .unwrap();
        for op in [&dense, &kron, &sum] {
            for probe in 0..20u64 {
                assert!(pairing_gap(op, sample_seed(100, probe)) <= 1e-12);
            }
        }
    }

    #[test]
    fn sum_kronecker_examples() {
        let id = DMatrix::identity(3, 3);
        let single = make_sum_kronecker(vec![(id.clone(), id.clone())]).unwrap();
        let pair = make_sum_kronecker(vec![(id.clone(), id.clone()), (id.clone(), id.clone())])
            .unwrap();
        let z = random_signal(3, 12);
        let y1 = single.apply_mat(&z);
        let y2 = pair.apply_mat(&z);
        assert_abs_diff_eq!((&y2 - &y1 * 2.0).norm(), 0.0, epsilon = 1e-12);

        let kron = make_kronecker(id.clone(), id).unwrap();
        assert_abs_diff_eq!((y1 - kron.apply_mat(&z)).norm(), 0.0);
        assert!(make_sum_kronecker(vec![]).is_err());
    }

    #[test]
    fn apply_linearity_and_zero() {
        let op = make_dense(4, 3, Dist::Gaussian, 20).unwrap();
        assert_abs_diff_eq!(op.apply_mat(&DMatrix::zeros(3, 3)).norm(), 0.0);
        let z1 = random_signal(3, 21);
        let z2 = random_signal(3, 22);
        let lhs = op.apply_mat(&(&z1 + &z2));
        let rhs = op.apply_mat(&z1) + op.apply_mat(&z2);
        assert!((lhs - rhs).norm() <= 1e-12 * z1.norm().max(1.0));
    }

    #[test]
    fn restricted_op_masks_consistently() {
        let op = make_dense(5, 3, Dist::Gaussian, 33).unwrap();
        let pat = SparsityPattern::from_supports(vec![vec![0], vec![2], vec![]]).unwrap();
        let r = restrict_op(&op, &pat).unwrap();
        let z = random_signal(3, 40);
        let masked = mask_matrix(&z, &pat, false);
        assert_abs_diff_eq!(
            (r.apply_mat(&z) - op.apply_mat(&masked)).norm(),
            0.0
        );
        // Adjoint support stays inside the pattern.
        let w = random_vec(5, 41);
        let adj = r.adjoint_vec(&w);
        for i in 0..3 {
            for j in 0..3 {
                if !pat.contains(i, j) {
                    assert_eq!(adj[(i, j)], 0.0);
                }
            }
        }
        // Full pattern behaves like the base op; empty pattern gives zero.
        let full = restrict_op(&op, &SparsityPattern::full(3)).unwrap();
        assert_abs_diff_eq!((full.apply_mat(&z) - op.apply_mat(&z)).norm(), 0.0);
        let empty = restrict_op(&op, &SparsityPattern::empty(3)).unwrap();
        assert_abs_diff_eq!(empty.apply_mat(&z).norm(), 0.0);
    }

    #[test]
    fn restriction_is_idempotent() {
        let op = make_dense(4, 3, Dist::Gaussian, 50).unwrap();
        let pat = SparsityPattern::from_supports(vec![vec![1], vec![0, 2], vec![]]).unwrap();
        let once = restrict_op(&op, &pat).unwrap();
        let z = random_signal(3, 51);
        let z_masked = mask_matrix(&z, &pat, false);
        assert_abs_diff_eq!(
            (once.apply_mat(&z) - once.apply_mat(&z_masked)).norm(),
            0.0
        );
    }

    #[test]
    fn gram_of_identity_is_identity() {
        let op = identity_op(3);
        let pat = SparsityPattern::from_supports(vec![vec![0, 1], vec![2], vec![]]).unwrap();
        let g = normal_matrix(&op, &pat).unwrap();
        assert_abs_diff_eq!(
            (&g.matrix - DMatrix::identity(3, 3)).norm(),
            0.0,
            epsilon = 1e-12
        );
        assert!(g.bijective);
        assert_abs_diff_eq!(g.min_eig, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn gram_matches_explicit_loop() {
        let op = make_dense(4, 2, Dist::Gaussian, 61).unwrap();
        let pat = SparsityPattern::from_supports(vec![vec![0], vec![1]]).unwrap();
        let g = normal_matrix(&op, &pat).unwrap();
        assert!((&g.matrix - g.matrix.transpose()).abs().max() <= 1e-12);
        let payload = op.materialize().unwrap();
        // Explicit sum over measurement rows for each coordinate pair.
        let coords = pat.coords();
        for (a, &(i, j)) in coords.iter().enumerate() {
            for (b, &(p, q)) in coords.iter().enumerate() {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += payload[(k, j * 2 + i)] * payload[(k, q * 2 + p)];
                }
                assert_abs_diff_eq!(g.matrix[(a, b)], acc, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pseudo_inverse_recovers_consistent_data() {
        let op = make_dense(7, 3, Dist::Gaussian, 71).unwrap();
        let pat = SparsityPattern::from_supports(vec![vec![0, 2], vec![1], vec![2]]).unwrap();
        let x = mask_matrix(&random_signal(3, 72), &pat, false);
        let y = op.apply_mat(&x);
        let rec = pseudo_inverse_apply(&op, &pat, &y).unwrap();
        assert!((rec.entries() - &x).norm() <= 1e-10 * x.norm().max(1.0));

        // Residual of the normal equations on random data.
        let y = random_vec(7, 73);
        let sol = pseudo_inverse_apply(&op, &pat, &y).unwrap();
        let resid = op.adjoint_vec(&(op.apply_mat(sol.entries()) - &y));
        let masked = mask_matrix(&resid, &pat, false);
        assert!(masked.norm() <= 1e-9 * y.norm().max(1.0));
    }

    #[test]
    fn pseudo_inverse_reports_singularity() {
        // One measurement cannot separate two coordinates.
        let op = make_dense(1, 2, Dist::Gaussian, 80).unwrap();
        let pat = SparsityPattern::from_supports(vec![vec![0, 1], vec![]]).unwrap();
        match pseudo_inverse_apply(&op, &pat, &random_vec(1, 81)) {
            Err(CoreError::Singular { min_eig, .. }) => assert!(min_eig >= 0.0 || min_eig.is_nan()),
            other => panic!("expected singularity error, got {other:?}"),
        }
    }

    #[test]
    fn kronecker_materialization_guarded() {
        let op = make_kronecker_random(2, 9, Dist::Gaussian, 90).unwrap();
        assert!(matches!(op.materialize(), Err(CoreError::SizeGuard(_))));
        let small = make_kronecker_random(2, 4, Dist::Gaussian, 91).unwrap();
        let mat = small.materialize().unwrap();
        let z = random_signal(4, 92);
        let via_mat = &mat * DVector::from_column_slice(z.as_slice());
        assert!((small.apply_mat(&z) - via_mat).norm() <= 1e-12);
    }

    #[test]
    fn entry_moments_match_declared_distributions() {
        let op = make_dense(100, 10, Dist::Gaussian, 7).unwrap();
        let payload = op.materialize().unwrap();
        let n = payload.len() as f64;
        let mean = payload.iter().sum::<f64>() / n;
        let var = payload.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() <= 3.0 / n.sqrt());
        assert!((var - 1.0).abs() <= 3.0 * (3.0 / n).sqrt());
    }

    #[test]
    fn power_iteration_bounds_opnorm() {
        let op = make_dense(6, 3, Dist::Gaussian, 101).unwrap();
        let payload = op.materialize().unwrap();
        let exact = (payload.transpose() * &payload)
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .cloned()
            .fold(0.0f64, f64::max);
        let est = op.normal_opnorm_bound(50, 1e-9);
        assert!(est >= exact * 0.999, "estimate {est} below exact {exact}");
        assert!(est <= exact * 1.05);
    }
}
