//! The max-column-l1 regularizer, its dual norm, subdifferential, proximal
//! operator and the descent-cone geometry kernels behind width estimation.
//!
//! Geometry used throughout: the cone generated by the subdifferential at X
//! is the polar of the descent cone, so a standard Gaussian matrix splits
//! orthogonally into its projections onto the two cones. The projection
//! onto the subdifferential cone decomposes per column into one-dimensional
//! piecewise-quadratic problems solved exactly by breakpoint search.

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};
use crate::signal::MatrixSignal;

/// Relative tolerance for deciding which columns attain the maximal l1 norm.
pub const MAX_COL_REL_TOL: f64 = 1e-9;

/// ‖X‖₁ = max over columns of the column l1 norm.
pub fn norm_colmax_l1(x: &MatrixSignal) -> f64 {
    x.col_l1_norms()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
}

pub fn norm_colmax_l1_mat(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0f64, f64::max)
}

/// Dual norm ‖M‖₁* = sum over columns of the column max norm.
pub fn dual_norm(m: &MatrixSignal) -> f64 {
    dual_norm_mat(m.entries())
}

pub fn dual_norm_mat(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|x| x.abs()).fold(0.0f64, f64::max))
        .sum()
}

/// Columns whose l1 norm is within relative tolerance of the maximum.
pub fn maximal_columns(x: &MatrixSignal, rel_tol: f64) -> Vec<usize> {
    let norms = x.col_l1_norms();
    let max = norms.iter().cloned().fold(0.0f64, f64::max);
    let slack = rel_tol * max.max(1.0);
    (0..norms.len()).filter(|&j| max - norms[j] <= slack).collect()
}

/// One member of the subdifferential: simplex weights over columns and
/// per-column sign-compatible vectors.
#[derive(Debug, Clone)]
pub struct SubgradientElement {
    lambda: Vec<f64>,
    xi: DMatrix<f64>,
}

impl SubgradientElement {
    pub fn new(lambda: Vec<f64>, xi: DMatrix<f64>) -> Result<Self> {
        let n = xi.nrows();
        if xi.ncols() != n || lambda.len() != n {
            return Err(CoreError::Dimension(
                "lambda length and xi shape must match".into(),
            ));
        }
        if lambda.iter().any(|&l| l < -1e-12) {
            return Err(CoreError::Parameter("lambda must be nonnegative".into()));
        }
        let sum: f64 = lambda.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(CoreError::Parameter(format!(
                "lambda must sum to 1, got {sum}"
            )));
        }
        if xi.iter().any(|v| v.abs() > 1.0 + 1e-12) {
            return Err(CoreError::Parameter(
                "xi entries must lie in [-1, 1]".into(),
            ));
        }
        Ok(Self { lambda, xi })
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn xi(&self) -> &DMatrix<f64> {
        &self.xi
    }

    /// Matrix with columns lambda_j * xi_j.
    pub fn materialize(&self) -> DMatrix<f64> {
        let mut m = self.xi.clone();
        for j in 0..m.ncols() {
            let l = self.lambda[j];
            for i in 0..m.nrows() {
                m[(i, j)] *= l;
            }
        }
        m
    }
}

/// Norm-subdifferential membership test: ‖M‖₁* ≤ 1 and ⟨M,X⟩ = ‖X‖₁,
/// both up to `tol`.
pub fn subdiff_contains(x: &MatrixSignal, m: &MatrixSignal, tol: f64) -> bool {
    if x.n() != m.n() {
        return false;
    }
    subdiff_contains_mat(x, m.entries(), tol)
}

pub fn subdiff_contains_mat(x: &MatrixSignal, m: &DMatrix<f64>, tol: f64) -> bool {
    let pairing = x.entries().dot(m);
    dual_norm_mat(m) <= 1.0 + tol && pairing >= norm_colmax_l1(x) - tol
}

/// Construct a subdifferential member from simplex weights on maximal
/// columns and prescribed off-support values.
///
/// `xi_off` supplies the entries of xi outside each column's support; its
/// on-support entries are ignored and replaced by the sign of X there.
pub fn subdiff_element(
    x: &MatrixSignal,
    lambda: &[f64],
    xi_off: &DMatrix<f64>,
) -> Result<SubgradientElement> {
    let n = x.n();
    if lambda.len() != n || xi_off.nrows() != n || xi_off.ncols() != n {
        return Err(CoreError::Dimension(
            "lambda and xi_off must match the signal dimension".into(),
        ));
    }
    let sum: f64 = lambda.iter().sum();
    if (sum - 1.0).abs() > 1e-12 || lambda.iter().any(|&l| l < 0.0) {
        return Err(CoreError::Parameter(
            "lambda must be a probability vector".into(),
        ));
    }
    let maximal = maximal_columns(x, MAX_COL_REL_TOL);
    for j in 0..n {
        if lambda[j] > 0.0 && !maximal.contains(&j) {
            return Err(CoreError::Parameter(format!(
                "lambda places weight on non-maximal column {j}"
            )));
        }
    }
    let mut xi = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let xv = x[(i, j)];
            if xv != 0.0 {
                xi[(i, j)] = xv.signum();
            } else {
                let v = xi_off[(i, j)];
                if v.abs() > 1.0 + 1e-15 {
                    return Err(CoreError::Parameter(format!(
                        "off-support value {v} at ({i},{j}) is outside [-1,1]"
                    )));
                }
                xi[(i, j)] = v.clamp(-1.0, 1.0);
            }
        }
    }
    SubgradientElement::new(lambda.to_vec(), xi)
}

/// Frobenius projection onto {‖·‖₁* ≤ radius}.
///
/// Water-filling over per-column caps: clamping a column at t costs
/// sum_i (|g_i| - t)_+^2, so the optimal caps equalize the marginal cost
/// 2 * sum_i (|g_i| - t)_+ across active columns. The multiplier is found
/// exactly by sorting the finitely many breakpoints.
pub fn project_dual_ball(m: &MatrixSignal, radius: f64) -> Result<MatrixSignal> {
    if radius <= 0.0 {
        return Err(CoreError::Parameter(format!(
            "radius must be positive, got {radius}"
        )));
    }
    Ok(MatrixSignal::new(project_dual_ball_mat(m.entries(), radius))
        .expect("projection preserves finiteness"))
}

pub fn project_dual_ball_mat(g: &DMatrix<f64>, radius: f64) -> DMatrix<f64> {
    let (nr, nc) = (g.nrows(), g.ncols());
    if radius <= 0.0 {
        return DMatrix::zeros(nr, nc);
    }
    // Per-column magnitudes sorted descending with prefix sums.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(nc);
    let mut prefix: Vec<Vec<f64>> = Vec::with_capacity(nc);
    for j in 0..nc {
        let mut a: Vec<f64> = g.column(j).iter().map(|x| x.abs()).collect();
        a.sort_unstable_by(|x, y| y.partial_cmp(x).unwrap());
        let mut p = Vec::with_capacity(a.len() + 1);
        p.push(0.0);
        for (k, &v) in a.iter().enumerate() {
            p.push(p[k] + v);
        }
        cols.push(a);
        prefix.push(p);
    }
    let sum_inf: f64 = cols.iter().map(|a| a.first().copied().unwrap_or(0.0)).sum();
    if sum_inf <= radius {
        return g.clone();
    }

    // Column cap as a function of the shared level m = mu/2: zero once
    // m >= |g_j|_1, otherwise the inverse of f_j(t) = sum (|g_i| - t)_+
    // on the segment located by binary search over F_k = A_k - k a_k.
    let cap_at = |j: usize, m: f64| -> f64 {
        let a = &cols[j];
        let p = &prefix[j];
        let nn = a.len();
        if nn == 0 || m >= p[nn] {
            return 0.0;
        }
        let (mut lo, mut hi) = (1usize, nn);
        while lo < hi {
            let mid = (lo + hi + 1) / 2;
            let f_mid = p[mid] - mid as f64 * a[mid - 1];
            if f_mid <= m {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        let k = lo;
        ((p[k] - m) / k as f64).max(0.0)
    };
    let total = |m: f64| -> f64 { (0..nc).map(|j| cap_at(j, m)).sum() };

    // All breakpoints of m -> total cap, then an exact solve inside the
    // bracketing segment.
    let mut bps: Vec<f64> = Vec::new();
    for j in 0..nc {
        let a = &cols[j];
        let p = &prefix[j];
        for k in 1..=a.len() {
            bps.push(p[k] - k as f64 * a[k - 1]);
        }
        bps.push(p[a.len()]);
    }
    bps.push(0.0);
    bps.sort_unstable_by(|x, y| x.partial_cmp(y).unwrap());
    bps.dedup();

    let (mut lo, mut hi) = (0usize, bps.len() - 1);
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        if total(bps[mid]) >= radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Linear in m on [bps[lo], bps[hi]]: total = P - Q m for the active set.
    let m_mid = 0.5 * (bps[lo] + bps[hi]);
    let mut p_sum = 0.0;
    let mut q_sum = 0.0;
    for j in 0..nc {
        if cap_at(j, m_mid) > 0.0 {
            let a = &cols[j];
            let p = &prefix[j];
            let nn = a.len();
            let (mut l, mut h) = (1usize, nn);
            while l < h {
                let mid = (l + h + 1) / 2;
                if p[mid] - mid as f64 * a[mid - 1] <= m_mid {
                    l = mid;
                } else {
                    h = mid - 1;
                }
            }
            p_sum += p[l] / l as f64;
            q_sum += 1.0 / l as f64;
        }
    }
    let m_star = if q_sum > 0.0 {
        ((p_sum - radius) / q_sum).clamp(bps[lo], bps[hi])
    } else {
        bps[lo]
    };

    let mut out = g.clone();
    for j in 0..nc {
        let t = cap_at(j, m_star);
        for i in 0..nr {
            out[(i, j)] = out[(i, j)].clamp(-t, t);
        }
    }
    out
}

/// prox of tau‖·‖₁ via the Moreau identity: X minus the projection of X
/// onto the dual-norm ball of radius tau. Returns X unchanged at tau = 0
/// and zero exactly when ‖X‖₁* ≤ tau.
pub fn prox_colmax_l1(x: &MatrixSignal, tau: f64) -> Result<MatrixSignal> {
    if tau < 0.0 {
        return Err(CoreError::Parameter(format!(
            "tau must be nonnegative, got {tau}"
        )));
    }
    Ok(MatrixSignal::new(prox_colmax_l1_mat(x.entries(), tau))
        .expect("prox preserves finiteness"))
}

pub fn prox_colmax_l1_mat(x: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    if tau == 0.0 {
        return x.clone();
    }
    x - project_dual_ball_mat(x, tau)
}

/// Outcome of projecting a matrix onto the cone generated by the
/// subdifferential at X.
#[derive(Debug, Clone)]
pub struct ConeDistanceResult {
    /// Squared distance inf {|G - tV|_F^2 : t > 0, V in the subdifferential}.
    pub dist_sq: f64,
    /// Scale of the projection witness.
    pub t_star: f64,
    /// Direction of the projection witness.
    pub v_star: SubgradientElement,
    /// Frobenius norm of the projection t* V*; satisfies
    /// dist_sq + sup_value^2 = |G|_F^2.
    pub sup_value: f64,
}

struct ColumnFit {
    /// Signed support correlation sum_i sgn(X_ij) G_ij.
    p: f64,
    /// Support size.
    k: usize,
    /// Off-support magnitudes, descending, with prefix sums.
    off: Vec<f64>,
    off_prefix: Vec<f64>,
}

impl ColumnFit {
    fn build(g: &DMatrix<f64>, x: &MatrixSignal, j: usize) -> Self {
        let n = x.n();
        let mut p = 0.0;
        let mut k = 0usize;
        let mut off: Vec<f64> = Vec::new();
        for i in 0..n {
            let xv = x[(i, j)];
            if xv != 0.0 {
                p += xv.signum() * g[(i, j)];
                k += 1;
            } else {
                off.push(g[(i, j)].abs());
            }
        }
        off.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
        let mut off_prefix = Vec::with_capacity(off.len() + 1);
        off_prefix.push(0.0);
        for (l, &b) in off.iter().enumerate() {
            off_prefix.push(off_prefix[l] + b);
        }
        Self { p, k, off, off_prefix }
    }

    /// d(c) = sum_support (G - c sgn)^2 + sum_off (|G| - c)_+^2 at given c,
    /// evaluated from the stored reductions plus the column's |G|^2.
    fn value(&self, g_col_sq: f64, c: f64) -> f64 {
        // sum_support (G - c sgn)^2 = sum_support G^2 - 2 c p + k c^2
        let mut v = g_col_sq - 2.0 * c * self.p + self.k as f64 * c * c;
        // off terms: replace each |G|^2 with (|G| - c)_+^2 - |G|^2 delta
        for &b in &self.off {
            let r = (b - c).max(0.0);
            v += r * r - b * b;
        }
        v
    }

    /// Derivative d'(c) = 2 [ (k + active) c - B_active - p ].
    fn derivative(&self, c: f64) -> f64 {
        let mut active = 0usize;
        let mut b_active = 0.0;
        for &b in &self.off {
            if b > c {
                active += 1;
                b_active += b;
            } else {
                break;
            }
        }
        2.0 * ((self.k + active) as f64 * c - b_active - self.p)
    }

    /// Unconstrained-over-c>=0 minimizer of d, solved segment by segment.
    fn argmin(&self) -> f64 {
        let q = self.off.len();
        if self.p + self.off_prefix[q] <= 0.0 {
            return 0.0;
        }
        // Segment l has active off terms 1..=l and covers [b_{l+1}, b_l].
        for l in (0..=q).rev() {
            let c = (self.p + self.off_prefix[l]) / (self.k + l) as f64;
            let lo = if l == q { 0.0 } else { self.off[l] };
            let hi = if l == 0 { f64::INFINITY } else { self.off[l - 1] };
            if c >= lo - 1e-15 && c <= hi + 1e-15 {
                return c.max(0.0);
            }
        }
        0.0
    }

    /// Root of d'(c) = w for c >= 0, or 0 if none (derivative above w).
    fn cap_for_slope(&self, w: f64) -> f64 {
        if self.derivative(0.0) >= w {
            return 0.0;
        }
        let q = self.off.len();
        for l in (0..=q).rev() {
            let c = (w / 2.0 + self.p + self.off_prefix[l]) / (self.k + l) as f64;
            let lo = if l == q { 0.0 } else { self.off[l] };
            let hi = if l == 0 { f64::INFINITY } else { self.off[l - 1] };
            if c >= lo - 1e-15 && c <= hi + 1e-15 {
                return c.max(0.0);
            }
        }
        0.0
    }
}

/// Exact projection of G onto the subdifferential cone of ‖·‖₁ at X.
///
/// Writing c_j = t lambda_j, the free variables decouple per maximal
/// column and each one-dimensional piece is minimized by breakpoint
/// search.
pub fn dist_to_subgradient_cone(g: &MatrixSignal, x: &MatrixSignal) -> Result<ConeDistanceResult> {
    if g.n() != x.n() {
        return Err(CoreError::Dimension("G and X dimensions differ".into()));
    }
    if norm_colmax_l1(x) == 0.0 {
        return Err(CoreError::Parameter(
            "X must be nonzero: the descent cone of the norm at 0 is the whole space".into(),
        ));
    }
    let (dist_sq, caps) = cone_projection_caps(g.entries(), x);
    let n = x.n();
    let t_star: f64 = caps.iter().sum();
    let maximal = maximal_columns(x, MAX_COL_REL_TOL);

    // Assemble the witness (lambda, xi) consistent with the caps.
    let mut lambda = vec![0.0; n];
    if t_star > 0.0 {
        for j in 0..n {
            lambda[j] = caps[j] / t_star;
        }
    } else {
        for &j in &maximal {
            lambda[j] = 1.0 / maximal.len() as f64;
        }
    }
    // Normalize any drift so the simplex invariant holds exactly.
    let lsum: f64 = lambda.iter().sum();
    if lsum > 0.0 {
        for l in lambda.iter_mut() {
            *l /= lsum;
        }
    }
    let mut xi = DMatrix::zeros(n, n);
    for j in 0..n {
        let c = caps[j];
        for i in 0..n {
            let xv = x[(i, j)];
            if xv != 0.0 {
                xi[(i, j)] = xv.signum();
            } else if c > 0.0 {
                xi[(i, j)] = (g[(i, j)].clamp(-c, c)) / c;
            }
        }
    }
    let v_star = SubgradientElement::new(lambda, xi)?;

    // |t* V*|_F from the caps directly (columns c_j xi_j).
    let mut proj_sq = 0.0;
    for j in 0..n {
        let c = caps[j];
        if c == 0.0 {
            continue;
        }
        for i in 0..n {
            let xv = x[(i, j)];
            let entry = if xv != 0.0 {
                c * xv.signum()
            } else {
                g[(i, j)].clamp(-c, c)
            };
            proj_sq += entry * entry;
        }
    }
    Ok(ConeDistanceResult {
        dist_sq,
        t_star,
        v_star,
        sup_value: proj_sq.sqrt(),
    })
}

/// Shared kernel: per-column caps c_j of the cone projection and the
/// total squared distance.
fn cone_projection_caps(g: &DMatrix<f64>, x: &MatrixSignal) -> (f64, Vec<f64>) {
    let n = x.n();
    let maximal = maximal_columns(x, MAX_COL_REL_TOL);
    let mut caps = vec![0.0; n];
    let mut dist_sq = 0.0;
    let mut is_max = vec![false; n];
    for &j in &maximal {
        is_max[j] = true;
    }
    for j in 0..n {
        let g_col_sq: f64 = g.column(j).iter().map(|v| v * v).sum();
        if is_max[j] {
            let fit = ColumnFit::build(g, x, j);
            let c = fit.argmin();
            caps[j] = c;
            dist_sq += fit.value(g_col_sq, c);
        } else {
            dist_sq += g_col_sq;
        }
    }
    (dist_sq.max(0.0), caps)
}

/// Projection of G onto the descent cone: the Moreau complement
/// G - t* V* of the subdifferential-cone projection.
pub fn project_onto_descent_cone(g: &DMatrix<f64>, x: &MatrixSignal) -> DMatrix<f64> {
    let (_, caps) = cone_projection_caps(g, x);
    let n = x.n();
    let mut out = g.clone();
    for j in 0..n {
        let c = caps[j];
        if c == 0.0 {
            continue;
        }
        for i in 0..n {
            let xv = x[(i, j)];
            let entry = if xv != 0.0 {
                c * xv.signum()
            } else {
                g[(i, j)].clamp(-c, c)
            };
            out[(i, j)] -= entry;
        }
    }
    out
}

/// sup {⟨H, U⟩ : U in the descent cone, |U|_F = 1}, clamped at zero.
///
/// By the Moreau split this equals the distance from H to the polar
/// (subdifferential) cone, i.e. sqrt of `dist_sq`.
pub fn descent_cone_sup(h: &MatrixSignal, x: &MatrixSignal) -> Result<f64> {
    let res = dist_to_subgradient_cone(h, x)?;
    Ok(res.dist_sq.max(0.0).sqrt())
}

/// Euclidean distance from G to the subdifferential set itself (the
/// simplex-constrained variant of the cone projection).
///
/// This is the optimality residual for the penalized program: Z is
/// stationary exactly when the scaled residual gradient lies in the set.
pub fn dist_to_subdiff_set(g: &DMatrix<f64>, z: &MatrixSignal) -> f64 {
    let n = z.n();
    if norm_colmax_l1(z) == 0.0 {
        return (dual_norm_mat(g) - 1.0).max(0.0);
    }
    let maximal = maximal_columns(z, MAX_COL_REL_TOL);
    let mut is_max = vec![false; n];
    for &j in &maximal {
        is_max[j] = true;
    }

    let mut fits: Vec<(usize, ColumnFit, f64)> = Vec::new();
    let mut fixed_sq = 0.0;
    for j in 0..n {
        let g_col_sq: f64 = g.column(j).iter().map(|v| v * v).sum();
        if is_max[j] {
            fits.push((j, ColumnFit::build(g, z, j), g_col_sq));
        } else {
            fixed_sq += g_col_sq;
        }
    }

    // Solve sum_j c_j = 1 over c_j >= 0 via the shared-slope condition
    // d_j'(c_j) = w; the total cap is nondecreasing in w.
    let mut w_bps: Vec<f64> = Vec::new();
    for (_, fit, _) in &fits {
        w_bps.push(fit.derivative(0.0));
        for &b in &fit.off {
            w_bps.push(fit.derivative(b));
        }
        // A generous upper slope: caps of 1 on every column.
        w_bps.push(fit.derivative(1.0));
    }
    w_bps.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    w_bps.dedup();
    let total = |w: f64| -> f64 { fits.iter().map(|(_, f, _)| f.cap_for_slope(w)).sum() };

    // Expand upward until the total cap reaches 1.
    let mut w_hi = *w_bps.last().unwrap_or(&1.0);
    let mut guard = 0;
    while total(w_hi) < 1.0 && guard < 200 {
        w_hi = w_hi.abs().max(1.0) * 2.0;
        guard += 1;
    }
    let mut w_lo = *w_bps.first().unwrap_or(&-1.0);
    while total(w_lo) > 1.0 && guard < 400 {
        w_lo = -w_lo.abs().max(1.0) * 2.0;
        guard += 1;
    }
    // Bisection is exact enough here: the caps are piecewise linear in w
    // and the final value is evaluated through the caps themselves.
    for _ in 0..200 {
        let mid = 0.5 * (w_lo + w_hi);
        if total(mid) >= 1.0 {
            w_hi = mid;
        } else {
            w_lo = mid;
        }
        if w_hi - w_lo <= 1e-15 * w_hi.abs().max(1.0) {
            break;
        }
    }
    let w = w_hi;
    let mut caps: Vec<f64> = fits.iter().map(|(_, f, _)| f.cap_for_slope(w)).collect();
    let cap_sum: f64 = caps.iter().sum();
    if cap_sum > 0.0 {
        for c in caps.iter_mut() {
            *c /= cap_sum;
        }
    } else if let Some(c0) = caps.first_mut() {
        *c0 = 1.0;
    }

    let mut dist_sq = fixed_sq;
    for ((_, fit, g_col_sq), &c) in fits.iter().zip(caps.iter()) {
        dist_sq += fit.value(*g_col_sq, c);
    }
    dist_sq.max(0.0).sqrt()
}
