//! Solvers for the penalized program inf ‖Z‖₁ + (γ/2)|y − Φ(Z)|² and the
//! constrained program inf ‖Z‖₁ s.t. |y − Φ(Z)| ≤ η, plus an independent
//! brute-force oracle for tiny instances.
//!
//! The penalized solver is an accelerated proximal-gradient iteration made
//! monotone by restart-on-increase; it stops on the dual optimality
//! residual (distance of the scaled residual gradient to the
//! subdifferential). The constrained solver bisects on the multiplier γ,
//! using that the measurement residual is nonincreasing in γ.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::norms::{dist_to_subdiff_set, norm_colmax_l1_mat, prox_colmax_l1_mat};
use crate::operators::MeasurementOp;
use crate::signal::MatrixSignal;

/// Iteration budget and tolerances for both solve modes.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Dual optimality residual target.
    pub tol_kkt: f64,
    /// Feasibility target, relative to max(1, |y|).
    pub tol_feas: f64,
    /// Power-iteration budget for the step size.
    pub power_iters: usize,
    pub power_tol: f64,
    /// Initial multiplier bracket for the constrained mode.
    pub gamma_bracket: (f64, f64),
    /// Hard multiplier ceiling reached by geometric expansion.
    pub gamma_max: f64,
    /// Continuation stages (multiplier ladder) warm-starting each solve.
    pub continuation_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 20_000,
            tol_kkt: 1e-9,
            tol_feas: 1e-8,
            power_iters: 40,
            power_tol: 1e-6,
            gamma_bracket: (1e-4, 1e6),
            gamma_max: 1e13,
            continuation_factor: 100.0,
        }
    }
}

impl SolverConfig {
    pub fn validated(self) -> Result<Self> {
        if self.max_iters == 0 || self.tol_kkt <= 0.0 || self.tol_feas <= 0.0 {
            return Err(CoreError::Parameter(
                "solver tolerances must be positive and max_iters >= 1".into(),
            ));
        }
        Ok(self)
    }

    /// Looser profile used inside Monte-Carlo sweeps.
    pub fn sweep() -> Self {
        Self {
            max_iters: 4_000,
            tol_kkt: 1e-7,
            tol_feas: 1e-7,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    /// η ≥ |y|: the zero matrix is optimal.
    TrivialZero,
    MaxIters,
}

/// Solver output with optimality diagnostics.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub minimizer: MatrixSignal,
    /// ‖Z‖₁ for the constrained mode; full penalized objective otherwise.
    pub objective: f64,
    pub kkt_residual: f64,
    /// max(0, |y − Φ(Z)| − η) for the constrained mode, 0 for penalized.
    pub feasibility_gap: f64,
    /// Measurement residual |y − Φ(Z)|.
    pub residual_norm: f64,
    pub gamma: f64,
    pub iterations: usize,
    pub converged: bool,
    pub status: SolveStatus,
}

fn check_inputs(op: &MeasurementOp, y: &DVector<f64>) -> Result<()> {
    if y.len() != op.meas_dim() {
        return Err(CoreError::Dimension(format!(
            "y has length {}, operator expects {}",
            y.len(),
            op.meas_dim()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Parameter("y must be finite".into()));
    }
    Ok(())
}

/// Distance of γ Φ^T(y − Φ(Z)) to the subdifferential of ‖·‖₁ at Z.
pub fn kkt_residual(
    op: &MeasurementOp,
    y: &DVector<f64>,
    gamma: f64,
    z: &MatrixSignal,
) -> Result<f64> {
    if gamma <= 0.0 {
        return Err(CoreError::Parameter("gamma must be positive".into()));
    }
    check_inputs(op, y)?;
    let grad_point = op.adjoint_vec(&(y - op.apply_mat(z.entries()))) * gamma;
    Ok(dist_to_subdiff_set(&grad_point, z))
}

struct Fista<'a> {
    op: &'a MeasurementOp,
    y: &'a DVector<f64>,
    gamma: f64,
    step: f64,
}

impl<'a> Fista<'a> {
    fn objective(&self, z: &DMatrix<f64>) -> f64 {
        let r = self.y - self.op.apply_mat(z);
        norm_colmax_l1_mat(z) + 0.5 * self.gamma * r.norm_squared()
    }

    fn gradient(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        self.op.adjoint_vec(&(self.op.apply_mat(z) - self.y)) * self.gamma
    }

    /// Monotone accelerated proximal gradient; returns iterate, its
    /// objective, and iterations used.
    fn run(
        &self,
        z0: DMatrix<f64>,
        max_iters: usize,
        tol_kkt: f64,
        check_every: usize,
    ) -> (DMatrix<f64>, usize) {
        let mut z = z0.clone();
        let mut y_acc = z0;
        let mut theta = 1.0f64;
        let mut f_curr = self.objective(&z);
        let mut iters = 0;
        for k in 1..=max_iters {
            iters = k;
            let grad = self.gradient(&y_acc);
            let cand = prox_colmax_l1_mat(&(&y_acc - &grad * self.step), self.step);
            let f_cand = self.objective(&cand);
            if f_cand <= f_curr + 1e-12 * f_curr.abs().max(1.0) {
                let z_prev = std::mem::replace(&mut z, cand);
                f_curr = f_cand;
                let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
                let beta = (theta - 1.0) / theta_next;
                y_acc = &z + (&z - &z_prev) * beta;
                theta = theta_next;
            } else {
                // Objective went up: drop momentum and retry from z.
                theta = 1.0;
                y_acc = z.clone();
            }
            if k % check_every == 0 {
                let zm = MatrixSignal::new(z.clone()).expect("iterates stay finite");
                let g = self.op.adjoint_vec(&(self.y - self.op.apply_mat(&z))) * self.gamma;
                if dist_to_subdiff_set(&g, &zm) <= tol_kkt {
                    break;
                }
            }
        }
        (z, iters)
    }
}

/// Solve inf ‖Z‖₁ + (γ/2)|y − Φ(Z)|² by monotone FISTA.
pub fn solve_penalized(
    op: &MeasurementOp,
    y: &DVector<f64>,
    gamma: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    solve_penalized_from(op, y, gamma, cfg, None)
}

/// Same, warm-started from an initial iterate.
pub fn solve_penalized_from(
    op: &MeasurementOp,
    y: &DVector<f64>,
    gamma: f64,
    cfg: &SolverConfig,
    warm: Option<DMatrix<f64>>,
) -> Result<SolveResult> {
    if gamma <= 0.0 {
        return Err(CoreError::Parameter(format!(
            "gamma must be positive, got {gamma}"
        )));
    }
    check_inputs(op, y)?;
    let n = op.n();
    if y.norm() == 0.0 {
        return Ok(SolveResult {
            minimizer: MatrixSignal::zeros(n),
            objective: 0.0,
            kkt_residual: 0.0,
            feasibility_gap: 0.0,
            residual_norm: 0.0,
            gamma,
            iterations: 0,
            converged: true,
            status: SolveStatus::Converged,
        });
    }
    let lmax = op.normal_opnorm_bound(cfg.power_iters, cfg.power_tol).max(1e-300);
    let step = 1.0 / (gamma * lmax);
    let fista = Fista { op, y, gamma, step };
    let z0 = warm.unwrap_or_else(|| DMatrix::zeros(n, n));
    let (z, iterations) = fista.run(z0, cfg.max_iters, cfg.tol_kkt, 10);
    let minimizer = MatrixSignal::new(z)?;
    let kkt = kkt_residual(op, y, gamma, &minimizer)?;
    let residual_norm = (y - op.apply_mat(minimizer.entries())).norm();
    let converged = kkt <= cfg.tol_kkt;
    Ok(SolveResult {
        objective: norm_colmax_l1_mat(minimizer.entries())
            + 0.5 * gamma * residual_norm * residual_norm,
        kkt_residual: kkt,
        feasibility_gap: 0.0,
        residual_norm,
        gamma,
        iterations,
        converged,
        status: if converged {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIters
        },
        minimizer,
    })
}

/// Solve inf ‖Z‖₁ s.t. |y − Φ(Z)| ≤ η by bisection on the multiplier.
///
/// η ≥ |y| returns the zero matrix flagged trivial. η = 0 climbs the
/// multiplier ladder until the residual is below the feasibility
/// tolerance.
pub fn solve_constrained(
    op: &MeasurementOp,
    y: &DVector<f64>,
    eta: f64,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    if eta < 0.0 {
        return Err(CoreError::Parameter(format!(
            "eta must be nonnegative, got {eta}"
        )));
    }
    check_inputs(op, y)?;
    let n = op.n();
    let y_norm = y.norm();
    if eta >= y_norm {
        // Zero is feasible with the smallest possible objective.
        return Ok(SolveResult {
            minimizer: MatrixSignal::zeros(n),
            objective: 0.0,
            kkt_residual: 0.0,
            feasibility_gap: 0.0,
            residual_norm: y_norm,
            gamma: 0.0,
            iterations: 0,
            converged: true,
            status: SolveStatus::TrivialZero,
        });
    }
    let feas_scale = y_norm.max(1.0);
    let tol = cfg.tol_feas * feas_scale;

    let lmax = op.normal_opnorm_bound(cfg.power_iters, cfg.power_tol).max(1e-300);
    let mut total_iters = 0usize;
    let mut warm = DMatrix::zeros(n, n);

    let run_at = |gamma: f64, warm: &DMatrix<f64>, iters_left: usize| {
        let fista = Fista {
            op,
            y,
            gamma,
            step: 1.0 / (gamma * lmax),
        };
        let (z, it) = fista.run(warm.clone(), iters_left.max(200), cfg.tol_kkt, 10);
        let residual = (y - op.apply_mat(&z)).norm();
        (z, residual, it)
    };

    // Climb from the lower bracket edge, warm-starting as gamma grows, to
    // find gamma with residual <= eta (or <= tol when eta = 0).
    let (g_lo_init, g_hi_init) = cfg.gamma_bracket;
    let target_hi = if eta > 0.0 { eta } else { tol };
    let mut g_hi = g_lo_init;
    let mut r_hi;
    let mut expansions = 0usize;
    loop {
        let (z, r, it) = run_at(g_hi, &warm, cfg.max_iters);
        total_iters += it;
        warm = z;
        r_hi = r;
        if r_hi <= target_hi {
            break;
        }
        if g_hi >= cfg.gamma_max {
            return Err(CoreError::NoConvergence(format!(
                "residual {r_hi:.3e} still above target {target_hi:.3e} at gamma = {g_hi:.3e}"
            )));
        }
        g_hi = (g_hi * cfg.continuation_factor).min(cfg.gamma_max.max(g_hi_init));
        expansions += 1;
        if expansions > 60 {
            return Err(CoreError::NoConvergence(
                "multiplier bracket expansion limit reached".into(),
            ));
        }
    }

    if eta == 0.0 {
        let minimizer = MatrixSignal::new(warm)?;
        let kkt = kkt_residual(op, y, g_hi, &minimizer)?;
        let converged = r_hi <= tol;
        return Ok(SolveResult {
            objective: norm_colmax_l1_mat(minimizer.entries()),
            kkt_residual: kkt,
            feasibility_gap: r_hi,
            residual_norm: r_hi,
            gamma: g_hi,
            iterations: total_iters,
            converged,
            status: if converged {
                SolveStatus::Converged
            } else {
                SolveStatus::MaxIters
            },
            minimizer,
        });
    }

    // Bracket from below: residual at small gamma exceeds eta (at gamma
    // near 0 the minimizer tends to 0 with residual |y| > eta).
    let mut g_lo = g_lo_init.min(g_hi);
    let mut z_best = warm.clone();
    let mut r_best = r_hi;
    let mut g_best = g_hi;
    if (r_hi - eta).abs() > tol {
        // Bisect on log gamma between g_lo (residual > eta) and g_hi.
        for _ in 0..80 {
            let g_mid = (g_lo * g_hi).sqrt();
            let (z, r, it) = run_at(g_mid, &warm, cfg.max_iters / 4);
            total_iters += it;
            warm = z.clone();
            if (r - eta).abs() < (r_best - eta).abs() {
                z_best = z;
                r_best = r;
                g_best = g_mid;
            }
            if (r - eta).abs() <= tol {
                break;
            }
            if r > eta {
                g_lo = g_mid;
            } else {
                g_hi = g_mid;
            }
            if g_hi / g_lo < 1.0 + 1e-12 {
                break;
            }
        }
    } else {
        g_best = g_hi;
    }

    // Final polish at the selected multiplier.
    let (z, r, it) = run_at(g_best, &z_best, cfg.max_iters / 2);
    total_iters += it;
    let minimizer = MatrixSignal::new(z)?;
    let kkt = kkt_residual(op, y, g_best, &minimizer)?;
    let gap = (r - eta).max(0.0);
    let converged = (r - eta).abs() <= tol && kkt <= cfg.tol_kkt * 100.0;
    Ok(SolveResult {
        objective: norm_colmax_l1_mat(minimizer.entries()),
        kkt_residual: kkt,
        feasibility_gap: gap,
        residual_norm: r,
        gamma: g_best,
        iterations: total_iters,
        converged,
        status: if converged {
            SolveStatus::Converged
        } else {
            SolveStatus::MaxIters
        },
        minimizer,
    })
}

/// Mode selector for the brute-force oracle.
#[derive(Debug, Clone, Copy)]
pub enum OracleMode {
    Penalized { gamma: f64 },
    Constrained { eta: f64 },
}

/// Independent solver for tiny instances (n ≤ 2, m ≤ 4): multi-start
/// projected subgradient descent followed by a shrinking pattern-search
/// polish over the at-most-four entries.
pub fn oracle_solve_small(
    op: &MeasurementOp,
    y: &DVector<f64>,
    mode: OracleMode,
    grid: usize,
) -> Result<SolveResult> {
    if op.n() > 2 || op.meas_dim() > 4 {
        return Err(CoreError::SizeGuard(format!(
            "oracle limited to n <= 2 and m <= 4, got n = {}, m = {}",
            op.n(),
            op.meas_dim()
        )));
    }
    check_inputs(op, y)?;
    let n = op.n();
    let dim = n * n;
    let a = op.materialize()?;

    let to_mat = |v: &DVector<f64>| DMatrix::from_column_slice(n, n, v.as_slice());
    let norm1 = |v: &DVector<f64>| norm_colmax_l1_mat(&to_mat(v));
    let residual = |v: &DVector<f64>| (y - &a * v).norm();

    // Feasibility projection for the constrained mode.
    let ata = a.transpose() * &a;
    let aty = a.transpose() * y;
    let eig = ata.clone().symmetric_eigen();
    let project = |v: &DVector<f64>, eta: f64| -> DVector<f64> {
        if residual(v) <= eta {
            return v.clone();
        }
        if eta == 0.0 {
            // Affine projection via the eigendecomposition of A^T A.
            let rhs = &ata * v - &aty;
            let coef = eig.eigenvectors.transpose() * rhs;
            let mut sol = DVector::zeros(dim);
            for i in 0..dim {
                let lam = eig.eigenvalues[i];
                sol[i] = if lam > 1e-12 { coef[i] / lam } else { 0.0 };
            }
            return v - &eig.eigenvectors * sol;
        }
        // z(mu) = (I + mu A^T A)^{-1}(v + mu A^T y); residual decreasing
        // in mu, solved by bisection on the scalar multiplier.
        let z_of = |mu: f64| -> DVector<f64> {
            let rhs = v + &aty * mu;
            let coef = eig.eigenvectors.transpose() * rhs;
            let mut sol = DVector::zeros(dim);
            for i in 0..dim {
                sol[i] = coef[i] / (1.0 + mu * eig.eigenvalues[i]);
            }
            &eig.eigenvectors * sol
        };
        let mut lo = 0.0f64;
        let mut hi = 1.0f64;
        while residual(&z_of(hi)) > eta && hi < 1e18 {
            hi *= 4.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if residual(&z_of(mid)) > eta {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        z_of(hi)
    };

    let objective = |v: &DVector<f64>| -> f64 {
        match mode {
            OracleMode::Penalized { gamma } => {
                let r = residual(v);
                norm1(v) + 0.5 * gamma * r * r
            }
            OracleMode::Constrained { .. } => norm1(v),
        }
    };
    let feasibilize = |v: &DVector<f64>| -> DVector<f64> {
        match mode {
            OracleMode::Penalized { .. } => v.clone(),
            OracleMode::Constrained { eta } => project(v, eta),
        }
    };

    if let OracleMode::Constrained { eta } = mode {
        if eta >= y.norm() {
            return Ok(SolveResult {
                minimizer: MatrixSignal::zeros(n),
                objective: 0.0,
                kkt_residual: 0.0,
                feasibility_gap: 0.0,
                residual_norm: y.norm(),
                gamma: 0.0,
                iterations: 0,
                converged: true,
                status: SolveStatus::TrivialZero,
            });
        }
    }

    // Subgradient of the objective (any member).
    let subgrad = |v: &DVector<f64>| -> DVector<f64> {
        let m = to_mat(v);
        let norms: Vec<f64> = (0..n)
            .map(|j| m.column(j).iter().map(|x| x.abs()).sum())
            .collect();
        let max = norms.iter().cloned().fold(0.0f64, f64::max);
        let jmax = (0..n).find(|&j| norms[j] >= max - 1e-14).unwrap_or(0);
        let mut g = DVector::zeros(dim);
        for i in 0..n {
            let e = m[(i, jmax)];
            g[jmax * n + i] = if e != 0.0 { e.signum() } else { 0.0 };
        }
        if let OracleMode::Penalized { gamma } = mode {
            g += (&ata * v - &aty) * gamma;
        }
        g
    };

    // Multi-start subgradient phase.
    let mut rng = crate::rng::rng_from_seed(0x0C0FFEE);
    let mut starts: Vec<DVector<f64>> = vec![DVector::zeros(dim)];
    let lsq = {
        // Least-squares point as a warm start.
        let mut sol = DVector::zeros(dim);
        let coef = eig.eigenvectors.transpose() * &aty;
        for i in 0..dim {
            let lam = eig.eigenvalues[i];
            sol[i] = if lam > 1e-12 { coef[i] / lam } else { 0.0 };
        }
        &eig.eigenvectors * sol
    };
    starts.push(lsq.clone());
    for _ in 0..6 {
        let r = DVector::from_fn(dim, |_, _| crate::rng::Dist::Gaussian.sample(&mut rng));
        starts.push(&lsq + r * 0.5);
    }

    let mut best = feasibilize(&starts[0]);
    let mut best_f = objective(&best);
    for start in &starts {
        let mut v = feasibilize(start);
        let mut local_best = v.clone();
        let mut local_f = objective(&v);
        let scale = (1.0 + lsq.norm()) * 0.5;
        for k in 1..=1500usize {
            let g = subgrad(&v);
            let gn = g.norm();
            if gn <= 1e-14 {
                break;
            }
            let stepk = scale / (gn * (k as f64).sqrt());
            v = feasibilize(&(&v - g * stepk));
            let f = objective(&v);
            if f < local_f {
                local_f = f;
                local_best = v.clone();
            }
        }
        if local_f < best_f {
            best_f = local_f;
            best = local_best;
        }
    }

    // Pattern-search polish over the complete sign-pattern direction set
    // {-1, 0, 1}^dim: the objective's kinks tie column norms together, so
    // improving moves can need every coordinate at once.
    let mut dirs: Vec<DVector<f64>> = Vec::new();
    let patterns = 3usize.pow(dim as u32);
    for code in 1..patterns {
        let mut c = code;
        let mut e = DVector::zeros(dim);
        for i in 0..dim {
            match c % 3 {
                1 => e[i] = 1.0,
                2 => e[i] = -1.0,
                _ => {}
            }
            c /= 3;
        }
        dirs.push(e);
    }
    let levels = grid.max(40);
    let mut delta = (1.0 + best.norm()) * 0.25;
    for _ in 0..levels {
        let mut improved = true;
        while improved {
            improved = false;
            for d in &dirs {
                let cand = feasibilize(&(&best + d * delta));
                let f = objective(&cand);
                if f < best_f - 1e-15 {
                    best_f = f;
                    best = cand;
                    improved = true;
                }
            }
        }
        delta *= 0.5;
        if delta < 1e-10 {
            break;
        }
    }

    let minimizer = MatrixSignal::new(to_mat(&best))?;
    let residual_norm = residual(&best);
    let (gamma, gap) = match mode {
        OracleMode::Penalized { gamma } => (gamma, 0.0),
        OracleMode::Constrained { eta } => (0.0, (residual_norm - eta).max(0.0)),
    };
    Ok(SolveResult {
        objective: best_f,
        kkt_residual: f64::NAN,
        feasibility_gap: gap,
        residual_norm,
        gamma,
        iterations: 0,
        converged: true,
        status: SolveStatus::Converged,
        minimizer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::norms::{norm_colmax_l1, subdiff_element};
    use crate::operators::{identity_op, make_dense};
    use crate::rng::{rng_from_seed, Dist};
    use crate::signal::{flatness_defect, gen_sparse_flat_signal};
    use approx::assert_abs_diff_eq;
    use rand_distr::{Distribution, StandardNormal};

    fn random_y(m: usize, seed: u64) -> DVector<f64> {
        let mut rng = rng_from_seed(seed);
        DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng))
    }

    #[test]
    fn penalized_zero_measurements() {
        let op = make_dense(3, 2, Dist::Gaussian, 1).unwrap();
        let y = DVector::zeros(3);
        let res = solve_penalized(&op, &y, 5.0, &SolverConfig::default()).unwrap();
        assert_eq!(res.minimizer.norm_fro(), 0.0);
        assert_eq!(res.objective, 0.0);
        assert!(res.converged);
    }

    #[test]
    fn penalized_scalar_closed_form() {
        // n = 1, one measurement phi: minimize |z| + (gamma/2)(y - phi z)^2.
        // Stationarity away from zero: z = (phi y - sgn(z)/gamma) / phi^2.
        let phi = 1.7f64;
        let yv = 2.3f64;
        let gamma = 4.0f64;
        let op = crate::operators::from_payload(DMatrix::from_row_slice(1, 1, &[phi]), 1).unwrap();
        let y = DVector::from_row_slice(&[yv]);
        let res = solve_penalized(&op, &y, gamma, &SolverConfig::default()).unwrap();
        let expected = (phi * yv - 1.0 / gamma) / (phi * phi);
        assert!(expected > 0.0);
        assert_abs_diff_eq!(res.minimizer[(0, 0)], expected, epsilon = 1e-8);

        // Below the threshold the minimizer collapses to zero.
        let y_small = DVector::from_row_slice(&[0.1]);
        let res = solve_penalized(&op, &y_small, 1.0, &SolverConfig::default()).unwrap();
        assert!(res.minimizer[(0, 0)].abs() <= 1e-10);
    }

    #[test]
    fn penalized_rejects_bad_gamma() {
        let op = make_dense(2, 2, Dist::Gaussian, 2).unwrap();
        let y = random_y(2, 3);
        assert!(solve_penalized(&op, &y, 0.0, &SolverConfig::default()).is_err());
        assert!(solve_penalized(&op, &y, -1.0, &SolverConfig::default()).is_err());
    }

    #[test]
    fn constrained_trivial_when_eta_dominates() {
        let op = make_dense(3, 2, Dist::Gaussian, 4).unwrap();
        let y = random_y(3, 5);
        let res = solve_constrained(&op, &y, y.norm() * 1.5, &SolverConfig::default()).unwrap();
        assert_eq!(res.status, SolveStatus::TrivialZero);
        assert_eq!(res.minimizer.norm_fro(), 0.0);
        assert!(res.converged);
    }

    #[test]
    fn constrained_identity_noise_free_recovers_exactly() {
        let op = identity_op(3);
        let x = gen_sparse_flat_signal(3, 2, 3, 6, 0.2).unwrap();
        let y = op.apply_mat(x.entries());
        let res = solve_constrained(&op, &y, 0.0, &SolverConfig::default()).unwrap();
        assert!(res.converged);
        let err = (res.minimizer.entries() - x.entries()).norm();
        assert!(err <= 1e-6 * x.norm_fro(), "error {err}");
    }

    #[test]
    fn constrained_hits_the_noise_budget() {
        let op = make_dense(5, 2, Dist::Gaussian, 7).unwrap();
        let x = gen_sparse_flat_signal(2, 1, 2, 8, 0.2).unwrap();
        let y = op.apply_mat(x.entries());
        let eta = 0.15 * y.norm();
        let res = solve_constrained(&op, &y, eta, &SolverConfig::default()).unwrap();
        assert!(res.converged, "status {:?}", res.status);
        // At the optimum the constraint is active (Eq. residual = eta).
        assert!((res.residual_norm - eta).abs() <= 1e-6 * y.norm().max(1.0));
        // Multiplier consistency.
        let kkt = kkt_residual(&op, &y, res.gamma, &res.minimizer).unwrap();
        assert!(kkt <= 1e-6, "kkt {kkt}");
    }

    #[test]
    fn kkt_residual_examples() {
        let op = make_dense(4, 2, Dist::Gaussian, 9).unwrap();
        // Constructed stationary point: gamma Phi^T(y - Phi Z) must be a
        // subdifferential member at Z.
        let x = gen_sparse_flat_signal(2, 1, 2, 10, 0.2).unwrap();
        let e = subdiff_element(&x, &[0.5, 0.5], &DMatrix::zeros(2, 2)).unwrap();
        let m = e.materialize();
        // Choose y = Phi(X) + w where gamma Phi^T(w) = M: solve the normal
        // equations for w in the span of Phi's rows.
        let a = op.materialize().unwrap();
        let mvec = DVector::from_column_slice(m.as_slice());
        let gamma = 3.0;
        let aat = &a * a.transpose();
        let w = aat
            .clone()
            .cholesky()
            .unwrap()
            .solve(&(&a * &mvec / gamma));
        let y = op.apply_mat(x.entries()) + w;
        let kkt = kkt_residual(&op, &y, gamma, &x).unwrap();
        assert!(kkt <= 1e-9, "kkt {kkt}");

        // At Z = 0 the residual is the dual-norm excess.
        let z0 = MatrixSignal::zeros(2);
        let y2 = random_y(4, 11);
        let g = op.adjoint_vec(&y2) * gamma;
        let expect = (crate::norms::dual_norm_mat(&g) - 1.0).max(0.0);
        assert_abs_diff_eq!(
            kkt_residual(&op, &y2, gamma, &z0).unwrap(),
            expect,
            epsilon = 1e-12
        );
    }

    #[test]
    fn oracle_guard_and_identity() {
        let big = make_dense(5, 2, Dist::Gaussian, 12).unwrap();
        assert!(matches!(
            oracle_solve_small(&big, &random_y(5, 13), OracleMode::Constrained { eta: 0.0 }, 30),
            Err(CoreError::SizeGuard(_))
        ));

        let op = identity_op(2);
        let x = gen_sparse_flat_signal(2, 1, 2, 14, 0.2).unwrap();
        let y = op.apply_mat(x.entries());
        let res = oracle_solve_small(&op, &y, OracleMode::Constrained { eta: 0.0 }, 30).unwrap();
        assert!((res.minimizer.entries() - x.entries()).norm() <= 1e-6);
    }

    #[test]
    fn oracle_agrees_with_fista_on_random_instances() {
        let cfg = SolverConfig::default();
        for seed in 0..12u64 {
            let m = 2 + (seed % 3) as usize;
            let op = make_dense(m, 2, Dist::Gaussian, 100 + seed).unwrap();
            let x = gen_sparse_flat_signal(2, 1 + (seed % 2) as usize, 1 + (seed % 2) as usize, seed, 0.2)
                .unwrap();
            let y = op.apply_mat(x.entries());
            for gamma in [1.0, 10.0] {
                let fista = solve_penalized(&op, &y, gamma, &cfg).unwrap();
                let oracle =
                    oracle_solve_small(&op, &y, OracleMode::Penalized { gamma }, 30).unwrap();
                assert!(
                    (fista.objective - oracle.objective).abs() <= 1e-6 * oracle.objective.max(1.0),
                    "penalized mismatch at seed {seed}: {} vs {}",
                    fista.objective,
                    oracle.objective
                );
            }
        }
    }

    #[test]
    fn oracle_local_optimality_probe() {
        let op = make_dense(3, 2, Dist::Gaussian, 200).unwrap();
        let y = random_y(3, 201);
        let res = oracle_solve_small(&op, &y, OracleMode::Penalized { gamma: 5.0 }, 30).unwrap();
        let a = op.materialize().unwrap();
        let obj = |v: &DVector<f64>| {
            let m = DMatrix::from_column_slice(2, 2, v.as_slice());
            let r = (&y - &a * v).norm();
            norm_colmax_l1_mat(&m) + 2.5 * r * r
        };
        let v0 = DVector::from_column_slice(res.minimizer.entries().as_slice());
        let mut rng = rng_from_seed(202);
        for _ in 0..100 {
            let d = DVector::from_fn(4, |_, _| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g
            });
            let cand = &v0 + d.normalize() * 1e-4;
            assert!(obj(&cand) >= res.objective - 1e-8);
        }
    }

    #[test]
    fn flatness_at_optimum_when_residual_condition_holds() {
        // Noise-free exact recovery of a flat signal: the minimizer is the
        // planted flat X, so the defect is tiny.
        let op = make_dense(14, 4, Dist::Gaussian, 300).unwrap();
        let x = gen_sparse_flat_signal(4, 1, 4, 301, 0.2).unwrap();
        let y = op.apply_mat(x.entries());
        let res = solve_constrained(&op, &y, 0.0, &SolverConfig::default()).unwrap();
        let err = (res.minimizer.entries() - x.entries()).norm() / x.norm_fro();
        assert!(err <= 1e-6, "relative error {err}");
        assert!(flatness_defect(&res.minimizer) <= 1e-6);
        assert!(norm_colmax_l1(&res.minimizer) <= norm_colmax_l1(&x) + 1e-9);
    }
}
