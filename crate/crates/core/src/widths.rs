//! Monte-Carlo estimators for descent-cone widths and minimum conic
//! singular values, plus closed-form evaluation of the measurement-count
//! bounds. All estimators are deterministic per seed and embarrassingly
//! parallel with per-sample derived seeds.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{CoreError, Result};
use crate::norms::{dist_to_subgradient_cone, norm_colmax_l1_mat, project_onto_descent_cone};
use crate::operators::MeasurementOp;
use crate::rng::{rng_from_seed, sample_seed, Dist};
use crate::signal::MatrixSignal;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthKind {
    GaussianWidthSq,
    KroneckerWidth,
    QXi,
    LambdaMin,
}

/// Monte-Carlo summary: mean (or extreme, for the one-sided kinds),
/// standard error and sample count.
#[derive(Debug, Clone, Serialize)]
pub struct WidthEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    pub kind: WidthKind,
}

fn summarize(values: &[f64], kind: WidthKind) -> Result<WidthEstimate> {
    if values.len() < 2 {
        return Err(CoreError::Parameter(
            "need at least 2 samples for a standard error".into(),
        ));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(WidthEstimate {
        mean,
        std_error: (var / n).sqrt(),
        samples: values.len(),
        kind,
    })
}

fn gaussian_matrix(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = rng_from_seed(seed);
    DMatrix::from_fn(n, n, |_, _| Dist::Gaussian.sample(&mut rng))
}

/// E[inf {|G - tV|_F^2}] over standard Gaussian G: the squared-width
/// upper-bound statistic for the descent cone at X.
pub fn mc_width_sq(x: &MatrixSignal, samples: usize, seed: u64) -> Result<WidthEstimate> {
    if norm_colmax_l1_mat(x.entries()) == 0.0 {
        return Err(CoreError::Parameter("X must be nonzero".into()));
    }
    let n = x.n();
    let values: Vec<f64> = (0..samples.max(2))
        .into_par_iter()
        .map(|i| {
            let g = MatrixSignal::new(gaussian_matrix(n, sample_seed(seed, i as u64)))
                .expect("gaussian draws are finite");
            dist_to_subgradient_cone(&g, x)
                .expect("X checked nonzero")
                .dist_sq
        })
        .collect();
    summarize(&values, WidthKind::GaussianWidthSq)
}

/// Family selector for the closed-form width bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WidthBoundFamily {
    Gaussian,
    KroneckerGaussian,
    KroneckerSubgaussian { sigma_a: f64, sigma_b: f64 },
}

/// Closed-form width bound: 1 + n^2 - r(n - s log(C n^4 r^2)) for the
/// Gaussian family, the squared-log variants for the Kronecker families,
/// with every absolute constant exposed as the parameter `c`.
pub fn analytic_width_bound(
    n: usize,
    s: usize,
    r: usize,
    c: f64,
    family: WidthBoundFamily,
) -> Result<f64> {
    if c <= 0.0 || s == 0 || s > n || r == 0 || r > n {
        return Err(CoreError::Parameter(format!(
            "need c > 0 and 1 <= s,r <= n; got c = {c}, s = {s}, r = {r}, n = {n}"
        )));
    }
    let nf = n as f64;
    let sf = s as f64;
    let rf = r as f64;
    match family {
        WidthBoundFamily::Gaussian => {
            let arg = c * nf.powi(4) * rf * rf;
            if arg <= 1.0 {
                return Err(CoreError::Domain(format!(
                    "log argument C n^4 r^2 = {arg} must exceed 1"
                )));
            }
            Ok(1.0 + nf * nf - rf * (nf - sf * arg.ln()))
        }
        WidthBoundFamily::KroneckerGaussian => {
            let arg = c * nf * nf * rf;
            if arg <= 1.0 {
                return Err(CoreError::Domain(format!(
                    "log argument c n^2 r = {arg} must exceed 1"
                )));
            }
            Ok(1.0 + nf * nf - rf * (nf - sf * arg.ln().powi(2)))
        }
        WidthBoundFamily::KroneckerSubgaussian { sigma_a, sigma_b } => {
            if sigma_a <= 0.0 || sigma_b <= 0.0 {
                return Err(CoreError::Parameter(
                    "psi2 scales must be positive".into(),
                ));
            }
            let arg = c * nf * nf * rf;
            if arg <= 1.0 {
                return Err(CoreError::Domain(format!(
                    "log argument C n^2 r = {arg} must exceed 1"
                )));
            }
            let base = 1.0 + nf * nf - rf * (nf - sf * arg.ln().powi(2));
            Ok(sigma_a * sigma_a * sigma_b * sigma_b * base)
        }
    }
}

/// Width statistic for the factored measurement: per sample draw factor
/// matrices A, B and a Rademacher matrix E, form H = A^T E B / m, and
/// evaluate the descent-cone supremum at X.
pub fn mc_width_kronecker(
    x: &MatrixSignal,
    m: usize,
    dist: Dist,
    samples: usize,
    seed: u64,
) -> Result<WidthEstimate> {
    if norm_colmax_l1_mat(x.entries()) == 0.0 {
        return Err(CoreError::Parameter("X must be nonzero".into()));
    }
    if m == 0 {
        return Err(CoreError::Parameter("m must be at least 1".into()));
    }
    let n = x.n();
    let values: Vec<f64> = (0..samples.max(2))
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(sample_seed(seed, i as u64));
            let a = DMatrix::from_fn(m, n, |_, _| dist.sample(&mut rng));
            let b = DMatrix::from_fn(m, n, |_, _| dist.sample(&mut rng));
            let e = DMatrix::from_fn(m, m, |_, _| Dist::Rademacher.sample(&mut rng));
            let h = (a.transpose() * e * b) / m as f64;
            let hm = MatrixSignal::new(h).expect("finite");
            dist_to_subgradient_cone(&hm, x)
                .expect("X checked nonzero")
                .dist_sq
                .max(0.0)
                .sqrt()
        })
        .collect();
    summarize(&values, WidthKind::KroneckerWidth)
}

/// Small-ball probability floor: the minimum over sampled unit directions
/// U of P[|<a b^T, U>| >= 1/sqrt(2)], an upper-bound estimate of the
/// infimum over the tested set.
pub fn q_xi_estimate(
    dist: Dist,
    n: usize,
    directions: usize,
    samples: usize,
    seed: u64,
) -> Result<WidthEstimate> {
    if directions == 0 || n == 0 {
        return Err(CoreError::Parameter(
            "need directions >= 1 and n >= 1".into(),
        ));
    }
    let threshold = std::f64::consts::FRAC_1_SQRT_2;
    let per_direction: Vec<f64> = (0..directions)
        .into_par_iter()
        .map(|d| {
            let dir_seed = sample_seed(seed, d as u64);
            let u = {
                let g = gaussian_matrix(n, dir_seed);
                let nrm = g.norm();
                g / nrm
            };
            let mut rng = rng_from_seed(sample_seed(dir_seed, 0x51DE));
            let mut hits = 0usize;
            let total = samples.max(2);
            for _ in 0..total {
                let a = DVector::from_fn(n, |_, _| dist.sample(&mut rng));
                let b = DVector::from_fn(n, |_, _| dist.sample(&mut rng));
                let inner = (a.transpose() * &u * b)[(0, 0)];
                if inner.abs() >= threshold {
                    hits += 1;
                }
            }
            hits as f64 / total as f64
        })
        .collect();
    let (min_idx, min_p) = per_direction
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, p)| (i, *p))
        .expect("directions >= 1");
    let _ = min_idx;
    let se = (min_p * (1.0 - min_p) / samples.max(2) as f64).sqrt();
    Ok(WidthEstimate {
        mean: min_p,
        std_error: se,
        samples: directions * samples.max(2),
        kind: WidthKind::QXi,
    })
}

/// Minimum of |Φ(U)| over sampled unit-Frobenius descent-cone directions:
/// a one-sided (upper-bound) estimate of the minimum conic singular value.
///
/// Directions are produced by projecting Gaussian draws onto the descent
/// cone (the Moreau complement of the subdifferential-cone projection);
/// zero projections are rejected.
pub fn estimate_lambda_min(
    op: &MeasurementOp,
    x: &MatrixSignal,
    samples: usize,
    seed: u64,
) -> Result<WidthEstimate> {
    if norm_colmax_l1_mat(x.entries()) == 0.0 {
        return Err(CoreError::Parameter("X must be nonzero".into()));
    }
    if x.n() != op.n() {
        return Err(CoreError::Dimension(
            "signal and operator dimensions differ".into(),
        ));
    }
    let n = x.n();
    let values: Vec<f64> = (0..samples.max(2))
        .into_par_iter()
        .filter_map(|i| {
            let g = gaussian_matrix(n, sample_seed(seed, i as u64));
            let proj = project_onto_descent_cone(&g, x);
            let nrm = proj.norm();
            if nrm <= 1e-12 {
                return None;
            }
            let u = proj / nrm;
            Some(op.apply_mat(&u).norm())
        })
        .collect();
    if values.len() < 2 {
        return Err(CoreError::NoConvergence(
            "descent-cone sampling rejected nearly all draws".into(),
        ));
    }
    let summary = summarize(&values, WidthKind::LambdaMin)?;
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(WidthEstimate {
        mean: min,
        std_error: summary.std_error,
        samples: values.len(),
        kind: WidthKind::LambdaMin,
    })
}

/// Family selector for the measurement-count bounds. All absolute
/// constants default to 1 and are overridable; the sub-Gaussian family
/// takes its moment parameters explicitly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeasurementFamily {
    Gaussian,
    Subgaussian { alpha: f64, rho: f64, sigma: f64 },
    KroneckerGaussian,
    KroneckerSubgaussian { sigma_a: f64, sigma_b: f64 },
}

/// Absolute constants appearing in the measurement-count bounds.
#[derive(Debug, Clone, Copy)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    /// Deviation scale multiplying t in the sub-Gaussian family.
    pub a: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        Self {
            c1: 1.0,
            c2: 1.0,
            c3: 1.0,
            a: 1.0,
        }
    }
}

/// Sufficient measurement count for robust recovery at noise eta and
/// error target delta, with deviation parameter t.
///
/// For the Kronecker families the returned value is the side m; the
/// measurement count is m^2.
pub fn required_measurements(
    family: MeasurementFamily,
    n: usize,
    s: usize,
    eta: f64,
    delta: f64,
    t: f64,
    constants: BoundConstants,
) -> Result<f64> {
    if delta <= 0.0 {
        return Err(CoreError::Parameter("delta must be positive".into()));
    }
    if eta < 0.0 || t < 0.0 {
        return Err(CoreError::Parameter(
            "eta and t must be nonnegative".into(),
        ));
    }
    if constants.c1 <= 0.0 || constants.c2 <= 0.0 || constants.c3 <= 0.0 || constants.a <= 0.0 {
        return Err(CoreError::Parameter("constants must be positive".into()));
    }
    let nf = n as f64;
    let sf = s as f64;
    let log6 = |c: f64| -> Result<f64> {
        let arg = c * nf.powi(6);
        if arg <= 1.0 {
            return Err(CoreError::Domain(format!(
                "log argument C n^6 = {arg} must exceed 1"
            )));
        }
        Ok(arg.ln())
    };
    let log3 = |c: f64| -> Result<f64> {
        let arg = c * nf.powi(3);
        if arg <= 1.0 {
            return Err(CoreError::Domain(format!(
                "log argument C n^3 = {arg} must exceed 1"
            )));
        }
        Ok(arg.ln())
    };
    match family {
        MeasurementFamily::Gaussian => {
            let w = (nf * sf * log6(constants.c1)?).sqrt();
            let base = t + 2.0 * eta / delta + w;
            Ok(base * base)
        }
        MeasurementFamily::Subgaussian { alpha, rho, sigma } => {
            if alpha <= 0.0 || rho <= 0.0 || sigma <= 0.0 {
                return Err(CoreError::Parameter(
                    "need positive alpha, rho, sigma".into(),
                ));
            }
            let w = (rho.powi(6) * nf * sf * log6(constants.c3)?).sqrt();
            let base = constants.a * t + 2.0 * eta / delta + sigma * constants.c2 * w;
            Ok((constants.c1 * rho.powi(4) / alpha) * base * base)
        }
        MeasurementFamily::KroneckerGaussian => {
            Ok(t + 4.0 * 2.0f64.sqrt() * eta / delta
                + constants.c1 * (nf * sf).sqrt() * log3(constants.c2)?)
        }
        MeasurementFamily::KroneckerSubgaussian { sigma_a, sigma_b } => {
            if sigma_a <= 0.0 || sigma_b <= 0.0 {
                return Err(CoreError::Parameter(
                    "psi2 scales must be positive".into(),
                ));
            }
            Ok(t + 4.0 * 2.0f64.sqrt() * eta / delta
                + constants.c1 * sigma_a * sigma_b * (nf * sf).sqrt() * log3(constants.c2)?)
        }
    }
}

/// Necessary measurement count (1/(2 ln 3)) n s ln(n/(4s)) with the
/// derivation's constants; zero exactly at the domain boundary s = n/4.
pub fn necessary_measurements(n: usize, s: usize) -> Result<f64> {
    if n == 0 || s == 0 {
        return Err(CoreError::Parameter("need n >= 1 and s >= 1".into()));
    }
    let arg = n as f64 / (4.0 * s as f64);
    if arg < 1.0 {
        return Err(CoreError::Domain(format!(
            "bound needs s <= n/4 (log argument {arg} < 1)"
        )));
    }
    Ok((n as f64) * (s as f64) * arg.ln() / (2.0 * 3.0f64.ln()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{from_payload, identity_op};
    use crate::signal::gen_sparse_flat_signal;
    use approx::assert_abs_diff_eq;

    #[test]
    fn scalar_width_matches_closed_form() {
        // n = 1: the statistic is g^2 1{g < 0} with mean 1/2.
        let x = MatrixSignal::from_rows(&[vec![5.0]]).unwrap();
        let est = mc_width_sq(&x, 10_000, 42).unwrap();
        assert!(
            (est.mean - 0.5).abs() <= 4.0 * est.std_error,
            "mean {} se {}",
            est.mean,
            est.std_error
        );
    }

    #[test]
    fn width_respects_ambient_bound_and_determinism() {
        let x = gen_sparse_flat_signal(4, 2, 4, 3, 0.2).unwrap();
        let a = mc_width_sq(&x, 500, 7).unwrap();
        let b = mc_width_sq(&x, 500, 7).unwrap();
        assert_eq!(a.mean, b.mean);
        assert!(a.mean <= 17.0); // n^2 + 1
        assert!(a.std_error > 0.0);
    }

    #[test]
    fn rejects_zero_signal() {
        let z = MatrixSignal::zeros(2);
        assert!(mc_width_sq(&z, 10, 0).is_err());
        assert!(mc_width_kronecker(&z, 2, Dist::Gaussian, 10, 0).is_err());
    }

    #[test]
    fn analytic_bound_examples() {
        let g = analytic_width_bound(10, 2, 10, 1.0, WidthBoundFamily::Gaussian).unwrap();
        assert_abs_diff_eq!(g, 1.0 + 20.0 * (1e6f64).ln(), epsilon = 1e-9);

        let k =
            analytic_width_bound(10, 2, 10, 1.0, WidthBoundFamily::KroneckerGaussian).unwrap();
        assert_abs_diff_eq!(k, 1.0 + 20.0 * (1e3f64).ln().powi(2), epsilon = 1e-9);

        let sg = analytic_width_bound(
            10,
            2,
            10,
            1.0,
            WidthBoundFamily::KroneckerSubgaussian {
                sigma_a: 1.0,
                sigma_b: 1.0,
            },
        )
        .unwrap();
        assert_abs_diff_eq!(sg, k, epsilon = 1e-12);

        // Domain error is reported, not clamped.
        assert!(matches!(
            analytic_width_bound(1, 1, 1, 1e-9, WidthBoundFamily::Gaussian),
            Err(CoreError::Domain(_))
        ));
    }

    #[test]
    fn kronecker_width_statistics() {
        let x = gen_sparse_flat_signal(4, 1, 4, 9, 0.2).unwrap();
        let est = mc_width_kronecker(&x, 4, Dist::Gaussian, 300, 11).unwrap();
        assert!(est.mean >= 0.0);
        // Cauchy-Schwarz against E|H|_F on the same stream.
        let mut h_norms = Vec::new();
        for i in 0..300u64 {
            let mut rng = rng_from_seed(sample_seed(11, i));
            let a = DMatrix::from_fn(4, 4, |_, _| Dist::Gaussian.sample(&mut rng));
            let b = DMatrix::from_fn(4, 4, |_, _| Dist::Gaussian.sample(&mut rng));
            let e = DMatrix::from_fn(4, 4, |_, _| Dist::Rademacher.sample(&mut rng));
            h_norms.push(((a.transpose() * e * b) / 4.0).norm());
        }
        let mean_h = h_norms.iter().sum::<f64>() / h_norms.len() as f64;
        assert!(est.mean <= mean_h + 1e-9, "{} vs {}", est.mean, mean_h);
    }

    #[test]
    fn qxi_moment_identity_and_floor() {
        // Second moment of <a b^T, U> is 1 for unit-Frobenius U.
        let n = 4;
        let u = {
            let g = gaussian_matrix(n, 5);
            let nrm = g.norm();
            g / nrm
        };
        let mut rng = rng_from_seed(6);
        let total = 20_000;
        let mut sum_sq = 0.0;
        for _ in 0..total {
            let a = DVector::from_fn(n, |_, _| Dist::Gaussian.sample(&mut rng));
            let b = DVector::from_fn(n, |_, _| Dist::Gaussian.sample(&mut rng));
            let inner = (a.transpose() * &u * b)[(0, 0)];
            sum_sq += inner * inner;
        }
        let second = sum_sq / total as f64;
        // SE of the second moment of a heavy-ish product variable.
        assert!((second - 1.0).abs() <= 0.1, "second moment {second}");

        let est = q_xi_estimate(Dist::Gaussian, 4, 10, 2_000, 7).unwrap();
        assert!(est.mean >= 0.05, "floor {}", est.mean);
        assert!(est.mean <= 1.0);
    }

    #[test]
    fn lambda_min_isometry_and_homogeneity() {
        let x = gen_sparse_flat_signal(3, 1, 3, 13, 0.2).unwrap();
        let op = identity_op(3);
        let est = estimate_lambda_min(&op, &x, 200, 17).unwrap();
        assert_abs_diff_eq!(est.mean, 1.0, epsilon = 1e-9);

        let scaled = from_payload(DMatrix::identity(9, 9) * 2.5, 3).unwrap();
        let est2 = estimate_lambda_min(&scaled, &x, 200, 17).unwrap();
        assert_abs_diff_eq!(est2.mean, 2.5, epsilon = 1e-9);
    }

    #[test]
    fn cone_sample_directions_are_descent_directions() {
        // Membership audit: ‖X + eps U‖₁ <= ‖X‖₁ + tolerance for small eps.
        let x = gen_sparse_flat_signal(4, 2, 4, 19, 0.2).unwrap();
        let base = norm_colmax_l1_mat(x.entries());
        for i in 0..100u64 {
            let g = gaussian_matrix(4, sample_seed(23, i));
            let proj = project_onto_descent_cone(&g, &x);
            if proj.norm() <= 1e-12 {
                continue;
            }
            let u = &proj / proj.norm();
            let mut ok = false;
            for eps in [1e-3, 1e-4, 1e-5, 1e-6] {
                let moved = x.entries() + &u * eps;
                if norm_colmax_l1_mat(&moved) <= base + 1e-8 {
                    ok = true;
                    break;
                }
            }
            assert!(ok, "sample {i} is not a descent direction");
        }
    }

    #[test]
    fn required_measurements_examples() {
        let g = required_measurements(
            MeasurementFamily::Gaussian,
            10,
            2,
            0.0,
            1.0,
            1.0,
            BoundConstants::default(),
        )
        .unwrap();
        let w = (20.0 * (1e6f64).ln()).sqrt();
        assert_abs_diff_eq!(g, (1.0 + w) * (1.0 + w), epsilon = 1e-9);

        let k = required_measurements(
            MeasurementFamily::KroneckerGaussian,
            10,
            2,
            1.0,
            1.0,
            1.0,
            BoundConstants::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(
            k,
            1.0 + 4.0 * 2.0f64.sqrt() + 20.0f64.sqrt() * (1e3f64).ln(),
            epsilon = 1e-9
        );

        // eta = 0 removes the noise term in every family.
        for fam in [
            MeasurementFamily::Gaussian,
            MeasurementFamily::KroneckerGaussian,
            MeasurementFamily::KroneckerSubgaussian {
                sigma_a: 1.3,
                sigma_b: 0.8,
            },
            MeasurementFamily::Subgaussian {
                alpha: 0.5,
                rho: 1.2,
                sigma: 1.1,
            },
        ] {
            let with = required_measurements(fam, 8, 1, 0.5, 0.1, 1.0, BoundConstants::default())
                .unwrap();
            let without =
                required_measurements(fam, 8, 1, 0.0, 0.1, 1.0, BoundConstants::default())
                    .unwrap();
            assert!(with > without);
        }
    }

    #[test]
    fn necessary_measurements_examples() {
        let v = necessary_measurements(16, 2).unwrap();
        assert_abs_diff_eq!(v, 32.0 * 2.0f64.ln() / (2.0 * 3.0f64.ln()), epsilon = 1e-9);
        // Boundary: log argument exactly 1.
        assert_abs_diff_eq!(necessary_measurements(8, 2).unwrap(), 0.0);
        assert!(necessary_measurements(7, 2).is_err());
        // Monotone in n for fixed s.
        let mut prev = 0.0;
        for n in [9, 12, 16, 24, 40] {
            let v = necessary_measurements(n, 2).unwrap();
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn width_grows_with_s_and_shrinks_with_r() {
        // Qualitative check of the structural-parameter dependence.
        let n = 6;
        let by_s: Vec<f64> = [1usize, 2, 3]
            .iter()
            .map(|&s| {
                let x = gen_sparse_flat_signal(n, s, n, 100 + s as u64, 0.2).unwrap();
                mc_width_sq(&x, 400, 7).unwrap().mean
            })
            .collect();
        assert!(by_s[0] < by_s[1] && by_s[1] < by_s[2], "{by_s:?}");

        let by_r: Vec<f64> = [2usize, 4, 6]
            .iter()
            .map(|&r| {
                let x = gen_sparse_flat_signal(n, 2, r, 200 + r as u64, 0.2).unwrap();
                mc_width_sq(&x, 400, 7).unwrap().mean
            })
            .collect();
        assert!(by_r[0] > by_r[2], "{by_r:?}");
    }
}
