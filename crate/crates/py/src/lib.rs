//! Python bindings for the core library: signal generation, norms, the
//! proximal operator, solvers, condition checks and width estimators.
//! Matrices cross the boundary as row-major nested lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use colflat_core::conditions as cond;
use colflat_core::error::CoreError;
use colflat_core::norms;
use colflat_core::operators as ops;
use colflat_core::rng::Dist;
use colflat_core::signal as sig;
use colflat_core::solver;
use colflat_core::widths;

fn err(e: CoreError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_signal(rows: Vec<Vec<f64>>) -> PyResult<sig::MatrixSignal> {
    sig::MatrixSignal::from_rows(&rows).map_err(err)
}

fn to_rows(x: &sig::MatrixSignal) -> Vec<Vec<f64>> {
    let n = x.n();
    (0..n)
        .map(|i| (0..n).map(|j| x[(i, j)]).collect())
        .collect()
}

fn parse_dist(tag: &str) -> PyResult<Dist> {
    tag.parse::<Dist>().map_err(err)
}

fn build_op(kind: &str, m: usize, n: usize, dist: &str, seed: u64) -> PyResult<ops::MeasurementOp> {
    let dist = parse_dist(dist)?;
    match kind {
        "dense" => ops::make_dense(m, n, dist, seed).map_err(err),
        "kronecker" => ops::make_kronecker_random(m, n, dist, seed).map_err(err),
        other => Err(PyValueError::new_err(format!(
            "unknown operator kind `{other}`"
        ))),
    }
}

/// Generate an n-by-n column-sparse signal with r maximal-norm columns.
#[pyfunction]
#[pyo3(signature = (n, s, r, seed, min_gap=0.2))]
fn gen_signal(n: usize, s: usize, r: usize, seed: u64, min_gap: f64) -> PyResult<Vec<Vec<f64>>> {
    let x = sig::gen_sparse_flat_signal(n, s, r, seed, min_gap).map_err(err)?;
    Ok(to_rows(&x))
}

/// max over columns of the column l1 norm.
#[pyfunction]
fn norm_colmax_l1(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(norms::norm_colmax_l1(&to_signal(rows)?))
}

/// Dual norm: sum over columns of the column max norm.
#[pyfunction]
fn dual_norm(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(norms::dual_norm(&to_signal(rows)?))
}

/// max - min of the column l1 norms.
#[pyfunction]
fn flatness_defect(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(sig::flatness_defect(&to_signal(rows)?))
}

/// Proximal operator of tau * the max-column-l1 norm.
#[pyfunction]
fn prox_colmax_l1(rows: Vec<Vec<f64>>, tau: f64) -> PyResult<Vec<Vec<f64>>> {
    let x = to_signal(rows)?;
    Ok(to_rows(&norms::prox_colmax_l1(&x, tau).map_err(err)?))
}

/// Frobenius projection onto the dual-norm ball of the given radius.
#[pyfunction]
fn project_dual_ball(rows: Vec<Vec<f64>>, radius: f64) -> PyResult<Vec<Vec<f64>>> {
    let x = to_signal(rows)?;
    Ok(to_rows(&norms::project_dual_ball(&x, radius).map_err(err)?))
}

/// Squared distance of G to the subdifferential cone at X, plus the
/// Moreau-complement norm (dist_sq, sup_value).
#[pyfunction]
fn cone_distance(g: Vec<Vec<f64>>, x: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let g = to_signal(g)?;
    let x = to_signal(x)?;
    let res = norms::dist_to_subgradient_cone(&g, &x).map_err(err)?;
    Ok((res.dist_sq, res.sup_value))
}

/// Solve a planted instance and return a result dict.
#[pyfunction]
#[pyo3(signature = (op_kind, n, s, m, eta, seed, dist="gaussian", gamma=None))]
#[allow(clippy::too_many_arguments)]
fn solve_planted(
    py: Python<'_>,
    op_kind: &str,
    n: usize,
    s: usize,
    m: usize,
    eta: f64,
    seed: u64,
    dist: &str,
    gamma: Option<f64>,
) -> PyResult<PyObject> {
    let op = build_op(op_kind, m, n, dist, seed)?;
    let x = sig::gen_sparse_flat_signal(n, s, n, seed ^ 1, 0.2).map_err(err)?;
    let y = op.apply_mat(x.entries());
    let cfg = solver::SolverConfig::default();
    let res = match gamma {
        Some(g) => solver::solve_penalized(&op, &y, g, &cfg).map_err(err)?,
        None => solver::solve_constrained(&op, &y, eta, &cfg).map_err(err)?,
    };
    let error = (res.minimizer.entries() - x.entries()).norm();
    let out = pyo3::types::PyDict::new(py);
    out.set_item("objective", res.objective)?;
    out.set_item("kkt_residual", res.kkt_residual)?;
    out.set_item("residual_norm", res.residual_norm)?;
    out.set_item("gamma", res.gamma)?;
    out.set_item("iterations", res.iterations)?;
    out.set_item("converged", res.converged)?;
    out.set_item("error_fro", error)?;
    out.set_item("minimizer", to_rows(&res.minimizer))?;
    Ok(out.into())
}

/// Sampled null-space-property ratio for a described operator.
#[pyfunction]
#[pyo3(signature = (op_kind, n, s, m, seed, dist="gaussian", trials=80, refine=60))]
#[allow(clippy::too_many_arguments)]
fn nsp_ratio(
    op_kind: &str,
    n: usize,
    s: usize,
    m: usize,
    seed: u64,
    dist: &str,
    trials: usize,
    refine: usize,
) -> PyResult<(f64, bool)> {
    let op = build_op(op_kind, m, n, dist, seed)?;
    let rep = cond::estimate_nsp_ratio(&op, s, trials, refine, seed ^ 0xA5).map_err(err)?;
    Ok((rep.constant("rho").unwrap_or(f64::NAN), rep.pass))
}

/// Monte-Carlo squared-width estimate (mean, std_error).
#[pyfunction]
#[pyo3(signature = (n, s, r, samples, seed))]
fn width_sq(n: usize, s: usize, r: usize, samples: usize, seed: u64) -> PyResult<(f64, f64)> {
    let x = sig::gen_sparse_flat_signal(n, s, r, seed ^ 1, 0.2).map_err(err)?;
    let est = widths::mc_width_sq(&x, samples, seed).map_err(err)?;
    Ok((est.mean, est.std_error))
}

/// Closed-form width bound for the Gaussian family.
#[pyfunction]
#[pyo3(signature = (n, s, r, c=1.0))]
fn width_bound_gaussian(n: usize, s: usize, r: usize, c: f64) -> PyResult<f64> {
    widths::analytic_width_bound(n, s, r, c, widths::WidthBoundFamily::Gaussian).map_err(err)
}

/// Sufficient measurement count for the Gaussian family.
#[pyfunction]
#[pyo3(signature = (n, s, eta, delta, t, c=1.0))]
fn required_measurements_gaussian(
    n: usize,
    s: usize,
    eta: f64,
    delta: f64,
    t: f64,
    c: f64,
) -> PyResult<f64> {
    widths::required_measurements(
        widths::MeasurementFamily::Gaussian,
        n,
        s,
        eta,
        delta,
        t,
        widths::BoundConstants {
            c1: c,
            ..Default::default()
        },
    )
    .map_err(err)
}

/// Necessary measurement count (1/(2 ln 3)) n s ln(n/(4 s)).
#[pyfunction]
fn necessary_measurements(n: usize, s: usize) -> PyResult<f64> {
    widths::necessary_measurements(n, s).map_err(err)
}

#[pymodule]
fn colflat(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(gen_signal, m)?)?;
    m.add_function(wrap_pyfunction!(norm_colmax_l1, m)?)?;
    m.add_function(wrap_pyfunction!(dual_norm, m)?)?;
    m.add_function(wrap_pyfunction!(flatness_defect, m)?)?;
    m.add_function(wrap_pyfunction!(prox_colmax_l1, m)?)?;
    m.add_function(wrap_pyfunction!(project_dual_ball, m)?)?;
    m.add_function(wrap_pyfunction!(cone_distance, m)?)?;
    m.add_function(wrap_pyfunction!(solve_planted, m)?)?;
    m.add_function(wrap_pyfunction!(nsp_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(width_sq, m)?)?;
    m.add_function(wrap_pyfunction!(width_bound_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(required_measurements_gaussian, m)?)?;
    m.add_function(wrap_pyfunction!(necessary_measurements, m)?)?;
    Ok(())
}
