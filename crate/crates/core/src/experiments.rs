//! Reproducible experiment harness: phase-transition sweeps, robustness
//! and stability studies, with deterministic seeding, parallel trials and
//! a fixed CSV schema.
//!
//! Trial seed = chained SplitMix64 over (master seed, cell index, trial
//! index); records are buffered and written in (cell, trial) order so a
//! config and master seed reproduce the table.

use std::io::Write;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::conditions::{
    check_flatness_residual, estimate_nsp_ratio, estimate_robust_nsp, rnsp_beta_value,
    thm41_report,
};
use crate::error::{CoreError, Result};
use crate::norms::norm_colmax_l1_mat;
use crate::operators::{make_dense, make_kronecker_random, MeasurementOp};
use crate::rng::{derive_seed, rng_from_seed, Dist};
use crate::signal::{flatness_defect, gen_sparse_flat_signal, support_pattern, MatrixSignal};
use crate::solver::{solve_constrained, SolveStatus, SolverConfig};

/// Exact column order of the sweep tables.
pub const CSV_HEADER: &str = "experiment,n,s,r,m,family,dist,eta,gamma,trial,seed,status,error_fro,error_l1max,success,support_match,sign_match,flatness_defect,iterations,runtime_ms";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    PhaseTransition,
    Robustness,
    Stability,
}

impl ExperimentKind {
    pub fn tag(self) -> &'static str {
        match self {
            ExperimentKind::PhaseTransition => "phase_transition",
            ExperimentKind::Robustness => "robustness",
            ExperimentKind::Stability => "stability",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpFamily {
    Dense,
    Kronecker,
}

impl OpFamily {
    pub fn tag(self) -> &'static str {
        match self {
            OpFamily::Dense => "dense",
            OpFamily::Kronecker => "kronecker",
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    /// Relative Frobenius error below which a trial counts as success.
    #[serde(default = "default_success_tol")]
    pub success_tol: f64,
    /// Magnitude threshold for recovered supports.
    #[serde(default = "default_support_tol")]
    pub support_tol: f64,
}

fn default_success_tol() -> f64 {
    1e-5
}
fn default_support_tol() -> f64 {
    1e-6
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            success_tol: default_success_tol(),
            support_tol: default_support_tol(),
        }
    }
}

/// Sweep configuration. Unknown keys are rejected, not ignored.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub n_grid: Vec<usize>,
    pub s_grid: Vec<usize>,
    /// Flat-column counts; absent means r = n for every cell.
    #[serde(default)]
    pub r_grid: Option<Vec<usize>>,
    /// Measurement counts (the side m for the Kronecker family).
    pub m_grid: Vec<usize>,
    #[serde(default = "default_eta_grid")]
    pub eta_grid: Vec<f64>,
    #[serde(default = "default_family")]
    pub family: OpFamily,
    #[serde(default = "default_dist")]
    pub dist: Dist,
    pub trials: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub output: Option<String>,
}

fn default_eta_grid() -> Vec<f64> {
    vec![0.0]
}
fn default_family() -> OpFamily {
    OpFamily::Dense
}
fn default_dist() -> Dist {
    Dist::Gaussian
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() || self.s_grid.is_empty() || self.m_grid.is_empty() {
            return Err(CoreError::Parameter(
                "n_grid, s_grid and m_grid must be nonempty".into(),
            ));
        }
        if self.eta_grid.is_empty() {
            return Err(CoreError::Parameter("eta_grid must be nonempty".into()));
        }
        if self.trials == 0 {
            return Err(CoreError::Parameter("trials must be at least 1".into()));
        }
        if self.eta_grid.iter().any(|&e| e < 0.0 || !e.is_finite()) {
            return Err(CoreError::Parameter(
                "eta values must be finite and nonnegative".into(),
            ));
        }
        for &n in &self.n_grid {
            for &s in &self.s_grid {
                if s == 0 || s > n {
                    return Err(CoreError::Parameter(format!(
                        "cell (n = {n}, s = {s}) violates 1 <= s <= n"
                    )));
                }
            }
            if let Some(rs) = &self.r_grid {
                for &r in rs {
                    if r == 0 || r > n {
                        return Err(CoreError::Parameter(format!(
                            "cell (n = {n}, r = {r}) violates 1 <= r <= n"
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// One solved trial, one CSV row.
#[derive(Debug, Clone, Serialize)]
pub struct TrialRecord {
    pub experiment: String,
    pub n: usize,
    pub s: usize,
    pub r: usize,
    pub m: usize,
    pub family: String,
    pub dist: String,
    pub eta: f64,
    pub gamma: f64,
    pub trial: usize,
    pub seed: u64,
    pub status: String,
    pub error_fro: f64,
    pub error_l1max: f64,
    pub success: bool,
    pub support_match: f64,
    pub sign_match: f64,
    pub flatness_defect: f64,
    pub iterations: usize,
    pub runtime_ms: u64,
}

fn fmt_float(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:.11e}")
    }
}

impl TrialRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.experiment,
            self.n,
            self.s,
            self.r,
            self.m,
            self.family,
            self.dist,
            fmt_float(self.eta),
            fmt_float(self.gamma),
            self.trial,
            self.seed,
            self.status,
            fmt_float(self.error_fro),
            fmt_float(self.error_l1max),
            self.success,
            fmt_float(self.support_match),
            fmt_float(self.sign_match),
            fmt_float(self.flatness_defect),
            self.iterations,
            self.runtime_ms
        )
    }
}

/// Write records with the fixed header, UTF-8 and LF endings.
pub fn write_csv<W: Write>(out: &mut W, records: &[TrialRecord]) -> Result<()> {
    out.write_all(CSV_HEADER.as_bytes())?;
    out.write_all(b"\n")?;
    for r in records {
        out.write_all(r.csv_row().as_bytes())?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

fn build_operator(family: OpFamily, m: usize, n: usize, dist: Dist, seed: u64) -> Result<MeasurementOp> {
    match family {
        OpFamily::Dense => make_dense(m, n, dist, seed),
        OpFamily::Kronecker => make_kronecker_random(m, n, dist, seed),
    }
}

fn unit_noise(dim: usize, seed: u64) -> DVector<f64> {
    let mut rng = rng_from_seed(seed);
    let v = DVector::from_fn(dim, |_, _| Dist::Gaussian.sample(&mut rng));
    let nrm = v.norm();
    if nrm > 0.0 {
        v / nrm
    } else {
        let mut e = DVector::zeros(dim);
        e[0] = 1.0;
        e
    }
}

/// Jaccard index of recovered vs planted support coordinates.
fn support_jaccard(recovered: &MatrixSignal, planted: &MatrixSignal, tol: f64) -> f64 {
    let a = support_pattern(recovered, tol);
    let b = support_pattern(planted, tol);
    let mut inter = 0usize;
    let mut union = 0usize;
    for j in 0..recovered.n() {
        for i in 0..recovered.n() {
            let ia = a.contains(i, j);
            let ib = b.contains(i, j);
            if ia && ib {
                inter += 1;
            }
            if ia || ib {
                union += 1;
            }
        }
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Fraction of planted-support entries whose sign is reproduced.
fn sign_match_fraction(recovered: &MatrixSignal, planted: &MatrixSignal) -> f64 {
    let mut total = 0usize;
    let mut matched = 0usize;
    for j in 0..planted.n() {
        for i in 0..planted.n() {
            let p = planted[(i, j)];
            if p != 0.0 {
                total += 1;
                if recovered[(i, j)].signum() == p.signum() && recovered[(i, j)] != 0.0 {
                    matched += 1;
                }
            }
        }
    }
    if total == 0 {
        1.0
    } else {
        matched as f64 / total as f64
    }
}

struct TrialOutcome {
    record: TrialRecord,
    minimizer: Option<MatrixSignal>,
    planted: MatrixSignal,
}

#[allow(clippy::too_many_arguments)]
fn run_trial(
    experiment: &str,
    op: &MeasurementOp,
    family: OpFamily,
    dist: Dist,
    n: usize,
    s: usize,
    r: usize,
    m: usize,
    eta: f64,
    trial: usize,
    seed: u64,
    tol: &Tolerances,
    solver_cfg: &SolverConfig,
) -> TrialOutcome {
    let start = Instant::now();
    let x = gen_sparse_flat_signal(n, s, r, seed, 0.2).expect("validated grid");
    let y_clean = op.apply_mat(x.entries());
    let y = if eta > 0.0 {
        &y_clean + unit_noise(op.meas_dim(), derive_seed(seed, 0xE, 0)) * eta
    } else {
        y_clean
    };
    let solved = solve_constrained(op, &y, eta, solver_cfg);
    let runtime_ms = start.elapsed().as_millis() as u64;
    match solved {
        Ok(res) => {
            let err = res.minimizer.entries() - x.entries();
            let error_fro = err.norm();
            let error_l1max = norm_colmax_l1_mat(&err);
            let success = error_fro <= tol.success_tol * x.norm_fro().max(1.0);
            let status = match res.status {
                SolveStatus::Converged => "ok",
                SolveStatus::TrivialZero => "trivial",
                SolveStatus::MaxIters => "no_convergence",
            };
            let record = TrialRecord {
                experiment: experiment.into(),
                n,
                s,
                r,
                m,
                family: family.tag().into(),
                dist: dist.tag().into(),
                eta,
                gamma: res.gamma,
                trial,
                seed,
                status: status.into(),
                error_fro,
                error_l1max,
                success,
                support_match: support_jaccard(&res.minimizer, &x, tol.support_tol),
                sign_match: sign_match_fraction(&res.minimizer, &x),
                flatness_defect: flatness_defect(&res.minimizer),
                iterations: res.iterations,
                runtime_ms,
            };
            TrialOutcome {
                record,
                minimizer: Some(res.minimizer),
                planted: x,
            }
        }
        Err(e) => {
            let status = match e {
                CoreError::NoConvergence(_) => "no_convergence",
                _ => "error",
            };
            let record = TrialRecord {
                experiment: experiment.into(),
                n,
                s,
                r,
                m,
                family: family.tag().into(),
                dist: dist.tag().into(),
                eta,
                gamma: f64::NAN,
                trial,
                seed,
                status: status.into(),
                error_fro: f64::NAN,
                error_l1max: f64::NAN,
                success: false,
                support_match: f64::NAN,
                sign_match: f64::NAN,
                flatness_defect: f64::NAN,
                iterations: 0,
                runtime_ms,
            };
            TrialOutcome {
                record,
                minimizer: None,
                planted: x,
            }
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseCell {
    pub n: usize,
    pub s: usize,
    pub r: usize,
    pub m: usize,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct MStarEntry {
    pub n: usize,
    pub s: usize,
    pub r: usize,
    /// Smallest m in the grid with success rate >= 0.9.
    pub m_star_090: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PhaseSummary {
    pub cells: Vec<PhaseCell>,
    pub m_star: Vec<MStarEntry>,
}

/// Phase-transition sweep: fresh signal, operator and noise per trial,
/// per-cell success rates and the empirical 90%-success measurement
/// count.
pub fn run_phase_transition(cfg: &ExperimentConfig) -> Result<(Vec<TrialRecord>, PhaseSummary)> {
    cfg.validate()?;
    let solver_cfg = SolverConfig::sweep();
    // Cells in deterministic order.
    let mut cells = Vec::new();
    for &n in &cfg.n_grid {
        let r_values: Vec<usize> = match &cfg.r_grid {
            Some(rs) => rs.clone(),
            None => vec![n],
        };
        for &s in &cfg.s_grid {
            for &r in &r_values {
                for &m in &cfg.m_grid {
                    for &eta in &cfg.eta_grid {
                        cells.push((n, s, r, m, eta));
                    }
                }
            }
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let mut outcomes: Vec<(usize, usize, TrialRecord)> = jobs
        .into_par_iter()
        .map(|(c, t)| {
            let (n, s, r, m, eta) = cells[c];
            let seed = derive_seed(cfg.master_seed, c as u64, t as u64);
            let op = build_operator(cfg.family, m, n, cfg.dist, derive_seed(seed, 0x0B, 0))
                .expect("validated grid");
            let out = run_trial(
                ExperimentKind::PhaseTransition.tag(),
                &op,
                cfg.family,
                cfg.dist,
                n,
                s,
                r,
                m,
                eta,
                t,
                seed,
                &cfg.tolerances,
                &solver_cfg,
            );
            (c, t, out.record)
        })
        .collect();
    outcomes.sort_by_key(|(c, t, _)| (*c, *t));
    let records: Vec<TrialRecord> = outcomes.into_iter().map(|(_, _, r)| r).collect();

    // Per-cell summary and m* extraction.
    let mut cell_stats: Vec<PhaseCell> = Vec::new();
    for (c, &(n, s, r, m, _eta)) in cells.iter().enumerate() {
        let rows = &records[c * cfg.trials..(c + 1) * cfg.trials];
        let successes = rows.iter().filter(|r| r.success).count();
        cell_stats.push(PhaseCell {
            n,
            s,
            r,
            m,
            trials: cfg.trials,
            successes,
            success_rate: successes as f64 / cfg.trials as f64,
        });
    }
    let mut m_star = Vec::new();
    for &n in &cfg.n_grid {
        let r_values: Vec<usize> = match &cfg.r_grid {
            Some(rs) => rs.clone(),
            None => vec![n],
        };
        for &s in &cfg.s_grid {
            for &r in &r_values {
                let mut ms: Vec<(usize, f64)> = cell_stats
                    .iter()
                    .filter(|c| c.n == n && c.s == s && c.r == r)
                    .map(|c| (c.m, c.success_rate))
                    .collect();
                ms.sort_by_key(|(m, _)| *m);
                let found = ms.iter().find(|(_, rate)| *rate >= 0.9).map(|(m, _)| *m);
                m_star.push(MStarEntry {
                    n,
                    s,
                    r,
                    m_star_090: found,
                });
            }
        }
    }
    Ok((
        records,
        PhaseSummary {
            cells: cell_stats,
            m_star,
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustnessSummary {
    /// Least-squares fit of error_l1max against eta.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub nsp_rho: f64,
    pub nsp_pass: bool,
    pub rnsp_rho: f64,
    pub rnsp_beta: f64,
    /// Per-trial audits of the error inequality with the fitted pair.
    pub audits_checked: usize,
    pub audits_failed: usize,
}

/// Robustness sweep over a noise grid with one fixed seeded operator,
/// a linear error fit and a per-trial inequality audit against the
/// sampled robust-NSP certificate.
pub fn run_robustness_sweep(cfg: &ExperimentConfig) -> Result<(Vec<TrialRecord>, RobustnessSummary)> {
    cfg.validate()?;
    let n = cfg.n_grid[0];
    let s = cfg.s_grid[0];
    let r = cfg.r_grid.as_ref().map_or(n, |rs| rs[0]);
    let m = cfg.m_grid[0];
    let solver_cfg = SolverConfig::sweep();
    let op = build_operator(cfg.family, m, n, cfg.dist, derive_seed(cfg.master_seed, 0x0B, 0))?;

    let nsp = estimate_nsp_ratio(&op, s, 60, 60, derive_seed(cfg.master_seed, 0xA, 1))?;
    let rnsp = estimate_robust_nsp(&op, s, 120, derive_seed(cfg.master_seed, 0xA, 2))?;
    let rho_hat = rnsp.constant("rho").unwrap_or(f64::NAN);
    let beta_hat = rnsp.constant("beta").unwrap_or(f64::NAN);

    let cells: Vec<f64> = cfg.eta_grid.clone();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials).map(move |t| (c, t)))
        .collect();
    let mut outcomes: Vec<(usize, usize, TrialRecord, Option<MatrixSignal>, MatrixSignal)> = jobs
        .into_par_iter()
        .map(|(c, t)| {
            let eta = cells[c];
            let seed = derive_seed(cfg.master_seed, c as u64, t as u64);
            let out = run_trial(
                ExperimentKind::Robustness.tag(),
                &op,
                cfg.family,
                cfg.dist,
                n,
                s,
                r,
                m,
                eta,
                t,
                seed,
                &cfg.tolerances,
                &solver_cfg,
            );
            (c, t, out.record, out.minimizer, out.planted)
        })
        .collect();
    outcomes.sort_by_key(|(c, t, _, _, _)| (*c, *t));

    // Fit and audit.
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut audits_checked = 0usize;
    let mut audits_failed = 0usize;
    let mut records = Vec::with_capacity(outcomes.len());
    for (c, _t, rec, minimizer, planted) in outcomes {
        let eta = cells[c];
        if rec.status == "ok" {
            xs.push(eta);
            ys.push(rec.error_l1max);
            if let Some(zstar) = &minimizer {
                if rho_hat.is_finite() && beta_hat.is_finite() && rho_hat < 1.0 {
                    let h = zstar.entries() - planted.entries();
                    let pat = support_pattern(&planted, 0.0);
                    // The certificate must hold on this trial's witness and
                    // the minimizer must not exceed the planted norm.
                    let beta_here = rnsp_beta_value(&op, &h, &pat, rho_hat);
                    let norm_ok = norm_colmax_l1_mat(zstar.entries())
                        <= norm_colmax_l1_mat(planted.entries()) + 1e-9;
                    let phi_ok = op.apply_mat(&h).norm() <= 2.0 * eta + 1e-9;
                    if beta_here <= beta_hat && norm_ok && phi_ok {
                        audits_checked += 1;
                        let bound =
                            2.0 * (1.0 + rho_hat) / (1.0 - rho_hat) * beta_hat * eta + 1e-8;
                        if rec.error_l1max > bound {
                            audits_failed += 1;
                        }
                    }
                }
            }
        }
        records.push(rec);
    }
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok((
        records,
        RobustnessSummary {
            slope,
            intercept,
            r_squared,
            nsp_rho: nsp.constant("rho").unwrap_or(f64::NAN),
            nsp_pass: nsp.pass,
            rnsp_rho: rho_hat,
            rnsp_beta: beta_hat,
            audits_checked,
            audits_failed,
        },
    ))
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityGroup {
    pub trials: usize,
    pub sign_match_min: f64,
    pub sign_match_mean: f64,
    pub support_match_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilitySummary {
    /// Trials whose smallest planted magnitude exceeds the sign threshold.
    pub above_threshold: StabilityGroup,
    pub below_threshold: StabilityGroup,
    /// Largest minimizer flatness defect among trials whose residual
    /// flatness diagnostic passed.
    pub flatness_pass_defect_max: f64,
    pub flatness_pass_count: usize,
}

fn group_stats(rows: &[(f64, f64)]) -> StabilityGroup {
    if rows.is_empty() {
        return StabilityGroup {
            trials: 0,
            sign_match_min: f64::NAN,
            sign_match_mean: f64::NAN,
            support_match_mean: f64::NAN,
        };
    }
    let n = rows.len() as f64;
    StabilityGroup {
        trials: rows.len(),
        sign_match_min: rows.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        sign_match_mean: rows.iter().map(|r| r.0).sum::<f64>() / n,
        support_match_mean: rows.iter().map(|r| r.1).sum::<f64>() / n,
    }
}

/// Support/sign-stability study on one fixed operator: trials are grouped
/// by whether the smallest planted magnitude clears the per-trial sign
/// threshold, and the flatness diagnostic is evaluated on each residual.
pub fn run_stability_experiment(
    cfg: &ExperimentConfig,
) -> Result<(Vec<TrialRecord>, StabilitySummary)> {
    cfg.validate()?;
    let n = cfg.n_grid[0];
    let s = cfg.s_grid[0];
    let r = cfg.r_grid.as_ref().map_or(n, |rs| rs[0]);
    let m = cfg.m_grid[0];
    let eta = cfg.eta_grid[0];
    let solver_cfg = SolverConfig::sweep();
    let op = build_operator(cfg.family, m, n, cfg.dist, derive_seed(cfg.master_seed, 0x0B, 0))?;

    let jobs: Vec<usize> = (0..cfg.trials).collect();
    let mut outcomes: Vec<(usize, TrialRecord, Option<MatrixSignal>, MatrixSignal)> = jobs
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(cfg.master_seed, 0, t as u64);
            let out = run_trial(
                ExperimentKind::Stability.tag(),
                &op,
                cfg.family,
                cfg.dist,
                n,
                s,
                r,
                m,
                eta,
                t,
                seed,
                &cfg.tolerances,
                &solver_cfg,
            );
            (t, out.record, out.minimizer, out.planted)
        })
        .collect();
    outcomes.sort_by_key(|(t, _, _, _)| *t);

    let mut above = Vec::new();
    let mut below = Vec::new();
    let mut flat_defect_max: f64 = 0.0;
    let mut flat_pass = 0usize;
    let mut records = Vec::with_capacity(outcomes.len());
    for (_t, rec, minimizer, planted) in outcomes {
        if rec.status == "ok" || rec.status == "trivial" {
            let pat = support_pattern(&planted, 0.0);
            let threshold = thm41_report(&op, &pat, eta)
                .ok()
                .and_then(|r| r.constant("sign_threshold"));
            let min_mag = pat
                .coords()
                .iter()
                .map(|&(i, j)| planted[(i, j)].abs())
                .fold(f64::INFINITY, f64::min);
            match threshold {
                Some(th) if min_mag > th => above.push((rec.sign_match, rec.support_match)),
                Some(_) => below.push((rec.sign_match, rec.support_match)),
                None => {}
            }
            if let Some(zstar) = &minimizer {
                let y = op.apply_mat(planted.entries())
                    + if eta > 0.0 {
                        unit_noise(op.meas_dim(), derive_seed(rec.seed, 0xE, 0)) * eta
                    } else {
                        DVector::zeros(op.meas_dim())
                    };
                let residual = &y - op.apply_mat(zstar.entries());
                let zpat = support_pattern(zstar, cfg.tolerances.support_tol);
                if zpat.size() > 0 {
                    if let Ok(diag) = check_flatness_residual(&op, &zpat, &residual) {
                        if diag.pass {
                            flat_pass += 1;
                            flat_defect_max = flat_defect_max.max(rec.flatness_defect);
                        }
                    }
                }
            }
        }
        records.push(rec);
    }
    Ok((
        records,
        StabilitySummary {
            above_threshold: group_stats(&above),
            below_threshold: group_stats(&below),
            flatness_pass_defect_max: flat_defect_max,
            flatness_pass_count: flat_pass,
        },
    ))
}

/// Least-squares line fit returning (slope, intercept, R^2).
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    if xs.len() != ys.len() || xs.len() < 2 {
        return (f64::NAN, f64::NAN, f64::NAN);
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return (f64::NAN, my, f64::NAN);
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let p = slope * x + intercept;
            (y - p) * (y - p)
        })
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    (slope, intercept, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config(kind: ExperimentKind) -> ExperimentConfig {
        ExperimentConfig {
            experiment: kind,
            n_grid: vec![3],
            s_grid: vec![1],
            r_grid: None,
            m_grid: vec![9],
            eta_grid: vec![0.0],
            family: OpFamily::Dense,
            dist: Dist::Gaussian,
            trials: 4,
            master_seed: 11,
            tolerances: Tolerances::default(),
            output: None,
        }
    }

    #[test]
    fn config_validation_catches_bad_grids() {
        let mut cfg = tiny_config(ExperimentKind::PhaseTransition);
        cfg.s_grid = vec![5];
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(ExperimentKind::PhaseTransition);
        cfg.trials = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config(ExperimentKind::PhaseTransition);
        cfg.eta_grid = vec![-0.1];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let json = r#"{"experiment":"phase_transition","n_grid":[3],"s_grid":[1],
                       "m_grid":[9],"trials":1,"master_seed":1,"bogus":true}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(json).is_err());
    }

    #[test]
    fn phase_transition_with_full_measurements_succeeds() {
        let cfg = tiny_config(ExperimentKind::PhaseTransition);
        let (records, summary) = run_phase_transition(&cfg).unwrap();
        assert_eq!(records.len(), 4);
        assert_eq!(summary.cells.len(), 1);
        assert_eq!(summary.cells[0].success_rate, 1.0);
        assert_eq!(summary.m_star[0].m_star_090, Some(9));
        for r in &records {
            assert_eq!(r.status, "ok");
            assert!(r.support_match >= 0.0 && r.support_match <= 1.0);
            assert!(r.sign_match >= 0.0 && r.sign_match <= 1.0);
            // Success flag is tied to the relative error.
            assert_eq!(
                r.success,
                r.error_fro <= cfg.tolerances.success_tol * 1.0f64.max(1.0)
            );
        }
    }

    #[test]
    fn csv_is_reproducible_and_has_exact_header() {
        let cfg = tiny_config(ExperimentKind::PhaseTransition);
        let run = |cfg: &ExperimentConfig| {
            let (records, _) = run_phase_transition(cfg).unwrap();
            let mut buf = Vec::new();
            write_csv(&mut buf, &records).unwrap();
            String::from_utf8(buf).unwrap()
        };
        let a = run(&cfg);
        let b = run(&cfg);
        assert!(a.starts_with(CSV_HEADER));
        assert!(!a.contains('\r'));
        // Identical except for wall-clock runtime.
        let strip = |s: &str| {
            s.lines()
                .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
                .collect::<Vec<_>>()
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn seed_derivation_is_documented_scheme() {
        let cfg = tiny_config(ExperimentKind::PhaseTransition);
        let (records, _) = run_phase_transition(&cfg).unwrap();
        for (t, r) in records.iter().enumerate() {
            assert_eq!(r.seed, derive_seed(cfg.master_seed, 0, t as u64));
        }
    }

    #[test]
    fn linear_fit_recovers_exact_lines() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 2.0).collect();
        let (a, b, r2) = linear_fit(&xs, &ys);
        assert!((a - 3.0).abs() < 1e-12);
        assert!((b - 2.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn robustness_sweep_produces_fit_and_audits() {
        let mut cfg = tiny_config(ExperimentKind::Robustness);
        cfg.m_grid = vec![8];
        cfg.eta_grid = vec![0.0, 0.05, 0.1, 0.2];
        cfg.trials = 3;
        let (records, summary) = run_robustness_sweep(&cfg).unwrap();
        assert_eq!(records.len(), 12);
        assert!(summary.slope.is_finite());
        assert_eq!(summary.audits_failed, 0);
    }

    #[test]
    fn stability_experiment_groups_by_threshold() {
        let mut cfg = tiny_config(ExperimentKind::Stability);
        cfg.m_grid = vec![9];
        cfg.eta_grid = vec![1e-4];
        cfg.trials = 6;
        let (records, summary) = run_stability_experiment(&cfg).unwrap();
        assert_eq!(records.len(), 6);
        let total = summary.above_threshold.trials + summary.below_threshold.trials;
        assert!(total > 0);
        if summary.above_threshold.trials > 0 {
            assert_eq!(summary.above_threshold.sign_match_min, 1.0);
        }
    }
}
