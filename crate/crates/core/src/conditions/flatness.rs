//! The flatness condition: the restricted adjoint must produce no zero
//! column, which forces minimizers supported on the pattern to be
//! l1-column-flat. Both the literal per-column injectivity check and the
//! residual-specific variant used by solver diagnostics live here.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::operators::{restricted_columns, MeasurementOp};
use crate::signal::SparsityPattern;

use super::{ConditionReport, Method, Witness};

/// Literal check: for each column j, the map z -> (Phi_S^T z) restricted
/// to S_j must be injective on the whole measurement space, i.e. have
/// rank equal to the measurement dimension.
///
/// Structurally impossible when the measurement dimension exceeds |S_j|;
/// the report says so rather than guessing a weaker reading.
pub fn check_flatness_condition(
    op: &MeasurementOp,
    pattern: &SparsityPattern,
) -> Result<ConditionReport> {
    let n = op.n();
    let m = op.meas_dim();
    let cols = restricted_columns(op, pattern);
    let coords = pattern.coords();

    let mut constants = BTreeMap::new();
    let mut pass = true;
    let mut structural = false;
    for j in 0..n {
        let rows: Vec<usize> = coords
            .iter()
            .enumerate()
            .filter(|(_, &(_, jj))| jj == j)
            .map(|(c, _)| c)
            .collect();
        // The column-j component of the adjoint as a |S_j| x m matrix.
        let mut block = DMatrix::zeros(rows.len(), m);
        for (r, &c) in rows.iter().enumerate() {
            block.set_row(r, &cols.column(c).transpose());
        }
        let sigma_min = if rows.len() < m {
            structural = true;
            0.0
        } else if rows.is_empty() {
            0.0
        } else {
            let svd = block.svd(false, false);
            svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min)
        };
        constants.insert(format!("sigma_min_col_{j}"), sigma_min);
        if sigma_min <= 1e-10 {
            pass = false;
        }
    }
    let notes = if structural {
        format!(
            "injectivity from a {m}-dimensional measurement space into a column block needs \
             |S_j| >= {m}; smaller blocks fail structurally"
        )
    } else {
        String::new()
    };
    Ok(ConditionReport {
        name: "flatness_literal".into(),
        constants,
        pass,
        method: Method::ExactEnumeration,
        samples: 0,
        notes,
        witness: None,
    })
}

/// Residual-specific variant: at a given measurement-space vector z
/// (typically the solver residual), Phi_S^T(z) must have no zero column.
pub fn check_flatness_residual(
    op: &MeasurementOp,
    pattern: &SparsityPattern,
    z: &DVector<f64>,
) -> Result<ConditionReport> {
    let n = op.n();
    let adj = op.adjoint_vec(z);
    let scale = adj.abs().max().max(1e-300);
    let mut constants = BTreeMap::new();
    let mut min_col = f64::INFINITY;
    for j in 0..n {
        let mut col_max = 0.0f64;
        for &i in pattern.support(j) {
            col_max = col_max.max(adj[(i, j)].abs());
        }
        constants.insert(format!("col_max_{j}"), col_max);
        min_col = min_col.min(col_max);
    }
    constants.insert("min_col_max".into(), min_col);
    let pass = min_col > 1e-12 * scale;
    Ok(ConditionReport {
        name: "flatness_residual".into(),
        constants,
        pass,
        method: Method::ExactEnumeration,
        samples: 0,
        notes: String::new(),
        witness: Some(Witness::Vector(z.clone())),
    })
}
