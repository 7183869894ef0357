//! Desk-scale certificates for the recovery conditions: null space
//! properties, restricted-isometry constants, the exact recovery
//! condition, the flatness condition and the support/sign-stability
//! condition set with its noise threshold.

mod flatness;
mod mrip;
mod nsp;
mod opnorm;
mod thm41;

pub use flatness::{check_flatness_condition, check_flatness_residual};
pub use mrip::{compute_mrip_constants, rip_to_nsp_constants};
pub use nsp::{
    estimate_nsp_ratio, estimate_robust_nsp, nsp_ratio_value, rnsp_beta_value, top_s_pattern,
};
pub use opnorm::{opnorm_exotic, MatLinearMap, NormTag, OpnormMode, OpnormResult, SpaceShape};
pub use thm41::{check_erc, estimate_a_min, thm41_report};

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::signal::SparsityPattern;

/// How a reported constant was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Every case in the documented enumeration bound was visited.
    ExactEnumeration,
    /// Best value over sampled candidates: a one-sided bound.
    SampledLowerBound,
    /// Fitted from samples with no one-sided guarantee.
    SampledEstimate,
}

impl Method {
    pub fn tag(self) -> &'static str {
        match self {
            Method::ExactEnumeration => "exact-enumeration",
            Method::SampledLowerBound => "sampled-lower-bound",
            Method::SampledEstimate => "sampled-estimate",
        }
    }
}

/// Extremal witness carried by sampled reports so the reported constant
/// can be replayed.
#[derive(Debug, Clone)]
pub enum Witness {
    Matrix(DMatrix<f64>),
    MatrixWithPattern {
        h: DMatrix<f64>,
        pattern: SparsityPattern,
    },
    MatrixPair {
        z: DMatrix<f64>,
        w: DMatrix<f64>,
    },
    Vector(DVector<f64>),
}

/// Named certificate constants plus the derived pass flag.
#[derive(Debug, Clone)]
pub struct ConditionReport {
    pub name: String,
    pub constants: BTreeMap<String, f64>,
    pub pass: bool,
    pub method: Method,
    pub samples: usize,
    pub notes: String,
    pub witness: Option<Witness>,
}

impl ConditionReport {
    pub fn constant(&self, key: &str) -> Option<f64> {
        self.constants.get(key).copied()
    }

    /// Flat key-value serialization consumed by the CLI and sweeps.
    pub fn to_kv_lines(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("report={}\n", self.name));
        out.push_str(&format!("pass={}\n", self.pass));
        out.push_str(&format!("method={}\n", self.method.tag()));
        out.push_str(&format!("samples={}\n", self.samples));
        for (k, v) in &self.constants {
            out.push_str(&format!("{k}={v:.12e}\n"));
        }
        if !self.notes.is_empty() {
            out.push_str(&format!("notes={}\n", self.notes));
        }
        out
    }
}

/// All subsets of {0..n-1} of the given size, lexicographic.
pub(crate) fn subsets_of_size(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        // Advance the combination.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Visit every s-per-column pattern built from the given per-column
/// choices (mixed-radix counter). Returns false if the budget is hit.
pub(crate) fn for_each_pattern<F: FnMut(&[usize])>(
    choices_per_column: usize,
    n_cols: usize,
    budget: usize,
    mut visit: F,
) -> bool {
    let total = (choices_per_column as f64).powi(n_cols as i32);
    if total > budget as f64 {
        return false;
    }
    let mut counter = vec![0usize; n_cols];
    loop {
        visit(&counter);
        let mut j = 0;
        loop {
            if j == n_cols {
                return true;
            }
            counter[j] += 1;
            if counter[j] < choices_per_column {
                break;
            }
            counter[j] = 0;
            j += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_enumerate_binomials() {
        assert_eq!(subsets_of_size(4, 2).len(), 6);
        assert_eq!(subsets_of_size(5, 1).len(), 5);
        assert_eq!(subsets_of_size(3, 3), vec![vec![0, 1, 2]]);
        assert!(subsets_of_size(2, 3).is_empty());
    }

    #[test]
    fn pattern_counter_visits_all() {
        let mut count = 0;
        let done = for_each_pattern(3, 4, 1_000_000, |_| count += 1);
        assert!(done);
        assert_eq!(count, 81);
        assert!(!for_each_pattern(10, 10, 100, |_| {}));
    }
}
