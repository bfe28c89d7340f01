//! DIMACS error measures and the "helped" classifier used to compare an
//! instance before and after presolve.
//!
//! With `‖·‖∞` the largest absolute entry:
//!
//! ```text
//! err1 = ‖A(X) − b‖₂ / (1 + ‖b‖∞)
//! err2 = max(0, −λ_min(X)) / (1 + ‖b‖∞)
//! err3 = ‖Σ y_i A_i + S − C‖_F / (1 + ‖C‖∞)
//! err4 = max(0, −λ_min(S)) / (1 + ‖C‖∞)
//! err5 = (C•X − bᵀy) / (1 + |C•X| + |bᵀy|)
//! err6 = X•S / (1 + |C•X| + |bᵀy|)
//! ```

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::model::{ModelError, SdpInstance, SymBlockMatrix};
use crate::sdpa::SolutionFile;

pub const DEFAULT_TOL_EIG: f64 = 1e-10;
const ERR_THRESHOLD: f64 = 1e-6;
const RATIO: f64 = 0.1;
const OBJ_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("no error measure is applicable")]
    NotApplicable,
    #[error("solution has {found} multipliers, instance has {expected} constraints")]
    MultiplierCount { expected: usize, found: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// The six measures; `None` where the solution lacks the parts a measure
/// needs.
///
/// `X` absent counts as `X = 0`. `err3` needs both `y` and `S`, `err4` and
/// `err6` need `S`, `err5` needs `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DimacsErrors {
    pub err: [Option<f64>; 6],
}

impl DimacsErrors {
    pub fn get(&self, k: usize) -> Option<f64> {
        self.err[k - 1]
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn dimacs_errors(inst: &SdpInstance, sol: &SolutionFile, tol_eig: f64) -> Result<DimacsErrors, MetricsError> {
    if let Some(y) = &sol.y {
        if y.len() != inst.m() {
            return Err(MetricsError::MultiplierCount { expected: inst.m(), found: y.len() });
        }
    }
    let x = sol.x_dense(&inst.structure);
    let b_norm = 1.0 + inf_norm(&inst.rhs);
    let c_norm = 1.0 + inst.objective.max_abs();

    let residual: f64 = inst.residuals(&x)?.iter().map(|r| r * r).sum::<f64>().sqrt();
    let err1 = residual / b_norm;
    let err2 = (-x.lambda_min_lower(tol_eig)).max(0.0) / b_norm;

    let cx = inst.objective.dot(&x)?;
    let by = sol.y.as_ref().map(|y| y.iter().zip(&inst.rhs).map(|(a, b)| a * b).sum::<f64>());
    let gap_scale = 1.0 + cx.abs() + by.unwrap_or(0.0).abs();

    let err3 = match (&sol.y, &sol.s) {
        (Some(y), Some(s)) => Some(dual_residual(inst, y, s)? / c_norm),
        _ => None,
    };
    let err4 = sol.s.as_ref().map(|s| (-s.to_dense().lambda_min_lower(tol_eig)).max(0.0) / c_norm);
    let err5 = by.map(|by| (cx - by) / gap_scale);
    let err6 = match &sol.s {
        Some(s) => Some(s.dot(&x)? / gap_scale),
        None => None,
    };
    Ok(DimacsErrors { err: [Some(err1), Some(err2), err3, err4, err5, err6] })
}

/// `‖Σ y_i A_i + S − C‖_F`, accumulated over the union of sparsity patterns.
fn dual_residual(inst: &SdpInstance, y: &[f64], s: &SymBlockMatrix) -> Result<f64, ModelError> {
    if s.structure() != &inst.structure {
        return Err(ModelError::StructureMismatch("dual slack".into()));
    }
    let mut acc: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut add = |m: &SymBlockMatrix, w: f64| {
        for e in m.entries() {
            *acc.entry((e.block, e.row, e.col)).or_insert(0.0) += w * e.value;
        }
    };
    for (a, &yi) in inst.constraints.iter().zip(y) {
        add(a, yi);
    }
    add(s, 1.0);
    add(&inst.objective, -1.0);
    Ok(acc
        .iter()
        .map(|(&(_, i, j), v)| if i == j { v * v } else { 2.0 * v * v })
        .sum::<f64>()
        .sqrt())
}

/// Largest applicable measure (signed; `err5` may be negative).
pub fn worst_error(e: &DimacsErrors) -> Result<f64, MetricsError> {
    e.err.iter().flatten().copied().reduce(f64::max).ok_or(MetricsError::NotApplicable)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HelpedReason {
    InfeasibilityDetected,
    ErrorReduced,
    ObjectiveChanged,
}

impl HelpedReason {
    pub fn code(self) -> u8 {
        match self {
            HelpedReason::InfeasibilityDetected => 1,
            HelpedReason::ErrorReduced => 2,
            HelpedReason::ObjectiveChanged => 3,
        }
    }
}

/// How the error-ratio clause is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatioMode {
    /// `err_after / err_before < 1/10`: the error shrank at least tenfold.
    #[default]
    Improvement,
    /// `err_before / err_after < 1/10`, taken literally.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HelpedVerdict {
    pub helped: bool,
    pub reason: Option<HelpedReason>,
}

pub fn helped(
    err_before: f64,
    err_after: f64,
    infeasibility_detected: bool,
    obj_before: Option<f64>,
    obj_after: Option<f64>,
    mode: RatioMode,
) -> HelpedVerdict {
    let yes = |r| HelpedVerdict { helped: true, reason: Some(r) };
    if infeasibility_detected {
        return yes(HelpedReason::InfeasibilityDetected);
    }
    // ratios compared by cross-multiplying so a zero denominator is harmless
    let ratio_ok = match mode {
        RatioMode::Improvement => err_after < RATIO * err_before,
        RatioMode::Literal => err_before < RATIO * err_after,
    };
    if err_before > ERR_THRESHOLD && ratio_ok {
        return yes(HelpedReason::ErrorReduced);
    }
    if let (Some(a), Some(b)) = (obj_before, obj_after) {
        if (a - b).abs() >= OBJ_THRESHOLD {
            return yes(HelpedReason::ObjectiveChanged);
        }
    }
    HelpedVerdict { helped: false, reason: None }
}
