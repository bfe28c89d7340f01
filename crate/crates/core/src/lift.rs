//! Moving solutions between reduced and original coordinates, and replaying
//! certificates against the original instance.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::model::{BlockStructure, DenseBlockMatrix, Entry, GlobalIndex, ModelError, SdpInstance, SymBlockMatrix};
use crate::reduce::{support_is_pd, BasicStepRecord, Outcome, ReductionCertificate, StepAction, Tolerances, Tracked};
use crate::sdpa::SolutionFile;

#[derive(Debug, Error)]
pub enum LiftError {
    #[error("certificate proves infeasibility; there is no reduced problem to lift from")]
    InfeasibleCertificate,
    #[error("solution structure {found:?} does not match the reduced structure {expected:?}")]
    StructureMismatch { expected: Vec<i64>, found: Vec<i64> },
    #[error("solution has {found} multipliers, reduced problem has {expected} constraints")]
    MultiplierCount { expected: usize, found: usize },
    #[error("malformed certificate: {0}")]
    BadCertificate(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Pairs each reduced index with its original index, reduced flat order.
fn index_map(cert: &ReductionCertificate) -> Result<(BlockStructure, Vec<GlobalIndex>), LiftError> {
    if cert.outcome == Outcome::Infeasible {
        return Err(LiftError::InfeasibleCertificate);
    }
    if cert.kept_indices.windows(2).any(|w| w[0].flat >= w[1].flat)
        || cert.kept_indices.iter().any(|g| !cert.original_structure.contains(g))
    {
        return Err(LiftError::BadCertificate("kept indices are not a sorted subset of the original structure".into()));
    }
    Ok((cert.reduced_structure()?, cert.kept_indices.clone()))
}

fn check_structure(expected: &BlockStructure, found: &BlockStructure) -> Result<(), LiftError> {
    if expected != found {
        return Err(LiftError::StructureMismatch { expected: expected.sizes().to_vec(), found: found.sizes().to_vec() });
    }
    Ok(())
}

/// Embeds a reduced solution, filling deleted rows and columns with zeros.
pub fn lift_solution(x: &DenseBlockMatrix, cert: &ReductionCertificate) -> Result<DenseBlockMatrix, LiftError> {
    let (reduced, kept) = index_map(cert)?;
    check_structure(&reduced, x.structure())?;
    let mut out = DenseBlockMatrix::zeros(&cert.original_structure);
    for b in 1..=reduced.num_blocks() {
        let off = reduced.offset(b);
        let blk = x.block(b);
        for i in 0..blk.dim() {
            for j in i..blk.dim() {
                out.set(kept[off + i], kept[off + j], blk.get(i, j))?;
            }
        }
    }
    Ok(out)
}

/// Principal submatrix of an original-coordinate solution on the kept indices.
pub fn restrict_solution(x: &DenseBlockMatrix, cert: &ReductionCertificate) -> Result<DenseBlockMatrix, LiftError> {
    let (reduced, kept) = index_map(cert)?;
    check_structure(&cert.original_structure, x.structure())?;
    let mut out = DenseBlockMatrix::zeros(&reduced);
    for b in 1..=reduced.num_blocks() {
        let off = reduced.offset(b);
        for i in 0..reduced.block_dim(b) {
            for j in i..reduced.block_dim(b) {
                let (ri, rj) = (reduced.from_flat(off + i)?, reduced.from_flat(off + j)?);
                out.set(ri, rj, x.get(kept[off + i], kept[off + j]))?;
            }
        }
    }
    Ok(out)
}

fn lift_sparse(
    a: &SymBlockMatrix,
    kept: &[GlobalIndex],
    original: &BlockStructure,
) -> Result<SymBlockMatrix, LiftError> {
    let s = a.structure();
    let entries = a.entries().iter().map(|e| {
        let off = s.offset(e.block);
        let (gi, gj) = (kept[off + e.row - 1], kept[off + e.col - 1]);
        Entry::new(gi.block, gi.local, gj.local, e.value)
    });
    Ok(SymBlockMatrix::from_entries(original.clone(), entries)?)
}

/// Lifts a whole solution file.
///
/// `X` and `S` are zero-padded into the original coordinates. `y` keeps its
/// values for surviving constraints and gets 0 for deleted ones. Only the
/// primal part is guaranteed meaningful after lifting.
pub fn lift_solution_file(sol: &SolutionFile, cert: &ReductionCertificate) -> Result<SolutionFile, LiftError> {
    let (reduced, kept) = index_map(cert)?;
    let lift_mat = |m: &Option<SymBlockMatrix>| -> Result<Option<SymBlockMatrix>, LiftError> {
        match m {
            Some(m) => {
                check_structure(&reduced, m.structure())?;
                Ok(Some(lift_sparse(m, &kept, &cert.original_structure)?))
            }
            None => Ok(None),
        }
    };
    let x = lift_mat(&sol.x)?;
    let s = lift_mat(&sol.s)?;
    let y = match &sol.y {
        Some(y) => {
            if y.len() != cert.kept_constraints.len() {
                return Err(LiftError::MultiplierCount { expected: cert.kept_constraints.len(), found: y.len() });
            }
            let mut full = vec![0.0; cert.original_m];
            for (&id, &v) in cert.kept_constraints.iter().zip(y) {
                if id == 0 || id > cert.original_m {
                    return Err(LiftError::BadCertificate(format!("constraint id {id} out of range")));
                }
                full[id - 1] = v;
            }
            Some(full)
        }
        None => None,
    };
    Ok(SolutionFile { y, x, s })
}

/// One failed check during certificate replay. `step` is 1-based; `None` for
/// whole-certificate checks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub step: Option<usize>,
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.step {
            Some(k) => write!(f, "step {k}: {}", self.message),
            None => write!(f, "certificate: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub ok: bool,
    pub steps_checked: usize,
    pub diagnostics: Vec<Diagnostic>,
}

/// Replays a certificate on a fresh copy of `original`.
///
/// Each step must name a live constraint whose current support equals the
/// recorded one (in current and original coordinates), whose signed
/// restriction to that support is PD, and whose right-hand side satisfies the
/// condition for the recorded action. Deletions are applied as the replay
/// proceeds. Replay stops at the first failing step.
pub fn verify_certificate(original: &SdpInstance, cert: &ReductionCertificate, tol: &Tolerances) -> VerifyReport {
    let mut diags: Vec<Diagnostic> = Vec::new();
    let global = |msg: String| Diagnostic { step: None, message: msg };

    if cert.original_structure != original.structure {
        diags.push(global(format!(
            "original structure {:?} differs from instance structure {:?}",
            cert.original_structure.sizes(),
            original.structure.sizes()
        )));
    }
    if cert.original_m != original.m() {
        diags.push(global(format!("certificate expects {} constraints, instance has {}", cert.original_m, original.m())));
    }
    if !diags.is_empty() {
        return VerifyReport { ok: false, steps_checked: 0, diagnostics: diags };
    }

    let mut t = Tracked::new(original);
    let mut deleted_original: Vec<bool> = vec![false; original.n()];
    let mut declared_infeasible = false;
    let mut steps_checked = 0;

    for (k, step) in cert.steps.iter().enumerate() {
        steps_checked = k + 1;
        let (errors, pos) = if declared_infeasible {
            (vec!["step follows an infeasibility declaration".to_string()], None)
        } else {
            check_step(&t, step, tol, &deleted_original)
        };
        if !errors.is_empty() {
            diags.extend(errors.into_iter().map(|message| Diagnostic { step: Some(k + 1), message }));
            break;
        }
        let pos = pos.expect("a passing step names a live constraint");
        match step.action {
            StepAction::DeclareInfeasible => declared_infeasible = true,
            StepAction::DeleteConstraint => {
                for g in step.support_original.iter() {
                    deleted_original[g.flat] = true;
                }
                if let Err(e) = t.delete(pos, &step.support) {
                    diags.push(Diagnostic { step: Some(k + 1), message: format!("deletion failed: {e}") });
                    break;
                }
            }
        }
    }

    if diags.is_empty() {
        let expected = if declared_infeasible {
            Outcome::Infeasible
        } else if cert.steps.is_empty() {
            Outcome::Unchanged
        } else {
            Outcome::Reduced
        };
        if cert.outcome != expected {
            diags.push(global(format!(
                "outcome `{}` does not match the replayed outcome `{}`",
                cert.outcome.as_str(),
                expected.as_str()
            )));
        }
        if cert.kept_indices != t.kept_indices() {
            diags.push(global("kept index list does not match the replayed deletions".into()));
        }
        if cert.kept_constraints != t.ids {
            diags.push(global("kept constraint list does not match the replayed deletions".into()));
        }
    }

    VerifyReport { ok: diags.is_empty(), steps_checked, diagnostics: diags }
}


/// Checks one step against the current working instance. Returns the failed
/// checks and the constraint's current position.
fn check_step(
    t: &Tracked,
    step: &BasicStepRecord,
    tol: &Tolerances,
    deleted_original: &[bool],
) -> (Vec<String>, Option<usize>) {
    let mut errs = Vec::new();
    let Some(pos) = t.ids.iter().position(|&id| id == step.constraint_id) else {
        errs.push(format!("constraint {} is not present (unknown or already deleted)", step.constraint_id));
        return (errs, None);
    };
    let a = &t.inst.constraints[pos];
    let b = t.inst.rhs[pos];

    let current = a.support(tol.eps_support);
    if current != step.support {
        errs.push(format!(
            "recorded support {:?} differs from the constraint's support {:?}",
            step.support.flats(),
            current.flats()
        ));
    }
    if step.support.iter().any(|g| !t.inst.structure.contains(g)) {
        errs.push("recorded support lies outside the current structure".into());
        return (errs, Some(pos));
    }
    if t.to_original(&step.support) != step.support_original {
        errs.push(format!(
            "recorded original support {:?} does not correspond to current support {:?}",
            step.support_original.flats(),
            step.support.flats()
        ));
    }
    if step.action == StepAction::DeleteConstraint {
        if let Some(g) = step
            .support_original
            .iter()
            .find(|g| deleted_original.get(g.flat).copied().unwrap_or(true))
        {
            errs.push(format!("original index {} was already deleted by an earlier step", g.flat));
        }
    }
    match support_is_pd(a, &step.support, step.sign, tol.eps_pivot) {
        Ok(true) => {}
        Ok(false) => errs.push(format!(
            "restriction of {}A to the support is not positive definite",
            if step.sign.value() < 0.0 { "-" } else { "" }
        )),
        Err(e) => errs.push(format!("cannot restrict constraint: {e}")),
    }
    if step.rhs_at_step.to_bits() != b.to_bits() {
        errs.push(format!("recorded rhs {} differs from the constraint's rhs {}", step.rhs_at_step, b));
    }
    match step.action {
        StepAction::DeleteConstraint if b.abs() > tol.eps_rhs => {
            errs.push(format!("deletion requires |b| <= {}, but b = {}", tol.eps_rhs, b))
        }
        StepAction::DeclareInfeasible if !(step.sign.value() * b < -tol.eps_rhs) => errs.push(format!(
            "infeasibility requires sign*b < -{}, but sign*b = {}",
            tol.eps_rhs,
            step.sign.value() * b
        )),
        _ => {}
    }
    (errs, Some(pos))
}
