//! The inspection presolve.
//!
//! A constraint `A•X = b` is usable when, after a symmetric permutation and
//! possibly negating both sides, `A` has the shape `[[D, 0], [0, 0]]` with
//! `D ≻ 0`. Since `D` must have a nonzero diagonal, it is exactly the principal
//! submatrix of `A` on its support, so the test reduces to one Cholesky
//! factorization of that submatrix per sign.
//!
//! * `b < 0` (after the sign flip): no `X ⪰ 0` satisfies the constraint and the
//!   whole instance is infeasible.
//! * `b = 0`: every feasible `X` vanishes on the rows and columns of the
//!   support. The constraint is dropped and those rows and columns are
//!   deleted from the objective and every other constraint.
//!
//! Constraints are only ever looked at one at a time; no linear combinations
//! are formed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BlockStructure, GlobalIndex, ModelError, SdpInstance, Shrink, Support, SymBlockMatrix};

pub const CERTIFICATE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("constraint {id} does not exist (instance has {m} constraints)")]
    InvalidConstraint { id: usize, m: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Entries with `|value| <= eps_support` do not count toward the support.
    pub eps_support: f64,
    /// `|b| <= eps_rhs` is treated as `b = 0`; `b < -eps_rhs` as `b < 0`.
    pub eps_rhs: f64,
    /// Relative Cholesky pivot threshold.
    pub eps_pivot: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { eps_support: 0.0, eps_rhs: 1e-9, eps_pivot: 0.0 }
    }
}

impl Tolerances {
    /// Exact arithmetic tests: nonzero means nonzero, `b = 0` means zero.
    pub fn strict() -> Self {
        Tolerances { eps_support: 0.0, eps_rhs: 0.0, eps_pivot: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "i8", into = "i8")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flipped(self) -> Sign {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

impl From<Sign> for i8 {
    fn from(s: Sign) -> i8 {
        match s {
            Sign::Plus => 1,
            Sign::Minus => -1,
        }
    }
}

impl TryFrom<i8> for Sign {
    type Error = String;
    fn try_from(v: i8) -> Result<Sign, String> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            _ => Err(format!("sign must be 1 or -1, got {v}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    NotReducible,
    Reducible(Sign),
    InfeasibleWitness(Sign),
}

/// Decides whether `sign * A` restricted to `support` is positive definite.
///
/// A PD matrix has a positive diagonal, so a missing or wrongly signed
/// diagonal entry settles the question without factorizing.
pub(crate) fn support_is_pd(
    a: &SymBlockMatrix,
    support: &Support,
    sign: Sign,
    eps_pivot: f64,
) -> Result<bool, ModelError> {
    if support.is_empty() {
        return Ok(true);
    }
    let s = sign.value();
    let structure = a.structure();
    let mut diag_ok = vec![false; support.len()];
    for e in a.entries().iter().filter(|e| e.row == e.col) {
        let flat = structure.offset(e.block) + e.row - 1;
        if let Ok(k) = support.as_slice().binary_search_by_key(&flat, |g| g.flat) {
            diag_ok[k] = s * e.value > 0.0;
        }
    }
    if !diag_ok.iter().all(|&ok| ok) {
        return Ok(false);
    }
    for blk in a.restrict(support)? {
        let blk = if sign == Sign::Minus { blk.negated() } else { blk };
        if !blk.is_pd(eps_pivot)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn classify_on(a: &SymBlockMatrix, b: f64, tol: &Tolerances, support: &Support) -> Classification {
    for sign in [Sign::Plus, Sign::Minus] {
        // entries are finite by construction, so the factorization cannot fail
        if support_is_pd(a, support, sign, tol.eps_pivot).expect("support lies in the matrix structure") {
            if sign.value() * b < -tol.eps_rhs {
                return Classification::InfeasibleWitness(sign);
            }
            if b.abs() <= tol.eps_rhs {
                return Classification::Reducible(sign);
            }
        }
    }
    Classification::NotReducible
}

/// Classifies a single constraint `A•X = b`, trying `+1` before `-1`.
pub fn classify_constraint(a: &SymBlockMatrix, b: f64, tol: &Tolerances) -> Classification {
    classify_on(a, b, tol, &a.support(tol.eps_support))
}

/// Drops constraint `constraint` (1-based, current numbering) and deletes the
/// rows and columns in `support` from the objective and remaining constraints.
pub fn apply_deletion(
    inst: &SdpInstance,
    constraint: usize,
    support: &Support,
) -> Result<(SdpInstance, Shrink), ReduceError> {
    if constraint == 0 || constraint > inst.m() {
        return Err(ReduceError::InvalidConstraint { id: constraint, m: inst.m() });
    }
    let shrink = inst.structure.shrink(support)?;
    let mut constraints = Vec::with_capacity(inst.m() - 1);
    let mut rhs = Vec::with_capacity(inst.m() - 1);
    for (k, (a, &b)) in inst.constraints.iter().zip(&inst.rhs).enumerate() {
        if k + 1 != constraint {
            constraints.push(a.apply_shrink(&shrink)?);
            rhs.push(b);
        }
    }
    let out = SdpInstance {
        structure: shrink.new.clone(),
        objective: inst.objective.apply_shrink(&shrink)?,
        constraints,
        rhs,
        label: inst.label.clone(),
    };
    Ok((out, shrink))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepAction {
    DeleteConstraint,
    DeclareInfeasible,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicStepRecord {
    /// Original 1-based constraint id.
    pub constraint_id: usize,
    pub sign: Sign,
    /// Support in the coordinates current when the step was taken.
    pub support: Support,
    /// The same support in original coordinates.
    pub support_original: Support,
    pub rhs_at_step: f64,
    pub action: StepAction,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Reduced,
    Unchanged,
    Infeasible,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Reduced => "reduced",
            Outcome::Unchanged => "unchanged",
            Outcome::Infeasible => "infeasible",
        }
    }
}

/// Replayable record of a presolve run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionCertificate {
    pub version: u32,
    pub outcome: Outcome,
    pub original_structure: BlockStructure,
    pub original_m: usize,
    pub tolerances: Tolerances,
    pub steps: Vec<BasicStepRecord>,
    /// Original indices surviving every deletion, sorted.
    pub kept_indices: Vec<GlobalIndex>,
    /// Original ids (1-based) of surviving constraints, in current order.
    pub kept_constraints: Vec<usize>,
}

impl ReductionCertificate {
    pub fn original_n(&self) -> usize {
        self.original_structure.n()
    }

    /// Original indices removed by the recorded deletions.
    pub fn deleted_indices(&self) -> Support {
        let kept: Vec<usize> = self.kept_indices.iter().map(|g| g.flat).collect();
        let deleted = self
            .original_structure
            .all_indices()
            .filter(|g| kept.binary_search(&g.flat).is_err())
            .collect::<Vec<_>>();
        Support::from(deleted)
    }

    /// Block structure of the reduced instance.
    pub fn reduced_structure(&self) -> Result<BlockStructure, ModelError> {
        Ok(self.original_structure.shrink(&self.deleted_indices())?.new)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Infeasible(ReductionCertificate),
    Reduced(SdpInstance, ReductionCertificate),
    Unchanged(ReductionCertificate),
}

impl Verdict {
    pub fn certificate(&self) -> &ReductionCertificate {
        match self {
            Verdict::Infeasible(c) | Verdict::Reduced(_, c) | Verdict::Unchanged(c) => c,
        }
    }

    pub fn outcome(&self) -> Outcome {
        self.certificate().outcome
    }

    pub fn reduced(&self) -> Option<&SdpInstance> {
        match self {
            Verdict::Reduced(inst, _) => Some(inst),
            _ => None,
        }
    }

    /// `(n, m)` after presolve. For infeasible runs this is the size at the
    /// point infeasibility was declared.
    pub fn final_dims(&self) -> (usize, usize) {
        let c = self.certificate();
        (c.kept_indices.len(), c.kept_constraints.len())
    }
}

/// Working copy of an instance plus the map back to original coordinates.
pub(crate) struct Tracked {
    pub inst: SdpInstance,
    pub ids: Vec<usize>,
    pub orig_flat: Vec<usize>,
    pub original_structure: BlockStructure,
}

impl Tracked {
    pub fn new(inst: &SdpInstance) -> Self {
        Tracked {
            inst: inst.clone(),
            ids: (1..=inst.m()).collect(),
            orig_flat: (0..inst.n()).collect(),
            original_structure: inst.structure.clone(),
        }
    }

    pub fn to_original(&self, s: &Support) -> Support {
        Support::from(
            s.iter()
                .map(|g| self.original_structure.from_flat(self.orig_flat[g.flat]).unwrap())
                .collect::<Vec<_>>(),
        )
    }

    /// Applies a deletion; returns which remaining constraints lost entries.
    pub fn delete(&mut self, pos: usize, support: &Support) -> Result<Vec<bool>, ReduceError> {
        let (next, shrink) = apply_deletion(&self.inst, pos + 1, support)?;
        let touched = self
            .inst
            .constraints
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != pos)
            .zip(&next.constraints)
            .map(|((_, before), after)| before.nnz() != after.nnz())
            .collect();
        self.orig_flat = (0..self.orig_flat.len())
            .filter(|&f| shrink.map[f].is_some())
            .map(|f| self.orig_flat[f])
            .collect();
        self.ids.remove(pos);
        self.inst = next;
        Ok(touched)
    }

    pub fn kept_indices(&self) -> Vec<GlobalIndex> {
        self.orig_flat.iter().map(|&f| self.original_structure.from_flat(f).unwrap()).collect()
    }
}

/// Repeats the basic step until no constraint qualifies.
///
/// Constraints are scanned in current order and the scan restarts from the
/// first constraint after every deletion. A constraint already found not
/// reducible is skipped on later scans unless a deletion removed one of its
/// entries, since otherwise its classification cannot have changed.
pub fn preprocess(inst: &SdpInstance, tol: &Tolerances, max_steps: Option<usize>) -> Verdict {
    let mut t = Tracked::new(inst);
    let mut steps: Vec<BasicStepRecord> = Vec::new();
    let mut settled = vec![false; inst.m()];
    let mut infeasible = false;

    while max_steps.is_none_or(|cap| steps.len() < cap) {
        let mut hit = None;
        for pos in 0..t.inst.m() {
            if settled[pos] {
                continue;
            }
            let a = &t.inst.constraints[pos];
            let support = a.support(tol.eps_support);
            match classify_on(a, t.inst.rhs[pos], tol, &support) {
                Classification::NotReducible => settled[pos] = true,
                c => {
                    hit = Some((pos, c, support));
                    break;
                }
            }
        }
        let Some((pos, class, support)) = hit else { break };
        let (sign, action) = match class {
            Classification::Reducible(s) => (s, StepAction::DeleteConstraint),
            Classification::InfeasibleWitness(s) => (s, StepAction::DeclareInfeasible),
            Classification::NotReducible => unreachable!(),
        };
        steps.push(BasicStepRecord {
            constraint_id: t.ids[pos],
            sign,
            support_original: t.to_original(&support),
            support: support.clone(),
            rhs_at_step: t.inst.rhs[pos],
            action,
        });
        if action == StepAction::DeclareInfeasible {
            infeasible = true;
            break;
        }
        let touched = t.delete(pos, &support).expect("support comes from the current instance");
        settled.remove(pos);
        for (s, touched) in settled.iter_mut().zip(touched) {
            if touched {
                *s = false;
            }
        }
    }

    let outcome = if infeasible {
        Outcome::Infeasible
    } else if steps.is_empty() {
        Outcome::Unchanged
    } else {
        Outcome::Reduced
    };
    let cert = ReductionCertificate {
        version: CERTIFICATE_VERSION,
        outcome,
        original_structure: inst.structure.clone(),
        original_m: inst.m(),
        tolerances: *tol,
        kept_indices: t.kept_indices(),
        kept_constraints: t.ids.clone(),
        steps,
    };
    match outcome {
        Outcome::Infeasible => Verdict::Infeasible(cert),
        Outcome::Unchanged => Verdict::Unchanged(cert),
        Outcome::Reduced => {
            let mut reduced = t.inst;
            let note = format!(
                "presolved: n {} -> {}, m {} -> {}",
                inst.n(),
                reduced.n(),
                inst.m(),
                reduced.m()
            );
            reduced.label = if inst.label.is_empty() { note } else { format!("{}\n{note}", inst.label) };
            Verdict::Reduced(reduced, cert)
        }
    }
}
