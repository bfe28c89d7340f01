//! Inspection-based presolve for semidefinite programs in SDPA sparse format.
//!
//! The presolver looks for constraints `A_i • X = b_i` whose matrix, up to a
//! sign, is positive definite on its support and zero elsewhere. For
//! `X ⪰ 0` such a constraint forces `b_i ≥ 0` (otherwise the instance is
//! infeasible), and `b_i = 0` forces the rows and columns of `X` on the support
//! to vanish, so they can be deleted from every matrix together with the
//! constraint itself.
//!
//! * [`reduce::preprocess`] runs the reduction and returns a replayable
//!   [`reduce::ReductionCertificate`].
//! * [`lift`] maps solutions of the reduced instance back and re-verifies
//!   certificates against the original instance.
//! * [`metrics`] computes DIMACS error measures.
//! * [`gen`] builds seeded instances with planted reduction chains.

pub mod cli;
pub mod gen;
pub mod lift;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod reduce;
pub mod sdpa;

pub use model::{BlockStructure, DenseBlockMatrix, SdpInstance, SymBlockMatrix};
pub use reduce::{preprocess, Outcome, ReductionCertificate, Tolerances, Verdict};
