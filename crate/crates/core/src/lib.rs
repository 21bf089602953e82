//! Identification diagnostics and average-treatment-effect estimation for
//! models of the form `Y = p(X)' eps` with `p(X) = (1, X(1), ..., X(T))'`,
//! binary treatment dummies `X(t)` and heterogeneous coefficients `eps` that
//! are mean independent of `X` given a control variable `V`.
//!
//! - [`algebra`]: conditional moment matrices, their eigenvalues and both
//!   Schur complements.
//! - [`identification`]: cell-level verdicts, equivalence checks and the
//!   observationally equivalent alternative used to show non-identification.
//! - [`estimation`]: per-cell least squares on `E[Y|X,V] = p(X)'q(V)` and the
//!   data audit.
//! - [`simulation`]: seeded data generating processes with known effects.

pub mod algebra;
pub mod dataset;
pub mod error;
pub mod estimation;
pub mod identification;
pub mod partition;
pub mod simulation;

pub use algebra::{
    conditional_variance, moment_matrix_from_gps, moment_matrix_from_joint, null_space_direction,
    schur_complement_of_diag_block, smallest_eigenvalue, DesignVector, GpsVector,
    JointDistribution, MomentMatrix,
};
pub use dataset::{Control, Dataset, Observation, TreatmentMode};
pub use error::{Error, Result};
pub use estimation::{
    audit, estimate_asf, estimate_cell, AsfEstimate, CellEstimate, CellReport, CellRules,
    IdentificationReport, Verdict,
};
pub use identification::{
    construct_equivalent_q, observational_distance, rayleigh_gap, verdict_eigen, verdict_overlap,
    verdict_variance, verdicts_agree, CellDistribution, IdentificationVerdict, QFunction, Reason,
    TreatmentDist,
};
pub use partition::{partition_controls, Scheme};
pub use simulation::{failure_sweep, simulate, DgpSpec, Simulation, SweepPoint};
