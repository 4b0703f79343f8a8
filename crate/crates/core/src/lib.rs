//! Generalized phase retrieval over compact groups.
//!
//! The second moment of a multi-reference alignment model determines, for
//! every isotypic block `ℓ` of the representation, the Gram matrix
//! `X_ℓ* X_ℓ` of the block coefficient matrix. This crate simulates that
//! measurement, recovers `X_ℓ` from it under semialgebraic priors with
//! Procrustes-based projection algorithms, and provides empirical checks of
//! uniqueness (orbit transversality) and stability (bi-Lipschitz distortion).

pub mod analysis;
pub mod error;
pub mod experiments;
pub mod io;
pub mod linalg;
pub mod moments;
pub mod priors;
pub mod solvers;
pub mod repr;
pub mod rng;
pub mod scalar;

pub use analysis::{
    designed_intersection_prior, distortion_estimate, effective_dimension, orbit_dimension_estimate,
    sqrt_gram_map, transversality_check, DistortionReport, GridOptions, TransversalityReport,
};
pub use error::{Error, Result};
pub use experiments::{run_error_vs_noise, run_iterations_vs_k, ExperimentConfig, ExperimentKind};
pub use moments::{
    analytic_second_moment, empirical_second_moment, extract_gram, gram_tuple, sample_observations,
    GramTuple, MraSampleSet,
};
pub use priors::{project_prior, random_subspace_prior, PriorSpec, Projector};
pub use repr::{
    apply, decompose, decompose_cyclic_complex, decompose_cyclic_real, haar_sample,
    random_signal, Block, BlockSignal, GroupAction, GroupElement, RepresentationStructure,
};
pub use scalar::{Field, Scalar};
pub use solvers::{
    matrix_sqrt_psd, procrustes_project, rho, solve, Algorithm, SolveReport, SolverConfig, StopRule,
};

pub use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64;
