//! Normalized-likelihood scoring for speaker identification and verification.
//!
//! Under a linear Gaussian model (class means `mu ~ N(0, diag(eps^2))`,
//! observations `x ~ N(mu, sigma^2 I)`) the minimum-Bayes-risk score for both
//! identification and verification is the normalized likelihood
//! `NL(x | k) = p_k(x) / p(x)`. This crate provides
//!
//! * [`model`]: canonical and general linear Gaussian models, canonicalization
//!   (full-dimensional LDA) and all prior/posterior/marginal/predictive
//!   log densities;
//! * [`scoring`]: NL with known or enrolled class means, the verification
//!   posterior, cosine and (amended) Euclidean scores, and a dense
//!   joint-Gaussian PLDA likelihood-ratio oracle;
//! * [`evaluation`]: EER, IDR, DET points and trial construction;
//! * [`geometry`]: high-dimensional concentration diagnostics;
//! * [`simulation`]: the seeded Monte-Carlo protocol producing metric grids.

pub mod error;
pub mod evaluation;
pub mod format;
pub mod geometry;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod scoring;
pub mod simulation;

pub use error::{Error, Result};
pub use evaluation::{
    build_trials, compute_eer, compute_idr, det_points, DetPoint, MetricsReport, TrialPolicy, TrialSet,
};
pub use geometry::{annulus_stats, separability_probe, ConcentrationReport, SeparabilityReport};
pub use linalg::Matrix;
pub use model::{canonicalize, AnyModel, CanonicalModel, Enrollment, GeneralModel, LinearTransform};
pub use rng::CounterRng;
pub use scoring::{
    cosine_score, decide_sv, euclidean_amended_score, euclidean_score, nl_known, nl_to_sv_posterior, nl_unknown,
    plda_lr_oracle, score_matrix, ScoreMatrix, ScoreRecord, ScoreType,
};
pub use simulation::{preset, run_experiment, ExperimentConfig, ExperimentMode};
