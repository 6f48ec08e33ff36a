//! Two-stage series estimation of one additive component when the nuisance
//! components are built from correlated covariates.
//!
//! The pipeline: [`sumspace`] describes the model spaces and their
//! population geometry, [`estimator`] fits the sumspace by least squares and
//! projects the target block onto `W1`, [`backfit`] recovers the same split
//! by alternating projections, and [`sim`] with [`harness`] run Monte Carlo
//! experiments on top.

pub mod backfit;
pub mod basis;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod linalg;
pub mod quadrature;
pub mod sim;
pub mod sumspace;

pub use basis::{Basis, BasisKind, Domain, TensorBasis, UnivariateBasis};
pub use error::{Error, Result};
pub use estimator::{
    fit, oracle_fit, CenteringMode, Dataset, EstimatorConfig, FitResult, PreparedEstimator,
    Truncation,
};
pub use sumspace::{
    Centering, ComponentSpace, DesignLaw, GeometryReport, IntegrationSpec, SumspaceModel,
};
