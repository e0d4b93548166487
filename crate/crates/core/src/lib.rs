//! Periodic homogenization of principal eigenpairs for non-divergence elliptic operators.

pub mod coeff;
pub mod corrector;
pub mod domain;
pub mod effective;
pub mod eigen;
pub mod error;
pub mod interp;
pub mod linalg;
pub mod single;
mod stencil;
pub mod sweep;
pub mod torus;

pub use coeff::{BellmanSpec, CoefficientField, FieldConfig, LinearOperatorSpec, Mat, Periodic};
pub use corrector::{DerivativeBundle, ExpansionResult};
pub use domain::{DiscreteOperator, DomainGrid};
pub use effective::{CorrectorSet, EffectiveLinear};
pub use eigen::{BellmanEigen, EigenPair, PowerIteration};
pub use error::{Error, Result};
pub use sweep::{run_sweep, SweepConfig, SweepReport};
pub use torus::{ErgodicSolution, PeriodicGrid};
