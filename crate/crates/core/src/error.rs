//! Error type shared by all modules.

use alloc::string::String;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("mesh step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("no support on a zero-measure edge")]
    ZeroMeasure,
    #[error("value count {got} does not match node count {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("vector length {got} does not match ambient dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("basis vectors are linearly dependent (vector {0})")]
    DependentBasis(usize),
    #[error("nonlocal block: custom block at vertex `{0}` does not match its incidence coordinates")]
    NonlocalBlock(String),
    #[error("coupling matrix `{0}` is not self-adjoint in the weighted product")]
    NonSymmetricCoupling(String),
    #[error("graph failed validation with {0} violation(s)")]
    InvalidGraph(usize),
    #[error("form domain not dense: pr_V1(X) != K^V1 (no admissible trace with value 1 at vertex `{0}`)")]
    FormDomainNotDense(String),
    #[error("mass matrix block is numerically singular")]
    SingularMass,
    #[error("negative time {0}")]
    NegativeTime(f64),
    #[error("evolution times must be strictly increasing")]
    TimesNotIncreasing,
    #[error("hypothesis of the positivity criterion not met: X is not a sublattice")]
    NotSublattice,
    #[error("hypothesis of the submarkov criterion not met: X is not a Stonean sublattice")]
    NotStonean,
    #[error("constructive lattice classification disagrees with the randomized closure oracle: {0}")]
    OracleDisagreement(String),
}
