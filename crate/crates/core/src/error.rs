use thiserror::Error;

/// Errors surfaced by the library. Dimension mismatches between algebra
/// elements of different `n` are programming errors and panic instead.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("group dimension must be at least 3, got n = {0}")]
    DimensionTooSmall(usize),

    #[error("matrix is not skew-symmetric: ‖M + Mᵀ‖_F = {residual:.3e}")]
    NotSkewSymmetric { residual: f64 },

    #[error("matrix is not a rotation: orthogonality defect {orth_defect:.3e}, det {det:.6}")]
    NotARotation { orth_defect: f64, det: f64 },

    #[error("principal log undefined here: ‖s − 1‖₂ = {norm:.6} ≥ 1 (step size too large?)")]
    LogOutsideSafetyRegion { norm: f64 },

    #[error("mass {index} is not positive: {value}")]
    NonPositiveMass { index: usize, value: f64 },

    #[error("operator is not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("integration step rejected at path {path}, step {step}: increment norm {norm:.3e} leaves the exp/log safety region")]
    StepRejected { path: usize, step: usize, norm: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("decay fit rejected (R² = {r_squared:.4}): insufficient paths or nonpositive means")]
    FitRejected { r_squared: f64 },
}

pub type Result<T> = std::result::Result<T, CoreError>;
