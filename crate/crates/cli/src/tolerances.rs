//! Residual tolerances used by the verification commands, kept in one
//! place so the JSON summaries and the exit-code logic agree.

/// Drift-theorem residual ‖drift − ½grad log N‖.
pub const DRIFT_GRADIENT: f64 = 1e-8;
/// Gradient identities behind the theorem; the rolling-field sum involves
/// no cancellation of large terms and holds tighter.
pub const IDENTITY_E0: f64 = 1e-8;
pub const IDENTITY_E1: f64 = 1e-8;
pub const IDENTITY_E2: f64 = 1e-10;
/// Analytic d log N against the central finite difference at step 1e−5.
pub const DLOGN_FD: f64 = 1e-6;
pub const DLOGN_FD_STEP: f64 = 1e-5;
/// Closed-form torsion of the non-holonomic connection.
pub const TORSION_FORMULA: f64 = 1e-12;
/// Differential metricity identity of ∇^nh.
pub const METRICITY: f64 = 1e-10;
/// Angular-momentum component of the drift, μ0(drift, ξ_α).
pub const MECH_HORIZONTAL: f64 = 1e-9;
/// Angular-velocity component ⟨ξ_α, drift⟩ under Hamiltonization.
pub const VEL_HORIZONTAL: f64 = 1e-8;
/// Classifies the Hamiltonization condition as satisfied.
pub const HAM_CONDITION: f64 = 1e-8;
