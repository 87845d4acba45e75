//! Arbitrary-interval state transitions on diffusion trajectories.
//!
//! The crate builds up from transport coefficient algebra to a full training
//! and sampling stack:
//!
//! - [`transport`]: per-transport coefficients, derivatives, time scaling,
//!   and timestep distributions.
//! - [`transition`]: transition coefficients, prediction extraction, the
//!   learning target, the finite-difference derivative estimator, and
//!   interval weighting.
//! - [`oracle`]: analytic exact transition functions and the energy-distance
//!   metric used to validate everything else.
//! - [`network`]: a self-contained differentiable backbone with hand-written
//!   reverse-mode gradients.
//! - [`data`]: toy datasets and normalization.
//! - [`trainer`]: the training loop (timestep mixing, derivative targets,
//!   weighting, adaptive normalization, optimizer, EMA).
//! - [`sampler`]: any-step piecewise sampling with optional stochastic churn
//!   and classifier-free guidance.
//! - [`checkpoint`]: versioned binary persistence.
//! - [`verify`]: the invariant battery behind `tim verify`.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod sampler;
pub mod trainer;
pub mod network;
pub mod oracle;
pub mod transition;
pub mod transport;
pub mod verify;

pub use error::{Result, TimError};
pub use transition::{
    apply_transition, dde, identity_residual, interval_weight, tim_target, transition_coeffs,
    Evaluator, TimeWarp, TransitionCoeffs, WeightKernel, WeightScheme,
};
pub use transport::{c_noise, coeffs, sample_time, shift_timestep, CoeffBundle, TransportKind, TransportSpec};
