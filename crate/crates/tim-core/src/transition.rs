//! The transition calculus: prediction extraction, transition coefficients,
//! the learning target, the finite-difference derivative estimator, and
//! interval weighting.
//!
//! Conventions: a state at time `t` moves to time `r <= t` through the affine
//! map `x_r = a * x_t + b * f(x_t, t, r)`. The coefficients come from the
//! generic formulas in terms of `(alpha, sigma, alpha_hat, sigma_hat)` at `t`
//! and `r`; per-transport closed forms are used only as cross-checks in tests.

use crate::error::{Result, TimError};
use crate::transport::{coeffs, CoeffBundle, TransportSpec};

/// Threshold below which a denominator counts as degenerate.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Default finite-difference step of the derivative estimator.
pub const DEFAULT_DDE_EPS: f64 = 0.005;

/// The `(A, B, dB/dt, C)` bundle for a `(t, r)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransitionCoeffs {
    /// Multiplier of the current state.
    pub a: f64,
    /// Multiplier of the network output.
    pub b: f64,
    /// Time derivative of `b` at fixed `r`.
    pub db_dt: f64,
    /// Denominator `C(t) = sigma_hat_t * alpha_t - alpha_hat_t * sigma_t`.
    pub c: f64,
}

/// Computes the transition coefficients for a `(t, r)` pair.
///
/// `db_dt` comes from the quotient rule over the analytic coefficient
/// derivatives, never from per-transport closed forms.
pub fn transition_coeffs(spec: &TransportSpec, t: f64, r: f64) -> Result<TransitionCoeffs> {
    let ct = coeffs(spec, t)?;
    let cr = coeffs(spec, r)?;
    transition_coeffs_from_bundles(&ct, &cr)
}

/// Same as [`transition_coeffs`] but from pre-evaluated bundles; the trainer
/// reuses bundles it already holds.
pub fn transition_coeffs_from_bundles(ct: &CoeffBundle, cr: &CoeffBundle) -> Result<TransitionCoeffs> {
    let c = ct.denom();
    if c.abs() < DEGENERATE_EPS {
        return Err(TimError::Degenerate { context: "transition_coeffs: C(t)", value: c });
    }
    let a = (cr.alpha * ct.sigma_hat - cr.sigma * ct.alpha_hat) / c;
    let b_num = cr.sigma * ct.alpha - cr.alpha * ct.sigma;
    let b = b_num / c;
    // Quotient rule: B = N/C with N' and C' from the bundle derivatives.
    let b_num_dt = cr.sigma * ct.d_alpha - cr.alpha * ct.d_sigma;
    let c_dt = ct.d_denom();
    let db_dt = (b_num_dt * c - b_num * c_dt) / (c * c);
    Ok(TransitionCoeffs { a, b, db_dt, c })
}

/// Inverts the network output into the x- and eps-predictions.
///
/// `x_hat = (sigma_hat x_t - sigma f) / C`, `eps_hat = (alpha f - alpha_hat x_t) / C`.
pub fn x_eps_prediction(
    x_t: &[f64],
    f_out: &[f64],
    spec: &TransportSpec,
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x_t.len() != f_out.len() {
        return Err(TimError::Shape(format!(
            "x_t has {} entries, f_out has {}",
            x_t.len(),
            f_out.len()
        )));
    }
    let ct = coeffs(spec, t)?;
    let c = ct.denom();
    if c.abs() < DEGENERATE_EPS {
        return Err(TimError::Degenerate { context: "x_eps_prediction: C(t)", value: c });
    }
    let x_hat = x_t
        .iter()
        .zip(f_out)
        .map(|(&x, &f)| (ct.sigma_hat * x - ct.sigma * f) / c)
        .collect();
    let eps_hat = x_t
        .iter()
        .zip(f_out)
        .map(|(&x, &f)| (ct.alpha * f - ct.alpha_hat * x) / c)
        .collect();
    Ok((x_hat, eps_hat))
}

/// Applies the affine state transition `x_r = a * x_t + b * f`.
pub fn apply_transition(x_t: &[f64], f_out: &[f64], tc: &TransitionCoeffs) -> Vec<f64> {
    debug_assert_eq!(x_t.len(), f_out.len());
    x_t.iter().zip(f_out).map(|(&x, &f)| tc.a * x + tc.b * f).collect()
}

/// Read-only evaluator interface shared by exact oracles and trained
/// networks. `xs` is a row-major `[n x dim]` batch sharing one `(t, r)` pair.
///
/// Implementations must be deterministic and safe for concurrent use.
pub trait Evaluator: Sync {
    fn dim(&self) -> usize;
    fn eval_batch(&self, xs: &[f64], t: f64, r: f64, class: Option<u32>, out: &mut [f64]);

    /// Single-sample convenience wrapper.
    fn eval(&self, x_t: &[f64], t: f64, r: f64) -> Vec<f64> {
        let mut out = vec![0.0; x_t.len()];
        self.eval_batch(x_t, t, r, None, &mut out);
        out
    }
}

/// Central-difference estimate of the network's total time derivative along
/// the noising trajectory.
///
/// Builds `x_{t +/- eps} = alpha_{t +/- eps} x + sigma_{t +/- eps} eps` from
/// the same `(x, eps)` pair and evaluates the frozen network twice; no
/// gradient is recorded anywhere.
pub fn dde(
    f_frozen: &dyn Evaluator,
    x: &[f64],
    eps: &[f64],
    t: f64,
    r: f64,
    spec: &TransportSpec,
    eps_fd: f64,
) -> Result<Vec<f64>> {
    if eps_fd <= 0.0 {
        return Err(TimError::Config(format!("eps_fd must be positive, got {eps_fd}")));
    }
    // Range errors here mean the caller forgot to clamp t into the interior.
    let cp = coeffs(spec, t + eps_fd)?;
    let cm = coeffs(spec, t - eps_fd)?;
    let x_p: Vec<f64> = x.iter().zip(eps).map(|(&xv, &ev)| cp.alpha * xv + cp.sigma * ev).collect();
    let x_m: Vec<f64> = x.iter().zip(eps).map(|(&xv, &ev)| cm.alpha * xv + cm.sigma * ev).collect();
    let f_p = f_frozen.eval(&x_p, t + eps_fd, r);
    let f_m = f_frozen.eval(&x_m, t - eps_fd, r);
    Ok(f_p
        .iter()
        .zip(&f_m)
        .map(|(&p, &m)| (p - m) / (2.0 * eps_fd))
        .collect())
}

/// The learning target
/// `f_hat = alpha_hat x + sigma_hat eps + (B / (dB/dt)) (d_alpha_hat x + d_sigma_hat eps - df_dt)`.
///
/// At `t = r` the correction vanishes with `B = 0` and the target reduces to
/// the plain diffusion target; that branch is taken exactly.
pub fn tim_target(
    x: &[f64],
    eps: &[f64],
    t: f64,
    r: f64,
    df_dt: &[f64],
    spec: &TransportSpec,
) -> Result<Vec<f64>> {
    let ct = coeffs(spec, t)?;
    let cr = coeffs(spec, r)?;
    let tc = transition_coeffs_from_bundles(&ct, &cr)?;
    tim_target_from_parts(x, eps, df_dt, &ct, &tc)
}

/// Target from pre-evaluated parts; shared with the trainer's batched path.
pub fn tim_target_from_parts(
    x: &[f64],
    eps: &[f64],
    df_dt: &[f64],
    ct: &CoeffBundle,
    tc: &TransitionCoeffs,
) -> Result<Vec<f64>> {
    if x.len() != eps.len() || x.len() != df_dt.len() {
        return Err(TimError::Shape("x / eps / df_dt length mismatch".into()));
    }
    if tc.b == 0.0 {
        return Ok(x
            .iter()
            .zip(eps)
            .map(|(&xv, &ev)| ct.alpha_hat * xv + ct.sigma_hat * ev)
            .collect());
    }
    if tc.db_dt.abs() < DEGENERATE_EPS {
        return Err(TimError::Degenerate { context: "tim_target: dB/dt", value: tc.db_dt });
    }
    let ratio = tc.b / tc.db_dt;
    Ok(x.iter()
        .zip(eps)
        .zip(df_dt)
        .map(|((&xv, &ev), &dfv)| {
            ct.alpha_hat * xv
                + ct.sigma_hat * ev
                + ratio * (ct.d_alpha_hat * xv + ct.d_sigma_hat * ev - dfv)
        })
        .collect())
}

/// Interval weighting kernels `k(., .)` over the warped interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum WeightKernel {
    /// `1 / (sigma_d + delta)`
    Reciprocal,
    /// `1 / (sigma_d^2 + delta^2)`
    SoftMinSnr,
    /// `1 / sqrt(sigma_d + delta)`
    Sqrt,
    /// `1 / (sigma_d + delta)^2`
    Square,
}

/// Monotone time warps `tau(.)` applied before the kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum TimeWarp {
    /// `tau(t) = t`
    Identity,
    /// `tau(t) = t / (1 - t)`; pole at t = 1.
    Rational,
    /// `tau(t) = tan(t)`; pole at t = pi/2.
    Tangent,
}

/// Interval weighting `w(t, r) = k(tau(t), tau(r))`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeightScheme {
    pub kernel: WeightKernel,
    pub warp: TimeWarp,
    pub sigma_data: f64,
}

impl Default for WeightScheme {
    /// The sqrt kernel over tangent-warped time.
    fn default() -> Self {
        WeightScheme { kernel: WeightKernel::Sqrt, warp: TimeWarp::Tangent, sigma_data: 1.0 }
    }
}

fn warp(warp: TimeWarp, t: f64) -> Result<f64> {
    match warp {
        TimeWarp::Identity => Ok(t),
        TimeWarp::Rational => {
            if t >= 1.0 {
                return Err(TimError::WarpPole { warp: "t/(1-t)", t });
            }
            Ok(t / (1.0 - t))
        }
        TimeWarp::Tangent => {
            if t >= std::f64::consts::FRAC_PI_2 {
                return Err(TimError::WarpPole { warp: "tan(t)", t });
            }
            Ok(t.tan())
        }
    }
}

/// Evaluates the interval weight for `t >= r`.
pub fn interval_weight(t: f64, r: f64, scheme: &WeightScheme) -> Result<f64> {
    let delta = warp(scheme.warp, t)? - warp(scheme.warp, r)?;
    if delta < 0.0 {
        return Err(TimError::Config(format!(
            "interval weight needs t >= r (warped delta = {delta})"
        )));
    }
    let sd = scheme.sigma_data;
    let w = match scheme.kernel {
        WeightKernel::Reciprocal => 1.0 / (sd + delta),
        WeightKernel::SoftMinSnr => 1.0 / (sd * sd + delta * delta),
        WeightKernel::Sqrt => 1.0 / (sd + delta).sqrt(),
        WeightKernel::Square => 1.0 / ((sd + delta) * (sd + delta)),
    };
    Ok(w)
}

/// Residual of the product-derivative invariant at one probe point.
///
/// Estimates `|| d/dt [ B_{t,r} (alpha_hat_t x + sigma_hat_t eps - f(x_t, t, r)) ] ||`
/// by central differences over `t`, rebuilding `x_t` from the same `(x, eps)`
/// at each probe. Near zero iff `f` satisfies the transition identity there.
pub fn identity_residual(
    f: &dyn Evaluator,
    x: &[f64],
    eps: &[f64],
    t: f64,
    r: f64,
    spec: &TransportSpec,
    h_fd: f64,
) -> Result<f64> {
    let g = |s: f64| -> Result<Vec<f64>> {
        let cs = coeffs(spec, s)?;
        let cr = coeffs(spec, r)?;
        let tc = transition_coeffs_from_bundles(&cs, &cr)?;
        let x_s: Vec<f64> =
            x.iter().zip(eps).map(|(&xv, &ev)| cs.alpha * xv + cs.sigma * ev).collect();
        let f_s = f.eval(&x_s, s, r);
        Ok(x.iter()
            .zip(eps)
            .zip(&f_s)
            .map(|((&xv, &ev), &fv)| tc.b * (cs.alpha_hat * xv + cs.sigma_hat * ev - fv))
            .collect())
    };
    let g_p = g(t + h_fd)?;
    let g_m = g(t - h_fd)?;
    let sq: f64 = g_p
        .iter()
        .zip(&g_m)
        .map(|(&p, &m)| {
            let d = (p - m) / (2.0 * h_fd);
            d * d
        })
        .sum();
    Ok(sq.sqrt())
}
