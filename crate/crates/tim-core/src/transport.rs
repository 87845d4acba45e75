//! Diffusion transports: forward-noising coefficients, training-target
//! coefficients, their time derivatives, time scaling, and timestep
//! distributions.
//!
//! A transport fixes `(alpha_t, sigma_t)` for the forward process
//! `x_t = alpha_t * x + sigma_t * eps` together with the target coefficients
//! `(alpha_hat_t, sigma_hat_t)` the network is regressed onto. Everything
//! downstream (transition coefficients, targets, samplers) is generic over
//! the eight scalars returned by [`coeffs`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TimError};

/// VP time-scaling constant: `c_noise(t) = (T - 1) * t` with `T = 1000`.
const VP_TIME_SCALE: f64 = 1000.0;

/// Supported diffusion transports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransportKind {
    /// Optimal-transport flow matching: `alpha = 1 - t`, `sigma = t`.
    OtFlowMatching,
    /// Trigonometric flow: `alpha = cos t`, `sigma = sin t`.
    TrigFlow,
    /// EDM with `alpha = 1 / sqrt(t^2 + sigma_d^2)`.
    Edm,
    /// Variance-preserving SDE with `beta_t` schedule.
    VpSde,
    /// Variance-exploding SDE: `alpha = 1`, `sigma = t`.
    VeSde,
}

impl TransportKind {
    pub const ALL: [TransportKind; 5] = [
        TransportKind::OtFlowMatching,
        TransportKind::TrigFlow,
        TransportKind::Edm,
        TransportKind::VpSde,
        TransportKind::VeSde,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TransportKind::OtFlowMatching => "ot-fm",
            TransportKind::TrigFlow => "trigflow",
            TransportKind::Edm => "edm",
            TransportKind::VpSde => "vp",
            TransportKind::VeSde => "ve",
        }
    }
}

/// One diffusion transport with all constants needed to evaluate its
/// coefficients, time scaling, and timestep distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportSpec {
    pub kind: TransportKind,
    /// Data standard deviation `sigma_d`.
    pub sigma_data: f64,
    /// Inclusive time range. `t_min > 0` keeps `sigma_t = 0` singularities
    /// and `ln(t)` domains out of reach.
    pub t_min: f64,
    pub t_max: f64,
    /// VP beta-schedule constants (`beta_d`, `beta_min`).
    pub vp_beta_d: f64,
    pub vp_beta_min: f64,
    /// VE sigma range.
    pub ve_sigma_min: f64,
    pub ve_sigma_max: f64,
    /// Log-normal noise-level sampling parameters.
    pub p_mean: f64,
    pub p_std: f64,
}

impl TransportSpec {
    /// Spec with per-kind default constants and time ranges.
    pub fn new(kind: TransportKind) -> Self {
        let (t_min, t_max) = match kind {
            TransportKind::OtFlowMatching => (1e-4, 1.0 - 1e-4),
            TransportKind::TrigFlow => (1e-4, 1.56),
            TransportKind::Edm => (1e-4, 80.0),
            TransportKind::VpSde => (1e-4, 1.0),
            TransportKind::VeSde => (0.02, 80.0),
        };
        TransportSpec {
            kind,
            sigma_data: 1.0,
            t_min,
            t_max,
            vp_beta_d: 19.9,
            vp_beta_min: 0.1,
            ve_sigma_min: 0.02,
            ve_sigma_max: 80.0,
            p_mean: -0.4,
            p_std: 1.0,
        }
    }

    /// Checks structural invariants: ordered time range, positive sigma
    /// bounds, and a non-vanishing transition denominator across the range.
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max) {
            return Err(TimError::Config(format!(
                "t_min ({}) must be < t_max ({})",
                self.t_min, self.t_max
            )));
        }
        if self.t_min <= 0.0 {
            return Err(TimError::Config("t_min must be positive".into()));
        }
        if self.sigma_data <= 0.0 {
            return Err(TimError::Config("sigma_data must be positive".into()));
        }
        if self.ve_sigma_min <= 0.0 || self.ve_sigma_max <= self.ve_sigma_min {
            return Err(TimError::Config("VE sigma range must be positive and ordered".into()));
        }
        if self.p_std <= 0.0 {
            return Err(TimError::Config("p_std must be positive".into()));
        }
        // Probe the denominator across the interior; every supported
        // transport keeps it bounded away from zero, so a dense probe is a
        // config sanity check rather than a proof.
        for i in 0..=64 {
            let t = self.t_min + (self.t_max - self.t_min) * (i as f64) / 64.0;
            let c = coeffs(self, t)?.denom();
            if c.abs() < 1e-12 {
                return Err(TimError::Degenerate { context: "validate: C(t)", value: c });
            }
        }
        Ok(())
    }

    pub fn clamp_time(&self, t: f64) -> f64 {
        t.clamp(self.t_min, self.t_max)
    }

    fn check_range(&self, t: f64) -> Result<()> {
        if t < self.t_min || t > self.t_max || !t.is_finite() {
            return Err(TimError::TimeOutOfRange { t, t_min: self.t_min, t_max: self.t_max });
        }
        Ok(())
    }

    /// `beta_t = sqrt(exp(beta_d t^2 / 2 + beta_min t) - 1)` (VP schedule).
    fn vp_beta(&self, t: f64) -> f64 {
        (self.vp_exponent(t).exp_m1()).sqrt()
    }

    fn vp_exponent(&self, t: f64) -> f64 {
        0.5 * self.vp_beta_d * t * t + self.vp_beta_min * t
    }

    /// d(beta_t)/dt = exp(e(t)) * e'(t) / (2 beta_t).
    fn vp_dbeta(&self, t: f64) -> f64 {
        let e = self.vp_exponent(t);
        let beta = self.vp_beta(t);
        e.exp() * (self.vp_beta_d * t + self.vp_beta_min) / (2.0 * beta)
    }
}

/// All eight coefficient scalars of a transport at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffBundle {
    pub alpha: f64,
    pub sigma: f64,
    pub alpha_hat: f64,
    pub sigma_hat: f64,
    pub d_alpha: f64,
    pub d_sigma: f64,
    pub d_alpha_hat: f64,
    pub d_sigma_hat: f64,
}

impl CoeffBundle {
    /// Transition denominator `C(t) = sigma_hat * alpha - alpha_hat * sigma`.
    #[inline]
    pub fn denom(&self) -> f64 {
        self.sigma_hat * self.alpha - self.alpha_hat * self.sigma
    }

    /// `dC/dt` by the product rule on the four factors.
    #[inline]
    pub fn d_denom(&self) -> f64 {
        self.d_sigma_hat * self.alpha + self.sigma_hat * self.d_alpha
            - self.d_alpha_hat * self.sigma
            - self.alpha_hat * self.d_sigma
    }
}

/// Evaluates the transport's coefficients and analytic first derivatives.
pub fn coeffs(spec: &TransportSpec, t: f64) -> Result<CoeffBundle> {
    spec.check_range(t)?;
    let bundle = match spec.kind {
        TransportKind::OtFlowMatching => CoeffBundle {
            alpha: 1.0 - t,
            sigma: t,
            alpha_hat: -1.0,
            sigma_hat: 1.0,
            d_alpha: -1.0,
            d_sigma: 1.0,
            d_alpha_hat: 0.0,
            d_sigma_hat: 0.0,
        },
        TransportKind::TrigFlow => CoeffBundle {
            alpha: t.cos(),
            sigma: t.sin(),
            alpha_hat: -t.sin(),
            sigma_hat: t.cos(),
            d_alpha: -t.sin(),
            d_sigma: t.cos(),
            d_alpha_hat: -t.cos(),
            d_sigma_hat: -t.sin(),
        },
        TransportKind::Edm => {
            let sd = spec.sigma_data;
            let s2 = t * t + sd * sd;
            let s = s2.sqrt();
            let s3 = s2 * s;
            CoeffBundle {
                alpha: 1.0 / s,
                sigma: t / s,
                alpha_hat: t / (sd * s),
                sigma_hat: -sd / s,
                d_alpha: -t / s3,
                d_sigma: sd * sd / s3,
                d_alpha_hat: sd / s3,
                d_sigma_hat: sd * t / s3,
            }
        }
        TransportKind::VpSde => {
            let beta = spec.vp_beta(t);
            let dbeta = spec.vp_dbeta(t);
            let s2 = beta * beta + 1.0;
            let s = s2.sqrt();
            let s3 = s2 * s;
            CoeffBundle {
                alpha: 1.0 / s,
                sigma: beta / s,
                alpha_hat: 0.0,
                sigma_hat: 1.0,
                d_alpha: -beta * dbeta / s3,
                d_sigma: dbeta / s3,
                d_alpha_hat: 0.0,
                d_sigma_hat: 0.0,
            }
        }
        TransportKind::VeSde => CoeffBundle {
            alpha: 1.0,
            sigma: t,
            alpha_hat: 0.0,
            sigma_hat: -1.0,
            d_alpha: 0.0,
            d_sigma: 1.0,
            d_alpha_hat: 0.0,
            d_sigma_hat: 0.0,
        },
    };
    let c = bundle.denom();
    if c.abs() < 1e-12 {
        return Err(TimError::Degenerate { context: "coeffs: C(t)", value: c });
    }
    Ok(bundle)
}

/// Network time-scaling value `c_noise(t)`.
pub fn c_noise(spec: &TransportSpec, t: f64) -> Result<f64> {
    spec.check_range(t)?;
    match spec.kind {
        TransportKind::OtFlowMatching | TransportKind::TrigFlow => Ok(t),
        TransportKind::Edm => {
            if t <= 0.0 {
                return Err(TimError::TimeOutOfRange { t, t_min: spec.t_min, t_max: spec.t_max });
            }
            Ok(0.25 * t.ln())
        }
        TransportKind::VpSde => Ok((VP_TIME_SCALE - 1.0) * t),
        TransportKind::VeSde => {
            if t <= 0.0 {
                return Err(TimError::TimeOutOfRange { t, t_min: spec.t_min, t_max: spec.t_max });
            }
            Ok((0.5 * t).ln())
        }
    }
}

/// Draws one training timestep from the transport's noise-level distribution
/// and maps it into `[t_min, t_max]`.
///
/// Log-normal `ln(sigma) ~ N(p_mean, p_std^2)` for OT-FM / TrigFlow / EDM,
/// uniform for VP / VE.
pub fn sample_time<R: Rng + ?Sized>(spec: &TransportSpec, rng: &mut R) -> f64 {
    let t = match spec.kind {
        TransportKind::OtFlowMatching => {
            let sigma = log_normal_sigma(spec, rng);
            sigma / (1.0 + sigma)
        }
        TransportKind::TrigFlow => {
            let sigma = log_normal_sigma(spec, rng);
            (sigma / spec.sigma_data).atan()
        }
        TransportKind::Edm => log_normal_sigma(spec, rng),
        TransportKind::VpSde => rng.random_range(spec.t_min..=1.0),
        TransportKind::VeSde => {
            let u: f64 = rng.random_range(1e-4..=1.0);
            let (smin, smax) = (spec.ve_sigma_min, spec.ve_sigma_max);
            smax * ((smin * smin) / (smax * smax)).powf(u)
        }
    };
    spec.clamp_time(t)
}

fn log_normal_sigma<R: Rng + ?Sized>(spec: &TransportSpec, rng: &mut R) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    (spec.p_mean + spec.p_std * z).exp()
}

/// Resolution-dependent timestep shift: maps `t` on the unit interval for a
/// reference pixel count `n` to the time appropriate for `m` pixels.
///
/// `t_m = sqrt(m/n) t / (1 + (sqrt(m/n) - 1) t)`; fixes 0 and 1 and is
/// monotone in `t`.
pub fn shift_timestep(t_n: f64, n: f64, m: f64) -> f64 {
    debug_assert!(n > 0.0 && m > 0.0);
    let s = (m / n).sqrt();
    s * t_n / (1.0 + (s - 1.0) * t_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn otfm_coeffs_at_zero_limit() {
        // t_min is the domain floor; evaluate there and compare against the
        // closed forms at small t.
        let spec = TransportSpec::new(TransportKind::OtFlowMatching);
        let c = coeffs(&spec, spec.t_min).unwrap();
        assert_close(c.alpha, 1.0 - spec.t_min, 0.0);
        assert_close(c.sigma, spec.t_min, 0.0);
        assert_eq!(c.alpha_hat, -1.0);
        assert_eq!(c.sigma_hat, 1.0);
        assert_eq!(c.d_alpha, -1.0);
        assert_eq!(c.d_sigma, 1.0);
        assert_eq!(c.d_alpha_hat, 0.0);
        assert_eq!(c.d_sigma_hat, 0.0);
    }

    #[test]
    fn trigflow_coeffs_near_zero() {
        let spec = TransportSpec::new(TransportKind::TrigFlow);
        let t = spec.t_min;
        let c = coeffs(&spec, t).unwrap();
        assert_close(c.alpha, t.cos(), 0.0);
        assert_close(c.sigma, t.sin(), 0.0);
        assert_close(c.alpha_hat, -t.sin(), 0.0);
        assert_close(c.sigma_hat, t.cos(), 0.0);
    }

    #[test]
    fn edm_coeffs_at_one() {
        let spec = TransportSpec::new(TransportKind::Edm);
        let c = coeffs(&spec, 1.0).unwrap();
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert_close(c.alpha, inv_sqrt2, 1e-15);
        assert_close(c.sigma, inv_sqrt2, 1e-15);
        assert_close(c.alpha_hat, inv_sqrt2, 1e-15);
        assert_close(c.sigma_hat, -inv_sqrt2, 1e-15);
    }

    #[test]
    fn coeffs_out_of_range_errors() {
        let spec = TransportSpec::new(TransportKind::OtFlowMatching);
        assert!(coeffs(&spec, -0.5).is_err());
        assert!(coeffs(&spec, 2.0).is_err());
        assert!(coeffs(&spec, f64::NAN).is_err());
    }

    #[test]
    fn c_noise_values() {
        let ot = TransportSpec::new(TransportKind::OtFlowMatching);
        assert_eq!(c_noise(&ot, 0.3).unwrap(), 0.3);
        let edm = TransportSpec::new(TransportKind::Edm);
        assert_eq!(c_noise(&edm, 1.0).unwrap(), 0.0);
        let ve = TransportSpec::new(TransportKind::VeSde);
        assert_eq!(c_noise(&ve, 2.0).unwrap(), 0.0);
        let vp = TransportSpec::new(TransportKind::VpSde);
        assert_close(c_noise(&vp, 0.5).unwrap(), 999.0 * 0.5, 1e-12);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-5;
        for kind in TransportKind::ALL {
            let spec = TransportSpec::new(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let lo = spec.t_min + 0.05 * (spec.t_max - spec.t_min);
            let hi = spec.t_max - 0.05 * (spec.t_max - spec.t_min);
            for _ in 0..100 {
                let t: f64 = rng.random_range(lo..hi);
                let c = coeffs(&spec, t).unwrap();
                let p = coeffs(&spec, t + h).unwrap();
                let m = coeffs(&spec, t - h).unwrap();
                let checks = [
                    (c.d_alpha, (p.alpha - m.alpha) / (2.0 * h), "d_alpha"),
                    (c.d_sigma, (p.sigma - m.sigma) / (2.0 * h), "d_sigma"),
                    (c.d_alpha_hat, (p.alpha_hat - m.alpha_hat) / (2.0 * h), "d_alpha_hat"),
                    (c.d_sigma_hat, (p.sigma_hat - m.sigma_hat) / (2.0 * h), "d_sigma_hat"),
                ];
                for (analytic, fd, name) in checks {
                    let scale = analytic.abs().max(1e-8);
                    assert!(
                        (analytic - fd).abs() / scale < 1e-5,
                        "{} {} at t={}: analytic {} vs fd {}",
                        spec.kind.name(),
                        name,
                        t,
                        analytic,
                        fd
                    );
                }
            }
        }
    }

    #[test]
    fn sample_time_median_maps() {
        // With the log-draw pinned at its median (ln sigma = 0 => sigma = 1)
        // the timestep maps evaluate in closed form.
        let sigma = 1.0f64;
        assert_close(sigma / (1.0 + sigma), 0.5, 0.0);
        let trig = TransportSpec::new(TransportKind::TrigFlow);
        assert_close((sigma / trig.sigma_data).atan(), std::f64::consts::FRAC_PI_4, 0.0);
        // Uniform endpoint for VP.
        let vp = TransportSpec::new(TransportKind::VpSde);
        assert_eq!(vp.clamp_time(1.0), 1.0);
    }

    #[test]
    fn sample_time_stays_in_range() {
        for kind in TransportKind::ALL {
            let spec = TransportSpec::new(kind);
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..2000 {
                let t = sample_time(&spec, &mut rng);
                assert!(t >= spec.t_min && t <= spec.t_max, "{} out of range: {t}", kind.name());
            }
        }
    }

    #[test]
    fn sample_time_otfm_median_half() {
        // Empirical median of the OT-FM timestep with p_mean = 0 is 0.5.
        let mut spec = TransportSpec::new(TransportKind::OtFlowMatching);
        spec.p_mean = 0.0;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ts: Vec<f64> = (0..20001).map(|_| sample_time(&spec, &mut rng)).collect();
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_close(ts[10000], 0.5, 0.02);
    }

    #[test]
    fn shift_examples() {
        assert_close(shift_timestep(0.5, 1.0, 4.0), 2.0 / 3.0, 1e-12);
        for t in [0.0, 0.17, 0.5, 0.93, 1.0] {
            assert_close(shift_timestep(t, 3.0, 3.0), t, 1e-15);
        }
        assert_eq!(shift_timestep(0.0, 2.0, 9.0), 0.0);
        assert_close(shift_timestep(1.0, 2.0, 9.0), 1.0, 1e-15);
    }

    #[test]
    fn shift_round_trip_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let t: f64 = rng.random_range(0.0..1.0);
            let n: f64 = rng.random_range(0.1..100.0);
            let m: f64 = rng.random_range(0.1..100.0);
            let back = shift_timestep(shift_timestep(t, n, m), m, n);
            assert_close(back, t, 1e-12);
            let t2 = (t + 1e-3).min(1.0);
            assert!(shift_timestep(t2, n, m) >= shift_timestep(t, n, m));
        }
    }

    #[test]
    fn validate_rejects_bad_ranges() {
        let mut spec = TransportSpec::new(TransportKind::OtFlowMatching);
        spec.t_min = 0.9;
        spec.t_max = 0.1;
        assert!(spec.validate().is_err());
        let mut spec = TransportSpec::new(TransportKind::VeSde);
        spec.ve_sigma_min = -1.0;
        assert!(spec.validate().is_err());
        for kind in TransportKind::ALL {
            assert!(TransportSpec::new(kind).validate().is_ok());
        }
    }
}
