//! Analytic ground-truth transition functions and a brute-force two-sample
//! metric. These stand in for large-scale benchmarks: the oracles satisfy the
//! transition identity by construction, so the calculus, the sampler, and the
//! training targets can all be validated against them numerically.

use crate::error::{Result, TimError};
use crate::transition::{transition_coeffs, Evaluator};
use crate::transport::{coeffs, TransportSpec};

/// Exact transition function for a point-mass data distribution.
///
/// With a single data point every trajectory is known in closed form, which
/// makes `f* = (x_r - A x_t) / B` available exactly.
#[derive(Debug, Clone)]
pub struct DeltaDataOracle {
    pub x0: Vec<f64>,
    pub spec: TransportSpec,
}

impl DeltaDataOracle {
    pub fn new(x0: Vec<f64>, spec: TransportSpec) -> Self {
        DeltaDataOracle { x0, spec }
    }

    /// `f* = (x_r - A x_t) / B` with both states rebuilt from `(x0, eps)`.
    /// At `t = r` the analytic continuation `alpha_hat x0 + sigma_hat eps`
    /// is returned instead.
    pub fn exact_f(&self, eps: &[f64], t: f64, r: f64) -> Result<Vec<f64>> {
        let ct = coeffs(&self.spec, t)?;
        if (t - r).abs() < 1e-14 {
            return Ok(self
                .x0
                .iter()
                .zip(eps)
                .map(|(&x, &e)| ct.alpha_hat * x + ct.sigma_hat * e)
                .collect());
        }
        let cr = coeffs(&self.spec, r)?;
        let tc = transition_coeffs(&self.spec, t, r)?;
        Ok(self
            .x0
            .iter()
            .zip(eps)
            .map(|(&x, &e)| {
                let x_t = ct.alpha * x + ct.sigma * e;
                let x_r = cr.alpha * x + cr.sigma * e;
                (x_r - tc.a * x_t) / tc.b
            })
            .collect())
    }
}

impl Evaluator for DeltaDataOracle {
    fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Evaluates the oracle on arbitrary states by inferring the noise that
    /// would have produced them: `eps = (x_t - alpha_t x0) / sigma_t`.
    fn eval_batch(&self, xs: &[f64], t: f64, r: f64, _class: Option<u32>, out: &mut [f64]) {
        let dim = self.x0.len();
        let ct = coeffs(&self.spec, t).expect("probe time in range");
        let n = xs.len() / dim;
        for i in 0..n {
            let x_t = &xs[i * dim..(i + 1) * dim];
            let eps: Vec<f64> = x_t
                .iter()
                .zip(&self.x0)
                .map(|(&xt, &x0)| (xt - ct.alpha * x0) / ct.sigma)
                .collect();
            let f = self.exact_f(&eps, t, r).expect("probe time in range");
            out[i * dim..(i + 1) * dim].copy_from_slice(&f);
        }
    }
}

/// Exact transition function for Gaussian data with diagonal covariance.
///
/// The marginal at time `t` is per-axis Gaussian with mean `alpha_t mu` and
/// variance `alpha_t^2 c + sigma_t^2`; the probability-flow map between two
/// times is the affine quantile map, so the induced transition function is
/// exact.
#[derive(Debug, Clone)]
pub struct GaussianDataOracle {
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
    pub spec: TransportSpec,
}

impl GaussianDataOracle {
    pub fn new(mean: Vec<f64>, cov_diag: Vec<f64>, spec: TransportSpec) -> Result<Self> {
        if mean.len() != cov_diag.len() {
            return Err(TimError::Shape("mean / cov_diag length mismatch".into()));
        }
        if cov_diag.iter().any(|&c| c < 0.0) {
            return Err(TimError::Config("cov_diag entries must be non-negative".into()));
        }
        Ok(GaussianDataOracle { mean, cov_diag, spec })
    }

    /// Exact posterior-mean denoiser:
    /// `x_hat_i = (alpha c_i x_i + sigma^2 mu_i) / (alpha^2 c_i + sigma^2)`.
    pub fn exact_xpred(&self, x_t: &[f64], t: f64) -> Result<Vec<f64>> {
        let c = coeffs(&self.spec, t)?;
        Ok(x_t
            .iter()
            .zip(self.mean.iter().zip(&self.cov_diag))
            .map(|(&x, (&mu, &cv))| {
                (c.alpha * cv * x + c.sigma * c.sigma * mu) / (c.alpha * c.alpha * cv + c.sigma * c.sigma)
            })
            .collect())
    }

    /// Exact flow map `x_r = m_r + sqrt(v_r / v_t) (x_t - m_t)` per axis.
    pub fn flow_map(&self, x_t: &[f64], t: f64, r: f64) -> Result<Vec<f64>> {
        let ct = coeffs(&self.spec, t)?;
        let cr = coeffs(&self.spec, r)?;
        Ok(x_t
            .iter()
            .zip(self.mean.iter().zip(&self.cov_diag))
            .map(|(&x, (&mu, &cv))| {
                let m_t = ct.alpha * mu;
                let m_r = cr.alpha * mu;
                let v_t = ct.alpha * ct.alpha * cv + ct.sigma * ct.sigma;
                let v_r = cr.alpha * cr.alpha * cv + cr.sigma * cr.sigma;
                m_r + (v_r / v_t).sqrt() * (x - m_t)
            })
            .collect())
    }
}

impl Evaluator for GaussianDataOracle {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn eval_batch(&self, xs: &[f64], t: f64, r: f64, _class: Option<u32>, out: &mut [f64]) {
        let dim = self.mean.len();
        let n = xs.len() / dim;
        let ct = coeffs(&self.spec, t).expect("probe time in range");
        if (t - r).abs() < 1e-14 {
            // Instantaneous branch: the diffusion target of the exact
            // posterior pair (x_hat, eps_hat).
            for i in 0..n {
                let x_t = &xs[i * dim..(i + 1) * dim];
                let x_hat = self.exact_xpred(x_t, t).expect("probe time in range");
                for j in 0..dim {
                    let eps_hat = (x_t[j] - ct.alpha * x_hat[j]) / ct.sigma;
                    out[i * dim + j] = ct.alpha_hat * x_hat[j] + ct.sigma_hat * eps_hat;
                }
            }
            return;
        }
        let tc = transition_coeffs(&self.spec, t, r).expect("probe time in range");
        for i in 0..n {
            let x_t = &xs[i * dim..(i + 1) * dim];
            let x_r = self.flow_map(x_t, t, r).expect("probe time in range");
            for j in 0..dim {
                out[i * dim + j] = (x_r[j] - tc.a * x_t[j]) / tc.b;
            }
        }
    }
}

/// Energy distance `2 E||a - b|| - E||a - a'|| - E||b - b'||` by exhaustive
/// pairwise computation over flat `[n x dim]` sample sets.
///
/// Within-set expectations run over all `n^2` ordered pairs so identical
/// sample sets score exactly zero. Summation is compensated and runs in a
/// fixed order, so the result is deterministic.
pub fn energy_distance(a: &[f64], b: &[f64], dim: usize) -> f64 {
    assert!(dim > 0 && a.len() % dim == 0 && b.len() % dim == 0);
    let na = a.len() / dim;
    let nb = b.len() / dim;
    assert!(na > 0 && nb > 0, "energy distance needs non-empty sample sets");
    let cross = pair_mean(a, b, dim);
    let within_a = pair_mean(a, a, dim);
    let within_b = pair_mean(b, b, dim);
    2.0 * cross - within_a - within_b
}

fn pair_mean(a: &[f64], b: &[f64], dim: usize) -> f64 {
    let na = a.len() / dim;
    let nb = b.len() / dim;
    let mut sum = 0.0f64;
    let mut comp = 0.0f64; // Kahan carry
    for i in 0..na {
        let ai = &a[i * dim..(i + 1) * dim];
        for j in 0..nb {
            let bj = &b[j * dim..(j + 1) * dim];
            let mut d2 = 0.0;
            for k in 0..dim {
                let d = ai[k] - bj[k];
                d2 += d * d;
            }
            let y = d2.sqrt() - comp;
            let t = sum + y;
            comp = (t - sum) - y;
            sum = t;
        }
    }
    sum / (na as f64 * nb as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transition::{apply_transition, identity_residual};
    use crate::transport::TransportKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn delta_exact_f_hand_example() {
        let spec = TransportSpec::new(TransportKind::OtFlowMatching);
        let oracle = DeltaDataOracle::new(vec![0.0, 0.0], spec);
        let f = oracle.exact_f(&[1.0, 1.0], 0.8, 0.3).unwrap();
        assert_close(f[0], 1.0, 1e-12);
        assert_close(f[1], 1.0, 1e-12);
    }

    #[test]
    fn delta_exact_f_limit_branch() {
        let spec = TransportSpec::new(TransportKind::TrigFlow);
        let oracle = DeltaDataOracle::new(vec![0.4, -0.1], spec.clone());
        let t = 0.7;
        let f = oracle.exact_f(&[0.2, 0.9], t, t).unwrap();
        let c = coeffs(&spec, t).unwrap();
        assert_close(f[0], c.alpha_hat * 0.4 + c.sigma_hat * 0.2, 1e-15);
        assert_close(f[1], c.alpha_hat * -0.1 + c.sigma_hat * 0.9, 1e-15);
    }

    #[test]
    fn delta_oracle_transition_lands_on_x_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for kind in [TransportKind::OtFlowMatching, TransportKind::TrigFlow, TransportKind::VeSde] {
            let spec = TransportSpec::new(kind);
            let oracle = DeltaDataOracle::new(vec![0.5, -0.5], spec.clone());
            for _ in 0..50 {
                let t = rng.random_range(spec.t_min..spec.t_max);
                let r = rng.random_range(spec.t_min..t);
                let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
                let ct = coeffs(&spec, t).unwrap();
                let cr = coeffs(&spec, r).unwrap();
                let x_t: Vec<f64> = oracle
                    .x0
                    .iter()
                    .zip(&eps)
                    .map(|(&x, &e)| ct.alpha * x + ct.sigma * e)
                    .collect();
                let f = oracle.exact_f(&eps, t, r).unwrap();
                let tc = transition_coeffs(&spec, t, r).unwrap();
                let got = apply_transition(&x_t, &f, &tc);
                for j in 0..2 {
                    let want = cr.alpha * oracle.x0[j] + cr.sigma * eps[j];
                    assert_close(got[j], want, 1e-10);
                }
            }
        }
    }

    #[test]
    fn delta_oracle_satisfies_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let spec = TransportSpec::new(TransportKind::OtFlowMatching);
        let oracle = DeltaDataOracle::new(vec![0.3, 0.9], spec.clone());
        for _ in 0..100 {
            let t = rng.random_range(0.1..0.9);
            let r = rng.random_range(spec.t_min..t);
            let x = oracle.x0.clone();
            let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let res = identity_residual(&oracle, &x, &eps, t, r, &spec, 1e-3).unwrap();
            assert!(res < 1e-6, "residual {res} at t={t} r={r}");
        }
    }

    #[test]
    fn delta_oracle_semigroup() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let spec = TransportSpec::new(TransportKind::TrigFlow);
        let oracle = DeltaDataOracle::new(vec![-0.2, 0.6], spec.clone());
        for _ in 0..50 {
            let t = rng.random_range(0.5..spec.t_max);
            let r = rng.random_range(spec.t_min..0.3);
            let s = rng.random_range(r..t);
            let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let ct = coeffs(&spec, t).unwrap();
            let x_t: Vec<f64> =
                oracle.x0.iter().zip(&eps).map(|(&x, &e)| ct.alpha * x + ct.sigma * e).collect();

            let direct = {
                let tc = transition_coeffs(&spec, t, r).unwrap();
                apply_transition(&x_t, &oracle.eval(&x_t, t, r), &tc)
            };
            let via_s = {
                let tc1 = transition_coeffs(&spec, t, s).unwrap();
                let x_s = apply_transition(&x_t, &oracle.eval(&x_t, t, s), &tc1);
                let tc2 = transition_coeffs(&spec, s, r).unwrap();
                apply_transition(&x_s, &oracle.eval(&x_s, s, r), &tc2)
            };
            for j in 0..2 {
                assert_close(direct[j], via_s[j], 1e-8);
            }
        }
    }

    #[test]
    fn gaussian_xpred_examples() {
        let spec = TransportSpec::new(TransportKind::OtFlowMatching);
        // Point mass: posterior collapses to the mean.
        let point = GaussianDataOracle::new(vec![0.7], vec![0.0], spec.clone()).unwrap();
        let xh = point.exact_xpred(&[123.0], 0.5).unwrap();
        assert_close(xh[0], 0.7, 1e-12);
        // Unit-variance example.
        let unit = GaussianDataOracle::new(vec![0.0], vec![1.0], spec.clone()).unwrap();
        let xh = unit.exact_xpred(&[1.0], 0.5).unwrap();
        assert_close(xh[0], 1.0, 1e-12);
        // Near-zero noise: identity up to the alpha scale.
        let t = spec.t_min;
        let c = coeffs(&spec, t).unwrap();
        let xh = unit.exact_xpred(&[0.8], t).unwrap();
        assert_close(xh[0], 0.8 / c.alpha, 1e-4);
    }

    #[test]
    fn gaussian_oracle_flow_semigroup() {
        // The transition applied through the oracle equals the exact flow
        // map, so composing through any intermediate time is exact.
        let spec = TransportSpec::new(TransportKind::OtFlowMatching);
        let oracle =
            GaussianDataOracle::new(vec![0.5, -0.25], vec![1.0, 0.5], spec.clone()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..50 {
            let t = rng.random_range(0.5..0.9);
            let r = rng.random_range(spec.t_min..0.3);
            let s = rng.random_range(r..t);
            let x_t: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            let direct = {
                let tc = transition_coeffs(&spec, t, r).unwrap();
                apply_transition(&x_t, &oracle.eval(&x_t, t, r), &tc)
            };
            let via_s = {
                let tc1 = transition_coeffs(&spec, t, s).unwrap();
                let x_s = apply_transition(&x_t, &oracle.eval(&x_t, t, s), &tc1);
                let tc2 = transition_coeffs(&spec, s, r).unwrap();
                apply_transition(&x_s, &oracle.eval(&x_s, s, r), &tc2)
            };
            let flow = oracle.flow_map(&x_t, t, r).unwrap();
            for j in 0..2 {
                assert_close(direct[j], via_s[j], 1e-9);
                assert_close(direct[j], flow[j], 1e-9);
            }
        }
    }

    #[test]
    fn energy_distance_identical_sets_zero() {
        let a = vec![0.1, 0.2, -0.4, 1.0, 2.0, -3.0];
        assert_eq!(energy_distance(&a, &a, 3), 0.0);
    }

    #[test]
    fn energy_distance_single_pair() {
        let a = vec![0.0, 0.0];
        let b = vec![3.0, 4.0];
        assert_close(energy_distance(&a, &b, 2), 10.0, 1e-15);
    }

    #[test]
    fn energy_distance_same_distribution_small() {
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n * 2).map(|_| StandardNormal.sample(&mut rng)).collect::<Vec<f64>>()
        };
        let a = draw(1000);
        let b = draw(1000);
        let ed = energy_distance(&a, &b, 2);
        assert!(ed.abs() < 0.05, "energy distance {ed}");
        // Shifted distribution is clearly separated.
        let shifted: Vec<f64> = b.iter().map(|&v| v + 2.0).collect();
        assert!(energy_distance(&a, &shifted, 2) > 0.5);
    }
}
