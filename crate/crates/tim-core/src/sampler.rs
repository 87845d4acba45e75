//! Any-step piecewise sampling: walk a descending time schedule, applying the
//! learned (or oracle) transition at each pair, with optional stochastic
//! churn and classifier-free guidance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TimError};
use crate::transition::{transition_coeffs, Evaluator};
use crate::transport::{coeffs, shift_timestep, TransportSpec};

/// Chunk granularity for parallel sampling; fixed so results do not depend
/// on the worker count.
const CHUNK: usize = 256;

/// How schedule times are spaced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScheduleKind {
    Uniform,
    Shifted,
}

/// A sampling run description: descending times plus stochasticity and
/// guidance knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSchedule {
    /// Strictly decreasing, `times[0] = t_max`, `times[last] = t_min`.
    pub times: Vec<f64>,
    /// Stochastic churn ratio; 0 disables the SDE-style correction.
    pub rho: f64,
    /// Classifier-free guidance scale; values above 1 double the NFE.
    pub cfg_omega: f64,
    pub seed: u64,
    /// When churning, estimate the noise from `f(x, t, t)` instead of the
    /// long-jump `f(x, t, t_min)` evaluation.
    pub churn_from_self: bool,
}

impl SampleSchedule {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() < 2 {
            return Err(TimError::Config("schedule needs at least two times".into()));
        }
        if !self.times.windows(2).all(|w| w[0] > w[1]) {
            return Err(TimError::Config("schedule times must be strictly decreasing".into()));
        }
        if self.rho < 0.0 {
            return Err(TimError::Config("rho must be non-negative".into()));
        }
        if self.cfg_omega < 1.0 {
            return Err(TimError::Config("cfg_omega must be >= 1".into()));
        }
        Ok(())
    }
}

/// Builds an `steps`-step schedule spanning `[t_min, t_max]`.
///
/// `Uniform` spaces times evenly; `Shifted` pushes interior times through the
/// resolution shift map with the given pixel-count ratio.
pub fn build_schedule(
    spec: &TransportSpec,
    steps: usize,
    kind: ScheduleKind,
    shift_ratio: Option<f64>,
) -> Result<SampleSchedule> {
    if steps == 0 {
        return Err(TimError::Config("steps must be at least 1".into()));
    }
    let (lo, hi) = (spec.t_min, spec.t_max);
    // Endpoints are pinned exactly; interior points are evenly spaced.
    let mut times: Vec<f64> = (0..=steps)
        .map(|i| {
            if i == 0 {
                hi
            } else if i == steps {
                lo
            } else {
                hi - (hi - lo) * (i as f64) / (steps as f64)
            }
        })
        .collect();
    if kind == ScheduleKind::Shifted {
        let ratio = shift_ratio
            .ok_or_else(|| TimError::Config("shifted schedule needs a shift ratio".into()))?;
        if ratio <= 0.0 {
            return Err(TimError::Config("shift ratio must be positive".into()));
        }
        for t in &mut times[1..steps] {
            *t = (shift_timestep(*t / hi, 1.0, ratio) * hi).clamp(lo, hi);
        }
    }
    let sched = SampleSchedule {
        times,
        rho: 0.0,
        cfg_omega: 1.0,
        seed: 0,
        churn_from_self: false,
    };
    sched.validate()?;
    Ok(sched)
}

/// Number of function evaluations one sample costs under the schedule:
/// one per step, doubled by guidance, plus one per step for the churn's
/// noise estimate.
pub fn nfe_count(sched: &SampleSchedule) -> usize {
    let per_step = if sched.cfg_omega > 1.0 { 2 } else { 1 };
    let churn = if sched.rho > 0.0 { 1 } else { 0 };
    sched.steps() * (per_step + churn)
}

/// Draws `n` samples by running the schedule from Gaussian noise.
///
/// Deterministic given the rng state; with `rho = 0` the rng is only used
/// for the initial noise.
pub fn sample<R: Rng + ?Sized>(
    ev: &dyn Evaluator,
    spec: &TransportSpec,
    sched: &SampleSchedule,
    n: usize,
    class: Option<u32>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    sched.validate()?;
    let dim = ev.dim();
    let mut x: Vec<f64> = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
    let mut f = vec![0.0f64; n * dim];
    let mut f_cond = vec![0.0f64; n * dim];
    let t_floor = *sched.times.last().expect("validated schedule");
    for (step, w) in sched.times.windows(2).enumerate() {
        let (t_cur, t_next) = (w[0], w[1]);
        let tc = transition_coeffs(spec, t_cur, t_next)?;
        // Guided or plain evaluation of the transition function.
        if sched.cfg_omega > 1.0 && class.is_some() {
            ev.eval_batch(&x, t_cur, t_next, None, &mut f);
            ev.eval_batch(&x, t_cur, t_next, class, &mut f_cond);
            let omega = sched.cfg_omega;
            for i in 0..f.len() {
                f[i] += omega * (f_cond[i] - f[i]);
            }
        } else {
            ev.eval_batch(&x, t_cur, t_next, class, &mut f);
        }
        let mut next: Vec<f64> = x
            .iter()
            .zip(&f)
            .map(|(&xv, &fv)| tc.a * xv + tc.b * fv)
            .collect();
        if sched.rho > 0.0 {
            let ct = coeffs(spec, t_cur)?;
            let q = ct.alpha * ct.d_sigma - ct.d_alpha * ct.sigma;
            let dt = t_cur - t_next;
            let det = sched.rho * q * dt;
            let diff = (2.0 * sched.rho * q).max(0.0).sqrt() * dt.sqrt();
            let r_src = if sched.churn_from_self { t_cur } else { t_floor };
            ev.eval_batch(&x, t_cur, r_src, class, &mut f_cond);
            let c = ct.denom();
            for i in 0..n * dim {
                let eps_hat = (ct.alpha * f_cond[i] - ct.alpha_hat * x[i]) / c;
                let xi: f64 = StandardNormal.sample(rng);
                next[i] -= det * eps_hat + diff * xi;
            }
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(TimError::NumericAbort {
                iteration: step as u64,
                diagnostic: format!("non-finite state transitioning {t_cur} -> {t_next}"),
            });
        }
        x = next;
    }
    Ok(x)
}

/// Chunked sampling with per-chunk rng substreams: results are bitwise
/// identical for any worker count, and chunks run in parallel.
pub fn sample_chunked(
    ev: &dyn Evaluator,
    spec: &TransportSpec,
    sched: &SampleSchedule,
    n: usize,
    class: Option<u32>,
    workers: usize,
) -> Result<Vec<f64>> {
    let dim = ev.dim();
    let n_chunks = n.div_ceil(CHUNK);
    let chunk_of = |idx: usize| -> Result<Vec<f64>> {
        let count = CHUNK.min(n - idx * CHUNK);
        let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
        rng.set_stream(idx as u64 + 1);
        sample(ev, spec, sched, count, class, &mut rng)
    };
    if workers <= 1 || n_chunks <= 1 {
        let mut out = Vec::with_capacity(n * dim);
        for i in 0..n_chunks {
            out.extend(chunk_of(i)?);
        }
        return Ok(out);
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let results: Vec<std::sync::Mutex<Option<Result<Vec<f64>>>>> =
        (0..n_chunks).map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..workers.min(n_chunks) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if i >= n_chunks {
                    break;
                }
                *results[i].lock().unwrap() = Some(chunk_of(i));
            });
        }
    });
    let mut out = Vec::with_capacity(n * dim);
    for cell in results {
        out.extend(cell.into_inner().unwrap().expect("worker filled every chunk")?);
    }
    Ok(out)
}
