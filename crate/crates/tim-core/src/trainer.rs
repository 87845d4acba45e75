//! The training loop: timestep-pair mixing, derivative-estimated targets,
//! interval weighting with adaptive per-sample normalization, optimizer and
//! EMA updates, and periodic sample-quality probes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::data::ToyDataset;
use crate::error::{Result, TimError};
use crate::network::{ema_update, NetEvaluator, Network, NO_CLASS};
use crate::oracle::energy_distance;
use crate::sampler::{build_schedule, sample, ScheduleKind};
use crate::transition::{
    interval_weight, tim_target_from_parts, transition_coeffs_from_bundles, WeightScheme,
};
use crate::transport::{coeffs, sample_time, TransportSpec};

/// Guard inside the cosine-similarity denominator.
const COS_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    AdaptiveMoment,
}

/// Every knob of the training algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub betas: (f64, f64),
    pub eps_opt: f64,
    pub ema_decay: f64,
    /// Central-difference step of the derivative estimator.
    pub dde_eps: f64,
    pub weight_scheme: WeightScheme,
    /// Fraction of pairs collapsed to `r = t` (pure diffusion supervision).
    pub frac_t_eq_r: f64,
    /// Fraction of pairs pinned to `r = t_min` (full-jump supervision).
    pub frac_r_eq_0: f64,
    /// The `c` in `w * L / (|L| + c)`.
    pub loss_norm_c: f64,
    pub cosine_loss_scale: f64,
    pub guidance_omega: f64,
    pub guidance_enabled: bool,
    pub guidance_warmup_iters: u64,
    pub cond_dropout: f64,
    pub seed: u64,
    /// Iterations between quality probes; 0 disables probing.
    pub probe_interval: u64,
    pub probe_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            iterations: 20_000,
            lr: 2e-4,
            optimizer: OptimizerKind::AdaptiveMoment,
            betas: (0.9, 0.999),
            eps_opt: 1e-8,
            ema_decay: 0.999,
            dde_eps: 0.005,
            weight_scheme: WeightScheme::default(),
            frac_t_eq_r: 0.5,
            frac_r_eq_0: 0.1,
            loss_norm_c: 1e-3,
            cosine_loss_scale: 0.0,
            guidance_omega: 1.75,
            guidance_enabled: false,
            guidance_warmup_iters: 2_000,
            cond_dropout: 0.1,
            seed: 0,
            probe_interval: 0,
            probe_samples: 512,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(TimError::Config("batch_size must be positive".into()));
        }
        if self.lr <= 0.0 || self.dde_eps <= 0.0 || self.loss_norm_c <= 0.0 {
            return Err(TimError::Config("lr, dde_eps, loss_norm_c must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(TimError::Config("ema_decay must lie in [0, 1)".into()));
        }
        for (v, name) in [
            (self.frac_t_eq_r, "frac_t_eq_r"),
            (self.frac_r_eq_0, "frac_r_eq_0"),
            (self.cond_dropout, "cond_dropout"),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TimError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.frac_t_eq_r + self.frac_r_eq_0 > 1.0 {
            return Err(TimError::Config("frac_t_eq_r + frac_r_eq_0 must not exceed 1".into()));
        }
        if self.guidance_omega < 1.0 {
            return Err(TimError::Config("guidance_omega must be >= 1".into()));
        }
        if self.cosine_loss_scale < 0.0 {
            return Err(TimError::Config("cosine_loss_scale must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mutable training state; everything needed for bitwise resume.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: Vec<f32>,
    pub ema: Vec<f32>,
    pub opt_m: Vec<f32>,
    pub opt_v: Vec<f32>,
    pub step: u64,
    pub rng: ChaCha8Rng,
}

/// Where the per-sample time derivative of the frozen network comes from.
pub enum DerivativeSource {
    /// Two forward evaluations per sample (the production path).
    Dde,
    /// Injected values, flat `[batch x dim]`; used by the stop-gradient
    /// check and the overhead benchmark.
    Inject(Vec<f64>),
}

#[derive(Debug, Clone)]
pub struct StepStats {
    pub loss: f64,
    pub grad_norm: f64,
    /// Batch-level forward passes this step (DDE, main, guidance).
    pub batch_forwards: u64,
}

/// Detailed per-step intermediates, exposed for tests and diagnostics.
#[derive(Debug, Clone)]
pub struct StepDebug {
    pub x: Vec<f64>,
    pub eps: Vec<f64>,
    pub t: Vec<f64>,
    pub r: Vec<f64>,
    pub df_dt: Vec<f64>,
    pub targets: Vec<f64>,
    pub grads: Vec<f32>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss: f64,
    pub grad_norm: f64,
    /// `(steps, energy distance)` pairs from the EMA-parameter probe.
    pub probes: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub loss_history: Vec<f64>,
    pub grad_norm_history: Vec<f64>,
    pub metrics: Vec<MetricsRow>,
    pub wall_seconds: f64,
}

/// Draws a `(t, r)` pair: two independent timestep draws ordered as
/// `t >= r`, then the mixing overrides (`r = t` with probability
/// `frac_t_eq_r`, else `r = t_min` with probability `frac_r_eq_0`).
pub fn sample_tr_pair<R: Rng + ?Sized>(
    spec: &TransportSpec,
    cfg: &TrainConfig,
    rng: &mut R,
) -> (f64, f64) {
    let a = sample_time(spec, rng);
    let b = sample_time(spec, rng);
    let t = a.max(b);
    let mut r = a.min(b);
    let u: f64 = rng.random();
    if u < cfg.frac_t_eq_r {
        r = t;
    } else if u < cfg.frac_t_eq_r + cfg.frac_r_eq_0 {
        r = spec.t_min;
    }
    (t, r)
}

pub struct Trainer {
    pub net: Network,
    pub spec: TransportSpec,
    pub cfg: TrainConfig,
    pub dataset: ToyDataset,
    pub state: TrainState,
}

impl Trainer {
    pub fn new(
        net: Network,
        spec: TransportSpec,
        cfg: TrainConfig,
        dataset: ToyDataset,
    ) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        if dataset.dim() != net.config().input_dim {
            return Err(TimError::Config(format!(
                "dataset dimension {} does not match network input {}",
                dataset.dim(),
                net.config().input_dim
            )));
        }
        let params = net.init_params::<f32>(net.config().seed);
        let n = params.len();
        let state = TrainState {
            ema: params.clone(),
            params,
            opt_m: vec![0.0; n],
            opt_v: vec![0.0; n],
            step: 0,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        };
        Ok(Trainer { net, spec, cfg, dataset, state })
    }

    /// Resumes from previously captured state (checkpoint restore).
    pub fn from_state(
        net: Network,
        spec: TransportSpec,
        cfg: TrainConfig,
        dataset: ToyDataset,
        state: TrainState,
    ) -> Result<Self> {
        cfg.validate()?;
        if state.params.len() != net.param_count() || state.ema.len() != net.param_count() {
            return Err(TimError::Layout("state does not match network layout".into()));
        }
        Ok(Trainer { net, spec, cfg, dataset, state })
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    /// One optimization step. See [`Trainer::train_step_full`] for the
    /// instrumented variant.
    pub fn train_step(&mut self, src: DerivativeSource) -> Result<StepStats> {
        self.train_step_full(src).map(|(s, _)| s)
    }

    /// One optimization step, also returning the per-sample intermediates.
    pub fn train_step_full(&mut self, src: DerivativeSource) -> Result<(StepStats, StepDebug)> {
        let batch = self.cfg.batch_size;
        let dim = self.net.config().input_dim;
        let n_classes = self.net.config().n_classes;
        let eps_fd = self.cfg.dde_eps;
        let (t_lo, t_hi) = (self.spec.t_min + eps_fd, self.spec.t_max - eps_fd);
        if t_lo >= t_hi {
            return Err(TimError::Config("dde_eps too large for the transport range".into()));
        }

        // Draws, in a fixed order per sample: data batch, then per-sample
        // noise, time pair, and conditioning dropout.
        let (x, class_raw) = self.dataset.draw_batch(batch, &mut self.state.rng);
        let mut eps = vec![0.0f64; batch * dim];
        let mut t = vec![0.0f64; batch];
        let mut r = vec![0.0f64; batch];
        let mut class_train: Vec<i64> = Vec::new();
        let mut class_orig: Vec<i64> = Vec::new();
        for i in 0..batch {
            for j in 0..dim {
                eps[i * dim + j] = StandardNormal.sample(&mut self.state.rng);
            }
            let (ti, ri) = sample_tr_pair(&self.spec, &self.cfg, &mut self.state.rng);
            // The derivative probes need t strictly inside the range.
            let tc = ti.clamp(t_lo, t_hi);
            t[i] = tc;
            r[i] = if ri == ti { tc } else { ri.min(tc) };
            if n_classes > 0 {
                let u: f64 = self.state.rng.random();
                class_orig.push(class_raw[i]);
                class_train.push(if u < self.cfg.cond_dropout { NO_CLASS } else { class_raw[i] });
            }
        }

        // Coefficient bundles (64-bit calculus throughout).
        let bundles_t: Vec<_> = t.iter().map(|&ti| coeffs(&self.spec, ti)).collect::<Result<_>>()?;
        let bundles_r: Vec<_> = r.iter().map(|&ri| coeffs(&self.spec, ri)).collect::<Result<_>>()?;

        let mut x_t = vec![0.0f32; batch * dim];
        for i in 0..batch {
            let c = &bundles_t[i];
            for j in 0..dim {
                x_t[i * dim + j] = (c.alpha * x[i * dim + j] + c.sigma * eps[i * dim + j]) as f32;
            }
        }

        let mut batch_forwards = 0u64;
        // Network time derivative along the noising trajectory, with frozen
        // parameters (forward passes only; nothing here is differentiated).
        let df_dt: Vec<f64> = match src {
            DerivativeSource::Inject(v) => {
                if v.len() != batch * dim {
                    return Err(TimError::Shape("injected df_dt length mismatch".into()));
                }
                v
            }
            DerivativeSource::Dde => {
                let mut x_p = vec![0.0f32; batch * dim];
                let mut x_m = vec![0.0f32; batch * dim];
                let mut t_p = vec![0.0f64; batch];
                let mut t_m = vec![0.0f64; batch];
                for i in 0..batch {
                    t_p[i] = t[i] + eps_fd;
                    t_m[i] = t[i] - eps_fd;
                    let cp = coeffs(&self.spec, t_p[i])?;
                    let cm = coeffs(&self.spec, t_m[i])?;
                    for j in 0..dim {
                        let (xv, ev) = (x[i * dim + j], eps[i * dim + j]);
                        x_p[i * dim + j] = (cp.alpha * xv + cp.sigma * ev) as f32;
                        x_m[i * dim + j] = (cm.alpha * xv + cm.sigma * ev) as f32;
                    }
                }
                let f_p =
                    self.net.forward(&self.state.params, &self.spec, &x_p, &t_p, &r, &class_train)?;
                let f_m =
                    self.net.forward(&self.state.params, &self.spec, &x_m, &t_m, &r, &class_train)?;
                batch_forwards += 2;
                f_p.iter()
                    .zip(&f_m)
                    .map(|(&p, &m)| (p as f64 - m as f64) / (2.0 * eps_fd))
                    .collect()
            }
        };

        // Per-sample learning targets.
        let mut targets = vec![0.0f64; batch * dim];
        for i in 0..batch {
            let tc = transition_coeffs_from_bundles(&bundles_t[i], &bundles_r[i])?;
            let target = tim_target_from_parts(
                &x[i * dim..(i + 1) * dim],
                &eps[i * dim..(i + 1) * dim],
                &df_dt[i * dim..(i + 1) * dim],
                &bundles_t[i],
                &tc,
            )?;
            targets[i * dim..(i + 1) * dim].copy_from_slice(&target);
        }

        // Optional model-guidance correction, evaluated with EMA parameters
        // at the degenerate pair (t, t).
        if self.cfg.guidance_enabled
            && self.cfg.guidance_omega != 1.0
            && self.state.step >= self.cfg.guidance_warmup_iters
            && n_classes > 0
        {
            let f_cond =
                self.net.forward(&self.state.ema, &self.spec, &x_t, &t, &t, &class_orig)?;
            let uncond = vec![NO_CLASS; batch];
            let f_uncond =
                self.net.forward(&self.state.ema, &self.spec, &x_t, &t, &t, &uncond)?;
            batch_forwards += 2;
            let scale = self.cfg.guidance_omega - 1.0;
            for i in 0..batch {
                if class_orig[i] != NO_CLASS {
                    for j in 0..dim {
                        let k = i * dim + j;
                        targets[k] += scale * (f_cond[k] as f64 - f_uncond[k] as f64);
                    }
                }
            }
        }

        // Differentiated forward and the weighted, normalized loss.
        let (f_out, cache) =
            self.net
                .forward_cached(&self.state.params, &self.spec, &x_t, &t, &r, &class_train)?;
        batch_forwards += 1;

        let mut dout = vec![0.0f32; batch * dim];
        let mut total_loss = 0.0f64;
        for i in 0..batch {
            let f_i: Vec<f64> = (0..dim).map(|j| f_out[i * dim + j] as f64).collect();
            let g_i = &targets[i * dim..(i + 1) * dim];
            let mut sq = 0.0f64;
            let mut dot = 0.0f64;
            let mut nf2 = 0.0f64;
            let mut ng2 = 0.0f64;
            for j in 0..dim {
                let d = f_i[j] - g_i[j];
                sq += d * d;
                dot += f_i[j] * g_i[j];
                nf2 += f_i[j] * f_i[j];
                ng2 += g_i[j] * g_i[j];
            }
            let w = interval_weight(t[i], r[i], &self.cfg.weight_scheme)?;
            let scale = w / (sq + self.cfg.loss_norm_c);
            let mut loss_i = scale * sq;
            if self.cfg.cosine_loss_scale > 0.0 {
                let nf = nf2.sqrt();
                let ng = ng2.sqrt();
                let denom = nf * ng + COS_EPS;
                loss_i += scale * self.cfg.cosine_loss_scale * (1.0 - dot / denom);
                for j in 0..dim {
                    // d/df of (1 - <f,g>/(|f||g| + eps)).
                    let dcos = -g_i[j] / denom
                        + if nf > 0.0 { dot * ng * f_i[j] / (nf * denom * denom) } else { 0.0 };
                    let d = 2.0 * (f_i[j] - g_i[j]) + self.cfg.cosine_loss_scale * dcos;
                    dout[i * dim + j] = (scale * d / batch as f64) as f32;
                }
            } else {
                for j in 0..dim {
                    dout[i * dim + j] =
                        (scale * 2.0 * (f_i[j] - g_i[j]) / batch as f64) as f32;
                }
            }
            total_loss += loss_i;
        }
        total_loss /= batch as f64;
        if !total_loss.is_finite() {
            return Err(TimError::NumericAbort {
                iteration: self.state.step,
                diagnostic: format!(
                    "loss = {total_loss}; interval histogram {}",
                    interval_histogram(&t, &r, &self.spec)
                ),
            });
        }

        let grads = self.net.backward(&self.state.params, &cache, &dout)?;
        let grad_norm =
            grads.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>().sqrt();

        self.apply_update(&grads)?;
        ema_update(&mut self.state.ema, &self.state.params, self.cfg.ema_decay)?;
        self.state.step += 1;

        let stats = StepStats { loss: total_loss, grad_norm, batch_forwards };
        let debug = StepDebug { x, eps, t, r, df_dt, targets, grads };
        Ok((stats, debug))
    }

    fn apply_update(&mut self, grads: &[f32]) -> Result<()> {
        let lr = self.cfg.lr as f32;
        match self.cfg.optimizer {
            OptimizerKind::Sgd => {
                for (p, &g) in self.state.params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            OptimizerKind::AdaptiveMoment => {
                let (b1, b2) = (self.cfg.betas.0 as f32, self.cfg.betas.1 as f32);
                let eps = self.cfg.eps_opt as f32;
                let k = (self.state.step + 1) as i32;
                let bc1 = 1.0 - b1.powi(k);
                let bc2 = 1.0 - b2.powi(k);
                for i in 0..grads.len() {
                    let g = grads[i];
                    let m = b1 * self.state.opt_m[i] + (1.0 - b1) * g;
                    let v = b2 * self.state.opt_v[i] + (1.0 - b2) * g * g;
                    self.state.opt_m[i] = m;
                    self.state.opt_v[i] = v;
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    self.state.params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        Ok(())
    }

    /// Energy distance between EMA-parameter samples and fresh data draws,
    /// at the given step counts. Runs in normalized data space.
    pub fn probe(&self, step_counts: &[usize]) -> Result<Vec<(usize, f64)>> {
        let n = self.cfg.probe_samples.max(16);
        let dim = self.dataset.dim();
        let mut ref_rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
        let (reference, _) = self.dataset.draw_batch(n, &mut ref_rng);
        let ev = NetEvaluator { net: &self.net, params: &self.state.ema, spec: &self.spec };
        let mut out = Vec::with_capacity(step_counts.len());
        for &steps in step_counts {
            let sched = build_schedule(&self.spec, steps, ScheduleKind::Uniform, None)?;
            let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed ^ 0xD1B5_4A32_D192_ED03);
            let samples = sample(&ev, &self.spec, &sched, n, None, &mut rng)?;
            out.push((steps, energy_distance(&samples, &reference, dim)));
        }
        Ok(out)
    }

    /// Runs the configured number of iterations, invoking `on_metrics` at
    /// every probe row. Deterministic given the seeds.
    pub fn run_with(&mut self, mut on_metrics: impl FnMut(&MetricsRow)) -> Result<TrainReport> {
        let start = Instant::now();
        let mut loss_history = Vec::with_capacity(self.cfg.iterations as usize);
        let mut grad_norm_history = Vec::with_capacity(self.cfg.iterations as usize);
        let mut metrics = Vec::new();
        for _ in 0..self.cfg.iterations {
            let stats = self.train_step(DerivativeSource::Dde)?;
            loss_history.push(stats.loss);
            grad_norm_history.push(stats.grad_norm);
            let probe_due = self.cfg.probe_interval > 0
                && (self.state.step % self.cfg.probe_interval == 0
                    || self.state.step == self.cfg.iterations);
            if probe_due {
                let row = MetricsRow {
                    iteration: self.state.step,
                    loss: stats.loss,
                    grad_norm: stats.grad_norm,
                    probes: self.probe(&[1, 4, 16])?,
                };
                on_metrics(&row);
                metrics.push(row);
            }
        }
        Ok(TrainReport {
            loss_history,
            grad_norm_history,
            metrics,
            wall_seconds: start.elapsed().as_secs_f64(),
        })
    }

    pub fn run(&mut self) -> Result<TrainReport> {
        self.run_with(|_| {})
    }
}

fn interval_histogram(t: &[f64], r: &[f64], spec: &TransportSpec) -> String {
    let range = spec.t_max - spec.t_min;
    let mut bins = [0usize; 5];
    for (ti, ri) in t.iter().zip(r) {
        let frac = ((ti - ri) / range).clamp(0.0, 1.0);
        bins[(frac * 4.999) as usize] += 1;
    }
    format!(
        "dt quintiles [{}, {}, {}, {}, {}]",
        bins[0], bins[1], bins[2], bins[3], bins[4]
    )
}
