//! `tim bench`: wall-clock per training step with the derivative estimator
//! enabled versus disabled (zero injected), plus an operation-count check
//! that the estimator costs exactly two extra forward passes.

use std::path::Path;
use std::process::ExitCode;

use tim_core::trainer::{DerivativeSource, Trainer};
use tim_core::Result;

use crate::config::RunConfig;

pub fn run(config_path: &Path, iters: u64) -> Result<ExitCode> {
    let cfg = RunConfig::load(config_path)?;
    if iters == 0 {
        println!("0 timed iterations requested; nothing to report");
        return Ok(ExitCode::SUCCESS);
    }
    let reps = 3;
    let mut ratios = Vec::with_capacity(reps);
    let mut dde_ms = Vec::with_capacity(reps);
    let mut inject_ms = Vec::with_capacity(reps);
    let mut forwards = (0u64, 0u64);
    let dim = cfg.dataset()?.dim();
    let batch = cfg.trainer.batch_size;
    for rep in 0..reps {
        let time_run = |src_is_dde: bool| -> Result<(f64, u64)> {
            let dataset = cfg.dataset()?;
            let spec = cfg.transport_spec()?;
            let net = cfg.network(&dataset)?;
            let mut train_cfg = cfg.train_config()?;
            train_cfg.seed ^= rep as u64; // fresh stream per repetition
            let mut tr = Trainer::new(net, spec, train_cfg, dataset)?;
            let start = std::time::Instant::now();
            let mut fwd = 0u64;
            for _ in 0..iters {
                let src = if src_is_dde {
                    DerivativeSource::Dde
                } else {
                    DerivativeSource::Inject(vec![0.0; batch * dim])
                };
                fwd += tr.train_step(src)?.batch_forwards;
            }
            Ok((start.elapsed().as_secs_f64() * 1e3 / iters as f64, fwd))
        };
        let (with_dde, fwd_dde) = time_run(true)?;
        let (without, fwd_inj) = time_run(false)?;
        dde_ms.push(with_dde);
        inject_ms.push(without);
        ratios.push(with_dde / without);
        forwards = (fwd_dde, fwd_inj);
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    dde_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    inject_ms.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let extra_per_step = (forwards.0 - forwards.1) / iters;
    println!(
        "derivative estimation on:  {:.3} ms/step (median of {reps})",
        dde_ms[reps / 2]
    );
    println!(
        "derivative estimation off: {:.3} ms/step (median of {reps})",
        inject_ms[reps / 2]
    );
    println!("overhead ratio: {:.3}", ratios[reps / 2]);
    println!(
        "extra batch forwards per step: {extra_per_step} (2 expected: one per probe side, each covering every sample)"
    );
    if extra_per_step != 2 {
        println!("operation count deviates from the two-forward contract");
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
