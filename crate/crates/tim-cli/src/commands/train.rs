//! `tim train`: drive the training loop, append metrics, write checkpoints.

use std::path::Path;
use std::process::ExitCode;

use tim_core::checkpoint::Checkpoint;
use tim_core::trainer::{DerivativeSource, MetricsRow, Trainer};
use tim_core::Result;

use crate::config::RunConfig;
use crate::output::MetricsLog;

pub fn run(
    config_path: &Path,
    out: &Path,
    resume: Option<&Path>,
    iterations_override: Option<u64>,
    seed_override: Option<u64>,
) -> Result<ExitCode> {
    let mut cfg = RunConfig::load(config_path)?;
    if let Some(seed) = seed_override {
        cfg.run.seed = seed;
    }
    if let Some(iters) = iterations_override {
        cfg.trainer.iterations = iters;
    }
    let dir = super::resolve_run_dir(out);
    std::fs::create_dir_all(&dir)?;

    let dataset = cfg.dataset()?;
    let mut trainer = match resume {
        Some(ckpt_path) => {
            // The checkpoint owns the architecture, transport, and trainer
            // configuration; the file config may only extend the horizon.
            let ckpt = Checkpoint::load(ckpt_path)?;
            let mut tr = ckpt.into_trainer(dataset)?;
            if let Some(iters) = iterations_override {
                tr.cfg.iterations = iters;
            }
            println!("resumed from {} at step {}", ckpt_path.display(), tr.state.step);
            tr
        }
        None => {
            let spec = cfg.transport_spec()?;
            let net = cfg.network(&dataset)?;
            let train_cfg = cfg.train_config()?;
            Trainer::new(net, spec, train_cfg, dataset)?
        }
    };

    // Record the fully resolved configuration beside the run outputs.
    std::fs::write(dir.join("config.resolved.toml"), cfg.to_toml()?)?;
    let mut log = MetricsLog::create(&dir.join("metrics.jsonl"))?;

    let total = trainer.cfg.iterations;
    let ckpt_every = cfg.run.checkpoint_interval;
    let probe_every = trainer.cfg.probe_interval;
    let started = std::time::Instant::now();
    while trainer.state.step < total {
        let stats = trainer.train_step(DerivativeSource::Dde)?;
        let step = trainer.state.step;
        if probe_every > 0 && (step % probe_every == 0 || step == total) {
            let row = MetricsRow {
                iteration: step,
                loss: stats.loss,
                grad_norm: stats.grad_norm,
                probes: trainer.probe(&[1, 4, 16])?,
            };
            log.append(&row)?;
            let probes: Vec<String> =
                row.probes.iter().map(|(s, ed)| format!("{s}-step {ed:.4}")).collect();
            println!(
                "iter {step}/{total}  loss {:.5}  grad {:.3}  ed [{}]",
                row.loss,
                row.grad_norm,
                probes.join(", ")
            );
        }
        if ckpt_every > 0 && step % ckpt_every == 0 && step < total {
            let path = dir.join(format!("ckpt_{step:08}.tim"));
            Checkpoint::capture(&trainer).save(&path)?;
        }
    }
    let final_path = dir.join("final.tim");
    Checkpoint::capture(&trainer).save(&final_path)?;
    println!(
        "trained to step {} in {:.1} s; wrote {}",
        trainer.state.step,
        started.elapsed().as_secs_f64(),
        final_path.display()
    );
    Ok(ExitCode::SUCCESS)
}
