//! `tim sample`: draw from a checkpoint, write CSV plus metadata, print NFE.
//!
//! Defaults come from the optional `--config` file's `[sampler]` section;
//! explicit flags override config keys.

use std::path::PathBuf;
use std::process::ExitCode;

use tim_core::checkpoint::Checkpoint;
use tim_core::network::{NetEvaluator, Network};
use tim_core::sampler::{build_schedule, nfe_count, sample_chunked, ScheduleKind};
use tim_core::Result;

use crate::config::RunConfig;
use crate::output::{write_sample_csv, write_sample_meta, write_scatter_ppm, SampleMeta};

pub struct Args {
    pub checkpoint: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub steps: Option<usize>,
    pub n: Option<usize>,
    pub rho: Option<f64>,
    pub omega: Option<f64>,
    pub ema: bool,
    pub seed: Option<u64>,
    pub class: Option<u32>,
    pub shift_ratio: Option<f64>,
    pub churn_from_self: bool,
    pub ppm: Option<PathBuf>,
    pub workers: Option<usize>,
}

pub fn run(args: Args) -> Result<ExitCode> {
    let cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let steps = args.steps.unwrap_or(cfg.sampler.steps);
    let n = args.n.unwrap_or(cfg.sampler.n);
    let rho = args.rho.unwrap_or(cfg.sampler.rho);
    let omega = args.omega.unwrap_or(cfg.sampler.cfg_omega);
    let seed = args.seed.unwrap_or(cfg.run.seed);
    let workers = args.workers.unwrap_or(cfg.run.workers);
    let churn_from_self = args.churn_from_self || cfg.sampler.churn_from_self;

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let net = Network::new(ckpt.net_cfg.clone())?;
    let params = if args.ema { &ckpt.ema } else { &ckpt.params };
    let spec = ckpt.spec.clone();

    let (kind, ratio) = match args.shift_ratio {
        Some(r) => (ScheduleKind::Shifted, Some(r)),
        None => {
            let (kind, ratio) = cfg.schedule_kind()?;
            (kind, ratio)
        }
    };
    let mut sched = build_schedule(&spec, steps, kind, ratio)?;
    sched.rho = rho;
    sched.cfg_omega = omega;
    sched.seed = seed;
    sched.churn_from_self = churn_from_self;
    sched.validate()?;

    let ev = NetEvaluator { net: &net, params, spec: &spec };
    let started = std::time::Instant::now();
    let samples = sample_chunked(&ev, &spec, &sched, n, args.class, workers)?;
    let wall = started.elapsed().as_secs_f64();

    let dim = net.config().input_dim;
    write_sample_csv(&args.out, &samples, dim)?;
    let meta_path = args.out.with_extension("meta.json");
    let nfe = nfe_count(&sched);
    write_sample_meta(
        &meta_path,
        &SampleMeta {
            schedule: &sched,
            n,
            nfe,
            class: args.class,
            ema: args.ema,
            wall_seconds: wall,
        },
    )?;
    if let Some(ppm) = &args.ppm {
        write_scatter_ppm(ppm, &samples, dim, 256)?;
    }
    println!("wrote {} samples to {} (NFE {nfe}, {:.2} s)", n, args.out.display(), wall);
    Ok(ExitCode::SUCCESS)
}
