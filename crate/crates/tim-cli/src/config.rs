//! The run configuration document: one human-readable TOML file with
//! `[run]`, `[dataset]`, `[transport]`, `[network]`, `[trainer]`, and
//! `[sampler]` sections. Every field has a default; unknown keys are
//! rejected with the offending name. CLI flags only override config keys.

use serde::{Deserialize, Serialize};
use tim_core::data::{DatasetKind, ToyDataset};
use tim_core::network::{Backbone, Network, NetworkConfig};
use tim_core::sampler::ScheduleKind;
use tim_core::trainer::{OptimizerKind, TrainConfig};
use tim_core::transition::{TimeWarp, WeightKernel, WeightScheme};
use tim_core::transport::{TransportKind, TransportSpec};
use tim_core::{Result, TimError};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: DatasetSection,
    pub transport: TransportSection,
    pub network: NetworkSection,
    pub trainer: TrainerSection,
    pub sampler: SamplerSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// Master seed; trainer and sampler seeds default to values derived
    /// from it.
    pub seed: u64,
    /// Worker threads for chunked sampling.
    pub workers: usize,
    /// Iterations between checkpoint files during training (0 = final only).
    pub checkpoint_interval: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 0, workers: 1, checkpoint_interval: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSection {
    /// One of: delta_point, gaussian, eight_gaussians, checkerboard,
    /// two_moons, csv.
    pub kind: String,
    pub x0: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov_diag: Vec<f64>,
    pub radius: f64,
    pub mode_std: f64,
    pub noise_std: f64,
    pub csv_path: String,
    pub n_train: usize,
    pub seed: u64,
}

impl Default for DatasetSection {
    fn default() -> Self {
        DatasetSection {
            kind: "eight_gaussians".into(),
            x0: vec![0.5, -0.5],
            mean: vec![0.0, 0.0],
            cov_diag: vec![1.0, 1.0],
            radius: 2.0,
            mode_std: 0.2,
            noise_std: 0.1,
            csv_path: String::new(),
            n_train: 10_000,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransportSection {
    /// One of: ot-fm, trigflow, edm, vp, ve.
    pub kind: String,
    pub sigma_data: f64,
    /// Optional range overrides; negative means "use the transport default".
    pub t_min: f64,
    pub t_max: f64,
    pub p_mean: f64,
    pub p_std: f64,
    pub vp_beta_d: f64,
    pub vp_beta_min: f64,
    pub ve_sigma_min: f64,
    pub ve_sigma_max: f64,
}

impl Default for TransportSection {
    fn default() -> Self {
        TransportSection {
            kind: "ot-fm".into(),
            sigma_data: 1.0,
            t_min: -1.0,
            t_max: -1.0,
            p_mean: -0.4,
            p_std: 1.0,
            vp_beta_d: 19.9,
            vp_beta_min: 0.1,
            ve_sigma_min: 0.02,
            ve_sigma_max: 80.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSection {
    /// One of: mlp, token_attention.
    pub backbone: String,
    pub width: usize,
    pub depth: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_tokens: usize,
    /// Class count; -1 takes the dataset's label count.
    pub n_classes: i64,
    pub fourier_bands: usize,
    pub seed: u64,
}

impl Default for NetworkSection {
    fn default() -> Self {
        NetworkSection {
            backbone: "mlp".into(),
            width: 96,
            depth: 3,
            embed_dim: 40,
            n_heads: 1,
            n_tokens: 1,
            n_classes: -1,
            fourier_bands: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub batch_size: usize,
    pub iterations: u64,
    pub lr: f64,
    /// One of: adam, sgd.
    pub optimizer: String,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_opt: f64,
    pub ema_decay: f64,
    pub dde_eps: f64,
    /// One of: reciprocal, soft_min_snr, sqrt, square.
    pub weight_kernel: String,
    /// One of: identity, rational, tangent.
    pub weight_warp: String,
    pub frac_t_eq_r: f64,
    pub frac_r_eq_0: f64,
    pub loss_norm_c: f64,
    pub cosine_loss_scale: f64,
    pub guidance_omega: f64,
    pub guidance_enabled: bool,
    pub guidance_warmup_iters: u64,
    pub cond_dropout: f64,
    pub probe_interval: u64,
    pub probe_samples: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainerSection {
            batch_size: d.batch_size,
            iterations: d.iterations,
            lr: d.lr,
            optimizer: "adam".into(),
            beta1: d.betas.0,
            beta2: d.betas.1,
            eps_opt: d.eps_opt,
            ema_decay: d.ema_decay,
            dde_eps: d.dde_eps,
            weight_kernel: "sqrt".into(),
            weight_warp: "tangent".into(),
            frac_t_eq_r: d.frac_t_eq_r,
            frac_r_eq_0: d.frac_r_eq_0,
            loss_norm_c: d.loss_norm_c,
            cosine_loss_scale: d.cosine_loss_scale,
            guidance_omega: d.guidance_omega,
            guidance_enabled: d.guidance_enabled,
            guidance_warmup_iters: d.guidance_warmup_iters,
            cond_dropout: d.cond_dropout,
            probe_interval: 1000,
            probe_samples: d.probe_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub steps: usize,
    /// One of: uniform, shifted.
    pub schedule: String,
    pub shift_ratio: f64,
    pub rho: f64,
    pub cfg_omega: f64,
    pub churn_from_self: bool,
    pub n: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        SamplerSection {
            steps: 16,
            schedule: "uniform".into(),
            shift_ratio: 4.0,
            rho: 0.0,
            cfg_omega: 1.0,
            churn_from_self: false,
            n: 1000,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| TimError::Config(e.to_string()))
    }

    pub fn load(path: &std::path::Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| TimError::Config(e.to_string()))
    }

    pub fn transport_spec(&self) -> Result<TransportSpec> {
        let kind = match self.transport.kind.as_str() {
            "ot-fm" => TransportKind::OtFlowMatching,
            "trigflow" => TransportKind::TrigFlow,
            "edm" => TransportKind::Edm,
            "vp" => TransportKind::VpSde,
            "ve" => TransportKind::VeSde,
            other => {
                return Err(TimError::Config(format!(
                    "transport.kind `{other}` (expected ot-fm, trigflow, edm, vp, or ve)"
                )))
            }
        };
        let mut spec = TransportSpec::new(kind);
        let s = &self.transport;
        spec.sigma_data = s.sigma_data;
        spec.p_mean = s.p_mean;
        spec.p_std = s.p_std;
        spec.vp_beta_d = s.vp_beta_d;
        spec.vp_beta_min = s.vp_beta_min;
        spec.ve_sigma_min = s.ve_sigma_min;
        spec.ve_sigma_max = s.ve_sigma_max;
        if s.t_min >= 0.0 {
            spec.t_min = s.t_min;
        }
        if s.t_max >= 0.0 {
            spec.t_max = s.t_max;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn dataset(&self) -> Result<ToyDataset> {
        let d = &self.dataset;
        let kind = match d.kind.as_str() {
            "delta_point" => DatasetKind::DeltaPoint { x0: d.x0.clone() },
            "gaussian" => {
                DatasetKind::Gaussian { mean: d.mean.clone(), cov_diag: d.cov_diag.clone() }
            }
            "eight_gaussians" => {
                DatasetKind::EightGaussians { radius: d.radius, mode_std: d.mode_std }
            }
            "checkerboard" => DatasetKind::Checkerboard,
            "two_moons" => DatasetKind::TwoMoons { noise_std: d.noise_std },
            "csv" => {
                let text = std::fs::read_to_string(&d.csv_path)?;
                return ToyDataset::from_csv(&text, d.n_train, d.seed, self.transport.sigma_data);
            }
            other => {
                return Err(TimError::Config(format!(
                    "dataset.kind `{other}` (expected delta_point, gaussian, eight_gaussians, checkerboard, two_moons, or csv)"
                )))
            }
        };
        ToyDataset::new(kind, d.n_train, d.seed, self.transport.sigma_data)
    }

    pub fn network(&self, dataset: &ToyDataset) -> Result<Network> {
        let n = &self.network;
        let backbone = match n.backbone.as_str() {
            "mlp" => Backbone::Mlp,
            "token_attention" => Backbone::TokenAttention,
            other => {
                return Err(TimError::Config(format!(
                    "network.backbone `{other}` (expected mlp or token_attention)"
                )))
            }
        };
        let n_classes = if n.n_classes < 0 { dataset.n_classes() } else { n.n_classes as usize };
        Network::new(NetworkConfig {
            backbone,
            input_dim: dataset.dim(),
            width: n.width,
            depth: n.depth,
            embed_dim: n.embed_dim,
            n_heads: n.n_heads,
            n_tokens: n.n_tokens,
            n_classes,
            fourier_bands: n.fourier_bands,
            seed: n.seed,
        })
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.trainer;
        let optimizer = match t.optimizer.as_str() {
            "adam" => OptimizerKind::AdaptiveMoment,
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(TimError::Config(format!(
                    "trainer.optimizer `{other}` (expected adam or sgd)"
                )))
            }
        };
        let kernel = match t.weight_kernel.as_str() {
            "reciprocal" => WeightKernel::Reciprocal,
            "soft_min_snr" => WeightKernel::SoftMinSnr,
            "sqrt" => WeightKernel::Sqrt,
            "square" => WeightKernel::Square,
            other => {
                return Err(TimError::Config(format!(
                    "trainer.weight_kernel `{other}` (expected reciprocal, soft_min_snr, sqrt, or square)"
                )))
            }
        };
        let warp = match t.weight_warp.as_str() {
            "identity" => TimeWarp::Identity,
            "rational" => TimeWarp::Rational,
            "tangent" => TimeWarp::Tangent,
            other => {
                return Err(TimError::Config(format!(
                    "trainer.weight_warp `{other}` (expected identity, rational, or tangent)"
                )))
            }
        };
        let cfg = TrainConfig {
            batch_size: t.batch_size,
            iterations: t.iterations,
            lr: t.lr,
            optimizer,
            betas: (t.beta1, t.beta2),
            eps_opt: t.eps_opt,
            ema_decay: t.ema_decay,
            dde_eps: t.dde_eps,
            weight_scheme: WeightScheme { kernel, warp, sigma_data: self.transport.sigma_data },
            frac_t_eq_r: t.frac_t_eq_r,
            frac_r_eq_0: t.frac_r_eq_0,
            loss_norm_c: t.loss_norm_c,
            cosine_loss_scale: t.cosine_loss_scale,
            guidance_omega: t.guidance_omega,
            guidance_enabled: t.guidance_enabled,
            guidance_warmup_iters: t.guidance_warmup_iters,
            cond_dropout: t.cond_dropout,
            seed: self.run.seed,
            probe_interval: t.probe_interval,
            probe_samples: t.probe_samples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn schedule_kind(&self) -> Result<(ScheduleKind, Option<f64>)> {
        match self.sampler.schedule.as_str() {
            "uniform" => Ok((ScheduleKind::Uniform, None)),
            "shifted" => Ok((ScheduleKind::Shifted, Some(self.sampler.shift_ratio))),
            other => Err(TimError::Config(format!(
                "sampler.schedule `{other}` (expected uniform or shifted)"
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_and_build() {
        let cfg = RunConfig::parse("").unwrap();
        let spec = cfg.transport_spec().unwrap();
        assert_eq!(spec.kind, TransportKind::OtFlowMatching);
        let ds = cfg.dataset().unwrap();
        assert_eq!(ds.dim(), 2);
        let net = cfg.network(&ds).unwrap();
        assert_eq!(net.config().n_classes, 8);
        cfg.train_config().unwrap();
    }

    #[test]
    fn round_trip_identical() {
        let text = r#"
[run]
seed = 7

[dataset]
kind = "two_moons"
noise_std = 0.05

[trainer]
iterations = 123
cosine_loss_scale = 1.0
"#;
        let cfg = RunConfig::parse(text).unwrap();
        let serialized = cfg.to_toml().unwrap();
        let back = RunConfig::parse(&serialized).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(back.trainer.iterations, 123);
    }

    #[test]
    fn unknown_key_names_the_offender() {
        let err = RunConfig::parse("[trainer]\nlearning_rate = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("learning_rate"), "message was: {msg}");
    }

    #[test]
    fn bad_enum_values_are_rejected() {
        let cfg = RunConfig::parse("[transport]\nkind = \"warp\"\n").unwrap();
        assert!(cfg.transport_spec().is_err());
        let cfg = RunConfig::parse("[trainer]\noptimizer = \"adagrad\"\n").unwrap();
        assert!(cfg.train_config().is_err());
    }

    #[test]
    fn explicit_class_count_overrides_dataset() {
        let cfg = RunConfig::parse("[network]\nn_classes = 0\n").unwrap();
        let ds = cfg.dataset().unwrap();
        let net = cfg.network(&ds).unwrap();
        assert_eq!(net.config().n_classes, 0);
    }

    #[test]
    fn csv_dataset_loads_from_disk() {
        let dir = std::env::temp_dir().join("tim-config-csv");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("cloud.csv");
        std::fs::write(&path, "a,b\n0.0,1.0\n2.0,-1.0\n-2.0,0.5\n1.0,3.0\n").unwrap();
        let text = format!("[dataset]\nkind = \"csv\"\ncsv_path = \"{}\"\n", path.display());
        let cfg = RunConfig::parse(&text).unwrap();
        let ds = cfg.dataset().unwrap();
        assert_eq!(ds.dim(), 2);
        std::fs::remove_dir_all(&dir).ok();
    }
}
