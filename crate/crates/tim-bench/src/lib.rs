//! Shared builders for the criterion benchmarks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tim_core::data::{DatasetKind, ToyDataset};
use tim_core::network::{Network, NetworkConfig};
use tim_core::trainer::{TrainConfig, Trainer};
use tim_core::transport::{TransportKind, TransportSpec};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn default_spec() -> TransportSpec {
    TransportSpec::new(TransportKind::OtFlowMatching)
}

/// The flagship-sized MLP (about 100k parameters on 2-D data).
pub fn flagship_network() -> Network {
    Network::new(NetworkConfig::mlp(2, 96, 3, 40)).expect("valid config")
}

pub fn mixture_trainer(batch_size: usize) -> Trainer {
    let dataset =
        ToyDataset::new(DatasetKind::EightGaussians { radius: 2.0, mode_std: 0.2 }, 5_000, 1, 1.0)
            .expect("valid dataset");
    let mut cfg = TrainConfig::default();
    cfg.batch_size = batch_size;
    Trainer::new(flagship_network(), default_spec(), cfg, dataset).expect("valid trainer")
}
