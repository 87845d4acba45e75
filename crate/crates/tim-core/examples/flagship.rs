use tim_core::data::{DatasetKind, ToyDataset};
use tim_core::network::{Network, NetworkConfig};
use tim_core::oracle::energy_distance;
use tim_core::trainer::{TrainConfig, Trainer};
use tim_core::transport::{TransportKind, TransportSpec};

fn main() {
    let iters: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4000);
    let seed: u64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let p_mean: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(-0.4);
    let p_std: f64 = std::env::args().nth(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let cosine: f64 = std::env::args().nth(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let ema: f64 = std::env::args().nth(6).and_then(|s| s.parse().ok()).unwrap_or(0.999);
    let lr: f64 = std::env::args().nth(7).and_then(|s| s.parse().ok()).unwrap_or(2e-4);
    let mut spec = TransportSpec::new(TransportKind::OtFlowMatching);
    spec.p_mean = p_mean;
    spec.p_std = p_std;
    let mut net_cfg = NetworkConfig::mlp(2, 96, 3, 40);
    net_cfg.seed = seed;
    let net = Network::new(net_cfg).unwrap();
    let ds = ToyDataset::new(DatasetKind::EightGaussians { radius: 2.0, mode_std: 0.2 }, 10_000, 1, 1.0).unwrap();
    // Floor: two fresh reference draws against each other.
    use rand::SeedableRng;
    let mut ra = rand_chacha::ChaCha8Rng::seed_from_u64(900 + seed);
    let mut rb = rand_chacha::ChaCha8Rng::seed_from_u64(1900 + seed);
    let (da, _) = ds.draw_batch(2000, &mut ra);
    let (db, _) = ds.draw_batch(2000, &mut rb);
    let floor = energy_distance(&da, &db, 2);
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 96;
    cfg.iterations = iters;
    cfg.cosine_loss_scale = cosine;
    cfg.ema_decay = ema;
    cfg.lr = lr;
    cfg.seed = seed * 1000 + 17;
    cfg.probe_interval = 0;
    cfg.probe_samples = 2000;
    let mut tr = Trainer::new(net, spec, cfg, ds).unwrap();
    let start = std::time::Instant::now();
    tr.run().unwrap();
    let probes = tr.probe(&[1, 4, 16]).unwrap();
    println!(
        "seed {seed} iters {iters} pmean {p_mean} pstd {p_std} cos {cosine} ema {ema} lr {lr}: wall {:.0}s floor {:.4} probes 1:{:.4} 4:{:.4} 16:{:.4}",
        start.elapsed().as_secs_f64(), floor, probes[0].1, probes[1].1, probes[2].1
    );
}
