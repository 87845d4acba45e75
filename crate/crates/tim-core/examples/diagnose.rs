use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tim_core::data::{DatasetKind, ToyDataset};
use tim_core::network::{NetEvaluator, Network, NetworkConfig};
use tim_core::oracle::energy_distance;
use tim_core::sampler::{build_schedule, sample, ScheduleKind};
use tim_core::trainer::{TrainConfig, Trainer};
use tim_core::transport::{TransportKind, TransportSpec};

fn stats(name: &str, xs: &[f64]) {
    let n = xs.len() / 2;
    let mut m = [0.0f64; 2];
    for row in xs.chunks_exact(2) { m[0] += row[0]; m[1] += row[1]; }
    m[0] /= n as f64; m[1] /= n as f64;
    let mut v = [0.0f64; 2];
    let mut r2 = 0.0;
    for row in xs.chunks_exact(2) {
        v[0] += (row[0]-m[0]).powi(2); v[1] += (row[1]-m[1]).powi(2);
        r2 += (row[0]*row[0] + row[1]*row[1]).sqrt();
    }
    v[0] = (v[0]/n as f64).sqrt(); v[1] = (v[1]/n as f64).sqrt();
    r2 /= n as f64;
    println!("{name}: mean ({:+.3},{:+.3}) std ({:.3},{:.3}) mean-radius {:.3}", m[0], m[1], v[0], v[1], r2);
}

fn main() {
    let iters: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8000);
    let spec = TransportSpec::new(TransportKind::OtFlowMatching);
    let net = Network::new(NetworkConfig::mlp(2, 96, 3, 40)).unwrap();
    let ds = ToyDataset::new(DatasetKind::EightGaussians { radius: 2.0, mode_std: 0.2 }, 10_000, 1, 1.0).unwrap();
    let mut cfg = TrainConfig::default();
    cfg.batch_size = 96;
    cfg.iterations = iters;
    cfg.cosine_loss_scale = 1.0;
    cfg.seed = 17;
    cfg.probe_interval = 0;
    let mut tr = Trainer::new(net, spec.clone(), cfg, ds).unwrap();
    tr.run().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5000);
    let (reference, _) = tr.dataset.draw_batch(4000, &mut rng);
    stats("data      ", &reference);
    let ev = NetEvaluator { net: &tr.net, params: &tr.state.ema, spec: &spec };
    for steps in [1usize, 2, 4, 8, 16, 32] {
        let sched = build_schedule(&spec, steps, ScheduleKind::Uniform, None).unwrap();
        let mut srng = ChaCha8Rng::seed_from_u64(999);
        let out = sample(&ev, &spec, &sched, 4000, None, &mut srng).unwrap();
        let ed = energy_distance(&out, &reference, 2);
        stats(&format!("{steps:>2}-step ed {ed:.4}"), &out);
    }
}
