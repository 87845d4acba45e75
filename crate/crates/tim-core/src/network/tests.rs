use super::ops::Scalar;
use super::*;
use crate::transport::{TransportKind, TransportSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro_mlp() -> NetworkConfig {
    NetworkConfig {
        backbone: Backbone::Mlp,
        input_dim: 2,
        width: 3,
        depth: 1,
        embed_dim: 4,
        n_heads: 1,
        n_tokens: 1,
        n_classes: 2,
        fourier_bands: 2,
        seed: 0,
    }
}

fn micro_attn() -> NetworkConfig {
    NetworkConfig {
        backbone: Backbone::TokenAttention,
        input_dim: 4,
        width: 4,
        depth: 1,
        embed_dim: 4,
        n_heads: 1,
        n_tokens: 2,
        n_classes: 2,
        fourier_bands: 2,
        seed: 0,
    }
}

/// Randomizes every parameter (including the zero-initialized ones) so the
/// gradient check exercises all paths.
fn random_params(net: &Network, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..net.param_count()).map(|_| rng.random_range(-0.5..0.5)).collect()
}

struct GradCheckSetup {
    spec: TransportSpec,
    x: Vec<f64>,
    t: Vec<f64>,
    r: Vec<f64>,
    class: Vec<i64>,
    dout: Vec<f64>,
}

fn setup(batch: usize, dim: usize, seed: u64) -> GradCheckSetup {
    let spec = TransportSpec::new(TransportKind::OtFlowMatching);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..batch * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let t: Vec<f64> = (0..batch).map(|_| rng.random_range(0.3..0.9)).collect();
    let r: Vec<f64> = t.iter().map(|&tv| rng.random_range(spec.t_min..tv)).collect();
    let class: Vec<i64> = (0..batch).map(|i| if i % 3 == 2 { NO_CLASS } else { (i % 2) as i64 }).collect();
    let dout: Vec<f64> = (0..batch * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    GradCheckSetup { spec, x, t, r, class, dout }
}

/// Loss linear in the output: L = <out, dout>, so backward run with `dout`
/// must match central finite differences over every parameter.
fn gradient_check(cfg: NetworkConfig, tol: f64) {
    let net = Network::new(cfg).unwrap();
    let dim = net.config().input_dim;
    let s = setup(3, dim, 99);
    let params = random_params(&net, 7);

    let loss = |p: &[f64]| -> f64 {
        let out = net.forward(p, &s.spec, &s.x, &s.t, &s.r, &s.class).unwrap();
        out.iter().zip(&s.dout).map(|(a, g)| a * g).sum()
    };

    let (_, cache) = net.forward_cached(&params, &s.spec, &s.x, &s.t, &s.r, &s.class).unwrap();
    let grads = net.backward(&params, &cache, &s.dout).unwrap();

    let h = 1e-4;
    let mut checked = 0usize;
    for i in 0..params.len() {
        let mut pp = params.clone();
        pp[i] += h;
        let mut pm = params.clone();
        pm[i] -= h;
        let fd = (loss(&pp) - loss(&pm)) / (2.0 * h);
        let denom = fd.abs().max(grads[i].abs()).max(1e-6);
        let rel = (fd - grads[i]).abs() / denom;
        assert!(
            rel < tol,
            "param {} ({}): backward {} vs fd {} (rel {rel})",
            i,
            name_of(&net, i),
            grads[i],
            fd
        );
        checked += 1;
    }
    assert_eq!(checked, net.param_count());
}

fn name_of(net: &Network, flat_index: usize) -> String {
    for e in &net.layout().entries {
        if flat_index >= e.offset && flat_index < e.offset + e.len() {
            return format!("{}[{}]", e.name, flat_index - e.offset);
        }
    }
    "?".into()
}

#[test]
fn gradcheck_micro_mlp() {
    gradient_check(micro_mlp(), 1e-4);
}

#[test]
fn gradcheck_micro_attention() {
    gradient_check(micro_attn(), 1e-4);
}

#[test]
fn zero_output_grad_gives_zero_grads() {
    let net = Network::new(micro_mlp()).unwrap();
    let s = setup(2, 2, 5);
    let params = random_params(&net, 11);
    let (_, cache) = net.forward_cached(&params, &s.spec, &s.x, &s.t, &s.r, &s.class).unwrap();
    let grads = net.backward(&params, &cache, &vec![0.0; 4]).unwrap();
    assert!(grads.iter().all(|&g| g == 0.0));
}

#[test]
fn forward_deterministic() {
    let net = Network::new(micro_attn()).unwrap();
    let s = setup(4, 4, 17);
    let params = net.init_params::<f32>(3);
    let x32: Vec<f32> = s.x.iter().map(|&v| v as f32).collect();
    let a = net.forward(&params, &s.spec, &x32, &s.t, &s.r, &s.class).unwrap();
    let b = net.forward(&params, &s.spec, &x32, &s.t, &s.r, &s.class).unwrap();
    assert!(a.iter().zip(&b).all(|(u, v)| u.to_bits() == v.to_bits()));
}

#[test]
fn zero_init_outputs_zero() {
    for cfg in [micro_mlp(), micro_attn()] {
        let net = Network::new(cfg).unwrap();
        let s = setup(3, net.config().input_dim, 23);
        let params = net.init_params::<f64>(1);
        let out = net.forward(&params, &s.spec, &s.x, &s.t, &s.r, &s.class).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn interval_sensitivity() {
    // With random parameters the output must depend on r.
    for cfg in [micro_mlp(), micro_attn()] {
        let net = Network::new(cfg).unwrap();
        let dim = net.config().input_dim;
        let s = setup(1, dim, 29);
        let params = random_params(&net, 31);
        let out1 = net.forward(&params, &s.spec, &s.x, &s.t, &[0.1], &s.class[..1]).unwrap();
        let out2 = net.forward(&params, &s.spec, &s.x, &s.t, &[0.4], &s.class[..1]).unwrap();
        let diff: f64 = out1.iter().zip(&out2).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 1e-8, "output ignored the interval");
    }
}

#[test]
fn decoupling_zeroed_interval_path_ignores_r() {
    // Zero the interval embedding trunk and the W' matrices; the forward
    // must then be exactly invariant to r.
    for cfg in [micro_mlp(), micro_attn()] {
        let net = Network::new(cfg).unwrap();
        let dim = net.config().input_dim;
        let s = setup(2, dim, 37);
        let mut params = random_params(&net, 41);
        for e in &net.layout().entries.clone() {
            if e.name.starts_with("interval_embed") || e.name.contains("_int") {
                for v in &mut params[e.offset..e.offset + e.len()] {
                    *v = 0.0;
                }
            }
        }
        let out1 = net.forward(&params, &s.spec, &s.x, &s.t, &vec![0.05; 2], &s.class).unwrap();
        let out2 = net.forward(&params, &s.spec, &s.x, &s.t, &vec![0.25; 2], &s.class).unwrap();
        assert_eq!(out1, out2);
    }
}

#[test]
fn null_class_matches_dropped_class_pathway() {
    // A row with the null class must match the same forward with the class
    // table zeroed: the null embedding contributes nothing.
    let net = Network::new(micro_mlp()).unwrap();
    let s = setup(2, 2, 43);
    let mut params = random_params(&net, 47);
    let out_null = net.forward(&params, &s.spec, &s.x, &s.t, &s.r, &[NO_CLASS, NO_CLASS]).unwrap();
    for e in &net.layout().entries.clone() {
        if e.name.starts_with("class_embed") {
            for v in &mut params[e.offset..e.offset + e.len()] {
                *v = 0.0;
            }
        }
    }
    let out_zeroed = net.forward(&params, &s.spec, &s.x, &s.t, &s.r, &[0, 1]).unwrap();
    assert_eq!(out_null, out_zeroed);
}

#[test]
fn lipschitz_under_time_perturbation() {
    // No NaN and bounded drift under 1e-3 time jitter across many probes.
    let net = Network::new(micro_mlp()).unwrap();
    let s = setup(1, 2, 53);
    let params = random_params(&net, 59);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..1000 {
        let t = rng.random_range(0.2..0.8);
        let out1 = net.forward(&params, &s.spec, &s.x, &[t], &[0.1], &[0]).unwrap();
        let out2 = net.forward(&params, &s.spec, &s.x, &[t + 1e-3], &[0.1], &[0]).unwrap();
        for (a, b) in out1.iter().zip(&out2) {
            assert!(a.is_finite() && b.is_finite());
            assert!((a - b).abs() < 1.0);
        }
    }
}

/// Independent parameter-count formulas for both architectures.
fn analytic_count(cfg: &NetworkConfig) -> usize {
    let (w, e, d, k) = (cfg.width, cfg.embed_dim, cfg.input_dim, cfg.fourier_bands);
    let trunk = 2 * ((e * 2 * k + e) + (e * e + e)) + cfg.n_classes * e;
    match cfg.backbone {
        Backbone::Mlp => {
            let input = w * d + w;
            let block = (3 * w * e + 3 * w) + 2 * (w * w + w);
            let final_ = (2 * w * e + 2 * w) + (d * w + d);
            trunk + input + cfg.depth * block + final_
        }
        Backbone::TokenAttention => {
            let td = d / cfg.n_tokens;
            let input = (w * td + w) + cfg.n_tokens * w;
            let attn = 3 * (w * w + w) + 3 * (w * e) + (w * w + w);
            let ffn = (2 * w * w + 2 * w) + (w * 2 * w + w);
            let block = (6 * w * e + 6 * w) + attn + ffn;
            let final_ = (2 * w * e + 2 * w) + (td * w + td);
            trunk + input + cfg.depth * block + final_
        }
    }
}

#[test]
fn param_count_matches_analytic_formula() {
    for cfg in [micro_mlp(), micro_attn()] {
        let net = Network::new(cfg.clone()).unwrap();
        assert_eq!(net.param_count(), analytic_count(&cfg), "{:?}", cfg.backbone);
    }
    // A larger configuration too.
    let mut big = NetworkConfig::mlp(2, 96, 3, 40);
    big.n_classes = 8;
    let net = Network::new(big.clone()).unwrap();
    assert_eq!(net.param_count(), analytic_count(&big));
    // Attention with several heads and tokens.
    let big_attn = NetworkConfig {
        backbone: Backbone::TokenAttention,
        input_dim: 16,
        width: 32,
        depth: 2,
        embed_dim: 16,
        n_heads: 4,
        n_tokens: 4,
        n_classes: 0,
        fourier_bands: 4,
        seed: 0,
    };
    let net = Network::new(big_attn.clone()).unwrap();
    assert_eq!(net.param_count(), analytic_count(&big_attn));
}

#[test]
fn layout_entries_are_contiguous() {
    let net = Network::new(micro_attn()).unwrap();
    let mut expected = 0usize;
    for e in &net.layout().entries {
        assert_eq!(e.offset, expected);
        expected += e.len();
    }
    assert_eq!(expected, net.layout().total);
}

#[test]
fn ema_update_examples() {
    let mut ema = vec![0.0f32];
    ema_update(&mut ema, &[2.0], 0.5).unwrap();
    assert_eq!(ema[0], 1.0);

    let mut ema = vec![1.0f32, -1.0];
    ema_update(&mut ema, &[3.0, 3.0], 0.0).unwrap();
    assert_eq!(ema, vec![3.0, 3.0]);

    let mut ema = vec![5.0f64];
    for _ in 0..100 {
        ema_update(&mut ema, &[0.0], 1.0 - 1e-9).unwrap();
    }
    assert!((ema[0] - 5.0).abs() < 1e-5);

    assert!(ema_update(&mut vec![0.0f32; 2], &[1.0], 0.5).is_err());
    assert!(ema_update(&mut vec![0.0f32], &[1.0], 1.5).is_err());
}

#[test]
fn shape_and_finite_validation() {
    let net = Network::new(micro_mlp()).unwrap();
    let spec = TransportSpec::new(TransportKind::OtFlowMatching);
    let params = net.init_params::<f64>(0);
    // Wrong x length.
    assert!(net.forward(&params, &spec, &[0.0; 3], &[0.5], &[0.1], &[]).is_err());
    // Non-finite input.
    assert!(net.forward(&params, &spec, &[f64::NAN, 0.0], &[0.5], &[0.1], &[]).is_err());
    // Class out of range.
    assert!(net.forward(&params, &spec, &[0.0, 0.0], &[0.5], &[0.1], &[9]).is_err());
    // Wrong parameter count.
    assert!(net.forward(&params[1..].to_vec().as_slice(), &spec, &[0.0, 0.0], &[0.5], &[0.1], &[]).is_err());
}

#[test]
fn f32_and_f64_instantiations_agree() {
    let net = Network::new(micro_mlp()).unwrap();
    let s = setup(2, 2, 67);
    let p64 = net.init_params::<f64>(9);
    let p32: Vec<f32> = p64.iter().map(|&v| v as f32).collect();
    let x32: Vec<f32> = s.x.iter().map(|&v| v as f32).collect();
    let o64 = net.forward(&p64, &s.spec, &s.x, &s.t, &s.r, &s.class).unwrap();
    let o32 = net.forward(&p32, &s.spec, &x32, &s.t, &s.r, &s.class).unwrap();
    for (a, b) in o64.iter().zip(&o32) {
        assert!((a - *b as f64).abs() < 1e-4);
    }
}
