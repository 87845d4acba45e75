//! A self-contained differentiable backbone `F(x, c_noise(t), c_noise(r))`
//! with decoupled time/interval embeddings, AdaLN-style modulation, an
//! optional interval-aware attention body, and hand-written reverse-mode
//! gradients.
//!
//! Parameters live in one flat array described by a [`ParamLayout`] manifest;
//! gradients share the same layout. All math is generic over [`Scalar`] so
//! the training path runs in `f32` while gradient checks run the identical
//! code in `f64`.

pub mod attn;
pub mod mlp;
pub mod ops;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TimError};
use crate::transport::{c_noise, TransportSpec};
use ops::{
    fourier_features, fourier_frequencies, linear_backward, linear_forward, silu_backward,
    silu_forward, Scalar,
};

/// Sentinel for "no class" rows in a class-id batch.
pub const NO_CLASS: i64 = -1;

/// Which body processes the state after conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Backbone {
    Mlp,
    TokenAttention,
}

/// Architecture description; fully determines the parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub backbone: Backbone,
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub embed_dim: usize,
    /// TokenAttention only.
    pub n_heads: usize,
    /// TokenAttention only; `n_tokens * token_dim = input_dim`.
    pub n_tokens: usize,
    /// 0 = unconditional.
    pub n_classes: usize,
    pub fourier_bands: usize,
    pub seed: u64,
}

impl NetworkConfig {
    pub fn mlp(input_dim: usize, width: usize, depth: usize, embed_dim: usize) -> Self {
        NetworkConfig {
            backbone: Backbone::Mlp,
            input_dim,
            width,
            depth,
            embed_dim,
            n_heads: 1,
            n_tokens: 1,
            n_classes: 0,
            fourier_bands: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.input_dim, "input_dim"),
            (self.width, "width"),
            (self.depth, "depth"),
            (self.embed_dim, "embed_dim"),
            (self.fourier_bands, "fourier_bands"),
        ];
        for (v, name) in positive {
            if v == 0 {
                return Err(TimError::Config(format!("{name} must be positive")));
            }
        }
        if self.backbone == Backbone::TokenAttention {
            if self.n_heads == 0 || self.width % self.n_heads != 0 {
                return Err(TimError::Config(format!(
                    "width {} must be divisible by n_heads {}",
                    self.width, self.n_heads
                )));
            }
            if self.n_tokens == 0 || self.input_dim % self.n_tokens != 0 {
                return Err(TimError::Config(format!(
                    "input_dim {} must be divisible by n_tokens {}",
                    self.input_dim, self.n_tokens
                )));
            }
        }
        Ok(())
    }

    pub fn token_dim(&self) -> usize {
        self.input_dim / self.n_tokens
    }
}

/// One named tensor inside the flat parameter array.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Manifest mapping tensor names to offsets/shapes; serialized verbatim into
/// checkpoints.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub fn slice<'a, F>(&self, data: &'a [F], id: TensorId) -> &'a [F] {
        let e = &self.entries[id.0];
        &data[e.offset..e.offset + e.len()]
    }

    pub fn slice_mut<'a, F>(&self, data: &'a mut [F], id: TensorId) -> &'a mut [F] {
        let e = &self.entries[id.0];
        &mut data[e.offset..e.offset + e.len()]
    }
}

/// Index of a tensor in the layout; resolved once at network construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(pub usize);

/// How a tensor is filled at initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum InitKind {
    /// N(0, 1/fan_in) with the given fan-in.
    FanIn(usize),
    /// N(0, 0.02): embeddings.
    SmallNormal,
    /// Zeros: biases, modulation projections, the final output projection.
    Zero,
}

pub(crate) struct LayoutBuilder {
    entries: Vec<ParamEntry>,
    inits: Vec<InitKind>,
    total: usize,
}

impl LayoutBuilder {
    fn new() -> Self {
        LayoutBuilder { entries: Vec::new(), inits: Vec::new(), total: 0 }
    }

    fn add(&mut self, name: impl Into<String>, shape: &[usize], init: InitKind) -> TensorId {
        let entry = ParamEntry { name: name.into(), offset: self.total, shape: shape.to_vec() };
        self.total += entry.len();
        self.entries.push(entry);
        self.inits.push(init);
        TensorId(self.entries.len() - 1)
    }

    fn linear(&mut self, prefix: &str, rows: usize, cols: usize) -> (TensorId, TensorId) {
        let w = self.add(format!("{prefix}.weight"), &[rows, cols], InitKind::FanIn(cols));
        let b = self.add(format!("{prefix}.bias"), &[rows], InitKind::Zero);
        (w, b)
    }

    fn zero_linear(&mut self, prefix: &str, rows: usize, cols: usize) -> (TensorId, TensorId) {
        let w = self.add(format!("{prefix}.weight"), &[rows, cols], InitKind::Zero);
        let b = self.add(format!("{prefix}.bias"), &[rows], InitKind::Zero);
        (w, b)
    }
}

pub(crate) struct TrunkIdx {
    t_fc1: (TensorId, TensorId),
    t_fc2: (TensorId, TensorId),
    d_fc1: (TensorId, TensorId),
    d_fc2: (TensorId, TensorId),
    class_table: Option<TensorId>,
}

pub(crate) enum BodyIdx {
    Mlp(mlp::MlpIdx),
    Attn(attn::AttnIdx),
}

/// The backbone: configuration plus resolved parameter layout.
pub struct Network {
    cfg: NetworkConfig,
    layout: ParamLayout,
    inits: Vec<InitKind>,
    freqs: Vec<f64>,
    trunk: TrunkIdx,
    body: BodyIdx,
}

impl Network {
    pub fn new(cfg: NetworkConfig) -> Result<Network> {
        cfg.validate()?;
        let mut b = LayoutBuilder::new();
        let e = cfg.embed_dim;
        let fdim = 2 * cfg.fourier_bands;
        let trunk = TrunkIdx {
            t_fc1: b.linear("time_embed.fc1", e, fdim),
            t_fc2: b.linear("time_embed.fc2", e, e),
            d_fc1: b.linear("interval_embed.fc1", e, fdim),
            d_fc2: b.linear("interval_embed.fc2", e, e),
            class_table: if cfg.n_classes > 0 {
                Some(b.add("class_embed.table", &[cfg.n_classes, e], InitKind::SmallNormal))
            } else {
                None
            },
        };
        let body = match cfg.backbone {
            Backbone::Mlp => BodyIdx::Mlp(mlp::MlpIdx::build(&cfg, &mut b)),
            Backbone::TokenAttention => BodyIdx::Attn(attn::AttnIdx::build(&cfg, &mut b)),
        };
        let layout = ParamLayout { entries: b.entries, total: b.total };
        Ok(Network {
            freqs: fourier_frequencies(cfg.fourier_bands),
            cfg,
            layout,
            inits: b.inits,
            trunk,
            body,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Fresh parameters: fan-in-scaled normals for weights, small normals for
    /// embeddings, zeros for biases, modulation projections, and the final
    /// output projection (so an untrained network outputs exactly zero).
    pub fn init_params<F: Scalar>(&self, seed: u64) -> Vec<F> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = vec![F::zero(); self.layout.total];
        for (entry, init) in self.layout.entries.iter().zip(&self.inits) {
            let slot = &mut params[entry.offset..entry.offset + entry.len()];
            match init {
                InitKind::Zero => {}
                InitKind::FanIn(fan_in) => {
                    let std = (1.0 / *fan_in as f64).sqrt();
                    for v in slot {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = F::from_f64(z * std);
                    }
                }
                InitKind::SmallNormal => {
                    for v in slot {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        *v = F::from_f64(z * 0.02);
                    }
                }
            }
        }
        params
    }

    fn check_inputs<F: Scalar>(
        &self,
        params: &[F],
        x: &[F],
        t: &[f64],
        r: &[f64],
        class: &[i64],
    ) -> Result<usize> {
        if params.len() != self.layout.total {
            return Err(TimError::Layout(format!(
                "expected {} parameters, got {}",
                self.layout.total,
                params.len()
            )));
        }
        let batch = t.len();
        if r.len() != batch || x.len() != batch * self.cfg.input_dim {
            return Err(TimError::Shape(format!(
                "batch {} with x len {} and r len {}",
                batch,
                x.len(),
                r.len()
            )));
        }
        if !class.is_empty() && class.len() != batch {
            return Err(TimError::Shape("class batch length mismatch".into()));
        }
        for &c in class {
            if c != NO_CLASS && (c < 0 || c as usize >= self.cfg.n_classes.max(1)) {
                return Err(TimError::Shape(format!("class id {c} out of range")));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(TimError::NonFinite("network input".into()));
        }
        Ok(batch)
    }

    /// Forward pass without retained state.
    pub fn forward<F: Scalar>(
        &self,
        params: &[F],
        spec: &TransportSpec,
        x: &[F],
        t: &[f64],
        r: &[f64],
        class: &[i64],
    ) -> Result<Vec<F>> {
        self.forward_cached(params, spec, x, t, r, class).map(|(out, _)| out)
    }

    /// Forward pass retaining everything the backward needs.
    pub fn forward_cached<F: Scalar>(
        &self,
        params: &[F],
        spec: &TransportSpec,
        x: &[F],
        t: &[f64],
        r: &[f64],
        class: &[i64],
    ) -> Result<(Vec<F>, ForwardCache<F>)> {
        let batch = self.check_inputs(params, x, t, r, class)?;
        let trunk = self.trunk_forward(params, spec, t, r, class, batch)?;
        let (out, body) = match &self.body {
            BodyIdx::Mlp(idx) => {
                let (out, cache) =
                    mlp::forward(&self.cfg, &self.layout, idx, params, x, &trunk.cond, batch);
                (out, BodyCache::Mlp(cache))
            }
            BodyIdx::Attn(idx) => {
                let (out, cache) = attn::forward(
                    &self.cfg,
                    &self.layout,
                    idx,
                    params,
                    x,
                    &trunk.cond,
                    &trunk.e_d,
                    batch,
                );
                (out, BodyCache::Attn(cache))
            }
        };
        Ok((out, ForwardCache { batch, x: x.to_vec(), trunk, body }))
    }

    /// Exact reverse-mode gradients of the forward map under `dout = dL/dout`.
    pub fn backward<F: Scalar>(
        &self,
        params: &[F],
        cache: &ForwardCache<F>,
        dout: &[F],
    ) -> Result<Vec<F>> {
        if params.len() != self.layout.total {
            return Err(TimError::Layout("parameter length mismatch in backward".into()));
        }
        if dout.len() != cache.batch * self.cfg.input_dim {
            return Err(TimError::Shape("dout length mismatch".into()));
        }
        let mut grads = vec![F::zero(); self.layout.total];
        let batch = cache.batch;
        let e = self.cfg.embed_dim;
        let mut dcond = vec![F::zero(); batch * e];
        let mut de_d_extra = vec![F::zero(); batch * e];
        match (&self.body, &cache.body) {
            (BodyIdx::Mlp(idx), BodyCache::Mlp(bc)) => mlp::backward(
                &self.cfg,
                &self.layout,
                idx,
                params,
                &cache.x,
                &cache.trunk.cond,
                bc,
                dout,
                &mut grads,
                &mut dcond,
            ),
            (BodyIdx::Attn(idx), BodyCache::Attn(bc)) => attn::backward(
                &self.cfg,
                &self.layout,
                idx,
                params,
                &cache.x,
                &cache.trunk.cond,
                &cache.trunk.e_d,
                bc,
                dout,
                &mut grads,
                &mut dcond,
                &mut de_d_extra,
            ),
            _ => return Err(TimError::Layout("cache does not match network body".into())),
        }
        self.trunk_backward(params, &cache.trunk, &dcond, &de_d_extra, &mut grads, batch);
        Ok(grads)
    }

    fn trunk_forward<F: Scalar>(
        &self,
        params: &[F],
        spec: &TransportSpec,
        t: &[f64],
        r: &[f64],
        class: &[i64],
        batch: usize,
    ) -> Result<TrunkCache<F>> {
        let e = self.cfg.embed_dim;
        let fdim = 2 * self.cfg.fourier_bands;
        let mut four_t = vec![F::zero(); batch * fdim];
        let mut four_d = vec![F::zero(); batch * fdim];
        for i in 0..batch {
            let ct = c_noise(spec, t[i])?;
            let cr = c_noise(spec, r[i])?;
            fourier_features(ct, &self.freqs, &mut four_t[i * fdim..(i + 1) * fdim]);
            fourier_features(ct - cr, &self.freqs, &mut four_d[i * fdim..(i + 1) * fdim]);
        }
        let lay = &self.layout;
        let run_mlp2 = |fc1: (TensorId, TensorId),
                        fc2: (TensorId, TensorId),
                        input: &[F],
                        pre: &mut Vec<F>,
                        act: &mut Vec<F>,
                        out: &mut Vec<F>| {
            linear_forward(
                input,
                lay.slice(params, fc1.0),
                Some(lay.slice(params, fc1.1)),
                e,
                fdim,
                pre,
            );
            silu_forward(pre, act);
            linear_forward(act, lay.slice(params, fc2.0), Some(lay.slice(params, fc2.1)), e, e, out);
        };
        let mut t_pre = vec![F::zero(); batch * e];
        let mut t_act = vec![F::zero(); batch * e];
        let mut e_t = vec![F::zero(); batch * e];
        run_mlp2(self.trunk.t_fc1, self.trunk.t_fc2, &four_t, &mut t_pre, &mut t_act, &mut e_t);
        let mut d_pre = vec![F::zero(); batch * e];
        let mut d_act = vec![F::zero(); batch * e];
        let mut e_d = vec![F::zero(); batch * e];
        run_mlp2(self.trunk.d_fc1, self.trunk.d_fc2, &four_d, &mut d_pre, &mut d_act, &mut e_d);

        let mut cond = vec![F::zero(); batch * e];
        for i in 0..batch * e {
            cond[i] = e_t[i] + e_d[i];
        }
        let class_vec: Vec<i64> = if class.is_empty() {
            vec![NO_CLASS; batch]
        } else {
            class.to_vec()
        };
        if let Some(table) = self.trunk.class_table {
            let tbl = lay.slice(params, table);
            for i in 0..batch {
                if class_vec[i] != NO_CLASS {
                    let row = &tbl[class_vec[i] as usize * e..(class_vec[i] as usize + 1) * e];
                    for j in 0..e {
                        cond[i * e + j] += row[j];
                    }
                }
            }
        }
        Ok(TrunkCache { four_t, four_d, t_pre, t_act, d_pre, d_act, e_d, cond, class: class_vec })
    }

    fn trunk_backward<F: Scalar>(
        &self,
        params: &[F],
        cache: &TrunkCache<F>,
        dcond: &[F],
        de_d_extra: &[F],
        grads: &mut [F],
        batch: usize,
    ) {
        let e = self.cfg.embed_dim;
        let fdim = 2 * self.cfg.fourier_bands;
        let lay = &self.layout;
        // Class table rows receive the conditioning gradient directly.
        if let Some(table) = self.trunk.class_table {
            let entry = &lay.entries[table.0];
            for i in 0..batch {
                if cache.class[i] != NO_CLASS {
                    let off = entry.offset + cache.class[i] as usize * e;
                    for j in 0..e {
                        grads[off + j] += dcond[i * e + j];
                    }
                }
            }
        }
        // de_t = dcond; de_d = dcond + contributions from interval-aware paths.
        let mut de_d = vec![F::zero(); batch * e];
        for i in 0..batch * e {
            de_d[i] = dcond[i] + de_d_extra[i];
        }
        let back_mlp2 = |fc1: (TensorId, TensorId),
                             fc2: (TensorId, TensorId),
                             input: &[F],
                             pre: &[F],
                             act: &[F],
                             dout: &[F],
                             grads: &mut [F]| {
            let mut dact = vec![F::zero(); batch * e];
            {
                let (w2_entry, b2_entry) = (lay.entries[fc2.0 .0].clone(), lay.entries[fc2.1 .0].clone());
                let w2 = &params[w2_entry.offset..w2_entry.offset + w2_entry.len()];
                let (dw2_part, rest) = split_two(grads, w2_entry.offset, w2_entry.len(), b2_entry.offset, b2_entry.len());
                linear_backward(act, w2, dout, e, e, dw2_part, Some(rest), Some(&mut dact));
            }
            let mut dpre = vec![F::zero(); batch * e];
            silu_backward(pre, &dact, &mut dpre);
            {
                let (w1_entry, b1_entry) = (lay.entries[fc1.0 .0].clone(), lay.entries[fc1.1 .0].clone());
                let w1 = &params[w1_entry.offset..w1_entry.offset + w1_entry.len()];
                let (dw1_part, rest) = split_two(grads, w1_entry.offset, w1_entry.len(), b1_entry.offset, b1_entry.len());
                // No gradient flows into the Fourier features.
                linear_backward(input, w1, &dpre, e, fdim, dw1_part, Some(rest), None);
            }
        };
        back_mlp2(self.trunk.t_fc1, self.trunk.t_fc2, &cache.four_t, &cache.t_pre, &cache.t_act, dcond, grads);
        back_mlp2(self.trunk.d_fc1, self.trunk.d_fc2, &cache.four_d, &cache.d_pre, &cache.d_act, &de_d, grads);
    }
}

/// Disjoint mutable views of a weight/bias pair inside the flat grad array.
pub(crate) fn split_two<'a, F>(
    data: &'a mut [F],
    off_a: usize,
    len_a: usize,
    off_b: usize,
    len_b: usize,
) -> (&'a mut [F], &'a mut [F]) {
    assert!(off_a + len_a <= off_b, "tensor views must be ordered and disjoint");
    let (head, tail) = data.split_at_mut(off_b);
    (&mut head[off_a..off_a + len_a], &mut tail[..len_b])
}

pub(crate) struct TrunkCache<F> {
    four_t: Vec<F>,
    four_d: Vec<F>,
    t_pre: Vec<F>,
    t_act: Vec<F>,
    d_pre: Vec<F>,
    d_act: Vec<F>,
    pub(crate) e_d: Vec<F>,
    pub(crate) cond: Vec<F>,
    class: Vec<i64>,
}

pub(crate) enum BodyCache<F> {
    Mlp(mlp::MlpCache<F>),
    Attn(attn::AttnCache<F>),
}

/// Retained forward state consumed by [`Network::backward`].
pub struct ForwardCache<F> {
    batch: usize,
    x: Vec<F>,
    trunk: TrunkCache<F>,
    body: BodyCache<F>,
}

impl<F> ForwardCache<F> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Adapts a network + parameter set to the f64 [`Evaluator`] interface used
/// by the sampler and the calculus probes. Casting happens at the boundary;
/// the network itself runs in the parameter precision.
pub struct NetEvaluator<'a, F: Scalar> {
    pub net: &'a Network,
    pub params: &'a [F],
    pub spec: &'a TransportSpec,
}

impl<F: Scalar> crate::transition::Evaluator for NetEvaluator<'_, F> {
    fn dim(&self) -> usize {
        self.net.config().input_dim
    }

    fn eval_batch(&self, xs: &[f64], t: f64, r: f64, class: Option<u32>, out: &mut [f64]) {
        let dim = self.net.config().input_dim;
        let n = xs.len() / dim;
        let x: Vec<F> = xs.iter().map(|&v| F::from_f64(v)).collect();
        let tv = vec![t; n];
        let rv = vec![r; n];
        let cls: Vec<i64> = match class {
            Some(c) if self.net.config().n_classes > 0 => vec![c as i64; n],
            _ => Vec::new(),
        };
        let o = self
            .net
            .forward(self.params, self.spec, &x, &tv, &rv, &cls)
            .expect("evaluator probe must stay inside the transport range");
        for (dst, v) in out.iter_mut().zip(o) {
            *dst = v.into_f64();
        }
    }
}

/// `ema <- decay * ema + (1 - decay) * params`, elementwise.
pub fn ema_update<F: Scalar>(ema: &mut [F], params: &[F], decay: f64) -> Result<()> {
    if ema.len() != params.len() {
        return Err(TimError::Layout(format!(
            "ema has {} entries, params {}",
            ema.len(),
            params.len()
        )));
    }
    if !(0.0..=1.0).contains(&decay) {
        return Err(TimError::Config(format!("ema decay {decay} outside [0, 1]")));
    }
    let d = F::from_f64(decay);
    let omd = F::from_f64(1.0 - decay);
    for (e, &p) in ema.iter_mut().zip(params) {
        *e = d * *e + omd * p;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
