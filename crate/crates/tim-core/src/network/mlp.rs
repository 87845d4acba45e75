//! Residual MLP body with per-block AdaLN modulation.
//!
//! Each block: layernorm -> scale/shift from the conditioning embedding ->
//! linear -> SiLU -> linear -> gated residual add. The final projection is
//! zero-initialized.

use super::ops::{
    layernorm_backward, layernorm_forward, linear_backward, linear_forward, silu_backward,
    silu_forward, Scalar,
};
use super::{split_two, LayoutBuilder, NetworkConfig, ParamLayout, TensorId};

pub(crate) struct MlpBlockIdx {
    modp: (TensorId, TensorId),
    fc1: (TensorId, TensorId),
    fc2: (TensorId, TensorId),
}

pub(crate) struct MlpIdx {
    in_proj: (TensorId, TensorId),
    blocks: Vec<MlpBlockIdx>,
    final_mod: (TensorId, TensorId),
    out_proj: (TensorId, TensorId),
}

impl MlpIdx {
    pub(crate) fn build(cfg: &NetworkConfig, b: &mut LayoutBuilder) -> MlpIdx {
        let (w, e, d) = (cfg.width, cfg.embed_dim, cfg.input_dim);
        let in_proj = b.linear("input_proj", w, d);
        let blocks = (0..cfg.depth)
            .map(|i| MlpBlockIdx {
                modp: b.zero_linear(&format!("blocks.{i}.mod"), 3 * w, e),
                fc1: b.linear(&format!("blocks.{i}.fc1"), w, w),
                fc2: b.linear(&format!("blocks.{i}.fc2"), w, w),
            })
            .collect();
        let final_mod = b.zero_linear("final.mod", 2 * w, e);
        let out_proj = b.zero_linear("final.proj", d, w);
        MlpIdx { in_proj, blocks, final_mod, out_proj }
    }
}

pub(crate) struct MlpBlockCache<F> {
    mod_out: Vec<F>,
    ln_hat: Vec<F>,
    rstd: Vec<F>,
    nmod: Vec<F>,
    u1: Vec<F>,
    u1a: Vec<F>,
    u2: Vec<F>,
}

pub(crate) struct MlpCache<F> {
    blocks: Vec<MlpBlockCache<F>>,
    mod_f: Vec<F>,
    ln_hat_f: Vec<F>,
    rstd_f: Vec<F>,
    nmod_f: Vec<F>,
}

pub(crate) fn forward<F: Scalar>(
    cfg: &NetworkConfig,
    lay: &ParamLayout,
    idx: &MlpIdx,
    params: &[F],
    x: &[F],
    cond: &[F],
    batch: usize,
) -> (Vec<F>, MlpCache<F>) {
    let (w, e, d) = (cfg.width, cfg.embed_dim, cfg.input_dim);
    let one = F::one();
    let mut h = vec![F::zero(); batch * w];
    linear_forward(x, lay.slice(params, idx.in_proj.0), Some(lay.slice(params, idx.in_proj.1)), w, d, &mut h);

    let mut blocks = Vec::with_capacity(idx.blocks.len());
    for blk in &idx.blocks {
        let mut mod_out = vec![F::zero(); batch * 3 * w];
        linear_forward(
            cond,
            lay.slice(params, blk.modp.0),
            Some(lay.slice(params, blk.modp.1)),
            3 * w,
            e,
            &mut mod_out,
        );
        let mut ln_hat = vec![F::zero(); batch * w];
        let mut rstd = vec![F::zero(); batch];
        layernorm_forward(&h, w, &mut ln_hat, &mut rstd);
        let mut nmod = vec![F::zero(); batch * w];
        for b in 0..batch {
            let m = &mod_out[b * 3 * w..];
            for i in 0..w {
                nmod[b * w + i] = ln_hat[b * w + i] * (one + m[i]) + m[w + i];
            }
        }
        let mut u1 = vec![F::zero(); batch * w];
        linear_forward(&nmod, lay.slice(params, blk.fc1.0), Some(lay.slice(params, blk.fc1.1)), w, w, &mut u1);
        let mut u1a = vec![F::zero(); batch * w];
        silu_forward(&u1, &mut u1a);
        let mut u2 = vec![F::zero(); batch * w];
        linear_forward(&u1a, lay.slice(params, blk.fc2.0), Some(lay.slice(params, blk.fc2.1)), w, w, &mut u2);
        for b in 0..batch {
            let m = &mod_out[b * 3 * w..];
            for i in 0..w {
                h[b * w + i] += m[2 * w + i] * u2[b * w + i];
            }
        }
        blocks.push(MlpBlockCache { mod_out, ln_hat, rstd, nmod, u1, u1a, u2 });
    }

    let mut mod_f = vec![F::zero(); batch * 2 * w];
    linear_forward(
        cond,
        lay.slice(params, idx.final_mod.0),
        Some(lay.slice(params, idx.final_mod.1)),
        2 * w,
        e,
        &mut mod_f,
    );
    let mut ln_hat_f = vec![F::zero(); batch * w];
    let mut rstd_f = vec![F::zero(); batch];
    layernorm_forward(&h, w, &mut ln_hat_f, &mut rstd_f);
    let mut nmod_f = vec![F::zero(); batch * w];
    for b in 0..batch {
        let m = &mod_f[b * 2 * w..];
        for i in 0..w {
            nmod_f[b * w + i] = ln_hat_f[b * w + i] * (one + m[i]) + m[w + i];
        }
    }
    let mut out = vec![F::zero(); batch * d];
    linear_forward(
        &nmod_f,
        lay.slice(params, idx.out_proj.0),
        Some(lay.slice(params, idx.out_proj.1)),
        d,
        w,
        &mut out,
    );
    (out, MlpCache { blocks, mod_f, ln_hat_f, rstd_f, nmod_f })
}

/// Accumulates parameter gradients into `grads` and the conditioning
/// gradient into `dcond`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<F: Scalar>(
    cfg: &NetworkConfig,
    lay: &ParamLayout,
    idx: &MlpIdx,
    params: &[F],
    x: &[F],
    cond: &[F],
    cache: &MlpCache<F>,
    dout: &[F],
    grads: &mut [F],
    dcond: &mut [F],
) {
    let (w, e, d) = (cfg.width, cfg.embed_dim, cfg.input_dim);
    let one = F::one();
    let batch = dout.len() / d;
    let span = |id: TensorId| {
        let en = &lay.entries[id.0];
        (en.offset, en.len())
    };
    let back_linear = |input: &[F],
                           wb: (TensorId, TensorId),
                           dy: &[F],
                           rows: usize,
                           cols: usize,
                           dx: Option<&mut [F]>,
                           grads: &mut [F]| {
        let (wo, wl) = span(wb.0);
        let (bo, bl) = span(wb.1);
        let wview = &params[wo..wo + wl];
        let (dw, db) = split_two(grads, wo, wl, bo, bl);
        linear_backward(input, wview, dy, rows, cols, dw, Some(db), dx);
    };

    // Final projection and modulation.
    let mut dnmod_f = vec![F::zero(); batch * w];
    back_linear(&cache.nmod_f, idx.out_proj, dout, d, w, Some(&mut dnmod_f), grads);
    let mut dmod_f = vec![F::zero(); batch * 2 * w];
    let mut dln_f = vec![F::zero(); batch * w];
    for b in 0..batch {
        let m = &cache.mod_f[b * 2 * w..];
        for i in 0..w {
            let g = dnmod_f[b * w + i];
            dmod_f[b * 2 * w + i] = g * cache.ln_hat_f[b * w + i];
            dmod_f[b * 2 * w + w + i] = g;
            dln_f[b * w + i] = g * (one + m[i]);
        }
    }
    back_linear(cond, idx.final_mod, &dmod_f, 2 * w, e, Some(dcond), grads);
    let mut dh = vec![F::zero(); batch * w];
    layernorm_backward(&dln_f, &cache.ln_hat_f, &cache.rstd_f, w, &mut dh);

    // Blocks in reverse.
    for (blk, bc) in idx.blocks.iter().zip(&cache.blocks).rev() {
        let mut du2 = vec![F::zero(); batch * w];
        let mut dmod = vec![F::zero(); batch * 3 * w];
        for b in 0..batch {
            let m = &bc.mod_out[b * 3 * w..];
            for i in 0..w {
                let g = dh[b * w + i];
                du2[b * w + i] = g * m[2 * w + i];
                dmod[b * 3 * w + 2 * w + i] = g * bc.u2[b * w + i];
            }
        }
        let mut du1a = vec![F::zero(); batch * w];
        back_linear(&bc.u1a, blk.fc2, &du2, w, w, Some(&mut du1a), grads);
        let mut du1 = vec![F::zero(); batch * w];
        silu_backward(&bc.u1, &du1a, &mut du1);
        let mut dnmod = vec![F::zero(); batch * w];
        back_linear(&bc.nmod, blk.fc1, &du1, w, w, Some(&mut dnmod), grads);
        let mut dln = vec![F::zero(); batch * w];
        for b in 0..batch {
            let m = &bc.mod_out[b * 3 * w..];
            for i in 0..w {
                let g = dnmod[b * w + i];
                dmod[b * 3 * w + i] = g * bc.ln_hat[b * w + i];
                dmod[b * 3 * w + w + i] = g;
                dln[b * w + i] = g * (one + m[i]);
            }
        }
        back_linear(cond, blk.modp, &dmod, 3 * w, e, Some(dcond), grads);
        // Residual: the skip gradient already sits in dh; the layernorm path
        // adds the block contribution.
        layernorm_backward(&dln, &bc.ln_hat, &bc.rstd, w, &mut dh);
    }

    back_linear(x, idx.in_proj, &dh, w, d, None, grads);
}
