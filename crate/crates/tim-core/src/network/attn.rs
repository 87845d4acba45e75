//! Token-attention body with interval-aware attention: the query, key, and
//! value projections each take an additive contribution from the interval
//! embedding, so spatial mixing is conditioned on the transition length.

use super::ops::{
    layernorm_backward, layernorm_forward, linear_backward, linear_forward, silu_backward,
    silu_forward, softmax_row, softmax_row_backward, Scalar,
};
use super::{split_two, LayoutBuilder, NetworkConfig, ParamLayout, TensorId};

pub(crate) struct AttnBlockIdx {
    modp: (TensorId, TensorId),
    wq: (TensorId, TensorId),
    wk: (TensorId, TensorId),
    wv: (TensorId, TensorId),
    wq_int: TensorId,
    wk_int: TensorId,
    wv_int: TensorId,
    wo: (TensorId, TensorId),
    fc1: (TensorId, TensorId),
    fc2: (TensorId, TensorId),
}

pub(crate) struct AttnIdx {
    tok_proj: (TensorId, TensorId),
    pos: TensorId,
    blocks: Vec<AttnBlockIdx>,
    final_mod: (TensorId, TensorId),
    out_proj: (TensorId, TensorId),
}

impl AttnIdx {
    pub(crate) fn build(cfg: &NetworkConfig, b: &mut LayoutBuilder) -> AttnIdx {
        let (w, e) = (cfg.width, cfg.embed_dim);
        let td = cfg.token_dim();
        let m = 2 * w;
        let tok_proj = b.linear("token_proj", w, td);
        let pos = b.add("pos_embed", &[cfg.n_tokens, w], super::InitKind::SmallNormal);
        let blocks = (0..cfg.depth)
            .map(|i| AttnBlockIdx {
                modp: b.zero_linear(&format!("blocks.{i}.mod"), 6 * w, e),
                wq: b.linear(&format!("blocks.{i}.attn.wq"), w, w),
                wk: b.linear(&format!("blocks.{i}.attn.wk"), w, w),
                wv: b.linear(&format!("blocks.{i}.attn.wv"), w, w),
                wq_int: b
                    .add(format!("blocks.{i}.attn.wq_int.weight"), &[w, e], super::InitKind::FanIn(e)),
                wk_int: b
                    .add(format!("blocks.{i}.attn.wk_int.weight"), &[w, e], super::InitKind::FanIn(e)),
                wv_int: b
                    .add(format!("blocks.{i}.attn.wv_int.weight"), &[w, e], super::InitKind::FanIn(e)),
                wo: b.linear(&format!("blocks.{i}.attn.wo"), w, w),
                fc1: b.linear(&format!("blocks.{i}.mlp.fc1"), m, w),
                fc2: b.linear(&format!("blocks.{i}.mlp.fc2"), w, m),
            })
            .collect();
        let final_mod = b.zero_linear("final.mod", 2 * w, e);
        let out_proj = b.zero_linear("final.proj", td, w);
        AttnIdx { tok_proj, pos, blocks, final_mod, out_proj }
    }
}

pub(crate) struct AttnBlockCache<F> {
    mod_out: Vec<F>,
    ln_hat1: Vec<F>,
    rstd1: Vec<F>,
    nmod1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    att: Vec<F>,
    ctx: Vec<F>,
    attn_out: Vec<F>,
    ln_hat2: Vec<F>,
    rstd2: Vec<F>,
    nmod2: Vec<F>,
    m1: Vec<F>,
    m1a: Vec<F>,
    m2: Vec<F>,
}

pub(crate) struct AttnCache<F> {
    blocks: Vec<AttnBlockCache<F>>,
    mod_f: Vec<F>,
    ln_hat_f: Vec<F>,
    rstd_f: Vec<F>,
    nmod_f: Vec<F>,
}

/// Applies per-sample scale/shift (broadcast across tokens).
fn modulate<F: Scalar>(
    ln_hat: &[F],
    mod_out: &[F],
    mod_stride: usize,
    scale_off: usize,
    shift_off: usize,
    batch: usize,
    n_tokens: usize,
    w: usize,
    out: &mut [F],
) {
    let one = F::one();
    for b in 0..batch {
        let m = &mod_out[b * mod_stride..];
        for n in 0..n_tokens {
            let row = (b * n_tokens + n) * w;
            for i in 0..w {
                out[row + i] = ln_hat[row + i] * (one + m[scale_off + i]) + m[shift_off + i];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn forward<F: Scalar>(
    cfg: &NetworkConfig,
    lay: &ParamLayout,
    idx: &AttnIdx,
    params: &[F],
    x: &[F],
    cond: &[F],
    e_d: &[F],
    batch: usize,
) -> (Vec<F>, AttnCache<F>) {
    let (w, e) = (cfg.width, cfg.embed_dim);
    let (nt, td, heads) = (cfg.n_tokens, cfg.token_dim(), cfg.n_heads);
    let hd = w / heads;
    let m = 2 * w;
    let rows = batch * nt;
    let inv_sqrt = F::from_f64(1.0 / (hd as f64).sqrt());

    // Tokenize: per-token projection plus learned position embedding.
    let mut z = vec![F::zero(); rows * w];
    linear_forward(x, lay.slice(params, idx.tok_proj.0), Some(lay.slice(params, idx.tok_proj.1)), w, td, &mut z);
    let pos = lay.slice(params, idx.pos);
    for b in 0..batch {
        for n in 0..nt {
            let row = (b * nt + n) * w;
            for i in 0..w {
                z[row + i] += pos[n * w + i];
            }
        }
    }

    let mut blocks = Vec::with_capacity(idx.blocks.len());
    for blk in &idx.blocks {
        let mut mod_out = vec![F::zero(); batch * 6 * w];
        linear_forward(cond, lay.slice(params, blk.modp.0), Some(lay.slice(params, blk.modp.1)), 6 * w, e, &mut mod_out);

        let mut ln_hat1 = vec![F::zero(); rows * w];
        let mut rstd1 = vec![F::zero(); rows];
        layernorm_forward(&z, w, &mut ln_hat1, &mut rstd1);
        let mut nmod1 = vec![F::zero(); rows * w];
        modulate(&ln_hat1, &mod_out, 6 * w, 0, w, batch, nt, w, &mut nmod1);

        // Projections with the additive interval term.
        let project = |wb: (TensorId, TensorId), w_int: TensorId, out: &mut Vec<F>| {
            linear_forward(&nmod1, lay.slice(params, wb.0), Some(lay.slice(params, wb.1)), w, w, out);
            let mut int_term = vec![F::zero(); batch * w];
            linear_forward(e_d, lay.slice(params, w_int), None, w, e, &mut int_term);
            for b in 0..batch {
                for n in 0..nt {
                    let row = (b * nt + n) * w;
                    for i in 0..w {
                        out[row + i] += int_term[b * w + i];
                    }
                }
            }
        };
        let mut q = vec![F::zero(); rows * w];
        project(blk.wq, blk.wq_int, &mut q);
        let mut k = vec![F::zero(); rows * w];
        project(blk.wk, blk.wk_int, &mut k);
        let mut v = vec![F::zero(); rows * w];
        project(blk.wv, blk.wv_int, &mut v);

        // Scaled dot-product attention per head.
        let mut att = vec![F::zero(); batch * heads * nt * nt];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..nt {
                    let qrow = &q[(b * nt + i) * w + h * hd..][..hd];
                    let arow = &mut att[((b * heads + h) * nt + i) * nt..][..nt];
                    for j in 0..nt {
                        let krow = &k[(b * nt + j) * w + h * hd..][..hd];
                        let mut dot = F::zero();
                        for d in 0..hd {
                            dot += qrow[d] * krow[d];
                        }
                        arow[j] = dot * inv_sqrt;
                    }
                    softmax_row(arow);
                }
            }
        }
        let mut ctx = vec![F::zero(); rows * w];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..nt {
                    let arow = &att[((b * heads + h) * nt + i) * nt..][..nt];
                    let crow = &mut ctx[(b * nt + i) * w + h * hd..][..hd];
                    for j in 0..nt {
                        let vrow = &v[(b * nt + j) * w + h * hd..][..hd];
                        let a = arow[j];
                        for d in 0..hd {
                            crow[d] += a * vrow[d];
                        }
                    }
                }
            }
        }
        let mut attn_out = vec![F::zero(); rows * w];
        linear_forward(&ctx, lay.slice(params, blk.wo.0), Some(lay.slice(params, blk.wo.1)), w, w, &mut attn_out);
        for b in 0..batch {
            let g = &mod_out[b * 6 * w + 2 * w..][..w];
            for n in 0..nt {
                let row = (b * nt + n) * w;
                for i in 0..w {
                    z[row + i] += g[i] * attn_out[row + i];
                }
            }
        }

        // Feed-forward half.
        let mut ln_hat2 = vec![F::zero(); rows * w];
        let mut rstd2 = vec![F::zero(); rows];
        layernorm_forward(&z, w, &mut ln_hat2, &mut rstd2);
        let mut nmod2 = vec![F::zero(); rows * w];
        modulate(&ln_hat2, &mod_out, 6 * w, 3 * w, 4 * w, batch, nt, w, &mut nmod2);
        let mut m1 = vec![F::zero(); rows * m];
        linear_forward(&nmod2, lay.slice(params, blk.fc1.0), Some(lay.slice(params, blk.fc1.1)), m, w, &mut m1);
        let mut m1a = vec![F::zero(); rows * m];
        silu_forward(&m1, &mut m1a);
        let mut m2 = vec![F::zero(); rows * w];
        linear_forward(&m1a, lay.slice(params, blk.fc2.0), Some(lay.slice(params, blk.fc2.1)), w, m, &mut m2);
        for b in 0..batch {
            let g = &mod_out[b * 6 * w + 5 * w..][..w];
            for n in 0..nt {
                let row = (b * nt + n) * w;
                for i in 0..w {
                    z[row + i] += g[i] * m2[row + i];
                }
            }
        }

        blocks.push(AttnBlockCache {
            mod_out,
            ln_hat1,
            rstd1,
            nmod1,
            q,
            k,
            v,
            att,
            ctx,
            attn_out,
            ln_hat2,
            rstd2,
            nmod2,
            m1,
            m1a,
            m2,
        });
    }

    let mut mod_f = vec![F::zero(); batch * 2 * w];
    linear_forward(cond, lay.slice(params, idx.final_mod.0), Some(lay.slice(params, idx.final_mod.1)), 2 * w, e, &mut mod_f);
    let mut ln_hat_f = vec![F::zero(); rows * w];
    let mut rstd_f = vec![F::zero(); rows];
    layernorm_forward(&z, w, &mut ln_hat_f, &mut rstd_f);
    let mut nmod_f = vec![F::zero(); rows * w];
    modulate(&ln_hat_f, &mod_f, 2 * w, 0, w, batch, nt, w, &mut nmod_f);
    let mut out = vec![F::zero(); rows * td];
    linear_forward(&nmod_f, lay.slice(params, idx.out_proj.0), Some(lay.slice(params, idx.out_proj.1)), td, w, &mut out);
    (out, AttnCache { blocks, mod_f, ln_hat_f, rstd_f, nmod_f })
}

/// Backward of the modulation broadcast: accumulates scale/shift gradients
/// (summed over tokens) and returns the layernorm-output gradient.
#[allow(clippy::too_many_arguments)]
fn modulate_backward<F: Scalar>(
    dnmod: &[F],
    ln_hat: &[F],
    mod_out: &[F],
    mod_stride: usize,
    scale_off: usize,
    shift_off: usize,
    dmod: &mut [F],
    batch: usize,
    n_tokens: usize,
    w: usize,
    dln: &mut [F],
) {
    let one = F::one();
    for b in 0..batch {
        let m = &mod_out[b * mod_stride..];
        let dm = &mut dmod[b * mod_stride..];
        for n in 0..n_tokens {
            let row = (b * n_tokens + n) * w;
            for i in 0..w {
                let g = dnmod[row + i];
                dm[scale_off + i] += g * ln_hat[row + i];
                dm[shift_off + i] += g;
                dln[row + i] = g * (one + m[scale_off + i]);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn backward<F: Scalar>(
    cfg: &NetworkConfig,
    lay: &ParamLayout,
    idx: &AttnIdx,
    params: &[F],
    x: &[F],
    cond: &[F],
    e_d: &[F],
    cache: &AttnCache<F>,
    dout: &[F],
    grads: &mut [F],
    dcond: &mut [F],
    de_d_extra: &mut [F],
) {
    let (w, e) = (cfg.width, cfg.embed_dim);
    let (nt, td, heads) = (cfg.n_tokens, cfg.token_dim(), cfg.n_heads);
    let hd = w / heads;
    let m = 2 * w;
    let rows = batch_rows(dout.len(), td, nt);
    let batch = rows / nt;
    let inv_sqrt = F::from_f64(1.0 / (hd as f64).sqrt());
    let span = |id: TensorId| {
        let en = &lay.entries[id.0];
        (en.offset, en.len())
    };
    let back_linear = |input: &[F],
                           wb: (TensorId, TensorId),
                           dy: &[F],
                           rows_: usize,
                           cols: usize,
                           dx: Option<&mut [F]>,
                           grads: &mut [F]| {
        let (wo, wl) = span(wb.0);
        let (bo, bl) = span(wb.1);
        let wview = &params[wo..wo + wl];
        let (dw, db) = split_two(grads, wo, wl, bo, bl);
        linear_backward(input, wview, dy, rows_, cols, dw, Some(db), dx);
    };

    // Final projection, modulation, layernorm.
    let mut dnmod_f = vec![F::zero(); rows * w];
    back_linear(&cache.nmod_f, idx.out_proj, dout, td, w, Some(&mut dnmod_f), grads);
    let mut dmod_f = vec![F::zero(); batch * 2 * w];
    let mut dln_f = vec![F::zero(); rows * w];
    modulate_backward(&dnmod_f, &cache.ln_hat_f, &cache.mod_f, 2 * w, 0, w, &mut dmod_f, batch, nt, w, &mut dln_f);
    back_linear(cond, idx.final_mod, &dmod_f, 2 * w, e, Some(dcond), grads);
    let mut dz = vec![F::zero(); rows * w];
    layernorm_backward(&dln_f, &cache.ln_hat_f, &cache.rstd_f, w, &mut dz);

    for (blk, bc) in idx.blocks.iter().zip(&cache.blocks).rev() {
        let mut dmod = vec![F::zero(); batch * 6 * w];

        // Feed-forward residual.
        let mut dm2 = vec![F::zero(); rows * w];
        for b in 0..batch {
            let g = &bc.mod_out[b * 6 * w + 5 * w..][..w];
            let dg = &mut dmod[b * 6 * w + 5 * w..][..w];
            for n in 0..nt {
                let row = (b * nt + n) * w;
                for i in 0..w {
                    dm2[row + i] = dz[row + i] * g[i];
                    dg[i] += dz[row + i] * bc.m2[row + i];
                }
            }
        }
        let mut dm1a = vec![F::zero(); rows * m];
        back_linear(&bc.m1a, blk.fc2, &dm2, w, m, Some(&mut dm1a), grads);
        let mut dm1 = vec![F::zero(); rows * m];
        silu_backward(&bc.m1, &dm1a, &mut dm1);
        let mut dnmod2 = vec![F::zero(); rows * w];
        back_linear(&bc.nmod2, blk.fc1, &dm1, m, w, Some(&mut dnmod2), grads);
        let mut dln2 = vec![F::zero(); rows * w];
        modulate_backward(&dnmod2, &bc.ln_hat2, &bc.mod_out, 6 * w, 3 * w, 4 * w, &mut dmod, batch, nt, w, &mut dln2);
        layernorm_backward(&dln2, &bc.ln_hat2, &bc.rstd2, w, &mut dz);

        // Attention residual.
        let mut dattn_out = vec![F::zero(); rows * w];
        for b in 0..batch {
            let g = &bc.mod_out[b * 6 * w + 2 * w..][..w];
            let dg_range = &mut dmod[b * 6 * w + 2 * w..][..w];
            for n in 0..nt {
                let row = (b * nt + n) * w;
                for i in 0..w {
                    dattn_out[row + i] = dz[row + i] * g[i];
                    dg_range[i] += dz[row + i] * bc.attn_out[row + i];
                }
            }
        }
        let mut dctx = vec![F::zero(); rows * w];
        back_linear(&bc.ctx, blk.wo, &dattn_out, w, w, Some(&mut dctx), grads);

        // Attention core.
        let mut dq = vec![F::zero(); rows * w];
        let mut dk = vec![F::zero(); rows * w];
        let mut dv = vec![F::zero(); rows * w];
        let mut datt_row = vec![F::zero(); nt];
        let mut dscore_row = vec![F::zero(); nt];
        for b in 0..batch {
            for h in 0..heads {
                for i in 0..nt {
                    let arow = &bc.att[((b * heads + h) * nt + i) * nt..][..nt];
                    let dcrow = &dctx[(b * nt + i) * w + h * hd..][..hd];
                    for j in 0..nt {
                        let vrow = &bc.v[(b * nt + j) * w + h * hd..][..hd];
                        let mut dot = F::zero();
                        for d in 0..hd {
                            dot += dcrow[d] * vrow[d];
                        }
                        datt_row[j] = dot;
                        let dvrow = &mut dv[(b * nt + j) * w + h * hd..][..hd];
                        let a = arow[j];
                        for d in 0..hd {
                            dvrow[d] += a * dcrow[d];
                        }
                    }
                    softmax_row_backward(arow, &datt_row, &mut dscore_row);
                    let qrow_off = (b * nt + i) * w + h * hd;
                    for j in 0..nt {
                        let s = dscore_row[j] * inv_sqrt;
                        let krow = &bc.k[(b * nt + j) * w + h * hd..][..hd];
                        let dkrow_off = (b * nt + j) * w + h * hd;
                        for d in 0..hd {
                            dq[qrow_off + d] += s * krow[d];
                            dk[dkrow_off + d] += s * bc.q[qrow_off + d];
                        }
                    }
                }
            }
        }

        // Projection backward, including the interval paths.
        let mut dnmod1 = vec![F::zero(); rows * w];
        let mut project_back = |wb: (TensorId, TensorId),
                                w_int: TensorId,
                                dproj: &[F],
                                dnmod1: &mut [F],
                                grads: &mut [F]| {
            back_linear(&bc.nmod1, wb, dproj, w, w, Some(dnmod1), grads);
            // Interval term broadcast over tokens: reduce token gradients per
            // sample, then run the plain linear backward against e_d.
            let mut rowsum = vec![F::zero(); batch * w];
            for b in 0..batch {
                for n in 0..nt {
                    let row = (b * nt + n) * w;
                    for i in 0..w {
                        rowsum[b * w + i] += dproj[row + i];
                    }
                }
            }
            let (io, il) = span(w_int);
            let wview = &params[io..io + il];
            let dw_int = &mut grads[io..io + il];
            linear_backward(e_d, wview, &rowsum, w, e, dw_int, None, Some(&mut de_d_extra[..]));
        };
        project_back(blk.wq, blk.wq_int, &dq, &mut dnmod1, grads);
        project_back(blk.wk, blk.wk_int, &dk, &mut dnmod1, grads);
        project_back(blk.wv, blk.wv_int, &dv, &mut dnmod1, grads);

        let mut dln1 = vec![F::zero(); rows * w];
        modulate_backward(&dnmod1, &bc.ln_hat1, &bc.mod_out, 6 * w, 0, w, &mut dmod, batch, nt, w, &mut dln1);
        layernorm_backward(&dln1, &bc.ln_hat1, &bc.rstd1, w, &mut dz);

        back_linear(cond, blk.modp, &dmod, 6 * w, e, Some(dcond), grads);
    }

    // Position embedding and token projection.
    {
        let (po, pl) = span(idx.pos);
        let dpos = &mut grads[po..po + pl];
        for b in 0..batch {
            for n in 0..nt {
                let row = (b * nt + n) * w;
                for i in 0..w {
                    dpos[n * w + i] += dz[row + i];
                }
            }
        }
    }
    back_linear(x, idx.tok_proj, &dz, w, td, None, grads);
}

fn batch_rows(dout_len: usize, td: usize, nt: usize) -> usize {
    let total_tokens = dout_len / td;
    debug_assert_eq!(total_tokens % nt, 0);
    total_tokens
}
