//! Scalar abstraction and the forward/backward primitives the backbones are
//! assembled from: affine maps, layer norm, SiLU, softmax, Fourier features.

use num_traits::{Float, NumAssign};
use std::fmt::{Debug, Display};
use std::iter::Sum;

/// Float type the network runs in. Training uses `f32`; gradient checks
/// instantiate the same code at `f64` so finite differences are trustworthy.
pub trait Scalar:
    Float + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    #[inline]
    fn from_f64(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("f64 -> scalar cast")
    }
    #[inline]
    fn into_f64(self) -> f64 {
        self.to_f64().expect("scalar -> f64 cast")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Dot product with eight independent fused accumulators so the reduction
/// vectorizes; the summation order is fixed and deterministic.
#[inline]
fn dot<F: Scalar>(a: &[F], b: &[F]) -> F {
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let k = i * 8;
        for j in 0..8 {
            acc[j] = a[k + j].mul_add(b[k + j], acc[j]);
        }
    }
    let mut tail = F::zero();
    for i in chunks * 8..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    let half = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    half + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `out[b] = x[b] . w[o] + bias[o]` with `w` stored row-major `[rows x cols]`.
pub fn linear_forward<F: Scalar>(
    x: &[F],
    w: &[F],
    bias: Option<&[F]>,
    rows: usize,
    cols: usize,
    out: &mut [F],
) {
    let batch = x.len() / cols;
    debug_assert_eq!(w.len(), rows * cols);
    debug_assert_eq!(out.len(), batch * rows);
    for b in 0..batch {
        let xr = &x[b * cols..(b + 1) * cols];
        let or = &mut out[b * rows..(b + 1) * rows];
        for o in 0..rows {
            let wr = &w[o * cols..(o + 1) * cols];
            let acc = dot(xr, wr);
            or[o] = match bias {
                Some(bvec) => acc + bvec[o],
                None => acc,
            };
        }
    }
}

/// Accumulates `dw`, `dbias`, and (optionally) `dx` for [`linear_forward`].
pub fn linear_backward<F: Scalar>(
    x: &[F],
    w: &[F],
    dy: &[F],
    rows: usize,
    cols: usize,
    dw: &mut [F],
    dbias: Option<&mut [F]>,
    dx: Option<&mut [F]>,
) {
    let batch = x.len() / cols;
    debug_assert_eq!(dy.len(), batch * rows);
    for b in 0..batch {
        let xr = &x[b * cols..(b + 1) * cols];
        let dyr = &dy[b * rows..(b + 1) * rows];
        for o in 0..rows {
            let g = dyr[o];
            if g != F::zero() {
                let dwr = &mut dw[o * cols..(o + 1) * cols];
                for i in 0..cols {
                    dwr[i] += g * xr[i];
                }
            }
        }
    }
    if let Some(db) = dbias {
        for b in 0..batch {
            let dyr = &dy[b * rows..(b + 1) * rows];
            for o in 0..rows {
                db[o] += dyr[o];
            }
        }
    }
    if let Some(dx) = dx {
        for b in 0..batch {
            let dyr = &dy[b * rows..(b + 1) * rows];
            let dxr = &mut dx[b * cols..(b + 1) * cols];
            for o in 0..rows {
                let g = dyr[o];
                if g != F::zero() {
                    let wr = &w[o * cols..(o + 1) * cols];
                    for i in 0..cols {
                        dxr[i] += g * wr[i];
                    }
                }
            }
        }
    }
}

/// Row-wise layer normalization without learned affine parameters.
///
/// Writes the normalized rows into `x_hat` and the reciprocal standard
/// deviations into `rstd` (one per row); both are needed by the backward.
pub fn layernorm_forward<F: Scalar>(x: &[F], width: usize, x_hat: &mut [F], rstd: &mut [F]) {
    let eps = F::from_f64(1e-5);
    let rows = x.len() / width;
    let wf = F::from_f64(width as f64);
    for r in 0..rows {
        let xr = &x[r * width..(r + 1) * width];
        let mut mean = F::zero();
        for &v in xr {
            mean += v;
        }
        mean = mean / wf;
        let mut var = F::zero();
        for &v in xr {
            let d = v - mean;
            var += d * d;
        }
        var = var / wf;
        let rs = (var + eps).sqrt().recip();
        rstd[r] = rs;
        let hr = &mut x_hat[r * width..(r + 1) * width];
        for i in 0..width {
            hr[i] = (xr[i] - mean) * rs;
        }
    }
}

/// Backward of [`layernorm_forward`]: accumulates `dx` from `dy = dL/dx_hat`.
pub fn layernorm_backward<F: Scalar>(
    dy: &[F],
    x_hat: &[F],
    rstd: &[F],
    width: usize,
    dx: &mut [F],
) {
    let rows = dy.len() / width;
    let wf = F::from_f64(width as f64);
    for r in 0..rows {
        let dyr = &dy[r * width..(r + 1) * width];
        let hr = &x_hat[r * width..(r + 1) * width];
        let mut mean_dy = F::zero();
        let mut mean_dyh = F::zero();
        for i in 0..width {
            mean_dy += dyr[i];
            mean_dyh += dyr[i] * hr[i];
        }
        mean_dy = mean_dy / wf;
        mean_dyh = mean_dyh / wf;
        let dxr = &mut dx[r * width..(r + 1) * width];
        for i in 0..width {
            dxr[i] += rstd[r] * (dyr[i] - mean_dy - hr[i] * mean_dyh);
        }
    }
}

#[inline]
pub fn silu<F: Scalar>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

/// d silu(x)/dx = s(x) (1 + x (1 - s(x))) with s the logistic sigmoid.
#[inline]
pub fn silu_grad<F: Scalar>(x: F) -> F {
    let s = F::one() / (F::one() + (-x).exp());
    s * (F::one() + x * (F::one() - s))
}

pub fn silu_forward<F: Scalar>(x: &[F], out: &mut [F]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = silu(v);
    }
}

/// Accumulates `dx += dy * silu'(x)`.
pub fn silu_backward<F: Scalar>(x: &[F], dy: &[F], dx: &mut [F]) {
    for i in 0..x.len() {
        dx[i] += dy[i] * silu_grad(x[i]);
    }
}

/// In-place softmax over a contiguous row.
pub fn softmax_row<F: Scalar>(row: &mut [F]) {
    let mut max = row[0];
    for &v in row.iter() {
        if v > max {
            max = v;
        }
    }
    let mut sum = F::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = sum.recip();
    for v in row.iter_mut() {
        *v = *v * inv;
    }
}

/// Softmax backward for one row: `ds = p * (dp - <dp, p>)`.
pub fn softmax_row_backward<F: Scalar>(p: &[F], dp: &[F], ds: &mut [F]) {
    let mut dot = F::zero();
    for i in 0..p.len() {
        dot += dp[i] * p[i];
    }
    for i in 0..p.len() {
        ds[i] = p[i] * (dp[i] - dot);
    }
}

/// Geometric frequency ladder shared by both time encoders.
pub fn fourier_frequencies(bands: usize) -> Vec<f64> {
    const OMEGA_MIN: f64 = 0.5;
    const OMEGA_MAX: f64 = 1000.0;
    (0..bands)
        .map(|k| {
            if bands == 1 {
                OMEGA_MIN
            } else {
                OMEGA_MIN * (OMEGA_MAX / OMEGA_MIN).powf(k as f64 / (bands - 1) as f64)
            }
        })
        .collect()
}

/// Sine/cosine features of a scalar input: `[sin(w_k u), cos(w_k u)]_k`.
/// Computed in f64 and cast, since no gradient flows into the time inputs.
pub fn fourier_features<F: Scalar>(u: f64, freqs: &[f64], out: &mut [F]) {
    debug_assert_eq!(out.len(), 2 * freqs.len());
    for (k, &w) in freqs.iter().enumerate() {
        let (s, c) = (w * u).sin_cos();
        out[2 * k] = F::from_f64(s);
        out[2 * k + 1] = F::from_f64(c);
    }
}
