//! Forward/backward kernels shared by the tape and the incremental decoder.

use super::gemm::{gemm, MatRef};
use super::tape::{AttnMask, LAYER_NORM_EPS};
use super::Real;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// Tanh approximation of GELU.
#[inline]
pub fn gelu<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<F: Real>(x: F) -> F {
    let c = F::of(GELU_C);
    let a = F::of(GELU_A);
    let half = F::of(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (F::one() + t) + half * x * (F::one() - t * t) * c * (F::one() + F::of(3.0) * a * x * x)
}

/// Returns `(output, xhat, rstd)`.
pub fn layer_norm_forward<F: Real>(x: &[F], gain: &[F], bias: &[F], d: usize) -> (Vec<F>, Vec<F>, Vec<F>) {
    let rows = x.len() / d;
    let mut out = vec![F::zero(); x.len()];
    let mut xhat = vec![F::zero(); x.len()];
    let mut rstd = vec![F::zero(); rows];
    let inv_d = F::one() / F::of(d as f64);
    let eps = F::of(LAYER_NORM_EPS);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rs = F::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..d {
            let h = (row[j] - mean) * rs;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain[j] + bias[j];
        }
    }
    (out, xhat, rstd)
}

pub fn layer_norm_backward_x<F: Real>(g: &[F], xhat: &[F], rstd: &[F], gain: &[F], d: usize, dx: &mut [F]) {
    let inv_d = F::one() / F::of(d as f64);
    for (r, &rs) in rstd.iter().enumerate() {
        let gr = &g[r * d..(r + 1) * d];
        let xr = &xhat[r * d..(r + 1) * d];
        let mut mean_dxh = F::zero();
        let mut mean_dxh_xh = F::zero();
        for j in 0..d {
            let dxh = gr[j] * gain[j];
            mean_dxh = mean_dxh + dxh;
            mean_dxh_xh = mean_dxh_xh + dxh * xr[j];
        }
        mean_dxh = mean_dxh * inv_d;
        mean_dxh_xh = mean_dxh_xh * inv_d;
        for j in 0..d {
            let dxh = gr[j] * gain[j];
            dx[r * d + j] = dx[r * d + j] + rs * (dxh - mean_dxh - xr[j] * mean_dxh_xh);
        }
    }
}

/// In-place masked softmax of one row; rows with no visible key become zero.
pub fn masked_softmax_row<F: Real>(row: &mut [F], visible: impl Fn(usize) -> bool) {
    let mut max = F::neg_infinity();
    for (j, &v) in row.iter().enumerate() {
        if visible(j) && v > max {
            max = v;
        }
    }
    if max == F::neg_infinity() {
        row.iter_mut().for_each(|v| *v = F::zero());
        return;
    }
    let mut sum = F::zero();
    for (j, v) in row.iter_mut().enumerate() {
        if visible(j) {
            *v = (*v - max).exp();
            sum = sum + *v;
        } else {
            *v = F::zero();
        }
    }
    let inv = F::one() / sum;
    row.iter_mut().for_each(|v| *v = *v * inv);
}

/// Attention weights, laid out `[heads, T, S]`.
#[allow(clippy::too_many_arguments)]
pub fn attention_probs<F: Real>(q: &[F], k: &[F], t: usize, s: usize, d: usize, heads: usize, scale: F, mask: &AttnMask) -> Vec<F> {
    let dh = d / heads;
    let mut probs = vec![F::zero(); heads * t * s];
    for h in 0..heads {
        let p = &mut probs[h * t * s..(h + 1) * t * s];
        gemm(scale, q, MatRef::block(t, d, h * dh, dh), k, MatRef::block(s, d, h * dh, dh).t(), F::zero(), p, MatRef::dense(t, s));
        for i in 0..t {
            masked_softmax_row(&mut p[i * s..(i + 1) * s], |j| mask.allowed(i, j));
        }
    }
    probs
}

pub fn attention_output<F: Real>(probs: &[F], keep: Option<&[F]>, v: &[F], t: usize, s: usize, d: usize, heads: usize) -> Vec<F> {
    let dh = d / heads;
    let mut out = vec![F::zero(); t * d];
    let dropped: Option<Vec<F>> = keep.map(|m| probs.iter().zip(m).map(|(&p, &k)| p * k).collect());
    let p_eff = dropped.as_deref().unwrap_or(probs);
    for h in 0..heads {
        let p = &p_eff[h * t * s..(h + 1) * t * s];
        gemm(F::one(), p, MatRef::dense(t, s), v, MatRef::block(s, d, h * dh, dh), F::zero(), &mut out, MatRef::block(t, d, h * dh, dh));
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct AttnDims {
    pub t: usize,
    pub s: usize,
    pub d: usize,
    pub heads: usize,
}

pub fn attention_backward_v<F: Real>(g: &[F], probs: &[F], keep: Option<&[F]>, dims: AttnDims, dv: &mut [F]) {
    let AttnDims { t, s, d, heads } = dims;
    let dh = d / heads;
    let dropped: Option<Vec<F>> = keep.map(|m| probs.iter().zip(m).map(|(&p, &k)| p * k).collect());
    let p_eff = dropped.as_deref().unwrap_or(probs);
    for h in 0..heads {
        let p = &p_eff[h * t * s..(h + 1) * t * s];
        gemm(F::one(), p, MatRef::dense(t, s).t(), g, MatRef::block(t, d, h * dh, dh), F::one(), dv, MatRef::block(s, d, h * dh, dh));
    }
}

/// Gradient with respect to the pre-softmax scores (before scaling), `[heads, T, S]`.
pub fn attention_score_grad<F: Real>(g: &[F], probs: &[F], keep: Option<&[F]>, v: &[F], dims: AttnDims) -> Vec<F> {
    let AttnDims { t, s, d, heads } = dims;
    let dh = d / heads;
    let mut ds = vec![F::zero(); heads * t * s];
    for h in 0..heads {
        let block = &mut ds[h * t * s..(h + 1) * t * s];
        gemm(F::one(), g, MatRef::block(t, d, h * dh, dh), v, MatRef::block(s, d, h * dh, dh).t(), F::zero(), block, MatRef::dense(t, s));
        if let Some(m) = keep {
            for (x, &k) in block.iter_mut().zip(&m[h * t * s..(h + 1) * t * s]) {
                *x = *x * k;
            }
        }
        let p = &probs[h * t * s..(h + 1) * t * s];
        for i in 0..t {
            let pr = &p[i * s..(i + 1) * s];
            let dr = &mut block[i * s..(i + 1) * s];
            let dot: F = pr.iter().zip(dr.iter()).map(|(&a, &b)| a * b).sum();
            for (x, &pi) in dr.iter_mut().zip(pr) {
                *x = pi * (*x - dot);
            }
        }
    }
    ds
}

pub fn attention_backward_q<F: Real>(ds: &[F], k: &[F], scale: F, dims: AttnDims, dq: &mut [F]) {
    let AttnDims { t, s, d, heads } = dims;
    let dh = d / heads;
    for h in 0..heads {
        let block = &ds[h * t * s..(h + 1) * t * s];
        gemm(scale, block, MatRef::dense(t, s), k, MatRef::block(s, d, h * dh, dh), F::one(), dq, MatRef::block(t, d, h * dh, dh));
    }
}

pub fn attention_backward_k<F: Real>(ds: &[F], q: &[F], scale: F, dims: AttnDims, dk: &mut [F]) {
    let AttnDims { t, s, d, heads } = dims;
    let dh = d / heads;
    for h in 0..heads {
        let block = &ds[h * t * s..(h + 1) * t * s];
        gemm(scale, block, MatRef::dense(t, s).t(), q, MatRef::block(t, d, h * dh, dh), F::one(), dk, MatRef::block(s, d, h * dh, dh));
    }
}

/// Returns the summed (not averaged) masked NLL and the row softmax.
pub fn cross_entropy_forward<F: Real>(logits: &[F], targets: &[usize], mask: &[bool], vocab: usize) -> (F, Vec<F>) {
    let mut probs = vec![F::zero(); logits.len()];
    let mut total = F::zero();
    for (r, (&y, &m)) in targets.iter().zip(mask).enumerate() {
        let row = &logits[r * vocab..(r + 1) * vocab];
        let pr = &mut probs[r * vocab..(r + 1) * vocab];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut sum = F::zero();
        for (p, &l) in pr.iter_mut().zip(row) {
            *p = (l - max).exp();
            sum = sum + *p;
        }
        let inv = F::one() / sum;
        pr.iter_mut().for_each(|p| *p = *p * inv);
        if m {
            // -log softmax_y = log(sum) + max - logit_y
            total = total + sum.ln() + max - row[y];
        }
    }
    (total, probs)
}
