//! Scaled dot-product attention, `softmax(Q Kᵀ / sqrt(d_k)) V`.

use super::tensor::{matmul, matmul_at, matmul_bt};
use super::{shape_err, Result, Tensor};

/// Numerically stable in-place softmax over each `cols`-long row.
pub fn softmax_rows(scores: &mut [f64], cols: usize) {
    for row in scores.chunks_mut(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

/// Slice kernel: `q` is `nq×dk`, `k` is `nk×dk`, `v` is `nk×dv`. Returns the
/// output (`nq×dv`) and the attention probabilities (`nq×nk`).
pub(crate) fn sdpa_forward(q: &[f64], k: &[f64], v: &[f64], nq: usize, nk: usize, dk: usize, dv: usize) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.0 / (dk as f64).sqrt();
    let mut probs = matmul_bt(q, k, nq, dk, nk);
    probs.iter_mut().for_each(|s| *s *= scale);
    softmax_rows(&mut probs, nk);
    let out = matmul(&probs, v, nq, nk, dv);
    (out, probs)
}

/// Slice kernel for the backward pass; returns `(dq, dk, dv)`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn sdpa_backward(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    probs: &[f64],
    dout: &[f64],
    nq: usize,
    nk: usize,
    dk: usize,
    dv: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let scale = 1.0 / (dk as f64).sqrt();
    let dv_out = matmul_at(probs, dout, nq, nk, dv);
    let dprobs = matmul_bt(dout, v, nq, dv, nk);
    let mut dscores = vec![0.0; nq * nk];
    for i in 0..nq {
        let p = &probs[i * nk..(i + 1) * nk];
        let dp = &dprobs[i * nk..(i + 1) * nk];
        let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
        for j in 0..nk {
            dscores[i * nk + j] = p[j] * (dp[j] - dot) * scale;
        }
    }
    let dq = matmul(&dscores, k, nq, nk, dk);
    let dk_out = matmul_at(&dscores, q, nq, nk, dk);
    (dq, dk_out, dv_out)
}

fn check(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(usize, usize, usize, usize)> {
    if q.shape().len() != 2 || k.shape().len() != 2 || v.shape().len() != 2 {
        return shape_err("attention operands must be matrices");
    }
    let (nq, dk) = (q.rows(), q.cols());
    if dk == 0 {
        return shape_err("d_k must be at least 1");
    }
    if k.cols() != dk {
        return shape_err(format!("Q has d_k={dk}, K has {}", k.cols()));
    }
    if v.rows() != k.rows() {
        return shape_err(format!("K has {} rows, V has {}", k.rows(), v.rows()));
    }
    Ok((nq, k.rows(), dk, v.cols()))
}

/// Returns the attention output together with the softmax matrix.
pub fn attention_forward(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<(Tensor, Tensor)> {
    let (nq, nk, dk, dv) = check(q, k, v)?;
    let (out, probs) = sdpa_forward(q.data(), k.data(), v.data(), nq, nk, dk, dv);
    Ok((Tensor::matrix(nq, dv, out), Tensor::matrix(nq, nk, probs)))
}

pub fn attention(q: &Tensor, k: &Tensor, v: &Tensor) -> Result<Tensor> {
    attention_forward(q, k, v).map(|(out, _)| out)
}

/// Gradients of a scalar loss with respect to `(Q, K, V)` given the upstream
/// gradient `dout` of the attention output.
pub fn attention_backward(q: &Tensor, k: &Tensor, v: &Tensor, dout: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (nq, nk, dk, dv) = check(q, k, v)?;
    if dout.shape() != [nq, dv] {
        return shape_err(format!("upstream gradient {:?}, expected [{nq}, {dv}]", dout.shape()));
    }
    let (_, probs) = sdpa_forward(q.data(), k.data(), v.data(), nq, nk, dk, dv);
    let (dq, dkk, dvv) = sdpa_backward(q.data(), k.data(), v.data(), &probs, dout.data(), nq, nk, dk, dv);
    Ok((Tensor::matrix(nq, dk, dq), Tensor::matrix(nk, dk, dkk), Tensor::matrix(nk, dv, dvv)))
}
