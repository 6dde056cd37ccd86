//! Forward primitives over 2-D buffers. Every primitive checks shapes up front
//! and rejects non-finite outputs.

use super::{NnError, TensorBuffer};

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn mismatch(op: &'static str, detail: String) -> NnError {
    NnError::ShapeMismatch { op, detail }
}

fn finish(op: &'static str, rows: usize, cols: usize, values: Vec<f64>) -> Result<TensorBuffer, NnError> {
    let out = TensorBuffer::matrix(rows, cols, values)?;
    out.ensure_finite(op)?;
    Ok(out)
}

/// `a [m x k] * b [k x n]`.
pub fn matmul(a: &TensorBuffer, b: &TensorBuffer) -> Result<TensorBuffer, NnError> {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    if b.rows() != k {
        return Err(mismatch("matmul", format!("{m}x{k} * {}x{n}", b.rows())));
    }
    let mut out = vec![0.0; m * n];
    matmul_into(a.values(), b.values(), &mut out, m, k, n);
    finish("matmul", m, n, out)
}

/// `a [m x k] * b^T` where `b` is `[n x k]`.
pub fn matmul_transposed(a: &TensorBuffer, b: &TensorBuffer) -> Result<TensorBuffer, NnError> {
    let (m, k, n) = (a.rows(), a.cols(), b.rows());
    if b.cols() != k {
        return Err(mismatch("matmul_transposed", format!("{m}x{k} * ({n}x{})^T", b.cols())));
    }
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let ar = &a.values()[i * k..(i + 1) * k];
        for j in 0..n {
            let br = &b.values()[j * k..(j + 1) * k];
            out[i * n + j] = dot(ar, br);
        }
    }
    finish("matmul_transposed", m, n, out)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Accumulates `a [m x k] * b [k x n]` into `out`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Adds a bias row to every row of `a`.
pub fn add_bias(a: &TensorBuffer, bias: &TensorBuffer) -> Result<TensorBuffer, NnError> {
    let (m, n) = (a.rows(), a.cols());
    if bias.len() != n {
        return Err(mismatch("add_bias", format!("{m}x{n} + bias of {}", bias.len())));
    }
    let mut out = a.values().to_vec();
    for row in out.chunks_mut(n) {
        for (o, b) in row.iter_mut().zip(bias.values()) {
            *o += b;
        }
    }
    finish("add_bias", m, n, out)
}

/// Row-wise normalization followed by an elementwise affine map.
pub fn layer_norm(x: &TensorBuffer, gain: &TensorBuffer, bias: &TensorBuffer) -> Result<TensorBuffer, NnError> {
    Ok(layer_norm_parts(x, gain, bias)?.0)
}

pub(crate) fn layer_norm_parts(
    x: &TensorBuffer,
    gain: &TensorBuffer,
    bias: &TensorBuffer,
) -> Result<(TensorBuffer, Vec<f64>, Vec<f64>), NnError> {
    let (m, n) = (x.rows(), x.cols());
    if gain.len() != n || bias.len() != n {
        return Err(mismatch(
            "layer_norm",
            format!("width {n} with gain {} / bias {}", gain.len(), bias.len()),
        ));
    }
    let (xhat, rstd) = normalize_rows(x);
    let out = xhat
        .chunks(n)
        .flat_map(|row| {
            row.iter()
                .zip(gain.values().iter().zip(bias.values()))
                .map(|(h, (g, b))| h * g + b)
        })
        .collect();
    Ok((finish("layer_norm", m, n, out)?, xhat, rstd))
}

/// Zero-mean, unit-variance rows and the per-row inverse std.
pub(crate) fn normalize_rows(x: &TensorBuffer) -> (Vec<f64>, Vec<f64>) {
    let (m, n) = (x.rows(), x.cols());
    let mut xhat = vec![0.0; m * n];
    let mut rstd = vec![0.0; m];
    for r in 0..m {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd[r] = inv;
        for c in 0..n {
            xhat[r * n + c] = (row[c] - mean) * inv;
        }
    }
    (xhat, rstd)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

pub(crate) fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_derivative(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
}

/// GELU, tanh approximation.
pub fn gelu(x: &TensorBuffer) -> Result<TensorBuffer, NnError> {
    let out = x.values().iter().map(|&v| gelu_scalar(v)).collect();
    finish("gelu", x.rows(), x.cols(), out)
}

/// Row-wise softmax; each row is shifted by its maximum first.
pub fn softmax_rows(x: &TensorBuffer) -> Result<TensorBuffer, NnError> {
    let (m, n) = (x.rows(), x.cols());
    let mut out = Vec::with_capacity(m * n);
    for r in 0..m {
        out.extend(softmax(x.row(r)));
    }
    finish("softmax_rows", m, n, out)
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `softmax(q k^T / sqrt(d)) v`; returns the output and the attention weights.
pub fn scaled_dot_attention(
    q: &TensorBuffer,
    k: &TensorBuffer,
    v: &TensorBuffer,
) -> Result<(TensorBuffer, TensorBuffer), NnError> {
    if k.rows() != v.rows() {
        return Err(mismatch(
            "scaled_dot_attention",
            format!("{} keys vs {} values", k.rows(), v.rows()),
        ));
    }
    let scores = matmul_transposed(q, k)?;
    let scale = 1.0 / (q.cols() as f64).sqrt();
    let scaled: Vec<f64> = scores.values().iter().map(|s| s * scale).collect();
    let weights = softmax_rows(&TensorBuffer::matrix(scores.rows(), scores.cols(), scaled)?)?;
    let out = matmul(&weights, v)?;
    Ok((out, weights))
}

/// Gathers rows of `table` by id.
pub fn embedding_lookup(table: &TensorBuffer, ids: &[usize]) -> Result<TensorBuffer, NnError> {
    let (rows, d) = (table.rows(), table.cols());
    if ids.is_empty() {
        return Err(mismatch("embedding_lookup", "no ids".into()));
    }
    let mut out = Vec::with_capacity(ids.len() * d);
    for &id in ids {
        if id >= rows {
            return Err(NnError::IndexOutOfRange { index: id, len: rows });
        }
        out.extend_from_slice(table.row(id));
    }
    finish("embedding_lookup", ids.len(), d, out)
}
