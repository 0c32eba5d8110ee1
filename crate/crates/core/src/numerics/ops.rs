//! Forward kernels on [`Tensor`]s.

use super::{NumericsError, Tensor};

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> NumericsError {
    NumericsError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn require_matrix(op: &'static str, t: &Tensor) -> Result<(), NumericsError> {
    if t.shape().len() > 2 {
        return Err(NumericsError::Invalid {
            op,
            msg: format!("expected rank <= 2, got {:?}", t.shape()),
        });
    }
    Ok(())
}

/// `a (m x k) * b (k x n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("matmul", a)?;
    require_matrix("matmul", b)?;
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    mm_kernel(a.data(), b.data(), &mut out, m, k, n);
    Tensor::matrix(m, n, out)
}

/// `a (m x k) * b^T` where `b` is `n x k`.
pub fn matmul_t(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("matmul_t", a)?;
    require_matrix("matmul_t", b)?;
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    if k != k2 {
        return Err(mismatch("matmul_t", a, b));
    }
    let mut out = vec![0.0; m * n];
    mmt_kernel(a.data(), b.data(), &mut out, m, k, n);
    Tensor::matrix(m, n, out)
}

/// `a^T * b` where `a` is `k x m` and `b` is `k x n`.
pub fn t_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("t_matmul", a)?;
    require_matrix("t_matmul", b)?;
    let (k, m) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(mismatch("t_matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    tmm_kernel(a.data(), b.data(), &mut out, k, m, n);
    Tensor::matrix(m, n, out)
}

pub(crate) fn mm_kernel(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn mmt_kernel(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

pub(crate) fn tmm_kernel(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let a_row = &a[p * m..(p + 1) * m];
        let b_row = &b[p * n..(p + 1) * n];
        for (i, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn zip_same(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor, NumericsError> {
    if a.len() != b.len() || a.rows() != b.rows() {
        return Err(mismatch(op, a, b));
    }
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    zip_same("add", a, b, |x, y| x + y)
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    zip_same("sub", a, b, |x, y| x - y)
}

/// Elementwise (Hadamard) product.
pub fn hadamard(a: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    zip_same("hadamard", a, b, |x, y| x * y)
}

/// Adds a length-`cols` bias to every row.
pub fn add_row(a: &Tensor, bias: &Tensor) -> Result<Tensor, NumericsError> {
    if bias.len() != a.cols() {
        return Err(mismatch("add_row", a, bias));
    }
    let mut out = a.clone();
    let c = a.cols();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        *v += bias.data()[i % c];
    }
    Ok(out)
}

pub fn scale(a: &Tensor, factor: f64) -> Tensor {
    a.map(|x| x * factor)
}

pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor, NumericsError> {
    let Some(first) = parts.first() else {
        return Err(NumericsError::Invalid {
            op: "concat_cols",
            msg: "no inputs".into(),
        });
    };
    let rows = first.rows();
    for p in parts {
        require_matrix("concat_cols", p)?;
        if p.rows() != rows {
            return Err(mismatch("concat_cols", first, p));
        }
    }
    let cols: usize = parts.iter().map(|p| p.cols()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::matrix(rows, cols, data)
}

pub fn slice_cols(a: &Tensor, start: usize, len: usize) -> Result<Tensor, NumericsError> {
    require_matrix("slice_cols", a)?;
    if start + len > a.cols() {
        return Err(NumericsError::Invalid {
            op: "slice_cols",
            msg: format!("columns {start}..{} out of {}", start + len, a.cols()),
        });
    }
    let mut data = Vec::with_capacity(a.rows() * len);
    for r in 0..a.rows() {
        data.extend_from_slice(&a.row(r)[start..start + len]);
    }
    Tensor::matrix(a.rows(), len, data)
}

pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor, NumericsError> {
    require_matrix("gather_rows", a)?;
    let mut data = Vec::with_capacity(idx.len() * a.cols());
    for &i in idx {
        if i >= a.rows() {
            return Err(NumericsError::Invalid {
                op: "gather_rows",
                msg: format!("row {i} out of {}", a.rows()),
            });
        }
        data.extend_from_slice(a.row(i));
    }
    Tensor::matrix(idx.len(), a.cols(), data)
}

pub fn tanh(a: &Tensor) -> Tensor {
    a.map(f64::tanh)
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(a: &Tensor) -> Tensor {
    a.map(sigmoid_scalar)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du
}

pub fn gelu(a: &Tensor) -> Tensor {
    a.map(gelu_scalar)
}

/// Numerically stable log-sum-exp of a slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

/// Stable softmax of a slice into `out`.
pub fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for (o, &x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        z += *o;
    }
    for o in out.iter_mut() {
        *o /= z;
    }
}

pub fn softmax_rows(a: &Tensor) -> Tensor {
    let mut out = a.clone();
    let c = a.cols();
    for r in 0..a.rows() {
        softmax_into(a.row(r), &mut out.data_mut()[r * c..(r + 1) * c]);
    }
    out
}

/// Log-sum-exp over the rows of `a`, one value per column (`1 x cols`).
pub fn logsumexp_rows(a: &Tensor) -> Result<Tensor, NumericsError> {
    require_matrix("logsumexp_rows", a)?;
    if a.rows() == 0 {
        return Err(NumericsError::Invalid {
            op: "logsumexp_rows",
            msg: "no rows".into(),
        });
    }
    let c = a.cols();
    let mut out = Vec::with_capacity(c);
    let mut col = vec![0.0; a.rows()];
    for j in 0..c {
        for (i, v) in col.iter_mut().enumerate() {
            *v = a.at(i, j);
        }
        out.push(logsumexp(&col));
    }
    Tensor::matrix(1, c, out)
}

/// Row normalization of a nonnegative matrix.
///
/// Each row is divided by `sum + eps`, then renormalized to sum to one. Rows
/// whose mass after the first division is below `min_mass` become uniform.
/// Returns the normalized matrix and a flag per row marking the fallback.
pub fn normalize_rows(a: &Tensor, eps: f64, min_mass: f64) -> (Tensor, Vec<bool>) {
    let mut out = a.clone();
    let c = a.cols();
    let mut fallback = Vec::with_capacity(a.rows());
    for r in 0..a.rows() {
        let row = &mut out.data_mut()[r * c..(r + 1) * c];
        let s: f64 = row.iter().sum();
        let mass = s / (s + eps);
        if !(mass >= min_mass) || s <= 0.0 {
            row.iter_mut().for_each(|v| *v = 1.0 / c as f64);
            fallback.push(true);
        } else {
            let denom = s + eps;
            row.iter_mut().for_each(|v| *v /= denom);
            row.iter_mut().for_each(|v| *v /= mass);
            fallback.push(false);
        }
    }
    (out, fallback)
}

/// Per-row blockwise outer product: for each of `groups` equal column blocks,
/// the flattened `a_block (x) b_block`.
pub fn grouped_outer(a: &Tensor, b: &Tensor, groups: usize) -> Result<Tensor, NumericsError> {
    if a.rows() != b.rows() || a.cols() != b.cols() {
        return Err(mismatch("grouped_outer", a, b));
    }
    let d = a.cols();
    if groups == 0 || d % groups != 0 {
        return Err(NumericsError::Invalid {
            op: "grouped_outer",
            msg: format!("{groups} groups do not divide width {d}"),
        });
    }
    let bs = d / groups;
    let width = groups * bs * bs;
    let mut out = Vec::with_capacity(a.rows() * width);
    for r in 0..a.rows() {
        let (ar, br) = (a.row(r), b.row(r));
        for g in 0..groups {
            for i in 0..bs {
                let av = ar[g * bs + i];
                out.extend(br[g * bs..(g + 1) * bs].iter().map(|&bv| av * bv));
            }
        }
    }
    Tensor::matrix(a.rows(), width, out)
}

/// Row-wise layer normalization with gain and bias.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor, NumericsError> {
    if gain.len() != x.cols() || bias.len() != x.cols() {
        return Err(mismatch("layer_norm", x, gain));
    }
    let c = x.cols();
    let mut out = x.clone();
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let inv = 1.0 / (var + eps).sqrt();
        let o = out.row_mut(r);
        for j in 0..c {
            o[j] = (row[j] - mean) * inv * gain.data()[j] + bias.data()[j];
        }
    }
    Ok(out)
}
