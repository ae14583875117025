//! Dense numeric primitives shared by the model, decoder and trainer.
//!
//! Everything here is a pure function of its inputs. Reductions always run
//! left to right in index order so that two calls over the same values
//! produce the same bits, which the exact-equality checks in the model
//! depend on.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Scalar type used throughout the crate.
pub type Real = f64;

/// Epsilon used by every RMS normalization in the model.
pub const RMS_EPS: Real = 1e-6;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<Real>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<Real>) -> Result<Self> {
        if data.len() != rows * cols {
            return invalid(format!(
                "matrix data has {} entries, expected {rows}x{cols}",
                data.len()
            ));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return invalid("matrix contains non-finite entries");
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<Real>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return invalid("ragged rows");
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Real> {
        self.data
    }

    pub fn row(&self, i: usize) -> &[Real] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [Real] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> Real {
        self.data[i * self.cols + j]
    }
}

/// `a × b` with a fixed left-to-right accumulation order.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return invalid(format!(
            "matmul dimension mismatch: {}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        vec_mat_into(a.row(i), b, out.row_mut(i));
    }
    Ok(out)
}

/// Row vector times matrix: `out[j] = Σ_k x[k]·m[k][j]`, k ascending.
pub(crate) fn vec_mat_into(x: &[Real], m: &Matrix, out: &mut [Real]) {
    debug_assert_eq!(x.len(), m.rows);
    debug_assert_eq!(out.len(), m.cols);
    out.fill(0.0);
    for (k, &xk) in x.iter().enumerate() {
        let row = m.row(k);
        for (o, &w) in out.iter_mut().zip(row) {
            *o += xk * w;
        }
    }
}

pub(crate) fn vec_mat(x: &[Real], m: &Matrix) -> Vec<Real> {
    let mut out = vec![0.0; m.cols];
    vec_mat_into(x, m, &mut out);
    out
}

/// Row vector times the transpose of `m`: `out[k] = Σ_j x[j]·m[k][j]`.
pub(crate) fn vec_mat_t(x: &[Real], m: &Matrix) -> Vec<Real> {
    debug_assert_eq!(x.len(), m.cols);
    (0..m.rows).map(|k| dot(x, m.row(k))).collect()
}

/// Accumulates the outer product `xᵀ·g` into `m` (gradient of `x·M`).
pub(crate) fn add_outer(m: &mut Matrix, x: &[Real], g: &[Real]) {
    debug_assert_eq!(x.len(), m.rows);
    debug_assert_eq!(g.len(), m.cols);
    for (k, &xk) in x.iter().enumerate() {
        if xk == 0.0 {
            continue;
        }
        for (o, &gj) in m.row_mut(k).iter_mut().zip(g) {
            *o += xk * gj;
        }
    }
}

pub(crate) fn dot(a: &[Real], b: &[Real]) -> Real {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub(crate) fn add_assign(a: &mut [Real], b: &[Real]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[Real]) -> Result<Vec<Real>> {
    if logits.is_empty() {
        return invalid("softmax of an empty vector");
    }
    if logits.iter().any(|x| !x.is_finite()) {
        return invalid("softmax input contains non-finite logits");
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[Real]) -> Vec<Real> {
    let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let exps: Vec<Real> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: Real = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(logits: &[Real]) -> Real {
    let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    max + logits.iter().map(|&z| (z - max).exp()).sum::<Real>().ln()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[Real]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// RMS normalization: `x / sqrt(mean(x²) + eps) ⊙ gain`.
pub fn rms_norm(x: &[Real], gain: &[Real], eps: Real) -> Result<Vec<Real>> {
    if x.len() != gain.len() {
        return invalid(format!(
            "rms_norm length mismatch: {} vs {}",
            x.len(),
            gain.len()
        ));
    }
    if x.is_empty() || eps.is_nan() || eps < 0.0 {
        return invalid("rms_norm needs a non-empty input and eps >= 0");
    }
    Ok(rms_norm_with_scale(x, gain, eps).0)
}

/// RMS normalization that also returns the inverse RMS used (needed by the
/// backward pass).
pub(crate) fn rms_norm_with_scale(x: &[Real], gain: &[Real], eps: Real) -> (Vec<Real>, Real) {
    let mean_sq = x.iter().map(|v| v * v).sum::<Real>() / x.len() as Real;
    let inv = 1.0 / (mean_sq + eps).sqrt();
    let out = x.iter().zip(gain).map(|(v, g)| v * inv * g).collect();
    (out, inv)
}

pub(crate) fn silu(x: Real) -> Real {
    x / (1.0 + (-x).exp())
}

pub(crate) fn silu_grad(x: Real) -> Real {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Attention output together with the per-query weights over visible keys
/// (in ascending key order).
pub(crate) struct AttentionOutput {
    pub out: Vec<Vec<Real>>,
    pub weights: Vec<Vec<(usize, Real)>>,
}

/// Softmax attention where query `i` may only look at keys `j` with
/// `visible(i, j)`. Scores are computed only for visible keys, in ascending
/// key order, so invisible keys receive exactly zero weight.
pub(crate) fn attend<V>(
    queries: &[&[Real]],
    keys: &[&[Real]],
    values: &[&[Real]],
    visible: V,
    scale: Real,
) -> Result<AttentionOutput>
where
    V: Fn(usize, usize) -> bool,
{
    let dv = values.first().map_or(0, |v| v.len());
    let mut out = Vec::with_capacity(queries.len());
    let mut weights = Vec::with_capacity(queries.len());
    for (qi, q) in queries.iter().enumerate() {
        let mut scores: Vec<(usize, Real)> = Vec::new();
        for (kj, k) in keys.iter().enumerate() {
            if visible(qi, kj) {
                scores.push((kj, scale * dot(q, k)));
            }
        }
        if scores.is_empty() {
            return invalid(format!("query {qi} has no visible keys"));
        }
        let max = scores
            .iter()
            .map(|s| s.1)
            .fold(Real::NEG_INFINITY, Real::max);
        let mut sum = 0.0;
        for s in scores.iter_mut() {
            s.1 = (s.1 - max).exp();
            sum += s.1;
        }
        let mut o = vec![0.0; dv];
        for s in scores.iter_mut() {
            s.1 /= sum;
            for (acc, &v) in o.iter_mut().zip(values[s.0]) {
                *acc += s.1 * v;
            }
        }
        out.push(o);
        weights.push(scores);
    }
    Ok(AttentionOutput { out, weights })
}

/// Scaled dot-product attention restricted by a boolean visibility matrix
/// (`visibility[i][j]`: query `i` may attend to key `j`).
pub fn masked_attention(
    q: &Matrix,
    k: &Matrix,
    v: &Matrix,
    visibility: &[Vec<bool>],
    scale: Real,
) -> Result<Matrix> {
    if q.cols != k.cols {
        return invalid("query and key widths differ");
    }
    if k.rows != v.rows {
        return invalid("key and value counts differ");
    }
    if visibility.len() != q.rows || visibility.iter().any(|r| r.len() != k.rows) {
        return invalid("visibility must be queries x keys");
    }
    let qs: Vec<&[Real]> = (0..q.rows).map(|i| q.row(i)).collect();
    let ks: Vec<&[Real]> = (0..k.rows).map(|i| k.row(i)).collect();
    let vs: Vec<&[Real]> = (0..v.rows).map(|i| v.row(i)).collect();
    let res = attend(&qs, &ks, &vs, |i, j| visibility[i][j], scale)?;
    let mut out = Matrix::zeros(q.rows, v.cols);
    for (i, row) in res.out.iter().enumerate() {
        out.row_mut(i).copy_from_slice(row);
    }
    Ok(out)
}

/// `−ln dist[target]`, with the probability floored at 1e-300.
pub fn cross_entropy(dist: &[Real], target: usize) -> Result<Real> {
    if target >= dist.len() {
        return invalid(format!(
            "target {target} out of range for {} classes",
            dist.len()
        ));
    }
    let total: Real = dist.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return invalid(format!("distribution sums to {total}, not 1"));
    }
    Ok(-dist[target].max(1e-300).ln())
}

/// Central-difference gradient of `f` at `theta`.
pub fn finite_difference_gradient<F>(f: F, theta: &[Real], h: Real) -> Result<Vec<Real>>
where
    F: Fn(&[Real]) -> Real,
{
    if !(h > 0.0) {
        return invalid("finite-difference step must be positive");
    }
    let mut point = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = point[i];
        point[i] = orig + h;
        let plus = f(&point);
        point[i] = orig - h;
        let minus = f(&point);
        point[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}
