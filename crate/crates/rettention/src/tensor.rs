//! Dense linear-algebra substrate: 3D row-major tensors, batched matrix
//! products and a numerically stable row softmax.
//!
//! Everything here is f64. The layout is fixed to (head, row, col) row-major
//! so that reference loops and kernel loops index identically.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense rank-3 tensor of 64-bit floats, laid out row-major as
/// `(head, row, col)`.
///
/// Holds Q/K/V activations of shape `[heads, tokens, head_dim]` and score
/// matrices of shape `[heads, tokens, tokens]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: (usize, usize, usize),
    data: Vec<f64>,
}

impl Tensor3 {
    /// Zero-filled tensor. All dimensions must be at least 1.
    pub fn zeros(h: usize, m: usize, n: usize) -> Result<Self> {
        if h == 0 || m == 0 || n == 0 {
            return Err(Error::Shape(format!(
                "all dims must be >= 1, got ({h}, {m}, {n})"
            )));
        }
        Ok(Self {
            dims: (h, m, n),
            data: vec![0.0; h * m * n],
        })
    }

    /// Build from a flat row-major buffer of length `h * m * n`.
    pub fn from_vec(h: usize, m: usize, n: usize, data: Vec<f64>) -> Result<Self> {
        if h == 0 || m == 0 || n == 0 {
            return Err(Error::Shape(format!(
                "all dims must be >= 1, got ({h}, {m}, {n})"
            )));
        }
        if data.len() != h * m * n {
            return Err(Error::Shape(format!(
                "data length {} does not match dims ({h}, {m}, {n})",
                data.len()
            )));
        }
        Ok(Self { dims: (h, m, n), data })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn at(&self, k: usize, i: usize, j: usize) -> f64 {
        let (_, m, n) = self.dims;
        self.data[(k * m + i) * n + j]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, j: usize, v: f64) {
        let (_, m, n) = self.dims;
        self.data[(k * m + i) * n + j] = v;
    }

    /// A view of row `i` of head `k`.
    #[inline]
    pub fn row(&self, k: usize, i: usize) -> &[f64] {
        let (_, m, n) = self.dims;
        let base = (k * m + i) * n;
        &self.data[base..base + n]
    }

    #[inline]
    pub fn row_mut(&mut self, k: usize, i: usize) -> &mut [f64] {
        let (_, m, n) = self.dims;
        let base = (k * m + i) * n;
        &mut self.data[base..base + n]
    }

    /// Elementwise sum. Shapes must match.
    pub fn add(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor3 { dims: self.dims, data })
    }

    /// Elementwise difference. Shapes must match.
    pub fn sub(&self, other: &Tensor3) -> Result<Tensor3> {
        if self.dims != other.dims {
            return Err(Error::Shape(format!(
                "sub: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Tensor3 { dims: self.dims, data })
    }

    /// Frobenius norm over all entries.
    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// A per-(head, row) scalar field of shape `[heads, rows]`.
///
/// Holds softmax statistics: row maxima, denominators, ratios and masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadRows {
    heads: usize,
    rows: usize,
    data: Vec<f64>,
}

impl HeadRows {
    pub fn zeros(heads: usize, rows: usize) -> Self {
        Self {
            heads,
            rows,
            data: vec![0.0; heads * rows],
        }
    }

    pub fn filled(heads: usize, rows: usize, value: f64) -> Self {
        Self {
            heads,
            rows,
            data: vec![value; heads * rows],
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        assert!(k < self.heads && i < self.rows, "HeadRows index out of range");
        self.data[k * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, k: usize, i: usize, v: f64) {
        assert!(k < self.heads && i < self.rows, "HeadRows index out of range");
        self.data[k * self.rows + i] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Apply `f` to every entry, producing a new field.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> HeadRows {
        HeadRows {
            heads: self.heads,
            rows: self.rows,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Combine two fields entrywise. Shapes must match.
    pub fn zip_with(&self, other: &HeadRows, f: impl Fn(f64, f64) -> f64) -> Result<HeadRows> {
        if self.heads != other.heads || self.rows != other.rows {
            return Err(Error::Shape(format!(
                "HeadRows zip: ({}, {}) vs ({}, {})",
                self.heads, other.heads, self.rows, other.rows
            )));
        }
        Ok(HeadRows {
            heads: self.heads,
            rows: self.rows,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Nested `[heads][rows]` copy, used by the JSON debug dumps.
    pub fn to_nested(&self) -> Vec<Vec<f64>> {
        (0..self.heads)
            .map(|k| self.data[k * self.rows..(k + 1) * self.rows].to_vec())
            .collect()
    }
}

/// Per-row softmax statistics: the row maximum used to shift the
/// exponentials and the resulting sum of shifted exponentials.
#[derive(Debug, Clone, PartialEq)]
pub struct RowStats {
    pub row_max: HeadRows,
    pub row_sum: HeadRows,
}

/// Scaled score matrix `Q K^T / sqrt(d_h)` of shape `[h, T, T]`.
///
/// Entry `(k, i, j)` is the dot product of query row `i` and key row `j` of
/// head `k`, divided by the square root of the head dimension.
pub fn scaled_qk(q: &Tensor3, k: &Tensor3, d_h: usize) -> Result<Tensor3> {
    let (qh, qt, qd) = q.dims();
    let (kh, kt, kd) = k.dims();
    if (qh, qd) != (kh, kd) || qt != kt {
        return Err(Error::Shape(format!(
            "scaled_qk: Q {:?} vs K {:?}",
            q.dims(),
            k.dims()
        )));
    }
    if qd != d_h {
        return Err(Error::Shape(format!(
            "scaled_qk: head dim {qd} does not match d_h = {d_h}"
        )));
    }
    let scale = 1.0 / (d_h as f64).sqrt();
    let mut out = Tensor3::zeros(qh, qt, qt)?;
    for head in 0..qh {
        for i in 0..qt {
            let qi = q.row(head, i);
            let out_row = out.row_mut(head, i);
            for j in 0..qt {
                let kj = k.row(head, j);
                let mut dot = 0.0;
                for d in 0..d_h {
                    dot += qi[d] * kj[d];
                }
                out_row[j] = dot * scale;
            }
        }
    }
    Ok(out)
}

/// Row softmax with max-subtraction, returning both the normalized matrix
/// and the per-row (max, shifted-sum) statistics so callers can form
/// softmax denominators without recomputation.
pub fn row_softmax(a_pre: &Tensor3) -> Result<(Tensor3, RowStats)> {
    let (h, m, n) = a_pre.dims();
    let mut out = Tensor3::zeros(h, m, n)?;
    let mut row_max = HeadRows::zeros(h, m);
    let mut row_sum = HeadRows::zeros(h, m);
    for k in 0..h {
        for i in 0..m {
            let row = a_pre.row(k, i);
            let mut max = f64::NEG_INFINITY;
            for &x in row {
                if !x.is_finite() {
                    return Err(Error::Numeric(format!(
                        "row_softmax: non-finite logit {x} at head {k}, row {i}"
                    )));
                }
                if x > max {
                    max = x;
                }
            }
            let out_row = out.row_mut(k, i);
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                out_row[j] = e;
                sum += e;
            }
            for v in out_row.iter_mut() {
                *v /= sum;
            }
            row_max.set(k, i, max);
            row_sum.set(k, i, sum);
        }
    }
    Ok((out, RowStats { row_max, row_sum }))
}

/// Batched product of a score matrix `[h, T, T]` with values `[h, T, d_h]`.
pub fn matmul_av(a: &Tensor3, v: &Tensor3) -> Result<Tensor3> {
    let (ah, am, an) = a.dims();
    let (vh, vt, vd) = v.dims();
    if ah != vh || an != vt {
        return Err(Error::Shape(format!(
            "matmul_av: A {:?} vs V {:?}",
            a.dims(),
            v.dims()
        )));
    }
    let mut out = Tensor3::zeros(ah, am, vd)?;
    for k in 0..ah {
        for i in 0..am {
            let a_row = a.row(k, i);
            for j in 0..an {
                let w = a_row[j];
                let v_row = v.row(k, j);
                let out_row = out.row_mut(k, i);
                for d in 0..vd {
                    out_row[d] += w * v_row[d];
                }
            }
        }
    }
    Ok(out)
}
