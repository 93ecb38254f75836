//! Naive reference implementations used to verify the kernels.
//!
//! Everything in this module is written as plain element-by-element loops
//! and deliberately shares no code with the production paths in
//! [`crate::tensor`] and [`crate::attention`]. Tests compare the two routes;
//! keep it that way when editing either side.

use crate::mask::SparseMask;
use crate::tensor::{HeadRows, Tensor3};

/// Triple-loop `Q K^T / sqrt(d_h)`.
pub fn naive_scaled_qk(q: &Tensor3, k: &Tensor3) -> Tensor3 {
    let (h, t, d) = q.dims();
    assert_eq!(q.dims(), k.dims(), "oracle: Q/K shape mismatch");
    let mut out = Tensor3::zeros(h, t, t).expect("oracle dims");
    let scale = (d as f64).sqrt();
    for head in 0..h {
        for i in 0..t {
            for j in 0..t {
                let mut dot = 0.0;
                for c in 0..d {
                    dot += q.at(head, i, c) * k.at(head, j, c);
                }
                out.set(head, i, j, dot / scale);
            }
        }
    }
    out
}

/// Triple-loop batched matrix product `A V`.
pub fn naive_matmul_av(a: &Tensor3, v: &Tensor3) -> Tensor3 {
    let (h, m, n) = a.dims();
    let (vh, vt, vd) = v.dims();
    assert!(h == vh && n == vt, "oracle: A/V shape mismatch");
    let mut out = Tensor3::zeros(h, m, vd).expect("oracle dims");
    for head in 0..h {
        for i in 0..m {
            for c in 0..vd {
                let mut acc = 0.0;
                for j in 0..n {
                    acc += a.at(head, i, j) * v.at(head, j, c);
                }
                out.set(head, i, c, acc);
            }
        }
    }
    out
}

/// Dense row softmax with max subtraction, loop form.
pub fn naive_row_softmax(a_pre: &Tensor3) -> Tensor3 {
    let (h, m, n) = a_pre.dims();
    let mut out = Tensor3::zeros(h, m, n).expect("oracle dims");
    for head in 0..h {
        for i in 0..m {
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                max = max.max(a_pre.at(head, i, j));
            }
            let mut sum = 0.0;
            for j in 0..n {
                let e = (a_pre.at(head, i, j) - max).exp();
                out.set(head, i, j, e);
                sum += e;
            }
            for j in 0..n {
                out.set(head, i, j, out.at(head, i, j) / sum);
            }
        }
    }
    out
}

/// Full softmax attention assembled from the naive pieces above.
pub fn naive_full_attention(q: &Tensor3, k: &Tensor3, v: &Tensor3) -> Tensor3 {
    let a = naive_row_softmax(&naive_scaled_qk(q, k));
    naive_matmul_av(&a, v)
}

/// Sparse attention computed the blunt way: form the dense score matrix,
/// overwrite excluded logits with negative infinity, then run a dense
/// softmax and a dense product.
pub fn naive_sparse_attention(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    mask: &SparseMask,
) -> Tensor3 {
    let (h, t, _) = q.dims();
    let mut scores = naive_scaled_qk(q, k);
    for head in 0..h {
        for i in 0..t {
            for j in 0..t {
                if !mask.included(head, i, j) {
                    scores.set(head, i, j, f64::NEG_INFINITY);
                }
            }
        }
    }
    let a = naive_row_softmax(&scores);
    naive_matmul_av(&a, v)
}

/// Attention output contributed by the masked-out tokens only: the full
/// softmax matrix with its included entries zeroed, multiplied by V.
pub fn naive_masked_complement_output(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    mask: &SparseMask,
) -> Tensor3 {
    let (h, t, _) = q.dims();
    let mut a = naive_row_softmax(&naive_scaled_qk(q, k));
    for head in 0..h {
        for i in 0..t {
            for j in 0..t {
                if mask.included(head, i, j) {
                    a.set(head, i, j, 0.0);
                }
            }
        }
    }
    naive_matmul_av(&a, v)
}

/// Attention output restricted to the included tokens: the full softmax
/// matrix with its excluded entries zeroed, multiplied by V.
pub fn naive_masked_included_output(
    q: &Tensor3,
    k: &Tensor3,
    v: &Tensor3,
    mask: &SparseMask,
) -> Tensor3 {
    let (h, t, _) = q.dims();
    let mut a = naive_row_softmax(&naive_scaled_qk(q, k));
    for head in 0..h {
        for i in 0..t {
            for j in 0..t {
                if !mask.included(head, i, j) {
                    a.set(head, i, j, 0.0);
                }
            }
        }
    }
    naive_matmul_av(&a, v)
}

/// Denominator ratio computed with raw, unshifted exponentials.
///
/// Only trustworthy for small-magnitude logits; tests use it on inputs well
/// inside the exp range.
pub fn naive_rho_unshifted(q: &Tensor3, k: &Tensor3, mask: &SparseMask) -> HeadRows {
    let (h, t, _) = q.dims();
    let scores = naive_scaled_qk(q, k);
    let mut rho = HeadRows::zeros(h, t);
    for head in 0..h {
        for i in 0..t {
            let mut full = 0.0;
            let mut sparse = 0.0;
            for j in 0..t {
                let e = scores.at(head, i, j).exp();
                full += e;
                if mask.included(head, i, j) {
                    sparse += e;
                }
            }
            rho.set(head, i, sparse / full);
        }
    }
    rho
}
