//! Attention backends and softmax-denominator statistics.
//!
//! Four ways to compute one attention call over the same Q/K/V:
//!
//! * [`full_attention`] — exact softmax over every key.
//! * [`sparse_attention`] — softmax normalized over the mask's included keys
//!   only; excluded logits are never computed.
//! * [`post_softmax_masked`] — diagnostic: full softmax first, then zero the
//!   excluded entries. Keeps the true denominator, offers no speedup.
//! * [`reshape_attention`] — sparse attention with each row scaled by a
//!   denominator ratio, so included scores sit at their full-attention level.
//!
//! [`compute_denominator_ratio`] measures the ratio between the sparse and
//! full denominators in a shared shifted frame, [`compute_residual`] captures
//! what the mask discards, and [`rettention_attention`] reassembles an
//! approximation of full attention from cached statistics.

use crate::error::{Error, Result};
use crate::mask::SparseMask;
use crate::schedule::AttentionCache;
use crate::tensor::{matmul_av, row_softmax, scaled_qk, HeadRows, Tensor3};

/// Q/K/V for one attention call, all shaped `[heads, tokens, head_dim]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionInputs {
    q: Tensor3,
    k: Tensor3,
    v: Tensor3,
}

impl AttentionInputs {
    pub fn new(q: Tensor3, k: Tensor3, v: Tensor3) -> Result<Self> {
        if q.dims() != k.dims() || q.dims() != v.dims() {
            return Err(Error::Shape(format!(
                "Q {:?}, K {:?}, V {:?} must share one shape",
                q.dims(),
                k.dims(),
                v.dims()
            )));
        }
        Ok(Self { q, k, v })
    }

    pub fn q(&self) -> &Tensor3 {
        &self.q
    }

    pub fn k(&self) -> &Tensor3 {
        &self.k
    }

    pub fn v(&self) -> &Tensor3 {
        &self.v
    }

    pub fn heads(&self) -> usize {
        self.q.dims().0
    }

    pub fn tokens(&self) -> usize {
        self.q.dims().1
    }

    pub fn head_dim(&self) -> usize {
        self.q.dims().2
    }

    fn check_mask(&self, mask: &SparseMask) -> Result<()> {
        if mask.heads() != self.heads() || mask.tokens() != self.tokens() {
            return Err(Error::Shape(format!(
                "mask [{} x {t} x {t}] does not match inputs [{} x {} x {}]",
                mask.heads(),
                self.heads(),
                self.tokens(),
                self.head_dim(),
                t = mask.tokens(),
            )));
        }
        Ok(())
    }
}

/// Softmax denominator statistics for one attention call.
///
/// Which fields are present depends on what the producing backend actually
/// computed; [`compute_denominator_ratio`] populates all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct DenominatorStats {
    /// Row maximum the exponentials were shifted by. For exact-ratio stats
    /// this is the full-row maximum, shared by both denominators.
    pub shared_row_max: HeadRows,
    /// Sum of shifted exponentials over the whole row, when computed.
    pub full_denom: Option<HeadRows>,
    /// Sum of shifted exponentials over the included set, when computed.
    pub sparse_denom: Option<HeadRows>,
    /// `sparse_denom / full_denom`, in (0, 1]; present only when both sums
    /// were taken in the same shifted frame.
    pub rho: Option<HeadRows>,
}

/// Output of one attention backend.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    /// `[heads, tokens, head_dim]` attention result.
    pub out: Tensor3,
    pub stats: DenominatorStats,
    /// Sum of each post-softmax row after any masking or reshaping: 1 for
    /// full and plain sparse attention, the exact mask-captured mass for
    /// post-softmax masking, and rho for reshaped attention.
    pub row_mass: HeadRows,
}

/// Exact softmax attention over every key.
pub fn full_attention(inp: &AttentionInputs) -> Result<AttentionOutput> {
    let (a, stats) = sm_full(inp)?;
    let out = matmul_av(&a, inp.v())?;
    let (h, t) = (inp.heads(), inp.tokens());
    let mut row_mass = HeadRows::zeros(h, t);
    for k in 0..h {
        for i in 0..t {
            row_mass.set(k, i, a.row(k, i).iter().sum());
        }
    }
    Ok(AttentionOutput {
        out,
        stats: DenominatorStats {
            shared_row_max: stats.row_max,
            full_denom: Some(stats.row_sum),
            sparse_denom: None,
            rho: None,
        },
        row_mass,
    })
}

/// Sparse attention: the softmax runs over each row's included set only.
///
/// Excluded (query, key) pairs are skipped in the score computation, not
/// zeroed afterwards, so the arithmetic cost tracks the mask's included
/// count. Excluded entries of the score matrix are exactly zero.
pub fn sparse_attention(inp: &AttentionInputs, mask: &SparseMask) -> Result<AttentionOutput> {
    inp.check_mask(mask)?;
    let (h, t, d) = (inp.heads(), inp.tokens(), inp.head_dim());
    let scale = 1.0 / (d as f64).sqrt();
    let mut out = Tensor3::zeros(h, t, d)?;
    let mut row_mass = HeadRows::zeros(h, t);
    let mut row_max = HeadRows::zeros(h, t);
    let mut row_sum = HeadRows::zeros(h, t);
    let mut logits: Vec<f64> = Vec::with_capacity(t);
    for k in 0..h {
        for i in 0..t {
            let set = mask.row_set(k, i);
            if set.is_empty() {
                return Err(Error::InvalidMask(format!(
                    "head {k}, row {i} has an empty included set"
                )));
            }
            let qi = inp.q().row(k, i);
            logits.clear();
            let mut max = f64::NEG_INFINITY;
            for &j in set {
                let kj = inp.k().row(k, j);
                let mut dot = 0.0;
                for c in 0..d {
                    dot += qi[c] * kj[c];
                }
                let logit = dot * scale;
                if !logit.is_finite() {
                    return Err(Error::Numeric(format!(
                        "sparse_attention: non-finite logit at head {k}, row {i}, col {j}"
                    )));
                }
                logits.push(logit);
                if logit > max {
                    max = logit;
                }
            }
            let mut sum = 0.0;
            for logit in logits.iter_mut() {
                *logit = (*logit - max).exp();
                sum += *logit;
            }
            let mut mass = 0.0;
            let out_row = out.row_mut(k, i);
            for (&j, &e) in set.iter().zip(logits.iter()) {
                let weight = e / sum;
                mass += weight;
                let v_row = inp.v().row(k, j);
                for c in 0..d {
                    out_row[c] += weight * v_row[c];
                }
            }
            row_mass.set(k, i, mass);
            row_max.set(k, i, max);
            row_sum.set(k, i, sum);
        }
    }
    Ok(AttentionOutput {
        out,
        stats: DenominatorStats {
            shared_row_max: row_max,
            full_denom: None,
            sparse_denom: Some(row_sum),
            rho: None,
        },
        row_mass,
    })
}

/// Diagnostic masking applied after the full softmax.
///
/// The full softmax matrix is computed, excluded entries are zeroed, and the
/// product with V is taken. The denominator of the full softmax is
/// preserved, so each row's remaining mass is exactly the fraction the mask
/// captures — the same quantity [`compute_denominator_ratio`] reports as rho.
pub fn post_softmax_masked(inp: &AttentionInputs, mask: &SparseMask) -> Result<AttentionOutput> {
    inp.check_mask(mask)?;
    let (mut a, stats) = sm_full(inp)?;
    let (h, t) = (inp.heads(), inp.tokens());
    let mut row_mass = HeadRows::zeros(h, t);
    for k in 0..h {
        for i in 0..t {
            let row = a.row_mut(k, i);
            let mut mass = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                if mask.included(k, i, j) {
                    mass += *v;
                } else {
                    *v = 0.0;
                }
            }
            row_mass.set(k, i, mass);
        }
    }
    let out = matmul_av(&a, inp.v())?;
    Ok(AttentionOutput {
        out,
        stats: DenominatorStats {
            shared_row_max: stats.row_max,
            full_denom: Some(stats.row_sum),
            sparse_denom: None,
            rho: None,
        },
        row_mass,
    })
}

/// Full and sparse softmax denominators in one shared shifted frame, and
/// their ratio.
///
/// Both sums are shifted by the full-row maximum so the quotient is the
/// exact ratio of the unshifted denominators. The ratio lands in (0, 1] by
/// construction; it is clamped away from zero in the pathological case where
/// every included exponential underflows.
pub fn compute_denominator_ratio(
    inp: &AttentionInputs,
    mask: &SparseMask,
) -> Result<DenominatorStats> {
    inp.check_mask(mask)?;
    let a_pre = scaled_qk(inp.q(), inp.k(), inp.head_dim())?;
    let (h, t) = (inp.heads(), inp.tokens());
    let mut shared_row_max = HeadRows::zeros(h, t);
    let mut full_denom = HeadRows::zeros(h, t);
    let mut sparse_denom = HeadRows::zeros(h, t);
    let mut rho = HeadRows::zeros(h, t);
    for k in 0..h {
        for i in 0..t {
            let row = a_pre.row(k, i);
            let mut max = f64::NEG_INFINITY;
            for &x in row {
                if !x.is_finite() {
                    return Err(Error::Numeric(format!(
                        "compute_denominator_ratio: non-finite logit at head {k}, row {i}"
                    )));
                }
                if x > max {
                    max = x;
                }
            }
            let mut full = 0.0;
            let mut sparse = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                full += e;
                if mask.included(k, i, j) {
                    sparse += e;
                }
            }
            let ratio = (sparse / full).clamp(f64::MIN_POSITIVE, 1.0);
            shared_row_max.set(k, i, max);
            full_denom.set(k, i, full);
            sparse_denom.set(k, i, sparse);
            rho.set(k, i, ratio);
        }
    }
    Ok(DenominatorStats {
        shared_row_max,
        full_denom: Some(full_denom),
        sparse_denom: Some(sparse_denom),
        rho: Some(rho),
    })
}

/// Sparse attention with every row scaled by its denominator ratio.
///
/// With the exact ratio of the same inputs, the result equals the full
/// softmax restricted to the included set; with a cached ratio it
/// approximates it. Each output row's mass becomes rho.
pub fn reshape_attention(
    inp: &AttentionInputs,
    mask: &SparseMask,
    rho: &HeadRows,
) -> Result<AttentionOutput> {
    let (h, t) = (inp.heads(), inp.tokens());
    if rho.heads() != h || rho.rows() != t {
        return Err(Error::Shape(format!(
            "rho [{} x {}] does not match inputs [{h} x {t}]",
            rho.heads(),
            rho.rows()
        )));
    }
    for k in 0..h {
        for i in 0..t {
            let r = rho.get(k, i);
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Parameter(format!(
                    "rho must lie in (0, 1], got {r} at head {k}, row {i}"
                )));
            }
        }
    }
    let mut result = sparse_attention(inp, mask)?;
    for k in 0..h {
        for i in 0..t {
            let r = rho.get(k, i);
            for v in result.out.row_mut(k, i) {
                *v *= r;
            }
            result.row_mass.set(k, i, result.row_mass.get(k, i) * r);
        }
    }
    Ok(result)
}

/// Residual between full attention and the reshaped sparse approximation.
///
/// When the reshape used the exact ratio of the same inputs, this equals the
/// attention output of the masked-out tokens.
pub fn compute_residual(
    full_out: &AttentionOutput,
    reshaped_out: &AttentionOutput,
) -> Result<Tensor3> {
    full_out.out.sub(&reshaped_out.out)
}

/// Sparse attention reconstructed from cached statistics: reshape by the
/// cache's current ratio, then add the cached residual.
///
/// `cache` is `None` until a capture step has run; calling this before then
/// is a cache miss.
pub fn rettention_attention(
    inp: &AttentionInputs,
    mask: &SparseMask,
    cache: Option<&AttentionCache>,
) -> Result<AttentionOutput> {
    let cache = cache.ok_or_else(|| {
        Error::CacheMiss("rettention_attention called before any capture step".into())
    })?;
    if cache.residual.dims() != inp.q().dims() {
        return Err(Error::Shape(format!(
            "cached residual {:?} does not match inputs {:?}",
            cache.residual.dims(),
            inp.q().dims()
        )));
    }
    let mut result = reshape_attention(inp, mask, &cache.current_rho)?;
    result.out = result.out.add(&cache.residual)?;
    Ok(result)
}

/// Full softmax matrix plus its row statistics.
fn sm_full(inp: &AttentionInputs) -> Result<(Tensor3, crate::tensor::RowStats)> {
    let a_pre = scaled_qk(inp.q(), inp.k(), inp.head_dim())?;
    row_softmax(&a_pre)
}
