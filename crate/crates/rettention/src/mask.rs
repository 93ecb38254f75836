//! Static sparse-attention masks.
//!
//! Masks are boolean inclusion matrices over `(head, query, key)` triples
//! with precomputed per-row index sets. All constructors force each query to
//! include its own token, so no row ever has an empty denominator. Masks are
//! built once per run and never change across denoising steps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boolean inclusion mask of shape `[heads, tokens, tokens]` with derived
/// per-row index sets and the total count of included entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMask {
    heads: usize,
    tokens: usize,
    bits: Vec<bool>,
    row_sets: Vec<Vec<usize>>,
    included_count: usize,
}

/// Frame/space factorization of a video token sequence:
/// `tokens = frames * spatial_tokens`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoLayout {
    pub frames: usize,
    pub spatial_tokens: usize,
}

impl VideoLayout {
    pub fn new(frames: usize, spatial_tokens: usize) -> Result<Self> {
        if frames == 0 || spatial_tokens == 0 {
            return Err(Error::Parameter(format!(
                "video layout dims must be >= 1, got frames={frames}, spatial_tokens={spatial_tokens}"
            )));
        }
        Ok(Self { frames, spatial_tokens })
    }

    pub fn total_tokens(&self) -> usize {
        self.frames * self.spatial_tokens
    }
}

#[derive(Serialize, Deserialize)]
struct MaskJson {
    h: usize,
    #[serde(rename = "T")]
    t: usize,
    rows: Vec<Vec<usize>>,
}

impl SparseMask {
    /// Build a mask from raw bits (row-major `[heads, tokens, tokens]`).
    ///
    /// Every row must include its own diagonal index; a missing diagonal
    /// would leave that query with an empty softmax denominator.
    pub fn from_bits(heads: usize, tokens: usize, bits: Vec<bool>) -> Result<Self> {
        if heads == 0 || tokens == 0 {
            return Err(Error::Parameter(format!(
                "mask dims must be >= 1, got heads={heads}, tokens={tokens}"
            )));
        }
        if bits.len() != heads * tokens * tokens {
            return Err(Error::Shape(format!(
                "mask bits length {} does not match {heads}x{tokens}x{tokens}",
                bits.len()
            )));
        }
        let mut row_sets = Vec::with_capacity(heads * tokens);
        let mut included_count = 0;
        for k in 0..heads {
            for i in 0..tokens {
                let base = (k * tokens + i) * tokens;
                let set: Vec<usize> =
                    (0..tokens).filter(|&j| bits[base + j]).collect();
                if !set.contains(&i) {
                    return Err(Error::InvalidMask(format!(
                        "head {k}, row {i} does not include its own diagonal index"
                    )));
                }
                included_count += set.len();
                row_sets.push(set);
            }
        }
        Ok(Self { heads, tokens, bits, row_sets, included_count })
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    /// Whether key `j` participates in the softmax of query `i`, head `k`.
    #[inline]
    pub fn included(&self, k: usize, i: usize, j: usize) -> bool {
        self.bits[(k * self.tokens + i) * self.tokens + j]
    }

    /// Ascending list of included key indices for query `i` of head `k`.
    #[inline]
    pub fn row_set(&self, k: usize, i: usize) -> &[usize] {
        &self.row_sets[k * self.tokens + i]
    }

    /// All per-(head, row) index sets, row-major over heads then rows.
    pub fn row_index_sets(&self) -> &[Vec<usize>] {
        &self.row_sets
    }

    /// Total number of included entries across all heads.
    pub fn included_count(&self) -> usize {
        self.included_count
    }

    /// Fraction of excluded entries as a percentage:
    /// `(1 - included / (heads * tokens^2)) * 100`.
    pub fn sparsity(&self) -> f64 {
        let total = (self.heads * self.tokens * self.tokens) as f64;
        (1.0 - self.included_count as f64 / total) * 100.0
    }

    /// Serialize as `{h, T, rows}` with one ascending column list per
    /// (head, row), heads outermost.
    pub fn to_json(&self) -> String {
        let doc = MaskJson {
            h: self.heads,
            t: self.tokens,
            rows: self.row_sets.clone(),
        };
        serde_json::to_string(&doc).expect("mask serialization cannot fail")
    }

    /// Parse the `{h, T, rows}` document written by [`SparseMask::to_json`].
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MaskJson = serde_json::from_str(text)
            .map_err(|e| Error::InvalidMask(format!("mask JSON: {e}")))?;
        if doc.rows.len() != doc.h * doc.t {
            return Err(Error::InvalidMask(format!(
                "mask JSON: expected {} rows, got {}",
                doc.h * doc.t,
                doc.rows.len()
            )));
        }
        let mut bits = vec![false; doc.h * doc.t * doc.t];
        for (r, cols) in doc.rows.iter().enumerate() {
            for &j in cols {
                if j >= doc.t {
                    return Err(Error::InvalidMask(format!(
                        "mask JSON: column {j} out of range in row {r}"
                    )));
                }
                bits[r * doc.t + j] = true;
            }
        }
        Self::from_bits(doc.h, doc.t, bits)
    }
}

/// Full (dense) mask: every query attends to every key.
pub fn full_mask(heads: usize, tokens: usize) -> Result<SparseMask> {
    if heads == 0 || tokens == 0 {
        return Err(Error::Parameter(format!(
            "mask dims must be >= 1, got heads={heads}, tokens={tokens}"
        )));
    }
    SparseMask::from_bits(heads, tokens, vec![true; heads * tokens * tokens])
}

/// Sliding-window mask: query `i` attends to keys `j` with `|i - j| <= w`,
/// clipped at the sequence boundaries. All heads share the same pattern.
pub fn sliding_window_mask(heads: usize, tokens: usize, w: usize) -> Result<SparseMask> {
    if heads == 0 || tokens == 0 {
        return Err(Error::Parameter(format!(
            "mask dims must be >= 1, got heads={heads}, tokens={tokens}"
        )));
    }
    if w >= tokens {
        return Err(Error::Parameter(format!(
            "half-window width {w} must be < tokens = {tokens}"
        )));
    }
    let mut bits = vec![false; heads * tokens * tokens];
    for k in 0..heads {
        for i in 0..tokens {
            let lo = i.saturating_sub(w);
            let hi = (i + w).min(tokens - 1);
            let base = (k * tokens + i) * tokens;
            for j in lo..=hi {
                bits[base + j] = true;
            }
        }
    }
    SparseMask::from_bits(heads, tokens, bits)
}

/// Number of included entries of a single-head sliding window on `tokens`
/// tokens with half-width `w`, in closed form.
pub fn sliding_window_count(tokens: usize, w: usize) -> usize {
    assert!(w < tokens, "half-window width must be < tokens");
    (2 * w + 1) * tokens - w * (w + 1)
}

/// Frame-repeated window mask for video sequences.
///
/// A spatial sliding window of half-width `w` is built once over the
/// `spatial_tokens` positions of a frame; each query then applies that same
/// spatial pattern within every frame, giving an F x F grid of identical
/// window blocks.
pub fn framewise_window_mask(
    heads: usize,
    layout: VideoLayout,
    w: usize,
) -> Result<SparseMask> {
    if heads == 0 {
        return Err(Error::Parameter("heads must be >= 1".into()));
    }
    if w >= layout.spatial_tokens {
        return Err(Error::Parameter(format!(
            "half-window width {w} must be < spatial_tokens = {}",
            layout.spatial_tokens
        )));
    }
    let s = layout.spatial_tokens;
    let f = layout.frames;
    let t = layout.total_tokens();
    let mut bits = vec![false; heads * t * t];
    for k in 0..heads {
        for qi in 0..t {
            let p = qi % s;
            let lo = p.saturating_sub(w);
            let hi = (p + w).min(s - 1);
            let base = (k * t + qi) * t;
            for g in 0..f {
                for q in lo..=hi {
                    bits[base + g * s + q] = true;
                }
            }
        }
    }
    SparseMask::from_bits(heads, t, bits)
}

/// Largest half-width whose sliding-window sparsity still meets
/// `target_pct`, together with the sparsity actually achieved.
///
/// Sparsity falls as the window widens, so the search walks down from full
/// width. Errors when even the narrowest window (w = 0) falls short.
pub fn window_width_for_sparsity(tokens: usize, target_pct: f64) -> Result<(usize, f64)> {
    if tokens == 0 {
        return Err(Error::Parameter("tokens must be >= 1".into()));
    }
    if !target_pct.is_finite() {
        return Err(Error::Parameter(format!(
            "target sparsity must be finite, got {target_pct}"
        )));
    }
    let total = (tokens * tokens) as f64;
    for w in (0..tokens).rev() {
        let sparsity = (1.0 - sliding_window_count(tokens, w) as f64 / total) * 100.0;
        if sparsity >= target_pct {
            return Ok((w, sparsity));
        }
    }
    let best = (1.0 - 1.0 / tokens as f64) * 100.0;
    Err(Error::Parameter(format!(
        "target sparsity {target_pct}% unachievable for {tokens} tokens (max {best}% at w = 0)"
    )))
}
