//! Denoising-step schedule and the per-site statistics cache.
//!
//! A run is a sequence of denoising steps. The first `warmup_full_steps`
//! run full attention; after that, every `cache_period`-th step runs full
//! attention again to refresh the cached ratio and residual, and all other
//! steps reconstruct attention from the cache. The cached ratio is ramped
//! up by `lambda` after every step and clamped at 1.

use serde::{Deserialize, Serialize};

use crate::attention::{
    compute_denominator_ratio, compute_residual, full_attention, reshape_attention,
    AttentionInputs, AttentionOutput,
};
use crate::error::{Error, Result};
use crate::mask::SparseMask;
use crate::tensor::{HeadRows, Tensor3};

/// Global denoising schedule for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenoisingSchedule {
    pub total_steps: usize,
    pub warmup_full_steps: usize,
    pub cache_period: usize,
    /// Additive ramp applied to the cached ratio after each step.
    pub lambda: f64,
}

impl DenoisingSchedule {
    pub fn new(
        total_steps: usize,
        warmup_full_steps: usize,
        cache_period: usize,
        lambda: f64,
    ) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Parameter("total_steps must be >= 1".into()));
        }
        if warmup_full_steps > total_steps {
            return Err(Error::Parameter(format!(
                "warmup_full_steps {warmup_full_steps} exceeds total_steps {total_steps}"
            )));
        }
        if cache_period == 0 {
            return Err(Error::Parameter("cache_period must be >= 1".into()));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda must be a nonnegative finite value, got {lambda}"
            )));
        }
        Ok(Self { total_steps, warmup_full_steps, cache_period, lambda })
    }

    /// What step `t` does. Warmup steps and periodic refresh steps run full
    /// attention and recapture the cache; everything else runs sparse
    /// reconstruction.
    pub fn classify_step(&self, t: usize) -> Result<StepKind> {
        if t >= self.total_steps {
            return Err(Error::Parameter(format!(
                "step {t} out of range 0..{}",
                self.total_steps
            )));
        }
        if t < self.warmup_full_steps {
            Ok(StepKind::WarmupFull)
        } else if (t - self.warmup_full_steps) % self.cache_period == 0 {
            Ok(StepKind::CacheFull)
        } else {
            Ok(StepKind::Sparse)
        }
    }
}

/// What one denoising step computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    WarmupFull,
    CacheFull,
    Sparse,
}

impl std::fmt::Display for StepKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            StepKind::WarmupFull => write!(f, "warmup_full"),
            StepKind::CacheFull => write!(f, "cache_full"),
            StepKind::Sparse => write!(f, "sparse"),
        }
    }
}

/// Cached statistics for one attention site, captured at a full-attention
/// step and consumed at the sparse steps that follow.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionCache {
    /// Exact denominator ratio measured at the capture step.
    pub rho_base: HeadRows,
    /// Ramped ratio used at the current step:
    /// `min(1, rho_base + lambda * steps_since_capture)`.
    pub current_rho: HeadRows,
    /// Residual captured at the capture step, reused unchanged until the
    /// next capture.
    pub residual: Tensor3,
    /// Step index of the capture.
    pub captured_at: usize,
    pub steps_since_capture: usize,
}

impl AttentionCache {
    /// Ramp the ratio one step forward.
    pub fn advance(&mut self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Parameter(format!(
                "lambda must be a nonnegative finite value, got {lambda}"
            )));
        }
        self.steps_since_capture += 1;
        let bump = lambda * self.steps_since_capture as f64;
        self.current_rho = self.rho_base.map(|r| (r + bump).min(1.0));
        Ok(())
    }

    /// Cache contents as plain JSON arrays, for inspection.
    pub fn to_debug_json(&self) -> serde_json::Value {
        serde_json::json!({
            "captured_at": self.captured_at,
            "steps_since_capture": self.steps_since_capture,
            "rho_base": self.rho_base.to_nested(),
            "current_rho": self.current_rho.to_nested(),
            "residual": {
                "dims": [
                    self.residual.dims().0,
                    self.residual.dims().1,
                    self.residual.dims().2,
                ],
                "data": self.residual.data(),
            },
        })
    }
}

/// Run a full-attention step and capture the statistics the sparse steps
/// will reuse: the exact denominator ratio and the residual left after
/// reshaping with it.
///
/// Returns the populated cache together with the full attention output,
/// which is the step's actual result.
pub fn capture_cache(
    inp: &AttentionInputs,
    mask: &SparseMask,
    t: usize,
) -> Result<(AttentionCache, AttentionOutput)> {
    let full = full_attention(inp)?;
    let stats = compute_denominator_ratio(inp, mask)?;
    let rho = stats.rho.expect("exact ratio stats always carry rho");
    let reshaped = reshape_attention(inp, mask, &rho)?;
    let residual = compute_residual(&full, &reshaped)?;
    let cache = AttentionCache {
        current_rho: rho.clone(),
        rho_base: rho,
        residual,
        captured_at: t,
        steps_since_capture: 0,
    };
    Ok((cache, full))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{post_softmax_masked, rettention_attention};
    use crate::mask::{full_mask, sliding_window_mask};
    use crate::test_util::{assert_tensor_close, gaussian_inputs};

    #[test]
    fn classification_follows_warmup_then_period() {
        let s = DenoisingSchedule::new(20, 5, 5, 0.04).unwrap();
        for t in 0..5 {
            assert_eq!(s.classify_step(t).unwrap(), StepKind::WarmupFull);
        }
        for t in [5, 10, 15] {
            assert_eq!(s.classify_step(t).unwrap(), StepKind::CacheFull);
        }
        for t in [6, 7, 8, 9, 11, 12, 13, 14, 16, 17, 18, 19] {
            assert_eq!(s.classify_step(t).unwrap(), StepKind::Sparse);
        }
        assert!(s.classify_step(20).is_err());
    }

    #[test]
    fn unit_period_without_warmup_is_all_cache_steps() {
        let s = DenoisingSchedule::new(6, 0, 1, 0.0).unwrap();
        for t in 0..6 {
            assert_eq!(s.classify_step(t).unwrap(), StepKind::CacheFull);
        }
    }

    #[test]
    fn long_run_cache_positions() {
        let s = DenoisingSchedule::new(50, 15, 5, 0.04).unwrap();
        let cache_steps: Vec<usize> = (0..50)
            .filter(|&t| s.classify_step(t).unwrap() == StepKind::CacheFull)
            .collect();
        assert_eq!(cache_steps, vec![15, 20, 25, 30, 35, 40, 45]);
    }

    #[test]
    fn kind_multiset_is_warmup_plus_ceil_div_caches() {
        for (total, warmup, period) in
            [(20usize, 5usize, 5usize), (50, 15, 5), (7, 3, 2), (9, 0, 4), (5, 5, 3)]
        {
            let s = DenoisingSchedule::new(total, warmup, period, 0.0).unwrap();
            let mut counts = [0usize; 3];
            for t in 0..total {
                match s.classify_step(t).unwrap() {
                    StepKind::WarmupFull => counts[0] += 1,
                    StepKind::CacheFull => counts[1] += 1,
                    StepKind::Sparse => counts[2] += 1,
                }
            }
            let expected_caches = (total - warmup).div_ceil(period);
            assert_eq!(counts[0], warmup);
            assert_eq!(counts[1], expected_caches);
            assert_eq!(counts[2], total - warmup - expected_caches);
        }
    }

    #[test]
    fn schedule_rejects_bad_parameters() {
        assert!(DenoisingSchedule::new(0, 0, 5, 0.0).is_err());
        assert!(DenoisingSchedule::new(10, 11, 5, 0.0).is_err());
        assert!(DenoisingSchedule::new(10, 2, 0, 0.0).is_err());
        assert!(DenoisingSchedule::new(10, 2, 5, -0.1).is_err());
    }

    #[test]
    fn capture_then_reconstruct_is_exact() {
        let inp = gaussian_inputs(2, 8, 4, 40);
        let mask = sliding_window_mask(2, 8, 1).unwrap();
        let (cache, full) = capture_cache(&inp, &mask, 3).unwrap();
        assert_eq!(cache.captured_at, 3);
        assert_eq!(cache.steps_since_capture, 0);
        let rebuilt = rettention_attention(&inp, &mask, Some(&cache)).unwrap();
        assert_tensor_close(&rebuilt.out, &full.out, 1e-9);
    }

    #[test]
    fn capture_on_full_mask_gives_unit_rho_and_zero_residual() {
        let inp = gaussian_inputs(2, 6, 4, 41);
        let mask = full_mask(2, 6).unwrap();
        let (cache, _) = capture_cache(&inp, &mask, 0).unwrap();
        for k in 0..2 {
            for i in 0..6 {
                assert_eq!(cache.rho_base.get(k, i), 1.0);
            }
        }
        assert!(cache.residual.frobenius_norm() < 1e-12);
    }

    #[test]
    fn captured_rho_matches_post_softmax_row_mass() {
        let inp = gaussian_inputs(2, 8, 4, 42);
        let mask = sliding_window_mask(2, 8, 2).unwrap();
        let (cache, _) = capture_cache(&inp, &mask, 0).unwrap();
        let post = post_softmax_masked(&inp, &mask).unwrap();
        for k in 0..2 {
            for i in 0..8 {
                assert!((cache.rho_base.get(k, i) - post.row_mass.get(k, i)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn advance_with_zero_lambda_keeps_rho() {
        let inp = gaussian_inputs(1, 6, 3, 43);
        let mask = sliding_window_mask(1, 6, 1).unwrap();
        let (mut cache, _) = capture_cache(&inp, &mask, 0).unwrap();
        let base = cache.rho_base.clone();
        for _ in 0..10 {
            cache.advance(0.0).unwrap();
        }
        assert_eq!(cache.current_rho, base);
        assert_eq!(cache.steps_since_capture, 10);
    }

    #[test]
    fn advance_ramps_and_clamps_at_one() {
        let mut cache = AttentionCache {
            rho_base: HeadRows::filled(1, 2, 0.9),
            current_rho: HeadRows::filled(1, 2, 0.9),
            residual: Tensor3::zeros(1, 2, 2).unwrap(),
            captured_at: 0,
            steps_since_capture: 0,
        };
        cache.advance(0.04).unwrap();
        assert!((cache.current_rho.get(0, 0) - 0.94).abs() < 1e-15);
        cache.advance(0.04).unwrap();
        assert!((cache.current_rho.get(0, 0) - 0.98).abs() < 1e-15);
        cache.advance(0.04).unwrap();
        assert_eq!(cache.current_rho.get(0, 0), 1.0);
        assert_eq!(cache.steps_since_capture, 3);
    }

    #[test]
    fn advance_rejects_negative_lambda() {
        let mut cache = AttentionCache {
            rho_base: HeadRows::filled(1, 1, 0.5),
            current_rho: HeadRows::filled(1, 1, 0.5),
            residual: Tensor3::zeros(1, 1, 1).unwrap(),
            captured_at: 0,
            steps_since_capture: 0,
        };
        assert!(cache.advance(-0.01).is_err());
    }

    #[test]
    fn current_rho_is_monotone_and_bounded() {
        let inp = gaussian_inputs(2, 8, 4, 44);
        let mask = sliding_window_mask(2, 8, 0).unwrap();
        let (mut cache, _) = capture_cache(&inp, &mask, 0).unwrap();
        let mut prev = cache.current_rho.clone();
        for _ in 0..40 {
            cache.advance(0.04).unwrap();
            for (new, old) in cache.current_rho.data().iter().zip(prev.data()) {
                assert!(new >= old);
                assert!(*new <= 1.0);
            }
            prev = cache.current_rho.clone();
        }
        // 40 steps at 0.04 adds 1.6, so everything is pinned at the clamp.
        assert!(cache.current_rho.data().iter().all(|&r| r == 1.0));
    }

    #[test]
    fn debug_dump_round_trips_through_json() {
        let inp = gaussian_inputs(1, 3, 2, 45);
        let mask = sliding_window_mask(1, 3, 1).unwrap();
        let (cache, _) = capture_cache(&inp, &mask, 2).unwrap();
        let doc = cache.to_debug_json();
        assert_eq!(doc["captured_at"], 2);
        assert_eq!(doc["rho_base"].as_array().unwrap().len(), 1);
        assert_eq!(doc["rho_base"][0].as_array().unwrap().len(), 3);
        assert_eq!(doc["residual"]["dims"], serde_json::json!([1, 3, 2]));
    }
}
