//! Synthetic temporally-redundant trajectories and the experiment harness.
//!
//! A trajectory is a sequence of Q/K/V triples evolving under AR(1) drift:
//! `X_t = alpha * X_{t-1} + sqrt(1 - alpha^2) * noise`, which preserves the
//! marginal variance and interpolates between frozen inputs (alpha = 1) and
//! independent redraws (alpha = 0). The harness runs a chosen backend over
//! the trajectory against a full-attention oracle computed at every step and
//! reports error, similarity and cost metrics.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attention::{
    compute_denominator_ratio, full_attention, post_softmax_masked, rettention_attention,
    sparse_attention, AttentionInputs, AttentionOutput,
};
use crate::error::{Error, Result};
use crate::mask::SparseMask;
use crate::schedule::{capture_cache, AttentionCache, DenoisingSchedule, StepKind};
use crate::tensor::Tensor3;

/// Shape and drift parameters of a synthetic Q/K/V trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub seed: u64,
    pub steps: usize,
    pub heads: usize,
    pub tokens: usize,
    pub head_dim: usize,
    /// Step-to-step correlation in [0, 1]: 1 freezes the inputs, 0 redraws
    /// them independently.
    pub drift_alpha: f64,
    /// Standard deviation of the Q/K/V entries.
    pub logit_scale: f64,
}

impl TrajectoryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.heads == 0 || self.tokens == 0 || self.head_dim == 0 {
            return Err(Error::Parameter(format!(
                "steps/heads/tokens/head_dim must all be >= 1, got {}/{}/{}/{}",
                self.steps, self.heads, self.tokens, self.head_dim
            )));
        }
        if !(0.0..=1.0).contains(&self.drift_alpha) {
            return Err(Error::Parameter(format!(
                "drift_alpha must lie in [0, 1], got {}",
                self.drift_alpha
            )));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::Parameter(format!(
                "logit_scale must be positive and finite, got {}",
                self.logit_scale
            )));
        }
        Ok(())
    }
}

/// Which attention computation stands in for the method under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Full,
    Sparse,
    PostSoftmax,
    Rettention,
}

impl Backend {
    pub const ALL: [Backend; 4] = [
        Backend::Full,
        Backend::Sparse,
        Backend::PostSoftmax,
        Backend::Rettention,
    ];
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Full => write!(f, "full"),
            Backend::Sparse => write!(f, "sparse"),
            Backend::PostSoftmax => write!(f, "post_softmax"),
            Backend::Rettention => write!(f, "rettention"),
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Backend::Full),
            "sparse" => Ok(Backend::Sparse),
            "post_softmax" => Ok(Backend::PostSoftmax),
            "rettention" => Ok(Backend::Rettention),
            other => Err(Error::Parameter(format!(
                "unknown backend '{other}' (expected full|sparse|post_softmax|rettention)"
            ))),
        }
    }
}

/// Per-step measurements against the full-attention oracle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepMetrics {
    pub step: usize,
    pub kind: StepKind,
    /// `||method - full||_F / ||full||_F`.
    pub rel_err: f64,
    /// Mean per-row cosine similarity against the full output.
    pub cosine: f64,
    /// `20 log10(range / rmse)` over output entries; infinite when the
    /// method output matches the oracle exactly.
    pub psnr: f64,
    /// Full softmax denominator magnitude at the traced (head, row).
    pub full_denom: f64,
    /// Sparse denominator magnitude at the traced (head, row).
    pub sparse_denom: f64,
    /// Exact denominator ratio at the traced (head, row).
    pub rho: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AggregateMetrics {
    pub mean_rel_err: f64,
    pub mean_cosine: f64,
    /// Mean over steps with finite PSNR; infinite when every step was exact.
    pub mean_psnr: f64,
}

/// Arithmetic cost of one attention call, split by stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopCount {
    pub qk: u64,
    pub av: u64,
    pub softmax: u64,
}

impl FlopCount {
    pub fn total(&self) -> u64 {
        self.qk + self.av + self.softmax
    }
}

/// Cost summary carried in every report.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FlopReport {
    pub full: FlopCount,
    pub sparse: FlopCount,
    /// Extra work of the reconstruction: one ratio scale and one residual
    /// add over the `[h, T, d_h]` output.
    pub rettention_overhead: u64,
    pub flops_full: u64,
    pub flops_sparse: u64,
    /// Cost of the selected backend relative to full attention.
    pub flop_ratio: f64,
}

/// One experiment's results.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub seed: u64,
    pub backend: Backend,
    pub sparsity_pct: f64,
    pub trace_head: usize,
    pub trace_row: usize,
    pub steps: Vec<StepMetrics>,
    pub aggregate: AggregateMetrics,
    pub flops: FlopReport,
}

/// Harness options: which (head, row) to trace and whether to assert the
/// method's identities while running.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSettings {
    pub trace_head: usize,
    pub trace_row: usize,
    pub self_check: bool,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self { trace_head: 0, trace_row: 0, self_check: true }
    }
}

/// Draw the Q/K/V sequence for one run. Deterministic for a given config.
pub fn generate_trajectory(cfg: &TrajectoryConfig) -> Result<Vec<AttentionInputs>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let normal = Normal::new(0.0, cfg.logit_scale).expect("validated scale");
    let n = cfg.heads * cfg.tokens * cfg.head_dim;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..n).map(|_| normal.sample(rng)).collect()
    };
    let mut q = draw(&mut rng);
    let mut k = draw(&mut rng);
    let mut v = draw(&mut rng);
    let alpha = cfg.drift_alpha;
    let noise_coef = (1.0 - alpha * alpha).sqrt();
    let mut steps = Vec::with_capacity(cfg.steps);
    for t in 0..cfg.steps {
        if t > 0 {
            for buf in [&mut q, &mut k, &mut v] {
                for x in buf.iter_mut() {
                    *x = alpha * *x + noise_coef * normal.sample(&mut rng);
                }
            }
        }
        steps.push(AttentionInputs::new(
            Tensor3::from_vec(cfg.heads, cfg.tokens, cfg.head_dim, q.clone())?,
            Tensor3::from_vec(cfg.heads, cfg.tokens, cfg.head_dim, k.clone())?,
            Tensor3::from_vec(cfg.heads, cfg.tokens, cfg.head_dim, v.clone())?,
        )?);
    }
    Ok(steps)
}

/// Relative Frobenius error of `got` against `want`.
pub fn frobenius_rel_error(got: &Tensor3, want: &Tensor3) -> Result<f64> {
    let diff = got.sub(want)?.frobenius_norm();
    let norm = want.frobenius_norm();
    if norm == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(diff / norm)
}

/// Mean cosine similarity over all (head, row) vectors.
pub fn mean_row_cosine(got: &Tensor3, want: &Tensor3) -> Result<f64> {
    if got.dims() != want.dims() {
        return Err(Error::Shape(format!(
            "cosine: {:?} vs {:?}",
            got.dims(),
            want.dims()
        )));
    }
    let (h, t, _) = got.dims();
    let mut acc = 0.0;
    for k in 0..h {
        for i in 0..t {
            let a = got.row(k, i);
            let b = want.row(k, i);
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            acc += if na == 0.0 || nb == 0.0 {
                if na == nb { 1.0 } else { 0.0 }
            } else {
                dot / (na * nb)
            };
        }
    }
    Ok(acc / (h * t) as f64)
}

/// PSNR of `got` against `want` over raw output entries, using the
/// reference's value range. Infinite when the two match exactly.
pub fn output_psnr(got: &Tensor3, want: &Tensor3) -> Result<f64> {
    let diff = got.sub(want)?;
    let n = diff.data().len() as f64;
    let rmse = (diff.data().iter().map(|x| x * x).sum::<f64>() / n).sqrt();
    if rmse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let max = want.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = want.data().iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(20.0 * ((max - min) / rmse).log10())
}

/// Attention cost of the full and masked computation.
///
/// Matrix stages count one multiply and one add per contributing pair
/// (`2 d_h` per score entry and per output contribution); the softmax
/// counts three operations per participating entry (shift, exponential,
/// divide). The sparse column replaces each head's `T^2` entries with its
/// included count, so for these formulas the sparse/full ratio is exactly
/// the mask's density.
pub fn flop_count(mask: &SparseMask, d_h: usize) -> (FlopCount, FlopCount) {
    let h = mask.heads() as u64;
    let t = mask.tokens() as u64;
    let d = d_h as u64;
    let dense_pairs = h * t * t;
    let included = mask.included_count() as u64;
    let full = FlopCount {
        qk: 2 * dense_pairs * d,
        av: 2 * dense_pairs * d,
        softmax: 3 * dense_pairs,
    };
    let sparse = FlopCount {
        qk: 2 * included * d,
        av: 2 * included * d,
        softmax: 3 * included,
    };
    (full, sparse)
}

/// Cost of the reconstruction on top of plain sparse attention: scaling the
/// output rows by the ratio and adding the residual.
pub fn rettention_overhead_flops(heads: usize, tokens: usize, d_h: usize) -> u64 {
    2 * (heads * tokens * d_h) as u64
}

fn flop_report(mask: &SparseMask, d_h: usize, backend: Backend) -> FlopReport {
    let (full, sparse) = flop_count(mask, d_h);
    let overhead = rettention_overhead_flops(mask.heads(), mask.tokens(), d_h);
    let flops_full = full.total();
    let flops_sparse = sparse.total();
    let flop_ratio = match backend {
        // The diagnostic computes the full softmax; no savings.
        Backend::Full | Backend::PostSoftmax => 1.0,
        Backend::Sparse => flops_sparse as f64 / flops_full as f64,
        Backend::Rettention => (flops_sparse + overhead) as f64 / flops_full as f64,
    };
    FlopReport {
        full,
        sparse,
        rettention_overhead: overhead,
        flops_full,
        flops_sparse,
        flop_ratio,
    }
}

/// The denominator magnitudes and ratio at one (head, row), one step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RhoTracePoint {
    pub step: usize,
    pub full_denom: f64,
    pub sparse_denom: f64,
    pub rho: f64,
}

fn trace_point(
    inp: &AttentionInputs,
    mask: &SparseMask,
    step: usize,
    head: usize,
    row: usize,
) -> Result<RhoTracePoint> {
    let stats = compute_denominator_ratio(inp, mask)?;
    let max = stats.shared_row_max.get(head, row);
    let scale = max.exp();
    Ok(RhoTracePoint {
        step,
        full_denom: stats.full_denom.as_ref().expect("exact stats").get(head, row) * scale,
        sparse_denom: stats.sparse_denom.as_ref().expect("exact stats").get(head, row) * scale,
        rho: stats.rho.as_ref().expect("exact stats").get(head, row),
    })
}

/// Exact denominator statistics at one (head, row) across every step of a
/// trajectory. Diagnostic mode: full attention statistics are computed at
/// every step regardless of any schedule.
pub fn trace_rho(
    traj: &[AttentionInputs],
    mask: &SparseMask,
    head: usize,
    row: usize,
) -> Result<Vec<RhoTracePoint>> {
    let first = traj
        .first()
        .ok_or_else(|| Error::Config("trajectory has no steps".into()))?;
    if head >= first.heads() || row >= first.tokens() {
        return Err(Error::Parameter(format!(
            "trace target ({head}, {row}) out of range for [{} x {}]",
            first.heads(),
            first.tokens()
        )));
    }
    traj.iter()
        .enumerate()
        .map(|(t, inp)| trace_point(inp, mask, t, head, row))
        .collect()
}

/// Run one backend over a trajectory under a schedule, measuring every step
/// against full attention computed on the same inputs.
pub fn run_experiment(
    traj: &[AttentionInputs],
    mask: &SparseMask,
    sched: &DenoisingSchedule,
    backend: Backend,
    settings: &RunSettings,
) -> Result<MetricsReport> {
    let first = traj
        .first()
        .ok_or_else(|| Error::Config("trajectory has no steps".into()))?;
    if traj.len() != sched.total_steps {
        return Err(Error::Config(format!(
            "trajectory has {} steps but the schedule expects {}",
            traj.len(),
            sched.total_steps
        )));
    }
    if settings.trace_head >= first.heads() || settings.trace_row >= first.tokens() {
        return Err(Error::Parameter(format!(
            "trace target ({}, {}) out of range for [{} x {}]",
            settings.trace_head,
            settings.trace_row,
            first.heads(),
            first.tokens()
        )));
    }

    let mut cache: Option<AttentionCache> = None;
    let mut steps = Vec::with_capacity(traj.len());
    for (t, inp) in traj.iter().enumerate() {
        let kind = sched.classify_step(t)?;
        let full = full_attention(inp)?;
        let point = trace_point(inp, mask, t, settings.trace_head, settings.trace_row)?;

        let method_out: AttentionOutput = match (backend, kind) {
            (Backend::Full, _) => full.clone(),
            (_, StepKind::WarmupFull | StepKind::CacheFull) => {
                if backend == Backend::Rettention {
                    let (fresh, out) = capture_cache(inp, mask, t)?;
                    if settings.self_check {
                        let rebuilt = rettention_attention(inp, mask, Some(&fresh))?;
                        let err = frobenius_rel_error(&rebuilt.out, &out.out)?;
                        if !(err <= 1e-9) {
                            return Err(Error::Numeric(format!(
                                "self-check: capture-step reconstruction error {err} at step {t}"
                            )));
                        }
                    }
                    cache = Some(fresh);
                    out
                } else {
                    full.clone()
                }
            }
            (Backend::Sparse, StepKind::Sparse) => sparse_attention(inp, mask)?,
            (Backend::PostSoftmax, StepKind::Sparse) => post_softmax_masked(inp, mask)?,
            (Backend::Rettention, StepKind::Sparse) => {
                rettention_attention(inp, mask, cache.as_ref()).map_err(|e| match e {
                    Error::CacheMiss(msg) => Error::Config(msg),
                    other => other,
                })?
            }
        };

        if settings.self_check {
            self_check_step(t, kind, backend, &full, &method_out, cache.as_ref())?;
        }

        steps.push(StepMetrics {
            step: t,
            kind,
            rel_err: frobenius_rel_error(&method_out.out, &full.out)?,
            cosine: mean_row_cosine(&method_out.out, &full.out)?,
            psnr: output_psnr(&method_out.out, &full.out)?,
            full_denom: point.full_denom,
            sparse_denom: point.sparse_denom,
            rho: point.rho,
        });

        if let Some(c) = cache.as_mut() {
            c.advance(sched.lambda)?;
        }
    }

    let n = steps.len() as f64;
    let finite_psnr: Vec<f64> = steps.iter().map(|s| s.psnr).filter(|p| p.is_finite()).collect();
    let aggregate = AggregateMetrics {
        mean_rel_err: steps.iter().map(|s| s.rel_err).sum::<f64>() / n,
        mean_cosine: steps.iter().map(|s| s.cosine).sum::<f64>() / n,
        mean_psnr: if finite_psnr.is_empty() {
            f64::INFINITY
        } else {
            finite_psnr.iter().sum::<f64>() / finite_psnr.len() as f64
        },
    };

    Ok(MetricsReport {
        seed: 0, // callers that know the seed overwrite it; see run_seeded
        backend,
        sparsity_pct: mask.sparsity(),
        trace_head: settings.trace_head,
        trace_row: settings.trace_row,
        steps,
        aggregate,
        flops: flop_report(mask, first.head_dim(), backend),
    })
}

/// Generate the trajectory for `cfg` and run one backend over it. The
/// report carries the config's seed.
pub fn run_seeded(
    cfg: &TrajectoryConfig,
    mask: &SparseMask,
    sched: &DenoisingSchedule,
    backend: Backend,
    settings: &RunSettings,
) -> Result<MetricsReport> {
    let traj = generate_trajectory(cfg)?;
    let mut report = run_experiment(&traj, mask, sched, backend, settings)?;
    report.seed = cfg.seed;
    Ok(report)
}

fn self_check_step(
    t: usize,
    kind: StepKind,
    backend: Backend,
    full: &AttentionOutput,
    method: &AttentionOutput,
    cache: Option<&AttentionCache>,
) -> Result<()> {
    let fail = |msg: String| Err(Error::Numeric(format!("self-check at step {t}: {msg}")));
    let (h, rows) = (full.row_mass.heads(), full.row_mass.rows());
    for k in 0..h {
        for i in 0..rows {
            let m = full.row_mass.get(k, i);
            if (m - 1.0).abs() > 1e-9 {
                return fail(format!("full attention row mass {m} at ({k}, {i})"));
            }
        }
    }
    match (backend, kind) {
        (Backend::Sparse, StepKind::Sparse) => {
            for k in 0..h {
                for i in 0..rows {
                    let m = method.row_mass.get(k, i);
                    if (m - 1.0).abs() > 1e-9 {
                        return fail(format!("sparse row mass {m} at ({k}, {i})"));
                    }
                }
            }
        }
        (Backend::Rettention, StepKind::Sparse) => {
            let rho = &cache.expect("cache exists at sparse steps").current_rho;
            for k in 0..h {
                for i in 0..rows {
                    let r = rho.get(k, i);
                    if !(r > 0.0 && r <= 1.0) {
                        return fail(format!("cached rho {r} outside (0, 1] at ({k}, {i})"));
                    }
                    let m = method.row_mass.get(k, i);
                    if (m - r).abs() > 1e-9 {
                        return fail(format!(
                            "reshaped row mass {m} differs from rho {r} at ({k}, {i})"
                        ));
                    }
                }
            }
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{full_mask, sliding_window_mask};

    fn cfg(seed: u64, steps: usize, alpha: f64) -> TrajectoryConfig {
        TrajectoryConfig {
            seed,
            steps,
            heads: 2,
            tokens: 8,
            head_dim: 4,
            drift_alpha: alpha,
            logit_scale: 1.0,
        }
    }

    #[test]
    fn frozen_trajectory_repeats_the_first_step() {
        let traj = generate_trajectory(&cfg(1, 5, 1.0)).unwrap();
        for step in &traj[1..] {
            assert_eq!(step, &traj[0]);
        }
    }

    #[test]
    fn independent_steps_are_uncorrelated() {
        let c = TrajectoryConfig {
            seed: 2,
            steps: 5,
            heads: 4,
            tokens: 25,
            head_dim: 10,
            drift_alpha: 0.0,
            logit_scale: 1.0,
        };
        let traj = generate_trajectory(&c).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for t in 0..4 {
            for (a, b) in [
                (traj[t].q(), traj[t + 1].q()),
                (traj[t].k(), traj[t + 1].k()),
                (traj[t].v(), traj[t + 1].v()),
            ] {
                xs.extend_from_slice(a.data());
                ys.extend_from_slice(b.data());
            }
        }
        assert!(xs.len() >= 10_000);
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / n;
        let sx = (xs.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>() / n).sqrt();
        let sy = (ys.iter().map(|y| (y - my) * (y - my)).sum::<f64>() / n).sqrt();
        assert!((cov / (sx * sy)).abs() < 0.05);
    }

    #[test]
    fn drift_preserves_marginal_variance() {
        let c = TrajectoryConfig {
            seed: 3,
            steps: 30,
            heads: 4,
            tokens: 25,
            head_dim: 10,
            drift_alpha: 0.7,
            logit_scale: 2.0,
        };
        let traj = generate_trajectory(&c).unwrap();
        let want = c.logit_scale * c.logit_scale;
        // Variance estimate over n samples has std ~ var * sqrt(2 / n).
        let n = (c.heads * c.tokens * c.head_dim) as f64;
        let band = 3.0 * want * (2.0 / n).sqrt();
        for step in [&traj[0], &traj[15], &traj[29]] {
            for tensor in [step.q(), step.k(), step.v()] {
                let data = tensor.data();
                let mean = data.iter().sum::<f64>() / n;
                let var = data.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
                assert!(
                    (var - want).abs() < band,
                    "variance {var} outside {want} +- {band}"
                );
            }
        }
    }

    #[test]
    fn trajectories_are_deterministic() {
        let a = generate_trajectory(&cfg(7, 6, 0.9)).unwrap();
        let b = generate_trajectory(&cfg(7, 6, 0.9)).unwrap();
        assert_eq!(a, b);
        let c = generate_trajectory(&cfg(8, 6, 0.9)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn full_backend_has_zero_error_everywhere() {
        let sched = DenoisingSchedule::new(6, 2, 2, 0.04).unwrap();
        let mask = sliding_window_mask(2, 8, 1).unwrap();
        let report = run_seeded(
            &cfg(4, 6, 0.9),
            &mask,
            &sched,
            Backend::Full,
            &RunSettings::default(),
        )
        .unwrap();
        for s in &report.steps {
            assert_eq!(s.rel_err, 0.0);
            assert_eq!(s.cosine, 1.0);
            assert!(s.psnr.is_infinite());
        }
        assert_eq!(report.flops.flop_ratio, 1.0);
    }

    #[test]
    fn frozen_rettention_with_zero_lambda_is_exact() {
        let sched = DenoisingSchedule::new(10, 2, 3, 0.0).unwrap();
        let mask = sliding_window_mask(2, 8, 1).unwrap();
        let report = run_seeded(
            &cfg(5, 10, 1.0),
            &mask,
            &sched,
            Backend::Rettention,
            &RunSettings::default(),
        )
        .unwrap();
        for s in &report.steps {
            assert!(s.rel_err <= 1e-9, "step {} err {}", s.step, s.rel_err);
        }
    }

    #[test]
    fn reports_are_deterministic() {
        let sched = DenoisingSchedule::new(8, 2, 3, 0.04).unwrap();
        let mask = sliding_window_mask(2, 8, 0).unwrap();
        let a = run_seeded(&cfg(6, 8, 0.95), &mask, &sched, Backend::Rettention, &RunSettings::default()).unwrap();
        let b = run_seeded(&cfg(6, 8, 0.95), &mask, &sched, Backend::Rettention, &RunSettings::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_schedule_is_a_config_error() {
        let sched = DenoisingSchedule::new(9, 2, 3, 0.0).unwrap();
        let mask = sliding_window_mask(2, 8, 1).unwrap();
        let traj = generate_trajectory(&cfg(0, 6, 1.0)).unwrap();
        assert!(matches!(
            run_experiment(&traj, &mask, &sched, Backend::Sparse, &RunSettings::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn trace_target_must_be_in_range() {
        let traj = generate_trajectory(&cfg(0, 3, 1.0)).unwrap();
        let mask = full_mask(2, 8).unwrap();
        assert!(matches!(
            trace_rho(&traj, &mask, 2, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            trace_rho(&traj, &mask, 0, 8),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn frozen_trace_is_constant_and_full_mask_rho_is_one() {
        let traj = generate_trajectory(&cfg(9, 6, 1.0)).unwrap();
        let window = sliding_window_mask(2, 8, 1).unwrap();
        let trace = trace_rho(&traj, &window, 1, 3).unwrap();
        assert_eq!(trace.len(), 6);
        for p in &trace[1..] {
            assert_eq!(p.full_denom, trace[0].full_denom);
            assert_eq!(p.sparse_denom, trace[0].sparse_denom);
            assert_eq!(p.rho, trace[0].rho);
        }
        let full = full_mask(2, 8).unwrap();
        for p in trace_rho(&traj, &full, 0, 0).unwrap() {
            assert_eq!(p.rho, 1.0);
        }
    }

    #[test]
    fn flop_count_on_full_mask_matches_dense_cost() {
        let mask = full_mask(2, 8).unwrap();
        let (full, sparse) = flop_count(&mask, 4);
        assert_eq!(full, sparse);
    }

    #[test]
    fn diagonal_mask_shrinks_matmul_flops_by_token_count() {
        let mask = sliding_window_mask(1, 8, 0).unwrap();
        let (full, sparse) = flop_count(&mask, 4);
        assert_eq!(mask.included_count(), 8);
        assert_eq!(full.qk / sparse.qk, 8);
        assert_eq!(full.av / sparse.av, 8);
    }

    #[test]
    fn sparse_flop_ratio_equals_mask_density() {
        for w in [0usize, 1, 3] {
            let mask = sliding_window_mask(2, 16, w).unwrap();
            let report = flop_report(&mask, 8, Backend::Sparse);
            let density = 1.0 - mask.sparsity() / 100.0;
            assert!((report.flop_ratio - density).abs() < 1e-12);
        }
    }

    #[test]
    fn extreme_logit_scale_keeps_invariants() {
        let c = TrajectoryConfig {
            seed: 10,
            steps: 4,
            heads: 2,
            tokens: 8,
            head_dim: 4,
            drift_alpha: 0.99,
            logit_scale: 30.0,
        };
        let mask = sliding_window_mask(2, 8, 1).unwrap();
        let sched = DenoisingSchedule::new(4, 1, 2, 0.04).unwrap();
        let report = run_seeded(&c, &mask, &sched, Backend::Rettention, &RunSettings::default())
            .unwrap();
        for s in &report.steps {
            assert!(s.rel_err.is_finite());
            assert!(s.rho > 0.0 && s.rho <= 1.0);
        }
    }
}
