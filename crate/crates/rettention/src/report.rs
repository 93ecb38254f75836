//! Report serialization: JSON for the full report, CSV for per-step tables.
//!
//! Headers are part of the output contract and must not change. Floats use
//! Rust's shortest round-trip formatting, which is locale independent;
//! non-finite values are written as `inf` / `-inf`.

use crate::simulator::{Backend, MetricsReport, RhoTracePoint};

pub const STEPS_CSV_HEADER: &str = "step,kind,rel_err,cosine,psnr,full_denom,sparse_denom,rho";
pub const RHO_TRACE_CSV_HEADER: &str = "step,full_denom,sparse_denom,rho";
pub const COMPARE_CSV_HEADER: &str = "backend,mean_rel_err,mean_cosine,flop_ratio";

/// One line of a `compare` table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareRow {
    pub backend: Backend,
    pub mean_rel_err: f64,
    pub mean_cosine: f64,
    pub flop_ratio: f64,
}

fn fmt_float(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x}")
    }
}

/// The report as pretty-printed JSON (plus a trailing newline).
pub fn report_json(report: &MetricsReport) -> String {
    let mut text =
        serde_json::to_string_pretty(report).expect("report serialization cannot fail");
    text.push('\n');
    text
}

/// Per-step metrics table.
pub fn steps_csv(report: &MetricsReport) -> String {
    let mut out = String::from(STEPS_CSV_HEADER);
    out.push('\n');
    for s in &report.steps {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            s.step,
            s.kind,
            fmt_float(s.rel_err),
            fmt_float(s.cosine),
            fmt_float(s.psnr),
            fmt_float(s.full_denom),
            fmt_float(s.sparse_denom),
            fmt_float(s.rho),
        ));
    }
    out
}

/// Denominator trace table.
pub fn rho_trace_csv(points: &[RhoTracePoint]) -> String {
    let mut out = String::from(RHO_TRACE_CSV_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.step,
            fmt_float(p.full_denom),
            fmt_float(p.sparse_denom),
            fmt_float(p.rho),
        ));
    }
    out
}

/// Backend comparison table, one row per backend.
pub fn compare_csv(rows: &[CompareRow]) -> String {
    let mut out = String::from(COMPARE_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.backend,
            fmt_float(r.mean_rel_err),
            fmt_float(r.mean_cosine),
            fmt_float(r.flop_ratio),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::sliding_window_mask;
    use crate::schedule::DenoisingSchedule;
    use crate::simulator::{run_seeded, RunSettings, TrajectoryConfig};

    fn small_report(backend: Backend) -> MetricsReport {
        let cfg = TrajectoryConfig {
            seed: 0,
            steps: 4,
            heads: 1,
            tokens: 6,
            head_dim: 3,
            drift_alpha: 0.9,
            logit_scale: 1.0,
        };
        let mask = sliding_window_mask(1, 6, 1).unwrap();
        let sched = DenoisingSchedule::new(4, 1, 2, 0.04).unwrap();
        run_seeded(&cfg, &mask, &sched, backend, &RunSettings::default()).unwrap()
    }

    #[test]
    fn steps_csv_has_header_and_one_row_per_step() {
        let report = small_report(Backend::Sparse);
        let text = steps_csv(&report);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], STEPS_CSV_HEADER);
        assert_eq!(lines.len(), 1 + report.steps.len());
        assert!(lines[1].starts_with("0,warmup_full,"));
    }

    #[test]
    fn infinite_psnr_is_written_as_inf() {
        let report = small_report(Backend::Full);
        let text = steps_csv(&report);
        for line in text.lines().skip(1) {
            assert_eq!(line.split(',').nth(4).unwrap(), "inf");
        }
    }

    #[test]
    fn report_json_is_parseable_and_carries_the_seed() {
        let report = small_report(Backend::Rettention);
        let doc: serde_json::Value = serde_json::from_str(&report_json(&report)).unwrap();
        assert_eq!(doc["seed"], 0);
        assert_eq!(doc["backend"], "rettention");
        assert_eq!(doc["steps"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn compare_csv_lists_backends_in_given_order() {
        let rows: Vec<CompareRow> = Backend::ALL
            .iter()
            .map(|&backend| {
                let r = small_report(backend);
                CompareRow {
                    backend,
                    mean_rel_err: r.aggregate.mean_rel_err,
                    mean_cosine: r.aggregate.mean_cosine,
                    flop_ratio: r.flops.flop_ratio,
                }
            })
            .collect();
        let text = compare_csv(&rows);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], COMPARE_CSV_HEADER);
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("full,0,1,1"));
        assert!(lines[3].starts_with("post_softmax,"));
        assert!(lines[3].ends_with(",1"));
    }
}
