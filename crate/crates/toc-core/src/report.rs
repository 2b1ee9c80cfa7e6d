//! Consolidated comparison tables and figure data derived from run reports.
//!
//! The comparison CSV mirrors the familiar results-table column layout
//! (method, replay, full-data upper bound, average past-task, average
//! current-task); the scatter CSV pairs each method's no-replay and replay
//! points so plots can draw connecting segments.

use thiserror::Error;

use crate::protocol::{Aggregate, RunReport};

#[derive(Debug, Error, PartialEq)]
pub enum ReportError {
    #[error("no reports given")]
    MissingReport,
    #[error("dataset fingerprint mismatch: report {index} has {got}, expected {expected}")]
    FingerprintMismatch { index: usize, expected: String, got: String },
}

/// Reports may only be merged into one table when they ran on byte-identical
/// data.
pub fn check_merge_compatible(reports: &[RunReport]) -> Result<(), ReportError> {
    let first = reports.first().ok_or(ReportError::MissingReport)?;
    for (index, r) in reports.iter().enumerate() {
        if r.dataset_fingerprint != first.dataset_fingerprint {
            return Err(ReportError::FingerprintMismatch {
                index,
                expected: first.dataset_fingerprint.clone(),
                got: r.dataset_fingerprint.clone(),
            });
        }
    }
    Ok(())
}

fn fmt_full(v: f64) -> String {
    // shortest round-trip representation; full precision survives the CSV
    format!("{v}")
}

fn agg_cells(agg: Option<&Aggregate>) -> (String, String) {
    match agg {
        Some(a) => (fmt_full(a.mean), a.se.map(fmt_full).unwrap_or_default()),
        None => (String::new(), String::new()),
    }
}

/// One comparison row per report, in the given order.
pub fn comparison_table_csv(reports: &[RunReport]) -> Result<String, ReportError> {
    check_merge_compatible(reports)?;
    let mut out = String::from(
        "method,replay,ablation,full_data_ub,full_data_ub_se,avg_past_task,avg_past_task_se,avg_current_task,avg_current_task_se\n",
    );
    for r in reports {
        let (ub, ub_se) = agg_cells(r.upper_bound.as_ref());
        let (past, past_se) = agg_cells(r.avg_past_task.as_ref());
        let (cur, cur_se) = agg_cells(Some(&r.avg_current_task));
        let ablation = serde_json::to_value(r.ablation)
            .ok()
            .and_then(|v| v.as_str().map(str::to_string))
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.method, r.replay, ablation, ub, ub_se, past, past_se, cur, cur_se
        ));
    }
    Ok(out)
}

fn fmt_pm(agg: Option<&Aggregate>) -> String {
    match agg {
        Some(a) => match a.se {
            Some(se) => format!("{:.3} \u{b1} {:.3}", a.mean, se),
            None => format!("{:.3}", a.mean),
        },
        None => "-".into(),
    }
}

/// The human-readable one-liner printed after a run.
pub fn render_table_row(r: &RunReport) -> String {
    format!(
        "{:<14} replay={:<5} UB={:<16} past={:<16} current={}",
        r.method,
        if r.replay { "yes" } else { "no" },
        fmt_pm(r.upper_bound.as_ref()),
        fmt_pm(r.avg_past_task.as_ref()),
        fmt_pm(Some(&r.avg_current_task)),
    )
}

/// Stability-plasticity scatter rows: `x` is average current-task, `y` is
/// average past-task. Reports of the same method that differ in replay get a
/// shared `segment` id so the figure can link them.
pub fn plot_data_csv(reports: &[RunReport]) -> Result<String, ReportError> {
    check_merge_compatible(reports)?;
    // method -> (has no-replay, has replay)
    let mut methods: Vec<&str> = Vec::new();
    for r in reports {
        if !methods.contains(&r.method.as_str()) {
            methods.push(&r.method);
        }
    }
    let mut segment_of: Vec<Option<usize>> = vec![None; reports.len()];
    let mut next_segment = 0usize;
    for m in &methods {
        let idx: Vec<usize> = reports
            .iter()
            .enumerate()
            .filter(|(_, r)| r.method == *m)
            .map(|(i, _)| i)
            .collect();
        let has_no_replay = idx.iter().any(|&i| !reports[i].replay);
        let has_replay = idx.iter().any(|&i| reports[i].replay);
        if has_no_replay && has_replay {
            for &i in &idx {
                segment_of[i] = Some(next_segment);
            }
            next_segment += 1;
        }
    }

    let mut out = String::from("method,replay,avg_current_task,avg_past_task,segment\n");
    for (i, r) in reports.iter().enumerate() {
        let y = r.avg_past_task.as_ref().map(|a| fmt_full(a.mean)).unwrap_or_default();
        let seg = segment_of[i].map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.method,
            r.replay,
            fmt_full(r.avg_current_task.mean),
            y,
            seg
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{MetricMatrix, MetricTag};
    use crate::protocol::{Ablation, DatasetRef, LearnerKind, ReplayConfig, RunConfig, SeedReport, TrainConfig, TreeConfig};
    use crate::tabular::SynthSpec;

    fn report(method: &str, replay: bool, past: f64, current: f64, fp: &str) -> RunReport {
        let mut matrix = MetricMatrix::new(MetricTag::Auroc);
        matrix.push_row(vec![current]);
        matrix.push_row(vec![past, current]);
        let seed_report = SeedReport {
            seed: 0,
            matrix,
            audits: vec![],
            rule_hashes: vec![],
            train_logs: vec![],
            avg_past_task: Some(past),
            avg_current_task: current,
            final_stability: Some(past),
        };
        let config = RunConfig {
            dataset: DatasetRef::Synth(SynthSpec::stationary(2, 10, 2, 2)),
            learner: LearnerKind::Toc,
            replay: ReplayConfig::standard(replay, 64),
            lambda: 1.0,
            concept_mode: Default::default(),
            tree: TreeConfig::default(),
            train: TrainConfig::default(),
            seeds: vec![0],
            ablation: Ablation::None,
            tau: 0.8,
        };
        RunReport {
            method: method.into(),
            replay,
            ablation: Ablation::None,
            dataset_name: "x".into(),
            dataset_fingerprint: fp.into(),
            config_fingerprint: config.fingerprint(),
            metric: MetricTag::Auroc,
            per_seed: vec![seed_report],
            avg_past_task: Aggregate::over(vec![past]),
            avg_current_task: Aggregate::over(vec![current]).unwrap(),
            final_stability: Aggregate::over(vec![past]),
            concept_audit_final: None,
            upper_bound: Aggregate::over(vec![0.9]),
            resolved_config: config,
        }
    }

    #[test]
    fn seven_reports_three_segments() {
        // three baselines in both replay modes plus one replay-only method
        let reports = vec![
            report("tree_baseline", false, 0.56, 0.72, "fp"),
            report("xgb_standin", false, 0.75, 0.84, "fp"),
            report("mlp_direct", false, 0.73, 0.83, "fp"),
            report("tree_baseline", true, 0.63, 0.73, "fp"),
            report("xgb_standin", true, 0.78, 0.85, "fp"),
            report("mlp_direct", true, 0.76, 0.84, "fp"),
            report("toc", true, 0.80, 0.85, "fp"),
        ];
        let csv = plot_data_csv(&reports).unwrap();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 8); // header + 7 points
        let segments: std::collections::BTreeSet<&str> = lines[1..]
            .iter()
            .map(|l| l.rsplit(',').next().unwrap())
            .filter(|s| !s.is_empty())
            .collect();
        assert_eq!(segments.len(), 3);
        // toc row has no segment
        let toc_line = lines.iter().find(|l| l.starts_with("toc,")).unwrap();
        assert!(toc_line.ends_with(','));
    }

    #[test]
    fn single_report_zero_segments_full_precision() {
        let r = report("toc", true, 0.801234567890123, 0.85, "fp");
        let csv = plot_data_csv(std::slice::from_ref(&r)).unwrap();
        assert!(csv.contains("0.801234567890123"), "{csv}");
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[1].ends_with(','));
    }

    #[test]
    fn fingerprint_mismatch_refused() {
        let a = report("toc", true, 0.8, 0.85, "fp1");
        let b = report("tree_baseline", false, 0.5, 0.7, "fp2");
        let err = comparison_table_csv(&[a, b]).unwrap_err();
        assert!(matches!(err, ReportError::FingerprintMismatch { index: 1, .. }));
        assert_eq!(plot_data_csv(&[]).unwrap_err(), ReportError::MissingReport);
    }

    #[test]
    fn table_layout_columns() {
        let r = report("toc", true, 0.8, 0.85, "fp");
        let csv = comparison_table_csv(std::slice::from_ref(&r)).unwrap();
        let header = csv.lines().next().unwrap();
        assert_eq!(
            header,
            "method,replay,ablation,full_data_ub,full_data_ub_se,avg_past_task,avg_past_task_se,avg_current_task,avg_current_task_se"
        );
        assert!(csv.lines().nth(1).unwrap().starts_with("toc,true,none,0.9,,0.8,"));
    }
}
