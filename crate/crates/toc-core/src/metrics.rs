//! Task metrics (AUROC, Macro-F1, accuracy), the lower-triangular
//! stability/plasticity matrix, and the concept-consistency audit suite.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("AUROC requires both classes present")]
    SingleClass,
    #[error("class {class} out of range for {n_classes} classes")]
    ClassOutOfRange { class: usize, n_classes: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("metric matrix row {step} incomplete")]
    MissingEntries { step: usize },
}

/// Which task metric a dataset reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricTag {
    Auroc,
    MacroF1,
    Accuracy,
}

impl MetricTag {
    /// Evaluate this metric from per-class probability rows.
    ///
    /// AUROC scores the positive class column; Macro-F1 and accuracy use the
    /// argmax prediction.
    pub fn evaluate(&self, probs: &crate::mat::Mat, labels: &[usize]) -> Result<f64, MetricError> {
        match self {
            MetricTag::Auroc => {
                let scores: Vec<f64> = (0..probs.rows()).map(|i| probs.get(i, 1)).collect();
                let binary: Vec<usize> = labels.to_vec();
                auroc(&scores, &binary)
            }
            MetricTag::MacroF1 => {
                let preds = argmax_rows(probs);
                macro_f1(&preds, labels, probs.cols())
            }
            MetricTag::Accuracy => {
                let preds = argmax_rows(probs);
                if preds.len() != labels.len() {
                    return Err(MetricError::LengthMismatch { left: preds.len(), right: labels.len() });
                }
                if labels.is_empty() {
                    return Err(MetricError::EmptyInput);
                }
                let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
                Ok(hits as f64 / labels.len() as f64)
            }
        }
    }
}

pub fn argmax_rows(probs: &crate::mat::Mat) -> Vec<usize> {
    (0..probs.rows()).map(|i| argmax(probs.row(i))).collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// AUROC via the Mann-Whitney U statistic with midrank tie handling:
/// P(score+ > score-) + 0.5 * P(tie).
pub fn auroc(scores: &[f64], labels: &[usize]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch { left: scores.len(), right: labels.len() });
    }
    if scores.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap().then(a.cmp(&b)));

    // Midranks over tie groups; ranks are 1-based.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }

    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Unweighted mean of per-class F1 over all `n_classes` label values; a class
/// with no true and no predicted instances contributes 0.
pub fn macro_f1(preds: &[usize], labels: &[usize], n_classes: usize) -> Result<f64, MetricError> {
    if preds.len() != labels.len() {
        return Err(MetricError::LengthMismatch { left: preds.len(), right: labels.len() });
    }
    if preds.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    for &v in preds.iter().chain(labels) {
        if v >= n_classes {
            return Err(MetricError::ClassOutOfRange { class: v, n_classes });
        }
    }
    let mut f1_sum = 0.0;
    for c in 0..n_classes {
        let tp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l == c).count();
        let fp = preds.iter().zip(labels).filter(|&(&p, &l)| p == c && l != c).count();
        let fn_ = preds.iter().zip(labels).filter(|&(&p, &l)| p != c && l == c).count();
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            f1_sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(f1_sum / n_classes as f64)
}

/// Lower-triangular evaluation matrix: `entry(t, j)` is the task metric of
/// the model after training step `t`, evaluated on slice `j`'s test split
/// (both 0-based, `j <= t`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricMatrix {
    pub metric: MetricTag,
    rows: Vec<Vec<f64>>,
}

impl MetricMatrix {
    pub fn new(metric: MetricTag) -> Self {
        MetricMatrix { metric, rows: Vec::new() }
    }

    /// Append the row for step `t`; must hold exactly `t + 1` entries.
    pub fn push_row(&mut self, row: Vec<f64>) {
        assert_eq!(row.len(), self.rows.len() + 1, "row t must have t+1 entries");
        self.rows.push(row);
    }

    pub fn n_steps(&self) -> usize {
        self.rows.len()
    }

    pub fn entry(&self, t: usize, j: usize) -> f64 {
        self.rows[t][j]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.rows[t]
    }

    /// Plasticity and stability at step `t` (0-based): plasticity is the
    /// current-slice entry, stability the mean over all earlier slices
    /// (absent at the first step, not zero).
    pub fn stability_plasticity(&self, t: usize) -> Result<(f64, Option<f64>), MetricError> {
        if t >= self.rows.len() || self.rows[t].len() != t + 1 {
            return Err(MetricError::MissingEntries { step: t });
        }
        let plasticity = self.rows[t][t];
        let stability = if t == 0 {
            None
        } else {
            Some(self.rows[t][..t].iter().sum::<f64>() / t as f64)
        };
        Ok((plasticity, stability))
    }

    /// Mean plasticity over all steps.
    pub fn avg_current_task(&self) -> f64 {
        let n = self.rows.len();
        self.rows.iter().enumerate().map(|(t, r)| r[t]).sum::<f64>() / n as f64
    }

    /// Mean stability over steps that have one (t >= 1); `None` for a
    /// single-slice stream.
    pub fn avg_past_task(&self) -> Option<f64> {
        if self.rows.len() < 2 {
            return None;
        }
        let mut acc = 0.0;
        let mut n = 0usize;
        for t in 1..self.rows.len() {
            acc += self.rows[t][..t].iter().sum::<f64>() / t as f64;
            n += 1;
        }
        Some(acc / n as f64)
    }

    /// Stability at the final step, if defined.
    pub fn final_stability(&self) -> Option<f64> {
        let t = self.rows.len().checked_sub(1)?;
        self.stability_plasticity(t).ok()?.1
    }
}

/// Fraction of positions where the predicted concept equals the tree-assigned
/// concept.
pub fn node_agreement(z: &[usize], z_hat: &[usize]) -> Result<f64, MetricError> {
    if z.len() != z_hat.len() {
        return Err(MetricError::LengthMismatch { left: z.len(), right: z_hat.len() });
    }
    if z.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    let hits = z.iter().zip(z_hat).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / z.len() as f64)
}

/// Absolute task-metric difference between the soft predicted-concept pathway
/// and the hard tree-assigned pathway; lower means the predicted concepts are
/// faithful to the tree interface.
pub fn rule_fidelity_gap(
    metric: MetricTag,
    labels: &[usize],
    probs_soft: &crate::mat::Mat,
    probs_hard: &crate::mat::Mat,
) -> Result<f64, MetricError> {
    let soft = metric.evaluate(probs_soft, labels)?;
    let hard = metric.evaluate(probs_hard, labels)?;
    Ok((soft - hard).abs())
}

/// Among samples whose top concept confidence exceeds `tau`, the fraction
/// whose predicted concept contradicts the tree assignment. When nothing
/// clears the threshold the rate is 0 with `n_confident = 0` as the marker.
pub fn high_conf_contradiction(concept_probs: &crate::mat::Mat, z: &[usize], tau: f64) -> (f64, usize) {
    assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0,1)");
    let mut confident = 0usize;
    let mut contradictions = 0usize;
    for i in 0..concept_probs.rows() {
        let row = concept_probs.row(i);
        let j = argmax(row);
        if row[j] > tau {
            confident += 1;
            if j != z[i] {
                contradictions += 1;
            }
        }
    }
    if confident == 0 {
        (0.0, 0)
    } else {
        (contradictions as f64 / confident as f64, confident)
    }
}

/// Concept-consistency audit at one protocol step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptAudit {
    pub step: usize,
    pub node_agreement: f64,
    pub rule_fidelity_gap: f64,
    pub high_conf_contradiction: f64,
    pub n_confident: usize,
    pub tau: f64,
    pub n_samples: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mat::Mat;

    #[test]
    fn auroc_separated_and_ties() {
        let s = vec![0.1, 0.2, 0.8, 0.9];
        let l = vec![0, 0, 1, 1];
        assert_eq!(auroc(&s, &l).unwrap(), 1.0);
        let all_equal = vec![0.5; 4];
        assert_eq!(auroc(&all_equal, &l).unwrap(), 0.5);
        let inverted = vec![0.9, 0.8, 0.2, 0.1];
        assert_eq!(auroc(&inverted, &l).unwrap(), 0.0);
    }

    #[test]
    fn auroc_known_value() {
        // classic reference case: 0.75
        let l = vec![0, 0, 1, 1];
        let s = vec![0.1, 0.4, 0.35, 0.8];
        assert!((auroc(&s, &l).unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn auroc_single_class_errors() {
        assert_eq!(auroc(&[0.1, 0.2], &[1, 1]).unwrap_err(), MetricError::SingleClass);
    }

    /// Brute-force pairwise oracle: wins + half-ties over all pos-neg pairs.
    pub(crate) fn auroc_pairwise(scores: &[f64], labels: &[usize]) -> f64 {
        let mut wins = 0u64;
        let mut ties = 0u64;
        let mut pairs = 0u64;
        for (i, &li) in labels.iter().enumerate() {
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj != 0 {
                    continue;
                }
                pairs += 1;
                if scores[i] > scores[j] {
                    wins += 1;
                } else if scores[i] == scores[j] {
                    ties += 1;
                }
            }
        }
        (wins as f64 + 0.5 * ties as f64) / pairs as f64
    }

    #[test]
    fn auroc_matches_pairwise_oracle_exactly() {
        use rand::Rng;
        let mut rng = crate::seed::rng(11, &[99]);
        for trial in 0..50 {
            let n = 5 + (trial % 40);
            // coarse grid forces plenty of ties
            let scores: Vec<f64> = (0..n).map(|_| (rng.gen_range(0..20) as f64) / 20.0).collect();
            let mut labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            labels[0] = 0;
            labels[1] = 1;
            let fast = auroc(&scores, &labels).unwrap();
            let slow = auroc_pairwise(&scores, &labels);
            assert_eq!(fast, slow, "trial {trial}");
        }
    }

    #[test]
    fn macro_f1_hand_cases() {
        // perfect predictions
        let l = vec![0, 1, 2, 0, 1, 2];
        assert_eq!(macro_f1(&l, &l, 3).unwrap(), 1.0);
        // all-zero predictions on balanced binary labels
        let preds = vec![0; 10];
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let got = macro_f1(&preds, &labels, 2).unwrap();
        assert!((got - 1.0 / 3.0).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn macro_f1_class_out_of_range() {
        let err = macro_f1(&[0, 3], &[0, 1], 2).unwrap_err();
        assert!(matches!(err, MetricError::ClassOutOfRange { class: 3, .. }));
    }

    #[test]
    fn stability_plasticity_arithmetic() {
        let mut m = MetricMatrix::new(MetricTag::Auroc);
        m.push_row(vec![0.7]);
        m.push_row(vec![0.6, 0.8]);
        m.push_row(vec![0.6, 0.8, 0.9]);
        let (p0, s0) = m.stability_plasticity(0).unwrap();
        assert_eq!(p0, 0.7);
        assert_eq!(s0, None);
        let (p2, s2) = m.stability_plasticity(2).unwrap();
        assert_eq!(p2, 0.9);
        assert!((s2.unwrap() - 0.7).abs() < 1e-12);
        // hand totals: S_1 = 0.6, S_2 = 0.7 -> avg past = 0.65
        assert!((m.avg_past_task().unwrap() - 0.65).abs() < 1e-12);
        // P = (0.7 + 0.8 + 0.9)/3
        assert!((m.avg_current_task() - 0.8).abs() < 1e-12);
        assert!((m.final_stability().unwrap() - 0.7).abs() < 1e-12);
    }

    #[test]
    fn single_step_matrix_has_no_stability() {
        let mut m = MetricMatrix::new(MetricTag::Auroc);
        m.push_row(vec![0.9]);
        assert_eq!(m.avg_past_task(), None);
        assert_eq!(m.final_stability(), None);
        assert_eq!(m.avg_current_task(), 0.9);
    }

    #[test]
    fn node_agreement_edges() {
        assert_eq!(node_agreement(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(node_agreement(&[1, 2, 3], &[0, 0, 0]).unwrap(), 0.0);
        assert_eq!(node_agreement(&[], &[]).unwrap_err(), MetricError::EmptyInput);
        assert!(matches!(
            node_agreement(&[1], &[1, 2]),
            Err(MetricError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn contradiction_rate_arithmetic() {
        // 10 samples over 2 concepts; 4 confident (>0.8), 1 of those wrong.
        let mut rows = Vec::new();
        let mut z = Vec::new();
        for i in 0..10 {
            if i < 4 {
                rows.push(vec![0.9, 0.1]);
                z.push(usize::from(i == 0)); // sample 0 contradicts
            } else {
                rows.push(vec![0.6, 0.4]);
                z.push(0);
            }
        }
        let m = Mat::from_rows(&rows);
        let (rate, n_conf) = high_conf_contradiction(&m, &z, 0.8);
        assert_eq!(n_conf, 4);
        assert!((rate - 0.25).abs() < 1e-12);
    }

    #[test]
    fn contradiction_zero_denominator_flagged() {
        let m = Mat::from_rows(&[vec![0.5, 0.5], vec![0.6, 0.4]]);
        let (rate, n_conf) = high_conf_contradiction(&m, &[0, 0], 0.8);
        assert_eq!((rate, n_conf), (0.0, 0));
    }

    #[test]
    fn fidelity_gap_scripted_difference() {
        // Two pathways differing on exactly 1 of 10 samples under accuracy:
        // gap must be exactly 0.1.
        let labels: Vec<usize> = (0..10).map(|i| i % 2).collect();
        let mut soft_rows = Vec::new();
        let mut hard_rows = Vec::new();
        for (i, &l) in labels.iter().enumerate() {
            let mut correct = vec![0.0, 0.0];
            correct[l] = 1.0;
            soft_rows.push(correct.clone());
            if i == 3 {
                hard_rows.push(vec![correct[1], correct[0]]); // flipped
            } else {
                hard_rows.push(correct);
            }
        }
        let gap = rule_fidelity_gap(
            MetricTag::Accuracy,
            &labels,
            &Mat::from_rows(&soft_rows),
            &Mat::from_rows(&hard_rows),
        )
        .unwrap();
        assert!((gap - 0.1).abs() < 1e-12);

        // identical pathways: gap 0
        let same = Mat::from_rows(&soft_rows);
        let gap0 = rule_fidelity_gap(MetricTag::Accuracy, &labels, &same, &same).unwrap();
        assert_eq!(gap0, 0.0);
    }
}
