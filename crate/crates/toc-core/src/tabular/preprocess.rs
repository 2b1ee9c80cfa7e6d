//! First-slice-frozen preprocessing: z-scoring, one-hot encoding, imputation,
//! and missingness indicators.
//!
//! All statistics are computed once from the fitting rows and never updated;
//! the encoded width `d_enc` is a pure function of the fitted state, so every
//! slice of a run shares the same feature layout.

use serde::{Deserialize, Serialize};

use super::{ColumnData, ColumnSpec, RawTable, TabularError};
use crate::mat::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ColumnStats {
    Continuous {
        mean: f64,
        /// Population standard deviation; forced to 1.0 for zero-variance
        /// columns so the divisor is always strictly positive.
        std: f64,
        median: f64,
    },
    Categorical {
        /// First-appearance order over the fitting rows; frozen thereafter.
        categories: Vec<String>,
        mode: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    columns: Vec<(ColumnSpec, ColumnStats)>,
    /// Schema column indices that emit a missingness-indicator column.
    indicator_cols: Vec<usize>,
    fitted_on_slice: usize,
    d_enc: usize,
}

impl Preprocessor {
    /// Fit statistics over the non-missing values of `rows` only.
    pub fn fit(table: &RawTable, rows: &[usize], fitted_on_slice: usize) -> Result<Self, TabularError> {
        assert!(!rows.is_empty(), "fit_preprocessor requires a nonempty row set");
        let mut columns = Vec::with_capacity(table.schema.columns.len());
        let mut indicator_cols = Vec::new();

        for (ci, spec) in table.schema.columns.iter().enumerate() {
            let mut saw_missing = false;
            let stats = match &table.columns[ci] {
                ColumnData::Continuous(values) => {
                    let mut observed: Vec<f64> = Vec::new();
                    for &r in rows {
                        match values[r] {
                            Some(v) => observed.push(v),
                            None => saw_missing = true,
                        }
                    }
                    if observed.is_empty() {
                        return Err(TabularError::AllMissingColumn(spec.name.clone()));
                    }
                    let n = observed.len() as f64;
                    let mean = observed.iter().sum::<f64>() / n;
                    let var = observed.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = if var > 0.0 { var.sqrt() } else { 1.0 };
                    let mut sorted = observed.clone();
                    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let median = if sorted.len() % 2 == 1 {
                        sorted[sorted.len() / 2]
                    } else {
                        (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2]) / 2.0
                    };
                    ColumnStats::Continuous { mean, std, median }
                }
                ColumnData::Categorical(values) => {
                    let mut categories: Vec<String> = Vec::new();
                    let mut counts: Vec<usize> = Vec::new();
                    for &r in rows {
                        match &values[r] {
                            Some(v) => match categories.iter().position(|c| c == v) {
                                Some(k) => counts[k] += 1,
                                None => {
                                    categories.push(v.clone());
                                    counts.push(1);
                                }
                            },
                            None => saw_missing = true,
                        }
                    }
                    if categories.is_empty() {
                        return Err(TabularError::AllMissingColumn(spec.name.clone()));
                    }
                    // Mode: highest count, earliest appearance on ties.
                    let best = (0..categories.len()).max_by_key(|&k| (counts[k], usize::MAX - k)).unwrap();
                    ColumnStats::Categorical { categories: categories.clone(), mode: categories[best].clone() }
                }
            };
            if saw_missing || spec.may_miss {
                indicator_cols.push(ci);
            }
            columns.push((spec.clone(), stats));
        }

        let d_enc = encoded_width(&columns, &indicator_cols);
        Ok(Preprocessor { columns, indicator_cols, fitted_on_slice, d_enc })
    }

    pub fn d_enc(&self) -> usize {
        self.d_enc
    }

    pub fn fitted_on_slice(&self) -> usize {
        self.fitted_on_slice
    }

    pub fn stats(&self, column: usize) -> &ColumnStats {
        &self.columns[column].1
    }

    /// Names of the encoded columns, in layout order: per-column blocks
    /// (continuous value or one-hot per category) followed by the
    /// missingness-indicator block.
    pub fn encoded_feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.d_enc);
        for (spec, stats) in &self.columns {
            match stats {
                ColumnStats::Continuous { .. } => names.push(spec.name.clone()),
                ColumnStats::Categorical { categories, .. } => {
                    for cat in categories {
                        names.push(format!("{}={}", spec.name, cat));
                    }
                }
            }
        }
        for &ci in &self.indicator_cols {
            names.push(format!("{}_missing", self.columns[ci].0.name));
        }
        names
    }

    /// For an encoded column holding a z-scored continuous feature, map a
    /// threshold back to raw units; one-hot and indicator columns pass
    /// through unchanged.
    pub fn decode_threshold(&self, encoded_col: usize, threshold: f64) -> f64 {
        let mut j = 0;
        for (_, stats) in &self.columns {
            match stats {
                ColumnStats::Continuous { mean, std, .. } => {
                    if j == encoded_col {
                        return threshold * std + mean;
                    }
                    j += 1;
                }
                ColumnStats::Categorical { categories, .. } => {
                    if encoded_col < j + categories.len() {
                        return threshold;
                    }
                    j += categories.len();
                }
            }
        }
        threshold
    }

    /// Encode `rows` of `table` into a dense `len(rows) x d_enc` matrix.
    ///
    /// Continuous: impute fitted median, then z-score. Categorical: impute
    /// fitted mode, then one-hot over the fitted category list; unseen
    /// categories encode as the all-zero block. Every indicator column is 1
    /// exactly when the source cell was missing.
    pub fn apply(&self, table: &RawTable, rows: &[usize]) -> Result<Mat, TabularError> {
        if table.schema.columns.len() != self.columns.len() {
            return Err(TabularError::SchemaMismatch("table has different column count than fitted schema".into()));
        }
        for (ci, (spec, _)) in self.columns.iter().enumerate() {
            let t = &table.schema.columns[ci];
            if t.name != spec.name || t.kind != spec.kind {
                return Err(TabularError::SchemaMismatch(format!(
                    "column {ci}: fitted on {:?} {}, got {:?} {}",
                    spec.kind, spec.name, t.kind, t.name
                )));
            }
        }

        let mut out = Mat::zeros(rows.len(), self.d_enc);
        let indicator_base = self.d_enc - self.indicator_cols.len();
        for (k, &r) in rows.iter().enumerate() {
            let row = out.row_mut(k);
            let mut j = 0;
            for (ci, (_, stats)) in self.columns.iter().enumerate() {
                let missing = table.columns[ci].is_missing(r);
                match (stats, &table.columns[ci]) {
                    (ColumnStats::Continuous { mean, std, median }, ColumnData::Continuous(values)) => {
                        let v = values[r].unwrap_or(*median);
                        row[j] = (v - mean) / std;
                        j += 1;
                    }
                    (ColumnStats::Categorical { categories, mode }, ColumnData::Categorical(values)) => {
                        let v = values[r].as_deref().unwrap_or(mode.as_str());
                        if let Some(pos) = categories.iter().position(|c| c == v) {
                            row[j + pos] = 1.0;
                        }
                        j += categories.len();
                    }
                    _ => unreachable!("kind checked above"),
                }
                if missing {
                    if let Ok(pos) = self.indicator_cols.binary_search(&ci) {
                        row[indicator_base + pos] = 1.0;
                    }
                }
            }
        }
        Ok(out)
    }
}

fn encoded_width(columns: &[(ColumnSpec, ColumnStats)], indicator_cols: &[usize]) -> usize {
    let mut w = indicator_cols.len();
    for (_, stats) in columns {
        w += match stats {
            ColumnStats::Continuous { .. } => 1,
            ColumnStats::Categorical { categories, .. } => categories.len(),
        };
    }
    w
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnKind, DatasetSchema, LabelRule, LabelSpec, SliceRule, SplitRatios};

    fn table(cont: Vec<Option<f64>>, cat: Vec<Option<&str>>) -> RawTable {
        let n = cont.len();
        RawTable {
            schema: DatasetSchema {
                name: "t".into(),
                columns: vec![
                    ColumnSpec { name: "c".into(), kind: ColumnKind::Continuous, may_miss: false },
                    ColumnSpec { name: "g".into(), kind: ColumnKind::Categorical, may_miss: false },
                ],
                label: LabelSpec { column: "y".into(), rule: LabelRule::Identity },
                n_classes: 2,
                slice: SliceRule { column: "c".into(), boundaries: vec![] },
                subsample: None,
                split: SplitRatios::default_ratios(),
            },
            columns: vec![
                ColumnData::Continuous(cont),
                ColumnData::Categorical(cat.into_iter().map(|o| o.map(str::to_string)).collect()),
            ],
            labels: vec![Some(0.0); n],
            n_rows: n,
        }
    }

    #[test]
    fn two_point_mean_and_population_std() {
        let t = table(vec![Some(2.0), Some(4.0)], vec![Some("a"), Some("b")]);
        let p = Preprocessor::fit(&t, &[0, 1], 0).unwrap();
        match p.stats(0) {
            ColumnStats::Continuous { mean, std, .. } => {
                assert_eq!(*mean, 3.0);
                assert_eq!(*std, 1.0);
            }
            _ => panic!(),
        }
    }

    #[test]
    fn zero_variance_divisor_is_one() {
        let t = table(vec![Some(5.0), Some(5.0), Some(5.0)], vec![Some("a"), Some("a"), Some("a")]);
        let p = Preprocessor::fit(&t, &[0, 1, 2], 0).unwrap();
        match p.stats(0) {
            ColumnStats::Continuous { mean, std, .. } => {
                assert_eq!(*mean, 5.0);
                assert_eq!(*std, 1.0);
            }
            _ => panic!(),
        }
        let x = p.apply(&t, &[0]).unwrap();
        assert_eq!(x.get(0, 0), 0.0);
    }

    #[test]
    fn zscore_arithmetic() {
        let t = table(vec![Some(2.0), Some(4.0)], vec![Some("a"), Some("b")]);
        let p = Preprocessor::fit(&t, &[0, 1], 0).unwrap();
        let x = p.apply(&t, &[1]).unwrap();
        assert_eq!(x.get(0, 0), 1.0); // (4-3)/1
    }

    #[test]
    fn imputation_path_sets_indicator() {
        let t = table(
            vec![Some(2.0), Some(4.0), None],
            vec![Some("a"), Some("b"), Some("a")],
        );
        let p = Preprocessor::fit(&t, &[0, 1, 2], 0).unwrap();
        // median of {2,4} = 3 = mean, so imputed value z-scores to 0
        let x = p.apply(&t, &[2]).unwrap();
        assert_eq!(x.get(0, 0), 0.0);
        let names = p.encoded_feature_names();
        let ind = names.iter().position(|n| n == "c_missing").unwrap();
        assert_eq!(x.get(0, ind), 1.0);
        // non-missing row has indicator 0
        let x0 = p.apply(&t, &[0]).unwrap();
        assert_eq!(x0.get(0, ind), 0.0);
    }

    #[test]
    fn unseen_category_is_all_zero_block() {
        let t1 = table(vec![Some(1.0), Some(2.0)], vec![Some("a"), Some("b")]);
        let p = Preprocessor::fit(&t1, &[0, 1], 0).unwrap();
        let t2 = table(vec![Some(1.0), Some(2.0)], vec![Some("zz"), Some("a")]);
        let x = p.apply(&t2, &[0, 1]).unwrap();
        // columns: c, g=a, g=b
        assert_eq!(x.cols(), 3);
        assert_eq!(x.get(0, 1), 0.0);
        assert_eq!(x.get(0, 2), 0.0);
        assert_eq!(x.get(1, 1), 1.0);
    }

    #[test]
    fn all_missing_column_errors() {
        let t = table(vec![None, None], vec![Some("a"), Some("b")]);
        let err = Preprocessor::fit(&t, &[0, 1], 0).unwrap_err();
        assert!(matches!(err, TabularError::AllMissingColumn(_)));
    }

    #[test]
    fn width_is_stable_and_apply_is_pure() {
        let t1 = table(vec![Some(1.0), Some(2.0), None], vec![Some("a"), Some("b"), None]);
        let p = Preprocessor::fit(&t1, &[0, 1, 2], 0).unwrap();
        let t2 = table(vec![Some(9.0), None, Some(3.0)], vec![Some("new"), Some("a"), None]);
        let x1 = p.apply(&t2, &[0, 1, 2]).unwrap();
        let x2 = p.apply(&t2, &[0, 1, 2]).unwrap();
        assert_eq!(x1, x2);
        assert_eq!(x1.cols(), p.d_enc());
        assert_eq!(p.apply(&t1, &[0]).unwrap().cols(), p.d_enc());
    }

    #[test]
    fn serialization_roundtrip_is_stable() {
        let t = table(vec![Some(1.0), Some(2.0), None], vec![Some("a"), Some("b"), Some("a")]);
        let p = Preprocessor::fit(&t, &[0, 1, 2], 0).unwrap();
        let s1 = serde_json::to_string(&p).unwrap();
        let back: Preprocessor = serde_json::from_str(&s1).unwrap();
        let s2 = serde_json::to_string(&back).unwrap();
        assert_eq!(s1, s2);
        assert_eq!(p, back);
    }
}
