//! Ordered slice construction: bucketing rows by a continuous column,
//! stratified train/val/test splits, and assembly of the encoded
//! [`PreparedDataset`] consumed by the protocol runner.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ColumnData, ColumnKind, Preprocessor, RawTable, TabularError};
use crate::mat::Mat;
use crate::metrics::MetricTag;
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.6, val: 0.2, test: 0.2 }
    }
}

impl SplitRatios {
    pub fn default_ratios() -> Self {
        SplitRatios::default()
    }

    fn validate(&self) -> Result<(), TabularError> {
        let sum = self.train + self.val + self.test;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(TabularError::InvalidRatios(sum));
        }
        Ok(())
    }
}

/// One encoded segment of the stream.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Slice {
    pub slice_id: usize,
    pub x: Mat,
    /// Class indices in `0..n_classes`.
    pub y: Vec<usize>,
    pub train_idx: Vec<usize>,
    pub val_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
    pub provenance: String,
}

impl Slice {
    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    /// Split index sets must be disjoint and cover all rows.
    pub fn check_split_invariant(&self) -> bool {
        let mut seen = vec![0u8; self.n_rows()];
        for &i in self.train_idx.iter().chain(&self.val_idx).chain(&self.test_idx) {
            if i >= seen.len() {
                return false;
            }
            seen[i] += 1;
        }
        seen.iter().all(|&c| c == 1)
    }

    pub fn features_of(&self, idx: &[usize]) -> Mat {
        self.x.select_rows(idx)
    }

    pub fn labels_of(&self, idx: &[usize]) -> Vec<usize> {
        idx.iter().map(|&i| self.y[i]).collect()
    }
}

/// Row-index partition produced by `slice_by_column`, before encoding.
#[derive(Debug, Clone)]
pub struct SlicePartition {
    pub groups: Vec<Vec<usize>>,
    /// Rows excluded because the slicing cell was missing.
    pub dropped_missing_slice_value: usize,
}

/// Bucket rows by a continuous column's value against ascending boundaries.
///
/// Bucket `i` holds `boundary[i-1] <= v < boundary[i]`; the first bucket is
/// unbounded below and the last unbounded above. Rows whose slicing value is
/// missing are dropped and counted.
pub fn slice_by_column(
    table: &RawTable,
    column: &str,
    boundaries: &[f64],
) -> Result<SlicePartition, TabularError> {
    let ci = table
        .column_index(column)
        .ok_or_else(|| TabularError::SchemaMismatch(format!("slicing column {column} not in schema")))?;
    if table.schema.columns[ci].kind != ColumnKind::Continuous {
        return Err(TabularError::NonContinuousSliceColumn(column.to_string()));
    }
    assert!(
        boundaries.windows(2).all(|w| w[0] < w[1]),
        "slice boundaries must be strictly ascending"
    );
    let values = match &table.columns[ci] {
        ColumnData::Continuous(v) => v,
        ColumnData::Categorical(_) => unreachable!("kind checked above"),
    };
    let mut groups = vec![Vec::new(); boundaries.len() + 1];
    let mut dropped = 0usize;
    for (row, value) in values.iter().enumerate() {
        match value {
            Some(v) => {
                let bucket = boundaries.iter().take_while(|&&b| *v >= b).count();
                groups[bucket].push(row);
            }
            None => dropped += 1,
        }
    }
    Ok(SlicePartition { groups, dropped_missing_slice_value: dropped })
}

/// Stratified train/val/test assignment over `rows`.
///
/// Per class: shuffled under the derived seed, sized by largest-remainder
/// rounding of the ratios, with every split forced nonempty when the class
/// has at least three members. Deterministic for fixed inputs.
pub fn split_rows(
    rows: &[usize],
    labels: &[usize],
    ratios: SplitRatios,
    run_seed: u64,
    slice_id: usize,
) -> Result<(Vec<usize>, Vec<usize>, Vec<usize>), TabularError> {
    ratios.validate()?;
    if rows.len() < 3 {
        return Err(TabularError::TooFewRows(rows.len()));
    }
    let max_class = rows.iter().map(|&r| labels[r]).max().unwrap_or(0);

    let mut train = Vec::new();
    let mut val = Vec::new();
    let mut test = Vec::new();
    for class in 0..=max_class {
        let mut members: Vec<usize> = rows.iter().copied().filter(|&r| labels[r] == class).collect();
        if members.is_empty() {
            continue;
        }
        shuffle(&mut members, run_seed, &[tag::SPLIT, slice_id as u64, class as u64]);
        let (n_tr, n_va, n_te) = apportion(members.len(), ratios);
        train.extend_from_slice(&members[..n_tr]);
        val.extend_from_slice(&members[n_tr..n_tr + n_va]);
        test.extend_from_slice(&members[n_tr + n_va..]);
        debug_assert_eq!(n_tr + n_va + n_te, members.len());
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok((train, val, test))
}

/// Largest-remainder apportionment of `n` into the three ratio shares, with
/// each share forced >= 1 when `n >= 3`.
fn apportion(n: usize, ratios: SplitRatios) -> (usize, usize, usize) {
    let ideal = [ratios.train * n as f64, ratios.val * n as f64, ratios.test * n as f64];
    let mut counts = [ideal[0].floor() as usize, ideal[1].floor() as usize, ideal[2].floor() as usize];
    let mut remainder = n - counts.iter().sum::<usize>();
    // Distribute leftovers by largest fractional part; ties fall to the
    // earlier split (train, then val, then test).
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = ideal[a] - ideal[a].floor();
        let fb = ideal[b] - ideal[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &k in order.iter().cycle() {
        if remainder == 0 {
            break;
        }
        counts[k] += 1;
        remainder -= 1;
    }
    if n >= 3 {
        for k in 0..3 {
            while counts[k] == 0 {
                let donor = (0..3).max_by_key(|&j| counts[j]).unwrap();
                counts[donor] -= 1;
                counts[k] += 1;
            }
        }
    }
    (counts[0], counts[1], counts[2])
}

fn shuffle<T>(items: &mut [T], run_seed: u64, tags: &[u64]) {
    use rand::seq::SliceRandom;
    let mut rng = seed::rng(run_seed, tags);
    items.shuffle(&mut rng);
}

/// Fully prepared, encoded dataset: frozen preprocessor plus ordered slices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreparedDataset {
    pub name: String,
    pub n_classes: usize,
    pub d_enc: usize,
    pub metric: MetricTag,
    pub preprocessor: Preprocessor,
    pub slices: Vec<Slice>,
    pub dropped_missing_slice_value: usize,
    pub dropped_missing_label: usize,
    /// Content hash over everything above; embedded in every report.
    pub fingerprint: String,
}

impl PreparedDataset {
    pub fn n_slices(&self) -> usize {
        self.slices.len()
    }

    pub fn compute_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.name.as_bytes());
        h.update(self.n_classes.to_le_bytes());
        h.update(self.d_enc.to_le_bytes());
        for s in &self.slices {
            h.update(s.slice_id.to_le_bytes());
            for v in s.x.data() {
                h.update(v.to_le_bytes());
            }
            for &y in &s.y {
                h.update(y.to_le_bytes());
            }
            for idx in [&s.train_idx, &s.val_idx, &s.test_idx] {
                for &i in idx {
                    h.update(i.to_le_bytes());
                }
            }
        }
        format!("{:x}", h.finalize())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("prepared dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TabularError> {
        serde_json::from_str(text).map_err(|e| TabularError::SchemaMismatch(format!("snapshot JSON: {e}")))
    }
}

/// Run the full preparation pipeline on a loaded table:
/// optional seed-fixed subsample, slice by the schema's rule, stratified
/// splits, preprocessor fit on slice 0's train rows, encode all slices.
pub fn prepare_dataset(table: &RawTable, run_seed: u64) -> Result<PreparedDataset, TabularError> {
    let schema = &table.schema;
    let working;
    let table = if let Some(sub) = &schema.subsample {
        let mut rows: Vec<usize> = (0..table.n_rows).collect();
        shuffle(&mut rows, sub.seed, &[tag::SUBSAMPLE]);
        rows.truncate(sub.n.min(rows.len()));
        rows.sort_unstable();
        working = table.retain_rows(&rows);
        &working
    } else {
        table
    };

    let partition = slice_by_column(table, &schema.slice.column, &schema.slice.boundaries)?;
    assemble_dataset(table, partition.groups, partition.dropped_missing_slice_value, run_seed)
}

/// Shared back half of preparation: drop unlabeled rows, split every group,
/// fit the preprocessor on group 0's train rows, encode all groups.
pub(crate) fn assemble_dataset(
    table: &RawTable,
    raw_groups: Vec<Vec<usize>>,
    dropped_missing_slice_value: usize,
    run_seed: u64,
) -> Result<PreparedDataset, TabularError> {
    let schema = &table.schema;

    // Rows with a missing label cannot be used by any learner; drop them with
    // a count, like rows with a missing slicing value.
    let labels: Vec<Option<usize>> = (0..table.n_rows).map(|r| table.class_of(r)).collect();
    let dropped_missing_label = labels.iter().filter(|l| l.is_none()).count();

    let groups: Vec<Vec<usize>> = raw_groups
        .iter()
        .map(|g| g.iter().copied().filter(|&r| labels[r].is_some()).collect())
        .collect();

    let dense_labels: Vec<usize> = labels.iter().map(|l| l.unwrap_or(0)).collect();
    let mut split_per_group = Vec::with_capacity(groups.len());
    for (sid, group) in groups.iter().enumerate() {
        split_per_group.push(split_rows(group, &dense_labels, schema.split, run_seed, sid)?);
    }

    let prep = Preprocessor::fit(table, &split_per_group[0].0, 0)?;

    let mut slices = Vec::with_capacity(groups.len());
    for (sid, group) in groups.iter().enumerate() {
        let x = prep.apply(table, group)?;
        let y: Vec<usize> = group.iter().map(|&r| dense_labels[r]).collect();
        // Map global row ids to slice-local positions.
        let local = |subset: &[usize]| -> Vec<usize> {
            subset.iter().map(|&g| group.binary_search(&g).expect("subset of group")).collect()
        };
        let (tr, va, te) = &split_per_group[sid];
        slices.push(Slice {
            slice_id: sid,
            x,
            y,
            train_idx: local(tr),
            val_idx: local(va),
            test_idx: local(te),
            provenance: format!("{}:{}[{}]", schema.name, schema.slice.column, sid),
        });
    }

    let metric = if schema.n_classes == 2 { MetricTag::Auroc } else { MetricTag::MacroF1 };
    let mut ds = PreparedDataset {
        name: schema.name.clone(),
        n_classes: schema.n_classes,
        d_enc: prep.d_enc(),
        metric,
        preprocessor: prep,
        slices,
        dropped_missing_slice_value,
        dropped_missing_label,
        fingerprint: String::new(),
    };
    ds.fingerprint = ds.compute_fingerprint();
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular::{ColumnSpec, DatasetSchema, LabelRule, LabelSpec, SliceRule};

    fn table_with_ages(ages: Vec<Option<f64>>, labels: Vec<Option<f64>>) -> RawTable {
        let n = ages.len();
        RawTable {
            schema: DatasetSchema {
                name: "t".into(),
                columns: vec![ColumnSpec { name: "age".into(), kind: ColumnKind::Continuous, may_miss: false }],
                label: LabelSpec { column: "y".into(), rule: LabelRule::Identity },
                n_classes: 2,
                slice: SliceRule { column: "age".into(), boundaries: vec![35.0, 65.0] },
                subsample: None,
                split: SplitRatios::default_ratios(),
            },
            columns: vec![ColumnData::Continuous(ages)],
            labels,
            n_rows: n,
        }
    }

    #[test]
    fn bucket_semantics() {
        let t = table_with_ages(
            vec![Some(18.0), Some(34.9), Some(35.0), Some(64.9), Some(65.0), Some(80.0), None],
            vec![Some(0.0); 7],
        );
        let p = slice_by_column(&t, "age", &[35.0, 65.0]).unwrap();
        assert_eq!(p.groups[0], vec![0, 1]);
        assert_eq!(p.groups[1], vec![2, 3]);
        assert_eq!(p.groups[2], vec![4, 5]);
        assert_eq!(p.dropped_missing_slice_value, 1);
    }

    #[test]
    fn four_slices_from_three_boundaries() {
        let ages: Vec<Option<f64>> = (0..100).map(|i| Some(18.0 + (i as f64) * 0.7)).collect();
        let t = table_with_ages(ages, vec![Some(0.0); 100]);
        let p = slice_by_column(&t, "age", &[35.0, 50.0, 65.0]).unwrap();
        assert_eq!(p.groups.len(), 4);
        let total: usize = p.groups.iter().map(Vec::len).sum();
        assert_eq!(total, 100);
    }

    #[test]
    fn singleton_buckets() {
        let t = table_with_ages(vec![Some(10.0), Some(20.0)], vec![Some(0.0), Some(1.0)]);
        let p = slice_by_column(&t, "age", &[15.0]).unwrap();
        assert_eq!(p.groups, vec![vec![0], vec![1]]);
    }

    #[test]
    fn non_continuous_slice_column_rejected() {
        let mut t = table_with_ages(vec![Some(1.0)], vec![Some(0.0)]);
        t.schema.columns[0].kind = ColumnKind::Categorical;
        t.columns[0] = ColumnData::Categorical(vec![Some("a".into())]);
        let err = slice_by_column(&t, "age", &[1.0]).unwrap_err();
        assert!(matches!(err, TabularError::NonContinuousSliceColumn(_)));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let rows: Vec<usize> = (0..10).collect();
        let labels = vec![0usize; 10];
        let r = SplitRatios { train: 0.6, val: 0.2, test: 0.2 };
        let (a1, b1, c1) = split_rows(&rows, &labels, r, 7, 0).unwrap();
        let (a2, b2, c2) = split_rows(&rows, &labels, r, 7, 0).unwrap();
        assert_eq!((a1.len(), b1.len(), c1.len()), (6, 2, 2));
        assert_eq!((a1.clone(), b1, c1), (a2.clone(), b2, c2));
        // different seed shuffles differently (overwhelmingly likely)
        let (a3, _, _) = split_rows(&rows, &labels, r, 8, 0).unwrap();
        assert_eq!(a3.len(), 6);
    }

    #[test]
    fn bad_ratios_rejected() {
        let rows: Vec<usize> = (0..10).collect();
        let labels = vec![0usize; 10];
        let err = split_rows(&rows, &labels, SplitRatios { train: 0.6, val: 0.2, test: 0.3 }, 7, 0).unwrap_err();
        assert!(matches!(err, TabularError::InvalidRatios(_)));
    }

    #[test]
    fn stratified_split_keeps_minority_class_everywhere() {
        // 90/10 class balance; every split must contain both classes.
        let rows: Vec<usize> = (0..100).collect();
        let labels: Vec<usize> = (0..100).map(|i| usize::from(i >= 90)).collect();
        let r = SplitRatios { train: 0.6, val: 0.2, test: 0.2 };
        let (tr, va, te) = split_rows(&rows, &labels, r, 3, 0).unwrap();
        for split in [&tr, &va, &te] {
            assert!(split.iter().any(|&i| labels[i] == 0));
            assert!(split.iter().any(|&i| labels[i] == 1));
        }
        assert_eq!(tr.len() + va.len() + te.len(), 100);
    }

    #[test]
    fn too_few_rows() {
        let rows = vec![0, 1];
        let labels = vec![0, 1];
        let err = split_rows(&rows, &labels, SplitRatios::default_ratios(), 1, 0).unwrap_err();
        assert!(matches!(err, TabularError::TooFewRows(2)));
    }

    #[test]
    fn prepare_drops_missing_and_partitions() {
        let ages: Vec<Option<f64>> = (0..60)
            .map(|i| if i == 5 { None } else { Some(20.0 + i as f64) })
            .collect();
        let labels: Vec<Option<f64>> = (0..60).map(|i| if i == 7 { None } else { Some((i % 2) as f64) }).collect();
        let t = table_with_ages(ages, labels);
        let ds = prepare_dataset(&t, 42).unwrap();
        assert_eq!(ds.dropped_missing_slice_value, 1);
        assert_eq!(ds.dropped_missing_label, 1);
        assert_eq!(ds.n_slices(), 3);
        let total: usize = ds.slices.iter().map(Slice::n_rows).sum();
        assert_eq!(total, 58);
        for s in &ds.slices {
            assert!(s.check_split_invariant());
            assert_eq!(s.x.cols(), ds.d_enc);
        }
        // byte-stable snapshot roundtrip
        let json = ds.to_json();
        let back = PreparedDataset::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);
        assert_eq!(back.compute_fingerprint(), ds.fingerprint);
    }
}
