//! Raw tabular data: schema declarations, CSV loading, the first-slice-frozen
//! preprocessing pipeline, ordered slice construction, and the synthetic
//! shift-stream generator.
//!
//! Missing cells are carried as `None` through [`RawTable`] and only resolved
//! (imputation plus a missingness indicator) when a fitted [`Preprocessor`]
//! encodes rows into a dense matrix.

mod preprocess;
mod slicing;
mod synth;

pub use preprocess::{ColumnStats, Preprocessor};
pub use slicing::{prepare_dataset, slice_by_column, split_rows, PreparedDataset, Slice, SlicePartition, SplitRatios};
pub use synth::{synth_shift_stream, SynthSpec};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TabularError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("unparseable cell at row {row}, column {column}: {token:?}")]
    UnparseableCell { row: usize, column: String, token: String },
    #[error("column {0} has no observed values in the fitting rows")]
    AllMissingColumn(String),
    #[error("slicing column {0} is not continuous")]
    NonContinuousSliceColumn(String),
    #[error("too few rows to split: {0}")]
    TooFewRows(usize),
    #[error("split ratios must sum to 1, got {0}")]
    InvalidRatios(f64),
    #[error("invalid synthetic stream spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    /// Forces a missingness-indicator column even if the fitting rows happen
    /// to contain no missing value.
    #[serde(default)]
    pub may_miss: bool,
}

/// How the raw label column maps onto class indices `0..K-1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    /// Label value is already the class index.
    Identity,
    /// Binary: positive iff the raw value is greater than zero.
    GreaterThanZero,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelSpec {
    pub column: String,
    pub rule: LabelRule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SliceRule {
    pub column: String,
    /// Ascending thresholds; bucket `i` holds `boundary[i-1] <= v < boundary[i]`.
    pub boundaries: Vec<f64>,
}

/// Seed-fixed uniform subsample applied before slicing (used when a source
/// dataset is larger than the analytic cohort).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SubsampleSpec {
    pub n: usize,
    pub seed: u64,
}

/// Declarative dataset description, read from JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub name: String,
    pub columns: Vec<ColumnSpec>,
    pub label: LabelSpec,
    pub n_classes: usize,
    pub slice: SliceRule,
    #[serde(default)]
    pub subsample: Option<SubsampleSpec>,
    #[serde(default = "SplitRatios::default_ratios")]
    pub split: SplitRatios,
}

impl DatasetSchema {
    pub fn from_json(text: &str) -> Result<Self, TabularError> {
        serde_json::from_str(text).map_err(|e| TabularError::SchemaMismatch(format!("schema JSON: {e}")))
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec> {
        self.columns.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ColumnData {
    Continuous(Vec<Option<f64>>),
    Categorical(Vec<Option<String>>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_missing(&self, row: usize) -> bool {
        match self {
            ColumnData::Continuous(v) => v[row].is_none(),
            ColumnData::Categorical(v) => v[row].is_none(),
        }
    }
}

/// Loaded, unencoded table: cells may be missing, labels are still raw.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawTable {
    pub schema: DatasetSchema,
    /// One entry per schema input column, in schema order.
    pub columns: Vec<ColumnData>,
    /// Raw label values (missing allowed; such rows are dropped at slicing).
    pub labels: Vec<Option<f64>>,
    pub n_rows: usize,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.columns.iter().position(|c| c.name == name)
    }

    /// Class index for `row` under the schema's label rule, if the label is
    /// present and in range.
    pub fn class_of(&self, row: usize) -> Option<usize> {
        let raw = self.labels[row]?;
        let cls = match self.schema.label.rule {
            LabelRule::Identity => {
                let c = raw.round();
                if c < 0.0 { return None } else { c as usize }
            }
            LabelRule::GreaterThanZero => usize::from(raw > 0.0),
        };
        (cls < self.schema.n_classes).then_some(cls)
    }

    /// Keep only `rows` (in the given order); used by the seed-fixed subsample.
    pub fn retain_rows(&self, rows: &[usize]) -> RawTable {
        let columns = self
            .columns
            .iter()
            .map(|col| match col {
                ColumnData::Continuous(v) => ColumnData::Continuous(rows.iter().map(|&r| v[r]).collect()),
                ColumnData::Categorical(v) => {
                    ColumnData::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
                }
            })
            .collect();
        RawTable {
            schema: self.schema.clone(),
            columns,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            n_rows: rows.len(),
        }
    }
}

fn is_missing_token(tok: &str) -> bool {
    let t = tok.trim();
    t.is_empty() || t == "?"
}

/// Load a headered CSV against a declared schema.
///
/// Missing cells are the empty string or `?`. Column order in the file is
/// free; the header must contain exactly the schema's input columns plus the
/// label column.
pub fn load_csv(path: &Path, schema: &DatasetSchema) -> Result<RawTable, TabularError> {
    if !path.exists() {
        return Err(TabularError::MissingFile(path.display().to_string()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| TabularError::MissingFile(format!("{}: {e}", path.display())))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| TabularError::SchemaMismatch(format!("unreadable header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    load_from_records(schema, &headers, reader.records().map(|r| {
        r.map(|rec| rec.iter().map(str::to_string).collect::<Vec<_>>())
            .map_err(|e| TabularError::SchemaMismatch(format!("csv parse: {e}")))
    }))
}

/// Shared record-consuming core for [`load_csv`] and in-memory tables.
pub fn load_from_records<I>(
    schema: &DatasetSchema,
    headers: &[String],
    records: I,
) -> Result<RawTable, TabularError>
where
    I: Iterator<Item = Result<Vec<String>, TabularError>>,
{
    let wanted: BTreeSet<&str> = schema
        .columns
        .iter()
        .map(|c| c.name.as_str())
        .chain(std::iter::once(schema.label.column.as_str()))
        .collect();
    let present: BTreeSet<&str> = headers.iter().map(String::as_str).collect();
    for missing in wanted.difference(&present) {
        return Err(TabularError::SchemaMismatch(format!("column absent from file: {missing}")));
    }
    for extra in present.difference(&wanted) {
        return Err(TabularError::SchemaMismatch(format!("unexpected extra column: {extra}")));
    }
    if headers.len() != wanted.len() {
        return Err(TabularError::SchemaMismatch("duplicate column in header".into()));
    }

    let col_pos: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| headers.iter().position(|h| h == &c.name).expect("checked above"))
        .collect();
    let label_pos = headers
        .iter()
        .position(|h| h == &schema.label.column)
        .expect("checked above");

    let mut columns: Vec<ColumnData> = schema
        .columns
        .iter()
        .map(|c| match c.kind {
            ColumnKind::Continuous => ColumnData::Continuous(Vec::new()),
            ColumnKind::Categorical => ColumnData::Categorical(Vec::new()),
        })
        .collect();
    let mut labels = Vec::new();

    for (row_idx, record) in records.enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(TabularError::SchemaMismatch(format!(
                "row {row_idx} has {} cells, expected {}",
                record.len(),
                headers.len()
            )));
        }
        for (ci, spec) in schema.columns.iter().enumerate() {
            let tok = &record[col_pos[ci]];
            match (&mut columns[ci], spec.kind) {
                (ColumnData::Continuous(v), ColumnKind::Continuous) => {
                    if is_missing_token(tok) {
                        v.push(None);
                    } else {
                        let parsed = tok.trim().parse::<f64>().map_err(|_| TabularError::UnparseableCell {
                            row: row_idx,
                            column: spec.name.clone(),
                            token: tok.clone(),
                        })?;
                        v.push(Some(parsed));
                    }
                }
                (ColumnData::Categorical(v), ColumnKind::Categorical) => {
                    if is_missing_token(tok) {
                        v.push(None);
                    } else {
                        v.push(Some(tok.trim().to_string()));
                    }
                }
                _ => unreachable!("column data kind matches spec kind by construction"),
            }
        }
        let label_tok = &record[label_pos];
        if is_missing_token(label_tok) {
            labels.push(None);
        } else {
            let parsed = label_tok.trim().parse::<f64>().map_err(|_| TabularError::UnparseableCell {
                row: row_idx,
                column: schema.label.column.clone(),
                token: label_tok.clone(),
            })?;
            labels.push(Some(parsed));
        }
    }

    let n_rows = labels.len();
    Ok(RawTable { schema: schema.clone(), columns, labels, n_rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn toy_schema() -> DatasetSchema {
        DatasetSchema {
            name: "toy".into(),
            columns: vec![
                ColumnSpec { name: "a".into(), kind: ColumnKind::Continuous, may_miss: false },
                ColumnSpec { name: "b".into(), kind: ColumnKind::Categorical, may_miss: false },
            ],
            label: LabelSpec { column: "y".into(), rule: LabelRule::Identity },
            n_classes: 2,
            slice: SliceRule { column: "a".into(), boundaries: vec![10.0] },
            subsample: None,
            split: SplitRatios::default_ratios(),
        }
    }

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_with_missing_cells() {
        let f = write_csv("a,b,y\n1.5,x,0\n,?,1\n2.0,z,0\n");
        let t = load_csv(f.path(), &toy_schema()).unwrap();
        assert_eq!(t.n_rows, 3);
        assert!(t.columns[0].is_missing(1));
        assert!(t.columns[1].is_missing(1));
        assert_eq!(t.class_of(1), Some(1));
    }

    #[test]
    fn empty_file_with_header_is_zero_rows() {
        let f = write_csv("a,b,y\n");
        let t = load_csv(f.path(), &toy_schema()).unwrap();
        assert_eq!(t.n_rows, 0);
    }

    #[test]
    fn schema_mismatch_extra_and_absent() {
        let f = write_csv("a,b,z,y\n1,x,9,0\n");
        let err = load_csv(f.path(), &toy_schema()).unwrap_err();
        assert!(matches!(err, TabularError::SchemaMismatch(_)), "{err}");

        let f = write_csv("a,y\n1,0\n");
        let err = load_csv(f.path(), &toy_schema()).unwrap_err();
        assert!(matches!(err, TabularError::SchemaMismatch(_)), "{err}");
    }

    #[test]
    fn unparseable_continuous_cell() {
        let f = write_csv("a,b,y\nabc,x,0\n");
        let err = load_csv(f.path(), &toy_schema()).unwrap_err();
        match err {
            TabularError::UnparseableCell { column, token, .. } => {
                assert_eq!(column, "a");
                assert_eq!(token, "abc");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn missing_file() {
        let err = load_csv(Path::new("/nonexistent/x.csv"), &toy_schema()).unwrap_err();
        assert!(matches!(err, TabularError::MissingFile(_)));
    }

    #[test]
    fn greater_than_zero_label_rule() {
        let mut schema = toy_schema();
        schema.label.rule = LabelRule::GreaterThanZero;
        let f = write_csv("a,b,y\n1,x,0\n2,x,3\n3,x,1\n");
        let t = load_csv(f.path(), &schema).unwrap();
        assert_eq!(t.class_of(0), Some(0));
        assert_eq!(t.class_of(1), Some(1));
        assert_eq!(t.class_of(2), Some(1));
    }
}
