//! Sample tables, column grouping, CSV ingestion, synthetic generators.
//!
//! A [`SampleTable`] is an N x d matrix of real samples (rows = i.i.d.
//! realizations) together with a partition of its columns into L variable
//! groups. Group layouts are written as semicolon-separated lists of column
//! indices or inclusive ranges, e.g. `"0-2;3-5;6"`.
//!
//! CSV format: comma delimiter, `.` decimal separator, optional single
//! header row, UTF-8.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub mod generators;

/// Independent RNG stream for (seed, stream index). Identical inputs give a
/// bit-identical stream, and distinct stream indices are independent, which
/// is how replicas (permutations, trials, subsamples) are seeded.
pub(crate) fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// N x d sample matrix with an ordered partition of columns into L groups.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    values: DMatrix<f64>,
    groups: Vec<Vec<usize>>,
    column_names: Option<Vec<String>>,
}

impl SampleTable {
    /// Validates that the groups are nonempty and partition all columns, and
    /// that there are at least two rows.
    pub fn new(
        values: DMatrix<f64>,
        groups: Vec<Vec<usize>>,
        column_names: Option<Vec<String>>,
    ) -> Result<Self> {
        let n = values.nrows();
        let d = values.ncols();
        if n < 2 {
            return Err(Error::Argument(format!("need at least 2 rows, got {n}")));
        }
        if d == 0 {
            return Err(Error::Argument("table has no columns".into()));
        }
        validate_layout(&groups, d)?;
        if let Some(names) = &column_names {
            if names.len() != d {
                return Err(Error::Argument(format!(
                    "{} column names for {d} columns",
                    names.len()
                )));
            }
        }
        Ok(SampleTable { values, groups, column_names })
    }

    /// One group per column.
    pub fn with_scalar_groups(values: DMatrix<f64>, column_names: Option<Vec<String>>) -> Result<Self> {
        let groups = (0..values.ncols()).map(|c| vec![c]).collect();
        Self::new(values, groups, column_names)
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_dims(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn column_names(&self) -> Option<&[String]> {
        self.column_names.as_deref()
    }

    /// The N x d_m submatrix of group `m`.
    pub fn group_matrix(&self, m: usize) -> DMatrix<f64> {
        let cols = &self.groups[m];
        DMatrix::from_fn(self.n(), cols.len(), |i, j| self.values[(i, cols[j])])
    }

    /// Copy of the selected columns as an N x k matrix.
    pub fn columns_matrix(&self, cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), cols.len(), |i, j| self.values[(i, cols[j])])
    }

    /// New table restricted to `rows` (kept in the given order), same groups.
    pub fn subset_rows(&self, rows: &[usize]) -> Result<SampleTable> {
        if rows.len() < 2 {
            return Err(Error::Argument("need at least 2 rows".into()));
        }
        for &r in rows {
            if r >= self.n() {
                return Err(Error::Argument(format!("row {r} out of bounds")));
            }
        }
        let values = DMatrix::from_fn(rows.len(), self.dim(), |i, j| self.values[(rows[i], j)]);
        Ok(SampleTable {
            values,
            groups: self.groups.clone(),
            column_names: self.column_names.clone(),
        })
    }

    /// New table containing only the selected columns (in the given order),
    /// each as its own scalar group.
    pub fn select_columns(&self, cols: &[usize]) -> Result<SampleTable> {
        for &c in cols {
            if c >= self.dim() {
                return Err(Error::Argument(format!("column {c} out of bounds")));
            }
        }
        let values = self.columns_matrix(cols);
        let names = self
            .column_names
            .as_ref()
            .map(|n| cols.iter().map(|&c| n[c].clone()).collect());
        SampleTable::with_scalar_groups(values, names)
    }

    /// Re-group the same values under a new layout.
    pub fn regrouped(&self, groups: Vec<Vec<usize>>) -> Result<SampleTable> {
        validate_layout(&groups, self.dim())?;
        Ok(SampleTable {
            values: self.values.clone(),
            groups,
            column_names: self.column_names.clone(),
        })
    }

    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut file = File::create(path)?;
        if let Some(names) = &self.column_names {
            writeln!(file, "{}", names.join(","))?;
        }
        for i in 0..self.n() {
            let row: Vec<String> =
                (0..self.dim()).map(|j| format!("{}", self.values[(i, j)])).collect();
            writeln!(file, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Parse a group-layout string ("0-2;3-5;6") and check it partitions
/// `0..num_cols`.
pub fn parse_group_spec(spec: &str, num_cols: usize) -> Result<Vec<Vec<usize>>> {
    let groups = parse_group_tokens(spec)?;
    validate_layout(&groups, num_cols)?;
    Ok(groups)
}

/// Grammar-only half of [`parse_group_spec`]: no coverage check.
pub fn parse_group_tokens(spec: &str) -> Result<Vec<Vec<usize>>> {
    let mut groups = Vec::new();
    for group_str in spec.split(';') {
        let group_str = group_str.trim();
        if group_str.is_empty() {
            return Err(Error::Layout("empty group in layout string".into()));
        }
        let mut group = Vec::new();
        for token in group_str.split(',') {
            let token = token.trim();
            if token.is_empty() {
                return Err(Error::Layout(format!("empty column token in group '{group_str}'")));
            }
            if let Some((lo, hi)) = token.split_once('-') {
                let lo: usize = lo
                    .trim()
                    .parse()
                    .map_err(|_| Error::Layout(format!("bad range start in '{token}'")))?;
                let hi: usize = hi
                    .trim()
                    .parse()
                    .map_err(|_| Error::Layout(format!("bad range end in '{token}'")))?;
                if lo > hi {
                    return Err(Error::Layout(format!("reversed range '{token}'")));
                }
                group.extend(lo..=hi);
            } else {
                let idx: usize = token
                    .parse()
                    .map_err(|_| Error::Layout(format!("bad column index '{token}'")))?;
                group.push(idx);
            }
        }
        groups.push(group);
    }
    Ok(groups)
}

fn validate_layout(groups: &[Vec<usize>], num_cols: usize) -> Result<()> {
    if groups.is_empty() {
        return Err(Error::Layout("no groups".into()));
    }
    let mut seen = vec![false; num_cols];
    for group in groups {
        if group.is_empty() {
            return Err(Error::Layout("empty group".into()));
        }
        for &c in group {
            if c >= num_cols {
                return Err(Error::Layout(format!(
                    "column {c} out of range for {num_cols} columns"
                )));
            }
            if seen[c] {
                return Err(Error::Layout(format!("column {c} repeated")));
            }
            seen[c] = true;
        }
    }
    if let Some(missing) = seen.iter().position(|&s| !s) {
        return Err(Error::Layout(format!("column {missing} not covered by any group")));
    }
    Ok(())
}

/// Load a CSV sample table. `group_spec = None` puts each column in its own
/// group.
pub fn load_csv<P: AsRef<Path>>(
    path: P,
    group_spec: Option<&str>,
    has_header: bool,
) -> Result<SampleTable> {
    let file = File::open(&path)?;
    from_reader(file, group_spec, has_header)
}

/// Parse a sample table from any reader (same format as [`load_csv`]).
pub fn from_reader<R: Read>(
    reader: R,
    group_spec: Option<&str>,
    has_header: bool,
) -> Result<SampleTable> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let column_names = if has_header {
        let headers = csv_reader
            .headers()
            .map_err(|e| Error::Parse { row: 1, msg: e.to_string() })?;
        Some(headers.iter().map(|s| s.to_string()).collect::<Vec<_>>())
    } else {
        None
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (idx, record) in csv_reader.records().enumerate() {
        let data_row = idx + 1;
        let record = record.map_err(|e| Error::Parse { row: data_row, msg: e.to_string() })?;
        let mut row = Vec::with_capacity(record.len());
        for field in record.iter() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: data_row,
                msg: format!("not a number: '{field}'"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse { row: data_row, msg: format!("non-finite value '{field}'") });
            }
            row.push(v);
        }
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(Error::Parse {
                    row: data_row,
                    msg: format!("expected {w} fields, got {}", row.len()),
                })
            }
            _ => {}
        }
        rows.push(row);
    }
    let d = width.ok_or_else(|| Error::Parse { row: 0, msg: "empty file".into() })?;
    if d == 0 {
        return Err(Error::Parse { row: 1, msg: "rows have no fields".into() });
    }
    let n = rows.len();
    if n < 2 {
        return Err(Error::Argument(format!("need at least 2 rows, got {n}")));
    }
    let values = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let groups = match group_spec {
        Some(spec) => parse_group_spec(spec, d)?,
        None => (0..d).map(|c| vec![c]).collect(),
    };
    SampleTable::new(values, groups, column_names)
}

/// Single 0/1 column aligned with the data rows (e.g. outlier labels).
pub fn load_labels<P: AsRef<Path>>(path: P) -> Result<Vec<bool>> {
    let file = File::open(&path)?;
    labels_from_reader(file)
}

/// Parse a label column from any reader.
pub fn labels_from_reader<R: Read>(reader: R) -> Result<Vec<bool>> {
    let mut csv_reader =
        csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut labels = Vec::new();
    for (idx, record) in csv_reader.records().enumerate() {
        let data_row = idx + 1;
        let record = record.map_err(|e| Error::Parse { row: data_row, msg: e.to_string() })?;
        if record.len() != 1 {
            return Err(Error::Parse {
                row: data_row,
                msg: format!("labels file must have one column, got {}", record.len()),
            });
        }
        match &record[0] {
            "0" => labels.push(false),
            "1" => labels.push(true),
            other => {
                return Err(Error::Parse { row: data_row, msg: format!("label must be 0 or 1, got '{other}'") })
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse { row: 0, msg: "empty labels file".into() });
    }
    Ok(labels)
}
