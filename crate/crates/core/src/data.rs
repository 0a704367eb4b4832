//! Datasets, CSV ingestion, train/test splitting and the prediction outlier filter.
//!
//! A [`Dataset`] keeps logical columns (numeric or categorical) so that the
//! ensemble's data augmentation can treat categorical columns differently.
//! Learners never see categorical codes: they consume the one-hot expanded
//! numeric [`Matrix`] returned by [`Features::design`].

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SeedSpec;

/// Dense column-major matrix of reals.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        Matrix {
            n_rows,
            n_cols,
            data: vec![0.0; n_rows * n_cols],
        }
    }

    /// Builds a matrix from equal-length columns.
    pub fn from_columns(columns: Vec<Vec<f64>>) -> Result<Self> {
        let n_cols = columns.len();
        let n_rows = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n_rows) {
            return Err(Error::InvalidData("columns have unequal lengths".into()));
        }
        let data = columns.into_iter().flatten().collect();
        Ok(Matrix {
            n_rows,
            n_cols,
            data,
        })
    }

    /// Builds a matrix from a row-major slice.
    pub fn from_row_major(n_rows: usize, n_cols: usize, values: &[f64]) -> Result<Self> {
        if values.len() != n_rows * n_cols {
            return Err(Error::InvalidData(format!(
                "expected {} values for a {n_rows}x{n_cols} matrix, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        let mut m = Matrix::zeros(n_rows, n_cols);
        for i in 0..n_rows {
            for j in 0..n_cols {
                m.data[j * n_rows + i] = values[i * n_cols + j];
            }
        }
        Ok(m)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.n_rows + row]
    }

    #[inline]
    pub fn col(&self, col: usize) -> &[f64] {
        &self.data[col * self.n_rows..(col + 1) * self.n_rows]
    }

    pub fn col_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.n_rows..(col + 1) * self.n_rows]
    }

    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.n_cols);
        for j in 0..self.n_cols {
            let c = self.col(j);
            data.extend(rows.iter().map(|&i| c[i]));
        }
        Matrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            data,
        }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for &j in cols {
            data.extend_from_slice(self.col(j));
        }
        Matrix {
            n_rows: self.n_rows,
            n_cols: cols.len(),
            data,
        }
    }

    pub fn row(&self, row: usize) -> Vec<f64> {
        (0..self.n_cols).map(|j| self.get(row, j)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    /// Values are integer codes into `levels`, assigned in first-appearance order.
    Categorical {
        levels: Vec<String>,
    },
}

impl ColumnKind {
    pub fn category_count(&self) -> Option<usize> {
        match self {
            ColumnKind::Numeric => None,
            ColumnKind::Categorical { levels } => Some(levels.len()),
        }
    }

    /// Width of this column after one-hot expansion.
    pub fn design_width(&self) -> usize {
        self.category_count().unwrap_or(1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Reals for numeric columns; codes (stored as exact integers) for categoricals.
    pub values: Vec<f64>,
}

impl Column {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Numeric,
            values,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
}

/// Column layout a fitted model expects at prediction time.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn check(&self, features: &Features) -> Result<()> {
        if features.n_cols() != self.columns.len() {
            return Err(Error::Schema(format!(
                "expected {} columns, got {}",
                self.columns.len(),
                features.n_cols()
            )));
        }
        for (spec, col) in self.columns.iter().zip(&features.columns) {
            let same_kind = match (&spec.kind, &col.kind) {
                (ColumnKind::Numeric, ColumnKind::Numeric) => true,
                (ColumnKind::Categorical { levels: a }, ColumnKind::Categorical { levels: b }) => {
                    b.len() <= a.len() && a.iter().zip(b).all(|(x, y)| x == y)
                }
                _ => false,
            };
            if !same_kind {
                return Err(Error::Schema(format!(
                    "column '{}' does not match the training column '{}'",
                    col.name, spec.name
                )));
            }
        }
        Ok(())
    }

    pub fn design_width(&self) -> usize {
        self.columns.iter().map(|c| c.kind.design_width()).sum()
    }
}

/// Feature table: logical columns of equal length.
#[derive(Clone, Debug, PartialEq)]
pub struct Features {
    columns: Vec<Column>,
    n_rows: usize,
}

impl Features {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n_rows = columns.first().map_or(0, |c| c.values.len());
        if columns.is_empty() {
            return Err(Error::InvalidData(
                "a dataset needs at least one feature".into(),
            ));
        }
        for c in &columns {
            if c.values.len() != n_rows {
                return Err(Error::InvalidData(format!(
                    "column '{}' has {} rows, expected {n_rows}",
                    c.name,
                    c.values.len()
                )));
            }
            if let Some(count) = c.kind.category_count() {
                if let Some(bad) = c
                    .values
                    .iter()
                    .find(|v| !(v.fract() == 0.0 && **v >= 0.0 && (**v as usize) < count))
                {
                    return Err(Error::InvalidData(format!(
                        "column '{}' holds code {bad} outside 0..{count}",
                        c.name
                    )));
                }
            } else if let Some(pos) = c.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::MissingValue {
                    row: pos + 1,
                    column: c.name.clone(),
                });
            }
        }
        Ok(Features { columns, n_rows })
    }

    /// All-numeric feature table from a matrix, with generated names `x1..xK`.
    pub fn from_matrix(x: &Matrix) -> Self {
        let columns = (0..x.n_cols())
            .map(|j| Column::numeric(format!("x{}", j + 1), x.col(j).to_vec()))
            .collect();
        Features {
            columns,
            n_rows: x.n_rows(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> &Column {
        &self.columns[j]
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSpec {
                    name: c.name.clone(),
                    kind: c.kind.clone(),
                })
                .collect(),
        }
    }

    pub fn select_rows(&self, rows: &[usize]) -> Features {
        Features {
            columns: self
                .columns
                .iter()
                .map(|c| Column {
                    name: c.name.clone(),
                    kind: c.kind.clone(),
                    values: rows.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
            n_rows: rows.len(),
        }
    }

    /// Numeric design matrix: numeric columns copied, categoricals one-hot expanded.
    pub fn design(&self) -> Matrix {
        let mut cols = Vec::new();
        for c in &self.columns {
            push_design_columns(&mut cols, &c.kind, &c.values);
        }
        Matrix::from_columns(cols).expect("feature columns share a length")
    }
}

pub(crate) fn push_design_columns(out: &mut Vec<Vec<f64>>, kind: &ColumnKind, values: &[f64]) {
    match kind {
        ColumnKind::Numeric => out.push(values.to_vec()),
        ColumnKind::Categorical { levels } => {
            for level in 0..levels.len() {
                out.push(
                    values
                        .iter()
                        .map(|&v| if v as usize == level { 1.0 } else { 0.0 })
                        .collect(),
                );
            }
        }
    }
}

/// Feature table plus numeric target.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Features,
    target: Vec<f64>,
    target_name: String,
}

impl Dataset {
    pub fn new(
        features: Features,
        target: Vec<f64>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        if features.n_rows() == 0 {
            return Err(Error::InvalidData(
                "a dataset needs at least one row".into(),
            ));
        }
        if target.len() != features.n_rows() {
            return Err(Error::InvalidData(format!(
                "target has {} rows, features have {}",
                target.len(),
                features.n_rows()
            )));
        }
        if let Some(pos) = target.iter().position(|v| !v.is_finite()) {
            return Err(Error::MissingValue {
                row: pos + 1,
                column: target_name.into(),
            });
        }
        Ok(Dataset {
            features,
            target,
            target_name: target_name.into(),
        })
    }

    pub fn from_matrix(x: &Matrix, y: Vec<f64>) -> Result<Self> {
        Dataset::new(Features::from_matrix(x), y, "y")
    }

    pub fn features(&self) -> &Features {
        &self.features
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.features.n_cols()
    }

    pub fn design(&self) -> Matrix {
        self.features.design()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            target: rows.iter().map(|&i| self.target[i]).collect(),
            target_name: self.target_name.clone(),
        }
    }

    /// Stacks `other` below `self`; both must share a schema.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.features.schema() != other.features.schema() {
            return Err(Error::Schema(
                "cannot stack datasets with different schemas".into(),
            ));
        }
        let columns = self
            .features
            .columns
            .iter()
            .zip(&other.features.columns)
            .map(|(a, b)| Column {
                name: a.name.clone(),
                kind: a.kind.clone(),
                values: a.values.iter().chain(&b.values).copied().collect(),
            })
            .collect();
        let target = self.target.iter().chain(&other.target).copied().collect();
        Dataset::new(Features::new(columns)?, target, self.target_name.clone())
    }
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "NaN" | "nan" | "null")
}

fn parse_real(cell: &str, row: usize, column: &str) -> Result<f64> {
    if is_missing(cell) {
        return Err(Error::MissingValue {
            row,
            column: column.to_string(),
        });
    }
    cell.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            row,
            column: column.to_string(),
            message: format!("cannot parse '{cell}' as a number"),
        })
}

fn read_records(path: &Path) -> Result<(Vec<String>, Vec<csv::StringRecord>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec?);
    }
    Ok((header, records))
}

/// Reads a CSV with a header row. Columns named in `categorical` are coded in
/// first-appearance order; every other column must parse as a real. Columns
/// whose names start with `__` (such as the stored conditional mean `__f`)
/// are metadata and skipped.
pub fn load_csv(
    path: impl AsRef<Path>,
    target: &str,
    categorical: &BTreeSet<String>,
) -> Result<Dataset> {
    let path = path.as_ref();
    let (header, records) = read_records(path)?;
    let target_idx = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::UnknownColumn(target.to_string()))?;
    if categorical.contains(target) {
        return Err(Error::InvalidParam(format!(
            "target column '{target}' cannot be categorical"
        )));
    }
    for name in categorical {
        if !header.contains(name) {
            return Err(Error::UnknownColumn(name.clone()));
        }
    }
    if records.is_empty() {
        return Err(Error::InvalidData(format!(
            "{} has no data rows",
            path.display()
        )));
    }

    let mut target_values = Vec::with_capacity(records.len());
    let mut columns: Vec<Column> = header
        .iter()
        .enumerate()
        .filter(|(j, name)| *j != target_idx && !is_meta(name))
        .map(|(_, name)| Column {
            name: name.clone(),
            kind: if categorical.contains(name) {
                ColumnKind::Categorical { levels: Vec::new() }
            } else {
                ColumnKind::Numeric
            },
            values: Vec::with_capacity(records.len()),
        })
        .collect();
    let mut level_maps: Vec<HashMap<String, usize>> = vec![HashMap::new(); columns.len()];

    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        if rec.len() != header.len() {
            return Err(Error::Parse {
                row,
                column: String::new(),
                message: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        target_values.push(parse_real(&rec[target_idx], row, target)?);
        let mut c = 0;
        for (j, cell) in rec.iter().enumerate() {
            if j == target_idx || is_meta(&header[j]) {
                continue;
            }
            let col = &mut columns[c];
            match &mut col.kind {
                ColumnKind::Numeric => col.values.push(parse_real(cell, row, &col.name)?),
                ColumnKind::Categorical { levels } => {
                    if is_missing(cell) {
                        return Err(Error::MissingValue {
                            row,
                            column: col.name.clone(),
                        });
                    }
                    let map = &mut level_maps[c];
                    let code = *map.entry(cell.to_string()).or_insert_with(|| {
                        levels.push(cell.to_string());
                        levels.len() - 1
                    });
                    col.values.push(code as f64);
                }
            }
            c += 1;
        }
    }
    Dataset::new(Features::new(columns)?, target_values, target)
}

fn is_meta(name: &str) -> bool {
    name.starts_with("__")
}

/// Reads the feature columns named by `schema` (in schema order) from a CSV,
/// coding categoricals with the schema's levels. If `target` names a column
/// present in the file, it is returned as well.
pub fn load_features_csv(
    path: impl AsRef<Path>,
    schema: &Schema,
    target: Option<&str>,
) -> Result<(Features, Option<Vec<f64>>)> {
    let path = path.as_ref();
    let (header, records) = read_records(path)?;
    let positions: Vec<usize> = schema
        .columns
        .iter()
        .map(|spec| {
            header
                .iter()
                .position(|h| *h == spec.name)
                .ok_or_else(|| Error::UnknownColumn(spec.name.clone()))
        })
        .collect::<Result<_>>()?;
    let target_idx = target.and_then(|t| header.iter().position(|h| h == t));

    let mut columns: Vec<Column> = schema
        .columns
        .iter()
        .map(|spec| Column {
            name: spec.name.clone(),
            kind: spec.kind.clone(),
            values: Vec::with_capacity(records.len()),
        })
        .collect();
    let mut y = target_idx.map(|_| Vec::with_capacity(records.len()));
    for (r, rec) in records.iter().enumerate() {
        let row = r + 1;
        for (col, &pos) in columns.iter_mut().zip(&positions) {
            let cell = rec.get(pos).unwrap_or("");
            let v = match &col.kind {
                ColumnKind::Numeric => parse_real(cell, row, &col.name)?,
                ColumnKind::Categorical { levels } => {
                    if is_missing(cell) {
                        return Err(Error::MissingValue {
                            row,
                            column: col.name.clone(),
                        });
                    }
                    levels.iter().position(|l| l == cell).ok_or_else(|| {
                        Error::Schema(format!(
                            "row {row}, column '{}': level '{cell}' was not seen in training",
                            col.name
                        ))
                    })? as f64
                }
            };
            col.values.push(v);
        }
        if let (Some(ys), Some(t)) = (y.as_mut(), target_idx) {
            ys.push(parse_real(
                rec.get(t).unwrap_or(""),
                row,
                target.unwrap_or_default(),
            )?);
        }
    }
    Ok((Features::new(columns)?, y))
}

/// Formats a real with 17 significant digits, enough to round-trip any f64.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes features (categoricals as their level labels) followed by the target.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv_with(data, &[], path)
}

/// As [`write_csv`], with extra numeric columns appended after the target.
pub fn write_csv_with(
    data: &Dataset,
    extra: &[(&str, &[f64])],
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let out = csv_string_with(data, extra);
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// The text [`write_csv_with`] writes.
pub fn csv_string_with(data: &Dataset, extra: &[(&str, &[f64])]) -> String {
    let mut out = String::new();
    let mut names: Vec<&str> = data.features.names();
    names.push(&data.target_name);
    names.extend(extra.iter().map(|e| e.0));
    out.push_str(&names.join(","));
    out.push('\n');
    for i in 0..data.n_rows() {
        for c in &data.features.columns {
            match &c.kind {
                ColumnKind::Numeric => out.push_str(&fmt_real(c.values[i])),
                ColumnKind::Categorical { levels } => {
                    out.push_str(&csv_escape(&levels[c.values[i] as usize]))
                }
            }
            out.push(',');
        }
        out.push_str(&fmt_real(data.target[i]));
        for (_, values) in extra {
            let _ = write!(out, ",{}", fmt_real(values[i]));
        }
        out.push('\n');
    }
    out
}

pub(crate) fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Random,
    Chronological,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub mode: SplitMode,
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitPlan {
    pub fn random(train_fraction: f64, seed: u64) -> Self {
        SplitPlan {
            mode: SplitMode::Random,
            train_fraction,
            seed,
        }
    }

    pub fn chronological(train_fraction: f64) -> Self {
        SplitPlan {
            mode: SplitMode::Chronological,
            train_fraction,
            seed: 0,
        }
    }

    /// Row indices of the (train, test) parts, each in ascending order.
    pub fn partition(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>)> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::InvalidParam(format!(
                "train fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        let n_train = (self.train_fraction * n as f64 - 1e-9).ceil().max(0.0) as usize;
        if n_train < 1 || n_train >= n {
            return Err(Error::InvalidData(format!(
                "{n} rows cannot be split {}/{} with both parts nonempty",
                n_train,
                n.saturating_sub(n_train)
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        if self.mode == SplitMode::Random {
            order.shuffle(&mut SeedSpec::new(self.seed).rng());
        }
        let mut train = order[..n_train].to_vec();
        let mut test = order[n_train..].to_vec();
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }
}

/// Partitions a dataset into disjoint, exhaustive train and test parts.
pub fn split(data: &Dataset, plan: &SplitPlan) -> Result<(Dataset, Dataset)> {
    let (train, test) = plan.partition(data.n_rows())?;
    Ok((data.select_rows(&train), data.select_rows(&test)))
}

/// Replaces predictions farther than twice the largest absolute training
/// deviation from the training mean by the corresponding fallback value.
/// Values exactly at the threshold pass through.
pub fn outlier_filter(preds: &[f64], train_target: &[f64], fallback: &[f64]) -> Vec<f64> {
    assert_eq!(
        preds.len(),
        fallback.len(),
        "preds and fallback differ in length"
    );
    assert!(!train_target.is_empty(), "training target is empty");
    let mean = train_target.iter().sum::<f64>() / train_target.len() as f64;
    let threshold = 2.0
        * train_target
            .iter()
            .map(|y| (y - mean).abs())
            .fold(0.0, f64::max);
    preds
        .iter()
        .zip(fallback)
        .map(|(&p, &f)| if (p - mean).abs() > threshold { f } else { p })
        .collect()
}
