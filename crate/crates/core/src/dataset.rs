//! The `(samples, scalars, coordinates)` data standard.
//!
//! A [`DataTensor`] holds `n` samples of `m` named scalar quantities, each
//! sampled at the same `l` coordinates. Models never see the rank-3 form:
//! [`flatten`] lays every sample out as a single row with each scalar's full
//! coordinate distribution stored contiguously (scalar-major), giving an
//! `(n, m*l)` [`FlatMatrix`].
//!
//! Two on-disk formats are supported. The tensor-text format is:
//!
//! ```text
//! n m l
//! # scalars: q_w P_w
//! # coords: 0 1 2
//! # units: W/m^2 Pa
//! <n*m lines of l floats, sample-major then scalar-major>
//! ```
//!
//! `#` lines of the form `# key: value` are metadata; other `#` lines and
//! blank lines are ignored. CSV files carry a header row of scalar names and
//! one row per sample, and always map to `l = 1`.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RESERVED_KEYS: [&str; 3] = ["scalars", "coords", "units"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorFormat {
    TensorText,
    Csv,
}

impl TensorFormat {
    /// `.csv` maps to CSV, everything else to tensor-text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => TensorFormat::Csv,
            _ => TensorFormat::TensorText,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataTensor {
    n: usize,
    m: usize,
    l: usize,
    values: Vec<f64>,
    scalar_names: Vec<String>,
    coord_labels: Vec<String>,
    units: Option<Vec<String>>,
    metadata: BTreeMap<String, String>,
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|i| format!("{prefix}{i}")).collect()
}

fn check_label(kind: &str, label: &str) -> Result<()> {
    if label.is_empty() || label.chars().any(char::is_whitespace) {
        return Err(Error::Shape(format!(
            "{kind} `{label}` must be nonempty and contain no whitespace"
        )));
    }
    Ok(())
}

impl DataTensor {
    /// Builds a tensor from sample-major, scalar-major values with default
    /// scalar names `s0..` and coordinate labels `0..`.
    pub fn new(n: usize, m: usize, l: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || l == 0 {
            return Err(Error::Shape(format!(
                "all extents must be at least 1, got ({n}, {m}, {l})"
            )));
        }
        if values.len() != n * m * l {
            return Err(Error::Shape(format!(
                "shape ({n}, {m}, {l}) needs {} values, got {}",
                n * m * l,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (i, j, k) = (pos / (m * l), (pos / l) % m, pos % l);
            return Err(Error::NonFinite {
                location: format!("sample {i}, scalar {j}, coordinate {k}"),
                value: values[pos],
            });
        }
        Ok(Self {
            n,
            m,
            l,
            values,
            scalar_names: default_names("s", m),
            coord_labels: (0..l).map(|k| k.to_string()).collect(),
            units: None,
            metadata: BTreeMap::new(),
        })
    }

    /// Builds an `(n, m, 1)` tensor from an `n x m` table.
    pub fn from_table(table: &DMatrix<f64>) -> Result<Self> {
        let (n, m) = table.shape();
        let values = (0..n)
            .flat_map(|i| (0..m).map(move |j| table[(i, j)]))
            .collect();
        Self::new(n, m, 1, values)
    }

    pub fn with_scalar_names<S: Into<String>>(
        mut self,
        names: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() != self.m {
            return Err(Error::Dimension {
                context: "scalar names",
                expected: self.m,
                actual: names.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &names {
            check_label("scalar name", name)?;
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateName(name.clone()));
            }
        }
        self.scalar_names = names;
        Ok(self)
    }

    pub fn with_coord_labels<S: Into<String>>(
        mut self,
        labels: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.len() != self.l {
            return Err(Error::Shape(format!(
                "coordinate list has {} labels but the tensor has l = {}; varying meshes are not supported",
                labels.len(),
                self.l
            )));
        }
        for label in &labels {
            check_label("coordinate label", label)?;
        }
        self.coord_labels = labels;
        Ok(self)
    }

    pub fn with_units<S: Into<String>>(mut self, units: impl IntoIterator<Item = S>) -> Result<Self> {
        let units: Vec<String> = units.into_iter().map(Into::into).collect();
        if units.len() != self.m {
            return Err(Error::Dimension {
                context: "units",
                expected: self.m,
                actual: units.len(),
            });
        }
        for unit in &units {
            check_label("unit", unit)?;
        }
        self.units = Some(units);
        Ok(self)
    }

    pub fn with_metadata(mut self, key: impl Into<String>, value: impl Into<String>) -> Result<Self> {
        let key = key.into();
        let value = value.into();
        if key.is_empty()
            || key.contains(':')
            || key.contains(char::is_whitespace)
            || key.contains('\n')
            || value.contains('\n')
            || RESERVED_KEYS.contains(&key.as_str())
        {
            return Err(Error::InvalidParameter(format!(
                "metadata key `{key}` is reserved or malformed"
            )));
        }
        self.metadata.insert(key, value.trim().to_string());
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.n, self.m, self.l)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, sample: usize, scalar: usize, coord: usize) -> f64 {
        self.values[(sample * self.m + scalar) * self.l + coord]
    }

    pub fn scalar_names(&self) -> &[String] {
        &self.scalar_names
    }

    pub fn coord_labels(&self) -> &[String] {
        &self.coord_labels
    }

    pub fn units(&self) -> Option<&[String]> {
        self.units.as_deref()
    }

    pub fn metadata(&self) -> &BTreeMap<String, String> {
        &self.metadata
    }

    /// Keeps the listed samples, in order.
    pub fn select_samples(&self, rows: &[usize]) -> Result<Self> {
        let stride = self.m * self.l;
        let mut values = Vec::with_capacity(rows.len() * stride);
        for &r in rows {
            if r >= self.n {
                return Err(Error::Shape(format!("sample index {r} out of range (n = {})", self.n)));
            }
            values.extend_from_slice(&self.values[r * stride..(r + 1) * stride]);
        }
        let mut out = Self::new(rows.len(), self.m, self.l, values)?;
        out.scalar_names = self.scalar_names.clone();
        out.coord_labels = self.coord_labels.clone();
        out.units = self.units.clone();
        out.metadata = self.metadata.clone();
        Ok(out)
    }
}

/// An `(n, m*l)` matrix in scalar-major column order, remembering which
/// `(scalar, coordinate)` each column came from.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatMatrix {
    data: DMatrix<f64>,
    m: usize,
    l: usize,
    scalar_names: Vec<String>,
}

impl FlatMatrix {
    pub fn new(data: DMatrix<f64>, m: usize, l: usize, scalar_names: Vec<String>) -> Result<Self> {
        if m == 0 || l == 0 || data.ncols() != m * l {
            return Err(Error::Shape(format!(
                "{} columns cannot be split as m = {m} scalars x l = {l} coordinates",
                data.ncols()
            )));
        }
        if scalar_names.len() != m {
            return Err(Error::Dimension {
                context: "scalar names",
                expected: m,
                actual: scalar_names.len(),
            });
        }
        Ok(Self {
            data,
            m,
            l,
            scalar_names,
        })
    }

    /// Treats every column as its own scalar (`l = 1`).
    pub fn plain(data: DMatrix<f64>) -> Self {
        let m = data.ncols();
        Self {
            data,
            m,
            l: 1,
            scalar_names: default_names("s", m),
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.data
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn scalar_names(&self) -> &[String] {
        &self.scalar_names
    }

    /// `(scalar index, coordinate index)` of a column.
    pub fn column_source(&self, col: usize) -> (usize, usize) {
        (col / self.l, col % self.l)
    }

    /// Column range holding every coordinate of one scalar.
    pub fn scalar_block(&self, scalar: usize) -> std::ops::Range<usize> {
        scalar * self.l..(scalar + 1) * self.l
    }

    /// Same layout, new numbers (e.g. after scaling).
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        Self::new(data, self.m, self.l, self.scalar_names.clone())
    }

    pub fn select_rows(&self, rows: &[usize]) -> Self {
        Self {
            data: self.data.select_rows(rows),
            m: self.m,
            l: self.l,
            scalar_names: self.scalar_names.clone(),
        }
    }
}

pub fn flatten(tensor: &DataTensor) -> FlatMatrix {
    let (n, m, l) = tensor.shape();
    // Row i of the flat matrix is exactly the contiguous slice of sample i.
    let data = DMatrix::from_row_slice(n, m * l, tensor.values());
    FlatMatrix {
        data,
        m,
        l,
        scalar_names: tensor.scalar_names.clone(),
    }
}

/// Inverse of [`flatten`]; `m` and `l` must split the column count.
pub fn unflatten(flat: &DMatrix<f64>, m: usize, l: usize) -> Result<DataTensor> {
    if m == 0 || l == 0 || flat.ncols() != m * l {
        return Err(Error::Shape(format!(
            "{} columns cannot be split as m = {m} scalars x l = {l} coordinates",
            flat.ncols()
        )));
    }
    let n = flat.nrows();
    let mut values = Vec::with_capacity(n * m * l);
    for i in 0..n {
        values.extend(flat.row(i).iter().copied());
    }
    DataTensor::new(n, m, l, values)
}

/// Rebuilds a tensor from a [`FlatMatrix`], carrying its scalar names over.
pub fn unflatten_named(flat: &FlatMatrix) -> Result<DataTensor> {
    unflatten(flat.matrix(), flat.m(), flat.l())?.with_scalar_names(flat.scalar_names().to_vec())
}

/// Shortest decimal that parses back to the same bits.
pub(crate) fn format_float(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Writes `text`, creating parent directories as needed.
pub fn write_text(path: &Path, text: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn import_tensor(path: &Path, format: TensorFormat) -> Result<DataTensor> {
    let text = read_text(path)?;
    match format {
        TensorFormat::TensorText => parse_tensor_text(&text, path),
        TensorFormat::Csv => parse_csv(&text, path),
    }
}

pub fn export_tensor(tensor: &DataTensor, path: &Path, format: TensorFormat) -> Result<()> {
    let text = match format {
        TensorFormat::TensorText => render_tensor_text(tensor),
        TensorFormat::Csv => render_csv(tensor)?,
    };
    write_text(path, text)
}

pub fn render_tensor_text(tensor: &DataTensor) -> String {
    let (n, m, l) = tensor.shape();
    let mut out = format!("{n} {m} {l}\n");
    let _ = writeln!(out, "# scalars: {}", tensor.scalar_names.join(" "));
    let _ = writeln!(out, "# coords: {}", tensor.coord_labels.join(" "));
    if let Some(units) = &tensor.units {
        let _ = writeln!(out, "# units: {}", units.join(" "));
    }
    for (key, value) in &tensor.metadata {
        let _ = writeln!(out, "# {key}: {value}");
    }
    for line in tensor.values.chunks(l) {
        let mut first = true;
        for v in line {
            if !first {
                out.push(' ');
            }
            first = false;
            out.push_str(&format_float(*v));
        }
        out.push('\n');
    }
    out
}

fn parse_err(path: &Path, line: usize, column: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        column,
        message: message.into(),
    }
}

/// Whitespace-separated tokens with their 1-based character columns.
fn tokens(line: &str) -> impl Iterator<Item = (usize, &str)> {
    let mut rest = line;
    let mut offset = 0;
    std::iter::from_fn(move || {
        let start = rest.find(|c: char| !c.is_whitespace())?;
        let tail = &rest[start..];
        let len = tail.find(char::is_whitespace).unwrap_or(tail.len());
        let token = &tail[..len];
        let column = line[..offset + start].chars().count() + 1;
        offset += start + len;
        rest = &tail[len..];
        Some((column, token))
    })
}

fn parse_value(path: &Path, line: usize, column: usize, token: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| parse_err(path, line, column, format!("non-numeric token `{token}`")))?;
    if !v.is_finite() {
        return Err(parse_err(path, line, column, format!("non-finite value `{token}`")));
    }
    Ok(v)
}

pub fn parse_tensor_text(text: &str, path: &Path) -> Result<DataTensor> {
    let mut header: Option<(usize, usize, usize)> = None;
    let mut scalars: Option<Vec<String>> = None;
    let mut coords: Option<Vec<String>> = None;
    let mut units: Option<Vec<String>> = None;
    let mut metadata = BTreeMap::new();
    let mut values = Vec::new();
    let mut rows_seen = 0usize;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((key, value)) = comment.split_once(':') {
                let key = key.trim();
                let list = || value.split_whitespace().map(str::to_string).collect::<Vec<_>>();
                match key {
                    "scalars" => scalars = Some(list()),
                    "coords" => coords = Some(list()),
                    "units" => units = Some(list()),
                    k if !k.is_empty() && !k.contains(char::is_whitespace) => {
                        metadata.insert(k.to_string(), value.trim().to_string());
                    }
                    _ => {}
                }
            }
            continue;
        }
        let Some((n, m, l)) = header else {
            let parts: Vec<(usize, &str)> = tokens(raw).collect();
            if parts.len() != 3 {
                return Err(parse_err(path, lineno, 1, "header must be `n m l`"));
            }
            let mut dims = [0usize; 3];
            for (slot, (col, tok)) in dims.iter_mut().zip(&parts) {
                *slot = tok.parse().map_err(|_| {
                    parse_err(path, lineno, *col, format!("header extent `{tok}` is not an integer"))
                })?;
                if *slot == 0 {
                    return Err(parse_err(path, lineno, *col, "header extents must be at least 1"));
                }
            }
            header = Some((dims[0], dims[1], dims[2]));
            values.reserve(dims[0] * dims[1] * dims[2]);
            continue;
        };
        if rows_seen == n * m {
            return Err(parse_err(
                path,
                lineno,
                1,
                format!("header declares {} data lines but more are present", n * m),
            ));
        }
        let before = values.len();
        for (col, tok) in tokens(raw) {
            values.push(parse_value(path, lineno, col, tok)?);
        }
        if values.len() - before != l {
            return Err(parse_err(
                path,
                lineno,
                1,
                format!("expected {l} values per line, found {}", values.len() - before),
            ));
        }
        rows_seen += 1;
    }

    let (n, m, l) = header.ok_or_else(|| parse_err(path, 1, 1, "missing `n m l` header"))?;
    if rows_seen != n * m {
        return Err(parse_err(
            path,
            text.lines().count().max(1),
            1,
            format!("header declares {} data lines, found {rows_seen}", n * m),
        ));
    }
    let mut tensor = DataTensor::new(n, m, l, values)?;
    if let Some(names) = scalars {
        tensor = tensor.with_scalar_names(names)?;
    }
    if let Some(labels) = coords {
        tensor = tensor.with_coord_labels(labels)?;
    }
    if let Some(units) = units {
        tensor = tensor.with_units(units)?;
    }
    tensor.metadata = metadata;
    Ok(tensor)
}

pub fn parse_csv(text: &str, path: &Path) -> Result<DataTensor> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let names: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(parse_err(path, 1, 1, "missing header row"));
    }
    let m = names.len();
    let mut values = Vec::new();
    let mut n = 0;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(n + 2, |p| p.line() as usize);
        if record.len() != m {
            return Err(parse_err(
                path,
                line,
                1,
                format!("expected {m} fields, found {}", record.len()),
            ));
        }
        for (j, field) in record.iter().enumerate() {
            values.push(parse_value(path, line, j + 1, field)?);
        }
        n += 1;
    }
    if n == 0 {
        return Err(parse_err(path, 2, 1, "no data rows"));
    }
    DataTensor::new(n, m, 1, values)?.with_scalar_names(names)
}

fn render_csv(tensor: &DataTensor) -> Result<String> {
    if tensor.l() != 1 {
        return Err(Error::Shape(format!(
            "CSV holds l = 1 tensors only, this one has l = {}",
            tensor.l()
        )));
    }
    let mut out = tensor.scalar_names.join(",");
    out.push('\n');
    for row in tensor.values.chunks(tensor.m()) {
        let line: Vec<String> = row.iter().map(|v| format_float(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

/// Paired input/output tensors for one fidelity level.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityDataset {
    pub fidelity: String,
    pub inputs: DataTensor,
    pub outputs: DataTensor,
    pub provenance: String,
}

impl FidelityDataset {
    pub fn new(fidelity: impl Into<String>, inputs: DataTensor, outputs: DataTensor) -> Result<Self> {
        if inputs.n() != outputs.n() {
            return Err(Error::Shape(format!(
                "input and output sample counts must match ({} vs {})",
                inputs.n(),
                outputs.n()
            )));
        }
        Ok(Self {
            fidelity: fidelity.into(),
            inputs,
            outputs,
            provenance: String::new(),
        })
    }

    pub fn with_provenance(mut self, note: impl Into<String>) -> Self {
        self.provenance = note.into();
        self
    }

    pub fn load(fidelity: &str, input: &Path, output: &Path) -> Result<Self> {
        let x = import_tensor(input, TensorFormat::from_path(input))?;
        let y = import_tensor(output, TensorFormat::from_path(output))?;
        Ok(Self::new(fidelity, x, y)?
            .with_provenance(format!("{} + {}", input.display(), output.display())))
    }

    pub fn len(&self) -> usize {
        self.inputs.n()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Input width after flattening (`m*l` of the input tensor).
    pub fn input_dim(&self) -> usize {
        self.inputs.m() * self.inputs.l()
    }

    pub fn output_dim(&self) -> usize {
        self.outputs.m() * self.outputs.l()
    }

    pub fn select_samples(&self, rows: &[usize]) -> Result<Self> {
        Ok(Self {
            fidelity: self.fidelity.clone(),
            inputs: self.inputs.select_samples(rows)?,
            outputs: self.outputs.select_samples(rows)?,
            provenance: self.provenance.clone(),
        })
    }
}
