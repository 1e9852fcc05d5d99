//! Dataset ingestion, response transformation, standardization and the
//! seeded random source shared by the stochastic stages.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// N×d matrix of finite observations, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: DMatrix<f64>,
}

impl DataMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::InvalidArgument(format!(
                "data matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        for c in 0..values.ncols() {
            for r in 0..values.nrows() {
                if !values[(r, c)].is_finite() {
                    return Err(Error::NonFiniteInput { row: r, col: c });
                }
            }
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::Ragged {
                    row: i,
                    expected: d,
                    found: r.len(),
                });
            }
        }
        Self::new(DMatrix::from_fn(n, d, |i, j| rows[i][j]))
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    pub fn row(&self, i: usize) -> RowDVector<f64> {
        self.values.row(i).into_owned()
    }

    /// Row `i` as a column vector.
    pub fn point(&self, i: usize) -> DVector<f64> {
        self.values.row(i).transpose()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }
}

/// Features, an optional continuous response and optional reference labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub features: DataMatrix,
    pub response: Option<Vec<f64>>,
    pub reference_labels: Option<Vec<usize>>,
}

impl LabeledDataset {
    pub fn new(
        features: DataMatrix,
        response: Option<Vec<f64>>,
        reference_labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        let n = features.n_rows();
        if let Some(y) = &response {
            if y.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "response has {} entries, expected {n}",
                    y.len()
                )));
            }
            if let Some(i) = y.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteInput { row: i, col: n });
            }
        }
        if let Some(l) = &reference_labels {
            if l.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "reference labels have {} entries, expected {n}",
                    l.len()
                )));
            }
        }
        Ok(Self {
            features,
            response,
            reference_labels,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.features.n_rows()
    }
}

/// Pair of inputs `x` and scalar response `y` consumed by the CWM fit.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    pub x: DataMatrix,
    pub y: Vec<f64>,
}

impl RegressionData {
    pub fn new(x: DataMatrix, y: Vec<f64>) -> Result<Self> {
        if y.len() != x.n_rows() {
            return Err(Error::InvalidArgument(format!(
                "response has {} entries, expected {}",
                y.len(),
                x.n_rows()
            )));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput {
                row: i,
                col: x.n_cols(),
            });
        }
        Ok(Self { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.n_rows()
    }

    pub fn d(&self) -> usize {
        self.x.n_cols()
    }
}

/// Seeded pseudo-random stream (ChaCha8). Identical seeds give identical
/// draws on every platform.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomSource {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn algorithm(&self) -> &'static str {
        Self::ALGORITHM
    }

    /// Independent child stream. `child_seed = splitmix64(parent_seed ^
    /// splitmix64(child_index))`, so it only depends on the parent seed,
    /// not on how much of the parent stream has been consumed.
    pub fn split(&self, child_index: u64) -> RandomSource {
        RandomSource::new(child_seed(self.seed, child_index))
    }
}

pub fn child_seed(parent_seed: u64, child_index: u64) -> u64 {
    splitmix64(parent_seed ^ splitmix64(child_index.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngCore for RandomSource {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Column reference by zero-based index or by header name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

impl FromStr for ColumnRef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Err(Error::InvalidArgument("empty column reference".into()));
        }
        Ok(match s.parse::<usize>() {
            Ok(i) => ColumnRef::Index(i),
            Err(_) => ColumnRef::Name(s.to_string()),
        })
    }
}

/// Which columns become features.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FeatureColumns {
    /// Every column not claimed as response or label.
    #[default]
    Remaining,
    List(Vec<ColumnRef>),
}

#[derive(Debug, Clone)]
pub struct CsvSpec {
    pub path: PathBuf,
    pub features: FeatureColumns,
    pub response: Option<ColumnRef>,
    pub label: Option<ColumnRef>,
    pub has_header: bool,
}

impl CsvSpec {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        Self {
            path: path.into(),
            features: FeatureColumns::Remaining,
            response: None,
            label: None,
            has_header: true,
        }
    }
}

/// Mapping from raw label strings to integer codes, in first-appearance order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LabelMapping {
    pub entries: Vec<(String, usize)>,
}

impl LabelMapping {
    pub fn n_classes(&self) -> usize {
        self.entries.len()
    }

    /// Two-column CSV: `original_label,integer_code`.
    pub fn to_csv_string(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["original_label", "integer_code"]).unwrap();
        for (raw, code) in &self.entries {
            w.write_record([raw.as_str(), &code.to_string()]).unwrap();
        }
        String::from_utf8(w.into_inner().unwrap()).unwrap()
    }
}

#[derive(Debug, Clone)]
pub struct LoadedCsv {
    pub dataset: LabeledDataset,
    pub label_mapping: Option<LabelMapping>,
    /// Names of the selected feature columns (synthesized when there is no header).
    pub feature_names: Vec<String>,
}

pub fn load_csv(spec: &CsvSpec) -> Result<LoadedCsv> {
    if !spec.path.exists() {
        return Err(Error::MissingFile(spec.path.clone()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(spec.has_header)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(&spec.path)?;

    let header: Option<Vec<String>> = if spec.has_header {
        Some(reader.headers()?.iter().map(str::to_string).collect())
    } else {
        None
    };

    let mut records: Vec<csv::StringRecord> = Vec::new();
    for rec in reader.records() {
        records.push(rec?);
    }
    if records.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{} has no data rows",
            spec.path.display()
        )));
    }
    let width = header.as_ref().map_or(records[0].len(), Vec::len);
    let data_row_offset = usize::from(spec.has_header);
    for (i, r) in records.iter().enumerate() {
        if r.len() != width {
            return Err(Error::Ragged {
                row: i + data_row_offset,
                expected: width,
                found: r.len(),
            });
        }
    }

    let resolve = |c: &ColumnRef| -> Result<usize> {
        match c {
            ColumnRef::Index(i) if *i < width => Ok(*i),
            ColumnRef::Index(i) => Err(Error::UnknownColumn(i.to_string())),
            ColumnRef::Name(name) => header
                .as_ref()
                .and_then(|h| h.iter().position(|x| x == name))
                .ok_or_else(|| Error::UnknownColumn(name.clone())),
        }
    };
    let response_col = spec.response.as_ref().map(resolve).transpose()?;
    let label_col = spec.label.as_ref().map(resolve).transpose()?;
    let feature_cols: Vec<usize> = match &spec.features {
        FeatureColumns::Remaining => (0..width)
            .filter(|c| Some(*c) != response_col && Some(*c) != label_col)
            .collect(),
        FeatureColumns::List(list) => list.iter().map(resolve).collect::<Result<_>>()?,
    };
    if feature_cols.is_empty() {
        return Err(Error::InvalidArgument("no feature columns selected".into()));
    }

    let parse = |row: usize, col: usize| -> Result<f64> {
        let raw = &records[row][col];
        match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::Parse {
                row: row + data_row_offset,
                col,
                value: raw.to_string(),
            }),
        }
    };

    let n = records.len();
    let d = feature_cols.len();
    let mut values = DMatrix::zeros(n, d);
    for i in 0..n {
        for (j, &c) in feature_cols.iter().enumerate() {
            values[(i, j)] = parse(i, c)?;
        }
    }
    let response = response_col
        .map(|c| (0..n).map(|i| parse(i, c)).collect::<Result<Vec<_>>>())
        .transpose()?;

    let (labels, label_mapping) = match label_col {
        Some(c) => {
            let raw: Vec<&str> = records.iter().map(|r| &r[c]).collect();
            let (codes, mapping) = encode_labels(&raw);
            (Some(codes), Some(mapping))
        }
        None => (None, None),
    };

    let feature_names = feature_cols
        .iter()
        .map(|&c| match &header {
            Some(h) => h[c].clone(),
            None => format!("x{c}"),
        })
        .collect();

    Ok(LoadedCsv {
        dataset: LabeledDataset::new(DataMatrix::new(values)?, response, labels)?,
        label_mapping,
        feature_names,
    })
}

/// Positive integer labels are kept as-is; anything else is coded 1..K in
/// first-appearance order.
fn encode_labels(raw: &[&str]) -> (Vec<usize>, LabelMapping) {
    let as_ints: Option<Vec<usize>> = raw
        .iter()
        .map(|s| s.parse::<usize>().ok().filter(|&v| v >= 1))
        .collect();
    let mut mapping = LabelMapping::default();
    let mut seen: HashMap<&str, usize> = HashMap::new();
    match as_ints {
        Some(codes) => {
            for (s, &c) in raw.iter().zip(&codes) {
                if seen.insert(s, c).is_none() {
                    mapping.entries.push((s.to_string(), c));
                }
            }
            (codes, mapping)
        }
        None => {
            let codes = raw
                .iter()
                .map(|s| {
                    let next = seen.len() + 1;
                    *seen.entry(s).or_insert_with(|| {
                        mapping.entries.push((s.to_string(), next));
                        next
                    })
                })
                .collect();
            (codes, mapping)
        }
    }
}

/// Writes features (then response, then labels when present) as CSV. Floats use
/// the shortest representation that parses back to the identical bits.
pub fn write_csv(dataset: &LabeledDataset, feature_names: &[String], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = feature_names.to_vec();
    if header.len() != dataset.features.n_cols() {
        header = (0..dataset.features.n_cols()).map(|j| format!("x{j}")).collect();
    }
    if dataset.response.is_some() {
        header.push("response".into());
    }
    if dataset.reference_labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header)?;
    for i in 0..dataset.n_rows() {
        let mut rec: Vec<String> = (0..dataset.features.n_cols())
            .map(|j| format!("{}", dataset.features.get(i, j)))
            .collect();
        if let Some(y) = &dataset.response {
            rec.push(format!("{}", y[i]));
        }
        if let Some(l) = &dataset.reference_labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    write_atomic(path, &bytes)
}

/// Writes to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", file_name.to_string_lossy()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = res {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

/// `ln(label + offset) + N(0, noise_sd²)` per label.
pub fn transform_labels(
    labels: &[usize],
    offset: f64,
    noise_sd: f64,
    rng: &mut RandomSource,
) -> Result<Vec<f64>> {
    if !(noise_sd >= 0.0) || !noise_sd.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "noise_sd must be finite and >= 0, got {noise_sd}"
        )));
    }
    let noise = if noise_sd > 0.0 {
        Some(Normal::new(0.0, noise_sd).expect("validated sd"))
    } else {
        None
    };
    labels
        .iter()
        .map(|&l| {
            let shifted = l as f64 + offset;
            if l == 0 || !(shifted > 0.0) {
                return Err(Error::InvalidLabel { label: l as i64 });
            }
            let eps = noise.as_ref().map_or(0.0, |n| n.sample(rng));
            Ok(shifted.ln() + eps)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ConstantColumnPolicy {
    #[default]
    Error,
    Drop,
}

impl FromStr for ConstantColumnPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Self::Error),
            "drop" => Ok(Self::Drop),
            other => Err(Error::InvalidArgument(format!(
                "constant-column policy must be 'error' or 'drop', got {other:?}"
            ))),
        }
    }
}

/// Output of [`standardize`]: the scaled matrix and what is needed to undo it.
#[derive(Debug, Clone)]
pub struct Standardized {
    pub data: DataMatrix,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    /// Original indices of the columns that survived.
    pub kept_columns: Vec<usize>,
}

impl Standardized {
    /// Maps standardized values back to the original scale of the kept columns.
    pub fn recompose(&self, z: &DataMatrix) -> Result<DataMatrix> {
        if z.n_cols() != self.means.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} columns, got {}",
                self.means.len(),
                z.n_cols()
            )));
        }
        DataMatrix::new(DMatrix::from_fn(z.n_rows(), z.n_cols(), |i, j| {
            z.get(i, j) * self.sds[j] + self.means[j]
        }))
    }
}

/// Centers every column and scales it by its sample standard deviation
/// (divisor N−1).
pub fn standardize(x: &DataMatrix, policy: ConstantColumnPolicy) -> Result<Standardized> {
    let n = x.n_rows();
    if n < 2 {
        return Err(Error::InvalidArgument(
            "standardization needs at least two rows".into(),
        ));
    }
    let mut means = Vec::new();
    let mut sds = Vec::new();
    let mut kept = Vec::new();
    for j in 0..x.n_cols() {
        let col = x.values().column(j);
        let mean = col.iter().sum::<f64>() / n as f64;
        let ss: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum();
        let sd = (ss / (n - 1) as f64).sqrt();
        if sd > 0.0 && sd.is_finite() {
            means.push(mean);
            sds.push(sd);
            kept.push(j);
        } else if policy == ConstantColumnPolicy::Error {
            return Err(Error::ConstantColumn { col: j });
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidArgument("every column is constant".into()));
    }
    let values = DMatrix::from_fn(n, kept.len(), |i, k| {
        (x.get(i, kept[k]) - means[k]) / sds[k]
    });
    Ok(Standardized {
        data: DataMatrix::new(values)?,
        means,
        sds,
        kept_columns: kept,
    })
}
