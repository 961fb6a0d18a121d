//! Input/output sequences, datasets with train/validation/test splits,
//! min-max normalisation, the Fit metric and CSV persistence.
//!
//! CSV files carry a header `k,u1,...,u7,y1,...,y12` followed by one row per
//! sample. Floats are written in shortest round-trip form so that a save/load
//! cycle is bit-exact.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::Vector;

pub const N_U: usize = 7;
pub const N_Y: usize = 12;
pub const SAMPLE_PERIOD_S: f64 = 30.0;
pub const MANIFEST: &str = "manifest.csv";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid sequence: {0}")]
    Sequence(String),
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("{0}")]
    Domain(String),
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: u64, msg: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sequence {
    pub id: String,
    pub inputs: Vec<Vector>,
    pub outputs: Vec<Vector>,
    pub sample_period_s: f64,
}

impl Sequence {
    pub fn new(id: impl Into<String>, inputs: Vec<Vector>, outputs: Vec<Vector>) -> Result<Self, DataError> {
        let s = Self { id: id.into(), inputs, outputs, sample_period_s: SAMPLE_PERIOD_S };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let err = |m: String| Err(DataError::Sequence(format!("{}: {m}", self.id)));
        if self.inputs.len() != self.outputs.len() {
            return err(format!("{} inputs but {} outputs", self.inputs.len(), self.outputs.len()));
        }
        if self.inputs.len() < 2 {
            return err("fewer than 2 samples".into());
        }
        let (nu, ny) = (self.inputs[0].len(), self.outputs[0].len());
        if nu == 0 || ny == 0 {
            return err("empty input or output vectors".into());
        }
        if let Some(k) = (0..self.len()).find(|&k| self.inputs[k].len() != nu || self.outputs[k].len() != ny) {
            return err(format!("ragged sample at step {k}"));
        }
        if !(self.sample_period_s > 0.0) {
            return err("sample period must be positive".into());
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n_u(&self) -> usize {
        self.inputs[0].len()
    }

    pub fn n_y(&self) -> usize {
        self.outputs[0].len()
    }

    /// Values of output channel `j` over time.
    pub fn output_channel(&self, j: usize) -> Vec<f64> {
        self.outputs.iter().map(|y| y[j]).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Per-channel min/max of the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub y_min: Vec<f64>,
    pub y_max: Vec<f64>,
    /// Channels with `max == min`; they normalise to 0.
    pub u_constant: Vec<bool>,
    pub y_constant: Vec<bool>,
}

fn channel_ranges<'a>(rows: impl Iterator<Item = &'a Vector>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for v in rows {
        for j in 0..n {
            lo[j] = lo[j].min(v[j]);
            hi[j] = hi[j].max(v[j]);
        }
    }
    (lo, hi)
}

fn to_unit(x: f64, lo: f64, hi: f64, constant: bool) -> f64 {
    if constant {
        0.0
    } else {
        2.0 * (x - lo) / (hi - lo) - 1.0
    }
}

fn from_unit(z: f64, lo: f64, hi: f64, constant: bool) -> f64 {
    if constant {
        lo
    } else {
        (z + 1.0) * (hi - lo) / 2.0 + lo
    }
}

impl NormStats {
    pub fn fit(train: &[&Sequence]) -> Result<Self, DataError> {
        let first = train.first().ok_or_else(|| DataError::Domain("normalisation needs training data".into()))?;
        let (nu, ny) = (first.n_u(), first.n_y());
        if train.iter().any(|s| s.n_u() != nu || s.n_y() != ny) {
            return Err(DataError::Dataset("training sequences disagree on channel counts".into()));
        }
        let (u_min, u_max) = channel_ranges(train.iter().flat_map(|s| &s.inputs), nu);
        let (y_min, y_max) = channel_ranges(train.iter().flat_map(|s| &s.outputs), ny);
        let flag = |lo: &[f64], hi: &[f64]| lo.iter().zip(hi).map(|(a, b)| a == b).collect::<Vec<_>>();
        Ok(Self { u_constant: flag(&u_min, &u_max), y_constant: flag(&y_min, &y_max), u_min, u_max, y_min, y_max })
    }

    pub fn n_u(&self) -> usize {
        self.u_min.len()
    }

    pub fn n_y(&self) -> usize {
        self.y_min.len()
    }

    fn check(&self, seq: &Sequence) -> Result<(), DataError> {
        if seq.n_u() != self.n_u() || seq.n_y() != self.n_y() {
            return Err(DataError::Dataset(format!(
                "{}: sequence has ({}, {}) channels, statistics have ({}, {})",
                seq.id,
                seq.n_u(),
                seq.n_y(),
                self.n_u(),
                self.n_y()
            )));
        }
        Ok(())
    }

    pub fn normalize_input(&self, u: &[f64]) -> Vector {
        Vector::from_vec_unchecked(
            (0..u.len()).map(|j| to_unit(u[j], self.u_min[j], self.u_max[j], self.u_constant[j])).collect(),
        )
    }

    pub fn normalize_output(&self, y: &[f64]) -> Vector {
        Vector::from_vec_unchecked(
            (0..y.len()).map(|j| to_unit(y[j], self.y_min[j], self.y_max[j], self.y_constant[j])).collect(),
        )
    }

    pub fn denormalize_input(&self, u: &[f64]) -> Vector {
        Vector::from_vec_unchecked(
            (0..u.len()).map(|j| from_unit(u[j], self.u_min[j], self.u_max[j], self.u_constant[j])).collect(),
        )
    }

    pub fn denormalize_output(&self, y: &[f64]) -> Vector {
        Vector::from_vec_unchecked(
            (0..y.len()).map(|j| from_unit(y[j], self.y_min[j], self.y_max[j], self.y_constant[j])).collect(),
        )
    }

    /// Normalised copy of a sequence. Values outside the training range map
    /// outside `[-1, 1]`; nothing is clipped.
    pub fn apply(&self, seq: &Sequence) -> Result<Sequence, DataError> {
        self.check(seq)?;
        Ok(Sequence {
            id: seq.id.clone(),
            inputs: seq.inputs.iter().map(|u| self.normalize_input(u)).collect(),
            outputs: seq.outputs.iter().map(|y| self.normalize_output(y)).collect(),
            sample_period_s: seq.sample_period_s,
        })
    }

    pub fn invert(&self, seq: &Sequence) -> Result<Sequence, DataError> {
        self.check(seq)?;
        Ok(Sequence {
            id: seq.id.clone(),
            inputs: seq.inputs.iter().map(|u| self.denormalize_input(u)).collect(),
            outputs: seq.outputs.iter().map(|y| self.denormalize_output(y)).collect(),
            sample_period_s: seq.sample_period_s,
        })
    }
}

/// Sequences with a split assignment and training-split normalisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub sequences: Vec<Sequence>,
    pub split: BTreeMap<String, Split>,
    pub norm: NormStats,
}

impl Dataset {
    pub fn new(sequences: Vec<Sequence>, split: BTreeMap<String, Split>) -> Result<Self, DataError> {
        let mut ids = BTreeSet::new();
        for s in &sequences {
            s.validate()?;
            if !ids.insert(s.id.as_str()) {
                return Err(DataError::Dataset(format!("duplicate sequence id {}", s.id)));
            }
        }
        if let Some(id) = ids.iter().find(|id| !split.contains_key(**id)) {
            return Err(DataError::Dataset(format!("sequence {id} has no split")));
        }
        if let Some(id) = split.keys().find(|id| !ids.contains(id.as_str())) {
            return Err(DataError::Dataset(format!("split names unknown sequence {id}")));
        }
        let train: Vec<&Sequence> = sequences.iter().filter(|s| split[&s.id] == Split::Train).collect();
        let norm = NormStats::fit(&train)?;
        if let Some(s) = sequences.iter().find(|s| s.n_u() != norm.n_u() || s.n_y() != norm.n_y()) {
            return Err(DataError::Dataset(format!("{} disagrees with the training channel counts", s.id)));
        }
        Ok(Self { sequences, split, norm })
    }

    pub fn of_split(&self, which: Split) -> Vec<&Sequence> {
        self.sequences.iter().filter(|s| self.split[&s.id] == which).collect()
    }

    /// Normalised sequences of one split, in storage order.
    pub fn normalized(&self, which: Split) -> Vec<Sequence> {
        self.of_split(which).into_iter().map(|s| self.norm.apply(s).expect("channel counts checked")).collect()
    }
}

/// `1 - RMSE / (max(y) - min(y))`.
pub fn fit_metric(y_true: &[f64], y_pred: &[f64]) -> Result<f64, DataError> {
    if y_true.len() != y_pred.len() {
        return Err(DataError::Domain(format!("{} targets, {} predictions", y_true.len(), y_pred.len())));
    }
    if y_true.len() < 2 {
        return Err(DataError::Domain("fit needs at least two samples".into()));
    }
    let lo = y_true.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = y_true.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(DataError::Domain("constant target has zero range".into()));
    }
    let sse: f64 = y_true.iter().zip(y_pred).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - (sse / y_true.len() as f64).sqrt() / (hi - lo))
}

/// Median of a nonempty list (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

pub fn csv_header(n_u: usize, n_y: usize) -> Vec<String> {
    std::iter::once("k".to_string())
        .chain((1..=n_u).map(|j| format!("u{j}")))
        .chain((1..=n_y).map(|j| format!("y{j}")))
        .collect()
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), DataError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    tmp.write_all(contents).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| DataError::Io { path: path.to_path_buf(), source: e.error })?;
    Ok(())
}

pub fn sequence_to_csv(seq: &Sequence) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(csv_header(seq.n_u(), seq.n_y())).expect("in-memory write");
    for k in 0..seq.len() {
        let row = std::iter::once(k.to_string())
            .chain(seq.inputs[k].iter().map(|v| format!("{v:?}")))
            .chain(seq.outputs[k].iter().map(|v| format!("{v:?}")));
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn save_csv(seq: &Sequence, path: &Path) -> Result<(), DataError> {
    write_atomic(path, &sequence_to_csv(seq))
}

/// Loads a sequence with the standard 7 inputs and 12 outputs; the id is the
/// file stem.
pub fn load_csv(path: &Path) -> Result<Sequence, DataError> {
    load_csv_with_dims(path, N_U, N_Y)
}

pub fn load_csv_with_dims(path: &Path, n_u: usize, n_y: usize) -> Result<Sequence, DataError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_csv(&bytes, &id, n_u, n_y).map_err(|(line, msg)| DataError::Parse { path: path.to_path_buf(), line, msg })
}

fn parse_csv(bytes: &[u8], id: &str, n_u: usize, n_y: usize) -> Result<Sequence, (u64, String)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes);
    let mut records = reader.records();
    let expected = csv_header(n_u, n_y);
    let header = match records.next() {
        None => return Err((1, "empty file".into())),
        Some(r) => r.map_err(|e| (1, e.to_string()))?,
    };
    for (j, name) in expected.iter().enumerate() {
        match header.get(j) {
            Some(h) if h.trim() == name => {}
            Some(h) => return Err((1, format!("header column {} is {h:?}, expected {name:?}", j + 1))),
            None => return Err((1, format!("header is missing column {name:?}"))),
        }
    }
    if header.len() > expected.len() {
        return Err((1, format!("header has {} columns, expected {}", header.len(), expected.len())));
    }
    let (mut inputs, mut outputs) = (Vec::new(), Vec::new());
    for rec in records {
        let rec = rec.map_err(|e| (e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected.len() {
            return Err((line, format!("{} fields, expected {}", rec.len(), expected.len())));
        }
        let k: usize = rec[0].trim().parse().map_err(|_| (line, format!("bad sample index {:?}", &rec[0])))?;
        if k != inputs.len() {
            return Err((line, format!("sample index {k}, expected {}", inputs.len())));
        }
        let mut values = Vec::with_capacity(n_u + n_y);
        for (j, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.trim().parse().map_err(|_| (line, format!("column {}: {cell:?} is not a number", expected[j])))?;
            if !v.is_finite() {
                return Err((line, format!("column {}: non-finite value", expected[j])));
            }
            values.push(v);
        }
        outputs.push(Vector::from_vec_unchecked(values.split_off(n_u)));
        inputs.push(Vector::from_vec_unchecked(values));
    }
    Sequence::new(id, inputs, outputs).map_err(|e| (0, e.to_string()))
}

/// Writes one CSV per sequence plus a manifest `id,split,file`.
pub fn save_dir(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(["id", "split", "file"]).expect("in-memory write");
    for s in &ds.sequences {
        let file = format!("{}.csv", s.id);
        save_csv(s, &dir.join(&file))?;
        w.write_record([s.id.as_str(), ds.split[&s.id].as_str(), file.as_str()]).expect("in-memory write");
    }
    write_atomic(&dir.join(MANIFEST), &w.into_inner().expect("in-memory flush"))
}

/// Reads a directory written by [`save_dir`].
pub fn load_dir(dir: &Path) -> Result<Dataset, DataError> {
    let path = dir.join(MANIFEST);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    let parse_err = |line: u64, msg: String| DataError::Parse { path: path.clone(), line, msg };
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(bytes.as_slice());
    let mut records = reader.records();
    match records.next() {
        Some(Ok(h)) if h.iter().eq(["id", "split", "file"]) => {}
        _ => return Err(parse_err(1, "expected header id,split,file".into())),
    }
    let (mut sequences, mut split) = (Vec::new(), BTreeMap::new());
    for rec in records {
        let rec = rec.map_err(|e| parse_err(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 3 {
            return Err(parse_err(line, format!("{} fields, expected 3", rec.len())));
        }
        let which = Split::parse(&rec[1]).ok_or_else(|| parse_err(line, format!("unknown split {:?}", &rec[1])))?;
        let mut seq = load_csv(&dir.join(&rec[2]))?;
        seq.id = rec[0].to_string();
        split.insert(seq.id.clone(), which);
        sequences.push(seq);
    }
    Dataset::new(sequences, split)
}
