//! Binary artifact files and CSV exports.
//!
//! One container layout serves datasets, master matrices, and routing
//! trace sets:
//!
//! ```text
//! offset 0   magic "CAPSRT01"
//! offset 8   record kind: u8 (0 dataset, 1 master, 2 trace set)
//! offset 9   scalar width: u8 (0 f32, 1 f64)
//! offset 10  n_lower: u32 LE
//! offset 14  n_upper: u32 LE
//! offset 18  dim: u32 LE
//! offset 22  record count: u64 LE
//! offset 30  metadata length: u32 LE
//! offset 34  metadata: UTF-8 JSON
//! then       payload, little-endian scalars
//! ```
//!
//! Dataset payload: per example, label u32 then prediction values in
//! (i, j, coordinate) row-major order. Master payload: one
//! n_lower x n_upper matrix row-major, count 1, dim slot 1. Trace
//! payload: per example, label u32, the stacked per-iteration
//! coefficient matrices, then the final outputs; the iteration count
//! comes from the routing config in the metadata.
//!
//! Parsing fails closed: malformed input yields a format error naming a
//! byte offset, never a partially populated value. f32 payloads widen
//! exactly on read; internal compute stays f64.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::analysis::{AccuracyReport, CorrelationMatrix, TuningCurves};
use crate::benchmark::BenchReport;
use crate::error::{Error, Result};
use crate::master::MasterMatrix;
use crate::routing::{CapsuleOutputs, PredictionTensor, RoutingConfig, RoutingTrace};
use crate::synth::{LabeledDataset, Provenance};

const MAGIC: &[u8; 8] = b"CAPSRT01";
const META_OFFSET: u64 = 34;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    Dataset,
    Master,
    Trace,
}

impl RecordKind {
    fn code(self) -> u8 {
        match self {
            RecordKind::Dataset => 0,
            RecordKind::Master => 1,
            RecordKind::Trace => 2,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(RecordKind::Dataset),
            1 => Some(RecordKind::Master),
            2 => Some(RecordKind::Trace),
            _ => None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            RecordKind::Dataset => "dataset",
            RecordKind::Master => "master",
            RecordKind::Trace => "trace",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScalarWidth {
    F32,
    F64,
}

impl ScalarWidth {
    fn code(self) -> u8 {
        match self {
            ScalarWidth::F32 => 0,
            ScalarWidth::F64 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScalarWidth::F32),
            1 => Some(ScalarWidth::F64),
            _ => None,
        }
    }

    fn bytes(self) -> usize {
        match self {
            ScalarWidth::F32 => 4,
            ScalarWidth::F64 => 8,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    provenance: Provenance,
}

#[derive(Serialize, Deserialize)]
struct MasterMeta {
    build_config: crate::master::BuilderConfig,
    routing_config: RoutingConfig,
    class_counts: Vec<u64>,
    source_digest: String,
    variant: crate::master::MasterVariant,
}

#[derive(Serialize, Deserialize)]
struct TraceMeta {
    routing_config: RoutingConfig,
}

fn format_err(offset: u64, message: impl Into<String>) -> Error {
    Error::Format {
        offset,
        message: message.into(),
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Cursor { bytes, pos: 0 }
    }

    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(format_err(
                self.offset(),
                format!("truncated: need {n} bytes for {what}, {} left", self.remaining()),
            ));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    /// One scalar at `width`, widened to f64, rejected if non-finite.
    fn value(&mut self, width: ScalarWidth) -> Result<f64> {
        let offset = self.offset();
        let v = match width {
            ScalarWidth::F32 => {
                f32::from_le_bytes(self.take(4, "value")?.try_into().unwrap()) as f64
            }
            ScalarWidth::F64 => f64::from_le_bytes(self.take(8, "value")?.try_into().unwrap()),
        };
        if !v.is_finite() {
            return Err(format_err(offset, "non-finite value"));
        }
        Ok(v)
    }

    fn values(&mut self, width: ScalarWidth, n: usize) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.value(width)?);
        }
        Ok(out)
    }
}

struct Header {
    width: ScalarWidth,
    dims: (usize, usize, usize),
    count: u64,
    meta: Vec<u8>,
}

fn dim_u32(value: usize, what: &str) -> Result<u32> {
    u32::try_from(value)
        .map_err(|_| Error::Validation(format!("{what} {value} does not fit the file format")))
}

fn encode_header(
    kind: RecordKind,
    width: ScalarWidth,
    dims: (usize, usize, usize),
    count: u64,
    meta: &[u8],
) -> Result<Vec<u8>> {
    let meta_len = u32::try_from(meta.len())
        .map_err(|_| Error::Validation("metadata too large for the file format".into()))?;
    let mut buf = Vec::with_capacity(META_OFFSET as usize + meta.len());
    buf.extend_from_slice(MAGIC);
    buf.push(kind.code());
    buf.push(width.code());
    buf.extend_from_slice(&dim_u32(dims.0, "n_lower")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(dims.1, "n_upper")?.to_le_bytes());
    buf.extend_from_slice(&dim_u32(dims.2, "dim")?.to_le_bytes());
    buf.extend_from_slice(&count.to_le_bytes());
    buf.extend_from_slice(&meta_len.to_le_bytes());
    buf.extend_from_slice(meta);
    Ok(buf)
}

fn parse_header(cursor: &mut Cursor, expected_kind: RecordKind) -> Result<Header> {
    let magic = cursor.take(8, "magic")?;
    if magic != MAGIC {
        return Err(format_err(0, format!("bad magic {magic:02x?}")));
    }
    let kind_offset = cursor.offset();
    let kind_code = cursor.u8("record kind")?;
    let kind = RecordKind::from_code(kind_code)
        .ok_or_else(|| format_err(kind_offset, format!("unknown record kind {kind_code}")))?;
    if kind != expected_kind {
        return Err(format_err(
            kind_offset,
            format!("record kind is {}, expected {}", kind.name(), expected_kind.name()),
        ));
    }
    let width_offset = cursor.offset();
    let width_code = cursor.u8("scalar width")?;
    let width = ScalarWidth::from_code(width_code)
        .ok_or_else(|| format_err(width_offset, format!("unknown scalar width {width_code}")))?;
    let mut dims = [0usize; 3];
    for (slot, name) in ["n_lower", "n_upper", "dim"].iter().enumerate() {
        let offset = cursor.offset();
        let d = cursor.u32(name)?;
        if d == 0 {
            return Err(format_err(offset, format!("{name} must be at least 1")));
        }
        dims[slot] = d as usize;
    }
    let count = cursor.u64("record count")?;
    let meta_len_offset = cursor.offset();
    let meta_len = cursor.u32("metadata length")? as usize;
    if cursor.remaining() < meta_len {
        return Err(format_err(
            meta_len_offset,
            format!(
                "metadata length {meta_len} exceeds {} remaining bytes",
                cursor.remaining()
            ),
        ));
    }
    let meta = cursor.take(meta_len, "metadata")?.to_vec();
    Ok(Header {
        width,
        dims: (dims[0], dims[1], dims[2]),
        count,
        meta,
    })
}

fn parse_meta<'de, T: Deserialize<'de>>(meta: &'de [u8]) -> Result<T> {
    serde_json::from_slice(meta).map_err(|e| format_err(META_OFFSET, format!("bad metadata: {e}")))
}

/// The payload must match the declared size exactly; short and trailing
/// bytes both fail.
fn check_payload_size(cursor: &Cursor, count: u64, bytes_per_record: u128) -> Result<()> {
    let expected = count as u128 * bytes_per_record;
    let actual = cursor.remaining() as u128;
    if actual != expected {
        return Err(format_err(
            cursor.offset(),
            format!("payload is {actual} bytes, header declares {expected}"),
        ));
    }
    Ok(())
}

fn push_value(buf: &mut Vec<u8>, width: ScalarWidth, v: f64) {
    match width {
        ScalarWidth::F32 => buf.extend_from_slice(&(v as f32).to_le_bytes()),
        ScalarWidth::F64 => buf.extend_from_slice(&v.to_le_bytes()),
    }
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &LabeledDataset) -> Result<()> {
    write_dataset_with_width(path, dataset, ScalarWidth::F64)
}

/// f32 narrows values on write; intended for parity with externally
/// exported single-precision predictions, not for internal artifacts.
pub fn write_dataset_with_width(
    path: impl AsRef<Path>,
    dataset: &LabeledDataset,
    width: ScalarWidth,
) -> Result<()> {
    let meta = serde_json::to_vec(&DatasetMeta {
        provenance: dataset.provenance().clone(),
    })
    .expect("provenance serializes");
    let dims = (dataset.n_lower(), dataset.n_upper(), dataset.dim());
    let mut buf = encode_header(
        RecordKind::Dataset,
        width,
        dims,
        dataset.len() as u64,
        &meta,
    )?;
    for (example, &label) in dataset.examples().iter().zip(dataset.labels()) {
        buf.extend_from_slice(&(label as u32).to_le_bytes());
        for &v in example.values().iter() {
            push_value(&mut buf, width, v);
        }
    }
    fs::write(path, &buf)?;
    Ok(())
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor::new(&bytes);
    let header = parse_header(&mut cursor, RecordKind::Dataset)?;
    let meta: DatasetMeta = parse_meta(&header.meta)?;
    let (n_lower, n_upper, dim) = header.dims;
    let values_per_example = n_lower * n_upper * dim;
    check_payload_size(
        &cursor,
        header.count,
        4 + values_per_example as u128 * header.width.bytes() as u128,
    )?;
    let count = header.count as usize;
    let mut examples = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label_offset = cursor.offset();
        let label = cursor.u32("label")? as usize;
        if label >= n_upper {
            return Err(format_err(
                label_offset,
                format!("label {label} outside [0, {n_upper})"),
            ));
        }
        let values = cursor.values(header.width, values_per_example)?;
        examples.push(PredictionTensor::from_shape_vec(
            (n_lower, n_upper, dim),
            values,
        )?);
        labels.push(label);
    }
    LabeledDataset::with_dims((n_lower, n_upper, dim), examples, labels, meta.provenance)
}

pub fn write_master(path: impl AsRef<Path>, master: &MasterMatrix) -> Result<()> {
    let meta = serde_json::to_vec(&MasterMeta {
        build_config: master.build_config().clone(),
        routing_config: master.routing_config().clone(),
        class_counts: master.class_counts().to_vec(),
        source_digest: master.source_digest().to_string(),
        variant: master.variant(),
    })
    .expect("master metadata serializes");
    let dims = (master.n_lower(), master.n_upper(), 1);
    let mut buf = encode_header(RecordKind::Master, ScalarWidth::F64, dims, 1, &meta)?;
    for &v in master.values().iter() {
        push_value(&mut buf, ScalarWidth::F64, v);
    }
    fs::write(path, &buf)?;
    Ok(())
}

pub fn read_master(path: impl AsRef<Path>) -> Result<MasterMatrix> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor::new(&bytes);
    let header = parse_header(&mut cursor, RecordKind::Master)?;
    if header.count != 1 {
        return Err(format_err(
            22,
            format!("master files hold exactly one record, found {}", header.count),
        ));
    }
    let meta: MasterMeta = parse_meta(&header.meta)?;
    let (n_lower, n_upper, _) = header.dims;
    check_payload_size(
        &cursor,
        1,
        (n_lower * n_upper) as u128 * header.width.bytes() as u128,
    )?;
    let values = cursor.values(header.width, n_lower * n_upper)?;
    let matrix = Array2::from_shape_vec((n_lower, n_upper), values)
        .expect("payload length already checked");
    MasterMatrix::new(
        matrix,
        meta.build_config,
        meta.routing_config,
        meta.class_counts,
        meta.source_digest,
        meta.variant,
    )
}

/// Every trace must have been produced under `config` (same iteration
/// count and norm kind); labels pair each trace with its example.
pub fn write_trace_set(
    path: impl AsRef<Path>,
    traces: &[RoutingTrace],
    labels: &[usize],
    config: &RoutingConfig,
) -> Result<()> {
    if traces.is_empty() {
        return Err(Error::Validation("trace set needs at least one trace".into()));
    }
    if traces.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} traces but {} labels",
            traces.len(),
            labels.len()
        )));
    }
    config.validate()?;
    let n_lower = traces[0].n_lower();
    let n_upper = traces[0].n_upper();
    let dim = traces[0].outputs().dim();
    for (idx, trace) in traces.iter().enumerate() {
        if trace.iterations() != config.iterations
            || trace.norm_kind() != config.norm_kind
            || trace.init_coefficient() != config.init_coefficient
        {
            return Err(Error::Validation(format!(
                "trace {idx} was not produced under the given routing config"
            )));
        }
        if trace.n_lower() != n_lower
            || trace.n_upper() != n_upper
            || trace.outputs().dim() != dim
        {
            return Err(Error::Dimension(format!("trace {idx} has mismatched dims")));
        }
    }
    for (idx, &label) in labels.iter().enumerate() {
        if label >= n_upper {
            return Err(Error::Validation(format!(
                "label {label} of trace {idx} outside [0, {n_upper})"
            )));
        }
    }
    let meta = serde_json::to_vec(&TraceMeta {
        routing_config: config.clone(),
    })
    .expect("routing config serializes");
    let mut buf = encode_header(
        RecordKind::Trace,
        ScalarWidth::F64,
        (n_lower, n_upper, dim),
        traces.len() as u64,
        &meta,
    )?;
    for (trace, &label) in traces.iter().zip(labels) {
        buf.extend_from_slice(&(label as u32).to_le_bytes());
        for &v in trace.coefficients().iter() {
            push_value(&mut buf, ScalarWidth::F64, v);
        }
        for &v in trace.outputs().values().iter() {
            push_value(&mut buf, ScalarWidth::F64, v);
        }
    }
    fs::write(path, &buf)?;
    Ok(())
}

pub fn read_trace_set(
    path: impl AsRef<Path>,
) -> Result<(Vec<RoutingTrace>, Vec<usize>, RoutingConfig)> {
    let bytes = fs::read(path)?;
    let mut cursor = Cursor::new(&bytes);
    let header = parse_header(&mut cursor, RecordKind::Trace)?;
    let meta: TraceMeta = parse_meta(&header.meta)?;
    let config = meta.routing_config;
    config
        .validate()
        .map_err(|e| format_err(META_OFFSET, format!("bad routing config: {e}")))?;
    let (n_lower, n_upper, dim) = header.dims;
    let r = config.iterations;
    let coeff_len = r * n_lower * n_upper;
    let out_len = n_upper * dim;
    check_payload_size(
        &cursor,
        header.count,
        4 + (coeff_len + out_len) as u128 * header.width.bytes() as u128,
    )?;
    let count = header.count as usize;
    let mut traces = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for _ in 0..count {
        let label_offset = cursor.offset();
        let label = cursor.u32("label")? as usize;
        if label >= n_upper {
            return Err(format_err(
                label_offset,
                format!("label {label} outside [0, {n_upper})"),
            ));
        }
        let coefficients = Array3::from_shape_vec(
            (r, n_lower, n_upper),
            cursor.values(header.width, coeff_len)?,
        )
        .expect("payload length already checked");
        let outputs = Array2::from_shape_vec(
            (n_upper, dim),
            cursor.values(header.width, out_len)?,
        )
        .expect("payload length already checked");
        traces.push(RoutingTrace::from_parts(
            coefficients,
            CapsuleOutputs::new(outputs)?,
            config.norm_kind,
            config.init_coefficient,
        ));
        labels.push(label);
    }
    Ok((traces, labels, config))
}

/// Nine fixed decimals: enough for the 1e-9 reparse contract at the
/// magnitudes these artifacts carry.
pub fn format_value(v: f64) -> String {
    format!("{v:.9}")
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    fs::write(path, text.as_bytes())?;
    Ok(())
}

/// Generic CSV writer used by every export: comma-separated, LF line
/// endings, header row first.
pub fn write_csv(path: impl AsRef<Path>, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut text = String::new();
    text.push_str(&header.join(","));
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn export_correlation_csv(path: impl AsRef<Path>, matrix: &CorrelationMatrix) -> Result<()> {
    let rows: Vec<Vec<String>> = matrix
        .values()
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|&v| format_value(v)).collect())
        .collect();
    write_csv(path, matrix.col_labels(), &rows)
}

pub fn export_tuning_csv(path: impl AsRef<Path>, curves: &TuningCurves) -> Result<()> {
    let header: Vec<String> = (0..curves.n_upper()).map(|j| format!("v{j}")).collect();
    let rows: Vec<Vec<String>> = curves
        .values()
        .rows()
        .into_iter()
        .map(|row| row.iter().map(|&v| format_value(v)).collect())
        .collect();
    write_csv(path, &header, &rows)
}

pub fn export_accuracy_csv(path: impl AsRef<Path>, report: &AccuracyReport) -> Result<()> {
    let header = ["class", "count", "recall"].map(String::from);
    let mut rows: Vec<Vec<String>> = report
        .per_class_recall
        .iter()
        .enumerate()
        .map(|(k, &recall)| {
            vec![
                k.to_string(),
                report.class_counts[k].to_string(),
                format_value(recall),
            ]
        })
        .collect();
    let total: usize = report.class_counts.iter().sum();
    rows.push(vec![
        "overall".into(),
        total.to_string(),
        format_value(report.overall),
    ]);
    write_csv(path, &header, &rows)
}

pub fn export_bench_csv(path: impl AsRef<Path>, reports: &[BenchReport]) -> Result<()> {
    let header = [
        "mode",
        "examples",
        "iterations",
        "wall_time_total_s",
        "per_example_mean_us",
        "per_example_p50_us",
        "per_example_p95_us",
        "accuracy",
        "agreement_rate",
        "speedup_vs_dynamic",
        "multiply_adds_per_example",
        "parallel_throughput_eps",
    ]
    .map(String::from);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            vec![
                r.mode.to_string(),
                r.examples.to_string(),
                r.iterations.to_string(),
                format_value(r.wall_time_total_s),
                format_value(r.per_example_mean_us),
                format_value(r.per_example_p50_us),
                format_value(r.per_example_p95_us),
                format_value(r.accuracy),
                format_value(r.agreement_rate),
                r.speedup_vs_dynamic.map(format_value).unwrap_or_default(),
                r.multiply_adds_per_example.to_string(),
                format_value(r.parallel_throughput_eps),
            ]
        })
        .collect();
    write_csv(path, &header, &rows)
}
