//! On-disk formats: the feature CSV, the packed 30-byte row file with its
//! label sidecar, and the flow-to-label manifest CSV.

use std::io::{Read, Write};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmatrix::{
    deserialize_row, serialize_row, to_features, FeatureVector, LabeledExample, NetMatrixRow, RowError,
    FEATURE_NAMES, NUM_FEATURES, ROW_BYTES,
};
use crate::sessionizer::FlowKey;

/// First line of every feature CSV written here. Readers skip `#` lines.
pub const FEATURE_CSV_COMMENT: &str =
    "# netmatrix v1: len=IP total length (bytes), ttl=IP TTL, iat=inter-arrival between selected packets (microseconds, saturating at 16777215, iat1=0)";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("feature csv header mismatch: expected {expected:?}, found {found:?}")]
    SchemaMismatch { expected: String, found: String },
    #[error("line {line}: {message}")]
    BadRecord { line: u64, message: String },
    #[error(transparent)]
    Row(#[from] RowError),
    #[error("binary row file length {0} is not a multiple of 30")]
    RaggedBinary(usize),
    #[error("{rows} binary rows but {labels} labels")]
    LabelCountMismatch { rows: usize, labels: usize },
}

pub fn feature_csv_header() -> Vec<&'static str> {
    let mut h = FEATURE_NAMES.to_vec();
    h.push("label");
    h
}

pub fn write_feature_csv<W: Write>(mut out: W, rows: &[(NetMatrixRow, String)]) -> Result<(), DatasetError> {
    writeln!(out, "{FEATURE_CSV_COMMENT}")?;
    let mut w = csv::WriterBuilder::new().quote_style(csv::QuoteStyle::Never).from_writer(out);
    w.write_record(feature_csv_header())?;
    let mut record: Vec<String> = Vec::with_capacity(NUM_FEATURES + 1);
    for (row, label) in rows {
        record.clear();
        for p in &row.packets {
            record.push(p.total_length.to_string());
            record.push(p.ttl.to_string());
            record.push(p.iat.micros().to_string());
        }
        // label is always quoted, doubling any embedded quotes
        record.push(format!("\"{}\"", label.replace('"', "\"\"")));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<LabeledExample>, DatasetError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).has_headers(true).from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let expected = feature_csv_header();
    if header != expected {
        return Err(DatasetError::SchemaMismatch { expected: expected.join(","), found: header.join(",") });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let mut features: FeatureVector = [0.0; NUM_FEATURES];
        for (i, f) in features.iter_mut().enumerate() {
            let field = rec.get(i).unwrap_or_default().trim();
            *f = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DatasetError::BadRecord { line, message: format!("{}: bad value {field:?}", FEATURE_NAMES[i]) })?;
        }
        let label = rec.get(NUM_FEATURES).unwrap_or_default().to_string();
        if label.is_empty() {
            return Err(DatasetError::BadRecord { line, message: "empty label".into() });
        }
        out.push(LabeledExample { features, label });
    }
    Ok(out)
}

pub fn write_binary_rows<W: Write>(mut out: W, rows: &[NetMatrixRow]) -> Result<(), DatasetError> {
    for r in rows {
        out.write_all(&serialize_row(r))?;
    }
    Ok(())
}

pub fn read_binary_rows(bytes: &[u8]) -> Result<Vec<NetMatrixRow>, DatasetError> {
    if !bytes.len().is_multiple_of(ROW_BYTES) {
        return Err(DatasetError::RaggedBinary(bytes.len()));
    }
    Ok(bytes.chunks_exact(ROW_BYTES).map(deserialize_row).collect::<Result<_, _>>()?)
}

/// Pairs packed rows with a one-label-per-line sidecar.
pub fn read_binary_dataset(rows: &[u8], labels: &str) -> Result<Vec<LabeledExample>, DatasetError> {
    let rows = read_binary_rows(rows)?;
    let labels: Vec<&str> = labels.lines().collect();
    if rows.len() != labels.len() {
        return Err(DatasetError::LabelCountMismatch { rows: rows.len(), labels: labels.len() });
    }
    Ok(rows
        .iter()
        .zip(labels)
        .map(|(r, l)| LabeledExample { features: to_features(r), label: l.to_string() })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub src_ip: Ipv4Addr,
    pub src_port: u16,
    pub dst_ip: Ipv4Addr,
    pub dst_port: u16,
    pub label: String,
}

impl ManifestEntry {
    pub fn flow_key(&self) -> FlowKey {
        FlowKey::new((self.src_ip, self.src_port), (self.dst_ip, self.dst_port), 6)
    }
}

pub fn write_manifest<W: Write>(out: W, entries: &[ManifestEntry]) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(out);
    for e in entries {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest<R: Read>(input: R) -> Result<Vec<ManifestEntry>, DatasetError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}
