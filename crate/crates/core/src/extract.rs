//! Capture → sessions → NetMatrix rows, with bookkeeping.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::capture::Capture;
use crate::dataset::ManifestEntry;
use crate::netmatrix::{build_row, NetMatrixRow};
use crate::sessionizer::{select_netmatrix_packets, sessionize, FlowKey};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionStats {
    pub files_read: u64,
    pub files_failed: u64,
    pub packets_parsed: u64,
    pub packets_skipped: u64,
    pub skipped_by_reason: BTreeMap<String, u64>,
    pub sessions_formed: u64,
    pub sessions_dropped_insufficient: u64,
    pub sessions_unlabeled: u64,
    pub rows_emitted: u64,
}

impl ExtractionStats {
    pub fn merge(&mut self, other: &ExtractionStats) {
        self.files_read += other.files_read;
        self.files_failed += other.files_failed;
        self.packets_parsed += other.packets_parsed;
        self.packets_skipped += other.packets_skipped;
        for (k, v) in &other.skipped_by_reason {
            *self.skipped_by_reason.entry(k.clone()).or_default() += v;
        }
        self.sessions_formed += other.sessions_formed;
        self.sessions_dropped_insufficient += other.sessions_dropped_insufficient;
        self.sessions_unlabeled += other.sessions_unlabeled;
        self.rows_emitted += other.rows_emitted;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedRow {
    pub key: FlowKey,
    pub row: NetMatrixRow,
}

/// Rows for every session with at least five encrypted-payload packets, in
/// session order (first packet time).
pub fn extract_rows(capture: Capture) -> (Vec<ExtractedRow>, ExtractionStats) {
    let mut stats = ExtractionStats {
        files_read: 1,
        packets_parsed: capture.records.len() as u64,
        packets_skipped: capture.skipped_total(),
        skipped_by_reason: capture.skipped.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        ..Default::default()
    };
    let sessions = sessionize(capture.records);
    stats.sessions_formed = sessions.len() as u64;
    let mut rows = Vec::new();
    for s in &sessions {
        match select_netmatrix_packets(s) {
            Ok(sel) => rows.push(ExtractedRow { key: s.key, row: build_row(&sel) }),
            Err(_) => stats.sessions_dropped_insufficient += 1,
        }
    }
    stats.rows_emitted = rows.len() as u64;
    (rows, stats)
}

/// Where row labels come from.
#[derive(Debug, Clone)]
pub enum LabelSource {
    /// Every row of the capture gets this label.
    Fixed(String),
    /// Label looked up by canonical flow key.
    Manifest(HashMap<FlowKey, String>),
}

impl LabelSource {
    pub fn from_manifest(entries: &[ManifestEntry]) -> Self {
        LabelSource::Manifest(entries.iter().map(|e| (e.flow_key(), e.label.clone())).collect())
    }

    fn label_for(&self, key: &FlowKey) -> Option<&str> {
        match self {
            LabelSource::Fixed(l) => Some(l),
            LabelSource::Manifest(m) => m.get(key).map(String::as_str),
        }
    }
}

/// Attaches labels, dropping (and counting) rows the source has no label for.
pub fn label_rows(
    rows: Vec<ExtractedRow>,
    labels: &LabelSource,
    stats: &mut ExtractionStats,
) -> Vec<(NetMatrixRow, String)> {
    let mut out = Vec::with_capacity(rows.len());
    for r in rows {
        match labels.label_for(&r.key) {
            Some(l) => out.push((r.row, l.to_string())),
            None => {
                stats.sessions_unlabeled += 1;
                stats.rows_emitted -= 1;
            }
        }
    }
    out
}
