//! Classification quality (accuracy, macro precision/recall/F1) and
//! resource measurements (training latency, inference throughput, peak RSS).

use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbt::GbtModel;
use crate::netmatrix::LabeledExample;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("label {0:?} is not in the model's label map")]
    UnknownLabel(String),
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("class {label:?} has {count} example(s); stratified splitting needs at least 2")]
    ClassTooSmall { label: String, count: usize },
    #[error("train fraction {0} is not in (0, 1)")]
    BadFraction(f64),
}

/// Rows are true classes, columns predicted classes, both in label-map order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(labels: Vec<String>) -> Self {
        let k = labels.len();
        ConfusionMatrix { labels, counts: vec![vec![0; k]; k] }
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

impl EvalReport {
    /// Macro averages run over every class in the label map, including
    /// classes absent from the test set.
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self, MetricsError> {
        let total = confusion.total();
        if total == 0 {
            return Err(MetricsError::EmptyTestSet);
        }
        let k = confusion.labels.len();
        let per_class: Vec<ClassMetrics> = (0..k)
            .map(|c| {
                let tp = confusion.counts[c][c];
                let support: u64 = confusion.counts[c].iter().sum();
                let predicted: u64 = confusion.counts.iter().map(|row| row[c]).sum();
                let precision = ratio(tp, predicted);
                let recall = ratio(tp, support);
                ClassMetrics { label: confusion.labels[c].clone(), precision, recall, f1: f1_score(precision, recall), support }
            })
            .collect();
        let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k as f64;
        Ok(EvalReport {
            accuracy: ratio(confusion.trace(), total),
            macro_precision: mean(|c| c.precision),
            macro_recall: mean(|c| c.recall),
            macro_f1: mean(|c| c.f1),
            per_class,
            confusion,
        })
    }

    pub fn render_table(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "accuracy {:.4}  precision {:.4}  recall {:.4}  f1 {:.4}\n",
            self.accuracy, self.macro_precision, self.macro_recall, self.macro_f1
        ));
        let w = self.per_class.iter().map(|c| c.label.len()).max().unwrap_or(5).max(5);
        s.push_str(&format!("{:<w$}  {:>9}  {:>9}  {:>9}  {:>7}\n", "class", "precision", "recall", "f1", "support"));
        for c in &self.per_class {
            s.push_str(&format!(
                "{:<w$}  {:>9.4}  {:>9.4}  {:>9.4}  {:>7}\n",
                c.label, c.precision, c.recall, c.f1, c.support
            ));
        }
        s
    }
}

pub fn evaluate(model: &GbtModel, test: &[LabeledExample]) -> Result<EvalReport, MetricsError> {
    if test.is_empty() {
        return Err(MetricsError::EmptyTestSet);
    }
    let truth = test
        .iter()
        .map(|e| model.class_index(&e.label).ok_or_else(|| MetricsError::UnknownLabel(e.label.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<&[f64]> = test.iter().map(|e| &e.features[..]).collect();
    let predicted = model.predict_batch(&rows);
    let mut cm = ConfusionMatrix::new(model.label_map.clone());
    for (t, p) in truth.into_iter().zip(predicted) {
        cm.add(t, p);
    }
    EvalReport::from_confusion(cm)
}

/// Per class (in sorted label order): seeded shuffle, then the first
/// `floor(fraction * n)` examples go to train and the rest to test.
pub fn stratified_split(
    examples: &[LabeledExample],
    train_fraction: f64,
    seed: u64,
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>), MetricsError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(MetricsError::BadFraction(train_fraction));
    }
    let mut by_class: BTreeMap<&str, Vec<&LabeledExample>> = BTreeMap::new();
    for e in examples {
        by_class.entry(e.label.as_str()).or_default().push(e);
    }
    if let Some((label, group)) = by_class.iter().find(|(_, g)| g.len() < 2) {
        return Err(MetricsError::ClassTooSmall { label: label.to_string(), count: group.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for group in by_class.values_mut() {
        group.shuffle(&mut rng);
        let cut = (train_fraction * group.len() as f64).floor() as usize;
        train.extend(group[..cut].iter().map(|e| (*e).clone()));
        test.extend(group[cut..].iter().map(|e| (*e).clone()));
    }
    Ok((train, test))
}

/// Always serialized as the string `"not_applicable"`: inference runs on
/// the CPU only, so there is no accelerator power draw to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Energy {
    #[default]
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceReport {
    pub train_latency_s_per_sample: Option<f64>,
    pub inference_throughput_samples_per_s: Option<f64>,
    /// `None` when the platform offers no way to read peak RSS.
    pub peak_memory_mib: Option<f64>,
    pub energy_watts: Energy,
    pub train_seconds: Option<f64>,
    pub train_samples: Option<u64>,
    pub inference_seconds: Option<f64>,
    pub inference_samples: Option<u64>,
}

impl ResourceReport {
    pub fn render_table(&self) -> String {
        let opt = |v: Option<f64>, prec: usize| v.map_or("unavailable".to_string(), |x| format!("{x:.prec$}"));
        format!(
            "latency (s/sample)        {}\nthroughput (samples/s)    {}\npeak memory (MiB)         {}\nenergy (W)                n/a\n",
            opt(self.train_latency_s_per_sample, 7),
            opt(self.inference_throughput_samples_per_s, 2),
            opt(self.peak_memory_mib, 2),
        )
    }
}

/// Peak resident set size of this process in MiB (Linux `VmHWM`).
pub fn peak_rss_mib() -> Option<f64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kib: f64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib / 1024.0)
}

/// Resets the kernel's peak-RSS watermark to the current RSS so a following
/// [`peak_rss_mib`] reflects only the region after this call. Returns false
/// where unsupported; the peak then covers the whole process lifetime.
pub fn reset_peak_rss() -> bool {
    std::fs::write("/proc/self/clear_refs", "5").is_ok()
}

/// Times `train_fn` and `infer_fn` with a monotonic clock. Latency is total
/// training time over `train_count`; throughput is `infer_count` over total
/// inference time.
pub fn measure_resources<T, I>(train_fn: T, infer_fn: I, train_count: u64, infer_count: u64) -> ResourceReport
where
    T: FnOnce(),
    I: FnOnce(),
{
    assert!(train_count > 0 && infer_count > 0, "counts must be positive");
    reset_peak_rss();
    let t0 = Instant::now();
    train_fn();
    let train_s = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    infer_fn();
    let infer_s = t1.elapsed().as_secs_f64();
    ResourceReport {
        train_latency_s_per_sample: Some(train_s / train_count as f64),
        inference_throughput_samples_per_s: Some(infer_count as f64 / infer_s.max(1e-9)),
        peak_memory_mib: peak_rss_mib(),
        energy_watts: Energy::NotApplicable,
        train_seconds: Some(train_s),
        train_samples: Some(train_count),
        inference_seconds: Some(infer_s),
        inference_samples: Some(infer_count),
    }
}

/// Batched single-threaded inference throughput, samples per second.
pub fn measure_throughput(model: &GbtModel, rows: &[&[f64]]) -> (f64, f64) {
    let t = Instant::now();
    let out = model.predict_batch(rows);
    let secs = t.elapsed().as_secs_f64().max(1e-9);
    std::hint::black_box(out);
    (rows.len() as f64 / secs, secs)
}
