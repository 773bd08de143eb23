//! File-based workflows behind the `lim` binary.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use lim_core::capture::read_capture;
use lim_core::dataset::{read_feature_csv, read_manifest, write_binary_rows, write_feature_csv, write_manifest};
use lim_core::extract::{extract_rows, label_rows, ExtractionStats, LabelSource};
use lim_core::gbt::{fit, GbtHyperparams, GbtModel};
use lim_core::metrics::{
    evaluate, measure_throughput, peak_rss_mib, reset_peak_rss, stratified_split, Energy, EvalReport, ResourceReport,
};
use lim_core::netmatrix::{from_features, LabeledExample, NetMatrixRow};
use lim_core::synth::{generate_capture, ProfileSet};

#[derive(Debug, Parser)]
#[command(name = "lim", version, about = "NetMatrix extraction and boosted-tree traffic classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Turn pcap files into one NetMatrix row per session.
    Extract(ExtractArgs),
    /// Fit a classifier on a feature CSV.
    Train(TrainArgs),
    /// Score a model on a feature CSV.
    Eval(EvalArgs),
    /// Measure single-threaded inference throughput and peak memory.
    Bench(BenchArgs),
    /// Generate a synthetic capture and its label manifest.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("labels").required(true).args(["label_from_dirname", "manifest"]))]
pub struct ExtractArgs {
    /// pcap files, or directories searched recursively for *.pcap / *.cap
    #[arg(long, num_args = 1.., required = true)]
    pub input: Vec<PathBuf>,
    /// Label each file by its parent directory name.
    #[arg(long)]
    pub label_from_dirname: bool,
    /// CSV mapping src_ip,src_port,dst_ip,dst_port to a label.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Write packed 30-byte rows instead of CSV, plus `<out>.labels`.
    #[arg(long)]
    pub binary: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub model_out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub rounds: usize,
    #[arg(long, default_value_t = 6)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 0.3)]
    pub eta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 1.0)]
    pub min_child_weight: f64,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value = "report.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    #[arg(long, default_value = "bench.json")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub profiles: PathBuf,
    #[arg(long)]
    pub sessions_per_class: usize,
    #[arg(long)]
    pub out_pcap: PathBuf,
    #[arg(long)]
    pub out_manifest: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract(a) => cmd_extract(&a).map(|_| ()),
        Command::Train(a) => cmd_train(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Bench(a) => cmd_bench(&a).map(|_| ()),
        Command::Synth(a) => cmd_synth(&a),
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// `<path><suffix>`, e.g. `model.json` + `.test.csv`.
pub fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn is_capture_file(p: &Path) -> bool {
    matches!(p.extension().and_then(|e| e.to_str()), Some("pcap" | "cap"))
}

fn collect_dir(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_dir(&p, out)?;
        } else if is_capture_file(&p) {
            out.push(p);
        }
    }
    Ok(())
}

/// Files named directly are kept as given; directories are expanded.
/// The merged list is sorted by path.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            collect_dir(p, &mut files)?;
        } else {
            files.push(p.clone());
        }
    }
    files.sort();
    files.dedup();
    Ok(files)
}

fn dirname_label(path: &Path) -> Option<String> {
    let parent = path.parent()?;
    let name = if parent.as_os_str().is_empty() {
        std::env::current_dir().ok()?.file_name()?.to_owned()
    } else {
        parent.canonicalize().ok()?.file_name()?.to_owned()
    };
    Some(name.to_string_lossy().into_owned())
}

type FileRows = (Vec<(NetMatrixRow, String)>, ExtractionStats);

pub fn cmd_extract(args: &ExtractArgs) -> Result<ExtractionStats> {
    let files = expand_inputs(&args.input)?;
    if files.is_empty() {
        bail!("no capture files found under the given inputs");
    }
    let manifest = match &args.manifest {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening manifest {}", p.display()))?;
            Some(LabelSource::from_manifest(&read_manifest(BufReader::new(f))?))
        }
        None => None,
    };

    let per_file: Vec<Result<FileRows>> = files
        .par_iter()
        .map(|path| {
            let capture = read_capture(path).with_context(|| format!("{}", path.display()))?;
            let (rows, mut stats) = extract_rows(capture);
            let fixed;
            let labels = match &manifest {
                Some(m) => m,
                None => {
                    fixed = LabelSource::Fixed(
                        dirname_label(path).with_context(|| format!("{}: no parent directory to label by", path.display()))?,
                    );
                    &fixed
                }
            };
            let labeled = label_rows(rows, labels, &mut stats);
            Ok((labeled, stats))
        })
        .collect();

    let mut rows = Vec::new();
    let mut stats = ExtractionStats::default();
    for (path, result) in files.iter().zip(per_file) {
        match result {
            Ok((r, s)) => {
                rows.extend(r);
                stats.merge(&s);
            }
            Err(e) => {
                eprintln!("warning: skipping {}: {e:#}", path.display());
                stats.files_failed += 1;
            }
        }
    }
    if stats.files_read == 0 {
        bail!("all {} input file(s) failed to parse", files.len());
    }

    ensure_parent(&args.out)?;
    if args.binary {
        let only_rows: Vec<NetMatrixRow> = rows.iter().map(|(r, _)| *r).collect();
        write_binary_rows(BufWriter::new(File::create(&args.out)?), &only_rows)?;
        let mut labels: String = rows.iter().map(|(_, l)| l.as_str()).collect::<Vec<_>>().join("\n");
        if !labels.is_empty() {
            labels.push('\n');
        }
        fs::write(sibling(&args.out, ".labels"), labels)?;
    } else {
        write_feature_csv(BufWriter::new(File::create(&args.out)?), &rows)?;
    }
    write_json(&sibling(&args.out, ".stats.json"), &stats)?;
    println!(
        "files {} (failed {})  packets {} (skipped {})  sessions {}  dropped<5 {}  unlabeled {}  rows {}",
        stats.files_read,
        stats.files_failed,
        stats.packets_parsed,
        stats.packets_skipped,
        stats.sessions_formed,
        stats.sessions_dropped_insufficient,
        stats.sessions_unlabeled,
        stats.rows_emitted
    );
    Ok(stats)
}

fn load_features(path: &Path) -> Result<Vec<LabeledExample>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_feature_csv(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub num_classes: usize,
    pub train_rows: usize,
    pub heldout_rows: usize,
    pub resources: ResourceReport,
    pub heldout: Option<EvalReport>,
}

/// Splits, fits on the training part and writes the model. The held-out
/// rows go to `<model-out>.test.csv`, and a report with training latency
/// and held-out metrics to `<model-out>.train.json`.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainReport> {
    let params = GbtHyperparams {
        num_rounds: args.rounds,
        max_depth: args.max_depth,
        learning_rate: args.eta,
        l2_lambda: args.lambda,
        gamma: args.gamma,
        min_child_weight: args.min_child_weight,
        seed: args.seed,
    };
    params.validate()?;
    let data = load_features(&args.features)?;
    let (train, test) = stratified_split(&data, args.train_fraction, args.seed)?;

    let t = Instant::now();
    let model = fit(&train, &params)?;
    let train_s = t.elapsed().as_secs_f64();

    ensure_parent(&args.model_out)?;
    model.save(&args.model_out).with_context(|| format!("writing {}", args.model_out.display()))?;

    let heldout_rows: Vec<(NetMatrixRow, String)> =
        test.iter().map(|e| Ok((from_features(&e.features)?, e.label.clone()))).collect::<Result<_>>()?;
    write_feature_csv(BufWriter::new(File::create(sibling(&args.model_out, ".test.csv"))?), &heldout_rows)?;
    let heldout = if test.is_empty() { None } else { Some(evaluate(&model, &test)?) };

    let report = TrainReport {
        num_classes: model.num_classes(),
        train_rows: train.len(),
        heldout_rows: test.len(),
        resources: ResourceReport {
            train_latency_s_per_sample: Some(train_s / train.len() as f64),
            inference_throughput_samples_per_s: None,
            peak_memory_mib: peak_rss_mib(),
            energy_watts: Energy::NotApplicable,
            train_seconds: Some(train_s),
            train_samples: Some(train.len() as u64),
            inference_seconds: None,
            inference_samples: None,
        },
        heldout,
    };
    write_json(&sibling(&args.model_out, ".train.json"), &report)?;
    println!(
        "trained {} classes on {} rows in {:.3} s ({:.7} s/sample); model -> {}",
        report.num_classes,
        report.train_rows,
        train_s,
        train_s / train.len() as f64,
        args.model_out.display()
    );
    if let Some(h) = &report.heldout {
        print!("held-out ({} rows): {}", report.heldout_rows, h.render_table().lines().next().unwrap_or_default());
        println!();
    }
    Ok(report)
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalReport> {
    let model = GbtModel::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let data = load_features(&args.features)?;
    let report = evaluate(&model, &data)?;
    print!("{}", report.render_table());
    write_json(&args.out, &report)?;
    Ok(report)
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    #[serde(flatten)]
    pub resources: ResourceReport,
    pub repeats: usize,
    pub throughput_runs: Vec<f64>,
    pub num_trees: usize,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn cmd_bench(args: &BenchArgs) -> Result<BenchReport> {
    if args.repeat == 0 {
        bail!("--repeat must be at least 1");
    }
    let model = GbtModel::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let data = load_features(&args.features)?;
    if data.is_empty() {
        bail!("{} has no rows", args.features.display());
    }
    if let Some(e) = data.iter().find(|e| model.class_index(&e.label).is_none()) {
        bail!("label {:?} is not in the model's label map", e.label);
    }
    let rows: Vec<&[f64]> = data.iter().map(|e| &e.features[..]).collect();
    reset_peak_rss();
    let runs: Vec<(f64, f64)> = (0..args.repeat).map(|_| measure_throughput(&model, &rows)).collect();
    let throughputs: Vec<f64> = runs.iter().map(|r| r.0).collect();
    let secs: Vec<f64> = runs.iter().map(|r| r.1).collect();
    let report = BenchReport {
        resources: ResourceReport {
            train_latency_s_per_sample: None,
            inference_throughput_samples_per_s: Some(median(&throughputs)),
            peak_memory_mib: peak_rss_mib(),
            energy_watts: Energy::NotApplicable,
            train_seconds: None,
            train_samples: None,
            inference_seconds: Some(median(&secs)),
            inference_samples: Some(rows.len() as u64),
        },
        repeats: args.repeat,
        throughput_runs: throughputs,
        num_trees: model.trees.len(),
    };
    print!("{}", report.resources.render_table());
    write_json(&args.out, &report)?;
    Ok(report)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let text = fs::read_to_string(&args.profiles).with_context(|| format!("reading {}", args.profiles.display()))?;
    let set: ProfileSet = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.profiles.display()))?;
    let cap = generate_capture(&set.profiles, args.sessions_per_class, args.seed)?;
    ensure_parent(&args.out_pcap)?;
    fs::write(&args.out_pcap, &cap.pcap)?;
    ensure_parent(&args.out_manifest)?;
    write_manifest(BufWriter::new(File::create(&args.out_manifest)?), &cap.manifest)?;
    println!(
        "{} sessions, {} packets -> {}",
        cap.manifest.len(),
        cap.records.len(),
        args.out_pcap.display()
    );
    Ok(())
}
