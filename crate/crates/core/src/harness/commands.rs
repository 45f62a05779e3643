use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::ExperimentConfig;
use super::io::{decode_split, encode_split, read_file, write_atomic, Checkpoint};
use super::pipeline::{
    evaluate, generate, train_baselines, train_experts, train_gate_stage, Method, MethodReport,
    ResultRow, TrainedModels,
};
use crate::error::{Error, Result};
use crate::expert::{ExpertModel, TrainReport};
use crate::metrics::ReliabilityBin;
use crate::simdata::{Dataset, Split};

/// File locations inside one run directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, split: Split) -> PathBuf {
        self.root.join("dataset").join(format!("{}.evds", split.as_str()))
    }

    pub fn expert(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("expert-{name}.ckpt"))
    }

    pub fn baseline(&self, name: &str) -> PathBuf {
        self.root.join("checkpoints").join(format!("baseline-{name}.ckpt"))
    }

    pub fn gate(&self) -> PathBuf {
        self.root.join("checkpoints").join("gate.ckpt")
    }

    pub fn expert_curves(&self) -> PathBuf {
        self.root.join("expert_loss_curves.csv")
    }

    pub fn gate_curve(&self) -> PathBuf {
        self.root.join("gate_loss_curve.csv")
    }

    pub fn results(&self) -> PathBuf {
        self.root.join("results.csv")
    }

    pub fn reliability(&self) -> PathBuf {
        self.root.join("reliability.json")
    }

    pub fn stratification(&self) -> PathBuf {
        self.root.join("stratification.csv")
    }

    pub fn benchmark_results(&self) -> PathBuf {
        self.root.join("benchmark_results.csv")
    }

    pub fn benchmark_summary(&self) -> PathBuf {
        self.root.join("benchmark_summary.csv")
    }
}

/// CSV with a leading `# config_hash=` comment line.
pub fn csv_bytes<T: Serialize>(config_hash: &str, rows: &[T]) -> Result<Vec<u8>> {
    let mut out = format!("# config_hash={config_hash}\n").into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Config(e.to_string()))?;
    }
    let body = w.into_inner().map_err(|e| Error::Config(e.to_string()))?;
    out.extend_from_slice(&body);
    Ok(out)
}

/// Parses a file written by [`csv_bytes`], returning the hash and rows.
pub fn parse_csv<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<(String, Vec<T>)> {
    let bytes = read_file(path)?;
    let fail = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::str::from_utf8(&bytes).map_err(|e| fail(e.to_string()))?;
    let (first, rest) = text.split_once('\n').ok_or_else(|| fail("empty file".into()))?;
    let hash = first
        .strip_prefix("# config_hash=")
        .ok_or_else(|| fail("missing config_hash comment".into()))?;
    let rows = csv::Reader::from_reader(rest.as_bytes())
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| fail(e.to_string()))?;
    Ok((hash.to_string(), rows))
}

fn require_hash(path: &Path, found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::ConfigHash {
            path: path.to_path_buf(),
            found: found.to_string(),
            expected: expected.to_string(),
        });
    }
    Ok(())
}

/// Options shared by every command.
#[derive(Debug, Clone)]
pub struct RunContext {
    pub config: ExperimentConfig,
    pub seed: u64,
    pub layout: RunLayout,
    /// Accept artifacts whose embedded config hash differs.
    pub allow_hash_mismatch: bool,
}

impl RunContext {
    pub fn new(config: ExperimentConfig, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        let seed = seed.unwrap_or(config.seed);
        let root = out.unwrap_or_else(|| config.output_dir.join(format!("seed-{seed}")));
        Self {
            config,
            seed,
            layout: RunLayout::new(root),
            allow_hash_mismatch: false,
        }
    }

    pub fn hash(&self) -> String {
        self.config.hash()
    }

    fn expected_hash(&self) -> Option<String> {
        (!self.allow_hash_mismatch).then(|| self.hash())
    }
}

pub fn save_dataset(ctx: &RunContext, ds: &Dataset) -> Result<Vec<PathBuf>> {
    let d = ds.feature_dim().unwrap_or(ctx.config.generator.feature_dim);
    let hash = ctx.hash();
    Split::ALL
        .iter()
        .map(|&s| {
            let path = ctx.layout.dataset(s);
            write_atomic(&path, &encode_split(s, ds.split(s), d, ctx.seed, &hash)?)?;
            Ok(path)
        })
        .collect()
}

pub fn load_dataset(ctx: &RunContext) -> Result<Dataset> {
    let expected = ctx.expected_hash();
    let mut ds = Dataset::default();
    for s in Split::ALL {
        let path = ctx.layout.dataset(s);
        let (header, bags) = decode_split(&path, &read_file(&path)?, expected.as_deref())?;
        if header.split != s {
            return Err(Error::Format {
                path,
                reason: format!("holds split {:?}", header.split),
            });
        }
        *ds.split_mut(s) = bags;
    }
    Ok(ds)
}

/// `generate`: simulates the dataset and writes one file per split.
pub fn cmd_generate(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let ds = generate(&ctx.config, ctx.seed)?;
    save_dataset(ctx, &ds)
}

#[derive(Debug, Serialize, serde::Deserialize)]
struct CurveRow {
    model: String,
    epoch: usize,
    loss: f64,
}

fn curve_rows(curves: &[(String, TrainReport)]) -> Vec<CurveRow> {
    curves
        .iter()
        .flat_map(|(name, r)| {
            r.epoch_losses.iter().enumerate().map(move |(e, &loss)| CurveRow {
                model: name.clone(),
                epoch: e + 1,
                loss,
            })
        })
        .collect()
}

/// `train-experts`: trains the evidential roster and, if any baseline method
/// is selected, the softmax members. Writes checkpoints and loss curves.
pub fn cmd_train_experts(ctx: &RunContext, methods: &[Method]) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(ctx)?;
    let hash = ctx.hash();
    let mut written = Vec::new();
    let mut curves = Vec::new();
    for (m, r) in train_experts(&ctx.config, &ds, ctx.seed)? {
        let path = ctx.layout.expert(&m.spec.name);
        Checkpoint::from_expert(&m, &hash).save(&path)?;
        written.push(path);
        curves.push((m.spec.name.clone(), r));
    }
    if methods.iter().any(|m| m.uses_baselines()) {
        for (m, r) in train_baselines(&ctx.config, &ds, ctx.seed)? {
            let path = ctx.layout.baseline(&m.spec.name);
            Checkpoint::from_expert(&m, &hash).save(&path)?;
            written.push(path);
            curves.push((m.spec.name.clone(), r));
        }
    }
    let path = ctx.layout.expert_curves();
    write_atomic(&path, &csv_bytes(&hash, &curve_rows(&curves))?)?;
    written.push(path);
    Ok(written)
}

fn load_models(paths: impl Iterator<Item = PathBuf>, expected: Option<&str>) -> Result<Vec<ExpertModel>> {
    paths
        .map(|p| Checkpoint::load(&p, expected)?.into_expert())
        .collect()
}

pub fn load_experts(ctx: &RunContext) -> Result<Vec<ExpertModel>> {
    let specs = ctx.config.expert_specs(ctx.seed);
    let expected = ctx.expected_hash();
    let models = load_models(
        specs.iter().map(|s| ctx.layout.expert(&s.name)),
        expected.as_deref(),
    )?;
    for (m, s) in models.iter().zip(&specs) {
        if m.spec != *s {
            return Err(Error::State(format!(
                "checkpoint for expert {} was trained with a different spec or seed",
                s.name
            )));
        }
    }
    Ok(models)
}

pub fn load_baselines(ctx: &RunContext) -> Result<Vec<ExpertModel>> {
    let expected = ctx.expected_hash();
    load_models(
        ctx.config
            .baseline_specs(ctx.seed)
            .iter()
            .map(|s| ctx.layout.baseline(&s.name)),
        expected.as_deref(),
    )
}

/// `train-gate`: trains the gating network over the saved experts.
pub fn cmd_train_gate(ctx: &RunContext) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(ctx)?;
    let experts = load_experts(ctx)?;
    let (gate, report) = train_gate_stage(&ctx.config, &ds, &experts, ctx.seed)?;
    let hash = ctx.hash();
    let path = ctx.layout.gate();
    Checkpoint::from_gate(&gate, &hash).save(&path)?;
    let curve = ctx.layout.gate_curve();
    write_atomic(&curve, &csv_bytes(&hash, &curve_rows(&[("gate".into(), report)]))?)?;
    Ok(vec![path, curve])
}

pub fn load_trained(ctx: &RunContext, methods: &[Method]) -> Result<TrainedModels> {
    let experts = load_experts(ctx)?;
    let baselines = if methods.iter().any(|m| m.uses_baselines()) {
        load_baselines(ctx)?
    } else {
        Vec::new()
    };
    let gate = if methods.contains(&Method::Gated) {
        let expected = ctx.expected_hash();
        Some(Checkpoint::load(&ctx.layout.gate(), expected.as_deref())?.into_gate()?)
    } else {
        None
    };
    Ok(TrainedModels {
        experts,
        baselines,
        gate,
    })
}

#[derive(Debug, Serialize)]
struct ReliabilityEntry<'a> {
    method: Method,
    split: Split,
    seed: u64,
    ece: f64,
    bins: &'a [ReliabilityBin],
}

#[derive(Debug, Serialize)]
struct ReliabilityFile<'a> {
    format_version: u32,
    config_hash: &'a str,
    entries: Vec<ReliabilityEntry<'a>>,
}

pub fn results_bytes(hash: &str, reports: &[MethodReport]) -> Result<Vec<u8>> {
    let rows: Vec<ResultRow> = reports.iter().map(MethodReport::row).collect();
    csv_bytes(hash, &rows)
}

fn reliability_bytes(hash: &str, reports: &[MethodReport]) -> Result<Vec<u8>> {
    let file = ReliabilityFile {
        format_version: super::io::FORMAT_VERSION,
        config_hash: hash,
        entries: reports
            .iter()
            .map(|r| ReliabilityEntry {
                method: r.method,
                split: r.split,
                seed: r.seed,
                ece: r.ece,
                bins: &r.reliability,
            })
            .collect(),
    };
    let mut out = serde_json::to_vec_pretty(&file).map_err(|e| Error::Config(e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// `evaluate`: scores the selected methods and writes the results CSV and
/// reliability bins.
pub fn cmd_evaluate(ctx: &RunContext, methods: &[Method]) -> Result<Vec<MethodReport>> {
    let ds = load_dataset(ctx)?;
    let models = load_trained(ctx, methods)?;
    let reports = evaluate(&ctx.config, &ds, &models, methods, ctx.seed)?;
    let hash = ctx.hash();
    write_atomic(&ctx.layout.results(), &results_bytes(&hash, &reports)?)?;
    write_atomic(&ctx.layout.reliability(), &reliability_bytes(&hash, &reports)?)?;
    Ok(reports)
}

/// One line of the stratification CSV.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct StratificationRow {
    pub method: Method,
    pub split: Split,
    pub seed: u64,
    pub t_0: f64,
    pub t_1: f64,
    pub t_2: f64,
    pub t_3: f64,
    pub total: usize,
    pub confident_count: usize,
    pub confident_f1: Option<f64>,
    pub uncertain_count: usize,
    pub uncertain_f1: Option<f64>,
    pub retention: f64,
    pub overall_f1: f64,
}

impl StratificationRow {
    pub fn from_report(r: &MethodReport) -> Self {
        let s = &r.stratification;
        let t = |c: usize| s.thresholds.get(c).copied().unwrap_or(f64::NAN);
        Self {
            method: r.method,
            split: r.split,
            seed: r.seed,
            t_0: t(0),
            t_1: t(1),
            t_2: t(2),
            t_3: t(3),
            total: s.total,
            confident_count: s.confident_count,
            confident_f1: s.confident_f1,
            uncertain_count: s.uncertain_count,
            uncertain_f1: s.uncertain_f1,
            retention: s.retention,
            overall_f1: s.overall_f1,
        }
    }
}

/// `stratify`: confident/uncertain split on test and unseen with
/// thresholds fit on validation.
pub fn cmd_stratify(ctx: &RunContext, methods: &[Method]) -> Result<Vec<StratificationRow>> {
    let ds = load_dataset(ctx)?;
    let models = load_trained(ctx, methods)?;
    let rows: Vec<StratificationRow> = evaluate(&ctx.config, &ds, &models, methods, ctx.seed)?
        .iter()
        .filter(|r| r.split != Split::Val)
        .map(StratificationRow::from_report)
        .collect();
    write_atomic(&ctx.layout.stratification(), &csv_bytes(&ctx.hash(), &rows)?)?;
    Ok(rows)
}

/// Mean and sample standard deviation of one metric across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub split: Split,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = if xs.len() > 1 {
        (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, Split)> = rows.iter().map(|r| (r.method, r.split)).collect();
    keys.sort();
    keys.dedup();
    let metrics: [(&str, fn(&ResultRow) -> Option<f64>); 5] = [
        ("weighted_f1", |r| Some(r.weighted_f1)),
        ("ece", |r| Some(r.ece)),
        ("retention", |r| Some(r.retention)),
        ("confident_f1", |r| r.confident_f1),
        ("uncertain_f1", |r| r.uncertain_f1),
    ];
    let mut out = Vec::new();
    for (method, split) in keys {
        let group: Vec<&ResultRow> = rows
            .iter()
            .filter(|r| r.method == method && r.split == split)
            .collect();
        for (name, get) in metrics {
            let xs: Vec<f64> = group.iter().filter_map(|r| get(r)).collect();
            if xs.is_empty() {
                continue;
            }
            let (mean, sd) = mean_sd(&xs);
            out.push(SummaryRow {
                method,
                split,
                metric: name.to_string(),
                n: xs.len(),
                mean,
                sd,
            });
        }
    }
    out
}

/// Results of a multi-seed benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkOutcome {
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
    pub reports: Vec<MethodReport>,
}

/// `benchmark`: the full pipeline for each seed in memory, then per-seed
/// rows and a mean ± sd summary.
pub fn cmd_benchmark(
    config: &ExperimentConfig,
    seeds: &[u64],
    methods: &[Method],
    out: &Path,
) -> Result<BenchmarkOutcome> {
    if seeds.is_empty() {
        return Err(Error::Config("benchmark needs at least one seed".into()));
    }
    let mut reports = Vec::new();
    for &seed in seeds {
        reports.extend(super::pipeline::run_seed(config, seed, methods)?);
    }
    let rows: Vec<ResultRow> = reports.iter().map(MethodReport::row).collect();
    let summary = summarize(&rows);
    let layout = RunLayout::new(out);
    let hash = config.hash();
    write_atomic(&layout.benchmark_results(), &csv_bytes(&hash, &rows)?)?;
    write_atomic(&layout.benchmark_summary(), &csv_bytes(&hash, &summary)?)?;
    Ok(BenchmarkOutcome {
        rows,
        summary,
        reports,
    })
}

/// Reads a results CSV, checking its config hash.
pub fn load_results(path: &Path, expected_hash: Option<&str>) -> Result<Vec<ResultRow>> {
    let (hash, rows) = parse_csv(path)?;
    if let Some(exp) = expected_hash {
        require_hash(path, &hash, exp)?;
    }
    Ok(rows)
}
