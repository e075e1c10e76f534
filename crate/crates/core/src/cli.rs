//! `npl` command-line front end.
//!
//! Every command that produces artifacts also writes `manifest.json`, which
//! records the resolved configuration, seed and dataset hash; `npl rerun`
//! replays a manifest into a fresh directory with byte-identical results.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate_synthetic, load_dataset, save_dataset, SyntheticSpec};
use crate::domain::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::experiment::{evaluate, run_ablation, run_single, AblationResult, AblationSettings, RunConfig};
use crate::metrics::Scores;
use crate::model::Checkpoint;
use crate::pipeline::IterationReport;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.npd";
pub const CHECKPOINT_FILE: &str = "model.json";
pub const ITERATION_LOG: &str = "iterations.jsonl";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const ABLATION_FOLDS_FILE: &str = "ablation_folds.csv";
pub const ABLATION_SUMMARY_FILE: &str = "ablation_summary.json";
pub const SAE_PLOT_FILE: &str = "median_sae.svg";

#[derive(Debug, Parser)]
#[command(name = "npl", version, about = "Pseudo labeling from class-proportion bags")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a TOML specification.
    Generate(GenerateArgs),
    /// Train one pipeline configuration on a dataset.
    Train(TrainArgs),
    /// Score a saved checkpoint on a dataset's evaluation instances.
    Evaluate(EvaluateArgs),
    /// Run the six-configuration ablation grid over source-grouped folds.
    Ablation(AblationArgs),
    /// Replay a manifest written by another command.
    Rerun(RerunArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Dataset specification (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the specification's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Print the default specification and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, required_unless_present = "print_config")]
    pub data: Option<PathBuf>,
    /// Run configuration (TOML); defaults apply to omitted keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the training and initialization seeds.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for a metrics CSV; printed only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblationArgs {
    #[arg(long, required_unless_present = "print_config")]
    pub data: Option<PathBuf>,
    /// Base run configuration; the grid overrides the two label modes.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[arg(long, required_unless_present = "print_config")]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Skip the SVG plot of median SAE per iteration.
    #[arg(long)]
    pub no_plot: bool,
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub dataset: Option<DatasetRef>,
    pub folds: Option<usize>,
    pub config: serde_json::Value,
    pub artifacts: Vec<String>,
}

impl Manifest {
    fn new(command: &str, seed: u64, config: &impl Serialize) -> Self {
        Self {
            tool: "npl".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            dataset: None,
            folds: None,
            config: serde_json::to_value(config).expect("config serializes"),
            artifacts: Vec::new(),
        }
    }

    fn config<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::Config(format!("manifest config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Reads a TOML config; a missing file is a configuration error that names
/// the path.
pub fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn print_default<T: Serialize + Default>(out: &mut dyn Write) -> Result<()> {
    let text = toml::to_string_pretty(&T::default()).expect("default config serializes");
    write_out(out, &text)
}

fn write_out(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<stdout>", e))
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(manifest).expect("manifest serializes") + "\n";
    write_file(dir, MANIFEST_FILE, &text)
}

fn load_and_hash(path: &Path) -> Result<(Dataset, DatasetRef)> {
    let dataset = load_dataset(path)?;
    let sha256 = sha256_file(path)?;
    Ok((
        dataset,
        DatasetRef {
            path: path.to_path_buf(),
            sha256,
        },
    ))
}

fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn scores_row(label: &str, s: &Scores) -> String {
    format!("{label},{:.6},{:.6},{:.6}\n", s.op, s.pc, s.miou)
}

const METRICS_HEADER: &str = "config,OP,PC,mIoU\n";

#[derive(Serialize)]
struct LogLine<'a> {
    config: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    fold: Option<usize>,
    #[serde(flatten)]
    report: &'a IterationReport,
}

fn log_lines(config: &str, fold: Option<usize>, reports: &[IterationReport]) -> String {
    reports
        .iter()
        .map(|report| {
            serde_json::to_string(&LogLine {
                config,
                fold,
                report,
            })
            .expect("report serializes")
                + "\n"
        })
        .collect()
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::Generate(a) => {
            if a.print_config {
                return print_default::<SyntheticSpec>(out);
            }
            let path = a
                .config
                .ok_or_else(|| Error::Config("generate needs --config <spec.toml>".into()))?;
            let mut spec: SyntheticSpec = read_config(&path)?;
            if let Some(seed) = a.seed {
                spec.seed = seed;
            }
            cmd_generate(&spec, &a.out.expect("required by clap"), out)
        }
        Command::Train(a) => {
            if a.print_config {
                return print_default::<RunConfig>(out);
            }
            let config = load_run_config(a.config.as_deref(), a.seed)?;
            cmd_train(
                &a.data.expect("required by clap"),
                &config,
                &a.out.expect("required by clap"),
                out,
            )
        }
        Command::Evaluate(a) => cmd_evaluate(&a.checkpoint, &a.data, a.out.as_deref(), out),
        Command::Ablation(a) => {
            if a.print_config {
                return print_default::<RunConfig>(out);
            }
            let config = load_run_config(a.config.as_deref(), a.seed)?;
            let data = a.data.expect("required by clap");
            let dir = a.out.expect("required by clap");
            cmd_ablation(&data, &config, a.folds, &dir, !a.no_plot, a.threads, out)
        }
        Command::Rerun(a) => cmd_rerun(&a.manifest, &a.out, a.threads, out),
    }
}

fn load_run_config(path: Option<&Path>, seed: Option<u64>) -> Result<RunConfig> {
    let config = match path {
        Some(p) => read_config::<RunConfig>(p)?,
        None => RunConfig::default(),
    };
    let config = match seed {
        Some(s) => config.with_seed(s),
        None => config,
    };
    config.validate()?;
    Ok(config)
}

pub fn cmd_generate(spec: &SyntheticSpec, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let dataset = generate_synthetic(spec)?;
    create_dir(dir)?;
    save_dataset(&dataset, &dir.join(DATASET_FILE))?;
    let mut manifest = Manifest::new("generate", spec.seed, spec);
    manifest.artifacts = vec![DATASET_FILE.into()];
    write_manifest(dir, &manifest)?;

    let mut histogram = vec![0usize; dataset.classes()];
    for class in dataset.instances().iter().filter_map(|i| i.true_class) {
        histogram[class] += 1;
    }
    let mut text = String::new();
    writeln!(
        text,
        "wrote {} instances in {} bags ({} supervised, {} eval) to {}",
        dataset.instances().len(),
        dataset.bags().len(),
        dataset.supervised().count(),
        dataset.eval().count(),
        dir.join(DATASET_FILE).display()
    )
    .unwrap();
    writeln!(text, "class histogram: {histogram:?}").unwrap();
    write_out(out, &text)
}

pub fn cmd_train(data: &Path, config: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<()> {
    let (dataset, dataset_ref) = load_and_hash(data)?;
    train_with(&dataset, dataset_ref, config, dir, out)
}

fn train_with(
    dataset: &Dataset,
    dataset_ref: DatasetRef,
    config: &RunConfig,
    dir: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let outcome = run_single(dataset, config)?;
    let label = config.pipeline.label();
    create_dir(dir)?;

    Checkpoint::new(&outcome.model, config.model.init_seed).save(&dir.join(CHECKPOINT_FILE))?;
    write_file(dir, ITERATION_LOG, &log_lines(&label, None, &outcome.reports))?;

    let eval: Vec<&Instance> = dataset.eval().collect();
    let mut csv = METRICS_HEADER.to_string();
    let mut text = format!(
        "{label}: {} iterations, best model from iteration {}\n",
        outcome.reports.len(),
        outcome.best_iteration
    );
    if eval.iter().any(|i| i.true_class.is_some()) {
        let (_, scores) = evaluate(&outcome.model, &eval)?;
        csv += &scores_row(&label, &scores);
        writeln!(
            text,
            "OP {:.4}  PC {:.4}  mIoU {:.4}",
            scores.op, scores.pc, scores.miou
        )
        .unwrap();
    } else {
        text += "no labeled evaluation instances; metrics skipped\n";
    }
    write_file(dir, METRICS_FILE, &csv)?;

    let mut manifest = Manifest::new("train", config.train.seed, config);
    manifest.dataset = Some(dataset_ref);
    manifest.artifacts = vec![CHECKPOINT_FILE.into(), ITERATION_LOG.into(), METRICS_FILE.into()];
    write_manifest(dir, &manifest)?;
    write_out(out, &text)
}

pub fn cmd_evaluate(
    checkpoint: &Path,
    data: &Path,
    dir: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let model = Checkpoint::load(checkpoint)?.into_network()?;
    let dataset = load_dataset(data)?;
    if model.architecture().input_dim != dataset.dim()
        || model.architecture().classes != dataset.classes()
    {
        return Err(Error::Validation(format!(
            "checkpoint expects {} features and {} classes; dataset has {} and {}",
            model.architecture().input_dim,
            model.architecture().classes,
            dataset.dim(),
            dataset.classes()
        )));
    }
    let mut eval: Vec<&Instance> = dataset.eval().collect();
    if eval.is_empty() {
        eval = dataset.supervised().collect();
    }
    let (_, scores) = evaluate(&model, &eval)?;
    if let Some(dir) = dir {
        create_dir(dir)?;
        write_file(dir, METRICS_FILE, &(METRICS_HEADER.to_string() + &scores_row("checkpoint", &scores)))?;
    }
    write_out(
        out,
        &format!(
            "OP {:.4}  PC {:.4}  mIoU {:.4}\n",
            scores.op, scores.pc, scores.miou
        ),
    )
}

pub fn cmd_ablation(
    data: &Path,
    config: &RunConfig,
    folds: usize,
    dir: &Path,
    plot: bool,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> Result<()> {
    let (dataset, dataset_ref) = load_and_hash(data)?;
    let settings = AblationSettings::new(config.clone(), folds);
    let result = with_threads(threads, || run_ablation(&dataset, &settings))??;
    create_dir(dir)?;

    let mut table = METRICS_HEADER.to_string();
    for s in &result.summaries {
        table += &scores_row(&s.config, &s.scores);
    }
    write_file(dir, ABLATION_FILE, &table)?;

    let mut per_fold = "config,fold,OP,PC,mIoU,best_iteration,iterations\n".to_string();
    for (f, s) in result.supervised_folds.iter().enumerate() {
        writeln!(per_fold, "supervised,{f},{:.6},{:.6},{:.6},0,1", s.op, s.pc, s.miou).unwrap();
    }
    for r in &result.folds {
        writeln!(
            per_fold,
            "{},{},{:.6},{:.6},{:.6},{},{}",
            r.config,
            r.fold,
            r.scores.op,
            r.scores.pc,
            r.scores.miou,
            r.best_iteration,
            r.reports.len()
        )
        .unwrap();
    }
    write_file(dir, ABLATION_FOLDS_FILE, &per_fold)?;

    let log: String = result
        .folds
        .iter()
        .map(|r| log_lines(&r.config, Some(r.fold), &r.reports))
        .collect();
    write_file(dir, ITERATION_LOG, &log)?;
    write_file(dir, ABLATION_SUMMARY_FILE, &(summary_json(&result) + "\n"))?;

    let mut artifacts = vec![
        ABLATION_FILE.to_string(),
        ABLATION_FOLDS_FILE.into(),
        ITERATION_LOG.into(),
        ABLATION_SUMMARY_FILE.into(),
    ];
    if plot {
        write_file(dir, SAE_PLOT_FILE, &sae_plot_svg(&result))?;
        artifacts.push(SAE_PLOT_FILE.into());
    }
    let mut manifest = Manifest::new("ablation", config.train.seed, config);
    manifest.dataset = Some(dataset_ref);
    manifest.folds = Some(folds);
    manifest.artifacts = artifacts;
    write_manifest(dir, &manifest)?;

    let mut text = table.clone();
    writeln!(
        text,
        "supervised only (iteration 0): OP {:.4}  PC {:.4}  mIoU {:.4}",
        result.supervised.op, result.supervised.pc, result.supervised.miou
    )
    .unwrap();
    write_out(out, &text)
}

fn summary_json(result: &AblationResult) -> String {
    #[derive(Serialize)]
    struct Summary<'a> {
        supervised: &'a Scores,
        configs: &'a [crate::experiment::ConfigSummary],
    }
    serde_json::to_string_pretty(&Summary {
        supervised: &result.supervised,
        configs: &result.summaries,
    })
    .expect("summary serializes")
}

const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Line plot of mean median-SAE per iteration, one polyline per configuration.
pub fn sae_plot_svg(result: &AblationResult) -> String {
    let (w, h, left, right, top, bottom) = (640.0, 400.0, 60.0, 190.0, 20.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let longest = result
        .summaries
        .iter()
        .map(|s| s.median_sae.len())
        .max()
        .unwrap_or(1)
        .max(2);
    let y_max = result
        .summaries
        .iter()
        .flat_map(|s| s.median_sae.iter().copied())
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(1e-3);
    let x = |i: usize| left + pw * i as f64 / (longest - 1) as f64;
    let y = |v: f64| top + ph * (1.0 - v / y_max);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    )
    .unwrap();
    for i in 0..longest {
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{i}</text>"#,
            x(i),
            top + ph + 15.0
        )
        .unwrap();
    }
    for k in 0..=4 {
        let v = y_max * k as f64 / 4.0;
        writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            left - 5.0,
            y(v) + 4.0
        )
        .unwrap();
    }
    writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">iteration</text>"#,
        left + pw / 2.0,
        h - 10.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">median SAE</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    )
    .unwrap();
    for (k, s) in result.summaries.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = s
            .median_sae
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(i, &v)| format!("{:.2},{:.2}", x(i), y(v)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
        let ly = top + 10.0 + 18.0 * k as f64;
        writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            w - right + 10.0,
            w - right + 30.0,
            w - right + 35.0,
            ly + 4.0,
            s.config
        )
        .unwrap();
    }
    svg += "</svg>\n";
    svg
}

pub fn cmd_rerun(
    manifest_path: &Path,
    dir: &Path,
    threads: Option<usize>,
    out: &mut dyn Write,
) -> Result<()> {
    let manifest = Manifest::load(manifest_path)?;
    let dataset = || -> Result<(Dataset, DatasetRef)> {
        let expected = manifest
            .dataset
            .as_ref()
            .ok_or_else(|| Error::Config("manifest has no dataset".into()))?;
        let (dataset, actual) = load_and_hash(&expected.path)?;
        if actual.sha256 != expected.sha256 {
            return Err(Error::Validation(format!(
                "{} has changed since the manifest was written (sha256 {} != {})",
                expected.path.display(),
                actual.sha256,
                expected.sha256
            )));
        }
        Ok((dataset, actual))
    };
    match manifest.command.as_str() {
        "generate" => cmd_generate(&manifest.config::<SyntheticSpec>()?, dir, out),
        "train" => {
            let config: RunConfig = manifest.config()?;
            config.validate()?;
            let (ds, r) = dataset()?;
            train_with(&ds, r, &config, dir, out)
        }
        "ablation" => {
            let config: RunConfig = manifest.config()?;
            config.validate()?;
            let folds = manifest
                .folds
                .ok_or_else(|| Error::Config("ablation manifest has no fold count".into()))?;
            let path = dataset()?.1.path;
            cmd_ablation(&path, &config, folds, dir, true, threads, out)
        }
        other => Err(Error::Config(format!("unknown manifest command {other:?}"))),
    }
}
