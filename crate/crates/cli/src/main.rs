use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nfer_core::data::{write_image_dir, Dataset, Generator, GeneratorConfig, Modality};
use nfer_core::harness::config::{parse_value, parse_with_overrides};
use nfer_core::harness::train::{export_features, lambda_sweep, sweep_csv};
use nfer_core::harness::verify::check_invariants;
use nfer_core::harness::{evaluate, run_cv, train_and_evaluate, Checkpoint, FeatureKind, TrainConfig};

/// Log verbosity is read from this variable (`error` … `trace`).
const LOG_ENV: &str = "NFER_LOG";

#[derive(Parser)]
#[command(name = "nfer", version, about = "Train, evaluate and check the NFER-Former model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train on the configured split and evaluate the NIR test part.
    Train(TrainCmd),
    /// Evaluate a checkpoint.
    Eval(EvalCmd),
    /// Subject-independent k-fold cross-validation.
    Cv(CvCmd),
    /// Generate a synthetic dataset as an image directory.
    GenData(GenDataCmd),
    /// Write per-sample embeddings as CSV.
    ExportFeatures(ExportCmd),
    /// Re-run the orthogonality, Householder, hypergraph and gradient checks.
    CheckInvariants(CheckCmd),
    /// Print the configuration, hypergraph and parameter shapes.
    Inspect(InspectCmd),
    /// Train once per λ and write accuracy against λ as CSV.
    SweepLambda(SweepCmd),
}

/// Configuration file plus flag overrides. Every flag maps onto the config
/// key shown in its help text.
#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// TOML configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `lambda`
    #[arg(long)]
    lambda: Option<f64>,
    /// `epochs`
    #[arg(long)]
    epochs: Option<usize>,
    /// `batch_size`
    #[arg(long)]
    batch_size: Option<usize>,
    /// `learning_rate`
    #[arg(long)]
    learning_rate: Option<f64>,
    /// `optimizer.weight_decay`
    #[arg(long)]
    weight_decay: Option<f64>,
    /// `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// `folds`
    #[arg(long)]
    folds: Option<usize>,
    /// `test_fold`
    #[arg(long)]
    test_fold: Option<usize>,
    /// `margin`
    #[arg(long)]
    margin: Option<usize>,
    /// `model.dim`
    #[arg(long)]
    dim: Option<usize>,
    /// `model.depth`
    #[arg(long)]
    depth: Option<usize>,
    /// Replaces the data source with `data.directory.path`.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Any other key, e.g. `--set data.synthetic.confound=0.8`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn overrides(&self) -> Result<Vec<(String, toml::Value)>> {
        let mut out: Vec<(String, toml::Value)> = Vec::new();
        let mut push = |key: &str, value: Option<String>| {
            if let Some(v) = value {
                out.push((key.to_string(), parse_value(&v)));
            }
        };
        push("lambda", self.lambda.map(|v| format!("{v:?}")));
        push("epochs", self.epochs.map(|v| v.to_string()));
        push("batch_size", self.batch_size.map(|v| v.to_string()));
        push("learning_rate", self.learning_rate.map(|v| format!("{v:?}")));
        push("optimizer.weight_decay", self.weight_decay.map(|v| format!("{v:?}")));
        push("seed", self.seed.map(|v| v.to_string()));
        push("folds", self.folds.map(|v| v.to_string()));
        push("test_fold", self.test_fold.map(|v| v.to_string()));
        push("margin", self.margin.map(|v| v.to_string()));
        push("model.dim", self.dim.map(|v| v.to_string()));
        push("model.depth", self.depth.map(|v| v.to_string()));
        if let Some(dir) = &self.data_dir {
            let mut source = toml::Table::new();
            source.insert("path".into(), toml::Value::String(dir.display().to_string()));
            let mut data = toml::Table::new();
            data.insert("directory".into(), toml::Value::Table(source));
            out.push(("data".into(), toml::Value::Table(data)));
        }
        out.extend(parse_sets(&self.set)?);
        Ok(out)
    }

    fn load(&self) -> Result<TrainConfig> {
        let text = read_optional(self.config.as_deref())?;
        Ok(TrainConfig::with_overrides(&text, &self.overrides()?)?)
    }
}

fn parse_sets(sets: &[String]) -> Result<Vec<(String, toml::Value)>> {
    sets.iter()
        .map(|s| {
            let (k, v) = s.split_once('=').with_context(|| format!("--set expects KEY=VALUE, got {s:?}"))?;
            Ok((k.trim().to_string(), parse_value(v.trim())))
        })
        .collect()
}

fn read_optional(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(String::new()),
    }
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint output path.
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    /// Per-epoch log, one JSON record per line.
    #[arg(long, default_value = "train_log.jsonl")]
    log: PathBuf,
    /// Also write the test metrics as CSV.
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    /// Held-out fold of the configured split.
    Test,
    /// Every sample.
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModalityFilter {
    Nir,
    Vis,
    All,
}

impl ModalityFilter {
    fn to_filter(self) -> Option<Modality> {
        match self {
            ModalityFilter::Nir => Some(Modality::Nir),
            ModalityFilter::Vis => Some(Modality::Vis),
            ModalityFilter::All => None,
        }
    }
}

#[derive(Args)]
struct EvalCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate images from this directory instead of the stored source.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: Split,
    #[arg(long, value_enum, default_value = "nir")]
    modality: ModalityFilter,
    #[arg(long)]
    metrics_csv: Option<PathBuf>,
}

#[derive(Args)]
struct CvCmd {
    #[command(flatten)]
    config: ConfigArgs,
    /// Per-fold table as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataCmd {
    /// Generator TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `seed`
    #[arg(long)]
    seed: Option<u64>,
    /// `subjects`
    #[arg(long)]
    subjects: Option<usize>,
    /// `confound`
    #[arg(long)]
    confound: Option<f64>,
    /// Any other generator key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Manifest CSV path (defaults to `<out>/manifest.csv`).
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct ExportCmd {
    #[arg(long)]
    checkpoint: PathBuf,
    /// `e_cls` (width d) or `e_agg` (width d⁽⁰⁾).
    #[arg(long, default_value = "e_cls")]
    which: String,
    #[arg(long, value_enum, default_value = "all")]
    split: Split,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CheckCmd {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random draws per (width, length) pair; 9 pairs in total.
    #[arg(long, default_value_t = 112)]
    draws: usize,
}

#[derive(Args)]
struct InspectCmd {
    #[command(flatten)]
    config: ConfigArgs,
    /// Inspect a checkpoint instead of a configuration.
    #[arg(long, conflicts_with = "config")]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SweepCmd {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1,5,10")]
    lambdas: Vec<f64>,
    /// CSV output path; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn stored_dataset(checkpoint: &Checkpoint, data_dir: Option<&Path>) -> Result<(TrainConfig, Dataset)> {
    let mut cfg = checkpoint.config.clone();
    if let Some(dir) = data_dir {
        let classes = checkpoint.model.hypergraph.edge_names().to_vec();
        cfg.data = nfer_core::harness::DataSource::Directory(nfer_core::harness::DirectorySource {
            path: dir.to_path_buf(),
            channels: cfg.model.channels,
            classes,
            num_vertices: checkpoint.model.hypergraph.num_vertices(),
            hypergraph: None,
        });
    }
    let dataset = cfg.data.load()?;
    Ok((cfg, dataset))
}

fn select(cfg: &TrainConfig, dataset: &Dataset, split: Split) -> Result<Vec<usize>> {
    Ok(match split {
        Split::All => (0..dataset.len()).collect(),
        Split::Test => {
            let (folds, fold) = cfg.holdout(dataset)?;
            dataset.fold_indices(&folds, fold).1
        }
    })
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(cmd) => {
            let cfg = cmd.config.load()?;
            let dataset = cfg.data.load()?;
            let mut log = fs::File::create(&cmd.log).with_context(|| format!("creating {}", cmd.log.display()))?;
            let mut write_err = None;
            let run = train_and_evaluate(&cfg, &dataset, |record| {
                let line = serde_json::to_string(record).expect("record serializes");
                if let Err(e) = writeln!(log, "{line}") {
                    write_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = write_err {
                return Err(e).context("writing the epoch log");
            }
            let digest = run.outcome.checkpoint.save(&cmd.out)?;
            println!("checkpoint {} sha256 {digest}", cmd.out.display());
            println!("NIR test metrics ({} samples)", run.metrics.count);
            print!("{}", run.metrics.to_table(&dataset.class_names));
            if let Some(p) = &cmd.metrics_csv {
                fs::write(p, run.metrics.to_csv(&dataset.class_names))?;
            }
        }
        Command::Eval(cmd) => {
            let checkpoint = Checkpoint::load(&cmd.checkpoint)?;
            let (cfg, dataset) = stored_dataset(&checkpoint, cmd.data_dir.as_deref())?;
            let indices = select(&cfg, &dataset, if cmd.data_dir.is_some() { Split::All } else { cmd.split })?;
            let metrics = evaluate(&checkpoint.model, &dataset, &indices, cmd.modality.to_filter(), cfg.margin)?;
            print!("{}", metrics.to_table(&dataset.class_names));
            if let Some(p) = &cmd.metrics_csv {
                fs::write(p, metrics.to_csv(&dataset.class_names))?;
            }
        }
        Command::Cv(cmd) => {
            let cfg = cmd.config.load()?;
            let dataset = cfg.data.load()?;
            let report = run_cv(&cfg, &dataset)?;
            print!("{}", report.to_table());
            if let Some(p) = &cmd.csv {
                fs::write(p, report.to_csv())?;
            }
        }
        Command::GenData(cmd) => {
            let mut overrides = Vec::new();
            if let Some(s) = cmd.seed {
                overrides.push(("seed".to_string(), toml::Value::Integer(s as i64)));
            }
            if let Some(s) = cmd.subjects {
                overrides.push(("subjects".to_string(), toml::Value::Integer(s as i64)));
            }
            if let Some(c) = cmd.confound {
                overrides.push(("confound".to_string(), toml::Value::Float(c)));
            }
            overrides.extend(parse_sets(&cmd.set)?);
            let gen_cfg: GeneratorConfig = parse_with_overrides(&read_optional(cmd.config.as_deref())?, &overrides)?;
            let mut dataset = Generator::new(gen_cfg)?.generate();
            write_image_dir(&mut dataset, &cmd.out)?;
            let manifest = cmd.manifest.unwrap_or_else(|| cmd.out.join("manifest.csv"));
            let mut file = fs::File::create(&manifest)?;
            dataset.write_manifest(&mut file, dataset.holdout.as_ref())?;
            println!("wrote {} samples to {} (manifest {})", dataset.len(), cmd.out.display(), manifest.display());
        }
        Command::ExportFeatures(cmd) => {
            let which: FeatureKind = cmd.which.parse()?;
            let checkpoint = Checkpoint::load(&cmd.checkpoint)?;
            let (cfg, dataset) = stored_dataset(&checkpoint, cmd.data_dir.as_deref())?;
            let indices = select(&cfg, &dataset, cmd.split)?;
            let csv = export_features(&checkpoint.model, &dataset, &indices, which, cfg.margin)?;
            fs::write(&cmd.out, csv)?;
            println!("wrote {} rows to {}", indices.len(), cmd.out.display());
        }
        Command::CheckInvariants(cmd) => {
            let report = check_invariants(cmd.seed, cmd.draws)?;
            print!("{report}");
            let passed = report.passed();
            println!("{}", if passed { "all invariants hold" } else { "INVARIANT VIOLATION" });
            return Ok(passed);
        }
        Command::Inspect(cmd) => {
            let (cfg, model) = match &cmd.checkpoint {
                Some(path) => {
                    let c = Checkpoint::load(path)?;
                    println!("# checkpoint {} sha256 {}", path.display(), c.digest());
                    println!("# optimizer step {}, epochs completed {}", c.optimizer.step, c.rng.epochs_completed);
                    (c.config, c.model)
                }
                None => {
                    let cfg = cmd.config.load()?;
                    let model = nfer_core::model::NferFormer::init(cfg.model.clone(), cfg.data.hypergraph()?, cfg.seed)?;
                    (cfg, model)
                }
            };
            println!("# configuration\n{}", cfg.to_toml());
            println!("# hypergraph\n{}", model.hypergraph.to_document());
            println!("# parameters");
            for t in model.params.tensors() {
                println!("{:<40} {:>4} x {:<4} {:?}", t.name, t.value.rows(), t.value.cols(), t.kind);
            }
            println!("total scalars {}", model.params.num_scalars());
        }
        Command::SweepLambda(cmd) => {
            if cmd.lambdas.is_empty() {
                bail!("no λ values given");
            }
            let cfg = cmd.config.load()?;
            let dataset = cfg.data.load()?;
            let points = lambda_sweep(&cfg, &dataset, &cmd.lambdas)?;
            write_or_print(cmd.out.as_deref(), &sweep_csv(&points))?;
            if cmd.out.is_some() {
                for p in &points {
                    println!("λ = {:<6} NIR accuracy {:.4} macro-F1 {:.4}", p.lambda, p.metrics.accuracy, p.metrics.macro_f1);
                }
            }
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "info")).format_timestamp(None).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
