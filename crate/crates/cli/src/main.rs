use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use styleaug::data::{export_image_folder, leave_one_out_split, TargetMode};
use styleaug::harness::{
    emit_results, read_results, run_experiment, sweep, target_averaged_runs, Augmentation, Classifier,
    ExperimentConfig, Method, ResultRow, StyleCache,
};

#[derive(Parser)]
#[command(name = "styleaug", version, about = "Style-transfer source augmentation for domain generalization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Experiment settings: a config file plus per-field overrides.
#[derive(Args, Clone, Default)]
struct Settings {
    /// TOML experiment config; unspecified fields take their defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Stylization strength in [0, 1]
    #[arg(long, global = true)]
    alpha: Option<f32>,
    /// Per-sample stylization probability in [0, 1]
    #[arg(long, global = true)]
    p: Option<f32>,
    /// baseline, rotation, mixup-pixel or mixup-feature
    #[arg(long, global = true)]
    method: Option<Method>,
    /// original or stylized
    #[arg(long, global = true)]
    augmentation: Option<Augmentation>,
    /// Base seed; run r uses seed + r
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Number of runs per target
    #[arg(long, global = true)]
    runs: Option<usize>,
    /// Classifier iterations
    #[arg(long, global = true)]
    iterations: Option<usize>,
    /// Rotation loss weight
    #[arg(long, global = true)]
    eta: Option<f32>,
    /// Mixup Beta parameter
    #[arg(long, global = true)]
    gamma: Option<f32>,
    /// Pre-trained style model checkpoint
    #[arg(long, global = true)]
    style_checkpoint: Option<PathBuf>,
}

impl Settings {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = self.p {
            cfg.p = v;
        }
        if let Some(v) = self.method {
            cfg.method = v;
        }
        if let Some(v) = self.augmentation {
            cfg.augmentation = v;
        }
        if let Some(v) = self.seed {
            cfg.base_seed = v;
        }
        if let Some(v) = self.runs {
            cfg.n_runs = v;
        }
        if let Some(v) = self.iterations {
            cfg.classifier.iterations = v;
        }
        if let Some(v) = self.eta {
            cfg.eta = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = &self.style_checkpoint {
            cfg.style_checkpoint = Some(v.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured dataset and write it as an image folder
    GenData {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the style model on the source domains of a target
    TrainStyle {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        target: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train and evaluate classifiers for one held-out target
    TrainCls {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        target: String,
        /// CSV for the result row; a .full.csv sidecar is written next to it
        #[arg(long)]
        results: Option<PathBuf>,
        /// Directory for the selected classifier of every run
        #[arg(long)]
        save_dir: Option<PathBuf>,
    },
    /// Evaluate a saved classifier on a domain of the configured dataset
    Eval {
        #[command(flatten)]
        settings: Settings,
        #[arg(long)]
        target: String,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Stylized runs over an alpha/p grid
    Sweep {
        #[command(flatten)]
        settings: Settings,
        /// Comma-separated targets; all domains when omitted
        #[arg(long, value_delimiter = ',')]
        targets: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1f32, 0.5, 1.0])]
        alphas: Vec<f32>,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.75f32])]
        ps: Vec<f32>,
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Print the resolved configuration as TOML
    Config {
        #[command(flatten)]
        settings: Settings,
    },
    /// Summarize result CSVs
    Report {
        #[arg(required = true)]
        results: Vec<PathBuf>,
    },
}

fn print_row(row: &ResultRow) {
    let accs: Vec<String> = row.accuracies.iter().map(|a| format!("{a:.2}")).collect();
    println!(
        "{:10} {:14} {:9} alpha {:<4} p {:<4} runs [{}] mean {:6.2} std {:5.2}",
        row.target,
        row.method.as_str(),
        row.augmentation.as_str(),
        row.alpha,
        row.p,
        accs.join(", "),
        row.mean,
        row.std
    );
}

fn gen_data(settings: &Settings, out: &Path) -> Result<()> {
    let cfg = settings.resolve()?;
    let ds = cfg.dataset.load()?;
    export_image_folder(&ds, out)?;
    print!("{}", ds.manifest());
    println!("wrote {} images to {}", ds.len(), out.display());
    Ok(())
}

fn train_style(settings: &Settings, target: &str, out: &Path) -> Result<()> {
    let mut cfg = settings.resolve()?;
    // always train here, even if the config names a checkpoint
    cfg.style_checkpoint = None;
    let ds = cfg.dataset.load()?;
    let loo = leave_one_out_split(&ds, target, cfg.target_mode)?;
    let mut cache = StyleCache::new();
    let model = cache.get_or_train(&ds, &loo, &cfg, None)?;
    if let Some(report) = cache.report(target) {
        if let Some(acc) = report.pretrain_accuracy {
            println!("encoder pretraining accuracy {acc:.3}");
        }
        for (i, e) in report.epochs.iter().enumerate() {
            println!("epoch {:3}: L_A {:.5} (content {:.5}, style {:.5})", i + 1, e.total, e.content, e.style);
        }
    }
    model.save(out)?;
    println!("style model saved to {}", out.display());
    Ok(())
}

fn train_cls(settings: &Settings, target: &str, results: Option<&Path>, save_dir: Option<&Path>) -> Result<()> {
    let cfg = settings.resolve()?;
    let ds = cfg.dataset.load()?;
    let (row, outcomes) = run_experiment(&cfg, &ds, target, &mut StyleCache::new())?;
    for o in &outcomes {
        println!(
            "run seed {}: target accuracy {:.2}%, selected iteration {}",
            o.seed,
            100.0 * o.target_accuracy,
            o.trained.val_iterations[o.trained.selected]
        );
        if let Some(stats) = o.augmentation_stats() {
            print!("{}", stats.to_structured_text());
        }
        if let Some(dir) = save_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("{target}-seed{}.ckpt", o.seed));
            o.trained.classifier.save(&path)?;
            println!("classifier saved to {}", path.display());
        }
    }
    print_row(&row);
    if let Some(path) = results {
        emit_results(std::slice::from_ref(&row), path)?;
    }
    Ok(())
}

fn eval(settings: &Settings, target: &str, checkpoint: &Path) -> Result<()> {
    let cfg = settings.resolve()?;
    let ds = cfg.dataset.load()?;
    let clf = Classifier::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    if clf.trunk.input_shape() != ds.image_shape() {
        bail!(
            "classifier expects {:?} images, dataset has {:?}",
            clf.trunk.input_shape(),
            ds.image_shape()
        );
    }
    let loo = leave_one_out_split(&ds, target, TargetMode::Whole)?;
    let acc = clf.accuracy(&ds, &loo.test, cfg.classifier.eval_batch)?;
    println!("{target}: {:.2}% of {} images", 100.0 * acc, loo.test.len());
    Ok(())
}

fn run_sweep(settings: &Settings, targets: &[String], alphas: &[f32], ps: &[f32], results: Option<&Path>) -> Result<()> {
    let cfg = settings.resolve()?;
    let ds = cfg.dataset.load()?;
    let names: Vec<&str> = if targets.is_empty() {
        ds.domain_names()
    } else {
        targets.iter().map(String::as_str).collect()
    };
    let table = sweep(&cfg, &ds, &names, alphas, ps, &mut StyleCache::new())?;
    for row in table.rows() {
        print_row(&row);
    }
    print!("{}", table.summary_csv());
    if let Some(path) = results {
        emit_results(&table.rows(), path)?;
    }
    Ok(())
}

fn report(paths: &[PathBuf]) -> Result<()> {
    let mut rows = Vec::new();
    for p in paths {
        rows.extend(read_results(p).with_context(|| format!("reading {}", p.display()))?);
    }
    for row in &rows {
        print_row(row);
    }
    // target-averaged accuracy of every setting present for more than one target
    let mut groups: Vec<(String, Vec<ResultRow>)> = Vec::new();
    for row in rows {
        let key = format!("{} {} alpha {} p {}", row.method, row.augmentation, row.alpha, row.p);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, g)) => g.push(row),
            None => groups.push((key, vec![row])),
        }
    }
    for (key, g) in groups.iter().filter(|(_, g)| g.len() > 1) {
        let targets: Vec<&str> = g.iter().map(|r| r.target.as_str()).collect();
        match target_averaged_runs(g) {
            Ok(runs) => {
                let (mean, std) = styleaug::harness::average_runs(&runs)?;
                println!("average over {}: {key}: {mean:.2} +- {std:.2}", targets.join(","));
            }
            Err(e) => println!("{key}: cannot average ({e})"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::GenData { settings, out } => gen_data(settings, out),
        Command::TrainStyle { settings, target, out } => train_style(settings, target, out),
        Command::TrainCls {
            settings,
            target,
            results,
            save_dir,
        } => train_cls(settings, target, results.as_deref(), save_dir.as_deref()),
        Command::Eval {
            settings,
            target,
            checkpoint,
        } => eval(settings, target, checkpoint),
        Command::Sweep {
            settings,
            targets,
            alphas,
            ps,
            results,
        } => run_sweep(settings, targets, alphas, ps, results.as_deref()),
        Command::Config { settings } => settings.resolve().map(|c| print!("{}", c.to_toml_string())),
        Command::Report { results } => report(results),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
