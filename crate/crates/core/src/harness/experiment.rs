//! Leave-one-domain-out runs, averaging over seeds and alpha/p sweeps.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{Augmentation, ExperimentConfig, Method};
use super::train::{rng_stream, stream, train_classifier, TrainedClassifier};
use crate::adain::{train_style_model, StyleTransferModel, StyleTrainConfig, StyleTrainReport};
use crate::augment::AugmentationStats;
use crate::data::{leave_one_out_split, protocol_split, LeaveOneOut, MultiDomainDataset};
use crate::error::{invalid, Error, Result};

/// Arithmetic mean and sample standard deviation (`n - 1`; 0 for one value).
pub fn average_runs(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(invalid("cannot average zero runs"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, (ss / (n - 1.0)).sqrt()))
}

/// `sqrt((a^2 + b^2) / 2)`.
pub fn pooled_std(a: f64, b: f64) -> f64 {
    ((a * a + b * b) / 2.0).sqrt()
}

/// One target domain, one method, averaged over runs. Accuracies in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub target: String,
    pub method: Method,
    pub augmentation: Augmentation,
    pub alpha: f32,
    pub p: f32,
    pub run_seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl ResultRow {
    pub fn new(
        target: &str,
        config: &ExperimentConfig,
        run_seeds: Vec<u64>,
        accuracies: Vec<f64>,
    ) -> Result<Self> {
        if run_seeds.len() != accuracies.len() {
            return Err(invalid("one accuracy per run seed is required"));
        }
        let (mean, std) = average_runs(&accuracies)?;
        Ok(Self {
            target: target.to_string(),
            method: config.method,
            augmentation: config.augmentation,
            alpha: config.alpha,
            p: config.p,
            run_seeds,
            accuracies,
            mean,
            std,
        })
    }
}

/// Details of a single run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub seed: u64,
    /// Fraction in `[0, 1]`.
    pub target_accuracy: f64,
    pub trained: TrainedClassifier,
    pub param_hash: String,
}

impl RunOutcome {
    pub fn augmentation_stats(&self) -> Option<&AugmentationStats> {
        self.trained.augmentation_stats.as_ref()
    }
}

/// Trained style models keyed by target, style settings and (optionally) run,
/// so that sweeps and repeated runs reuse them.
#[derive(Debug, Default)]
pub struct StyleCache {
    models: HashMap<String, (Arc<StyleTransferModel>, Option<StyleTrainReport>)>,
}

impl StyleCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    /// Training report of a cached model, if it was trained here.
    pub fn report(&self, target: &str) -> Option<&StyleTrainReport> {
        self.models
            .iter()
            .find(|(k, _)| k.starts_with(&format!("{target}|")))
            .and_then(|(_, (_, r))| r.as_ref())
    }

    /// Loads the configured checkpoint, or trains on every source image of
    /// `loo` (never the target).
    pub fn get_or_train(
        &mut self,
        dataset: &MultiDomainDataset,
        loo: &LeaveOneOut,
        config: &ExperimentConfig,
        run_seed: Option<u64>,
    ) -> Result<Arc<StyleTransferModel>> {
        let target = &dataset.domains()[loo.target].name;
        let style_cfg = style_config_for(dataset, config, run_seed);
        let key = match &config.style_checkpoint {
            Some(path) => format!("{target}|ckpt|{}", path.display()),
            None => format!("{target}|{}", toml::to_string(&style_cfg).expect("style config serializes")),
        };
        if let Some((m, _)) = self.models.get(&key) {
            return Ok(Arc::clone(m));
        }
        let (model, report) = match &config.style_checkpoint {
            Some(path) => {
                if !path.exists() {
                    return Err(Error::Config(format!(
                        "style checkpoint {} does not exist",
                        path.display()
                    )));
                }
                let m = StyleTransferModel::load(path)?;
                if !m.is_trained() {
                    return Err(Error::Untrained);
                }
                if m.image_shape() != dataset.image_shape() {
                    return Err(Error::Shape(format!(
                        "style checkpoint expects {:?} images, dataset has {:?}",
                        m.image_shape(),
                        dataset.image_shape()
                    )));
                }
                (m, None)
            }
            None => {
                let sources: Vec<_> = loo
                    .sources
                    .iter()
                    .flat_map(|&d| dataset.domains()[d].images.iter())
                    .collect();
                log::info!("training style model for target {target} on {} source images", sources.len());
                let (m, r) = train_style_model(&sources, dataset.num_classes(), &style_cfg)?;
                (m, Some(r))
            }
        };
        let model = Arc::new(model);
        self.models.insert(key, (Arc::clone(&model), report));
        Ok(model)
    }
}

fn style_config_for(dataset: &MultiDomainDataset, config: &ExperimentConfig, run_seed: Option<u64>) -> StyleTrainConfig {
    let mut cfg = config.style.clone();
    cfg.arch.resolution = dataset.image_shape()[1];
    if let Some(s) = run_seed {
        cfg.seed = cfg.seed.wrapping_add(s);
    }
    cfg
}

/// Runs the full protocol for one held-out domain: for every run, draw the
/// source train/val split, get the style model (stylized mode), train the
/// classifier, select by source validation and evaluate once on the target.
pub fn run_experiment(
    config: &ExperimentConfig,
    dataset: &MultiDomainDataset,
    target: &str,
    styles: &mut StyleCache,
) -> Result<(ResultRow, Vec<RunOutcome>)> {
    config.validate()?;
    let loo = leave_one_out_split(dataset, target, config.target_mode)?;
    let mut outcomes = Vec::with_capacity(config.n_runs);
    for r in 0..config.n_runs {
        let seed = config.run_seed(r);
        let split = protocol_split(dataset, &loo, config.classifier.train_ratio, &mut rng_stream(seed, stream::SPLIT))?;
        let style = match config.augmentation {
            Augmentation::Original => None,
            Augmentation::Stylized => {
                let run_key = config.retrain_style_per_run.then_some(seed);
                Some(styles.get_or_train(dataset, &loo, config, run_key)?)
            }
        };
        let trained = train_classifier(dataset, &split, config, style.as_deref(), seed)?;
        let acc = trained.classifier.accuracy(dataset, &split.test, config.classifier.eval_batch)?;
        let param_hash = trained.classifier.param_hash();
        log::info!(
            "target {target} run {r} (seed {seed}): {} {} -> selected val {:.4} at iteration {}, target acc {acc:.4}",
            config.method,
            config.augmentation,
            trained.val_curve[trained.selected],
            trained.val_iterations[trained.selected]
        );
        if let Some(s) = &trained.augmentation_stats {
            log::info!("target {target} run {r}:\n{}", s.to_structured_text());
        }
        outcomes.push(RunOutcome {
            seed,
            target_accuracy: acc,
            trained,
            param_hash,
        });
    }
    let row = ResultRow::new(
        target,
        config,
        outcomes.iter().map(|o| o.seed).collect(),
        outcomes.iter().map(|o| 100.0 * o.target_accuracy).collect(),
    )?;
    Ok((row, outcomes))
}

/// One `(alpha, p)` cell: a row per target plus the target-averaged
/// accuracy of each run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub alpha: f32,
    pub p: f32,
    pub rows: Vec<ResultRow>,
    /// Per run index, the mean accuracy over targets.
    pub run_means: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl SweepCell {
    pub fn from_rows(alpha: f32, p: f32, rows: Vec<ResultRow>) -> Result<Self> {
        let run_means = target_averaged_runs(&rows)?;
        let (mean, std) = average_runs(&run_means)?;
        Ok(Self {
            alpha,
            p,
            rows,
            run_means,
            mean,
            std,
        })
    }
}

/// Per-run accuracy averaged over the targets of `rows`, which must share
/// their run count.
pub fn target_averaged_runs(rows: &[ResultRow]) -> Result<Vec<f64>> {
    let first = rows.first().ok_or_else(|| invalid("no rows to average"))?;
    let n = first.accuracies.len();
    if rows.iter().any(|r| r.accuracies.len() != n) {
        return Err(invalid("rows have different numbers of runs"));
    }
    Ok((0..n)
        .map(|i| rows.iter().map(|r| r.accuracies[i]).sum::<f64>() / rows.len() as f64)
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub alphas: Vec<f32>,
    pub ps: Vec<f32>,
    /// Row-major over `alphas` then `ps`.
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, alpha: f32, p: f32) -> Option<&SweepCell> {
        self.cells.iter().find(|c| c.alpha == alpha && c.p == p)
    }

    pub fn rows(&self) -> Vec<ResultRow> {
        self.cells.iter().flat_map(|c| c.rows.iter().cloned()).collect()
    }

    /// `alpha,p,mean,std` summary, accuracies with 2 decimals.
    pub fn summary_csv(&self) -> String {
        let mut s = String::from("alpha,p,mean,std\n");
        for c in &self.cells {
            s.push_str(&format!("{},{},{:.2},{:.2}\n", c.alpha, c.p, c.mean, c.std));
        }
        s
    }
}

/// Stylized runs for every `(alpha, p)` pair and every target in `targets`.
/// Each cell depends only on its own settings and seeds.
pub fn sweep(
    config: &ExperimentConfig,
    dataset: &MultiDomainDataset,
    targets: &[&str],
    alphas: &[f32],
    ps: &[f32],
    styles: &mut StyleCache,
) -> Result<SweepTable> {
    if alphas.is_empty() || ps.is_empty() || targets.is_empty() {
        return Err(invalid("sweep needs at least one alpha, one p and one target"));
    }
    let mut cells = Vec::with_capacity(alphas.len() * ps.len());
    for &alpha in alphas {
        for &p in ps {
            let cfg = ExperimentConfig {
                alpha,
                p,
                augmentation: Augmentation::Stylized,
                ..config.clone()
            };
            let rows = targets
                .iter()
                .map(|t| run_experiment(&cfg, dataset, t, styles).map(|(row, _)| row))
                .collect::<Result<Vec<_>>>()?;
            let cell = SweepCell::from_rows(alpha, p, rows)?;
            log::info!("sweep cell alpha {alpha} p {p}: mean {:.2} std {:.2}", cell.mean, cell.std);
            cells.push(cell);
        }
    }
    Ok(SweepTable {
        alphas: alphas.to_vec(),
        ps: ps.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn averaging() {
        assert_eq!(average_runs(&[70.0, 80.0, 90.0]).unwrap(), (80.0, 10.0));
        assert_eq!(average_runs(&[42.5]).unwrap(), (42.5, 0.0));
        assert!(average_runs(&[]).is_err());
        assert!((pooled_std(3.0, 4.0) - 12.5f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn target_average_is_per_run() {
        let cfg = ExperimentConfig::default();
        let a = ResultRow::new("a", &cfg, vec![0, 1], vec![50.0, 70.0]).unwrap();
        let b = ResultRow::new("b", &cfg, vec![0, 1], vec![60.0, 90.0]).unwrap();
        assert_eq!(target_averaged_runs(&[a.clone(), b.clone()]).unwrap(), vec![55.0, 80.0]);
        let cell = SweepCell::from_rows(1.0, 0.75, vec![a, b]).unwrap();
        assert_eq!(cell.mean, 67.5);
        let c = ResultRow::new("c", &cfg, vec![0], vec![1.0]).unwrap();
        assert!(target_averaged_runs(&[cell.rows[0].clone(), c]).is_err());
    }
}
