//! Leave-one-domain-out protocol splits.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiDomainDataset;
use crate::error::{invalid, Error, Result};

/// How the held-out domain is turned into a test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum TargetMode {
    /// Test on every image of the held-out domain.
    Whole,
    /// Test on a fixed fraction of the held-out domain, drawn once from `seed`.
    Fraction { test_fraction: f64, seed: u64 },
}

impl Default for TargetMode {
    fn default() -> Self {
        TargetMode::Whole
    }
}

/// Domain-level split: one target, the rest sources.
#[derive(Debug, Clone, PartialEq)]
pub struct LeaveOneOut {
    pub target: usize,
    pub sources: Vec<usize>,
    /// Ids evaluated on.
    pub test: Vec<usize>,
    /// Target ids excluded from testing (non-empty only in fraction mode).
    pub reserved: Vec<usize>,
}

pub fn leave_one_out_split(dataset: &MultiDomainDataset, target_name: &str, mode: TargetMode) -> Result<LeaveOneOut> {
    let target = dataset.domain_index(target_name)?;
    if dataset.domains().len() < 2 {
        return Err(Error::Dataset("leave-one-out needs at least two domains".into()));
    }
    let sources = (0..dataset.domains().len()).filter(|&d| d != target).collect();
    let ids = dataset.domain_ids(target);
    let (test, reserved) = match mode {
        TargetMode::Whole => (ids, Vec::new()),
        TargetMode::Fraction { test_fraction, seed } => {
            if !(test_fraction > 0.0 && test_fraction < 1.0) {
                return Err(invalid(format!("test fraction must lie in (0, 1), got {test_fraction}")));
            }
            let mut shuffled = ids;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let n_test = ((shuffled.len() as f64 * test_fraction).round() as usize).clamp(1, shuffled.len());
            let reserved = shuffled.split_off(n_test);
            shuffled.sort_unstable();
            let mut reserved = reserved;
            reserved.sort_unstable();
            (shuffled, reserved)
        }
    };
    Ok(LeaveOneOut {
        target,
        sources,
        test,
        reserved,
    })
}

/// Random partition of `ids` into `round(ratio * N)` train ids and the rest.
/// Both parts are kept non-empty. Each part is returned sorted.
pub fn train_val_split<R: Rng + ?Sized>(ids: &[usize], ratio: f64, rng: &mut R) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(invalid(format!("train ratio must lie in (0, 1), got {ratio}")));
    }
    if ids.len() < 2 {
        return Err(Error::Dataset(format!(
            "cannot split {} image(s) into train and validation",
            ids.len()
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(rng);
    let n_train = ((ids.len() as f64 * ratio).round() as usize).clamp(1, ids.len() - 1);
    let mut val = shuffled.split_off(n_train);
    shuffled.sort_unstable();
    val.sort_unstable();
    Ok((shuffled, val))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSplit {
    pub domain: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
}

/// A full per-run split: train/val for every source and the target test set.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolSplit {
    pub target: usize,
    pub sources: Vec<SourceSplit>,
    pub test: Vec<usize>,
}

impl ProtocolSplit {
    pub fn train_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.sources.iter().flat_map(|s| s.train.iter().copied())
    }

    pub fn val_ids(&self) -> impl Iterator<Item = usize> + '_ {
        self.sources.iter().flat_map(|s| s.val.iter().copied())
    }

    /// Training ids grouped by source domain.
    pub fn train_pools(&self) -> Vec<Vec<usize>> {
        self.sources.iter().map(|s| s.train.clone()).collect()
    }
}

/// Draws train/val splits of every source domain, one after the other from `rng`.
pub fn protocol_split<R: Rng + ?Sized>(
    dataset: &MultiDomainDataset,
    loo: &LeaveOneOut,
    train_ratio: f64,
    rng: &mut R,
) -> Result<ProtocolSplit> {
    let sources = loo
        .sources
        .iter()
        .map(|&d| {
            let (train, val) = train_val_split(&dataset.domain_ids(d), train_ratio, rng)?;
            Ok(SourceSplit { domain: d, train, val })
        })
        .collect::<Result<_>>()?;
    Ok(ProtocolSplit {
        target: loo.target,
        sources,
        test: loo.test.clone(),
    })
}
