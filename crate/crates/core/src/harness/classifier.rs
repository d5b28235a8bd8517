//! Classifier: shared conv trunk, class head and rotation head.

use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};

use super::config::ClassifierArch;
use crate::data::MultiDomainDataset;
use crate::error::{invalid, shape_err, Error, Result};
use crate::nn::{argmax_rows, Checkpoint, LayerSpec, Network, PadMode};
use crate::tensor::Tensor;

/// Number of rotation classes (0, 90, 180, 270 degrees).
pub const ROTATIONS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    /// Conv blocks followed by a flatten; its output is the feature vector.
    pub trunk: Network,
    pub head: Network,
    pub rot_head: Network,
}

impl Classifier {
    pub fn new<R: Rng + ?Sized>(
        arch: &ClassifierArch,
        image_shape: &[usize],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let &[c, h, w] = image_shape else {
            return Err(shape_err(format!("classifier expects [C, H, W] images, got {image_shape:?}")));
        };
        if h % 16 != 0 || w % 16 != 0 {
            return Err(shape_err(format!(
                "classifier needs spatial sizes divisible by 16, got {h}x{w}"
            )));
        }
        if num_classes < 2 {
            return Err(invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        let mut layers = Vec::new();
        let mut cin = c;
        for &cout in &arch.channels {
            layers.push(LayerSpec::conv3x3(cin, cout, PadMode::Zero));
            layers.push(LayerSpec::Relu);
            layers.push(LayerSpec::MaxPool2d { size: 2 });
            cin = cout;
        }
        layers.push(LayerSpec::Flatten);
        let trunk = Network::new(image_shape, layers, vec![], rng)?;
        let feat = trunk.output_shape()[0];
        let head = Network::new(&[feat], vec![LayerSpec::linear(feat, num_classes)], vec![], rng)?;
        let rot_head = Network::new(&[feat], vec![LayerSpec::linear(feat, ROTATIONS)], vec![], rng)?;
        Ok(Self { trunk, head, rot_head })
    }

    pub fn num_classes(&self) -> usize {
        self.head.output_shape()[0]
    }

    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        self.head.infer(&self.trunk.infer(images)?)
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(images)?))
    }

    /// SHA-256 over the trunk and both heads.
    pub fn param_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for net in [&self.trunk, &self.head, &self.rot_head] {
            hasher.update(net.param_hash().as_bytes());
        }
        hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("kind", "classifier");
        ck.add_network("trunk", self.trunk.clone());
        ck.add_network("head", self.head.clone());
        ck.add_network("rot_head", self.rot_head.clone());
        ck
    }

    pub fn from_checkpoint(mut ck: Checkpoint) -> Result<Self> {
        if ck.meta("kind") != Some("classifier") {
            return Err(Error::Checkpoint("not a classifier checkpoint".into()));
        }
        let trunk = ck.take_network("trunk")?;
        let head = ck.take_network("head")?;
        let rot_head = ck.take_network("rot_head")?;
        let feat = trunk.output_shape();
        if head.input_shape() != feat || rot_head.input_shape() != feat || rot_head.output_shape() != [ROTATIONS] {
            return Err(Error::Checkpoint("classifier heads do not fit the trunk".into()));
        }
        Ok(Self { trunk, head, rot_head })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(Checkpoint::load(path)?)
    }

    /// Fraction of `ids` classified correctly, evaluated in chunks of `batch`.
    pub fn accuracy(&self, dataset: &MultiDomainDataset, ids: &[usize], batch: usize) -> Result<f64> {
        if ids.is_empty() {
            return Err(invalid("cannot evaluate on an empty id list"));
        }
        let mut correct = 0usize;
        for chunk in ids.chunks(batch.max(1)) {
            let imgs: Vec<&Tensor> = chunk.iter().map(|&i| &dataset.get(i).image).collect();
            let pred = self.predict(&Tensor::stack(&imgs)?)?;
            correct += pred
                .iter()
                .zip(chunk)
                .filter(|(p, &i)| **p == dataset.get(i).label)
                .count();
        }
        Ok(correct as f64 / ids.len() as f64)
    }
}
