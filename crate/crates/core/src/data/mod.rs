//! Multi-domain image datasets, protocol splits and batch sampling.

mod folder;
mod sampler;
mod split;
mod synthetic;

pub use folder::{export_image_folder, load_image_folder, FolderLoad};
pub use sampler::{assemble_batch, Batch, BatchSampler};
pub use split::{
    leave_one_out_split, protocol_split, train_val_split, LeaveOneOut, ProtocolSplit, SourceSplit, TargetMode,
};
pub use synthetic::{
    generate_synthetic_domains, generate_synthetic_with_masks, Background, Fill, Palette, RenderStyle, Shape,
    SyntheticSpec,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One image with its class and domain. `image` is `[C, H, W]` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// Unique within its dataset; equal to the position in [`MultiDomainDataset::get`] order.
    pub id: usize,
    pub image: Tensor,
    pub label: usize,
    pub domain: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    pub name: String,
    pub images: Vec<LabeledImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiDomainDataset {
    domains: Vec<Domain>,
    class_names: Vec<String>,
    /// `(domain, position)` of every id.
    index: Vec<(usize, usize)>,
    /// Generator parameters or source path, free-form.
    pub metadata: BTreeMap<String, String>,
}

impl MultiDomainDataset {
    /// Assembles a dataset, renumbering ids in domain order.
    pub fn new(domains: Vec<Domain>, class_names: Vec<String>, metadata: BTreeMap<String, String>) -> Result<Self> {
        if domains.is_empty() {
            return Err(Error::Dataset("dataset has no domains".into()));
        }
        if class_names.len() < 2 {
            return Err(Error::Dataset("dataset needs at least two classes".into()));
        }
        let mut domains = domains;
        let mut index = Vec::new();
        let mut shape: Option<Vec<usize>> = None;
        for (d, domain) in domains.iter_mut().enumerate() {
            if domain.images.is_empty() {
                return Err(Error::Dataset(format!("domain `{}` is empty", domain.name)));
            }
            for (i, img) in domain.images.iter_mut().enumerate() {
                if img.label >= class_names.len() {
                    return Err(Error::LabelOutOfRange {
                        label: img.label,
                        classes: class_names.len(),
                    });
                }
                match &shape {
                    None => shape = Some(img.image.shape().to_vec()),
                    Some(s) if s.as_slice() != img.image.shape() => {
                        return Err(Error::Dataset(format!(
                            "image shape {:?} in domain `{}` differs from {s:?}",
                            img.image.shape(),
                            domain.name
                        )))
                    }
                    Some(_) => {}
                }
                img.id = index.len();
                img.domain = d;
                index.push((d, i));
            }
        }
        let mut names: Vec<&str> = domains.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != domains.len() {
            return Err(Error::Dataset("domain names must be unique".into()));
        }
        Ok(Self {
            domains,
            class_names,
            index,
            metadata,
        })
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn domain_names(&self) -> Vec<&str> {
        self.domains.iter().map(|d| d.name.as_str()).collect()
    }

    pub fn domain_index(&self, name: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d.name == name)
            .ok_or_else(|| Error::UnknownDomain(name.to_string()))
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Per-image shape `[C, H, W]`.
    pub fn image_shape(&self) -> &[usize] {
        self.domains[0].images[0].image.shape()
    }

    pub fn get(&self, id: usize) -> &LabeledImage {
        let (d, i) = self.index[id];
        &self.domains[d].images[i]
    }

    /// Ids of every image in domain `d`, in stored order.
    pub fn domain_ids(&self, d: usize) -> Vec<usize> {
        self.domains[d].images.iter().map(|img| img.id).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &LabeledImage> {
        self.domains.iter().flat_map(|d| d.images.iter())
    }

    /// Copy in which every image of domain `d` is blanked to zeros with label
    /// 0, keeping ids intact. Used to check that held-out data never matters.
    pub fn with_domain_blanked(&self, d: usize) -> Self {
        let mut out = self.clone();
        for img in &mut out.domains[d].images {
            img.image.fill(0.0);
            img.label = 0;
        }
        out
    }

    /// Structured-text manifest: seed, parameters and counts.
    pub fn manifest(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s.push_str(&format!("classes = {}\n", self.class_names.join(",")));
        s.push_str(&format!("image_shape = {:?}\n", self.image_shape()));
        s.push_str(&format!("total = {}\n", self.len()));
        for domain in &self.domains {
            let mut counts = vec![0usize; self.class_names.len()];
            for img in &domain.images {
                counts[img.label] += 1;
            }
            let counts: Vec<String> = counts.iter().map(|c| c.to_string()).collect();
            s.push_str(&format!(
                "domain.{} = {} images, per class [{}]\n",
                domain.name,
                domain.images.len(),
                counts.join(",")
            ));
        }
        s
    }
}
