//! `root/<domain>/<class>/<image>` folders.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::{ImageReader, RgbImage};

use super::{Domain, LabeledImage, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug)]
pub struct FolderLoad {
    pub dataset: MultiDomainDataset,
    /// Files that could not be decoded.
    pub skipped: Vec<PathBuf>,
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let ty = entry.file_type()?;
        if (want_dirs && ty.is_dir()) || (!want_dirs && ty.is_file()) {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn decode(path: &Path, resolution: u32) -> Result<Tensor> {
    let img = ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let rgb = img.to_rgb8();
    let rgb = if rgb.dimensions() == (resolution, resolution) {
        rgb
    } else {
        image::imageops::resize(&rgb, resolution, resolution, FilterType::Triangle)
    };
    let r = resolution as usize;
    let mut data = vec![0.0f32; 3 * r * r];
    for (x, y, px) in rgb.enumerate_pixels() {
        for ch in 0..3 {
            data[ch * r * r + y as usize * r + x as usize] = f32::from(px[ch]) / 255.0;
        }
    }
    Tensor::new(vec![3, r, r], data)
}

/// Loads every domain directory under `root`, resizing images to
/// `resolution x resolution` RGB in `[0, 1]`. Directories and files are
/// visited in lexicographic order; undecodable files are skipped.
pub fn load_image_folder(root: impl AsRef<Path>, resolution: usize) -> Result<FolderLoad> {
    let root = root.as_ref();
    if resolution == 0 {
        return Err(Error::Dataset("resolution must be positive".into()));
    }
    let domain_dirs = sorted_entries(root, true)?;
    if domain_dirs.is_empty() {
        return Err(Error::Dataset(format!("no domain directories under {}", root.display())));
    }
    let mut class_names: Option<(Vec<String>, String)> = None;
    let mut domains = Vec::new();
    let mut skipped = Vec::new();
    for ddir in &domain_dirs {
        let dname = file_name(ddir);
        let class_dirs = sorted_entries(ddir, true)?;
        if class_dirs.is_empty() {
            return Err(Error::Dataset(format!("domain `{dname}` has no class directories")));
        }
        let names: Vec<String> = class_dirs.iter().map(|p| file_name(p)).collect();
        match &class_names {
            None => class_names = Some((names.clone(), dname.clone())),
            Some((first, first_domain)) if *first != names => {
                return Err(Error::Dataset(format!(
                    "domain `{dname}` has classes {names:?} but domain `{first_domain}` has {first:?}"
                )))
            }
            Some(_) => {}
        }
        let mut images = Vec::new();
        for (label, cdir) in class_dirs.iter().enumerate() {
            let files = sorted_entries(cdir, false)?;
            if files.is_empty() {
                return Err(Error::Dataset(format!(
                    "class directory {} is empty",
                    cdir.display()
                )));
            }
            for file in files {
                match decode(&file, resolution as u32) {
                    Ok(image) => images.push(LabeledImage {
                        id: 0,
                        image,
                        label,
                        domain: 0,
                    }),
                    Err(e) => {
                        log::warn!("skipping {}: {e}", file.display());
                        skipped.push(file);
                    }
                }
            }
        }
        if images.is_empty() {
            return Err(Error::Dataset(format!("domain `{dname}` has no decodable images")));
        }
        domains.push(Domain { name: dname, images });
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("source".into(), root.display().to_string());
    metadata.insert("resolution".into(), resolution.to_string());
    metadata.insert("skipped".into(), skipped.len().to_string());
    let classes = class_names.map(|(c, _)| c).unwrap_or_default();
    Ok(FolderLoad {
        dataset: MultiDomainDataset::new(domains, classes, metadata)?,
        skipped,
    })
}

/// Writes the dataset as PNG files in the folder layout, plus `manifest.txt`.
pub fn export_image_folder(dataset: &MultiDomainDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let shape = dataset.image_shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(Error::Dataset(format!("can only export RGB images, shape is {shape:?}")));
    }
    let (h, w) = (shape[1], shape[2]);
    for domain in dataset.domains() {
        for class in dataset.class_names() {
            fs::create_dir_all(root.join(&domain.name).join(class))?;
        }
        for img in &domain.images {
            let data = img.image.data();
            let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
                let i = y as usize * w + x as usize;
                let px = |ch: usize| (data[ch * h * w + i].clamp(0.0, 1.0) * 255.0).round() as u8;
                image::Rgb([px(0), px(1), px(2)])
            });
            let path = root
                .join(&domain.name)
                .join(&dataset.class_names()[img.label])
                .join(format!("{:06}.png", img.id));
            rgb.save(&path).map_err(|source| Error::Image { path, source })?;
        }
    }
    fs::write(root.join("manifest.txt"), dataset.manifest())?;
    Ok(())
}
