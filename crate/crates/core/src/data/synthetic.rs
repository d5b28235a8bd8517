//! Procedural multi-domain shape dataset.
//!
//! The class of an image is decided by its shape alone and its domain by the
//! rendering alone (palette, background, fill style), so the shift between
//! domains is purely one of appearance.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Domain, LabeledImage, MultiDomainDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Shape prototypes. All are mirror-symmetric about the vertical axis, so a
/// horizontal flip never changes the class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
    Bar,
    Diamond,
    Pillar,
    Tee,
    Hourglass,
}

impl Shape {
    pub const ALL: [Shape; 10] = [
        Shape::Circle,
        Shape::Square,
        Shape::Triangle,
        Shape::Cross,
        Shape::Ring,
        Shape::Bar,
        Shape::Diamond,
        Shape::Pillar,
        Shape::Tee,
        Shape::Hourglass,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
            Shape::Bar => "bar",
            Shape::Diamond => "diamond",
            Shape::Pillar => "pillar",
            Shape::Tee => "tee",
            Shape::Hourglass => "hourglass",
        }
    }

    /// Membership test in shape coordinates, `u` rightwards and `v` downwards,
    /// both scaled so the shape fits in `[-1, 1]^2`.
    pub fn contains(self, u: f32, v: f32) -> bool {
        let (au, av) = (u.abs(), v.abs());
        match self {
            Shape::Circle => u * u + v * v <= 1.0,
            Shape::Square => au <= 0.8 && av <= 0.8,
            Shape::Triangle => (-0.9..=0.8).contains(&v) && au <= 0.95 * (v + 0.9) / 1.7,
            Shape::Cross => (au <= 0.3 && av <= 0.95) || (av <= 0.3 && au <= 0.95),
            Shape::Ring => {
                let r2 = u * u + v * v;
                (0.3..=1.0).contains(&r2)
            }
            Shape::Bar => au <= 0.95 && av <= 0.35,
            Shape::Diamond => au + av <= 1.0,
            Shape::Pillar => au <= 0.35 && av <= 0.95,
            Shape::Tee => ((v + 0.7).abs() <= 0.25 && au <= 0.95) || (au <= 0.25 && (-0.7..=0.95).contains(&v)),
            Shape::Hourglass => av <= 0.9 && au <= av.max(0.15),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Palette {
    /// Muted, mid-saturation colours.
    Natural,
    /// Fully saturated colours on a saturated background.
    Saturated,
    /// Bright object on a pale background.
    Pastel,
    /// Dark grey strokes on near-white.
    Gray,
    /// Bright colours on a near-black background.
    Neon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Gradient,
    /// Sinusoidal strokes between two colours.
    Texture,
    Flat,
    /// Flat with fine grain.
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fill {
    /// Solid colour with a linear brightness ramp.
    Shaded,
    /// Two-colour stripes at a random angle.
    Striped,
    /// Flat colour with a dark outline outside the shape.
    Outlined,
    /// Only a broken band along the inside of the boundary.
    Sketch,
}

/// The appearance of one domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderStyle {
    pub name: String,
    pub palette: Palette,
    pub background: Background,
    pub fill: Fill,
    /// Standard deviation of additive pixel noise.
    pub noise: f32,
}

impl RenderStyle {
    pub fn new(name: &str, palette: Palette, background: Background, fill: Fill, noise: f32) -> Self {
        Self {
            name: name.to_string(),
            palette,
            background,
            fill,
            noise,
        }
    }

    /// Built-in styles; the first four are the default domains.
    pub fn presets() -> Vec<RenderStyle> {
        vec![
            Self::new("photo", Palette::Natural, Background::Gradient, Fill::Shaded, 0.02),
            Self::new("art", Palette::Saturated, Background::Texture, Fill::Striped, 0.03),
            Self::new("cartoon", Palette::Pastel, Background::Flat, Fill::Outlined, 0.0),
            Self::new("sketch", Palette::Gray, Background::Paper, Fill::Sketch, 0.02),
            Self::new("neon", Palette::Neon, Background::Flat, Fill::Sketch, 0.01),
            Self::new("watercolor", Palette::Pastel, Background::Paper, Fill::Shaded, 0.03),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of classes; the first `num_classes` entries of [`Shape::ALL`].
    pub num_classes: usize,
    pub domains: Vec<RenderStyle>,
    pub images_per_class: usize,
    /// Side length of the square images.
    pub resolution: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 7,
            domains: RenderStyle::presets().into_iter().take(4).collect(),
            images_per_class: 100,
            resolution: 32,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Dataset(m));
        if self.num_classes < 2 || self.num_classes > Shape::ALL.len() {
            return bad(format!(
                "num_classes must be in 2..={}, got {}",
                Shape::ALL.len(),
                self.num_classes
            ));
        }
        if self.domains.len() < 2 {
            return bad(format!("need at least 2 domains, got {}", self.domains.len()));
        }
        if self.images_per_class == 0 {
            return bad("images_per_class must be positive".into());
        }
        if self.resolution < 16 {
            return bad(format!("resolution must be at least 16, got {}", self.resolution));
        }
        if self.domains.iter().any(|d| !(0.0..=1.0).contains(&d.noise)) {
            return bad("noise must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn total_images(&self) -> usize {
        self.num_classes * self.domains.len() * self.images_per_class
    }
}

/// Generates the dataset. Identical `(spec, seed)` give bit-identical output.
pub fn generate_synthetic_domains(spec: &SyntheticSpec, seed: u64) -> Result<MultiDomainDataset> {
    Ok(generate_synthetic_with_masks(spec, seed)?.0)
}

/// Same as [`generate_synthetic_domains`], also returning each image's
/// row-major `H * W` shape mask, indexed by image id.
pub fn generate_synthetic_with_masks(spec: &SyntheticSpec, seed: u64) -> Result<(MultiDomainDataset, Vec<Vec<bool>>)> {
    spec.validate()?;
    let mut domains = Vec::with_capacity(spec.domains.len());
    let mut masks = Vec::with_capacity(spec.total_images());
    for (d, style) in spec.domains.iter().enumerate() {
        let mut images = Vec::with_capacity(spec.num_classes * spec.images_per_class);
        for (k, &shape) in Shape::ALL[..spec.num_classes].iter().enumerate() {
            // one stream per (domain, class) keeps images independent of the
            // number of other domains and classes
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((d as u64) << 16 | k as u64);
            for _ in 0..spec.images_per_class {
                let (image, mask) = render(shape, style, spec.resolution, &mut rng);
                images.push(LabeledImage {
                    id: 0,
                    image,
                    label: k,
                    domain: d,
                });
                masks.push(mask);
            }
        }
        domains.push(Domain {
            name: style.name.clone(),
            images,
        });
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("generator".into(), "synthetic-shapes".into());
    metadata.insert("seed".into(), seed.to_string());
    metadata.insert("resolution".into(), spec.resolution.to_string());
    metadata.insert("images_per_class".into(), spec.images_per_class.to_string());
    let styles: Vec<String> = spec
        .domains
        .iter()
        .map(|s| format!("{}:{:?}/{:?}/{:?}/{}", s.name, s.palette, s.background, s.fill, s.noise))
        .collect();
    metadata.insert("styles".into(), styles.join(" "));
    let class_names = Shape::ALL[..spec.num_classes].iter().map(|s| s.name().to_string()).collect();
    Ok((MultiDomainDataset::new(domains, class_names, metadata)?, masks))
}

type Rgb = [f32; 3];

fn hsv(h: f32, s: f32, v: f32) -> Rgb {
    let h = h.rem_euclid(1.0) * 6.0;
    let i = h.floor();
    let f = h - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    match i as u32 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

fn lerp(a: Rgb, b: Rgb, t: f32) -> Rgb {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Foreground, secondary foreground, and two background colours.
fn palette_colors(palette: Palette, rng: &mut ChaCha8Rng) -> (Rgb, Rgb, Rgb, Rgb) {
    let hue: f32 = rng.random();
    let far = hue + rng.random_range(0.25f32..0.75);
    match palette {
        Palette::Natural => {
            let fg = hsv(hue, rng.random_range(0.35..0.65), rng.random_range(0.45..0.85));
            let fg2 = hsv(hue + 0.05, 0.5, 0.6);
            let b1 = hsv(far, rng.random_range(0.15..0.35), rng.random_range(0.35..0.75));
            let b2 = hsv(far + rng.random_range(-0.1f32..0.1), rng.random_range(0.1..0.3), rng.random_range(0.3..0.8));
            (fg, fg2, b1, b2)
        }
        Palette::Saturated => {
            let fg = hsv(hue, rng.random_range(0.85..1.0), rng.random_range(0.8..1.0));
            let fg2 = hsv(hue + rng.random_range(0.3f32..0.7), 0.9, 0.9);
            let b1 = hsv(far, rng.random_range(0.7..1.0), rng.random_range(0.5..0.9));
            let b2 = hsv(far + 0.5, rng.random_range(0.7..1.0), rng.random_range(0.4..0.9));
            (fg, fg2, b1, b2)
        }
        Palette::Pastel => {
            let fg = hsv(hue, rng.random_range(0.75..1.0), rng.random_range(0.85..1.0));
            let b = hsv(far, rng.random_range(0.1..0.3), rng.random_range(0.9..1.0));
            (fg, fg, b, b)
        }
        Palette::Gray => {
            let g = rng.random_range(0.05..0.3);
            let p = rng.random_range(0.85..1.0);
            ([g; 3], [g; 3], [p; 3], [p; 3])
        }
        Palette::Neon => {
            let fg = hsv(hue, rng.random_range(0.85..1.0), 1.0);
            let b = hsv(far, 0.5, rng.random_range(0.03..0.15));
            (fg, fg, b, b)
        }
    }
}

/// Unit direction at a random angle.
fn direction(rng: &mut ChaCha8Rng) -> (f32, f32) {
    let a = rng.random_range(0.0..std::f32::consts::TAU);
    (a.cos(), a.sin())
}

fn render(shape: Shape, style: &RenderStyle, res: usize, rng: &mut ChaCha8Rng) -> (Tensor, Vec<bool>) {
    let r = res as f32;
    let radius = r * rng.random_range(0.28f32..0.38);
    let cx = r / 2.0 + r * rng.random_range(-0.09f32..0.09);
    let cy = r / 2.0 + r * rng.random_range(-0.09f32..0.09);

    // 3x3 supersampled coverage
    const SS: usize = 3;
    let mut coverage = vec![0.0f32; res * res];
    for y in 0..res {
        for x in 0..res {
            let mut hits = 0;
            for sy in 0..SS {
                for sx in 0..SS {
                    let px = x as f32 + (sx as f32 + 0.5) / SS as f32;
                    let py = y as f32 + (sy as f32 + 0.5) / SS as f32;
                    if shape.contains((px - cx) / radius, (py - cy) / radius) {
                        hits += 1;
                    }
                }
            }
            coverage[y * res + x] = hits as f32 / (SS * SS) as f32;
        }
    }
    let mask: Vec<bool> = coverage.iter().map(|&c| c >= 0.5).collect();

    let (fg, fg2, b1, b2) = palette_colors(style.palette, rng);

    // background
    let mut pixels = vec![[0.0f32; 3]; res * res];
    let (gx, gy) = direction(rng);
    let freq = rng.random_range(0.5f32..1.2);
    let phase = rng.random_range(0.0f32..std::f32::consts::TAU);
    for y in 0..res {
        for x in 0..res {
            let (xf, yf) = (x as f32 / r - 0.5, y as f32 / r - 0.5);
            pixels[y * res + x] = match style.background {
                Background::Gradient => lerp(b1, b2, (xf * gx + yf * gy + 0.71) / 1.42),
                Background::Texture => {
                    let s = ((x as f32 * gx + y as f32 * gy) * freq + phase).sin();
                    lerp(b1, b2, 0.5 + 0.5 * s)
                }
                Background::Flat | Background::Paper => b1,
            };
        }
    }
    if style.background == Background::Paper {
        let grain = Normal::new(0.0f32, 0.03).unwrap();
        for p in &mut pixels {
            let n = grain.sample(rng);
            for ch in p.iter_mut() {
                *ch += n;
            }
        }
    }

    // foreground
    let (sx, sy) = direction(rng);
    let period = rng.random_range(3.0f32..6.0);
    let band = inner_band(&mask, res, 2);
    let halo = outer_band(&mask, res);
    for y in 0..res {
        for x in 0..res {
            let i = y * res + x;
            let cov = coverage[i];
            match style.fill {
                Fill::Shaded => {
                    let t = ((x as f32 - cx) * sx + (y as f32 - cy) * sy) / (2.0 * radius) + 0.5;
                    let shade = 0.7 + 0.45 * t.clamp(0.0, 1.0);
                    let c = [fg[0] * shade, fg[1] * shade, fg[2] * shade];
                    pixels[i] = lerp(pixels[i], c, cov);
                }
                Fill::Striped => {
                    let s = (x as f32 * sx + y as f32 * sy) / period;
                    let c = if s.rem_euclid(1.0) < 0.5 { fg } else { fg2 };
                    pixels[i] = lerp(pixels[i], c, cov);
                }
                Fill::Outlined => {
                    if halo[i] {
                        pixels[i] = [0.08; 3];
                    } else {
                        pixels[i] = lerp(pixels[i], fg, cov);
                    }
                }
                Fill::Sketch => {
                    if band[i] && rng.random::<f32>() >= 0.15 {
                        pixels[i] = fg;
                    }
                }
            }
        }
    }

    if style.noise > 0.0 {
        let n = Normal::new(0.0f32, style.noise).unwrap();
        for p in &mut pixels {
            for ch in p.iter_mut() {
                *ch += n.sample(rng);
            }
        }
    }

    let mut data = vec![0.0f32; 3 * res * res];
    for (i, p) in pixels.iter().enumerate() {
        for ch in 0..3 {
            data[ch * res * res + i] = p[ch].clamp(0.0, 1.0);
        }
    }
    (Tensor::from_parts(vec![3, res, res], data), mask)
}

/// Mask pixels within Chebyshev distance `width` of a non-mask pixel or the border.
fn inner_band(mask: &[bool], res: usize, width: isize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..res as isize {
        for x in 0..res as isize {
            if !mask[y as usize * res + x as usize] {
                continue;
            }
            'search: for dy in -width..=width {
                for dx in -width..=width {
                    let (yy, xx) = (y + dy, x + dx);
                    let outside = yy < 0
                        || xx < 0
                        || yy >= res as isize
                        || xx >= res as isize
                        || !mask[yy as usize * res + xx as usize];
                    if outside {
                        out[y as usize * res + x as usize] = true;
                        break 'search;
                    }
                }
            }
        }
    }
    out
}

/// Non-mask pixels 4-adjacent to the mask.
fn outer_band(mask: &[bool], res: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for y in 0..res {
        for x in 0..res {
            if mask[y * res + x] {
                continue;
            }
            let near = (y > 0 && mask[(y - 1) * res + x])
                || (y + 1 < res && mask[(y + 1) * res + x])
                || (x > 0 && mask[y * res + x - 1])
                || (x + 1 < res && mask[y * res + x + 1]);
            out[y * res + x] = near;
        }
    }
    out
}
