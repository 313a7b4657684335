//! Seeded synthetic texture dataset.
//!
//! Classes come in pairs that share a base hue and differ in their texture
//! motif (stripes, checkers, dots, blobs), so color alone separates at most
//! the pairs. Each pair puts an oriented motif against an isotropic one.
//! Every image gets a jittered hue, random motif period, phase and tilt, and
//! per-pixel noise.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rayon::prelude::*;
use recipe_core::image::{write_ppm, ImageU8};
use recipe_core::RngStream;

use crate::dataset::{Dataset, Manifest, ManifestEntry};

/// Motif of class `c` is `PAIRED_MOTIFS[c % 6]`: (horizontal, dots),
/// (vertical, checker), (diagonal, blobs).
const PAIRED_MOTIFS: [Motif; 6] =
    [Motif::Horizontal, Motif::Dots, Motif::Vertical, Motif::Checker, Motif::Diagonal, Motif::Blobs];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Motif {
    Horizontal,
    Vertical,
    Checker,
    Diagonal,
    Dots,
    Blobs,
}

struct Texture {
    motif: Motif,
    period: f64,
    phase: (f64, f64),
    /// Blob centers in pixels with signed weights.
    blobs: Vec<(f64, f64, f64)>,
    blob_width: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { classes: 10, train_per_class: 200, val_per_class: 50, size: 32, seed: 0 }
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

impl Texture {
    fn draw(motif: Motif, size: usize, rng: &mut RngStream) -> Self {
        let period = size as f64 * rng.uniform_range(0.16, 0.25);
        let phase = (rng.uniform_range(0.0, 2.0 * PI), rng.uniform_range(0.0, 2.0 * PI));
        let s = size as f64;
        let blobs = if motif == Motif::Blobs {
            (0..5).map(|i| (rng.uniform_range(0.0, s), rng.uniform_range(0.0, s), if i % 2 == 0 { 1.0 } else { -1.0 })).collect()
        } else {
            Vec::new()
        };
        Self { motif, period, phase, blobs, blob_width: s * rng.uniform_range(0.15, 0.22) }
    }

    /// Value in `[-1, 1]` at pixel `(x, y)` with tilted coordinates `(u, v)`.
    fn value(&self, x: f64, y: f64, u: f64, v: f64) -> f64 {
        let w = 2.0 * PI / self.period;
        let (p0, p1) = self.phase;
        match self.motif {
            Motif::Horizontal => (w * v + p0).sin(),
            Motif::Vertical => (w * u + p0).sin(),
            Motif::Checker => (w * u + p0).sin() * (w * v + p1).sin(),
            Motif::Diagonal => (w * (u + v) / 2f64.sqrt() + p0).sin(),
            Motif::Dots => {
                if (w * u + p0).cos() * (w * v + p1).cos() > 0.3 {
                    1.0
                } else {
                    -0.6
                }
            }
            Motif::Blobs => {
                let two_var = 2.0 * self.blob_width * self.blob_width;
                let sum: f64 =
                    self.blobs.iter().map(|&(cx, cy, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / two_var).exp()).sum();
                (2.0 * sum).tanh()
            }
        }
    }
}

/// Draws one image of `class`.
pub fn generate_image(class: usize, classes: usize, size: usize, rng: &mut RngStream) -> ImageU8 {
    let pairs = classes.div_ceil(2);
    let hue = (class / 2) as f64 * 360.0 / pairs as f64 + rng.uniform_range(-10.0, 10.0);
    let base = hsv_to_rgb(hue, rng.uniform_range(0.5, 0.8), rng.uniform_range(0.55, 0.85));
    let texture = Texture::draw(PAIRED_MOTIFS[class % PAIRED_MOTIFS.len()], size, rng);
    let (sin_t, cos_t) = rng.uniform_range(-15f64, 15.0).to_radians().sin_cos();
    let amp = rng.uniform_range(0.2, 0.45);

    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let (u, v) = (px * cos_t - py * sin_t, px * sin_t + py * cos_t);
            let t = texture.value(px, py, u, v);
            for b in base {
                let value = 255.0 * b * (1.0 + amp * t) + rng.uniform_range(-45.0, 45.0);
                pixels.push(value.round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    ImageU8::from_pixels(size, size, pixels).expect("size matches")
}

fn split_manifest(spec: &SyntheticSpec, split: &str, split_code: u64, per_class: usize) -> Vec<(ManifestEntry, u64)> {
    let mut out = Vec::with_capacity(spec.classes * per_class);
    for class in 0..spec.classes {
        for i in 0..per_class {
            let id = format!("{split}_{class:02}_{i:04}");
            let stream = RngStream::stream_id(split_code, (class * per_class + i) as u64);
            out.push((ManifestEntry { path: PathBuf::from(split).join(format!("{id}.ppm")), id, class }, stream));
        }
    }
    out
}

/// Paths of the written manifests.
#[derive(Debug, Clone)]
pub struct SyntheticOutput {
    pub train_manifest: PathBuf,
    pub val_manifest: PathBuf,
}

/// Writes `train/` and `val/` image folders plus `train.csv` and `val.csv`.
pub fn make_synthetic(spec: &SyntheticSpec, out: &Path) -> anyhow::Result<SyntheticOutput> {
    if spec.classes < 2 {
        bail!("synthetic data needs at least 2 classes, got {}", spec.classes);
    }
    if spec.size < 8 {
        bail!("synthetic images must be at least 8 pixels wide, got {}", spec.size);
    }
    let mut manifests = Vec::new();
    for (split, code, per_class) in [("train", 1, spec.train_per_class), ("val", 2, spec.val_per_class)] {
        fs::create_dir_all(out.join(split)).with_context(|| format!("creating {}", out.join(split).display()))?;
        let rows = split_manifest(spec, split, code, per_class);
        rows.par_iter().try_for_each(|(e, stream)| {
            let mut rng = RngStream::new(spec.seed, *stream);
            let img = generate_image(e.class, spec.classes, spec.size, &mut rng);
            write_ppm(out.join(&e.path), &img).with_context(|| format!("writing {}", e.path.display()))
        })?;
        let manifest = Manifest { root: out.to_path_buf(), entries: rows.into_iter().map(|(e, _)| e).collect() };
        let path = out.join(format!("{split}.csv"));
        manifest.write(&path)?;
        manifests.push(path);
    }
    let val_manifest = manifests.pop().expect("two splits");
    let train_manifest = manifests.pop().expect("two splits");
    Ok(SyntheticOutput { train_manifest, val_manifest })
}

/// Accuracy on `val` of the nearest class-mean image computed on `train`
/// (raw pixel vectors, Euclidean distance). A texture task worth training on
/// should leave this well below a CNN's accuracy.
pub fn nearest_centroid_accuracy(train: &Dataset, val: &Dataset, classes: usize) -> anyhow::Result<f64> {
    let dims = train.images.first().map(|i| i.pixels().len()).unwrap_or(0);
    if train.images.iter().chain(&val.images).any(|i| i.pixels().len() != dims) || val.is_empty() {
        bail!("nearest-centroid baseline needs equally sized images and a non-empty validation set");
    }
    let mut centroids = vec![vec![0.0; dims]; classes];
    let mut counts = vec![0usize; classes];
    for (img, &c) in train.images.iter().zip(&train.labels) {
        centroids[c].iter_mut().zip(img.pixels()).for_each(|(s, &p)| *s += p as f64);
        counts[c] += 1;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= (*n).max(1) as f64);
    }
    let correct = val
        .images
        .iter()
        .zip(&val.labels)
        .filter(|(img, &label)| {
            let dist = |c: &Vec<f64>| c.iter().zip(img.pixels()).map(|(a, &b)| (a - b as f64).powi(2)).sum::<f64>();
            let best = (0..classes).filter(|&c| counts[c] > 0).min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])));
            best == Some(label)
        })
        .count();
    Ok(correct as f64 / val.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hsv_primaries() {
        assert_eq!(hsv_to_rgb(0.0, 1.0, 1.0), [1.0, 0.0, 0.0]);
        assert_eq!(hsv_to_rgb(120.0, 1.0, 1.0), [0.0, 1.0, 0.0]);
        assert_eq!(hsv_to_rgb(240.0, 1.0, 0.5), [0.0, 0.0, 0.5]);
        assert_eq!(hsv_to_rgb(77.0, 0.0, 0.25), [0.25; 3]);
    }

    #[test]
    fn images_are_seeded() {
        let a = generate_image(3, 10, 32, &mut RngStream::new(1, 5));
        let b = generate_image(3, 10, 32, &mut RngStream::new(1, 5));
        let c = generate_image(3, 10, 32, &mut RngStream::new(1, 6));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn paired_classes_share_color() {
        // mean color of classes 0 and 1 (same hue) is closer than classes 0 and 2
        let mean = |class: usize| {
            let mut m = [0.0; 3];
            for s in 0..40 {
                let img = generate_image(class, 10, 24, &mut RngStream::new(9, s));
                for (i, &p) in img.pixels().iter().enumerate() {
                    m[i % 3] += p as f64;
                }
            }
            m
        };
        let d = |a: [f64; 3], b: [f64; 3]| a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let (m0, m1, m2) = (mean(0), mean(1), mean(2));
        assert!(d(m0, m1) < d(m0, m2) / 10.0);
    }
}
