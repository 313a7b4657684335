//! Dumps every augmentation stage for a few training samples.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::bail;
use recipe_core::image::{write_ppm, ImageU8};
use recipe_core::imageops::{augment_traced, denormalize};
use recipe_core::{ImageF32, RngStream};

use crate::config::RunConfig;
use crate::dataset::Dataset;
use crate::UsageError;

const PREVIEW_MAJOR: u64 = 0x7072_6576;

fn to_u8(img: &ImageF32, cfg: &RunConfig) -> ImageU8 {
    let aug = cfg.augment_config().expect("validated");
    denormalize(img, aug.mean, aug.std).map(|v| (v as f64 * 255.0).round().clamp(0.0, 255.0) as u8)
}

/// Writes `preview_NNN_{1_crop,2_flip,3_autoaugment,4_cutmix}.ppm` and a
/// `preview_NNN.txt` sidecar with the mixed target for the first `n` samples.
/// Each sample's CutMix partner is the next sample of a different class.
pub fn augment_preview(cfg: &RunConfig, n: usize) -> anyhow::Result<Vec<PathBuf>> {
    cfg.validate()?;
    let manifest = cfg.train_manifest.as_ref().ok_or_else(|| UsageError("train_manifest is not set".into()))?;
    let data = Dataset::read(manifest, cfg.classes)?;
    if data.is_empty() {
        bail!("training manifest has no samples");
    }
    let aug = cfg.augment_config()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut written = Vec::new();
    for i in 0..n {
        let idx = i % data.len();
        let partner = (1..data.len()).map(|o| (idx + o) % data.len()).find(|&j| data.labels[j] != data.labels[idx]);
        let mut rng = RngStream::new(cfg.seed, RngStream::stream_id(PREVIEW_MAJOR, i as u64));
        let trace = augment_traced(
            &data.images[idx],
            data.labels[idx],
            partner.map(|j| (&data.images[j], data.labels[j])),
            &aug,
            &mut rng,
        )?;
        let stem = format!("preview_{i:03}");
        let stages = [
            ("1_crop", trace.cropped.clone()),
            ("2_flip", trace.flipped.clone()),
            ("3_autoaugment", trace.augmented.clone()),
            ("4_cutmix", to_u8(&trace.output, cfg)),
        ];
        for (name, img) in stages {
            let path = cfg.out_dir.join(format!("{stem}_{name}.ppm"));
            write_ppm(&path, &img)?;
            written.push(path);
        }
        let mut side = format!("sample = {}\n", data.ids[idx]);
        let partner_used = trace.partner.is_some();
        writeln!(side, "partner = {}", partner.filter(|_| partner_used).map_or("none", |j| data.ids[j].as_str()))
            .expect("writing to a string");
        let target: Vec<String> = trace.target.entries().iter().map(|(c, w)| format!("{c}:{w:.9}")).collect();
        writeln!(side, "target = {}", target.join(" ")).expect("writing to a string");
        let path = cfg.out_dir.join(format!("{stem}.txt"));
        fs::write(&path, side)?;
        written.push(path);
    }
    Ok(written)
}
