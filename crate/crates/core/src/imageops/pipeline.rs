use std::sync::Arc;

use super::crop::sample_crop_box;
use super::cutmix::{paste_patch, sample_patch, MixedTarget, PatchBox};
use super::policy::{autoaugment, PolicyTable};
use crate::error::{Error, Result};
use crate::image::{hflip, resize_region, Image, ImageF32, ImageU8};
use crate::rng::RngStream;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

/// Labels attached to random draws, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    Crop,
    Flip,
    AutoAugment,
    CutMix,
}

impl Stage {
    pub const fn label(self) -> &'static str {
        match self {
            Stage::Crop => "crop",
            Stage::Flip => "flip",
            Stage::AutoAugment => "autoaugment",
            Stage::CutMix => "cutmix",
        }
    }

    pub fn from_label(label: &str) -> Option<Stage> {
        [Stage::Crop, Stage::Flip, Stage::AutoAugment, Stage::CutMix].into_iter().find(|s| s.label() == label)
    }
}

#[derive(Debug, Clone)]
pub struct AugmentConfig {
    pub out_size: usize,
    pub area_range: (f64, f64),
    pub aspect_range: (f64, f64),
    pub flip_prob: f64,
    pub cutmix_prob: f64,
    pub cutmix_alpha: f64,
    /// Pins the pasted rectangle instead of drawing λ and a patch center.
    pub cutmix_patch: Option<PatchBox>,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub policy: Arc<PolicyTable>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            out_size: 224,
            area_range: (0.08, 1.0),
            aspect_range: (3.0 / 4.0, 4.0 / 3.0),
            flip_prob: 0.5,
            cutmix_prob: 0.5,
            cutmix_alpha: 1.0,
            cutmix_patch: None,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            policy: Arc::new(PolicyTable::imagenet()),
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let (lo, hi) = self.area_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("area range [{lo}, {hi}] must satisfy 0 < lo <= hi <= 1"));
        }
        let (alo, ahi) = self.aspect_range;
        if !(alo > 0.0 && alo <= ahi && ahi.is_finite()) {
            return bad(format!("aspect range [{alo}, {ahi}] must satisfy 0 < lo <= hi"));
        }
        if self.out_size == 0 {
            return bad("output size must be positive".into());
        }
        for (name, p) in [("flip", self.flip_prob), ("cutmix", self.cutmix_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if !(self.cutmix_alpha > 0.0 && self.cutmix_alpha.is_finite()) {
            return bad(format!("cutmix alpha must be positive, got {}", self.cutmix_alpha));
        }
        if let Some(s) = self.std.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return bad(format!("channel std must be positive, got {s}"));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return bad("channel mean must be finite".into());
        }
        Ok(())
    }
}

/// `(v / 255 − mean) / std` per channel.
pub fn normalize(img: &ImageU8, mean: [f64; 3], std: [f64; 3]) -> ImageF32 {
    normalize_values(img.width(), img.height(), img.pixels().iter().map(|&v| v as f64), mean, std)
}

/// Normalizes raw `[0, 255]` values laid out like an RGB image.
pub(crate) fn normalize_values(
    width: usize,
    height: usize,
    values: impl Iterator<Item = f64>,
    mean: [f64; 3],
    std: [f64; 3],
) -> ImageF32 {
    let pixels = values.enumerate().map(|(i, v)| ((v / 255.0 - mean[i % 3]) / std[i % 3]) as f32).collect();
    Image::from_pixels(width, height, pixels).expect("layout preserved")
}

/// Inverse of [`normalize`], returning values in `[0, 1]` scale.
pub fn denormalize(img: &ImageF32, mean: [f64; 3], std: [f64; 3]) -> ImageF32 {
    let pixels =
        img.pixels().iter().enumerate().map(|(i, &v)| (v as f64 * std[i % 3] + mean[i % 3]) as f32).collect();
    Image::from_pixels(img.width(), img.height(), pixels).expect("layout preserved")
}

/// Every intermediate of one pass through the training pipeline.
#[derive(Debug, Clone)]
pub struct AugmentTrace {
    pub cropped: ImageU8,
    pub flipped: ImageU8,
    pub augmented: ImageU8,
    pub normalized: ImageF32,
    /// Partner image after steps 1–4 when CutMix fired.
    pub partner: Option<ImageF32>,
    pub output: ImageF32,
    pub target: MixedTarget,
}

struct Prepared {
    cropped: ImageU8,
    flipped: ImageU8,
    augmented: ImageU8,
    normalized: ImageF32,
}

fn steps_one_to_four(img: &ImageU8, cfg: &AugmentConfig, rng: &mut RngStream) -> Prepared {
    rng.set_label(Stage::Crop.label());
    let b = sample_crop_box(img.width(), img.height(), cfg.area_range, cfg.aspect_range, rng);
    let cropped = resize_region(img, b.region(), cfg.out_size, cfg.out_size);

    rng.set_label(Stage::Flip.label());
    let flipped = if rng.bernoulli(cfg.flip_prob) { hflip(&cropped) } else { cropped.clone() };

    rng.set_label(Stage::AutoAugment.label());
    let augmented = autoaugment(&flipped, &cfg.policy, rng);

    let normalized = normalize(&augmented, cfg.mean, cfg.std);
    Prepared { cropped, flipped, augmented, normalized }
}

/// Runs the five training steps in order and keeps every intermediate:
/// random resized crop, flip, AutoAugment, normalize, then CutMix against
/// `partner` (itself taken through steps 1–4 on a stream forked from `rng`).
pub fn augment_traced(
    img: &ImageU8,
    class: usize,
    partner: Option<(&ImageU8, usize)>,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<AugmentTrace> {
    let own = steps_one_to_four(img, cfg, rng);
    let mut output = own.normalized.clone();
    let mut target = MixedTarget::hard(class);
    let mut partner_img = None;

    if let Some((other, other_class)) = partner {
        rng.set_label(Stage::CutMix.label());
        if rng.bernoulli(cfg.cutmix_prob) {
            let mut child = rng.fork();
            let prepared = steps_one_to_four(other, cfg, &mut child);
            rng.set_label(Stage::CutMix.label());
            let patch = match cfg.cutmix_patch {
                Some(p) => p,
                None => {
                    let lambda = rng.beta_symmetric(cfg.cutmix_alpha);
                    sample_patch(cfg.out_size, cfg.out_size, lambda, rng)
                }
            };
            (output, target) = paste_patch(&own.normalized, class, &prepared.normalized, other_class, patch)?;
            partner_img = Some(prepared.normalized);
        }
    }

    Ok(AugmentTrace {
        cropped: own.cropped,
        flipped: own.flipped,
        augmented: own.augmented,
        normalized: own.normalized,
        partner: partner_img,
        output,
        target,
    })
}

/// The training augmentation; see [`augment_traced`].
pub fn augment_train(
    img: &ImageU8,
    class: usize,
    partner: Option<(&ImageU8, usize)>,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<(ImageF32, MixedTarget)> {
    let t = augment_traced(img, class, partner, cfg, rng)?;
    Ok((t.output, t.target))
}
