use crate::image::{resize_region, ImageU8, Region};
use crate::rng::RngStream;

/// Rejection-sampling attempts before falling back to a centered crop.
pub const CROP_ATTEMPTS: usize = 10;

/// An integer crop rectangle inside an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl CropBox {
    pub fn area_fraction(&self, width: usize, height: usize) -> f64 {
        (self.w * self.h) as f64 / (width * height) as f64
    }

    pub fn aspect(&self) -> f64 {
        self.w as f64 / self.h as f64
    }

    pub fn region(&self) -> Region {
        Region::from_box(self.x, self.y, self.w, self.h)
    }
}

/// Draws a crop whose area fraction lies in `area` and whose aspect ratio
/// (width / height) is log-uniform in `aspect`.
///
/// Candidate sides are rounded to whole pixels; a candidate is accepted only
/// if it fits and its rounded area still lies in `area`. After
/// [`CROP_ATTEMPTS`] failures the largest centered crop with the aspect ratio
/// clamped into range is returned.
pub fn sample_crop_box(
    width: usize,
    height: usize,
    area: (f64, f64),
    aspect: (f64, f64),
    rng: &mut RngStream,
) -> CropBox {
    let total = (width * height) as f64;
    let (log_lo, log_hi) = (aspect.0.ln(), aspect.1.ln());
    for _ in 0..CROP_ATTEMPTS {
        let target = total * rng.uniform_range(area.0, area.1);
        let ratio = rng.uniform_range(log_lo, log_hi).exp();
        let w = (target * ratio).sqrt().round() as usize;
        let h = (target / ratio).sqrt().round() as usize;
        if w == 0 || h == 0 || w > width || h > height {
            continue;
        }
        let frac = (w * h) as f64 / total;
        if frac < area.0 || frac > area.1 {
            continue;
        }
        let y = rng.below(height - h + 1);
        let x = rng.below(width - w + 1);
        return CropBox { x, y, w, h };
    }
    center_box(width, height, aspect)
}

fn center_box(width: usize, height: usize, aspect: (f64, f64)) -> CropBox {
    let in_ratio = width as f64 / height as f64;
    let (w, h) = if in_ratio < aspect.0 {
        (width, ((width as f64 / aspect.0).round() as usize).clamp(1, height))
    } else if in_ratio > aspect.1 {
        (((height as f64 * aspect.1).round() as usize).clamp(1, width), height)
    } else {
        (width, height)
    };
    CropBox { x: (width - w) / 2, y: (height - h) / 2, w, h }
}

/// Crops a random rectangle (see [`sample_crop_box`]) and resizes it to
/// `out_size × out_size` with bilinear interpolation.
pub fn random_resized_crop(
    img: &ImageU8,
    area: (f64, f64),
    aspect: (f64, f64),
    out_size: usize,
    rng: &mut RngStream,
) -> ImageU8 {
    let b = sample_crop_box(img.width(), img.height(), area, aspect, rng);
    resize_region(img, b.region(), out_size, out_size)
}
