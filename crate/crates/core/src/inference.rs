//! Test-time augmentation, probability fusion and top-1 scoring.
//!
//! Every image is evaluated on eight views (four scales × two crop methods).
//! Each view's probability is the mean of the model's prediction on the view
//! and on its mirror image; the image's prediction is the mean of the eight.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::{hflip, sample_region, ImageF32, ImageU8, Region};
use crate::imageops::{normalize_values, sample_crop_box, IMAGENET_MEAN, IMAGENET_STD};
use crate::matrix::Matrix;
use crate::model::TinyBackbone;
use crate::rng::RngStream;
use crate::tensor::Scalar;

/// The canonical evaluation resolutions at the 224-pixel reference size.
pub const CANONICAL_SCALES: [usize; 4] = [224, 320, 380, 448];

/// Reference crop size and the shorter-edge length it is cut from.
pub const REFERENCE_CROP: usize = 224;
pub const REFERENCE_RESIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CropMethod {
    /// Resize the shorter edge to `round(S·256/224)` and take the centered `S×S` square.
    CenterAfterShortEdgeResize,
    /// Random crop with area fraction in `[0.8, 1]`, resized to `S×S`.
    RandomArea80to100,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtaConfig {
    pub scales: Vec<usize>,
    pub area_range: (f64, f64),
    pub aspect_range: (f64, f64),
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for TtaConfig {
    fn default() -> Self {
        Self {
            scales: CANONICAL_SCALES.to_vec(),
            area_range: (0.8, 1.0),
            aspect_range: (3.0 / 4.0, 4.0 / 3.0),
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

impl TtaConfig {
    /// The canonical scales rescaled for a training resolution of `base`
    /// pixels (e.g. 32 → 32, 46, 54, 64).
    pub fn for_base_size(base: usize) -> Self {
        let scales = CANONICAL_SCALES
            .iter()
            .map(|&s| ((s * base) as f64 / REFERENCE_CROP as f64).round().max(1.0) as usize)
            .collect();
        Self { scales, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() || self.scales.contains(&0) {
            return Err(Error::Config(format!("TTA scales must be positive and non-empty, got {:?}", self.scales)));
        }
        let (lo, hi) = self.area_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::Config(format!("TTA area range must satisfy 0 < lo <= hi <= 1, got {lo}..{hi}")));
        }
        let (lo, hi) = self.aspect_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(Error::Config(format!("TTA aspect range must satisfy 0 < lo <= hi, got {lo}..{hi}")));
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("normalization std must be positive".into()));
        }
        Ok(())
    }
}

/// Where a view comes from: a source rectangle resampled to `scale × scale`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewPlan {
    pub scale: usize,
    pub method: CropMethod,
    pub region: Region,
}

impl ViewPlan {
    /// The same view taken from the mirrored image.
    pub fn mirrored(&self, width: usize) -> Self {
        Self { region: self.region.mirrored(width), ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TtaView {
    pub scale: usize,
    pub method: CropMethod,
    pub image: ImageF32,
}

/// Stable 64-bit key for a sample id.
pub fn sample_key(id: &str) -> u64 {
    let digest = Sha256::digest(id.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// The centered method-A region for scale `s`, in source pixel-edge
/// coordinates. The shorter edge is resized to `round(s·256/224)` and the
/// longer edge proportionally (rounded); the crop offset may be fractional so
/// the region stays exactly centered.
pub fn center_region(width: usize, height: usize, scale: usize) -> Region {
    let short = width.min(height) as f64;
    let target = (scale as f64 * REFERENCE_RESIZE as f64 / REFERENCE_CROP as f64).round();
    let rw = if width <= height { target } else { (width as f64 * target / short).round() };
    let rh = if height <= width { target } else { (height as f64 * target / short).round() };
    let (fx, fy) = (rw / width as f64, rh / height as f64);
    let s = scale as f64;
    Region { x: (rw - s) / 2.0 / fx, y: (rh - s) / 2.0 / fy, w: s / fx, h: s / fy }
}

/// Plans the eight views of one image. Method-B crops draw from a stream keyed
/// by `(seed, sample id, scale)`.
pub fn plan_views(width: usize, height: usize, id: &str, cfg: &TtaConfig, seed: u64) -> Result<Vec<ViewPlan>> {
    cfg.validate()?;
    if width == 0 || height == 0 {
        return Err(Error::Input(format!("degenerate image dimensions {width}x{height}")));
    }
    let key = sample_key(id);
    let mut plans = Vec::with_capacity(cfg.scales.len() * 2);
    for &scale in &cfg.scales {
        plans.push(ViewPlan { scale, method: CropMethod::CenterAfterShortEdgeResize, region: center_region(width, height, scale) });
        let mut rng = RngStream::new(seed, RngStream::stream_id(key, scale as u64));
        rng.set_label("tta-crop");
        let b = sample_crop_box(width, height, cfg.area_range, cfg.aspect_range, &mut rng);
        plans.push(ViewPlan { scale, method: CropMethod::RandomArea80to100, region: b.region() });
    }
    Ok(plans)
}

/// Resamples and normalizes one planned view (no intermediate 8-bit rounding).
pub fn render_view(img: &ImageU8, plan: &ViewPlan, cfg: &TtaConfig) -> TtaView {
    let values = sample_region(img, plan.region, plan.scale, plan.scale);
    let image = normalize_values(plan.scale, plan.scale, values.into_iter(), cfg.mean, cfg.std);
    TtaView { scale: plan.scale, method: plan.method, image }
}

pub fn make_views(img: &ImageU8, id: &str, cfg: &TtaConfig, seed: u64) -> Result<Vec<TtaView>> {
    let plans = plan_views(img.width(), img.height(), id, cfg, seed)?;
    Ok(plans.iter().map(|p| render_view(img, p, cfg)).collect())
}

/// Mean over views of the flip-averaged probabilities for explicit plans.
pub fn predict_planned<T: Scalar>(model: &TinyBackbone<T>, img: &ImageU8, plans: &[ViewPlan], cfg: &TtaConfig) -> Result<Vec<f64>> {
    if plans.is_empty() {
        return Err(Error::Input("no views to evaluate".into()));
    }
    let mut batch = Vec::with_capacity(plans.len() * 2);
    for p in plans {
        let v = render_view(img, p, cfg).image;
        batch.push(hflip(&v));
        batch.push(v);
    }
    // rows come in (flipped, plain) pairs
    let probs = model.predict_probs(&batch)?;
    let k = probs.cols();
    let mut out = vec![0.0; k];
    for pair in probs.as_slice().chunks_exact(2 * k) {
        let view: Vec<f64> = (0..k).map(|c| (pair[c] + pair[k + c]) / 2.0).collect();
        out.iter_mut().zip(&view).for_each(|(o, v)| *o += v);
    }
    let n = plans.len() as f64;
    out.iter_mut().for_each(|o| *o /= n);
    Ok(out)
}

pub fn predict_tta<T: Scalar>(model: &TinyBackbone<T>, img: &ImageU8, id: &str, cfg: &TtaConfig, seed: u64) -> Result<Vec<f64>> {
    let plans = plan_views(img.width(), img.height(), id, cfg, seed)?;
    predict_planned(model, img, &plans, cfg)
}

/// The single evaluation view at `scale`: the method-A center crop without
/// flip averaging.
pub fn single_view(img: &ImageU8, scale: usize, cfg: &TtaConfig) -> ImageF32 {
    let plan = ViewPlan {
        scale,
        method: CropMethod::CenterAfterShortEdgeResize,
        region: center_region(img.width(), img.height(), scale),
    };
    render_view(img, &plan, cfg).image
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

const ROW_TOLERANCE: f64 = 1e-9;

/// Class probabilities for an ordered list of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    ids: Vec<String>,
    probs: Matrix,
}

impl ProbMatrix {
    /// Validates ids (unique, non-empty, no whitespace) and rows (entries in
    /// `[0, 1]`, sums within 1e-9 of one).
    pub fn new(ids: Vec<String>, probs: Matrix) -> Result<Self> {
        if ids.len() != probs.rows() {
            return Err(Error::Input(format!("{} ids for {} rows", ids.len(), probs.rows())));
        }
        let mut seen = BTreeSet::new();
        for id in &ids {
            if id.is_empty() || id.chars().any(char::is_whitespace) {
                return Err(Error::Input(format!("sample id {id:?} must be non-empty without whitespace")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Input(format!("duplicate sample id {id}")));
            }
        }
        for (i, id) in ids.iter().enumerate() {
            let row = probs.row(i);
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Input(format!("row {id} has entries outside [0, 1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::Input(format!("row {id} sums to {sum}")));
            }
        }
        Ok(Self { ids, probs })
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    pub fn rows(&self) -> usize {
        self.probs.rows()
    }

    pub fn classes(&self) -> usize {
        self.probs.cols()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.probs.row(i)
    }

    pub fn predictions(&self) -> Vec<usize> {
        (0..self.rows()).map(|i| argmax(self.row(i))).collect()
    }

    /// Text form: a `probmatrix v1 N K` header, then `id p_0 … p_{K-1}` per
    /// row with nine significant digits.
    pub fn to_text(&self) -> String {
        let mut s = format!("probmatrix v1 {} {}\n", self.rows(), self.classes());
        for (i, id) in self.ids.iter().enumerate() {
            s.push_str(id);
            for p in self.row(i) {
                write!(s, " {p:.8e}").expect("writing to a string");
            }
            s.push('\n');
        }
        s
    }

    /// Parses [`ProbMatrix::to_text`] output. Rows are renormalized to undo
    /// the rounding of the printed digits.
    pub fn parse(text: &str) -> Result<Self> {
        let bad = |d: String| Error::format("probability matrix", d);
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file".into()))?.split_whitespace().collect();
        let (n, k) = match header.as_slice() {
            ["probmatrix", "v1", n, k] => (
                n.parse::<usize>().map_err(|e| bad(format!("row count: {e}")))?,
                k.parse::<usize>().map_err(|e| bad(format!("class count: {e}")))?,
            ),
            _ => return Err(bad(format!("bad header {:?}", header.join(" ")))),
        };
        let mut ids = Vec::with_capacity(n);
        let mut data = Vec::with_capacity(n * k);
        for (i, line) in lines.enumerate() {
            let mut fields = line.split_whitespace();
            let id = fields.next().expect("line is non-empty");
            let row = fields
                .map(|f| f.parse::<f64>().map_err(|e| bad(format!("line {}: {f:?}: {e}", i + 2))))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != k {
                return Err(bad(format!("row {id} has {} values, expected {k}", row.len())));
            }
            let sum: f64 = row.iter().sum();
            if !(sum > 0.0 && sum.is_finite()) {
                return Err(bad(format!("row {id} does not sum to a positive value")));
            }
            ids.push(id.to_string());
            data.extend(row.iter().map(|p| p / sum));
        }
        if ids.len() != n {
            return Err(bad(format!("header declares {n} rows, found {}", ids.len())));
        }
        let probs = Matrix::from_vec(n, k, data).map_err(|e| bad(e.to_string()))?;
        Self::new(ids, probs).map_err(|e| bad(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Elementwise mean of several probability matrices, aligned by sample id
/// (the first matrix's order is kept).
pub fn fuse(members: &[ProbMatrix]) -> Result<ProbMatrix> {
    let first = members.first().ok_or_else(|| Error::Fusion("nothing to fuse".into()))?;
    let reference: BTreeSet<&str> = first.ids.iter().map(String::as_str).collect();
    let mut sum = Matrix::zeros(first.rows(), first.classes());
    for (m, member) in members.iter().enumerate() {
        if member.classes() != first.classes() {
            return Err(Error::Fusion(format!("member {m} has {} classes, expected {}", member.classes(), first.classes())));
        }
        let ids: BTreeSet<&str> = member.ids.iter().map(String::as_str).collect();
        if ids != reference {
            let missing: Vec<&str> = reference.difference(&ids).copied().collect();
            let extra: Vec<&str> = ids.difference(&reference).copied().collect();
            return Err(Error::Fusion(format!("member {m} sample ids differ: missing {missing:?}, unexpected {extra:?}")));
        }
        let index: HashMap<&str, usize> = member.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        for (i, id) in first.ids.iter().enumerate() {
            let src = member.row(index[id.as_str()]);
            sum.row_mut(i).iter_mut().zip(src).for_each(|(s, p)| *s += p);
        }
    }
    let n = members.len() as f64;
    let data = sum.into_vec().into_iter().map(|v| v / n).collect();
    let probs = Matrix::from_vec(first.rows(), first.classes(), data)?;
    ProbMatrix::new(first.ids.clone(), probs)
}

/// Fraction of rows whose argmax (lowest index on ties) equals the label.
pub fn top1_accuracy(probs: &ProbMatrix, labels: &[usize]) -> Result<f64> {
    if labels.len() != probs.rows() {
        return Err(Error::Input(format!("{} labels for {} rows", labels.len(), probs.rows())));
    }
    if labels.is_empty() {
        return Err(Error::Input("no samples to score".into()));
    }
    let correct = probs.predictions().iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / labels.len() as f64)
}
