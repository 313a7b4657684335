//! A compact convolutional classifier with an embedding head and a linear
//! classifier head, trained with hand-derived backpropagation.
//!
//! Architecture: three blocks of (3×3 conv, stride 1, same padding → ReLU →
//! 2×2 average pool), global average pooling, a linear embedding layer and
//! a linear classifier on top of the embedding. Activations are channel-last.
//! Any input of at least 8×8 pixels is accepted; global pooling absorbs the
//! spatial size.

mod checkpoint;
mod layers;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::image::ImageF32;
use crate::imageops::MixedTarget;
use crate::losses::{combined_loss, softmax, CombinedLossConfig, LossMode, LossOutput, ModelOutputs};
use crate::matrix::Matrix;
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};
use layers::{avgpool2, avgpool2_backward, col2im, conv_backward, conv_forward, im2col, relu, relu_backward};

/// Smallest accepted input side: three 2×2 poolings must leave one pixel.
pub const MIN_INPUT: usize = 8;

/// Samples per work unit; gradients are summed within a chunk and then across
/// chunks in order, so results do not depend on the thread count.
const CHUNK: usize = 8;

const CONV_NAMES: [(&str, &str); 3] = [("conv1.weight", "conv1.bias"), ("conv2.weight", "conv2.bias"), ("conv3.weight", "conv3.bias")];
const EMBED_W: usize = 6;
const EMBED_B: usize = 7;
const CLS_W: usize = 8;
const CLS_B: usize = 9;
const ARC_W: usize = 10;
pub const ARCFACE_WEIGHT: &str = "arcface.weight";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub channels: [usize; 3],
    pub embed_dim: usize,
    pub classes: usize,
    /// Nominal training resolution (square).
    pub input_size: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { channels: [16, 32, 64], embed_dim: 64, classes: 10, input_size: 32 }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.classes == 0 || self.channels.contains(&0) {
            return Err(Error::Config(format!("model dimensions must be positive: {self:?}")));
        }
        if self.input_size < MIN_INPUT {
            return Err(Error::Config(format!("input size must be at least {MIN_INPUT}, got {}", self.input_size)));
        }
        Ok(())
    }
}

/// Batch outputs converted to `f64` for the losses.
#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub embeddings: Matrix,
    pub logits: Matrix,
}

struct BlockCache<T> {
    h: usize,
    w: usize,
    col: Vec<T>,
    pre: Vec<T>,
}

struct SampleCache<T> {
    blocks: Vec<BlockCache<T>>,
    /// Spatial size after the last pooling.
    final_hw: (usize, usize),
    features: Vec<T>,
    embedding: Vec<T>,
}

struct SampleOut<T> {
    embedding: Vec<T>,
    logits: Vec<T>,
    cache: Option<SampleCache<T>>,
}

pub struct TinyBackbone<T> {
    config: ModelConfig,
    params: Vec<Tensor<T>>,
    cache: Option<Vec<SampleCache<T>>>,
}

impl<T: Scalar> Clone for TinyBackbone<T> {
    fn clone(&self) -> Self {
        Self { config: self.config, params: self.params.clone(), cache: None }
    }
}

impl<T: Scalar> std::fmt::Debug for TinyBackbone<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TinyBackbone").field("config", &self.config).field("parameters", &self.parameter_count()).finish()
    }
}

fn shapes(config: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    // (name, shape, fan_in)
    let mut out = Vec::new();
    let mut cin = 3;
    for (i, &cout) in config.channels.iter().enumerate() {
        out.push((CONV_NAMES[i].0.to_string(), vec![9 * cin, cout], 9 * cin));
        out.push((CONV_NAMES[i].1.to_string(), vec![cout], 9 * cin));
        cin = cout;
    }
    out.push(("embed.weight".into(), vec![cin, config.embed_dim], cin));
    out.push(("embed.bias".into(), vec![config.embed_dim], cin));
    out.push(("classifier.weight".into(), vec![config.embed_dim, config.classes], config.embed_dim));
    out.push(("classifier.bias".into(), vec![config.classes], config.embed_dim));
    out
}

impl<T: Scalar> TinyBackbone<T> {
    /// Fan-in scaled uniform initialization: `±√(6/fan_in)` for the ReLU
    /// convolutions, `±√(3/fan_in)` for the linear layers, zero biases.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = shapes(&config)
            .into_iter()
            .enumerate()
            .map(|(i, (name, shape, fan_in))| {
                let mut t = Tensor::zeros(name, &shape);
                if shape.len() == 2 {
                    let gain = if i < 6 { 6.0 } else { 3.0 };
                    let bound = (gain / fan_in as f64).sqrt();
                    let mut rng = RngStream::new(seed, i as u64);
                    t.data.iter_mut().for_each(|v| *v = T::of(rng.uniform_range(-bound, bound)));
                }
                t
            })
            .collect();
        Ok(Self { config, params, cache: None })
    }

    /// Rebuilds a model from tensors (names and shapes must match the config).
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor<T>>) -> Result<Self> {
        config.validate()?;
        let expected = shapes(&config);
        let extra = tensors.len().checked_sub(expected.len());
        if !matches!(extra, Some(0) | Some(1)) {
            return Err(Error::Input(format!("expected {} or {} tensors, got {}", expected.len(), expected.len() + 1, tensors.len())));
        }
        for ((name, shape, _), t) in expected.iter().zip(&tensors) {
            if &t.name != name || &t.shape != shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Input(format!("tensor {} {:?} does not match expected {name} {shape:?}", t.name, t.shape)));
            }
        }
        if let Some(arc) = tensors.get(ARC_W) {
            if arc.name != ARCFACE_WEIGHT || arc.shape != [config.classes, config.embed_dim] {
                return Err(Error::Input(format!("unexpected extra tensor {} {:?}", arc.name, arc.shape)));
            }
        }
        Ok(Self { config, params: tensors, cache: None })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Registers the ArcFace class-weight matrix (`K × D`) as a trainable
    /// parameter, initialized uniformly in `±√(3/D)`. No-op if present.
    pub fn attach_arcface_head(&mut self, seed: u64) {
        if self.arcface_weight().is_some() {
            return;
        }
        let (k, d) = (self.config.classes, self.config.embed_dim);
        let mut t = Tensor::zeros(ARCFACE_WEIGHT, &[k, d]);
        let bound = (3.0 / d as f64).sqrt();
        let mut rng = RngStream::new(seed, ARC_W as u64);
        t.data.iter_mut().for_each(|v| *v = T::of(rng.uniform_range(-bound, bound)));
        self.params.push(t);
    }

    pub fn arcface_weight(&self) -> Option<&Tensor<T>> {
        self.params.get(ARC_W)
    }

    /// The ArcFace weights as an `f64` matrix.
    pub fn arcface_matrix(&self) -> Option<Matrix> {
        self.arcface_weight().map(|t| {
            Matrix::from_vec(t.shape[0], t.shape[1], t.data.iter().map(|v| v.f64()).collect()).expect("shape checked")
        })
    }

    /// SHA-256 over every parameter's name, shape and little-endian bytes.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        let mut buf = Vec::new();
        for t in &self.params {
            h.update(t.name.as_bytes());
            for &d in &t.shape {
                h.update((d as u64).to_le_bytes());
            }
            buf.clear();
            t.data.iter().for_each(|v| v.write_le(&mut buf));
            h.update(&buf);
        }
        h.finalize().into()
    }

    fn check_input(&self, img: &ImageF32) -> Result<()> {
        if img.width() < MIN_INPUT || img.height() < MIN_INPUT {
            return Err(Error::Input(format!(
                "input {}x{} smaller than the minimum {MIN_INPUT}x{MIN_INPUT}",
                img.width(),
                img.height()
            )));
        }
        if let Some(v) = img.pixels().iter().find(|v| !v.is_finite()) {
            return Err(Error::Input(format!("input contains non-finite value {v}")));
        }
        Ok(())
    }

    fn forward_one(&self, img: &ImageF32, keep: bool) -> SampleOut<T> {
        let (mut h, mut w) = (img.height(), img.width());
        let mut x: Vec<T> = img.pixels().iter().map(|&v| T::of(v as f64)).collect();
        let mut cin = 3;
        let mut blocks = Vec::new();
        for b in 0..3 {
            let (wt, bias) = (&self.params[2 * b], &self.params[2 * b + 1]);
            let cout = bias.len();
            let col = im2col(&x, h, w, cin);
            let pre = conv_forward(&col, h * w, 9 * cin, &wt.data, &bias.data);
            x = avgpool2(&relu(&pre), h, w, cout);
            if keep {
                blocks.push(BlockCache { h, w, col, pre });
            }
            h /= 2;
            w /= 2;
            cin = cout;
        }
        let area = T::of((h * w) as f64);
        let mut features = vec![T::zero(); cin];
        for px in x.chunks_exact(cin) {
            for (f, &v) in features.iter_mut().zip(px) {
                *f += v;
            }
        }
        features.iter_mut().for_each(|f| *f = *f / area);

        let d = self.config.embed_dim;
        let mut embedding = self.params[EMBED_B].data.clone();
        T::gemm(1, cin, d, T::one(), &features, (cin as isize, 1), &self.params[EMBED_W].data, (d as isize, 1), T::one(), &mut embedding, d);
        let k = self.config.classes;
        let mut logits = self.params[CLS_B].data.clone();
        T::gemm(1, d, k, T::one(), &embedding, (d as isize, 1), &self.params[CLS_W].data, (k as isize, 1), T::one(), &mut logits, k);

        let cache = keep.then(|| SampleCache { blocks, final_hw: (h, w), features, embedding: embedding.clone() });
        SampleOut { embedding, logits, cache }
    }

    /// Gradient of one sample, accumulated into `grads`.
    fn backward_one(&self, cache: &SampleCache<T>, d_emb: &[T], d_logits: &[T], grads: &mut [Tensor<T>]) {
        let (d, k) = (self.config.embed_dim, self.config.classes);
        let c3 = cache.features.len();

        // classifier: logits = e·Wc + bc
        T::gemm(d, 1, k, T::one(), &cache.embedding, (1, 1), d_logits, (k as isize, 1), T::one(), &mut grads[CLS_W].data, k);
        grads[CLS_B].data.iter_mut().zip(d_logits).for_each(|(g, &v)| *g += v);
        let mut de = d_emb.to_vec();
        T::gemm(1, k, d, T::one(), d_logits, (k as isize, 1), &self.params[CLS_W].data, (1, k as isize), T::one(), &mut de, d);

        // embedding: e = f·We + be
        T::gemm(c3, 1, d, T::one(), &cache.features, (1, 1), &de, (d as isize, 1), T::one(), &mut grads[EMBED_W].data, d);
        grads[EMBED_B].data.iter_mut().zip(&de).for_each(|(g, &v)| *g += v);
        let mut df = vec![T::zero(); c3];
        T::gemm(1, d, c3, T::one(), &de, (d as isize, 1), &self.params[EMBED_W].data, (1, d as isize), T::zero(), &mut df, c3);

        // global average pooling
        let (fh, fw) = cache.final_hw;
        let inv_area = T::one() / T::of((fh * fw) as f64);
        let mut dx: Vec<T> = (0..fh * fw).flat_map(|_| df.iter().map(|&g| g * inv_area)).collect();

        for b in (0..3).rev() {
            let blk = &cache.blocks[b];
            let cout = self.params[2 * b + 1].len();
            let cin = if b == 0 { 3 } else { self.params[2 * b - 1].len() };
            let mut dpre = avgpool2_backward(&dx, blk.h, blk.w, cout);
            relu_backward(&blk.pre, &mut dpre);
            let (gw, rest) = grads[2 * b..].split_at_mut(1);
            let dcol = conv_backward(
                &blk.col,
                &dpre,
                blk.h * blk.w,
                9 * cin,
                &self.params[2 * b].data,
                &mut gw[0].data,
                &mut rest[0].data,
                b > 0,
            );
            if let Some(dcol) = dcol {
                dx = col2im(&dcol, blk.h, blk.w, cin);
            }
        }
    }

    fn collect(&self, outs: &[SampleOut<T>]) -> Outputs {
        let n = outs.len();
        let to64 = |v: &[T]| v.iter().map(|x| x.f64()).collect::<Vec<_>>();
        let emb: Vec<f64> = outs.iter().flat_map(|o| to64(&o.embedding)).collect();
        let logits: Vec<f64> = outs.iter().flat_map(|o| to64(&o.logits)).collect();
        Outputs {
            embeddings: Matrix::from_vec(n, self.config.embed_dim, emb).expect("sizes agree"),
            logits: Matrix::from_vec(n, self.config.classes, logits).expect("sizes agree"),
        }
    }

    /// Inference forward pass; never touches model state.
    pub fn forward(&self, batch: &[ImageF32]) -> Result<Outputs> {
        batch.iter().try_for_each(|img| self.check_input(img))?;
        let outs: Vec<SampleOut<T>> = batch.par_iter().map(|img| self.forward_one(img, false)).collect();
        Ok(self.collect(&outs))
    }

    /// Training forward pass; caches activations for [`TinyBackbone::backward`].
    pub fn forward_train(&mut self, batch: &[ImageF32]) -> Result<Outputs> {
        batch.iter().try_for_each(|img| self.check_input(img))?;
        let mut outs: Vec<SampleOut<T>> = batch.par_iter().map(|img| self.forward_one(img, true)).collect();
        let result = self.collect(&outs);
        self.cache = Some(outs.iter_mut().map(|o| o.cache.take().expect("cached")).collect());
        Ok(result)
    }

    /// Parameter gradients for the batch seen by the last
    /// [`TinyBackbone::forward_train`], given upstream gradients with respect
    /// to embeddings (`N × D`) and logits (`N × K`). The two heads' paths sum
    /// in the trunk. The ArcFace weight, if attached, gets a zero gradient
    /// here; its gradient comes from the loss.
    pub fn backward(&mut self, d_emb: &Matrix, d_logits: &Matrix) -> Result<Vec<Tensor<T>>> {
        let cache = self.cache.take().ok_or_else(|| Error::Usage("backward called without a cached training forward pass".into()))?;
        let n = cache.len();
        if d_emb.shape() != (n, self.config.embed_dim) || d_logits.shape() != (n, self.config.classes) {
            return Err(Error::Input(format!(
                "upstream gradients {:?}/{:?} do not match batch of {n}",
                d_emb.shape(),
                d_logits.shape()
            )));
        }
        let zero_grads = || self.params.iter().map(Tensor::zeros_like).collect::<Vec<_>>();
        let partial: Vec<Vec<Tensor<T>>> = cache
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(c, chunk)| {
                let mut g = zero_grads();
                for (j, sc) in chunk.iter().enumerate() {
                    let i = c * CHUNK + j;
                    let de: Vec<T> = d_emb.row(i).iter().map(|&v| T::of(v)).collect();
                    let dl: Vec<T> = d_logits.row(i).iter().map(|&v| T::of(v)).collect();
                    self.backward_one(sc, &de, &dl, &mut g);
                }
                g
            })
            .collect();
        let mut grads = zero_grads();
        for p in &partial {
            for (g, pg) in grads.iter_mut().zip(p) {
                g.add_assign(pg);
            }
        }
        Ok(grads)
    }

    /// Training forward pass, combined loss and backward pass for one batch.
    /// The returned gradients cover every parameter, including the ArcFace
    /// weights when attached.
    pub fn loss_and_grads(
        &mut self,
        batch: &[ImageF32],
        targets: &[MixedTarget],
        cfg: &CombinedLossConfig,
    ) -> Result<(LossOutput, Vec<Tensor<T>>)> {
        let head = match cfg.mode {
            LossMode::CeArcFace => Some(
                self.arcface_matrix().ok_or_else(|| Error::Config("ce+arcface needs an attached arcface head".into()))?,
            ),
            _ => None,
        };
        let out = self.forward_train(batch)?;
        let loss = combined_loss(
            ModelOutputs { logits: &out.logits, embeddings: Some(&out.embeddings) },
            targets,
            head.as_ref(),
            cfg,
        )?;
        let d_emb = loss.grad_embeddings.clone().unwrap_or_else(|| Matrix::zeros(batch.len(), self.config.embed_dim));
        let d_logits = loss.grad_logits.clone().expect("cross-entropy always yields logit gradients");
        let mut grads = self.backward(&d_emb, &d_logits)?;
        if let Some(g) = &loss.grad_head {
            grads[ARC_W].data = g.as_slice().iter().map(|&v| T::of(v)).collect();
        }
        Ok((loss, grads))
    }

    /// Row-wise softmax of the classifier logits, in `f64`.
    pub fn predict_probs(&self, batch: &[ImageF32]) -> Result<Matrix> {
        let out = self.forward(batch)?;
        let mut probs = out.logits.clone();
        for i in 0..probs.rows() {
            let p = softmax(out.logits.row(i));
            probs.row_mut(i).copy_from_slice(&p);
        }
        Ok(probs)
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> TinyBackbone<U> {
        TinyBackbone { config: self.config, params: self.params.iter().map(Tensor::cast).collect(), cache: None }
    }

    /// Signature of every ReLU decision for `batch`, used by gradient audits
    /// to avoid finite-difference steps across a kink.
    pub fn activation_pattern(&self, batch: &[ImageF32]) -> Vec<bool> {
        batch
            .iter()
            .flat_map(|img| {
                let out = self.forward_one(img, true);
                out.cache.expect("kept").blocks.into_iter().flat_map(|b| b.pre.into_iter().map(|v| v > T::zero()))
            })
            .collect()
    }

    /// Smallest |pre-activation| over the batch.
    pub fn kink_distance(&self, batch: &[ImageF32]) -> f64 {
        batch
            .iter()
            .flat_map(|img| {
                let out = self.forward_one(img, true);
                out.cache.expect("kept").blocks.into_iter().flat_map(|b| b.pre.into_iter().map(|v| v.f64().abs()))
            })
            .fold(f64::INFINITY, f64::min)
    }
}
