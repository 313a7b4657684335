//! Model-level invariants: batch gradients, read-only inference, mirror
//! symmetry of test-time views.

use proptest::prelude::*;
use recipe_core::image::hflip;
use recipe_core::imageops::{normalize, MixedTarget};
use recipe_core::inference::{plan_views, predict_planned, TtaConfig};
use recipe_core::losses::CombinedLossConfig;
use recipe_core::model::{ModelConfig, TinyBackbone};
use recipe_core::{ImageF32, ImageU8, RngStream};

fn small_config() -> ModelConfig {
    ModelConfig { channels: [4, 6, 8], embed_dim: 8, classes: 5, input_size: 12 }
}

fn random_image(w: usize, h: usize, rng: &mut RngStream) -> ImageU8 {
    ImageU8::from_pixels(w, h, (0..w * h * 3).map(|_| rng.below(256) as u8).collect()).unwrap()
}

fn batch(n: usize, size: usize, seed: u64) -> Vec<ImageF32> {
    let mut rng = RngStream::new(seed, 7);
    let cfg = TtaConfig::default();
    (0..n).map(|_| normalize(&random_image(size, size, &mut rng), cfg.mean, cfg.std)).collect()
}

#[test]
fn batch_gradient_is_mean_of_sample_gradients() {
    let mut model = TinyBackbone::<f64>::init(small_config(), 3).unwrap();
    let images = batch(5, 12, 11);
    let targets: Vec<MixedTarget> = (0..5).map(|i| MixedTarget::hard(i % 5)).collect();
    let cfg = CombinedLossConfig::default();
    let (loss, grads) = model.loss_and_grads(&images, &targets, &cfg).unwrap();

    let mut mean_loss = 0.0;
    let mut mean: Vec<Vec<f64>> = grads.iter().map(|g| vec![0.0; g.len()]).collect();
    for i in 0..5 {
        let (l, g) = model.loss_and_grads(&images[i..=i], &targets[i..=i], &cfg).unwrap();
        mean_loss += l.value / 5.0;
        for (acc, t) in mean.iter_mut().zip(&g) {
            for (a, v) in acc.iter_mut().zip(&t.data) {
                *a += v / 5.0;
            }
        }
    }
    assert!((loss.value - mean_loss).abs() < 1e-9);
    for (g, m) in grads.iter().zip(&mean) {
        for (a, b) in g.data.iter().zip(m) {
            assert!((a - b).abs() < 1e-9, "{}: {a} vs {b}", g.name);
        }
    }
}

#[test]
fn inference_leaves_parameters_untouched() {
    let model = TinyBackbone::<f32>::init(ModelConfig::default(), 5).unwrap();
    let before = model.digest();
    let images = batch(3, 32, 2);
    let probs = model.predict_probs(&images).unwrap();
    for i in 0..3 {
        assert!((probs.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    assert_eq!(model.digest(), before);
}

#[test]
fn forward_is_deterministic_across_calls() {
    let model = TinyBackbone::<f32>::init(ModelConfig::default(), 9).unwrap();
    let images = batch(4, 32, 4);
    assert_eq!(model.forward(&images).unwrap().logits, model.forward(&images).unwrap().logits);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tta_is_invariant_to_mirroring(w in 12usize..40, h in 12usize..40, seed in any::<u64>()) {
        let model = TinyBackbone::<f32>::init(small_config(), seed).unwrap();
        let mut rng = RngStream::new(seed, 1);
        let img = random_image(w, h, &mut rng);
        let cfg = TtaConfig::for_base_size(12);
        let plans = plan_views(w, h, "sample", &cfg, seed).unwrap();
        let mirrored: Vec<_> = plans.iter().map(|p| p.mirrored(w)).collect();
        let a = predict_planned(&model, &img, &plans, &cfg).unwrap();
        let b = predict_planned(&model, &hflip(&img), &mirrored, &cfg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }
}
