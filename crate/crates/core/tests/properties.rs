//! Property tests for the invariants of the augmentation, loss, schedule and
//! fusion code.

use proptest::prelude::*;
use recipe_core::image::{hflip, resize_bilinear, ImageF32, ImageU8};
use recipe_core::imageops::{paste_patch, sample_crop_box, sample_patch, MixedTarget};
use recipe_core::inference::{fuse, ProbMatrix};
use recipe_core::losses::{arcface_loss, batch_hard_triplet, ce_smoothed, smooth_targets, ArcFaceHead, TripletConfig};
use recipe_core::optim::LrSchedule;
use recipe_core::{Matrix, RngStream};

fn matrix(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Matrix {
    let mut rng = RngStream::new(seed, 0);
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.uniform_range(lo, hi)).collect()).unwrap()
}

fn prob_matrix(ids: &[String], k: usize, seed: u64) -> ProbMatrix {
    let raw = matrix(ids.len(), k, seed, 0.01, 1.0);
    let mut data = Vec::new();
    for i in 0..ids.len() {
        let s: f64 = raw.row(i).iter().sum();
        data.extend(raw.row(i).iter().map(|v| v / s));
    }
    ProbMatrix::new(ids.to_vec(), Matrix::from_vec(ids.len(), k, data).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn smoothed_targets_are_distributions(k in 2usize..200, eps in 0.0f64..0.999, y_frac in 0.0f64..1.0) {
        let y = ((k as f64 * y_frac) as usize).min(k - 1);
        let t = smooth_targets(y, k, eps).unwrap();
        let p = t.probs();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert_eq!(p[y], 1.0 - eps);
    }

    #[test]
    fn ce_gradient_rows_sum_to_zero(n in 1usize..6, k in 2usize..8, seed in any::<u64>(), eps in 0.0f64..0.5) {
        let logits = matrix(n, k, seed, -4.0, 4.0);
        let targets: Vec<MixedTarget> = (0..n).map(|i| MixedTarget::hard(i % k)).collect();
        let out = ce_smoothed(&logits, &targets, eps).unwrap();
        let g = out.grad_logits.unwrap();
        for i in 0..n {
            prop_assert!(g.row(i).iter().sum::<f64>().abs() < 1e-12);
        }
        prop_assert!(out.value >= 0.0);
    }

    #[test]
    fn triplet_is_nonnegative_and_translation_invariant(n in 4usize..12, d in 1usize..6, seed in any::<u64>(), shift in -5.0f64..5.0) {
        let emb = matrix(n, d, seed, -1.0, 1.0);
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let cfg = TripletConfig::default();
        let a = batch_hard_triplet(&emb, &labels, &cfg).unwrap();
        let moved = Matrix::from_vec(n, d, emb.as_slice().iter().map(|v| v + shift).collect()).unwrap();
        let b = batch_hard_triplet(&moved, &labels, &cfg).unwrap();
        prop_assert!(a.value >= 0.0);
        prop_assert!((a.value - b.value).abs() < 1e-9);
    }

    #[test]
    fn arcface_ignores_embedding_scale(n in 1usize..5, d in 2usize..6, k in 2usize..5, seed in any::<u64>()) {
        let emb = matrix(n, d, seed, -1.0, 1.0);
        let head = ArcFaceHead::new(matrix(k, d, seed ^ 1, -1.0, 1.0), 30.0, 0.5).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        let base = arcface_loss(&emb, &head, &labels).unwrap().value;
        for c in [0.5, 2.0, 10.0] {
            let scaled = Matrix::from_vec(n, d, emb.as_slice().iter().map(|v| v * c).collect()).unwrap();
            prop_assert!((arcface_loss(&scaled, &head, &labels).unwrap().value - base).abs() < 1e-9);
        }
    }

    #[test]
    fn cutmix_weights_match_pasted_fraction(w in 1usize..40, h in 1usize..40, lambda in 0.0f64..1.0, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 1);
        let patch = sample_patch(w, h, lambda, &mut rng);
        prop_assert!(patch.x0 <= patch.x1.max(patch.x0) && patch.x1 <= w && patch.y1 <= h);
        let base = ImageF32::filled(w, h, 0.0);
        let donor = ImageF32::filled(w, h, 1.0);
        let (mixed, target) = paste_patch(&base, 0, &donor, 1, patch).unwrap();
        let pasted = mixed.pixels().chunks(3).filter(|p| p[0] == 1.0).count();
        let donor_weight = target.entries().iter().find(|e| e.0 == 1).map_or(0.0, |e| e.1);
        prop_assert_eq!(donor_weight, pasted as f64 / (w * h) as f64);
        prop_assert!((target.entries().iter().map(|e| e.1).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn crop_boxes_stay_inside(w in 1usize..300, h in 1usize..300, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 2);
        let b = sample_crop_box(w, h, (0.08, 1.0), (0.75, 4.0 / 3.0), &mut rng);
        prop_assert!(b.w >= 1 && b.h >= 1);
        prop_assert!(b.x + b.w <= w && b.y + b.h <= h);
    }

    #[test]
    fn schedule_is_bounded_and_decays(base in 0.001f64..1.0, batch in 1usize..1024, warmup in 0usize..50, extra in 1usize..500) {
        let total = warmup + extra;
        let s = LrSchedule::new(base, batch, warmup, total).unwrap();
        let peak = s.initial_lr();
        let mut prev = f64::INFINITY;
        for step in 0..=total {
            let lr = s.lr_at(step).unwrap();
            prop_assert!((0.0..=peak * (1.0 + 1e-12)).contains(&lr));
            if step >= warmup {
                prop_assert!(lr <= prev + 1e-15);
                prev = lr;
            }
        }
        prop_assert!(s.lr_at(total).unwrap() <= 1e-12);
        prop_assert!(s.lr_at(total + 1).is_err());
    }

    #[test]
    fn fuse_is_order_free_and_stays_normalized(n in 1usize..10, k in 2usize..6, members in 1usize..5, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
        let list: Vec<ProbMatrix> = (0..members).map(|m| prob_matrix(&ids, k, seed.wrapping_add(m as u64))).collect();
        let fused = fuse(&list).unwrap();
        let mut reversed = list.clone();
        reversed.reverse();
        let again = fuse(&reversed).unwrap();
        for (a, b) in fused.probs().as_slice().iter().zip(again.probs().as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for i in 0..n {
            let row = fused.row(i);
            prop_assert!(row.iter().all(|&p| (0.0..=1.0).contains(&p)));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn probmatrix_text_roundtrip(n in 1usize..20, k in 2usize..12, seed in any::<u64>()) {
        let ids: Vec<String> = (0..n).map(|i| format!("img-{i}")).collect();
        let m = prob_matrix(&ids, k, seed);
        let back = ProbMatrix::parse(&m.to_text()).unwrap();
        prop_assert_eq!(back.ids(), m.ids());
        for (a, b) in back.probs().as_slice().iter().zip(m.probs().as_slice()) {
            prop_assert!((a - b).abs() <= 1e-8);
        }
    }

    #[test]
    fn hflip_twice_and_identity_resize(w in 1usize..20, h in 1usize..20, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed, 3);
        let img = ImageU8::from_pixels(w, h, (0..w * h * 3).map(|_| rng.below(256) as u8).collect()).unwrap();
        prop_assert_eq!(hflip(&hflip(&img)), img.clone());
        prop_assert_eq!(resize_bilinear(&img, w, h), img);
    }
}
