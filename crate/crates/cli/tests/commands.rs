//! End-to-end checks of the `recipe` binary on tiny datasets.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use recipe_core::image::write_ppm;
use recipe_core::inference::ProbMatrix;
use recipe_core::model::{load_checkpoint, ModelConfig, TinyBackbone};
use recipe_core::{ImageU8, RngStream};

fn recipe(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_recipe")).current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(out: &Output) -> String {
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(out.status.success(), "exit {:?}\nstdout:\n{stdout}\nstderr:\n{}", out.status, String::from_utf8_lossy(&out.stderr));
    stdout
}

/// Two colour classes with pixel noise: dark red vs light blue.
/// The config keeps the peak rate at 0.1 for the small batch (16/256 · 1.6).
fn separable_set(dir: &Path, per_class: usize) -> PathBuf {
    fs::create_dir_all(dir.join("img")).unwrap();
    let mut rows = vec!["sample_id,path,class_index".to_string()];
    for i in 0..2 * per_class {
        let class = i % 2;
        let mut rng = RngStream::new(42, i as u64);
        let base: [f64; 3] = if class == 0 { [150.0, 40.0, 40.0] } else { [60.0, 110.0, 200.0] };
        let pixels = (0..16 * 16 * 3).map(|k| (base[k % 3] + rng.uniform_range(-30.0, 30.0)) as u8).collect();
        let img = ImageU8::from_pixels(16, 16, pixels).unwrap();
        let rel = format!("img/s{i:03}.ppm");
        write_ppm(dir.join(&rel), &img).unwrap();
        rows.push(format!("s{i:03},{rel},{class}"));
    }
    let manifest = dir.join("train.csv");
    fs::write(&manifest, rows.join("\n") + "\n").unwrap();
    fs::write(
        dir.join("run.cfg"),
        "train_manifest = train.csv\nval_manifest = train.csv\nclasses = 2\nimage_size = 16\nchannels = 8,8,8\n\
         embed_dim = 8\nbatch_size = 16\nbase_lr = 1.6\nepochs = 5\ncutmix_prob = 0\nautoaugment = none\n",
    )
    .unwrap();
    manifest
}

fn log_rows(path: &Path) -> Vec<Vec<f64>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn short_run_learns_a_separable_task_and_eval_agrees_with_log() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    separable_set(dir, 32);
    ok(&recipe(dir, &["train", "--config", "run.cfg", "--out", "a", "--threads", "1"]));
    let log = fs::read_to_string(dir.join("a/train-log.csv")).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,step,lr,loss,top1"));
    let rows = log_rows(&dir.join("a/train-log.csv"));
    assert_eq!(rows.len(), 5);
    let final_top1 = rows[4][4];
    assert!(final_top1 >= 0.95, "train top-1 {final_top1}");
    assert!(dir.join("a/resolved-config.txt").exists());

    let out = ok(&recipe(dir, &["eval", "--config", "run.cfg", "--out", "e", "--checkpoint", "a/checkpoint.bin", "--manifest", "train.csv", "--tta", "off"]));
    let reported: f64 = out.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((reported - final_top1).abs() <= 0.005, "eval {reported} vs log {final_top1}");

    ok(&recipe(dir, &["eval", "--config", "run.cfg", "--out", "t", "--checkpoint", "a/checkpoint.bin", "--manifest", "train.csv"]));
    let probs = ProbMatrix::read(&dir.join("t/probs.txt")).unwrap();
    assert_eq!(probs.rows(), 64);
    let text = fs::read_to_string(dir.join("t/probs.txt")).unwrap();
    assert_eq!(text.lines().count(), 65);
}

#[test]
fn runs_are_byte_identical_single_threaded() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    separable_set(dir, 12);
    for run in ["r1", "r2"] {
        ok(&recipe(dir, &["train", "--config", "run.cfg", "--out", run, "--threads", "1", "--set", "epochs=2", "--set", "cutmix_prob=0.5", "--set", "autoaugment=imagenet"]));
        ok(&recipe(dir, &["eval", "--config", "run.cfg", "--out", &format!("{run}/eval"), "--threads", "1", "--checkpoint", &format!("{run}/checkpoint.bin")]));
    }
    for file in ["checkpoint.bin", "train-log.csv", "eval/probs.txt"] {
        assert_eq!(fs::read(dir.join("r1").join(file)).unwrap(), fs::read(dir.join("r2").join(file)).unwrap(), "{file}");
    }
    // Thread count does not change the result either.
    ok(&recipe(dir, &["train", "--config", "run.cfg", "--out", "r3", "--threads", "3", "--set", "epochs=2", "--set", "cutmix_prob=0.5", "--set", "autoaugment=imagenet"]));
    assert_eq!(fs::read(dir.join("r1/checkpoint.bin")).unwrap(), fs::read(dir.join("r3/checkpoint.bin")).unwrap());
}

#[test]
fn zero_epochs_saves_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    separable_set(dir, 4);
    ok(&recipe(dir, &["train", "--config", "run.cfg", "--out", "z", "--set", "epochs=0", "--seed", "7"]));
    assert_eq!(fs::read_to_string(dir.join("z/train-log.csv")).unwrap(), "epoch,step,lr,loss,top1\n");
    let ck = load_checkpoint::<f32>(&dir.join("z/checkpoint.bin")).unwrap();
    let config = ModelConfig { channels: [8, 8, 8], embed_dim: 8, classes: 2, input_size: 16 };
    assert_eq!(ck.model.digest(), TinyBackbone::<f32>::init(config, 7).unwrap().digest());
}

#[test]
fn metric_losses_require_a_first_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    separable_set(dir, 4);
    let out = recipe(dir, &["train", "--config", "run.cfg", "--set", "loss=ce+arcface"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("loss = ce first"));
    let out = recipe(dir, &["train", "--config", "run.cfg", "--out", "s", "--set", "loss=ce+arcface", "--set", "epochs=1", "--set", "warmup_epochs=0", "--from-scratch"]);
    ok(&out);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    separable_set(dir, 2);
    assert_eq!(recipe(dir, &["train", "--config", "run.cfg", "--set", "epoch=3"]).status.code(), Some(2));
    fs::write(dir.join("bad.cfg"), "classes = 2\nlearning_rate = 0.1\n").unwrap();
    let out = recipe(dir, &["train", "--config", "bad.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
    assert_eq!(recipe(dir, &["train", "--config", "missing.cfg"]).status.code(), Some(2));
}

#[test]
fn preview_sidecars_follow_cutmix_probability() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    separable_set(dir, 4);
    for (name, prob, classes) in [("mix", "1", 2), ("plain", "0", 1)] {
        ok(&recipe(dir, &["augment-preview", "--config", "run.cfg", "--out", name, "--n", "4", "--set", &format!("cutmix_prob={prob}")]));
        for i in 0..4 {
            for stage in ["1_crop", "2_flip", "3_autoaugment", "4_cutmix"] {
                assert!(dir.join(format!("{name}/preview_{i:03}_{stage}.ppm")).exists());
            }
            let side = fs::read_to_string(dir.join(format!("{name}/preview_{i:03}.txt"))).unwrap();
            let target = side.lines().find_map(|l| l.strip_prefix("target = ")).expect("target line");
            let parts: Vec<f64> = target.split_whitespace().map(|p| p.split_once(':').unwrap().1.parse().unwrap()).collect();
            assert_eq!(parts.len(), classes, "{side}");
            assert!((parts.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }
    ok(&recipe(dir, &["augment-preview", "--config", "run.cfg", "--out", "again", "--n", "4", "--set", "cutmix_prob=1"]));
    for i in 0..4 {
        let f = format!("preview_{i:03}_4_cutmix.ppm");
        assert_eq!(fs::read(dir.join("mix").join(&f)).unwrap(), fs::read(dir.join("again").join(&f)).unwrap());
    }
}

#[test]
fn ensemble_of_copies_equals_member() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    separable_set(dir, 6);
    ok(&recipe(dir, &["train", "--config", "run.cfg", "--out", "m", "--set", "epochs=1", "--set", "warmup_epochs=0"]));
    ok(&recipe(dir, &["eval", "--config", "run.cfg", "--out", "m", "--checkpoint", "m/checkpoint.bin", "--tta", "off"]));
    let single = ProbMatrix::read(&dir.join("m/probs.txt")).unwrap();
    for copies in [1, 3] {
        let mut args = vec!["ensemble", "--config", "run.cfg", "--out", "ens"];
        args.extend(std::iter::repeat_n("m/probs.txt", copies));
        ok(&recipe(dir, &args));
        let fused = ProbMatrix::read(&dir.join("ens/ensemble.txt")).unwrap();
        assert_eq!(fused.ids(), single.ids());
        for (a, b) in fused.probs().as_slice().iter().zip(single.probs().as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
    // Mismatched id sets are reported explicitly.
    let text = fs::read_to_string(dir.join("m/probs.txt")).unwrap();
    let renamed = text.replacen("s000", "zzz", 1);
    fs::write(dir.join("other.txt"), renamed).unwrap();
    let out = recipe(dir, &["ensemble", "--config", "run.cfg", "--out", "ens", "m/probs.txt", "other.txt"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("s000") && err.contains("zzz"), "{err}");
}

#[test]
fn grad_check_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = recipe(tmp.path(), &["grad-check", "--points", "3"]);
    let text = ok(&out);
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 4, "{text}");
    let out = recipe(tmp.path(), &["grad-check", "--points", "3", "--perturb", "0.01"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn synthetic_data_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    for out in ["a", "b"] {
        ok(&recipe(dir, &["make-synthetic", "--out", out, "--seed", "3", "--classes", "4", "--per-class", "6", "--val-per-class", "2", "--size", "16"]));
    }
    let train = fs::read_to_string(dir.join("a/train.csv")).unwrap();
    assert_eq!(train.lines().count(), 1 + 4 * 6);
    assert_eq!(fs::read_to_string(dir.join("a/val.csv")).unwrap().lines().count(), 1 + 4 * 2);
    for line in train.lines().skip(1).chain(fs::read_to_string(dir.join("a/val.csv")).unwrap().lines().skip(1)) {
        let path = line.split(',').nth(1).unwrap();
        assert_eq!(fs::read(dir.join("a").join(path)).unwrap(), fs::read(dir.join("b").join(path)).unwrap());
    }
}
