//! Acceptance suite: one test per criterion, each printing a PASS line with
//! the measured values.
//!
//! The synthetic-overfit experiment (criteria 6 and 7) runs once through the
//! actual CLI binary and is shared. Wall-clock-sensitive tests serialize on
//! a mutex so they never compete for the core they are timing.

use std::path::PathBuf;
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sarseg::baseline::threshold_baseline_mask;
use sarseg::data::{
    load_mask, load_tile, sample_geometry, scene_rng, synth_scene, DatasetManifest, SceneSpec,
    Split,
};
use sarseg::fusion::{self, channel_attention, AttentionParams, FusionConfig};
use sarseg::gradcheck::run_all_checks;
use sarseg::loss::{bce_loss, dice_loss, total_loss, LossConfig};
use sarseg::metrics::{confusion, metrics, rank_auc, roc_auc};
use sarseg::model::{FusionNet, ModelConfig};
use sarseg::ops::{maxpool2x2, maxunpool2x2};
use sarseg::tensor::{ParamStore, Shape, Tensor};
use sarseg::train::{iou_over_items, load_checkpoint};

static TIMING_LOCK: Mutex<()> = Mutex::new(());

fn timing_guard() -> std::sync::MutexGuard<'static, ()> {
    TIMING_LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn sarseg_cli(args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_sarseg"))
        .args(args)
        .output()
        .expect("binary runs");
    assert!(
        out.status.success(),
        "sarseg {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The shared scaled-down overfit experiment, run once through the CLI.
struct OverfitRun {
    _dir: tempfile::TempDir,
    dataset: PathBuf,
    run_dir: PathBuf,
    train_iou: f64,
    holdout_iou: f64,
    duration: Duration,
}

const OVERFIT_SEED: u64 = 7;
const OVERFIT_COUNT: usize = 40;
const OVERFIT_SIZE: usize = 64;

fn overfit() -> &'static OverfitRun {
    static RUN: OnceLock<OverfitRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let guard = timing_guard();
        let dir = tempfile::tempdir().expect("tempdir");
        let dataset = dir.path().join("dataset");
        let run_dir = dir.path().join("run");
        let config = dir.path().join("config.json");
        // The published protocol (lr 1e-4, 50 epochs) targets ~20k optimizer
        // steps on the full corpus; this 32-image experiment sees 400 steps,
        // so the schedule is scaled to 200 epochs at 10x the learning rate.
        std::fs::write(&config, r#"{"train": {"epochs": 200, "lr0": 0.001}}"#).unwrap();

        let start = Instant::now();
        sarseg_cli(&[
            "synth",
            "--out",
            dataset.to_str().unwrap(),
            "--count",
            &OVERFIT_COUNT.to_string(),
            "--seed",
            &OVERFIT_SEED.to_string(),
            "--size",
            &OVERFIT_SIZE.to_string(),
        ]);
        sarseg_cli(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            dataset.to_str().unwrap(),
            "--out",
            run_dir.to_str().unwrap(),
        ]);
        let duration = start.elapsed();
        drop(guard);

        let (net, _) = load_checkpoint(&run_dir).expect("checkpoint loads");
        let manifest = DatasetManifest::load(&dataset).expect("manifest loads");
        let train_items = manifest.load_split(&dataset, Split::Train).unwrap();
        let val_items = manifest.load_split(&dataset, Split::Test).unwrap();
        let train_iou = iou_over_items(&net, &train_items, 0.5).unwrap();
        let holdout_iou = iou_over_items(&net, &val_items, 0.5).unwrap();
        OverfitRun {
            _dir: dir,
            dataset,
            run_dir,
            train_iou,
            holdout_iou,
            duration,
        }
    })
}

#[test]
fn criterion_1_gradient_suite() {
    let _guard = timing_guard();
    let start = Instant::now();
    let results = run_all_checks(2024, 10).expect("checks run");
    let elapsed = start.elapsed();
    for r in &results {
        assert!(
            r.pass,
            "{} failed: max rel err {} >= tolerance {}",
            r.name, r.max_rel_err, r.tolerance
        );
    }
    // Every differentiable operator and each full branch is covered.
    let names: Vec<&str> = results.iter().map(|r| r.name.as_str()).collect();
    for required in [
        "conv2d",
        "maxpool2x2",
        "maxunpool2x2",
        "global_avg_pool",
        "bilinear_upsample",
        "relu",
        "sigmoid",
        "concat_channels",
        "segnet_branch",
        "deeplab_branch",
        "fusion_head",
        "total_loss",
    ] {
        assert!(names.contains(&required), "missing {required}");
    }
    assert!(
        elapsed < Duration::from_secs(60),
        "gradient suite took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 1 PASS: {} checks x 10 seeds in {:.1}s, worst error {:.2e}",
        results.len(),
        elapsed.as_secs_f64(),
        results.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    );
}

#[test]
fn criterion_2_pooling_index_suite() {
    let _guard = timing_guard();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for round in 0..1000 {
        let shape = Shape::new(1, 2, 8, 8);
        // Half the tensors are quantized to force plentiful ties.
        let quantized = round % 2 == 1;
        let data: Vec<f64> = (0..shape.count())
            .map(|_| {
                let v: f64 = rng.random_range(-1.0..1.0);
                if quantized {
                    (v * 3.0).round() / 3.0
                } else {
                    v
                }
            })
            .collect();
        let x = Tensor::from_vec(shape, data).unwrap();

        let (y, idx) = maxpool2x2(&x).unwrap();
        let (y2, idx2) = maxpool2x2(&x).unwrap();
        assert_eq!(y.data(), y2.data());
        assert_eq!(idx.indices(), idx2.indices(), "round {round}: ties must be deterministic");

        // First-max tie-break against an exhaustive scan.
        for n in 0..1 {
            for c in 0..2 {
                let plane = x.plane(n, c);
                for oy in 0..4 {
                    for ox in 0..4 {
                        let mut best_pos = 2 * oy * 8 + 2 * ox;
                        let mut best = plane[best_pos];
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let pos = (2 * oy + dy) * 8 + 2 * ox + dx;
                            if plane[pos] > best {
                                best = plane[pos];
                                best_pos = pos;
                            }
                        }
                        assert_eq!(y.at(n, c, oy, ox), best);
                        let got = idx.indices()[((n * 2 + c) * 4 + oy) * 4 + ox];
                        assert_eq!(got, best_pos, "round {round}");
                    }
                }
            }
        }

        // Round trip: zeros everywhere except the recorded argmax positions,
        // which hold the window maxima.
        let up = maxunpool2x2(&y, &idx).unwrap();
        for n in 0..1 {
            for c in 0..2 {
                let plane = up.plane(n, c);
                let offset = (n * 2 + c) * 16;
                let recorded = &idx.indices()[offset..offset + 16];
                for (pos, &v) in plane.iter().enumerate() {
                    if recorded.contains(&pos) {
                        assert_eq!(v, x.plane(n, c)[pos]);
                    } else {
                        assert_eq!(v, 0.0);
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed < Duration::from_secs(10),
        "pooling suite took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 2 PASS: 1000 tensors in {:.2}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_3_metrics_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);

    for round in 0..100 {
        let shape = Shape::new(1, 1, 8, 8);
        let bern = |rng: &mut ChaCha8Rng, p: f64| if rng.random_bool(p) { 1.0 } else { 0.0 };
        let p_pos = rng.random_range(0.1..0.9);
        let pred =
            Tensor::from_vec(shape, (0..64).map(|_| bern(&mut rng, p_pos)).collect()).unwrap();
        let gt = Tensor::from_vec(shape, (0..64).map(|_| bern(&mut rng, 0.5)).collect()).unwrap();

        // Independent brute-force evaluation straight from the definitions.
        let (mut tp, mut tn, mut fp, mut fal_n) = (0u64, 0u64, 0u64, 0u64);
        for (&a, &b) in pred.data().iter().zip(gt.data()) {
            match (a == 1.0, b == 1.0) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fal_n += 1,
            }
        }
        let counts = confusion(&pred, &gt).unwrap();
        assert_eq!(
            (tp, tn, fp, fal_n),
            (
                counts.true_pos,
                counts.true_neg,
                counts.false_pos,
                counts.false_neg
            ),
            "round {round}"
        );
        let m = metrics(&counts).unwrap();
        let (tp, tn, fp, fal_n) = (tp as f64, tn as f64, fp as f64, fal_n as f64);
        assert_eq!(m.accuracy, (tp + tn) / (tp + tn + fp + fal_n));
        if tp + fp > 0.0 {
            assert_eq!(m.precision, tp / (tp + fp));
        }
        if tp + fal_n > 0.0 {
            assert_eq!(m.recall, tp / (tp + fal_n));
        }
        if tp + fp + fal_n > 0.0 {
            assert_eq!(m.iou, tp / (tp + fp + fal_n));
        }
        if m.precision + m.recall > 0.0 {
            assert_eq!(
                m.f1,
                2.0 * m.precision * m.recall / (m.precision + m.recall)
            );
        }
        if m.iou > 0.0 {
            assert!((m.f1 - 2.0 * m.iou / (1.0 + m.iou)).abs() < 1e-12, "round {round}");
        }
    }

    // Trapezoid vs rank-statistic AUC on 100 random score sets with ties.
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let n = rng.random_range(8..128);
        let levels = rng.random_range(2..10);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        labels[0] = true;
        labels[1] = false;
        let (_, trap) = roc_auc(&scores, &labels).unwrap();
        let rank = rank_auc(&scores, &labels).unwrap();
        worst = worst.max((trap - rank).abs());
    }
    assert!(worst < 1e-9, "AUC routes disagree by {worst}");
    println!("ACCEPTANCE 3 PASS: metrics exact on 100 settings; AUC route gap {worst:.2e}");
}

#[test]
fn criterion_4_loss_suite() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let base = LossConfig::default();

    let mut worst_endpoint: f64 = 0.0;
    for _ in 0..20 {
        let shape = Shape::new(2, 1, 4, 4);
        let p = Tensor::from_vec(
            shape,
            (0..shape.count()).map(|_| rng.random_range(0.02..0.98)).collect(),
        )
        .unwrap();
        let g = Tensor::from_vec(
            shape,
            (0..shape.count())
                .map(|_| if rng.random_bool(0.5) { 1.0 } else { 0.0 })
                .collect(),
        )
        .unwrap();
        let bce_only = LossConfig {
            alpha: 1.0,
            ..base.clone()
        };
        let dice_only = LossConfig {
            alpha: 0.0,
            ..base.clone()
        };
        let d1 = (total_loss(&p, &g, &bce_only).unwrap() - bce_loss(&p, &g, &bce_only).unwrap())
            .abs();
        let d0 = (total_loss(&p, &g, &dice_only).unwrap()
            - dice_loss(&p, &g, &dice_only).unwrap())
        .abs();
        worst_endpoint = worst_endpoint.max(d1).max(d0);
    }
    assert!(worst_endpoint <= 1e-15, "endpoint gap {worst_endpoint}");

    // dice(p = g) = 0 exactly for binary p.
    let g = Tensor::from_vec(
        Shape::new(2, 1, 4, 4),
        (0..32).map(|i| ((i * 7) % 3 == 0) as u8 as f64).collect(),
    )
    .unwrap();
    assert_eq!(dice_loss(&g, &g, &base).unwrap(), 0.0);

    // bce(p = 0.5) = ln 2 within 1e-12.
    let p_half = Tensor::filled(Shape::new(1, 1, 8, 8), 0.5);
    let g_any = Tensor::from_vec(
        Shape::new(1, 1, 8, 8),
        (0..64).map(|i| (i % 2) as f64).collect(),
    )
    .unwrap();
    let bce = bce_loss(&p_half, &g_any, &base).unwrap();
    assert!((bce - std::f64::consts::LN_2).abs() < 1e-12);

    println!(
        "ACCEPTANCE 4 PASS: endpoint gap {worst_endpoint:.1e}, dice(p=g)=0, bce(0.5)-ln2 = {:.1e}",
        (bce - std::f64::consts::LN_2).abs()
    );
}

#[test]
fn criterion_5_attention_suite() {
    // Zero weights force every gate to sigmoid(0) = 0.5.
    let c = 8;
    let p = AttentionParams::new(
        Tensor::zeros(Shape::new(2, c, 1, 1)),
        Tensor::zeros(Shape::new(c, 2, 1, 1)),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let x = Tensor::from_vec(
        Shape::new(2, c, 4, 4),
        (0..2 * c * 16).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let gates = channel_attention(&x, &p).unwrap();
    assert!(gates.data().iter().all(|&g| g == 0.5));

    // Hand-computed two-channel case.
    let x2 = {
        let mut t = Tensor::zeros(Shape::new(1, 2, 2, 2));
        t.plane_mut(0, 0).fill(1.0);
        t
    };
    let w1 = Tensor::from_vec(Shape::new(1, 2, 1, 1), vec![1.0, 0.0]).unwrap();
    let w2 = Tensor::from_vec(Shape::new(2, 1, 1, 1), vec![1.0, -1.0]).unwrap();
    let hand = channel_attention(&x2, &AttentionParams::new(w1, w2).unwrap()).unwrap();
    let err0 = (hand.data()[0] - 0.7310585786300049).abs();
    let err1 = (hand.data()[1] - 0.2689414213699951).abs();
    assert!(err0 < 1e-9 && err1 < 1e-9, "hand case errors {err0}, {err1}");

    // Gradients reach both attention matrices on a nonzero batch.
    let cfg = FusionConfig {
        threshold: 0.5,
        reduction: 2,
    };
    let mut params = ParamStore::new();
    fusion::init_params(&mut params, 4, &cfg, &mut rng);
    let f_seg = Tensor::from_vec(
        Shape::new(1, 2, 4, 4),
        (0..32).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let f_dl = Tensor::from_vec(
        Shape::new(1, 2, 4, 4),
        (0..32).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let (prob, cache) = fusion::fuse(&f_seg, &f_dl, &params, &cfg).unwrap();
    let ones = Tensor::filled(prob.shape(), 1.0);
    fusion::fuse_backward(&ones, &cache, &mut params, &cfg).unwrap();
    let norm = |name: &str| -> f64 {
        params
            .grad(name)
            .unwrap()
            .data()
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    };
    let (n1, n2) = (norm("fusion.attn.w1"), norm("fusion.attn.w2"));
    assert!(n1 > 0.0 && n2 > 0.0, "gradient norms {n1}, {n2}");

    println!(
        "ACCEPTANCE 5 PASS: Mc(0)=0.5, hand case err {:.1e}, |dW1|={n1:.2e}, |dW2|={n2:.2e}",
        err0.max(err1)
    );
}

#[test]
fn criterion_6_synthetic_overfit() {
    let run = overfit();
    assert!(
        run.train_iou >= 0.85,
        "train-split IoU {} < 0.85",
        run.train_iou
    );
    assert!(
        run.holdout_iou >= 0.70,
        "held-out IoU {} < 0.70",
        run.holdout_iou
    );
    assert!(
        run.duration < Duration::from_secs(900),
        "experiment took {:?}",
        run.duration
    );

    // Single-image check through the predict command: the train item with
    // the largest mask must segment at IoU >= 0.85.
    let manifest = DatasetManifest::load(&run.dataset).unwrap();
    let mut largest: Option<(f64, String, String)> = None;
    for e in manifest.entries.iter().filter(|e| e.split == Split::Train) {
        let area = load_mask(&run.dataset.join(&e.mask)).unwrap().sum();
        if largest.as_ref().is_none_or(|(a, _, _)| area > *a) {
            largest = Some((area, e.image.clone(), e.mask.clone()));
        }
    }
    let (_, image_rel, mask_rel) = largest.unwrap();
    let pred_path = run.dataset.join("predicted.png");
    sarseg_cli(&[
        "predict",
        "--checkpoint",
        run.run_dir.to_str().unwrap(),
        "--image",
        run.dataset.join(&image_rel).to_str().unwrap(),
        "--out",
        pred_path.to_str().unwrap(),
    ]);
    let pred = load_mask(&pred_path).unwrap();
    let gt = load_mask(&run.dataset.join(&mask_rel)).unwrap();
    let c = confusion(&pred, &gt).unwrap();
    let single_iou = c.true_pos as f64 / (c.true_pos + c.false_pos + c.false_neg) as f64;
    assert!(single_iou >= 0.85, "single-image IoU {single_iou} < 0.85");

    println!(
        "ACCEPTANCE 6 PASS: train IoU {:.4}, held-out IoU {:.4}, single-image IoU {:.4}, runtime {:.0}s",
        run.train_iou,
        run.holdout_iou,
        single_iou,
        run.duration.as_secs_f64()
    );
}

#[test]
fn criterion_7_look_alike_discrimination() {
    let run = overfit();
    let (net, _) = load_checkpoint(&run.run_dir).unwrap();
    let manifest = DatasetManifest::load(&run.dataset).unwrap();
    let spec = SceneSpec {
        size: OVERFIT_SIZE,
        seed: OVERFIT_SEED,
        ..SceneSpec::default()
    };

    // Wake-only held-out scenes: empty mask but at least one dark wake.
    let mut model_fp = 0u64;
    let mut otsu_fp = 0u64;
    let mut pixels = 0u64;
    let mut scenes = 0;
    for e in manifest.entries.iter().filter(|e| e.split == Split::Test) {
        let stem: u64 = e
            .image
            .trim_start_matches("images/")
            .trim_end_matches(".png")
            .parse()
            .unwrap();
        let geometry = sample_geometry(&spec, &mut scene_rng(&spec, stem));
        if !geometry.slicks.is_empty() || geometry.wakes.is_empty() {
            continue;
        }
        scenes += 1;
        let image = load_tile(&run.dataset.join(&e.image)).unwrap();
        let mask = load_mask(&run.dataset.join(&e.mask)).unwrap();
        assert_eq!(mask.sum(), 0.0, "wake-only scene must have an empty mask");

        let (_, pred) = net.predict(&image, 0.5).unwrap();
        model_fp += pred.sum() as u64;
        let baseline = threshold_baseline_mask(&image);
        otsu_fp += baseline.sum() as u64;
        pixels += image.shape().count() as u64;
    }
    assert!(scenes > 0, "held-out split contains no wake-only scenes");
    let model_rate = model_fp as f64 / pixels as f64;
    let otsu_rate = otsu_fp as f64 / pixels as f64;
    assert!(
        model_rate < otsu_rate,
        "model FP rate {model_rate} not below threshold-baseline rate {otsu_rate}"
    );
    println!(
        "ACCEPTANCE 7 PASS: {scenes} wake-only scene(s); model FP rate {model_rate:.4} < Otsu {otsu_rate:.4}"
    );
}

#[test]
fn criterion_8_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"train": {"epochs": 5, "batch_size": 4, "lr0": 0.001, "seed": 3}}"#,
    )
    .unwrap();

    let mut file_sets = Vec::new();
    for tag in ["a", "b"] {
        let dataset = dir.path().join(format!("data_{tag}"));
        let run = dir.path().join(format!("run_{tag}"));
        sarseg_cli(&[
            "synth",
            "--out",
            dataset.to_str().unwrap(),
            "--count",
            "10",
            "--seed",
            "3",
            "--size",
            "32",
        ]);
        sarseg_cli(&[
            "train",
            "--config",
            config.to_str().unwrap(),
            "--data",
            dataset.to_str().unwrap(),
            "--out",
            run.to_str().unwrap(),
        ]);
        file_sets.push((dataset, run));
    }

    let mut compared = 0;
    for sub in ["images", "masks"] {
        let dir_a = file_sets[0].0.join(sub);
        for entry in std::fs::read_dir(&dir_a).unwrap() {
            let path = entry.unwrap().path();
            let name = path.file_name().unwrap();
            let twin = file_sets[1].0.join(sub).join(name);
            assert_eq!(
                std::fs::read(&path).unwrap(),
                std::fs::read(&twin).unwrap(),
                "{sub}/{name:?} differs between runs"
            );
            compared += 1;
        }
    }
    for file in ["manifest.json"] {
        assert_eq!(
            std::fs::read(file_sets[0].0.join(file)).unwrap(),
            std::fs::read(file_sets[1].0.join(file)).unwrap(),
            "dataset {file} differs"
        );
        compared += 1;
    }
    for file in ["manifest.json", "weights.bin", "train_log.csv"] {
        assert_eq!(
            std::fs::read(file_sets[0].1.join(file)).unwrap(),
            std::fs::read(file_sets[1].1.join(file)).unwrap(),
            "run {file} differs"
        );
        compared += 1;
    }
    println!("ACCEPTANCE 8 PASS: {compared} files byte-identical across two runs");
}

#[test]
fn criterion_9_throughput() {
    let net = FusionNet::new(ModelConfig::default(), 1).unwrap();
    let spec = SceneSpec {
        size: 256,
        ..SceneSpec::default()
    };
    let (image, _) = synth_scene(&spec, &mut scene_rng(&spec, 0)).unwrap();

    let _guard = timing_guard();
    let _ = net.forward(&image).unwrap(); // warm-up
    let start = Instant::now();
    let (prob, _) = net.forward(&image).unwrap();
    let elapsed = start.elapsed();
    assert_eq!(prob.shape(), Shape::new(1, 1, 256, 256));
    assert!(
        elapsed < Duration::from_secs(2),
        "256x256 forward took {elapsed:?}"
    );
    println!(
        "ACCEPTANCE 9 PASS: 256x256 forward in {:.3}s",
        elapsed.as_secs_f64()
    );
}
