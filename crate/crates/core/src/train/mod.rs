//! Training loop: seeded shuffling and augmentation, hybrid-loss gradient
//! steps under the cosine schedule, per-epoch validation on the held-out
//! split, and best-IoU checkpointing.

pub mod adam;
pub mod checkpoint;

pub use adam::{adam_step, cosine_lr, AdamState, TrainConfig};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, TensorRecord, TrainMeta,
    CHECKPOINT_FORMAT_VERSION, CHECKPOINT_MANIFEST, CHECKPOINT_WEIGHTS,
};

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment, AugmentationConfig};
use crate::error::{Error, Result};
use crate::fusion::binarize;
use crate::loss::{total_loss_grad, LossConfig};
use crate::metrics::{confusion, ConfusionCounts};
use crate::model::FusionNet;
use crate::seeds;
use crate::tensor::{Shape, Tensor};

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_iou: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_iou: f64,
}

pub const TRAIN_LOG_FILE: &str = "train_log.csv";

/// Stacks single-item `(1,c,h,w)` tensors into one `(k,c,h,w)` batch.
pub fn stack_batch(items: &[&Tensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::data("cannot stack an empty batch"))?;
    let s = first.shape();
    let mut out = Tensor::zeros(Shape::new(items.len(), s.c, s.h, s.w));
    let item_len = s.c * s.h * s.w;
    for (i, t) in items.iter().enumerate() {
        if t.shape() != s {
            return Err(Error::shape(format!(
                "batch item {i} has shape {}, expected {s}",
                t.shape()
            )));
        }
        out.data_mut()[i * item_len..(i + 1) * item_len].copy_from_slice(t.data());
    }
    Ok(out)
}

/// Confusion counts of a model over a set of items at one threshold, plus
/// the flattened probability scores and pixel labels for ROC analysis.
pub fn evaluate_items(
    net: &FusionNet,
    items: &[(Tensor, Tensor)],
    threshold: f64,
) -> Result<(ConfusionCounts, Vec<f64>, Vec<bool>)> {
    let mut counts = ConfusionCounts::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (image, mask) in items {
        let (prob, _) = net.forward(image)?;
        let pred = binarize(&prob, threshold);
        counts = counts.merge(&confusion(&pred, mask)?);
        scores.extend_from_slice(prob.data());
        labels.extend(mask.data().iter().map(|&v| v == 1.0));
    }
    Ok((counts, scores, labels))
}

/// IoU over an item set at the given threshold (aggregated pixel counts).
pub fn iou_over_items(net: &FusionNet, items: &[(Tensor, Tensor)], threshold: f64) -> Result<f64> {
    let (counts, _, _) = evaluate_items(net, items, threshold)?;
    let denom = counts.true_pos + counts.false_pos + counts.false_neg;
    if denom == 0 {
        return Ok(0.0);
    }
    Ok(counts.true_pos as f64 / denom as f64)
}

/// Runs the full protocol and writes the checkpoint (on every new best
/// validation IoU) plus `train_log.csv` into `out_dir`.
pub fn train(
    net: &mut FusionNet,
    train_items: &[(Tensor, Tensor)],
    val_items: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    aug_cfg: &AugmentationConfig,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    aug_cfg.validate()?;
    if train_items.is_empty() || val_items.is_empty() {
        return Err(Error::data(
            "training requires non-empty train and validation splits",
        ));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut state = AdamState::new();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best_val_iou = f64::NEG_INFINITY;
    let mut best_epoch = 0;

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(epoch, cfg);
        let mut order: Vec<usize> = (0..train_items.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(seeds::mix3(cfg.seed, seeds::SHUFFLE, epoch as u64, 0));
        order.shuffle(&mut shuffle_rng);

        let mut loss_weighted = 0.0;
        let mut items_seen = 0usize;
        for (batch_index, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut images = Vec::with_capacity(chunk.len());
            let mut masks = Vec::with_capacity(chunk.len());
            for &idx in chunk {
                let (image, mask) = &train_items[idx];
                let mut rng = ChaCha8Rng::seed_from_u64(seeds::mix3(
                    cfg.seed,
                    seeds::AUGMENT,
                    epoch as u64,
                    idx as u64,
                ));
                let (ai, am) = augment(image, mask, aug_cfg, &mut rng)?;
                images.push(ai);
                masks.push(am);
            }
            let batch = stack_batch(&images.iter().collect::<Vec<_>>())?;
            let target = stack_batch(&masks.iter().collect::<Vec<_>>())?;

            let (prob, cache) = net.forward(&batch)?;
            let (loss, grad) = total_loss_grad(&prob, &target, loss_cfg)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at epoch {epoch}, batch {batch_index}"
                )));
            }
            net.params.zero_grads();
            net.backward(&grad, &cache)?;
            adam_step(&mut net.params, &mut state, lr, cfg)?;

            loss_weighted += loss * chunk.len() as f64;
            items_seen += chunk.len();
        }
        let train_loss = loss_weighted / items_seen as f64;

        let val_iou = iou_over_items(net, val_items, 0.5)?;
        log.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_iou,
        });
        if val_iou > best_val_iou {
            best_val_iou = val_iou;
            best_epoch = epoch;
            save_checkpoint(
                out_dir,
                net,
                TrainMeta {
                    epoch,
                    val_iou,
                    seed: cfg.seed,
                },
            )?;
        }
    }

    write_log(&out_dir.join(TRAIN_LOG_FILE), &log)?;
    Ok(TrainOutcome {
        log,
        best_epoch,
        best_val_iou,
    })
}

fn write_log(path: &Path, log: &[EpochRecord]) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    writeln!(f, "epoch,lr,train_loss,val_iou")?;
    for r in log {
        writeln!(f, "{},{},{},{}", r.epoch, r.lr, r.train_loss, r.val_iou)?;
    }
    Ok(())
}
