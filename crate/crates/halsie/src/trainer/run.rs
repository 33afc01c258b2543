//! Configuration, data preparation, and the optimization loop.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{weighted_cross_entropy, BnMode, Scalar, Tape};
use crate::evio::{voxelize, EventVolume};
use crate::model::{HalsieModel, ModelInput};

use super::adam::{adam_step, AdamState};
use super::augment::{augment, sample_transform, GeomTransform};
use super::dataset::Dataset;
use super::metrics::{argmax_classes, ConfusionAccum, MetricsReport};
use super::{TrainError, IGNORE_ID};

/// Training hyperparameters, loadable from TOML.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; scaled by `lr_decay` every `lr_step_epochs`.
    pub lr: f64,
    pub lr_decay: f64,
    pub lr_step_epochs: usize,
    /// Surrogate-gradient width γ.
    pub gamma: f64,
    /// Temporal bins per event volume.
    pub bins: usize,
    /// Square crop applied during augmentation.
    pub crop: usize,
    pub seed: u64,
    /// Every `round(1/val_fraction)`-th sample goes to the validation split.
    pub val_fraction: f64,
    /// Explicit class weights; empty means inverse-frequency weights
    /// normalized to mean 1 over the classes present in training labels.
    pub class_weights: Vec<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            lr: 8e-4,
            lr_decay: 0.7,
            lr_step_epochs: 10,
            gamma: 100.0,
            bins: 10,
            crop: 192,
            seed: 7,
            val_fraction: 0.2,
            class_weights: Vec::new(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            clip_norm: 10.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.lr <= 0.0 {
            return Err(TrainError::Config("learning rate must be positive".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(TrainError::Config(
                "decay factor must lie strictly between 0 and 1".into(),
            ));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.lr_step_epochs == 0 {
            return Err(TrainError::Config(
                "epochs, batch size, and schedule step must be positive".into(),
            ));
        }
        if self.bins < 2 {
            return Err(TrainError::Config("at least two temporal bins".into()));
        }
        if !(0.0..=0.9).contains(&self.val_fraction) {
            return Err(TrainError::Config("val_fraction outside [0, 0.9]".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self, TrainError> {
        let cfg: TrainConfig =
            toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Learning rate at an epoch: `lr · decay^⌊epoch / step⌋`.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr * cfg.lr_decay.powi((epoch / cfg.lr_step_epochs) as i32)
}

/// One voxelized, normalized sample.
#[derive(Clone, Debug)]
pub struct PreparedSample<T> {
    /// Frame planes scaled to `[0, 1]`.
    pub frame: Vec<T>,
    pub volume: EventVolume,
    pub label: Vec<u32>,
}

/// Train/validation splits of prepared samples.
pub struct PreparedDataset<T> {
    pub train: Vec<PreparedSample<T>>,
    pub val: Vec<PreparedSample<T>>,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
}

/// Voxelize and normalize a raw dataset, then split it. Every
/// `round(1/val_fraction)`-th sample lands in the validation split.
pub fn prepare<T: Scalar>(
    data: &Dataset,
    bins: usize,
    classes: usize,
    val_fraction: f64,
) -> Result<PreparedDataset<T>, TrainError> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    let stride = if val_fraction > 0.0 {
        ((1.0 / val_fraction).round() as usize).max(2)
    } else {
        usize::MAX
    };
    for (idx, raw) in data.samples.iter().enumerate() {
        let volume = voxelize(&raw.window, bins)?;
        let frame: Vec<T> = raw
            .frame
            .iter()
            .map(|&v| T::from_f64_c(v as f64 / 255.0))
            .collect();
        let label: Vec<u32> = raw
            .label
            .iter()
            .map(|&v| {
                let v = v as u32;
                if v != IGNORE_ID && v as usize >= classes {
                    Err(TrainError::Config(format!(
                        "sample {idx} labels class {v}, network has {classes}"
                    )))
                } else {
                    Ok(v)
                }
            })
            .collect::<Result<_, _>>()?;
        let sample = PreparedSample {
            frame,
            volume,
            label,
        };
        if (idx + 1) % stride == 0 {
            val.push(sample);
        } else {
            train.push(sample);
        }
    }
    Ok(PreparedDataset {
        train,
        val,
        height: data.height as usize,
        width: data.width as usize,
        classes,
    })
}

/// Inverse-frequency class weights over a label set, normalized to mean 1
/// across the classes that actually appear; absent classes get weight 1.
pub fn inverse_frequency_weights(
    samples: &[PreparedSample<impl Scalar>],
    classes: usize,
) -> Vec<f64> {
    let mut counts = vec![0u64; classes];
    for s in samples {
        for &l in &s.label {
            if l != IGNORE_ID {
                counts[l as usize] += 1;
            }
        }
    }
    let total: u64 = counts.iter().sum();
    let raw: Vec<Option<f64>> = counts
        .iter()
        .map(|&c| (c > 0).then(|| total as f64 / c as f64))
        .collect();
    let present: Vec<f64> = raw.iter().flatten().copied().collect();
    if present.is_empty() {
        return vec![1.0; classes];
    }
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    raw.into_iter()
        .map(|w| w.map(|w| w / mean).unwrap_or(1.0))
        .collect()
}

/// Assemble a batch of (possibly augmented) samples into network inputs
/// and a flat target map.
fn assemble_batch<T: Scalar>(
    samples: &[PreparedSample<T>],
    frame_channels: usize,
    bins: usize,
) -> (ModelInput<T>, Vec<u32>) {
    let n = samples.len();
    let h = samples[0].volume.height() as usize;
    let w = samples[0].volume.width() as usize;
    let hw = h * w;
    let mut frame = Vec::with_capacity(n * frame_channels * hw);
    let mut bin_data: Vec<Vec<T>> = vec![Vec::with_capacity(n * 2 * hw); bins];
    let mut targets = Vec::with_capacity(n * hw);
    for s in samples {
        frame.extend_from_slice(&s.frame);
        for (b, buf) in bin_data.iter_mut().enumerate() {
            buf.extend(s.volume.bin_slice(b).iter().map(|&v| T::from_f64_c(v as f64)));
        }
        targets.extend_from_slice(&s.label);
    }
    (
        ModelInput {
            n,
            height: h,
            width: w,
            frame,
            bins: bin_data,
        },
        targets,
    )
}

/// One line of the training log.
#[derive(Clone, Debug)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_miou: f64,
}

/// `epoch,lr,train_loss,val_accuracy,val_miou` CSV.
pub fn write_train_log(log: &[EpochLog], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,lr,train_loss,val_accuracy,val_miou")?;
    for e in log {
        writeln!(
            out,
            "{},{},{:.6},{:.6},{:.6}",
            e.epoch, e.lr, e.train_loss, e.val_accuracy, e.val_miou
        )?;
    }
    Ok(())
}

/// Run the optimization loop. Deterministic for a fixed seed in
/// single-threaded mode; spiking state is implicitly reset per sample
/// because every forward unrolls from zeroed membranes. `on_epoch` fires
/// after each epoch's validation pass.
pub fn train<T: Scalar>(
    model: &mut HalsieModel<T>,
    data: &PreparedDataset<T>,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, TrainError> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(TrainError::Config("training split is empty".into()));
    }
    let classes = data.classes;
    let weights64 = if cfg.class_weights.is_empty() {
        inverse_frequency_weights(&data.train, classes)
    } else if cfg.class_weights.len() == classes {
        cfg.class_weights.clone()
    } else {
        return Err(TrainError::Config(format!(
            "{} class weights for {classes} classes",
            cfg.class_weights.len()
        )));
    };
    let weights: Vec<T> = weights64.iter().map(|&w| T::from_f64_c(w)).collect();

    model.set_surrogate_width(cfg.gamma);
    let mut adam = AdamState::for_store(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let frame_channels = model.spec().frame_channels;
    let bins = model.spec().bins;
    let mut log = Vec::with_capacity(cfg.epochs);

    let mut order: Vec<usize> = (0..data.train.len()).collect();
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut batches = 0usize;
        // the final partial batch is dropped
        for chunk in order.chunks_exact(cfg.batch_size) {
            let augmented: Vec<PreparedSample<T>> = chunk
                .iter()
                .map(|&i| {
                    let s = &data.train[i];
                    let t: GeomTransform =
                        sample_transform(data.height, data.width, cfg.crop, &mut rng)?;
                    Ok(augment(s, frame_channels, &t))
                })
                .collect::<Result<_, TrainError>>()?;
            let (input, targets) = assemble_batch(&augmented, frame_channels, bins);

            let mut tape = Tape::new();
            let out = model.forward(&mut tape, &input, BnMode::Train)?;
            let loss = weighted_cross_entropy(&mut tape, out.logits, &targets, &weights, IGNORE_ID)?;
            loss_sum += tape.value(loss)[0].as_f64();
            batches += 1;
            tape.backward(loss)?;
            model.harvest_grads(&tape, &out.binding);

            let norm = model.params().grad_norm();
            if norm > cfg.clip_norm {
                model
                    .params_mut()
                    .scale_grads(T::from_f64_c(cfg.clip_norm / norm));
            }
            adam_step(
                model.params_mut(),
                &mut adam,
                lr,
                cfg.adam_beta1,
                cfg.adam_beta2,
                cfg.adam_eps,
            );
            model.params_mut().apply_constraints();
        }
        if batches == 0 {
            return Err(TrainError::Config(format!(
                "batch size {} exceeds the {}-sample training split",
                cfg.batch_size,
                data.train.len()
            )));
        }

        let report = evaluate(model, &data.val, cfg.batch_size)?;
        let entry = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / batches as f64,
            val_accuracy: report.accuracy,
            val_miou: report.miou,
        };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Evaluate a model on prepared samples (eval mode, no augmentation).
pub fn evaluate<T: Scalar>(
    model: &mut HalsieModel<T>,
    samples: &[PreparedSample<T>],
    batch_size: usize,
) -> Result<MetricsReport, TrainError> {
    let classes = model.spec().classes;
    let frame_channels = model.spec().frame_channels;
    let bins = model.spec().bins;
    let mut confusion = ConfusionAccum::new(classes);
    for chunk in samples.chunks(batch_size.max(1)) {
        let (input, targets) = assemble_batch(chunk, frame_channels, bins);
        let mut tape = Tape::new();
        let out = model.forward(&mut tape, &input, BnMode::Eval)?;
        let hw = input.height * input.width;
        let preds = argmax_classes(tape.value(out.logits), input.n, classes, hw);
        confusion.update(&targets, &preds);
    }
    Ok(confusion.report())
}
