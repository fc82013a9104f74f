//! Convolutional dictionary learning.
//!
//! Training alternates between coding a minibatch with the current filters
//! and one projected gradient step on the filters. Filter gradients come
//! straight from the residual: for `r = A * x + B * u − x_prev`, the gradient
//! of `½‖r‖²` with respect to `A` is `r ⋆ x` taken over kernel offsets (see
//! [`crate::conv::corr_filter_grad`]), and likewise for `B` with `u`. After each
//! step every atom is rescaled back to unit l2 norm.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::conv::corr_filter_grad_accumulate;
use crate::inference::{encode_batch, reconstruction_error, residual, Encoding, FistaSettings};
use crate::model::HierarchicalModel;
use crate::tensor::{FilterBank, Real, SignalTensor};
use crate::{Error, Result};

/// One training example as seen by a single layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerSample<'a, T = f32> {
    pub x_prev: &'a SignalTensor<T>,
    pub x: &'a SignalTensor<T>,
    pub u: &'a SignalTensor<T>,
}

/// Batch-mean gradients of `½‖x_prev − A * x − B * u‖²` with respect to `A` and `B`.
pub fn filter_gradients<T: Real>(
    a: &FilterBank<T>,
    b: &FilterBank<T>,
    batch: &[LayerSample<'_, T>],
) -> Result<(FilterBank<T>, FilterBank<T>)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let (kh, kw) = (a.kernel_h(), a.kernel_w());
    let mut acc_a = vec![0.0f64; a.len()];
    let mut acc_b = vec![0.0f64; b.len()];
    for s in batch {
        let r = residual(s.x_prev, a, s.x, b, s.u)?;
        corr_filter_grad_accumulate(&r, s.x, kh, kw, &mut acc_a);
        corr_filter_grad_accumulate(&r, s.u, kh, kw, &mut acc_b);
    }
    let inv = 1.0 / batch.len() as f64;
    let (o, ia, _, _) = a.shape();
    let ga = FilterBank::from_vec(o, ia, kh, kw, acc_a.into_iter().map(|v| T::from_f64(v * inv)).collect())?;
    let gb = FilterBank::from_vec(
        o,
        b.in_channels(),
        kh,
        kw,
        acc_b.into_iter().map(|v| T::from_f64(v * inv)).collect(),
    )?;
    Ok((ga, gb))
}

/// Rescales every atom (code-channel slice) of `filters` to unit l2 norm.
pub fn project_unit_atoms<T: Real>(filters: &FilterBank<T>) -> Result<FilterBank<T>> {
    let mut out = filters.clone();
    project_unit_atoms_in_place(&mut out)?;
    Ok(out)
}

pub fn project_unit_atoms_in_place<T: Real>(filters: &mut FilterBank<T>) -> Result<()> {
    for c in 0..filters.in_channels() {
        let n = filters.atom_norm(c);
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::DegenerateAtom { channel: c });
        }
        if n != 1.0 {
            filters.scale_atom(c, 1.0 / n);
        }
    }
    Ok(())
}

/// Gradients for every distinct bank of `model`, as `(scale, detail)` lists
/// aligned with [`HierarchicalModel::scale_banks`]. In a tied model the
/// per-layer gradients are summed into the single shared bank.
pub fn model_gradients(
    model: &HierarchicalModel,
    images: &[SignalTensor],
    encodings: &[Encoding],
) -> Result<(Vec<FilterBank>, Vec<FilterBank>)> {
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if images.len() != encodings.len() {
        return Err(Error::Argument(format!(
            "{} images but {} encodings",
            images.len(),
            encodings.len()
        )));
    }
    let mut grads_a: Vec<FilterBank> = model
        .scale_banks()
        .iter()
        .map(|f| {
            let (o, i, h, w) = f.shape();
            FilterBank::zeros(o, i, h, w)
        })
        .collect();
    let mut grads_b: Vec<FilterBank> = model
        .detail_banks()
        .iter()
        .map(|f| {
            let (o, i, h, w) = f.shape();
            FilterBank::zeros(o, i, h, w)
        })
        .collect();
    let mut batch = Vec::with_capacity(images.len());
    for l in 1..=model.depth() {
        batch.clear();
        for (img, enc) in images.iter().zip(encodings) {
            if enc.depth() != model.depth() {
                return Err(Error::Argument(format!(
                    "encoding has {} layers, model has {}",
                    enc.depth(),
                    model.depth()
                )));
            }
            batch.push(LayerSample {
                x_prev: if l == 1 { img } else { &enc.x[l - 2] },
                x: &enc.x[l - 1],
                u: &enc.u[l - 1],
            });
        }
        let (ga, gb) = filter_gradients(model.a(l), model.b(l), &batch).map_err(|e| e.in_layer(l))?;
        let i = model.bank_index(l);
        grads_a[i].axpy(1.0, &ga);
        grads_b[i].axpy(1.0, &gb);
    }
    Ok((grads_a, grads_b))
}

/// One projected gradient step on every trainable bank. Fixed scale banks are
/// left untouched.
pub fn dict_step(
    model: &mut HierarchicalModel,
    images: &[SignalTensor],
    encodings: &[Encoding],
    lr: f64,
) -> Result<()> {
    let (grads_a, grads_b) = model_gradients(model, images, encodings)?;
    apply_gradients(model, &grads_a, &grads_b, lr)
}

/// `bank ← project(bank − lr · grad)` for every trainable bank.
pub fn apply_gradients(
    model: &mut HierarchicalModel,
    grads_a: &[FilterBank],
    grads_b: &[FilterBank],
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Argument(format!("learning rate must be nonnegative, got {lr}")));
    }
    let banks = model.scale_banks().len();
    if grads_a.len() != banks || grads_b.len() != banks {
        return Err(Error::Argument(format!(
            "expected {banks} gradients per bank kind, got {} and {}",
            grads_a.len(),
            grads_b.len()
        )));
    }
    let step = -(lr as f32);
    for i in 0..banks {
        // layer number whose bank index is i
        let l = i + 1;
        if model.config(l).scale_filter_trainable {
            let a = model.a_mut(l);
            a.axpy(step, &grads_a[i]);
            project_unit_atoms_in_place(a).map_err(|e| e.in_layer(l))?;
        }
        let b = model.b_mut(l);
        b.axpy(step, &grads_b[i]);
        project_unit_atoms_in_place(b).map_err(|e| e.in_layer(l))?;
    }
    Ok(())
}

/// Schedule of the alternating minimization.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub dict_lr: f64,
    pub fista: FistaSettings,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainSettings {
    fn default() -> Self {
        TrainSettings {
            epochs: 5,
            batch_size: 32,
            dict_lr: 0.1,
            fista: FistaSettings::default(),
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Argument("batch size must be at least 1".into()));
        }
        if !(self.dict_lr > 0.0 && self.dict_lr.is_finite()) {
            return Err(Error::Argument(format!(
                "dictionary learning rate must be positive, got {}",
                self.dict_lr
            )));
        }
        self.fista.validate()
    }
}

/// Metrics of one minibatch, taken from the codes computed before the filter step.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    /// 1-based epoch.
    pub epoch: usize,
    /// 0-based batch index within the epoch.
    pub batch: usize,
    /// Per-layer mean objective over the batch.
    pub objective: Vec<f64>,
    /// Mean relative error of the full-depth reconstruction of the inputs.
    pub recon_rel_err: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochSummary {
    /// 1-based epoch.
    pub epoch: usize,
    pub mean_recon_rel_err: f64,
    pub mean_objective: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub batches: Vec<BatchRecord>,
    pub epochs: Vec<EpochSummary>,
}

/// Observer hooks for [`train`].
pub trait TrainMonitor {
    fn on_batch(&mut self, _record: &BatchRecord) {}
    fn on_epoch(&mut self, _summary: &EpochSummary, _model: &HierarchicalModel) {}
}

impl TrainMonitor for () {}

/// Alternating minimization over `images`: every minibatch is encoded from
/// scratch with the current filters, then all trainable banks take one
/// projected gradient step.
pub fn train(
    model: &mut HierarchicalModel,
    images: &[SignalTensor],
    settings: &TrainSettings,
    monitor: &mut dyn TrainMonitor,
) -> Result<History> {
    settings.validate()?;
    let mut history = History::default();
    if settings.epochs == 0 {
        return Ok(history);
    }
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let depth = model.depth();
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    let mut batch_images: Vec<SignalTensor> = Vec::with_capacity(settings.batch_size);

    for epoch in 1..=settings.epochs {
        if settings.shuffle {
            order.shuffle(&mut rng);
        }
        let mut sum_err = 0.0;
        let mut sum_obj = vec![0.0; depth];
        for (batch, idx) in order.chunks(settings.batch_size).enumerate() {
            let wrap = |e: Error| Error::Training {
                epoch,
                batch,
                source: Box::new(e),
            };
            batch_images.clear();
            batch_images.extend(idx.iter().map(|&i| images[i].clone()));
            let encodings = encode_batch(model, &batch_images, &settings.fista).map_err(wrap)?;

            let mut objective = vec![0.0; depth];
            let mut err = 0.0;
            for (img, enc) in batch_images.iter().zip(&encodings) {
                for (o, v) in objective.iter_mut().zip(&enc.final_objective) {
                    *o += v;
                }
                err += reconstruction_error(model, img, enc).map_err(wrap)?;
            }
            sum_err += err;
            for (s, o) in sum_obj.iter_mut().zip(&objective) {
                *s += o;
            }
            let n = idx.len() as f64;
            let record = BatchRecord {
                epoch,
                batch,
                objective: objective.iter().map(|o| o / n).collect(),
                recon_rel_err: err / n,
            };
            monitor.on_batch(&record);
            history.batches.push(record);

            dict_step(model, &batch_images, &encodings, settings.dict_lr).map_err(wrap)?;
        }
        let n = images.len() as f64;
        let summary = EpochSummary {
            epoch,
            mean_recon_rel_err: sum_err / n,
            mean_objective: sum_obj.iter().map(|s| s / n).collect(),
        };
        monitor.on_epoch(&summary, model);
        history.epochs.push(summary);
    }
    Ok(history)
}

/// Mean full-depth relative reconstruction error of `images` under `model`.
pub fn mean_reconstruction_error(
    model: &HierarchicalModel,
    images: &[SignalTensor],
    settings: &FistaSettings,
) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let encodings = encode_batch(model, images, settings)?;
    let mut total = 0.0;
    for (img, enc) in images.iter().zip(&encodings) {
        total += reconstruction_error(model, img, enc)?;
    }
    Ok(total / images.len() as f64)
}
