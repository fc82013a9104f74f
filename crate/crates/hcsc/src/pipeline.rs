//! Library-level pipelines shared by the CLI and the acceptance suite.

use hcsc_core::classifier::{self, FeatureLayout, FeatureMatrix, FitSettings, LogisticModel};
use hcsc_core::inference::{encode_batch, reconstruct, relative_error, FistaSettings};
use hcsc_core::model::{HierarchicalModel, LayerConfig};
use hcsc_core::{Error, Result, SignalTensor};

/// Affine map applied to pixels before coding: `(p - offset) / scale`.
///
/// Standardizing puts the detail penalty on the scale it was tuned for: with
/// raw `[0, 1]` pixels and `lambda = 1`, no detail coefficient of a random
/// unit-norm dictionary survives thresholding, and dictionary learning never
/// starts because the detail filter gradient is proportional to the codes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputTransform {
    pub offset: f32,
    pub scale: f32,
}

impl Default for InputTransform {
    fn default() -> Self {
        InputTransform::IDENTITY
    }
}

impl InputTransform {
    pub const IDENTITY: InputTransform = InputTransform {
        offset: 0.0,
        scale: 1.0,
    };

    /// Zero mean, unit variance over every pixel of `images`.
    pub fn standardize(images: &[SignalTensor]) -> Self {
        let (mut n, mut sum, mut sum_sq) = (0usize, 0.0f64, 0.0f64);
        for img in images {
            for &p in img.data() {
                sum += p as f64;
                sum_sq += p as f64 * p as f64;
            }
            n += img.len();
        }
        if n == 0 {
            return Self::IDENTITY;
        }
        let mean = sum / n as f64;
        let std = (sum_sq / n as f64 - mean * mean).max(0.0).sqrt();
        if std == 0.0 {
            return InputTransform {
                offset: mean as f32,
                scale: 1.0,
            };
        }
        InputTransform {
            offset: mean as f32,
            scale: std as f32,
        }
    }

    pub fn apply(&self, img: &SignalTensor) -> SignalTensor {
        let (o, s) = (self.offset, self.scale);
        img.map(|p| (p - o) / s)
    }

    pub fn apply_all(&self, images: &[SignalTensor]) -> Vec<SignalTensor> {
        images.iter().map(|i| self.apply(i)).collect()
    }

    pub fn invert(&self, img: &SignalTensor) -> SignalTensor {
        let (o, s) = (self.offset, self.scale);
        img.map(|v| v * s + o)
    }
}

/// Shape of a model built from command-line style settings.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub layers: usize,
    pub tied: bool,
    pub layer: LayerConfig,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            layers: 3,
            tied: true,
            layer: LayerConfig::default(),
        }
    }
}

impl ModelSpec {
    /// Layer configurations for a single-channel input. Layers after the
    /// first take the scale signal of the layer above, so their filters map
    /// `scale_channels` back to `scale_channels`.
    pub fn configs(&self) -> Vec<LayerConfig> {
        vec![self.layer.clone(); self.layers]
    }

    pub fn init(&self, input_channels: usize, seed: u64) -> Result<HierarchicalModel> {
        if self.layers == 0 {
            return Err(Error::Config("--layers must be at least 1".into()));
        }
        HierarchicalModel::init(input_channels, self.configs(), self.tied, seed)
    }
}

/// Encodes `images` in chunks and stores their features sparsely, so that the
/// dense encodings of the whole set never coexist in memory.
pub fn extract_features(
    model: &HierarchicalModel,
    images: &[SignalTensor],
    fista: &FistaSettings,
    all_scales: bool,
) -> Result<(FeatureMatrix, FeatureLayout)> {
    const CHUNK: usize = 256;
    let mut matrix: Option<FeatureMatrix> = None;
    for chunk in images.chunks(CHUNK) {
        for enc in encode_batch(model, chunk, fista)? {
            let fv = classifier::featurize(&enc, all_scales);
            matrix
                .get_or_insert_with(|| FeatureMatrix::new(fv.values.len()))
                .push(&fv)?;
        }
    }
    let matrix = matrix.ok_or(Error::EmptyBatch)?;
    let layout = matrix.layout().cloned().unwrap_or_default();
    Ok((matrix, layout))
}

/// Per-layer statistics of a set of encodings, gathered in one pass.
#[derive(Clone, Debug)]
pub struct CodeStats {
    /// Mean relative error of reconstructing from layers `1..=l`, per `l`.
    pub rel_err: Vec<f64>,
    /// Mean nonzero fraction of `u_l`.
    pub u_nonzero: Vec<f64>,
    /// Classifier features, when requested (the flag is `all_scales`).
    pub features: Option<FeatureMatrix>,
}

pub fn code_stats(
    model: &HierarchicalModel,
    images: &[SignalTensor],
    fista: &FistaSettings,
    features: Option<bool>,
) -> Result<CodeStats> {
    const CHUNK: usize = 256;
    if images.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let depth = model.depth();
    let mut rel_err = vec![0.0; depth];
    let mut u_nonzero = vec![0.0; depth];
    let mut matrix: Option<FeatureMatrix> = None;
    for chunk in images.chunks(CHUNK) {
        for (img, enc) in chunk.iter().zip(encode_batch(model, chunk, fista)?) {
            for l in 0..depth {
                rel_err[l] += relative_error(img, &reconstruct(model, &enc, l + 1)?);
                u_nonzero[l] += enc.u[l].nonzero_fraction();
            }
            if let Some(all_scales) = features {
                let fv = classifier::featurize(&enc, all_scales);
                matrix
                    .get_or_insert_with(|| FeatureMatrix::new(fv.values.len()))
                    .push(&fv)?;
            }
        }
    }
    let n = images.len() as f64;
    rel_err.iter_mut().for_each(|v| *v /= n);
    u_nonzero.iter_mut().for_each(|v| *v /= n);
    Ok(CodeStats {
        rel_err,
        u_nonzero,
        features: matrix,
    })
}

/// Mean nonzero fraction of `u_layer` (1-based) over `images`.
pub fn detail_sparsity(
    model: &HierarchicalModel,
    images: &[SignalTensor],
    fista: &FistaSettings,
    layer: usize,
) -> Result<f64> {
    if layer == 0 || layer > model.depth() {
        return Err(Error::Argument(format!(
            "layer {layer} out of range 1..={}",
            model.depth()
        )));
    }
    Ok(code_stats(model, images, fista, None)?.u_nonzero[layer - 1])
}

/// Mean relative error of the full-depth reconstruction.
pub fn probe_error(model: &HierarchicalModel, images: &[SignalTensor], fista: &FistaSettings) -> Result<f64> {
    hcsc_core::learning::mean_reconstruction_error(model, images, fista)
}

/// Train and test accuracy of a logistic head fitted on the codes.
#[derive(Clone, Debug)]
pub struct ClassifyReport {
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub trainable_params: usize,
    pub feature_dim: usize,
    pub head: LogisticModel,
    pub layout: FeatureLayout,
}

#[allow(clippy::too_many_arguments)]
pub fn classify(
    model: &HierarchicalModel,
    fista: &FistaSettings,
    train_images: &[SignalTensor],
    train_labels: &[usize],
    test_images: &[SignalTensor],
    test_labels: &[usize],
    fit: &FitSettings,
    all_scales: bool,
) -> Result<ClassifyReport> {
    let classes = train_labels
        .iter()
        .chain(test_labels)
        .max()
        .map_or(1, |&m| m + 1)
        .max(10);
    let (train_x, layout) = extract_features(model, train_images, fista, all_scales)?;
    let head = classifier::fit(&train_x, train_labels, classes, fit)?;
    let train_accuracy = head.accuracy(&train_x, train_labels)?;
    drop(train_x);
    let test_accuracy = if test_images.is_empty() {
        f64::NAN
    } else {
        let (test_x, _) = extract_features(model, test_images, fista, all_scales)?;
        head.accuracy(&test_x, test_labels)?
    };
    Ok(ClassifyReport {
        train_accuracy,
        test_accuracy,
        trainable_params: model.trainable_param_count(),
        feature_dim: layout.len(),
        head,
        layout,
    })
}

/// Per-layer mean relative error of reconstructing `images` from the codes of
/// layers `1..=l`, for every `l`.
pub fn layer_errors(model: &HierarchicalModel, images: &[SignalTensor], fista: &FistaSettings) -> Result<Vec<f64>> {
    Ok(code_stats(model, images, fista, None)?.rel_err)
}
