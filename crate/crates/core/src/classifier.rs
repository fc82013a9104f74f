//! Multiclass logistic regression over hierarchical codes.
//!
//! Features are the flattened detail codes `u_1..u_L` followed by the top
//! scale signal `x_L` (optionally every `x_l`). Detail codes are mostly zero,
//! so examples are kept in a sparse row format and the per-feature
//! standardization is folded into the weights instead of densifying rows.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::inference::Encoding;
use crate::{Error, Result};

/// Which tensor a block of features was taken from (1-based layer).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureSource {
    Detail(usize),
    Scale(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureBlock {
    pub source: FeatureSource,
    pub shape: (usize, usize, usize),
}

/// Ordered description of how tensors were concatenated.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FeatureLayout {
    pub blocks: Vec<FeatureBlock>,
}

impl FeatureLayout {
    pub fn len(&self) -> usize {
        self.blocks.iter().map(|b| b.shape.0 * b.shape.1 * b.shape.2).sum()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f32>,
    pub layout: FeatureLayout,
}

/// Concatenates `u_1, ..., u_L` and then `x_L`, or every `x_l` after the
/// details when `all_scales` is set.
pub fn featurize(encoding: &Encoding, all_scales: bool) -> FeatureVector {
    let depth = encoding.depth();
    let mut layout = FeatureLayout::default();
    let mut values = Vec::new();
    for (l, u) in encoding.u.iter().enumerate() {
        layout.blocks.push(FeatureBlock {
            source: FeatureSource::Detail(l + 1),
            shape: u.shape(),
        });
        values.extend_from_slice(u.data());
    }
    let first_scale = if all_scales { 1 } else { depth };
    for l in first_scale..=depth {
        let x = &encoding.x[l - 1];
        layout.blocks.push(FeatureBlock {
            source: FeatureSource::Scale(l),
            shape: x.shape(),
        });
        values.extend_from_slice(x.data());
    }
    FeatureVector { values, layout }
}

/// Row-compressed feature matrix holding only nonzero entries.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    layout: Option<FeatureLayout>,
    row_start: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(dim: usize) -> Self {
        FeatureMatrix {
            dim,
            layout: None,
            row_start: vec![0],
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn from_dense_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut m = FeatureMatrix::new(dim);
        for r in rows {
            m.push_dense(r)?;
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn rows(&self) -> usize {
        self.row_start.len() - 1
    }
    pub fn nnz(&self) -> usize {
        self.values.len()
    }
    pub fn layout(&self) -> Option<&FeatureLayout> {
        self.layout.as_ref()
    }

    pub fn push_dense(&mut self, row: &[f32]) -> Result<()> {
        if row.len() != self.dim {
            return Err(Error::Shape(format!(
                "feature row has {} entries, matrix has {}",
                row.len(),
                self.dim
            )));
        }
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 {
                self.indices.push(j as u32);
                self.values.push(v);
            }
        }
        self.row_start.push(self.values.len());
        Ok(())
    }

    /// Appends a featurized example; every example must share one layout.
    pub fn push(&mut self, fv: &FeatureVector) -> Result<()> {
        match &self.layout {
            Some(l) if *l != fv.layout => {
                return Err(Error::Shape("feature layout differs from earlier rows".into()));
            }
            None => {
                if self.rows() > 0 && fv.layout.len() != self.dim {
                    return Err(Error::Shape("feature layout differs from earlier rows".into()));
                }
                self.layout = Some(fv.layout.clone());
            }
            _ => {}
        }
        self.push_dense(&fv.values)
    }

    /// `(indices, values)` of row `i`.
    pub fn row(&self, i: usize) -> (&[u32], &[f32]) {
        let (s, e) = (self.row_start[i], self.row_start[i + 1]);
        (&self.indices[s..e], &self.values[s..e])
    }

    pub fn scaled(&self, factor: f32) -> FeatureMatrix {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v *= factor);
        m
    }
}

/// Training schedule of the logistic head.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitSettings {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the `l2/2 ‖W‖²` penalty (the bias is not penalized).
    pub l2: f64,
    pub seed: u64,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            lr: 0.1,
            epochs: 30,
            batch_size: 128,
            l2: 0.01,
            seed: 0,
        }
    }
}

/// Features whose training standard deviation is below this are treated as constant.
pub const STD_FLOOR: f64 = 1e-6;

/// Softmax regression on standardized features: `logits = W · (v − mean) / std + bias`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub classes: usize,
    pub dim: usize,
    /// `classes x dim`, row-major.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl LogisticModel {
    pub fn zeros(classes: usize, dim: usize) -> Self {
        LogisticModel {
            classes,
            dim,
            weights: vec![0.0; classes * dim],
            bias: vec![0.0; classes],
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    fn check_dim(&self, features: &FeatureMatrix) -> Result<()> {
        if features.dim() != self.dim {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.dim,
                features.dim()
            )));
        }
        Ok(())
    }

    /// `sum_j W[k, j] mean_j / std_j` for every class.
    fn centering(&self) -> Vec<f64> {
        (0..self.classes)
            .map(|k| {
                let w = &self.weights[k * self.dim..(k + 1) * self.dim];
                w.iter()
                    .zip(&self.mean)
                    .zip(&self.std)
                    .filter(|((_, &m), _)| m != 0.0)
                    .map(|((&w, &m), &s)| w as f64 * m as f64 / s as f64)
                    .sum()
            })
            .collect()
    }

    fn logits_into(&self, features: &FeatureMatrix, i: usize, centering: &[f64], out: &mut [f64]) {
        let (idx, val) = features.row(i);
        for k in 0..self.classes {
            let w = &self.weights[k * self.dim..(k + 1) * self.dim];
            let mut z = self.bias[k] as f64 - centering[k];
            for (&j, &v) in idx.iter().zip(val) {
                let j = j as usize;
                z += w[j] as f64 * v as f64 / self.std[j] as f64;
            }
            out[k] = z;
        }
    }

    pub fn logits(&self, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_dim(features)?;
        let c = self.centering();
        Ok((0..features.rows())
            .map(|i| {
                let mut z = vec![0.0; self.classes];
                self.logits_into(features, i, &c, &mut z);
                z
            })
            .collect())
    }

    pub fn probabilities(&self, features: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        Ok(self
            .logits(features)?
            .into_iter()
            .map(|mut z| {
                softmax_in_place(&mut z);
                z
            })
            .collect())
    }

    /// Arg-max class per row; ties go to the lowest class index.
    pub fn predict(&self, features: &FeatureMatrix) -> Result<Vec<usize>> {
        Ok(self.logits(features)?.iter().map(|z| argmax(z)).collect())
    }

    pub fn accuracy(&self, features: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
        if labels.len() != features.rows() {
            return Err(Error::Shape(format!(
                "{} labels for {} rows",
                labels.len(),
                features.rows()
            )));
        }
        if labels.is_empty() {
            return Ok(0.0);
        }
        let pred = self.predict(features)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    /// Mean softmax cross-entropy.
    pub fn cross_entropy(&self, features: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
        let logits = self.logits(features)?;
        let mut total = 0.0;
        for (z, &y) in logits.iter().zip(labels) {
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + libm::log(z.iter().map(|v| libm::exp(v - m)).sum::<f64>());
            total += lse - z[y];
        }
        Ok(total / labels.len().max(1) as f64)
    }
}

pub fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in z.iter().enumerate() {
        if v > z[best] {
            best = k;
        }
    }
    best
}

pub fn softmax_in_place(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = libm::exp(*v - m);
        s += *v;
    }
    for v in z.iter_mut() {
        *v /= s;
    }
}

/// Minibatch gradient descent on softmax cross-entropy, weights starting at zero.
pub fn fit(
    features: &FeatureMatrix,
    labels: &[usize],
    classes: usize,
    settings: &FitSettings,
) -> Result<LogisticModel> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} rows", labels.len())));
    }
    if n == 0 {
        return Err(Error::EmptyBatch);
    }
    if classes == 0 {
        return Err(Error::Argument("need at least one class".into()));
    }
    if let Some(&label) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Label { label, classes });
    }
    if settings.batch_size == 0
        || !(settings.lr >= 0.0 && settings.lr.is_finite())
        || !(settings.l2 >= 0.0 && settings.lr * settings.l2 < 1.0)
    {
        return Err(Error::Argument(format!(
            "invalid classifier schedule: lr {} l2 {} batch {}",
            settings.lr, settings.l2, settings.batch_size
        )));
    }
    let dim = features.dim();
    let mut model = LogisticModel::zeros(classes, dim);

    // standardization statistics over the (implicitly dense) rows
    let mut sum = vec![0.0f64; dim];
    let mut sum_sq = vec![0.0f64; dim];
    for i in 0..n {
        let (idx, val) = features.row(i);
        for (&j, &v) in idx.iter().zip(val) {
            sum[j as usize] += v as f64;
            sum_sq[j as usize] += v as f64 * v as f64;
        }
    }
    for j in 0..dim {
        let mean = sum[j] / n as f64;
        let var = (sum_sq[j] / n as f64 - mean * mean).max(0.0);
        model.mean[j] = mean as f32;
        let sd = libm::sqrt(var);
        // constant features are left unscaled
        model.std[j] = if sd < STD_FLOOR { 1.0 } else { sd as f32 };
    }
    let inv_std: Vec<f64> = model.std.iter().map(|&s| 1.0 / s as f64).collect();
    let mean_over_std: Vec<f64> = model.mean.iter().zip(&inv_std).map(|(&m, &s)| m as f64 * s).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut z = vec![0.0f64; classes];
    let mut g = Vec::with_capacity(settings.batch_size * classes);
    let mut grad = vec![0.0f64; classes * dim];
    for _ in 0..settings.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(settings.batch_size) {
            let centering = model.centering();
            g.clear();
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                model.logits_into(features, i, &centering, &mut z);
                softmax_in_place(&mut z);
                z[labels[i]] -= 1.0;
                g.extend(z.iter().map(|p| p * scale));
            }
            // the batch gradient is gathered in f64 before touching the f32
            // weights: the row terms and the folded mean term can be large
            // and nearly cancel
            grad.iter_mut().for_each(|v| *v = 0.0);
            for (b, &i) in batch.iter().enumerate() {
                let (idx, val) = features.row(i);
                for k in 0..classes {
                    let gk = g[b * classes + k];
                    if gk == 0.0 {
                        continue;
                    }
                    let gw = &mut grad[k * dim..(k + 1) * dim];
                    for (&j, &v) in idx.iter().zip(val) {
                        let j = j as usize;
                        gw[j] += gk * v as f64 * inv_std[j];
                    }
                }
            }
            let lr = settings.lr;
            let decay = 1.0 - lr * settings.l2;
            for k in 0..classes {
                let gk: f64 = g.iter().skip(k).step_by(classes).sum();
                model.bias[k] -= (lr * gk) as f32;
                let w = &mut model.weights[k * dim..(k + 1) * dim];
                let gw = &grad[k * dim..(k + 1) * dim];
                for ((wj, &gj), &ms) in w.iter_mut().zip(gw).zip(&mean_over_std) {
                    *wj = (*wj as f64 * decay - lr * (gj - gk * ms)) as f32;
                }
            }
        }
    }
    if model.weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Divergence {
            iteration: settings.epochs,
            step: settings.lr,
        });
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::SignalTensor;

    fn toy() -> (FeatureMatrix, Vec<usize>) {
        // two clusters separated along the first coordinate
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..40 {
            let t = i as f32 / 40.0;
            let class = i % 2;
            let sign = if class == 0 { -1.0 } else { 1.0 };
            rows.push(vec![
                sign * (1.0 + t),
                (t * 7.0).sin(),
                0.0,
                if i % 3 == 0 { 2.0 } else { 0.0 },
            ]);
            labels.push(class);
        }
        (FeatureMatrix::from_dense_rows(&rows).unwrap(), labels)
    }

    #[test]
    fn separable_toy_is_learned() {
        let (x, y) = toy();
        let m = fit(
            &x,
            &y,
            2,
            &FitSettings {
                batch_size: 8,
                ..FitSettings::default()
            },
        )
        .unwrap();
        assert_eq!(m.accuracy(&x, &y).unwrap(), 1.0);
        for p in m.probabilities(&x).unwrap() {
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_lr_keeps_init() {
        let (x, y) = toy();
        let m = fit(
            &x,
            &y,
            2,
            &FitSettings {
                lr: 0.0,
                ..FitSettings::default()
            },
        )
        .unwrap();
        assert!(m.weights.iter().chain(&m.bias).all(|&w| w == 0.0));
    }

    #[test]
    fn fit_is_deterministic() {
        let (x, y) = toy();
        let s = FitSettings {
            seed: 11,
            batch_size: 5,
            ..FitSettings::default()
        };
        assert_eq!(fit(&x, &y, 2, &s).unwrap(), fit(&x, &y, 2, &s).unwrap());
    }

    #[test]
    fn degenerate_model_predicts_class_zero() {
        let rows: Vec<Vec<f32>> = (0..50).map(|i| vec![i as f32, 1.0]).collect();
        let labels: Vec<usize> = (0..50).map(|i| i % 10).collect();
        let x = FeatureMatrix::from_dense_rows(&rows).unwrap();
        let m = LogisticModel::zeros(10, 2);
        assert!(m.predict(&x).unwrap().iter().all(|&p| p == 0));
        assert_eq!(m.accuracy(&x, &labels).unwrap(), 0.1);
    }

    #[test]
    fn label_and_dim_errors() {
        let (x, mut y) = toy();
        y[3] = 5;
        assert_eq!(
            fit(&x, &y, 2, &FitSettings::default()),
            Err(Error::Label { label: 5, classes: 2 })
        );
        let m = LogisticModel::zeros(2, 3);
        assert!(matches!(m.predict(&x), Err(Error::Shape(_))));
        assert!(fit(&x, &y[..3], 2, &FitSettings::default()).is_err());
    }

    #[test]
    fn feature_layout_lengths() {
        let enc = Encoding {
            x: vec![SignalTensor::zeros(1, 4, 4), SignalTensor::zeros(1, 2, 2)],
            u: vec![SignalTensor::zeros(3, 4, 4), SignalTensor::zeros(3, 2, 2)],
            objective_trace: vec![vec![], vec![]],
            final_objective: vec![0.0; 2],
            layer_residual_mse: vec![0.0; 2],
        };
        let f = featurize(&enc, false);
        assert_eq!(f.values.len(), 48 + 12 + 4);
        assert_eq!(f.layout.len(), f.values.len());
        assert!(f.values.iter().all(|&v| v == 0.0));
        assert_eq!(f.layout.blocks.last().unwrap().source, FeatureSource::Scale(2));
        let all = featurize(&enc, true);
        assert_eq!(all.values.len(), 48 + 12 + 16 + 4);
    }
}
