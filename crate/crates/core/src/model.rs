//! The layered scale/detail model.
//!
//! Layer `l` (1-based) maps the scale signal `x_l` and detail signal `u_l` to
//! the layer below: `x_{l-1} = A_l * x_l + B_l * u_l + eps_l`. Layer numbers in
//! this API are 1-based so that `x_0` is always the observed image.

use alloc::format;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::conv::{conv_full, full_size};
use crate::tensor::{FilterBank, SignalTensor};
use crate::{Error, Result};

/// Per-layer shape and hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerConfig {
    /// Channels of the scale signal `x_l`.
    pub scale_channels: usize,
    /// Channels of the detail signal `u_l`.
    pub detail_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// l1 weight on `u_l` during coding; Laplace diversity when sampling.
    pub lambda: f64,
    /// Ridge weight on `x_l` during coding (penalty `gamma/2 ‖x‖²`).
    pub gamma: f64,
    /// Standard deviation of the synthesis noise `eps_l`.
    pub sigma_eps: f64,
    /// Standard deviation of the Gaussian prior on `x_l`.
    pub sigma_x: f64,
    /// When false, `A_l` is the fixed unit-norm box filter.
    pub scale_filter_trainable: bool,
}

impl Default for LayerConfig {
    fn default() -> Self {
        LayerConfig {
            scale_channels: 1,
            detail_channels: 32,
            kernel_h: 5,
            kernel_w: 5,
            lambda: 1.0,
            gamma: 0.01,
            sigma_eps: 0.0,
            sigma_x: 1.0,
            scale_filter_trainable: false,
        }
    }
}

impl LayerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_channels == 0 || self.detail_channels == 0 {
            return Err(Error::Config("channel counts must be at least 1".into()));
        }
        if self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Config("kernel dimensions must be at least 1".into()));
        }
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("sigma_eps", self.sigma_eps),
            ("sigma_x", self.sigma_x),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and nonnegative, got {v}")));
            }
        }
        Ok(())
    }
}

/// Borrowed view of one layer: its filters and hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct Layer<'a> {
    pub a: &'a FilterBank,
    pub b: &'a FilterBank,
    pub config: &'a LayerConfig,
}

/// Unit-norm constant filter: every atom (fixed code channel) has l2 norm 1.
pub fn box_filter(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> FilterBank {
    let v = 1.0 / libm::sqrt((out_channels * kernel_h * kernel_w) as f64);
    FilterBank::from_fn(out_channels, in_channels, kernel_h, kernel_w, |_, _, _, _| v as f32)
}

fn gaussian_atoms(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize)) -> FilterBank {
    let (o, i, h, w) = shape;
    let mut f = FilterBank::from_fn(o, i, h, w, |_, _, _, _| rng.sample::<f32, _>(StandardNormal));
    for c in 0..i {
        let n = f.atom_norm(c);
        if n > 0.0 {
            f.scale_atom(c, 1.0 / n);
        }
    }
    f
}

/// An `L`-layer hierarchy of (A, B) filter banks.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalModel {
    input_channels: usize,
    layers: Vec<LayerConfig>,
    tied: bool,
    // one bank per layer, or a single shared bank when tied
    scale_banks: Vec<FilterBank>,
    detail_banks: Vec<FilterBank>,
}

impl HierarchicalModel {
    /// Builds a model with Gaussian-initialized, atom-normalized trainable
    /// filters and box-filter scale banks where `scale_filter_trainable` is off.
    pub fn init(input_channels: usize, layers: Vec<LayerConfig>, tied: bool, seed: u64) -> Result<Self> {
        Self::check_configs(input_channels, &layers, tied)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let banks = if tied { 1 } else { layers.len() };
        let mut scale_banks = Vec::with_capacity(banks);
        let mut detail_banks = Vec::with_capacity(banks);
        let mut below = input_channels;
        for cfg in layers.iter().take(banks) {
            let a_shape = (below, cfg.scale_channels, cfg.kernel_h, cfg.kernel_w);
            let b_shape = (below, cfg.detail_channels, cfg.kernel_h, cfg.kernel_w);
            let a = if cfg.scale_filter_trainable {
                gaussian_atoms(&mut rng, a_shape)
            } else {
                box_filter(a_shape.0, a_shape.1, a_shape.2, a_shape.3)
            };
            scale_banks.push(a);
            detail_banks.push(gaussian_atoms(&mut rng, b_shape));
            below = cfg.scale_channels;
        }
        Ok(HierarchicalModel {
            input_channels,
            layers,
            tied,
            scale_banks,
            detail_banks,
        })
    }

    /// Assembles a model from explicit banks (one per layer, or one when tied).
    pub fn from_parts(
        input_channels: usize,
        layers: Vec<LayerConfig>,
        tied: bool,
        scale_banks: Vec<FilterBank>,
        detail_banks: Vec<FilterBank>,
    ) -> Result<Self> {
        Self::check_configs(input_channels, &layers, tied)?;
        let banks = if tied { 1 } else { layers.len() };
        if scale_banks.len() != banks || detail_banks.len() != banks {
            return Err(Error::Config(format!(
                "expected {banks} scale and detail banks, got {} and {}",
                scale_banks.len(),
                detail_banks.len()
            )));
        }
        let mut below = input_channels;
        for (l, cfg) in layers.iter().enumerate().take(banks) {
            let a_shape = (below, cfg.scale_channels, cfg.kernel_h, cfg.kernel_w);
            let b_shape = (below, cfg.detail_channels, cfg.kernel_h, cfg.kernel_w);
            if scale_banks[l].shape() != a_shape || detail_banks[l].shape() != b_shape {
                return Err(Error::Shape(format!(
                    "layer {}: banks {:?}/{:?} do not match config {:?}/{:?}",
                    l + 1,
                    scale_banks[l].shape(),
                    detail_banks[l].shape(),
                    a_shape,
                    b_shape
                )));
            }
            below = cfg.scale_channels;
        }
        Ok(HierarchicalModel {
            input_channels,
            layers,
            tied,
            scale_banks,
            detail_banks,
        })
    }

    fn check_configs(input_channels: usize, layers: &[LayerConfig], tied: bool) -> Result<()> {
        if input_channels == 0 {
            return Err(Error::Config("input must have at least one channel".into()));
        }
        if layers.is_empty() {
            return Err(Error::Config("model needs at least one layer".into()));
        }
        for (l, cfg) in layers.iter().enumerate() {
            cfg.validate().map_err(|e| e.in_layer(l + 1))?;
        }
        if tied {
            let first = &layers[0];
            if layers.iter().any(|c| c != first) {
                return Err(Error::Config("tied layers must share one configuration".into()));
            }
            if layers.len() > 1 && first.scale_channels != input_channels {
                return Err(Error::Config(format!(
                    "tied layers need scale channels ({}) equal to input channels ({input_channels})",
                    first.scale_channels
                )));
            }
        }
        Ok(())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
    pub fn is_tied(&self) -> bool {
        self.tied
    }
    pub fn input_channels(&self) -> usize {
        self.input_channels
    }
    pub fn configs(&self) -> &[LayerConfig] {
        &self.layers
    }
    pub fn scale_banks(&self) -> &[FilterBank] {
        &self.scale_banks
    }
    pub fn detail_banks(&self) -> &[FilterBank] {
        &self.detail_banks
    }

    /// Index into the bank arrays used by 1-based layer `l`.
    #[inline]
    pub fn bank_index(&self, l: usize) -> usize {
        if self.tied {
            0
        } else {
            l - 1
        }
    }

    fn check_layer(&self, l: usize) {
        assert!(
            l >= 1 && l <= self.depth(),
            "layer {l} out of range 1..={}",
            self.depth()
        );
    }

    pub fn config(&self, l: usize) -> &LayerConfig {
        self.check_layer(l);
        &self.layers[l - 1]
    }

    /// Mutable access to the hyperparameters of every layer. Shape fields must
    /// not be changed through this.
    pub fn set_hyperparameters(&mut self, lambda: f64, gamma: f64) {
        for cfg in &mut self.layers {
            cfg.lambda = lambda;
            cfg.gamma = gamma;
        }
    }

    pub fn a(&self, l: usize) -> &FilterBank {
        self.check_layer(l);
        &self.scale_banks[self.bank_index(l)]
    }
    pub fn b(&self, l: usize) -> &FilterBank {
        self.check_layer(l);
        &self.detail_banks[self.bank_index(l)]
    }
    /// Mutable scale bank of layer `l`; in a tied model this is the bank shared by all layers.
    pub fn a_mut(&mut self, l: usize) -> &mut FilterBank {
        self.check_layer(l);
        let i = self.bank_index(l);
        &mut self.scale_banks[i]
    }
    pub fn b_mut(&mut self, l: usize) -> &mut FilterBank {
        self.check_layer(l);
        let i = self.bank_index(l);
        &mut self.detail_banks[i]
    }

    pub fn layer(&self, l: usize) -> Layer<'_> {
        Layer {
            a: self.a(l),
            b: self.b(l),
            config: self.config(l),
        }
    }

    /// Channels of `x_l` (`l = 0` is the input).
    pub fn scale_channels(&self, l: usize) -> usize {
        if l == 0 {
            self.input_channels
        } else {
            self.config(l).scale_channels
        }
    }

    /// Spatial size of `x_l` and `u_l` for an input of size `input`, or `None`
    /// if some layer's kernel no longer fits.
    pub fn code_size(&self, l: usize, input: (usize, usize)) -> Option<(usize, usize)> {
        let mut hw = input;
        for cfg in &self.layers[..l] {
            hw = crate::conv::valid_size(hw.0, hw.1, cfg.kernel_h, cfg.kernel_w)?;
        }
        Some(hw)
    }

    /// Spatial size of `x_0` synthesized from a top scale signal of size `top`.
    pub fn input_size(&self, top: (usize, usize)) -> (usize, usize) {
        self.layers
            .iter()
            .rev()
            .fold(top, |hw, cfg| full_size(hw.0, hw.1, cfg.kernel_h, cfg.kernel_w))
    }

    /// Number of filter entries updated by learning: tied banks count once,
    /// fixed scale banks not at all.
    pub fn trainable_param_count(&self) -> usize {
        let banks = if self.tied { 1 } else { self.depth() };
        (0..banks)
            .map(|i| {
                let scale = if self.layers[i].scale_filter_trainable {
                    self.scale_banks[i].len()
                } else {
                    0
                };
                scale + self.detail_banks[i].len()
            })
            .sum()
    }

    /// Top-down synthesis `x_{l-1} = A_l * x_l + B_l * u_l (+ eps_l)`.
    ///
    /// `details` holds `[u_1, ..., u_L]`. Returns `[x_{L-1}, ..., x_0]`. When
    /// `noise` is `Some(seed)`, Gaussian noise with std `sigma_eps` is added.
    pub fn synthesize(
        &self,
        top: &SignalTensor,
        details: &[SignalTensor],
        noise: Option<u64>,
    ) -> Result<Vec<SignalTensor>> {
        if details.len() != self.depth() {
            return Err(Error::Shape(format!(
                "expected {} detail signals, got {}",
                self.depth(),
                details.len()
            )));
        }
        let mut rng = noise.map(ChaCha8Rng::seed_from_u64);
        let mut out = Vec::with_capacity(self.depth());
        let mut x = top.clone();
        for l in (1..=self.depth()).rev() {
            let layer = self.layer(l);
            let u = &details[l - 1];
            if u.height() != x.height() || u.width() != x.width() {
                return Err(Error::Shape(format!(
                    "scale {:?} and detail {:?} differ spatially",
                    x.shape(),
                    u.shape()
                ))
                .in_layer(l));
            }
            let mut next = conv_full(layer.a, &x).map_err(|e| e.in_layer(l))?;
            let detail = conv_full(layer.b, u).map_err(|e| e.in_layer(l))?;
            next.axpy(1.0, &detail);
            if let Some(rng) = rng.as_mut() {
                let s = layer.config.sigma_eps as f32;
                if s > 0.0 {
                    for v in next.data_mut() {
                        *v += s * rng.sample::<f32, _>(StandardNormal);
                    }
                }
            }
            out.push(next.clone());
            x = next;
        }
        Ok(out)
    }

    /// Draws `x_L ~ N(0, sigma_x²)` of spatial size `top` and
    /// `u_l ~ Laplace(0, lambda_l)` for every layer at its matching size.
    pub fn sample_priors(&self, top: (usize, usize), seed: u64) -> (SignalTensor, Vec<SignalTensor>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = self.depth();
        let top_cfg = self.config(depth);
        let sx = top_cfg.sigma_x as f32;
        let x_top = SignalTensor::from_fn(top_cfg.scale_channels, top.0, top.1, |_, _, _| {
            if sx == 0.0 {
                0.0
            } else {
                sx * rng.sample::<f32, _>(StandardNormal)
            }
        });
        let mut details = Vec::with_capacity(depth);
        let mut hw = top;
        for l in (1..=depth).rev() {
            let cfg = self.config(l);
            let scale = cfg.lambda;
            details.push(SignalTensor::from_fn(cfg.detail_channels, hw.0, hw.1, |_, _, _| {
                laplace(&mut rng, scale) as f32
            }));
            hw = full_size(hw.0, hw.1, cfg.kernel_h, cfg.kernel_w);
        }
        details.reverse();
        (x_top, details)
    }
}

/// Inverse-CDF Laplace sample with location 0 and diversity `scale`.
pub fn laplace<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale == 0.0 {
        return 0.0;
    }
    // p uniform on (-1/2, 1/2)
    let p: f64 = rng.random::<f64>() - 0.5;
    let mag = 1.0 - 2.0 * p.abs();
    if mag <= 0.0 {
        return 0.0;
    }
    -scale * p.signum() * libm::log(mag)
}
