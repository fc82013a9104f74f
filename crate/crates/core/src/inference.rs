//! Hierarchical convolutional sparse coding.
//!
//! Each layer solves, for fixed filters,
//!
//! ```text
//! min_{x, u}  ½‖x_prev − A * x − B * u‖² + λ‖u‖₁ + (γ/2)‖x‖²
//! ```
//!
//! with proximal gradient steps: a plain gradient step on `x` (smooth ridge
//! term included) and a gradient step followed by soft-thresholding on `u`.
//! Soft-thresholding is `relu(b − λα) − relu(−b − λα)`, so an unrolled solver
//! is a convolutional network with two-sided ReLU activations.
//!
//! Layers are solved one after another: the scale estimate of layer `l`
//! becomes the target of layer `l + 1`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::conv::{conv_full, conv_full_accumulate, corr_valid, corr_valid_accumulate, ConvScratch};
use crate::model::{HierarchicalModel, Layer};
use crate::tensor::{shrink, FilterBank, Real, SignalTensor};
use crate::{Error, Result};

/// Step size and iteration budget of the per-layer solver.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FistaSettings {
    pub step: f64,
    pub iters: usize,
    /// Record the objective after every iteration (costs one extra convolution pair).
    pub record_objective: bool,
}

impl Default for FistaSettings {
    fn default() -> Self {
        FistaSettings {
            step: 0.01,
            iters: 40,
            record_objective: false,
        }
    }
}

impl FistaSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.step.is_finite()) {
            return Err(Error::Argument(format!(
                "step size must be positive, got {}",
                self.step
            )));
        }
        if self.iters == 0 {
            return Err(Error::Argument("iteration count must be at least 1".into()));
        }
        Ok(())
    }
}

/// Filters and weights of one layer's coding problem.
#[derive(Clone, Copy, Debug)]
pub struct LayerProblem<'a, T = f32> {
    pub a: &'a FilterBank<T>,
    pub b: &'a FilterBank<T>,
    pub lambda: f64,
    pub gamma: f64,
}

impl<'a> From<Layer<'a>> for LayerProblem<'a, f32> {
    fn from(layer: Layer<'a>) -> Self {
        LayerProblem {
            a: layer.a,
            b: layer.b,
            lambda: layer.config.lambda,
            gamma: layer.config.gamma,
        }
    }
}

impl<T: Real> LayerProblem<'_, T> {
    fn check(&self, x_prev: &SignalTensor<T>) -> Result<(usize, usize)> {
        let (a, b) = (self.a, self.b);
        if a.out_channels() != x_prev.channels() || b.out_channels() != x_prev.channels() {
            return Err(Error::Shape(format!(
                "filters {:?} / {:?} do not produce a signal shaped {:?}",
                a.shape(),
                b.shape(),
                x_prev.shape()
            )));
        }
        if (a.kernel_h(), a.kernel_w()) != (b.kernel_h(), b.kernel_w()) {
            return Err(Error::Shape(format!(
                "scale and detail kernels differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        crate::conv::valid_size(x_prev.height(), x_prev.width(), a.kernel_h(), a.kernel_w()).ok_or_else(|| {
            Error::Shape(format!(
                "kernel {}x{} larger than signal {:?}",
                a.kernel_h(),
                a.kernel_w(),
                x_prev.shape()
            ))
        })
    }

    fn check_codes(&self, x_prev: &SignalTensor<T>, x: &SignalTensor<T>, u: &SignalTensor<T>) -> Result<()> {
        let (h, w) = self.check(x_prev)?;
        if x.shape() != (self.a.in_channels(), h, w) || u.shape() != (self.b.in_channels(), h, w) {
            return Err(Error::Shape(format!(
                "codes {:?} / {:?} incompatible with target {:?} and filters {:?} / {:?}",
                x.shape(),
                u.shape(),
                x_prev.shape(),
                self.a.shape(),
                self.b.shape()
            )));
        }
        Ok(())
    }
}

/// `A * x + B * u − x_prev`
pub fn residual<T: Real>(
    x_prev: &SignalTensor<T>,
    a: &FilterBank<T>,
    x: &SignalTensor<T>,
    b: &FilterBank<T>,
    u: &SignalTensor<T>,
) -> Result<SignalTensor<T>> {
    let problem = LayerProblem {
        a,
        b,
        lambda: 0.0,
        gamma: 0.0,
    };
    problem.check_codes(x_prev, x, u)?;
    let mut acc = vec![0.0f64; x_prev.len()];
    let mut scratch = ConvScratch::new();
    conv_full_accumulate(a, x, &mut acc, &mut scratch);
    conv_full_accumulate(b, u, &mut acc, &mut scratch);
    let data = acc
        .iter()
        .zip(x_prev.data())
        .map(|(&s, &t)| T::from_f64(s - t.as_f64()))
        .collect();
    SignalTensor::from_vec(x_prev.channels(), x_prev.height(), x_prev.width(), data)
}

/// Data term `½‖x_prev − A * x − B * u‖²`.
pub fn data_fidelity<T: Real>(
    x_prev: &SignalTensor<T>,
    a: &FilterBank<T>,
    x: &SignalTensor<T>,
    b: &FilterBank<T>,
    u: &SignalTensor<T>,
) -> Result<f64> {
    Ok(0.5 * residual(x_prev, a, x, b, u)?.norm_l2_sq())
}

/// Full layer objective `½‖x_prev − A * x − B * u‖² + λ‖u‖₁ + (γ/2)‖x‖²`.
pub fn layer_objective<T: Real>(
    x_prev: &SignalTensor<T>,
    problem: &LayerProblem<'_, T>,
    x: &SignalTensor<T>,
    u: &SignalTensor<T>,
) -> Result<f64> {
    let f = data_fidelity(x_prev, problem.a, x, problem.b, u)?;
    Ok(f + problem.lambda * u.norm_l1() + 0.5 * problem.gamma * x.norm_l2_sq())
}

/// Gradient of the data term with respect to `u`: `(A * x + B * u − x_prev) ⋆ B`.
pub fn grad_u<T: Real>(
    x_prev: &SignalTensor<T>,
    a: &FilterBank<T>,
    x: &SignalTensor<T>,
    b: &FilterBank<T>,
    u: &SignalTensor<T>,
) -> Result<SignalTensor<T>> {
    corr_valid(&residual(x_prev, a, x, b, u)?, b)
}

/// Gradient of the data term with respect to `x`: `(A * x + B * u − x_prev) ⋆ A`.
pub fn grad_x<T: Real>(
    x_prev: &SignalTensor<T>,
    a: &FilterBank<T>,
    x: &SignalTensor<T>,
    b: &FilterBank<T>,
    u: &SignalTensor<T>,
) -> Result<SignalTensor<T>> {
    corr_valid(&residual(x_prev, a, x, b, u)?, a)
}

/// Result of one layer solve.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSolution<T = f32> {
    pub x: SignalTensor<T>,
    pub u: SignalTensor<T>,
    /// Objective at the initial point followed by one value per iteration;
    /// empty unless recording was requested.
    pub trace: Vec<f64>,
}

/// Accelerated proximal gradient (FISTA) for one layer, starting from zeros
/// or from `init`.
pub fn fista_layer<T: Real>(
    x_prev: &SignalTensor<T>,
    problem: &LayerProblem<'_, T>,
    settings: &FistaSettings,
    init: Option<(SignalTensor<T>, SignalTensor<T>)>,
) -> Result<LayerSolution<T>> {
    solve(x_prev, problem, settings, init, true)
}

/// Unaccelerated proximal gradient (ISTA): the same updates with no momentum.
pub fn ista_layer<T: Real>(
    x_prev: &SignalTensor<T>,
    problem: &LayerProblem<'_, T>,
    settings: &FistaSettings,
    init: Option<(SignalTensor<T>, SignalTensor<T>)>,
) -> Result<LayerSolution<T>> {
    solve(x_prev, problem, settings, init, false)
}

fn solve<T: Real>(
    x_prev: &SignalTensor<T>,
    problem: &LayerProblem<'_, T>,
    settings: &FistaSettings,
    init: Option<(SignalTensor<T>, SignalTensor<T>)>,
    accelerate: bool,
) -> Result<LayerSolution<T>> {
    settings.validate()?;
    if !(problem.lambda >= 0.0 && problem.gamma >= 0.0) {
        return Err(Error::Argument(format!(
            "lambda and gamma must be nonnegative, got {} and {}",
            problem.lambda, problem.gamma
        )));
    }
    let (h, w) = problem.check(x_prev)?;
    let (mut x, mut u) = match init {
        Some((x, u)) => {
            problem.check_codes(x_prev, &x, &u)?;
            (x, u)
        }
        None => (
            SignalTensor::zeros(problem.a.in_channels(), h, w),
            SignalTensor::zeros(problem.b.in_channels(), h, w),
        ),
    };
    let step = settings.step;
    let alpha = T::from_f64(step);
    let ridge = T::from_f64(1.0 - step * problem.gamma);
    let threshold = T::from_f64(problem.lambda * step);

    let mut trace = Vec::new();
    if settings.record_objective {
        trace.reserve(settings.iters + 1);
        trace.push(layer_objective(x_prev, problem, &x, &u)?);
    }

    let mut x_last = x.clone();
    let mut u_last = u.clone();
    let mut x_bar = x.clone();
    let mut u_bar = u.clone();
    let mut r = SignalTensor::<T>::zeros(x_prev.channels(), x_prev.height(), x_prev.width());
    let mut acc_r = vec![0.0f64; r.len()];
    let mut acc_x = vec![0.0f64; x.len()];
    let mut acc_u = vec![0.0f64; u.len()];
    let mut scratch = ConvScratch::new();
    let mut t = 1.0f64;

    for k in 1..=settings.iters {
        let beta = if accelerate {
            let t_next = (1.0 + libm::sqrt(1.0 + 4.0 * t * t)) / 2.0;
            let beta = (t - 1.0) / t_next;
            t = t_next;
            T::from_f64(beta)
        } else {
            T::zero()
        };
        extrapolate(&mut x_bar, &x, &x_last, beta);
        extrapolate(&mut u_bar, &u, &u_last, beta);

        acc_r.iter_mut().for_each(|v| *v = 0.0);
        conv_full_accumulate(problem.a, &x_bar, &mut acc_r, &mut scratch);
        conv_full_accumulate(problem.b, &u_bar, &mut acc_r, &mut scratch);
        for ((rv, &s), &target) in r.data_mut().iter_mut().zip(&acc_r).zip(x_prev.data()) {
            *rv = T::from_f64(s - target.as_f64());
        }
        acc_x.iter_mut().for_each(|v| *v = 0.0);
        acc_u.iter_mut().for_each(|v| *v = 0.0);
        corr_valid_accumulate(&r, problem.a, &mut acc_x, &mut scratch);
        corr_valid_accumulate(&r, problem.b, &mut acc_u, &mut scratch);

        core::mem::swap(&mut x_last, &mut x);
        core::mem::swap(&mut u_last, &mut u);
        let mut finite = true;
        for ((xn, &xb), &g) in x.data_mut().iter_mut().zip(x_bar.data()).zip(&acc_x) {
            *xn = ridge * xb - alpha * T::from_f64(g);
            finite &= xn.is_finite();
        }
        for ((un, &ub), &g) in u.data_mut().iter_mut().zip(u_bar.data()).zip(&acc_u) {
            *un = shrink(ub - alpha * T::from_f64(g), threshold);
            finite &= un.is_finite();
        }
        if !finite {
            return Err(Error::Divergence { iteration: k, step });
        }
        if settings.record_objective {
            let obj = layer_objective(x_prev, problem, &x, &u)?;
            if !obj.is_finite() {
                return Err(Error::Divergence { iteration: k, step });
            }
            trace.push(obj);
        }
    }
    Ok(LayerSolution { x, u, trace })
}

#[inline]
fn extrapolate<T: Real>(out: &mut SignalTensor<T>, cur: &SignalTensor<T>, last: &SignalTensor<T>, beta: T) {
    if beta.is_zero() {
        out.data_mut().copy_from_slice(cur.data());
        return;
    }
    for ((o, &c), &l) in out.data_mut().iter_mut().zip(cur.data()).zip(last.data()) {
        *o = c + beta * (c - l);
    }
}

/// Power-iteration estimate of the Lipschitz constant of the smooth part's
/// gradient, i.e. the largest eigenvalue of `MᵀM + diag(γI, 0)` with
/// `M(x, u) = A * x + B * u`, for codes of spatial size `code_size`.
pub fn lipschitz_constant<T: Real>(
    problem: &LayerProblem<'_, T>,
    code_size: (usize, usize),
    iters: usize,
    seed: u64,
) -> Result<f64> {
    let (h, w) = code_size;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = SignalTensor::<T>::from_fn(problem.a.in_channels(), h, w, |_, _, _| {
        T::from_f64(rng.sample::<f64, _>(StandardNormal))
    });
    let mut u = SignalTensor::<T>::from_fn(problem.b.in_channels(), h, w, |_, _, _| {
        T::from_f64(rng.sample::<f64, _>(StandardNormal))
    });
    let mut estimate = 0.0;
    for _ in 0..iters.max(1) {
        let norm = libm::sqrt(x.norm_l2_sq() + u.norm_l2_sq());
        if norm == 0.0 {
            return Ok(problem.gamma);
        }
        let inv = T::from_f64(1.0 / norm);
        x.scale(inv);
        u.scale(inv);
        let mut y = conv_full(problem.a, &x)?;
        y.axpy(T::one(), &conv_full(problem.b, &u)?);
        let mut nx = corr_valid(&y, problem.a)?;
        nx.axpy(T::from_f64(problem.gamma), &x);
        let nu = corr_valid(&y, problem.b)?;
        // Rayleigh quotient with the unit vector (x, u)
        estimate = nx.dot(&x) + nu.dot(&u);
        x = nx;
        u = nu;
    }
    Ok(estimate)
}

/// Codes of one image across all layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoding {
    /// Scale signals `[x_1, ..., x_L]`.
    pub x: Vec<SignalTensor>,
    /// Detail signals `[u_1, ..., u_L]`.
    pub u: Vec<SignalTensor>,
    /// Per-layer objective traces (empty vectors unless recorded).
    pub objective_trace: Vec<Vec<f64>>,
    /// Per-layer objective at the returned codes.
    pub final_objective: Vec<f64>,
    /// Per-layer `‖x_{l-1} − A_l * x_l − B_l * u_l‖² / n`.
    pub layer_residual_mse: Vec<f64>,
}

impl Encoding {
    pub fn depth(&self) -> usize {
        self.x.len()
    }

    pub fn zeros_like(model: &HierarchicalModel, input: (usize, usize)) -> Option<Encoding> {
        let mut x = Vec::new();
        let mut u = Vec::new();
        for l in 1..=model.depth() {
            let (h, w) = model.code_size(l, input)?;
            let cfg = model.config(l);
            x.push(SignalTensor::zeros(cfg.scale_channels, h, w));
            u.push(SignalTensor::zeros(cfg.detail_channels, h, w));
        }
        let d = model.depth();
        Some(Encoding {
            x,
            u,
            objective_trace: vec![Vec::new(); d],
            final_objective: vec![0.0; d],
            layer_residual_mse: vec![0.0; d],
        })
    }
}

/// Encodes `image` layer by layer with FISTA from a cold (zero) start.
pub fn encode(model: &HierarchicalModel, image: &SignalTensor, settings: &FistaSettings) -> Result<Encoding> {
    if image.channels() != model.input_channels() {
        return Err(Error::Shape(format!(
            "image {:?} has {} channels, model expects {}",
            image.shape(),
            image.channels(),
            model.input_channels()
        )));
    }
    let depth = model.depth();
    let mut enc = Encoding {
        x: Vec::with_capacity(depth),
        u: Vec::with_capacity(depth),
        objective_trace: Vec::with_capacity(depth),
        final_objective: Vec::with_capacity(depth),
        layer_residual_mse: Vec::with_capacity(depth),
    };
    for l in 1..=depth {
        let problem = LayerProblem::from(model.layer(l));
        let target = if l == 1 { image } else { &enc.x[l - 2] };
        let sol = fista_layer(target, &problem, settings, None).map_err(|e| e.in_layer(l))?;
        let res = residual(target, problem.a, &sol.x, problem.b, &sol.u).map_err(|e| e.in_layer(l))?;
        let fid = res.norm_l2_sq();
        let obj = 0.5 * fid + problem.lambda * sol.u.norm_l1() + 0.5 * problem.gamma * sol.x.norm_l2_sq();
        if !obj.is_finite() {
            return Err(Error::Divergence {
                iteration: settings.iters,
                step: settings.step,
            }
            .in_layer(l));
        }
        enc.final_objective.push(obj);
        enc.layer_residual_mse.push(fid / res.len().max(1) as f64);
        enc.objective_trace.push(sol.trace);
        enc.x.push(sol.x);
        enc.u.push(sol.u);
    }
    Ok(enc)
}

/// Encodes every image; runs in parallel with the `parallel` feature. Output
/// order and values do not depend on the thread count.
pub fn encode_batch(
    model: &HierarchicalModel,
    images: &[SignalTensor],
    settings: &FistaSettings,
) -> Result<Vec<Encoding>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        images.par_iter().map(|img| encode(model, img, settings)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        images.iter().map(|img| encode(model, img, settings)).collect()
    }
}

/// Noise-free synthesis of `x_0` from the codes of layers `1..=from_layer`,
/// starting at the estimated scale signal `x_{from_layer}`.
pub fn reconstruct(model: &HierarchicalModel, encoding: &Encoding, from_layer: usize) -> Result<SignalTensor> {
    if from_layer == 0 || from_layer > model.depth() || from_layer > encoding.depth() {
        return Err(Error::Argument(format!(
            "reconstruction layer {from_layer} out of range 1..={}",
            model.depth().min(encoding.depth())
        )));
    }
    let mut x = encoding.x[from_layer - 1].clone();
    for l in (1..=from_layer).rev() {
        let layer = model.layer(l);
        let mut next = conv_full(layer.a, &x).map_err(|e| e.in_layer(l))?;
        next.axpy(1.0, &conv_full(layer.b, &encoding.u[l - 1]).map_err(|e| e.in_layer(l))?);
        x = next;
    }
    Ok(x)
}

/// `‖target − approx‖ / ‖target‖`, or the plain error norm when the target is zero.
pub fn relative_error<T: Real>(target: &SignalTensor<T>, approx: &SignalTensor<T>) -> f64 {
    let diff: f64 = target
        .data()
        .iter()
        .zip(approx.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    let norm = target.norm_l2_sq();
    if norm == 0.0 {
        libm::sqrt(diff)
    } else {
        libm::sqrt(diff / norm)
    }
}

/// Relative error of the full-depth reconstruction of `image`.
pub fn reconstruction_error(model: &HierarchicalModel, image: &SignalTensor, encoding: &Encoding) -> Result<f64> {
    let recon = reconstruct(model, encoding, model.depth())?;
    Ok(relative_error(image, &recon))
}
