//! Full convolution, valid correlation and the filter-gradient correlation.
//!
//! `conv_full` flips the kernel and zero-pads implicitly, so an `h x w` signal
//! and an `H x W` kernel give an `(h + H - 1) x (w + W - 1)` output.
//! `corr_valid` slides the unflipped kernel over positions where it fits
//! entirely, and is the exact adjoint of `conv_full`:
//! `<A * x, y> = <x, y ⋆ A>`.
//!
//! The public functions use row-blocked kernels that accumulate each
//! (output, input) channel pair in `T` and the sum over channels in `f64`.
//! [`reference`] holds the direct-summation versions used to check them.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::{FilterBank, Real, SignalTensor};
use crate::{Error, Result};

fn check_conv_full<T: Real>(filters: &FilterBank<T>, signal: &SignalTensor<T>) -> Result<()> {
    if signal.channels() != filters.in_channels() {
        return Err(Error::Shape(format!(
            "conv_full: filter bank {:?} expects {} input channels, signal is {:?}",
            filters.shape(),
            filters.in_channels(),
            signal.shape()
        )));
    }
    Ok(())
}

fn check_corr_valid<T: Real>(signal: &SignalTensor<T>, filters: &FilterBank<T>) -> Result<()> {
    if signal.channels() != filters.out_channels() {
        return Err(Error::Shape(format!(
            "corr_valid: filter bank {:?} expects {} signal channels, signal is {:?}",
            filters.shape(),
            filters.out_channels(),
            signal.shape()
        )));
    }
    if signal.height() < filters.kernel_h() || signal.width() < filters.kernel_w() {
        return Err(Error::Shape(format!(
            "corr_valid: kernel {}x{} larger than signal {:?}",
            filters.kernel_h(),
            filters.kernel_w(),
            signal.shape()
        )));
    }
    Ok(())
}

fn check_filter_grad<T: Real>(
    residual: &SignalTensor<T>,
    code: &SignalTensor<T>,
    kernel_h: usize,
    kernel_w: usize,
) -> Result<()> {
    if kernel_h == 0
        || kernel_w == 0
        || residual.height() + 1 != code.height() + kernel_h
        || residual.width() + 1 != code.width() + kernel_w
    {
        return Err(Error::Shape(format!(
            "corr_filter_grad: residual {:?} is not code {:?} fully convolved with a {kernel_h}x{kernel_w} kernel",
            residual.shape(),
            code.shape()
        )));
    }
    Ok(())
}

/// Output spatial size of a full convolution.
#[inline]
pub fn full_size(h: usize, w: usize, kernel_h: usize, kernel_w: usize) -> (usize, usize) {
    (h + kernel_h - 1, w + kernel_w - 1)
}

/// Output spatial size of a valid correlation, `None` when the kernel does not fit.
#[inline]
pub fn valid_size(h: usize, w: usize, kernel_h: usize, kernel_w: usize) -> Option<(usize, usize)> {
    if h < kernel_h || w < kernel_w {
        None
    } else {
        Some((h - kernel_h + 1, w - kernel_w + 1))
    }
}

#[inline(always)]
fn axpy<T: Real>(k: T, src: &[T], dst: &mut [T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + k * s;
    }
}

#[inline(always)]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        s = s + x * y;
    }
    s
}

/// Reusable buffers for the accumulate kernels.
#[derive(Clone, Debug, Default)]
pub struct ConvScratch<T> {
    plane: Vec<T>,
}

impl<T: Real> ConvScratch<T> {
    pub fn new() -> Self {
        ConvScratch { plane: Vec::new() }
    }

    fn plane(&mut self, n: usize) -> &mut [T] {
        if self.plane.len() < n {
            self.plane.resize(n, T::zero());
        }
        &mut self.plane[..n]
    }
}

/// Adds `filters * signal` (full convolution) into `acc`, laid out as
/// `out_channels x (h + H - 1) x (w + W - 1)`. Shapes are not checked.
pub fn conv_full_accumulate<T: Real>(
    filters: &FilterBank<T>,
    signal: &SignalTensor<T>,
    acc: &mut [f64],
    scratch: &mut ConvScratch<T>,
) {
    let (h, w) = (signal.height(), signal.width());
    let (kh, kw) = (filters.kernel_h(), filters.kernel_w());
    let (ho, wo) = full_size(h, w, kh, kw);
    let plane_out = ho * wo;
    debug_assert_eq!(acc.len(), filters.out_channels() * plane_out);
    let tmp = scratch.plane(plane_out);
    for r in 0..filters.out_channels() {
        let acc_r = &mut acc[r * plane_out..(r + 1) * plane_out];
        for c in 0..filters.in_channels() {
            let kernel = filters.kernel(r, c);
            if kernel.iter().all(|k| k.is_zero()) {
                continue;
            }
            tmp.iter_mut().for_each(|v| *v = T::zero());
            let sig = signal.channel(c);
            for i in 0..kh {
                for j in 0..kw {
                    let k = kernel[i * kw + j];
                    if k.is_zero() {
                        continue;
                    }
                    for a in 0..h {
                        let start = (a + i) * wo + j;
                        axpy(k, &sig[a * w..(a + 1) * w], &mut tmp[start..start + w]);
                    }
                }
            }
            for (dst, &v) in acc_r.iter_mut().zip(tmp.iter()) {
                *dst += v.as_f64();
            }
        }
    }
}

/// Adds `signal ⋆ filters` (valid correlation) into `acc`, laid out as
/// `in_channels x (h - H + 1) x (w - W + 1)`. Shapes are not checked.
pub fn corr_valid_accumulate<T: Real>(
    signal: &SignalTensor<T>,
    filters: &FilterBank<T>,
    acc: &mut [f64],
    scratch: &mut ConvScratch<T>,
) {
    let w = signal.width();
    let (kh, kw) = (filters.kernel_h(), filters.kernel_w());
    let (ho, wo) = (signal.height() + 1 - kh, signal.width() + 1 - kw);
    let plane_out = ho * wo;
    debug_assert_eq!(acc.len(), filters.in_channels() * plane_out);
    let tmp = scratch.plane(plane_out);
    for c in 0..filters.in_channels() {
        let acc_c = &mut acc[c * plane_out..(c + 1) * plane_out];
        for r in 0..filters.out_channels() {
            let kernel = filters.kernel(r, c);
            if kernel.iter().all(|k| k.is_zero()) {
                continue;
            }
            tmp.iter_mut().for_each(|v| *v = T::zero());
            let sig = signal.channel(r);
            for i in 0..kh {
                for j in 0..kw {
                    let k = kernel[i * kw + j];
                    if k.is_zero() {
                        continue;
                    }
                    for a in 0..ho {
                        let start = (a + i) * w + j;
                        axpy(k, &sig[start..start + wo], &mut tmp[a * wo..(a + 1) * wo]);
                    }
                }
            }
            for (dst, &v) in acc_c.iter_mut().zip(tmp.iter()) {
                *dst += v.as_f64();
            }
        }
    }
}

fn from_acc<T: Real>(channels: usize, h: usize, w: usize, acc: Vec<f64>) -> SignalTensor<T> {
    let data = acc.into_iter().map(T::from_f64).collect();
    SignalTensor::from_vec(channels, h, w, data).expect("accumulator sized by caller")
}

/// Multi-channel full convolution: `out(r) = sum_c filters(r, c) * signal(c)`.
pub fn conv_full<T: Real>(filters: &FilterBank<T>, signal: &SignalTensor<T>) -> Result<SignalTensor<T>> {
    check_conv_full(filters, signal)?;
    let (ho, wo) = full_size(signal.height(), signal.width(), filters.kernel_h(), filters.kernel_w());
    let mut acc = vec![0.0f64; filters.out_channels() * ho * wo];
    conv_full_accumulate(filters, signal, &mut acc, &mut ConvScratch::new());
    Ok(from_acc(filters.out_channels(), ho, wo, acc))
}

/// Multi-channel valid correlation: `out(c) = sum_r signal(r) ⋆ filters(r, c)`.
pub fn corr_valid<T: Real>(signal: &SignalTensor<T>, filters: &FilterBank<T>) -> Result<SignalTensor<T>> {
    check_corr_valid(signal, filters)?;
    let (kh, kw) = (filters.kernel_h(), filters.kernel_w());
    let (ho, wo) = (signal.height() + 1 - kh, signal.width() + 1 - kw);
    let mut acc = vec![0.0f64; filters.in_channels() * ho * wo];
    corr_valid_accumulate(signal, filters, &mut acc, &mut ConvScratch::new());
    Ok(from_acc(filters.in_channels(), ho, wo, acc))
}

/// Gradient of `½‖residual‖²` with respect to the entries of a filter bank
/// that was fully convolved with `code` to produce `residual`:
/// `grad(r, c, i, j) = sum_{a,b} residual(r, a + i, b + j) · code(c, a, b)`.
pub fn corr_filter_grad<T: Real>(
    residual: &SignalTensor<T>,
    code: &SignalTensor<T>,
    kernel_h: usize,
    kernel_w: usize,
) -> Result<FilterBank<T>> {
    check_filter_grad(residual, code, kernel_h, kernel_w)?;
    let mut acc = vec![0.0f64; residual.channels() * code.channels() * kernel_h * kernel_w];
    corr_filter_grad_accumulate(residual, code, kernel_h, kernel_w, &mut acc);
    let data = acc.into_iter().map(T::from_f64).collect();
    FilterBank::from_vec(residual.channels(), code.channels(), kernel_h, kernel_w, data)
}

/// Adds the filter gradient of one example into `acc`
/// (`residual.channels x code.channels x kernel_h x kernel_w`). Shapes are not checked.
pub fn corr_filter_grad_accumulate<T: Real>(
    residual: &SignalTensor<T>,
    code: &SignalTensor<T>,
    kernel_h: usize,
    kernel_w: usize,
    acc: &mut [f64],
) {
    let (hc, wc) = (code.height(), code.width());
    let w = residual.width();
    let klen = kernel_h * kernel_w;
    for r in 0..residual.channels() {
        let res = residual.channel(r);
        for c in 0..code.channels() {
            let cod = code.channel(c);
            if cod.iter().all(|v| v.is_zero()) {
                continue;
            }
            let out = &mut acc[(r * code.channels() + c) * klen..(r * code.channels() + c + 1) * klen];
            for i in 0..kernel_h {
                for j in 0..kernel_w {
                    let mut s = 0.0f64;
                    for a in 0..hc {
                        let start = (a + i) * w + j;
                        s += dot(&res[start..start + wc], &cod[a * wc..(a + 1) * wc]).as_f64();
                    }
                    out[i * kernel_w + j] += s;
                }
            }
        }
    }
}

/// Direct-summation kernels. Every output entry is one `f64` sum over its
/// defining index set; no blocking or reuse.
pub mod reference {
    use super::*;

    pub fn conv_full<T: Real>(filters: &FilterBank<T>, signal: &SignalTensor<T>) -> Result<SignalTensor<T>> {
        check_conv_full(filters, signal)?;
        let (h, w) = (signal.height() as isize, signal.width() as isize);
        let (kh, kw) = (filters.kernel_h(), filters.kernel_w());
        let (ho, wo) = full_size(signal.height(), signal.width(), kh, kw);
        Ok(SignalTensor::from_fn(filters.out_channels(), ho, wo, |r, p, q| {
            let mut s = 0.0f64;
            for c in 0..filters.in_channels() {
                for i in 0..kh {
                    for j in 0..kw {
                        let a = p as isize - i as isize;
                        let b = q as isize - j as isize;
                        if a >= 0 && a < h && b >= 0 && b < w {
                            s += filters.get(r, c, i, j).as_f64() * signal.get(c, a as usize, b as usize).as_f64();
                        }
                    }
                }
            }
            T::from_f64(s)
        }))
    }

    pub fn corr_valid<T: Real>(signal: &SignalTensor<T>, filters: &FilterBank<T>) -> Result<SignalTensor<T>> {
        check_corr_valid(signal, filters)?;
        let (kh, kw) = (filters.kernel_h(), filters.kernel_w());
        let (ho, wo) = (signal.height() + 1 - kh, signal.width() + 1 - kw);
        Ok(SignalTensor::from_fn(filters.in_channels(), ho, wo, |c, a, b| {
            let mut s = 0.0f64;
            for r in 0..filters.out_channels() {
                for i in 0..kh {
                    for j in 0..kw {
                        s += filters.get(r, c, i, j).as_f64() * signal.get(r, a + i, b + j).as_f64();
                    }
                }
            }
            T::from_f64(s)
        }))
    }

    pub fn corr_filter_grad<T: Real>(
        residual: &SignalTensor<T>,
        code: &SignalTensor<T>,
        kernel_h: usize,
        kernel_w: usize,
    ) -> Result<FilterBank<T>> {
        check_filter_grad(residual, code, kernel_h, kernel_w)?;
        Ok(FilterBank::from_fn(
            residual.channels(),
            code.channels(),
            kernel_h,
            kernel_w,
            |r, c, i, j| {
                let mut s = 0.0f64;
                for a in 0..code.height() {
                    for b in 0..code.width() {
                        s += residual.get(r, a + i, b + j).as_f64() * code.get(c, a, b).as_f64();
                    }
                }
                T::from_f64(s)
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_signal_gives_zero_output() {
        let f = FilterBank::from_fn(3, 2, 3, 3, |r, c, i, j| (r + 2 * c + i * j) as f32 - 2.0);
        let x = SignalTensor::<f32>::zeros(2, 4, 5);
        let y = conv_full(&f, &x).unwrap();
        assert_eq!(y.shape(), (3, 6, 7));
        assert!(y.data().iter().all(|&v| v == 0.0));
        let z = corr_valid(&SignalTensor::<f32>::zeros(3, 6, 7), &f).unwrap();
        assert_eq!(z.shape(), (2, 4, 5));
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_impulse_reproduces_kernel() {
        // out(p, q) = sum k(i, j) x(p - i, q - j) = k(p, q) for a unit impulse x
        let k = FilterBank::from_vec(1, 1, 2, 2, vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let x = SignalTensor::from_vec(1, 1, 1, vec![1.0f64]).unwrap();
        let y = conv_full(&k, &x).unwrap();
        assert_eq!(y.shape(), (1, 2, 2));
        assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);
        // sliding the flipped kernel over the zero-padded impulse gives the same
        let flipped = FilterBank::from_vec(1, 1, 2, 2, vec![4.0f64, 3.0, 2.0, 1.0]).unwrap();
        let padded = SignalTensor::from_fn(1, 3, 3, |_, i, j| if i == 1 && j == 1 { 1.0 } else { 0.0 });
        assert_eq!(reference::corr_valid(&padded, &flipped).unwrap().data(), y.data());
    }

    #[test]
    fn mnist_layer_shapes() {
        let a = FilterBank::<f32>::zeros(1, 1, 5, 5);
        let x1 = SignalTensor::<f32>::zeros(1, 24, 24);
        assert_eq!(conv_full(&a, &x1).unwrap().shape(), (1, 28, 28));
        let r = SignalTensor::<f32>::zeros(1, 28, 28);
        assert_eq!(corr_valid(&r, &a).unwrap().shape(), (1, 24, 24));
        let b = FilterBank::<f32>::zeros(1, 32, 5, 5);
        assert_eq!(corr_valid(&r, &b).unwrap().shape(), (32, 24, 24));
    }

    #[test]
    fn shape_errors_name_shapes() {
        let f = FilterBank::<f32>::zeros(1, 2, 3, 3);
        let x = SignalTensor::<f32>::zeros(3, 4, 4);
        let e = conv_full(&f, &x).unwrap_err();
        let msg = alloc::string::ToString::to_string(&e);
        assert!(msg.contains("(1, 2, 3, 3)") && msg.contains("(3, 4, 4)"), "{msg}");
        let small = SignalTensor::<f32>::zeros(1, 2, 4);
        assert!(matches!(corr_valid(&small, &f), Err(Error::Shape(_))));
        let res = SignalTensor::<f32>::zeros(1, 5, 5);
        let code = SignalTensor::<f32>::zeros(2, 3, 3);
        assert!(corr_filter_grad(&res, &code, 3, 3).is_ok());
        assert!(matches!(corr_filter_grad(&res, &code, 2, 3), Err(Error::Shape(_))));
    }

    #[test]
    fn filter_grad_zero_residual() {
        let res = SignalTensor::<f32>::zeros(2, 6, 6);
        let code = SignalTensor::from_fn(3, 4, 4, |c, i, j| (c + i + j) as f32);
        let g = corr_filter_grad(&res, &code, 3, 3).unwrap();
        assert_eq!(g.shape(), (2, 3, 3, 3));
        assert!(g.data().iter().all(|&v| v == 0.0));
    }
}
