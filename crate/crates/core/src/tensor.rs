//! Dense real tensors for signals and filter banks, elementwise reductions and
//! the soft-thresholding proximal operator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;

use crate::{Error, Result};

/// Scalar type stored in tensors. Reductions always accumulate in `f64`.
pub trait Real: Float + Default + Debug + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline(always)]
    fn from_f64(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// A multi-channel 2-D signal stored row-major as (channel, row, col).
#[derive(Clone, Debug, PartialEq)]
pub struct SignalTensor<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> SignalTensor<T> {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        SignalTensor {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "signal {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(SignalTensor {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for i in 0..height {
                for j in 0..width {
                    data.push(f(c, i, j));
                }
            }
        }
        SignalTensor {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }
    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }
    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }
    /// `(channels, height, width)`
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }
    #[inline]
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }
    #[inline]
    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, i: usize, j: usize) -> T {
        self.data[(c * self.height + i) * self.width + j]
    }
    #[inline]
    pub fn set(&mut self, c: usize, i: usize, j: usize, v: T) {
        self.data[(c * self.height + i) * self.width + j] = v;
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.shape() == other.shape()
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        SignalTensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn cast<U: Real>(&self) -> SignalTensor<U> {
        SignalTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        assert!(self.same_shape(other), "axpy on mismatched shapes");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|v| *v = *v * alpha);
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Self {
        assert!(self.same_shape(other), "sub on mismatched shapes");
        SignalTensor {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect(),
            ..*self
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fraction of entries that are exactly nonzero.
    pub fn nonzero_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().filter(|v| !v.is_zero()).count() as f64 / self.data.len() as f64
    }

    pub fn dot(&self, other: &Self) -> f64 {
        inner_product(self, other)
    }
    pub fn norm_l1(&self) -> f64 {
        norm_l1(self)
    }
    pub fn norm_l2_sq(&self) -> f64 {
        norm_l2_sq(self)
    }
    pub fn norm_l2(&self) -> f64 {
        libm::sqrt(norm_l2_sq(self))
    }
}

/// A 4-D filter bank stored as (out-channel, in-channel, row, col).
///
/// `out_channels` is the channel count of the synthesized signal and
/// `in_channels` the channel count of the code the bank is applied to. The
/// *atom* of code channel `c` is the slice over (out, row, col) for fixed `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank<T = f32> {
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
    data: Vec<T>,
}

impl<T: Real> FilterBank<T> {
    pub fn zeros(out_channels: usize, in_channels: usize, kernel_h: usize, kernel_w: usize) -> Self {
        FilterBank {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data: vec![T::zero(); out_channels * in_channels * kernel_h * kernel_w],
        }
    }

    pub fn from_vec(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        data: Vec<T>,
    ) -> Result<Self> {
        let n = out_channels * in_channels * kernel_h * kernel_w;
        if data.len() != n {
            return Err(Error::Shape(format!(
                "filter bank {out_channels}x{in_channels}x{kernel_h}x{kernel_w} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(FilterBank {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data,
        })
    }

    pub fn from_fn(
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
        mut f: impl FnMut(usize, usize, usize, usize) -> T,
    ) -> Self {
        let mut data = Vec::with_capacity(out_channels * in_channels * kernel_h * kernel_w);
        for r in 0..out_channels {
            for c in 0..in_channels {
                for i in 0..kernel_h {
                    for j in 0..kernel_w {
                        data.push(f(r, c, i, j));
                    }
                }
            }
        }
        FilterBank {
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            data,
        }
    }

    #[inline]
    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
    #[inline]
    pub fn in_channels(&self) -> usize {
        self.in_channels
    }
    #[inline]
    pub fn kernel_h(&self) -> usize {
        self.kernel_h
    }
    #[inline]
    pub fn kernel_w(&self) -> usize {
        self.kernel_w
    }
    /// `(out_channels, in_channels, kernel_h, kernel_w)`
    #[inline]
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
    }
    #[inline]
    pub fn kernel_len(&self) -> usize {
        self.kernel_h * self.kernel_w
    }
    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    #[inline]
    pub fn data(&self) -> &[T] {
        &self.data
    }
    #[inline]
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    /// The `kernel_h x kernel_w` kernel connecting code channel `c` to output channel `r`.
    #[inline]
    pub fn kernel(&self, r: usize, c: usize) -> &[T] {
        let k = self.kernel_len();
        let off = (r * self.in_channels + c) * k;
        &self.data[off..off + k]
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize, i: usize, j: usize) -> T {
        self.data[((r * self.in_channels + c) * self.kernel_h + i) * self.kernel_w + j]
    }
    #[inline]
    pub fn set(&mut self, r: usize, c: usize, i: usize, j: usize, v: T) {
        self.data[((r * self.in_channels + c) * self.kernel_h + i) * self.kernel_w + j] = v;
    }

    pub fn cast<U: Real>(&self) -> FilterBank<U> {
        FilterBank {
            out_channels: self.out_channels,
            in_channels: self.in_channels,
            kernel_h: self.kernel_h,
            kernel_w: self.kernel_w,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: T, other: &Self) {
        assert_eq!(self.shape(), other.shape(), "axpy on mismatched filter banks");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: T) {
        self.data.iter_mut().for_each(|v| *v = *v * alpha);
    }

    /// Squared l2 norm of the atom of code channel `c`.
    pub fn atom_norm_sq(&self, c: usize) -> f64 {
        let mut s = 0.0;
        for r in 0..self.out_channels {
            for v in self.kernel(r, c) {
                let v = v.as_f64();
                s += v * v;
            }
        }
        s
    }

    pub fn atom_norm(&self, c: usize) -> f64 {
        libm::sqrt(self.atom_norm_sq(c))
    }

    /// Multiplies every entry of the atom of code channel `c` by `factor`.
    pub fn scale_atom(&mut self, c: usize, factor: f64) {
        let k = self.kernel_len();
        for r in 0..self.out_channels {
            let off = (r * self.in_channels + c) * k;
            for v in &mut self.data[off..off + k] {
                *v = T::from_f64(v.as_f64() * factor);
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn norm_l2_sq(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
    }
}

/// `<a, b>` accumulated in `f64`. Panics if the shapes differ.
pub fn inner_product<T: Real>(a: &SignalTensor<T>, b: &SignalTensor<T>) -> f64 {
    assert!(a.same_shape(b), "inner product of mismatched shapes");
    a.data.iter().zip(&b.data).map(|(x, y)| x.as_f64() * y.as_f64()).sum()
}

pub fn norm_l1<T: Real>(t: &SignalTensor<T>) -> f64 {
    t.data.iter().map(|v| v.as_f64().abs()).sum()
}

pub fn norm_l2_sq<T: Real>(t: &SignalTensor<T>) -> f64 {
    t.data.iter().map(|v| v.as_f64() * v.as_f64()).sum()
}

/// Scalar soft-threshold `relu(b - t) - relu(-b - t)`.
#[inline(always)]
pub fn shrink<T: Real>(b: T, threshold: T) -> T {
    let zero = T::zero();
    (b - threshold).max(zero) - (-b - threshold).max(zero)
}

/// Elementwise soft-thresholding, the proximal operator of `threshold * |.|_1`.
pub fn soft_threshold<T: Real>(signal: &SignalTensor<T>, threshold: T) -> Result<SignalTensor<T>> {
    let mut out = signal.clone();
    soft_threshold_in_place(&mut out, threshold)?;
    Ok(out)
}

pub fn soft_threshold_in_place<T: Real>(signal: &mut SignalTensor<T>, threshold: T) -> Result<()> {
    if threshold.is_nan() || threshold < T::zero() {
        return Err(Error::Argument(format!(
            "soft-threshold level must be nonnegative, got {threshold:?}"
        )));
    }
    for v in &mut signal.data {
        *v = shrink(*v, threshold);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn soft_threshold_values() {
        let t = SignalTensor::from_vec(1, 1, 3, vec![2.0f64, -0.5, -3.0]).unwrap();
        let s = soft_threshold(&t, 1.0).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0, -2.0]);
    }

    #[test]
    fn soft_threshold_zero_is_identity() {
        let t = SignalTensor::from_fn(2, 3, 3, |c, i, j| (c as f32 - 0.5) * (i as f32 - j as f32));
        assert_eq!(soft_threshold(&t, 0.0).unwrap(), t);
    }

    #[test]
    fn negative_threshold_is_rejected() {
        let t = SignalTensor::<f32>::zeros(1, 2, 2);
        assert!(matches!(soft_threshold(&t, -0.1), Err(Error::Argument(_))));
        assert!(matches!(soft_threshold(&t, f32::NAN), Err(Error::Argument(_))));
    }

    #[test]
    fn reductions() {
        let z = SignalTensor::<f32>::zeros(2, 2, 2);
        assert_eq!((z.norm_l1(), z.norm_l2_sq(), z.dot(&z)), (0.0, 0.0, 0.0));
        let t = SignalTensor::from_vec(1, 1, 2, vec![3.0f32, -4.0]).unwrap();
        assert_eq!(t.norm_l1(), 7.0);
        assert_eq!(t.norm_l2_sq(), 25.0);
        assert_eq!(t.dot(&t), t.norm_l2_sq());
    }

    #[test]
    fn shape_errors() {
        assert!(SignalTensor::<f32>::from_vec(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FilterBank::<f32>::from_vec(1, 2, 2, 2, vec![0.0; 7]).is_err());
    }

    #[test]
    fn atom_norms() {
        let mut f = FilterBank::from_fn(2, 3, 2, 2, |r, c, _, _| (r + c + 1) as f64);
        // atom 1: out 0 has value 2, out 1 has value 3, four taps each
        assert_eq!(f.atom_norm_sq(1), 4.0 * 4.0 + 4.0 * 9.0);
        f.scale_atom(1, 0.0);
        assert_eq!(f.atom_norm_sq(1), 0.0);
        assert_eq!(f.atom_norm_sq(0), 4.0 + 16.0);
    }
}
