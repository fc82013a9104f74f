//! Grids of 2-D planes written as binary PGM (`P5`) images.

use std::fs;
use std::path::Path;

use hcsc_core::{FilterBank, SignalTensor};

use super::DataError;

const SEPARATOR: u8 = 255;
const FLAT: u8 = 128;

/// An 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Montage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Montage {
    /// Tiles equally sized `h x w` planes into a grid with `columns` columns
    /// (default: the next power of two of `ceil(sqrt(n))`) and 1-pixel
    /// separators between tiles. Each plane is min-max scaled on its own; a
    /// constant plane becomes mid-gray.
    pub fn from_planes(planes: &[&[f32]], h: usize, w: usize, columns: Option<usize>) -> Result<Self, DataError> {
        let n = planes.len();
        if n == 0 || h == 0 || w == 0 {
            return Err(DataError::DimMismatch(
                "montage needs at least one non-empty plane".into(),
            ));
        }
        if let Some(p) = planes.iter().find(|p| p.len() != h * w) {
            return Err(DataError::DimMismatch(format!(
                "plane of {} values in a montage of {h}x{w} tiles",
                p.len()
            )));
        }
        let cols = columns
            .unwrap_or_else(|| ((n as f64).sqrt().ceil() as usize).next_power_of_two())
            .clamp(1, n);
        let rows = n.div_ceil(cols);
        let width = cols * w + cols - 1;
        let height = rows * h + rows - 1;
        let mut pixels = vec![SEPARATOR; width * height];
        for (k, plane) in planes.iter().enumerate() {
            let (ty, tx) = (k / cols, k % cols);
            let (y0, x0) = (ty * (h + 1), tx * (w + 1));
            let (lo, hi) = plane.iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
            for i in 0..h {
                for j in 0..w {
                    let v = plane[i * w + j];
                    let g = if hi > lo {
                        (((v - lo) / (hi - lo)) * 255.0).round() as u8
                    } else {
                        FLAT
                    };
                    pixels[(y0 + i) * width + x0 + j] = g;
                }
            }
        }
        Ok(Montage { width, height, pixels })
    }

    /// One tile per channel.
    pub fn from_tensor(t: &SignalTensor, columns: Option<usize>) -> Result<Self, DataError> {
        let planes: Vec<&[f32]> = (0..t.channels()).map(|c| t.channel(c)).collect();
        Self::from_planes(&planes, t.height(), t.width(), columns)
    }

    /// One tile per (code channel, output channel) kernel, ordered by code channel.
    pub fn from_filters(bank: &FilterBank, columns: Option<usize>) -> Result<Self, DataError> {
        let (out, inp, h, w) = bank.shape();
        let planes: Vec<&[f32]> = (0..inp)
            .flat_map(|c| (0..out).map(move |r| (r, c)))
            .map(|(r, c)| bank.kernel(r, c))
            .collect();
        Self::from_planes(&planes, h, w, columns)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), DataError> {
        let path = path.as_ref();
        fs::write(path, self.to_pgm()).map_err(|source| DataError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Writes every channel of every tensor into one montage. All tensors must
/// share a spatial size.
pub fn export_montage(
    tensors: &[SignalTensor],
    columns: Option<usize>,
    path: impl AsRef<Path>,
) -> Result<Montage, DataError> {
    let first = tensors
        .first()
        .ok_or_else(|| DataError::DimMismatch("nothing to export".into()))?;
    let planes: Vec<&[f32]> = tensors
        .iter()
        .flat_map(|t| (0..t.channels()).map(move |c| t.channel(c)))
        .collect();
    let m = Montage::from_planes(&planes, first.height(), first.width(), columns)?;
    m.save(path)?;
    Ok(m)
}
