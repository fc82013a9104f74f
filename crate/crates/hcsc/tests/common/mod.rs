#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};

use hcsc::dataio::idx::{encode_idx_images, encode_idx_labels};
use hcsc::hcsc_core::SignalTensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` noisy 12x12 images of class-dependent strokes: a horizontal bar whose
/// row encodes the label, plus one vertical bar for odd labels.
pub fn strokes(n: usize, seed: u64) -> (Vec<SignalTensor>, Vec<u8>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = (i % 4) as u8;
        let row = 2 + 2 * y as usize;
        let img = SignalTensor::from_fn(1, 12, 12, |_, r, c| {
            let on = (r == row && (2..10).contains(&c)) || (y % 2 == 1 && c == 6 && (1..11).contains(&r));
            let v: f32 = if on { 0.9 } else { 0.0 };
            (v + rng.random_range(0.0..0.1f32)).min(1.0)
        });
        // round through bytes so the files hold exactly these pixels
        images.push(img.map(|p| (p * 255.0).round() / 255.0));
        labels.push(y);
    }
    (images, labels)
}

/// Writes a train split of `n_train` and a test split of `n_test` examples
/// under `dir` with the standard MNIST file names.
pub fn write_dataset(dir: &Path, n_train: usize, n_test: usize) -> PathBuf {
    fs::create_dir_all(dir).unwrap();
    let (tr, trl) = strokes(n_train, 1);
    let (te, tel) = strokes(n_test, 2);
    fs::write(dir.join("train-images-idx3-ubyte"), encode_idx_images(&tr)).unwrap();
    fs::write(dir.join("train-labels-idx1-ubyte"), encode_idx_labels(&trl)).unwrap();
    fs::write(dir.join("t10k-images-idx3-ubyte"), encode_idx_images(&te)).unwrap();
    fs::write(dir.join("t10k-labels-idx1-ubyte"), encode_idx_labels(&tel)).unwrap();
    dir.to_path_buf()
}

/// Runs the CLI in-process and returns (result, stdout).
pub fn run(args: &[&str]) -> (Result<(), hcsc::cli::CliError>, String) {
    let mut out: Vec<u8> = Vec::new();
    let mut full = vec!["hcsc"];
    full.extend_from_slice(args);
    let r = hcsc::cli::run(full, &mut out);
    (r, String::from_utf8(out).unwrap())
}

/// Flags of a small, fast model for the 12x12 fixture.
pub const SMALL: &[&str] = &[
    "--layers=1",
    "--detail-channels=4",
    "--kernel=3",
    "--fista-iters=10",
    "--batch-size=4",
    "--threads=1",
];
