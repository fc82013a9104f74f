mod common;

use hcsc::dataio::checkpoint::{codes_container, codes_from_container};
use hcsc::dataio::idx::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels};
use hcsc::dataio::{export_montage, load_checkpoint, save_checkpoint, Checkpoint, Container, Dataset, Split};
use hcsc::hcsc_core::inference::{encode_batch, FistaSettings};
use hcsc::pipeline::{InputTransform, ModelSpec};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = parse_idx_images(&bytes);
        let _ = parse_idx_labels(&bytes);
        let _ = Container::from_bytes(&bytes);
    }

    #[test]
    fn mutated_headers_are_rejected_or_consistent(
        pos in 0usize..16,
        value in any::<u8>(),
        cut in 0usize..8,
    ) {
        let (imgs, _) = common::strokes(3, 9);
        let mut bytes = encode_idx_images(&imgs);
        bytes[pos] = value;
        let len = bytes.len() - cut;
        bytes.truncate(len);
        if let Ok(parsed) = parse_idx_images(&bytes) {
            // whatever parses must account for every payload byte
            let payload: usize = parsed.iter().map(|t| t.len()).sum();
            prop_assert_eq!(payload + 16, bytes.len());
        }
    }

    #[test]
    fn huge_declared_dimensions_fail_cleanly(n in any::<u32>(), h in any::<u32>(), w in any::<u32>()) {
        let mut bytes = vec![0, 0, 8, 3];
        for v in [n, h, w] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        bytes.extend_from_slice(&[7; 32]);
        let r = parse_idx_images(&bytes);
        if n as u128 * h as u128 * w as u128 != 32 {
            prop_assert!(r.is_err());
        }
    }

    #[test]
    fn idx_round_trip(labels in proptest::collection::vec(0u8..10, 0..20)) {
        let bytes = encode_idx_labels(&labels);
        prop_assert_eq!(parse_idx_labels(&bytes).unwrap(), labels);
    }
}

#[test]
fn dataset_files_round_trip_exactly() {
    let dir = tempfile::tempdir().unwrap();
    common::write_dataset(dir.path(), 10, 5);
    let (imgs, labels) = common::strokes(10, 1);
    let train = Dataset::load_mnist(dir.path(), Split::Train).unwrap();
    assert_eq!(train.images, imgs);
    assert_eq!(train.labels, labels);
    assert!(train
        .images
        .iter()
        .flat_map(|t| t.data())
        .all(|&p| (0.0..=1.0).contains(&p)));
    assert_eq!(Dataset::load_mnist(dir.path(), Split::Test).unwrap().len(), 5);
}

#[test]
fn mismatched_image_and_label_counts() {
    let dir = tempfile::tempdir().unwrap();
    common::write_dataset(dir.path(), 10, 5);
    std::fs::write(dir.path().join("t10k-labels-idx1-ubyte"), encode_idx_labels(&[1, 2])).unwrap();
    let err = Dataset::load_mnist(dir.path(), Split::Test).unwrap_err();
    assert_eq!(err.class(), "dim-mismatch");
}

fn trained_checkpoint(tied: bool, layers: usize) -> Checkpoint {
    let spec = ModelSpec {
        layers,
        tied,
        layer: hcsc::hcsc_core::model::LayerConfig {
            detail_channels: 3,
            kernel_h: 3,
            kernel_w: 3,
            ..Default::default()
        },
    };
    let mut ck = Checkpoint::new(spec.init(1, 4).unwrap(), 4, FistaSettings::default());
    ck.input = InputTransform {
        offset: 0.1307,
        scale: 3.2456,
    };
    ck
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for (tied, layers) in [(true, 3), (false, 2), (false, 1)] {
        let ck = trained_checkpoint(tied, layers);
        let a = dir.path().join("a.hcsc");
        let b = dir.path().join("b.hcsc");
        save_checkpoint(&a, &ck).unwrap();
        let loaded = load_checkpoint(&a).unwrap();
        assert_eq!(loaded.model, ck.model);
        assert_eq!(loaded.input, ck.input);
        save_checkpoint(&b, &loaded).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}

#[test]
fn truncated_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.hcsc");
    save_checkpoint(&path, &trained_checkpoint(true, 2)).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    for cut in [1, 4, 13, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&path, &bytes[..cut]).unwrap();
        assert!(load_checkpoint(&path).is_err(), "cut at {cut}");
    }
}

#[test]
fn codes_round_trip() {
    let ck = trained_checkpoint(false, 2);
    let (imgs, labels) = common::strokes(3, 5);
    let encs = encode_batch(&ck.model, &imgs, &ck.fista).unwrap();
    let c = codes_container(&encs, Some(&labels)).unwrap();
    let back = Container::from_bytes(&c.to_bytes()).unwrap();
    let decoded = codes_from_container(&back).unwrap();
    assert_eq!(decoded.len(), 3);
    for ((x, u), e) in decoded.iter().zip(&encs) {
        assert_eq!(x, &e.x);
        assert_eq!(u, &e.u);
    }
    let stored: Vec<u8> = back.blob("labels").unwrap().data.iter().map(|&v| v as u8).collect();
    assert_eq!(stored, labels);
}

#[test]
fn montage_file_has_the_expected_geometry() {
    let dir = tempfile::tempdir().unwrap();
    let (imgs, _) = common::strokes(5, 3);
    let path = dir.path().join("m.pgm");
    let m = export_montage(&imgs, Some(3), &path).unwrap();
    // 3 columns x 2 rows of 12x12 tiles with 1-pixel separators
    assert_eq!((m.width, m.height), (38, 25));
    let bytes = std::fs::read(&path).unwrap();
    let header = b"P5\n38 25\n255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 38 * 25);
}
