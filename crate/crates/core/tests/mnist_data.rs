//! Validates the MNIST subset shipped in data/mnist: IDX headers, counts,
//! label range, class balance, and the byte-exact writer round trip on the
//! real files.

use std::path::PathBuf;

use geossm_core::mnist::{load_mnist_idx, write_idx_images, write_idx_labels};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
}

#[test]
fn shipped_subset_loads_and_round_trips() {
    let dir = data_dir();
    for (images, labels, want_count) in [
        ("train-images.idx", "train-labels.idx", 7996),
        ("test-images.idx", "test-labels.idx", 2004),
    ] {
        let img_path = dir.join(images);
        let lbl_path = dir.join(labels);
        let set = load_mnist_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(set.count, want_count);
        assert_eq!((set.rows, set.cols), (28, 28));
        assert_eq!(set.seq_len(), 784);

        let mut per_class = [0usize; 10];
        for &l in &set.labels {
            per_class[l as usize] += 1;
        }
        // The split is stratified per digit at 80/20, so every class holds
        // roughly a tenth of each file.
        for (digit, &n) in per_class.iter().enumerate() {
            let frac = n as f64 / set.count as f64;
            assert!(
                (frac - 0.1).abs() < 0.02,
                "digit {digit}: {n} of {} ({frac:.3})",
                set.count
            );
        }

        let tmp = std::env::temp_dir().join(format!("geossm_mnist_rt_{images}"));
        write_idx_images(&tmp, set.rows, set.cols, &set.images).unwrap();
        assert_eq!(std::fs::read(&tmp).unwrap(), std::fs::read(&img_path).unwrap());
        let tmp_l = std::env::temp_dir().join(format!("geossm_mnist_rt_{labels}"));
        write_idx_labels(&tmp_l, &set.labels).unwrap();
        assert_eq!(std::fs::read(&tmp_l).unwrap(), std::fs::read(&lbl_path).unwrap());
    }
}

#[test]
fn batch_view_of_real_images_stays_in_vocabulary() {
    let dir = data_dir();
    let set = load_mnist_idx(&dir.join("test-images.idx"), &dir.join("test-labels.idx")).unwrap();
    let batch = set.batch(&[0, 1, 2, 3]);
    assert_eq!(batch.len, 784);
    assert_eq!(batch.vocab, 256);
    assert!(batch.tokens.iter().all(|&t| t < 256));
    assert!(batch.targets.iter().all(|&t| t < 10));
}
