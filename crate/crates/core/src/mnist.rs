//! IDX-format image/label files and their token-sequence view.
//!
//! Images become sequences by raster scan: one token per pixel, vocabulary
//! 256 (the raw byte), one class label per image. The writer exists so
//! fixtures and subsets can be produced from code; `write(load(x)) == x`
//! byte for byte.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tasks::SequenceBatch;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

/// A loaded image/label pair set.
#[derive(Debug, Clone)]
pub struct MnistSet {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    /// `count * rows * cols` raw pixel bytes.
    pub images: Vec<u8>,
    /// `count` class ids, each < 10.
    pub labels: Vec<u8>,
}

impl MnistSet {
    pub fn seq_len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.seq_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Keeps only the first `n` images.
    pub fn truncate(&mut self, n: usize) {
        if n < self.count {
            self.count = n;
            self.images.truncate(n * self.seq_len());
            self.labels.truncate(n);
        }
    }

    /// Token-sequence batch for the given image indices.
    pub fn batch(&self, indices: &[usize]) -> SequenceBatch {
        let len = self.seq_len();
        let mut tokens = Vec::with_capacity(indices.len() * len);
        let mut targets = Vec::with_capacity(indices.len());
        for &i in indices {
            tokens.extend(self.image(i).iter().map(|&p| p as u32));
            targets.push(self.labels[i] as u32);
        }
        SequenceBatch { batch: indices.len(), len, vocab: 256, tokens, targets }
    }
}

fn read_u32_be(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format(format!("truncated IDX file while reading {}", what)))?;
    Ok(u32::from_be_bytes(buf))
}

/// Parses an IDX image file: magic 0x00000803, then count/rows/cols as
/// big-endian u32, then raw pixel bytes.
pub fn load_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = read_u32_be(&mut f, "image magic")?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "bad image magic {:#010x} in {} (want {:#010x})",
            magic,
            path.display(),
            IMAGE_MAGIC
        )));
    }
    let count = read_u32_be(&mut f, "image count")? as usize;
    let rows = read_u32_be(&mut f, "rows")? as usize;
    let cols = read_u32_be(&mut f, "cols")? as usize;
    let mut data = vec![0u8; count * rows * cols];
    f.read_exact(&mut data)
        .map_err(|_| Error::Format(format!("truncated IDX image payload in {}", path.display())))?;
    Ok((count, rows, cols, data))
}

/// Parses an IDX label file: magic 0x00000801, count, then raw label bytes.
pub fn load_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let magic = read_u32_be(&mut f, "label magic")?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {:#010x} in {} (want {:#010x})",
            magic,
            path.display(),
            LABEL_MAGIC
        )));
    }
    let count = read_u32_be(&mut f, "label count")? as usize;
    let mut data = vec![0u8; count];
    f.read_exact(&mut data)
        .map_err(|_| Error::Format(format!("truncated IDX label payload in {}", path.display())))?;
    Ok(data)
}

/// Loads and cross-validates an image/label file pair.
pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<MnistSet> {
    let (count, rows, cols, images) = load_idx_images(images_path)?;
    let labels = load_idx_labels(labels_path)?;
    if labels.len() != count {
        return Err(Error::Format(format!(
            "{} images but {} labels",
            count,
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 9) {
        return Err(Error::Format(format!("label {} out of range [0, 10)", bad)));
    }
    Ok(MnistSet { count, rows, cols, images, labels })
}

pub fn write_idx_images(path: &Path, rows: usize, cols: usize, images: &[u8]) -> Result<()> {
    if rows * cols == 0 || images.len() % (rows * cols) != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{} pixel bytes is not a multiple of {}x{}",
            images.len(),
            rows,
            cols
        )));
    }
    let count = images.len() / (rows * cols);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&IMAGE_MAGIC.to_be_bytes())?;
    f.write_all(&(count as u32).to_be_bytes())?;
    f.write_all(&(rows as u32).to_be_bytes())?;
    f.write_all(&(cols as u32).to_be_bytes())?;
    f.write_all(images)?;
    Ok(())
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&LABEL_MAGIC.to_be_bytes())?;
    f.write_all(&(labels.len() as u32).to_be_bytes())?;
    f.write_all(labels)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_reproduces_source_bytes() {
        let dir = std::env::temp_dir().join("geossm_idx_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let img_path = dir.join("img.idx");
        let lbl_path = dir.join("lbl.idx");
        let pixels: Vec<u8> = (0..3 * 4 * 5).map(|i| (i * 37 % 256) as u8).collect();
        let labels = vec![0u8, 5, 9];
        write_idx_images(&img_path, 4, 5, &pixels).unwrap();
        write_idx_labels(&lbl_path, &labels).unwrap();
        let original_img = std::fs::read(&img_path).unwrap();
        let original_lbl = std::fs::read(&lbl_path).unwrap();

        let set = load_mnist_idx(&img_path, &lbl_path).unwrap();
        assert_eq!(set.count, 3);
        assert_eq!((set.rows, set.cols), (4, 5));
        assert_eq!(set.images, pixels);

        write_idx_images(&img_path, set.rows, set.cols, &set.images).unwrap();
        write_idx_labels(&lbl_path, &set.labels).unwrap();
        assert_eq!(std::fs::read(&img_path).unwrap(), original_img);
        assert_eq!(std::fs::read(&lbl_path).unwrap(), original_lbl);
    }

    #[test]
    fn bad_magic_is_reported() {
        let dir = std::env::temp_dir().join("geossm_idx_badmagic");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("bad.idx");
        std::fs::write(&p, [0, 0, 8, 99, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1]).unwrap();
        let err = load_idx_images(&p).unwrap_err();
        assert_eq!(err.category(), "format-error");
        assert!(err.to_string().contains("magic"), "message: {}", err);
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = std::env::temp_dir().join("geossm_idx_trunc");
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("trunc.idx");
        let mut bytes = Vec::new();
        bytes.extend(IMAGE_MAGIC.to_be_bytes());
        bytes.extend(2u32.to_be_bytes());
        bytes.extend(2u32.to_be_bytes());
        bytes.extend(2u32.to_be_bytes());
        bytes.extend([1u8, 2, 3]); // wants 8 pixel bytes
        std::fs::write(&p, bytes).unwrap();
        let err = load_idx_images(&p).unwrap_err();
        assert_eq!(err.category(), "format-error");
        assert!(err.to_string().contains("truncated"), "message: {}", err);
    }

    #[test]
    fn batch_view_tokenizes_pixels() {
        let set = MnistSet {
            count: 2,
            rows: 1,
            cols: 3,
            images: vec![0, 128, 255, 7, 8, 9],
            labels: vec![3, 1],
        };
        let b = set.batch(&[1, 0]);
        assert_eq!(b.vocab, 256);
        assert_eq!(b.tokens, vec![7, 8, 9, 0, 128, 255]);
        assert_eq!(b.targets, vec![1, 3]);
    }
}
