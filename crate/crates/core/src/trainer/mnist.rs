//! IDX-format loader for the MNIST digit files.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Error)]
pub enum MnistError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic { path: PathBuf, expected: u32, found: u32 },
    #[error("{path}: truncated file, expected {expected} bytes but found {actual}")]
    Truncated { path: PathBuf, expected: usize, actual: usize },
    #[error("count mismatch: {images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at index {index} is not a digit")]
    BadLabel { path: PathBuf, index: usize, label: u8 },
}

/// Grayscale images with digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub rows: usize,
    pub cols: usize,
    /// `len * rows * cols` pixel bytes, image-major.
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let p = self.pixels_per_image();
        &self.images[i * p..(i + 1) * p]
    }

    /// First `n` items (or all of them).
    pub fn truncated(mut self, n: Option<usize>) -> Self {
        if let Some(n) = n {
            let n = n.min(self.len());
            self.images.truncate(n * self.pixels_per_image());
            self.labels.truncate(n);
        }
        self
    }

    /// Mean pixel value over every image.
    pub fn mean_pixel(&self) -> f64 {
        if self.images.is_empty() {
            return 0.0;
        }
        self.images.iter().map(|&p| f64::from(p)).sum::<f64>() / self.images.len() as f64
    }
}

fn read(path: &Path) -> Result<Vec<u8>, MnistError> {
    fs::read(path).map_err(|source| MnistError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn be_u32(bytes: &[u8], offset: usize) -> u32 {
    u32::from_be_bytes(bytes[offset..offset + 4].try_into().expect("4 bytes"))
}

fn header(path: &Path, bytes: &[u8], magic: u32, dims: usize) -> Result<Vec<usize>, MnistError> {
    let header_len = 4 + 4 * dims;
    if bytes.len() < header_len {
        return Err(MnistError::Truncated {
            path: path.to_path_buf(),
            expected: header_len,
            actual: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(MnistError::BadMagic {
            path: path.to_path_buf(),
            expected: magic,
            found,
        });
    }
    Ok((0..dims).map(|d| be_u32(bytes, 4 + 4 * d) as usize).collect())
}

/// Parse an image file: magic, count, rows, cols, then pixel bytes.
pub fn parse_images(path: &Path, bytes: &[u8]) -> Result<(usize, usize, Vec<u8>), MnistError> {
    let dims = header(path, bytes, IMAGE_MAGIC, 3)?;
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    let expected = 16 + n * rows * cols;
    if bytes.len() < expected {
        return Err(MnistError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    Ok((rows, cols, bytes[16..expected].to_vec()))
}

/// Parse a label file: magic, count, then one byte per label.
pub fn parse_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>, MnistError> {
    let dims = header(path, bytes, LABEL_MAGIC, 1)?;
    let n = dims[0];
    let expected = 8 + n;
    if bytes.len() < expected {
        return Err(MnistError::Truncated {
            path: path.to_path_buf(),
            expected,
            actual: bytes.len(),
        });
    }
    let labels = bytes[8..expected].to_vec();
    if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
        return Err(MnistError::BadLabel {
            path: path.to_path_buf(),
            index,
            label,
        });
    }
    Ok(labels)
}

pub fn load_mnist(images: &Path, labels: &Path) -> Result<LabeledDataset, MnistError> {
    let (rows, cols, pixels) = parse_images(images, &read(images)?)?;
    let labels = parse_labels(labels, &read(labels)?)?;
    let n_images = if rows * cols == 0 { 0 } else { pixels.len() / (rows * cols) };
    if n_images != labels.len() {
        return Err(MnistError::CountMismatch {
            images: n_images,
            labels: labels.len(),
        });
    }
    Ok(LabeledDataset {
        rows,
        cols,
        images: pixels,
        labels,
    })
}

/// Load the standard train and test splits from a directory holding the four IDX files.
pub fn load_mnist_dir(dir: &Path) -> Result<(LabeledDataset, LabeledDataset), MnistError> {
    let train = load_mnist(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test = load_mnist(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(n: u32, rows: u32, cols: u32, payload: usize) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [IMAGE_MAGIC, n, rows, cols] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend((0..payload).map(|i| (i % 251) as u8));
        v
    }

    fn idx_labels(n: u32, payload: &[u8]) -> Vec<u8> {
        let mut v = Vec::new();
        for x in [LABEL_MAGIC, n] {
            v.extend_from_slice(&x.to_be_bytes());
        }
        v.extend_from_slice(payload);
        v
    }

    #[test]
    fn parses_well_formed_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::File::create(&img).unwrap().write_all(&idx_images(3, 2, 2, 12)).unwrap();
        fs::File::create(&lab).unwrap().write_all(&idx_labels(3, &[1, 2, 9])).unwrap();
        let ds = load_mnist(&img, &lab).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.image(2), &[8, 9, 10, 11]);
        assert_eq!(ds.labels, vec![1, 2, 9]);
    }

    #[test]
    fn bad_magic() {
        let mut bytes = idx_images(1, 2, 2, 4);
        bytes[3] = 0x01;
        match parse_images(Path::new("x"), &bytes) {
            Err(MnistError::BadMagic { found, expected, .. }) => {
                assert_eq!(found, 0x801);
                assert_eq!(expected, 0x803);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse_labels(Path::new("y"), &idx_images(1, 1, 1, 1)),
            Err(MnistError::BadMagic { .. })
        ));
    }

    #[test]
    fn truncated_payload_names_sizes() {
        let bytes = idx_images(2, 28, 28, 100);
        let err = parse_images(Path::new("t"), &bytes).unwrap_err();
        match &err {
            MnistError::Truncated { expected, actual, .. } => {
                assert_eq!(*expected, 16 + 2 * 784);
                assert_eq!(*actual, 116);
            }
            other => panic!("{other:?}"),
        }
        assert!(err.to_string().contains("expected 1584 bytes but found 116"));
        assert!(matches!(
            parse_labels(Path::new("l"), &[0, 0]),
            Err(MnistError::Truncated { .. })
        ));
    }

    #[test]
    fn count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        fs::write(&img, idx_images(3, 2, 2, 12)).unwrap();
        fs::write(&lab, idx_labels(2, &[1, 2])).unwrap();
        assert!(matches!(
            load_mnist(&img, &lab),
            Err(MnistError::CountMismatch { images: 3, labels: 2 })
        ));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_mnist(Path::new("/nonexistent/a"), Path::new("/nonexistent/b")).unwrap_err();
        assert!(matches!(err, MnistError::Io { .. }));
        assert!(err.to_string().contains("/nonexistent/a"));
    }
}
