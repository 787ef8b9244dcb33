//! MNIST in the big-endian IDX format.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const ROWS: usize = 28;
pub const COLS: usize = 28;
pub const PIXELS: usize = ROWS * COLS;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated while reading {field}")]
    Truncated { path: PathBuf, field: &'static str },
    #[error("{path}: image dimensions {rows}x{cols}, expected 28x28")]
    Dimensions { path: PathBuf, rows: u32, cols: u32 },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("label {value} at index {index} is not a digit")]
    BadLabel { index: usize, value: u8 },
}

/// Images as `count x 784` row-major bytes plus their labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MnistSet {
    images: Vec<u8>,
    labels: Vec<u8>,
}

impl MnistSet {
    pub fn new(images: Vec<u8>, labels: Vec<u8>) -> Result<Self, IdxError> {
        if images.len() != labels.len() * PIXELS {
            return Err(IdxError::CountMismatch {
                images: images.len() / PIXELS,
                labels: labels.len(),
            });
        }
        if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
            return Err(IdxError::BadLabel { index, value });
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, k: usize) -> &[u8] {
        &self.images[k * PIXELS..(k + 1) * PIXELS]
    }

    pub fn label(&self, k: usize) -> u8 {
        self.labels[k]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.images
    }

    /// The first `n` items (or all of them).
    pub fn head(&self, n: usize) -> MnistSet {
        let n = n.min(self.len());
        MnistSet {
            images: self.images[..n * PIXELS].to_vec(),
            labels: self.labels[..n].to_vec(),
        }
    }

    /// Pixels scaled to `[0, 1]`.
    pub fn normalized(&self, k: usize) -> Vec<f32> {
        self.image(k).iter().map(|&p| p as f32 / 255.0).collect()
    }
}

struct Be<'a, R> {
    inner: R,
    path: &'a Path,
}

impl<R: Read> Be<'_, R> {
    fn u32(&mut self, field: &'static str) -> Result<u32, IdxError> {
        let mut b = [0u8; 4];
        self.exact(&mut b, field)?;
        Ok(u32::from_be_bytes(b))
    }

    fn exact(&mut self, buf: &mut [u8], field: &'static str) -> Result<(), IdxError> {
        self.inner.read_exact(buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => IdxError::Truncated {
                path: self.path.to_path_buf(),
                field,
            },
            _ => IdxError::Io {
                path: self.path.to_path_buf(),
                source: e,
            },
        })
    }

    fn magic(&mut self, expected: u32) -> Result<(), IdxError> {
        let found = self.u32("magic")?;
        if found != expected {
            return Err(IdxError::BadMagic {
                path: self.path.to_path_buf(),
                expected,
                found,
            });
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<Be<'_, BufReader<File>>, IdxError> {
    let file = File::open(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(Be {
        inner: BufReader::new(file),
        path,
    })
}

pub fn read_images(path: &Path) -> Result<Vec<u8>, IdxError> {
    let mut r = open(path)?;
    r.magic(IMAGE_MAGIC)?;
    let count = r.u32("image count")? as usize;
    let rows = r.u32("row count")?;
    let cols = r.u32("column count")?;
    if rows as usize != ROWS || cols as usize != COLS {
        return Err(IdxError::Dimensions {
            path: path.to_path_buf(),
            rows,
            cols,
        });
    }
    let mut images = vec![0u8; count * PIXELS];
    r.exact(&mut images, "pixel data")?;
    Ok(images)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>, IdxError> {
    let mut r = open(path)?;
    r.magic(LABEL_MAGIC)?;
    let count = r.u32("label count")? as usize;
    let mut labels = vec![0u8; count];
    r.exact(&mut labels, "label data")?;
    Ok(labels)
}

pub fn load_idx(images: &Path, labels: &Path) -> Result<MnistSet, IdxError> {
    MnistSet::new(read_images(images)?, read_labels(labels)?)
}

pub fn write_idx(set: &MnistSet, images: &Path, labels: &Path) -> Result<(), IdxError> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| IdxError::Io {
            path: path.clone(),
            source,
        }
    };
    let write = |path: &Path, header: &[u32], body: &[u8]| -> io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for h in header {
            w.write_all(&h.to_be_bytes())?;
        }
        w.write_all(body)?;
        w.flush()
    };
    let n = set.len() as u32;
    write(images, &[IMAGE_MAGIC, n, ROWS as u32, COLS as u32], &set.images)
        .map_err(io_err(images))?;
    write(labels, &[LABEL_MAGIC, n], &set.labels).map_err(io_err(labels))?;
    Ok(())
}

/// Standard file names inside an MNIST directory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stems(self) -> (&'static str, &'static str) {
        match self {
            Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
            Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
        }
    }
}

pub fn load_split(dir: &Path, split: Split) -> Result<MnistSet, IdxError> {
    let (img, lab) = split.stems();
    load_idx(&dir.join(img), &dir.join(lab))
}

/// Truncating requantization of 8-bit pixels to `input_bits`.
pub fn to_input_bytes(image: &[u8], input_bits: u32) -> Vec<u32> {
    assert!(
        (1..=8).contains(&input_bits),
        "input_bits must be in 1..=8, got {input_bits}"
    );
    image.iter().map(|&p| (p >> (8 - input_bits)) as u32).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::fs;

    fn tiny() -> MnistSet {
        let mut images = vec![0u8; 2 * PIXELS];
        images[PIXELS + 5] = 200;
        MnistSet::new(images, vec![3, 9]).unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&tiny(), &img, &lab).unwrap();
        let back = load_idx(&img, &lab).unwrap();
        assert_eq!(back, tiny());
        let first = (fs::read(&img).unwrap(), fs::read(&lab).unwrap());
        write_idx(&back, &img, &lab).unwrap();
        assert_eq!(first, (fs::read(&img).unwrap(), fs::read(&lab).unwrap()));
        assert_eq!(fs::read(&lab).unwrap().len(), 8 + 2);
    }

    #[test]
    fn single_zero_image() {
        let set = MnistSet::new(vec![0; PIXELS], vec![0]).unwrap();
        assert_eq!(set.len(), 1);
        assert_eq!(set.image(0), &[0u8; PIXELS][..]);
    }

    #[test]
    fn parse_errors_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&tiny(), &img, &lab).unwrap();

        let swapped = load_idx(&lab, &img).unwrap_err();
        assert!(matches!(swapped, IdxError::BadMagic { found: LABEL_MAGIC, .. }));

        let bytes = fs::read(&img).unwrap();
        fs::write(&img, &bytes[..6]).unwrap();
        match load_idx(&img, &lab).unwrap_err() {
            IdxError::Truncated { field, .. } => assert_eq!(field, "image count"),
            e => panic!("unexpected {e}"),
        }
        fs::write(&img, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            load_idx(&img, &lab).unwrap_err(),
            IdxError::Truncated { field: "pixel data", .. }
        ));

        let one = MnistSet::new(vec![0; PIXELS], vec![1]).unwrap();
        let (img1, lab1) = (dir.path().join("i1"), dir.path().join("l1"));
        write_idx(&one, &img1, &lab1).unwrap();
        fs::write(&img, &bytes).unwrap();
        assert!(matches!(
            load_idx(&img, &lab1).unwrap_err(),
            IdxError::CountMismatch { images: 2, labels: 1 }
        ));

        assert!(matches!(
            load_idx(&dir.path().join("missing"), &lab).unwrap_err(),
            IdxError::Io { .. }
        ));
        assert!(matches!(
            MnistSet::new(vec![0; PIXELS], vec![10]),
            Err(IdxError::BadLabel { index: 0, value: 10 })
        ));
    }

    #[test]
    fn requantization_examples() {
        let px: Vec<u8> = (0..=255).collect();
        assert_eq!(
            to_input_bytes(&px, 8),
            px.iter().map(|&p| p as u32).collect::<Vec<_>>()
        );
        assert_eq!(to_input_bytes(&[255], 1), vec![1]);
        assert_eq!(to_input_bytes(&[178], 4), vec![11]);
    }

    proptest! {
        #[test]
        fn requantization_is_monotone(bits in 1u32..=8, a in any::<u8>(), b in any::<u8>()) {
            let (lo, hi) = (a.min(b), a.max(b));
            let q = to_input_bytes(&[lo, hi], bits);
            prop_assert!(q[0] <= q[1]);
            prop_assert!(q[1] < (1 << bits));
        }
    }
}
