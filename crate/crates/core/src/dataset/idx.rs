//! IDX file ingestion (the MNIST container format): big-endian headers,
//! magic 0x00000803 for u8 image stacks and 0x00000801 for u8 label vectors.

use std::fs;
use std::path::Path;

use crate::error::DataError;
use crate::tensor::Tensor;

use super::LabeledDataset;

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
    path: &'a str,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.offset + n > self.bytes.len() {
            return Err(DataError::Truncated {
                path: self.path.to_string(),
                offset: self.offset,
                needed: self.offset + n - self.bytes.len(),
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn read_u32(&mut self) -> Result<u32, DataError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Loads an images/labels IDX pair into a dataset with pixels scaled by
/// 1/255. Class count is `max(label) + 1`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset, DataError> {
    let image_bytes = read_file(images_path)?;
    let label_bytes = read_file(labels_path)?;
    let images_name = images_path.display().to_string();
    let labels_name = labels_path.display().to_string();

    let mut img = Cursor {
        bytes: &image_bytes,
        offset: 0,
        path: &images_name,
    };
    let magic = img.read_u32()?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::BadMagic {
            path: images_name,
            found: magic,
            expected: IMAGES_MAGIC,
        });
    }
    let n = img.read_u32()? as usize;
    let rows = img.read_u32()? as usize;
    let cols = img.read_u32()? as usize;
    let pixels = img.take(n * rows * cols)?;

    let mut lab = Cursor {
        bytes: &label_bytes,
        offset: 0,
        path: &labels_name,
    };
    let magic = lab.read_u32()?;
    if magic != LABELS_MAGIC {
        return Err(DataError::BadMagic {
            path: labels_name,
            found: magic,
            expected: LABELS_MAGIC,
        });
    }
    let n_labels = lab.read_u32()? as usize;
    if n_labels != n {
        return Err(DataError::CountMismatch {
            images: n,
            labels: n_labels,
        });
    }
    let raw_labels = lab.take(n)?;

    let data: Vec<f64> = pixels.iter().map(|&b| f64::from(b) / 255.0).collect();
    let labels: Vec<usize> = raw_labels.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().map_or(1, |m| m + 1);
    LabeledDataset::new(Tensor::new(vec![n, 1, rows, cols], data), labels, classes)
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}
