//! CIFAR-10 binary batches: each record is one label byte followed by
//! 3072 pixel bytes, red plane then green then blue, row-major 32×32.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::{Dataset, Pixels};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const CLASSES: usize = 10;
pub const IMAGE_BYTES: usize = CHANNELS * SIDE * SIDE;
pub const RECORD_BYTES: usize = 1 + IMAGE_BYTES;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const FILE_BYTES: usize = RECORDS_PER_FILE * RECORD_BYTES;

pub const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const TEST_FILE: &str = "test_batch.bin";

/// Splits raw bytes into labels and pixels. `path` only labels errors.
pub fn parse_records(bytes: &[u8], path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    if !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            detail: format!(
                "size {} is not a multiple of the {RECORD_BYTES}-byte record",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / RECORD_BYTES;
    let mut labels = Vec::with_capacity(n);
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    for (i, rec) in bytes.chunks_exact(RECORD_BYTES).enumerate() {
        if rec[0] as usize >= CLASSES {
            return Err(Error::Dataset {
                path: path.to_path_buf(),
                detail: format!("record {i} has label {} outside 0..=9", rec[0]),
            });
        }
        labels.push(rec[0]);
        pixels.extend_from_slice(&rec[1..]);
    }
    Ok((labels, pixels))
}

/// Inverse of [`parse_records`].
pub fn encode_records(labels: &[u8], pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), labels.len() * IMAGE_BYTES);
    let mut out = Vec::with_capacity(labels.len() * RECORD_BYTES);
    for (l, img) in labels.iter().zip(pixels.chunks_exact(IMAGE_BYTES)) {
        out.push(*l);
        out.extend_from_slice(img);
    }
    out
}

/// Reads one batch file, which must hold exactly 10,000 records.
pub fn read_batch_file(path: &Path) -> Result<(Vec<u8>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    if bytes.len() != FILE_BYTES {
        return Err(Error::Dataset {
            path: path.to_path_buf(),
            detail: format!("expected {FILE_BYTES} bytes, found {}", bytes.len()),
        });
    }
    parse_records(&bytes, path)
}

fn read_files(dir: &Path, names: &[&str]) -> Result<Dataset> {
    let mut labels = Vec::new();
    let mut pixels = Vec::new();
    for name in names {
        let (l, p) = read_batch_file(&dir.join(name))?;
        labels.extend(l);
        pixels.extend(p);
    }
    Dataset::new(CHANNELS, SIDE, CLASSES, labels, Pixels::Bytes(pixels))
}

/// Loads the five training batches and the test batch, standardized with
/// constants from the 50,000 training images.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = read_files(dir, &TRAIN_FILES)?;
    let test = read_files(dir, &[TEST_FILE])?;
    let norm = train.compute_normalization();
    Ok((
        train.with_normalization(norm.clone()),
        test.with_normalization(norm),
    ))
}

/// Writes 60,000 records in the canonical six-file layout; the first
/// 50,000 go to the training batches.
pub fn write_layout(dir: &Path, labels: &[u8], pixels: &[u8]) -> Result<()> {
    let total = RECORDS_PER_FILE * (TRAIN_FILES.len() + 1);
    if labels.len() != total || pixels.len() != total * IMAGE_BYTES {
        return Err(Error::InvalidArgument(format!(
            "layout needs exactly {total} images, got {}",
            labels.len()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (f, name) in TRAIN_FILES.iter().chain([&TEST_FILE]).enumerate() {
        let r = f * RECORDS_PER_FILE..(f + 1) * RECORDS_PER_FILE;
        let bytes = encode_records(
            &labels[r.clone()],
            &pixels[r.start * IMAGE_BYTES..r.end * IMAGE_BYTES],
        );
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
