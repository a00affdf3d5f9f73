//! Big-endian IDX files (MNIST layout).

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::Batch;
use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(buf: &[u8], offset: usize, what: &str) -> Result<u32> {
    buf.get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format { offset: offset as u64, msg: format!("truncated header ({what})") })
}

fn expect_magic(buf: &[u8], want: u32, what: &str) -> Result<()> {
    let got = read_u32(buf, 0, what)?;
    if got != want {
        return Err(Error::Format { offset: 0, msg: format!("{what}: magic {got:#010x}, expected {want:#010x}") });
    }
    Ok(())
}

fn parse_images(buf: &[u8]) -> Result<(usize, usize, &[u8])> {
    expect_magic(buf, IMAGE_MAGIC, "images")?;
    let count = read_u32(buf, 4, "image count")? as usize;
    let rows = read_u32(buf, 8, "rows")? as usize;
    let cols = read_u32(buf, 12, "cols")? as usize;
    let pixels = rows * cols;
    let need = 16 + count * pixels;
    if buf.len() < need {
        return Err(Error::Format {
            offset: buf.len() as u64,
            msg: format!("image data truncated: {count} images of {rows}x{cols} need {need} bytes"),
        });
    }
    Ok((count, pixels, &buf[16..need]))
}

fn parse_labels(buf: &[u8]) -> Result<&[u8]> {
    expect_magic(buf, LABEL_MAGIC, "labels")?;
    let count = read_u32(buf, 4, "label count")? as usize;
    let need = 8 + count;
    if buf.len() < need {
        return Err(Error::Format { offset: buf.len() as u64, msg: format!("label data truncated: need {need} bytes") });
    }
    Ok(&buf[8..need])
}

/// Images scaled to `[0, 1]` and flattened row-major, with their labels.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Batch> {
    let img = fs::read(images_path)?;
    let lbl = fs::read(labels_path)?;
    let (count, pixels, data) = parse_images(&img)?;
    let labels = parse_labels(&lbl)?;
    if labels.len() != count {
        return Err(Error::Format {
            offset: 4,
            msg: format!("{count} images but {} labels", labels.len()),
        });
    }
    let x = Array2::from_shape_fn((count, pixels), |(i, j)| data[i * pixels + j] as f64 / 255.0);
    Batch::new(x, Some(labels.iter().map(|&l| l as usize).collect()))
}

/// Loads `train-images-idx3-ubyte` / `train-labels-idx1-ubyte` from `dir`.
pub fn load_idx_dir(dir: &Path) -> Result<Batch> {
    let images = dir.join("train-images-idx3-ubyte");
    let labels = dir.join("train-labels-idx1-ubyte");
    for p in [&images, &labels] {
        if !p.exists() {
            return Err(Error::input(format!("missing dataset file {}", p.display())));
        }
    }
    load_idx(&images, &labels)
}

/// Writes an image/label pair; `pixels` holds `count · rows · cols` bytes.
pub fn write_idx(
    images_path: &Path,
    labels_path: &Path,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    labels: &[u8],
) -> Result<()> {
    if pixels.len() != labels.len() * rows * cols {
        return Err(Error::dim(format!("{} pixel bytes for {} images of {rows}x{cols}", pixels.len(), labels.len())));
    }
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IMAGE_MAGIC, labels.len() as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lbl = Vec::with_capacity(8 + labels.len());
    lbl.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    lbl.extend_from_slice(labels);
    fs::write(images_path, img)?;
    fs::write(labels_path, lbl)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let (i, l) = (dir.join("img"), dir.join("lbl"));
        let pixels: Vec<u8> = (0..8).map(|v| v * 30).collect();
        write_idx(&i, &l, 2, 2, &pixels, &[3, 7]).unwrap();
        (i, l)
    }

    #[test]
    fn round_trip_recovers_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = fixture(dir.path());
        let b = load_idx(&i, &l).unwrap();
        assert_eq!(b.x.dim(), (2, 4));
        assert_eq!(b.x[[1, 2]], 180.0 / 255.0);
        assert_eq!(b.x[[0, 0]], 0.0);
        assert_eq!(b.labels, Some(vec![3, 7]));
    }

    #[test]
    fn swapped_magic_is_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = fixture(dir.path());
        let err = load_idx(&l, &i).unwrap_err();
        assert!(matches!(err, Error::Format { offset: 0, .. }), "{err}");
    }

    #[test]
    fn truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = fixture(dir.path());
        let mut bytes = fs::read(&i).unwrap();
        bytes.truncate(20);
        fs::write(&i, &bytes).unwrap();
        assert!(matches!(load_idx(&i, &l), Err(Error::Format { offset: 20, .. })));

        let (i, _) = fixture(dir.path());
        let l2 = dir.path().join("lbl2");
        write_idx(&dir.path().join("unused"), &l2, 2, 2, &[0; 12], &[1, 2, 3]).unwrap();
        assert!(matches!(load_idx(&i, &l2), Err(Error::Format { .. })));
    }
}
