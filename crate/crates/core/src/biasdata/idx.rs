//! IDX files as used by the MNIST distribution: a big-endian `u32` magic,
//! big-endian `u32` dimension sizes, then unsigned bytes.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::format(path.display().to_string(), "truncated header"))
}

fn parse(path: &Path, magic: u32, dims: usize) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let found = read_u32(&bytes, 0, path)?;
    if found != magic {
        return Err(Error::format(
            path.display().to_string(),
            format!("magic number {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let shape = (0..dims)
        .map(|d| read_u32(&bytes, 4 + 4 * d, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * dims;
    let count: usize = shape.iter().product();
    if bytes.len() < start + count {
        return Err(Error::format(
            path.display().to_string(),
            format!(
                "truncated payload: {} of {count} bytes",
                bytes.len() - start
            ),
        ));
    }
    Ok((shape, bytes[start..start + count].to_vec()))
}

/// Reads an image/label IDX pair; pixels are scaled by 1/255.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (ishape, pixels) = parse(images_path, IDX_IMAGES_MAGIC, 3)?;
    let (lshape, labels) = parse(labels_path, IDX_LABELS_MAGIC, 1)?;
    if ishape[0] != lshape[0] {
        return Err(Error::format(
            labels_path.display().to_string(),
            format!("{} labels for {} images", lshape[0], ishape[0]),
        ));
    }
    if ishape.contains(&0) {
        return Err(Error::format(
            images_path.display().to_string(),
            "empty image set",
        ));
    }
    let labels: Vec<usize> = labels.into_iter().map(usize::from).collect();
    let num_classes = labels.iter().max().map_or(1, |m| m + 1);
    let data = pixels.into_iter().map(|b| f64::from(b) / 255.0).collect();
    let images = Tensor::new(vec![ishape[0], ishape[1], ishape[2], 1], data)?;
    LabeledDataset::new(images, labels, num_classes, "idx")
}

pub fn write_idx_images(
    path: &Path,
    pixels: &[u8],
    n: usize,
    rows: usize,
    cols: usize,
) -> Result<()> {
    let mut out = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
    for d in [n, rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(pixels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn write_idx_labels(path: &Path, labels: &[u8]) -> Result<()> {
    let mut out = IDX_LABELS_MAGIC.to_be_bytes().to_vec();
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
        let img = dir.join("img.idx");
        let lab = dir.join("lab.idx");
        let mut pixels: Vec<u8> = (0..32).map(|i| (i * 8) as u8).collect();
        pixels[31] = 255;
        write_idx_images(&img, &pixels, 2, 4, 4).unwrap();
        write_idx_labels(&lab, &[3, 1]).unwrap();
        (img, lab)
    }

    #[test]
    fn parses_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture(dir.path());
        let d = load_idx(&img, &lab).unwrap();
        assert_eq!(d.images.shape(), &[2, 4, 4, 1]);
        assert_eq!(d.labels, vec![3, 1]);
        assert_eq!(d.images.data()[31], 1.0);
        assert_eq!(d.images.data()[1], 8.0 / 255.0);
        d.check_pixel_range().unwrap();
    }

    #[test]
    fn rejects_bad_magic_truncation_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let (img, lab) = fixture(dir.path());
        // swapped files: magic mismatch
        assert!(matches!(load_idx(&lab, &img), Err(Error::Format { .. })));

        let short = dir.path().join("short.idx");
        let bytes = fs::read(&img).unwrap();
        fs::write(&short, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load_idx(&short, &lab), Err(Error::Format { .. })));

        let lab3 = dir.path().join("lab3.idx");
        write_idx_labels(&lab3, &[1, 2, 3]).unwrap();
        assert!(matches!(load_idx(&img, &lab3), Err(Error::Format { .. })));
    }
}
