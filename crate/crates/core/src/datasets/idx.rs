//! Big-endian IDX files (MNIST / Fashion-MNIST layout).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::Matrix;

use super::Dataset;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

struct Header {
    dims: Vec<usize>,
    payload_offset: usize,
}

fn parse_header(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<Header> {
    if bytes.len() < 4 {
        return Err(format_err(path, "file shorter than the magic number"));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    if magic != expected_magic {
        return Err(format_err(
            path,
            format!("magic {magic:#010x}, expected {expected_magic:#010x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let header_len = 4 + 4 * ndims;
    if bytes.len() < header_len {
        return Err(format_err(path, "truncated header"));
    }
    let dims = (0..ndims)
        .map(|i| {
            let at = 4 + 4 * i;
            u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap()) as usize
        })
        .collect::<Vec<_>>();
    let payload: usize = dims.iter().product();
    if bytes.len() < header_len + payload {
        return Err(format_err(
            path,
            format!(
                "truncated payload: {} bytes, header promises {payload}",
                bytes.len() - header_len
            ),
        ));
    }
    Ok(Header {
        dims,
        payload_offset: header_len,
    })
}

/// Images as an `n × (rows·cols)` matrix with bytes scaled to `[0, 1]`.
pub fn load_idx_images(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes, IMAGE_MAGIC, path)?;
    let (n, pixels) = (h.dims[0], h.dims[1] * h.dims[2]);
    let data = bytes[h.payload_offset..h.payload_offset + n * pixels]
        .iter()
        .map(|&b| f64::from(b) / 255.0)
        .collect();
    Matrix::from_vec(n, pixels, data)
}

pub fn load_idx_labels(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes, LABEL_MAGIC, path)?;
    Ok(bytes[h.payload_offset..h.payload_offset + h.dims[0]]
        .iter()
        .map(|&b| usize::from(b))
        .collect())
}

/// Paired image and label files.
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<(Matrix, Vec<usize>)> {
    let x = load_idx_images(images.as_ref())?;
    let y = load_idx_labels(labels.as_ref())?;
    if x.rows() != y.len() {
        return Err(format_err(
            labels.as_ref(),
            format!("{} labels for {} images", y.len(), x.rows()),
        ));
    }
    Ok((x, y))
}

/// [`load_idx`] wrapped into a [`Dataset`]; the class count is `max label + 1`
/// unless given.
pub fn load_idx_pair(
    images: impl AsRef<Path>,
    labels: impl AsRef<Path>,
    num_classes: Option<usize>,
) -> Result<Dataset> {
    let (x, y) = load_idx(images, labels)?;
    let k = num_classes.unwrap_or_else(|| y.iter().max().map_or(0, |m| m + 1));
    Dataset::new(x, y, k)
}

/// Writes `n × (rows·cols)` pixel data; values are mapped back with `round(v·255)`.
pub fn write_idx_images(path: impl AsRef<Path>, images: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if rows * cols != images.cols() {
        return Err(Error::Dimension {
            expected: images.cols(),
            got: rows * cols,
        });
    }
    let mut out = Vec::with_capacity(16 + images.as_slice().len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for d in [images.rows(), rows, cols] {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend(images.as_slice().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[usize]) -> Result<()> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    for &l in labels {
        let b = u8::try_from(l).map_err(|_| Error::param(format!("label {l} does not fit a byte")))?;
        out.push(b);
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_dims_and_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("img.idx");
        let mut bytes = vec![0, 0, 8, 3];
        for d in [2u32, 2, 2] {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        bytes.extend_from_slice(&[255, 0, 0, 0, 0, 0, 0, 51]);
        fs::write(&p, &bytes).unwrap();
        let m = load_idx_images(&p).unwrap();
        assert_eq!((m.rows(), m.cols()), (2, 4));
        assert_eq!(m.row(0)[0], 1.0);
        assert_eq!(m.row(1)[3], 0.2);
    }

    #[test]
    fn mnist_sized_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train-images");
        let mut bytes = vec![0, 0, 8, 3];
        for d in [60_000u32, 28, 28] {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        bytes.resize(16 + 60_000 * 784, 0);
        fs::write(&p, &bytes).unwrap();
        let m = load_idx_images(&p).unwrap();
        assert_eq!((m.rows(), m.cols()), (60_000, 784));
    }

    #[test]
    fn wrong_magic_for_labels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels");
        let mut bytes = vec![0, 0, 8, 3];
        for d in [1u32, 1, 1] {
            bytes.extend_from_slice(&d.to_be_bytes());
        }
        bytes.push(0);
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_idx_labels(&p), Err(Error::Format { .. })));
    }

    #[test]
    fn truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels");
        let mut bytes = vec![0, 0, 8, 1];
        bytes.extend_from_slice(&10u32.to_be_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        fs::write(&p, &bytes).unwrap();
        let err = load_idx_labels(&p).unwrap_err();
        assert!(err.to_string().contains("truncated"));
    }

    #[test]
    fn mismatched_pair() {
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("img");
        let lab = dir.path().join("lab");
        write_idx_images(&img, &Matrix::zeros(3, 4), 2, 2).unwrap();
        write_idx_labels(&lab, &[0, 1]).unwrap();
        assert!(load_idx(&img, &lab).is_err());
    }
}
