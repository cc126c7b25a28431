//! MNIST-family datasets in IDX format, nearest-neighbor resizing, amplitude
//! encoding and seeded batching.

use std::fmt;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::ComplexField;
use crate::network::NUM_CLASSES;
use crate::seed::{stream_rng, Stream};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetName {
    Mnist,
    #[serde(alias = "fashion")]
    FashionMnist,
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion_mnist",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    /// File stem prefix used by the published archives.
    pub fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }

    pub fn images_file(self) -> String {
        format!("{}-images-idx3-ubyte", self.prefix())
    }

    pub fn labels_file(self) -> String {
        format!("{}-labels-idx1-ubyte", self.prefix())
    }
}

/// Grayscale images (row-major bytes, `rows x cols` each) with class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub name: DatasetName,
    pub split: Split,
    pub rows: usize,
    pub cols: usize,
    pixels: Vec<u8>,
    labels: Vec<u8>,
}

impl Dataset {
    pub fn new(
        name: DatasetName,
        split: Split,
        rows: usize,
        cols: usize,
        pixels: Vec<u8>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        if rows * cols == 0 || pixels.len() != labels.len() * rows * cols {
            return Err(Error::Consistency(format!(
                "{} pixel bytes for {} images of {rows}x{cols}",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= NUM_CLASSES) {
            return Err(Error::Consistency(format!("label {bad} outside 0..{NUM_CLASSES}")));
        }
        Ok(Self { name, split, rows, cols, pixels, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let size = self.rows * self.cols;
        &self.pixels[i * size..(i + 1) * size]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `count` items (or all of them when fewer exist).
    pub fn take(&self, count: usize) -> Dataset {
        let count = count.min(self.len());
        let size = self.rows * self.cols;
        Dataset {
            name: self.name,
            split: self.split,
            rows: self.rows,
            cols: self.cols,
            pixels: self.pixels[..count * size].to_vec(),
            labels: self.labels[..count].to_vec(),
        }
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Resized and amplitude-encoded input field for item `i`.
    pub fn input_field(&self, i: usize, n: usize) -> Result<ComplexField> {
        if self.rows != self.cols {
            return Err(Error::InvalidDimension(format!(
                "non-square source images ({}x{})",
                self.rows, self.cols
            )));
        }
        encode_amplitude(&resize_nearest(self.image(i), self.rows, n), n)
    }
}

/// Reads a file, transparently inflating gzip content.
pub fn read_maybe_gzip(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&GZIP_MAGIC) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn truncated(path: &Path) -> Error {
    Error::io(
        path,
        std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "file shorter than its IDX header"),
    )
}

fn be_u32(bytes: &[u8], word: usize, path: &Path) -> Result<u32> {
    let chunk = bytes.get(word * 4..word * 4 + 4).ok_or_else(|| truncated(path))?;
    Ok(u32::from_be_bytes(chunk.try_into().expect("4-byte slice")))
}

/// Parsed IDX image payload: `(count, rows, cols, pixels)`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::IdxFormat {
            path: path.to_path_buf(),
            reason: format!("image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 1, path)? as usize;
    let rows = be_u32(bytes, 2, path)? as usize;
    let cols = be_u32(bytes, 3, path)? as usize;
    let body = &bytes[16..];
    let need = count * rows * cols;
    if body.len() < need {
        return Err(truncated(path));
    }
    Ok((count, rows, cols, body[..need].to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != LABEL_MAGIC {
        return Err(Error::IdxFormat {
            path: path.to_path_buf(),
            reason: format!("label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}"),
        });
    }
    let count = be_u32(bytes, 1, path)? as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(truncated(path));
    }
    Ok(body[..count].to_vec())
}

pub fn load_idx(
    images_path: &Path,
    labels_path: &Path,
    name: DatasetName,
    split: Split,
) -> Result<Dataset> {
    let (count, rows, cols, pixels) =
        parse_idx_images(&read_maybe_gzip(images_path)?, images_path)?;
    let labels = parse_idx_labels(&read_maybe_gzip(labels_path)?, labels_path)?;
    if labels.len() != count {
        return Err(Error::Consistency(format!(
            "{} holds {count} images but {} holds {} labels",
            images_path.display(),
            labels_path.display(),
            labels.len()
        )));
    }
    Dataset::new(name, split, rows, cols, pixels, labels)
}

/// Finds `stem` or `stem.gz` inside `dir`.
pub fn locate_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    for candidate in [dir.join(stem), dir.join(format!("{stem}.gz"))] {
        if candidate.is_file() {
            return Ok(candidate);
        }
    }
    Err(Error::MissingDataset { path: dir.join(stem), expected: format!("{stem}, {stem}.gz") })
}

/// Loads one split from a directory holding the standard archive names.
pub fn load_split(dir: &Path, name: DatasetName, split: Split) -> Result<Dataset> {
    let images = locate_file(dir, &split.images_file())?;
    let labels = locate_file(dir, &split.labels_file())?;
    load_idx(&images, &labels, name, split)
}

pub fn encode_idx_images(rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    let count = pixels.len() / (rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for word in [IMAGE_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Nearest-neighbor resampling of a square image from `src_side` to `n`.
/// Destination pixel `d` reads source pixel `floor(d * src_side / n)`, so an
/// integer upscale replicates each source pixel into an exact block.
pub fn resize_nearest(img: &[u8], src_side: usize, n: usize) -> Vec<u8> {
    assert_eq!(img.len(), src_side * src_side, "source image is not square");
    assert!(n >= 1, "target side must be at least 1");
    let map: Vec<usize> = (0..n).map(|d| d * src_side / n).collect();
    let mut out = Vec::with_capacity(n * n);
    for &sy in &map {
        for &sx in &map {
            out.push(img[sy * src_side + sx]);
        }
    }
    out
}

/// `field_p = byte_p / 255`.
pub fn encode_amplitude(img: &[u8], n: usize) -> Result<ComplexField> {
    ComplexField::from_vec(n, img.iter().map(|&b| Complex64::new(b as f64 / 255.0, 0.0)).collect())
}

/// Seeded per-epoch permutation of `0..len`, cut into batches; the last batch
/// may be short.
pub fn batches(len: usize, batch_size: usize, seed: u64, epoch: u32) -> Vec<Vec<usize>> {
    assert!(batch_size >= 1, "batch size must be at least 1");
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut stream_rng(seed, Stream::Shuffle(epoch)));
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fixture_image() -> Vec<u8> {
        (0..28 * 28).map(|i| ((i * 37) % 256) as u8).collect()
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    }

    #[test]
    fn single_image_fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = fixture_image();
        let ip = write(dir.path(), "img", &encode_idx_images(28, 28, &img));
        let lp = write(dir.path(), "lbl", &encode_idx_labels(&[7]));
        let ds = load_idx(&ip, &lp, DatasetName::Mnist, Split::Test).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!((ds.rows, ds.cols), (28, 28));
        assert_eq!(ds.image(0), img.as_slice());
        assert_eq!(ds.label(0), 7);
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::write::GzEncoder;
        use std::io::Write;
        let dir = tempfile::tempdir().unwrap();
        let img = fixture_image();
        let gz = |bytes: &[u8]| {
            let mut e = GzEncoder::new(Vec::new(), flate2::Compression::default());
            e.write_all(bytes).unwrap();
            e.finish().unwrap()
        };
        write(dir.path(), "train-images-idx3-ubyte.gz", &gz(&encode_idx_images(28, 28, &img)));
        write(dir.path(), "train-labels-idx1-ubyte.gz", &gz(&encode_idx_labels(&[3])));
        let ds = load_split(dir.path(), DatasetName::Mnist, Split::Train).unwrap();
        assert_eq!(ds.image(0), img.as_slice());
        assert_eq!(ds.label(0), 3);
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        let img = fixture_image();
        let ip = write(dir.path(), "img", &encode_idx_images(28, 28, &img));

        let lp = write(dir.path(), "bad-label", &encode_idx_labels(&[10]));
        assert!(matches!(
            load_idx(&ip, &lp, DatasetName::Mnist, Split::Test),
            Err(Error::Consistency(_))
        ));

        let lp = write(dir.path(), "two-labels", &encode_idx_labels(&[1, 2]));
        assert!(matches!(
            load_idx(&ip, &lp, DatasetName::Mnist, Split::Test),
            Err(Error::Consistency(_))
        ));

        let mut wrong = encode_idx_labels(&[1]);
        wrong[3] = 0x03;
        let lp = write(dir.path(), "wrong-magic", &wrong);
        assert!(matches!(
            load_idx(&ip, &lp, DatasetName::Mnist, Split::Test),
            Err(Error::IdxFormat { .. })
        ));

        let full = encode_idx_images(28, 28, &img);
        let ip = write(dir.path(), "short", &full[..full.len() - 5]);
        let lp = write(dir.path(), "ok", &encode_idx_labels(&[1]));
        assert!(matches!(
            load_idx(&ip, &lp, DatasetName::Mnist, Split::Test),
            Err(Error::Io { .. })
        ));
        let ip = write(dir.path(), "header-only", &full[..10]);
        assert!(matches!(
            load_idx(&ip, &lp, DatasetName::Mnist, Split::Test),
            Err(Error::Io { .. })
        ));

        assert!(matches!(
            load_split(dir.path(), DatasetName::Mnist, Split::Train),
            Err(Error::MissingDataset { .. })
        ));
    }

    #[test]
    fn resize_examples() {
        let img = fixture_image();
        assert_eq!(resize_nearest(&img, 28, 28), img);

        let mut dot = vec![0u8; 28 * 28];
        dot[0] = 255;
        let big = resize_nearest(&dot, 28, 56);
        for y in 0..56 {
            for x in 0..56 {
                assert_eq!(big[y * 56 + x], if x < 2 && y < 2 { 255 } else { 0 });
            }
        }

        let big = resize_nearest(&img, 28, 112);
        for y in 0..112 {
            for x in 0..112 {
                assert_eq!(big[y * 112 + x], img[(y / 4) * 28 + x / 4]);
            }
        }
        assert_eq!(resize_nearest(&big, 112, 28), img);
    }

    #[test]
    fn amplitude_encoding() {
        let zero = encode_amplitude(&[0; 16], 4).unwrap();
        assert_eq!(zero.total_intensity(), 0.0);
        let one = encode_amplitude(&[255], 1).unwrap();
        assert_eq!(one.data()[0], Complex64::new(1.0, 0.0));
        let img = fixture_image();
        let f = encode_amplitude(&img, 28).unwrap();
        let expected: f64 = img.iter().map(|&b| (b as f64 / 255.0).powi(2)).sum();
        assert!((f.total_intensity() - expected).abs() < 1e-9);
    }

    #[test]
    fn batching() {
        let b = batches(10, 3, 1, 0);
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3, 3, 1]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(batches(10, 3, 1, 0), b);
        assert_ne!(batches(1000, 1000, 1, 0), batches(1000, 1000, 1, 1));
        assert_ne!(batches(1000, 1000, 1, 0), batches(1000, 1000, 2, 0));
    }

    proptest! {
        #[test]
        fn idx_round_trip(count in 1usize..6, side in 1usize..9, seed in any::<u64>()) {
            let size = side * side;
            let pixels: Vec<u8> = (0..count * size).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 13) as u8).collect();
            let labels: Vec<u8> = (0..count).map(|i| ((seed >> (i % 60)) % 10) as u8).collect();
            let dir = tempfile::tempdir().unwrap();
            let ip = write(dir.path(), "i", &encode_idx_images(side, side, &pixels));
            let lp = write(dir.path(), "l", &encode_idx_labels(&labels));
            let ds = load_idx(&ip, &lp, DatasetName::FashionMnist, Split::Train).unwrap();
            prop_assert_eq!(ds.len(), count);
            for i in 0..count {
                prop_assert_eq!(ds.image(i), &pixels[i * size..(i + 1) * size]);
                prop_assert_eq!(ds.label(i), labels[i] as usize);
            }
        }

        #[test]
        fn integer_downscale_inverts_upscale(pixels in prop::collection::vec(any::<u8>(), 49), k in 1usize..5) {
            let up = resize_nearest(&pixels, 7, 7 * k);
            prop_assert_eq!(resize_nearest(&up, 7 * k, 7), pixels);
        }
    }
}
