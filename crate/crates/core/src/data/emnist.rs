// SPDX-License-Identifier: Apache-2.0

//! EMNIST letters loading and preprocessing to 12x12.

use std::path::{Path, PathBuf};

use super::idx::{self, IMAGES_MAGIC, LABELS_MAGIC};
use super::ImageDataset;
use crate::error::{Error, Result};
use crate::latent::IMAGE_SIDE;

pub const RAW_SIDE: usize = 28;
/// EMNIST letters labels (1 = 'a') of H, K and U.
pub const LETTER_CODES: [u8; 3] = [8, 11, 21];
pub const DATA_DIR_ENV: &str = "MEMDIFF_DATA_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmnistSplit {
    Train,
    Test,
}

impl EmnistSplit {
    fn stem(self) -> &'static str {
        match self {
            EmnistSplit::Train => "emnist-letters-train",
            EmnistSplit::Test => "emnist-letters-test",
        }
    }

    pub fn file_names(self) -> [String; 2] {
        [
            format!("{}-images-idx3-ubyte", self.stem()),
            format!("{}-labels-idx1-ubyte", self.stem()),
        ]
    }
}

/// Raw 28x28 images with their labels, as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawImages {
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
    pub labels: Vec<u8>,
}

impl RawImages {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.rows * self.cols;
        &self.pixels[i * n..(i + 1) * n]
    }

    /// Writes the pair of IDX files into `dir`.
    pub fn write(&self, dir: &Path, split: EmnistSplit, gzip: bool) -> Result<()> {
        let [img, lab] = split.file_names();
        let ext = if gzip { ".gz" } else { "" };
        idx::write(
            &dir.join(format!("{img}{ext}")),
            IMAGES_MAGIC,
            &[self.len(), self.rows, self.cols],
            &self.pixels,
            gzip,
        )?;
        idx::write(&dir.join(format!("{lab}{ext}")), LABELS_MAGIC, &[self.len()], &self.labels, gzip)
    }
}

/// Data directory: the explicit one, else `$MEMDIFF_DATA_DIR`, else `data/`.
pub fn data_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn find(dir: &Path, name: &str) -> Option<PathBuf> {
    [name.to_string(), format!("{name}.gz")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

/// Loads the EMNIST letters split from `dir` (plain or `.gz` IDX files).
pub fn load_emnist(dir: &Path, split: EmnistSplit) -> Result<RawImages> {
    let [img_name, lab_name] = split.file_names();
    let locate = |name: &str| {
        find(dir, name).ok_or_else(|| Error::MissingInput {
            path: dir.join(name),
            hint: format!(
                "expected {img_name}[.gz] and {lab_name}[.gz] from the EMNIST letters release in {}; \
                 set {DATA_DIR_ENV} or pass --synthetic to use generated glyphs",
                dir.display()
            ),
        })
    };
    let img_path = locate(&img_name)?;
    let lab_path = locate(&lab_name)?;
    let images = idx::parse(&idx::read_bytes(&img_path)?, IMAGES_MAGIC, &img_path.display().to_string())?;
    let labels = idx::parse(&idx::read_bytes(&lab_path)?, LABELS_MAGIC, &lab_path.display().to_string())?;
    if images.dims[0] != labels.dims[0] {
        return Err(Error::format(
            "EMNIST",
            format!("{} images but {} labels", images.dims[0], labels.dims[0]),
        ));
    }
    Ok(RawImages {
        rows: images.dims[1],
        cols: images.dims[2],
        pixels: images.data,
        labels: labels.data,
    })
}

/// 28x28 grey levels to 12x12 in [-1, 1]: scale, 2x2 mean pool, drop the
/// one-pixel border.
pub fn preprocess(image: &[u8]) -> Result<Vec<f64>> {
    if image.len() != RAW_SIDE * RAW_SIDE {
        return Err(Error::Dimension {
            context: "raw image",
            expected: RAW_SIDE * RAW_SIDE,
            got: image.len(),
        });
    }
    let half = RAW_SIDE / 2;
    let px = |i: usize, j: usize| image[i * RAW_SIDE + j] as f64 / 127.5 - 1.0;
    let mut out = Vec::with_capacity(IMAGE_SIDE * IMAGE_SIDE);
    for i in 1..half - 1 {
        for j in 1..half - 1 {
            let (a, b) = (2 * i, 2 * j);
            out.push(0.25 * (px(a, b) + px(a, b + 1) + px(a + 1, b) + px(a + 1, b + 1)));
        }
    }
    Ok(out)
}

/// Transposes a square image; EMNIST stores glyphs column-major.
pub fn transpose(image: &[u8], side: usize) -> Vec<u8> {
    (0..side * side).map(|k| image[(k % side) * side + k / side]).collect()
}

/// Filters H, K and U and preprocesses them.
pub fn letters_dataset(raw: &RawImages, transposed_storage: bool) -> Result<ImageDataset> {
    if raw.rows != RAW_SIDE || raw.cols != RAW_SIDE {
        return Err(Error::format("EMNIST", format!("images are {}x{}, expected 28x28", raw.rows, raw.cols)));
    }
    let mut ds = ImageDataset {
        images: Vec::new(),
        labels: Vec::new(),
    };
    for i in 0..raw.len() {
        if let Some(class) = LETTER_CODES.iter().position(|&c| c == raw.labels[i]) {
            let img = if transposed_storage {
                preprocess(&transpose(raw.image(i), RAW_SIDE))?
            } else {
                preprocess(raw.image(i))?
            };
            ds.images.push(img);
            ds.labels.push(class);
        }
    }
    if ds.is_empty() {
        return Err(Error::Empty("EMNIST letters H/K/U"));
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preprocess_endpoints_and_checkerboard() {
        assert!(preprocess(&[0u8; 784]).unwrap().iter().all(|&v| v == -1.0));
        assert!(preprocess(&[255u8; 784]).unwrap().iter().all(|&v| v == 1.0));
        let board: Vec<u8> = (0..784).map(|k| if (k / 28 + k % 28) % 2 == 0 { 0 } else { 255 }).collect();
        let out = preprocess(&board).unwrap();
        assert_eq!(out.len(), 144);
        assert!(out.iter().all(|&v| v.abs() < 1e-15));
        assert!(preprocess(&[0u8; 100]).is_err());
    }

    #[test]
    fn crop_keeps_centre() {
        // a bright 2x2 block at raw (2..4, 2..4) becomes pooled pixel (1, 1),
        // which is cropped pixel (0, 0)
        let mut img = [0u8; 784];
        for (i, j) in [(2, 2), (2, 3), (3, 2), (3, 3)] {
            img[i * 28 + j] = 255;
        }
        let out = preprocess(&img).unwrap();
        assert_eq!(out[0], 1.0);
        assert_eq!(out[1], -1.0);
    }

    #[test]
    fn transpose_is_involution() {
        let img: Vec<u8> = (0..784).map(|k| (k % 251) as u8).collect();
        assert_eq!(transpose(&transpose(&img, 28), 28), img);
        assert_eq!(transpose(&img, 28)[1], img[28]);
    }

    #[test]
    fn missing_files_name_the_expected_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_emnist(dir.path(), EmnistSplit::Train).unwrap_err().to_string();
        assert!(err.contains("emnist-letters-train-images-idx3-ubyte"), "{err}");
        assert!(err.contains("--synthetic"));
    }

    #[test]
    fn round_trip_and_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let raw = RawImages {
            rows: 28,
            cols: 28,
            pixels: (0..2 * 784).map(|k| (k * 7 % 256) as u8).collect(),
            labels: vec![8, 3],
        };
        raw.write(dir.path(), EmnistSplit::Test, true).unwrap();
        assert_eq!(load_emnist(dir.path(), EmnistSplit::Test).unwrap(), raw);
        let ds = letters_dataset(&raw, true).unwrap();
        assert_eq!(ds.labels, vec![0]);

        let [_, lab] = EmnistSplit::Test.file_names();
        std::fs::remove_file(dir.path().join(format!("{lab}.gz"))).unwrap();
        idx::write(&dir.path().join(lab), LABELS_MAGIC, &[3], &[8, 8, 8], false).unwrap();
        assert!(load_emnist(dir.path(), EmnistSplit::Test).is_err());
    }
}
