use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::data::{LabeledDataset, TrainTest};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

/// Reads an IDX image file and its label file. Pixels are divided by 255;
/// labels are remapped onto `0..K` in ascending order of the raw byte.
/// Either file may be gzip-compressed (detected from its first two bytes).
pub fn read_idx(images_path: &Path, labels_path: &Path) -> Result<LabeledDataset> {
    let (n_images, dim, pixels) = read_idx_images(images_path)?;
    let raw = read_idx_labels(labels_path)?;
    if raw.len() != n_images {
        return Err(Error::Idx {
            path: labels_path.to_path_buf(),
            offset: 4,
            message: format!(
                "label file holds {} labels but {} holds {n_images} images",
                raw.len(),
                images_path.display()
            ),
        });
    }
    let features = pixels.into_iter().map(|p| f64::from(p) / 255.0).collect();
    let raw: Vec<u64> = raw.into_iter().map(u64::from).collect();
    LabeledDataset::from_raw_labels(features, dim, &raw)
}

/// Reads the standard MNIST file pair from `dir`:
/// `{train,t10k}-images-idx3-ubyte` and `{train,t10k}-labels-idx1-ubyte`,
/// each optionally suffixed `.gz`.
pub fn read_mnist_dir(dir: &Path) -> Result<TrainTest> {
    let find = |stem: &str| {
        let plain = dir.join(stem);
        let gz = dir.join(format!("{stem}.gz"));
        if plain.exists() {
            Ok(plain)
        } else if gz.exists() {
            Ok(gz)
        } else {
            Err(Error::MissingData(format!("{} not found (with or without .gz)", plain.display())))
        }
    };
    let train = read_idx(&find("train-images-idx3-ubyte")?, &find("train-labels-idx1-ubyte")?)?;
    let test = read_idx(&find("t10k-images-idx3-ubyte")?, &find("t10k-labels-idx1-ubyte")?)?;
    TrainTest::new(train, test)
}

/// Image count, pixels per image and the raw pixel bytes.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = load(path)?;
    let mut r = Cursor::new(path, &bytes);
    r.magic(IMAGES_MAGIC)?;
    let n = r.u32()? as usize;
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    let body = r.take(n * rows * cols)?;
    r.finish()?;
    Ok((n, rows * cols, body.to_vec()))
}

/// Raw label bytes.
pub fn read_idx_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = load(path)?;
    let mut r = Cursor::new(path, &bytes);
    r.magic(LABELS_MAGIC)?;
    let n = r.u32()? as usize;
    let body = r.take(n)?.to_vec();
    r.finish()?;
    Ok(body)
}

fn load(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Self { path, bytes, pos: 0 }
    }

    fn err(&self, offset: usize, message: String) -> Error {
        Error::Idx {
            path: self.path.to_path_buf(),
            offset,
            message,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(self.err(
                self.bytes.len(),
                format!(
                    "file truncated: needed {n} bytes starting at offset {}, only {} remain",
                    self.pos,
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn magic(&mut self, expected: u32) -> Result<()> {
        let got = self.u32()?;
        if got != expected {
            return Err(self.err(0, format!("bad magic number {got:#010x}, expected {expected:#010x}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.err(
                self.pos,
                format!("{} trailing bytes after the declared data", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}
