use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Labelled image set, `images` shaped `[n, c, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T = f64> {
    pub images: Tensor<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl<T: Scalar> Dataset<T> {
    pub fn new(images: Tensor<T>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.batch() != labels.len() {
            return Err(Error::shape(format!(
                "{} images but {} labels",
                images.batch(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} outside {classes} classes"
            )));
        }
        Ok(Self {
            images,
            labels,
            classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.images.shape()[1..]
    }

    /// Images and labels at `indices`, in that order.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let samples: Vec<&[T]> = indices.iter().map(|&i| self.images.sample(i)).collect();
        let x = Tensor::stack(&samples, self.sample_shape()).expect("uniform samples");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let (images, labels) = self.batch(indices);
        Self {
            images,
            labels,
            classes: self.classes,
        }
    }

    /// First `n` samples.
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }
}

/// Parameters of the built-in 10-class digit generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticDigits {
    pub size: usize,
    /// Standard deviation of additive pixel noise.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticDigits {
    fn default() -> Self {
        Self {
            size: 16,
            noise: 0.05,
            seed: 0,
        }
    }
}

const GLYPHS: [[&str; 7]; 10] = [
    [
        "01110", "10001", "10011", "10101", "11001", "10001", "01110",
    ],
    [
        "00100", "01100", "00100", "00100", "00100", "00100", "01110",
    ],
    [
        "01110", "10001", "00001", "00010", "00100", "01000", "11111",
    ],
    [
        "11111", "00010", "00100", "00010", "00001", "10001", "01110",
    ],
    [
        "00010", "00110", "01010", "10010", "11111", "00010", "00010",
    ],
    [
        "11111", "10000", "11110", "00001", "00001", "10001", "01110",
    ],
    [
        "00110", "01000", "10000", "11110", "10001", "10001", "01110",
    ],
    [
        "11111", "00001", "00010", "00100", "01000", "01000", "01000",
    ],
    [
        "01110", "10001", "10001", "01110", "10001", "10001", "01110",
    ],
    [
        "01110", "10001", "10001", "01111", "00001", "00010", "01100",
    ],
];

fn glyph_at(digit: usize, x: f64, y: f64) -> f64 {
    // bilinear over pixel centres, zero outside the 5x7 cell
    let fx = x - 0.5;
    let fy = y - 0.5;
    let (x0, y0) = (fx.floor(), fy.floor());
    let (tx, ty) = (fx - x0, fy - y0);
    let px = |cx: f64, cy: f64| -> f64 {
        if cx < 0.0 || cy < 0.0 || cx >= 5.0 || cy >= 7.0 {
            return 0.0;
        }
        let row = GLYPHS[digit][cy as usize].as_bytes();
        if row[cx as usize] == b'1' {
            1.0
        } else {
            0.0
        }
    };
    px(x0, y0) * (1.0 - tx) * (1.0 - ty)
        + px(x0 + 1.0, y0) * tx * (1.0 - ty)
        + px(x0, y0 + 1.0) * (1.0 - tx) * ty
        + px(x0 + 1.0, y0 + 1.0) * tx * ty
}

/// Seeded images of the ten digits with random scale, shear, position,
/// stroke intensity and pixel noise. Labels cycle `0..10`.
pub fn synthetic_digits(n: usize, cfg: &SyntheticDigits) -> Dataset<f64> {
    let s = cfg.size;
    let sf = s as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite noise level");
    let mut data = Vec::with_capacity(n * s * s);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let digit = i % 10;
        let sx = sf / 16.0 * rng.random_range(1.7..2.3);
        let sy = sf / 16.0 * rng.random_range(1.6..2.0);
        let shear = rng.random_range(-0.25..0.25);
        let ox = rng.random_range(0.0..(sf - 5.0 * sx).max(0.0) + 1e-9);
        let oy = rng.random_range(0.0..(sf - 7.0 * sy).max(0.0) + 1e-9);
        let intensity = rng.random_range(0.7..1.0);
        let cy = oy + 3.5 * sy;
        for py in 0..s {
            for px in 0..s {
                let y = py as f64 + 0.5;
                let x = px as f64 + 0.5 - shear * (y - cy);
                let g = glyph_at(digit, (x - ox) / sx, (y - oy) / sy);
                let v = (intensity * (1.3 * g).min(1.0) + noise.sample(&mut rng)).clamp(0.0, 1.0);
                data.push(v);
            }
        }
        labels.push(digit);
    }
    let images = Tensor::new(vec![n, 1, s, s], data).expect("consistent shape");
    Dataset::new(images, labels, 10).expect("labels in range")
}

/// Contents of an unsigned-byte IDX file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

const IDX_UBYTE: u8 = 0x08;

fn idx_err(msg: impl Into<String>) -> Error {
    Error::Format {
        what: "IDX file",
        msg: msg.into(),
    }
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(idx_err("bad magic number"));
    }
    if bytes[2] != IDX_UBYTE {
        return Err(idx_err(format!(
            "unsupported element type 0x{:02x} (only unsigned bytes)",
            bytes[2]
        )));
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return Err(idx_err("truncated header"));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let n: usize = dims.iter().product();
    if bytes.len() != header + n {
        return Err(idx_err(format!(
            "expected {n} data bytes for dims {dims:?}, found {}",
            bytes.len() - header
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn write_idx(path: &Path, array: &IdxArray) -> Result<()> {
    let n: usize = array.dims.iter().product();
    if n != array.data.len() || array.dims.len() > 255 {
        return Err(idx_err("dims do not match data length"));
    }
    let mut out = vec![0, 0, IDX_UBYTE, array.dims.len() as u8];
    for &d in &array.dims {
        let d = u32::try_from(d).map_err(|_| idx_err("dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    std::fs::File::create(path)
        .and_then(|mut f| f.write_all(&out))
        .map_err(|e| Error::io(path, e))
}

/// Loads an `[n, h, w]` image file and an `[n]` label file; pixels scale to `[0, 1]`.
pub fn read_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset<f64>> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    let (n, h, w) = match img.dims[..] {
        [n, h, w] => (n, h, w),
        _ => return Err(idx_err(format!("image file has dims {:?}", img.dims))),
    };
    if lab.dims != [n] {
        return Err(idx_err(format!(
            "label dims {:?} do not match {n} images",
            lab.dims
        )));
    }
    let labels: Vec<usize> = lab.data.iter().map(|&b| b as usize).collect();
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let pixels = img.data.iter().map(|&b| b as f64 / 255.0).collect();
    Dataset::new(Tensor::new(vec![n, 1, h, w], pixels)?, labels, classes)
}

/// Writes a single-channel dataset as IDX image/label files (pixels rounded to bytes).
pub fn write_idx_dataset(ds: &Dataset<f64>, images: &Path, labels: &Path) -> Result<()> {
    let (n, c, h, w) = match ds.images.shape() {
        &[n, c, h, w] => (n, c, h, w),
        other => return Err(Error::shape(format!("cannot write {other:?} as IDX"))),
    };
    if c != 1 {
        return Err(Error::shape("IDX export supports single-channel images"));
    }
    let data = ds
        .images
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_idx(
        images,
        &IdxArray {
            dims: vec![n, h, w],
            data,
        },
    )?;
    let labels_u8 = ds
        .labels
        .iter()
        .map(|&y| u8::try_from(y).map_err(|_| idx_err("label exceeds 255")))
        .collect::<Result<Vec<u8>>>()?;
    write_idx(
        labels,
        &IdxArray {
            dims: vec![n],
            data: labels_u8,
        },
    )
}

impl Dataset<f64> {
    pub fn cast<U: Scalar>(&self) -> Dataset<U> {
        let data = self.images.data().iter().map(|&v| U::of(v)).collect();
        Dataset {
            images: Tensor::new(self.images.shape().to_vec(), data).expect("same shape"),
            labels: self.labels.clone(),
            classes: self.classes,
        }
    }
}
