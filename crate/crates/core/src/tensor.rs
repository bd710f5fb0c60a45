//! Dense f64 tensors and 8-bit images.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Dense row-major f64 array. Images use the `[channels, height, width]` layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor, rejecting length mismatches and non-finite values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!("shape {shape:?} holds {n} elements but {} were given", data.len())));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![value; n] }
    }

    /// Internal constructor for data already known to be finite and correctly sized.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Returns `(channels, height, width)` for a rank-3 image tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::Shape(format!("expected [C,H,W], got {:?}", self.shape))),
        }
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::Shape(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        Ok(Self { shape, data: self.data })
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn l1(&self) -> f64 {
        self.data.iter().map(|v| v.abs()).sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn scale(&self, k: f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|v| v * k).collect())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, |a, b| a - b)
    }

    /// `a·self + b·other`.
    pub fn axpby(&self, a: f64, other: &Tensor, b: f64) -> Result<Tensor> {
        self.zip_with(other, |x, y| a * x + b * y)
    }

    pub fn zip_with(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor::new(self.shape.clone(), data)
    }

    pub fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(())
    }

    /// Concatenates rank-3 tensors along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::Empty("no tensors to concatenate".into()))?;
        let (_, h, w) = first.chw()?;
        let mut c_total = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, ph, pw) = p.chw()?;
            if (ph, pw) != (h, w) {
                return Err(Error::Shape(format!("spatial {ph}x{pw} vs {h}x{w}")));
            }
            c_total += c;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor::from_parts(vec![c_total, h, w], data))
    }

    /// Extracts channels `[start, start+count)` of a rank-3 tensor.
    pub fn channels(&self, start: usize, count: usize) -> Result<Tensor> {
        let (c, h, w) = self.chw()?;
        if start + count > c {
            return Err(Error::Shape(format!("channels {start}..{} of {c}", start + count)));
        }
        let plane = h * w;
        Ok(Tensor::from_parts(vec![count, h, w], self.data[start * plane..(start + count) * plane].to_vec()))
    }

    /// Standard-normal tensor of the given shape.
    pub fn randn(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_parts(shape, (0..n).map(|_| rng.normal()).collect())
    }
}

/// 8-bit image stored as interleaved `height × width × channels` samples.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageU8 {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl ImageU8 {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidArgument(format!("channels must be 1 or 3, got {channels}")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{height}x{width}x{channels} image needs {} samples, got {}",
                height * width * channels,
                pixels.len()
            )));
        }
        Ok(Self { height, width, channels, pixels })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn dim(&self) -> usize {
        self.pixels.len()
    }

    /// Sample at channel `c`, row `i`, column `j`.
    pub fn get(&self, c: usize, i: usize, j: usize) -> u8 {
        self.pixels[(i * self.width + j) * self.channels + c]
    }

    /// Pixel values in `[C,H,W]` order as f64 integers.
    pub fn to_chw_values(&self) -> Vec<f64> {
        let (h, w, c) = (self.height, self.width, self.channels);
        let mut out = vec![0.0; h * w * c];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    out[(ch * h + i) * w + j] = f64::from(self.get(ch, i, j));
                }
            }
        }
        out
    }

    /// Builds an image from `[C,H,W]` integer sample values.
    pub fn from_chw_values(c: usize, h: usize, w: usize, values: &[u8]) -> Result<Self> {
        if values.len() != c * h * w {
            return Err(Error::Shape(format!("expected {} values, got {}", c * h * w, values.len())));
        }
        let mut pixels = vec![0u8; c * h * w];
        for ch in 0..c {
            for i in 0..h {
                for j in 0..w {
                    pixels[(i * w + j) * c + ch] = values[(ch * h + i) * w + j];
                }
            }
        }
        Self::new(h, w, c, pixels)
    }
}

/// Bin width of the uniform dequantization, in model units.
pub const BIN_WIDTH: f64 = 1.0 / 128.0;

/// Maps pixels to `[-1, 1)` with uniform noise inside each bin: `y = (p + u)/128 − 1`.
///
/// Offsets are drawn on a 2^-32 grid so every value is exact in f64 and
/// quantizes back to its source pixel.
pub fn dequantize(img: &ImageU8, rng: &mut Rng) -> Tensor {
    let values = img.to_chw_values();
    let data = values.iter().map(|&p| dequantize_value(p, f64::from(rng.next_u32()) / 4_294_967_296.0)).collect();
    Tensor::from_parts(vec![img.channels, img.height, img.width], data)
}

/// Dequantizes one pixel with an explicit in-bin offset `u ∈ [0, 1)`.
pub fn dequantize_value(pixel: f64, u: f64) -> f64 {
    (pixel + u) * BIN_WIDTH - 1.0
}

/// Bin-centre dequantization, used where a deterministic continuous value is needed.
pub fn dequantize_centered(img: &ImageU8) -> Tensor {
    let data = img.to_chw_values().iter().map(|&p| dequantize_value(p, 0.5)).collect();
    Tensor::from_parts(vec![img.channels, img.height, img.width], data)
}

/// Inverse of [`dequantize`]: `floor((y + 1)·128)`. Values outside `[-1, 1)` are rejected.
pub fn quantize(t: &Tensor) -> Result<ImageU8> {
    let (c, h, w) = t.chw()?;
    let mut values = Vec::with_capacity(t.len());
    for (i, &y) in t.data().iter().enumerate() {
        if !(-1.0..1.0).contains(&y) {
            return Err(Error::Range(format!("element {i} = {y} outside [-1, 1)")));
        }
        values.push(((y + 1.0) * 128.0).floor().clamp(0.0, 255.0) as u8);
    }
    ImageU8::from_chw_values(c, h, w, &values)
}
