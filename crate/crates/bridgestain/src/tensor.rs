//! Image tensors and exact file I/O.
//!
//! An [`ImageTensor`] is a dense H×W×C block of f64 samples in row-major,
//! channel-interleaved order, tagged with channel semantics and a declared
//! value range. Two interchange formats are supported: a raw little-endian
//! tensor file (`.btns`) that round-trips values exactly at f32 precision, and
//! 8-bit PNG for visual inspection (quantized to the declared range).

use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: [u8; 4] = *b"BTNS";
const FORMAT_VERSION: u32 = 1;
pub(crate) const HEADER_LEN: usize = 4 + 4 + 4 + 4 + 4 + 1 + 4 + 4;

/// Channel meaning of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Semantics {
    /// Three channels, red/green/blue.
    Rgb,
    /// Three channels, luma plus offset chroma.
    YCbCr,
    /// A stack of autofluorescence-like input channels.
    AfStack,
    /// Model-space values with no fixed physical meaning.
    NormalizedLatent,
}

impl Semantics {
    pub fn code(self) -> u8 {
        match self {
            Semantics::Rgb => 0,
            Semantics::YCbCr => 1,
            Semantics::AfStack => 2,
            Semantics::NormalizedLatent => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Semantics::Rgb),
            1 => Some(Semantics::YCbCr),
            2 => Some(Semantics::AfStack),
            3 => Some(Semantics::NormalizedLatent),
            _ => None,
        }
    }
}

/// Dense H×W×C image data with semantics and a declared value interval.
///
/// Invariants enforced by every constructor: all dimensions are at least 1,
/// `data.len() == height·width·channels`, every sample is finite, and the
/// declared range satisfies `lo <= hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    semantics: Semantics,
    range: (f64, f64),
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        semantics: Semantics,
        range: (f64, f64),
        data: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidInput(format!(
                "tensor dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidInput("tensor dimensions overflow".into()))?;
        if data.len() != len {
            return Err(Error::InvalidInput(format!(
                "data length {} does not match {height}x{width}x{channels}",
                data.len()
            )));
        }
        if !(range.0 <= range.1) {
            return Err(Error::InvalidInput(format!(
                "declared range [{}, {}] is not an interval",
                range.0, range.1
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput("tensor contains non-finite samples".into()));
        }
        Ok(ImageTensor { height, width, channels, semantics, range, data })
    }

    /// All-zero tensor with the given shape and tags.
    pub fn zeros(
        height: usize,
        width: usize,
        channels: usize,
        semantics: Semantics,
        range: (f64, f64),
    ) -> Result<Self> {
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| Error::InvalidInput("tensor dimensions overflow".into()))?;
        Self::new(height, width, channels, semantics, range, vec![0.0; len])
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

    pub fn semantics(&self) -> Semantics {
        self.semantics
    }

    pub fn range(&self) -> (f64, f64) {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the samples. The caller is responsible for keeping
    /// values finite; file writers re-check.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline(always)]
    pub fn idx(&self, y: usize, x: usize, c: usize) -> usize {
        debug_assert!(y < self.height && x < self.width && c < self.channels);
        (y * self.width + x) * self.channels + c
    }

    #[inline(always)]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[self.idx(y, x, c)]
    }

    #[inline(always)]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        let i = self.idx(y, x, c);
        self.data[i] = v;
    }

    /// Same data, new tags. Used when values move between interpretations
    /// (for example into and out of model space).
    pub fn retagged(mut self, semantics: Semantics, range: (f64, f64)) -> Self {
        self.semantics = semantics;
        self.range = range;
        self
    }

    /// Elementwise map preserving shape and tags.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let data = self.data.iter().map(|&v| f(v)).collect();
        Self::new(self.height, self.width, self.channels, self.semantics, self.range, data)
    }

    pub fn same_shape(&self, other: &ImageTensor) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.channels == other.channels
    }

    /// Encodes the tensor in the raw format: little-endian header
    /// `{magic "BTNS", version, H, W, C, semantics, range lo/hi as f32}`
    /// followed by f32 row-major samples. Also used for the named blobs
    /// inside checkpoint containers.
    pub fn to_btns_bytes(&self) -> Vec<u8> {
        let mut bytes = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        bytes.extend_from_slice(&MAGIC);
        bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        bytes.extend_from_slice(&(self.height as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.width as u32).to_le_bytes());
        bytes.extend_from_slice(&(self.channels as u32).to_le_bytes());
        bytes.push(self.semantics.code());
        bytes.extend_from_slice(&(self.range.0 as f32).to_le_bytes());
        bytes.extend_from_slice(&(self.range.1 as f32).to_le_bytes());
        for &v in &self.data {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        bytes
    }

    /// Decodes [`ImageTensor::to_btns_bytes`] output. `origin` names the
    /// source (file path, blob name) for error messages.
    pub fn from_btns_bytes(bytes: &[u8], origin: &str) -> Result<Self> {
        let malformed = |reason: &str| Error::Malformed {
            path: origin.to_string(),
            reason: reason.to_string(),
        };
        if bytes.len() < HEADER_LEN {
            return Err(malformed("shorter than header"));
        }
        if bytes[0..4] != MAGIC {
            return Err(malformed("bad magic"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != FORMAT_VERSION {
            return Err(malformed(&format!("unsupported version {version}")));
        }
        let (h, w, c) = (u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize);
        let semantics = Semantics::from_code(bytes[20])
            .ok_or_else(|| malformed(&format!("unknown semantics code {}", bytes[20])))?;
        let lo = f32::from_le_bytes(bytes[21..25].try_into().unwrap()) as f64;
        let hi = f32::from_le_bytes(bytes[25..29].try_into().unwrap()) as f64;
        let len = h
            .checked_mul(w)
            .and_then(|n| n.checked_mul(c))
            .ok_or_else(|| malformed("dimensions overflow"))?;
        if bytes.len() != HEADER_LEN + 4 * len {
            return Err(malformed(&format!(
                "payload is {} bytes, header promises {}",
                bytes.len() - HEADER_LEN,
                4 * len
            )));
        }
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            let o = HEADER_LEN + 4 * i;
            let v = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as f64;
            data.push(v);
        }
        Self::new(h, w, c, semantics, (lo, hi), data)
            .map_err(|e| malformed(&format!("invalid contents: {e}")))
    }

    /// Writes the raw tensor file (see [`ImageTensor::to_btns_bytes`]).
    pub fn write_btns(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_btns_bytes())?;
        Ok(())
    }

    /// Reads a raw tensor file written by [`ImageTensor::write_btns`].
    pub fn read_btns(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)?;
        Self::from_btns_bytes(&bytes, &path.display().to_string())
    }

    /// Writes an 8-bit PNG, quantizing samples linearly over the declared
    /// range (values outside it are clamped). Supported channel counts:
    /// 1 (gray), 3 (RGB), 4 (RGBA).
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let span = (self.range.1 - self.range.0).max(f64::MIN_POSITIVE);
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| {
                let t = ((v - self.range.0) / span).clamp(0.0, 1.0);
                (t * 255.0).round() as u8
            })
            .collect();
        let (w, h) = (self.width as u32, self.height as u32);
        let img: image::DynamicImage = match self.channels {
            1 => image::GrayImage::from_raw(w, h, bytes).unwrap().into(),
            3 => image::RgbImage::from_raw(w, h, bytes).unwrap().into(),
            4 => image::RgbaImage::from_raw(w, h, bytes).unwrap().into(),
            c => {
                return Err(Error::InvalidInput(format!(
                    "PNG export supports 1, 3, or 4 channels, not {c}"
                )))
            }
        };
        img.save_with_format(path.as_ref(), image::ImageFormat::Png)
            .map_err(|e| Error::Malformed {
                path: path.as_ref().display().to_string(),
                reason: e.to_string(),
            })
    }

    /// Reads an 8-bit PNG back into the declared range. Inverse of
    /// [`ImageTensor::write_png`] up to the documented 8-bit quantization
    /// (half a quantization step, i.e. `(hi-lo)/510`).
    pub fn read_png(
        path: impl AsRef<Path>,
        semantics: Semantics,
        range: (f64, f64),
    ) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Malformed {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (channels, raw): (usize, Vec<u8>) = match img {
            image::DynamicImage::ImageLuma8(b) => (1, b.into_raw()),
            image::DynamicImage::ImageRgb8(b) => (3, b.into_raw()),
            image::DynamicImage::ImageRgba8(b) => (4, b.into_raw()),
            other => {
                let b = other.to_rgb8();
                (3, b.into_raw())
            }
        };
        let span = range.1 - range.0;
        let data = raw.iter().map(|&b| range.0 + span * (b as f64 / 255.0)).collect();
        Self::new(h, w, channels, semantics, range, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> ImageTensor {
        let n = h * w * c;
        let data = (0..n).map(|i| i as f64 / n as f64).collect();
        ImageTensor::new(h, w, c, Semantics::Rgb, (0.0, 1.0), data).unwrap()
    }

    #[test]
    fn constructor_rejects_bad_shapes_and_values() {
        assert!(ImageTensor::new(0, 4, 3, Semantics::Rgb, (0.0, 1.0), vec![]).is_err());
        assert!(ImageTensor::new(2, 2, 1, Semantics::Rgb, (0.0, 1.0), vec![0.0; 3]).is_err());
        assert!(
            ImageTensor::new(1, 1, 1, Semantics::Rgb, (0.0, 1.0), vec![f64::NAN]).is_err()
        );
        assert!(ImageTensor::new(1, 1, 1, Semantics::Rgb, (1.0, 0.0), vec![0.5]).is_err());
    }

    #[test]
    fn indexing_is_row_major_channel_interleaved() {
        let t = ramp(2, 3, 2);
        assert_eq!(t.at(0, 0, 0), t.data()[0]);
        assert_eq!(t.at(0, 0, 1), t.data()[1]);
        assert_eq!(t.at(0, 1, 0), t.data()[2]);
        assert_eq!(t.at(1, 0, 0), t.data()[6]);
    }

    #[test]
    fn btns_round_trip_is_exact_at_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.btns");
        let t = ramp(5, 7, 3);
        t.write_btns(&path).unwrap();
        let r = ImageTensor::read_btns(&path).unwrap();
        assert_eq!(r.height(), 5);
        assert_eq!(r.width(), 7);
        assert_eq!(r.channels(), 3);
        assert_eq!(r.semantics(), Semantics::Rgb);
        for (a, b) in t.data().iter().zip(r.data()) {
            assert_eq!(*a as f32, *b as f32);
        }
        // Byte-identical on rewrite.
        let path2 = dir.path().join("t2.btns");
        r.write_btns(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn btns_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.btns");
        ramp(2, 2, 1).write_btns(&path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(ImageTensor::read_btns(&path), Err(Error::Malformed { .. })));

        let short = &std::fs::read(&path).unwrap()[..10];
        std::fs::write(&path, short).unwrap();
        assert!(ImageTensor::read_btns(&path).is_err());
    }

    #[test]
    fn png_round_trip_is_within_half_a_step() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let t = ramp(4, 4, 3);
        t.write_png(&path).unwrap();
        let r = ImageTensor::read_png(&path, Semantics::Rgb, (0.0, 1.0)).unwrap();
        for (a, b) in t.data().iter().zip(r.data()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn png_rejects_unsupported_channel_count() {
        let dir = tempfile::tempdir().unwrap();
        let t = ImageTensor::zeros(2, 2, 5, Semantics::AfStack, (0.0, 1.0)).unwrap();
        assert!(t.write_png(dir.path().join("x.png")).is_err());
    }
}
