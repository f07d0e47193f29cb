//! Planar (channel-major) feature maps used inside the network.
//!
//! Unlike [`crate::tensor::ImageTensor`] (interleaved, for I/O), `Feat`
//! stores each channel as a contiguous H×W plane so convolution inner loops
//! run over unit-stride rows.

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Feat {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Feat {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Feat { c, h, w, data: vec![0.0; c * h * w] }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn plane(&self, ch: usize) -> &[f64] {
        let hw = self.hw();
        &self.data[ch * hw..(ch + 1) * hw]
    }

    pub fn plane_mut(&mut self, ch: usize) -> &mut [f64] {
        let hw = self.hw();
        &mut self.data[ch * hw..(ch + 1) * hw]
    }

    /// Interleaved HWC image → planar CHW features.
    pub fn from_image(img: &ImageTensor) -> Self {
        let (h, w, c) = (img.height(), img.width(), img.channels());
        let mut f = Feat::zeros(c, h, w);
        for ch in 0..c {
            let plane = &mut f.data[ch * h * w..(ch + 1) * h * w];
            for y in 0..h {
                for x in 0..w {
                    plane[y * w + x] = img.at(y, x, ch);
                }
            }
        }
        f
    }

    /// Planar CHW features → interleaved HWC image with the given tags.
    pub fn to_image(
        &self,
        semantics: crate::tensor::Semantics,
        range: (f64, f64),
    ) -> Result<ImageTensor> {
        let mut data = vec![0.0; self.c * self.h * self.w];
        for ch in 0..self.c {
            let plane = self.plane(ch);
            for y in 0..self.h {
                for x in 0..self.w {
                    data[(y * self.w + x) * self.c + ch] = plane[y * self.w + x];
                }
            }
        }
        ImageTensor::new(self.h, self.w, self.c, semantics, range, data)
    }

    /// Stacks two maps along the channel axis.
    pub fn concat(a: &Feat, b: &Feat) -> Result<Feat> {
        if a.h != b.h || a.w != b.w {
            return Err(Error::InvalidInput(format!(
                "concat shape mismatch: {}x{} vs {}x{}",
                a.h, a.w, b.h, b.w
            )));
        }
        let mut data = Vec::with_capacity((a.c + b.c) * a.h * a.w);
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Feat { c: a.c + b.c, h: a.h, w: a.w, data })
    }

    /// Splits channels back into two maps (inverse of [`Feat::concat`]).
    pub fn split(&self, c_first: usize) -> (Feat, Feat) {
        assert!(c_first <= self.c);
        let hw = self.hw();
        let a = Feat {
            c: c_first,
            h: self.h,
            w: self.w,
            data: self.data[..c_first * hw].to_vec(),
        };
        let b = Feat {
            c: self.c - c_first,
            h: self.h,
            w: self.w,
            data: self.data[c_first * hw..].to_vec(),
        };
        (a, b)
    }
}
