use serde::{Deserialize, Serialize};

use super::NetError;
use crate::imagecore::RgbImage;

/// Height × width × channels activations, channel-minor (HWC) row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Per-pixel class scores (logits or probabilities).
pub type ScoreMap = Tensor;

impl Tensor {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, NetError> {
        if data.len() != height * width * channels {
            return Err(NetError::ShapeMismatch {
                expected: height * width * channels,
                actual: data.len(),
            });
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    #[inline]
    pub fn pixel_mut(&mut self, x: usize, y: usize) -> &mut [f64] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// Scales pixels to [0, 1] and subtracts a per-channel mean.
    pub fn from_rgb(image: &RgbImage, mean: [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(image.len() * 3);
        for px in image.data() {
            for c in 0..3 {
                data.push(px[c] as f64 / 255.0 - mean[c]);
            }
        }
        Self {
            height: image.height(),
            width: image.width(),
            channels: 3,
            data,
        }
    }

    /// Stacks `self` channels before `other` channels at every pixel.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor, NetError> {
        if self.height != other.height || self.width != other.width {
            return Err(NetError::DimensionMismatch {
                expected: (self.height, self.width),
                actual: (other.height, other.width),
            });
        }
        let channels = self.channels + other.channels;
        let mut data = Vec::with_capacity(self.pixels() * channels);
        for (a, b) in self
            .data
            .chunks_exact(self.channels)
            .zip(other.data.chunks_exact(other.channels))
        {
            data.extend_from_slice(a);
            data.extend_from_slice(b);
        }
        Ok(Tensor {
            height: self.height,
            width: self.width,
            channels,
            data,
        })
    }

    /// Inverse of [`concat_channels`](Self::concat_channels): the first `left` channels and the rest.
    pub fn split_channels(&self, left: usize) -> (Tensor, Tensor) {
        assert!(left <= self.channels);
        let right = self.channels - left;
        let mut a = Vec::with_capacity(self.pixels() * left);
        let mut b = Vec::with_capacity(self.pixels() * right);
        for px in self.data.chunks_exact(self.channels) {
            a.extend_from_slice(&px[..left]);
            b.extend_from_slice(&px[left..]);
        }
        (
            Tensor {
                height: self.height,
                width: self.width,
                channels: left,
                data: a,
            },
            Tensor {
                height: self.height,
                width: self.width,
                channels: right,
                data: b,
            },
        )
    }

    /// Numerically stable per-pixel softmax over channels.
    pub fn softmax(&self) -> Tensor {
        let mut out = self.clone();
        for px in out.data.chunks_exact_mut(self.channels) {
            let max = px.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in px.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in px.iter_mut() {
                *v /= sum;
            }
        }
        out
    }

    /// One channel as a row-major plane.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        assert!(c < self.channels);
        self.data
            .chunks_exact(self.channels)
            .map(|px| px[c])
            .collect()
    }

    /// Crops a window of whole pixels.
    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Tensor {
        assert!(left + width <= self.width && top + height <= self.height);
        let mut data = Vec::with_capacity(width * height * self.channels);
        for y in top..top + height {
            let start = (y * self.width + left) * self.channels;
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Tensor {
            height,
            width,
            channels: self.channels,
            data,
        }
    }
}
