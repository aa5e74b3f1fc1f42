//! Synthetic optical flow: frame pairs with exact ground truth, a small
//! correlation decoder, metrics, and file formats.

mod data;
mod decoder;
mod io;
mod metrics;

pub use data::{gen_dataset, gen_pair, MotionConfig};
pub use decoder::{
    decode_flow, decoder_flops, decoder_shapes, rough_decode, soft_argmax, DecoderConfig, DECODER_PREFIX,
};
pub use io::{decode_flo, encode_flo, read_flo, read_ppm, write_flo, write_ppm};
pub use metrics::{aepe, f1_all, flow_loss, OutlierRule};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-pixel displacement `[H, W, 2]` as (u, v) in pixels, x right and y
/// down, with a validity mask.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    pub uv: Tensor<f32>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn new(uv: Tensor<f32>) -> Self {
        assert!(uv.rank() == 3 && uv.shape()[2] == 2, "flow must be [H, W, 2], got {:?}", uv.shape());
        let n = uv.shape()[0] * uv.shape()[1];
        Self { uv, valid: vec![true; n] }
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        Self::new(Tensor::zeros([h, w, 2]))
    }

    pub fn height(&self) -> usize {
        self.uv.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.uv.shape()[1]
    }

    pub fn at(&self, y: usize, x: usize) -> (f32, f32) {
        let i = (y * self.width() + x) * 2;
        (self.uv.data()[i], self.uv.data()[i + 1])
    }

    /// Sample `index` of a network output `[N, 2, H, W]`.
    pub fn from_planes<T: crate::Scalar>(t: &Tensor<T>, index: usize) -> Self {
        let s = t.shape();
        assert!(s.len() == 4 && s[1] == 2 && index < s[0], "flow planes must be [N, 2, H, W], got {s:?}");
        let (h, w) = (s[2], s[3]);
        let plane = &t.data()[index * 2 * h * w..(index + 1) * 2 * h * w];
        let mut uv = Vec::with_capacity(2 * h * w);
        for p in 0..h * w {
            uv.push(plane[p].to_f64_lossy() as f32);
            uv.push(plane[h * w + p].to_f64_lossy() as f32);
        }
        Self::new(Tensor::new([h, w, 2], uv))
    }

    /// Planar `[2, H, W]` copy.
    pub fn to_planes(&self) -> Tensor<f32> {
        let (h, w) = (self.height(), self.width());
        let d = self.uv.data();
        Tensor::from_fn([2, h, w], |i| {
            let (c, p) = (i / (h * w), i % (h * w));
            d[p * 2 + c]
        })
    }

    pub(crate) fn check_same_shape(&self, other: &FlowField) -> Result<()> {
        if self.uv.shape() != other.uv.shape() {
            return Err(Error::Shape(format!(
                "flow shapes {:?} and {:?} differ",
                self.uv.shape(),
                other.uv.shape()
            )));
        }
        Ok(())
    }
}

/// Two frames `[3, H, W]` in [-1, 1] and the flow that maps the first onto
/// the second.
#[derive(Clone, Debug, PartialEq)]
pub struct FramePair {
    pub frame1: Tensor<f32>,
    pub frame2: Tensor<f32>,
    pub gt: FlowField,
    pub seed: u64,
}
