//! Deterministic parametric domain transforms.
//!
//! Stand-ins for learned style transfer: each transform is a fixed function of
//! `(seed, transform_id, parameters)` applied to a sample laid out as
//! `channels × height × width` in row-major order.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use super::dataset::SampleShape;
use crate::error::{DiscoError, Result};
use crate::rng;

pub const TRANSFORM_NAMES: &[&str] = &[
    "identity",
    "channel_permute",
    "hue_rotate",
    "blur",
    "invert",
    "block_shuffle",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransformKind {
    Identity,
    ChannelPermute,
    HueRotate,
    GaussianBlur,
    ContrastInvert,
    BlockShuffle,
}

impl TransformKind {
    pub fn from_name(name: &str) -> Result<Self> {
        Ok(match name {
            "identity" | "real" => TransformKind::Identity,
            "channel_permute" => TransformKind::ChannelPermute,
            "hue_rotate" => TransformKind::HueRotate,
            "blur" | "gaussian_blur" => TransformKind::GaussianBlur,
            "invert" | "contrast_invert" => TransformKind::ContrastInvert,
            "block_shuffle" => TransformKind::BlockShuffle,
            other => return Err(DiscoError::UnknownTransform(other.to_string())),
        })
    }

    fn default_parameters(self) -> BTreeMap<String, f64> {
        let mut p = BTreeMap::new();
        match self {
            TransformKind::HueRotate => {
                p.insert("angle_deg".into(), 120.0);
            }
            TransformKind::GaussianBlur => {
                p.insert("sigma".into(), 1.0);
            }
            TransformKind::BlockShuffle => {
                p.insert("block".into(), 2.0);
            }
            _ => {}
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DomainTransform {
    pub transform_id: String,
    pub kind: TransformKind,
    pub parameters: BTreeMap<String, f64>,
    pub seed: u64,
}

impl DomainTransform {
    pub fn new(transform_id: &str, seed: u64) -> Result<Self> {
        let kind = TransformKind::from_name(transform_id)?;
        Ok(DomainTransform {
            transform_id: transform_id.to_string(),
            kind,
            parameters: kind.default_parameters(),
            seed,
        })
    }

    pub fn with_parameter(mut self, name: &str, value: f64) -> Self {
        self.parameters.insert(name.to_string(), value);
        self
    }

    fn param(&self, name: &str) -> f64 {
        self.parameters.get(name).copied().unwrap_or(0.0)
    }

    fn fail(&self, message: impl Into<String>) -> DiscoError {
        DiscoError::Transform {
            transform: self.transform_id.clone(),
            message: message.into(),
        }
    }

    pub fn apply(&self, sample: &[f64], shape: SampleShape) -> Result<Vec<f64>> {
        if sample.len() != shape.len() {
            return Err(DiscoError::DimensionMismatch {
                expected: shape.len(),
                actual: sample.len(),
            });
        }
        match self.kind {
            TransformKind::Identity => Ok(sample.to_vec()),
            TransformKind::ChannelPermute => Ok(self.channel_permute(sample, shape)),
            TransformKind::HueRotate => self.hue_rotate(sample, shape),
            TransformKind::GaussianBlur => self.blur(sample, shape),
            TransformKind::ContrastInvert => Ok(contrast_invert(sample, shape)),
            TransformKind::BlockShuffle => self.block_shuffle(sample, shape),
        }
    }

    fn permutation(&self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        let mut r = rng::keyed(self.seed, &self.transform_id);
        // Resample until the permutation moves something; a no-op style
        // would silently collapse the domain shift.
        if n > 1 {
            loop {
                perm.shuffle(&mut r);
                if perm.iter().enumerate().any(|(i, &p)| i != p) {
                    break;
                }
            }
        }
        perm
    }

    fn channel_permute(&self, sample: &[f64], shape: SampleShape) -> Vec<f64> {
        let plane = shape.height * shape.width;
        let perm = self.permutation(shape.channels);
        let mut out = vec![0.0; sample.len()];
        for (dst, &src) in perm.iter().enumerate() {
            out[dst * plane..(dst + 1) * plane]
                .copy_from_slice(&sample[src * plane..(src + 1) * plane]);
        }
        out
    }

    fn hue_rotate(&self, sample: &[f64], shape: SampleShape) -> Result<Vec<f64>> {
        if shape.channels != 3 {
            return Err(self.fail(format!("needs 3 channels, sample has {}", shape.channels)));
        }
        // Rotation about the gray axis (1,1,1)/sqrt(3).
        let theta = self.param("angle_deg").to_radians();
        let (s, c) = theta.sin_cos();
        let k = 1.0 / 3.0;
        let sq = (1.0f64 / 3.0).sqrt();
        let a = c + (1.0 - c) * k;
        let b = k * (1.0 - c) - sq * s;
        let d = k * (1.0 - c) + sq * s;
        let m = [[a, b, d], [d, a, b], [b, d, a]];
        let plane = shape.height * shape.width;
        let mut out = vec![0.0; sample.len()];
        for i in 0..plane {
            let px = [sample[i], sample[plane + i], sample[2 * plane + i]];
            for (ch, row) in m.iter().enumerate() {
                out[ch * plane + i] = row[0] * px[0] + row[1] * px[1] + row[2] * px[2];
            }
        }
        Ok(out)
    }

    fn blur(&self, sample: &[f64], shape: SampleShape) -> Result<Vec<f64>> {
        let sigma = self.param("sigma");
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(self.fail("sigma must be positive"));
        }
        let radius = (2.0 * sigma).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|x| (-(x as f64).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        let norm: f64 = kernel.iter().sum();
        let kernel: Vec<f64> = kernel.iter().map(|v| v / norm).collect();
        let (h, w) = (shape.height as isize, shape.width as isize);
        let plane = (h * w) as usize;
        let mut out = vec![0.0; sample.len()];
        let mut tmp = vec![0.0; plane];
        for ch in 0..shape.channels {
            let src = &sample[ch * plane..(ch + 1) * plane];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, kv) in kernel.iter().enumerate() {
                        let xx = (x + k as isize - radius).clamp(0, w - 1);
                        acc += kv * src[(y * w + xx) as usize];
                    }
                    tmp[(y * w + x) as usize] = acc;
                }
            }
            let dst = &mut out[ch * plane..(ch + 1) * plane];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (k, kv) in kernel.iter().enumerate() {
                        let yy = (y + k as isize - radius).clamp(0, h - 1);
                        acc += kv * tmp[(yy * w + x) as usize];
                    }
                    dst[(y * w + x) as usize] = acc;
                }
            }
        }
        Ok(out)
    }

    fn block_shuffle(&self, sample: &[f64], shape: SampleShape) -> Result<Vec<f64>> {
        let block = self.param("block") as usize;
        if block == 0 {
            return Err(self.fail("block size must be positive"));
        }
        let bh = block.min(shape.height);
        let bw = block.min(shape.width);
        if !shape.height.is_multiple_of(bh) || !shape.width.is_multiple_of(bw) {
            return Err(self.fail(format!(
                "block {bh}x{bw} does not tile a {}x{} plane",
                shape.height, shape.width
            )));
        }
        let (rows, cols) = (shape.height / bh, shape.width / bw);
        let perm = self.permutation(rows * cols);
        let plane = shape.height * shape.width;
        let mut out = vec![0.0; sample.len()];
        for ch in 0..shape.channels {
            let src = &sample[ch * plane..(ch + 1) * plane];
            let dst = &mut out[ch * plane..(ch + 1) * plane];
            for (dst_block, &src_block) in perm.iter().enumerate() {
                let (dr, dc) = (dst_block / cols, dst_block % cols);
                let (sr, sc) = (src_block / cols, src_block % cols);
                for y in 0..bh {
                    for x in 0..bw {
                        let d = (dr * bh + y) * shape.width + dc * bw + x;
                        let s = (sr * bh + y) * shape.width + sc * bw + x;
                        dst[d] = src[s];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Reflect each channel about its own mean.
fn contrast_invert(sample: &[f64], shape: SampleShape) -> Vec<f64> {
    let plane = shape.height * shape.width;
    let mut out = Vec::with_capacity(sample.len());
    for ch in sample.chunks(plane) {
        let mean = ch.iter().sum::<f64>() / plane as f64;
        out.extend(ch.iter().map(|v| 2.0 * mean - v));
    }
    out
}
