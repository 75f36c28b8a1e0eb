use std::path::Path;

use image::imageops::FilterType;
use image::{DynamicImage, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const INPUT_SIZE: usize = 224;

/// Per-channel affine normalization applied after scaling pixels to [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Normalization {
    pub scheme: String,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    /// Statistics of the ImageNet training set, which every supported
    /// backbone was pretrained with.
    pub fn imagenet() -> Self {
        Self {
            scheme: "imagenet-mean-std".into(),
            mean: [0.485, 0.456, 0.406],
            std: [0.229, 0.224, 0.225],
        }
    }

    pub fn identity() -> Self {
        Self {
            scheme: "unit-range".into(),
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    pub fn apply(&self, channel: usize, unit: f32) -> f32 {
        (unit - self.mean[channel]) / self.std[channel]
    }

    pub fn invert(&self, channel: usize, value: f32) -> f32 {
        value * self.std[channel] + self.mean[channel]
    }
}

impl Default for Normalization {
    fn default() -> Self {
        Self::imagenet()
    }
}

/// Height × width × channel image, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Vec<f32>,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageTensor {
    pub fn new(data: Vec<f32>, height: usize, width: usize, channels: usize) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            data,
            height,
            width,
            channels,
        })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self {
            data: vec![0.0; height * width * channels],
            height,
            width,
            channels,
        }
    }

    pub fn filled(height: usize, width: usize, value: [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&value);
        }
        Self {
            data,
            height,
            width,
            channels: 3,
        }
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel-major copy, the layout convolution kernels consume.
    pub fn to_chw(&self) -> Vec<f32> {
        let plane = self.height * self.width;
        let mut out = vec![0.0; plane * self.channels];
        for (i, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, v) in px.iter().enumerate() {
                out[c * plane + i] = *v;
            }
        }
        out
    }

    /// Undo `norm` and quantize to 8-bit RGB.
    pub fn to_rgb8(&self, norm: &Normalization) -> RgbImage {
        RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let mut px = [0u8; 3];
            for (c, p) in px.iter_mut().enumerate() {
                let v = norm.invert(c, self.get(y as usize, x as usize, c.min(self.channels - 1)));
                *p = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
            image::Rgb(px)
        })
    }
}

/// Decode, resize to `target`×`target` and normalize one image file.
pub fn load_and_preprocess(path: &Path, target: usize, norm: &Normalization) -> Result<ImageTensor> {
    let img = image::ImageReader::open(path)
        .map_err(|e| Error::image(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::image(path, e))?
        .decode()
        .map_err(|e| Error::image(path, e))?;
    Ok(preprocess_image(&img, target, norm))
}

/// Grayscale sources are replicated across the three channels. Resizing is
/// bilinear with an anti-aliasing footprint when downscaling.
pub fn preprocess_image(img: &DynamicImage, target: usize, norm: &Normalization) -> ImageTensor {
    let rgb = img.to_rgb8();
    let rgb = if rgb.dimensions() == (target as u32, target as u32) {
        rgb
    } else {
        image::imageops::resize(&rgb, target as u32, target as u32, FilterType::Triangle)
    };
    let mut data = Vec::with_capacity(target * target * 3);
    for px in rgb.pixels() {
        for c in 0..3 {
            data.push(norm.apply(c, px.0[c] as f32 / 255.0));
        }
    }
    ImageTensor {
        data,
        height: target,
        width: target,
        channels: 3,
    }
}
