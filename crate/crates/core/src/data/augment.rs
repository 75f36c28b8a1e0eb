use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ImageTensor;
use crate::error::{Error, Result};

/// Random geometric augmentation. Ranges are closed intervals; reflections
/// fire with probability 1/2 when enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPolicy", into = "RawPolicy")]
pub struct AugmentPolicy {
    reflect_x: bool,
    reflect_y: bool,
    scale_range: [f32; 2],
    rotation_range_deg: [f32; 2],
    translate_range_px: [f32; 2],
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct RawPolicy {
    reflect_x: bool,
    reflect_y: bool,
    scale_range: [f32; 2],
    rotation_range_deg: [f32; 2],
    translate_range_px: [f32; 2],
}

impl Default for RawPolicy {
    fn default() -> Self {
        AugmentPolicy::standard().into()
    }
}

impl TryFrom<RawPolicy> for AugmentPolicy {
    type Error = Error;

    fn try_from(r: RawPolicy) -> Result<Self> {
        AugmentPolicy::new(
            r.reflect_x,
            r.reflect_y,
            r.scale_range,
            r.rotation_range_deg,
            r.translate_range_px,
        )
    }
}

impl From<AugmentPolicy> for RawPolicy {
    fn from(p: AugmentPolicy) -> Self {
        RawPolicy {
            reflect_x: p.reflect_x,
            reflect_y: p.reflect_y,
            scale_range: p.scale_range,
            rotation_range_deg: p.rotation_range_deg,
            translate_range_px: p.translate_range_px,
        }
    }
}

impl AugmentPolicy {
    pub fn new(
        reflect_x: bool,
        reflect_y: bool,
        scale_range: [f32; 2],
        rotation_range_deg: [f32; 2],
        translate_range_px: [f32; 2],
    ) -> Result<Self> {
        let ordered = |r: [f32; 2]| r[0].is_finite() && r[1].is_finite() && r[0] <= r[1];
        if !ordered(scale_range) || scale_range[0] <= 0.0 {
            return Err(Error::InvalidArgument(format!("bad scale range {scale_range:?}")));
        }
        if !ordered(rotation_range_deg) {
            return Err(Error::InvalidArgument(format!(
                "bad rotation range {rotation_range_deg:?}"
            )));
        }
        if !ordered(translate_range_px) {
            return Err(Error::InvalidArgument(format!(
                "bad translation range {translate_range_px:?}"
            )));
        }
        Ok(Self {
            reflect_x,
            reflect_y,
            scale_range,
            rotation_range_deg,
            translate_range_px,
        })
    }

    /// Reflection on both axes, scale in [0.75, 1.25], rotation in
    /// [-30°, 30°], translation in [-3, 3] px on both axes.
    pub fn standard() -> Self {
        Self::new(true, true, [0.75, 1.25], [-30.0, 30.0], [-3.0, 3.0]).expect("valid ranges")
    }

    pub fn identity() -> Self {
        Self::new(false, false, [1.0, 1.0], [0.0, 0.0], [0.0, 0.0]).expect("valid ranges")
    }

    pub fn scale_range(&self) -> [f32; 2] {
        self.scale_range
    }

    pub fn rotation_range_deg(&self) -> [f32; 2] {
        self.rotation_range_deg
    }

    pub fn translate_range_px(&self) -> [f32; 2] {
        self.translate_range_px
    }

    pub fn reflections(&self) -> (bool, bool) {
        (self.reflect_x, self.reflect_y)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentDraw {
        let uniform = |rng: &mut R, r: [f32; 2]| {
            if r[0] == r[1] {
                r[0]
            } else {
                rng.gen_range(r[0]..=r[1])
            }
        };
        let flip_x = self.reflect_x && rng.gen_bool(0.5);
        let flip_y = self.reflect_y && rng.gen_bool(0.5);
        let rotation_deg = uniform(rng, self.rotation_range_deg);
        let scale = uniform(rng, self.scale_range);
        let translate_x = uniform(rng, self.translate_range_px);
        let translate_y = uniform(rng, self.translate_range_px);
        AugmentDraw {
            flip_x,
            flip_y,
            rotation_deg,
            scale,
            translate_x,
            translate_y,
        }
    }
}

/// One concrete sample of an [`AugmentPolicy`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub flip_x: bool,
    pub flip_y: bool,
    pub rotation_deg: f32,
    pub scale: f32,
    pub translate_x: f32,
    pub translate_y: f32,
}

impl AugmentDraw {
    pub fn identity() -> Self {
        Self {
            flip_x: false,
            flip_y: false,
            rotation_deg: 0.0,
            scale: 1.0,
            translate_x: 0.0,
            translate_y: 0.0,
        }
    }

    /// Warp `img`. The forward map about the image center is
    /// translate ∘ scale ∘ rotate ∘ reflect; each output pixel is pulled
    /// through the inverse map with bilinear sampling, zero outside the frame.
    pub fn apply(&self, img: &ImageTensor) -> ImageTensor {
        let (h, w, ch) = img.shape();
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let theta = (self.rotation_deg as f64).to_radians();
        let (sin, cos) = theta.sin_cos();
        let inv_scale = 1.0 / self.scale as f64;
        let fx = if self.flip_x { -1.0 } else { 1.0 };
        let fy = if self.flip_y { -1.0 } else { 1.0 };

        let mut out = ImageTensor::zeros(h, w, ch);
        let mut px = vec![0f32; ch];
        for oy in 0..h {
            for ox in 0..w {
                let dx = (ox as f64 - cx - self.translate_x as f64) * inv_scale;
                let dy = (oy as f64 - cy - self.translate_y as f64) * inv_scale;
                // inverse rotation
                let rx = cos * dx + sin * dy;
                let ry = -sin * dx + cos * dy;
                let sx = snap(fx * rx + cx);
                let sy = snap(fy * ry + cy);
                sample_bilinear(img, sx, sy, &mut px);
                for (c, v) in px.iter().enumerate() {
                    out.set(oy, ox, c, *v);
                }
            }
        }
        out
    }
}

/// Sample a new transform from `policy` and apply it.
pub fn augment<R: Rng + ?Sized>(img: &ImageTensor, policy: &AugmentPolicy, rng: &mut R) -> ImageTensor {
    policy.sample(rng).apply(img)
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < 1e-6 {
        r
    } else {
        v
    }
}

fn sample_bilinear(img: &ImageTensor, x: f64, y: f64, out: &mut [f32]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let x0 = x.floor();
    let y0 = y.floor();
    let ax = (x - x0) as f32;
    let ay = (y - y0) as f32;
    let taps = [
        (x0, y0, (1.0 - ax) * (1.0 - ay)),
        (x0 + 1.0, y0, ax * (1.0 - ay)),
        (x0, y0 + 1.0, (1.0 - ax) * ay),
        (x0 + 1.0, y0 + 1.0, ax * ay),
    ];
    for (tx, ty, wgt) in taps {
        if wgt == 0.0 || tx < 0.0 || ty < 0.0 || tx >= img.width as f64 || ty >= img.height as f64 {
            continue;
        }
        let (tx, ty) = (tx as usize, ty as usize);
        for (c, o) in out.iter_mut().enumerate() {
            *o += wgt * img.get(ty, tx, c);
        }
    }
}
