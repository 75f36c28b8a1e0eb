use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::GradCamMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Colormap {
    /// Blue (cool, low) through cyan, yellow to red (warm, high).
    #[default]
    Jet,
    /// Black through red and yellow to white.
    Hot,
}

impl std::str::FromStr for Colormap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "jet" => Ok(Colormap::Jet),
            "hot" => Ok(Colormap::Hot),
            _ => Err(Error::InvalidArgument(format!("unknown colormap {s:?}; expected jet or hot"))),
        }
    }
}

impl Colormap {
    /// RGB in [0, 1] for `v` in [0, 1].
    pub fn color(self, v: f64) -> [f64; 3] {
        let v = v.clamp(0.0, 1.0);
        match self {
            Colormap::Jet => {
                let ramp = |x: f64| (1.5 - (4.0 * v - x).abs()).clamp(0.0, 1.0);
                [ramp(3.0), ramp(2.0), ramp(1.0)]
            }
            Colormap::Hot => [
                (3.0 * v).min(1.0),
                (3.0 * v - 1.0).clamp(0.0, 1.0),
                (3.0 * v - 2.0).clamp(0.0, 1.0),
            ],
        }
    }
}

/// Blend the colored map over `base`. Each pixel's blend weight is
/// `alpha · map`, so unimportant regions keep the original image.
pub fn render_overlay(map: &GradCamMap, base: &RgbImage, colormap: Colormap, alpha: f64) -> Result<RgbImage> {
    let (w, h) = base.dimensions();
    if (w as usize, h as usize) != (map.size, map.size) || map.upsampled.len() != map.size * map.size {
        return Err(Error::Shape(format!(
            "heatmap is {0}x{0} but the image is {w}x{h}",
            map.size
        )));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut out = RgbImage::new(w, h);
    for (x, y, px) in base.enumerate_pixels() {
        let m = map.upsampled[y as usize * map.size + x as usize];
        let c = colormap.color(m);
        let a = alpha * m;
        let mut rgb = [0u8; 3];
        for k in 0..3 {
            let v = (1.0 - a) * px[k] as f64 + a * 255.0 * c[k];
            rgb[k] = v.round().clamp(0.0, 255.0) as u8;
        }
        out.put_pixel(x, y, Rgb(rgb));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::class::ClassLabel;

    fn base() -> RgbImage {
        RgbImage::from_fn(8, 8, |x, y| Rgb([(x * 30) as u8, (y * 30) as u8, 100]))
    }

    fn map(raw: Vec<f64>) -> GradCamMap {
        GradCamMap::from_raw(raw, 2, 2, 8, ClassLabel::Covid19, "relu_2")
    }

    #[test]
    fn zero_map_keeps_base() {
        let b = base();
        assert_eq!(render_overlay(&map(vec![0.0; 4]), &b, Colormap::Jet, 0.4).unwrap(), b);
    }

    #[test]
    fn full_map_tints_uniformly() {
        let b = base();
        let out = render_overlay(&map(vec![1.0; 4]), &b, Colormap::Jet, 0.4).unwrap();
        let warm = Colormap::Jet.color(1.0);
        assert!(warm[0] > warm[2]);
        for (p, q) in b.pixels().zip(out.pixels()) {
            for k in 0..3 {
                let expected = (0.6 * p[k] as f64 + 0.4 * 255.0 * warm[k]).round() as u8;
                assert_eq!(q[k], expected);
            }
        }
    }

    #[test]
    fn size_mismatch() {
        let small = RgbImage::new(4, 4);
        assert!(render_overlay(&map(vec![1.0; 4]), &small, Colormap::Jet, 0.4).is_err());
    }

    #[test]
    fn jet_endpoints() {
        assert_eq!(Colormap::Jet.color(0.0), [0.0, 0.0, 0.5]);
        assert_eq!(Colormap::Jet.color(1.0), [0.5, 0.0, 0.0]);
    }
}
