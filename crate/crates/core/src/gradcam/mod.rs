//! Gradient-weighted class activation maps and heatmap overlays.

mod render;

pub use render::{render_overlay, Colormap};

use candle_core::{DType, IndexOp, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::class::ClassLabel;
use crate::data::{batch_tensor, ImageTensor, INPUT_SIZE};
use crate::error::{Error, Result};
use crate::fusion::{predictions_from_logits, Classifier, Prediction};

/// What is differentiated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamScore {
    /// Pre-softmax class score.
    #[default]
    Logit,
    /// Softmax probability of the class.
    Probability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCamMap {
    pub height: usize,
    pub width: usize,
    /// Rectified weighted channel sum, row-major `height × width`.
    pub raw: Vec<f64>,
    pub size: usize,
    /// Bilinearly upsampled to `size × size`, min-max scaled to [0, 1].
    #[serde(skip)]
    pub upsampled: Vec<f64>,
    pub target_class: ClassLabel,
    pub layer: String,
    pub channel_weights: Vec<f64>,
}

impl GradCamMap {
    pub fn from_raw(raw: Vec<f64>, height: usize, width: usize, size: usize, target: ClassLabel, layer: &str) -> Self {
        let upsampled = normalize_min_max(&upsample_bilinear(&raw, height, width, size, size));
        Self {
            height,
            width,
            raw,
            size,
            upsampled,
            target_class: target,
            layer: layer.to_string(),
            channel_weights: Vec::new(),
        }
    }

    pub fn raw_rows(&self) -> Vec<Vec<f64>> {
        self.raw.chunks(self.width).map(|r| r.to_vec()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.raw.iter().all(|&v| v == 0.0)
    }
}

/// Core computation on a captured `1×C×h×w` activation: channel weights are
/// the spatial means of `∂score/∂A`, and the map is `ReLU(Σ_k w_k·A_k)`.
/// Returns the `h×w` map and the channel weights.
pub fn grad_cam_on<F>(activation: &Tensor, score: F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let (n, c, h, w) = activation.dims4()?;
    if n != 1 {
        return Err(Error::Shape(format!("Grad-CAM takes one image, got a batch of {n}")));
    }
    let var = Var::from_tensor(&activation.detach())?;
    let s = score(var.as_tensor())?;
    let grads = s.backward()?;
    let g = match grads.get(var.as_tensor()) {
        Some(g) => g.to_dtype(DType::F64)?.reshape((c, h * w))?.to_vec2::<f64>()?,
        None => vec![vec![0.0; h * w]; c],
    };
    let a = activation.to_dtype(DType::F64)?.reshape((c, h * w))?.to_vec2::<f64>()?;
    let weights: Vec<f64> = g.iter().map(|row| row.iter().sum::<f64>() / (h * w) as f64).collect();
    let map = (0..h * w)
        .map(|p| {
            let v: f64 = (0..c).map(|k| weights[k] * a[k][p]).sum();
            v.max(0.0)
        })
        .collect();
    Ok((map, weights))
}

/// Grad-CAM of `target` for one preprocessed image at `layer` (the model's
/// default layer when `None`).
pub fn grad_cam(
    model: &dyn Classifier,
    img: &ImageTensor,
    target: ClassLabel,
    layer: Option<&str>,
    mode: CamScore,
) -> Result<(GradCamMap, Prediction)> {
    let layer = layer.map(str::to_string).unwrap_or_else(|| model.default_cam_layer());
    let names = model.layer_names();
    if !names.contains(&layer) {
        return Err(Error::UnknownLayer {
            layer,
            candidates: names.join(", "),
        });
    }
    let x = batch_tensor(std::slice::from_ref(img), DType::F32, &candle_core::Device::Cpu)?;
    let activation = model.forward_until(&x, &layer)?;
    let (_, _, h, w) = activation.dims4()?;
    let t = target.index();
    let (raw, weights) = grad_cam_on(&activation, |a| {
        let logits = model.forward_from(a, &layer)?;
        Ok(match mode {
            CamScore::Logit => logits.i((0, t))?,
            CamScore::Probability => candle_nn::ops::softmax(&logits, 1)?.i((0, t))?,
        })
    })?;
    let prediction = predictions_from_logits(&model.forward_from(&activation, &layer)?)?.remove(0);
    let mut map = GradCamMap::from_raw(raw, h, w, INPUT_SIZE, target, &layer);
    map.channel_weights = weights;
    Ok((map, prediction))
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn upsample_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let coord = |i: usize, n_in: usize, n_out: usize| {
        let x = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
        let lo = x.floor() as usize;
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, x - lo as f64)
    };
    let mut out = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let (y0, y1, fy) = coord(i, h, out_h);
        for j in 0..out_w {
            let (x0, x1, fx) = coord(j, w, out_w);
            let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
            let bottom = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Scale to [0, 1]. All-zero input stays zero; any other constant map
/// becomes all ones.
pub fn normalize_min_max(values: &[f64]) -> Vec<f64> {
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if values.is_empty() || max <= 0.0 && min >= 0.0 {
        return vec![0.0; values.len()];
    }
    let range = max - min;
    if range <= f64::EPSILON * max.abs() {
        return vec![1.0; values.len()];
    }
    values.iter().map(|v| (v - min) / range).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradCamSidecar {
    pub image: String,
    pub target_class: ClassLabel,
    pub layer: String,
    pub score: CamScore,
    pub raw: Vec<Vec<f64>>,
    pub channel_weights: Vec<f64>,
    pub prediction: Prediction,
}

/// `<stem>_gradcam_<class>.png`
pub fn overlay_file_name(stem: &str, class: ClassLabel) -> String {
    format!("{stem}_gradcam_{}.png", class.slug())
}
