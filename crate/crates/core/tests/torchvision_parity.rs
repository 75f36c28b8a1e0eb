//! Cross-check against torchvision. Generate the reference directory with
//!
//!     python scripts/export_torchvision_weights.py <dir> --random-init
//!
//! and point `LUNGFUSE_TORCHVISION_REFERENCE` at it. Without the variable the
//! test only reports that it was skipped.

use std::path::PathBuf;

use candle_core::{DType, Device};
use lungfuse_core::nn::Ctx;
use lungfuse_core::{load_pretrained, BackboneKind, WeightSource};

fn reference_dir() -> Option<PathBuf> {
    std::env::var_os("LUNGFUSE_TORCHVISION_REFERENCE").map(PathBuf::from)
}

#[test]
fn logits_match_torchvision() {
    let Some(dir) = reference_dir() else {
        eprintln!("skipped: LUNGFUSE_TORCHVISION_REFERENCE not set");
        return;
    };
    let input = candle_core::safetensors::load(dir.join("reference_input.safetensors"), &Device::Cpu).unwrap();
    let x = input["input"].to_dtype(DType::F32).unwrap();
    let src = WeightSource {
        dir: Some(dir.clone()),
        allow_random_init: false,
        seed: 0,
    };
    for kind in BackboneKind::ALL {
        let stem = kind.weight_file().trim_end_matches(".safetensors").to_string();
        let text = std::fs::read_to_string(dir.join(format!("{stem}.reference.json"))).unwrap();
        let json: serde_json::Value = serde_json::from_str(&text).unwrap();
        let expected: Vec<f32> = json["logits"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_f64().unwrap() as f32)
            .collect();

        let model = load_pretrained(kind.name(), &src).unwrap();
        let got: Vec<f32> = model
            .net()
            .forward(&x, &Ctx::eval())
            .and_then(|t| Ok(t.flatten_all()?.to_vec1::<f32>()?))
            .unwrap();
        assert_eq!(got.len(), expected.len(), "{kind}");
        let scale = expected.iter().fold(0f32, |m, v| m.max(v.abs())).max(1.0);
        let worst = got.iter().zip(&expected).fold(0f32, |m, (a, b)| m.max((a - b).abs()));
        assert!(worst <= 1e-3 * scale, "{kind}: max |diff| {worst} (scale {scale})");
        eprintln!("{kind}: max |diff| {worst:.2e} over {} logits", got.len());
    }
}
