//! Fixtures shared by the criterion benches.

use candle_core::{DType, Device, Tensor};
use lungfuse_core::backbone::{BackboneSpec, FinetunedBackbone};
use lungfuse_core::{build_ensemble, truncate_and_freeze, AnchorMap, Backbone, EnsembleModel, HeadConfig, Result, Variant};

/// An ensemble of randomly initialized branches. Latency does not depend
/// on weight values, so this stands in for a trained model.
pub fn random_ensemble(variant: Variant, seed: u64) -> Result<EnsembleModel> {
    let anchors = AnchorMap::default();
    let generators = variant
        .backbones()
        .into_iter()
        .map(|kind| {
            let b = Backbone::random(BackboneSpec::new(kind), 3, seed)?;
            truncate_and_freeze(&FinetunedBackbone::untrained(b), &anchors)
        })
        .collect::<Result<Vec<_>>>()?;
    build_ensemble(generators, HeadConfig::default(), seed)
}

/// One normalized-looking 224×224 RGB input.
pub fn random_image(seed: u64) -> Result<Tensor> {
    let dev = Device::Cpu;
    dev.set_seed(seed)?;
    Ok(Tensor::randn(0f32, 1.0, (1, 3, 224, 224), &dev)?.to_dtype(DType::F32)?)
}
