//! Fused multi-backbone CNN for three-class chest X-ray classification.
//!
//! Pretrained SqueezeNet, ShuffleNet, MobileNet-v2 and EfficientNet-B0
//! backbones are fine-tuned, cut at a late activation, frozen, and run in
//! parallel on the same image. Their 7×7 activation maps are stacked along
//! the channel axis and classified by a small trainable head.

pub mod backbone;
pub mod bench;
pub mod checkpoint;
pub mod class;
pub mod config;
pub mod data;
pub mod error;
pub mod fusion;
pub mod gradcam;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod train;

pub use backbone::{
    finetune, load_pretrained, truncate_and_freeze, AnchorMap, Backbone, BackboneKind, BackboneSpec,
    FeatureMapGenerator, FinetunedBackbone, WeightSource,
};
pub use bench::{benchmark_inference, BenchConfig, BenchReport};
pub use class::{ClassLabel, NUM_CLASSES};
pub use config::RunConfig;
pub use data::{
    augment, load_and_preprocess, make_folds, scan_dataset, split_train_val, AugmentPolicy, DatasetIndex, FoldPlan,
    ImageTensor, Normalization,
};
pub use error::{Error, Result};
pub use fusion::{build_ensemble, weighted_cross_entropy, Classifier, EnsembleModel, HeadConfig, Prediction};
pub use gradcam::{grad_cam, render_overlay, GradCamMap};
pub use metrics::{confidence_interval, macro_average, per_class_metrics, sum_confusions, ConfusionMatrix3, MetricsReport};
pub use train::{evaluate_fold, run_cross_validation, train_ensemble, CVReport, FoldResult, Hyperparams, Variant};
