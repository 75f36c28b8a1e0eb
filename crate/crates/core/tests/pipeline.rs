//! Scan a PNG tree, split it, run one cross-validation fold end to end and
//! reload the saved checkpoint.

use std::path::Path;

use image::{Rgb, RgbImage};
use lungfuse_core::checkpoint::load_model;
use lungfuse_core::data::{ClassDirAliases, FileSource};
use lungfuse_core::train::CvConfig;
use lungfuse_core::{
    evaluate_fold, make_folds, run_cross_validation, scan_dataset, Hyperparams, Normalization,
    Variant, WeightSource,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DIRS: [&str; 3] = ["COVID", "NORMAL", "Viral Pneumonia"];

fn write_dataset(root: &Path, per_class: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (c, dir) in DIRS.iter().enumerate() {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).unwrap();
        for i in 0..per_class {
            let img = RgbImage::from_fn(32, 32, |_, _| {
                let mut px = [40u8; 3];
                px[c] = 200;
                Rgb(px.map(|v| v.saturating_add(rng.gen_range(0..30))))
            });
            img.save(d.join(format!("{dir}-{i}.png"))).unwrap();
        }
    }
}

#[test]
fn one_fold_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("data");
    write_dataset(&root, 10);

    let index = scan_dataset(&root, &ClassDirAliases::default()).unwrap();
    assert_eq!(index.entries.len(), 30);
    let plan = make_folds(&index, 5, 3).unwrap();
    let source = FileSource::new(index, Normalization::imagenet());

    // small batches keep backbone fine-tuning within a few GB of memory
    let quick = |h: Hyperparams| Hyperparams {
        max_epochs: 1,
        batch_size: 4,
        augment: false,
        ..h
    };
    let cfg = CvConfig {
        variant: Variant::Cvdnet1,
        seed: 5,
        finetune: quick(Hyperparams::single_model()),
        ensemble: quick(Hyperparams::ensemble()),
        weights: WeightSource {
            dir: None,
            allow_random_init: true,
            seed: 5,
        },
        only_folds: Some(vec![2]),
        ..CvConfig::default()
    };
    let ckpt_root = tmp.path().join("checkpoints");
    let report = run_cross_validation(&cfg, &source, &plan, Some(&ckpt_root)).unwrap();

    assert!(report.failures.is_empty(), "{:?}", report.failures);
    assert_eq!(report.per_fold.len(), 1);
    assert!(!report.is_complete());
    let fold = &report.per_fold[0];
    assert_eq!(fold.confusion.total(), plan.folds[1].len() as u64);
    assert_eq!(report.branch_digests["fold2"].len(), 2);

    let dir = fold.checkpoint.as_ref().expect("checkpoint written");
    let (model, manifest) = load_model(dir).unwrap();
    assert_eq!(manifest.output_shape, Some((7, 7, 1792)));
    let again = evaluate_fold(model.classifier(), &source, fold.fold_id, &plan.folds[1]).unwrap();
    assert_eq!(again.confusion, fold.confusion);
}
