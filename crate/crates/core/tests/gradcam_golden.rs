//! Golden overlay for a checkerboard map. Regenerate the fixture with
//! `LUNGFUSE_BLESS=1 cargo test -p lungfuse-core --test gradcam_golden`.

use std::path::PathBuf;

use image::{Rgb, RgbImage};
use lungfuse_core::gradcam::{render_overlay, Colormap, GradCamMap};
use lungfuse_core::ClassLabel;

fn checkerboard_overlay() -> RgbImage {
    let raw: Vec<f64> = (0..49).map(|i| ((i / 7 + i % 7) % 2) as f64).collect();
    let map = GradCamMap::from_raw(raw, 7, 7, 224, ClassLabel::Covid19, "relu_2");
    let base = RgbImage::from_pixel(224, 224, Rgb([128, 128, 128]));
    render_overlay(&map, &base, Colormap::Jet, 0.4).unwrap()
}

#[test]
fn checkerboard_matches_golden() {
    let img = checkerboard_overlay();

    // block centres alternate between warm tint and (nearly) untouched gray
    for by in 0..7u32 {
        for bx in 0..7u32 {
            let px = img.get_pixel(bx * 32 + 16, by * 32 + 16).0;
            if (bx + by) % 2 == 1 {
                assert!(px[0] >= px[2] + 40, "block ({bx},{by}) not tinted: {px:?}");
            } else {
                assert!(px.iter().all(|v| v.abs_diff(128) <= 3), "block ({bx},{by}) tinted: {px:?}");
            }
        }
    }

    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/checkerboard_overlay_jet.png");
    if std::env::var_os("LUNGFUSE_BLESS").is_some() {
        img.save(&path).unwrap();
    }
    let golden = image::open(&path).expect("golden fixture missing").to_rgb8();
    assert_eq!(golden.dimensions(), img.dimensions());
    let worst = golden
        .pixels()
        .zip(img.pixels())
        .flat_map(|(a, b)| a.0.into_iter().zip(b.0).map(|(x, y)| x.abs_diff(y)))
        .max()
        .unwrap();
    assert!(worst <= 1, "overlay differs from golden by {worst} levels");
}
