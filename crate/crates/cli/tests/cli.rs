use std::path::Path;
use std::process::{Command, Output};

fn lungfuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lungfuse"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn lungfuse")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_dataset(root: &Path, per_class: usize) {
    for (c, dir) in ["COVID", "NORMAL", "Viral Pneumonia"].into_iter().enumerate() {
        let d = root.join(dir);
        std::fs::create_dir_all(&d).unwrap();
        for i in 0..per_class {
            let img = image::RgbImage::from_fn(16, 16, |x, y| {
                let v = ((x * 7 + y * 13 + i as u32 * 31 + c as u32 * 50) % 256) as u8;
                image::Rgb([v, v, v])
            });
            img.save(d.join(format!("{dir}-{i}.png"))).unwrap();
        }
    }
}

#[test]
fn scan_and_folds_write_run_files() {
    let data = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    write_dataset(data.path(), 6);
    let root = data.path().to_str().unwrap();
    let out_dir = out.path().to_str().unwrap();
    let base = ["--root", root, "--out", out_dir, "--run-id", "t"];

    let scan = lungfuse(&[&base[..], &["scan"]].concat());
    assert!(scan.status.success(), "{}", stderr(&scan));
    assert!(stdout(&scan).contains("total            18"), "{}", stdout(&scan));

    let folds = lungfuse(&[&base[..], &["folds", "--k", "3"]].concat());
    assert!(folds.status.success(), "{}", stderr(&folds));
    let text = stdout(&folds);
    for k in 1..=3 {
        assert!(text.contains(&format!("fold {k}: 6 items [2, 2, 2]")), "{text}");
    }
    let plan = out.path().join("t/folds/fold_plan.json");
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(plan).unwrap()).unwrap();
    assert!(json.is_object());
    assert!(out.path().join("t/folds/index.json").exists());
}

#[test]
fn unknown_subcommand_fails() {
    let o = lungfuse(&["frobnicate"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("frobnicate"));
}

#[test]
fn bad_config_key_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[folds]\nk = 5\nbogus_key = 1\n").unwrap();
    let o = lungfuse(&["--config", cfg.to_str().unwrap(), "layers", "squeezenet"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("bogus_key"), "{}", stderr(&o));
}

#[test]
fn layers_lists_squeezenet_stages() {
    let o = lungfuse(&["layers", "squeezenet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("fire9/concat"), "{text}");
    assert!(text.contains("<- anchor"));
}

#[test]
fn build_reports_ensemble_shape() {
    let out = tempfile::tempdir().unwrap();
    let o = lungfuse(&[
        "--random-init",
        "--out",
        out.path().to_str().unwrap(),
        "build",
        "--variant",
        "cvdnet3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("concatenated     7x7x2336"), "{text}");
    assert!(text.contains("12133 trainable"), "{text}");
}
