use std::path::Path;
use std::process::{Command, Output};

use mixsplat::image::Image;
use mixsplat::io::write_png;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixsplat"))
        .args(args)
        .output()
        .expect("run mixsplat")
}

fn text(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_flat(dir: &Path, name: &str, v: f64) {
    std::fs::create_dir_all(dir).unwrap();
    write_png(&dir.join(name), &Image::filled(8, 8, 3, v)).unwrap();
}

#[test]
fn metrics_of_identical_images_is_infinite() {
    let d = tempfile::tempdir().unwrap();
    write_flat(&d.path().join("a"), "x.png", 0.3);
    write_flat(&d.path().join("b"), "x.png", 0.3);
    let o = run(&["metrics", "--renders", d.path().join("a").to_str().unwrap(), "--truths", d.path().join("b").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(text(&o).contains("inf"), "{}", text(&o));
}

#[test]
fn metrics_of_gray_against_black() {
    let d = tempfile::tempdir().unwrap();
    write_flat(&d.path().join("a"), "x.png", 128.0 / 255.0);
    write_flat(&d.path().join("b"), "x.png", 0.0);
    let o = run(&["metrics", "--renders", d.path().join("a").to_str().unwrap(), "--truths", d.path().join("b").to_str().unwrap()]);
    assert!(o.status.success());
    let expected = -20.0 * (128.0f64 / 255.0).log10();
    let found = text(&o)
        .split_whitespace()
        .filter_map(|t| t.parse::<f64>().ok())
        .any(|v| (v - expected).abs() < 1e-3);
    assert!(found, "expected PSNR {expected:.4} in\n{}", text(&o));
}

#[test]
fn gradcheck_is_reproducible() {
    let a = run(&["gradcheck", "--seed", "7", "--scenes", "3"]);
    let b = run(&["gradcheck", "--seed", "7", "--scenes", "3"]);
    assert!(a.status.success(), "{}", text(&a));
    assert_eq!(text(&a), text(&b));
    assert!(text(&a).contains("max relative error"));
}

#[test]
fn synthetic_dataset_renders_from_its_scene() {
    let d = tempfile::tempdir().unwrap();
    let out = d.path().join("sphere");
    let o = run(&["make-synthetic", "sphere", "--size", "24", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "config.toml", "scene.mxgs", "mesh.obj", "images/train_000.png"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let png = d.path().join("r.png");
    let o = run(&[
        "render",
        "--scene",
        out.join("scene.mxgs").to_str().unwrap(),
        "--mesh",
        out.join("mesh.obj").to_str().unwrap(),
        "--camera",
        out.join("cameras/train_000.json").to_str().unwrap(),
        "--out",
        png.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(png.exists());
}

#[test]
fn missing_input_is_an_io_error() {
    let o = run(&["render", "--scene", "/nonexistent/s.mxgs", "--mesh", "/nonexistent/m.obj", "--camera", "/nonexistent/c.json", "--out", "/tmp/never.png"]);
    assert!(!o.status.success());
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error [io]"));
}
