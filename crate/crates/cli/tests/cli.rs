use std::path::Path;
use std::process::{Command, Output};

fn xpf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xpf"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run xpf")
}

fn ok(args: &[&str]) -> String {
    let out = xpf(args);
    assert!(
        out.status.success(),
        "xpf {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(s: &str) -> serde_json::Value {
    serde_json::from_str(s).unwrap_or_else(|e| panic!("not JSON ({e}):\n{s}"))
}

/// Small scene config: 2 scenes, 3 views, 64² detector, 1 mm voxels.
fn tiny_config(dir: &Path) -> String {
    let cfg = serde_json::json!({
        "master_seed": 5,
        "n_scenes": 2,
        "n_implants_per_scene": 2,
        "split": { "train": 1, "val": 1 },
        "geometry": {
            "source_detector_mm": 1164.0,
            "detector_iso_mm": 700.0,
            "detector_pixels": [64, 64],
            "pixel_pitch_mm": 2.5,
            "angles_deg": [0.0, 60.0, 150.0]
        },
        "target_spacing_mm": 1.0,
        "crop_slices": 60,
        "anatomy": { "kind": "phantom", "dims": [80, 64, 64], "spacing_mm": 1.0 }
    });
    let path = dir.join("tiny.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    path.to_str().unwrap().to_owned()
}

#[test]
fn dry_run_reports_full_and_desk_counts() {
    let full = json(&ok(&["generate", "--dry-run"]));
    assert_eq!(full["pairs"], 3000);
    assert_eq!(full["train_pairs"], 2700);
    assert_eq!(full["val_pairs"], 300);
    let desk = json(&ok(&["--desk-scale", "generate", "--dry-run"]));
    assert_eq!(desk["pairs"], 16);
}

#[test]
fn forge_is_seeded_and_respects_kind() {
    let a = ok(&["forge", "--kind", "plate", "--count", "3", "--seed", "11"]);
    let b = ok(&["forge", "--kind", "plate", "--count", "3", "--seed", "11"]);
    assert_eq!(a, b);
    let items = json(&a);
    let items = items.as_array().unwrap();
    assert_eq!(items.len(), 3);
    assert!(items.iter().all(|i| i["implant"]["kind"] == "plate"));
    assert_ne!(items[0]["implant"], items[1]["implant"]);

    let v = json(&ok(&["forge", "--kind", "screw", "--spacing-mm", "0.5"]));
    assert!(v[0]["voxels"].as_u64().unwrap() > 0);
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"n_scenes": 3, "split": {"train": 1, "val": 1}}"#).unwrap();
    let out = xpf(&["--config", cfg.to_str().unwrap(), "generate", "--dry-run"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));

    let out = xpf(&["annotate-diff", "--with", "/nonexistent/a", "--without", "/nonexistent/b"]);
    assert!(!out.status.success());
    let out = xpf(&["forge", "--kind", "spoon"]);
    assert!(!out.status.success());
}

#[test]
fn compose_project_annotate_and_evaluate_one_scene() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let out_s = out.to_str().unwrap();

    ok(&["--config", &cfg, "--out", out_s, "compose", "--scene", "1"]);
    let scene = out.join("scene_001");
    for f in ["anatomy.vol.raw", "metal.vol.json", "merged.vol.raw", "placements.json"] {
        assert!(scene.join(f).exists(), "{f} missing");
    }
    let placements = json(&std::fs::read_to_string(scene.join("placements.json")).unwrap());
    assert_eq!(placements.as_array().unwrap().len(), 2);

    ok(&["--config", &cfg, "--out", out_s, "project", "--scene", "1", "--pair"]);
    for d in ["projections", "masks", "metal_thickness", "line_integral", "line_integral_anatomy"] {
        assert!(scene.join(d).join("view_002.raw").exists(), "{d} incomplete");
    }

    // A fixed zero threshold on the noiseless pair marks every ray through
    // metal; the pipeline masks need at least 0.1 mm, so recall is 1.
    let annot = dir.path().join("annot");
    ok(&[
        "--out",
        annot.to_str().unwrap(),
        "annotate-diff",
        "--with",
        scene.join("line_integral").to_str().unwrap(),
        "--without",
        scene.join("line_integral_anatomy").to_str().unwrap(),
        "--threshold",
        "0",
    ]);
    let report = xpf(&[
        "evaluate",
        "--pred",
        annot.to_str().unwrap(),
        "--gt",
        scene.join("masks").to_str().unwrap(),
    ]);
    assert!(report.status.success());
    let r = json(&String::from_utf8(report.stdout).unwrap());
    assert_eq!(r["n_scans"], 1);
    assert_eq!(r["n_projections"], 3);
    assert_eq!(r["per_projection"]["recall"]["mean"], 1.0);
    assert!(r["per_projection"]["dice"]["mean"].as_f64().unwrap() > 0.5);
    let summary = String::from_utf8(report.stderr).unwrap();
    assert!(summary.contains("dice: "), "{summary}");
    assert!(summary.lines().any(|l| l.trim().starts_with("recall: 1.00 ± 0.00")), "{summary}");
}

#[test]
fn generate_preview_and_evaluate_a_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("ds");
    let out_s = out.to_str().unwrap();
    ok(&["--config", &cfg, "--out", out_s, "generate"]);
    let manifest = json(&std::fs::read_to_string(out.join("manifest.json")).unwrap());
    assert_eq!(manifest["format_version"], "1");
    assert_eq!(manifest["scenes"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["split"]["val"], serde_json::json!([1]));

    // Same seed, second directory: byte-identical manifest.
    let again = dir.path().join("ds2");
    ok(&["--config", &cfg, "--out", again.to_str().unwrap(), "generate"]);
    assert_eq!(
        std::fs::read(out.join("manifest.json")).unwrap(),
        std::fs::read(again.join("manifest.json")).unwrap()
    );

    let img = dir.path().join("prev/p.png");
    let printed = ok(&["preview", "--manifest", out_s, "--scene", "0", "--view", "2", "--image", img.to_str().unwrap()]);
    assert_eq!(printed.lines().count(), 2);
    assert!(img.exists() && dir.path().join("prev/p_overlay.png").exists());
    let out_of_range = xpf(&["preview", "--manifest", out_s, "--scene", "7", "--view", "0", "--image", img.to_str().unwrap()]);
    assert!(!out_of_range.status.success());

    // Ground truth scored against itself, through the manifest and through directories.
    let by_manifest = json(&ok(&["evaluate", "--pred", out_s, "--manifest", out_s, "--split", "all"]));
    assert_eq!(by_manifest["n_scans"], 2);
    assert_eq!(by_manifest["n_projections"], 6);
    assert_eq!(by_manifest["per_scan"]["dice"]["mean"], 1.0);
    assert_eq!(by_manifest["per_scan"]["dice"]["std"], 0.0);
    let by_dirs = json(&ok(&["evaluate", "--pred", out_s, "--gt", again.to_str().unwrap()]));
    assert_eq!(by_dirs["n_scans"], 2);
    assert_eq!(by_dirs["per_projection"]["precision"]["per_item"].as_array().unwrap().len(), 6);
    let val = json(&ok(&["evaluate", "--pred", out_s, "--manifest", out_s]));
    assert_eq!(val["n_scans"], 1);
}
