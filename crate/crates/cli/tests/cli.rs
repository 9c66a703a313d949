use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn shearwave(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shearwave"))
        .args(args)
        .env("SHEARWAVE_WORKERS", "2")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = shearwave(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// Exact-bin grid: every (v, f) below puts a whole number of cycles across the
// field of view and the record, so velocities are recovered almost exactly.
const EXACT_SUITE: &str = r#"
levels_pa = [10080.0, 40320.0]
frequencies_hz = [500.0, 1000.0]
phantoms_per_level = 1
positions_per_phantom = 1
surface_range = [0, 0]
lateral_attenuation_m = 1000.0
depth_attenuation_m = 1000.0
random_phase = false

[geometry]
width_px = 200
depth_px = 128
frames = 200
dx_m = 4e-5
dz_m = 5e-6
dt_s = 1e-4
"#;

fn exact_suite(dir: &Path) -> std::path::PathBuf {
    let config = dir.join("suite.toml");
    fs::write(&config, EXACT_SUITE).unwrap();
    let out = dir.join("volumes");
    ok(&["generate", "--config", s(&config), "--out", s(&out)]);
    out
}

#[test]
fn default_manifest_lists_2500_scenes() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["generate", "--out", s(dir.path()), "--manifest-only"]);
    let manifest = shearwave::io::read_manifest(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.len(), 2500);
    for f in [200.0, 400.0, 600.0, 800.0, 1000.0] {
        assert_eq!(
            manifest
                .iter()
                .filter(|e| e.scene.spec.excitation_frequency_hz == f)
                .count(),
            500
        );
    }
    assert!(shearwave::io::list_volumes(dir.path()).unwrap().is_empty());
}

#[test]
fn estimate_on_empty_directory_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = shearwave(&[
        "estimate",
        "--input",
        s(dir.path()),
        "--output",
        s(&dir.path().join("r.csv")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no volumes found"));
}

#[test]
fn calibrate_recovers_q() {
    let dir = tempfile::tempdir().unwrap();
    let volumes = exact_suite(dir.path());
    let q: f64 = ok(&["calibrate", "--input", s(&volumes)])
        .trim()
        .parse()
        .unwrap();
    assert!((q - 0.84).abs() < 1e-3, "q = {q}");
}

#[test]
fn outputs_are_idempotent_and_worker_independent() {
    let dir = tempfile::tempdir().unwrap();
    let volumes = exact_suite(dir.path());
    let again = dir.path().join("again");
    let config = dir.path().join("suite.toml");
    let out = Command::new(env!("CARGO_BIN_EXE_shearwave"))
        .args([
            "--workers",
            "1",
            "generate",
            "--config",
            s(&config),
            "--out",
            s(&again),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    for entry in fs::read_dir(&volumes).unwrap() {
        let path = entry.unwrap().path();
        assert_eq!(
            fs::read(&path).unwrap(),
            fs::read(again.join(path.file_name().unwrap())).unwrap()
        );
    }

    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    ok(&["estimate", "--input", s(&volumes), "--output", s(&a)]);
    ok(&[
        "estimate",
        "--input",
        s(&volumes),
        "--output",
        s(&b),
        "--workers",
        "1",
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let rows = shearwave::io::read_report_rows(&a).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r.valid));
}

#[test]
fn evaluate_with_predictions_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let volumes = exact_suite(dir.path());
    let conventional = dir.path().join("conventional.csv");
    let summary = dir.path().join("summary.json");
    ok(&[
        "evaluate",
        "--input",
        s(&volumes),
        "--output",
        s(&conventional),
        "--summary",
        s(&summary),
    ]);
    let text = fs::read_to_string(&summary).unwrap();
    assert!(text.contains("per_frequency"), "{text}");

    // feeding the report back as predictions reproduces it
    let replay = dir.path().join("replay.csv");
    ok(&[
        "evaluate",
        "--input",
        s(&volumes),
        "--estimator",
        s(&conventional),
        "--output",
        s(&replay),
    ]);
    assert_eq!(fs::read(&conventional).unwrap(), fs::read(&replay).unwrap());
}

#[test]
fn preprocess_crops_filters_and_resizes() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("suite.toml");
    fs::write(
        &config,
        "levels_pa = [56000.0]\nfrequencies_hz = [600.0]\nphantoms_per_level = 1\npositions_per_phantom = 2\n\
         [geometry]\nwidth_px = 32\ndepth_px = 200\nframes = 64\ndx_m = 3e-5\ndz_m = 5e-6\ndt_s = 8.771929824561403e-5\n",
    )
    .unwrap();
    let raw = dir.path().join("raw");
    let out = dir.path().join("pre");
    ok(&["generate", "--config", s(&config), "--out", s(&raw)]);
    ok(&[
        "preprocess",
        "--input",
        s(&raw),
        "--output",
        s(&out),
        "--resize",
        "16x64",
    ]);
    let paths = shearwave::io::list_volumes(&out).unwrap();
    assert_eq!(paths.len(), 2);
    for p in paths {
        let v = shearwave::io::read_volume(&p).unwrap();
        assert_eq!((v.frames(), v.depth_px(), v.width_px()), (64, 64, 16));
        assert_eq!(v.meta.surface_index, Some(0));
    }
    let bad = shearwave(&[
        "preprocess",
        "--input",
        s(&raw),
        "--output",
        s(&out),
        "--resize",
        "64x64",
    ]);
    assert!(!bad.status.success());
}

#[test]
fn damping_pairs_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("suite.toml");
    fs::write(
        &config,
        "levels_pa = [56000.0]\nfrequencies_hz = [600.0]\nphantoms_per_level = 1\npositions_per_phantom = 2\n\
         amplitude_damping_factor = 0.5\nsurface_range = [0, 4]\n\
         [geometry]\nwidth_px = 64\ndepth_px = 140\nframes = 104\ndx_m = 2.966e-5\ndz_m = 5e-6\ndt_s = 8.771929824561403e-5\n",
    )
    .unwrap();
    let out = dir.path().join("pairs");
    ok(&[
        "generate",
        "--config",
        s(&config),
        "--out",
        s(&out),
        "--pairs",
    ]);
    let csv = dir.path().join("damping.csv");
    let stdout = ok(&[
        "damping",
        "--undamped",
        s(&out.join("undamped")),
        "--damped",
        s(&out.join("damped")),
        "--output",
        s(&csv),
    ]);
    assert!(stdout.contains("mean |offset| 0 Pa"), "{stdout}");
    assert_eq!(shearwave::io::read_damping_rows(&csv).unwrap().len(), 2);
}
