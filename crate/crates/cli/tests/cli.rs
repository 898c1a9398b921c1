use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hysharp_core::metrics::exp_cube;
use hysharp_core::raster::{load_raster, save_pan, save_raster};
use hysharp_core::resample::MtfSpec;
use hysharp_core::synth::{generate_scene, SceneSpec};
use hysharp_core::{mtf_downscale, HsCube, PanImage};
use ndarray::{Array2, Array3, Axis};
use serde_json::Value;
use tempfile::TempDir;

fn hysharp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hysharp")).args(args).output().expect("binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stderr).unwrap_or_else(|_| panic!("stderr: {}", String::from_utf8_lossy(&out.stderr)))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Small scene written to disk: (pan, hs, truth) paths.
fn small_scene(dir: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let spec = SceneSpec { width: 24, height: 24, ratio: 4, bands: 3, inversion_fraction: 0.34, seed: 4, ..Default::default() };
    let s = generate_scene(&spec).unwrap();
    let (pan, hs, truth) = (dir.join("pan.hsr"), dir.join("hs.hsr"), dir.join("truth.hsr"));
    save_pan(&pan, &s.pan).unwrap();
    save_raster(&hs, &s.coarse).unwrap();
    save_raster(&truth, &s.truth).unwrap();
    (pan, hs, truth)
}

fn quick_config(dir: &Path) -> PathBuf {
    let path = dir.join("cfg.json");
    std::fs::write(&path, r#"{"n0": 6, "n_s_max": 3, "eta": 0.5}"#).unwrap();
    path
}

#[test]
fn simulate_writes_four_files_and_repeats_exactly() {
    let dir = TempDir::new().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = hysharp(&["simulate", "--out", p(d), "--seed", "3"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let outcome: Value = serde_json::from_slice(&out.stdout).unwrap();
        assert_eq!(outcome["exit_code"], 0);
        assert_eq!(outcome["artifacts"].as_array().unwrap().len(), 4);
    }
    for f in ["truth.hsr", "pan.hsr", "hs.hsr", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    let manifest = read_json(&a.join("manifest.json"));
    assert_eq!(manifest["inversion_bands"], serde_json::json!([12, 13, 14, 15]));
    let hs = load_raster(a.join("hs.hsr")).unwrap();
    assert_eq!(hs.view().dim(), (16, 10, 10));
}

#[test]
fn simulate_rejects_bad_spec() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"width": 61}"#).unwrap();
    let out = hysharp(&["simulate", "--config", p(&spec), "--out", p(dir.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "dimension");
}

#[test]
fn sharpen_writes_artifacts_and_is_deterministic() {
    let dir = TempDir::new().unwrap();
    let (pan, hs, _) = small_scene(dir.path());
    let cfg = quick_config(dir.path());
    let run = |name: &str| {
        let out_path = dir.path().join(name).join("fused.hsr");
        let out = hysharp(&[
            "sharpen", "--pan", p(&pan), "--hs", p(&hs), "--config", p(&cfg), "--out", p(&out_path), "--deterministic",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        out_path
    };
    let first = run("a");
    let second = run("b");
    let fused = load_raster(&first).unwrap();
    assert_eq!(fused.view().dim(), (3, 24, 24));
    for suffix in ["", "trace.csv", "profile.csv"] {
        let (x, y) = if suffix.is_empty() {
            (first.clone(), second.clone())
        } else {
            (hysharp_cli::sidecar(&first, suffix), hysharp_cli::sidecar(&second, suffix))
        };
        assert_eq!(std::fs::read(&x).unwrap(), std::fs::read(&y).unwrap(), "{suffix}");
    }
    let trace = std::fs::read_to_string(hysharp_cli::sidecar(&first, "trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "band,iter,phase,beta,loss_spectral,loss_spatial,loss_ratio");
    let summary = read_json(&hysharp_cli::sidecar(&first, "summary.json"));
    let iters: Vec<u64> = summary["histogram"]["iterations"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(iters.len(), 3);
    assert_eq!(iters.iter().sum::<u64>(), summary["total_iterations"].as_u64().unwrap());
    assert_eq!(trace.lines().count() as u64 - 1, summary["total_iterations"].as_u64().unwrap());
}

#[test]
fn sharpen_rejects_mismatched_ratio() {
    let dir = TempDir::new().unwrap();
    let pan = dir.path().join("pan.hsr");
    let hs = dir.path().join("hs.hsr");
    save_pan(&pan, &PanImage::new(Array2::from_elem((24, 24), 0.5)).unwrap()).unwrap();
    save_raster(&hs, &HsCube::new(Array3::from_elem((2, 5, 5), 0.5)).unwrap()).unwrap();
    let out = hysharp(&["sharpen", "--pan", p(&pan), "--hs", p(&hs), "--out", p(&dir.path().join("f.hsr"))]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "ratio");
}

#[test]
fn sharpen_missing_input_is_an_io_failure() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.hsr");
    let out = hysharp(&["sharpen", "--pan", p(&missing), "--hs", p(&missing), "--out", p(&dir.path().join("f.hsr"))]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "io");
}

#[test]
fn config_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let (pan, hs, _) = small_scene(dir.path());
    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"gamma_low": 0.9}"#).unwrap();
    let out = hysharp(&["sharpen", "--pan", p(&pan), "--hs", p(&hs), "--config", p(&cfg), "--out", p(&dir.path().join("f.hsr"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = hysharp(&["sharpen", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");
    assert!(hysharp(&["--help"]).status.success());
}

#[test]
fn assess_reduced_identity_and_missing_gt() {
    let dir = TempDir::new().unwrap();
    let (_, hs, truth) = small_scene(dir.path());
    let report = dir.path().join("rr.json");
    let out = hysharp(&["assess", "--mode", "rr", "--fused", p(&truth), "--gt", p(&truth), "--hs", p(&hs), "--out", p(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    assert_eq!(r["context"], "RR");
    assert!(r["sam"].as_f64().unwrap().abs() < 1e-6);
    assert!(r["ergas"].as_f64().unwrap().abs() < 1e-6);
    assert!((r["q_avg"].as_f64().unwrap() - 1.0).abs() < 1e-6);
    assert!(hysharp_cli::sidecar(&report, "profile.csv").exists());

    let out = hysharp(&["assess", "--mode", "rr", "--fused", p(&truth), "--hs", p(&hs), "--out", p(&report)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn assess_full_exp_profile_and_pan_copy() {
    let dir = TempDir::new().unwrap();
    let (pan, hs, _) = small_scene(dir.path());
    let cube = load_raster(&hs).unwrap();
    let exp = dir.path().join("exp.hsr");
    save_raster(&exp, &exp_cube(&cube, 4).unwrap()).unwrap();
    let report = dir.path().join("fr.json");
    let out = hysharp(&["assess", "--mode", "fr", "--fused", p(&exp), "--hs", p(&hs), "--pan", p(&pan), "--out", p(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(hysharp_cli::sidecar(&report, "profile.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "band,E,E_exp,e");
    for line in csv.lines().skip(1) {
        let e: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((e - 1.0).abs() < 1e-6, "{line}");
    }

    let mut with_pan = exp_cube(&cube, 4).unwrap().into_inner();
    with_pan.index_axis_mut(Axis(0), 1).assign(&hysharp_core::raster::load_pan(&pan).unwrap().view());
    let fused = dir.path().join("panband.hsr");
    save_raster(&fused, &HsCube::new(with_pan).unwrap()).unwrap();
    let out = hysharp(&["assess", "--mode", "fr", "--fused", p(&fused), "--hs", p(&hs), "--pan", p(&pan), "--out", p(&report)]);
    assert!(out.status.success());
    assert!(read_json(&report)["d_s"].as_f64().unwrap().abs() < 1e-6);
}

#[test]
fn trajectory_emits_two_threshold_phases() {
    let dir = TempDir::new().unwrap();
    let (pan, hs, _) = small_scene(dir.path());
    let csv_path = dir.path().join("traj.csv");
    let out = hysharp(&[
        "trajectory", "--pan", p(&pan), "--hs", p(&hs), "--band", "2", "--grid", "1e-4:0.5,3e-5:2", "--schedule",
        "hysteresis", "--iters", "60", "--out", p(&csv_path), "--deterministic",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().next().unwrap(), hysharp_cli::TRAJECTORY_HEADER);
    let rows: Vec<Vec<String>> = csv.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 120);
    for config in ["0", "1"] {
        // phase of row i is the state after the previous row's ratio
        let mut on = false;
        for row in rows.iter().filter(|r| r[0] == config) {
            assert_eq!(row[5] == "ON", on, "{row:?}");
            let ratio: f64 = row[9].parse().unwrap();
            if ratio > 0.65 {
                on = false;
            } else if ratio < 0.59 {
                on = true;
            }
        }
    }
    let endpoints = read_json(&hysharp_cli::sidecar(&csv_path, "endpoints.json"));
    assert_eq!(endpoints.as_array().unwrap().len(), 2);

    let out = hysharp(&["trajectory", "--pan", p(&pan), "--hs", p(&hs), "--band", "9", "--grid", "1e-5:1", "--out", p(&csv_path)]);
    assert_eq!(out.status.code(), Some(2));
    let out = hysharp(&["trajectory", "--pan", p(&pan), "--hs", p(&hs), "--band", "0", "--grid", "oops", "--out", p(&csv_path)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrmap_polarity_and_quantization() {
    let dir = TempDir::new().unwrap();
    let (pan_path, _, _) = small_scene(dir.path());
    let pan = hysharp_core::raster::load_pan(&pan_path).unwrap();
    let low = mtf_downscale(pan.view(), &MtfSpec::with_ratio(4).unwrap()).unwrap().mapv(|v| v as f32);
    let cube = HsCube::from_bands(&[low.clone(), low.mapv(|v| -v)], None).unwrap();
    let hs = dir.path().join("pancube.hsr");
    save_raster(&hs, &cube).unwrap();
    for (band, want, bin) in [("0", 1.0, 4.0), ("1", -1.0, 0.0)] {
        let map_path = dir.path().join(format!("map{band}.hsr"));
        let out = hysharp(&["corrmap", "--pan", p(&pan_path), "--hs", p(&hs), "--band", band, "--out", p(&map_path)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let map = load_raster(&map_path).unwrap();
        assert_eq!(map.view().dim(), (1, 6, 6));
        assert!(map.view().iter().all(|&r| (r as f64 - want).abs() < 1e-6), "{band}");
        let q = load_raster(hysharp_cli::sidecar(&map_path, "quantized.hsr")).unwrap();
        assert!(q.view().iter().all(|&v| v == bin));
    }
}

#[test]
fn quantization_bins_follow_legend_edges() {
    use hysharp_cli::quantize_correlation as q;
    let got: Vec<f32> = [-1.0, -0.61, -0.6, -0.2, 0.0, 0.2, 0.59, 0.6, 1.0].iter().map(|&r| q(r)).collect();
    assert_eq!(got, vec![0.0, 0.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0]);
    assert!(q(f64::NAN).is_nan());
}

#[test]
fn grid_parsing() {
    let g = hysharp_cli::parse_grid("1e-5:0.5, 3e-5:2").unwrap();
    assert_eq!(g.len(), 2);
    assert_eq!((g[1].alpha, g[1].beta), (3e-5, 2.0));
    assert!(hysharp_cli::parse_grid("").is_err());
    assert!(hysharp_cli::parse_grid("1e-5").is_err());
}
