use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use elastica_seg::pnm::load_image;
use elastica_seg::{dice, threshold};

const TWO_LEVEL: &str = "width = 64\nheight = 64\nbackground = 0.25\nshape = disk 36 30 18 0.75\n";
const TWO_DISKS: &str =
    "width = 100\nheight = 100\nbackground = 0.5\nshape = disk 30 44 25 0.8\nshape = disk 72 57 25 0.2\n";
const DEPTH_CONFIG: &str = "alpha = 3\nbeta = 10\ntau = 5\nmu = 30\ndata_weight = 10\n\
                            scenarios = gaussian:0.5,rayleigh:0.1,poisson:0.2,gamma:0.2\n";

fn cli(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elastica-seg"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn mask_dice(dir: &Path, computed: &str, truth: &str) -> f64 {
    let a = threshold(&load_image(dir.join(computed)).unwrap().channel_mean(), 0.5);
    let b = threshold(&load_image(dir.join(truth)).unwrap().channel_mean(), 0.5);
    dice(&a, &b).unwrap()
}

#[test]
fn validate_echoes_resolved_defaults_without_writing() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.txt", "alpha = 2\n");
    let out = cli(&["validate", "--config", "cfg.txt"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("alpha = 2.0\n"));
    assert!(stdout.contains("tau = 5.0\n"));
    assert!(stdout.contains("scenarios = gaussian:0.4,rayleigh:0.1,poisson:0.3,gamma:0.2\n"));
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
}

#[test]
fn config_errors_name_the_key_and_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "cfg.txt", "scenarios = gaussian:0.5,gamma:0.6\n");
    let out = cli(&["validate", "--config", "cfg.txt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("`scenarios`"));

    let out = cli(&["segment", "--bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let out = cli(&["validate", "--config", "missing.txt"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn phantom_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "spec.txt", TWO_DISKS);
    for out in ["a", "b", "c"] {
        let seed = if out == "c" { "4" } else { "3" };
        let args = ["phantom", "--spec", "spec.txt", "--noise", "gaussian:0.1,saltpepper:0.02", "--seed", seed, "--out", out];
        assert_eq!(cli(&args, d).status.code(), Some(0));
    }
    let read = |p: &str| fs::read(d.join(p)).unwrap();
    assert_eq!(read("a/noisy.pgm"), read("b/noisy.pgm"));
    assert_ne!(read("a/noisy.pgm"), read("c/noisy.pgm"));
    assert_eq!(read("a/clean.pgm"), read("c/clean.pgm"));
    assert!(d.join("a/truth_1.pgm").exists() && d.join("a/truth_2.pgm").exists());
    let manifest = String::from_utf8(read("a/manifest.txt")).unwrap();
    assert!(manifest.contains("seed = 3\n") && manifest.contains("rng = ChaCha8"));
}

#[test]
fn segment_recovers_noiseless_two_level_phantom() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "spec.txt", TWO_LEVEL);
    write(d, "cfg.txt", "");
    assert_eq!(cli(&["phantom", "--spec", "spec.txt", "--out", "ph"], d).status.code(), Some(0));
    for out in ["seg", "again"] {
        let args = ["segment", "--input", "ph/clean.pgm", "--config", "cfg.txt", "--out", out];
        assert_eq!(cli(&args, d).status.code(), Some(0));
    }
    assert!(mask_dice(d, "seg/mask.pgm", "ph/truth_1.pgm") >= 0.99);
    assert!(d.join("seg/phi.pgm").exists());
    let csv = fs::read_to_string(d.join("seg/diagnostics.csv")).unwrap();
    assert!(csv.starts_with("iter,R_tau,R_v,R_phi,R_e,R_w,R_lambda,energy\n"));
    assert_eq!(csv, fs::read_to_string(d.join("again/diagnostics.csv")).unwrap());
    let manifest = fs::read_to_string(d.join("seg/manifest.txt")).unwrap();
    assert!(manifest.contains("input_sha256 = "));
    assert!(manifest.contains("converged = true\n"));
}

#[test]
fn depth_auto_ranks_the_true_ordering_first() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "spec.txt", TWO_DISKS);
    write(d, "cfg.txt", DEPTH_CONFIG);
    let noise = "gaussian:0.1,rayleigh:0.2,poisson:20,gamma:10,saltpepper:0.05";
    let args = ["phantom", "--spec", "spec.txt", "--noise", noise, "--seed", "11", "--out", "ph"];
    assert_eq!(cli(&args, d).status.code(), Some(0));
    let args = [
        "depth", "--input", "ph/noisy.pgm", "--config", "cfg.txt", "--objects", "2", "--ordering", "auto", "--out", "out",
    ];
    let status = cli(&args, d).status.code();
    assert!(matches!(status, Some(0) | Some(2)), "{status:?}");
    let csv = fs::read_to_string(d.join("out/orderings.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "ordering,energy");
    assert!(rows[1].starts_with("1 2,"), "{csv}");
    let energy = |row: &str| row.split(',').nth(1).unwrap().parse::<f64>().unwrap();
    assert!(energy(rows[1]) < energy(rows[2]));
    for f in ["mask_1.pgm", "mask_2.pgm", "energy.txt", "diagnostics.csv", "manifest.txt"] {
        assert!(d.join("out").join(f).exists(), "{f}");
    }
}

#[test]
fn depth_rejects_mismatched_ordering() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "spec.txt", TWO_DISKS);
    write(d, "cfg.txt", DEPTH_CONFIG);
    assert_eq!(cli(&["phantom", "--spec", "spec.txt", "--out", "ph"], d).status.code(), Some(0));
    let args = [
        "depth", "--input", "ph/clean.pgm", "--config", "cfg.txt", "--objects", "2", "--ordering", "1,2,3", "--out", "out",
    ];
    let out = cli(&args, d);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("ordering"));
}
