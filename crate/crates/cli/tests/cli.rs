use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dirmatch::geometry::{save_mesh, shapes, ShapeFormat};
use dirmatch::Correspondence;

fn dirmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dirmatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small blob and its rigidly moved copy.
fn write_pair(dir: &Path) -> (PathBuf, PathBuf) {
    let m = shapes::bumpy_blob(6);
    let a = dir.join("a.off");
    let b = dir.join("b.off");
    save_mesh(&m, &a, ShapeFormat::Off).unwrap();
    save_mesh(
        &shapes::transformed(&m, &shapes::generic_rigid_motion()),
        &b,
        ShapeFormat::Off,
    )
    .unwrap();
    (a, b)
}

fn printed_value(out: &str, key: &str) -> f64 {
    out.lines()
        .find_map(|l| l.strip_prefix(&format!("{key} = ")))
        .unwrap_or_else(|| panic!("no `{key}` in {out:?}"))
        .trim()
        .parse()
        .unwrap()
}

#[test]
fn match_writes_artifacts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let before = fs::read(&a).unwrap();
    let run = |out: &Path| {
        let o = dirmatch(&[
            "match",
            "--src",
            s(&a),
            "--dst",
            s(&b),
            "--out",
            s(out),
            "--k-max",
            "40",
            "--set",
            "shot_radius=0.1",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    let r1 = dir.path().join("r1");
    let r2 = dir.path().join("r2");
    run(&r1);
    run(&r2);
    let map1 = fs::read(r1.join("correspondence.txt")).unwrap();
    assert_eq!(map1, fs::read(r2.join("correspondence.txt")).unwrap());
    assert_eq!(String::from_utf8(map1).unwrap().lines().count(), 362);
    assert_eq!(fs::read(&a).unwrap(), before, "input file changed");

    let manifest = fs::read_to_string(r1.join("manifest.txt")).unwrap();
    for needle in [
        "tool = dirmatch-cli",
        "[config]",
        "K = 40",
        "shot_radius = 0.1",
        "[inputs]",
        "[stages]",
        "[outputs]",
    ] {
        assert!(manifest.contains(needle), "manifest lacks {needle}:\n{manifest}");
    }
    let outputs: Vec<&str> = manifest.split("[outputs]\n").nth(1).unwrap().lines().collect();
    assert!(outputs.len() >= 4);
    assert!(outputs.iter().all(|p| Path::new(p).exists()));
    assert!(!r1.join("manifest.txt.tmp").exists());
}

#[test]
fn match_landmarks_without_file_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let o = dirmatch(&[
        "match",
        "--src",
        s(&a),
        "--dst",
        s(&b),
        "--out",
        s(dir.path()),
        "--init",
        "landmarks",
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("usage"), "{}", stderr(&o));
}

#[test]
fn match_with_landmarks_and_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let lm = dir.path().join("lm.txt");
    fs::write(&lm, "0 0\n90 90\n180 180\n270 270\n").unwrap();
    let cfg = dir.path().join("run.cfg");
    fs::write(&cfg, "# landmark run\nK = 30\nmax_iters = 4\ninit = landmarks\n").unwrap();
    let out = dir.path().join("r");
    let o = dirmatch(&[
        "match",
        "--src",
        s(&a),
        "--dst",
        s(&b),
        "--out",
        s(&out),
        "--config",
        s(&cfg),
        "--landmarks",
        s(&lm),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.contains("K = 30") && manifest.contains("max_iters = 4"));
    assert!(manifest.contains("lm.txt") && manifest.contains("run.cfg"));
    assert!(!out.join("init_correspondence.txt").exists());
}

#[test]
fn match_bad_config_key_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let o = dirmatch(&[
        "match",
        "--src",
        s(&a),
        "--dst",
        s(&b),
        "--out",
        s(dir.path()),
        "--set",
        "bogus=1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let o = dirmatch(&[
        "match",
        "--src",
        s(&a),
        "--dst",
        s(&b),
        "--out",
        s(dir.path()),
        "--mode",
        "nope",
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn match_missing_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (a, _) = write_pair(dir.path());
    let missing = dir.path().join("missing.off");
    let o = dirmatch(&["match", "--src", s(&a), "--dst", s(&missing), "--out", s(dir.path())]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.off"));
}

#[test]
fn eval_identity_on_sphere() {
    let dir = tempfile::tempdir().unwrap();
    let sphere = dir.path().join("sphere.off");
    let m = shapes::icosphere(4);
    save_mesh(&m, &sphere, ShapeFormat::Off).unwrap();
    let id = dir.path().join("id.txt");
    Correspondence::identity(m.num_vertices()).write(&id).unwrap();
    let out = dir.path().join("e");
    let o = dirmatch(&[
        "eval",
        "--map",
        s(&id),
        "--gt",
        s(&id),
        "--dst",
        s(&sphere),
        "--out",
        s(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!((printed_value(&text, "auc") - 0.25).abs() <= 1e-12);
    assert_eq!(printed_value(&text, "mean_error"), 0.0);
    assert!(out.join("curve.csv").exists() && out.join("per_point_errors.csv").exists());
    assert!(out.join("manifest.txt").exists());
}

#[test]
fn eval_short_map_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (_, b) = write_pair(dir.path());
    let gt = dir.path().join("gt.txt");
    let short = dir.path().join("short.txt");
    Correspondence::identity(362).write(&gt).unwrap();
    Correspondence::identity(361).write(&short).unwrap();
    let o = dirmatch(&[
        "eval",
        "--map",
        s(&short),
        "--gt",
        s(&gt),
        "--dst",
        s(&b),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn eval_out_of_range_index_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let (_, b) = write_pair(dir.path());
    let gt = dir.path().join("gt.txt");
    let bad = dir.path().join("bad.txt");
    Correspondence::identity(362).write(&gt).unwrap();
    let mut idx: Vec<usize> = (0..362).collect();
    idx[5] = 9999;
    Correspondence::from_indices(&idx).write(&bad).unwrap();
    let o = dirmatch(&[
        "eval",
        "--map",
        s(&bad),
        "--gt",
        s(&gt),
        "--dst",
        s(&b),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn lmd_of_identity_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let id = dir.path().join("id.txt");
    Correspondence::identity(362).write(&id).unwrap();
    let out = dir.path().join("l");
    let o = dirmatch(&["lmd", "--src", s(&a), "--dst", s(&b), "--map", s(&id), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(printed_value(&stdout(&o), "median").abs() <= 1e-10);
    let csv = fs::read_to_string(out.join("lmd.csv")).unwrap();
    assert_eq!(csv.lines().count(), 363);
}

#[test]
fn eigs_fills_cache_used_by_match() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_pair(dir.path());
    let out = dir.path().join("r");
    for shape in [&a, &b] {
        let o = dirmatch(&["eigs", "--shape", s(shape), "--k", "40", "--out", s(&out)]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(Path::new(stdout(&o).trim()).exists());
    }
    let cached: Vec<_> = fs::read_dir(out.join("cache")).unwrap().collect();
    assert_eq!(cached.len(), 2);
    let o = dirmatch(&[
        "match",
        "--src",
        s(&a),
        "--dst",
        s(&b),
        "--out",
        s(&out),
        "--k-max",
        "40",
        "--set",
        "shot_radius=0.1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_dir(out.join("cache")).unwrap().count(), 2);
    let values = fs::read_to_string(out.join("eigenvalues.csv")).unwrap();
    assert_eq!(values.lines().count(), 41);
}

#[test]
fn thm1_prints_eta() {
    let o = dirmatch(&["thm1", "--n2", "3", "--trials", "0"]);
    assert!(o.status.success());
    assert!((printed_value(&stdout(&o), "eta") - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn thm1_zero_rows_exits_one() {
    let o = dirmatch(&["thm1", "--n2", "0"]);
    assert_eq!(o.status.code(), Some(1));
    let o = dirmatch(&["thm1", "--n2", "50", "--n", "20", "--k", "5", "--trials", "2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn thm1_writes_reproducible_csv() {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &Path| {
        let o = dirmatch(&[
            "thm1",
            "--n2",
            "40",
            "--k",
            "10",
            "--n",
            "300",
            "--trials",
            "5",
            "--seed",
            "7",
            "--out",
            s(out),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read(out.join("perturbation.csv")).unwrap()
    };
    let x = run(&dir.path().join("x"));
    let y = run(&dir.path().join("y"));
    assert_eq!(x, y);
    assert!(dir.path().join("x/manifest.txt").exists());
}

#[test]
fn help_and_version_exit_zero_unknown_flag_exits_one() {
    assert!(dirmatch(&["--help"]).status.success());
    assert!(dirmatch(&["--version"]).status.success());
    assert_eq!(dirmatch(&["match", "--frobnicate"]).status.code(), Some(1));
    assert_eq!(dirmatch(&[]).status.code(), Some(1));
}

#[test]
fn threads_flag_is_accepted() {
    let o = dirmatch(&["--threads", "1", "thm1", "--n2", "4", "--trials", "0"]);
    assert!(o.status.success());
    assert!((printed_value(&stdout(&o), "eta") - 10.0 / 24.0).abs() < 1e-15);
}
