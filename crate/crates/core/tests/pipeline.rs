use std::fs;
use std::path::Path;

use dirmatch::dir::{run_pipeline, DirConfig, InitKind, Mode};
use dirmatch::eval::geodesic_error;
use dirmatch::geometry::{save_mesh, save_point_cloud, shapes, PointCloud, ShapeFormat, Surface};
use dirmatch::{Correspondence, Error, FunctionalMap};

fn write_blob_pair(dir: &Path, format: ShapeFormat, ext: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let m = shapes::bumpy_blob(8);
    let a = dir.join(format!("a.{ext}"));
    let b = dir.join(format!("b.{ext}"));
    save_mesh(&m, &a, format).unwrap();
    save_mesh(&shapes::transformed(&m, &shapes::generic_rigid_motion()), &b, format).unwrap();
    (a, b)
}

fn exact_fraction(map: &Correspondence) -> f64 {
    (0..map.len()).filter(|&i| map.get(i) == Some(i)).count() as f64 / map.len() as f64
}

#[test]
fn spectral_run_on_obj_recovers_rigid_copy() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_blob_pair(dir.path(), ShapeFormat::Obj, "obj");
    let cfg = DirConfig {
        k: 60,
        shot_radius: 0.1,
        ..DirConfig::default()
    };
    let rep = run_pipeline(&a, &b, &cfg, &dir.path().join("out")).unwrap();
    assert!(exact_fraction(&rep.outcome.map) > 0.95);
    let ks: Vec<usize> = rep.outcome.trace.records.iter().map(|r| r.k.unwrap()).collect();
    assert!(ks.windows(2).all(|w| w[1] >= w[0]));
    // every written functional map is orthonormal
    for i in 1..=ks.len() {
        let c = FunctionalMap::read_csv(&dir.path().join(format!("out/fmap_iter_{i:02}.csv"))).unwrap();
        assert!(c.orthonormality_error() < 1e-10);
    }
}

#[test]
fn gds_run_with_landmarks_on_ply() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_blob_pair(dir.path(), ShapeFormat::Ply, "ply");
    let lm = dir.path().join("lm.txt");
    fs::write(&lm, "0 0\n100 100\n200 200\n300 300\n400 400\n500 500\n").unwrap();
    let cfg = DirConfig {
        mode: Mode::Gds,
        init: InitKind::Landmarks,
        landmarks: Some(lm),
        ..DirConfig::default()
    };
    let out = dir.path().join("out");
    let rep = run_pipeline(&a, &b, &cfg, &out).unwrap();
    assert!(exact_fraction(&rep.outcome.map) > 0.95);
    assert!(rep.k_used.is_none());
    assert!(!out.join("fmap_iter_01.csv").exists());
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert!(trace.lines().nth(1).unwrap().starts_with("1,6,,"));
}

#[test]
fn point_cloud_input_matches_mostly() {
    let dir = tempfile::tempdir().unwrap();
    let m = shapes::bumpy_blob(8);
    let moved = shapes::transformed(&m, &shapes::generic_rigid_motion());
    let a = dir.path().join("a.xyz");
    let b = dir.path().join("b.xyz");
    save_point_cloud(&PointCloud::new(m.vertices().to_vec()).unwrap(), &a).unwrap();
    save_point_cloud(&PointCloud::new(moved.vertices().to_vec()).unwrap(), &b).unwrap();
    let cfg = DirConfig {
        k: 60,
        shot_radius: 0.1,
        ..DirConfig::default()
    };
    let rep = run_pipeline(&a, &b, &cfg, &dir.path().join("out")).unwrap();
    let gt = Correspondence::identity(m.num_vertices());
    let target = Surface::from_mesh(&moved).unwrap();
    let err = geodesic_error(&rep.outcome.map, &gt, &target.graph).unwrap();
    assert!(err.fraction_below(0.05) > 0.9, "{}", err.fraction_below(0.05));
}

#[test]
fn init_from_file_keeps_a_correct_map() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = write_blob_pair(dir.path(), ShapeFormat::Off, "off");
    let init = dir.path().join("init.txt");
    Correspondence::identity(642).write(&init).unwrap();
    let cfg = DirConfig {
        k: 40,
        init: InitKind::File,
        init_file: Some(init.clone()),
        ..DirConfig::default()
    };
    let out = dir.path().join("out");
    let rep = run_pipeline(&a, &b, &cfg, &out).unwrap();
    assert_eq!(rep.outcome.map, Correspondence::identity(642));
    assert_eq!(
        fs::read(out.join("init_correspondence.txt")).unwrap(),
        fs::read(&init).unwrap()
    );
}

#[test]
fn pruning_removes_exactly_the_distorted_points() {
    let dir = tempfile::tempdir().unwrap();
    // the target is half the source, so half the source cannot map without distortion
    let m = shapes::bumpy_blob(8);
    let keep: Vec<bool> = m.vertices().iter().map(|p| p.x > 0.0).collect();
    let (half, orig) = m.submesh(&keep).unwrap();
    let a = dir.path().join("full.off");
    let b = dir.path().join("half.off");
    save_mesh(&m, &a, ShapeFormat::Off).unwrap();
    save_mesh(&half, &b, ShapeFormat::Off).unwrap();
    let lm = dir.path().join("lm.txt");
    let pairs: String = (0..orig.len())
        .step_by(40)
        .map(|j| format!("{} {j}\n", orig[j]))
        .collect();
    fs::write(&lm, pairs).unwrap();
    let mut cfg = DirConfig {
        mode: Mode::Gds,
        init: InitKind::Landmarks,
        landmarks: Some(lm),
        ..DirConfig::default()
    };
    let plain = run_pipeline(&a, &b, &cfg, &dir.path().join("plain")).unwrap();
    cfg.prune = true;
    let pruned = run_pipeline(&a, &b, &cfg, &dir.path().join("pruned")).unwrap();
    let last = *cfg.lmd_thresholds.last().unwrap();
    let mut removed = 0;
    for i in 0..plain.outcome.map.len() {
        let distorted = plain.outcome.lmd.values[i] >= last;
        let expect = if distorted { None } else { plain.outcome.map.get(i) };
        assert_eq!(pruned.outcome.map.get(i), expect, "point {i}");
        removed += distorted as usize;
    }
    assert!(removed > 0 && removed < plain.outcome.map.len());
}

#[test]
fn config_errors_surface_before_loading() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.off");
    let cfg = DirConfig {
        init: InitKind::File,
        ..DirConfig::default()
    };
    // the config problem is reported even though the shapes do not exist
    match run_pipeline(&missing, &missing, &cfg, dir.path()) {
        Err(Error::Config { key, .. }) => assert_eq!(key, "init_file"),
        other => panic!("unexpected {other:?}"),
    }
}
