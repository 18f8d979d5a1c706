use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use shape_transfer::geometry::{load_mesh, load_point_cloud, PointCloud, TriangleMesh};
use shape_transfer::synthetic::DrillShape;

const TUNED: [&str; 6] = ["--beta", "0.2", "--lambda", "3000", "--sigma2", "1e-4"];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shape-transfer"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn synth(dir: &Path, n: usize, leaf: &str) {
    ok(&[
        "synth",
        "-o",
        dir.to_str().unwrap(),
        "-n",
        &n.to_string(),
        "--leaf",
        leaf,
        "--extras",
    ]);
}

fn train(data: &Path, model: &Path) {
    let mut args = vec![
        "train",
        data.to_str().unwrap(),
        "-o",
        model.to_str().unwrap(),
    ];
    args.extend(TUNED);
    ok(&args);
}

#[test]
fn train_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 4, "0.03");
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    train(&data, &a);
    train(&data, &b);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn single_view_inference_completes_the_hidden_handle() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 6, "0.015");
    let model = dir.path().join("model.json");
    train(&data, &model);

    let view_path = data.join("views/inst03.ply");
    let view: PointCloud<f64> = load_point_cloud(&view_path).unwrap();
    let below = |p: &&nalgebra::Vector3<f64>| p.z < -0.005;
    assert_eq!(view.iter().filter(below).count(), 0);

    let out = dir.path().join("out");
    ok(&[
        "infer",
        model.to_str().unwrap(),
        view_path.to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--view",
        "single",
        "--sigma2",
        "1e-4",
    ]);
    let completed: PointCloud<f64> = load_point_cloud(out.join("completed.ply")).unwrap();
    let mesh: TriangleMesh<f64> = load_mesh(data.join("meshes/inst03.ply")).unwrap();
    let handle: Vec<_> = completed.iter().filter(below).collect();
    assert!(
        handle.len() > 10,
        "{} completed points below the body",
        handle.len()
    );
    let mean = handle.iter().map(|p| mesh.distance_to(p)).sum::<f64>() / handle.len() as f64;
    assert!(mean < 0.02, "mean distance to the true surface {mean}");

    let fit: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    assert!(fit.get("x").is_some());
    let descriptor = fs::read_to_string(out.join("descriptor.json")).unwrap();
    assert!(descriptor.contains("\"grasp\""));
}

#[test]
fn eval_on_eight_instances_writes_four_folds() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, 8, "0.03");
    let csv_path = dir.path().join("eval.csv");
    let mut args = vec![
        "eval",
        data.to_str().unwrap(),
        "--csv",
        csv_path.to_str().unwrap(),
        "--fit-sigma2",
        "1e-4",
    ];
    args.extend(TUNED);
    ok(&args);
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    let headers = reader.headers().unwrap().clone();
    assert_eq!(&headers[0], "fold");
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    let mut folds: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    folds.dedup();
    assert_eq!(folds, ["0", "1", "2", "3"]);
    for r in &rows {
        assert_ne!(&r[1], &r[2], "held-out instance used as template");
        let position: f64 = r[4].parse().unwrap();
        assert!(position.is_finite());
    }
}

#[test]
fn scan_writes_points_on_the_mesh() {
    let dir = tempfile::tempdir().unwrap();
    let mesh_path = dir.path().join("drill.ply");
    let mesh = DrillShape::nominal().mesh::<f64>().unwrap();
    shape_transfer::geometry::save_mesh(&mesh, &mesh_path).unwrap();
    let cloud_path = dir.path().join("cloud.ply");
    let m = mesh_path.to_str().unwrap();
    let c = cloud_path.to_str().unwrap();

    ok(&["scan", m, "-o", c, "--resolution", "60"]);
    let full: PointCloud<f64> = load_point_cloud(&cloud_path).unwrap();
    assert!(full.len() > 100);
    assert!(full.iter().all(|p| mesh.distance_to(p) < 1e-6));

    ok(&[
        "scan",
        m,
        "-o",
        c,
        "--view",
        "single",
        "--camera",
        "0,0,-0.5",
        "--resolution",
        "60",
    ]);
    let single: PointCloud<f64> = load_point_cloud(&cloud_path).unwrap();
    assert!(single.len() < full.len());
    assert!(single.iter().all(|p| p.z < 1e-9));
}

#[test]
fn sample_motion_respects_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("motion.json");
    let mut motion = DrillShape::nominal().grasp::<f64>();
    motion.space = shape_transfer::transfer::SpaceTag::Canonical;
    motion.save(&path).unwrap();
    let out = ok(&[
        "sample-motion",
        path.to_str().unwrap(),
        "-n",
        "20",
        "--seed",
        "3",
        "--max-angle",
        "0.1",
    ]);
    let samples: Vec<serde_json::Value> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(samples.len(), 20);
    for s in samples {
        let d =
            shape_transfer::transfer::GraspDescriptor::<f64>::from_json(&s.to_string()).unwrap();
        for (a, b) in d.poses.iter().zip(&motion.poses) {
            assert!((a.position - b.position).norm() <= 0.04);
            assert!(a.angle_to(b) <= 0.1 + 1e-12);
        }
    }
    let again = ok(&[
        "sample-motion",
        path.to_str().unwrap(),
        "-n",
        "20",
        "--seed",
        "3",
        "--max-angle",
        "0.1",
    ]);
    assert_eq!(out.stdout, again.stdout);
}

#[test]
fn exit_codes_classify_failures() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(
        run(&["sample-motion", missing.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );

    let data = dir.path().join("data");
    synth(&data, 3, "0.03");
    let model = dir.path().join("m.json");
    let d = data.to_str().unwrap();
    let m = model.to_str().unwrap();
    assert_eq!(
        run(&["train", d, "-o", m, "--omega", "1.5"]).status.code(),
        Some(3)
    );
    assert_eq!(
        run(&["train", d, "-o", m, "--canonical", "nope"])
            .status
            .code(),
        Some(3)
    );
    assert_eq!(run(&["no-such-command"]).status.code(), Some(3));
    let mesh = data.join("meshes/inst00.ply");
    let scan = run(&["scan", mesh.to_str().unwrap(), "-o", m, "--view", "single"]);
    assert_eq!(scan.status.code(), Some(3));
    assert_eq!(run(&["scan", d, "-o", m]).status.code(), Some(2));

    // An instance far from the template leaves the pulled-back poses with
    // no kernel support.
    let inst = data.join("instances/inst01.ply");
    let cloud: PointCloud<f64> = load_point_cloud(&inst).unwrap();
    let moved = cloud
        .map(|p| p + nalgebra::Vector3::new(100.0, 0.0, 0.0))
        .unwrap();
    shape_transfer::geometry::save_point_cloud(&moved, &inst, None).unwrap();
    let out = run(&["train", d, "-o", m, "--sigma2", "1e-4", "--omega", "0"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("do not overlap"));
}
