use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use volsplat::image_io::read_pfm;
use volsplat::report::FitReportRecord;
use volsplat::scene_file::read_scene;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_volsplat"));
    c.env_remove("VOLSPLAT_THREADS");
    c
}

fn asset(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("assets")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn volsplat")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn render_matches_golden_png() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.png");
    let o = run(&[
        "render",
        "--scene",
        s(&asset("test_scene.json")),
        "--camera",
        s(&asset("test_camera.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let golden = std::fs::read(asset("golden_test_scene.png")).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), golden);
}

#[test]
fn missing_scene_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no_such_scene.json");
    let out = dir.path().join("r.png");
    let o = run(&[
        "render",
        "--scene",
        s(&missing),
        "--camera",
        s(&asset("test_camera.json")),
        "--out",
        s(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_scene.json"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn bad_config_leaves_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("r.png");
    let pfm = dir.path().join("c.pfm");
    let o = run(&[
        "render",
        "--scene",
        s(&asset("test_scene.json")),
        "--camera",
        s(&asset("test_camera.json")),
        "--out",
        s(&out),
        "--pfm-color",
        s(&pfm),
        "--eta",
        "1.5",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("eta"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

    let o = run(&[
        "render",
        "--scene",
        s(&asset("test_scene.json")),
        "--camera",
        s(&asset("test_camera.json")),
        "--out",
        s(&dir.path().join("r.jpg")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn usage_error_exits_2() {
    let o = run(&["render", "--scene"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["no-such-command"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("extract-texture"));
}

fn render_pfm(dir: &Path, name: &str, extra: &[&str]) -> volsplat::core::Image {
    let pfm = dir.join(format!("{name}.pfm"));
    let mut args = vec![
        "render".to_string(),
        "--scene".into(),
        s(&asset("test_scene.json")).into(),
        "--camera".into(),
        s(&asset("test_camera.json")).into(),
        "--out".into(),
        s(&dir.join(format!("{name}.png"))).into(),
        "--pfm-color".into(),
        s(&pfm).into(),
    ];
    args.extend(extra.iter().map(|a| a.to_string()));
    let o = bin().args(&args).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    read_pfm(&pfm).unwrap()
}

#[test]
fn no_coarse_matches_default() {
    let dir = tempfile::tempdir().unwrap();
    let a = render_pfm(dir.path(), "coarse", &[]);
    let b = render_pfm(dir.path(), "exhaustive", &["--no-coarse"]);
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    assert!(diff < 1e-2, "max diff {diff}");
}

#[test]
fn pfm_buffers_are_consistent() {
    let dir = tempfile::tempdir().unwrap();
    let (alpha, weights) = (dir.path().join("a.pfm"), dir.path().join("w.pfm"));
    let o = run(&[
        "render",
        "--scene",
        s(&asset("test_scene.json")),
        "--camera",
        s(&asset("test_camera.json")),
        "--out",
        s(&dir.path().join("r.png")),
        "--pfm-alpha",
        s(&alpha),
        "--pfm-weights",
        s(&weights),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let a = read_pfm(&alpha).unwrap();
    let w = read_pfm(&weights).unwrap();
    assert_eq!((a.height(), a.width(), a.channels()), (48, 48, 1));
    // Weights are T·e^q ≤ e^q and alpha = 1 − exp(−τΣe^q) ≤ τΣe^q, both
    // bounded by one. Everything is nonnegative.
    for (x, y) in a.data().iter().zip(w.data()) {
        assert!((0.0..=1.0).contains(x));
        assert!(*y >= 0.0);
    }
    assert!(a.data().iter().any(|&v| v > 0.05));
}

#[test]
fn convert_obj_cube_matches_spacing_formula() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cube.json");
    let o = run(&[
        "convert",
        "--input",
        s(&asset("cube.obj")),
        "--out",
        s(&out),
        "--zeta",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let scene = read_scene(&out).unwrap();
    assert_eq!(scene.len(), 8);

    // Oracle: fan-triangulate the same quads, collect unique edges, average
    // the incident lengths per vertex and apply σ² = (d/2)²/ln(1/ζ).
    let text = std::fs::read_to_string(asset("cube.obj")).unwrap();
    let mut v: Vec<[f64; 3]> = Vec::new();
    let mut edges = std::collections::BTreeSet::new();
    for line in text.lines() {
        let t: Vec<&str> = line.split_whitespace().collect();
        match t.first() {
            Some(&"v") => v.push([
                t[1].parse().unwrap(),
                t[2].parse().unwrap(),
                t[3].parse().unwrap(),
            ]),
            Some(&"f") => {
                let idx: Vec<usize> = t[1..]
                    .iter()
                    .map(|x| x.parse::<usize>().unwrap() - 1)
                    .collect();
                for k in 1..idx.len() - 1 {
                    for (a, b) in [(idx[0], idx[k]), (idx[k], idx[k + 1]), (idx[k + 1], idx[0])] {
                        edges.insert((a.min(b), a.max(b)));
                    }
                }
            }
            _ => {}
        }
    }
    let mut sum = [0.0; 8];
    let mut cnt = [0.0; 8];
    for &(a, b) in &edges {
        let d = ((0..3).map(|i| (v[a][i] - v[b][i]).powi(2)).sum::<f64>()).sqrt();
        sum[a] += d;
        sum[b] += d;
        cnt[a] += 1.0;
        cnt[b] += 1.0;
    }
    for (k, kern) in scene.kernels().iter().enumerate() {
        let d = sum[k] / cnt[k];
        let var = (d / 2.0).powi(2) / 2f64.ln();
        let m = kern.inv_cov.to_row_major();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 / var } else { 0.0 };
                assert!((m[3 * i + j] - expect).abs() < 1e-9 * expect.max(1.0));
            }
        }
        assert_eq!(kern.center.to_array(), v[k]);
    }
}

#[test]
fn convert_rejects_zeta_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("cube.json");
    let o = run(&[
        "convert",
        "--input",
        s(&asset("cube.obj")),
        "--out",
        s(&out),
        "--zeta",
        "1.0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("zeta"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn ply_convert_then_render() {
    let dir = tempfile::tempdir().unwrap();
    let ply = dir.path().join("cloud.ply");
    let mut body = String::from(
        "ply\nformat ascii 1.0\nelement vertex 27\nproperty float x\nproperty float y\n\
         property float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
    );
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                body.push_str(&format!(
                    "{} {} {} {} {} 200\n",
                    0.3 * i as f64 - 0.3,
                    0.3 * j as f64 - 0.3,
                    0.3 * k as f64 - 0.3,
                    80 * i,
                    80 * j
                ));
            }
        }
    }
    std::fs::write(&ply, body).unwrap();
    let scene = dir.path().join("cloud.json");
    let o = run(&[
        "convert",
        "--input",
        s(&ply),
        "--out",
        s(&scene),
        "--neighbors",
        "4",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(read_scene(&scene).unwrap().len(), 27);
    let o = run(&[
        "render",
        "--scene",
        s(&scene),
        "--camera",
        s(&asset("test_camera.json")),
        "--out",
        s(&dir.path().join("cloud.png")),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn gradcheck_bundled_scene_passes() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("g.json");
    let o = run(&["gradcheck", "--report", s(&rep)]);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS")));
    let rec: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(rec["passed"], serde_json::Value::Bool(true));
    assert_eq!(rec["per_class"].as_array().unwrap().len(), 5);
}

#[test]
fn gradcheck_tiny_tolerance_fails_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"gradcheck_tolerance": 1e-14}"#).unwrap();
    let o = run(&["gradcheck", "--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL")));
}

fn fit_shape_demo(dir: &Path, tag: &str) -> (Vec<u8>, Vec<u8>) {
    let rep = dir.join(format!("{tag}.json"));
    let csv = dir.join(format!("{tag}.csv"));
    let o = run(&[
        "fit-shape",
        "--config",
        s(&asset("fit_shape_demo.json")),
        "--target",
        s(&asset("cube.obj")),
        "--report",
        s(&rep),
        "--trace",
        s(&csv),
        "--seed",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    (std::fs::read(&rep).unwrap(), std::fs::read(&csv).unwrap())
}

#[test]
fn fit_shape_demo_writes_deterministic_report() {
    let dir = tempfile::tempdir().unwrap();
    let (a_json, a_csv) = fit_shape_demo(dir.path(), "a");
    let (b_json, b_csv) = fit_shape_demo(dir.path(), "b");
    assert_eq!(a_json, b_json);
    assert_eq!(a_csv, b_csv);
    let rec: FitReportRecord = serde_json::from_slice(&a_json).unwrap();
    assert_eq!(rec.procedure, "fit-shape");
    assert_eq!(rec.iterations, 40);
    assert!(rec.final_loss < rec.initial_loss);
    assert!(rec.metrics["mean_iou"] > rec.metrics["initial_mean_iou"]);
    assert_eq!(String::from_utf8(a_csv).unwrap().lines().count(), 41);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let mut outs = Vec::new();
    for (i, t) in ["1", "2"].iter().enumerate() {
        let rep = dir.path().join(format!("{i}.json"));
        let o = bin()
            .env("VOLSPLAT_THREADS", t)
            .args([
                "fit-pose",
                "--scene",
                s(&asset("test_scene.json")),
                "--target-camera",
                s(&asset("test_camera.json")),
                "--report",
                s(&rep),
            ])
            .arg("--config")
            .arg(s(&asset("fit_pose_demo.json")))
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outs.push(std::fs::read(&rep).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    let rec: FitReportRecord = serde_json::from_slice(&outs[0]).unwrap();
    assert!(rec.metrics["rotation_error"] < 0.05, "{:?}", rec.metrics);
}

#[test]
fn zero_threads_is_a_config_error() {
    let o = run(&["--threads", "0", "gradcheck"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bin()
        .env("VOLSPLAT_THREADS", "many")
        .arg("gradcheck")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn fit_translation_recovers_offsets() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.json");
    std::fs::write(
        &cfg,
        r#"{"iters": 150, "target_offsets": [[0,0,0],[0.6,0.3,1.5]],
            "init_offsets": [[0.25,-0.2,0.3],[0.3,0.55,1.2]]}"#,
    )
    .unwrap();
    let cam = dir.path().join("cam.json");
    std::fs::write(
        &cam,
        r#"{"version":1,"R":[1,0,0,0,1,0,0,0,1],"T":[0,0,5],"F":60,"Ox":23.5,"Oy":23.5,"H":48,"W":48}"#,
    )
    .unwrap();
    let rep = dir.path().join("r.json");
    let cube = asset("cube.obj");
    let o = run(&[
        "fit-translation",
        "--config",
        s(&cfg),
        "--parts",
        s(&cube),
        s(&cube),
        "--camera",
        s(&cam),
        "--report",
        s(&rep),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rec: FitReportRecord = serde_json::from_slice(&std::fs::read(&rep).unwrap()).unwrap();
    let volsplat::report::FitOutcome::Translations { offsets } = rec.result else {
        panic!("expected translations")
    };
    let truth = [[0.0, 0.0, 0.0], [0.6, 0.3, 1.5]];
    for (o, t) in offsets.iter().zip(truth) {
        for i in 0..3 {
            assert!((o[i] - t[i]).abs() < 0.01, "{offsets:?}");
        }
    }
}

#[test]
fn fit_translation_without_target_is_config_error() {
    let cube = asset("cube.obj");
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "fit-translation",
        "--parts",
        s(&cube),
        "--camera",
        s(&asset("test_camera.json")),
        "--report",
        s(&dir.path().join("r.json")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("target"));
}

#[test]
fn extract_then_rerender_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("obs.png");
    let attrs = dir.path().join("attrs.json");
    let back = dir.path().join("back.png");
    let scene = s(&asset("test_scene.json")).to_string();
    let camera = s(&asset("test_camera.json")).to_string();
    let o = run(&[
        "render",
        "--scene",
        &scene,
        "--camera",
        &camera,
        "--out",
        s(&img),
    ]);
    assert_eq!(o.status.code(), Some(0));
    let o = run(&[
        "extract-texture",
        "--image",
        s(&img),
        "--scene",
        &scene,
        "--camera",
        &camera,
        "--out",
        s(&attrs),
        "--normalized",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("masked"));
    let o = run(&[
        "rerender",
        "--scene",
        &scene,
        "--attrs",
        s(&attrs),
        "--camera",
        &camera,
        "--out",
        s(&back),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = volsplat::image_io::read_png(&img).unwrap().image;
    let b = volsplat::image_io::read_png(&back).unwrap().image;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.data().len() as f64;
    assert!(mse < 1e-3, "mse {mse}");
}

#[test]
fn bench_writes_readable_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("bench.json");
    let o = run(&[
        "bench",
        "--out",
        s(&out),
        "--kernels",
        "200",
        "--sizes",
        "16,32",
        "--repeats",
        "1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = volsplat::bench::read_bench_report(&out).unwrap();
    assert_eq!(r.results.len(), 3);
    assert!(r.results.iter().all(|b| b.images_per_second > 0.0));
}
