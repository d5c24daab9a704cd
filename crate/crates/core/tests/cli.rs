use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lapreg::tooling::read_pose;

fn lapreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lapreg"))
        .args(args)
        .env_remove("P2ILF_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes `count` synthetic cases into `dir` and returns their manifests.
fn synth(dir: &Path, count: usize, seed: u64) -> Vec<PathBuf> {
    let out = lapreg(&[
        "synth",
        "--out-dir",
        s(dir),
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let manifests: Vec<PathBuf> = stdout(&out).lines().map(PathBuf::from).collect();
    assert_eq!(manifests.len(), count);
    manifests
}

/// Parses CSV output into a header and rows.
fn table(text: &str) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

#[test]
fn synth_register_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let case = &synth(&dir.path().join("cases"), 1, 11)[0];
    let pose = dir.path().join("pose.json");
    let trace = dir.path().join("trace.csv");
    let out = lapreg(&[
        "register",
        "--method",
        "landmark-dr",
        "--case",
        s(case),
        "--seed",
        "5",
        "--out",
        s(&pose),
        "--trace",
        s(&trace),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));

    let (header, rows) = table(&std::fs::read_to_string(&trace).unwrap());
    assert_eq!(header, ["restart", "iteration", "loss"]);
    let restarts: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(restarts.len(), 30);
    assert_eq!(rows.len(), 30 * 151);

    let out = lapreg(&["eval-reg", s(case), "--pred", s(&pose)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = table(&stdout(&out));
    assert_eq!(header, ["case", "ridge", "ligament", "combined", "hausdorff"]);
    let combined: f64 = rows[0][3].parse().unwrap();
    assert!(combined <= 5.0, "reprojection {combined} px");
}

#[test]
fn register_from_individual_files() {
    let dir = tempfile::tempdir().unwrap();
    let case = &synth(dir.path(), 1, 2)[0];
    let root = case.parent().unwrap();
    let pose = dir.path().join("pose.json");
    let out = lapreg(&[
        "register",
        "--method",
        "pnp-ransac",
        "--mesh",
        s(&root.join("mesh.obj")),
        "--landmarks3d",
        s(&root.join("landmarks3d.json")),
        "--landmarks2d",
        s(&root.join("landmarks2d.png")),
        "--camera",
        s(&root.join("camera.json")),
        "--out",
        s(&pose),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let got = read_pose(&pose).unwrap();
    let gt = read_pose(&root.join("pose.json")).unwrap();
    assert!(got.rotation_distance(&gt).to_degrees() < 2.0);
}

#[test]
fn outputs_are_deterministic_given_the_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(&dir.path().join("a"), 2, 9);
    let b = synth(&dir.path().join("b"), 2, 9);
    for (x, y) in a.iter().zip(&b) {
        for f in ["mesh.obj", "image.png", "landmarks2d.png", "mask.png", "pose.json", "camera.json", "case.json"] {
            let fx = std::fs::read(x.parent().unwrap().join(f)).unwrap();
            let fy = std::fs::read(y.parent().unwrap().join(f)).unwrap();
            assert!(fx == fy, "{f} differs");
        }
    }
    let run = |name: &str, seed: &str| {
        let pose = dir.path().join(format!("{name}.json"));
        let trace = dir.path().join(format!("{name}.csv"));
        let out = Command::new(env!("CARGO_BIN_EXE_lapreg"))
            .args(["register", "--method", "silhouette", "--case", s(&a[0]), "--restarts", "3"])
            .args(["--iterations", "20", "--out", s(&pose), "--trace", s(&trace)])
            .env("P2ILF_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        (std::fs::read(pose).unwrap(), std::fs::read(trace).unwrap())
    };
    assert_eq!(run("first", "17"), run("second", "17"));
}

#[test]
fn evaluation_tables_are_ordered_and_use_sentinels() {
    let dir = tempfile::tempdir().unwrap();
    let cases = synth(&dir.path().join("cases"), 3, 4);
    let preds = dir.path().join("preds");
    std::fs::create_dir(&preds).unwrap();
    std::fs::copy(cases[1].parent().unwrap().join("pose.json"), preds.join("case_001.json")).unwrap();

    let mut args = vec!["eval-reg", "--pred", s(&preds), "--jobs", "2"];
    let reversed: Vec<&str> = cases.iter().rev().map(|p| s(p)).collect();
    args.extend(&reversed);
    let out = lapreg(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (_, rows) = table(&stdout(&out));
    let ids: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(ids, ["case_000", "case_001", "case_002"]);
    assert_eq!(rows[0][1..], ["F", "F", "F", "F"]);
    assert!(rows[1][3].parse::<f64>().unwrap() <= 1.0);

    let gt_map = cases[0].parent().unwrap().join("landmarks2d.png");
    let out = lapreg(&["eval-2d", s(&cases[0]), "--pred", s(&gt_map)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = table(&stdout(&out));
    assert_eq!(header.len(), 10);
    for (name, value) in header.iter().zip(&rows[0]).skip(1) {
        let v: f64 = value.parse().unwrap();
        let expected = if name.ends_with("_g") { 0.0 } else { 1.0 };
        assert_eq!(v, expected, "{name}");
    }

    let gt3d = cases[0].parent().unwrap().join("landmarks3d.json");
    let out = lapreg(&["eval-3d", s(&cases[0]), "--pred", s(&gt3d)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = table(&stdout(&out));
    assert_eq!(header, ["case", "ridge", "ligament", "mean"]);
    assert!(rows[0][1..].iter().all(|v| v.parse::<f64>().unwrap() == 0.0));
}

#[test]
fn overlay_is_written() {
    let dir = tempfile::tempdir().unwrap();
    let case = &synth(dir.path(), 1, 1)[0];
    let png = dir.path().join("overlay.png");
    let pose = case.parent().unwrap().join("pose.json");
    let out = lapreg(&["render-overlay", "--case", s(case), "--pose", s(&pose), "--out", s(&png)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let img = lapreg::tooling::read_rgb_png(&png).unwrap();
    assert!(img.pixels().iter().any(|&p| p == lapreg::tooling::RIDGE_COLOR));
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&lapreg(&["register", "--bogus"])), 1);
    assert_eq!(code(&lapreg(&["frobnicate"])), 1);
    assert_eq!(code(&lapreg(&[])), 1);
    assert_eq!(code(&lapreg(&["--help"])), 0);
    assert_eq!(code(&lapreg(&["--version"])), 0);
}

#[test]
fn corrupt_mesh_exits_with_two_and_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let case = &synth(dir.path(), 1, 3)[0];
    let mesh = case.parent().unwrap().join("mesh.obj");
    std::fs::write(&mesh, "v 0 0 0\nv 1 0 0\nf 1 2 9\nthis is not obj\n").unwrap();
    let out = lapreg(&[
        "register",
        "--method",
        "pnp",
        "--case",
        s(case),
        "--out",
        s(&dir.path().join("p.json")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("mesh.obj"), "{}", stderr(&out));
}

#[test]
fn algorithmic_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let case = &synth(dir.path(), 1, 3)[0];
    let far = dir.path().join("behind.json");
    std::fs::write(&far, r#"{"R": [1,0,0,0,1,0,0,0,1], "t": [0, 0, -900]}"#).unwrap();
    let out = lapreg(&[
        "register",
        "--method",
        "chamfer-dr",
        "--case",
        s(case),
        "--init",
        s(&far),
        "--out",
        s(&dir.path().join("p.json")),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
}
