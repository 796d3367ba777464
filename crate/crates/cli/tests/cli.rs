use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::Duration;

use serde_json::Value;
use smokewatch_core::Image;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_smokewatch"));
    c.env("NO_COLOR", "1").env_remove("RUST_LOG");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

/// `n` 16x12 PNG samples, each with one box, plus manifest and classes.
fn write_dataset(dir: &Path, n: usize) -> PathBuf {
    std::fs::create_dir_all(dir.join("images")).unwrap();
    let mut rows = String::from("id,path,width,height,split\n");
    for i in 0..n {
        let img = Image::filled(16, 12, [(i * 20) as u8, 100, 50]).unwrap();
        std::fs::write(dir.join(format!("images/s{i}.png")), img.encode_png().unwrap()).unwrap();
        std::fs::write(dir.join(format!("images/s{i}.txt")), "0 0.25 0.5 0.25 0.5\n").unwrap();
        rows.push_str(&format!("s{i},images/s{i}.png,16,12,\n"));
    }
    let manifest = dir.join("manifest.csv");
    std::fs::write(&manifest, rows).unwrap();
    manifest
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&[]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    let o = run(&["serve"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--config"), "{}", stderr(&o));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn serve_missing_config_file() {
    let o = run(&["serve", "--config", "/nonexistent/smokewatch.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn serve_invalid_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[alerting]\nn = 3\nk = 5\n").unwrap();
    let o = run(&["serve", "--config", p(&cfg)]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

fn serve_config(dir: &Path, port: u16) -> PathBuf {
    let cfg = dir.join("smokewatch.toml");
    std::fs::write(
        &cfg,
        format!(
            "[server]\nhost = \"127.0.0.1\"\nport = {port}\n\n[store]\ndir = \"{}\"\n",
            dir.join("data").display()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn serve_listens_and_answers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = serve_config(dir.path(), 0);
    let mut child = bin()
        .args(["serve", "--config", p(&cfg)])
        .env_remove("SMOKEWATCH_PORT")
        .env_remove("SMOKEWATCH_HOST")
        .env_remove("SMOKEWATCH_STORE_DIR")
        .stderr(Stdio::piped())
        .stdout(Stdio::null())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let line = lines
        .by_ref()
        .map(Result::unwrap)
        .find(|l| l.contains("listening"))
        .expect("listening line");
    let port: u16 = line
        .split("port=")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .unwrap()
        .parse()
        .unwrap();

    let mut s = TcpStream::connect(("127.0.0.1", port)).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
    s.write_all(b"GET /healthz HTTP/1.0\r\nHost: localhost\r\n\r\n").unwrap();
    let mut resp = String::new();
    s.read_to_string(&mut resp).unwrap();
    assert!(resp.starts_with("HTTP/1.0 200") || resp.starts_with("HTTP/1.1 200"), "{resp}");

    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn serve_port_in_use_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let taken = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let cfg = serve_config(dir.path(), taken.local_addr().unwrap().port());
    let o = bin()
        .args(["serve", "--config", p(&cfg)])
        .env_remove("SMOKEWATCH_PORT")
        .env_remove("SMOKEWATCH_HOST")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot listen"), "{}", stderr(&o));
}

#[test]
fn augment_mirror_doubles_samples() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&dir.path().join("src"), 10);
    let out = dir.path().join("aug");
    let o = run(&["augment", "--in", p(&manifest), "--out", p(&out), "--mirror"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 20);
    let images = std::fs::read_dir(out.join("images"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png"))
        .count();
    assert_eq!(images, 20);

    // rerun into the same directory collides
    let o = run(&["augment", "--in", p(&manifest), "--out", p(&out), "--mirror"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("duplicate"), "{}", stderr(&o));
}

#[test]
fn augment_with_exposure() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&dir.path().join("src"), 4);
    let out = dir.path().join("aug");
    let o = run(&[
        "augment", "--in", p(&manifest), "--out", p(&out), "--mirror", "--exposure", "-0.15,0.1",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 16);
}

#[test]
fn augment_gain_out_of_band() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&dir.path().join("src"), 2);
    let out = dir.path().join("aug");
    let o = run(&["augment", "--in", p(&manifest), "--out", p(&out), "--exposure", "0.2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("0.2"), "{}", stderr(&o));
    assert!(!out.join("manifest.csv").exists());
}

fn big_manifest(dir: &Path) -> PathBuf {
    let mut rows = String::from("id,path,width,height,split\n");
    for i in 0..2712 {
        rows.push_str(&format!("img{i:04},images/img{i:04}.jpg,1280,720,\n"));
    }
    let m = dir.join("manifest.csv");
    std::fs::write(&m, rows).unwrap();
    m
}

#[test]
fn split_2712_into_fixed_counts() {
    let dir = tempfile::tempdir().unwrap();
    let m = big_manifest(dir.path());
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    for out in [&a, &b] {
        let o = run(&["split", "--in", p(&m), "--counts", "2405,228,79", "--seed", "7", "--out", p(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        assert!(stdout(&o).contains("train 2405, val 228, test 79"), "{}", stdout(&o));
    }
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    let count = |s: &str| text.lines().filter(|l| l.ends_with(&format!(",{s}"))).count();
    assert_eq!((count("train"), count("val"), count("test")), (2405, 228, 79));

    let o = run(&["split", "--in", p(&m), "--counts", "2405,228,79", "--seed", "8", "--out", p(&b)]);
    assert_eq!(o.status.code(), Some(0));
    assert_ne!(text, std::fs::read_to_string(&b).unwrap());
}

#[test]
fn split_bad_counts() {
    let dir = tempfile::tempdir().unwrap();
    let m = big_manifest(dir.path());
    let o = run(&["split", "--in", p(&m), "--counts", "2405,228,80", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("2713"), "{}", stderr(&o));
    let o = run(&["split", "--in", p(&m), "--counts", "2405,307", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(2));
    // input untouched after the failures
    assert!(std::fs::read_to_string(&m).unwrap().lines().nth(1).unwrap().ends_with(','));
}

fn eval_json(pred: &Path, truth: &Path, out: &Path) -> Value {
    let o = run(&["eval", "--pred", p(pred), "--truth", p(truth), "--out", p(out), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    serde_json::from_str(&stdout(&o)).unwrap()
}

#[test]
fn eval_matches_committed_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let got = eval_json(
        &fixture("eval/predictions.csv"),
        &fixture("eval/dataset/manifest.csv"),
        dir.path(),
    );
    let want: Value =
        serde_json::from_str(&std::fs::read_to_string(fixture("eval/expected.json")).unwrap()).unwrap();
    let close = |a: &Value, b: &Value| (a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-9;
    assert!(close(&got["map"], &want["map"]), "{} vs {}", got["map"], want["map"]);
    for (c, ap) in want["per_class_ap"].as_object().unwrap() {
        assert!(close(&got["per_class"][c]["ap"], ap), "class {c}");
    }
    assert_eq!(got["counts"]["tps"], want["tps"]);
    assert_eq!(got["counts"]["fps"], want["fps"]);
    assert_eq!(got["best_f1"]["threshold"], want["best_f1"]["threshold"]);
    assert!(close(&got["best_f1"]["f1"], &want["best_f1"]["f1"]));
    for f in ["summary.csv", "summary.txt", "pr_curve.csv", "f1_curve.csv", "pr_curve.svg", "f1_curve.svg"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn eval_perfect_and_empty() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&dir.path().join("ds"), 3);
    // label 0 0.25 0.5 0.25 0.5 on 16x12 -> (2, 3, 6, 9)
    let perfect = dir.path().join("perfect.csv");
    let mut rows = String::from("image_id,class_id,confidence,x1,y1,x2,y2\n");
    for i in 0..3 {
        rows.push_str(&format!("s{i},0,0.9,2,3,6,9\n"));
    }
    std::fs::write(&perfect, rows).unwrap();
    let v = eval_json(&perfect, &manifest, &dir.path().join("r1"));
    assert_eq!(v["map"], 1.0);
    assert_eq!(v["best_f1"]["f1"], 1.0);

    let o = run(&["eval", "--pred", p(&perfect), "--truth", p(&manifest), "--out", p(&dir.path().join("r3"))]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("mAP@0.5: 1.000"), "{}", stdout(&o));

    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "image_id,class_id,confidence,x1,y1,x2,y2\n").unwrap();
    let v = eval_json(&empty, &manifest, &dir.path().join("r2"));
    assert_eq!(v["map"], 0.0);
    assert_eq!(v["best_f1"]["f1"], 0.0);
}

#[test]
fn eval_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = write_dataset(&dir.path().join("ds"), 1);
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "image_id,class_id,confidence,x1,y1,x2,y2\ns0,0,1.5,0,0,1,1\n").unwrap();
    let out = dir.path().join("r");
    let o = run(&["eval", "--pred", p(&bad), "--truth", p(&manifest), "--out", p(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("record 1"), "{}", stderr(&o));
    let o = run(&["eval", "--pred", p(&bad), "--truth", p(&manifest), "--out", p(&out), "--iou", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

fn detect_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let img = dir.join("ridge.png");
    std::fs::write(&img, Image::filled(128, 96, [30, 30, 30]).unwrap().encode_png().unwrap()).unwrap();
    let fx = dir.join("fixture.json");
    std::fs::write(
        &fx,
        r#"{"model_id": "mock-smoke", "records": [{"image_id": "ridge", "detections": [
            {"x1": 10, "y1": 20, "x2": 60, "y2": 70, "confidence": 0.91},
            {"x1": 64, "y1": 10, "x2": 120, "y2": 40, "class_id": 0, "confidence": 0.5},
            {"x1": 0, "y1": 0, "x2": 5, "y2": 5, "confidence": 0.1}]}]}"#,
    )
    .unwrap();
    (img, fx)
}

#[test]
fn detect_mock_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let (img, fx) = detect_fixture(dir.path());
    let o = run(&["detect", "--image", p(&img), "--fixture", p(&fx)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("2 detection(s)"), "{text}");
    assert!(text.contains("0.9100") && text.contains("0.5000"), "{text}");
    assert!(!text.contains('\x1b'));

    let annotated = dir.path().join("out.png");
    let o = run(&["detect", "--image", p(&img), "--fixture", p(&fx), "--json", "--annotate", p(&annotated)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["model_id"], "mock-smoke");
    let dets = v["detections"].as_array().unwrap();
    assert_eq!(dets.len(), 2);
    let b = &dets[0]["box"];
    for (k, want) in [("x1", 10.0), ("y1", 20.0), ("x2", 60.0), ("y2", 70.0)] {
        assert!((b[k].as_f64().unwrap() - want).abs() < 1e-6, "{k}: {b}");
    }
    let drawn = Image::decode(&std::fs::read(&annotated).unwrap()).unwrap();
    assert_eq!(drawn.pixel(10, 40), [255, 0, 0]);
    assert_eq!(drawn.pixel(100, 90), [30, 30, 30]);
}

#[test]
fn detect_unreadable_image() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["detect", "--image", p(&dir.path().join("missing.png"))]);
    assert_eq!(o.status.code(), Some(2));
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    let o = run(&["detect", "--image", p(&junk)]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn detect_unreachable_endpoint() {
    let dir = tempfile::tempdir().unwrap();
    let (img, _) = detect_fixture(dir.path());
    let o = run(&["detect", "--image", p(&img), "--backend", "external", "--endpoint", "http://127.0.0.1:1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("backend"), "{}", stderr(&o));
    let o = run(&["detect", "--image", p(&img), "--backend", "external"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}
