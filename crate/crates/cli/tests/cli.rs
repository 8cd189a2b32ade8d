use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use orientrace_cli::doc::ModelDocument;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_orientrace"));
    c.env_remove("ORIENTRACE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(dir: &TempDir, name: &str) -> PathBuf {
    dir.path().join(name)
}

fn s(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn phantom(dir: &TempDir, name: &str, extra: &[&str]) -> PathBuf {
    let out = p(dir, name);
    let mut args = vec!["phantom", "--out", s(&out)];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read_model(path: &Path) -> ModelDocument {
    ModelDocument::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn parse_error(stdout: &[u8]) -> f64 {
    let text = String::from_utf8_lossy(stdout);
    let line = text
        .lines()
        .find(|l| l.contains("error:") || l.contains("deviation:"))
        .unwrap_or_else(|| panic!("no figure in {text}"));
    line.rsplit(':').next().unwrap().trim().parse().unwrap()
}

// ---- phantom ----------------------------------------------------------

#[test]
fn straight_phantom_writes_image_and_truth() {
    let d = TempDir::new().unwrap();
    let img = phantom(
        &d,
        "s.png",
        &["--scene", "straight", "--width", "8", "--contrast", "0.3"],
    );
    assert!(img.exists());
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(img.with_extension("json")).unwrap())
            .unwrap();
    let line = truth["centerlines"][0]
        .as_array()
        .expect("centerline listed");
    assert!(!line.is_empty());
    assert!(line.iter().all(|p| p[2].as_f64() == Some(8.0)));
}

#[test]
fn crossing_phantom_truth_has_one_crossing() {
    let d = TempDir::new().unwrap();
    let img = phantom(&d, "x.png", &["--scene", "crossing", "--angle", "60"]);
    let truth: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(img.with_extension("json")).unwrap())
            .unwrap();
    assert_eq!(truth["topology"]["crossings"], 1);
}

// ---- score and reconstruct -------------------------------------------

#[test]
fn cake_score_round_trip_is_exact() {
    let d = TempDir::new().unwrap();
    let img = phantom(&d, "s.png", &["--scene", "straight"]);
    let score = p(&d, "u");
    let o = run(&["score", "--input", s(&img), "--out", s(&score)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rec = p(&d, "r.png");
    let o = run(&[
        "reconstruct",
        "--score",
        s(&score),
        "--input",
        s(&img),
        "--out",
        s(&rec),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let err = parse_error(&o.stdout);
    assert!(err < 1e-3, "{err}");
    assert!(rec.exists());
}

#[test]
fn gabor_score_cannot_be_inverted() {
    let d = TempDir::new().unwrap();
    let img = phantom(&d, "s.png", &["--scene", "straight"]);
    let score = p(&d, "g");
    let o = run(&[
        "score",
        "--input",
        s(&img),
        "--wavelet",
        "gabor",
        "--out",
        s(&score),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = run(&[
        "reconstruct",
        "--score",
        s(&score),
        "--out",
        s(&p(&d, "r.png")),
    ]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn odd_orientation_count_is_a_usage_error() {
    let d = TempDir::new().unwrap();
    let img = phantom(&d, "s.png", &["--scene", "straight"]);
    let o = run(&[
        "score",
        "--input",
        s(&img),
        "--orientations",
        "35",
        "--out",
        s(&p(&d, "u")),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_flag_and_missing_input() {
    assert_eq!(code(&run(&["score", "--bogus"])), 2);
    let d = TempDir::new().unwrap();
    let o = run(&[
        "score",
        "--input",
        s(&p(&d, "none.png")),
        "--out",
        s(&p(&d, "u")),
    ]);
    assert_eq!(code(&o), 2);
}

// ---- track ------------------------------------------------------------

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let path = p(dir, name);
    std::fs::write(&path, text).unwrap();
    path
}

fn crossing_seeds(d: &TempDir) -> (PathBuf, PathBuf) {
    let img = phantom(d, "x.png", &["--scene", "crossing", "--angle", "60"]);
    let a = 60f64.to_radians();
    let (x0, y0) = (128.0 - 100.0 * a.cos(), 128.0 - 100.0 * a.sin());
    let seeds = write(
        d,
        "seeds.json",
        &format!(
            r#"{{"seeds": [{{"c": [20.0, 128.0], "theta": 0.0}}, {{"c": [{x0}, {y0}], "theta": {a}}}]}}"#
        ),
    );
    (img, seeds)
}

fn extent(seg: &orientrace_cli::doc::SegmentDoc) -> f64 {
    let (a, b) = (seg.points.first().unwrap(), seg.points.last().unwrap());
    (b.cx - a.cx).hypot(b.cy - a.cy)
}

#[test]
fn etos_tracks_both_vessels_of_a_crossing() {
    let d = TempDir::new().unwrap();
    let (img, seeds) = crossing_seeds(&d);
    let out = p(&d, "m.json");
    let o = run(&[
        "track",
        "--input",
        s(&img),
        "--seeds",
        s(&seeds),
        "--out",
        s(&out),
        "--overlay",
        s(&p(&d, "o.png")),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_model(&out);
    assert_eq!(m.segments.len(), 2);
    // Horizontal vessel from x = 20 to the right border, the other from its
    // seed to the bottom border.
    assert!(extent(&m.segments[0]) > 200.0, "{}", extent(&m.segments[0]));
    assert!(extent(&m.segments[1]) > 170.0, "{}", extent(&m.segments[1]));
    assert!(m
        .segments
        .iter()
        .all(|s| s.points.iter().all(|q| q.width.is_some())));
    assert!(p(&d, "o.png").exists());
}

#[test]
fn ctos_writes_centerlines_only() {
    let d = TempDir::new().unwrap();
    let (img, seeds) = crossing_seeds(&d);
    let out = p(&d, "m.json");
    let o = run(&[
        "track",
        "--algo",
        "ctos",
        "--input",
        s(&img),
        "--seeds",
        s(&seeds),
        "--max-steps",
        "40",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_model(&out);
    assert_eq!(m.segments.len(), 2);
    for q in m.segments.iter().flat_map(|s| &s.points) {
        assert!(q.width.is_none() && q.ux.is_none() && q.vy.is_none());
    }
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.contains("\"width\": null"));
}

#[test]
fn empty_seed_list_gives_an_empty_model() {
    let d = TempDir::new().unwrap();
    let img = phantom(&d, "s.png", &["--scene", "straight"]);
    let seeds = write(&d, "seeds.json", "[]");
    let out = p(&d, "m.json");
    let o = run(&[
        "track",
        "--input",
        s(&img),
        "--seeds",
        s(&seeds),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    assert!(read_model(&out).segments.is_empty());
}

#[test]
fn malformed_seed_file_is_a_usage_error() {
    let d = TempDir::new().unwrap();
    let img = phantom(&d, "s.png", &["--scene", "straight"]);
    let seeds = write(&d, "seeds.json", r#"{"seeds": [{"c": [1.0]}]}"#);
    let o = run(&[
        "track",
        "--input",
        s(&img),
        "--seeds",
        s(&seeds),
        "--out",
        s(&p(&d, "m.json")),
    ]);
    assert_eq!(code(&o), 2);
}

// ---- vasculature ------------------------------------------------------

fn vasculature(
    d: &TempDir,
    img: &Path,
    tag: &str,
    threads: Option<&str>,
) -> (Output, PathBuf, PathBuf) {
    let (out, feats) = (p(d, &format!("{tag}.json")), p(d, &format!("{tag}.csv")));
    let mut c = bin();
    c.args([
        "vasculature",
        "--input",
        s(img),
        "--out",
        s(&out),
        "--features-out",
        s(&feats),
    ]);
    if let Some(n) = threads {
        c.env("ORIENTRACE_THREADS", n);
    }
    (c.output().unwrap(), out, feats)
}

#[test]
fn tree_phantom_model_is_deterministic_across_thread_counts() {
    let d = TempDir::new().unwrap();
    let img = phantom(&d, "t.png", &["--scene", "tree"]);
    let (o1, m1, f1) = vasculature(&d, &img, "a", Some("1"));
    assert_eq!(code(&o1), 0, "{}", String::from_utf8_lossy(&o1.stderr));
    let (o2, m2, f2) = vasculature(&d, &img, "b", Some("4"));
    assert_eq!(code(&o2), 0);
    let (o3, m3, _) = vasculature(&d, &img, "c", None);
    assert_eq!(code(&o3), 0);
    let bytes = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(bytes(&m1), bytes(&m2));
    assert_eq!(bytes(&m1), bytes(&m3));
    assert_eq!(bytes(&f1), bytes(&f2));

    let m = read_model(&m1);
    assert_eq!(m.segments.len(), 5);
    let kind = |k: &str| {
        m.junctions
            .iter()
            .filter(|j| serde_json::to_value(j.kind).unwrap() == k)
            .count()
    };
    assert_eq!(kind("bifurcation"), 2);
    assert_eq!(kind("crossing"), 1);
    let seg_csv = f1.with_file_name("a_segments.csv");
    let junc_csv = f1.with_file_name("a_junctions.csv");
    assert!(seg_csv.exists() && junc_csv.exists());
}

#[test]
fn flat_image_exits_with_no_seeds() {
    let d = TempDir::new().unwrap();
    let img = p(&d, "flat.png");
    orientrace::raster::save_gray8(&orientrace::Image2D::filled(128, 128, 0.5), &img).unwrap();
    let (o, _, _) = vasculature(&d, &img, "f", None);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

// ---- model document ---------------------------------------------------

#[test]
fn model_document_round_trips_byte_for_byte() {
    let d = TempDir::new().unwrap();
    let (img, seeds) = crossing_seeds(&d);
    let out = p(&d, "m.json");
    let o = run(&[
        "track",
        "--input",
        s(&img),
        "--seeds",
        s(&seeds),
        "--max-steps",
        "30",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    let text = std::fs::read_to_string(&out).unwrap();
    let doc = ModelDocument::from_json(&text).unwrap();
    assert_eq!(doc.schema, "orientrace.model/1");
    assert_eq!(doc.to_json(), text);
    assert_eq!(ModelDocument::from_json(&doc.to_json()).unwrap(), doc);
}

// ---- validate-widths --------------------------------------------------

fn self_truth(d: &TempDir, model: &ModelDocument, bias: f64) -> PathBuf {
    let mut csv = String::from("profile_id,ux,uy,vx,vy,width\n");
    for (i, q) in model.segments[0].points.iter().enumerate().step_by(10) {
        let w = q.width.unwrap() - bias;
        csv += &format!(
            "p{i},{},{},{},{},{w}\n",
            q.ux.unwrap(),
            q.uy.unwrap(),
            q.vx.unwrap(),
            q.vy.unwrap()
        );
    }
    write(d, &format!("truth{bias}.csv"), &csv)
}

#[test]
fn widths_validated_against_themselves() {
    let d = TempDir::new().unwrap();
    let img = phantom(&d, "w.png", &["--scene", "widening"]);
    let seeds = write(&d, "seeds.json", r#"[{"c": [30.0, 64.0], "theta": 0.0}]"#);
    let out = p(&d, "m.json");
    let o = run(&[
        "track",
        "--input",
        s(&img),
        "--seeds",
        s(&seeds),
        "--max-steps",
        "90",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0);
    let model = read_model(&out);
    for (bias, mean_error) in [(0.0, 0.0), (0.5, 0.5)] {
        let truth = self_truth(&d, &model, bias);
        let o = run(&["validate-widths", "--model", s(&out), "--truth", s(&truth)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let r: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(r["success_pct"], 100.0);
        assert!(r["sigma_chi"].as_f64().unwrap() < 1e-9);
        assert!((r["mean_error"].as_f64().unwrap() - mean_error).abs() < 1e-9);
        if bias == 0.0 {
            assert!((r["slope"].as_f64().unwrap() - 1.0).abs() < 1e-9);
            assert!(r["intercept"].as_f64().unwrap().abs() < 1e-8);
        }
    }
}

#[test]
fn truth_without_width_column_is_a_usage_error() {
    let d = TempDir::new().unwrap();
    let model = write(
        &d,
        "m.json",
        &ModelDocument::new(serde_json::json!({})).to_json(),
    );
    let truth = write(&d, "t.csv", "profile_id,ux,uy,vx,vy\np0,1,2,3,4\n");
    let o = run(&[
        "validate-widths",
        "--model",
        s(&model),
        "--truth",
        s(&truth),
    ]);
    assert_eq!(code(&o), 2);
}

// ---- completion-demo --------------------------------------------------

fn completion(d: &TempDir, boundary: &[&str]) -> (Output, PathBuf) {
    let prefix = p(d, "c");
    let mut args = vec!["completion-demo", "--out-prefix", s(&prefix), "--boundary"];
    args.extend_from_slice(boundary);
    (run(&args), prefix)
}

#[test]
fn completion_demo_on_symmetric_data() {
    let d = TempDir::new().unwrap();
    let (o, prefix) = completion(&d, &["0", "0", "0.4", "2", "0", "-0.4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(parse_error(&o.stdout) < 1e-6);
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(format!("{}_field.json", prefix.display())).unwrap(),
    )
    .unwrap();
    let (nx, ny, nt) = (
        summary["grid"]["xs"].as_array().unwrap().len(),
        summary["grid"]["ys"].as_array().unwrap().len(),
        summary["grid"]["thetas"].as_array().unwrap().len(),
    );
    let field = std::fs::metadata(format!("{}_field.bin", prefix.display())).unwrap();
    assert_eq!(field.len() as usize, nx * ny * nt * 8);
}

#[test]
fn completion_demo_zero_boundary_gives_zero_curves() {
    let d = TempDir::new().unwrap();
    let (o, prefix) = completion(&d, &["0", "0", "0", "3", "0", "0"]);
    assert_eq!(code(&o), 0);
    for which in ["mode", "cubic"] {
        let mut r = csv::Reader::from_path(format!("{}_{which}.csv", prefix.display())).unwrap();
        for rec in r.records() {
            let rec = rec.unwrap();
            assert_eq!(rec[1].parse::<f64>().unwrap(), 0.0);
            assert_eq!(rec[2].parse::<f64>().unwrap(), 0.0);
        }
    }
}

#[test]
fn completion_demo_rejects_reversed_span() {
    let d = TempDir::new().unwrap();
    let (o, _) = completion(&d, &["2", "0", "0", "0", "0", "0"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn thread_override_prefers_the_environment() {
    std::env::set_var("ORIENTRACE_THREADS", "3");
    assert_eq!(orientrace_cli::resolve_threads(Some(8)), Some(3));
    std::env::set_var("ORIENTRACE_THREADS", "junk");
    assert_eq!(orientrace_cli::resolve_threads(Some(8)), Some(8));
    std::env::remove_var("ORIENTRACE_THREADS");
    assert_eq!(orientrace_cli::resolve_threads(None), None);
}
