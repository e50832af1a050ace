mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use terrainnav::costmap::CostMap;
use terrainnav::featnet::{load_checkpoint, save_checkpoint};
use terrainnav::patch::{LabelMap, LabelSet, LabelStroke, RleLabelMap, TerrainClass};
use terrainnav::planner::{Location, PlanRequest};
use terrainnav::synth::{wall_gap_map, WALL_GAP_GOAL, WALL_GAP_START};
use terrainnav_service::cli::{EXIT_INPUT, EXIT_INTEGRITY, EXIT_PLAN, EXIT_TRAINING_SET, EXIT_USAGE};

fn terrainnav(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_terrainnav"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes a small scene, a random extractor and labels into `dir`.
fn workspace(dir: &Path) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    let scene = common::small_scene(3);
    let image = dir.join("scene.png");
    let cloud = dir.join("scene.csv");
    let ckpt = dir.join("net.ckpt");
    let labels = dir.join("labels.json");
    scene.image.save(&image).unwrap();
    scene.cloud.save(&cloud).unwrap();
    save_checkpoint(&common::random_network(3), &ckpt).unwrap();
    let mut strokes = scene.paint([8, 8, 4]);
    strokes.push(scene.paint_boxes(4));
    std::fs::write(&labels, serde_json::to_string(&LabelSet { strokes }).unwrap()).unwrap();
    (image, cloud, ckpt, labels)
}

#[test]
fn unknown_subcommand_prints_usage() {
    let out = terrainnav(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = terrainnav(&["plan", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
}

#[test]
fn help_lists_every_subcommand() {
    let out = terrainnav(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for cmd in [
        "train-extractor",
        "mean-rgb",
        "augment-preview",
        "features",
        "train-head",
        "classify",
        "fit-plane",
        "fuse",
        "plan",
        "serve",
    ] {
        assert!(text.contains(cmd), "{cmd} missing from help");
    }
}

#[test]
fn wall_gap_fixture_is_current() {
    let bytes = std::fs::read(fixture("wall_gap.tncm")).unwrap();
    assert_eq!(bytes, wall_gap_map().encode_grid());
}

#[test]
fn plan_on_fixture_matches_golden_output() {
    let start = format!("{},{}", WALL_GAP_START[0], WALL_GAP_START[1]);
    let goal = format!("{},{}", WALL_GAP_GOAL[0], WALL_GAP_GOAL[1]);
    let out = terrainnav(&["plan", "--map", s(&fixture("wall_gap.tncm")), "--start", &start, "--goal", &goal]);
    let got = stdout_json(&out);
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(fixture("wall_gap_plan.json")).unwrap()).unwrap();
    assert_eq!(got, golden);

    // The golden file itself must agree with the search oracle.
    let map = CostMap::load_grid(fixture("wall_gap.tncm")).unwrap();
    let req = PlanRequest::new(Location::Cell(WALL_GAP_START), Location::Cell(WALL_GAP_GOAL));
    let want = common::ucs_oracle(&map, WALL_GAP_START, WALL_GAP_GOAL, &req).unwrap();
    let cost = golden["total_cost"].as_f64().unwrap();
    assert!((cost - want).abs() < 1e-9, "{cost} vs {want}");
    let cells: Vec<[usize; 2]> = serde_json::from_value(golden["cells"].clone()).unwrap();
    assert_eq!(cells.first(), Some(&WALL_GAP_START));
    assert_eq!(cells.last(), Some(&WALL_GAP_GOAL));
    let crossing: Vec<_> = cells.iter().filter(|c| c[0] == 15).collect();
    assert!(!crossing.is_empty() && crossing.iter().all(|c| (22..=24).contains(&c[1])));
    for w in cells.windows(2) {
        let (dx, dy) = (w[0][0].abs_diff(w[1][0]), w[0][1].abs_diff(w[1][1]));
        assert!(dx <= 1 && dy <= 1 && dx + dy > 0);
        assert!(!map.is_obstacle(map.index(w[1][0], w[1][1])));
    }
}

#[test]
fn plan_errors_have_their_own_exit_code() {
    let map = s(&fixture("wall_gap.tncm")).to_string();
    let out = terrainnav(&["plan", "--map", &map, "--start", "4,5", "--goal", "15,5"]);
    assert_eq!(out.status.code(), Some(EXIT_PLAN));
    assert!(String::from_utf8_lossy(&out.stderr).contains("obstacle"));
    let out = terrainnav(&["plan", "--map", &map, "--start", "4,5", "--goal", "99,5"]);
    assert_eq!(out.status.code(), Some(EXIT_PLAN));
    let out = terrainnav(&["plan", "--map", "/nonexistent.tncm", "--start", "4,5", "--goal", "5,5"]);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
}

#[test]
fn plan_accepts_metric_points() {
    let map = s(&fixture("wall_gap.tncm")).to_string();
    let out = terrainnav(&["plan", "--map", &map, "--start-xy", "0.45,0.55", "--goal-xy", "2.55,0.65"]);
    let v = stdout_json(&out);
    let cells: Vec<[usize; 2]> = serde_json::from_value(v["cells"].clone()).unwrap();
    assert_eq!(cells.first(), Some(&WALL_GAP_START));
    assert_eq!(cells.last(), Some(&WALL_GAP_GOAL));
}

#[test]
fn train_head_with_one_class_names_the_missing_class() {
    let dir = tempfile::tempdir().unwrap();
    let (image, _, ckpt, _) = workspace(dir.path());
    let labels = dir.path().join("one-class.json");
    let set = LabelSet {
        strokes: vec![LabelStroke::new(TerrainClass::Drivable, vec![[60, 40], [61, 40], [62, 41]])],
    };
    std::fs::write(&labels, serde_json::to_string(&set).unwrap()).unwrap();
    let out = terrainnav(&[
        "train-head",
        "--checkpoint",
        s(&ckpt),
        "--image",
        s(&image),
        "--labels",
        s(&labels),
        "--out",
        s(&dir.path().join("head.json")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_TRAINING_SET));
    assert!(String::from_utf8_lossy(&out.stderr).contains("obstacle"));
}

#[test]
fn features_head_classify_fuse_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let (image, cloud, ckpt, labels) = workspace(d);
    let features = d.join("features.json");
    let v = stdout_json(&terrainnav(&[
        "features",
        "--checkpoint",
        s(&ckpt),
        "--image",
        s(&image),
        "--labels",
        s(&labels),
        "--out",
        s(&features),
    ]));
    assert!(v["records"].as_u64().unwrap() > 20);

    let head = d.join("head.json");
    let report = stdout_json(&terrainnav(&["train-head", "--features", s(&features), "--out", s(&head)]));
    assert!(report["training_accuracy"].as_f64().unwrap() > 0.9);

    let label_map = d.join("labels.rle.json");
    let overlay = d.join("overlay.png");
    let counts = stdout_json(&terrainnav(&[
        "classify",
        "--checkpoint",
        s(&ckpt),
        "--head",
        s(&head),
        "--image",
        s(&image),
        "--out",
        s(&label_map),
        "--overlay",
        s(&overlay),
    ]));
    let rle: RleLabelMap = serde_json::from_str(&std::fs::read_to_string(&label_map).unwrap()).unwrap();
    let map = LabelMap::from_rle(&rle).unwrap();
    assert_eq!((map.width(), map.height()), (160, 160));
    assert_eq!(counts["unknown"].as_u64().unwrap() as usize, map.counts()[0]);
    assert!(overlay.exists());

    let plane = stdout_json(&terrainnav(&["fit-plane", "--cloud", s(&cloud), "--point-threshold", "0.02"]));
    assert!(plane["plane"]["normal"][2].as_f64().unwrap() > 0.999);

    let grid = d.join("map.tncm");
    let ppm = d.join("map.ppm");
    let fused = stdout_json(&terrainnav(&[
        "fuse",
        "--cloud",
        s(&cloud),
        "--labels",
        s(&label_map),
        "--point-threshold",
        "0.02",
        "--out",
        s(&grid),
        "--render",
        s(&ppm),
    ]));
    let cost = CostMap::load_grid(&grid).unwrap();
    assert_eq!(fused["summary"]["nx"].as_u64().unwrap() as usize, cost.nx());
    assert!(fused["projection"]["with_net_label"].as_u64().unwrap() > 0);
    assert!(std::fs::read(&ppm).unwrap().starts_with(b"P6"));
}

#[test]
fn corrupt_checkpoint_is_an_integrity_error() {
    let dir = tempfile::tempdir().unwrap();
    let (image, _, ckpt, labels) = workspace(dir.path());
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&ckpt, bytes).unwrap();
    let out = terrainnav(&[
        "features",
        "--checkpoint",
        s(&ckpt),
        "--image",
        s(&image),
        "--labels",
        s(&labels),
        "--out",
        s(&dir.path().join("f.json")),
    ]);
    assert_eq!(out.status.code(), Some(EXIT_INTEGRITY));
}

#[test]
fn bad_inputs_are_input_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cloud = dir.path().join("bad.csv");
    std::fs::write(&cloud, "x,y,z\n1,2,banana\n").unwrap();
    let out = terrainnav(&["fit-plane", "--cloud", s(&cloud)]);
    assert_eq!(out.status.code(), Some(EXIT_INPUT));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_extractor_mean_rgb_and_augment_preview() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let ckpt = d.join("shapes.ckpt");
    let report = d.join("report.json");
    let v = stdout_json(&terrainnav(&[
        "train-extractor",
        "--synthetic-shapes",
        "2",
        "--epochs",
        "1",
        "--out",
        s(&ckpt),
        "--report",
        s(&report),
    ]));
    assert_eq!(v["sha256"].as_str().unwrap().len(), 64);
    let net = load_checkpoint(&ckpt).unwrap();
    assert_eq!(net.feature_len(), 1536);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(r["training_set_size"], 80);

    let mean = stdout_json(&terrainnav(&["mean-rgb", "--synthetic-shapes", "2"]));
    assert_eq!(mean.as_array().unwrap().len(), 3);
    let out = terrainnav(&["mean-rgb"]);
    assert_eq!(out.status.code(), Some(EXIT_USAGE));

    let image = d.join("shape.png");
    terrainnav::synth::shape_corpus(1, 96, 0)[0].image.save(&image).unwrap();
    let preview = d.join("preview");
    let v = stdout_json(&terrainnav(&["augment-preview", "--image", s(&image), "--out-dir", s(&preview), "--count", "3"]));
    assert_eq!(v["written"], 3);
    for i in 0..3 {
        let img = terrainnav::img::Image::load(preview.join(format!("augment-{i}.png"))).unwrap();
        assert_eq!((img.width(), img.height()), (119, 119));
    }
}
