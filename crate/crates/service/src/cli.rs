//! The `terrainnav` command line. Each subcommand wraps one pipeline stage,
//! reads and writes files named by flags, prints a JSON result on stdout and
//! logs to stderr.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use terrainnav::augment::{apply, build_training_set, sample_params, scale_to_base, AugmentParams, AugmentPolicy};
use terrainnav::costmap::{CostMap, FusionConfig};
use terrainnav::featnet::{
    build_network, compute_mean_rgb, decode_checkpoint, evaluate, load_corpus, save_checkpoint, train, FeatureVector,
    LabeledImage, NetworkSpec, TrainingConfig, TrainingReport,
};
use terrainnav::ground::{hough_plane_fit, label_points, GroundPlane, HoughConfig, PointClass, PointCloud};
use terrainnav::img::Image;
use terrainnav::patch::{
    center_features, classify_image, strokes_to_centers, train_head, HeadConfig, HeadError, HeadModel, LabelMap,
    LabelSet, RleLabelMap, TerrainClass,
};
use terrainnav::planner::{plan, Location, PlanError, PlanRequest};
use terrainnav::synth::{backyard_scene, wall_gap_map, SceneConfig};

use crate::api::{serve, AppState, ServiceConfig};
use crate::persist::{sha256_hex, store_checkpoint};
use crate::session::{build_costmap, SessionConfig, SessionError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_TRAINING_SET: i32 = 4;
pub const EXIT_PLAN: i32 = 5;
pub const EXIT_GROUND: i32 = 6;
pub const EXIT_INTEGRITY: i32 = 7;

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

fn fail(code: i32, message: impl Into<String>) -> CliError {
    CliError {
        code,
        message: message.into(),
    }
}

fn input<E: std::fmt::Display>(what: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| fail(EXIT_INPUT, format!("{}: {e}", what.display()))
}

impl From<HeadError> for CliError {
    fn from(e: HeadError) -> Self {
        match e {
            HeadError::Empty | HeadError::SingleClass { .. } => fail(EXIT_TRAINING_SET, e.to_string()),
            other => fail(EXIT_FAILURE, other.to_string()),
        }
    }
}

impl From<PlanError> for CliError {
    fn from(e: PlanError) -> Self {
        fail(EXIT_PLAN, e.to_string())
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Head(h) => h.into(),
            SessionError::Plan(p) => p.into(),
            SessionError::Ground(g) => fail(EXIT_GROUND, g.to_string()),
            SessionError::Config(_) | SessionError::Image(_) | SessionError::Cloud(_) => fail(EXIT_INPUT, e.to_string()),
            other => fail(EXIT_FAILURE, other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "terrainnav", version, about = "Terrain classification and navigation tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the convolutional extractor on a labeled image corpus.
    TrainExtractor(TrainExtractorArgs),
    /// Per-channel mean color of a corpus.
    MeanRgb(CorpusArgs),
    /// Write augmented versions of one image.
    AugmentPreview(AugmentPreviewArgs),
    /// Extract features for the labeled pixels of an image.
    Features(FeaturesArgs),
    /// Train the two-class head on features or labeled strokes.
    TrainHead(TrainHeadArgs),
    /// Label every pixel of an image as drivable or obstacle.
    Classify(ClassifyArgs),
    /// Fit the ground plane of a point cloud.
    FitPlane(FitPlaneArgs),
    /// Build the fused, dilated cost map.
    Fuse(FuseArgs),
    /// Plan a path on a cost map.
    Plan(PlanArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
    /// Write a synthetic scene and the wall-with-gap fixture map.
    SynthScene(SynthSceneArgs),
}

#[derive(Debug, Args)]
pub struct CorpusArgs {
    /// Directory the manifest paths are relative to.
    #[arg(long)]
    pub corpus_dir: Option<PathBuf>,
    /// Lines of `<relative path> <class index>`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Use this many generated images per class of the shape corpus instead.
    #[arg(long)]
    pub synthetic_shapes: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct TrainExtractorArgs {
    #[command(flatten)]
    pub corpus: CorpusArgs,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch loss and accuracy as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentPreviewArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct FeaturesArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Label strokes JSON: `{"strokes": [{"class", "pixels"}]}`.
    #[arg(long)]
    pub labels: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainHeadArgs {
    /// Output of `features`.
    #[arg(long, conflicts_with_all = ["checkpoint", "image"])]
    pub features: Option<PathBuf>,
    #[arg(long, requires = "image")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, requires = "checkpoint")]
    pub image: Option<PathBuf>,
    #[arg(long, required_unless_present = "features")]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub balance: bool,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub head: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Run-length encoded label map JSON.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub stride: usize,
    /// Also write the labels blended over the image.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    /// CSV (`x,y,z[,row,col]`) or ASCII PLY; chosen by extension.
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long, default_value_t = 0.04)]
    pub point_threshold: f64,
    #[arg(long, default_value_t = 20_000)]
    pub max_fit_points: usize,
}

#[derive(Debug, Args)]
pub struct FitPlaneArgs {
    #[command(flatten)]
    pub ground: GroundArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    #[command(flatten)]
    pub ground: GroundArgs,
    /// Label map from `classify`; stereo alone when absent.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long)]
    pub render: Option<PathBuf>,
    #[arg(long, default_value_t = 0.15)]
    pub hard_threshold: f64,
    #[arg(long, default_value_t = 0.15)]
    pub dilation: f64,
    #[arg(long, default_value_t = 15.0)]
    pub map_size: f64,
    #[arg(long, default_value_t = 0.10)]
    pub resolution: f64,
}

fn parse_pair<T: std::str::FromStr>(s: &str) -> Result<[T; 2], String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected two comma-separated values, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<T>().map_err(|_| format!("{v:?} is not a valid number"));
    Ok([p(a)?, p(b)?])
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long)]
    pub map: PathBuf,
    /// Start cell `ix,iy`.
    #[arg(long, value_parser = parse_pair::<usize>, required_unless_present = "start_xy", conflicts_with = "start_xy")]
    pub start: Option<[usize; 2]>,
    /// Start point `x,y` in meters.
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    pub start_xy: Option<[f64; 2]>,
    #[arg(long, value_parser = parse_pair::<usize>, required_unless_present = "goal_xy", conflicts_with = "goal_xy")]
    pub goal: Option<[usize; 2]>,
    #[arg(long, value_parser = parse_pair::<f64>, allow_hyphen_values = true)]
    pub goal_xy: Option<[f64; 2]>,
    #[arg(long, default_value_t = 2.0)]
    pub proximity_weight: f64,
    #[arg(long, default_value_t = 0.5)]
    pub proximity_scale: f64,
    #[arg(long, default_value_t = 1.5)]
    pub unknown_penalty: f64,
    #[arg(long, default_value_t = 5)]
    pub lookahead: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: String,
    /// Where sessions are persisted.
    #[arg(long, env = "TERRAINNAV_DATA_DIR")]
    pub data_dir: Option<PathBuf>,
    /// Session defaults as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthSceneArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(input(path))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(input(path))?;
    serde_json::from_str(&text).map_err(input(path))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
    println!("{text}");
    Ok(())
}

fn load_image(path: &Path) -> Result<Image, CliError> {
    Image::load(path).map_err(input(path))
}

fn load_cloud(path: &Path) -> Result<PointCloud, CliError> {
    PointCloud::load(path).map_err(input(path))
}

/// Unreadable files are input errors; bytes that do not decode as a
/// checkpoint are integrity errors.
fn load_net(path: &Path) -> Result<terrainnav::featnet::Network, CliError> {
    let bytes = std::fs::read(path).map_err(input(path))?;
    decode_checkpoint(&bytes).map_err(|e| fail(EXIT_INTEGRITY, format!("{}: {e}", path.display())))
}

fn corpus(args: &CorpusArgs) -> Result<Vec<LabeledImage>, CliError> {
    match (&args.corpus_dir, &args.manifest, args.synthetic_shapes) {
        (_, _, Some(n)) => Ok(terrainnav::synth::shape_corpus(n, 128, args.seed)),
        (Some(dir), Some(manifest), None) => load_corpus(dir, manifest).map_err(input(manifest)),
        _ => Err(fail(EXIT_USAGE, "give --corpus-dir and --manifest, or --synthetic-shapes")),
    }
}

#[derive(Serialize, Deserialize)]
struct ExtractorReport {
    spec: NetworkSpec,
    mean_rgb: [f32; 3],
    training_set_size: usize,
    training: TrainingReport,
    final_accuracy: f64,
}

fn train_extractor(a: &TrainExtractorArgs) -> Result<(), CliError> {
    let data = corpus(&a.corpus)?;
    if data.is_empty() {
        return Err(fail(EXIT_INPUT, "corpus is empty"));
    }
    let classes = data.iter().map(|e| e.label).max().unwrap_or(0) + 1;
    let mean = compute_mean_rgb(data.iter().map(|e| &e.image), a.corpus.seed).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    let set = build_training_set(&data, &AugmentPolicy::default(), mean, a.corpus.seed)
        .map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    tracing::info!(images = data.len(), examples = set.len(), classes, "training extractor");
    let mut net = build_network(NetworkSpec::with_classes(classes), a.corpus.seed).map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
    net.set_mean_rgb(mean);
    let config = TrainingConfig {
        num_epochs: a.epochs,
        batch_size: a.batch_size,
        ..TrainingConfig::default()
    };
    let report = train(&mut net, &set, &config, a.corpus.seed).map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
    let final_accuracy = evaluate(&net, &set).map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
    save_checkpoint(&net, &a.out).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    let summary = ExtractorReport {
        spec: *net.spec(),
        mean_rgb: mean,
        training_set_size: set.len(),
        training: report,
        final_accuracy,
    };
    if let Some(path) = &a.report {
        write_json(path, &summary)?;
    }
    print_json(&serde_json::json!({
        "checkpoint": a.out,
        "sha256": sha256_hex(&std::fs::read(&a.out).map_err(input(&a.out))?),
        "final_accuracy": final_accuracy,
    }))
}

fn mean_rgb(a: &CorpusArgs) -> Result<(), CliError> {
    let data = corpus(a)?;
    let mean = compute_mean_rgb(data.iter().map(|e| &e.image), a.seed).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    print_json(&mean)
}

fn augment_preview(a: &AugmentPreviewArgs) -> Result<(), CliError> {
    use rand::SeedableRng;
    let image = load_image(&a.image)?;
    let policy = AugmentPolicy::default();
    let base = scale_to_base(&image, &policy).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    let fill = image.channel_means().map(|v| v as f32);
    std::fs::create_dir_all(&a.out_dir).map_err(input(&a.out_dir))?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(a.seed);
    let mut params: Vec<AugmentParams> = Vec::new();
    for i in 0..a.count {
        let p = sample_params(&policy, &mut rng);
        let out = apply(&base, &p, &policy, fill).map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
        let path = a.out_dir.join(format!("augment-{i}.png"));
        out.save(&path).map_err(input(&path))?;
        params.push(p);
    }
    write_json(&a.out_dir.join("params.json"), &params)?;
    print_json(&serde_json::json!({ "written": a.count, "params": params }))
}

/// One labeled feature vector as written by `features`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub center: [usize; 2],
    pub label: TerrainClass,
    pub features: Vec<f32>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FeatureFile {
    pub checkpoint: String,
    pub records: Vec<FeatureRecord>,
}

fn labeled_features(checkpoint: &Path, image: &Path, labels: &Path) -> Result<FeatureFile, CliError> {
    let net = load_net(checkpoint)?;
    let img = load_image(image)?;
    let set: LabelSet = read_json(labels)?;
    let (centers, report) = strokes_to_centers(img.width(), img.height(), &set.strokes);
    if !report.skipped_outside.is_empty() || !report.skipped_margin.is_empty() {
        tracing::warn!(
            outside = report.skipped_outside.len(),
            margin = report.skipped_margin.len(),
            "stroke pixels skipped"
        );
    }
    let positions: Vec<(usize, usize)> = centers.iter().map(|&(c, _)| c).collect();
    let features = center_features(&net, &img, &positions).map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
    let records = centers
        .into_iter()
        .zip(features)
        .map(|(((r, c), label), f)| FeatureRecord {
            center: [r, c],
            label,
            features: f.into_vec(),
        })
        .collect();
    Ok(FeatureFile {
        checkpoint: sha256_hex(&std::fs::read(checkpoint).map_err(input(checkpoint))?),
        records,
    })
}

fn features(a: &FeaturesArgs) -> Result<(), CliError> {
    let file = labeled_features(&a.checkpoint, &a.image, &a.labels)?;
    write_json(&a.out, &file)?;
    print_json(&serde_json::json!({ "records": file.records.len() }))
}

fn train_head_cmd(a: &TrainHeadArgs) -> Result<(), CliError> {
    let labels = a.labels.as_deref();
    let file = match (&a.features, &a.checkpoint, &a.image, labels) {
        (Some(f), _, _, _) => read_json::<FeatureFile>(f)?,
        (None, Some(c), Some(i), Some(l)) => labeled_features(c, i, l)?,
        _ => return Err(fail(EXIT_USAGE, "give --features, or --checkpoint, --image and --labels")),
    };
    let examples: Vec<(FeatureVector, TerrainClass)> = file
        .records
        .into_iter()
        .map(|r| (FeatureVector::new(r.features), r.label))
        .collect();
    let mut config = HeadConfig {
        hidden: a.hidden,
        balance_classes: a.balance,
        ..HeadConfig::default()
    };
    if let Some(e) = a.epochs {
        config.max_epochs = e;
    }
    let (head, report) = train_head(&examples, &config, a.seed)?;
    write_json(&a.out, &head)?;
    print_json(&report)
}

fn classify(a: &ClassifyArgs) -> Result<(), CliError> {
    let net = load_net(&a.checkpoint)?;
    let head: HeadModel = read_json(&a.head)?;
    let img = load_image(&a.image)?;
    let labels = classify_image(&img, &net, &head, a.stride).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    write_json(&a.out, &labels.to_rle())?;
    if let Some(path) = &a.overlay {
        labels.render(Some(&img), 0.5).save(path).map_err(input(path))?;
    }
    let [unknown, drivable, obstacle] = labels.counts();
    print_json(&serde_json::json!({ "unknown": unknown, "drivable": drivable, "obstacle": obstacle }))
}

fn ground_config(g: &GroundArgs) -> SessionConfig {
    SessionConfig {
        point_height_threshold: g.point_threshold,
        plane_fit_max_points: g.max_fit_points,
        ..SessionConfig::default()
    }
}

#[derive(Serialize)]
struct PlaneReport {
    plane: GroundPlane,
    points: usize,
    obstacles: usize,
}

fn fit_plane(a: &FitPlaneArgs) -> Result<(), CliError> {
    let cloud = load_cloud(&a.ground.cloud)?;
    let config = ground_config(&a.ground);
    config.validate()?;
    let step = cloud.len().div_ceil(config.plane_fit_max_points).max(1);
    let sample = PointCloud::new(cloud.points.iter().step_by(step).cloned().collect());
    let plane = hough_plane_fit(&sample, &HoughConfig::default()).map_err(|e| fail(EXIT_GROUND, e.to_string()))?;
    let labels = label_points(&cloud, &plane, config.point_height_threshold);
    let report = PlaneReport {
        plane,
        points: cloud.len(),
        obstacles: labels.iter().filter(|l| l.class == PointClass::Obstacle).count(),
    };
    if let Some(path) = &a.out {
        write_json(path, &report)?;
    }
    print_json(&report)
}

fn fuse(a: &FuseArgs) -> Result<(), CliError> {
    let cloud = load_cloud(&a.ground.cloud)?;
    let labels = match &a.labels {
        Some(p) => {
            let rle: RleLabelMap = read_json(p)?;
            Some(LabelMap::from_rle(&rle).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let config = SessionConfig {
        fusion: FusionConfig {
            hard_height_threshold: a.hard_threshold,
            dilation_radius: a.dilation,
            map_size: a.map_size,
            resolution: a.resolution,
        },
        ..ground_config(&a.ground)
    };
    config.validate()?;
    let (map, plane, report) = build_costmap(&cloud, labels.as_ref(), &config)?;
    map.save_grid(&a.out).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    if let Some(path) = &a.render {
        std::fs::write(path, map.render_ppm()).map_err(input(path))?;
    }
    let summary = serde_json::json!({ "plane": plane, "projection": report, "summary": map.summary() });
    if let Some(path) = &a.summary {
        write_json(path, &summary)?;
    }
    print_json(&summary)
}

fn plan_cmd(a: &PlanArgs) -> Result<(), CliError> {
    let map = CostMap::load_grid(&a.map).map_err(|e| fail(EXIT_INPUT, format!("{}: {e}", a.map.display())))?;
    let location = |cell: Option<[usize; 2]>, xy: Option<[f64; 2]>| match (cell, xy) {
        (Some(c), _) => Location::Cell(c),
        (None, Some(p)) => Location::Point(p),
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let request = PlanRequest {
        start: location(a.start, a.start_xy),
        goal: location(a.goal, a.goal_xy),
        proximity_weight: a.proximity_weight,
        proximity_scale: a.proximity_scale,
        unknown_penalty: a.unknown_penalty,
        lookahead_cells: a.lookahead,
    };
    let path = plan(&map, &request)?;
    if let Some(out) = &a.out {
        write_json(out, &path)?;
    }
    print_json(&path)
}

fn serve_cmd(a: &ServeArgs) -> Result<(), CliError> {
    let bytes = std::fs::read(&a.checkpoint).map_err(input(&a.checkpoint))?;
    let network = load_net(&a.checkpoint)?;
    let checkpoint = match &a.data_dir {
        Some(dir) => store_checkpoint(dir, &bytes).map_err(|e| fail(EXIT_INPUT, e.to_string()))?,
        None => sha256_hex(&bytes),
    };
    let session_defaults = match &a.config {
        Some(p) => read_json(p)?,
        None => SessionConfig::default(),
    };
    let state = Arc::new(AppState::new(
        network,
        checkpoint,
        ServiceConfig {
            data_dir: a.data_dir.clone(),
            session_defaults,
        },
    ));
    let runtime = tokio::runtime::Runtime::new().map_err(|e| fail(EXIT_FAILURE, e.to_string()))?;
    runtime
        .block_on(serve(state, &a.addr))
        .map_err(|e| fail(EXIT_INPUT, format!("serving on {}: {e}", a.addr)))
}

fn synth_scene(a: &SynthSceneArgs) -> Result<(), CliError> {
    let scene = backyard_scene(&SceneConfig::default(), a.seed);
    let dir = &a.out_dir;
    std::fs::create_dir_all(dir).map_err(input(dir))?;
    scene.image.save(dir.join("scene.png")).map_err(input(dir))?;
    scene.cloud.save(dir.join("scene.csv")).map_err(input(dir))?;
    let mut strokes = scene.paint([12, 16, 4]);
    strokes.push(scene.paint_boxes(4));
    write_json(&dir.join("labels.json"), &LabelSet { strokes })?;
    wall_gap_map().save_grid(dir.join("wall_gap.tncm")).map_err(|e| fail(EXIT_INPUT, e.to_string()))?;
    print_json(&serde_json::json!({
        "image": dir.join("scene.png"),
        "cloud": dir.join("scene.csv"),
        "labels": dir.join("labels.json"),
        "map": dir.join("wall_gap.tncm"),
    }))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::TrainExtractor(a) => train_extractor(a),
        Command::MeanRgb(a) => mean_rgb(a),
        Command::AugmentPreview(a) => augment_preview(a),
        Command::Features(a) => features(a),
        Command::TrainHead(a) => train_head_cmd(a),
        Command::Classify(a) => classify(a),
        Command::FitPlane(a) => fit_plane(a),
        Command::Fuse(a) => fuse(a),
        Command::Plan(a) => plan_cmd(a),
        Command::Serve(a) => serve_cmd(a),
        Command::SynthScene(a) => synth_scene(a),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}
