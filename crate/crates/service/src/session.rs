//! Per-session state for the label, retrain, classify, fuse and plan loop.
//!
//! Reads (classification, cost map, plan, model download) take a snapshot
//! under a shared lock and compute outside it. Labels and model commits take
//! the exclusive lock only for the moment they mutate. Training is guarded
//! by a separate try-lock so a second request fails fast instead of
//! queueing.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock, TryLockError};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use terrainnav::costmap::{CostMap, CostmapError, FusionConfig, ProjectionReport};
use terrainnav::featnet::{FeatureVector, Network};
use terrainnav::ground::{
    hough_plane_fit, label_points, CloudError, CloudFormat, GroundError, GroundPlane, HoughConfig, PointCloud,
};
use terrainnav::img::{Image, ImageError};
use terrainnav::patch::{
    center_features, classify_image, strokes_to_centers, train_head, HeadConfig, HeadError, HeadModel, LabelMap,
    LabelStroke, PatchError, StrokeReport, TerrainClass,
};
use terrainnav::planner::{plan, PlanError, PlanRequest, PlannedPath};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("no frame has been uploaded")]
    NoFrame,
    #[error("no head model has been trained yet")]
    NoModel,
    #[error("the current frame has no point cloud")]
    NoCloud,
    #[error("a training run is already in progress for this session")]
    Busy,
    #[error("invalid session config: {0}")]
    Config(String),
    #[error("invalid frame: {0}")]
    Frame(String),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Patch(#[from] PatchError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Ground(#[from] GroundError),
    #[error(transparent)]
    Costmap(#[from] CostmapError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Cloud(#[from] CloudError),
}

fn default_point_threshold() -> f64 {
    0.04
}
fn default_stride() -> usize {
    8
}
fn default_fit_points() -> usize {
    20_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    #[serde(default)]
    pub fusion: FusionConfig,
    #[serde(default)]
    pub hough: HoughConfig,
    /// Points farther than this from the ground plane are stereo obstacles.
    #[serde(default = "default_point_threshold")]
    pub point_height_threshold: f64,
    /// Spacing of classified patch centers, pixels.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// The plane is fitted on an evenly spaced subset of at most this many
    /// points; all points are labeled against it.
    #[serde(default = "default_fit_points")]
    pub plane_fit_max_points: usize,
    #[serde(default)]
    pub head: HeadConfig,
    #[serde(default)]
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            fusion: FusionConfig::default(),
            hough: HoughConfig::default(),
            point_height_threshold: default_point_threshold(),
            stride: default_stride(),
            plane_fit_max_points: default_fit_points(),
            head: HeadConfig::default(),
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        self.fusion.validate().map_err(|e| SessionError::Config(e.to_string()))?;
        if !(self.point_height_threshold.is_finite() && self.point_height_threshold >= 0.0) {
            return Err(SessionError::Config("point_height_threshold must be non-negative".into()));
        }
        if self.stride == 0 {
            return Err(SessionError::Config("stride must be positive".into()));
        }
        if self.plane_fit_max_points < 3 {
            return Err(SessionError::Config("plane_fit_max_points must be at least 3".into()));
        }
        Ok(())
    }
}

/// One uploaded camera frame. The original payload bytes are kept so a
/// persisted session restores exactly what was uploaded.
#[derive(Clone, Debug)]
pub struct Frame {
    pub image: Image,
    pub cloud: Option<PointCloud>,
    pub image_bytes: Vec<u8>,
    pub cloud_payload: Option<(CloudFormat, String)>,
}

impl Frame {
    pub fn decode(image_bytes: Vec<u8>, cloud_payload: Option<(CloudFormat, String)>) -> Result<Frame, SessionError> {
        let image = Image::decode(&image_bytes)?;
        let cloud = match &cloud_payload {
            Some((format, text)) => {
                let cloud = PointCloud::parse(*format, text)?;
                cloud.check_pixels(image.width(), image.height())?;
                Some(cloud)
            }
            None => None,
        };
        Ok(Frame {
            image,
            cloud,
            image_bytes,
            cloud_payload,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameInfo {
    pub frame: usize,
    pub width: usize,
    pub height: usize,
    pub points: usize,
    pub points_with_pixels: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredStroke {
    pub frame: usize,
    #[serde(flatten)]
    pub stroke: LabelStroke,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingEvent {
    pub timestamp_ms: u64,
    pub model_version: u64,
    pub examples: usize,
    pub class_counts: [usize; 2],
    pub duration_secs: f64,
    pub training_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelReport {
    pub frame: usize,
    pub report: StrokeReport,
    pub total_strokes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub model_version: u64,
    /// Wall-clock seconds for the whole retrain, feature extraction included.
    pub duration_secs: f64,
    pub training_set_size: usize,
    pub class_counts: [usize; 2],
    pub training_accuracy: f64,
    pub epochs: usize,
    pub features_computed: usize,
}

#[derive(Clone, Debug)]
pub struct Classification {
    pub model_version: u64,
    pub frame: usize,
    pub stride: usize,
    pub labels: Arc<LabelMap>,
}

#[derive(Clone, Debug)]
pub struct Costmap {
    pub model_version: u64,
    pub frame: usize,
    pub plane: GroundPlane,
    pub report: ProjectionReport,
    pub map: Arc<CostMap>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanOutcome {
    pub model_version: u64,
    pub frame: usize,
    #[serde(flatten)]
    pub path: PlannedPath,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub checkpoint: String,
    pub config: SessionConfig,
    pub frames: usize,
    pub current_frame: Option<FrameInfo>,
    pub strokes: usize,
    pub model_version: u64,
    pub history: Vec<TrainingEvent>,
}

/// Everything a session owns. Model version 0 means no head yet.
#[derive(Clone, Debug)]
pub struct SessionState {
    pub id: String,
    pub network: Arc<Network>,
    pub checkpoint: String,
    pub config: SessionConfig,
    pub frames: Vec<Arc<Frame>>,
    pub strokes: Vec<StoredStroke>,
    pub model_version: u64,
    pub head: Option<Arc<HeadModel>>,
    pub history: Vec<TrainingEvent>,
}

impl SessionState {
    pub fn new(id: String, network: Arc<Network>, checkpoint: String, config: SessionConfig) -> Self {
        SessionState {
            id,
            network,
            checkpoint,
            config,
            frames: Vec::new(),
            strokes: Vec::new(),
            model_version: 0,
            head: None,
            history: Vec::new(),
        }
    }

    fn current(&self) -> Result<(usize, Arc<Frame>), SessionError> {
        let frame = self.frames.last().ok_or(SessionError::NoFrame)?;
        Ok((self.frames.len() - 1, frame.clone()))
    }
}

type FeatureKey = (usize, usize, usize);

pub struct Session {
    state: RwLock<SessionState>,
    training: Mutex<()>,
    features: Mutex<HashMap<FeatureKey, FeatureVector>>,
    classified: Mutex<Option<Classification>>,
    costmap: Mutex<Option<Costmap>>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn frame_info(index: usize, frame: &Frame) -> FrameInfo {
    let (points, points_with_pixels) = frame
        .cloud
        .as_ref()
        .map(|c| (c.len(), c.points.iter().filter(|p| p.pixel.is_some()).count()))
        .unwrap_or((0, 0));
    FrameInfo {
        frame: index,
        width: frame.image.width(),
        height: frame.image.height(),
        points,
        points_with_pixels,
    }
}

/// Fits the ground plane, labels points against it and builds the fused,
/// dilated map. Shared by the service and the command line.
pub fn build_costmap(
    cloud: &PointCloud,
    label_map: Option<&LabelMap>,
    config: &SessionConfig,
) -> Result<(CostMap, GroundPlane, ProjectionReport), SessionError> {
    let n = cloud.len();
    let step = n.div_ceil(config.plane_fit_max_points.max(1)).max(1);
    let plane = if step > 1 {
        let sample = PointCloud::new(cloud.points.iter().step_by(step).cloned().collect());
        hough_plane_fit(&sample, &config.hough)?
    } else {
        hough_plane_fit(cloud, &config.hough)?
    };
    let labels = label_points(cloud, &plane, config.point_height_threshold);
    let (map, report) = CostMap::build(cloud, &labels, label_map, &config.fusion)?;
    Ok((map, plane, report))
}

impl Session {
    pub fn new(state: SessionState) -> Self {
        Session {
            state: RwLock::new(state),
            training: Mutex::new(()),
            features: Mutex::new(HashMap::new()),
            classified: Mutex::new(None),
            costmap: Mutex::new(None),
        }
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, SessionState> {
        self.state.read().unwrap_or_else(|p| p.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, SessionState> {
        self.state.write().unwrap_or_else(|p| p.into_inner())
    }

    pub fn id(&self) -> String {
        self.read().id.clone()
    }

    /// A copy of the state for persistence.
    pub fn snapshot(&self) -> SessionState {
        self.read().clone()
    }

    pub fn info(&self) -> SessionInfo {
        let s = self.read();
        SessionInfo {
            id: s.id.clone(),
            checkpoint: s.checkpoint.clone(),
            config: s.config.clone(),
            frames: s.frames.len(),
            current_frame: s.frames.last().map(|f| frame_info(s.frames.len() - 1, f)),
            strokes: s.strokes.len(),
            model_version: s.model_version,
            history: s.history.clone(),
        }
    }

    pub fn set_frame(&self, frame: Frame) -> FrameInfo {
        let mut s = self.write();
        s.frames.push(Arc::new(frame));
        let index = s.frames.len() - 1;
        frame_info(index, &s.frames[index])
    }

    /// Appends strokes painted on the current frame and reports which of
    /// their pixels can serve as patch centers.
    pub fn add_strokes(&self, strokes: Vec<LabelStroke>) -> Result<LabelReport, SessionError> {
        let mut s = self.write();
        let (index, frame) = s.current()?;
        let (_, report) = strokes_to_centers(frame.image.width(), frame.image.height(), &strokes);
        s.strokes
            .extend(strokes.into_iter().map(|stroke| StoredStroke { frame: index, stroke }));
        Ok(LabelReport {
            frame: index,
            report,
            total_strokes: s.strokes.len(),
        })
    }

    /// Retrains the head on every stroke so far and commits it atomically.
    pub fn train(&self) -> Result<TrainOutcome, SessionError> {
        let _guard = match self.training.try_lock() {
            Ok(g) => g,
            Err(TryLockError::WouldBlock) => return Err(SessionError::Busy),
            Err(TryLockError::Poisoned(p)) => p.into_inner(),
        };
        let started = Instant::now();
        let (network, frames, strokes, config) = {
            let s = self.read();
            (s.network.clone(), s.frames.clone(), s.strokes.clone(), s.config.clone())
        };
        if frames.is_empty() {
            return Err(SessionError::NoFrame);
        }
        let mut examples: Vec<(FeatureVector, TerrainClass)> = Vec::new();
        let mut computed = 0;
        for (fi, frame) in frames.iter().enumerate() {
            let on_frame: Vec<LabelStroke> = strokes
                .iter()
                .filter(|s| s.frame == fi)
                .map(|s| s.stroke.clone())
                .collect();
            if on_frame.is_empty() {
                continue;
            }
            let (centers, _) = strokes_to_centers(frame.image.width(), frame.image.height(), &on_frame);
            let missing: Vec<(usize, usize)> = {
                let cache = self.features.lock().unwrap_or_else(|p| p.into_inner());
                centers
                    .iter()
                    .map(|&(c, _)| c)
                    .filter(|&(r, c)| !cache.contains_key(&(fi, r, c)))
                    .collect()
            };
            if !missing.is_empty() {
                let fresh = center_features(&network, &frame.image, &missing)?;
                computed += fresh.len();
                let mut cache = self.features.lock().unwrap_or_else(|p| p.into_inner());
                for (&(r, c), f) in missing.iter().zip(fresh) {
                    cache.insert((fi, r, c), f);
                }
            }
            let cache = self.features.lock().unwrap_or_else(|p| p.into_inner());
            for ((r, c), class) in centers {
                examples.push((cache[&(fi, r, c)].clone(), class));
            }
        }
        let (head, report) = train_head(&examples, &config.head, config.seed)?;
        let duration_secs = started.elapsed().as_secs_f64();
        let mut s = self.write();
        s.model_version += 1;
        s.head = Some(Arc::new(head));
        let event = TrainingEvent {
            timestamp_ms: now_ms(),
            model_version: s.model_version,
            examples: examples.len(),
            class_counts: report.class_counts,
            duration_secs,
            training_accuracy: report.training_accuracy,
        };
        s.history.push(event);
        Ok(TrainOutcome {
            model_version: s.model_version,
            duration_secs,
            training_set_size: examples.len(),
            class_counts: report.class_counts,
            training_accuracy: report.training_accuracy,
            epochs: report.epochs,
            features_computed: computed,
        })
    }

    pub fn head(&self) -> Result<(u64, Arc<HeadModel>), SessionError> {
        let s = self.read();
        let head = s.head.clone().ok_or(SessionError::NoModel)?;
        Ok((s.model_version, head))
    }

    /// Label map of the current frame under the committed head.
    pub fn classification(&self) -> Result<Classification, SessionError> {
        let (network, frame_index, frame, version, head, stride) = {
            let s = self.read();
            let (fi, frame) = s.current()?;
            let head = s.head.clone().ok_or(SessionError::NoModel)?;
            (s.network.clone(), fi, frame, s.model_version, head, s.config.stride)
        };
        if let Some(c) = self.classified.lock().unwrap_or_else(|p| p.into_inner()).as_ref() {
            if c.model_version == version && c.frame == frame_index {
                return Ok(c.clone());
            }
        }
        let labels = classify_image(&frame.image, &network, &head, stride)?;
        let result = Classification {
            model_version: version,
            frame: frame_index,
            stride,
            labels: Arc::new(labels),
        };
        let mut slot = self.classified.lock().unwrap_or_else(|p| p.into_inner());
        if slot.as_ref().is_none_or(|c| (c.frame, c.model_version) <= (frame_index, version)) {
            *slot = Some(result.clone());
        }
        Ok(result)
    }

    /// Fused cost map of the current frame: network labels from the
    /// committed head when there is one, stereo alone otherwise.
    pub fn costmap(&self) -> Result<Costmap, SessionError> {
        let (frame_index, frame, version, has_head, config) = {
            let s = self.read();
            let (fi, frame) = s.current()?;
            (fi, frame, s.model_version, s.head.is_some(), s.config.clone())
        };
        let cloud = frame.cloud.as_ref().ok_or(SessionError::NoCloud)?;
        if let Some(c) = self.costmap.lock().unwrap_or_else(|p| p.into_inner()).as_ref() {
            if c.model_version == version && c.frame == frame_index {
                return Ok(c.clone());
            }
        }
        let labels = if has_head {
            let c = self.classification()?;
            if c.model_version != version || c.frame != frame_index {
                // A newer model or frame landed meanwhile; build for that one.
                return self.costmap();
            }
            Some(c.labels)
        } else {
            None
        };
        let (map, plane, report) = build_costmap(cloud, labels.as_deref(), &config)?;
        let result = Costmap {
            model_version: version,
            frame: frame_index,
            plane,
            report,
            map: Arc::new(map),
        };
        let mut slot = self.costmap.lock().unwrap_or_else(|p| p.into_inner());
        if slot.as_ref().is_none_or(|c| (c.frame, c.model_version) <= (frame_index, version)) {
            *slot = Some(result.clone());
        }
        Ok(result)
    }

    pub fn plan(&self, request: &PlanRequest) -> Result<PlanOutcome, SessionError> {
        let c = self.costmap()?;
        let path = plan(&c.map, request)?;
        Ok(PlanOutcome {
            model_version: c.model_version,
            frame: c.frame,
            path,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use terrainnav::featnet::{build_network, NetworkSpec};

    fn tiny_session() -> Session {
        let net = build_network(NetworkSpec::with_classes(2), 1).unwrap();
        Session::new(SessionState::new("t".into(), Arc::new(net), "hash".into(), SessionConfig::default()))
    }

    fn two_tone() -> Vec<u8> {
        let img = Image::from_fn(64, 64, |x, _| if x < 32 { [0.1, 0.6, 0.1] } else { [0.6, 0.6, 0.6] }).unwrap();
        img.encode_png().unwrap()
    }

    #[test]
    fn requires_frame_and_model() {
        let s = tiny_session();
        assert!(matches!(s.add_strokes(vec![]), Err(SessionError::NoFrame)));
        assert!(matches!(s.classification(), Err(SessionError::NoFrame)));
        s.set_frame(Frame::decode(two_tone(), None).unwrap());
        assert!(matches!(s.classification(), Err(SessionError::NoModel)));
        assert!(matches!(s.costmap(), Err(SessionError::NoCloud)));
        assert!(matches!(s.train(), Err(SessionError::Head(HeadError::Empty))));
    }

    #[test]
    fn single_class_names_the_missing_class() {
        let s = tiny_session();
        s.set_frame(Frame::decode(two_tone(), None).unwrap());
        s.add_strokes(vec![LabelStroke::new(TerrainClass::Drivable, vec![[30, 29]])]).unwrap();
        match s.train() {
            Err(SessionError::Head(HeadError::SingleClass { missing })) => assert_eq!(missing, TerrainClass::Obstacle),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.info().model_version, 0);
    }

    #[test]
    fn train_commits_a_new_version_and_reuses_features() {
        let s = tiny_session();
        s.set_frame(Frame::decode(two_tone(), None).unwrap());
        let report = s
            .add_strokes(vec![
                LabelStroke::new(TerrainClass::Drivable, vec![[29, 29], [30, 29], [0, 0]]),
                LabelStroke::new(TerrainClass::Obstacle, vec![[29, 34], [30, 34]]),
            ])
            .unwrap();
        assert_eq!(report.report.accepted, 4);
        assert_eq!(report.report.skipped_margin, vec![[0, 0]]);
        let first = s.train().unwrap();
        assert_eq!((first.model_version, first.training_set_size, first.features_computed), (1, 4, 4));
        let second = s.train().unwrap();
        assert_eq!((second.model_version, second.features_computed), (2, 0));
        assert_eq!(s.info().history.len(), 2);
        let c = s.classification().unwrap();
        assert_eq!(c.model_version, 2);
        assert_eq!((c.labels.width(), c.labels.height()), (64, 64));
    }

    #[test]
    fn busy_while_training() {
        let s = tiny_session();
        let _held = s.training.lock().unwrap();
        assert!(matches!(s.train(), Err(SessionError::Busy)));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: SessionConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, SessionConfig::default());
        assert!(c.validate().is_ok());
        let bad = SessionConfig { stride: 0, ..SessionConfig::default() };
        assert!(bad.validate().is_err());
    }
}
