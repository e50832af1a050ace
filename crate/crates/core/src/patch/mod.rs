//! Patch scanning, frozen-feature extraction, the two-class head and dense
//! label maps.
//!
//! Pixel coordinates are `(row, col)` throughout this module. A patch is the
//! 59x59 square whose center pixel is 29 pixels below and right of its
//! top-left corner and it is labeled by that center pixel.

mod head;
mod labelmap;
mod strokes;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featnet::{FeatureVector, Network, NetworkError};
use crate::img::{Image, ImageError};

pub use head::{train_head, HeadConfig, HeadError, HeadModel, HeadReport};
pub use labelmap::{label_code, label_from_code, LabelMap, RleLabelMap, LABEL_DRIVABLE, LABEL_OBSTACLE, LABEL_UNKNOWN};
pub use strokes::{strokes_to_centers, strokes_to_patches, LabelSet, LabelStroke, LabeledCenter, LabeledPatch, StrokeReport};

pub const PATCH_SIZE: usize = 59;
pub const PATCH_MARGIN: usize = PATCH_SIZE / 2;

/// Patches are pushed through the extractor in groups of this size.
const FEATURE_CHUNK: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainClass {
    Drivable,
    Obstacle,
}

impl TerrainClass {
    pub const ALL: [TerrainClass; 2] = [TerrainClass::Drivable, TerrainClass::Obstacle];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TerrainClass::Drivable => "drivable",
            TerrainClass::Obstacle => "obstacle",
        }
    }
}

impl std::fmt::Display for TerrainClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum PatchError {
    #[error("image is {width}x{height}, patches need at least {PATCH_SIZE}x{PATCH_SIZE}")]
    TooSmall { width: usize, height: usize },
    #[error("stride must be positive")]
    Stride,
    #[error("patch centered at ({row}, {col}) does not fit in a {width}x{height} image")]
    Center {
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    },
    #[error("patch is {width}x{height}, expected {PATCH_SIZE}x{PATCH_SIZE} or the extractor input size {input}")]
    PatchShape { width: usize, height: usize, input: usize },
    #[error("{got} feature vectors for {expected} scan centers")]
    FeatureCount { expected: usize, got: usize },
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// Patch centers of an image on a regular grid: every `stride`-th row and
/// column starting at the margin, up to the last center whose patch still fits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScanGrid {
    pub width: usize,
    pub height: usize,
    pub stride: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

fn axis_centers(len: usize, stride: usize) -> Vec<usize> {
    (PATCH_MARGIN..len - PATCH_MARGIN).step_by(stride).collect()
}

impl ScanGrid {
    pub fn new(width: usize, height: usize, stride: usize) -> Result<Self, PatchError> {
        if width < PATCH_SIZE || height < PATCH_SIZE {
            return Err(PatchError::TooSmall { width, height });
        }
        if stride == 0 {
            return Err(PatchError::Stride);
        }
        Ok(ScanGrid {
            width,
            height,
            stride,
            rows: axis_centers(height, stride),
            cols: axis_centers(width, stride),
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Centers in row-major order.
    pub fn centers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.rows.iter().flat_map(move |&r| self.cols.iter().map(move |&c| (r, c)))
    }
}

pub fn patch_fits(width: usize, height: usize, row: usize, col: usize) -> bool {
    row >= PATCH_MARGIN && col >= PATCH_MARGIN && row + PATCH_MARGIN < height && col + PATCH_MARGIN < width
}

pub fn extract_patch(image: &Image, center: (usize, usize)) -> Result<Image, PatchError> {
    let (row, col) = center;
    if !patch_fits(image.width(), image.height(), row, col) {
        return Err(PatchError::Center {
            row,
            col,
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(image.crop(col - PATCH_MARGIN, row - PATCH_MARGIN, PATCH_SIZE, PATCH_SIZE)?)
}

/// A patch and the `(row, col)` of its center pixel.
pub type CenteredPatch = ((usize, usize), Image);

/// Every fully-inside patch on the stride grid, row-major.
pub fn scan_patches(image: &Image, stride: usize) -> Result<Vec<CenteredPatch>, PatchError> {
    let grid = ScanGrid::new(image.width(), image.height(), stride)?;
    grid.centers()
        .map(|c| extract_patch(image, c).map(|p| (c, p)))
        .collect()
}

/// Bilinear upscale of a patch to the extractor's input size, then the
/// extractor's mean subtraction. Inputs already at the extractor size skip
/// the resize.
fn patch_input(net: &Network, patch: &Image) -> Result<crate::tensor::Tensor, PatchError> {
    let input = net.spec().input_size;
    let (w, h) = (patch.width(), patch.height());
    let sized = if w == input && h == input {
        patch.clone()
    } else if w == PATCH_SIZE && h == PATCH_SIZE {
        patch.resize_bilinear(input, input)?
    } else {
        return Err(PatchError::PatchShape { width: w, height: h, input });
    };
    Ok(net.preprocess(&sized)?)
}

pub fn patch_features(net: &Network, patch: &Image) -> Result<FeatureVector, PatchError> {
    Ok(net.extract_features(&patch_input(net, patch)?)?)
}

pub fn patch_features_batch(net: &Network, patches: &[Image]) -> Result<Vec<FeatureVector>, PatchError> {
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(FEATURE_CHUNK) {
        let inputs = chunk
            .iter()
            .map(|p| patch_input(net, p))
            .collect::<Result<Vec<_>, _>>()?;
        out.extend(net.extract_features_batch(&inputs)?);
    }
    Ok(out)
}

/// Features for the patches centered at `centers`, extracted in chunks so
/// only a few patches are materialized at a time.
pub fn center_features(
    net: &Network,
    image: &Image,
    centers: &[(usize, usize)],
) -> Result<Vec<FeatureVector>, PatchError> {
    let mut out = Vec::with_capacity(centers.len());
    for chunk in centers.chunks(FEATURE_CHUNK) {
        let patches = chunk
            .iter()
            .map(|&c| extract_patch(image, c))
            .collect::<Result<Vec<_>, _>>()?;
        out.extend(patch_features_batch(net, &patches)?);
    }
    Ok(out)
}

/// Features for every center of a scan grid, in [`ScanGrid::centers`] order.
pub fn scan_features(net: &Network, image: &Image, grid: &ScanGrid) -> Result<Vec<FeatureVector>, PatchError> {
    let centers: Vec<_> = grid.centers().collect();
    center_features(net, image, &centers)
}

/// Dense label map from precomputed scan features.
pub fn classify_features(grid: &ScanGrid, features: &[FeatureVector], head: &HeadModel) -> Result<LabelMap, PatchError> {
    if features.len() != grid.len() {
        return Err(PatchError::FeatureCount {
            expected: grid.len(),
            got: features.len(),
        });
    }
    let predictions = features
        .iter()
        .map(|f| head.predict(f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LabelMap::from_grid(grid, &predictions))
}

pub fn classify_image(image: &Image, net: &Network, head: &HeadModel, stride: usize) -> Result<LabelMap, PatchError> {
    let grid = ScanGrid::new(image.width(), image.height(), stride)?;
    let features = scan_features(net, image, &grid)?;
    classify_features(&grid, &features, head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featnet::{build_network, NetworkSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| [rng.gen(), rng.gen(), rng.gen()]).unwrap()
    }

    fn brute_force_centers(w: usize, h: usize, stride: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for top in 0..h {
            for left in 0..w {
                let fits = top + 59 <= h && left + 59 <= w;
                if fits && top % stride == 0 && left % stride == 0 {
                    out.push((top + 29, left + 29));
                }
            }
        }
        out
    }

    #[test]
    fn minimal_image_has_one_patch() {
        let img = noise(59, 59, 0);
        let patches = scan_patches(&img, 1).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].0, (29, 29));
        assert_eq!(patches[0].1, img);
    }

    #[test]
    fn scan_counts_match_enumeration() {
        assert_eq!(ScanGrid::new(61, 61, 1).unwrap().len(), 9);
        for (w, h, s) in [(119, 119, 10), (60, 80, 3), (200, 64, 7), (59, 100, 1)] {
            let grid = ScanGrid::new(w, h, s).unwrap();
            assert_eq!(grid.centers().collect::<Vec<_>>(), brute_force_centers(w, h, s), "{w}x{h}/{s}");
        }
    }

    #[test]
    fn scan_errors() {
        assert!(matches!(ScanGrid::new(58, 100, 1), Err(PatchError::TooSmall { .. })));
        assert!(matches!(ScanGrid::new(60, 60, 0), Err(PatchError::Stride)));
    }

    #[test]
    fn patches_are_centered_crops() {
        let img = noise(70, 65, 1);
        for ((r, c), p) in scan_patches(&img, 4).unwrap() {
            assert_eq!(p.pixel(29, 29), img.pixel(c, r));
            assert_eq!(p.pixel(0, 0), img.pixel(c - 29, r - 29));
            assert_eq!(p.pixel(58, 58), img.pixel(c + 29, r + 29));
        }
        assert!(extract_patch(&img, (35, 40)).is_ok());
        assert!(extract_patch(&img, (28, 40)).is_err());
        assert!(extract_patch(&img, (36, 40)).is_err());
        assert!(extract_patch(&img, (35, 41)).is_err());
    }

    #[test]
    fn patch_features_shape_determinism_and_resize_path() {
        let net = build_network(NetworkSpec::with_classes(2), 3).unwrap();
        let patch = noise(59, 59, 2);
        let a = patch_features(&net, &patch).unwrap();
        assert_eq!(a.len(), 1536);
        assert!(a.is_finite());
        assert_eq!(patch_features(&net, &patch).unwrap(), a);
        let upscaled = patch.resize_bilinear(119, 119).unwrap();
        assert_eq!(patch_features(&net, &upscaled).unwrap(), a);
        assert!(matches!(
            patch_features(&net, &noise(60, 59, 0)),
            Err(PatchError::PatchShape { .. })
        ));
    }

    #[test]
    fn batched_features_equal_single() {
        let net = build_network(NetworkSpec::with_classes(2), 4).unwrap();
        let img = noise(70, 64, 5);
        let grid = ScanGrid::new(70, 64, 3).unwrap();
        let batch = scan_features(&net, &img, &grid).unwrap();
        assert_eq!(batch.len(), grid.len());
        for ((c, p), f) in scan_patches(&img, 3).unwrap().iter().zip(&batch) {
            assert_eq!(&patch_features(&net, p).unwrap(), f, "center {c:?}");
        }
    }
}
