//! Per-pixel drivable/obstacle/unknown maps and their run-length JSON form.
//!
//! ```json
//! {"width": 4, "height": 2, "runs": [[0, 5], [1, 2], [2, 1]]}
//! ```
//!
//! `runs` are `[value, count]` pairs covering the pixels in row-major order;
//! values are 0 unknown, 1 drivable, 2 obstacle. Counts are positive and sum
//! to `width * height`.

use serde::{Deserialize, Serialize};

use super::{ScanGrid, TerrainClass, PATCH_MARGIN};
use crate::img::Image;

pub const LABEL_UNKNOWN: u8 = 0;
pub const LABEL_DRIVABLE: u8 = 1;
pub const LABEL_OBSTACLE: u8 = 2;

pub fn label_code(label: Option<TerrainClass>) -> u8 {
    match label {
        None => LABEL_UNKNOWN,
        Some(TerrainClass::Drivable) => LABEL_DRIVABLE,
        Some(TerrainClass::Obstacle) => LABEL_OBSTACLE,
    }
}

pub fn label_from_code(code: u8) -> Option<Option<TerrainClass>> {
    match code {
        LABEL_UNKNOWN => Some(None),
        LABEL_DRIVABLE => Some(Some(TerrainClass::Drivable)),
        LABEL_OBSTACLE => Some(Some(TerrainClass::Obstacle)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    cells: Vec<Option<TerrainClass>>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleLabelMap {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<[u64; 2]>,
}

/// Index of the nearest center along one axis for every coordinate in
/// `lo..hi`; equidistant coordinates take the lower center.
fn nearest_axis(centers: &[usize], stride: usize, lo: usize, hi: usize) -> Vec<usize> {
    (lo..hi)
        .map(|p| {
            let off = p - centers[0];
            let (q, rem) = (off / stride, off % stride);
            let k = if 2 * rem <= stride { q } else { q + 1 };
            k.min(centers.len() - 1)
        })
        .collect()
}

impl LabelMap {
    pub fn unknown(width: usize, height: usize) -> Self {
        LabelMap {
            width,
            height,
            cells: vec![None; width * height],
        }
    }

    /// Dense map from one prediction per grid center (row-major). Pixels
    /// within the patch margin of the border stay unknown; every other pixel
    /// takes the label of the nearest center on each axis.
    pub fn from_grid(grid: &ScanGrid, predictions: &[TerrainClass]) -> Self {
        assert_eq!(predictions.len(), grid.len(), "one prediction per center");
        let mut map = LabelMap::unknown(grid.width, grid.height);
        let (r0, r1) = (PATCH_MARGIN, grid.height - PATCH_MARGIN);
        let (c0, c1) = (PATCH_MARGIN, grid.width - PATCH_MARGIN);
        let near_r = nearest_axis(&grid.rows, grid.stride, r0, r1);
        let near_c = nearest_axis(&grid.cols, grid.stride, c0, c1);
        let ncols = grid.cols.len();
        for (row, &kr) in (r0..r1).zip(&near_r) {
            for (col, &kc) in (c0..c1).zip(&near_c) {
                map.cells[row * grid.width + col] = Some(predictions[kr * ncols + kc]);
            }
        }
        map
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> Option<TerrainClass> {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, label: Option<TerrainClass>) {
        self.cells[row * self.width + col] = label;
    }

    pub fn cells(&self) -> &[Option<TerrainClass>] {
        &self.cells
    }

    /// Counts of unknown, drivable and obstacle pixels.
    pub fn counts(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for &c in &self.cells {
            n[label_code(c) as usize] += 1;
        }
        n
    }

    pub fn to_rle(&self) -> RleLabelMap {
        let mut runs: Vec<[u64; 2]> = Vec::new();
        for &c in &self.cells {
            let v = label_code(c) as u64;
            match runs.last_mut() {
                Some(last) if last[0] == v => last[1] += 1,
                _ => runs.push([v, 1]),
            }
        }
        RleLabelMap {
            width: self.width,
            height: self.height,
            runs,
        }
    }

    pub fn from_rle(rle: &RleLabelMap) -> Result<Self, String> {
        let total = rle
            .width
            .checked_mul(rle.height)
            .ok_or_else(|| "label map dimensions overflow".to_string())?;
        let mut cells = Vec::with_capacity(total);
        for (i, &[v, n]) in rle.runs.iter().enumerate() {
            let label = u8::try_from(v)
                .ok()
                .and_then(label_from_code)
                .ok_or_else(|| format!("run {i}: unknown label value {v}"))?;
            if n == 0 {
                return Err(format!("run {i}: zero-length run"));
            }
            if (cells.len() as u64).saturating_add(n) > total as u64 {
                return Err(format!("runs cover more than {total} pixels"));
            }
            cells.extend(std::iter::repeat_n(label, n as usize));
        }
        if cells.len() != total {
            return Err(format!("runs cover {} of {total} pixels", cells.len()));
        }
        Ok(LabelMap {
            width: rle.width,
            height: rle.height,
            cells,
        })
    }

    /// Overlay colors: green drivable, red obstacle, unknown keeps the base
    /// image (or black without one). `alpha` weights the overlay color.
    pub fn render(&self, base: Option<&Image>, alpha: f32) -> Image {
        Image::from_fn(self.width, self.height, |x, y| {
            let under = base.map_or([0.0; 3], |b| b.pixel(x, y));
            let color = match self.get(y, x) {
                None => return under,
                Some(TerrainClass::Drivable) => [0.0, 1.0, 0.0],
                Some(TerrainClass::Obstacle) => [1.0, 0.0, 0.0],
            };
            [0, 1, 2].map(|c| under[c] * (1.0 - alpha) + color[c] * alpha)
        })
        .expect("label maps have positive dimensions")
    }
}
