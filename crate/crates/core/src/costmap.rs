//! Robot-centered cost maps: point projection, stereo/network fusion,
//! obstacle dilation and the distance-to-obstacle field.
//!
//! Cell `(ix, iy)` covers `x` in `[ox + ix r, ox + (ix + 1) r)` and `y` in
//! `[oy + iy r, oy + (iy + 1) r)`, where `(ox, oy)` is the map origin and `r`
//! the resolution; its center is half a cell further. Cells are stored with
//! index `iy * nx + ix`.
//!
//! Grid file (little-endian):
//!
//! ```text
//! offset          size     field
//! 0               4        magic "TNCM"
//! 4               4        version u32 = 1
//! 8               4        nx u32
//! 12              4        ny u32
//! 16              8        resolution f64, meters per cell
//! 24              8        origin x f64
//! 32              8        origin y f64
//! 40              nx*ny    fused label per cell, 0 unknown / 1 drivable / 2 obstacle
//! 40 + nx*ny      4*nx*ny  max height per cell f32, NaN when unknown
//! ```

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ground::{PointClass, PointCloud, PointLabel};
use crate::img::Image;
use crate::patch::{LabelMap, TerrainClass};

pub const GRID_MAGIC: &[u8; 4] = b"TNCM";
pub const GRID_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CostmapError {
    #[error("invalid fusion config: {0}")]
    Config(String),
    #[error("{labels} point labels for {points} points")]
    LabelCount { points: usize, labels: usize },
    #[error("grid file: {0}")]
    Format(String),
    #[error("grid io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Cells whose highest point exceeds this are obstacles whatever the
    /// network says.
    pub hard_height_threshold: f64,
    pub dilation_radius: f64,
    /// Side length of the square map, meters.
    pub map_size: f64,
    pub resolution: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            hard_height_threshold: 0.15,
            dilation_radius: 0.15,
            map_size: 15.0,
            resolution: 0.10,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<(), CostmapError> {
        for (name, v) in [
            ("hard_height_threshold", self.hard_height_threshold),
            ("map_size", self.map_size),
            ("resolution", self.resolution),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CostmapError::Config(format!("{name} must be positive")));
            }
        }
        if !(self.dilation_radius.is_finite() && self.dilation_radius >= 0.0) {
            return Err(CostmapError::Config("dilation_radius must be non-negative".into()));
        }
        if self.cells_per_side() == 0 {
            return Err(CostmapError::Config("map must have at least one cell".into()));
        }
        Ok(())
    }

    pub fn cells_per_side(&self) -> usize {
        (self.map_size / self.resolution).round() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub max_height: Option<f64>,
    pub stereo: Option<PointClass>,
    pub net: Option<TerrainClass>,
    pub fused: Option<TerrainClass>,
    /// Meters from this cell's center to the nearest obstacle center.
    pub distance: f64,
}

impl Default for Cell {
    fn default() -> Self {
        Cell {
            max_height: None,
            stereo: None,
            net: None,
            fused: None,
            distance: f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostMap {
    nx: usize,
    ny: usize,
    resolution: f64,
    origin: [f64; 2],
    cells: Vec<Cell>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProjectionReport {
    pub projected: usize,
    /// Points outside the map extent.
    pub dropped: usize,
    /// Points inside the map whose pixel has a network label.
    pub with_net_label: usize,
}

/// The fusion rule for one cell.
///
/// Heights above the hard threshold make an obstacle. Below it the network
/// label wins, falling back to the stereo label when the network has none.
/// Without a height only the network label is used.
pub fn fuse_cell(
    max_height: Option<f64>,
    stereo: Option<PointClass>,
    net: Option<TerrainClass>,
    hard_threshold: f64,
) -> Option<TerrainClass> {
    match max_height {
        Some(h) if h > hard_threshold => Some(TerrainClass::Obstacle),
        Some(_) => net.or(stereo.map(|s| match s {
            PointClass::Obstacle => TerrainClass::Obstacle,
            PointClass::Traversable => TerrainClass::Drivable,
        })),
        None => net,
    }
}

/// Squared Euclidean distance transform of a 1-D sampled function
/// (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let Some(start) = f.iter().position(|v| v.is_finite()) else {
        out.iter_mut().for_each(|o| *o = f64::INFINITY);
        return;
    };
    let mut k = 0usize;
    v[0] = start;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in start + 1..n {
        if !f[q].is_finite() {
            continue;
        }
        let s = loop {
            let p = v[k];
            let s = ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q - p) as f64);
            // z[0] is -inf, so this stops at k = 0 at the latest.
            if s > z[k] {
                break s;
            }
            k -= 1;
        };
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let d = q as f64 - v[k] as f64;
        *o = d * d + f[v[k]];
    }
}

/// Exact squared distances, in cells, from every cell to the nearest `true`
/// cell of an `nx x ny` mask; infinite when the mask is empty.
pub fn squared_distance_cells(mask: &[bool], nx: usize, ny: usize) -> Vec<f64> {
    let mut g: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { f64::INFINITY }).collect();
    let n = nx.max(ny);
    let (mut v, mut z) = (vec![0usize; n], vec![0.0f64; n + 1]);
    let (mut col, mut out) = (vec![0.0f64; n], vec![0.0f64; n]);
    for ix in 0..nx {
        for iy in 0..ny {
            col[iy] = g[iy * nx + ix];
        }
        edt_1d(&col[..ny], &mut out[..ny], &mut v, &mut z);
        for iy in 0..ny {
            g[iy * nx + ix] = out[iy];
        }
    }
    for iy in 0..ny {
        let row = &mut g[iy * nx..(iy + 1) * nx];
        col[..nx].copy_from_slice(row);
        edt_1d(&col[..nx], &mut out[..nx], &mut v, &mut z);
        row.copy_from_slice(&out[..nx]);
    }
    g
}

impl CostMap {
    /// All-unknown map with the extent and resolution of `config`, centered
    /// on the robot.
    pub fn empty(config: &FusionConfig) -> Result<Self, CostmapError> {
        config.validate()?;
        let n = config.cells_per_side();
        let half = n as f64 * config.resolution / 2.0;
        Ok(CostMap {
            nx: n,
            ny: n,
            resolution: config.resolution,
            origin: [-half, -half],
            cells: vec![Cell::default(); n * n],
        })
    }

    /// A map with the given fused labels; distances are computed.
    pub fn from_fused(
        nx: usize,
        ny: usize,
        resolution: f64,
        origin: [f64; 2],
        fused: &[Option<TerrainClass>],
    ) -> Result<Self, CostmapError> {
        if nx == 0 || ny == 0 || fused.len() != nx * ny {
            return Err(CostmapError::Format(format!(
                "{} labels for a {nx}x{ny} map",
                fused.len()
            )));
        }
        if !(resolution.is_finite() && resolution > 0.0) {
            return Err(CostmapError::Config("resolution must be positive".into()));
        }
        let cells = fused
            .iter()
            .map(|&f| Cell { fused: f, ..Cell::default() })
            .collect();
        let mut map = CostMap { nx, ny, resolution, origin, cells };
        map.compute_distances();
        Ok(map)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.nx, index / self.nx)
    }

    pub fn cell(&self, ix: usize, iy: usize) -> &Cell {
        &self.cells[self.index(ix, iy)]
    }

    pub fn cell_mut(&mut self, ix: usize, iy: usize) -> &mut Cell {
        let i = self.index(ix, iy);
        &mut self.cells[i]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        ]
    }

    /// Cell containing the robot-frame point `(x, y)`.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.origin[0]) / self.resolution).floor();
        let fy = ((y - self.origin[1]) / self.resolution).floor();
        if fx >= 0.0 && fy >= 0.0 && fx < self.nx as f64 && fy < self.ny as f64 {
            Some((fx as usize, fy as usize))
        } else {
            None
        }
    }

    pub fn is_obstacle(&self, index: usize) -> bool {
        self.cells[index].fused == Some(TerrainClass::Obstacle)
    }

    /// Counts of unknown, drivable and obstacle fused cells.
    pub fn counts(&self) -> [usize; 3] {
        let mut n = [0; 3];
        for c in &self.cells {
            n[match c.fused {
                None => 0,
                Some(TerrainClass::Drivable) => 1,
                Some(TerrainClass::Obstacle) => 2,
            }] += 1;
        }
        n
    }

    /// Projects labeled points onto an empty map: per cell the maximum point
    /// height, stereo obstacle if any point is an obstacle, and the majority
    /// network label of the points' pixels (ties go to obstacle).
    pub fn project(
        cloud: &PointCloud,
        labels: &[PointLabel],
        label_map: Option<&LabelMap>,
        config: &FusionConfig,
    ) -> Result<(Self, ProjectionReport), CostmapError> {
        if labels.len() != cloud.len() {
            return Err(CostmapError::LabelCount {
                points: cloud.len(),
                labels: labels.len(),
            });
        }
        let mut map = CostMap::empty(config)?;
        let mut votes = vec![[0u32; 2]; map.cells.len()];
        let mut report = ProjectionReport::default();
        for (p, l) in cloud.points.iter().zip(labels) {
            let Some((ix, iy)) = map.locate(p.xyz[0], p.xyz[1]) else {
                report.dropped += 1;
                continue;
            };
            report.projected += 1;
            let i = map.index(ix, iy);
            let cell = &mut map.cells[i];
            cell.max_height = Some(cell.max_height.map_or(l.height, |h| h.max(l.height)));
            cell.stereo = match (cell.stereo, l.class) {
                (Some(PointClass::Obstacle), _) | (_, PointClass::Obstacle) => Some(PointClass::Obstacle),
                _ => Some(PointClass::Traversable),
            };
            let net = match (p.pixel, label_map) {
                (Some([r, c]), Some(m)) if r < m.height() && c < m.width() => m.get(r, c),
                _ => None,
            };
            if let Some(class) = net {
                votes[i][class.index()] += 1;
                report.with_net_label += 1;
            }
        }
        for (cell, [d, o]) in map.cells.iter_mut().zip(votes) {
            cell.net = match (d, o) {
                (0, 0) => None,
                (d, o) if d > o => Some(TerrainClass::Drivable),
                _ => Some(TerrainClass::Obstacle),
            };
        }
        Ok((map, report))
    }

    /// Applies [`fuse_cell`] to every cell.
    pub fn fuse(&mut self, config: &FusionConfig) {
        for c in &mut self.cells {
            c.fused = fuse_cell(c.max_height, c.stereo, c.net, config.hard_height_threshold);
        }
    }

    /// Marks every cell whose center lies within `radius` meters of an
    /// obstacle cell's center as obstacle, then refreshes distances.
    pub fn dilate(&mut self, radius: f64) {
        let mask: Vec<bool> = (0..self.cells.len()).map(|i| self.is_obstacle(i)).collect();
        let d2 = squared_distance_cells(&mask, self.nx, self.ny);
        let r = radius / self.resolution;
        let limit = r * r * (1.0 + 1e-9) + 1e-9;
        for (c, &d) in self.cells.iter_mut().zip(&d2) {
            if d <= limit {
                c.fused = Some(TerrainClass::Obstacle);
            }
        }
        self.compute_distances();
    }

    /// Exact Euclidean distance from every cell center to the nearest
    /// obstacle cell center, meters; infinite without obstacles.
    pub fn compute_distances(&mut self) {
        let mask: Vec<bool> = (0..self.cells.len()).map(|i| self.is_obstacle(i)).collect();
        let d2 = squared_distance_cells(&mask, self.nx, self.ny);
        for (c, d) in self.cells.iter_mut().zip(d2) {
            c.distance = d.sqrt() * self.resolution;
        }
    }

    /// Projection, fusion, dilation and distances in one go.
    pub fn build(
        cloud: &PointCloud,
        labels: &[PointLabel],
        label_map: Option<&LabelMap>,
        config: &FusionConfig,
    ) -> Result<(Self, ProjectionReport), CostmapError> {
        let (mut map, report) = Self::project(cloud, labels, label_map, config)?;
        map.fuse(config);
        map.dilate(config.dilation_radius);
        Ok((map, report))
    }

    pub fn encode_grid(&self) -> Vec<u8> {
        let n = self.cells.len();
        let mut out = Vec::with_capacity(40 + 5 * n);
        out.extend_from_slice(GRID_MAGIC);
        out.extend_from_slice(&GRID_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.nx as u32).to_le_bytes());
        out.extend_from_slice(&(self.ny as u32).to_le_bytes());
        out.extend_from_slice(&self.resolution.to_le_bytes());
        out.extend_from_slice(&self.origin[0].to_le_bytes());
        out.extend_from_slice(&self.origin[1].to_le_bytes());
        out.extend(self.cells.iter().map(|c| crate::patch::label_code(c.fused)));
        for c in &self.cells {
            out.extend_from_slice(&c.max_height.map_or(f32::NAN, |h| h as f32).to_le_bytes());
        }
        out
    }

    /// Reads a grid file. Only fused labels and heights are stored, so
    /// stereo and network labels come back unknown; distances are
    /// recomputed.
    pub fn decode_grid(bytes: &[u8]) -> Result<Self, CostmapError> {
        let bad = |m: &str| CostmapError::Format(m.to_string());
        if bytes.len() < 40 || &bytes[..4] != GRID_MAGIC {
            return Err(bad("missing TNCM header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        if u32_at(4) != GRID_VERSION {
            return Err(bad(&format!("unsupported version {}", u32_at(4))));
        }
        let (nx, ny) = (u32_at(8) as usize, u32_at(12) as usize);
        let n = nx
            .checked_mul(ny)
            .filter(|&n| n > 0)
            .ok_or_else(|| bad("empty or oversized grid"))?;
        if bytes.len() != 40 + 5 * n {
            return Err(bad(&format!("expected {} bytes, got {}", 40 + 5 * n, bytes.len())));
        }
        let resolution = f64_at(16);
        let origin = [f64_at(24), f64_at(32)];
        if !(origin[0].is_finite() && origin[1].is_finite()) {
            return Err(bad("origin must be finite"));
        }
        let fused = bytes[40..40 + n]
            .iter()
            .map(|&b| crate::patch::label_from_code(b).ok_or_else(|| bad(&format!("bad label byte {b}"))))
            .collect::<Result<Vec<_>, _>>()?;
        let mut map = CostMap::from_fused(nx, ny, resolution, origin, &fused)?;
        for (i, c) in map.cells.iter_mut().enumerate() {
            let o = 40 + n + 4 * i;
            let h = f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
            c.max_height = (!h.is_nan()).then_some(h as f64);
        }
        Ok(map)
    }

    pub fn save_grid(&self, path: impl AsRef<std::path::Path>) -> Result<(), CostmapError> {
        std::fs::write(path, self.encode_grid())?;
        Ok(())
    }

    pub fn load_grid(path: impl AsRef<std::path::Path>) -> Result<Self, CostmapError> {
        Self::decode_grid(&std::fs::read(path)?)
    }

    pub fn summary(&self) -> CostmapSummary {
        let [unknown, drivable, obstacle] = self.counts();
        CostmapSummary {
            nx: self.nx,
            ny: self.ny,
            resolution: self.resolution,
            origin: self.origin,
            unknown,
            drivable,
            obstacle,
        }
    }

    /// Top-down render with forward (+x) up and left (+y) to the left:
    /// red obstacle, green drivable, gray unknown. The image is `ny` wide
    /// and `nx` tall.
    pub fn render(&self) -> Image {
        Image::from_fn(self.ny, self.nx, |col, row| {
            let (ix, iy) = (self.nx - 1 - row, self.ny - 1 - col);
            match self.cell(ix, iy).fused {
                Some(TerrainClass::Obstacle) => [1.0, 0.0, 0.0],
                Some(TerrainClass::Drivable) => [0.0, 1.0, 0.0],
                None => [0.5, 0.5, 0.5],
            }
        })
        .expect("maps have positive dimensions")
    }

    /// Binary PPM of [`CostMap::render`].
    pub fn render_ppm(&self) -> Vec<u8> {
        self.render().encode_ppm()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostmapSummary {
    pub nx: usize,
    pub ny: usize,
    pub resolution: f64,
    pub origin: [f64; 2],
    pub unknown: usize,
    pub drivable: usize,
    pub obstacle: usize,
}
