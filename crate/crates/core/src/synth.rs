//! Seeded synthetic data: a ten-class shape corpus for training the
//! extractor, a backyard-like scene with an aligned point cloud, and a small
//! fixture map for the planner.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::costmap::CostMap;
use crate::featnet::LabeledImage;
use crate::ground::{CloudPoint, PointCloud};
use crate::img::Image;
use crate::patch::{patch_fits, LabelStroke, TerrainClass};

pub const SHAPE_CLASSES: usize = 10;
pub const SHAPE_NAMES: [&str; SHAPE_CLASSES] = [
    "disk", "square", "triangle", "plus", "cross", "ring", "diamond", "hbar", "vbar", "pair",
];

fn inside(class: usize, u: f32, v: f32, r: f32) -> bool {
    let d = (u * u + v * v).sqrt();
    match class {
        0 => d <= r,
        1 => u.abs().max(v.abs()) <= 0.8 * r,
        2 => v <= 0.7 * r && v >= -r && u.abs() <= 0.6 * (v + r),
        3 => (u.abs() <= 0.25 * r && v.abs() <= r) || (v.abs() <= 0.25 * r && u.abs() <= r),
        4 => {
            let (a, b) = ((u - v) / 2f32.sqrt(), (u + v) / 2f32.sqrt());
            (a.abs() <= 0.25 * r && b.abs() <= r) || (b.abs() <= 0.25 * r && a.abs() <= r)
        }
        5 => d <= r && d >= 0.6 * r,
        6 => u.abs() + v.abs() <= r,
        7 => u.abs() <= r && v.abs() <= 0.3 * r,
        8 => v.abs() <= r && u.abs() <= 0.3 * r,
        9 => {
            let w = u.abs() - 0.55 * r;
            w * w + v * v <= (0.4 * r) * (0.4 * r)
        }
        _ => false,
    }
}

fn hue_rgb(h: f32) -> [f32; 3] {
    let h6 = (h.fract() * 6.0).rem_euclid(6.0);
    let x = 1.0 - (h6 % 2.0 - 1.0).abs();
    let (r, g, b) = match h6 as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.15 + 0.7 * r, 0.15 + 0.7 * g, 0.15 + 0.7 * b]
}

/// One `size x size` image of `class` with jittered position and size, a
/// random hue and a noisy gray background. Only the outline carries the
/// class.
pub fn shape_image(class: usize, size: usize, rng: &mut impl Rng) -> Image {
    let s = size as f32;
    let r = s * rng.gen_range(0.2..0.28);
    let (cx, cy) = (
        s / 2.0 + rng.gen_range(-0.08..0.08) * s,
        s / 2.0 + rng.gen_range(-0.08..0.08) * s,
    );
    let bg = rng.gen_range(0.1f32..0.4);
    let gain = rng.gen_range(0.85f32..1.1);
    let fg = hue_rgb(rng.gen()).map(|c| (c * gain).min(1.0));
    let noise = Normal::new(0.0f32, 0.03).unwrap();
    let mut pix = Vec::with_capacity(size * size);
    for _ in 0..size * size {
        pix.push(noise.sample(rng));
    }
    Image::from_fn(size, size, |x, y| {
        let n = pix[y * size + x];
        let (u, v) = (x as f32 + 0.5 - cx, y as f32 + 0.5 - cy);
        let base = if inside(class, u, v, r) { fg } else { [bg; 3] };
        base.map(|c| (c + n).clamp(0.0, 1.0))
    })
    .expect("size is positive")
}

/// `per_class` images of every class, interleaved by class.
pub fn shape_corpus(per_class: usize, size: usize, seed: u64) -> Vec<LabeledImage> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * SHAPE_CLASSES);
    for _ in 0..per_class {
        for class in 0..SHAPE_CLASSES {
            out.push(LabeledImage {
                image: shape_image(class, size, &mut rng),
                label: class,
            });
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surface {
    Grass,
    Pavement,
    Box,
}

impl Surface {
    /// The class a human would paint on this surface.
    pub fn terrain(self) -> TerrainClass {
        match self {
            Surface::Box => TerrainClass::Obstacle,
            _ => TerrainClass::Drivable,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub width: usize,
    pub height: usize,
    pub meters_per_pixel: f64,
    /// Robot-frame x of the top image edge.
    pub x_top: f64,
    /// Robot-frame y of the left image edge.
    pub y_left: f64,
    pub grass_height: f64,
    /// Fraction of grass points on blade tops; the rest see the soil.
    pub grass_top_fraction: f64,
    pub box_height: f64,
    pub height_noise: f64,
    /// Pavement frame around the lawn, pixels.
    pub border: usize,
    /// Box squares as `(row, col, side)` in pixels.
    pub boxes: Vec<(usize, usize, usize)>,
    /// Pavement path across the lawn as a column range.
    pub path_cols: (usize, usize),
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            width: 320,
            height: 320,
            meters_per_pixel: 0.025,
            x_top: 7.0,
            y_left: 4.0,
            grass_height: 0.03,
            grass_top_fraction: 0.6,
            box_height: 0.4,
            height_noise: 0.002,
            border: 40,
            boxes: vec![(80, 80, 24), (88, 208, 20), (200, 100, 20), (212, 216, 24), (152, 152, 16)],
            path_cols: (144, 176),
        }
    }
}

/// Image, point cloud and ground truth of one synthetic frame. Each pixel
/// sees the ground point straight below it, so a pixel and its point share
/// one surface.
#[derive(Clone, Debug)]
pub struct Scene {
    pub config: SceneConfig,
    pub image: Image,
    pub cloud: PointCloud,
    /// Row-major surface per pixel.
    pub truth: Vec<Surface>,
}

impl SceneConfig {
    pub fn surface_at(&self, row: usize, col: usize) -> Surface {
        for &(r, c, s) in &self.boxes {
            if (r..r + s).contains(&row) && (c..c + s).contains(&col) {
                return Surface::Box;
            }
        }
        let b = self.border;
        let lawn = row >= b && col >= b && row < self.height - b && col < self.width - b;
        let path = (self.path_cols.0..self.path_cols.1).contains(&col);
        if lawn && !path {
            Surface::Grass
        } else {
            Surface::Pavement
        }
    }

    /// Robot-frame `[x, y]` of a pixel center.
    pub fn pixel_to_xy(&self, row: usize, col: usize) -> [f64; 2] {
        [
            self.x_top - (row as f64 + 0.5) * self.meters_per_pixel,
            self.y_left - (col as f64 + 0.5) * self.meters_per_pixel,
        ]
    }
}

pub fn backyard_scene(config: &SceneConfig, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (config.width, config.height);
    let truth: Vec<Surface> = (0..w * h).map(|i| config.surface_at(i / w, i % w)).collect();
    let grain = Normal::new(0.0f32, 1.0).unwrap();
    let z_noise = Normal::new(0.0, config.height_noise.max(0.0)).unwrap();
    let mut image = Image::new(w, h).expect("scene size is positive");
    let mut points = Vec::with_capacity(w * h);
    for row in 0..h {
        for col in 0..w {
            let s = truth[row * w + col];
            let n = grain.sample(&mut rng);
            let rgb = match s {
                Surface::Grass => {
                    let blade = if (row + 3 * col) % 5 == 0 { 0.12 } else { 0.0 };
                    [0.18 + 0.06 * n, 0.48 + 0.12 * n + blade, 0.12 + 0.04 * n]
                }
                Surface::Pavement => [0.55 + 0.02 * n, 0.55 + 0.02 * n, 0.57 + 0.02 * n],
                Surface::Box => {
                    let edge = config.boxes.iter().any(|&(r, c, sz)| {
                        (r..r + sz).contains(&row)
                            && (c..c + sz).contains(&col)
                            && (row < r + 2 || row + 2 >= r + sz || col < c + 2 || col + 2 >= c + sz)
                    });
                    let k = if edge { 0.5 } else { 1.0 };
                    [k * (0.6 + 0.04 * n), k * (0.36 + 0.03 * n), k * (0.18 + 0.02 * n)]
                }
            };
            image.set_pixel(col, row, rgb.map(|c| c.clamp(0.0, 1.0)));
            let base = match s {
                Surface::Grass if rng.gen_bool(config.grass_top_fraction) => config.grass_height,
                Surface::Box => config.box_height,
                _ => 0.0,
            };
            let [x, y] = config.pixel_to_xy(row, col);
            points.push(CloudPoint::new(x, y, base + z_noise.sample(&mut rng)).with_pixel(row, col));
        }
    }
    Scene {
        config: config.clone(),
        image,
        cloud: PointCloud::new(points),
        truth,
    }
}

impl Scene {
    pub fn surface_at(&self, row: usize, col: usize) -> Surface {
        self.truth[row * self.config.width + col]
    }

    /// The surface of every map cell that only this scene's pixels of a
    /// single surface fall into; `None` for empty or mixed cells.
    pub fn cell_truth(&self, map: &CostMap) -> Vec<Option<Surface>> {
        let mut seen: Vec<Option<Option<Surface>>> = vec![None; map.len()];
        for row in 0..self.config.height {
            for col in 0..self.config.width {
                let [x, y] = self.config.pixel_to_xy(row, col);
                let Some((ix, iy)) = map.locate(x, y) else { continue };
                let s = self.surface_at(row, col);
                let slot = &mut seen[map.index(ix, iy)];
                *slot = match *slot {
                    None => Some(Some(s)),
                    Some(Some(t)) if t == s => Some(Some(s)),
                    _ => Some(None),
                };
            }
        }
        seen.into_iter().map(Option::flatten).collect()
    }

    /// Strokes a careful operator would paint: a lattice of pixels with the
    /// given spacing on every surface, kept only where a full patch fits.
    pub fn paint(&self, spacing: [usize; 3]) -> Vec<LabelStroke> {
        let order = [Surface::Grass, Surface::Pavement, Surface::Box];
        let (w, h) = (self.config.width, self.config.height);
        order
            .iter()
            .zip(spacing)
            .map(|(&surface, step)| {
                let step = step.max(1);
                let mut pixels = Vec::new();
                for row in (0..h).step_by(step) {
                    for col in (0..w).step_by(step) {
                        if self.surface_at(row, col) == surface && patch_fits(w, h, row, col) {
                            pixels.push([row as i64, col as i64]);
                        }
                    }
                }
                LabelStroke::new(surface.terrain(), pixels)
            })
            .collect()
    }

    /// Strokes covering the box tops only, centered in each box.
    pub fn paint_boxes(&self, step: usize) -> LabelStroke {
        let mut pixels = Vec::new();
        for &(r, c, s) in &self.config.boxes {
            for row in (r + 2..r + s - 2).step_by(step.max(1)) {
                for col in (c + 2..c + s - 2).step_by(step.max(1)) {
                    pixels.push([row as i64, col as i64]);
                }
            }
        }
        LabelStroke::new(TerrainClass::Obstacle, pixels)
    }
}

/// Start and goal cells that go with [`wall_gap_map`].
pub const WALL_GAP_START: [usize; 2] = [4, 5];
pub const WALL_GAP_GOAL: [usize; 2] = [25, 6];

/// A 30x30 map at 0.1 m with a wall along `ix = 15` that has a three-cell
/// gap at `iy` 22..=24, a patch of unknown terrain and one small block.
pub fn wall_gap_map() -> CostMap {
    let (nx, ny) = (30, 30);
    let fused: Vec<Option<TerrainClass>> = (0..nx * ny)
        .map(|i| {
            let (ix, iy) = (i % nx, i / nx);
            let wall = ix == 15 && !(22..=24).contains(&iy);
            let block = (8..=10).contains(&ix) && (12..=14).contains(&iy);
            if wall || block {
                Some(TerrainClass::Obstacle)
            } else if (18..=22).contains(&ix) && (8..=16).contains(&iy) {
                None
            } else {
                Some(TerrainClass::Drivable)
            }
        })
        .collect();
    CostMap::from_fused(nx, ny, 0.1, [0.0, 0.0], &fused).expect("fixture dimensions are valid")
}
