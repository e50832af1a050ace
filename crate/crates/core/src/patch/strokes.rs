//! Human label strokes and their conversion to labeled patches.
//!
//! Label file / request body:
//!
//! ```json
//! {"strokes": [{"class": "drivable", "pixels": [[40, 31], [40, 32]]},
//!              {"class": "obstacle", "pixels": [[70, 90]], "brush_radius": 3}]}
//! ```
//!
//! Pixels are `[row, col]`. `brush_radius` is informational; strokes arrive
//! already rasterized.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{extract_patch, patch_fits, PatchError, TerrainClass};
use crate::img::Image;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelStroke {
    pub class: TerrainClass,
    pub pixels: Vec<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub brush_radius: Option<f64>,
}

impl LabelStroke {
    pub fn new(class: TerrainClass, pixels: Vec<[i64; 2]>) -> Self {
        LabelStroke {
            class,
            pixels,
            brush_radius: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelSet {
    pub strokes: Vec<LabelStroke>,
}

/// A patch center `(row, col)` and its class.
pub type LabeledCenter = ((usize, usize), TerrainClass);

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPatch {
    pub center: (usize, usize),
    pub patch: Image,
    pub label: TerrainClass,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrokeReport {
    /// Distinct labeled pixels whose patch fits.
    pub accepted: usize,
    /// Pixels outside the image.
    pub skipped_outside: Vec<[i64; 2]>,
    /// Pixels inside the image but within the patch margin of the border.
    pub skipped_margin: Vec<[i64; 2]>,
    /// Repeated pixels; the latest stroke's class was kept.
    pub duplicates: usize,
}

/// Usable stroke pixels in order of first appearance, each with the class
/// of the last stroke that touched it.
pub fn strokes_to_centers(
    width: usize,
    height: usize,
    strokes: &[LabelStroke],
) -> (Vec<LabeledCenter>, StrokeReport) {
    let mut report = StrokeReport::default();
    let mut centers: Vec<LabeledCenter> = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
    for stroke in strokes {
        for &[r, c] in &stroke.pixels {
            let inside = r >= 0 && c >= 0 && (r as u64) < height as u64 && (c as u64) < width as u64;
            if !inside {
                report.skipped_outside.push([r, c]);
                continue;
            }
            let (row, col) = (r as usize, c as usize);
            if !patch_fits(width, height, row, col) {
                report.skipped_margin.push([r, c]);
                continue;
            }
            match seen.get(&(row, col)) {
                Some(&i) => {
                    centers[i].1 = stroke.class;
                    report.duplicates += 1;
                }
                None => {
                    seen.insert((row, col), centers.len());
                    centers.push(((row, col), stroke.class));
                }
            }
        }
    }
    report.accepted = centers.len();
    (centers, report)
}

pub fn strokes_to_patches(
    image: &Image,
    strokes: &[LabelStroke],
) -> Result<(Vec<LabeledPatch>, StrokeReport), PatchError> {
    let (centers, report) = strokes_to_centers(image.width(), image.height(), strokes);
    let patches = centers
        .into_iter()
        .map(|(center, label)| {
            extract_patch(image, center).map(|patch| LabeledPatch { center, patch, label })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok((patches, report))
}

#[cfg(test)]
mod tests {
    use super::*;

    const D: TerrainClass = TerrainClass::Drivable;
    const O: TerrainClass = TerrainClass::Obstacle;

    #[test]
    fn single_pixel_stroke() {
        let img = Image::filled(59, 59, [0.5; 3]).unwrap();
        let (patches, report) = strokes_to_patches(&img, &[LabelStroke::new(D, vec![[29, 29]])]).unwrap();
        assert_eq!(patches.len(), 1);
        assert_eq!(patches[0].center, (29, 29));
        assert_eq!(patches[0].label, D);
        assert_eq!(patches[0].patch, img);
        assert_eq!(report.accepted, 1);
    }

    #[test]
    fn border_and_outside_pixels_are_reported() {
        let strokes = [LabelStroke::new(O, vec![[0, 0], [-1, 5], [30, 200], [29, 30]])];
        let (centers, report) = strokes_to_centers(60, 60, &strokes);
        assert_eq!(centers, vec![((29, 30), O)]);
        assert_eq!(report.skipped_margin, vec![[0, 0]]);
        assert_eq!(report.skipped_outside, vec![[-1, 5], [30, 200]]);
    }

    #[test]
    fn later_stroke_wins() {
        let strokes = [
            LabelStroke::new(D, vec![[40, 40], [41, 40]]),
            LabelStroke::new(O, vec![[40, 40]]),
        ];
        let (centers, report) = strokes_to_centers(100, 100, &strokes);
        assert_eq!(centers, vec![((40, 40), O), ((41, 40), D)]);
        assert_eq!(report.duplicates, 1);
        assert_eq!(report.accepted, 2);
    }

    #[test]
    fn label_json_format() {
        let text = r#"{"strokes":[{"class":"drivable","pixels":[[40,31],[40,32]]},
                       {"class":"obstacle","pixels":[[70,90]],"brush_radius":3}]}"#;
        let set: LabelSet = serde_json::from_str(text).unwrap();
        assert_eq!(set.strokes[0], LabelStroke::new(D, vec![[40, 31], [40, 32]]));
        assert_eq!(set.strokes[1].brush_radius, Some(3.0));
        let again: LabelSet = serde_json::from_str(&serde_json::to_string(&set).unwrap()).unwrap();
        assert_eq!(again, set);
        assert!(serde_json::from_str::<LabelSet>(r#"{"strokes":[{"class":"grass","pixels":[]}]}"#).is_err());
    }
}
