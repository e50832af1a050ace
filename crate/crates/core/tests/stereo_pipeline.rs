//! Ground fit, point labels and a stereo-only cost map on a synthetic frame.

use terrainnav::costmap::{CostMap, FusionConfig};
use terrainnav::ground::{hough_plane_fit, label_points, HoughConfig, PointClass};
use terrainnav::patch::TerrainClass;
use terrainnav::synth::{backyard_scene, SceneConfig, Surface};

fn scene() -> terrainnav::synth::Scene {
    let config = SceneConfig {
        width: 160,
        height: 160,
        border: 30,
        boxes: vec![(50, 50, 20), (90, 100, 20)],
        path_cols: (76, 90),
        ..SceneConfig::default()
    };
    backyard_scene(&config, 5)
}

#[test]
fn stereo_alone_separates_boxes_from_pavement() {
    let scene = scene();
    let plane = hough_plane_fit(&scene.cloud, &HoughConfig::default()).unwrap();
    assert!(plane.angle_to([0.0, 0.0, 1.0]).to_degrees() < 1.0);
    assert!(plane.offset.abs() < 0.01);

    let labels = label_points(&scene.cloud, &plane, 0.02);
    for (label, surface) in labels.iter().zip(&scene.truth) {
        match surface {
            Surface::Box => assert_eq!(label.class, PointClass::Obstacle),
            Surface::Pavement => assert_eq!(label.class, PointClass::Traversable),
            Surface::Grass => {}
        }
    }

    let config = FusionConfig::default();
    let (map, report) = CostMap::build(&scene.cloud, &labels, None, &config).unwrap();
    assert_eq!(report.projected + report.dropped, scene.cloud.len());
    assert_eq!(report.with_net_label, 0);

    let truth = scene.cell_truth(&map);
    let (mut boxes, mut paved, mut paved_free) = (0, 0, 0);
    for (cell, t) in map.cells().iter().zip(&truth) {
        match t {
            Some(Surface::Box) => {
                boxes += 1;
                assert_eq!(cell.fused, Some(TerrainClass::Obstacle));
            }
            Some(Surface::Pavement) => {
                paved += 1;
                paved_free += usize::from(cell.fused == Some(TerrainClass::Drivable));
            }
            _ => {}
        }
    }
    assert!(boxes > 0);
    // Pavement next to boxes and grass is swallowed by dilation; the rest stays free.
    assert!(paved_free as f64 > 0.5 * paved as f64, "{paved_free} of {paved}");
}
