use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use terrainnav::augment::{augment_example, AugmentPolicy};
use terrainnav::costmap::CostMap;
use terrainnav::img::Image;
use terrainnav::patch::TerrainClass;

fn random_map(nx: usize, ny: usize, obstacles: &[(usize, usize)], unknown: &[(usize, usize)]) -> CostMap {
    let mut fused = vec![Some(TerrainClass::Drivable); nx * ny];
    for &(x, y) in unknown {
        fused[(y % ny) * nx + x % nx] = None;
    }
    for &(x, y) in obstacles {
        fused[(y % ny) * nx + x % nx] = Some(TerrainClass::Obstacle);
    }
    CostMap::from_fused(nx, ny, 0.1, [-1.0, 2.0], &fused).unwrap()
}

fn cells() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..40, 0usize..40), 1..12)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wider_dilation_only_adds_obstacles(obstacles in cells(), r1 in 0.0f64..0.4, extra in 0.0f64..0.4) {
        let base = random_map(24, 20, &obstacles, &[]);
        let (mut a, mut b) = (base.clone(), base);
        a.dilate(r1);
        b.dilate(r1 + extra);
        for i in 0..a.len() {
            prop_assert!(!a.is_obstacle(i) || b.is_obstacle(i));
        }
    }

    #[test]
    fn distances_change_by_at_most_one_step(obstacles in cells()) {
        let map = random_map(24, 20, &obstacles, &[]);
        for iy in 0..map.ny() {
            for ix in 0..map.nx() {
                let d = map.cell(ix, iy).distance;
                if map.is_obstacle(map.index(ix, iy)) {
                    prop_assert_eq!(d, 0.0);
                }
                if ix + 1 < map.nx() {
                    prop_assert!((d - map.cell(ix + 1, iy).distance).abs() <= 0.1 + 1e-12);
                }
                if iy + 1 < map.ny() {
                    prop_assert!((d - map.cell(ix, iy + 1).distance).abs() <= 0.1 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn grid_files_round_trip(obstacles in cells(), unknown in cells()) {
        let map = random_map(17, 23, &obstacles, &unknown);
        let back = CostMap::decode_grid(&map.encode_grid()).unwrap();
        prop_assert_eq!(back, map);
    }

    #[test]
    fn augmented_pixels_stay_within_the_input_range(seed in any::<u64>(), lo in 0.0f32..0.5, span in 0.0f32..0.5) {
        let policy = AugmentPolicy { base_size: 32, crop_size: 29, shift_range_px: (-2, 2), ..AugmentPolicy::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Image::from_fn(32, 32, |x, y| {
            let t = ((x * 7 + y * 13) % 32) as f32 / 31.0;
            [lo + span * t, lo + span * (1.0 - t), lo]
        })
        .unwrap();
        let fill = [lo + span / 2.0; 3];
        let out = augment_example(&base, &policy, fill, &mut rng).unwrap();
        prop_assert_eq!((out.width(), out.height()), (29, 29));
        for &v in out.data() {
            prop_assert!(v.is_finite() && v >= lo - 1e-6 && v <= lo + span + 1e-6);
        }
    }
}
