//! Distance-aware shortest paths over a fused cost map.
//!
//! Moves go to the 8 neighbors of a cell. A diagonal move is allowed only
//! when both cells it squeezes between are free, so paths never clip the
//! corner of an obstacle. A move into cell `t` costs
//!
//! ```text
//! step * (1 + weight * exp(-distance(t) / scale)) * (penalty if t is unknown)
//! ```
//!
//! with `step` the center-to-center length in meters. Search is A* with the
//! straight-line distance, scaled by the smallest possible cost multiplier,
//! as heuristic. Equal priorities expand the lower cell index first.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::costmap::CostMap;

#[derive(Debug, Error, PartialEq)]
pub enum PlanError {
    #[error("{which} {location:?} is outside the map")]
    OutOfBounds { which: &'static str, location: Location },
    #[error("start cell {0:?} is an obstacle")]
    StartBlocked([usize; 2]),
    #[error("goal cell {0:?} is an obstacle")]
    UnreachableGoal([usize; 2]),
    #[error("no path from {start:?} to {goal:?}")]
    NoPath { start: [usize; 2], goal: [usize; 2] },
    #[error("invalid plan request: {0}")]
    Invalid(String),
}

/// A map cell `[ix, iy]` or a robot-frame point `[x, y]` in meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Location {
    Cell([usize; 2]),
    Point([f64; 2]),
}

impl Location {
    pub fn resolve(&self, map: &CostMap) -> Option<[usize; 2]> {
        match *self {
            Location::Cell([ix, iy]) => (ix < map.nx() && iy < map.ny()).then_some([ix, iy]),
            Location::Point([x, y]) => map.locate(x, y).map(|(ix, iy)| [ix, iy]),
        }
    }
}

fn default_weight() -> f64 {
    2.0
}
fn default_scale() -> f64 {
    0.5
}
fn default_penalty() -> f64 {
    1.5
}
fn default_lookahead() -> usize {
    5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanRequest {
    pub start: Location,
    pub goal: Location,
    #[serde(default = "default_weight")]
    pub proximity_weight: f64,
    /// Meters.
    #[serde(default = "default_scale")]
    pub proximity_scale: f64,
    /// Cost multiplier for entering a cell of unknown terrain.
    #[serde(default = "default_penalty")]
    pub unknown_penalty: f64,
    #[serde(default = "default_lookahead")]
    pub lookahead_cells: usize,
}

impl PlanRequest {
    pub fn new(start: Location, goal: Location) -> Self {
        PlanRequest {
            start,
            goal,
            proximity_weight: default_weight(),
            proximity_scale: default_scale(),
            unknown_penalty: default_penalty(),
            lookahead_cells: default_lookahead(),
        }
    }

    fn validate(&self) -> Result<(), PlanError> {
        if !(self.proximity_weight.is_finite() && self.proximity_weight >= 0.0) {
            return Err(PlanError::Invalid("proximity_weight must be finite and non-negative".into()));
        }
        if !(self.proximity_scale.is_finite() && self.proximity_scale > 0.0) {
            return Err(PlanError::Invalid("proximity_scale must be positive".into()));
        }
        if !(self.unknown_penalty.is_finite() && self.unknown_penalty > 0.0) {
            return Err(PlanError::Invalid("unknown_penalty must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlannedPath {
    /// `[ix, iy]` from start to goal inclusive.
    pub cells: Vec<[usize; 2]>,
    pub total_cost: f64,
    /// Radians, robot frame, toward the lookahead cell as seen from the
    /// start cell's center facing +x.
    pub heading: f64,
    pub at_goal: bool,
    /// Smallest distance-to-obstacle along the path, meters.
    pub clearance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading of the robot's +x axis, radians.
    pub yaw: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriveCommand {
    pub heading: f64,
    pub at_goal: bool,
    pub target: [usize; 2],
}

/// Neighbor offsets in expansion order.
pub const NEIGHBORS: [(i64, i64); 8] = [(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)];

/// Cost of moving from `from` to the adjacent cell `to`, or `None` when
/// the move is not allowed.
pub fn step_cost(map: &CostMap, req: &PlanRequest, from: [usize; 2], to: [usize; 2]) -> Option<f64> {
    let (dx, dy) = (to[0] as i64 - from[0] as i64, to[1] as i64 - from[1] as i64);
    if dx.abs() > 1 || dy.abs() > 1 || (dx == 0 && dy == 0) {
        return None;
    }
    let target = map.index(to[0], to[1]);
    if map.is_obstacle(target) {
        return None;
    }
    let diagonal = dx != 0 && dy != 0;
    if diagonal && (map.is_obstacle(map.index(to[0], from[1])) || map.is_obstacle(map.index(from[0], to[1]))) {
        return None;
    }
    let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 } * map.resolution();
    let cell = &map.cells()[target];
    let proximity = 1.0 + req.proximity_weight * (-cell.distance / req.proximity_scale).exp();
    let penalty = if cell.fused.is_none() { req.unknown_penalty } else { 1.0 };
    Some(step * proximity * penalty)
}

#[derive(PartialEq)]
struct Entry {
    f: f64,
    index: usize,
    g: f64,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // BinaryHeap is a max-heap; invert for smallest (f, index) first.
        other.f.total_cmp(&self.f).then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

pub fn plan(map: &CostMap, req: &PlanRequest) -> Result<PlannedPath, PlanError> {
    req.validate()?;
    let start = req.start.resolve(map).ok_or(PlanError::OutOfBounds {
        which: "start",
        location: req.start,
    })?;
    let goal = req.goal.resolve(map).ok_or(PlanError::OutOfBounds {
        which: "goal",
        location: req.goal,
    })?;
    if map.is_obstacle(map.index(start[0], start[1])) {
        return Err(PlanError::StartBlocked(start));
    }
    if map.is_obstacle(map.index(goal[0], goal[1])) {
        return Err(PlanError::UnreachableGoal(goal));
    }
    let n = map.len();
    let (si, gi) = (map.index(start[0], start[1]), map.index(goal[0], goal[1]));
    let floor = req.unknown_penalty.min(1.0) * map.resolution();
    let heuristic = |i: usize| {
        let (x, y) = map.coords(i);
        let (dx, dy) = (x as f64 - goal[0] as f64, y as f64 - goal[1] as f64);
        (dx * dx + dy * dy).sqrt() * floor
    };
    let mut g = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut heap = BinaryHeap::new();
    g[si] = 0.0;
    heap.push(Entry { f: heuristic(si), index: si, g: 0.0 });
    while let Some(Entry { index, g: gi_pushed, .. }) = heap.pop() {
        if gi_pushed > g[index] {
            continue;
        }
        if index == gi {
            break;
        }
        let (x, y) = map.coords(index);
        for (dx, dy) in NEIGHBORS {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= map.nx() as i64 || ny >= map.ny() as i64 {
                continue;
            }
            let to = [nx as usize, ny as usize];
            let Some(c) = step_cost(map, req, [x, y], to) else {
                continue;
            };
            let j = map.index(to[0], to[1]);
            let ng = g[index] + c;
            if ng < g[j] {
                g[j] = ng;
                parent[j] = index;
                heap.push(Entry { f: ng + heuristic(j), index: j, g: ng });
            }
        }
    }
    if !g[gi].is_finite() {
        return Err(PlanError::NoPath { start, goal });
    }
    let mut cells = vec![goal];
    let mut cur = gi;
    while cur != si {
        cur = parent[cur];
        let (x, y) = map.coords(cur);
        cells.push([x, y]);
    }
    cells.reverse();
    let clearance = cells
        .iter()
        .map(|c| map.cell(c[0], c[1]).distance)
        .fold(f64::INFINITY, f64::min);
    let c = map.cell_center(start[0], start[1]);
    let cmd = drive_direction(map, &cells, Pose { x: c[0], y: c[1], yaw: 0.0 }, req.lookahead_cells)?;
    Ok(PlannedPath {
        cells,
        total_cost: g[gi],
        heading: cmd.heading,
        at_goal: cmd.at_goal,
        clearance,
    })
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = a.sin().atan2(a.cos());
    if w <= -PI {
        w + 2.0 * PI
    } else {
        w
    }
}

/// Bearing from `pose` to the path cell `lookahead` steps ahead, or to the
/// goal when the path is shorter. A single-cell path means the robot is
/// already at the goal.
pub fn drive_direction(
    map: &CostMap,
    path: &[[usize; 2]],
    pose: Pose,
    lookahead: usize,
) -> Result<DriveCommand, PlanError> {
    let Some(&last) = path.last() else {
        return Err(PlanError::Invalid("empty path".into()));
    };
    if path.len() == 1 {
        return Ok(DriveCommand { heading: 0.0, at_goal: true, target: last });
    }
    let target = path[lookahead.max(1).min(path.len() - 1)];
    let c = map.cell_center(target[0], target[1]);
    let bearing = (c[1] - pose.y).atan2(c[0] - pose.x);
    Ok(DriveCommand {
        heading: wrap_angle(bearing - pose.yaw),
        at_goal: false,
        target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patch::TerrainClass;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const D: Option<TerrainClass> = Some(TerrainClass::Drivable);
    const O: Option<TerrainClass> = Some(TerrainClass::Obstacle);

    fn map(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> Option<TerrainClass>) -> CostMap {
        let fused: Vec<_> = (0..nx * ny).map(|i| f(i % nx, i / nx)).collect();
        CostMap::from_fused(nx, ny, 0.1, [0.0, 0.0], &fused).unwrap()
    }

    fn cell_req(s: [usize; 2], g: [usize; 2], weight: f64) -> PlanRequest {
        PlanRequest {
            proximity_weight: weight,
            ..PlanRequest::new(Location::Cell(s), Location::Cell(g))
        }
    }

    /// Independent edge definition for the oracle, written from the cost
    /// formula rather than reusing `step_cost`.
    fn oracle_edges(m: &CostMap, r: &PlanRequest) -> Vec<(usize, usize, f64)> {
        let mut edges = Vec::new();
        let blocked = |x: i64, y: i64| m.cell(x as usize, y as usize).fused == O;
        for y in 0..m.ny() as i64 {
            for x in 0..m.nx() as i64 {
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        let (tx, ty) = (x + dx, y + dy);
                        if (dx, dy) == (0, 0) || tx < 0 || ty < 0 || tx >= m.nx() as i64 || ty >= m.ny() as i64 {
                            continue;
                        }
                        if blocked(tx, ty) || (dx != 0 && dy != 0 && (blocked(tx, y) || blocked(x, ty))) {
                            continue;
                        }
                        let t = m.cell(tx as usize, ty as usize);
                        let len = ((dx * dx + dy * dy) as f64).sqrt() * m.resolution();
                        let mut c = len * (1.0 + r.proximity_weight * (-t.distance / r.proximity_scale).exp());
                        if t.fused.is_none() {
                            c *= r.unknown_penalty;
                        }
                        edges.push((m.index(x as usize, y as usize), m.index(tx as usize, ty as usize), c));
                    }
                }
            }
        }
        edges
    }

    /// Bellman-Ford relaxation until nothing changes.
    fn oracle_cost(m: &CostMap, r: &PlanRequest, s: [usize; 2], g: [usize; 2]) -> f64 {
        let edges = oracle_edges(m, r);
        let mut dist = vec![f64::INFINITY; m.len()];
        dist[m.index(s[0], s[1])] = 0.0;
        loop {
            let mut changed = false;
            for &(a, b, c) in &edges {
                if dist[a] + c < dist[b] {
                    dist[b] = dist[a] + c;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        dist[m.index(g[0], g[1])]
    }

    fn check_path(m: &CostMap, r: &PlanRequest, p: &PlannedPath) {
        let mut total = 0.0;
        for w in p.cells.windows(2) {
            total += step_cost(m, r, w[0], w[1]).expect("consecutive cells are connected");
        }
        for c in &p.cells {
            assert!(!m.is_obstacle(m.index(c[0], c[1])));
        }
        assert!((total - p.total_cost).abs() < 1e-9);
    }

    #[test]
    fn free_space_cost_is_octile_distance() {
        let m = map(12, 9, |_, _| D);
        let p = plan(&m, &cell_req([1, 1], [10, 5], 0.0)).unwrap();
        let octile = (4.0 * std::f64::consts::SQRT_2 + 5.0) * 0.1;
        assert!((p.total_cost - octile).abs() < 1e-12);
        assert_eq!(p.cells.first(), Some(&[1, 1]));
        assert_eq!(p.cells.last(), Some(&[10, 5]));
        assert_eq!(p.clearance, f64::INFINITY);
    }

    #[test]
    fn wall_with_gap() {
        let m = map(15, 15, |x, y| if x == 7 && y != 11 { O } else { D });
        let r = cell_req([2, 3], [12, 3], 2.0);
        let p = plan(&m, &r).unwrap();
        assert!(p.cells.contains(&[7, 11]));
        check_path(&m, &r, &p);
        assert!((p.total_cost - oracle_cost(&m, &r, [2, 3], [12, 3])).abs() < 1e-9);
    }

    #[test]
    fn matches_exhaustive_search_on_random_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut solved = 0;
        for trial in 0..30 {
            let n = rng.gen_range(5..=20);
            let m = map(n, n, |_, _| match rng.gen_range(0..10) {
                0..=1 => O,
                2 => None,
                _ => D,
            });
            let r = cell_req([0, 0], [n - 1, n - 1], [0.0, 2.0, 5.0][trial % 3]);
            let want = oracle_cost(&m, &r, [0, 0], [n - 1, n - 1]);
            match plan(&m, &r) {
                Ok(p) => {
                    check_path(&m, &r, &p);
                    assert!((p.total_cost - want).abs() < 1e-9, "trial {trial}: {} vs {want}", p.total_cost);
                    solved += 1;
                }
                Err(PlanError::NoPath { .. }) => assert_eq!(want, f64::INFINITY),
                Err(PlanError::StartBlocked(_)) | Err(PlanError::UnreachableGoal(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
        assert!(solved > 10);
    }

    #[test]
    fn proximity_weight_buys_clearance() {
        let m = map(21, 11, |x, y| if x == 10 && (4..=5).contains(&y) { O } else { D });
        let flat_req = cell_req([0, 6], [20, 6], 0.0);
        let careful_req = cell_req([0, 6], [20, 6], 5.0);
        let flat = plan(&m, &flat_req).unwrap();
        let careful = plan(&m, &careful_req).unwrap();
        assert!(careful.clearance > flat.clearance);
        let flat_under_weight: f64 = flat.cells.windows(2).map(|w| step_cost(&m, &careful_req, w[0], w[1]).unwrap()).sum();
        assert!(careful.total_cost <= flat_under_weight + 1e-12);
        assert!((careful.total_cost - oracle_cost(&m, &careful_req, [0, 6], [20, 6])).abs() < 1e-9);
    }

    #[test]
    fn corners_are_not_cut() {
        let m = map(3, 3, |x, y| if (x, y) == (1, 0) || (x, y) == (0, 1) { O } else { D });
        let r = cell_req([0, 0], [1, 1], 0.0);
        assert_eq!(plan(&m, &r), Err(PlanError::NoPath { start: [0, 0], goal: [1, 1] }));
    }

    #[test]
    fn request_errors() {
        let m = map(5, 5, |x, _| if x == 4 { O } else { D });
        assert!(matches!(plan(&m, &cell_req([4, 0], [0, 0], 1.0)), Err(PlanError::StartBlocked(_))));
        assert!(matches!(plan(&m, &cell_req([0, 0], [4, 2], 1.0)), Err(PlanError::UnreachableGoal(_))));
        assert!(matches!(plan(&m, &cell_req([0, 0], [5, 2], 1.0)), Err(PlanError::OutOfBounds { .. })));
        let far = PlanRequest::new(Location::Point([0.05, 0.05]), Location::Point([3.0, 0.0]));
        assert!(matches!(plan(&m, &far), Err(PlanError::OutOfBounds { which: "goal", .. })));
        assert!(matches!(plan(&m, &cell_req([0, 0], [1, 1], -1.0)), Err(PlanError::Invalid(_))));
    }

    #[test]
    fn metric_locations_resolve_to_cells() {
        let m = map(5, 5, |_, _| D);
        let r = PlanRequest::new(Location::Point([0.05, 0.05]), Location::Point([0.42, 0.05]));
        let p = plan(&m, &r).unwrap();
        assert_eq!(p.cells, vec![[0, 0], [1, 0], [2, 0], [3, 0], [4, 0]]);
    }

    #[test]
    fn unknown_cells_are_penalized() {
        let m = map(5, 3, |x, y| if y == 1 && (1..=3).contains(&x) { None } else { D });
        let p = plan(&m, &cell_req([0, 1], [4, 1], 0.0)).unwrap();
        assert!(p.cells.iter().all(|c| m.cell(c[0], c[1]).fused.is_some()));
        let r = PlanRequest { unknown_penalty: 1.0, ..cell_req([0, 1], [4, 1], 0.0) };
        let straight = plan(&m, &r).unwrap();
        assert!((straight.total_cost - 0.4).abs() < 1e-12);
    }

    #[test]
    fn headings() {
        let m = map(20, 20, |_, _| D);
        let ahead = plan(&m, &cell_req([2, 10], [15, 10], 0.0)).unwrap();
        assert_eq!(ahead.heading, 0.0);
        assert!(!ahead.at_goal);
        let left = plan(&m, &cell_req([10, 2], [10, 15], 0.0)).unwrap();
        assert!((left.heading - PI / 2.0).abs() < 1e-12);
        let here = plan(&m, &cell_req([3, 3], [3, 3], 0.0)).unwrap();
        assert_eq!((here.heading, here.at_goal, here.total_cost), (0.0, true, 0.0));
        // Lookahead past the end aims at the goal.
        let path = [[0, 0], [1, 1], [2, 1]];
        let cmd = drive_direction(&m, &path, Pose { x: 0.05, y: 0.05, yaw: 0.0 }, 10).unwrap();
        assert_eq!(cmd.target, [2, 1]);
        assert!((cmd.heading - (0.1f64).atan2(0.2)).abs() < 1e-12);
        let behind = drive_direction(&m, &path, Pose { x: 0.05, y: 0.05, yaw: PI }, 10).unwrap();
        assert!((behind.heading - wrap_angle(0.5f64.atan() - PI)).abs() < 1e-12);
    }

    #[test]
    fn angle_wrapping() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-12);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(0.25)).abs() - 0.25 < 1e-15);
    }

    #[test]
    fn request_json_defaults() {
        let r: PlanRequest = serde_json::from_str(r#"{"start":{"cell":[1,2]},"goal":{"point":[0.5,-1.0]}}"#).unwrap();
        assert_eq!(r, PlanRequest::new(Location::Cell([1, 2]), Location::Point([0.5, -1.0])));
    }
}
