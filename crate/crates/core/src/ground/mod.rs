//! Ground-plane estimation and per-point obstacle labeling.
//!
//! Planes are `{p : n . p = d}` with a unit normal `n` pointing up. The
//! Hough accumulator parameterizes normals by polar angle `theta` from the
//! z axis and azimuth `phi`, `n = (sin t cos p, sin t sin p, cos t)`, and
//! offsets `rho` on a symmetric window around zero.

mod cloud;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cloud::{CloudError, CloudFormat, CloudPoint, CloudStats, PointCloud};

#[derive(Debug, Error)]
pub enum GroundError {
    #[error("plane fitting needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("points are collinear; no unique plane")]
    Collinear,
    #[error("no plane in the accumulator window has 3 supporting points")]
    NoSupport,
    #[error("invalid Hough config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HoughConfig {
    pub theta_step_deg: f64,
    /// Polar angles cover `[0, theta_max_deg)`.
    pub theta_max_deg: f64,
    pub phi_step_deg: f64,
    pub rho_step: f64,
    /// Offsets cover `[-rho_range, rho_range]`.
    pub rho_range: f64,
    pub inlier_distance: f64,
    /// Maximum number of least-squares refits; refitting also stops once
    /// the inlier set no longer changes.
    pub refine_iterations: usize,
}

impl Default for HoughConfig {
    fn default() -> Self {
        HoughConfig {
            theta_step_deg: 1.0,
            theta_max_deg: 90.0,
            phi_step_deg: 1.0,
            rho_step: 0.01,
            rho_range: 0.5,
            inlier_distance: 0.02,
            refine_iterations: 10,
        }
    }
}

impl HoughConfig {
    fn validate(&self) -> Result<(), GroundError> {
        let positive = [
            ("theta_step_deg", self.theta_step_deg),
            ("theta_max_deg", self.theta_max_deg),
            ("phi_step_deg", self.phi_step_deg),
            ("rho_step", self.rho_step),
            ("rho_range", self.rho_range),
            ("inlier_distance", self.inlier_distance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(GroundError::Config(format!("{name} must be positive")));
            }
        }
        if self.theta_max_deg > 90.0 {
            return Err(GroundError::Config("theta_max_deg must be at most 90".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundPlane {
    pub normal: [f64; 3],
    pub offset: f64,
    pub inlier_count: usize,
}

impl GroundPlane {
    /// Signed height of `p` above the plane.
    pub fn height(&self, p: [f64; 3]) -> f64 {
        let n = self.normal;
        n[0] * p[0] + n[1] * p[1] + n[2] * p[2] - self.offset
    }

    /// Angle between the normals of two planes, radians.
    pub fn angle_to(&self, other: [f64; 3]) -> f64 {
        let n = self.normal;
        let dot = n[0] * other[0] + n[1] * other[1] + n[2] * other[2];
        let norm = (other.iter().map(|v| v * v).sum::<f64>()).sqrt();
        (dot / norm).clamp(-1.0, 1.0).acos()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointClass {
    Traversable,
    Obstacle,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointLabel {
    pub class: PointClass,
    pub height: f64,
}

/// Obstacle iff the point is farther than `threshold` from the plane on
/// either side, so holes count as obstacles too.
pub fn label_points(cloud: &PointCloud, plane: &GroundPlane, threshold: f64) -> Vec<PointLabel> {
    cloud
        .points
        .iter()
        .map(|p| {
            let height = plane.height(p.xyz);
            let class = if height.abs() > threshold {
                PointClass::Obstacle
            } else {
                PointClass::Traversable
            };
            PointLabel { class, height }
        })
        .collect()
}

struct Accumulator {
    normals: Vec<[f64; 3]>,
    rho_bins: usize,
    votes: Vec<u32>,
}

fn accumulate(points: &[[f64; 3]], config: &HoughConfig) -> Accumulator {
    let n_theta = (config.theta_max_deg / config.theta_step_deg).ceil() as usize;
    let n_phi = (360.0 / config.phi_step_deg).ceil() as usize;
    let mut normals = Vec::with_capacity(n_theta * n_phi);
    for it in 0..n_theta {
        let (st, ct) = (it as f64 * config.theta_step_deg).to_radians().sin_cos();
        for ip in 0..n_phi {
            let (sp, cp) = (ip as f64 * config.phi_step_deg).to_radians().sin_cos();
            normals.push([st * cp, st * sp, ct]);
        }
    }
    // Every azimuth of the vertical normal is the same plane; only the
    // lowest-index copy votes.
    let vertical_dupes = if n_theta > 0 { n_phi - 1 } else { 0 };
    let rho_bins = 2 * (config.rho_range / config.rho_step).round() as usize + 1;
    let half = ((rho_bins - 1) / 2) as f64;
    let mut votes = vec![0u32; normals.len() * rho_bins];
    let inv = 1.0 / config.rho_step;
    for p in points {
        for (cell, n) in normals.iter().enumerate() {
            if (1..=vertical_dupes).contains(&cell) {
                continue;
            }
            let rho = n[0] * p[0] + n[1] * p[1] + n[2] * p[2];
            let bin = (rho * inv + half).round();
            if bin >= 0.0 && bin < rho_bins as f64 {
                votes[cell * rho_bins + bin as usize] += 1;
            }
        }
    }
    Accumulator { normals, rho_bins, votes }
}

/// Total-least-squares plane through `points`: the centroid and the
/// eigenvector of the smallest scatter eigenvalue. Fails when the second
/// eigenvalue is negligible, i.e. the points do not span a plane.
fn tls_plane(points: &[[f64; 3]]) -> Result<([f64; 3], f64), GroundError> {
    if points.len() < 3 {
        return Err(GroundError::TooFewPoints(points.len()));
    }
    let n = points.len() as f64;
    let mut c = Vector3::zeros();
    for p in points {
        c += Vector3::from(*p);
    }
    c /= n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - c;
        scatter += d * d.transpose();
    }
    let eig = SymmetricEigen::new(scatter);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let largest = eig.eigenvalues[order[2]];
    if largest <= 0.0 || eig.eigenvalues[order[1]] <= 1e-12 * largest {
        return Err(GroundError::Collinear);
    }
    let mut normal = eig.eigenvectors.column(order[0]).into_owned();
    normal /= normal.norm();
    if normal.z < 0.0 {
        normal = -normal;
    }
    Ok(([normal.x, normal.y, normal.z], normal.dot(&c)))
}

fn inliers(points: &[[f64; 3]], normal: [f64; 3], offset: f64, dist: f64) -> Vec<usize> {
    let plane = GroundPlane { normal, offset, inlier_count: 0 };
    (0..points.len())
        .filter(|&i| plane.height(points[i]).abs() <= dist)
        .collect()
}

/// Exhaustive Hough voting for the best-supported plane, then repeated
/// least-squares refits on the points within the inlier distance.
pub fn hough_plane_fit(cloud: &PointCloud, config: &HoughConfig) -> Result<GroundPlane, GroundError> {
    config.validate()?;
    let points: Vec<[f64; 3]> = cloud.points.iter().map(|p| p.xyz).collect();
    // Degenerate clouds fail with the geometric reason before voting.
    tls_plane(&points)?;

    let acc = accumulate(&points, config);
    let mut best = 0;
    for (i, &v) in acc.votes.iter().enumerate() {
        if v > acc.votes[best] {
            best = i;
        }
    }
    if acc.votes[best] < 3 {
        return Err(GroundError::NoSupport);
    }
    let normal = acc.normals[best / acc.rho_bins];
    let half = ((acc.rho_bins - 1) / 2) as f64;
    let rho = ((best % acc.rho_bins) as f64 - half) * config.rho_step;

    let mut set = inliers(&points, normal, rho, config.inlier_distance);
    if set.len() < 3 {
        return Err(GroundError::NoSupport);
    }
    let mut plane = (normal, rho);
    for _ in 0..config.refine_iterations.max(1) {
        let subset: Vec<[f64; 3]> = set.iter().map(|&i| points[i]).collect();
        plane = tls_plane(&subset)?;
        let next = inliers(&points, plane.0, plane.1, config.inlier_distance);
        if next.len() < 3 {
            break;
        }
        if next == set {
            break;
        }
        set = next;
    }
    let count = inliers(&points, plane.0, plane.1, config.inlier_distance).len();
    Ok(GroundPlane {
        normal: plane.0,
        offset: plane.1,
        inlier_count: count,
    })
}
