//! Point clouds and their text formats.
//!
//! CSV: one point per line, `x,y,z` or `x,y,z,row,col` in meters and image
//! pixels. Blank lines and lines starting with `#` are ignored, and the first
//! remaining line may be the header `x,y,z` or `x,y,z,row,col`.
//!
//! PLY: ASCII PLY 1.0 with one `vertex` element carrying `x`, `y`, `z`
//! properties and optionally integer `row` and `col`. Other vertex
//! properties are accepted and ignored; other elements must come after the
//! vertices.
//!
//! Writers print coordinates in Rust's shortest round-trip decimal form, so
//! save followed by load reproduces every `f64` exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("line {line}: non-finite coordinate")]
    NonFinite { line: usize },
    #[error("point {index} maps to pixel ({row}, {col}) outside the {width}x{height} image")]
    Pixel {
        index: usize,
        row: usize,
        col: usize,
        width: usize,
        height: usize,
    },
    #[error("unknown point cloud format {0:?} (expected csv or ply)")]
    Format(String),
    #[error("point cloud io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    /// Robot frame: x forward, y left, z up, meters.
    pub xyz: [f64; 3],
    /// Camera pixel `[row, col]` the point was triangulated from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel: Option<[usize; 2]>,
}

impl CloudPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        CloudPoint { xyz: [x, y, z], pixel: None }
    }

    pub fn with_pixel(mut self, row: usize, col: usize) -> Self {
        self.pixel = Some([row, col]);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CloudFormat {
    Csv,
    Ply,
}

impl std::str::FromStr for CloudFormat {
    type Err = CloudError;

    fn from_str(s: &str) -> Result<Self, CloudError> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CloudFormat::Csv),
            "ply" => Ok(CloudFormat::Ply),
            _ => Err(CloudError::Format(s.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CloudStats {
    pub count: usize,
    pub with_pixels: usize,
    /// Axis-aligned bounds, absent for an empty cloud.
    pub min: Option<[f64; 3]>,
    pub max: Option<[f64; 3]>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

fn parse_f64(s: &str, line: usize) -> Result<f64, CloudError> {
    let v: f64 = s.trim().parse().map_err(|_| CloudError::Parse {
        line,
        reason: format!("{:?} is not a number", s.trim()),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CloudError::NonFinite { line })
    }
}

fn parse_index(s: &str, line: usize) -> Result<usize, CloudError> {
    s.trim().parse().map_err(|_| CloudError::Parse {
        line,
        reason: format!("{:?} is not a pixel index", s.trim()),
    })
}

impl PointCloud {
    pub fn new(points: Vec<CloudPoint>) -> Self {
        PointCloud { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn stats(&self) -> CloudStats {
        let mut min: Option<[f64; 3]> = None;
        let mut max: Option<[f64; 3]> = None;
        for p in &self.points {
            let lo = min.get_or_insert(p.xyz);
            let hi = max.get_or_insert(p.xyz);
            for k in 0..3 {
                lo[k] = lo[k].min(p.xyz[k]);
                hi[k] = hi[k].max(p.xyz[k]);
            }
        }
        CloudStats {
            count: self.points.len(),
            with_pixels: self.points.iter().filter(|p| p.pixel.is_some()).count(),
            min,
            max,
        }
    }

    /// Checks that every pixel link lies inside a `width x height` image.
    pub fn check_pixels(&self, width: usize, height: usize) -> Result<(), CloudError> {
        for (index, p) in self.points.iter().enumerate() {
            if let Some([row, col]) = p.pixel {
                if row >= height || col >= width {
                    return Err(CloudError::Pixel { index, row, col, width, height });
                }
            }
        }
        Ok(())
    }

    pub fn parse_csv(text: &str) -> Result<Self, CloudError> {
        let mut points = Vec::new();
        let mut first = true;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = t.split(',').map(str::trim).collect();
            if std::mem::take(&mut first) && fields[0].eq_ignore_ascii_case("x") {
                let header: Vec<String> = fields.iter().map(|f| f.to_ascii_lowercase()).collect();
                if header != ["x", "y", "z"] && header != ["x", "y", "z", "row", "col"] {
                    return Err(CloudError::Parse {
                        line,
                        reason: "header must be x,y,z or x,y,z,row,col".into(),
                    });
                }
                continue;
            }
            let xyz = match fields.len() {
                3 | 5 => [
                    parse_f64(fields[0], line)?,
                    parse_f64(fields[1], line)?,
                    parse_f64(fields[2], line)?,
                ],
                n => {
                    return Err(CloudError::Parse {
                        line,
                        reason: format!("expected 3 or 5 fields, got {n}"),
                    })
                }
            };
            let pixel = if fields.len() == 5 {
                Some([parse_index(fields[3], line)?, parse_index(fields[4], line)?])
            } else {
                None
            };
            points.push(CloudPoint { xyz, pixel });
        }
        Ok(PointCloud { points })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let with_pixels = self.points.iter().any(|p| p.pixel.is_some());
        out.push_str(if with_pixels { "x,y,z,row,col\n" } else { "x,y,z\n" });
        for p in &self.points {
            let [x, y, z] = p.xyz;
            match p.pixel {
                Some([r, c]) => writeln!(out, "{x:?},{y:?},{z:?},{r},{c}"),
                None => writeln!(out, "{x:?},{y:?},{z:?}"),
            }
            .expect("writing to a string");
        }
        out
    }

    pub fn parse_ply(text: &str) -> Result<Self, CloudError> {
        let err = |line: usize, reason: &str| CloudError::Parse { line, reason: reason.to_string() };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        match lines.next() {
            Some((_, "ply")) => {}
            _ => return Err(err(1, "missing `ply` magic line")),
        }
        let mut vertices: Option<usize> = None;
        let mut in_vertex = false;
        let mut props: Vec<String> = Vec::new();
        let mut header_done = false;
        for (line, l) in lines.by_ref() {
            let words: Vec<&str> = l.split_whitespace().collect();
            match words.as_slice() {
                [] => {}
                ["comment", ..] | ["obj_info", ..] => {}
                ["format", "ascii", "1.0"] => {}
                ["format", ..] => return Err(err(line, "only `format ascii 1.0` is supported")),
                ["element", "vertex", n] => {
                    if vertices.is_some() {
                        return Err(err(line, "duplicate vertex element"));
                    }
                    vertices = Some(n.parse().map_err(|_| err(line, "bad vertex count"))?);
                    in_vertex = true;
                }
                ["element", ..] => {
                    if vertices.is_none() {
                        return Err(err(line, "vertex element must come first"));
                    }
                    in_vertex = false;
                }
                ["property", .., name] => {
                    if in_vertex {
                        props.push(name.to_string());
                    }
                }
                ["end_header"] => {
                    header_done = true;
                    break;
                }
                _ => return Err(err(line, "unrecognized header line")),
            }
        }
        if !header_done {
            return Err(err(0, "missing end_header"));
        }
        let count = vertices.ok_or_else(|| err(0, "no vertex element"))?;
        let find = |n: &str| props.iter().position(|p| p == n);
        let (Some(ix), Some(iy), Some(iz)) = (find("x"), find("y"), find("z")) else {
            return Err(err(0, "vertex element needs x, y and z properties"));
        };
        let pixel_cols = match (find("row"), find("col")) {
            (Some(r), Some(c)) => Some((r, c)),
            (None, None) => None,
            _ => return Err(err(0, "row and col properties must appear together")),
        };
        let mut points = Vec::with_capacity(count);
        for (line, l) in lines {
            if points.len() == count {
                break;
            }
            if l.is_empty() {
                continue;
            }
            let words: Vec<&str> = l.split_whitespace().collect();
            if words.len() != props.len() {
                return Err(err(line, &format!("expected {} values, got {}", props.len(), words.len())));
            }
            let xyz = [
                parse_f64(words[ix], line)?,
                parse_f64(words[iy], line)?,
                parse_f64(words[iz], line)?,
            ];
            let pixel = match pixel_cols {
                Some((r, c)) => Some([parse_index(words[r], line)?, parse_index(words[c], line)?]),
                None => None,
            };
            points.push(CloudPoint { xyz, pixel });
        }
        if points.len() != count {
            return Err(err(0, &format!("header declares {count} vertices, found {}", points.len())));
        }
        Ok(PointCloud { points })
    }

    /// ASCII PLY. Pixel properties are written when every point has one.
    pub fn to_ply(&self) -> String {
        let with_pixels = !self.points.is_empty() && self.points.iter().all(|p| p.pixel.is_some());
        let mut out = format!(
            "ply\nformat ascii 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n",
            self.points.len()
        );
        if with_pixels {
            out.push_str("property int row\nproperty int col\n");
        }
        out.push_str("end_header\n");
        for p in &self.points {
            let [x, y, z] = p.xyz;
            write!(out, "{x:?} {y:?} {z:?}").expect("writing to a string");
            if let (true, Some([r, c])) = (with_pixels, p.pixel) {
                write!(out, " {r} {c}").expect("writing to a string");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(format: CloudFormat, text: &str) -> Result<Self, CloudError> {
        match format {
            CloudFormat::Csv => Self::parse_csv(text),
            CloudFormat::Ply => Self::parse_ply(text),
        }
    }

    pub fn encode(&self, format: CloudFormat) -> String {
        match format {
            CloudFormat::Csv => self.to_csv(),
            CloudFormat::Ply => self.to_ply(),
        }
    }

    /// Format from the file extension; anything but `.ply` is read as CSV.
    pub fn format_for(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => CloudFormat::Ply,
            _ => CloudFormat::Csv,
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CloudError> {
        let path = path.as_ref();
        Self::parse(Self::format_for(path), &std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CloudError> {
        let path = path.as_ref();
        std::fs::write(path, self.encode(Self::format_for(path)))?;
        Ok(())
    }
}
