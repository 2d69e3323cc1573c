use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::triangle_area;

use super::{text_lines, PointSet};

/// Minimum triangle area (px²) accepted anywhere a triangle is used for
/// barycentric interpolation.
pub const EPS_AREA: f64 = 1e-6;

/// Index-triple mesh over a point set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triangulation {
    pub n_points: usize,
    pub triangles: Vec<[usize; 3]>,
}

impl Triangulation {
    /// Validates indices and vertex distinctness.
    pub fn new(n_points: usize, triangles: Vec<[usize; 3]>) -> Result<Self> {
        for (t, tri) in triangles.iter().enumerate() {
            check_triangle(tri, n_points).map_err(|m| Error::invalid(format!("triangle {t}: {m}")))?;
        }
        Ok(Self { n_points, triangles })
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Fails with the first triangle whose area in `shape` is at most [`EPS_AREA`].
    pub fn check_areas(&self, shape: &PointSet) -> Result<()> {
        if shape.len() != self.n_points {
            return Err(Error::DimensionMismatch {
                expected: self.n_points,
                actual: shape.len(),
            });
        }
        for (index, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|i| shape.points[i]);
            if triangle_area(&a, &b, &c).abs() <= EPS_AREA {
                return Err(Error::DegenerateTriangle { index });
            }
        }
        Ok(())
    }
}

fn check_triangle(tri: &[usize; 3], n_points: usize) -> std::result::Result<(), String> {
    if let Some(&bad) = tri.iter().find(|&&i| i >= n_points) {
        return Err(format!("index out of range ({bad} >= {n_points})"));
    }
    if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
        return Err(format!("degenerate triangle {} {} {}", tri[0], tri[1], tri[2]));
    }
    Ok(())
}

/// Reads one triangle per line as three whitespace-separated 0-based
/// indices. Blank lines and lines starting with `#` are ignored.
pub fn read_triangulation(path: impl AsRef<Path>, n_points: usize) -> Result<Triangulation> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut triangles = Vec::new();
    for (lineno, line) in text_lines(&text).enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::format(path, format!("line {}: expected 3 indices, found {}", lineno + 1, fields.len())));
        }
        let mut tri = [0usize; 3];
        for (slot, f) in tri.iter_mut().zip(&fields) {
            *slot = f
                .parse()
                .map_err(|_| Error::format(path, format!("line {}: invalid index {f:?}", lineno + 1)))?;
        }
        check_triangle(&tri, n_points).map_err(|m| Error::format(path, format!("line {}: {m}", lineno + 1)))?;
        triangles.push(tri);
    }
    Ok(Triangulation { n_points, triangles })
}

pub fn write_triangulation(tri: &Triangulation, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("# {} points, {} triangles\n", tri.n_points, tri.len());
    for t in &tri.triangles {
        out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
