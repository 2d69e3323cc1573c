use std::fs;
use std::path::Path;

use nalgebra::Point2;

use crate::error::{Error, Result};

const HEADER: [&str; 3] = ["point_index", "x_px", "y_px"];

/// One scan's fiducial points in pixel coordinates, ordered by index.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    pub scan_id: String,
    pub points: Vec<Point2<f64>>,
}

impl PointSet {
    pub fn new(scan_id: impl Into<String>, points: Vec<Point2<f64>>) -> Self {
        Self {
            scan_id: scan_id.into(),
            points,
        }
    }

    /// Builds a point set from interleaved `(x0, y0, x1, y1, ...)` coordinates.
    pub fn from_interleaved(scan_id: impl Into<String>, coords: &[f64]) -> Result<Self> {
        if coords.len() % 2 != 0 {
            return Err(Error::invalid("interleaved coordinate vector has odd length"));
        }
        let points = coords.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect();
        Ok(Self::new(scan_id, points))
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y]).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point2<f64> {
        let n = self.points.len() as f64;
        let (sx, sy) = self.points.iter().fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
        Point2::new(sx / n, sy / n)
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounding_box(&self) -> (Point2<f64>, Point2<f64>) {
        let mut lo = Point2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = Point2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.points {
            lo.x = lo.x.min(p.x);
            lo.y = lo.y.min(p.y);
            hi.x = hi.x.max(p.x);
            hi.y = hi.y.max(p.y);
        }
        (lo, hi)
    }

    pub fn all_finite(&self) -> bool {
        self.points.iter().all(|p| p.x.is_finite() && p.y.is_finite())
    }
}

/// Reads a per-scan point CSV with header `point_index,x_px,y_px`.
///
/// Indices must be 0-based, ascending and contiguous. The scan id is the
/// file stem.
pub fn read_point_file(path: impl AsRef<Path>) -> Result<PointSet> {
    let path = path.as_ref();
    let scan_id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::format(path, "cannot derive scan id from file name"))?
        .to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let points = parse_points(&text).map_err(|msg| Error::format(path, msg))?;
    Ok(PointSet::new(scan_id, points))
}

fn parse_points(text: &str) -> std::result::Result<Vec<Point2<f64>>, String> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| format!("unreadable header: {e}"))?;
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(format!("expected header {:?}, found {:?}", HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut points = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| format!("malformed row {row}: {e}"))?;
        if record.len() != 3 {
            return Err(format!("row {row}: expected 3 fields, found {}", record.len()));
        }
        let index: usize = record[0]
            .parse()
            .map_err(|_| format!("row {row}: invalid point index {:?}", &record[0]))?;
        if index < points.len() {
            return Err(format!("duplicate index at row {row}"));
        }
        if index != points.len() {
            return Err(format!("non-contiguous index at row {row}"));
        }
        let parse = |s: &str| -> std::result::Result<f64, String> {
            let v: f64 = s.parse().map_err(|_| format!("row {row}: invalid coordinate {s:?}"))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(format!("non-finite value at row {row}"))
            }
        };
        points.push(Point2::new(parse(&record[1])?, parse(&record[2])?));
    }
    if points.len() < 3 {
        return Err(format!("expected at least 3 points, found {}", points.len()));
    }
    Ok(points)
}

pub fn write_point_file(points: &PointSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("point_index,x_px,y_px\n");
    for (i, p) in points.points.iter().enumerate() {
        out.push_str(&format!("{i},{},{}\n", p.x, p.y));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
