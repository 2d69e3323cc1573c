//! Landmark alignment, barycentric coordinates, mesh rasterization and
//! piecewise-affine warping.
//!
//! Warps use inverse (destination-to-source) mapping: every destination
//! pixel centre carries a precomputed triangle index and barycentric
//! triple, which is applied to the corresponding source triangle to find
//! the bilinear sampling location.

use nalgebra::Point2;

use crate::error::{Error, Result};
use crate::model_io::{PointSet, ScanImage, Triangulation, EPS_AREA};

/// Slack on the barycentric range accepted at mesh boundaries.
pub const EPS_BARY: f64 = 1e-9;

/// Border in pixels between the mean shape's bounding box and the frame edge.
pub const FRAME_MARGIN: usize = 2;

/// Smallest accepted long side of a reference frame.
pub const MIN_FRAME_SIDE: usize = 16;

const NO_TRIANGLE: u32 = u32::MAX;

/// Centroid-removed landmark vector `(x0, y0, x1, y1, ...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedShape {
    pub coords: Vec<f64>,
}

impl AlignedShape {
    pub fn n_points(&self) -> usize {
        self.coords.len() / 2
    }
}

/// Translates the landmarks so their centroid sits at the origin. No
/// rotation or scaling is removed.
pub fn align_centroid(points: &PointSet) -> Result<AlignedShape> {
    if points.is_empty() {
        return Err(Error::invalid("cannot align an empty point set"));
    }
    if !points.all_finite() {
        return Err(Error::invalid(format!("non-finite landmark in {}", points.scan_id)));
    }
    let c = points.centroid();
    let coords = points.points.iter().flat_map(|p| [p.x - c.x, p.y - c.y]).collect();
    Ok(AlignedShape { coords })
}

/// Signed area of triangle `abc` (positive when counter-clockwise in a
/// y-up frame).
pub fn triangle_area(a: &Point2<f64>, b: &Point2<f64>, c: &Point2<f64>) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

/// Barycentric coordinates of `p` with respect to `tri`.
pub fn barycentric(tri: &[Point2<f64>; 3], p: &Point2<f64>) -> Result<[f64; 3]> {
    let [a, b, c] = tri;
    let den = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    if (0.5 * den).abs() <= EPS_AREA {
        return Err(Error::invalid("degenerate triangle"));
    }
    let (px, py) = (p.x - a.x, p.y - a.y);
    let l2 = (px * (c.y - a.y) - (c.x - a.x) * py) / den;
    let l3 = ((b.x - a.x) * py - px * (b.y - a.y)) / den;
    Ok([1.0 - l2 - l3, l2, l3])
}

/// Per-pixel triangle membership and barycentric triples of a mesh drawn
/// on a `width × height` grid of integer pixel centres.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    tri_index: Vec<u32>,
    bary: Vec<[f64; 3]>,
}

impl Raster {
    /// Triangle covering the pixel at row-major position `idx`, if any.
    pub fn triangle_at(&self, idx: usize) -> Option<usize> {
        let t = self.tri_index[idx];
        (t != NO_TRIANGLE).then_some(t as usize)
    }

    pub fn bary_at(&self, idx: usize) -> [f64; 3] {
        self.bary[idx]
    }

    pub fn covered(&self) -> impl Iterator<Item = usize> + '_ {
        self.tri_index
            .iter()
            .enumerate()
            .filter(|(_, &t)| t != NO_TRIANGLE)
            .map(|(i, _)| i)
    }
}

/// Rasterizes `tri` over `points`. A pixel centre belongs to a triangle
/// when all barycentric coordinates are `>= -EPS_BARY`; overlaps go to
/// the lowest triangle index. Triangles at or below [`EPS_AREA`] are skipped.
pub fn rasterize(points: &[Point2<f64>], tri: &Triangulation, width: usize, height: usize) -> Raster {
    let mut tri_index = vec![NO_TRIANGLE; width * height];
    let mut bary = vec![[0.0; 3]; width * height];
    if width == 0 || height == 0 {
        return Raster {
            width,
            height,
            tri_index,
            bary,
        };
    }
    for (t, idx) in tri.triangles.iter().enumerate() {
        let verts = idx.map(|i| points[i]);
        let [a, b, c] = verts;
        if triangle_area(&a, &b, &c).abs() <= EPS_AREA {
            continue;
        }
        let xmin = a.x.min(b.x).min(c.x).floor().max(0.0);
        let xmax = a.x.max(b.x).max(c.x).ceil().min((width - 1) as f64);
        let ymin = a.y.min(b.y).min(c.y).floor().max(0.0);
        let ymax = a.y.max(b.y).max(c.y).ceil().min((height - 1) as f64);
        if xmin > xmax || ymin > ymax {
            continue;
        }
        for y in ymin as usize..=ymax as usize {
            for x in xmin as usize..=xmax as usize {
                let pos = y * width + x;
                if tri_index[pos] != NO_TRIANGLE {
                    continue;
                }
                let l = barycentric(&verts, &Point2::new(x as f64, y as f64)).expect("area checked above");
                if l.iter().all(|&v| v >= -EPS_BARY) {
                    tri_index[pos] = t as u32;
                    bary[pos] = l;
                }
            }
        }
    }
    Raster {
        width,
        height,
        tri_index,
        bary,
    }
}

/// Rasterized mean-shape domain on which textures are sampled and compared.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceFrame {
    pub width: usize,
    pub height: usize,
    /// Mean shape in frame pixel coordinates.
    pub mean_shape: PointSet,
    pub triangulation: Triangulation,
    /// Similarity from model coordinates: `frame = (p - origin) * scale + margin`.
    pub scale: f64,
    pub origin: [f64; 2],
    raster: Raster,
    mask_indices: Vec<usize>,
}

impl ReferenceFrame {
    /// Rebuilds a frame from an already-mapped mean shape.
    pub fn from_parts(
        width: usize,
        height: usize,
        mean_shape: PointSet,
        triangulation: Triangulation,
        scale: f64,
        origin: [f64; 2],
    ) -> Result<Self> {
        if mean_shape.len() != triangulation.n_points {
            return Err(Error::DimensionMismatch {
                expected: triangulation.n_points,
                actual: mean_shape.len(),
            });
        }
        triangulation.check_areas(&mean_shape)?;
        let raster = rasterize(&mean_shape.points, &triangulation, width, height);
        let mask_indices = raster.covered().collect();
        Ok(Self {
            width,
            height,
            mean_shape,
            triangulation,
            scale,
            origin,
            raster,
            mask_indices,
        })
    }

    pub fn raster(&self) -> &Raster {
        &self.raster
    }

    /// Row-major positions of in-mask pixels.
    pub fn mask_indices(&self) -> &[usize] {
        &self.mask_indices
    }

    pub fn mask_count(&self) -> usize {
        self.mask_indices.len()
    }

    pub fn inside_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.width * self.height];
        for &i in &self.mask_indices {
            mask[i] = true;
        }
        mask
    }

    pub fn is_inside(&self, x: usize, y: usize) -> bool {
        self.raster.triangle_at(y * self.width + x).is_some()
    }

    /// Maps a point from model (aligned) coordinates into the frame.
    pub fn to_frame(&self, p: &Point2<f64>) -> Point2<f64> {
        let m = FRAME_MARGIN as f64;
        Point2::new((p.x - self.origin[0]) * self.scale + m, (p.y - self.origin[1]) * self.scale + m)
    }

    /// Inverse of [`ReferenceFrame::to_frame`].
    pub fn from_frame(&self, p: &Point2<f64>) -> Point2<f64> {
        let m = FRAME_MARGIN as f64;
        Point2::new((p.x - m) / self.scale + self.origin[0], (p.y - m) / self.scale + self.origin[1])
    }

    /// Masked pixels of a full grid, row-major.
    pub fn gather(&self, grid: &[f64]) -> Vec<f64> {
        self.mask_indices.iter().map(|&i| grid[i]).collect()
    }

    /// Places masked values into a full grid; unmasked pixels are zero.
    pub fn scatter(&self, values: &[f64]) -> Result<Vec<f64>> {
        if values.len() != self.mask_count() {
            return Err(Error::DimensionMismatch {
                expected: self.mask_count(),
                actual: values.len(),
            });
        }
        let mut grid = vec![0.0; self.width * self.height];
        for (&i, &v) in self.mask_indices.iter().zip(values) {
            grid[i] = v;
        }
        Ok(grid)
    }
}

/// Maps `mean_shape` by a single similarity (uniform scale + translation)
/// into a frame whose longer side is `target_long_side` pixels with a
/// [`FRAME_MARGIN`]-pixel border, then rasterizes the triangulation.
pub fn build_reference_frame(mean_shape: &PointSet, tri: &Triangulation, target_long_side: usize) -> Result<ReferenceFrame> {
    if target_long_side < MIN_FRAME_SIDE {
        return Err(Error::invalid(format!(
            "target_long_side {target_long_side} is below the minimum of {MIN_FRAME_SIDE}"
        )));
    }
    if mean_shape.len() != tri.n_points {
        return Err(Error::DimensionMismatch {
            expected: tri.n_points,
            actual: mean_shape.len(),
        });
    }
    if !mean_shape.all_finite() {
        return Err(Error::invalid("non-finite mean shape"));
    }
    let (lo, hi) = mean_shape.bounding_box();
    let (ex, ey) = (hi.x - lo.x, hi.y - lo.y);
    let long = ex.max(ey);
    if long <= 0.0 {
        return Err(Error::invalid("mean shape has zero extent"));
    }
    let margin = FRAME_MARGIN as f64;
    let scale = (target_long_side - 1) as f64 - 2.0 * margin;
    let scale = scale / long;
    let short_side = |extent: f64| ((extent * scale).ceil() as usize + 2 * FRAME_MARGIN + 1).min(target_long_side);
    let (width, height) = if ex >= ey {
        (target_long_side, short_side(ey))
    } else {
        (short_side(ex), target_long_side)
    };
    let mapped: Vec<Point2<f64>> = mean_shape
        .points
        .iter()
        .map(|p| Point2::new((p.x - lo.x) * scale + margin, (p.y - lo.y) * scale + margin))
        .collect();
    ReferenceFrame::from_parts(
        width,
        height,
        PointSet::new("reference", mapped),
        tri.clone(),
        scale,
        [lo.x, lo.y],
    )
}

fn check_source(points: &PointSet, tri: &Triangulation) -> Result<()> {
    if points.len() != tri.n_points {
        return Err(Error::DimensionMismatch {
            expected: tri.n_points,
            actual: points.len(),
        });
    }
    if !points.all_finite() {
        return Err(Error::invalid(format!("non-finite landmark in {}", points.scan_id)));
    }
    tri.check_areas(points)
}

/// Warps `src` onto the reference frame. Returns a `frame.width ×
/// frame.height` row-major grid with zeros outside the mask.
pub fn warp_image(src: &ScanImage, src_points: &PointSet, frame: &ReferenceFrame) -> Result<Vec<f64>> {
    check_source(src_points, &frame.triangulation)?;
    let mut grid = vec![0.0; frame.width * frame.height];
    let tris = &frame.triangulation.triangles;
    for &idx in &frame.mask_indices {
        let t = frame.raster.triangle_at(idx).expect("mask pixel has a triangle");
        let l = frame.raster.bary_at(idx);
        let [a, b, c] = tris[t].map(|i| src_points.points[i]);
        let x = l[0] * a.x + l[1] * b.x + l[2] * c.x;
        let y = l[0] * a.y + l[1] * b.y + l[2] * c.y;
        grid[idx] = src.sample_bilinear(x, y);
    }
    Ok(grid)
}

/// Renders a frame-space texture grid onto an arbitrary landmark
/// configuration on a `width × height` canvas (the inverse of
/// [`warp_image`]). Bilinear weights falling outside the frame mask are
/// dropped and the remainder renormalized, so mesh edges do not darken.
///
/// Returns the canvas and its coverage mask.
pub fn warp_to_shape(
    frame_grid: &[f64],
    frame: &ReferenceFrame,
    dst_points: &PointSet,
    width: usize,
    height: usize,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if frame_grid.len() != frame.width * frame.height {
        return Err(Error::DimensionMismatch {
            expected: frame.width * frame.height,
            actual: frame_grid.len(),
        });
    }
    check_source(dst_points, &frame.triangulation)?;
    let raster = rasterize(&dst_points.points, &frame.triangulation, width, height);
    let mut out = vec![0.0; width * height];
    let mut covered = vec![false; width * height];
    let tris = &frame.triangulation.triangles;
    for idx in raster.covered() {
        let t = raster.triangle_at(idx).expect("covered pixel");
        let l = raster.bary_at(idx);
        let [a, b, c] = tris[t].map(|i| frame.mean_shape.points[i]);
        let x = l[0] * a.x + l[1] * b.x + l[2] * c.x;
        let y = l[0] * a.y + l[1] * b.y + l[2] * c.y;
        out[idx] = masked_bilinear(frame_grid, frame, x, y);
        covered[idx] = true;
    }
    Ok((out, covered))
}

fn masked_bilinear(grid: &[f64], frame: &ReferenceFrame, x: f64, y: f64) -> f64 {
    let (w, h) = (frame.width, frame.height);
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let taps = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x1, y0, fx * (1.0 - fy)),
        (x0, y1, (1.0 - fx) * fy),
        (x1, y1, fx * fy),
    ];
    let (mut acc, mut wsum) = (0.0, 0.0);
    for (px, py, wt) in taps {
        if wt > 0.0 && frame.is_inside(px, py) {
            acc += wt * grid[py * w + px];
            wsum += wt;
        }
    }
    if wsum > 0.0 {
        acc / wsum
    } else {
        // no masked neighbour carries weight; fall back to the nearest pixel
        grid[(y.round() as usize) * w + x.round() as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_io::ImagingMode;
    use proptest::prelude::*;

    fn ps(pts: &[(f64, f64)]) -> PointSet {
        PointSet::new("t", pts.iter().map(|&(x, y)| Point2::new(x, y)).collect())
    }

    fn square_mesh() -> (PointSet, Triangulation) {
        let shape = ps(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]);
        let tri = Triangulation::new(4, vec![[0, 1, 2], [0, 2, 3]]).unwrap();
        (shape, tri)
    }

    #[test]
    fn align_centroid_hand_example() {
        let a = align_centroid(&ps(&[(0.0, 0.0), (2.0, 0.0), (1.0, 3.0)])).unwrap();
        assert_eq!(a.coords, vec![-1.0, -1.0, 1.0, -1.0, 0.0, 2.0]);
        let again = align_centroid(&PointSet::from_interleaved("x", &a.coords).unwrap()).unwrap();
        assert_eq!(again.coords, a.coords);
        assert_eq!(align_centroid(&ps(&[(5.0, 7.0)])).unwrap().coords, vec![0.0, 0.0]);
    }

    #[test]
    fn align_centroid_rejects_nonfinite() {
        assert!(align_centroid(&ps(&[(0.0, f64::NAN), (1.0, 1.0)])).is_err());
    }

    #[test]
    fn barycentric_hand_example() {
        let tri = [Point2::new(0.0, 0.0), Point2::new(10.0, 0.0), Point2::new(0.0, 10.0)];
        let l = barycentric(&tri, &Point2::new(2.0, 3.0)).unwrap();
        assert!((l[0] - 0.5).abs() < 1e-15 && (l[1] - 0.2).abs() < 1e-15 && (l[2] - 0.3).abs() < 1e-15);
        assert_eq!(barycentric(&tri, &tri[0]).unwrap(), [1.0, 0.0, 0.0]);
        let c = Point2::new(10.0 / 3.0, 10.0 / 3.0);
        let l = barycentric(&tri, &c).unwrap();
        for v in l {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn barycentric_rejects_degenerate() {
        let tri = [Point2::new(0.0, 0.0), Point2::new(1.0, 1.0), Point2::new(2.0, 2.0)];
        assert!(barycentric(&tri, &Point2::new(0.5, 0.5)).is_err());
    }

    proptest! {
        #[test]
        fn barycentric_reconstructs_point(
            ax in -100.0..100.0f64, ay in -100.0..100.0f64,
            bx in -100.0..100.0f64, by in -100.0..100.0f64,
            cx in -100.0..100.0f64, cy in -100.0..100.0f64,
            px in -150.0..150.0f64, py in -150.0..150.0f64,
        ) {
            let tri = [Point2::new(ax, ay), Point2::new(bx, by), Point2::new(cx, cy)];
            prop_assume!(triangle_area(&tri[0], &tri[1], &tri[2]).abs() > 1.0);
            let l = barycentric(&tri, &Point2::new(px, py)).unwrap();
            prop_assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let rx = l[0] * ax + l[1] * bx + l[2] * cx;
            let ry = l[0] * ay + l[1] * by + l[2] * cy;
            prop_assert!((rx - px).abs() < 1e-6 && (ry - py).abs() < 1e-6);
        }

        #[test]
        fn align_is_translation_invariant(tx in -500.0..500.0f64, ty in -500.0..500.0f64) {
            let base = ps(&[(0.0, 0.0), (12.0, 1.0), (3.0, 9.0), (-4.0, 5.5)]);
            let moved = ps(&base.points.iter().map(|p| (p.x + tx, p.y + ty)).collect::<Vec<_>>());
            let a = align_centroid(&base).unwrap();
            let b = align_centroid(&moved).unwrap();
            for (u, v) in a.coords.iter().zip(&b.coords) {
                prop_assert!((u - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn frame_rejects_small_side() {
        let (shape, tri) = square_mesh();
        assert!(build_reference_frame(&shape, &tri, 15).is_err());
    }

    #[test]
    fn frame_geometry() {
        let (shape, tri) = square_mesh();
        let f = build_reference_frame(&shape, &tri, 64).unwrap();
        assert_eq!((f.width, f.height), (64, 64));
        let (lo, hi) = f.mean_shape.bounding_box();
        assert_eq!((lo.x, lo.y), (2.0, 2.0));
        assert_eq!((hi.x, hi.y), (61.0, 61.0));
        // every mask pixel has a valid triple summing to one
        for &i in f.mask_indices() {
            let l = f.raster().bary_at(i);
            assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(l.iter().all(|&v| (-EPS_BARY..=1.0 + EPS_BARY).contains(&v)));
        }
        assert!(!f.is_inside(0, 0));
        assert!(!f.is_inside(63, 63));
        let p = Point2::new(3.0, 7.0);
        let back = f.from_frame(&f.to_frame(&p));
        assert!((back - p).norm() < 1e-12);
    }

    #[test]
    fn mask_matches_brute_force_oracle() {
        // one triangle covering half of the square frame
        let shape = ps(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0)]);
        let tri = Triangulation::new(3, vec![[0, 1, 2]]).unwrap();
        for side in [16, 17, 33, 100] {
            let f = build_reference_frame(&shape, &tri, side).unwrap();
            let v = &f.mean_shape.points;
            // edge-function test, independent of the barycentric path
            let edge = |a: &Point2<f64>, b: &Point2<f64>, x: f64, y: f64| (b.x - a.x) * (y - a.y) - (b.y - a.y) * (x - a.x);
            let mut expected = 0;
            for y in 0..f.height {
                for x in 0..f.width {
                    let (xf, yf) = (x as f64, y as f64);
                    let e = [edge(&v[0], &v[1], xf, yf), edge(&v[1], &v[2], xf, yf), edge(&v[2], &v[0], xf, yf)];
                    let inside = e.iter().all(|&s| s >= -1e-9) || e.iter().all(|&s| s <= 1e-9);
                    assert_eq!(inside, f.is_inside(x, y), "side {side} pixel ({x},{y})");
                    expected += inside as usize;
                }
            }
            assert_eq!(f.mask_count(), expected);
            let again = build_reference_frame(&shape, &tri, side).unwrap();
            assert_eq!(again.mask_indices(), f.mask_indices());
        }
    }

    #[test]
    fn overlap_goes_to_lowest_triangle() {
        let shape = ps(&[(0.0, 0.0), (10.0, 0.0), (0.0, 10.0), (10.0, 10.0)]);
        let tri = Triangulation::new(4, vec![[0, 1, 2], [0, 1, 3]]).unwrap();
        let f = build_reference_frame(&shape, &tri, 32).unwrap();
        let idx = 5 * f.width + 5;
        assert_eq!(f.raster().triangle_at(idx), Some(0));
    }

    fn ramp_image(w: usize, h: usize, gx: f64, gy: f64, c: f64) -> ScanImage {
        let pixels = (0..w * h).map(|i| c + gx * (i % w) as f64 + gy * (i / w) as f64).collect();
        ScanImage::new("ramp", ImagingMode::DFat, w, h, pixels).unwrap()
    }

    #[test]
    fn identity_warp_reproduces_source() {
        let (shape, tri) = square_mesh();
        let f = build_reference_frame(&shape, &tri, 40).unwrap();
        let src = ScanImage::new(
            "s",
            ImagingMode::DLean,
            f.width,
            f.height,
            (0..f.width * f.height).map(|i| ((i * 7919) % 1000) as f64).collect(),
        )
        .unwrap();
        let grid = warp_image(&src, &f.mean_shape, &f).unwrap();
        for &i in f.mask_indices() {
            assert!((grid[i] - src.pixels[i]).abs() < 1e-9);
        }
        for (i, inside) in f.inside_mask().into_iter().enumerate() {
            if !inside {
                assert_eq!(grid[i], 0.0);
            }
        }
    }

    #[test]
    fn constant_survives_translation_warp() {
        let (shape, tri) = square_mesh();
        let f = build_reference_frame(&shape, &tri, 40).unwrap();
        let moved = ps(&f.mean_shape.points.iter().map(|p| (p.x + 5.0, p.y)).collect::<Vec<_>>());
        let src = ScanImage::filled("c", ImagingMode::DFat, 60, 50, 42.0);
        let grid = warp_image(&src, &moved, &f).unwrap();
        for &i in f.mask_indices() {
            assert_eq!(grid[i], 42.0);
        }
    }

    #[test]
    fn ramp_shifts_under_translation() {
        let (shape, tri) = square_mesh();
        let f = build_reference_frame(&shape, &tri, 40).unwrap();
        let (tx, ty) = (5.0, 2.5);
        let moved = ps(&f.mean_shape.points.iter().map(|p| (p.x + tx, p.y + ty)).collect::<Vec<_>>());
        let src = ramp_image(60, 60, 3.0, -1.5, 500.0);
        let grid = warp_image(&src, &moved, &f).unwrap();
        let mut max_err: f64 = 0.0;
        for &i in f.mask_indices() {
            let (x, y) = ((i % f.width) as f64, (i / f.width) as f64);
            let expected = 500.0 + 3.0 * (x + tx) - 1.5 * (y + ty);
            max_err = max_err.max((grid[i] - expected).abs());
        }
        assert!(max_err < 1e-6, "max error {max_err}");
    }

    #[test]
    fn warp_names_degenerate_source_triangle() {
        let (shape, tri) = square_mesh();
        let f = build_reference_frame(&shape, &tri, 32).unwrap();
        let bad = ps(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (20.0, 20.0)]);
        let src = ScanImage::filled("c", ImagingMode::DFat, 30, 30, 1.0);
        assert!(matches!(warp_image(&src, &bad, &f), Err(Error::DegenerateTriangle { index: 1 })));
    }

    #[test]
    fn scatter_gather_inverse() {
        let (shape, tri) = square_mesh();
        let f = build_reference_frame(&shape, &tri, 20).unwrap();
        let vals: Vec<f64> = (0..f.mask_count()).map(|i| i as f64).collect();
        let grid = f.scatter(&vals).unwrap();
        assert_eq!(f.gather(&grid), vals);
        assert!(f.scatter(&vals[1..]).is_err());
    }

    #[test]
    fn warp_to_shape_inverts_translation() {
        let (shape, tri) = square_mesh();
        let f = build_reference_frame(&shape, &tri, 40).unwrap();
        let src = ramp_image(f.width, f.height, 2.0, 1.0, 100.0);
        let grid = warp_image(&src, &f.mean_shape, &f).unwrap();
        let moved = ps(&f.mean_shape.points.iter().map(|p| (p.x + 3.0, p.y + 4.0)).collect::<Vec<_>>());
        let (out, cov) = warp_to_shape(&grid, &f, &moved, 60, 60).unwrap();
        let x = 20;
        let y = 20;
        assert!(cov[y * 60 + x]);
        let expected = 100.0 + 2.0 * (x as f64 - 3.0) + 1.0 * (y as f64 - 4.0);
        assert!((out[y * 60 + x] - expected).abs() < 1e-9);
    }
}
