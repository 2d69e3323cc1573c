//! Synthetic landmark-annotated scans with known generating factors.
//!
//! Each phantom body is a template outline deformed linearly by three
//! standard-normal latents (size, limb width, adiposity), plus isotropic
//! landmark noise and a random translation. Images of every mode are
//! smooth fields over template coordinates `(u, v)` whose parameters are
//! linear in the same latents. Biomarkers are linear recipes over the
//! latents plus noise. Everything derives from one seed with an
//! independent random stream per scan.

use std::path::Path;

use nalgebra::{DMatrix, Point2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::appearance::TrainingScan;
use crate::error::{Error, Result};
use crate::geometry::rasterize;
use crate::model_io::{
    write_cohort, write_pgm, write_point_file, write_triangulation, CohortRow, CohortTable, ImagingMode, PointSet, ScanImage,
    Sex, Triangulation,
};

pub const LATENT_NAMES: [&str; 3] = ["size", "limb_width", "adiposity"];

/// Body height as a fraction of the image height.
const BODY_FRACTION: f64 = 0.8;
/// Body width over body height at the widest row.
const ASPECT: f64 = 0.65;
const SIZE_GAIN: f64 = 0.06;
const LIMB_GAIN: f64 = 0.15;
const ADIPOSITY_GAIN: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiomarkerRecipe {
    pub name: String,
    /// Weights over (size, limb_width, adiposity).
    pub weights: [f64; 3],
    pub noise_sigma: f64,
    /// Probability that a scan's value is missing.
    pub missing_fraction: f64,
}

impl BiomarkerRecipe {
    pub fn new(name: &str, weights: [f64; 3], noise_sigma: f64) -> Self {
        Self {
            name: name.to_string(),
            weights,
            noise_sigma,
            missing_fraction: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhantomSpec {
    pub seed: u64,
    pub n_scans: usize,
    pub n_points: usize,
    /// Landmark noise standard deviation as a fraction of body height.
    pub noise_sigma: f64,
    /// Half-width in pixels of the uniform random translation.
    pub translation_jitter: f64,
    /// Per-pixel Gaussian noise added to images.
    pub texture_noise: f64,
    pub image_width: usize,
    pub image_height: usize,
    /// Inactive latents are held at zero.
    pub active_latents: [bool; 3],
    /// Fixed sex for every scan, or a fair coin per scan.
    pub sex: Option<Sex>,
    /// Modes to render; empty renders no images.
    pub modes: Vec<ImagingMode>,
    pub biomarkers: Vec<BiomarkerRecipe>,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_scans: 100,
            n_points: 105,
            noise_sigma: 0.01,
            translation_jitter: 2.0,
            texture_noise: 10.0,
            image_width: 128,
            image_height: 160,
            active_latents: [true; 3],
            sex: None,
            modes: ImagingMode::ALL.to_vec(),
            biomarkers: vec![
                BiomarkerRecipe::new("size_marker", [1.0, 0.0, 0.0], 0.3),
                BiomarkerRecipe::new("limb_marker", [0.0, 1.0, 0.0], 0.3),
                BiomarkerRecipe::new("fat_marker", [0.0, 0.0, 1.0], 0.3),
                BiomarkerRecipe::new("independent", [0.0; 3], 1.0),
            ],
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_points < 3 {
            return Err(Error::invalid(format!("n_points must be at least 3, got {}", self.n_points)));
        }
        if self.n_scans == 0 {
            return Err(Error::invalid("n_scans must be positive"));
        }
        for (name, v) in [
            ("noise_sigma", self.noise_sigma),
            ("translation_jitter", self.translation_jitter),
            ("texture_noise", self.texture_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.image_width < 16 || self.image_height < 16 {
            return Err(Error::invalid("phantom images must be at least 16×16"));
        }
        let mut names = std::collections::HashSet::new();
        for b in &self.biomarkers {
            if b.name.is_empty() || b.name.contains(',') || !names.insert(b.name.as_str()) {
                return Err(Error::invalid(format!("bad or duplicate biomarker name {:?}", b.name)));
            }
            if !(0.0..=1.0).contains(&b.missing_fraction) || !(b.noise_sigma >= 0.0) {
                return Err(Error::invalid(format!("biomarker {}: invalid noise or missing fraction", b.name)));
            }
        }
        Ok(())
    }
}

/// Template layout: `(u, v)` per landmark plus the triangulation.
///
/// When `n = rows × cols` with both at least 2, landmarks form a grid
/// (the factor pair closest to `rows = 2·cols`), split into two triangles
/// per cell; 105 gives 15 × 7. Otherwise a ring of `n − 1` points
/// surrounds a centre point and is fanned from it.
pub fn template(n_points: usize) -> Result<(Vec<[f64; 2]>, Triangulation)> {
    if n_points < 3 {
        return Err(Error::invalid(format!("n_points must be at least 3, got {n_points}")));
    }
    let grid = (2..=n_points / 2)
        .filter(|c| n_points % c == 0 && n_points / c >= 2)
        .min_by_key(|&c| ((n_points / c) as i64 - 2 * c as i64).abs());
    if let Some(cols) = grid {
        let rows = n_points / cols;
        let uv = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| [j as f64 / (cols - 1) as f64, i as f64 / (rows - 1) as f64]))
            .collect();
        let mut tris = Vec::with_capacity(2 * (rows - 1) * (cols - 1));
        for i in 0..rows - 1 {
            for j in 0..cols - 1 {
                let a = i * cols + j;
                tris.push([a, a + 1, a + cols + 1]);
                tris.push([a, a + cols + 1, a + cols]);
            }
        }
        return Ok((uv, Triangulation::new(n_points, tris)?));
    }
    if n_points == 3 {
        return Ok((vec![[0.5, 0.0], [1.0, 1.0], [0.0, 1.0]], Triangulation::new(3, vec![[0, 1, 2]])?));
    }
    let ring = n_points - 1;
    let mut uv = vec![[0.5, 0.5]];
    for k in 0..ring {
        let t = 2.0 * std::f64::consts::PI * k as f64 / ring as f64;
        uv.push([0.5 + 0.5 * t.sin(), 0.5 - 0.5 * t.cos()]);
    }
    let tris = (0..ring).map(|k| [0, 1 + k, 1 + (k + 1) % ring]).collect();
    Ok((uv, Triangulation::new(n_points, tris)?))
}

fn width_profile(v: f64) -> f64 {
    0.35 + 0.65 * (std::f64::consts::PI * v).sin()
}

fn torso(v: f64) -> f64 {
    (-((v - 0.4) / 0.18).powi(2)).exp()
}

fn legs(v: f64) -> f64 {
    1.0 / (1.0 + (-(v - 0.62) / 0.04).exp())
}

fn centre(u: f64) -> f64 {
    (std::f64::consts::PI * (u - 0.5)).cos()
}

fn spine(u: f64) -> f64 {
    (-((u - 0.5) / 0.1).powi(2)).exp()
}

fn sex_factors(sex: Sex) -> (f64, f64) {
    match sex {
        Sex::F => (1.0, 1.0),
        Sex::M => (1.08, 1.04),
    }
}

/// Landmark position in body-height units, centred on the body, for
/// template coordinates `(u, v)` and latents `z`. Linear in `z`.
pub fn body_point(uv: [f64; 2], sex: Sex, z: [f64; 3]) -> [f64; 2] {
    let [u, v] = uv;
    let (sw, sh) = sex_factors(sex);
    let x0 = (u - 0.5) * ASPECT * width_profile(v) * sw;
    let y0 = (v - 0.5) * sh;
    let dx = SIZE_GAIN * z[0] * x0 + LIMB_GAIN * z[1] * x0 * legs(v) + ADIPOSITY_GAIN * z[2] * x0 * torso(v);
    let dy = SIZE_GAIN * z[0] * y0;
    [x0 + dx, y0 + dy]
}

/// Noise-free intensity of `mode` at template coordinates `(u, v)`. Linear in `z`.
pub fn field_value(mode: ImagingMode, u: f64, v: f64, z: [f64; 3]) -> f64 {
    let (c, t, l, s) = (centre(u), torso(v), legs(v), spine(u));
    let head = (-((v - 0.06) / 0.06).powi(2)).exp();
    match mode {
        ImagingMode::DFat => 900.0 + 500.0 * c * t + 100.0 * head + 60.0 * z[0] + 300.0 * z[2] * c * t,
        ImagingMode::DLean => 1800.0 + 600.0 * c * (1.0 - 0.3 * t) + 120.0 * z[0] + 250.0 * z[1] * l * c,
        ImagingMode::BmdIrs => {
            let femur = (-(((u - 0.5).abs() - 0.25) / 0.08).powi(2)).exp();
            700.0 + 900.0 * s * (1.0 - l) + 500.0 * l * femur + 50.0 * z[0] * s - 40.0 * z[2]
        }
        ImagingMode::MBoneIrs => 500.0 + 600.0 * s + 300.0 * l + 80.0 * z[1] * l,
        ImagingMode::RAir => 2600.0 - 700.0 * c - 50.0 * z[0] - 150.0 * z[2] * c * t,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomScan {
    pub scan_id: String,
    pub subject_id: String,
    pub sex: Sex,
    pub latents: [f64; 3],
    pub points: PointSet,
    /// One image per entry of `PhantomSpec::modes`, in that order.
    pub images: Vec<ScanImage>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantoms {
    pub spec: PhantomSpec,
    pub template_uv: Vec<[f64; 2]>,
    pub triangulation: Triangulation,
    pub scans: Vec<PhantomScan>,
    pub cohort: CohortTable,
}

impl Phantoms {
    /// `N × 3` latent matrix, rows in scan order.
    pub fn latent_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.scans.len(), 3, |i, j| self.scans[i].latents[j])
    }

    pub fn image(&self, scan: usize, mode: ImagingMode) -> Option<&ScanImage> {
        let k = self.spec.modes.iter().position(|m| *m == mode)?;
        self.scans.get(scan)?.images.get(k)
    }

    pub fn of_sex(&self, sex: Sex) -> impl Iterator<Item = &PhantomScan> {
        self.scans.iter().filter(move |s| s.sex == sex)
    }

    pub fn shape_samples(&self, sex: Sex) -> Vec<(&PointSet, Sex)> {
        self.of_sex(sex).map(|s| (&s.points, s.sex)).collect()
    }

    /// Training inputs for a texture or appearance model of one mode and sex.
    pub fn training_scans(&self, mode: ImagingMode, sex: Sex) -> Result<Vec<TrainingScan<'_>>> {
        let k = self
            .spec
            .modes
            .iter()
            .position(|m| *m == mode)
            .ok_or_else(|| Error::invalid(format!("mode {mode} was not rendered")))?;
        Ok(self
            .of_sex(sex)
            .map(|s| TrainingScan {
                image: &s.images[k],
                points: &s.points,
                sex: s.sex,
            })
            .collect())
    }
}

/// Generates the phantom cohort described by `spec`.
pub fn generate(spec: &PhantomSpec) -> Result<Phantoms> {
    spec.validate()?;
    let (template_uv, triangulation) = template(spec.n_points)?;
    let scans: Vec<(PhantomScan, Vec<Option<f64>>)> = (0..spec.n_scans)
        .into_par_iter()
        .map(|i| generate_scan(spec, i, &template_uv, &triangulation))
        .collect::<Result<_>>()?;
    let rows = scans
        .iter()
        .map(|(s, values)| CohortRow {
            scan_id: s.scan_id.clone(),
            subject_id: s.subject_id.clone(),
            sex: s.sex,
            values: values.clone(),
        })
        .collect();
    let cohort = CohortTable::new(spec.biomarkers.iter().map(|b| b.name.clone()).collect(), rows)?;
    Ok(Phantoms {
        spec: spec.clone(),
        template_uv,
        triangulation,
        scans: scans.into_iter().map(|(s, _)| s).collect(),
        cohort,
    })
}

fn generate_scan(
    spec: &PhantomSpec,
    index: usize,
    template_uv: &[[f64; 2]],
    tri: &Triangulation,
) -> Result<(PhantomScan, Vec<Option<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(index as u64);
    let coin: bool = rng.random();
    let sex = spec.sex.unwrap_or(if coin { Sex::M } else { Sex::F });
    let mut z = [0.0; 3];
    for (l, active) in z.iter_mut().zip(spec.active_latents) {
        let draw: f64 = rng.sample(StandardNormal);
        *l = if active { draw } else { 0.0 };
    }
    let jitter = spec.translation_jitter;
    let tx = rng.random_range(-1.0..=1.0) * jitter;
    let ty = rng.random_range(-1.0..=1.0) * jitter;

    let body_h = BODY_FRACTION * spec.image_height as f64;
    let cx = (spec.image_width as f64 - 1.0) / 2.0 + tx;
    let cy = (spec.image_height as f64 - 1.0) / 2.0 + ty;
    let points: Vec<Point2<f64>> = template_uv
        .iter()
        .map(|&uv| {
            let [x, y] = body_point(uv, sex, z);
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            Point2::new(
                cx + body_h * (x + spec.noise_sigma * nx),
                cy + body_h * (y + spec.noise_sigma * ny),
            )
        })
        .collect();

    let values = spec
        .biomarkers
        .iter()
        .map(|b| {
            let e: f64 = rng.sample(StandardNormal);
            let missing = rng.random::<f64>() < b.missing_fraction;
            let v = b.weights.iter().zip(&z).map(|(w, l)| w * l).sum::<f64>() + b.noise_sigma * e;
            (!missing).then_some(v)
        })
        .collect();

    let scan_id = format!("ph{index:05}");
    let images = if spec.modes.is_empty() {
        Vec::new()
    } else {
        let raster = rasterize(&points, tri, spec.image_width, spec.image_height);
        let mut images = Vec::with_capacity(spec.modes.len());
        for &mode in &spec.modes {
            let mut pixels = vec![0.0; spec.image_width * spec.image_height];
            for idx in raster.covered() {
                let t = tri.triangles[raster.triangle_at(idx).expect("covered pixel")];
                let l = raster.bary_at(idx);
                let u = (0..3).map(|k| l[k] * template_uv[t[k]][0]).sum::<f64>();
                let v = (0..3).map(|k| l[k] * template_uv[t[k]][1]).sum::<f64>();
                let e: f64 = rng.sample(StandardNormal);
                pixels[idx] = (field_value(mode, u, v, z) + spec.texture_noise * e).round().clamp(0.0, 65535.0);
            }
            images.push(ScanImage::new(scan_id.clone(), mode, spec.image_width, spec.image_height, pixels)?);
        }
        images
    };

    Ok((
        PhantomScan {
            subject_id: format!("subj{index:05}"),
            points: PointSet::new(scan_id.clone(), points),
            scan_id,
            sex,
            latents: z,
            images,
        },
        values,
    ))
}

/// Writes phantoms in the corpus layout read by the command-line tool:
/// `points/<id>.csv`, `images/<id>_<mode>.pgm`, `triangulation_F.txt`,
/// `triangulation_M.txt`, `cohort.csv` and `latents.csv`.
pub fn write_corpus(phantoms: &Phantoms, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["points", "images"] {
        let p = dir.join(sub);
        std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    phantoms.scans.par_iter().try_for_each(|s| -> Result<()> {
        write_point_file(&s.points, dir.join("points").join(format!("{}.csv", s.scan_id)))?;
        for img in &s.images {
            write_pgm(img, dir.join("images").join(img.file_name("pgm")))?;
        }
        Ok(())
    })?;
    for sex in ["F", "M"] {
        write_triangulation(&phantoms.triangulation, dir.join(format!("triangulation_{sex}.txt")))?;
    }
    write_cohort(&phantoms.cohort, dir.join("cohort.csv"))?;
    let path = dir.join("latents.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::format(&path, e.to_string()))?;
    w.write_record(["scan_id", LATENT_NAMES[0], LATENT_NAMES[1], LATENT_NAMES[2]])
        .map_err(|e| Error::format(&path, e.to_string()))?;
    for s in &phantoms.scans {
        w.write_record([s.scan_id.clone(), s.latents[0].to_string(), s.latents[1].to_string(), s.latents[2].to_string()])
            .map_err(|e| Error::format(&path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    /// Per latent, R² of a least-squares fit (with intercept) on the scores.
    pub r_squared: Vec<f64>,
    /// Canonical correlations between scores and latents, descending.
    pub canonical_correlations: Vec<f64>,
}

/// Orthonormal basis of the column space of the column-centred matrix.
fn centred_basis(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if m.ncols() == 0 || n == 0 {
        return DMatrix::zeros(n, 0);
    }
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    let svd = c.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.max();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > 1e-10 * smax)
        .collect();
    DMatrix::from_fn(n, keep.len(), |r, k| u[(r, keep[k])])
}

/// How well model scores recover the generating latents.
pub fn oracle_report(scores: &DMatrix<f64>, latents: &DMatrix<f64>) -> Result<OracleReport> {
    if scores.nrows() != latents.nrows() {
        return Err(Error::DimensionMismatch {
            expected: latents.nrows(),
            actual: scores.nrows(),
        });
    }
    if scores.nrows() < 2 {
        return Err(Error::invalid("oracle report needs at least 2 rows"));
    }
    let qx = centred_basis(scores);
    let r_squared = latents
        .column_iter()
        .map(|col| {
            let mean = col.mean();
            let y = col.add_scalar(-mean);
            let total = y.norm_squared();
            if total == 0.0 {
                return 0.0;
            }
            let proj = qx.transpose() * &y;
            (proj.norm_squared() / total).clamp(0.0, 1.0)
        })
        .collect();
    let qy = centred_basis(latents);
    let canonical_correlations = if qx.ncols() == 0 || qy.ncols() == 0 {
        Vec::new()
    } else {
        let mut s: Vec<f64> = (qx.transpose() * qy).singular_values().iter().map(|v| v.min(1.0)).collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    };
    Ok(OracleReport {
        r_squared,
        canonical_correlations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::association::spearman;
    use crate::geometry::triangle_area;

    fn small(seed: u64) -> PhantomSpec {
        PhantomSpec {
            seed,
            n_scans: 12,
            image_width: 64,
            image_height: 80,
            ..Default::default()
        }
    }

    #[test]
    fn grid_template_for_105() {
        let (uv, tri) = template(105).unwrap();
        assert_eq!(uv.len(), 105);
        assert_eq!(tri.len(), 2 * 14 * 6);
        assert_eq!(uv[104], [1.0, 1.0]);
        assert_eq!(uv[7], [0.0, 1.0 / 14.0]);
    }

    #[test]
    fn templates_have_positive_consistent_areas() {
        for n in [3, 4, 5, 7, 13, 20, 105] {
            let (uv, tri) = template(n).unwrap();
            for sex in [Sex::F, Sex::M] {
                let pts: Vec<Point2<f64>> = uv.iter().map(|&q| body_point(q, sex, [0.0; 3])).map(|p| Point2::new(p[0], p[1])).collect();
                let areas: Vec<f64> = tri.triangles.iter().map(|t| triangle_area(&pts[t[0]], &pts[t[1]], &pts[t[2]])).collect();
                assert!(areas.iter().all(|a| a.abs() > 1e-4), "n={n}");
                assert!(areas.iter().all(|a| a.signum() == areas[0].signum()), "n={n}");
            }
        }
        assert!(template(2).is_err());
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        assert_eq!(a, b);
        let c = generate(&small(6)).unwrap();
        assert_ne!(a.scans[0].points, c.scans[0].points);
    }

    #[test]
    fn shapes_and_cohort_do_not_depend_on_rendered_modes() {
        let a = generate(&small(9)).unwrap();
        let b = generate(&PhantomSpec {
            modes: vec![],
            ..small(9)
        })
        .unwrap();
        for (x, y) in a.scans.iter().zip(&b.scans) {
            assert_eq!(x.points, y.points);
            assert!(y.images.is_empty());
        }
        assert_eq!(a.cohort, b.cohort);
    }

    #[test]
    fn noiseless_single_latent_is_rank_one() {
        let spec = PhantomSpec {
            n_scans: 8,
            noise_sigma: 0.0,
            translation_jitter: 0.0,
            active_latents: [false, false, true],
            sex: Some(Sex::F),
            modes: vec![],
            ..small(2)
        };
        let ph = generate(&spec).unwrap();
        let rest = generate(&PhantomSpec {
            active_latents: [false; 3],
            n_scans: 1,
            ..spec.clone()
        })
        .unwrap();
        let base = rest.scans[0].points.to_interleaved();
        let diffs: Vec<Vec<f64>> = ph
            .scans
            .iter()
            .map(|s| s.points.to_interleaved().iter().zip(&base).map(|(a, b)| a - b).collect())
            .collect();
        let m = DMatrix::from_fn(diffs.len(), base.len(), |i, j| diffs[i][j]);
        let sv = m.singular_values();
        let smax = sv.max();
        assert!(smax > 1.0);
        let mut sorted: Vec<f64> = sv.iter().copied().collect();
        sorted.sort_by(|a, b| b.total_cmp(a));
        assert!(sorted[1] < 1e-9 * smax, "{sorted:?}");
        // Each scan's displacement is its latent times one fixed field.
        for (s, d) in ph.scans.iter().zip(&diffs) {
            let z = s.latents[2];
            let unit: Vec<f64> = diffs[0].iter().map(|v| v / ph.scans[0].latents[2]).collect();
            for (a, b) in d.iter().zip(&unit) {
                assert!((a - z * b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn images_carry_field_inside_body_only() {
        let spec = PhantomSpec {
            texture_noise: 0.0,
            n_scans: 2,
            ..small(4)
        };
        let ph = generate(&spec).unwrap();
        let s = &ph.scans[0];
        let img = ph.image(0, ImagingMode::DFat).unwrap();
        assert_eq!(img.pixels[0], 0.0);
        let (lo, hi) = s.points.bounding_box();
        let (cx, cy) = (((lo.x + hi.x) / 2.0).round() as usize, ((lo.y + hi.y) / 2.0).round() as usize);
        assert!(img.get(cx, cy) > 500.0);
        assert!(img.pixels.iter().all(|v| v.fract() == 0.0 && *v >= 0.0));
        assert_eq!(ph.scans[0].images.len(), 5);
    }

    #[test]
    fn biomarker_tracks_its_latent() {
        let spec = PhantomSpec {
            n_scans: 400,
            modes: vec![],
            biomarkers: vec![
                BiomarkerRecipe::new("b", [1.0, 0.0, 0.0], 0.1),
                BiomarkerRecipe {
                    missing_fraction: 0.5,
                    ..BiomarkerRecipe::new("m", [0.0, 1.0, 0.0], 0.1)
                },
            ],
            ..small(11)
        };
        let ph = generate(&spec).unwrap();
        let z: Vec<f64> = ph.scans.iter().map(|s| s.latents[0]).collect();
        let b: Vec<f64> = ph.scans.iter().map(|s| ph.cohort.value(&s.scan_id, 0).unwrap()).collect();
        assert!(spearman(&z, &b).unwrap().unwrap() > 0.9);
        let completion = ph.cohort.completion("m").unwrap();
        assert!((completion - 0.5).abs() < 0.1, "{completion}");
        let males = ph.scans.iter().filter(|s| s.sex == Sex::M).count();
        assert!((150..250).contains(&males));
    }

    #[test]
    fn spec_validation() {
        for bad in [
            PhantomSpec { n_points: 2, ..small(0) },
            PhantomSpec { noise_sigma: -1.0, ..small(0) },
            PhantomSpec { n_scans: 0, ..small(0) },
            PhantomSpec {
                biomarkers: vec![BiomarkerRecipe::new("a", [0.0; 3], 1.0), BiomarkerRecipe::new("a", [0.0; 3], 1.0)],
                ..small(0)
            },
        ] {
            assert!(generate(&bad).is_err());
        }
    }

    #[test]
    fn oracle_identity_and_independence() {
        let spec = PhantomSpec {
            n_scans: 2000,
            modes: vec![],
            ..small(1)
        };
        let ph = generate(&spec).unwrap();
        let z = ph.latent_matrix();
        let r = oracle_report(&z, &z).unwrap();
        assert!(r.r_squared.iter().all(|v| (v - 1.0).abs() < 1e-12));
        assert!(r.canonical_correlations.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let noise = DMatrix::from_fn(2000, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let r = oracle_report(&noise, &z).unwrap();
        assert!(r.r_squared.iter().all(|v| *v < 0.05), "{:?}", r.r_squared);
        assert!(oracle_report(&noise.rows(0, 10).into_owned(), &z).is_err());
    }

    #[test]
    fn oracle_r_squared_matches_normal_equations() {
        // y = 2 + 3·x1 − x2 exactly, plus a column that needs the intercept.
        let x = DMatrix::from_row_slice(5, 2, &[0.0, 1.0, 1.0, 0.0, 2.0, 2.0, 3.0, 1.0, 4.0, 5.0]);
        let y = DMatrix::from_fn(5, 2, |i, j| if j == 0 { 2.0 + 3.0 * x[(i, 0)] - x[(i, 1)] } else { [1.0, 3.0, 2.0, 5.0, 4.0][i] });
        let r = oracle_report(&x, &y).unwrap();
        assert!((r.r_squared[0] - 1.0).abs() < 1e-12);
        // Second column: closed-form least squares through (1, x1, x2).
        let a = DMatrix::from_fn(5, 3, |i, j| if j == 0 { 1.0 } else { x[(i, j - 1)] });
        let yv = y.column(1).into_owned();
        let beta = (a.transpose() * &a).try_inverse().unwrap() * a.transpose() * &yv;
        let res = &yv - &a * beta;
        let mean = yv.mean();
        let expected = 1.0 - res.norm_squared() / yv.add_scalar(-mean).norm_squared();
        assert!((r.r_squared[1] - expected).abs() < 1e-12);
    }

    #[test]
    fn corpus_layout() {
        let dir = tempfile::tempdir().unwrap();
        let ph = generate(&PhantomSpec {
            n_scans: 3,
            modes: vec![ImagingMode::DFat],
            ..small(3)
        })
        .unwrap();
        write_corpus(&ph, dir.path()).unwrap();
        for f in ["points/ph00001.csv", "images/ph00002_d_fat.pgm", "triangulation_F.txt", "triangulation_M.txt", "cohort.csv", "latents.csv"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let back = crate::model_io::read_image(dir.path().join("images/ph00002_d_fat.pgm")).unwrap();
        assert_eq!(back.pixels, ph.scans[2].images[0].pixels);
    }
}
