//! Texture models over warped in-body pixels, and joint shape+texture
//! appearance models.
//!
//! A scan's appearance vector is `(w_s · b_shape, b_texture)` with the
//! single scalar `w_s = sqrt(Σλ_texture / Σλ_shape)` (total variances of
//! the two sub-models), which makes one unit of shape score commensurate
//! with one unit of texture score.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, Point2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{build_reference_frame, warp_image, warp_to_shape, ReferenceFrame};
use crate::model_io::{ContainerBlocks, ImagingMode, ModelKind, PointSet, ScanImage, Sex, Triangulation};
use crate::pca::{self, PcaModel, ScorePercentiles};
use crate::shape::{ModelOptions, ShapeModel};

pub const DEFAULT_LONG_SIDE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureNormalization {
    #[default]
    Raw,
    ZeroMeanUnitVar,
}

/// Masked, row-major texture samples of one scan.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedTexture {
    pub values: Vec<f64>,
    /// Set when normalization met a constant texture; `values` are then zeros.
    pub zero_variance: bool,
}

/// Warps `image` into the frame and flattens the masked pixels in
/// row-major order, optionally normalizing to zero mean and unit variance.
pub fn extract_texture(
    image: &ScanImage,
    points: &PointSet,
    frame: &ReferenceFrame,
    normalization: TextureNormalization,
) -> Result<ExtractedTexture> {
    let grid = warp_image(image, points, frame)?;
    let mut values = frame.gather(&grid);
    let mut zero_variance = false;
    if normalization == TextureNormalization::ZeroMeanUnitVar {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        if var <= (1e-12 * mean.abs().max(1.0)).powi(2) {
            zero_variance = true;
            values.iter_mut().for_each(|v| *v = 0.0);
        } else {
            let sd = var.sqrt();
            values.iter_mut().for_each(|v| *v = (*v - mean) / sd);
        }
    }
    Ok(ExtractedTexture { values, zero_variance })
}

/// One training scan: an image of the model's mode and its landmarks.
#[derive(Debug, Clone, Copy)]
pub struct TrainingScan<'a> {
    pub image: &'a ScanImage,
    pub points: &'a PointSet,
    pub sex: Sex,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TextureOptions {
    pub model: ModelOptions,
    pub long_side: usize,
    pub normalization: TextureNormalization,
}

impl Default for TextureOptions {
    fn default() -> Self {
        Self {
            model: ModelOptions::default(),
            long_side: DEFAULT_LONG_SIDE,
            normalization: TextureNormalization::Raw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureModel {
    pub mode: ImagingMode,
    pub sex: Sex,
    pub frame: ReferenceFrame,
    pub pca: PcaModel,
    pub normalization: TextureNormalization,
    pub percentiles: ScorePercentiles,
    pub training_ids: Vec<String>,
}

fn texture_matrix(scans: &[TrainingScan<'_>], frame: &ReferenceFrame, normalization: TextureNormalization) -> Result<DMatrix<f64>> {
    let textures: Vec<Vec<f64>> = scans
        .par_iter()
        .map(|s| extract_texture(s.image, s.points, frame, normalization).map(|t| t.values))
        .collect::<Result<_>>()?;
    let d = frame.mask_count();
    let mut m = DMatrix::zeros(textures.len(), d);
    for (i, t) in textures.iter().enumerate() {
        for (j, v) in t.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

fn check_scans(scans: &[TrainingScan<'_>], mode: ImagingMode, sex: Sex) -> Result<()> {
    if scans.len() < 2 {
        return Err(Error::invalid(format!("need at least 2 training scans, got {}", scans.len())));
    }
    for s in scans {
        if s.image.mode != mode {
            return Err(Error::invalid(format!(
                "mode mismatch: scan {} is {}, model is {mode}",
                s.image.scan_id, s.image.mode
            )));
        }
        if s.sex != sex {
            return Err(Error::invalid(format!("mixed sex: scan {} is {}, model is {sex}", s.image.scan_id, s.sex)));
        }
        if s.image.scan_id != s.points.scan_id {
            return Err(Error::invalid(format!(
                "image {} paired with points {}",
                s.image.scan_id, s.points.scan_id
            )));
        }
    }
    Ok(())
}

/// Builds the reference frame on the shape model's mean shape and fits
/// PCA to the warped textures.
pub fn build_texture_model(
    scans: &[TrainingScan<'_>],
    shape_model: &ShapeModel,
    tri: &Triangulation,
    mode: ImagingMode,
    options: &TextureOptions,
) -> Result<TextureModel> {
    if !mode.supports_texture() {
        return Err(Error::invalid(format!("texture models are not built for mode {mode}")));
    }
    check_scans(scans, mode, shape_model.sex)?;
    let frame = build_reference_frame(&shape_model.mean_shape(), tri, options.long_side)?;
    let data = texture_matrix(scans, &frame, options.normalization)?;
    let pca = pca::fit(&data, options.model.variance_fraction, options.model.solver)?;
    let percentiles = pca.score_percentiles(&data)?;
    Ok(TextureModel {
        mode,
        sex: shape_model.sex,
        frame,
        pca,
        normalization: options.normalization,
        percentiles,
        training_ids: scans.iter().map(|s| s.image.scan_id.clone()).collect(),
    })
}

impl TextureModel {
    pub fn n_components(&self) -> usize {
        self.pca.n_components()
    }

    pub fn texture_vector(&self, image: &ScanImage, points: &PointSet) -> Result<Vec<f64>> {
        Ok(extract_texture(image, points, &self.frame, self.normalization)?.values)
    }

    pub fn project(&self, image: &ScanImage, points: &PointSet) -> Result<Vec<f64>> {
        self.pca.project(&self.texture_vector(image, points)?)
    }

    /// Full frame grid (zeros outside the mask) for the given texture scores.
    pub fn reconstruct_grid(&self, scores: &[f64]) -> Result<Vec<f64>> {
        self.frame.scatter(&self.pca.reconstruct(scores)?)
    }

    pub(crate) fn write_blocks(&self, prefix: &str, blocks: &mut ContainerBlocks) {
        let f = &self.frame;
        self.pca.to_blocks(prefix, blocks);
        self.percentiles.to_blocks(prefix, blocks);
        blocks.push(format!("{prefix}.frame.points"), f.mean_shape.len(), 2, f.mean_shape.to_interleaved());
        blocks.push(format!("{prefix}.frame.similarity"), 3, 1, vec![f.scale, f.origin[0], f.origin[1]]);
        blocks.set_meta(&format!("{prefix}.frame.triangles"), serde_json::json!(f.triangulation.triangles));
        blocks.set_meta(&format!("{prefix}.normalization"), serde_json::json!(self.normalization));
        blocks.set_meta(&format!("{prefix}.training_ids"), serde_json::json!(self.training_ids));
        blocks.frame_dims = Some([f.width, f.height]);
    }

    pub(crate) fn read_blocks(prefix: &str, blocks: &ContainerBlocks) -> Result<Self> {
        let [width, height] = blocks
            .frame_dims
            .ok_or_else(|| Error::invalid("texture model lacks frame dimensions"))?;
        let mode = blocks.mode.ok_or_else(|| Error::invalid("texture model lacks an imaging mode"))?;
        let (_, _, pts) = blocks.array(&format!("{prefix}.frame.points"))?;
        let (_, _, sim) = blocks.array(&format!("{prefix}.frame.similarity"))?;
        let triangles: Vec<[usize; 3]> = blocks.meta(&format!("{prefix}.frame.triangles"))?;
        let tri = Triangulation::new(blocks.n_points, triangles)?;
        let frame = ReferenceFrame::from_parts(
            width,
            height,
            PointSet::from_interleaved("reference", pts)?,
            tri,
            sim[0],
            [sim[1], sim[2]],
        )?;
        let pca = PcaModel::from_blocks(prefix, blocks)?;
        if pca.dim() != frame.mask_count() {
            return Err(Error::invalid(format!(
                "{prefix}: texture dimension {} does not match mask count {}",
                pca.dim(),
                frame.mask_count()
            )));
        }
        Ok(Self {
            mode,
            sex: blocks.sex,
            frame,
            percentiles: ScorePercentiles::from_blocks(prefix, blocks)?,
            pca,
            normalization: blocks.meta(&format!("{prefix}.normalization"))?,
            training_ids: blocks.meta(&format!("{prefix}.training_ids"))?,
        })
    }

    pub fn to_blocks(&self) -> ContainerBlocks {
        let mut b = ContainerBlocks::new(ModelKind::Texture, self.sex, Some(self.mode), self.frame.triangulation.n_points);
        self.write_blocks("texture", &mut b);
        b
    }

    pub fn from_blocks(blocks: &ContainerBlocks) -> Result<Self> {
        if blocks.kind != ModelKind::Texture {
            return Err(Error::invalid(format!("expected a texture model, found {}", blocks.kind)));
        }
        Self::read_blocks("texture", blocks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceModel {
    pub mode: ImagingMode,
    pub sex: Sex,
    pub shape: ShapeModel,
    pub texture: TextureModel,
    /// `w_s > 0`, multiplies shape scores before concatenation.
    pub shape_weight: f64,
    pub pca: PcaModel,
    pub percentiles: ScorePercentiles,
    pub training_ids: Vec<String>,
}

/// Shape and texture parts recovered from appearance scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Landmarks in aligned model coordinates (centroid at the origin).
    pub shape: PointSet,
    /// Texture in the reference frame, clamped to `[0, 65535]`.
    pub image: ScanImage,
    /// Unclamped masked texture values.
    pub texture: Vec<f64>,
}

/// `sqrt(total texture variance / total shape variance)`, or 1 when
/// either model carries no variance.
pub fn shape_weight(shape: &ShapeModel, texture: &TextureModel) -> f64 {
    let (s, t) = (shape.pca.total_variance, texture.pca.total_variance);
    if shape.pca.zero_variance || texture.pca.zero_variance || s <= 0.0 || t <= 0.0 {
        1.0
    } else {
        (t / s).sqrt()
    }
}

fn sorted_ids<'a>(ids: impl IntoIterator<Item = &'a String>) -> BTreeSet<&'a str> {
    ids.into_iter().map(String::as_str).collect()
}

/// Fits PCA to the concatenated `(w_s · b_shape, b_texture)` vectors of
/// the training scans. Both sub-models must have been fitted on exactly
/// these scans.
pub fn build_appearance_model(
    shape: &ShapeModel,
    texture: &TextureModel,
    scans: &[TrainingScan<'_>],
    options: &ModelOptions,
) -> Result<AppearanceModel> {
    if shape.sex != texture.sex {
        return Err(Error::invalid("shape and texture models differ in sex"));
    }
    check_scans(scans, texture.mode, texture.sex)?;
    let given = sorted_ids(scans.iter().map(|s| &s.image.scan_id));
    if sorted_ids(&shape.training_ids) != sorted_ids(&texture.training_ids) || given != sorted_ids(&texture.training_ids) {
        return Err(Error::invalid("sub-model training sets differ from the supplied scans"));
    }
    let w_s = shape_weight(shape, texture);
    let rows: Vec<Vec<f64>> = scans
        .par_iter()
        .map(|s| combined_vector(shape, texture, w_s, s.image, s.points))
        .collect::<Result<_>>()?;
    let dim = shape.n_components() + texture.n_components();
    let data = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    let pca = if dim == 0 {
        PcaModel {
            mean: nalgebra::DVector::zeros(0),
            components: DMatrix::zeros(0, 0),
            eigenvalues: nalgebra::DVector::zeros(0),
            total_variance: 0.0,
            n_train: rows.len(),
            variance_fraction: options.variance_fraction,
            zero_variance: true,
        }
    } else {
        pca::fit(&data, options.variance_fraction, options.solver)?
    };
    let percentiles = pca.score_percentiles(&data)?;
    Ok(AppearanceModel {
        mode: texture.mode,
        sex: shape.sex,
        shape: shape.clone(),
        texture: texture.clone(),
        shape_weight: w_s,
        pca,
        percentiles,
        training_ids: scans.iter().map(|s| s.image.scan_id.clone()).collect(),
    })
}

fn combined_vector(shape: &ShapeModel, texture: &TextureModel, w_s: f64, image: &ScanImage, points: &PointSet) -> Result<Vec<f64>> {
    let mut v: Vec<f64> = shape.project(points)?.into_iter().map(|b| w_s * b).collect();
    v.extend(texture.project(image, points)?);
    Ok(v)
}

impl AppearanceModel {
    pub fn n_components(&self) -> usize {
        self.pca.n_components()
    }

    /// Concatenated `(w_s · b_shape, b_texture)` vector of one scan.
    pub fn combined_vector(&self, image: &ScanImage, points: &PointSet) -> Result<Vec<f64>> {
        combined_vector(&self.shape, &self.texture, self.shape_weight, image, points)
    }

    pub fn project(&self, image: &ScanImage, points: &PointSet) -> Result<Vec<f64>> {
        self.pca.project(&self.combined_vector(image, points)?)
    }

    /// Splits appearance scores back into `(b_shape, b_texture)`.
    pub fn sub_scores(&self, scores: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let v = self.pca.reconstruct(scores)?;
        let ks = self.shape.n_components();
        let b_shape = v[..ks].iter().map(|x| x / self.shape_weight).collect();
        Ok((b_shape, v[ks..].to_vec()))
    }

    /// Inverts the appearance PCA, then synthesizes the shape and the
    /// frame-space texture.
    pub fn reconstruct(&self, scores: &[f64]) -> Result<Reconstruction> {
        let (b_shape, b_texture) = self.sub_scores(scores)?;
        let shape = self.shape.synthesize(&b_shape)?;
        let texture = self.texture.pca.reconstruct(&b_texture)?;
        let grid = self.texture.frame.scatter(&texture)?;
        let f = &self.texture.frame;
        let pixels = grid.into_iter().map(|v| v.clamp(0.0, 65535.0)).collect();
        let image = ScanImage::new("reconstruction", self.mode, f.width, f.height, pixels)?;
        Ok(Reconstruction { shape, image, texture })
    }

    /// Renders a reconstruction's texture onto its own synthesized shape,
    /// placed by the frame's similarity on a canvas padded by one eighth
    /// of the frame's long side.
    pub fn render_on_shape(&self, recon: &Reconstruction) -> Result<ScanImage> {
        let f = &self.texture.frame;
        let pad = f.width.max(f.height) / 8;
        let (w, h) = (f.width + 2 * pad, f.height + 2 * pad);
        let placed = PointSet::new(
            recon.shape.scan_id.clone(),
            recon
                .shape
                .points
                .iter()
                .map(|p| {
                    let q = f.to_frame(p);
                    Point2::new(q.x + pad as f64, q.y + pad as f64)
                })
                .collect(),
        );
        let grid = f.scatter(&recon.texture)?;
        let (pixels, _) = warp_to_shape(&grid, f, &placed, w, h)?;
        let pixels = pixels.into_iter().map(|v| v.clamp(0.0, 65535.0)).collect();
        ScanImage::new(recon.image.scan_id.clone(), self.mode, w, h, pixels)
    }

    pub fn to_blocks(&self) -> ContainerBlocks {
        let mut b = ContainerBlocks::new(ModelKind::Appearance, self.sex, Some(self.mode), self.shape.n_points);
        self.shape.write_blocks("shape", &mut b);
        self.texture.write_blocks("texture", &mut b);
        self.pca.to_blocks("appearance", &mut b);
        self.percentiles.to_blocks("appearance", &mut b);
        b.push("appearance.shape_weight", 1, 1, vec![self.shape_weight]);
        b.set_meta("appearance.training_ids", serde_json::json!(self.training_ids));
        b
    }

    pub fn from_blocks(blocks: &ContainerBlocks) -> Result<Self> {
        if blocks.kind != ModelKind::Appearance {
            return Err(Error::invalid(format!("expected an appearance model, found {}", blocks.kind)));
        }
        let shape = ShapeModel::read_blocks("shape", blocks)?;
        let texture = TextureModel::read_blocks("texture", blocks)?;
        let pca = PcaModel::from_blocks("appearance", blocks)?;
        let (_, _, w) = blocks.array("appearance.shape_weight")?;
        if !(w[0] > 0.0) {
            return Err(Error::invalid("appearance shape weight must be positive"));
        }
        if pca.dim() != shape.n_components() + texture.n_components() {
            return Err(Error::invalid("appearance dimension does not match sub-models"));
        }
        Ok(Self {
            mode: texture.mode,
            sex: blocks.sex,
            shape,
            texture,
            shape_weight: w[0],
            percentiles: ScorePercentiles::from_blocks("appearance", blocks)?,
            pca,
            training_ids: blocks.meta("appearance.training_ids")?,
        })
    }
}
