//! Sex-specific shape models over centroid-aligned landmarks.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::align_centroid;
use crate::model_io::{ContainerBlocks, ModelKind, PointSet, Sex};
use crate::pca::{self, PcaModel, ScorePercentiles, Solver};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelOptions {
    pub variance_fraction: f64,
    pub solver: Solver,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            variance_fraction: 0.95,
            solver: Solver::Exact,
        }
    }
}

/// PCA over aligned landmark vectors `(x0, y0, ..., x_{n-1}, y_{n-1})`,
/// in pixels of the source scans.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeModel {
    pub sex: Sex,
    pub n_points: usize,
    pub pca: PcaModel,
    pub percentiles: ScorePercentiles,
    pub training_ids: Vec<String>,
}

/// Stacks aligned shapes into an `N × 2n` matrix.
pub(crate) fn aligned_matrix(point_sets: &[&PointSet]) -> Result<DMatrix<f64>> {
    let n_points = point_sets.first().map(|p| p.len()).unwrap_or(0);
    let mut m = DMatrix::zeros(point_sets.len(), 2 * n_points);
    for (i, ps) in point_sets.iter().enumerate() {
        if ps.len() != n_points {
            return Err(Error::invalid(format!(
                "scan {} has {} points, expected {n_points}",
                ps.scan_id,
                ps.len()
            )));
        }
        let a = align_centroid(ps)?;
        for (j, v) in a.coords.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    Ok(m)
}

/// Aligns every training shape, stacks them and fits PCA. All samples
/// must carry the model's sex and the same number of points.
pub fn build_shape_model(samples: &[(&PointSet, Sex)], sex: Sex, options: &ModelOptions) -> Result<ShapeModel> {
    if samples.len() < 2 {
        return Err(Error::invalid(format!("shape model needs at least 2 point sets, got {}", samples.len())));
    }
    if let Some((ps, s)) = samples.iter().find(|(_, s)| *s != sex) {
        return Err(Error::invalid(format!("mixed sex: scan {} is {s}, model is {sex}", ps.scan_id)));
    }
    let sets: Vec<&PointSet> = samples.iter().map(|(p, _)| *p).collect();
    let data = aligned_matrix(&sets)?;
    let pca = pca::fit(&data, options.variance_fraction, options.solver)?;
    let percentiles = pca.score_percentiles(&data)?;
    Ok(ShapeModel {
        sex,
        n_points: sets[0].len(),
        pca,
        percentiles,
        training_ids: sets.iter().map(|p| p.scan_id.clone()).collect(),
    })
}

impl ShapeModel {
    pub fn n_components(&self) -> usize {
        self.pca.n_components()
    }

    /// Shape scores of a scan (aligned first).
    pub fn project(&self, points: &PointSet) -> Result<Vec<f64>> {
        if points.len() != self.n_points {
            return Err(Error::DimensionMismatch {
                expected: self.n_points,
                actual: points.len(),
            });
        }
        self.pca.project(&align_centroid(points)?.coords)
    }

    /// Landmarks (centroid at the origin) for the given leading scores.
    pub fn synthesize(&self, scores: &[f64]) -> Result<PointSet> {
        PointSet::from_interleaved("synthesized", &self.pca.reconstruct(scores)?)
    }

    pub fn mean_shape(&self) -> PointSet {
        PointSet::from_interleaved("mean", self.pca.mean.as_slice()).expect("mean has even length")
    }

    pub(crate) fn write_blocks(&self, prefix: &str, blocks: &mut ContainerBlocks) {
        self.pca.to_blocks(prefix, blocks);
        self.percentiles.to_blocks(prefix, blocks);
        blocks.set_meta(&format!("{prefix}.training_ids"), serde_json::json!(self.training_ids));
    }

    pub(crate) fn read_blocks(prefix: &str, blocks: &ContainerBlocks) -> Result<Self> {
        let pca = PcaModel::from_blocks(prefix, blocks)?;
        let percentiles = ScorePercentiles::from_blocks(prefix, blocks)?;
        if pca.dim() != 2 * blocks.n_points || percentiles.len() != pca.n_components() {
            return Err(Error::invalid(format!("{prefix}: dimensions disagree with n_points")));
        }
        Ok(Self {
            sex: blocks.sex,
            n_points: blocks.n_points,
            pca,
            percentiles,
            training_ids: blocks.meta(&format!("{prefix}.training_ids"))?,
        })
    }

    pub fn to_blocks(&self) -> ContainerBlocks {
        let mut b = ContainerBlocks::new(ModelKind::Shape, self.sex, None, self.n_points);
        self.write_blocks("shape", &mut b);
        b
    }

    pub fn from_blocks(blocks: &ContainerBlocks) -> Result<Self> {
        if blocks.kind != ModelKind::Shape {
            return Err(Error::invalid(format!("expected a shape model, found {}", blocks.kind)));
        }
        Self::read_blocks("shape", blocks)
    }
}
