//! Runs the percentile-tail KS scan and the Spearman table on a phantom
//! shape model, then prints the significant hits.

use nalgebra::DMatrix;
use samforge::association::{scan_associations, spearman_table, AssociationConfig, ModelLabel, ScoredModel};
use samforge::model_io::ModelKind;
use samforge::phantom::{generate, PhantomSpec};
use samforge::shape::{build_shape_model, ModelOptions};
use samforge::Sex;

fn main() -> samforge::Result<()> {
    let ph = generate(&PhantomSpec {
        n_scans: 1500,
        sex: Some(Sex::M),
        modes: vec![],
        ..Default::default()
    })?;
    let model = build_shape_model(&ph.shape_samples(Sex::M), Sex::M, &ModelOptions::default())?;
    let k = model.n_components();
    let mut scores = DMatrix::zeros(ph.scans.len(), k);
    for (i, s) in ph.scans.iter().enumerate() {
        let b = model.project(&s.points)?;
        scores.row_mut(i).copy_from_slice(&b);
    }
    let label = ModelLabel {
        kind: ModelKind::Shape,
        mode: None,
        sex: Sex::M,
    };
    let ids = ph.scans.iter().map(|s| s.scan_id.clone()).collect();
    let scored = ScoredModel::new(label, &model.pca, Some(model.percentiles.clone()), ids, scores)?;

    let results = scan_associations(std::slice::from_ref(&scored), &ph.cohort, &AssociationConfig::default())?;
    let tested = results.iter().filter(|r| !r.skipped).count();
    println!("{} results, {tested} tests, alpha = {:.2e}", results.len(), results[0].alpha_adjusted);
    for r in results.iter().filter(|r| r.significant) {
        println!("  pc{:<2} {:<12} D = {:.3} p = {:.2e}", r.component, r.biomarker, r.ks_d.unwrap_or(0.0), r.p_value.unwrap_or(1.0));
    }

    let rows = spearman_table(std::slice::from_ref(&scored), &ph.cohort, &None, Some(3))?;
    for r in rows.iter().filter(|r| r.rho.is_some_and(|v| v.abs() > 0.3)) {
        println!("  rho(pc{}, {}) = {:+.3}", r.component, r.biomarker, r.rho.unwrap_or(0.0));
    }
    Ok(())
}
