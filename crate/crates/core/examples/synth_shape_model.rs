//! Generates a phantom cohort, fits a female shape model and checks how
//! well its scores recover the generating latents.
//!
//! cargo run --example synth_shape_model -- [n_scans]

use nalgebra::DMatrix;
use samforge::phantom::{generate, oracle_report, PhantomSpec, LATENT_NAMES};
use samforge::shape::{build_shape_model, ModelOptions};
use samforge::Sex;

fn main() -> samforge::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(400);
    let ph = generate(&PhantomSpec {
        n_scans: n,
        sex: Some(Sex::F),
        modes: vec![],
        ..Default::default()
    })?;
    let model = build_shape_model(&ph.shape_samples(Sex::F), Sex::F, &ModelOptions::default())?;
    println!("{} scans, {} landmarks, k = {}", n, model.n_points, model.n_components());
    for (i, f) in model.pca.explained_fractions().iter().take(5).enumerate() {
        println!("  pc{:<2} {:6.2}%", i + 1, 100.0 * f);
    }

    let k = model.n_components();
    let mut scores = DMatrix::zeros(n, k);
    for (i, s) in ph.scans.iter().enumerate() {
        scores.row_mut(i).copy_from_slice(&model.project(&s.points)?);
    }
    let report = oracle_report(&scores, &ph.latent_matrix())?;
    for (name, r2) in LATENT_NAMES.iter().zip(&report.r_squared) {
        println!("  R² {name:<11} {r2:.4}");
    }
    Ok(())
}
