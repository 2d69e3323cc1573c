//! Fits texture and combined appearance models for one imaging mode and
//! renders the first mode of variation at ±2.5 standard deviations.
//!
//! cargo run --example appearance_model -- [out_dir]

use samforge::appearance::{build_appearance_model, build_texture_model, TextureOptions};
use samforge::model_io::write_png;
use samforge::phantom::{generate, PhantomSpec};
use samforge::shape::{build_shape_model, ModelOptions};
use samforge::{ImagingMode, Sex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "appearance_out".into());
    std::fs::create_dir_all(&out)?;
    let mode = ImagingMode::DFat;
    let ph = generate(&PhantomSpec {
        n_scans: 200,
        sex: Some(Sex::F),
        modes: vec![mode],
        ..Default::default()
    })?;
    let opts = ModelOptions::default();
    let shape = build_shape_model(&ph.shape_samples(Sex::F), Sex::F, &opts)?;
    let scans = ph.training_scans(mode, Sex::F)?;
    let topts = TextureOptions {
        long_side: 96,
        ..Default::default()
    };
    let texture = build_texture_model(&scans, &shape, &ph.triangulation, mode, &topts)?;
    let app = build_appearance_model(&shape, &texture, &scans, &opts)?;
    println!(
        "shape k={} texture k={} appearance k={} (w_s = {:.3})",
        shape.n_components(),
        texture.n_components(),
        app.n_components(),
        app.shape_weight
    );

    let sd = app.pca.eigenvalues[0].sqrt();
    for (tag, s) in [("minus", -2.5 * sd), ("plus", 2.5 * sd)] {
        let recon = app.reconstruct(&[s])?;
        let img = app.render_on_shape(&recon)?;
        write_png(&img, format!("{out}/pc1_{tag}.png"))?;
    }
    println!("wrote {out}/pc1_minus.png and pc1_plus.png");
    Ok(())
}
