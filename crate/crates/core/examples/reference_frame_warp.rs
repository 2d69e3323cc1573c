//! Builds a reference frame from a mean shape, warps a phantom scan into
//! it and back, and writes the three images as PNG.
//!
//! cargo run --example reference_frame_warp -- [out_dir]

use samforge::geometry::{build_reference_frame, warp_image, warp_to_shape};
use samforge::model_io::write_png;
use samforge::phantom::{generate, PhantomSpec};
use samforge::shape::{build_shape_model, ModelOptions};
use samforge::{ImagingMode, ScanImage, Sex};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "warp_out".into());
    std::fs::create_dir_all(&out)?;
    let ph = generate(&PhantomSpec {
        n_scans: 50,
        sex: Some(Sex::M),
        modes: vec![ImagingMode::DLean],
        ..Default::default()
    })?;
    let shape = build_shape_model(&ph.shape_samples(Sex::M), Sex::M, &ModelOptions::default())?;
    let frame = build_reference_frame(&shape.mean_shape(), &ph.triangulation, 256)?;
    println!("frame {}×{}, {} masked pixels", frame.width, frame.height, frame.mask_count());

    let scan = &ph.scans[0];
    let src = ph.image(0, ImagingMode::DLean).expect("mode generated");
    let grid = warp_image(src, &scan.points, &frame)?;
    let (back, valid) = warp_to_shape(&grid, &frame, &scan.points, src.width, src.height)?;

    let (mut se, mut n, mut peak) = (0.0, 0, 0.0f64);
    for i in 0..back.len() {
        if valid[i] {
            se += (back[i] - src.pixels[i]).powi(2);
            n += 1;
            peak = peak.max(src.pixels[i]);
        }
    }
    let rmse = (se / n as f64).sqrt();
    println!("round trip over {n} pixels: RMSE {rmse:.2}, PSNR {:.1} dB", 20.0 * (peak / rmse).log10());

    write_png(src, format!("{out}/source.png"))?;
    write_png(&ScanImage::new("frame", src.mode, frame.width, frame.height, grid)?, format!("{out}/frame.png"))?;
    write_png(&ScanImage::new("back", src.mode, src.width, src.height, back)?, format!("{out}/round_trip.png"))?;
    println!("wrote {out}/source.png, frame.png, round_trip.png");
    Ok(())
}
