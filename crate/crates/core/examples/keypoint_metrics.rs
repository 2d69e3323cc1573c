//! Scores perturbed landmark predictions against phantom ground truth.

use nalgebra::Point2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use samforge::keypoints::{compare, evaluate_sets, DEFAULT_TAU};
use samforge::phantom::{generate, PhantomSpec};
use samforge::PointSet;

fn jitter(sets: &[PointSet], sigma: f64, seed: u64) -> Vec<PointSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sets.iter()
        .map(|s| {
            let pts = s
                .points
                .iter()
                .map(|p| {
                    let dx: f64 = rng.sample(StandardNormal);
                    let dy: f64 = rng.sample(StandardNormal);
                    Point2::new(p.x + sigma * dx, p.y + sigma * dy)
                })
                .collect();
            PointSet::new(s.scan_id.clone(), pts)
        })
        .collect()
}

fn main() -> samforge::Result<()> {
    let ph = generate(&PhantomSpec {
        n_scans: 50,
        modes: vec![],
        ..Default::default()
    })?;
    let gt: Vec<PointSet> = ph.scans.iter().map(|s| s.points.clone()).collect();
    let fine = jitter(&gt, 1.5, 1);
    let coarse = jitter(&gt, 6.0, 2);

    for (name, pred) in [("sigma 1.5", &fine), ("sigma 6.0", &coarse)] {
        let report = evaluate_sets(pred, &gt, DEFAULT_TAU)?;
        println!("{name}: {}", report.summary_line());
    }
    let cmp = compare(&fine, &coarse, &gt, DEFAULT_TAU)?;
    let wins = cmp.per_scan.iter().filter(|d| d.d_epe > 0.0).count();
    println!("finer predictor has lower EPE on {wins}/{} scans", cmp.per_scan.len());
    Ok(())
}
