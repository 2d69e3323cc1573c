//! Compares the exact and randomized PCA solvers on a wide low-rank matrix.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use samforge::pca::{fit, Solver};

fn main() -> samforge::Result<()> {
    let (n, d, r) = (800, 3000, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let basis = DMatrix::from_fn(d, r, |_, _| rng.sample::<f64, _>(StandardNormal)).qr().q();
    let latent = DMatrix::from_fn(n, r, |_, j| rng.sample::<f64, _>(StandardNormal) * (40.0 - 4.0 * j as f64).sqrt());
    let mut x = latent * basis.transpose();
    x.iter_mut().for_each(|v| *v += 0.05 * rng.sample::<f64, _>(StandardNormal));

    let t = Instant::now();
    let exact = fit(&x, 0.95, Solver::Exact)?;
    let te = t.elapsed();
    let t = Instant::now();
    let fast = fit(&x, 0.95, Solver::randomized(3))?;
    let tr = t.elapsed();

    println!("exact      k={} in {:.2?}", exact.n_components(), te);
    println!("randomized k={} in {:.2?}", fast.n_components(), tr);
    for i in 0..exact.n_components().min(fast.n_components()) {
        let (a, b) = (exact.eigenvalues[i], fast.eigenvalues[i]);
        println!("  λ{:<2} {a:10.4} {b:10.4}  rel {:.1e}", i + 1, (a - b).abs() / a);
    }
    println!("orthonormality error {:.1e}", fast.orthonormality_error());
    Ok(())
}
