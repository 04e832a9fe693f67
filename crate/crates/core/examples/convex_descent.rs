//! EFIM-preconditioned descent and plain gradient descent on random
//! quadratics, measured against the `||theta0 - theta*||^2 / (2 alpha k)` rate.

use kronfisher::data::synth_quadratic;
use kronfisher::optim::{convex_preconditioned_descent, lipschitz_constant, Preconditioner};
use kronfisher::tensor::SeededRng;

fn main() -> kronfisher::Result<()> {
    for seed in 0..3 {
        let (a, star) = synth_quadratic(10, 100.0, seed)?;
        let l = lipschitz_constant(&a)?;
        let mut rng = SeededRng::new(seed).fork(4);
        let theta0: Vec<f64> = star.iter().map(|s| s + rng.normal()).collect();
        for (name, alpha, pre) in [
            ("gd, 1/L", 1.0 / l, Preconditioner::Identity),
            ("efim, 1/L", 1.0 / l, Preconditioner::default()),
            ("efim, 1e-3/L", 1e-3 / l, Preconditioner::default()),
        ] {
            let tr = convex_preconditioned_descent(&a, &star, &theta0, alpha, 1000, pre)?;
            println!(
                "seed {seed} {name:13} J-J* at k=1,10,1000: {:9.2e} {:9.2e} {:9.2e}  worst gap/bound {:.2e}",
                tr.suboptimality[1],
                tr.suboptimality[10],
                tr.suboptimality[1000],
                tr.worst_bound_ratio()
            );
        }
    }
    Ok(())
}
