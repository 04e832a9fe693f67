//! Simulated data-parallel AdaFisher: the same batches on 1, 2 and 4
//! workers, compared against a single process.

use kronfisher::dist::{ShardMode, WorkerPool};
use kronfisher::experiments::{mlp_784_64_10, mnist_subset};
use kronfisher::optim::{Optimizer, OptimizerName, OptimizerSpec};

fn main() -> kronfisher::Result<()> {
    let splits = mnist_subset()?;
    let net = mlp_784_64_10(0)?;
    let spec = OptimizerSpec::named(OptimizerName::AdaFisher);
    let batches: Vec<Vec<usize>> = (0..30).map(|b| (b * 64..(b + 1) * 64).collect()).collect();

    let mut single = net.clone();
    let mut single_opt = Optimizer::build(&spec, &single)?;
    for b in &batches {
        let (x, y) = splits.train.gather(b)?;
        single.forward_backward(&x, &y)?;
        single_opt.step(&mut single, 1e-3)?;
    }
    let reference = single.params_flat();

    for k in [1, 2, 4] {
        let mut pool = WorkerPool::new(&net, k, ShardMode::Strict)?;
        let mut opt = Optimizer::build(&spec, &net)?;
        let mut loss = 0.0;
        for b in &batches {
            let (x, y) = splits.train.gather(b)?;
            loss = pool.step(&x, &y, &mut opt, 1e-3)?.loss;
        }
        let p = pool.primary().params_flat();
        let drift = p.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let bitwise = p.iter().zip(&reference).all(|(a, b)| a.to_bits() == b.to_bits());
        println!("K={k}: last loss {loss:.4}, max |param - single| {drift:.2e}, bitwise equal {bitwise}");
    }
    Ok(())
}
