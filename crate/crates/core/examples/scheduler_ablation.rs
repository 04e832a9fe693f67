//! AdaFisher on the MNIST MLP under constant, step and cosine schedules.
//!
//! `cargo run --release --example scheduler_ablation [lr]`

use kronfisher::experiments::{mlp_784_64_10, mnist_subset, settings};
use kronfisher::optim::{OptimizerName, Schedule};
use kronfisher::train::train;

fn main() -> kronfisher::Result<()> {
    let lr: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5e-3);
    let splits = mnist_subset()?;
    for schedule in [
        Schedule::Constant {},
        Schedule::StepLr { period: 5, factor: 0.1 },
        Schedule::Cosine { t_max: 10, alpha_min: 0.01 * lr },
    ] {
        let mut accs = Vec::new();
        for seed in 1..=3 {
            let mut s = settings(OptimizerName::AdaFisher, lr, 10, 64, seed);
            s.schedule = schedule.clone();
            let out = train(mlp_784_64_10(seed)?, &splits.train, splits.test.as_ref(), &s, |_| Ok(()))?;
            accs.push(100.0 * out.rows.last().expect("10 epochs").accuracy);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{:9} mean {mean:.2}%  seeds {accs:.1?}", schedule.name());
    }
    Ok(())
}
