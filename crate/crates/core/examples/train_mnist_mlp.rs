//! AdaFisher against Adam and SGD on the bundled MNIST subset.
//!
//! `cargo run --release --example train_mnist_mlp [epochs]`

use kronfisher::experiments::{mlp_784_64_10, mnist_subset, settings};
use kronfisher::optim::OptimizerName;
use kronfisher::train::train;

fn main() -> kronfisher::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(10);
    let splits = mnist_subset()?;
    println!("optimizer        lr   test acc  test loss  ms/step");
    for (name, lr) in [
        (OptimizerName::AdaFisher, 1e-3),
        (OptimizerName::AdaFisher, 5e-3),
        (OptimizerName::Adam, 1e-3),
        (OptimizerName::Sgd, 5e-2),
    ] {
        let s = settings(name, lr, epochs, 64, 1);
        let out = train(mlp_784_64_10(1)?, &splits.train, splits.test.as_ref(), &s, |_| Ok(()))?;
        let last = out.rows.last().expect("epochs > 0");
        println!(
            "{:10} {lr:8.0e} {:9.1}% {:10.4} {:8.2}",
            name.as_str(),
            100.0 * last.accuracy,
            last.loss,
            out.mean_step_ms()
        );
    }
    Ok(())
}
