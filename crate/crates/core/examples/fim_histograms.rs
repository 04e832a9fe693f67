//! Histograms of the damped EFIM entries of every layer of the toy conv net
//! at a few points during training.

use kronfisher::diagnostics::fim_histogram;
use kronfisher::experiments::{mnist_subset, settings, toy_conv};
use kronfisher::optim::OptimizerName;
use kronfisher::train::{train, Event};

fn main() -> kronfisher::Result<()> {
    let splits = mnist_subset()?;
    let s = settings(OptimizerName::AdaFisher, 1e-3, 2, 50, 1);
    train(toy_conv(1)?, &splits.train, None, &s, |ev| {
        if let Event::Step { step, opt, .. } = ev {
            if step == 1 || step % 40 == 0 {
                let af = opt.as_adafisher().expect("AdaFisher run");
                for h in fim_histogram(&af.efims()?, 8)? {
                    let total: u64 = h.counts.iter().map(|&c| c as u64).sum();
                    let bars: String = h
                        .counts
                        .iter()
                        .map(|&c| [' ', '.', ':', '|', '#'][(4 * c as u64).div_ceil(total.max(1)).min(4) as usize])
                        .collect();
                    println!("step {step:3} layer {} [{bars}] {:.1e}..{:.1e}", h.layer, h.edges[0], h.edges[h.edges.len() - 1]);
                }
            }
        }
        Ok(())
    })?;
    Ok(())
}
