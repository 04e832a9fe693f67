//! Gershgorin discs, diagonal energy and off-diagonal noise sensitivity of
//! the full activation factor of the toy conv net's first dense layer.
//!
//! `cargo run --release --example gershgorin_diagnostics [epochs]`

use kronfisher::diagnostics::{eigen_shift, gershgorin_report, perturb_offdiag, snr_offdiag};
use kronfisher::experiments::{mnist_subset, settings, toy_conv, TOY_CONV_DENSE};
use kronfisher::kfactor::layer_kf_full;
use kronfisher::optim::OptimizerName;
use kronfisher::tensor::SeededRng;
use kronfisher::train::{train, Event};

fn main() -> kronfisher::Result<()> {
    let epochs = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(5);
    let splits = mnist_subset()?;
    let s = settings(OptimizerName::AdaFisher, 1e-3, epochs, 50, 1);
    // Evaluation passes drop captures, so take the factors at each step.
    let mut full = None;
    train(toy_conv(1)?, &splits.train, None, &s, |ev| {
        if let Event::Step { net, .. } = ev {
            let cap = net.layers()[TOY_CONV_DENSE].capture().expect("training step captures");
            full = Some(layer_kf_full(cap)?);
        }
        Ok(())
    })?;
    let (h, sf) = full.expect("at least one step");

    for (name, m) in [("H", &h), ("S", &sf)] {
        let rep = gershgorin_report(m)?;
        println!(
            "{name} {}x{}: diag energy {:.3}, kaiser {}, eigenvalues in discs {}",
            m.rows(),
            m.cols(),
            rep.diag_energy_ratio,
            rep.kaiser_count,
            rep.eigenvalues_in_discs
        );
        for sigma in [1e-4, 1e-3, 1e-2] {
            let p = perturb_offdiag(m, sigma, &mut SeededRng::new(0))?;
            let shift = eigen_shift(m, &p)?;
            println!("  sigma {sigma:.0e}: snr {:6.1} dB, eigen shift {shift:?}", snr_offdiag(m, &p)?);
        }
    }
    Ok(())
}
