//! Tracks how far the Kronecker-factored Fisher diagonal sits from a
//! Monte-Carlo estimate of the true Fisher on a small conv net.
//!
//! `cargo run --release --example true_fisher_mae` prints the series;
//! pass `--write-pilot` to refresh `tests/fixtures/a5_pilot.json`.

use kronfisher::experiments::{
    bernoulli_mc_rel_err, fisher_mae_run, mnist_subset, pilot_fixture_path, FisherMaeRun, MaePilot,
};

fn main() -> kronfisher::Result<()> {
    let write = std::env::args().any(|a| a == "--write-pilot");
    // The acceptance run uses seed 1; the pilot deliberately does not.
    let run = FisherMaeRun {
        seed: 0,
        keep_full_factor_at: None,
        ..Default::default()
    };
    let splits = mnist_subset()?;
    let mc_rel_err = bernoulli_mc_rel_err(run.samples, 0)?;
    println!("MC estimator on the Bernoulli case, n={}: rel err {mc_rel_err:.2e}", run.samples);

    let trace = fisher_mae_run(&run, &splits)?;
    println!("epoch        mae   mean true F   test acc");
    for (e, (m, t)) in trace.mae.iter().zip(&trace.true_mean).enumerate() {
        println!("{e:5} {m:10.3e} {t:13.3e} {:9.1}%", trace.outcome.rows[e].accuracy * 100.0);
    }
    let last = *trace.mae.last().expect("at least one epoch");

    if write {
        let pilot = MaePilot {
            provenance: format!(
                "examples/true_fisher_mae.rs --write-pilot: toy conv net, AdaFisher defaults, seed {}, {} epochs, \
                 batch {}, MC over the first {} training inputs with {} label draws each. bound = final-epoch MAE \
                 of this run; the MC estimator's relative error at the same draw count on the analytic \
                 Bernoulli case is recorded as mc_rel_err.",
                run.seed, run.epochs, run.batch_size, run.inputs, run.samples
            ),
            seed: run.seed,
            epochs: run.epochs,
            inputs: run.inputs,
            samples: run.samples,
            mc_rel_err,
            mae: trace.mae.clone(),
            bound: last,
        };
        let path = pilot_fixture_path();
        std::fs::write(&path, serde_json::to_string_pretty(&pilot)? + "\n")
            .map_err(|e| kronfisher::Error::io(&path, e))?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
