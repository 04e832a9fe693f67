//! Trajectories of two tracked weights on PCA-reduced iris for several
//! optimizers from one shared initialisation, written as landscape JSON.
//!
//! `cargo run --release --example loss_landscape [out_dir]`, then
//! `python3 scripts/plot_landscape.py <out_dir>/adafisher.json` to draw one.

use std::path::PathBuf;

use kronfisher::diagnostics::{landscape_export, pca2};
use kronfisher::experiments::{iris, settings};
use kronfisher::nn::{Activation, LayerKind, Network};
use kronfisher::optim::OptimizerName;
use kronfisher::train::{train, Event};

fn main() -> kronfisher::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "landscape_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| kronfisher::Error::io(&out, e))?;
    let raw = iris()?;
    let ds = raw.with_features(pca2(&raw.features)?.projected)?;
    let init = Network::new(
        &[2],
        vec![
            LayerKind::Dense { in_features: 2, out_features: 8 },
            LayerKind::Activation(Activation::Tanh),
            LayerKind::Dense { in_features: 8, out_features: 3 },
        ],
        0,
    )?;
    let track = [0usize, 1];
    for (name, lr) in [(OptimizerName::AdaFisher, 1e-2), (OptimizerName::Adam, 1e-2), (OptimizerName::Sgd, 5e-2)] {
        let (mut w, mut loss) = (Vec::new(), Vec::new());
        let s = settings(name, lr, 40, 16, 0);
        let res = train(init.clone(), &ds, None, &s, |ev| {
            if let Event::Epoch { row, net, .. } = ev {
                let p = net.params_flat();
                w.push([p[track[0]], p[track[1]]]);
                loss.push(row.loss);
            }
            Ok(())
        })?;
        let export = landscape_export(w, loss)?;
        let path = out.join(format!("{}.json", name.as_str()));
        let json = serde_json::to_string_pretty(&export)?;
        std::fs::write(&path, json).map_err(|e| kronfisher::Error::io(&path, e))?;
        println!(
            "{:10} final train loss {:.4}, tracked weights {:.3?} (epoch 1) -> {:.3?}, wrote {}",
            name.as_str(),
            res.rows.last().expect("40 epochs").loss,
            export.w[0],
            export.w[export.w.len() - 1],
            path.display()
        );
    }
    Ok(())
}
