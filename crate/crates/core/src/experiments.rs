//! Desk-scale experiment setups shared by the examples and the acceptance
//! suite.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::config::Splits;
use crate::data::{load_csv, load_mnist_idx, Dataset};
use crate::diagnostics::{fisher_mae, kf_fisher_diag, true_fisher_diag_mc};
use crate::error::{Error, Result};
use crate::kfactor::layer_kf_full;
use crate::nn::{Activation, LayerKind, Network};
use crate::optim::{OptimizerName, OptimizerSpec, Schedule};
use crate::tensor::{SeededRng, Tensor};
use crate::train::{train, Event, TrainOutcome, TrainSettings};

/// Learning-rate grid: 1, 3, 5, 9 per decade.
pub const LR_GRID: [f64; 12] = [1e-4, 3e-4, 5e-4, 9e-4, 1e-3, 3e-3, 5e-3, 9e-3, 1e-2, 3e-2, 5e-2, 9e-2];

/// Bundled fixtures.
pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// The 2,000 / 500 MNIST subset.
pub fn mnist_subset() -> Result<Splits> {
    let d = data_dir().join("mnist");
    Ok(Splits {
        train: load_mnist_idx(&d.join("train-images-idx3-ubyte"), &d.join("train-labels-idx1-ubyte"), None)?,
        test: Some(load_mnist_idx(&d.join("t10k-images-idx3-ubyte"), &d.join("t10k-labels-idx1-ubyte"), None)?),
    })
}

pub fn iris() -> Result<Dataset> {
    load_csv(&data_dir().join("iris.csv"), "species")
}

pub fn mlp_784_64_10(seed: u64) -> Result<Network> {
    Network::new(
        &[1, 28, 28],
        vec![
            LayerKind::Dense { in_features: 784, out_features: 64 },
            LayerKind::Activation(Activation::Relu),
            LayerKind::Dense { in_features: 64, out_features: 10 },
        ],
        seed,
    )
}

/// Two stride-2 5x5 convolutions and two dense layers on 28x28 inputs.
pub fn toy_conv(seed: u64) -> Result<Network> {
    Network::new(
        &[1, 28, 28],
        vec![
            LayerKind::Conv2d { c_in: 1, c_out: 4, k_h: 5, k_w: 5, stride: 2, padding: 0 },
            LayerKind::Activation(Activation::Relu),
            LayerKind::Conv2d { c_in: 4, c_out: 8, k_h: 5, k_w: 5, stride: 2, padding: 0 },
            LayerKind::Activation(Activation::Relu),
            LayerKind::Dense { in_features: 128, out_features: 32 },
            LayerKind::Activation(Activation::Relu),
            LayerKind::Dense { in_features: 32, out_features: 10 },
        ],
        seed,
    )
}

/// Index of the first dense layer of [`toy_conv`].
pub const TOY_CONV_DENSE: usize = 4;

pub fn settings(name: OptimizerName, lr: f64, epochs: usize, batch_size: usize, seed: u64) -> TrainSettings {
    let mut optimizer = OptimizerSpec::named(name);
    optimizer.lr = Some(lr);
    TrainSettings {
        epochs,
        batch_size,
        seed,
        workers: 1,
        schedule: Schedule::default(),
        optimizer,
    }
}

/// Splits off the last `n_val` samples of `ds` for validation.
pub fn holdout(ds: &Dataset, n_val: usize) -> Result<(Dataset, Dataset)> {
    if n_val == 0 || n_val >= ds.len() {
        return Err(Error::invalid("holdout must leave both parts non-empty"));
    }
    let cut = ds.len() - n_val;
    let pick = |idx: Vec<usize>| -> Result<Dataset> {
        let (x, y) = ds.gather(&idx)?;
        Dataset::new(x, y, ds.class_count, ds.name.clone())
    };
    Ok((pick((0..cut).collect())?, pick((cut..ds.len()).collect())?))
}

#[derive(Clone, Debug, Serialize)]
pub struct LrTrial {
    pub lr: f64,
    pub val_accuracy: f64,
}

/// Picks the grid learning rate with the best mean final validation accuracy
/// over `seeds`. Earlier (smaller) rates win ties.
pub fn tune_lr(
    name: OptimizerName,
    grid: &[f64],
    train_set: &Dataset,
    val_set: &Dataset,
    seeds: &[u64],
    epochs: usize,
    batch_size: usize,
    model: impl Fn(u64) -> Result<Network>,
) -> Result<(f64, Vec<LrTrial>)> {
    let mut trials = Vec::new();
    for &lr in grid {
        let mut acc = 0.0;
        for &seed in seeds {
            let s = settings(name, lr, epochs, batch_size, seed);
            acc += match train(model(seed)?, train_set, Some(val_set), &s, |_| Ok(())) {
                Ok(out) => out.rows.last().map_or(0.0, |r| r.accuracy),
                // A diverged run scores zero.
                Err(Error::NonFinite(_)) => 0.0,
                Err(e) => return Err(e),
            };
        }
        trials.push(LrTrial {
            lr,
            val_accuracy: acc / seeds.len() as f64,
        });
    }
    let best = trials
        .iter()
        .fold(None::<&LrTrial>, |b, t| match b {
            Some(b) if b.val_accuracy >= t.val_accuracy => Some(b),
            _ => Some(t),
        })
        .ok_or_else(|| Error::invalid("empty learning-rate grid"))?;
    Ok((best.lr, trials))
}

#[derive(Clone, Debug)]
pub struct FisherMaeRun {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training inputs used by the Monte-Carlo estimate.
    pub inputs: usize,
    pub samples: usize,
    /// Epoch (0-based) after which the full dense-layer activation factor is kept.
    pub keep_full_factor_at: Option<usize>,
}

impl Default for FisherMaeRun {
    fn default() -> Self {
        Self {
            seed: 1,
            epochs: 50,
            batch_size: 50,
            inputs: 100,
            samples: 10_000,
            keep_full_factor_at: Some(19),
        }
    }
}

pub struct FisherMaeTrace {
    pub mae: Vec<f64>,
    /// Mean of the Monte-Carlo Fisher diagonal each epoch, for scale.
    pub true_mean: Vec<f64>,
    pub full_factor: Option<Tensor>,
    pub outcome: TrainOutcome,
}

/// Trains [`toy_conv`] with AdaFisher on the MNIST subset and records the
/// per-epoch MAE between the Monte-Carlo true Fisher diagonal and the
/// Kronecker-factored one.
pub fn fisher_mae_run(run: &FisherMaeRun, splits: &Splits) -> Result<FisherMaeTrace> {
    let idx: Vec<usize> = (0..run.inputs.min(splits.train.len())).collect();
    let (inputs, _) = splits.train.gather(&idx)?;
    let mut rng = SeededRng::new(run.seed).fork(0xF15E);
    let mut mae = Vec::new();
    let mut true_mean = Vec::new();
    let mut full = None;
    let s = settings(OptimizerName::AdaFisher, 1e-3, run.epochs, run.batch_size, run.seed);
    let outcome = train(toy_conv(run.seed)?, &splits.train, splits.test.as_ref(), &s, |ev| match ev {
        Event::Step { epoch, net, .. } => {
            if run.keep_full_factor_at == Some(epoch) {
                let cap = net.layers()[TOY_CONV_DENSE]
                    .capture()
                    .ok_or_else(|| Error::state("dense layer has no capture after a step"))?;
                full = Some(layer_kf_full(cap)?.0);
            }
            Ok(())
        }
        Event::Epoch { net, opt, .. } => {
            let af = opt.as_adafisher().ok_or_else(|| Error::state("expected AdaFisher"))?;
            let truth = true_fisher_diag_mc(net, &inputs, run.samples, &mut rng)?;
            let approx = kf_fisher_diag(net, af.kf_states())?;
            mae.push(fisher_mae(&truth, &approx)?);
            true_mean.push(truth.iter().sum::<f64>() / truth.len() as f64);
            Ok(())
        }
    })?;
    Ok(FisherMaeTrace {
        mae,
        true_mean,
        full_factor: full,
        outcome,
    })
}

/// Committed output of the Fisher-MAE pilot run.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaePilot {
    pub provenance: String,
    pub seed: u64,
    pub epochs: usize,
    pub inputs: usize,
    pub samples: usize,
    /// Relative error of the Monte-Carlo estimator on the analytic
    /// Bernoulli case at the same sample count.
    pub mc_rel_err: f64,
    pub mae: Vec<f64>,
    pub bound: f64,
}

pub fn pilot_fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/a5_pilot.json")
}

/// Relative error of [`true_fisher_diag_mc`] against `p(1-p)x^2` for a
/// one-weight logistic model with logits `[x, 0]`.
///
/// `p = 1/2` would be useless here: both classes then give the same squared
/// gradient and every draw is exact.
pub fn bernoulli_mc_rel_err(samples: usize, seed: u64) -> Result<f64> {
    let mut net = Network::new(&[1], vec![LayerKind::Dense { in_features: 1, out_features: 2 }], 0)?;
    net.set_params_flat(&[1.0, 0.0, 0.0, 0.0])?;
    let x = 1.5;
    let inputs = Tensor::from_rows(&[vec![x]])?;
    let f = true_fisher_diag_mc(&mut net, &inputs, samples, &mut SeededRng::new(seed))?;
    let p = 1.0 / (1.0 + (-x).exp());
    let exact = p * (1.0 - p) * x * x;
    Ok((f[0] - exact).abs() / exact)
}
