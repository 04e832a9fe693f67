use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{load_csv, load_mnist_idx, Dataset};
use crate::diagnostics::pca2;
use crate::error::{Error, Result};
use crate::nn::{Activation, LayerKind, Network};
use crate::optim::{OptimizerName, OptimizerSpec, Schedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Mnist {
        train_images: PathBuf,
        train_labels: PathBuf,
        #[serde(default)]
        test_images: Option<PathBuf>,
        #[serde(default)]
        test_labels: Option<PathBuf>,
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Csv {
        path: PathBuf,
        label_column: String,
        /// Project features onto their first two principal components.
        #[serde(default)]
        pca: bool,
    },
}

/// Layer description with input sizes inferred from the previous layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LayerSpec {
    Dense {
        out: usize,
    },
    Conv2d {
        out_channels: usize,
        kernel: usize,
        #[serde(default = "one")]
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    BatchNorm {},
    LayerNorm {},
    Relu {},
    Tanh {},
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn layer_kinds(&self, input_shape: &[usize]) -> Result<Vec<LayerKind>> {
        let mut shape = input_shape.to_vec();
        let mut kinds = Vec::with_capacity(self.layers.len());
        for spec in &self.layers {
            let flat: usize = shape.iter().product();
            let kind = match *spec {
                LayerSpec::Dense { out } => LayerKind::Dense {
                    in_features: flat,
                    out_features: out,
                },
                LayerSpec::Conv2d {
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => LayerKind::Conv2d {
                    c_in: shape[0],
                    c_out: out_channels,
                    k_h: kernel,
                    k_w: kernel,
                    stride,
                    padding,
                },
                LayerSpec::BatchNorm {} => LayerKind::BatchNorm { channels: shape[0] },
                LayerSpec::LayerNorm {} => LayerKind::LayerNorm { features: flat },
                LayerSpec::Relu {} => LayerKind::Activation(Activation::Relu),
                LayerSpec::Tanh {} => LayerKind::Activation(Activation::Tanh),
            };
            shape = kind.output_shape(&shape)?;
            kinds.push(kind);
        }
        Ok(kinds)
    }

    /// Network for `input_shape`, checked to emit `classes` logits.
    pub fn build(&self, input_shape: &[usize], classes: usize, seed: u64) -> Result<Network> {
        let net = Network::new(input_shape, self.layer_kinds(input_shape)?, seed)?;
        if net.class_count() != classes {
            return Err(Error::invalid(format!(
                "model emits {} logits for a {classes}-class dataset",
                net.class_count()
            )));
        }
        Ok(net)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherMaeSpec {
    /// Training inputs fed to the Monte-Carlo estimate.
    pub inputs: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub every: u64,
    pub bins: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoggingSpec {
    /// Write factor snapshots every this many steps.
    #[serde(default)]
    pub snapshot_every: Option<u64>,
    #[serde(default)]
    pub fisher_mae: Option<FisherMaeSpec>,
    #[serde(default)]
    pub fim_hist: Option<HistogramSpec>,
}

fn default_optimizer() -> OptimizerSpec {
    OptimizerSpec::named(OptimizerName::AdaFisher)
}

fn default_workers() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerSpec,
    /// Optimizers for `compare`.
    #[serde(default)]
    pub optimizers: Vec<OptimizerSpec>,
    #[serde(default)]
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default)]
    pub logging: LoggingSpec,
    /// Flat parameter indices recorded each epoch by `landscape`.
    #[serde(default)]
    pub track: Option<Vec<usize>>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub test: Option<Dataset>,
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetSpec::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                fix(train_images);
                fix(train_labels);
                test_images.iter_mut().for_each(fix);
                test_labels.iter_mut().for_each(fix);
            }
            DatasetSpec::Csv { path, .. } => fix(path),
        }
        if let Some(out) = &mut self.out_dir {
            fix(out);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if self.workers == 0 {
            return Err(Error::invalid("workers must be at least 1"));
        }
        if self.model.layers.is_empty() {
            return Err(Error::invalid("model has no layers"));
        }
        self.optimizer.validate()?;
        for o in &self.optimizers {
            o.validate()?;
        }
        self.schedule.validate()?;
        if let DatasetSpec::Mnist {
            test_images,
            test_labels,
            ..
        } = &self.dataset
        {
            if test_images.is_some() != test_labels.is_some() {
                return Err(Error::invalid("test_images and test_labels go together"));
            }
        }
        let log = &self.logging;
        if log.snapshot_every == Some(0) {
            return Err(Error::invalid("snapshot_every must be positive"));
        }
        if let Some(h) = &log.fim_hist {
            if h.every == 0 || h.bins < 2 {
                return Err(Error::invalid("fim_hist needs every >= 1 and bins >= 2"));
            }
        }
        if let Some(m) = &log.fisher_mae {
            if m.inputs == 0 || m.samples == 0 {
                return Err(Error::invalid("fisher_mae needs positive inputs and samples"));
            }
        }
        Ok(())
    }

    pub fn load_data(&self) -> Result<Splits> {
        match &self.dataset {
            DatasetSpec::Mnist {
                train_images,
                train_labels,
                test_images,
                test_labels,
                train_limit,
                test_limit,
            } => {
                let train = load_mnist_idx(train_images, train_labels, *train_limit)?;
                let test = match (test_images, test_labels) {
                    (Some(i), Some(l)) => Some(load_mnist_idx(i, l, *test_limit)?),
                    _ => None,
                };
                Ok(Splits { train, test })
            }
            DatasetSpec::Csv {
                path,
                label_column,
                pca,
            } => {
                let mut train = load_csv(path, label_column)?;
                if *pca {
                    let reduced = pca2(&train.features)?.projected;
                    train = train.with_features(reduced)?;
                }
                Ok(Splits { train, test: None })
            }
        }
    }
}
