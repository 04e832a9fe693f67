//! Update rules and learning-rate schedules.

mod adafisher;
mod baselines;
mod convex;
mod schedule;

pub use adafisher::{AdaFisher, AdaFisherConfig, Variant, DEFAULT_BETA, DEFAULT_LR};
pub use baselines::{Adam, SgdMomentum, ADAM_EPSILON};
pub use convex::{convex_preconditioned_descent, lipschitz_constant, ConvexTrace, Preconditioner};
pub use schedule::Schedule;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kfactor::{DEFAULT_GAMMA, DEFAULT_LAMBDA};
use crate::nn::Network;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerName {
    AdaFisher,
    AdaFisherW,
    Adam,
    AdamW,
    Sgd,
}

impl OptimizerName {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerName::AdaFisher => "adafisher",
            OptimizerName::AdaFisherW => "adafisherw",
            OptimizerName::Adam => "adam",
            OptimizerName::AdamW => "adamw",
            OptimizerName::Sgd => "sgd",
        }
    }

    /// Learning rate used when a config leaves it out.
    pub fn default_lr(self) -> f64 {
        match self {
            OptimizerName::AdaFisher | OptimizerName::AdaFisherW | OptimizerName::Adam => 1e-3,
            OptimizerName::AdamW => 1e-4,
            OptimizerName::Sgd => 0.1,
        }
    }
}

impl std::str::FromStr for OptimizerName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adafisher" => Ok(OptimizerName::AdaFisher),
            "adafisherw" => Ok(OptimizerName::AdaFisherW),
            "adam" => Ok(OptimizerName::Adam),
            "adamw" => Ok(OptimizerName::AdamW),
            "sgd" => Ok(OptimizerName::Sgd),
            other => Err(Error::invalid(format!("unknown optimizer '{other}'"))),
        }
    }
}

impl std::fmt::Display for OptimizerName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Optimizer hyperparameters. Missing fields take per-optimizer defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub name: OptimizerName,
    #[serde(default)]
    pub lr: Option<f64>,
    /// First-moment decay (AdaFisher, Adam beta1) or momentum (SGD).
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub beta2: Option<f64>,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    /// Weight decay (AdaFisherW kappa, AdamW decoupled decay).
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub epsilon: Option<f64>,
}

impl OptimizerSpec {
    pub fn named(name: OptimizerName) -> Self {
        Self {
            name,
            lr: None,
            beta: None,
            beta2: None,
            gamma: None,
            lambda: None,
            kappa: None,
            epsilon: None,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.name.default_lr())
    }

    pub fn validate(&self) -> Result<()> {
        let lr = self.lr();
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr} must be positive")));
        }
        for (what, v) in [("beta", self.beta), ("beta2", self.beta2)] {
            if let Some(v) = v {
                if !(0.0..1.0).contains(&v) {
                    return Err(Error::invalid(format!("{what} {v} outside [0, 1)")));
                }
            }
        }
        if let Some(g) = self.gamma {
            if !(g > 0.0 && g <= 1.0) {
                return Err(Error::invalid(format!("gamma {g} outside (0, 1]")));
            }
        }
        for (what, v) in [("lambda", self.lambda), ("epsilon", self.epsilon)] {
            if let Some(v) = v {
                if !(v > 0.0) {
                    return Err(Error::invalid(format!("{what} must be positive")));
                }
            }
        }
        if let Some(k) = self.kappa {
            if !(k >= 0.0) {
                return Err(Error::invalid("kappa must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Any of the supported optimizers behind one stepping interface.
#[derive(Clone, Debug)]
pub enum Optimizer {
    AdaFisher(AdaFisher),
    Adam(Adam),
    Sgd(SgdMomentum),
}

impl Optimizer {
    pub fn build(spec: &OptimizerSpec, net: &Network) -> Result<Self> {
        spec.validate()?;
        let beta = spec.beta;
        Ok(match spec.name {
            OptimizerName::AdaFisher | OptimizerName::AdaFisherW => {
                let cfg = AdaFisherConfig {
                    beta: beta.unwrap_or(DEFAULT_BETA),
                    gamma: spec.gamma.unwrap_or(DEFAULT_GAMMA),
                    lambda: spec.lambda.unwrap_or(DEFAULT_LAMBDA),
                    kappa: spec.kappa.unwrap_or(0.0),
                    variant: if spec.name == OptimizerName::AdaFisherW {
                        Variant::W
                    } else {
                        Variant::Plain
                    },
                };
                Optimizer::AdaFisher(AdaFisher::new(net, cfg)?)
            }
            OptimizerName::Adam | OptimizerName::AdamW => {
                let wd = if spec.name == OptimizerName::AdamW {
                    spec.kappa.unwrap_or(1e-2)
                } else {
                    0.0
                };
                let mut adam = Adam::new(net, beta.unwrap_or(0.9), spec.beta2.unwrap_or(0.999), wd)?;
                if let Some(eps) = spec.epsilon {
                    adam.epsilon = eps;
                }
                Optimizer::Adam(adam)
            }
            OptimizerName::Sgd => Optimizer::Sgd(SgdMomentum::new(net, beta.unwrap_or(0.9))?),
        })
    }

    /// Takes one step from the network's current gradients (and, for
    /// AdaFisher, its captured factors).
    pub fn step(&mut self, net: &mut Network, lr: f64) -> Result<()> {
        match self {
            Optimizer::AdaFisher(o) => o.step(net, lr),
            Optimizer::Adam(o) => o.step(net, lr),
            Optimizer::Sgd(o) => o.step(net, lr),
        }
    }

    pub fn as_adafisher(&self) -> Option<&AdaFisher> {
        match self {
            Optimizer::AdaFisher(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_adafisher_mut(&mut self) -> Option<&mut AdaFisher> {
        match self {
            Optimizer::AdaFisher(o) => Some(o),
            _ => None,
        }
    }

    pub fn as_adam(&self) -> Option<&Adam> {
        match self {
            Optimizer::Adam(o) => Some(o),
            _ => None,
        }
    }
}
