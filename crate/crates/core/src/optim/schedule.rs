use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning-rate schedule, evaluated once per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Schedule {
    Constant {},
    #[serde(rename = "step")]
    StepLr { period: u64, factor: f64 },
    Cosine { t_max: u64, alpha_min: f64 },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Constant {}
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Schedule::Constant {} => Ok(()),
            Schedule::StepLr { period, factor } => {
                if period == 0 || !(factor > 0.0) {
                    return Err(Error::invalid("step schedule needs period >= 1 and factor > 0"));
                }
                Ok(())
            }
            Schedule::Cosine { t_max, alpha_min } => {
                if t_max == 0 || !(alpha_min > 0.0) {
                    return Err(Error::invalid("cosine schedule needs t_max >= 1 and alpha_min > 0"));
                }
                Ok(())
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Schedule::Constant {} => "constant",
            Schedule::StepLr { .. } => "step",
            Schedule::Cosine { .. } => "cosine",
        }
    }

    /// Learning rate at step `t` for base rate `alpha0`. Cosine holds
    /// `alpha_min` once `t` passes `t_max`.
    pub fn lr(&self, t: u64, alpha0: f64) -> f64 {
        match *self {
            Schedule::Constant {} => alpha0,
            Schedule::StepLr { period, factor } => {
                let k = (t / period).min(i32::MAX as u64) as i32;
                alpha0 * factor.powi(k)
            }
            Schedule::Cosine { t_max, alpha_min } => {
                if t >= t_max {
                    return alpha_min;
                }
                let phase = std::f64::consts::PI * t as f64 / t_max as f64;
                alpha_min + 0.5 * (alpha0 - alpha_min) * (1.0 + phase.cos())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        let s = Schedule::Cosine { t_max: 100, alpha_min: 1e-5 };
        assert_eq!(s.lr(0, 0.1), 0.1);
        assert_eq!(s.lr(100, 0.1), 1e-5);
        assert_eq!(s.lr(250, 0.1), 1e-5);
        assert!((s.lr(50, 0.1) - (0.1 + 1e-5) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn step_decay() {
        let s = Schedule::StepLr { period: 10, factor: 0.1 };
        assert!((s.lr(25, 2.0) - 0.02).abs() < 1e-15);
        assert_eq!(s.lr(9, 2.0), 2.0);
    }

    #[test]
    fn constant_and_validation() {
        assert_eq!(Schedule::Constant {}.lr(1_000_000, 0.3), 0.3);
        assert!(Schedule::StepLr { period: 0, factor: 0.5 }.validate().is_err());
        assert!(Schedule::Cosine { t_max: 5, alpha_min: 0.0 }.validate().is_err());
    }

    #[test]
    fn json_form() {
        let s: Schedule = serde_json::from_str(r#"{"kind":"cosine","t_max":10,"alpha_min":1e-6}"#).unwrap();
        assert_eq!(s, Schedule::Cosine { t_max: 10, alpha_min: 1e-6 });
        let s: Schedule = serde_json::from_str(r#"{"kind":"step","period":3,"factor":0.5}"#).unwrap();
        assert_eq!(s.name(), "step");
        assert!(serde_json::from_str::<Schedule>(r#"{"kind":"constant","x":1}"#).is_err());
    }

    proptest::proptest! {
        #[test]
        fn positive_within_horizon(t in 0u64..1000, a0 in 1e-6f64..1.0, amin in 1e-9f64..1e-6) {
            let s = Schedule::Cosine { t_max: 1000, alpha_min: amin };
            proptest::prop_assert!(s.lr(t, a0) > 0.0);
        }
    }
}
