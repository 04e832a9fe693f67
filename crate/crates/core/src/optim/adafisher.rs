use crate::error::{Error, Result};
use crate::kfactor::{collect_layer_factors, EfimDiag, KfState, DEFAULT_GAMMA, DEFAULT_LAMBDA};
use crate::nn::{LayerKind, Network};
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 1e-3;
pub const DEFAULT_BETA: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Plain,
    /// Adds `kappa * theta` to the preconditioned step.
    W,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaFisherConfig {
    pub beta: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub kappa: f64,
    pub variant: Variant,
}

impl Default for AdaFisherConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
            kappa: 0.0,
            variant: Variant::Plain,
        }
    }
}

/// AdaFisher / AdaFisherW.
///
/// Each step folds the batch's diagonal Kronecker factors into per-layer EMAs,
/// assembles the damped EFIM from their min-max normalised values, and moves
/// along the bias-corrected first moment divided by that EFIM.
///
/// The first moment is stored uncorrected; `m_hat = m / (1 - beta^t)` is
/// formed on the fly with `t` counted from 1.
#[derive(Clone, Debug)]
pub struct AdaFisher {
    cfg: AdaFisherConfig,
    kinds: Vec<LayerKind>,
    kf: Vec<Option<KfState>>,
    m: Vec<Vec<Tensor>>,
    t: u64,
}

impl AdaFisher {
    pub fn new(net: &Network, cfg: AdaFisherConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.beta) {
            return Err(Error::invalid(format!("beta {} outside [0, 1)", cfg.beta)));
        }
        if !(cfg.lambda > 0.0) {
            return Err(Error::invalid("damping lambda must be positive"));
        }
        let kinds: Vec<LayerKind> = net.layers().iter().map(|l| l.kind().clone()).collect();
        let kf = kinds
            .iter()
            .map(|k| KfState::for_layer(k, cfg.gamma))
            .collect::<Result<_>>()?;
        let m = net
            .layers()
            .iter()
            .map(|l| l.params().iter().map(|p| Tensor::zeros(p.shape())).collect())
            .collect();
        Ok(Self {
            cfg,
            kinds,
            kf,
            m,
            t: 0,
        })
    }

    pub fn config(&self) -> &AdaFisherConfig {
        &self.cfg
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn kf_states(&self) -> &[Option<KfState>] {
        &self.kf
    }

    /// Per-layer EFIMs from the current factor EMAs (empty for activations).
    pub fn efims(&self) -> Result<Vec<EfimDiag>> {
        self.kf
            .iter()
            .zip(&self.kinds)
            .map(|(st, kind)| match st {
                Some(st) => st.efim(kind, self.cfg.lambda),
                None => Ok(EfimDiag {
                    blocks: Vec::new(),
                    lambda: self.cfg.lambda,
                }),
            })
            .collect()
    }

    /// EMA update with fresh per-layer factors (`None` for parameter-free layers).
    pub fn update_curvature(&mut self, factors: &[Option<(Vec<f64>, Vec<f64>)>]) -> Result<()> {
        if factors.len() != self.kf.len() {
            return Err(Error::dim("one factor entry per layer expected"));
        }
        for (st, f) in self.kf.iter_mut().zip(factors) {
            match (st, f) {
                (Some(st), Some((h, s))) => st.ema_update(h, s)?,
                (None, None) => {}
                _ => return Err(Error::dim("factor presence does not match layer kinds")),
            }
        }
        Ok(())
    }

    /// First-moment update and parameter step using the network's current
    /// gradients and the current EFIMs.
    pub fn apply(&mut self, net: &mut Network, lr: f64) -> Result<()> {
        let efims = self.efims()?;
        self.t += 1;
        let beta = self.cfg.beta;
        let correction = 1.0 - beta.powi(self.t.min(i32::MAX as u64) as i32);
        let kappa = match self.cfg.variant {
            Variant::Plain => 0.0,
            Variant::W => self.cfg.kappa,
        };
        if net.layers().len() != self.m.len() {
            return Err(Error::dim("network does not match optimizer state"));
        }
        for ((layer, m_layer), efim) in net.layers_mut().iter_mut().zip(&mut self.m).zip(&efims) {
            let (params, grads) = layer.params_and_grads_mut();
            for (bi, (p, g)) in params.iter_mut().zip(grads).enumerate() {
                let f = efim
                    .blocks
                    .get(bi)
                    .ok_or_else(|| Error::dim("missing EFIM block"))?;
                let m = &mut m_layer[bi];
                if f.shape() != p.shape() || g.shape() != p.shape() {
                    return Err(Error::dim(format!(
                        "EFIM {:?} / gradient {:?} do not match parameter {:?}",
                        f.shape(),
                        g.shape(),
                        p.shape()
                    )));
                }
                for (((pv, &gv), mv), &fv) in p
                    .data_mut()
                    .iter_mut()
                    .zip(g.data())
                    .zip(m.data_mut())
                    .zip(f.data())
                {
                    *mv = beta * *mv + (1.0 - beta) * gv;
                    let m_hat = *mv / correction;
                    *pv -= lr * (m_hat / fv + kappa * *pv);
                }
                p.ensure_finite("adafisher update")?;
            }
        }
        Ok(())
    }

    /// Curvature update from the network's captures, then the parameter step.
    pub fn step(&mut self, net: &mut Network, lr: f64) -> Result<()> {
        let factors = collect_layer_factors(net)?;
        self.update_curvature(&factors)?;
        self.apply(net, lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kfactor::DEFAULT_LAMBDA;

    /// Scalar "network": a Dense(0 -> 1) whose only parameter is the bias.
    fn scalar_net(theta: f64) -> Network {
        let mut net = Network::new(
            &[1],
            vec![LayerKind::Dense {
                in_features: 1,
                out_features: 1,
            }],
            0,
        )
        .unwrap();
        net.set_params_flat(&[0.0, theta]).unwrap();
        net
    }

    fn set_grad(net: &mut Network, g: f64) {
        net.set_grads_flat(&[0.0, g]).unwrap();
    }

    #[test]
    fn first_step_collapses_bias_correction() {
        let mut net = scalar_net(0.0);
        let mut opt = AdaFisher::new(&net, AdaFisherConfig::default()).unwrap();
        set_grad(&mut net, 1.0);
        opt.apply(&mut net, DEFAULT_LR).unwrap();
        let theta = net.params_flat()[1];
        assert!((theta + DEFAULT_LR / (1.0 + DEFAULT_LAMBDA)).abs() < 1e-18);
    }

    #[test]
    fn zero_kappa_w_equals_plain_bitwise() {
        let run = |variant| {
            let mut net = scalar_net(0.3);
            let cfg = AdaFisherConfig {
                variant,
                kappa: 0.0,
                ..Default::default()
            };
            let mut opt = AdaFisher::new(&net, cfg).unwrap();
            for g in [1.0, -0.5, 2.0, 0.25] {
                set_grad(&mut net, g);
                opt.apply(&mut net, 0.01).unwrap();
            }
            net.params_flat()
        };
        let bits = |v: Vec<f64>| v.into_iter().map(f64::to_bits).collect::<Vec<_>>();
        assert_eq!(bits(run(Variant::Plain)), bits(run(Variant::W)));
    }

    #[test]
    fn three_scripted_steps_match_hand_unrolled_recurrence() {
        let (beta, lr, kappa, theta0) = (0.9, 0.05, 0.1, 0.7);
        let f = 1.0 + DEFAULT_LAMBDA; // identity factors
        let mut net = scalar_net(theta0);
        let cfg = AdaFisherConfig {
            variant: Variant::W,
            kappa,
            ..Default::default()
        };
        let mut opt = AdaFisher::new(&net, cfg).unwrap();
        for g in [1.0, -1.0, 2.0] {
            set_grad(&mut net, g);
            opt.apply(&mut net, lr).unwrap();
        }
        let m1 = 0.1;
        let th1 = theta0 - lr * ((m1 / (1.0 - beta)) / f + kappa * theta0);
        let m2 = beta * m1 + 0.1 * -1.0;
        let th2 = th1 - lr * ((m2 / (1.0 - beta * beta)) / f + kappa * th1);
        let m3 = beta * m2 + 0.1 * 2.0;
        let th3 = th2 - lr * ((m3 / (1.0 - beta * beta * beta)) / f + kappa * th2);
        assert!((net.params_flat()[1] - th3).abs() <= 1e-12);
    }

    #[test]
    fn frozen_identity_factors_reduce_to_bias_corrected_momentum() {
        // With factors at identity the EFIM is 1 + lambda everywhere; a tiny
        // lambda makes the step the bias-corrected momentum direction.
        let lambda = 1e-15;
        let mut net = scalar_net(0.2);
        let cfg = AdaFisherConfig {
            lambda,
            ..Default::default()
        };
        let mut opt = AdaFisher::new(&net, cfg).unwrap();
        let (mut m, mut theta) = (0.0, 0.2);
        for (t, g) in [0.3, -0.2, 0.9, 0.4, -1.1].into_iter().enumerate() {
            set_grad(&mut net, g);
            opt.apply(&mut net, 0.1).unwrap();
            m = 0.9 * m + 0.1 * g;
            theta -= 0.1 * m / (1.0 - 0.9f64.powi(t as i32 + 1));
            assert!((net.params_flat()[1] - theta).abs() <= 1e-12);
        }
    }

    proptest::proptest! {
        #[test]
        fn step_opposes_m_hat_and_respects_damping_floor(seed in 0u64..200, lr in 1e-4f64..0.1) {
            use crate::nn::Activation;
            use crate::tensor::{gaussian_fill, SeededRng};
            let mut net = Network::new(
                &[4],
                vec![
                    LayerKind::Dense { in_features: 4, out_features: 6 },
                    LayerKind::Activation(Activation::Tanh),
                    LayerKind::LayerNorm { features: 6 },
                    LayerKind::Dense { in_features: 6, out_features: 3 },
                ],
                seed,
            )
            .unwrap();
            let mut opt = AdaFisher::new(&net, AdaFisherConfig::default()).unwrap();
            let mut rng = SeededRng::new(seed);
            let mut m = vec![0.0; net.param_count()];
            for t in 1..=4 {
                let x = gaussian_fill(&mut rng, &[5, 4], 0.0, 1.0);
                net.forward_backward(&x, &[0, 1, 2, 0, 1]).unwrap();
                let before = net.params_flat();
                let g = net.grads_flat();
                opt.step(&mut net, lr).unwrap();
                let after = net.params_flat();
                let corr = 1.0 - 0.9f64.powi(t);
                let mut m_hat_max: f64 = 0.0;
                let mut step_max: f64 = 0.0;
                for i in 0..m.len() {
                    m[i] = 0.9 * m[i] + 0.1 * g[i];
                    let m_hat = m[i] / corr;
                    let delta = after[i] - before[i];
                    proptest::prop_assert!(delta * m_hat <= 0.0);
                    m_hat_max = m_hat_max.max(m_hat.abs());
                    step_max = step_max.max(delta.abs());
                }
                proptest::prop_assert!(step_max <= lr * m_hat_max / DEFAULT_LAMBDA * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn rejects_bad_hyperparameters() {
        let net = scalar_net(0.0);
        let bad_beta = AdaFisherConfig { beta: 1.0, ..Default::default() };
        assert!(AdaFisher::new(&net, bad_beta).is_err());
        let bad_lambda = AdaFisherConfig { lambda: 0.0, ..Default::default() };
        assert!(AdaFisher::new(&net, bad_lambda).is_err());
    }
}
