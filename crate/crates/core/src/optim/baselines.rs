use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

pub const ADAM_EPSILON: f64 = 1e-8;

fn zeros_like(net: &Network) -> Vec<Tensor> {
    net.layers()
        .iter()
        .flat_map(|l| l.params())
        .map(|p| Tensor::zeros(p.shape()))
        .collect()
}

/// Calls `f(param, grad, state_index)` for every parameter block in order.
fn for_each_block(
    net: &mut Network,
    expected: usize,
    mut f: impl FnMut(&mut Tensor, &Tensor, usize),
) -> Result<()> {
    let mut idx = 0;
    for layer in net.layers_mut() {
        let (params, grads) = layer.params_and_grads_mut();
        for (p, g) in params.iter_mut().zip(grads) {
            if idx >= expected {
                return Err(Error::dim("network has more parameter blocks than optimizer state"));
            }
            f(p, g, idx);
            p.ensure_finite("optimizer update")?;
            idx += 1;
        }
    }
    if idx != expected {
        return Err(Error::dim("network has fewer parameter blocks than optimizer state"));
    }
    Ok(())
}

/// Adam, optionally with decoupled weight decay (AdamW).
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled decay `theta <- theta * (1 - lr * wd)`; zero gives plain Adam.
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(net: &Network, beta1: f64, beta2: f64, weight_decay: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        Ok(Self {
            beta1,
            beta2,
            epsilon: ADAM_EPSILON,
            weight_decay,
            m: zeros_like(net),
            v: zeros_like(net),
            t: 0,
        })
    }

    /// Bias-corrected second moments, one tensor per parameter block.
    pub fn v_hat(&self) -> Vec<Tensor> {
        let c = 1.0 - self.beta2.powi(self.t as i32);
        self.v
            .iter()
            .map(|v| if self.t == 0 { v.clone() } else { v.scale(1.0 / c) })
            .collect()
    }

    pub fn step(&mut self, net: &mut Network, lr: f64) -> Result<()> {
        self.t += 1;
        let (b1, b2, eps, wd) = (self.beta1, self.beta2, self.epsilon, self.weight_decay);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let (ms, vs) = (&mut self.m, &mut self.v);
        for_each_block(net, ms.len(), |p, g, i| {
            for (((pv, &gv), mv), vv) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(ms[i].data_mut())
                .zip(vs[i].data_mut())
            {
                if wd != 0.0 {
                    *pv *= 1.0 - lr * wd;
                }
                *mv = b1 * *mv + (1.0 - b1) * gv;
                *vv = b2 * *vv + (1.0 - b2) * gv * gv;
                *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + eps);
            }
        })
    }
}

/// Heavy-ball SGD: `v <- beta v + g`, `theta <- theta - lr v`.
#[derive(Clone, Debug)]
pub struct SgdMomentum {
    pub momentum: f64,
    velocity: Vec<Tensor>,
}

impl SgdMomentum {
    pub fn new(net: &Network, momentum: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::invalid("momentum must lie in [0, 1)"));
        }
        Ok(Self {
            momentum,
            velocity: zeros_like(net),
        })
    }

    pub fn step(&mut self, net: &mut Network, lr: f64) -> Result<()> {
        let beta = self.momentum;
        let vel = &mut self.velocity;
        for_each_block(net, vel.len(), |p, g, i| {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(vel[i].data_mut()) {
                *vv = beta * *vv + gv;
                *pv -= lr * *vv;
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::LayerKind;

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
    fn adam_three_steps_hand_unrolled() {
        let (b1, b2, lr) = (0.9, 0.999, 0.01);
        let mut net = scalar_net(0.5);
        let mut opt = Adam::new(&net, b1, b2, 0.0).unwrap();
        let (mut m, mut v, mut th) = (0.0f64, 0.0f64, 0.5f64);
        for (k, g) in [1.0, -1.0, 2.0].into_iter().enumerate() {
            set_grad(&mut net, g);
            opt.step(&mut net, lr).unwrap();
            let t = k as i32 + 1;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            th -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + 1e-8);
        }
        assert!((net.params_flat()[1] - th).abs() <= 1e-12);
    }

    #[test]
    fn adam_constant_gradient_steps_approach_lr() {
        let mut net = scalar_net(0.0);
        let mut opt = Adam::new(&net, 0.9, 0.999, 0.0).unwrap();
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..5000 {
            set_grad(&mut net, 3.7);
            opt.step(&mut net, 1e-3).unwrap();
            let now = net.params_flat()[1];
            last_step = prev - now;
            prev = now;
        }
        assert!((last_step - 1e-3).abs() < 1e-9);
    }

    #[test]
    fn adamw_decays_multiplicatively() {
        let mut a = scalar_net(2.0);
        let mut b = scalar_net(2.0);
        let mut plain = Adam::new(&a, 0.9, 0.999, 0.0).unwrap();
        let mut decayed = Adam::new(&b, 0.9, 0.999, 0.1).unwrap();
        set_grad(&mut a, 0.5);
        set_grad(&mut b, 0.5);
        plain.step(&mut a, 0.01).unwrap();
        decayed.step(&mut b, 0.01).unwrap();
        let expect = a.params_flat()[1] - 2.0 * 0.01 * 0.1;
        assert!((b.params_flat()[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn zero_momentum_is_gradient_descent() {
        let mut net = scalar_net(1.0);
        let mut opt = SgdMomentum::new(&net, 0.0).unwrap();
        for g in [0.5, -2.0] {
            let before = net.params_flat()[1];
            set_grad(&mut net, g);
            opt.step(&mut net, 0.1).unwrap();
            assert_eq!(net.params_flat()[1], before - 0.1 * g);
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut net = scalar_net(0.0);
        let mut opt = SgdMomentum::new(&net, 0.9).unwrap();
        set_grad(&mut net, 1.0);
        opt.step(&mut net, 1.0).unwrap();
        opt.step(&mut net, 1.0).unwrap();
        assert!((net.params_flat()[1] + 1.0 + 1.9).abs() < 1e-15);
    }

    #[test]
    fn mismatched_network_is_rejected() {
        let small = scalar_net(0.0);
        let mut big = Network::new(
            &[1],
            vec![
                LayerKind::Dense { in_features: 1, out_features: 1 },
                LayerKind::Dense { in_features: 1, out_features: 1 },
            ],
            0,
        )
        .unwrap();
        let mut opt = SgdMomentum::new(&small, 0.9).unwrap();
        assert!(matches!(opt.step(&mut big, 0.1), Err(Error::Dimension(_))));
    }
}
