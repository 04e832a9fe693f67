use crate::error::{Error, Result};
use crate::kfactor::{assemble_efim_diag, minmax_normalize, KfState, DEFAULT_GAMMA, DEFAULT_LAMBDA};
use crate::nn::LayerKind;
use crate::tensor::{sym_eig, Tensor};

/// Diagonal preconditioner used by [`convex_preconditioned_descent`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Preconditioner {
    /// The damped diagonal EFIM. `theta` is treated as the weight of a
    /// dense layer with a single constant input, so `H = [1]` and `S` is the
    /// EMA of the squared gradient coordinates.
    Efim { gamma: f64, lambda: f64 },
    /// Plain gradient descent.
    Identity,
}

impl Default for Preconditioner {
    fn default() -> Self {
        Preconditioner::Efim {
            gamma: DEFAULT_GAMMA,
            lambda: DEFAULT_LAMBDA,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ConvexTrace {
    /// `theta_0 ..= theta_k`.
    pub thetas: Vec<Vec<f64>>,
    /// `J(theta_i) - J*` for `i = 0 ..= k`.
    pub suboptimality: Vec<f64>,
    pub alpha: f64,
    /// `||theta_0 - theta*||^2`.
    pub initial_dist_sq: f64,
}

impl ConvexTrace {
    /// `||theta_0 - theta*||^2 / (2 alpha k)` for `k >= 1`.
    pub fn bound(&self, k: usize) -> f64 {
        self.initial_dist_sq / (2.0 * self.alpha * k as f64)
    }

    /// Largest `(J(theta_k) - J*) / bound(k)` over `k >= 1`; at most 1 means
    /// the bound held at every step. NaN/inf iterates give `inf`.
    pub fn worst_bound_ratio(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for k in 1..self.suboptimality.len() {
            let gap = self.suboptimality[k];
            if !gap.is_finite() {
                return f64::INFINITY;
            }
            let b = self.bound(k);
            let r = if b > 0.0 {
                gap / b
            } else if gap > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            worst = worst.max(r);
        }
        worst
    }

    pub fn is_monotone(&self) -> bool {
        self.suboptimality.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Largest eigenvalue of a symmetric matrix, i.e. the gradient Lipschitz
/// constant of the quadratic it defines.
pub fn lipschitz_constant(a: &Tensor) -> Result<f64> {
    Ok(sym_eig(a, 1e-14)?.values[0])
}

/// Preconditioned descent on `J(theta) = 1/2 (theta - theta*)^T A (theta - theta*)`.
///
/// Runs `theta <- theta - alpha * F^{-1} grad J` for `k` steps and records the
/// suboptimality after every step.
pub fn convex_preconditioned_descent(
    a: &Tensor,
    theta_star: &[f64],
    theta0: &[f64],
    alpha: f64,
    k: usize,
    precond: Preconditioner,
) -> Result<ConvexTrace> {
    let d = theta_star.len();
    if a.shape() != [d, d] || theta0.len() != d {
        return Err(Error::dim("A, theta* and theta0 sizes disagree"));
    }
    let eig = sym_eig(a, 1e-14)?;
    if eig.values[d - 1] <= 0.0 {
        return Err(Error::invalid("A is not positive definite"));
    }
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha must be positive"));
    }
    let kind = LayerKind::Dense {
        in_features: 0,
        out_features: d,
    };
    let mut kf = match precond {
        Preconditioner::Efim { gamma, .. } => Some(KfState::new(1, d, gamma)?),
        Preconditioner::Identity => None,
    };

    let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        let diff: Vec<f64> = theta.iter().zip(theta_star).map(|(t, s)| t - s).collect();
        let mut grad = vec![0.0; d];
        let mut j = 0.0;
        for (i, gi) in grad.iter_mut().enumerate() {
            let row = a.row(i);
            *gi = row.iter().zip(&diff).map(|(r, x)| r * x).sum();
            j += 0.5 * diff[i] * *gi;
        }
        (j, grad)
    };

    let mut theta = theta0.to_vec();
    let (j0, _) = objective(&theta);
    let mut trace = ConvexTrace {
        thetas: vec![theta.clone()],
        suboptimality: vec![j0],
        alpha,
        initial_dist_sq: theta0.iter().zip(theta_star).map(|(t, s)| (t - s).powi(2)).sum(),
    };
    for _ in 0..k {
        let (_, grad) = objective(&theta);
        let denom: Vec<f64> = match (&mut kf, precond) {
            (Some(st), Preconditioner::Efim { lambda, .. }) => {
                let sq: Vec<f64> = grad.iter().map(|g| g * g).collect();
                st.ema_update(&[1.0], &sq)?;
                let efim = assemble_efim_diag(&minmax_normalize(&st.h), &minmax_normalize(&st.s), lambda, &kind)?;
                efim.blocks[0].data().to_vec()
            }
            _ => vec![1.0; d],
        };
        for ((t, g), f) in theta.iter_mut().zip(&grad).zip(&denom) {
            *t -= alpha * g / f;
        }
        let (j, _) = objective(&theta);
        trace.thetas.push(theta.clone());
        trace.suboptimality.push(j);
    }
    Ok(trace)
}
