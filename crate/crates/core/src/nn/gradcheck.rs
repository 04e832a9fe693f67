use super::Network;
use crate::error::Result;
use crate::tensor::Tensor;

/// Worst finite-difference disagreement within one parameter block.
#[derive(Clone, Debug)]
pub struct BlockCheck {
    pub layer: usize,
    pub block: usize,
    pub kind: &'static str,
    pub max_rel_err: f64,
}

/// Compares analytic gradients against central differences of the
/// training-mode loss, one parameter at a time.
///
/// Relative error per entry is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// entries whose true gradient is ~0 from reporting rounding noise as error.
pub fn gradient_check(net: &mut Network, x: &Tensor, targets: &[usize], eps: f64) -> Result<Vec<BlockCheck>> {
    net.forward_backward(x, targets)?;
    let analytic: Vec<Vec<Tensor>> = net.layers().iter().map(|l| l.grads().to_vec()).collect();
    let mut out = Vec::new();
    for (li, grads) in analytic.iter().enumerate() {
        for (bi, g) in grads.iter().enumerate() {
            let mut worst: f64 = 0.0;
            for k in 0..g.len() {
                let orig = net.layers()[li].params()[bi].data()[k];
                net.layers_mut()[li].params_mut()[bi].data_mut()[k] = orig + eps;
                let (lp, _) = net.forward_backward(x, targets)?;
                net.layers_mut()[li].params_mut()[bi].data_mut()[k] = orig - eps;
                let (lm, _) = net.forward_backward(x, targets)?;
                net.layers_mut()[li].params_mut()[bi].data_mut()[k] = orig;
                let numeric = (lp - lm) / (2.0 * eps);
                let a = g.data()[k];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((a - numeric).abs() / denom);
            }
            out.push(BlockCheck {
                layer: li,
                block: bi,
                kind: net.layers()[li].kind().name(),
                max_rel_err: worst,
            });
        }
    }
    net.forward_backward(x, targets)?;
    Ok(out)
}
