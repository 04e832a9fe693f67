use serde::Serialize;

use crate::error::{Error, Result};
use crate::kfactor::{EfimDiag, KfState};
use crate::nn::{softmax, Network};
use crate::tensor::{SeededRng, Tensor};

/// Monte-Carlo diagonal of the true Fisher `E_x E_{y ~ p(y|x)}[g g^T]`.
///
/// For each input, `samples` labels are drawn from the model's predictive
/// distribution and the squared per-parameter gradient of the NLL at each
/// drawn label is averaged; the result is then averaged over inputs. The
/// gradient depends on the input and the drawn class only, so the `C`
/// per-class gradients are computed once per input and weighted by how often
/// each class was drawn.
pub fn true_fisher_diag_mc(
    net: &mut Network,
    inputs: &Tensor,
    samples: usize,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if samples == 0 {
        return Err(Error::invalid("need at least one Monte-Carlo sample per input"));
    }
    let n = inputs.rows();
    let d = inputs.cols();
    let classes = net.class_count();
    let mut shape = inputs.shape().to_vec();
    shape[0] = 1;
    let mut acc = vec![0.0; net.param_count()];
    for i in 0..n {
        let x = Tensor::new(&shape, inputs.data()[i * d..(i + 1) * d].to_vec())?;
        let logits = net.forward(&x, false)?;
        let p = softmax(&logits)?;
        let probs = p.row(0).to_vec();
        let mut counts = vec![0usize; classes];
        for _ in 0..samples {
            counts[rng.categorical(&probs)] += 1;
        }
        for (c, &count) in counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let mut dlogits = p.clone();
            dlogits.data_mut()[c] -= 1.0;
            net.backward(&dlogits)?;
            let w = count as f64 / samples as f64;
            for (a, g) in acc.iter_mut().zip(net.grads_flat()) {
                *a += w * g * g;
            }
        }
    }
    let inv = 1.0 / n as f64;
    Ok(acc.into_iter().map(|v| v * inv).collect())
}

/// Kronecker estimate `|T| * S[j] * H[k]` of the Fisher diagonal from
/// (unnormalised) factor EMAs, flattened in parameter order.
pub fn kf_fisher_diag(net: &Network, states: &[Option<KfState>]) -> Result<Vec<f64>> {
    if states.len() != net.layers().len() {
        return Err(Error::dim("one factor state per layer expected"));
    }
    let spatial = net.spatial_counts();
    let mut out = Vec::with_capacity(net.param_count());
    for ((layer, st), t) in net.layers().iter().zip(states).zip(spatial) {
        if let Some(st) = st {
            out.extend(st.fisher_diag_estimate(layer.kind(), t)?);
        }
    }
    if out.len() != net.param_count() {
        return Err(Error::dim("factor states do not cover every parameter"));
    }
    Ok(out)
}

/// Mean absolute difference.
pub fn fisher_mae(truth: &[f64], approx: &[f64]) -> Result<f64> {
    if truth.len() != approx.len() || truth.is_empty() {
        return Err(Error::dim(format!(
            "MAE between lengths {} and {}",
            truth.len(),
            approx.len()
        )));
    }
    Ok(truth.iter().zip(approx).map(|(a, b)| (a - b).abs()).sum::<f64>() / truth.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Histogram {
    pub layer: usize,
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram of `values` over `[lo, hi]`; the top edge is
/// inclusive. A zero-width range puts everything in the first bin.
pub fn histogram(layer: usize, values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if bins < 2 {
        return Err(Error::invalid("need at least two bins"));
    }
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let b = if width > 0.0 {
            (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    Ok(Histogram { layer, edges, counts })
}

/// Per-layer histograms of EFIM diagonals over `[lambda, max entry]`.
pub fn fim_histogram(efims: &[EfimDiag], bins: usize) -> Result<Vec<Histogram>> {
    let mut out = Vec::new();
    for (layer, e) in efims.iter().enumerate() {
        if e.blocks.is_empty() {
            continue;
        }
        let values: Vec<f64> = e.blocks.iter().flat_map(|b| b.data().iter().copied()).collect();
        let max = values.iter().copied().fold(e.lambda, f64::max);
        out.push(histogram(layer, &values, e.lambda, max, bins)?);
    }
    Ok(out)
}
