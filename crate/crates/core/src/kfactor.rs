//! Diagonal Kronecker factors, their EMA, and the damped diagonal EFIM.
//!
//! Layout contract: a dense/conv gradient `g` is `out x (in + 1)`, and its
//! EFIM entry `(j, k)` is `S'[j] * H'[k] + lambda`, which is the diagonal of
//! `H' (x) S' + lambda I` under column-stacking `vec(g) = h_bar (x) s`.
//! Normalisation layers pair each channel's scale with `S'[c] * H'[c]` and
//! each shift with `S'[c]` (the shift's activation factor is one).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{CaptureBuffer, LayerKind, Network};
use crate::tensor::Tensor;

pub const DEFAULT_GAMMA: f64 = 0.8;
pub const DEFAULT_LAMBDA: f64 = 1e-3;
/// Below this range a vector is treated as constant by [`minmax_normalize`].
pub const MINMAX_RANGE_TOL: f64 = 1e-12;

/// Row-wise mean of squares over the columns of a capture matrix.
fn row_mean_sq(m: &Tensor) -> Vec<f64> {
    let cols = m.cols();
    m.data()
        .chunks(cols)
        .map(|row| row.iter().map(|v| v * v).sum::<f64>() / cols as f64)
        .collect()
}

/// Fresh diagonal factors from one batch's capture.
///
/// Dense layers average over samples, conv and batch-norm layers over samples
/// and spatial locations (the `1/|T|` of the expanded form), so every case is
/// a row-wise mean of squares of the captured matrices. For normalisation
/// layers the returned `H` covers the scale parameters only.
pub fn layer_kf_diag(kind: &LayerKind, capture: &CaptureBuffer) -> Result<(Vec<f64>, Vec<f64>)> {
    if capture.h_bar.cols() != capture.s.cols() {
        return Err(Error::dim("capture h_bar and s have different column counts"));
    }
    match kind {
        LayerKind::Activation(_) => Ok((
            vec![1.0; capture.h_bar.rows()],
            vec![1.0; capture.s.rows()],
        )),
        _ => Ok((row_mean_sq(&capture.h_bar), row_mean_sq(&capture.s))),
    }
}

/// Full (non-diagonal) factors `h_bar h_bar^T / n` and `s s^T / n`, for
/// diagnostics only.
pub fn layer_kf_full(capture: &CaptureBuffer) -> Result<(Tensor, Tensor)> {
    let n = capture.h_bar.cols();
    if n == 0 {
        return Err(Error::state("empty capture buffer"));
    }
    let inv = 1.0 / n as f64;
    let h = capture.h_bar.matmul_nt(&capture.h_bar)?.scale(inv);
    let s = capture.s.matmul_nt(&capture.s)?.scale(inv);
    Ok((h, s))
}

/// Fresh factors for every layer of a network after a training-mode
/// forward/backward. `None` for layers without parameters.
pub fn collect_layer_factors(net: &Network) -> Result<Vec<Option<(Vec<f64>, Vec<f64>)>>> {
    net.layers()
        .iter()
        .map(|l| {
            if !l.kind().has_params() {
                return Ok(None);
            }
            let cap = l
                .capture()
                .ok_or_else(|| Error::state("no capture; run a training-mode forward/backward first"))?;
            layer_kf_diag(l.kind(), cap).map(Some)
        })
        .collect()
}

/// EMA-smoothed diagonal factors of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfState {
    pub h: Vec<f64>,
    pub s: Vec<f64>,
    pub gamma: f64,
    pub step: u64,
}

impl KfState {
    /// All-ones factors of the given lengths.
    pub fn new(h_len: usize, s_len: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::invalid(format!("gamma {gamma} outside (0, 1]")));
        }
        Ok(Self {
            h: vec![1.0; h_len],
            s: vec![1.0; s_len],
            gamma,
            step: 0,
        })
    }

    /// State sized for a layer, `None` for parameter-free layers.
    pub fn for_layer(kind: &LayerKind, gamma: f64) -> Result<Option<Self>> {
        let (h, s) = match *kind {
            LayerKind::Dense {
                in_features,
                out_features,
            } => (in_features + 1, out_features),
            LayerKind::Conv2d {
                c_in,
                c_out,
                k_h,
                k_w,
                ..
            } => (c_in * k_h * k_w + 1, c_out),
            LayerKind::BatchNorm { channels } => (channels, channels),
            LayerKind::LayerNorm { features } => (features, features),
            LayerKind::Activation(_) => return Ok(None),
        };
        Self::new(h, s, gamma).map(Some)
    }

    /// `H <- gamma * H_new + (1 - gamma) * H`, likewise for `S`.
    pub fn ema_update(&mut self, h_new: &[f64], s_new: &[f64]) -> Result<()> {
        if h_new.len() != self.h.len() || s_new.len() != self.s.len() {
            return Err(Error::dim(format!(
                "factor lengths ({}, {}) do not match state ({}, {})",
                h_new.len(),
                s_new.len(),
                self.h.len(),
                self.s.len()
            )));
        }
        let g = self.gamma;
        for (old, &new) in self.h.iter_mut().zip(h_new) {
            *old = g * new + (1.0 - g) * *old;
        }
        for (old, &new) in self.s.iter_mut().zip(s_new) {
            *old = g * new + (1.0 - g) * *old;
        }
        self.step += 1;
        Ok(())
    }

    /// Damped EFIM diagonal from the current factors.
    pub fn efim(&self, kind: &LayerKind, lambda: f64) -> Result<EfimDiag> {
        assemble_efim_diag(&minmax_normalize(&self.h), &minmax_normalize(&self.s), lambda, kind)
    }

    /// Unnormalised Kronecker estimate of the Fisher diagonal, flattened in
    /// parameter order. `spatial` is the layer's `|T|`.
    pub fn fisher_diag_estimate(&self, kind: &LayerKind, spatial: usize) -> Result<Vec<f64>> {
        let t = spatial as f64;
        let blocks = assemble_efim_diag(&self.h, &self.s, 0.0, kind)?;
        Ok(blocks
            .blocks
            .iter()
            .flat_map(|b| b.data().iter().map(move |v| v * t))
            .collect())
    }
}

/// `(v - min) / (max - min)`; a (numerically) constant vector maps to ones.
pub fn minmax_normalize(v: &[f64]) -> Vec<f64> {
    let min = v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range >= MINMAX_RANGE_TOL) {
        return vec![1.0; v.len()];
    }
    v.iter().map(|x| (x - min) / range).collect()
}

/// Damped diagonal EFIM of one layer, one block per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct EfimDiag {
    pub blocks: Vec<Tensor>,
    pub lambda: f64,
}

impl EfimDiag {
    /// `g / efim` for every parameter block of the layer.
    pub fn precondition(&self, grads: &[Tensor]) -> Result<Vec<Tensor>> {
        if grads.len() != self.blocks.len() {
            return Err(Error::dim(format!(
                "{} gradient blocks for {} EFIM blocks",
                grads.len(),
                self.blocks.len()
            )));
        }
        grads.iter().zip(&self.blocks).map(|(g, f)| precondition(g, f)).collect()
    }

    pub fn min_entry(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.data().iter().copied())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Lays `S[j] * H[k] + lambda` out congruently with the layer's parameters.
pub fn assemble_efim_diag(h: &[f64], s: &[f64], lambda: f64, kind: &LayerKind) -> Result<EfimDiag> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::invalid(format!("damping {lambda} must be finite and non-negative")));
    }
    let blocks = match kind {
        LayerKind::Dense { .. } | LayerKind::Conv2d { .. } => {
            let shape = &kind.param_shapes()[0];
            if shape[0] != s.len() || shape[1] != h.len() {
                return Err(Error::dim(format!(
                    "factors ({}, {}) do not match weight {shape:?}",
                    h.len(),
                    s.len()
                )));
            }
            let mut data = Vec::with_capacity(s.len() * h.len());
            for &sj in s {
                data.extend(h.iter().map(|&hk| sj * hk + lambda));
            }
            vec![Tensor::new(shape, data)?]
        }
        LayerKind::BatchNorm { channels: c } | LayerKind::LayerNorm { features: c } => {
            if h.len() != *c || s.len() != *c {
                return Err(Error::dim(format!("norm factors must have length {c}")));
            }
            let scale = h.iter().zip(s).map(|(hc, sc)| sc * hc + lambda).collect();
            let shift = s.iter().map(|sc| sc + lambda).collect();
            vec![Tensor::vector(scale)?, Tensor::vector(shift)?]
        }
        LayerKind::Activation(_) => Vec::new(),
    };
    Ok(EfimDiag { blocks, lambda })
}

/// Elementwise `g / efim`. No square root.
pub fn precondition(g: &Tensor, efim: &Tensor) -> Result<Tensor> {
    if g.shape() != efim.shape() {
        return Err(Error::dim(format!(
            "gradient {:?} and EFIM {:?} differ in shape",
            g.shape(),
            efim.shape()
        )));
    }
    g.div_elem(efim)
}

/// Exported factor snapshot of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KfSnapshot {
    pub layer_id: usize,
    #[serde(default)]
    pub kind: String,
    #[serde(rename = "H_diag")]
    pub h_diag: Vec<f64>,
    #[serde(rename = "S_diag")]
    pub s_diag: Vec<f64>,
    pub step: u64,
    /// Full activation factor (row-major rows), when captured for diagnostics.
    #[serde(rename = "H_full", default, skip_serializing_if = "Option::is_none")]
    pub h_full: Option<Vec<Vec<f64>>>,
    #[serde(rename = "S_full", default, skip_serializing_if = "Option::is_none")]
    pub s_full: Option<Vec<Vec<f64>>>,
}

impl KfSnapshot {
    pub fn from_state(layer_id: usize, kind: &LayerKind, state: &KfState) -> Self {
        Self {
            layer_id,
            kind: kind.name().to_string(),
            h_diag: state.h.clone(),
            s_diag: state.s.clone(),
            step: state.step,
            h_full: None,
            s_full: None,
        }
    }

    /// Attaches the full factors of the layer's latest capture.
    pub fn with_full(mut self, capture: &CaptureBuffer) -> Result<Self> {
        let (h, s) = layer_kf_full(capture)?;
        let rows = |t: &Tensor| (0..t.rows()).map(|i| t.row(i).to_vec()).collect();
        self.h_full = Some(rows(&h));
        self.s_full = Some(rows(&s));
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::tensor::{gaussian_fill, SeededRng};
    use proptest::prelude::*;

    fn dense(i: usize, o: usize) -> LayerKind {
        LayerKind::Dense {
            in_features: i,
            out_features: o,
        }
    }

    fn cap(h: Vec<Vec<f64>>, s: Vec<Vec<f64>>, t: usize) -> CaptureBuffer {
        CaptureBuffer {
            h_bar: Tensor::from_rows(&h).unwrap(),
            s: Tensor::from_rows(&s).unwrap(),
            spatial_count: t,
        }
    }

    #[test]
    fn dense_single_sample() {
        let c = cap(vec![vec![1.0], vec![2.0], vec![1.0]], vec![vec![3.0]], 1);
        let (h, s) = layer_kf_diag(&dense(2, 1), &c).unwrap();
        assert_eq!(h, vec![1.0, 4.0, 1.0]);
        assert_eq!(s, vec![9.0]);
    }

    #[test]
    fn activation_is_identity() {
        let c = cap(vec![vec![5.0, 1.0]; 3], vec![vec![2.0, 2.0]; 3], 1);
        let (h, s) = layer_kf_diag(&LayerKind::Activation(Activation::Relu), &c).unwrap();
        assert!(h.iter().chain(&s).all(|&v| v == 1.0));
    }

    #[test]
    fn missing_capture_is_a_state_error() {
        let mut net = Network::new(&[2], vec![dense(2, 2)], 0).unwrap();
        assert!(matches!(collect_layer_factors(&net), Err(Error::State(_))));
        // eval-mode forward leaves nothing to read either
        net.forward(&Tensor::ones(&[1, 2]), false).unwrap();
        assert!(matches!(collect_layer_factors(&net), Err(Error::State(_))));
    }

    #[test]
    fn conv_factor_matches_brute_force_expansion() {
        // One channel, 2x2 kernel over a 3x3 input: four patches per sample.
        let kind = LayerKind::Conv2d {
            c_in: 1,
            c_out: 2,
            k_h: 2,
            k_w: 2,
            stride: 1,
            padding: 0,
        };
        let mut net = Network::new(
            &[1, 3, 3],
            vec![kind.clone(), LayerKind::Dense { in_features: 8, out_features: 2 }],
            3,
        )
        .unwrap();
        let x = gaussian_fill(&mut SeededRng::new(4), &[2, 1, 3, 3], 0.0, 1.0);
        net.forward_backward(&x, &[0, 1]).unwrap();
        let (h, _) = layer_kf_diag(&kind, net.layers()[0].capture().unwrap()).unwrap();

        let mut expect = [0.0; 5];
        for n in 0..2 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut patch = Vec::new();
                    for ki in 0..2 {
                        for kj in 0..2 {
                            patch.push(x.data()[n * 9 + (oy + ki) * 3 + ox + kj]);
                        }
                    }
                    patch.push(1.0);
                    for (e, p) in expect.iter_mut().zip(&patch) {
                        *e += p * p;
                    }
                }
            }
        }
        // |T| = 4 locations per sample, 2 samples.
        for (got, e) in h.iter().zip(expect) {
            assert!((got - e / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ema_examples() {
        let mut st = KfState::new(1, 1, 0.8).unwrap();
        st.ema_update(&[2.0], &[2.0]).unwrap();
        assert!((st.h[0] - 1.8).abs() < 1e-15);
        let mut st = KfState::new(2, 1, 1.0).unwrap();
        st.ema_update(&[3.0, 4.0], &[5.0]).unwrap();
        assert_eq!((st.h.clone(), st.s.clone()), (vec![3.0, 4.0], vec![5.0]));
        assert!(matches!(st.ema_update(&[1.0], &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn ema_closed_form() {
        let (p, v, g) = (1.0, 7.5, DEFAULT_GAMMA);
        let mut st = KfState::new(1, 1, g).unwrap();
        for t in 1..=40 {
            st.ema_update(&[v], &[v]).unwrap();
            let closed = v + (1.0 - g).powi(t) * (p - v);
            assert!((st.h[0] - closed).abs() <= 1e-12);
        }
        assert_eq!(st.step, 40);
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_normalize(&[1.0, 3.0, 5.0]), vec![0.0, 0.5, 1.0]);
        assert_eq!(minmax_normalize(&[2.0, 2.0, 2.0]), vec![1.0, 1.0, 1.0]);
        let v = minmax_normalize(&[0.2, 0.9, 0.4]);
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 1.0);
        assert!((v[2] - 2.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn assemble_examples() {
        let e = assemble_efim_diag(&[1.0; 3], &[1.0; 2], 0.001, &dense(2, 2)).unwrap();
        assert!(e.blocks[0].data().iter().all(|&v| v == 1.001));
        let e = assemble_efim_diag(&[1.0, 0.0], &[1.0], 0.001, &dense(1, 1)).unwrap();
        assert_eq!(e.blocks[0].data(), &[1.001, 0.001]);
        let e = assemble_efim_diag(&[0.5, 0.0], &[0.2, 1.0], 0.01, &LayerKind::BatchNorm { channels: 2 }).unwrap();
        assert_eq!(e.blocks[0].data(), &[0.2 * 0.5 + 0.01, 0.01]);
        assert_eq!(e.blocks[1].data(), &[0.2 + 0.01, 1.0 + 0.01]);
    }

    #[test]
    fn precondition_examples() {
        let g = Tensor::from_rows(&[vec![0.002, 1.0]]).unwrap();
        let f = Tensor::from_rows(&[vec![0.001, 1.0 + DEFAULT_LAMBDA]]).unwrap();
        let out = precondition(&g, &f).unwrap();
        assert_eq!(out.at(0, 0), 2.0);
        assert_eq!(out.at(0, 1), 1.0 / 1.001);
        assert!(precondition(&g, &Tensor::ones(&[2, 1])).is_err());
    }

    /// Builds the explicit `(H (x) S + lambda I)` matrix and solves against
    /// `vec(g)` by Jacobi eigendecomposition (a diagonal matrix is its own
    /// eigenbasis, but the solve does not rely on that).
    fn full_solve(h: &[f64], s: &[f64], lambda: f64, g: &Tensor) -> Tensor {
        let big = Tensor::from_diag(h)
            .kron(&Tensor::from_diag(s))
            .unwrap()
            .add(&Tensor::identity(h.len() * s.len()).scale(lambda))
            .unwrap();
        let e = crate::tensor::sym_eig(&big, 1e-15).unwrap();
        let rhs = Tensor::new(&[h.len() * s.len(), 1], g.vec_colmajor().unwrap()).unwrap();
        let inv = Tensor::from_diag(&e.values.iter().map(|v| 1.0 / v).collect::<Vec<_>>());
        let sol = e
            .vectors
            .matmul(&inv)
            .unwrap()
            .matmul(&e.vectors.matmul_tn(&rhs).unwrap())
            .unwrap();
        // un-vec (column-major) back into out x (in+1)
        let (o, i) = (s.len(), h.len());
        let mut out = Tensor::zeros(&[o, i]);
        for k in 0..i {
            for j in 0..o {
                out.set(j, k, sol.data()[k * o + j]);
            }
        }
        out
    }

    #[test]
    fn tiny_dense_net_matches_full_solve() {
        let mut net = Network::new(&[3], vec![dense(3, 2)], 9).unwrap();
        let x = gaussian_fill(&mut SeededRng::new(2), &[6, 3], 0.0, 1.0);
        net.forward_backward(&x, &[0, 1, 1, 0, 1, 0]).unwrap();
        let (h, s) = layer_kf_diag(net.layers()[0].kind(), net.layers()[0].capture().unwrap()).unwrap();
        let (h, s) = (minmax_normalize(&h), minmax_normalize(&s));
        let efim = assemble_efim_diag(&h, &s, DEFAULT_LAMBDA, net.layers()[0].kind()).unwrap();
        let g = &net.layers()[0].grads()[0];
        let fast = precondition(g, &efim.blocks[0]).unwrap();
        let slow = full_solve(&h, &s, DEFAULT_LAMBDA, g);
        assert!(fast.sub(&slow).unwrap().max_abs() <= 1e-10);
    }

    #[test]
    fn snapshot_json_field_names() {
        let st = KfState::new(2, 1, 0.8).unwrap();
        let snap = KfSnapshot::from_state(3, &dense(1, 1), &st);
        let v: serde_json::Value = serde_json::to_value(&snap).unwrap();
        for key in ["layer_id", "H_diag", "S_diag", "step"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        assert!(v.get("H_full").is_none());
        let back: KfSnapshot = serde_json::from_value(v).unwrap();
        assert_eq!(back, snap);
    }

    fn positive_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..10.0, 1..=max_len)
    }

    proptest! {
        #[test]
        fn kronecker_vectorisation_identity(seed in 0u64..1000, i in 1usize..8, o in 1usize..8) {
            let mut rng = SeededRng::new(seed);
            let h = gaussian_fill(&mut rng, &[i, 1], 0.0, 1.0);
            let s = gaussian_fill(&mut rng, &[o, 1], 0.0, 1.0);
            let outer = s.matmul_nt(&h).unwrap();
            let lhs = outer.vec_colmajor().unwrap();
            let rhs = h.kron(&s).unwrap();
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&lhs), bits(rhs.data()));
        }

        #[test]
        fn efim_is_bounded_and_matches_kron(h in positive_vec(12), s in positive_vec(12), lambda in 1e-6f64..1.0) {
            let (hn, sn) = (minmax_normalize(&h), minmax_normalize(&s));
            let kind = dense(h.len() - 1, s.len());
            let e = assemble_efim_diag(&hn, &sn, lambda, &kind).unwrap();
            let big = Tensor::from_diag(&hn).kron(&Tensor::from_diag(&sn)).unwrap();
            let vec_e = e.blocks[0].vec_colmajor().unwrap();
            for (idx, v) in vec_e.iter().enumerate() {
                prop_assert!(*v >= lambda && *v <= 1.0 + lambda);
                prop_assert_eq!(*v, big.at(idx, idx) + lambda);
            }
        }

        #[test]
        fn minmax_is_scale_invariant(h in positive_vec(12), k in 0.5f64..4.0) {
            let scaled: Vec<f64> = h.iter().map(|v| v * 2.0).collect();
            let shifted: Vec<f64> = h.iter().map(|v| v * k + 1.0).collect();
            let base = minmax_normalize(&h);
            if base.iter().any(|&v| v != 1.0) {
                prop_assert_eq!(minmax_normalize(&scaled), base.clone());
                for (a, b) in minmax_normalize(&shifted).iter().zip(&base) {
                    prop_assert!((a - b).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn ema_converges_geometrically(v in 0.0f64..5.0, gamma in 0.05f64..1.0) {
            let mut st = KfState::new(1, 1, gamma).unwrap();
            let mut prev_gap = (1.0 - v).abs();
            // A few ulps of the larger operand for the rounding in the blend.
            let slack = 4.0 * f64::EPSILON * v.max(1.0);
            for _ in 0..20 {
                st.ema_update(&[v], &[v]).unwrap();
                let gap = (st.h[0] - v).abs();
                prop_assert!(gap <= (1.0 - gamma) * prev_gap + slack);
                prev_gap = gap;
            }
        }
    }
}
