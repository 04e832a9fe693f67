//! One dense layer, step by step: capture, diagonal factors, EMA, the damped
//! EFIM and the preconditioned gradient, next to the full Kronecker product
//! it stands in for.

use kronfisher::kfactor::{layer_kf_diag, layer_kf_full, minmax_normalize, KfState, DEFAULT_GAMMA, DEFAULT_LAMBDA};
use kronfisher::nn::{LayerKind, Network};
use kronfisher::tensor::{gaussian_fill, SeededRng, Tensor};

fn show(label: &str, v: &[f64]) {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:9.4}")).collect();
    println!("{label:>8}: {}", cells.join(" "));
}

fn main() -> kronfisher::Result<()> {
    let kind = LayerKind::Dense { in_features: 3, out_features: 2 };
    let mut net = Network::new(&[3], vec![kind.clone()], 0)?;
    let mut state = KfState::for_layer(&kind, DEFAULT_GAMMA)?.expect("dense layers have factors");
    let mut rng = SeededRng::new(1);

    for step in 0..3 {
        let x = gaussian_fill(&mut rng, &[8, 3], 0.0, 1.0);
        let y: Vec<usize> = (0..8).map(|_| rng.below(2)).collect();
        net.forward_backward(&x, &y)?;
        let cap = net.layers()[0].capture().expect("training pass captures");
        let (h, s) = layer_kf_diag(&kind, cap)?;
        state.ema_update(&h, &s)?;
        println!("step {step}");
        show("H batch", &h);
        show("S batch", &s);
        show("H ema", &state.h);
        show("S ema", &state.s);
    }

    let efim = state.efim(&kind, DEFAULT_LAMBDA)?;
    let g = net.layers()[0].grads().to_vec();
    let pre = efim.precondition(&g)?;
    println!("EFIM (out x (in+1)):");
    for r in 0..2 {
        show("", efim.blocks[0].row(r));
    }
    println!("gradient / EFIM:");
    for r in 0..2 {
        show("", pre[0].row(r));
    }

    // The diagonal of H' (x) S' + lambda I, read in column-stacked order,
    // is the same EFIM.
    let full = Tensor::from_diag(&minmax_normalize(&state.h)).kron(&Tensor::from_diag(&minmax_normalize(&state.s)))?;
    let diag: Vec<f64> = full.diag()?.iter().map(|d| d + DEFAULT_LAMBDA).collect();
    show("kron", &diag);
    show("efim", &efim.blocks[0].vec_colmajor()?);

    let cap = net.layers()[0].capture().expect("training pass captures");
    let (hf, _) = layer_kf_full(cap)?;
    println!("full activation factor, diagonal / total squared mass: {:.3} / {:.3}", hf.diag()?.iter().map(|v| v * v).sum::<f64>(), hf.data().iter().map(|v| v * v).sum::<f64>());
    Ok(())
}
