use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::tensor::{sym_eig, SeededRng, Tensor, SYMMETRY_TOL};

const EIG_TOL: f64 = 1e-13;

/// Serialises non-finite values as JSON `null`.
fn finite_or_null<S: Serializer>(v: &Option<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_f64(*x),
        _ => s.serialize_none(),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GershgorinReport {
    pub centers: Vec<f64>,
    pub radii: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Eigenvalues strictly above the mean eigenvalue.
    pub kaiser_count: usize,
    /// `sum a_ii^2 / sum a_ij^2`.
    pub diag_energy_ratio: f64,
    /// Every eigenvalue lies in some disc (up to eigensolver tolerance).
    pub eigenvalues_in_discs: bool,
    /// Filled in when a perturbation was analysed; infinite values become null.
    #[serde(serialize_with = "finite_or_null")]
    pub snr_db: Option<f64>,
}

fn require_square(m: &Tensor) -> Result<usize> {
    if !m.is_matrix() || m.rows() != m.cols() {
        return Err(Error::dim(format!("expected a square matrix, got {:?}", m.shape())));
    }
    Ok(m.rows())
}

pub fn gershgorin_report(m: &Tensor) -> Result<GershgorinReport> {
    let n = require_square(m)?;
    let scale = m.max_abs().max(1.0);
    if !m.is_symmetric(SYMMETRY_TOL * scale) {
        return Err(Error::invalid("gershgorin_report needs a symmetric matrix"));
    }
    let centers: Vec<f64> = (0..n).map(|i| m.at(i, i)).collect();
    let radii: Vec<f64> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).map(|j| m.at(i, j).abs()).sum())
        .collect();
    let eig = sym_eig(m, EIG_TOL)?;
    let mean = eig.values.iter().sum::<f64>() / n as f64;
    let kaiser_count = eig.values.iter().filter(|&&l| l > mean).count();
    let total: f64 = m.data().iter().map(|v| v * v).sum();
    let diag: f64 = centers.iter().map(|v| v * v).sum();
    let diag_energy_ratio = if total > 0.0 { diag / total } else { 1.0 };
    let slack = 1e-9 * m.norm().max(1.0);
    let eigenvalues_in_discs = eig
        .values
        .iter()
        .all(|&l| centers.iter().zip(&radii).any(|(c, r)| (l - c).abs() <= r + slack));
    Ok(GershgorinReport {
        centers,
        radii,
        eigenvalues: eig.values,
        kaiser_count,
        diag_energy_ratio,
        eigenvalues_in_discs,
        snr_db: None,
    })
}

/// `10 log10(sum_i m_ii^2 / sum_{j>i} p_ij^2)` with `p` the perturbed matrix.
/// Returns `+inf` when the perturbed upper triangle is all zero.
pub fn snr_offdiag(m: &Tensor, perturbed: &Tensor) -> Result<f64> {
    let n = require_square(m)?;
    if perturbed.shape() != m.shape() {
        return Err(Error::dim("perturbed matrix differs in shape"));
    }
    let signal: f64 = (0..n).map(|i| m.at(i, i).powi(2)).sum();
    let mut noise = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            noise += perturbed.at(i, j).powi(2);
        }
    }
    if noise == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (signal / noise).log10())
}

/// `m + (E + E^T) / 2` with `E_ij ~ N(0, sigma^2)` off the diagonal and zero on it.
pub fn perturb_offdiag(m: &Tensor, sigma: f64, rng: &mut SeededRng) -> Result<Tensor> {
    let n = require_square(m)?;
    if !(sigma >= 0.0) {
        return Err(Error::invalid("sigma must be non-negative"));
    }
    let mut e = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                e.set(i, j, sigma * rng.normal());
            }
        }
    }
    let mut out = m.clone();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = out.at(i, j) + 0.5 * (e.at(i, j) + e.at(j, i));
                out.set(i, j, v);
            }
        }
    }
    Ok(out)
}

/// Mean absolute eigenvalue shift under an off-diagonal perturbation, split
/// by the Kaiser criterion of the unperturbed spectrum.
#[derive(Clone, Debug, Serialize)]
pub struct EigenShift {
    pub kaiser_mean_shift: Option<f64>,
    pub sub_kaiser_mean_shift: Option<f64>,
    pub kaiser_count: usize,
}

pub fn eigen_shift(m: &Tensor, perturbed: &Tensor) -> Result<EigenShift> {
    let a = sym_eig(m, EIG_TOL)?.values;
    let b = sym_eig(perturbed, EIG_TOL)?.values;
    let mean = a.iter().sum::<f64>() / a.len() as f64;
    let (mut hi, mut lo) = (Vec::new(), Vec::new());
    for (x, y) in a.iter().zip(&b) {
        let shift = (x - y).abs();
        if *x > mean {
            hi.push(shift);
        } else {
            lo.push(shift);
        }
    }
    let avg = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(EigenShift {
        kaiser_mean_shift: avg(&hi),
        sub_kaiser_mean_shift: avg(&lo),
        kaiser_count: hi.len(),
    })
}
