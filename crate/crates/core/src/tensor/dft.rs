use num_complex::Complex64;

use super::Tensor;
use crate::error::{Error, Result};

/// Magnitude of the 2-D discrete Fourier transform, evaluated by direct
/// summation.
///
/// `out[k][l] = |sum_p sum_q a[p][q] * exp(-2 pi i (p k / m + q l / n))|`.
/// Quadratic in the number of entries, which is fine for the factor sizes
/// analysed here.
pub fn dft2_magnitude(a: &Tensor) -> Result<Tensor> {
    if !a.is_matrix() {
        return Err(Error::dim("dft2_magnitude needs a matrix"));
    }
    let (m, n) = (a.rows(), a.cols());
    let tau = 2.0 * std::f64::consts::PI;
    // Twiddle tables indexed by (p * k) mod m and (q * l) mod n.
    let row_tw: Vec<Complex64> = (0..m)
        .map(|r| Complex64::from_polar(1.0, -tau * r as f64 / m as f64))
        .collect();
    let col_tw: Vec<Complex64> = (0..n)
        .map(|r| Complex64::from_polar(1.0, -tau * r as f64 / n as f64))
        .collect();
    let mut out = Tensor::zeros(&[m, n]);
    for k in 0..m {
        for l in 0..n {
            let mut acc = Complex64::new(0.0, 0.0);
            for p in 0..m {
                let wr = row_tw[(p * k) % m];
                for q in 0..n {
                    acc += wr * col_tw[(q * l) % n] * a.at(p, q);
                }
            }
            out.set(k, l, acc.norm());
        }
    }
    Ok(out)
}
