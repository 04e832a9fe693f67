use crate::error::{Error, Result};
use crate::tensor::{sym_eig, Tensor};

#[derive(Clone, Debug)]
pub struct Pca2 {
    /// `N x 2` scores.
    pub projected: Tensor,
    /// `2 x d`, rows are unit loadings.
    pub components: Tensor,
    pub explained_variance: [f64; 2],
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

/// Two-component PCA through the sample covariance (`1/(N-1)`).
///
/// Each component's sign is fixed so its first nonzero loading is positive.
pub fn pca2(data: &Tensor) -> Result<Pca2> {
    if !data.is_matrix() || data.rows() < 2 || data.cols() < 2 {
        return Err(Error::dim(format!("pca2 needs at least a 2 x 2 matrix, got {:?}", data.shape())));
    }
    let (n, d) = (data.rows(), data.cols());
    let mut mean = vec![0.0; d];
    for i in 0..n {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut centered = data.clone();
    for row in centered.data_mut().chunks_mut(d) {
        for (v, m) in row.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
    let cov = centered.matmul_tn(&centered)?.scale(1.0 / (n - 1) as f64);
    let total_variance = cov.trace()?;
    if total_variance <= 0.0 {
        return Err(Error::invalid("pca2 input has zero variance"));
    }
    let eig = sym_eig(&cov, 1e-14)?;
    let mut components = Tensor::zeros(&[2, d]);
    for c in 0..2 {
        let col: Vec<f64> = (0..d).map(|k| eig.vectors.at(k, c)).collect();
        let tol = 1e-12 * col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let sign = col.iter().find(|v| v.abs() > tol).map_or(1.0, |v| v.signum());
        for (k, v) in col.iter().enumerate() {
            components.set(c, k, sign * v);
        }
    }
    let projected = centered.matmul_nt(&components)?;
    // Eigenvalues of a PSD matrix can come out as tiny negatives.
    let explained_variance = [eig.values[0].max(0.0), eig.values[1].max(0.0)];
    Ok(Pca2 {
        projected,
        components,
        explained_variance,
        total_variance,
    })
}
