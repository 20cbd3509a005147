//! Deterministic 2-component PCA for the latent-space export.

use crate::CliError;
use fedalign::numcore::{symmetric_eigen, Matrix};

/// Project rows onto their top two principal components.
///
/// Columns are mean-centered first; each component's sign is fixed by making
/// its largest-magnitude coordinate positive, so the output is deterministic.
pub fn pca_2d(points: &Matrix) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let n = points.rows();
    let d = points.cols();
    if n == 0 || d == 0 {
        return Err(CliError::config("pca_2d needs a nonempty matrix"));
    }
    let mut means = vec![0.0; d];
    for r in 0..n {
        for (m, &v) in means.iter_mut().zip(points.row(r)) {
            *m += v;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut centered = points.clone();
    for r in 0..n {
        for (v, m) in centered.row_mut(r).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    // Covariance (scaling is irrelevant for directions).
    let mut cov = Matrix::zeros(d, d);
    for r in 0..n {
        let row = centered.row(r);
        for i in 0..d {
            for j in 0..d {
                let v = cov.get(i, j) + row[i] * row[j];
                cov.set(i, j, v);
            }
        }
    }
    let (_, vectors) = symmetric_eigen(&cov).map_err(|e| CliError::config(e.to_string()))?;

    let component = |col: usize| -> Vec<f64> {
        let mut axis: Vec<f64> = (0..d).map(|r| vectors.get(r, col)).collect();
        let mut dominant = 0;
        for (i, v) in axis.iter().enumerate() {
            if v.abs() > axis[dominant].abs() {
                dominant = i;
            }
        }
        if axis[dominant] < 0.0 {
            for v in &mut axis {
                *v = -*v;
            }
        }
        (0..n)
            .map(|r| {
                centered
                    .row(r)
                    .iter()
                    .zip(&axis)
                    .map(|(x, a)| x * a)
                    .sum()
            })
            .collect()
    };
    let pc1 = component(0);
    let pc2 = if d > 1 { component(1) } else { vec![0.0; n] };
    Ok((pc1, pc2))
}
