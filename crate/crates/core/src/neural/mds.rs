//! Classical multidimensional scaling of a kernel matrix.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;

/// Kernel values are floored at this constant before taking logarithms.
pub const MDS_GUARD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MdsEmbedding {
    pub points: Vec<Vec<f64>>,
    /// Kruskal stress-1 of the embedding distances against the targets.
    pub stress: f64,
}

/// Squared target distances `log(1 / max(K, c))` with a zero diagonal.
pub fn target_squared_distances(matrix: &KernelMatrix) -> Result<DMatrix<f64>> {
    let n = matrix.nrows();
    if n == 0 || matrix.values.iter().any(|r| r.len() != n) {
        return Err(Error::KernelMatrix("MDS needs a nonempty square matrix".into()));
    }
    if let Some(v) = matrix.values.iter().flatten().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::KernelMatrix(format!("entry {v} is not a nonnegative number")));
    }
    let raw = DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            0.0
        } else {
            -(matrix.values[i][j].max(MDS_GUARD)).ln().min(0.0)
        }
    });
    Ok((&raw + raw.transpose()) * 0.5)
}

/// Embeds the rows of a kernel matrix in `dim` dimensions so that Euclidean
/// distances approximate `sqrt(log(1 / K_ij))`.
pub fn mds_embed(matrix: &KernelMatrix, dim: usize) -> Result<MdsEmbedding> {
    let d2 = target_squared_distances(matrix)?;
    let n = d2.nrows();
    if dim == 0 || dim > n {
        return Err(Error::InvalidArgument(format!(
            "embedding dimension {dim} must lie in 1..={n}"
        )));
    }
    let row_means: Vec<f64> = (0..n).map(|i| d2.row(i).mean()).collect();
    let grand = d2.mean();
    let b = DMatrix::from_fn(n, n, |i, j| -0.5 * (d2[(i, j)] - row_means[i] - row_means[j] + grand));
    let eig = SymmetricEigen::new(b);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[c].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&c)));
    let mut points = vec![vec![0.0; dim]; n];
    for (k, &e) in order.iter().take(dim).enumerate() {
        let scale = eig.eigenvalues[e].max(0.0).sqrt();
        for (i, p) in points.iter_mut().enumerate() {
            p[k] = eig.eigenvectors[(i, e)] * scale;
        }
    }
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..n {
        for j in (i + 1)..n {
            let target = d2[(i, j)].sqrt();
            let got = euclid(&points[i], &points[j]);
            num += (got - target).powi(2);
            den += target * target;
        }
    }
    let stress = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
    Ok(MdsEmbedding { points, stress })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()
}
