use nalgebra::{DMatrix, SymmetricEigen};

use super::{ClusterError, FeatureSet};

/// Principal axes of a feature set.
#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `d × m`, orthonormal columns ordered by decreasing variance.
    pub basis: DMatrix<f64>,
    /// Variance along each retained axis.
    pub variances: Vec<f64>,
    /// Retained variance divided by total variance, non-increasing.
    pub explained_ratio: Vec<f64>,
}

/// Top-`m` principal components. Eigen-decomposes whichever of the `d × d`
/// covariance or the `N × N` Gram matrix is smaller.
pub fn pca_fit(features: &FeatureSet, m: usize) -> Result<Pca, ClusterError> {
    let (n, d) = (features.count, features.dim);
    if m == 0 || m > n.min(d) {
        return Err(ClusterError::Invalid(format!("pca dimension {m} outside 1..={}", n.min(d))));
    }
    let mut mean = vec![0f64; d];
    for row in features.rows() {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let x = DMatrix::from_fn(n, d, |i, j| features.row(i)[j] as f64 - mean[j]);
    let denom = (n.max(2) - 1) as f64;

    let (values, vectors) = if d <= n {
        let cov = x.tr_mul(&x) / denom;
        let e = SymmetricEigen::new(cov);
        (e.eigenvalues, e.eigenvectors)
    } else {
        let gram = &x * x.transpose() / denom;
        let e = SymmetricEigen::new(gram);
        // Right singular vectors from left ones: v = Xᵀu / ‖Xᵀu‖.
        let mut v = x.tr_mul(&e.eigenvectors);
        for mut col in v.column_iter_mut() {
            let norm = col.norm();
            if norm > 0.0 {
                col /= norm;
            }
        }
        (e.eigenvalues, v)
    };

    let total: f64 = values.iter().map(|v| v.max(0.0)).sum();
    if !(total > 0.0) {
        return Err(ClusterError::Degenerate);
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let keep = &order[..m];
    let mut basis = DMatrix::zeros(d, m);
    for (c, &i) in keep.iter().enumerate() {
        let mut col = vectors.column(i).into_owned();
        // Deterministic sign: largest-magnitude entry positive.
        let pivot = col.iamax();
        if col[pivot] < 0.0 {
            col = -col;
        }
        basis.set_column(c, &col);
    }
    complete_null_columns(&mut basis);
    let variances: Vec<f64> = keep.iter().map(|&i| values[i].max(0.0)).collect();
    let explained_ratio = variances.iter().map(|v| v / total).collect();
    Ok(Pca {
        mean,
        basis,
        variances,
        explained_ratio,
    })
}

/// Zero-variance axes recovered from the Gram route have zero columns;
/// replace them with unit vectors orthogonal to the rest.
fn complete_null_columns(basis: &mut DMatrix<f64>) {
    let (d, m) = basis.shape();
    for c in 0..m {
        if basis.column(c).norm() > 0.5 {
            continue;
        }
        for j in 0..d {
            let mut v = nalgebra::DVector::<f64>::zeros(d);
            v[j] = 1.0;
            for o in 0..m {
                if o != c && basis.column(o).norm() > 0.5 {
                    let dot = basis.column(o).dot(&v);
                    v -= basis.column(o) * dot;
                }
            }
            let norm = v.norm();
            if norm > 1e-6 {
                basis.set_column(c, &(v / norm));
                break;
            }
        }
    }
}

impl Pca {
    pub fn dim(&self) -> usize {
        self.basis.ncols()
    }

    /// Coordinates of `row` in the retained subspace.
    pub fn project(&self, row: &[f32]) -> Vec<f64> {
        let d = self.mean.len();
        (0..self.dim())
            .map(|c| (0..d).map(|j| (row[j] as f64 - self.mean[j]) * self.basis[(j, c)]).sum())
            .collect()
    }

    pub fn project_all(&self, features: &FeatureSet) -> Vec<Vec<f64>> {
        features.rows().map(|r| self.project(r)).collect()
    }
}
