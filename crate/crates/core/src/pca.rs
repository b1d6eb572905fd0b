//! Principal components of a covariate block via the SVD of the centered
//! (optionally scaled) data matrix.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TehError};
use crate::glm::Projection;

/// Score variance below which a component is flagged degenerate.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaResult {
    /// m x m, orthonormal columns by decreasing score variance.
    pub loadings: DMatrix<f64>,
    /// Sample variances (n - 1 denominator) of the scores.
    pub score_variances: Vec<f64>,
    pub center: Vec<f64>,
    /// Column standard deviations used for scaling, or all ones.
    pub scale: Vec<f64>,
    /// n x m.
    pub scores: DMatrix<f64>,
    pub standardized: bool,
    pub degenerate: Vec<bool>,
    /// Columns that could not be scaled because they are constant.
    pub constant_columns: Vec<usize>,
}

/// Loadings and variances as they appear in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    /// Row-major m x m: `loadings[i][k]` is the weight of variable i in PC k.
    pub loadings: Vec<Vec<f64>>,
    pub score_variances: Vec<f64>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    pub standardized: bool,
    pub degenerate: Vec<bool>,
}

impl PcaResult {
    pub fn m(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn summary(&self) -> PcaSummary {
        PcaSummary {
            loadings: self
                .loadings
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            score_variances: self.score_variances.clone(),
            center: self.center.clone(),
            scale: self.scale.clone(),
            standardized: self.standardized,
            degenerate: self.degenerate.clone(),
        }
    }

    /// Map from raw covariates to the scores of the given components, in the
    /// given order: `(x - center) * diag(1/scale) * loadings[:, order]`.
    pub fn projection(&self, order: &[usize]) -> Projection {
        let m = self.m();
        let weights = DMatrix::from_fn(m, order.len(), |i, k| {
            self.loadings[(i, order[k])] / self.scale[i]
        });
        Projection {
            weights,
            offset: DVector::from_vec(self.center.clone()),
        }
    }

    /// The matrix the decomposition was applied to.
    pub fn standardized_data(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.center[j]) / self.scale[j]
        })
    }
}

/// Complete an orthonormal set of columns to a full basis of R^m.
fn complete_basis(partial: DMatrix<f64>, m: usize) -> DMatrix<f64> {
    let mut cols: Vec<DVector<f64>> = partial.column_iter().map(|c| c.into_owned()).collect();
    let mut e = 0;
    while cols.len() < m && e < m {
        let mut v = DVector::zeros(m);
        v[e] = 1.0;
        e += 1;
        for _ in 0..2 {
            for c in &cols {
                let d = c.dot(&v);
                v.axpy(-d, c, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            cols.push(v / norm);
        }
    }
    DMatrix::from_columns(&cols)
}

pub fn compute_pca(x: &DMatrix<f64>, standardize: bool) -> Result<PcaResult> {
    let (n, m) = (x.nrows(), x.ncols());
    if m == 0 {
        return Err(TehError::InvalidInput("PCA needs at least one column".into()));
    }
    if n < 2 {
        return Err(TehError::InsufficientData { n, needed: 2 });
    }
    let denom = (n - 1) as f64;
    let center: Vec<f64> = (0..m).map(|j| x.column(j).mean()).collect();
    let mut scale = vec![1.0; m];
    let mut constant_columns = Vec::new();
    if standardize {
        for j in 0..m {
            let var = x
                .column(j)
                .iter()
                .map(|v| (v - center[j]).powi(2))
                .sum::<f64>()
                / denom;
            if var > 0.0 {
                scale[j] = var.sqrt();
            } else {
                constant_columns.push(j);
            }
        }
    }
    let z = DMatrix::from_fn(n, m, |i, j| (x[(i, j)] - center[j]) / scale[j]);

    let svd = z.clone().svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| TehError::Decomposition("SVD did not return right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let partial = DMatrix::from_fn(m, order.len(), |i, k| v_t[(order[k], i)]);
    let mut loadings = complete_basis(partial, m);

    // sign convention: largest-magnitude entry of each loading is positive
    for mut col in loadings.column_iter_mut() {
        let mut at = 0;
        for i in 1..m {
            if col[i].abs() > col[at].abs() {
                at = i;
            }
        }
        if col[at] < 0.0 {
            col.neg_mut();
        }
    }

    let scores = &z * &loadings;
    let score_variances: Vec<f64> = (0..m)
        .map(|k| {
            if k < order.len() {
                svd.singular_values[order[k]].powi(2) / denom
            } else {
                0.0
            }
        })
        .collect();
    let degenerate = score_variances
        .iter()
        .map(|&v| v < DEGENERATE_VARIANCE)
        .collect();
    Ok(PcaResult {
        loadings,
        score_variances,
        center,
        scale,
        scores,
        standardized: standardize,
        degenerate,
        constant_columns,
    })
}

/// Components are already ordered by variance; this checks that and returns
/// the identity ranking.
pub fn rank_pcs_by_variance(result: &PcaResult) -> Result<Vec<usize>> {
    let m = result.m();
    let gram = result.loadings.tr_mul(&result.loadings);
    let orthonormal = (0..m).all(|i| {
        (0..m).all(|j| {
            let target = if i == j { 1.0 } else { 0.0 };
            (gram[(i, j)] - target).abs() < 1e-8
        })
    });
    if !orthonormal {
        return Err(TehError::InvalidInput("PCA loadings are not orthonormal".into()));
    }
    let v = &result.score_variances;
    if v.len() != m || v.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-12) + 1e-15) {
        return Err(TehError::InvalidInput(
            "PCA score variances are not in decreasing order".into(),
        ));
    }
    Ok((0..m).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn collinear_points() {
        let x = dmatrix![1.0, 1.0; 2.0, 2.0; 3.0, 3.0; 5.0, 5.0];
        let r = compute_pca(&x, false).unwrap();
        let h = 1.0 / 2f64.sqrt();
        assert!((r.loadings[(0, 0)] - h).abs() < 1e-12);
        assert!((r.loadings[(1, 0)] - h).abs() < 1e-12);
        assert!(r.score_variances[1].abs() < 1e-10);
        assert!(r.degenerate[1]);
    }

    #[test]
    fn axis_aligned_variances() {
        // column variances 4 and 1 with the n-1 denominator, uncorrelated
        let x = dmatrix![2.0, 0.0; -2.0, 0.0; 0.0, 1.0; 0.0, -1.0];
        // var(col0) = 8/3, var(col1) = 2/3 -> ratio 4:1
        let r = compute_pca(&x, false).unwrap();
        assert!((r.score_variances[0] - 8.0 / 3.0).abs() < 1e-12);
        assert!((r.score_variances[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((r.loadings[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((r.loadings[(1, 1)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ranking_is_identity_and_checks_order() {
        let x = dmatrix![1.0, 0.3, 2.0; 2.0, -0.1, 0.0; 0.5, 0.9, 1.0; 3.0, 0.2, -1.0; 1.5, 1.1, 0.4];
        let r = compute_pca(&x, true).unwrap();
        assert_eq!(rank_pcs_by_variance(&r).unwrap(), vec![0, 1, 2]);
        let mut shuffled = r.clone();
        shuffled.score_variances.swap(0, 2);
        let l = shuffled.loadings.clone();
        shuffled.loadings.set_column(0, &l.column(2));
        shuffled.loadings.set_column(2, &l.column(0));
        assert!(rank_pcs_by_variance(&shuffled).is_err());
        let one = compute_pca(&dmatrix![1.0; 2.0; 4.0], true).unwrap();
        assert_eq!(rank_pcs_by_variance(&one).unwrap(), vec![0]);
    }

    #[test]
    fn empty_input() {
        assert!(compute_pca(&DMatrix::zeros(5, 0), true).is_err());
    }

    #[test]
    fn constant_column_keeps_unit_scale() {
        let x = dmatrix![1.0, 3.0; 2.0, 3.0; 4.0, 3.0];
        let r = compute_pca(&x, true).unwrap();
        assert_eq!(r.constant_columns, vec![1]);
        assert_eq!(r.scale[1], 1.0);
    }

    #[test]
    fn wide_matrix_gets_full_basis() {
        let x = dmatrix![1.0, 2.0, 0.5, 0.0; 0.0, 1.0, 2.0, 1.0; 3.0, 0.0, 1.0, 2.0];
        let r = compute_pca(&x, false).unwrap();
        let g = r.loadings.tr_mul(&r.loadings);
        assert!((g - DMatrix::identity(4, 4)).amax() < 1e-10);
        assert!(r.degenerate[3]);
    }
}
