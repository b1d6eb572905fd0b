//! L1-penalized GLM path by cyclic coordinate descent with warm starts.
//!
//! Candidates are standardized (mean 0, 1/n variance 1) before fitting so
//! the entry order does not depend on their units. The intercept, the
//! treatment indicator (when included) and adjustment covariates are never
//! penalized; they are profiled out exactly at every inner solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Result, TehError};
use crate::glm::{self, ColumnRole, DesignMatrix, Family};
use crate::stats::expit;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LassoConfig {
    pub n_lambda: usize,
    /// Smallest lambda as a fraction of lambda_max. `None` picks 1e-3 when
    /// n > p and 1e-2 otherwise.
    pub epsilon: Option<f64>,
    /// Include the treatment indicator as an unpenalized term.
    pub include_treatment: bool,
    pub max_sweeps: usize,
}

impl Default for LassoConfig {
    fn default() -> Self {
        Self {
            n_lambda: 100,
            epsilon: None,
            include_treatment: true,
            max_sweeps: 100_000,
        }
    }
}

impl LassoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambda < 2 {
            return Err(TehError::Config("lasso.n_lambda must be at least 2".into()));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0 && e < 1.0) {
                return Err(TehError::Config("lasso.epsilon must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    /// Strictly decreasing.
    pub lambdas: Vec<f64>,
    /// Candidate coefficients on the original covariate scale, one vector per lambda.
    pub coefficients: Vec<Vec<f64>>,
    /// Same, on the standardized scale.
    pub standardized_coefficients: Vec<Vec<f64>>,
    /// Unpenalized coefficients (in `unpenalized_terms` order), original scale.
    pub unpenalized_coefficients: Vec<Vec<f64>>,
    pub unpenalized_terms: Vec<String>,
    /// Candidates in order of first nonzero coefficient; ties by index.
    pub entry_order: Vec<usize>,
    pub entry_lambda_index: Vec<Option<usize>>,
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

pub fn soft_threshold(z: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Entry order first, then never-entered candidates by ascending index.
pub fn rank_by_entry(path: &LassoPath, p: usize) -> Vec<usize> {
    let mut ranking: Vec<usize> = path.entry_order.iter().copied().filter(|&j| j < p).collect();
    ranking.extend((0..p).filter(|j| !path.entry_order.contains(j)));
    ranking
}

pub fn fit_path(
    data: &TrialDataset,
    family: Family,
    include_treatment: bool,
    n_lambda: usize,
) -> Result<LassoPath> {
    let config = LassoConfig {
        n_lambda,
        include_treatment,
        ..LassoConfig::default()
    };
    fit_path_with(data, family, &config)
}

struct Problem {
    n: usize,
    p: usize,
    /// standardized candidates, n x p
    xs: DMatrix<f64>,
    /// unpenalized block, n x u
    u: DMatrix<f64>,
    y: DVector<f64>,
    family: Family,
    usable: Vec<bool>,
}

/// Result of one penalized weighted least-squares solve.
struct InnerSolution {
    beta: DVector<f64>,
    gamma: DVector<f64>,
    converged: bool,
}

impl Problem {
    /// Minimize (1/2n) sum w_i (z_i - u_i'g - x_i'b)^2 + lambda |b|_1, with
    /// g profiled out by weighted projection.
    fn solve_weighted(
        &self,
        w: &DVector<f64>,
        z: &DVector<f64>,
        lambda: f64,
        warm: &DVector<f64>,
        max_sweeps: usize,
    ) -> Result<InnerSolution> {
        let n = self.n as f64;
        let sw = w.map(f64::sqrt);
        let mut uw = self.u.clone();
        for mut col in uw.column_iter_mut() {
            col.component_mul_assign(&sw);
        }
        let q = uw.clone().qr().q();
        let resid = |v: DVector<f64>| {
            let proj = &q * (q.tr_mul(&v));
            v - proj
        };
        let zr = resid(z.component_mul(&sw));
        let mut xr = DMatrix::zeros(self.n, self.p);
        for j in 0..self.p {
            let col: DVector<f64> = self.xs.column(j).component_mul(&sw);
            xr.set_column(j, &resid(col));
        }
        let norms: Vec<f64> = (0..self.p)
            .map(|j| xr.column(j).norm_squared() / n)
            .collect();

        let mut beta = warm.clone();
        let mut r = &zr - &xr * &beta;
        let mut converged = false;
        for _ in 0..max_sweeps {
            let mut max_delta: f64 = 0.0;
            for j in 0..self.p {
                if !self.usable[j] || norms[j] <= 1e-14 {
                    if beta[j] != 0.0 {
                        r.axpy(beta[j], &xr.column(j), 1.0);
                        beta[j] = 0.0;
                    }
                    continue;
                }
                let old = beta[j];
                let grad = xr.column(j).dot(&r) / n;
                let new = soft_threshold(grad + norms[j] * old, lambda) / norms[j];
                if new != old {
                    r.axpy(old - new, &xr.column(j), 1.0);
                    beta[j] = new;
                    max_delta = max_delta.max((new - old).abs() * norms[j].sqrt());
                }
            }
            if max_delta < 1e-13 {
                converged = true;
                break;
            }
        }

        let target = (z - &self.xs * &beta).component_mul(&sw);
        let gram = uw.tr_mul(&uw);
        let rhs = uw.tr_mul(&target);
        let gamma = gram
            .cholesky()
            .map(|c| c.solve(&rhs))
            .ok_or_else(|| TehError::Decomposition("unpenalized block is rank deficient".into()))?;
        Ok(InnerSolution {
            beta,
            gamma,
            converged,
        })
    }

    fn eta(&self, beta: &DVector<f64>, gamma: &DVector<f64>) -> DVector<f64> {
        &self.xs * beta + &self.u * gamma
    }

    fn solve_at(
        &self,
        lambda: f64,
        beta0: &DVector<f64>,
        gamma0: &DVector<f64>,
        max_sweeps: usize,
    ) -> Result<Option<(DVector<f64>, DVector<f64>)>> {
        match self.family {
            Family::Gaussian => {
                let w = DVector::from_element(self.n, 1.0);
                let s = self.solve_weighted(&w, &self.y, lambda, beta0, max_sweeps)?;
                Ok(s.converged.then_some((s.beta, s.gamma)))
            }
            Family::Binomial => {
                let mut beta = beta0.clone();
                let mut gamma = gamma0.clone();
                for _ in 0..200 {
                    let eta = self.eta(&beta, &gamma);
                    let mut w = DVector::zeros(self.n);
                    let mut z = DVector::zeros(self.n);
                    for i in 0..self.n {
                        let mu = expit(eta[i]).clamp(1e-10, 1.0 - 1e-10);
                        w[i] = mu * (1.0 - mu);
                        z[i] = eta[i] + (self.y[i] - mu) / w[i];
                    }
                    let s = self.solve_weighted(&w, &z, lambda, &beta, max_sweeps)?;
                    if !s.converged {
                        return Ok(None);
                    }
                    let delta = (&s.beta - &beta)
                        .amax()
                        .max((&s.gamma - &gamma).amax());
                    beta = s.beta;
                    gamma = s.gamma;
                    if delta < 1e-10 {
                        return Ok(Some((beta, gamma)));
                    }
                }
                Ok(None)
            }
        }
    }
}

pub fn fit_path_with(data: &TrialDataset, family: Family, config: &LassoConfig) -> Result<LassoPath> {
    config.validate()?;
    let (n, p) = (data.n(), data.p());
    let x = data.x_candidates();

    let mut center = vec![0.0; p];
    let mut scale = vec![1.0; p];
    let mut usable = vec![true; p];
    let mut xs = DMatrix::zeros(n, p);
    for j in 0..p {
        let col = x.column(j);
        let m = col.mean();
        let var = col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
        center[j] = m;
        if var > 0.0 {
            scale[j] = var.sqrt();
        } else {
            usable[j] = false;
        }
        for i in 0..n {
            xs[(i, j)] = (x[(i, j)] - m) / scale[j];
        }
    }

    let mut terms = vec!["intercept".to_string()];
    let mut roles = vec![ColumnRole::Intercept];
    let mut ucols: Vec<DVector<f64>> = vec![DVector::from_element(n, 1.0)];
    if config.include_treatment {
        terms.push("treatment".into());
        roles.push(ColumnRole::Treatment);
        ucols.push(data.treatment().clone());
    }
    for (k, name) in data.adjust_names().iter().enumerate() {
        terms.push(name.clone());
        roles.push(ColumnRole::Adjust { index: k });
        ucols.push(data.x_adjust().column(k).into_owned());
    }
    let u = DMatrix::from_columns(&ucols);
    let null_design = DesignMatrix::new(u.clone(), roles)?;
    if !null_design.dropped_columns().is_empty() {
        return Err(TehError::DegenerateDesign(
            "unpenalized terms are linearly dependent".into(),
        ));
    }
    let null_fit = glm::fit(&null_design, data.y(), family)?;
    let mu0 = (&u * &null_fit.coefficients).map(|e| family.inverse_link(e));
    let resid0 = data.y() - &mu0;
    let lambda_max = (0..p)
        .filter(|&j| usable[j])
        .map(|j| (xs.column(j).dot(&resid0) / n as f64).abs())
        .fold(0.0, f64::max);
    let lambda_max = if lambda_max > 0.0 { lambda_max } else { 1.0 };
    let eps = config
        .epsilon
        .unwrap_or(if n > p { 1e-3 } else { 1e-2 });
    let nl = config.n_lambda;
    let lambdas: Vec<f64> = (0..nl)
        .map(|k| lambda_max * eps.powf(k as f64 / (nl - 1) as f64))
        .collect();

    let problem = Problem {
        n,
        p,
        xs,
        u,
        y: data.y().clone(),
        family,
        usable,
    };

    let mut path = LassoPath {
        lambdas: Vec::with_capacity(nl),
        coefficients: Vec::with_capacity(nl),
        standardized_coefficients: Vec::with_capacity(nl),
        unpenalized_coefficients: Vec::with_capacity(nl),
        unpenalized_terms: terms,
        entry_order: Vec::new(),
        entry_lambda_index: vec![None; p],
        center,
        scale,
    };

    let mut beta = DVector::zeros(p);
    let mut gamma = null_fit.coefficients.clone();
    for (k, &lambda) in lambdas.iter().enumerate() {
        let solved = if k == 0 {
            Some((beta.clone(), gamma.clone()))
        } else {
            problem.solve_at(lambda, &beta, &gamma, config.max_sweeps)?
        };
        let Some((b, g)) = solved else {
            return Err(TehError::PathFailure {
                lambda_index: k,
                partial: Box::new(path),
            });
        };
        beta = b;
        gamma = g;
        let mut entered: Vec<usize> = (0..p)
            .filter(|&j| beta[j] != 0.0 && path.entry_lambda_index[j].is_none())
            .collect();
        entered.sort_unstable();
        for &j in &entered {
            path.entry_lambda_index[j] = Some(k);
        }
        path.entry_order.extend(entered);

        let orig: Vec<f64> = (0..p).map(|j| beta[j] / path.scale[j]).collect();
        let mut unpen: Vec<f64> = gamma.iter().copied().collect();
        unpen[0] -= (0..p).map(|j| orig[j] * path.center[j]).sum::<f64>();
        path.lambdas.push(lambda);
        path.standardized_coefficients.push(beta.iter().copied().collect());
        path.coefficients.push(orig);
        path.unpenalized_coefficients.push(unpen);
    }
    Ok(path)
}
