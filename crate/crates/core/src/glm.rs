//! Exponential-family GLMs fitted by iteratively re-weighted least squares,
//! the additive and arm-specific design builders, and the nested-model
//! likelihood-ratio test.
//!
//! Designs use two arm intercepts instead of an intercept plus a treatment
//! column; the two parameterizations span the same space.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Result, TehError};
use crate::stats::{chi_square_sf, expit, normal_two_sided};

/// Outcome family with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Normal outcome, identity link.
    #[default]
    Gaussian,
    /// Binary outcome, logit link.
    Binomial,
}

impl Family {
    pub fn inverse_link(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Binomial => expit(eta),
        }
    }

    fn check_support(self, y: &DVector<f64>) -> Result<()> {
        if self == Family::Binomial {
            if let Some(v) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
                return Err(TehError::InvalidInput(format!(
                    "binomial outcome must be 0/1, found {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    /// Treated (indicator 1).
    A,
    /// Control (indicator 0).
    B,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum ColumnRole {
    Intercept,
    Treatment,
    Candidate { index: usize },
    ArmIntercept { arm: Arm },
    ArmCandidate { arm: Arm, index: usize },
    Adjust { index: usize },
}

/// Linear map applied to the candidate block: `(X - offset') * weights`.
///
/// `weights` is p x K. The offset only shifts columns, which the arm
/// intercepts absorb, so it never changes a fit's likelihood.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ProjectionRepr", into = "ProjectionRepr")]
pub struct Projection {
    pub weights: DMatrix<f64>,
    pub offset: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct ProjectionRepr {
    /// Row-major p x K.
    weights: Vec<Vec<f64>>,
    offset: Vec<f64>,
}

impl From<Projection> for ProjectionRepr {
    fn from(p: Projection) -> Self {
        ProjectionRepr {
            weights: p
                .weights
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            offset: p.offset.iter().copied().collect(),
        }
    }
}

impl TryFrom<ProjectionRepr> for Projection {
    type Error = String;

    fn try_from(r: ProjectionRepr) -> std::result::Result<Self, String> {
        let p = r.weights.len();
        let k = r.weights.first().map_or(0, Vec::len);
        if r.weights.iter().any(|row| row.len() != k) || r.offset.len() != p {
            return Err("ragged projection".into());
        }
        Ok(Projection {
            weights: DMatrix::from_fn(p, k, |i, j| r.weights[i][j]),
            offset: DVector::from_vec(r.offset),
        })
    }
}

impl Projection {
    pub fn new(weights: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != weights.nrows() {
            return Err(TehError::InvalidInput(
                "projection offset length must match its row count".into(),
            ));
        }
        Ok(Self { weights, offset })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            weights: DMatrix::identity(p, p),
            offset: DVector::zeros(p),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn k(&self) -> usize {
        self.weights.ncols()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.offset[j]);
        }
        centered * &self.weights
    }

    /// Keep the first `k` columns.
    pub fn truncate(&self, k: usize) -> Self {
        Self {
            weights: self.weights.columns(0, k.min(self.k())).into_owned(),
            offset: self.offset.clone(),
        }
    }
}

/// Which candidate information enters a selected design.
#[derive(Debug, Clone, Copy)]
pub enum Selection<'a> {
    Indices(&'a [usize]),
    Projection(&'a Projection),
}

impl Selection<'_> {
    fn materialize(&self, data: &TrialDataset) -> Result<DMatrix<f64>> {
        let x = data.x_candidates();
        match self {
            Selection::Indices(idx) => {
                if idx.is_empty() {
                    return Err(TehError::EmptySelection);
                }
                if let Some(bad) = idx.iter().find(|&&j| j >= data.p()) {
                    return Err(TehError::InvalidInput(format!(
                        "candidate index {bad} out of range (p = {})",
                        data.p()
                    )));
                }
                Ok(x.select_columns(idx.iter()))
            }
            Selection::Projection(v) => {
                if v.k() == 0 {
                    return Err(TehError::EmptySelection);
                }
                if v.input_dim() != data.p() || v.k() > data.p() {
                    return Err(TehError::InvalidInput(format!(
                        "projection is {}x{}, data has p = {}",
                        v.input_dim(),
                        v.k(),
                        data.p()
                    )));
                }
                Ok(v.apply(x))
            }
        }
    }
}

/// Relative pivot below which a column counts as linearly dependent on the
/// columns before it.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Greedy rank repair on a Gram matrix. Columns are visited left to right and
/// a column is dropped when its Cholesky pivot, relative to its own squared
/// norm, falls below `RANK_TOLERANCE`, or when the column is numerically zero
/// relative to the largest column. Later columns are therefore the ones
/// dropped from any dependent set.
pub fn rank_repair(gram: &DMatrix<f64>) -> Vec<usize> {
    let q = gram.nrows();
    let max_diag = (0..q).map(|j| gram[(j, j)]).fold(0.0, f64::max);
    let mut kept: Vec<usize> = Vec::with_capacity(q);
    // rows of the partial Cholesky factor, indexed by position in `kept`
    let mut factor: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut dropped = Vec::new();
    for j in 0..q {
        let gjj = gram[(j, j)];
        if !(gjj > RANK_TOLERANCE * RANK_TOLERANCE * max_diag) {
            dropped.push(j);
            continue;
        }
        let mut row = Vec::with_capacity(kept.len() + 1);
        for (a, &k) in kept.iter().enumerate() {
            let mut s = gram[(j, k)];
            for b in 0..a {
                s -= row[b] * factor[a][b];
            }
            row.push(s / factor[a][a]);
        }
        let d = gjj - row.iter().map(|v| v * v).sum::<f64>();
        if d <= RANK_TOLERANCE * gjj {
            dropped.push(j);
            continue;
        }
        row.push(d.sqrt());
        factor.push(row);
        kept.push(j);
    }
    dropped
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    columns: DMatrix<f64>,
    roles: Vec<ColumnRole>,
    dropped_columns: Vec<usize>,
    dropped_roles: Vec<ColumnRole>,
}

impl DesignMatrix {
    /// Build a design, removing linearly dependent columns. Dropped indices
    /// refer to positions in `columns` as supplied.
    pub fn new(columns: DMatrix<f64>, roles: Vec<ColumnRole>) -> Result<Self> {
        if roles.len() != columns.ncols() {
            return Err(TehError::InvalidInput(format!(
                "{} roles for {} columns",
                roles.len(),
                columns.ncols()
            )));
        }
        let gram = columns.tr_mul(&columns);
        let dropped = rank_repair(&gram);
        let kept: Vec<usize> = (0..columns.ncols())
            .filter(|j| !dropped.contains(j))
            .collect();
        Ok(Self {
            columns: columns.select_columns(kept.iter()),
            roles: kept.iter().map(|&j| roles[j]).collect(),
            dropped_roles: dropped.iter().map(|&j| roles[j]).collect(),
            dropped_columns: dropped,
        })
    }

    pub fn width(&self) -> usize {
        self.columns.ncols()
    }

    pub fn nrows(&self) -> usize {
        self.columns.nrows()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    pub fn roles(&self) -> &[ColumnRole] {
        &self.roles
    }

    pub fn dropped_columns(&self) -> &[usize] {
        &self.dropped_columns
    }

    pub fn dropped_roles(&self) -> &[ColumnRole] {
        &self.dropped_roles
    }

    pub fn position(&self, role: ColumnRole) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }
}

fn arm_columns(data: &TrialDataset) -> (DVector<f64>, DVector<f64>) {
    let a = data.treatment().clone();
    let b = a.map(|t| 1.0 - t);
    (a, b)
}

fn assemble(blocks: Vec<(DMatrix<f64>, Vec<ColumnRole>)>, n: usize) -> Result<DesignMatrix> {
    let width: usize = blocks.iter().map(|(m, _)| m.ncols()).sum();
    let mut columns = DMatrix::zeros(n, width);
    let mut roles = Vec::with_capacity(width);
    let mut at = 0;
    for (m, r) in blocks {
        columns.columns_mut(at, m.ncols()).copy_from(&m);
        at += m.ncols();
        roles.extend(r);
    }
    DesignMatrix::new(columns, roles)
}

fn arm_intercept_block(data: &TrialDataset) -> (DMatrix<f64>, Vec<ColumnRole>) {
    let (a, b) = arm_columns(data);
    let mut m = DMatrix::zeros(data.n(), 2);
    m.set_column(0, &a);
    m.set_column(1, &b);
    (
        m,
        vec![
            ColumnRole::ArmIntercept { arm: Arm::A },
            ColumnRole::ArmIntercept { arm: Arm::B },
        ],
    )
}

fn adjust_block(data: &TrialDataset) -> (DMatrix<f64>, Vec<ColumnRole>) {
    (
        data.x_adjust().clone(),
        (0..data.p_adjust())
            .map(|index| ColumnRole::Adjust { index })
            .collect(),
    )
}

/// Additive design `[X_S | arm-A intercept | arm-B intercept | X_C]`.
pub fn build_additive_design(data: &TrialDataset) -> Result<DesignMatrix> {
    additive_from(data.x_candidates().clone(), data)
}

/// Additive design on a selected or projected candidate block.
pub fn build_selected_additive_design(
    data: &TrialDataset,
    selection: Selection<'_>,
) -> Result<DesignMatrix> {
    additive_from(selection.materialize(data)?, data)
}

fn additive_from(xs: DMatrix<f64>, data: &TrialDataset) -> Result<DesignMatrix> {
    let roles = (0..xs.ncols())
        .map(|index| ColumnRole::Candidate { index })
        .collect();
    assemble(
        vec![(xs, roles), arm_intercept_block(data), adjust_block(data)],
        data.n(),
    )
}

/// Arm-specific design
/// `[diag(t) X_SK | diag(1 - t) X_SK | arm-A intercept | arm-B intercept | X_C]`.
pub fn build_interaction_design(
    data: &TrialDataset,
    selection: Selection<'_>,
) -> Result<DesignMatrix> {
    let xs = selection.materialize(data)?;
    let k = xs.ncols();
    let (a, b) = arm_columns(data);
    let mut block_a = xs.clone();
    let mut block_b = xs;
    for j in 0..k {
        block_a.column_mut(j).component_mul_assign(&a);
        block_b.column_mut(j).component_mul_assign(&b);
    }
    let roles_a = (0..k)
        .map(|index| ColumnRole::ArmCandidate { arm: Arm::A, index })
        .collect();
    let roles_b = (0..k)
        .map(|index| ColumnRole::ArmCandidate { arm: Arm::B, index })
        .collect();
    assemble(
        vec![
            (block_a, roles_a),
            (block_b, roles_b),
            arm_intercept_block(data),
            adjust_block(data),
        ],
        data.n(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative log-likelihood change that counts as converged.
    pub tolerance: f64,
    /// Coefficient sup-norm beyond which a binomial fit is declared separated.
    pub separation_threshold: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tolerance: 1e-10,
            separation_threshold: 1e4,
        }
    }
}

/// Profiled gaussian variance floor; keeps interpolating fits finite.
pub const VARIANCE_FLOOR: f64 = 1e-12;
const PROB_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub family: Family,
    /// One entry per design column; dropped columns hold 0.
    pub coefficients: DVector<f64>,
    /// Inverse Fisher information (times dispersion for gaussian). Rows and
    /// columns of dropped coefficients are 0.
    pub covariance: DMatrix<f64>,
    pub std_errors: DVector<f64>,
    pub log_likelihood: f64,
    pub deviance: f64,
    /// Gaussian: RSS / (n - rank). Binomial: 1.
    pub dispersion: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Design columns removed during fitting because the weighted Gram
    /// matrix was rank deficient.
    pub dropped_columns: Vec<usize>,
    pub roles: Vec<ColumnRole>,
    pub n: usize,
}

impl GlmFit {
    /// Number of estimated (retained) coefficients.
    pub fn rank(&self) -> usize {
        self.coefficients.len() - self.dropped_columns.len()
    }

    pub fn position(&self, role: ColumnRole) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }

    pub fn is_dropped(&self, column: usize) -> bool {
        self.dropped_columns.contains(&column)
    }

    /// Two-sided Wald p-value (normal reference) for one coefficient.
    /// Dropped coefficients get p = 1.
    pub fn wald_p_value(&self, column: usize) -> f64 {
        normal_two_sided(self.wald_z(column))
    }

    pub fn wald_z(&self, column: usize) -> f64 {
        let se = self.std_errors[column];
        if self.is_dropped(column) || !(se > 0.0) {
            return 0.0;
        }
        self.coefficients[column] / se
    }
}

/// Exact log-likelihood at the given linear predictor.
fn log_likelihood_at(family: Family, y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    match family {
        Family::Gaussian => {
            let n = y.len() as f64;
            let rss: f64 = y.iter().zip(eta.iter()).map(|(a, b)| (a - b).powi(2)).sum();
            let sigma2 = (rss / n).max(VARIANCE_FLOOR);
            -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0)
        }
        Family::Binomial => y
            .iter()
            .zip(eta.iter())
            .map(|(&yi, &e)| {
                let p = expit(e).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
                yi * p.ln() + (1.0 - yi) * (1.0 - p).ln()
            })
            .sum(),
    }
}

fn deviance_at(family: Family, y: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    match family {
        Family::Gaussian => y.iter().zip(eta.iter()).map(|(a, b)| (a - b).powi(2)).sum(),
        Family::Binomial => -2.0 * log_likelihood_at(family, y, eta),
    }
}

/// Log-likelihood of `fit` recomputed from its coefficients. Gaussian uses the
/// profiled variance RSS / n.
pub fn log_likelihood(
    fit: &GlmFit,
    design: &DesignMatrix,
    y: &DVector<f64>,
    family: Family,
) -> Result<f64> {
    if design.width() != fit.coefficients.len() || design.nrows() != y.len() {
        return Err(TehError::InvalidInput(
            "fit, design and outcome dimensions disagree".into(),
        ));
    }
    let eta = design.columns() * &fit.coefficients;
    Ok(log_likelihood_at(family, y, &eta))
}

pub fn fit(design: &DesignMatrix, y: &DVector<f64>, family: Family) -> Result<GlmFit> {
    fit_with(design, y, family, &FitOptions::default())
}

struct WeightedSystem {
    gram: DMatrix<f64>,
    rhs: DVector<f64>,
}

fn weighted_system(x: &DMatrix<f64>, w: &DVector<f64>, z: &DVector<f64>) -> WeightedSystem {
    let mut xw = x.clone();
    let sw = w.map(f64::sqrt);
    for mut col in xw.column_iter_mut() {
        col.component_mul_assign(&sw);
    }
    let zw = z.component_mul(&sw);
    WeightedSystem {
        gram: xw.tr_mul(&xw),
        rhs: xw.tr_mul(&zw),
    }
}

fn scatter(values: &DVector<f64>, kept: &[usize], q: usize) -> DVector<f64> {
    let mut out = DVector::zeros(q);
    for (a, &j) in kept.iter().enumerate() {
        out[j] = values[a];
    }
    out
}

fn scatter_matrix(values: &DMatrix<f64>, kept: &[usize], q: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(q, q);
    for (a, &i) in kept.iter().enumerate() {
        for (b, &j) in kept.iter().enumerate() {
            out[(i, j)] = values[(a, b)];
        }
    }
    out
}

fn solve_spd(gram: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<(DVector<f64>, Cholesky<f64, nalgebra::Dyn>)> {
    let chol = Cholesky::new(gram.clone())?;
    let sol = chol.solve(rhs);
    Some((sol, chol))
}

/// Fit a GLM by IRLS. The gaussian case is a single weighted least squares
/// solve. Binomial iterations use step halving whenever the likelihood drops.
pub fn fit_with(
    design: &DesignMatrix,
    y: &DVector<f64>,
    family: Family,
    opts: &FitOptions,
) -> Result<GlmFit> {
    let n = design.nrows();
    let q = design.width();
    if y.len() != n {
        return Err(TehError::InvalidInput(format!(
            "outcome length {} does not match design rows {n}",
            y.len()
        )));
    }
    if n < q {
        return Err(TehError::InsufficientData { n, needed: q });
    }
    family.check_support(y)?;
    let x = design.columns();

    match family {
        Family::Gaussian => {
            let w = DVector::from_element(n, 1.0);
            let sys = weighted_system(x, &w, y);
            let dropped = rank_repair(&sys.gram);
            let kept: Vec<usize> = (0..q).filter(|j| !dropped.contains(j)).collect();
            let gram = sys.gram.select_rows(kept.iter()).select_columns(kept.iter());
            let rhs = sys.rhs.select_rows(kept.iter());
            let (beta_k, chol) = solve_spd(&gram, &rhs).ok_or_else(|| {
                TehError::Decomposition("normal equations are not positive definite".into())
            })?;
            let beta = scatter(&beta_k, &kept, q);
            let eta = x * &beta;
            let rss = deviance_at(family, y, &eta);
            let resid_df = n.saturating_sub(kept.len()).max(1) as f64;
            let dispersion = rss / resid_df;
            let cov = scatter_matrix(&(chol.inverse() * dispersion), &kept, q);
            Ok(finish(
                family,
                beta,
                cov,
                log_likelihood_at(family, y, &eta),
                rss,
                dispersion,
                1,
                true,
                dropped,
                design,
            ))
        }
        Family::Binomial => fit_binomial(design, y, opts),
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    family: Family,
    coefficients: DVector<f64>,
    covariance: DMatrix<f64>,
    log_likelihood: f64,
    deviance: f64,
    dispersion: f64,
    iterations: usize,
    converged: bool,
    dropped_columns: Vec<usize>,
    design: &DesignMatrix,
) -> GlmFit {
    let std_errors = DVector::from_fn(covariance.nrows(), |i, _| covariance[(i, i)].max(0.0).sqrt());
    GlmFit {
        family,
        coefficients,
        covariance,
        std_errors,
        log_likelihood,
        deviance,
        dispersion,
        iterations,
        converged,
        dropped_columns,
        roles: design.roles().to_vec(),
        n: design.nrows(),
    }
}

fn binomial_working(y: &DVector<f64>, eta: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = y.len();
    let mut w = DVector::zeros(n);
    let mut z = DVector::zeros(n);
    for i in 0..n {
        let mu = expit(eta[i]).clamp(1e-10, 1.0 - 1e-10);
        let wi = mu * (1.0 - mu);
        w[i] = wi;
        z[i] = eta[i] + (y[i] - mu) / wi;
    }
    (w, z)
}

fn fit_binomial(design: &DesignMatrix, y: &DVector<f64>, opts: &FitOptions) -> Result<GlmFit> {
    let family = Family::Binomial;
    let x = design.columns();
    let (n, q) = (design.nrows(), design.width());

    let mut eta = y.map(|v| {
        let mu = (v + 0.5) / 2.0;
        (mu / (1.0 - mu)).ln()
    });
    let mut kept: Option<Vec<usize>> = None;
    let mut dropped = Vec::new();
    let mut beta = DVector::zeros(q);
    let mut ll_old = f64::NEG_INFINITY;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        iterations += 1;
        let (w, z) = binomial_working(y, &eta);
        let sys = weighted_system(x, &w, &z);
        let cols = kept.get_or_insert_with(|| {
            dropped = rank_repair(&sys.gram);
            (0..q).filter(|j| !dropped.contains(j)).collect()
        });
        let gram = sys.gram.select_rows(cols.iter()).select_columns(cols.iter());
        let rhs = sys.rhs.select_rows(cols.iter());
        let Some((beta_k, _)) = solve_spd(&gram, &rhs) else {
            let max_coef = beta.amax();
            if max_coef > 10.0 {
                return Err(TehError::Separation { max_coefficient: max_coef });
            }
            return Err(TehError::FitFailure {
                iterations,
                diagnostic: "weighted normal equations became singular".into(),
                last_coefficients: beta.iter().copied().collect(),
            });
        };
        let mut candidate = scatter(&beta_k, cols, q);
        let mut eta_new = x * &candidate;
        let mut ll_new = log_likelihood_at(family, y, &eta_new);

        // step halving on likelihood decrease
        let mut halvings = 0;
        while ll_old.is_finite()
            && (ll_new < ll_old - 1e-12 * ll_old.abs() || !ll_new.is_finite())
            && halvings < 30
        {
            candidate = (&candidate + &beta) * 0.5;
            eta_new = x * &candidate;
            ll_new = log_likelihood_at(family, y, &eta_new);
            halvings += 1;
        }

        let change = (ll_new - ll_old).abs() / (ll_new.abs() + 0.1);
        beta = candidate;
        eta = eta_new;
        let done = ll_old.is_finite() && change < opts.tolerance;
        ll_old = ll_new;
        if done {
            converged = true;
            break;
        }
    }

    let max_coef = beta.amax();
    if max_coef > opts.separation_threshold {
        return Err(TehError::Separation { max_coefficient: max_coef });
    }
    let perfectly_fitted = y
        .iter()
        .zip(eta.iter())
        .all(|(&yi, &e)| (yi - expit(e)).abs() < 1e-6);
    if perfectly_fitted {
        return Err(TehError::Separation { max_coefficient: max_coef });
    }
    if !converged {
        return Err(TehError::FitFailure {
            iterations,
            diagnostic: format!("relative log-likelihood change still above {:e}", opts.tolerance),
            last_coefficients: beta.iter().copied().collect(),
        });
    }

    let cols = kept.unwrap_or_default();
    let (w, z) = binomial_working(y, &eta);
    let sys = weighted_system(x, &w, &z);
    let gram = sys.gram.select_rows(cols.iter()).select_columns(cols.iter());
    let chol = Cholesky::new(gram).ok_or_else(|| {
        TehError::Decomposition("Fisher information is not positive definite".into())
    })?;
    let cov = scatter_matrix(&chol.inverse(), &cols, q);
    let ll = log_likelihood_at(family, y, &eta);
    debug_assert!(n >= cols.len());
    Ok(finish(
        family,
        beta,
        cov,
        ll,
        -2.0 * ll,
        1.0,
        iterations,
        converged,
        dropped,
        design,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrtResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Likelihood-ratio test of `null_fit` nested in `alt_fit`.
pub fn lrt(null_fit: &GlmFit, alt_fit: &GlmFit, df: usize) -> Result<LrtResult> {
    if df == 0 {
        return Err(TehError::Nesting("degrees of freedom must be positive".into()));
    }
    let raw = 2.0 * (alt_fit.log_likelihood - null_fit.log_likelihood);
    let tol = 1e-6 * null_fit.log_likelihood.abs().max(1.0);
    if raw < -tol {
        return Err(TehError::Nesting(format!(
            "alternative likelihood is lower than the null by {:.3e}",
            -raw / 2.0
        )));
    }
    let statistic = raw.max(0.0);
    Ok(LrtResult {
        statistic,
        df,
        p_value: chi_square_sf(statistic, df),
    })
}

/// Likelihood-ratio test with df taken from the retained ranks of the fits.
pub fn lrt_nested(null_fit: &GlmFit, alt_fit: &GlmFit) -> Result<LrtResult> {
    let df = alt_fit.rank() as i64 - null_fit.rank() as i64;
    if df <= 0 {
        if df == 0 && (alt_fit.log_likelihood - null_fit.log_likelihood).abs() <= 1e-9 {
            return Ok(LrtResult {
                statistic: 0.0,
                df: 0,
                p_value: 1.0,
            });
        }
        return Err(TehError::Nesting(format!(
            "alternative rank {} does not exceed null rank {}",
            alt_fit.rank(),
            null_fit.rank()
        )));
    }
    lrt(null_fit, alt_fit, df as usize)
}

/// Standardized arm differences `(b_Aj - b_Bj) / SE_j` for the first `k`
/// candidate coordinates of an arm-specific fit, using the joint covariance.
pub fn standardized_arm_difference(fit: &GlmFit, k: usize) -> Result<Vec<f64>> {
    (0..k).map(|j| standardized_arm_difference_at(fit, j)).collect()
}

pub fn standardized_arm_difference_at(fit: &GlmFit, index: usize) -> Result<f64> {
    let a = fit.position(ColumnRole::ArmCandidate { arm: Arm::A, index });
    let b = fit.position(ColumnRole::ArmCandidate { arm: Arm::B, index });
    let (Some(a), Some(b)) = (a, b) else {
        return Err(TehError::DegenerateVariance { index });
    };
    if fit.is_dropped(a) || fit.is_dropped(b) {
        return Err(TehError::DegenerateVariance { index });
    }
    let c = &fit.covariance;
    let var = c[(a, a)] + c[(b, b)] - 2.0 * c[(a, b)];
    if !(var > 0.0) {
        return Err(TehError::DegenerateVariance { index });
    }
    Ok((fit.coefficients[a] - fit.coefficients[b]) / var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    fn toy(n: usize, p: usize, pc: usize) -> TrialDataset {
        let t = DVector::from_fn(n, |i, _| (i % 2) as f64);
        let x = DMatrix::from_fn(n, p, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.1 * j as f64);
        let c = DMatrix::from_fn(n, pc, |i, _| (i as f64).sin());
        TrialDataset::new(
            DVector::from_fn(n, |i, _| i as f64),
            t,
            x,
            c,
            (0..p).map(|j| format!("x{j}")).collect(),
            (0..pc).map(|j| format!("c{j}")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn additive_design_layout() {
        let d = toy(4, 2, 0);
        let design = build_additive_design(&d).unwrap();
        assert_eq!(design.width(), 4);
        assert_eq!(
            design.roles(),
            &[
                ColumnRole::Candidate { index: 0 },
                ColumnRole::Candidate { index: 1 },
                ColumnRole::ArmIntercept { arm: Arm::A },
                ColumnRole::ArmIntercept { arm: Arm::B },
            ]
        );
        let d = toy(6, 2, 1);
        let design = build_additive_design(&d).unwrap();
        assert_eq!(design.width(), 5);
        assert_eq!(design.roles()[4], ColumnRole::Adjust { index: 0 });
    }

    #[test]
    fn duplicate_candidate_is_dropped() {
        let d = toy(6, 1, 0);
        let x = d.x_candidates();
        let dup = DMatrix::from_fn(6, 2, |i, _| x[(i, 0)]);
        let d = d.with_candidates(dup, vec!["a".into(), "b".into()]).unwrap();
        let design = build_additive_design(&d).unwrap();
        assert_eq!(design.width(), 3);
        assert_eq!(design.dropped_columns(), &[1]);
    }

    #[test]
    fn interaction_masks_by_arm() {
        let d = TrialDataset::from_parts(
            dvector![0.0, 1.0, 2.0, 3.0],
            dvector![1.0, 1.0, 0.0, 0.0],
            dmatrix![1.0; 2.0; 3.0; 4.0],
        )
        .unwrap();
        let design = build_interaction_design(&d, Selection::Indices(&[0])).unwrap();
        let cols = design.columns();
        assert_eq!(cols.column(0).as_slice(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(cols.column(1).as_slice(), &[0.0, 0.0, 3.0, 4.0]);
        assert!(matches!(
            build_interaction_design(&d, Selection::Indices(&[])),
            Err(TehError::EmptySelection)
        ));
    }

    #[test]
    fn identity_projection_matches_full_selection() {
        let d = toy(12, 3, 1);
        let v = Projection::identity(3);
        let a = build_interaction_design(&d, Selection::Projection(&v)).unwrap();
        let b = build_interaction_design(&d, Selection::Indices(&[0, 1, 2])).unwrap();
        assert_eq!(a.columns(), b.columns());
    }

    #[test]
    fn gaussian_exact_interpolation() {
        let cols = dmatrix![1.0, 1.0; 2.0, 1.0; 3.0, 1.0];
        let design = DesignMatrix::new(
            cols,
            vec![ColumnRole::Candidate { index: 0 }, ColumnRole::Intercept],
        )
        .unwrap();
        let f = fit(&design, &dvector![1.0, 2.0, 3.0], Family::Gaussian).unwrap();
        assert!((f.coefficients[0] - 1.0).abs() < 1e-12);
        assert!(f.coefficients[1].abs() < 1e-12);
        assert!(f.deviance < 1e-20);
        // variance floor keeps the likelihood finite
        assert!(f.log_likelihood.is_finite());
        let capped = -1.5 * ((2.0 * std::f64::consts::PI * VARIANCE_FLOOR).ln() + 1.0);
        assert!((f.log_likelihood - capped).abs() < 1e-9);
    }

    #[test]
    fn binomial_symmetric_mle_is_zero() {
        let cols = dmatrix![1.0, 1.0; -1.0, 1.0; 1.0, 1.0; -1.0, 1.0];
        let design = DesignMatrix::new(
            cols,
            vec![ColumnRole::Candidate { index: 0 }, ColumnRole::Intercept],
        )
        .unwrap();
        let y = dvector![1.0, 1.0, 0.0, 0.0];
        let f = fit(&design, &y, Family::Binomial).unwrap();
        assert!(f.coefficients[0].abs() < 1e-8);
        assert!(f.coefficients[1].abs() < 1e-8);
        assert!((f.log_likelihood - 4.0 * 0.5f64.ln()).abs() < 1e-12);
        let ll = log_likelihood(&f, &design, &y, Family::Binomial).unwrap();
        assert!((ll - 4.0 * 0.5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn complete_separation_is_reported() {
        let cols = dmatrix![1.0, 1.0; 2.0, 1.0; 3.0, 1.0; 4.0, 1.0];
        let design = DesignMatrix::new(
            cols,
            vec![ColumnRole::Candidate { index: 0 }, ColumnRole::Intercept],
        )
        .unwrap();
        let y = dvector![0.0, 0.0, 1.0, 1.0];
        assert!(matches!(
            fit(&design, &y, Family::Binomial),
            Err(TehError::Separation { .. })
        ));
    }

    #[test]
    fn binomial_rejects_non_binary_outcome() {
        let design = DesignMatrix::new(dmatrix![1.0; 1.0], vec![ColumnRole::Intercept]).unwrap();
        assert!(matches!(
            fit(&design, &dvector![0.0, 2.0], Family::Binomial),
            Err(TehError::InvalidInput(_))
        ));
    }

    #[test]
    fn lrt_edge_cases() {
        let d = toy(20, 2, 0);
        let design = build_additive_design(&d).unwrap();
        let f = fit(&design, d.y(), Family::Gaussian).unwrap();
        let r = lrt(&f, &f, 1).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert!(matches!(lrt(&f, &f, 0), Err(TehError::Nesting(_))));
        let mut worse = f.clone();
        worse.log_likelihood -= 10.0;
        assert!(matches!(lrt(&f, &worse, 1), Err(TehError::Nesting(_))));
    }

    #[test]
    fn arm_copy_gives_zero_difference() {
        // arm B rows are an exact copy of arm A rows
        let xa = [0.3, -1.2, 0.8, 2.0, -0.4, 1.1];
        let ya = [1.0, -0.5, 0.7, 2.2, 0.1, 0.9];
        let n = 12;
        let x = DMatrix::from_fn(n, 1, |i, _| xa[i % 6]);
        let y = DVector::from_fn(n, |i, _| ya[i % 6]);
        let t = DVector::from_fn(n, |i, _| if i < 6 { 1.0 } else { 0.0 });
        let d = TrialDataset::from_parts(y, t, x).unwrap();
        let design = build_interaction_design(&d, Selection::Indices(&[0])).unwrap();
        let f = fit(&design, d.y(), Family::Gaussian).unwrap();
        let z = standardized_arm_difference(&f, 1).unwrap();
        assert!(z[0].abs() < 1e-10);
    }

    #[test]
    fn rank_repair_drops_zero_column() {
        let gram = dmatrix![4.0, 0.0; 0.0, 0.0];
        assert_eq!(rank_repair(&gram), vec![1]);
    }

    #[test]
    fn projection_serde_round_trip() {
        let p = Projection::new(dmatrix![1.0, 2.0; 3.0, 4.0; 5.0, 6.0], dvector![0.5, 0.0, 1.0]).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        let back: Projection = serde_json::from_str(&s).unwrap();
        assert_eq!(p, back);
    }
}
