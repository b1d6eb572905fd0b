//! Trial data: the in-memory dataset, CSV ingestion and synthetic trial generation.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TehError};
use crate::glm::Family;
use crate::seeding::rng_from_seed;
use crate::stats::expit;

/// A two-arm randomized trial.
///
/// `treatment` holds 1 for arm A (treated) and 0 for arm B. Candidate
/// covariates are those eligible for interaction testing; adjustment
/// covariates only ever enter with a common coefficient.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialDataset {
    y: DVector<f64>,
    treatment: DVector<f64>,
    x_candidates: DMatrix<f64>,
    x_adjust: DMatrix<f64>,
    candidate_names: Vec<String>,
    adjust_names: Vec<String>,
}

impl TrialDataset {
    pub fn new(
        y: DVector<f64>,
        treatment: DVector<f64>,
        x_candidates: DMatrix<f64>,
        x_adjust: DMatrix<f64>,
        candidate_names: Vec<String>,
        adjust_names: Vec<String>,
    ) -> Result<Self> {
        let n = y.len();
        if treatment.len() != n || x_candidates.nrows() != n || x_adjust.nrows() != n {
            return Err(TehError::InvalidInput(format!(
                "row counts disagree: y {}, treatment {}, candidates {}, adjust {}",
                n,
                treatment.len(),
                x_candidates.nrows(),
                x_adjust.nrows()
            )));
        }
        if candidate_names.len() != x_candidates.ncols() {
            return Err(TehError::InvalidInput(format!(
                "{} candidate names for {} candidate columns",
                candidate_names.len(),
                x_candidates.ncols()
            )));
        }
        if adjust_names.len() != x_adjust.ncols() {
            return Err(TehError::InvalidInput(format!(
                "{} adjustment names for {} adjustment columns",
                adjust_names.len(),
                x_adjust.ncols()
            )));
        }
        let all_finite = y.iter().all(|v| v.is_finite())
            && x_candidates.iter().all(|v| v.is_finite())
            && x_adjust.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(TehError::InvalidInput("non-finite value in data".into()));
        }
        if let Some(bad) = treatment.iter().find(|&&t| t != 0.0 && t != 1.0) {
            return Err(TehError::InvalidInput(format!(
                "treatment indicator must be 0 or 1, found {bad}"
            )));
        }
        let treated = treatment.iter().filter(|&&t| t == 1.0).count();
        if treated == 0 || treated == n {
            return Err(TehError::DegenerateDesign(
                "treatment column is constant; both arms must be present".into(),
            ));
        }
        Ok(Self {
            y,
            treatment,
            x_candidates,
            x_adjust,
            candidate_names,
            adjust_names,
        })
    }

    /// Build from candidate columns only, with generated names `x0, x1, ...`.
    pub fn from_parts(
        y: DVector<f64>,
        treatment: DVector<f64>,
        x_candidates: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        let names = (0..x_candidates.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(
            y,
            treatment,
            x_candidates,
            DMatrix::zeros(n, 0),
            names,
            Vec::new(),
        )
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of interaction candidates.
    pub fn p(&self) -> usize {
        self.x_candidates.ncols()
    }

    /// Number of adjustment covariates.
    pub fn p_adjust(&self) -> usize {
        self.x_adjust.ncols()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn treatment(&self) -> &DVector<f64> {
        &self.treatment
    }

    pub fn x_candidates(&self) -> &DMatrix<f64> {
        &self.x_candidates
    }

    pub fn x_adjust(&self) -> &DMatrix<f64> {
        &self.x_adjust
    }

    pub fn candidate_names(&self) -> &[String] {
        &self.candidate_names
    }

    pub fn adjust_names(&self) -> &[String] {
        &self.adjust_names
    }

    pub fn n_treated(&self) -> usize {
        self.treatment.iter().filter(|&&t| t == 1.0).count()
    }

    pub fn with_outcome(&self, y: DVector<f64>) -> Result<Self> {
        Self::new(
            y,
            self.treatment.clone(),
            self.x_candidates.clone(),
            self.x_adjust.clone(),
            self.candidate_names.clone(),
            self.adjust_names.clone(),
        )
    }

    pub fn with_treatment(&self, treatment: DVector<f64>) -> Result<Self> {
        Self::new(
            self.y.clone(),
            treatment,
            self.x_candidates.clone(),
            self.x_adjust.clone(),
            self.candidate_names.clone(),
            self.adjust_names.clone(),
        )
    }

    pub fn with_candidates(&self, x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        Self::new(
            self.y.clone(),
            self.treatment.clone(),
            x,
            self.x_adjust.clone(),
            names,
            self.adjust_names.clone(),
        )
    }

    /// Write as CSV with columns `outcome, treatment, candidates..., adjusters...`.
    pub fn write_csv_to<W: Write>(
        &self,
        writer: W,
        outcome_col: &str,
        treatment_col: &str,
    ) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![outcome_col.to_string(), treatment_col.to_string()];
        header.extend(self.candidate_names.iter().cloned());
        header.extend(self.adjust_names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n() {
            let mut row = Vec::with_capacity(header.len());
            row.push(self.y[i].to_string());
            row.push(self.treatment[i].to_string());
            row.extend(self.x_candidates.row(i).iter().map(|v| v.to_string()));
            row.extend(self.x_adjust.row(i).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv(
        &self,
        path: impl AsRef<Path>,
        outcome_col: &str,
        treatment_col: &str,
    ) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(std::io::BufWriter::new(file), outcome_col, treatment_col)
    }
}

/// Load a trial from a CSV file. Every column that is not the outcome, the
/// treatment or an adjuster becomes an interaction candidate, in file order.
pub fn load_csv(
    path: impl AsRef<Path>,
    outcome_col: &str,
    treatment_col: &str,
    adjust_cols: &[String],
) -> Result<TrialDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, outcome_col, treatment_col, adjust_cols)
}

pub fn read_csv<R: Read>(
    reader: R,
    outcome_col: &str,
    treatment_col: &str,
    adjust_cols: &[String],
) -> Result<TrialDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TehError::MissingColumn(name.to_string()))
    };
    let outcome_idx = find(outcome_col)?;
    let treatment_idx = find(treatment_col)?;
    let adjust_idx: Vec<usize> = adjust_cols.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let candidate_idx: Vec<usize> = (0..header.len())
        .filter(|j| *j != outcome_idx && *j != treatment_idx && !adjust_idx.contains(j))
        .collect();

    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let mut values = Vec::with_capacity(header.len());
        for (c, name) in header.iter().enumerate() {
            let raw = record.get(c).unwrap_or("").trim();
            let parsed = raw.parse::<f64>().ok().filter(|v| v.is_finite());
            match parsed {
                Some(v) => values.push(v),
                None => {
                    return Err(TehError::Parse {
                        row: r + 1,
                        column: name.clone(),
                        value: raw.to_string(),
                    })
                }
            }
        }
        rows.push(values);
    }
    let n = rows.len();
    let column = |j: usize| DVector::from_iterator(n, rows.iter().map(|r| r[j]));
    let matrix = |cols: &[usize]| {
        DMatrix::from_fn(n, cols.len(), |i, k| rows[i][cols[k]])
    };
    TrialDataset::new(
        column(outcome_idx),
        column(treatment_idx),
        matrix(&candidate_idx),
        matrix(&adjust_idx),
        candidate_idx.iter().map(|&j| header[j].clone()).collect(),
        adjust_idx.iter().map(|&j| header[j].clone()).collect(),
    )
}

/// Covariate correlation for synthetic trials: a scalar exchangeable
/// correlation or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Correlation {
    Exchangeable(f64),
    Matrix(Vec<Vec<f64>>),
}

impl Default for Correlation {
    fn default() -> Self {
        Correlation::Exchangeable(0.0)
    }
}

impl Correlation {
    pub fn to_matrix(&self, p: usize) -> Result<DMatrix<f64>> {
        match self {
            Correlation::Exchangeable(rho) => Ok(DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    1.0
                } else {
                    *rho
                }
            })),
            Correlation::Matrix(rows) => {
                if rows.len() != p || rows.iter().any(|r| r.len() != p) {
                    return Err(TehError::InvalidInput(format!(
                        "correlation matrix must be {p}x{p}"
                    )));
                }
                let m = DMatrix::from_fn(p, p, |i, j| rows[i][j]);
                for i in 0..p {
                    for j in 0..p {
                        if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 {
                            return Err(TehError::Decomposition(
                                "correlation matrix is not symmetric".into(),
                            ));
                        }
                    }
                }
                Ok(m)
            }
        }
    }
}

fn default_noise_sd() -> f64 {
    1.0
}

/// Parameters of a synthetic two-arm trial.
///
/// The linear predictor is
/// `intercept + x'main + t*treatment_effect + t*x'interaction + z'adjust`,
/// so `interaction_effects` is the arm-A minus arm-B slope contrast.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    pub family: Family,
    #[serde(default)]
    pub intercept: f64,
    #[serde(default)]
    pub main_effects: Vec<f64>,
    #[serde(default)]
    pub treatment_effect: f64,
    /// Empty means no interaction.
    #[serde(default)]
    pub interaction_effects: Vec<f64>,
    #[serde(default)]
    pub adjust_effects: Vec<f64>,
    #[serde(default)]
    pub covariate_correlation: Correlation,
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticSpec {
    /// A null-signal spec: no effects of any kind.
    pub fn null(n: usize, p: usize, family: Family, seed: u64) -> Self {
        Self {
            n,
            p,
            family,
            intercept: 0.0,
            main_effects: vec![0.0; p],
            treatment_effect: 0.0,
            interaction_effects: Vec::new(),
            adjust_effects: Vec::new(),
            covariate_correlation: Correlation::Exchangeable(0.0),
            noise_sd: 1.0,
            seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn main_effects_vec(&self) -> Vec<f64> {
        if self.main_effects.is_empty() {
            vec![0.0; self.p]
        } else {
            self.main_effects.clone()
        }
    }

    pub fn interaction_vec(&self) -> Vec<f64> {
        if self.interaction_effects.is_empty() {
            vec![0.0; self.p]
        } else {
            self.interaction_effects.clone()
        }
    }

    pub fn has_interaction(&self) -> bool {
        self.interaction_effects.iter().any(|&d| d != 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 4 {
            return Err(TehError::InvalidInput("synthetic trial needs n >= 4".into()));
        }
        if self.p == 0 {
            return Err(TehError::InvalidInput("synthetic trial needs p >= 1".into()));
        }
        if !self.main_effects.is_empty() && self.main_effects.len() != self.p {
            return Err(TehError::InvalidInput(format!(
                "main_effects has length {}, expected {}",
                self.main_effects.len(),
                self.p
            )));
        }
        if !self.interaction_effects.is_empty() && self.interaction_effects.len() != self.p {
            return Err(TehError::InvalidInput(format!(
                "interaction_effects has length {}, expected {}",
                self.interaction_effects.len(),
                self.p
            )));
        }
        if !(self.noise_sd > 0.0) || !self.noise_sd.is_finite() {
            return Err(TehError::InvalidInput("noise_sd must be positive".into()));
        }
        Ok(())
    }
}

/// Draw a synthetic trial. Identical specs (seed included) give identical data.
pub fn generate_trial(spec: &SyntheticSpec) -> Result<TrialDataset> {
    spec.validate()?;
    let (n, p, pc) = (spec.n, spec.p, spec.adjust_effects.len());
    let corr = spec.covariate_correlation.to_matrix(p)?;
    let chol = Cholesky::new(corr).ok_or_else(|| {
        TehError::Decomposition("covariate correlation is not positive definite".into())
    })?;
    let lower = chol.l();
    let mut rng = rng_from_seed(spec.seed);

    let z = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let x = z * lower.transpose();

    let mut treatment: Vec<f64> = (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.0 }).collect();
    treatment.shuffle(&mut rng);
    let treatment = DVector::from_vec(treatment);

    let x_adjust = DMatrix::from_fn(n, pc, |_, _| rng.sample::<f64, _>(StandardNormal));

    let beta = DVector::from_vec(spec.main_effects_vec());
    let delta = DVector::from_vec(spec.interaction_vec());
    let beta_c = DVector::from_vec(spec.adjust_effects.clone());
    let main = &x * &beta;
    let inter = &x * &delta;
    let adj = &x_adjust * &beta_c;
    let eta = DVector::from_fn(n, |i, _| {
        spec.intercept
            + main[i]
            + treatment[i] * (spec.treatment_effect + inter[i])
            + adj[i]
    });

    let y = match spec.family {
        Family::Gaussian => DVector::from_fn(n, |i, _| {
            eta[i] + spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
        }),
        Family::Binomial => DVector::from_fn(n, |i, _| {
            if rng.random::<f64>() < expit(eta[i]) {
                1.0
            } else {
                0.0
            }
        }),
    };

    TrialDataset::new(
        y,
        treatment,
        x,
        x_adjust,
        (0..p).map(|j| format!("x{j}")).collect(),
        (0..pc).map(|j| format!("c{j}")).collect(),
    )
}
