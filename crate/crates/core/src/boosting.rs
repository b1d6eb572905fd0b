//! Gradient boosting with stumps and relative influence.
//!
//! Splitting variables are the candidates, then the treatment indicator, then
//! the adjusters. Relative influence is normalized over all of them, but only
//! candidates can ever be selected.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::data::TrialDataset;
use crate::error::{Result, TehError};
use crate::glm::Family;
use crate::seeding::rng_from_seed;
use crate::stats::expit;

pub const MIN_OBSERVATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoostConfig {
    pub n_trees: usize,
    pub shrinkage: f64,
    /// Fraction of observations drawn (without replacement) for each tree.
    pub bag_fraction: f64,
    /// Candidates with relative influence above this are selected.
    pub ri_threshold: f64,
}

impl Default for BoostConfig {
    fn default() -> Self {
        Self {
            n_trees: 500,
            shrinkage: 0.05,
            bag_fraction: 1.0,
            ri_threshold: 1.0,
        }
    }
}

impl BoostConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 {
            return Err(TehError::Config("boosting.n_trees must be at least 1".into()));
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return Err(TehError::Config("boosting.shrinkage must lie in (0, 1]".into()));
        }
        if !(self.bag_fraction > 0.0 && self.bag_fraction <= 1.0) {
            return Err(TehError::Config("boosting.bag_fraction must lie in (0, 1]".into()));
        }
        if !(self.ri_threshold >= 0.0 && self.ri_threshold < 100.0) {
            return Err(TehError::Config("boosting.ri_threshold must lie in [0, 100)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub split_variable: usize,
    pub split_value: f64,
    /// Terminal prediction for `x <= split_value`, before shrinkage.
    pub left_value: f64,
    pub right_value: f64,
    /// Squared-error reduction on the working response.
    pub improvement: f64,
}

impl Stump {
    pub fn predict(&self, x: f64) -> f64 {
        if x <= self.split_value {
            self.left_value
        } else {
            self.right_value
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostModel {
    pub family: Family,
    pub stumps: Vec<Stump>,
    pub shrinkage: f64,
    pub initial_value: f64,
    /// Candidate relative influence, percent.
    pub relative_influence: Vec<f64>,
    pub treatment_influence: f64,
    pub adjust_influence: Vec<f64>,
    pub variable_names: Vec<String>,
}

impl BoostModel {
    /// Linear-predictor scale prediction for rows of a feature matrix laid out
    /// as `[candidates | treatment | adjusters]`.
    pub fn predict(&self, features: &DMatrix<f64>) -> Vec<f64> {
        (0..features.nrows())
            .map(|i| {
                self.initial_value
                    + self.shrinkage
                        * self
                            .stumps
                            .iter()
                            .map(|s| s.predict(features[(i, s.split_variable)]))
                            .sum::<f64>()
            })
            .collect()
    }
}

/// Splitting features `[candidates | treatment | adjusters]`.
pub fn feature_matrix(data: &TrialDataset) -> DMatrix<f64> {
    let (n, p, pc) = (data.n(), data.p(), data.p_adjust());
    let mut m = DMatrix::zeros(n, p + 1 + pc);
    m.columns_mut(0, p).copy_from(data.x_candidates());
    m.set_column(p, data.treatment());
    m.columns_mut(p + 1, pc).copy_from(data.x_adjust());
    m
}

/// Best split found by a scan, with the raw side statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub variable: usize,
    pub value: f64,
    pub improvement: f64,
}

struct SortedFeatures {
    order: Vec<Vec<usize>>,
}

impl SortedFeatures {
    fn new(features: &DMatrix<f64>) -> Self {
        let order = (0..features.ncols())
            .map(|j| {
                let col = features.column(j);
                let mut idx: Vec<usize> = (0..features.nrows()).collect();
                idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
                idx
            })
            .collect();
        Self { order }
    }
}

fn scan(
    features: &DMatrix<f64>,
    sorted: &SortedFeatures,
    response: &[f64],
    in_bag: &[bool],
) -> Option<SplitCandidate> {
    let (total, count) = response
        .iter()
        .zip(in_bag)
        .filter(|(_, &b)| b)
        .fold((0.0, 0usize), |(s, c), (r, _)| (s + r, c + 1));
    if count < 2 {
        return None;
    }
    let base = total * total / count as f64;
    let mut best: Option<SplitCandidate> = None;
    for (j, order) in sorted.order.iter().enumerate() {
        let col = features.column(j);
        let mut left_sum = 0.0;
        let mut left_count = 0usize;
        let mut prev: Option<usize> = None;
        for &i in order.iter().filter(|&&i| in_bag[i]) {
            if let Some(pi) = prev {
                let (here, next) = (col[pi], col[i]);
                if next > here {
                    let nl = left_count as f64;
                    let nr = (count - left_count) as f64;
                    let right_sum = total - left_sum;
                    let improvement = left_sum * left_sum / nl + right_sum * right_sum / nr - base;
                    if best.is_none_or(|b| improvement > b.improvement) {
                        best = Some(SplitCandidate {
                            variable: j,
                            value: 0.5 * (here + next),
                            improvement: improvement.max(0.0),
                        });
                    }
                }
            }
            left_sum += response[i];
            left_count += 1;
            prev = Some(i);
        }
    }
    best
}

/// Exhaustive least-squares stump search over all variables and all
/// midpoints between consecutive distinct values. Ties go to the lowest
/// variable index, then the lowest threshold.
pub fn find_best_stump(features: &DMatrix<f64>, response: &[f64]) -> Option<SplitCandidate> {
    let sorted = SortedFeatures::new(features);
    scan(features, &sorted, response, &vec![true; response.len()])
}

pub fn fit_boost(
    data: &TrialDataset,
    family: Family,
    n_trees: usize,
    shrinkage: f64,
    seed: u64,
) -> Result<BoostModel> {
    let config = BoostConfig {
        n_trees,
        shrinkage,
        ..BoostConfig::default()
    };
    fit_boost_with(data, family, &config, seed)
}

pub fn fit_boost_with(
    data: &TrialDataset,
    family: Family,
    config: &BoostConfig,
    seed: u64,
) -> Result<BoostModel> {
    config.validate()?;
    let n = data.n();
    if n < MIN_OBSERVATIONS {
        return Err(TehError::InsufficientData {
            n,
            needed: MIN_OBSERVATIONS,
        });
    }
    let y: Vec<f64> = data.y().iter().copied().collect();
    let features = feature_matrix(data);
    let sorted = SortedFeatures::new(&features);
    let n_vars = features.ncols();

    let ybar = y.iter().sum::<f64>() / n as f64;
    let initial_value = match family {
        Family::Gaussian => ybar,
        Family::Binomial => {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(TehError::InvalidInput("binomial outcome must be 0/1".into()));
            }
            if ybar <= 0.0 || ybar >= 1.0 {
                return Err(TehError::InvalidInput("binomial outcome has a single class".into()));
            }
            (ybar / (1.0 - ybar)).ln()
        }
    };

    let mut rng = rng_from_seed(seed);
    let bag_size = ((config.bag_fraction * n as f64).floor() as usize).clamp(2, n);
    let mut f = vec![initial_value; n];
    let mut stumps = Vec::with_capacity(config.n_trees);
    let mut influence = vec![0.0; n_vars];
    let mut residual = vec![0.0; n];
    let mut in_bag = vec![true; n];

    for _ in 0..config.n_trees {
        for i in 0..n {
            residual[i] = match family {
                Family::Gaussian => y[i] - f[i],
                Family::Binomial => y[i] - expit(f[i]),
            };
        }
        if bag_size < n {
            in_bag.iter_mut().for_each(|b| *b = false);
            for i in sample(&mut rng, n, bag_size) {
                in_bag[i] = true;
            }
        }
        let Some(split) = scan(&features, &sorted, &residual, &in_bag) else {
            break;
        };
        let col = features.column(split.variable);
        let (mut num_l, mut den_l, mut num_r, mut den_r) = (0.0, 0.0, 0.0, 0.0);
        for i in (0..n).filter(|&i| in_bag[i]) {
            let h = match family {
                Family::Gaussian => 1.0,
                Family::Binomial => {
                    let p = expit(f[i]);
                    p * (1.0 - p)
                }
            };
            if col[i] <= split.value {
                num_l += residual[i];
                den_l += h;
            } else {
                num_r += residual[i];
                den_r += h;
            }
        }
        let leaf = |num: f64, den: f64| if den > 1e-12 { num / den } else { 0.0 };
        let stump = Stump {
            split_variable: split.variable,
            split_value: split.value,
            left_value: leaf(num_l, den_l),
            right_value: leaf(num_r, den_r),
            improvement: split.improvement,
        };
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += config.shrinkage * stump.predict(col[i]);
        }
        influence[split.variable] += split.improvement;
        stumps.push(stump);
    }

    let total: f64 = influence.iter().sum();
    let normalized: Vec<f64> = if total > 0.0 {
        influence.iter().map(|v| 100.0 * v / total).collect()
    } else {
        vec![0.0; n_vars]
    };
    let p = data.p();
    let mut variable_names: Vec<String> = data.candidate_names().to_vec();
    variable_names.push("treatment".into());
    variable_names.extend(data.adjust_names().iter().cloned());

    Ok(BoostModel {
        family,
        stumps,
        shrinkage: config.shrinkage,
        initial_value,
        relative_influence: normalized[..p].to_vec(),
        treatment_influence: normalized[p],
        adjust_influence: normalized[p + 1..].to_vec(),
        variable_names,
    })
}

/// Candidates with relative influence strictly above `threshold`, by
/// decreasing influence, ties by index.
pub fn select_by_influence(model: &BoostModel, threshold: f64) -> Vec<usize> {
    let ri = &model.relative_influence;
    let mut selected: Vec<usize> = (0..ri.len()).filter(|&j| ri[j] > threshold).collect();
    selected.sort_by(|&a, &b| ri[b].total_cmp(&ri[a]).then(a.cmp(&b)));
    selected
}
