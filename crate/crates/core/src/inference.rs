//! Stage-2 interaction test and the Monte Carlo machinery around it: null
//! simulation with p-value correction, the independence validator, and
//! paired power studies.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_trial, SyntheticSpec, TrialDataset};
use crate::error::{Result, TehError};
use crate::glm::{
    self, build_additive_design, build_interaction_design, build_selected_additive_design,
    ColumnRole, Family, Projection, Selection,
};
use crate::pca::compute_pca;
use crate::screening::{k_schedule, screen, KRule, ScreeningResult, ScreeningSettings};
use crate::seeding::{replicate_seed, rng_from_seed};
use crate::stats::{correlation, ks_distance_uniform, normal_two_sided, rejection_rate};

/// Largest tolerated share of failed replicates in a simulation.
pub const MAX_FAILURE_RATE: f64 = 0.05;

/// Recorded when rank repair leaves fewer testable directions than K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DfRepair {
    pub requested: usize,
    pub tested: usize,
    pub dropped_null: Vec<ColumnRole>,
    pub dropped_alternative: Vec<ColumnRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionTest {
    pub statistic: f64,
    pub df: usize,
    pub p_raw: f64,
    pub p_corrected: Option<f64>,
    /// One entry per tested direction; `None` where the arm contrast was
    /// removed by rank repair.
    pub standardized_differences: Vec<Option<f64>>,
    pub df_repair: Option<DfRepair>,
    pub null_log_likelihood: f64,
    pub alternative_log_likelihood: f64,
    pub screening: ScreeningResult,
    pub null_sim_size: Option<usize>,
}

impl InteractionTest {
    /// Attach an empirical correction from a simulated null.
    pub fn corrected(mut self, null: &NullDistribution) -> Self {
        self.p_corrected = Some(correct_pvalue(self.p_raw, null));
        self.null_sim_size = Some(null.reps);
        self
    }
}

fn check_screening(data: &TrialDataset, screening: &ScreeningResult) -> Result<()> {
    let p = data.p();
    if screening.k_selected == 0 {
        return Err(TehError::EmptySelection);
    }
    match &screening.projection {
        Some(proj) => {
            if proj.input_dim() != p {
                return Err(TehError::InvalidInput(format!(
                    "projection expects {} covariates, data has {p}",
                    proj.input_dim()
                )));
            }
            if proj.k() != screening.k_selected {
                return Err(TehError::InvalidInput(
                    "projection width differs from K".into(),
                ));
            }
        }
        None => {
            if let Some(&j) = screening.selected_indices().iter().find(|&&j| j >= p) {
                return Err(TehError::InvalidInput(format!(
                    "screened index {j} out of range for {p} candidates"
                )));
            }
        }
    }
    Ok(())
}

/// Likelihood-ratio test of arm-specific against pooled slopes on the
/// screened (or projected) covariates.
pub fn test_interaction(
    data: &TrialDataset,
    family: Family,
    screening: &ScreeningResult,
) -> Result<InteractionTest> {
    check_screening(data, screening)?;
    let selection = screening.selection();
    let k = screening.k_selected;
    let null_design = build_selected_additive_design(data, selection)?;
    let alt_design = build_interaction_design(data, selection)?;
    let null_fit = glm::fit(&null_design, data.y(), family)?;
    let alt_fit = glm::fit(&alt_design, data.y(), family)?;
    let lrt = glm::lrt_nested(&null_fit, &alt_fit)?;
    let df_repair = (lrt.df != k).then(|| DfRepair {
        requested: k,
        tested: lrt.df,
        dropped_null: null_design.dropped_roles().to_vec(),
        dropped_alternative: alt_design.dropped_roles().to_vec(),
    });
    let standardized_differences = (0..k)
        .map(|j| glm::standardized_arm_difference_at(&alt_fit, j).ok())
        .collect();
    Ok(InteractionTest {
        statistic: lrt.statistic,
        df: lrt.df,
        p_raw: lrt.p_value,
        p_corrected: None,
        standardized_differences,
        df_repair,
        null_log_likelihood: null_fit.log_likelihood,
        alternative_log_likelihood: alt_fit.log_likelihood,
        screening: screening.clone(),
        null_sim_size: None,
    })
}

/// A fully specified two-stage analysis: family, K rule and Stage-1 settings.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub label: String,
    pub family: Family,
    pub k_rule: KRule,
    pub screening: ScreeningSettings,
}

impl Pipeline {
    pub fn k_for(&self, n: usize) -> Result<usize> {
        k_schedule(n, &self.k_rule)
    }

    pub fn screen(&self, data: &TrialDataset, seed: u64) -> Result<ScreeningResult> {
        let k = self.k_for(data.n())?;
        let mut settings = self.screening;
        settings.seed = seed;
        screen(data, self.family, &settings, k)
    }

    /// Stage-1 then Stage-2, without null correction.
    pub fn run(&self, data: &TrialDataset, seed: u64) -> Result<InteractionTest> {
        let screening = self.screen(data, seed)?;
        test_interaction(data, self.family, &screening)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NullScheme {
    /// Outcomes redrawn from the fitted additive model under shuffled labels.
    #[default]
    Parametric,
    /// Labels shuffled, outcomes kept.
    Permutation,
}

/// What the null replicates were generated from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullGenerator {
    pub scheme: NullScheme,
    pub family: Family,
    /// Coefficients of the fitted additive model (parametric scheme).
    pub coefficients: Vec<f64>,
    pub roles: Vec<ColumnRole>,
    pub dispersion: f64,
    pub n: usize,
    pub n_treated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullDistribution {
    /// Sorted ascending.
    pub p_values: Vec<f64>,
    /// Number of successful replicates (= `p_values.len()`).
    pub reps: usize,
    pub requested_reps: usize,
    pub failures: usize,
    pub generator: NullGenerator,
    pub seed: u64,
}

/// Empirical null of the Stage-2 p-value for this dataset and pipeline.
pub fn simulate_null(
    data: &TrialDataset,
    pipeline: &Pipeline,
    scheme: NullScheme,
    reps: usize,
    seed: u64,
) -> Result<NullDistribution> {
    if reps < 100 {
        return Err(TehError::InvalidInput(format!(
            "null simulation needs at least 100 replicates, got {reps}"
        )));
    }
    let family = pipeline.family;
    let design = build_additive_design(data)?;
    let fit = glm::fit(&design, data.y(), family)?;
    let beta = fit.coefficients.clone();
    let sigma = match family {
        Family::Gaussian => fit.dispersion.sqrt(),
        Family::Binomial => 1.0,
    };
    // linear predictor without the arm intercepts, which follow the labels
    let arm_pos = |arm| fit.position(ColumnRole::ArmIntercept { arm });
    let (a_pos, b_pos) = (arm_pos(glm::Arm::A), arm_pos(glm::Arm::B));
    let mut base = design.columns() * &beta;
    let (alpha_a, alpha_b) = (
        a_pos.map_or(0.0, |c| beta[c]),
        b_pos.map_or(0.0, |c| beta[c]),
    );
    let t = data.treatment();
    for i in 0..data.n() {
        base[i] -= if t[i] == 1.0 { alpha_a } else { alpha_b };
    }
    let labels: Vec<f64> = t.iter().copied().collect();

    let outcomes: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = replicate_seed(seed, r as u64);
            let mut rng = rng_from_seed(rep_seed);
            let mut shuffled = labels.clone();
            shuffled.shuffle(&mut rng);
            let t_new = DVector::from_vec(shuffled);
            let replicate = match scheme {
                NullScheme::Permutation => data.with_treatment(t_new)?,
                NullScheme::Parametric => {
                    let y = DVector::from_fn(data.n(), |i, _| {
                        let eta = base[i] + if t_new[i] == 1.0 { alpha_a } else { alpha_b };
                        match family {
                            Family::Gaussian => eta + sigma * rng.sample::<f64, _>(StandardNormal),
                            Family::Binomial => {
                                let mu = family.inverse_link(eta);
                                if rng.random::<f64>() < mu {
                                    1.0
                                } else {
                                    0.0
                                }
                            }
                        }
                    });
                    data.with_treatment(t_new)?.with_outcome(y)?
                }
            };
            Ok(pipeline.run(&replicate, rep_seed)?.p_raw)
        })
        .collect();
    let mut p_values: Vec<f64> = outcomes.iter().filter_map(|o| o.as_ref().ok().copied()).collect();
    let failures = reps - p_values.len();
    if failures as f64 > MAX_FAILURE_RATE * reps as f64 {
        return Err(TehError::NullSimUnreliable { failures, reps });
    }
    p_values.sort_by(f64::total_cmp);
    Ok(NullDistribution {
        reps: p_values.len(),
        p_values,
        requested_reps: reps,
        failures,
        generator: NullGenerator {
            scheme,
            family,
            coefficients: beta.iter().copied().collect(),
            roles: fit.roles.clone(),
            dispersion: fit.dispersion,
            n: data.n(),
            n_treated: data.n_treated(),
        },
        seed,
    })
}

/// Add-one empirical p-value: `(1 + #{null <= p_raw}) / (reps + 1)`.
pub fn correct_pvalue(p_raw: f64, null: &NullDistribution) -> f64 {
    let below = null.p_values.partition_point(|&v| v <= p_raw);
    (1 + below) as f64 / (null.p_values.len() + 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    /// Index into the method list for power studies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<usize>,
    /// `None` when the replicate failed.
    pub p_raw: Option<f64>,
    pub p_corrected: Option<f64>,
    pub df: Option<usize>,
    pub standardized_coefficients: Vec<f64>,
    pub standardized_differences: Vec<Option<f64>>,
    pub trace_digest: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Independence check on one coordinate system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependenceSummary {
    /// `[i][j]`: correlation of standardized coefficient i with standardized
    /// arm difference j over replicates.
    pub cross_correlation: Vec<Vec<f64>>,
    pub max_abs_correlation: f64,
    /// KS distance of the screened Stage-2 p-values.
    pub ks_distance: f64,
    pub rejection_rate_05: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub label: String,
    pub rejection_rate: f64,
    pub failures: usize,
    pub mean_df: f64,
}

/// Paired comparison of two methods over the same replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub first: String,
    pub second: String,
    pub difference: f64,
    /// Replicates rejected only by the first method.
    pub only_first: usize,
    pub only_second: usize,
    /// McNemar statistic (normal form), positive when the first method
    /// rejects more often.
    pub mcnemar_z: f64,
    pub mcnemar_p: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimulationSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ks_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_rate_05: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejection_rate_10: Option<f64>,
    /// Componentwise bound 3 / sqrt(reps) for the correlation checks.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation_band: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub independence: Option<IndependenceSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub projected: Option<IndependenceSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<MethodSummary>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paired: Option<Vec<PairedComparison>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub reps: usize,
    pub seed: u64,
    pub failures: usize,
    pub records: Vec<ReplicateRecord>,
    pub summary: SimulationSummary,
}

fn standardized_coefficients(fit: &glm::GlmFit, p: usize) -> Vec<f64> {
    (0..p)
        .map(|j| {
            fit.position(ColumnRole::Candidate { index: j })
                .map_or(0.0, |c| fit.wald_z(c))
        })
        .collect()
}

struct TheoremDraw {
    coefficients: Vec<f64>,
    differences: Vec<f64>,
    p_screened: f64,
    digest: String,
}

fn theorem_draw(
    data: &TrialDataset,
    pipeline: &Pipeline,
    seed: u64,
) -> Result<TheoremDraw> {
    let p = data.p();
    let family = pipeline.family;
    let additive = glm::fit(&build_additive_design(data)?, data.y(), family)?;
    let full = Projection::identity(p);
    let interaction = glm::fit(
        &build_interaction_design(data, Selection::Projection(&full))?,
        data.y(),
        family,
    )?;
    let differences = glm::standardized_arm_difference(&interaction, p)?;
    let test = pipeline.run(data, seed)?;
    Ok(TheoremDraw {
        coefficients: standardized_coefficients(&additive, p),
        differences,
        p_screened: test.p_raw,
        digest: test.screening.digest(),
    })
}

fn independence_summary(draws: &[&TheoremDraw]) -> IndependenceSummary {
    let p = draws.first().map_or(0, |d| d.coefficients.len());
    let k = draws.first().map_or(0, |d| d.differences.len());
    let column = |f: &dyn Fn(&TheoremDraw) -> f64| -> Vec<f64> { draws.iter().map(|d| f(d)).collect() };
    let cross_correlation: Vec<Vec<f64>> = (0..p)
        .map(|i| {
            let a = column(&|d| d.coefficients[i]);
            (0..k)
                .map(|j| correlation(&a, &column(&|d| d.differences[j])))
                .collect()
        })
        .collect();
    let max_abs_correlation = cross_correlation
        .iter()
        .flatten()
        .fold(0.0f64, |m, &c| m.max(c.abs()));
    let pv = column(&|d| d.p_screened);
    IndependenceSummary {
        cross_correlation,
        max_abs_correlation,
        ks_distance: ks_distance_uniform(&pv),
        rejection_rate_05: rejection_rate(&pv, 0.05),
    }
}

/// Under no interaction, standardized additive coefficients should be
/// uncorrelated with standardized arm differences, and Stage-2 p-values after
/// outcome-driven screening should be uniform. Checked on the raw covariates
/// and again on covariates passed through a fixed PCA projection taken from
/// an independent pilot draw.
pub fn validate_theorem1(
    spec: &SyntheticSpec,
    pipeline: &Pipeline,
    reps: usize,
    seed: u64,
) -> Result<SimulationReport> {
    if spec.has_interaction() {
        return Err(TehError::InvalidInput(
            "independence check requires zero interaction effects".into(),
        ));
    }
    if reps < 2 {
        return Err(TehError::InvalidInput("need at least 2 replicates".into()));
    }
    spec.validate()?;
    let pilot = generate_trial(&spec.with_seed(replicate_seed(seed, u64::MAX)))?;
    let pca = compute_pca(pilot.x_candidates(), true)?;
    let order: Vec<usize> = (0..pca.m()).collect();
    let v = pca.projection(&order);
    let names: Vec<String> = (0..v.k()).map(|k| format!("PC{}", k + 1)).collect();

    let outcomes: Vec<Result<(TheoremDraw, TheoremDraw)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = replicate_seed(seed, r as u64);
            let data = generate_trial(&spec.with_seed(rep_seed))?;
            let raw = theorem_draw(&data, pipeline, rep_seed)?;
            let projected_data = data.with_candidates(v.apply(data.x_candidates()), names.clone())?;
            let projected = theorem_draw(&projected_data, pipeline, rep_seed)?;
            Ok((raw, projected))
        })
        .collect();

    let mut records = Vec::with_capacity(reps);
    let mut ok = Vec::new();
    for (r, outcome) in outcomes.iter().enumerate() {
        let rep_seed = replicate_seed(seed, r as u64);
        match outcome {
            Ok((raw, projected)) => {
                records.push(ReplicateRecord {
                    replicate: r,
                    seed: rep_seed,
                    method: None,
                    p_raw: Some(raw.p_screened),
                    p_corrected: None,
                    df: None,
                    standardized_coefficients: raw.coefficients.clone(),
                    standardized_differences: raw.differences.iter().map(|&d| Some(d)).collect(),
                    trace_digest: Some(raw.digest.clone()),
                    error: None,
                });
                ok.push((raw, projected));
            }
            Err(e) => records.push(failed_record(r, rep_seed, None, e)),
        }
    }
    let failures = reps - ok.len();
    if failures as f64 > MAX_FAILURE_RATE * reps as f64 {
        return Err(TehError::NullSimUnreliable { failures, reps });
    }
    let raw: Vec<&TheoremDraw> = ok.iter().map(|(a, _)| *a).collect();
    let projected: Vec<&TheoremDraw> = ok.iter().map(|(_, b)| *b).collect();
    let independence = independence_summary(&raw);
    let pv: Vec<f64> = raw.iter().map(|d| d.p_screened).collect();
    Ok(SimulationReport {
        reps,
        seed,
        failures,
        records,
        summary: SimulationSummary {
            ks_distance: Some(independence.ks_distance),
            rejection_rate_05: Some(rejection_rate(&pv, 0.05)),
            rejection_rate_10: Some(rejection_rate(&pv, 0.10)),
            correlation_band: Some(3.0 / (ok.len() as f64).sqrt()),
            independence: Some(independence),
            projected: Some(independence_summary(&projected)),
            ..Default::default()
        },
    })
}

fn failed_record(r: usize, seed: u64, method: Option<usize>, e: &TehError) -> ReplicateRecord {
    ReplicateRecord {
        replicate: r,
        seed,
        method,
        p_raw: None,
        p_corrected: None,
        df: None,
        standardized_coefficients: Vec::new(),
        standardized_differences: Vec::new(),
        trace_digest: None,
        error: Some(e.to_string()),
    }
}

/// Two-sided 99% normal critical value.
pub const Z_99: f64 = 2.575_829_303_548_901;

/// Rejection rates of several pipelines on shared replicate datasets, with
/// paired comparisons of every method against the last one listed.
pub fn power_study(
    h1_spec: &SyntheticSpec,
    methods: &[Pipeline],
    reps: usize,
    seed: u64,
    alpha: f64,
) -> Result<SimulationReport> {
    if !h1_spec.has_interaction() {
        return Err(TehError::InvalidInput(
            "power study requires nonzero interaction effects".into(),
        ));
    }
    if methods.is_empty() {
        return Err(TehError::InvalidInput("power study needs at least one method".into()));
    }
    if reps == 0 {
        return Err(TehError::InvalidInput("need at least 1 replicate".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(TehError::InvalidInput("alpha must lie in (0, 1)".into()));
    }
    h1_spec.validate()?;

    let per_rep: Vec<Result<Vec<ReplicateRecord>>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = replicate_seed(seed, r as u64);
            let data = generate_trial(&h1_spec.with_seed(rep_seed))?;
            Ok(methods
                .iter()
                .enumerate()
                .map(|(m, pipeline)| match pipeline.run(&data, rep_seed) {
                    Ok(test) => ReplicateRecord {
                        replicate: r,
                        seed: rep_seed,
                        method: Some(m),
                        p_raw: Some(test.p_raw),
                        p_corrected: None,
                        df: Some(test.df),
                        standardized_coefficients: Vec::new(),
                        standardized_differences: test.standardized_differences.clone(),
                        trace_digest: Some(test.screening.digest()),
                        error: None,
                    },
                    Err(e) => failed_record(r, rep_seed, Some(m), &e),
                })
                .collect())
        })
        .collect();
    let mut records = Vec::with_capacity(reps * methods.len());
    for outcome in per_rep {
        records.extend(outcome?);
    }

    let rejected = |m: usize| -> Vec<bool> {
        records
            .iter()
            .filter(|rec| rec.method == Some(m))
            .map(|rec| rec.p_raw.is_some_and(|p| p <= alpha))
            .collect()
    };
    let summaries: Vec<MethodSummary> = methods
        .iter()
        .enumerate()
        .map(|(m, pipeline)| {
            let recs: Vec<&ReplicateRecord> =
                records.iter().filter(|rec| rec.method == Some(m)).collect();
            let dfs: Vec<f64> = recs.iter().filter_map(|rec| rec.df.map(|d| d as f64)).collect();
            let hits = rejected(m).iter().filter(|&&b| b).count();
            MethodSummary {
                label: pipeline.label.clone(),
                rejection_rate: hits as f64 / reps as f64,
                failures: recs.iter().filter(|rec| rec.p_raw.is_none()).count(),
                mean_df: crate::stats::mean(&dfs),
            }
        })
        .collect();
    let last = methods.len() - 1;
    let reference = rejected(last);
    let paired = (0..last)
        .map(|m| {
            let this = rejected(m);
            let only_first = this.iter().zip(&reference).filter(|(&a, &b)| a && !b).count();
            let only_second = this.iter().zip(&reference).filter(|(&a, &b)| !a && b).count();
            let discordant = (only_first + only_second) as f64;
            let z = if discordant > 0.0 {
                (only_first as f64 - only_second as f64) / discordant.sqrt()
            } else {
                0.0
            };
            PairedComparison {
                first: methods[m].label.clone(),
                second: methods[last].label.clone(),
                difference: summaries[m].rejection_rate - summaries[last].rejection_rate,
                only_first,
                only_second,
                mcnemar_z: z,
                mcnemar_p: normal_two_sided(z),
            }
        })
        .collect();
    let failures = summaries.iter().map(|s| s.failures).sum();
    Ok(SimulationReport {
        reps,
        seed,
        failures,
        records,
        summary: SimulationSummary {
            alpha: Some(alpha),
            methods: Some(summaries),
            paired: Some(paired),
            ..Default::default()
        },
    })
}

/// Stage-2 p-values of a pipeline over H0 replicates of a synthetic spec,
/// optionally corrected against a null simulated from a reference dataset.
pub fn null_replicates(
    spec: &SyntheticSpec,
    pipeline: &Pipeline,
    reps: usize,
    seed: u64,
    correction: Option<&NullDistribution>,
) -> Result<SimulationReport> {
    if spec.has_interaction() {
        return Err(TehError::InvalidInput(
            "null replicates require zero interaction effects".into(),
        ));
    }
    if reps == 0 {
        return Err(TehError::InvalidInput("need at least 1 replicate".into()));
    }
    spec.validate()?;
    let outcomes: Vec<Result<InteractionTest>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep_seed = replicate_seed(seed, r as u64);
            let data = generate_trial(&spec.with_seed(rep_seed))?;
            pipeline.run(&data, rep_seed)
        })
        .collect();
    let mut records = Vec::with_capacity(reps);
    for (r, outcome) in outcomes.into_iter().enumerate() {
        let rep_seed = replicate_seed(seed, r as u64);
        records.push(match outcome {
            Ok(test) => {
                let test = match correction {
                    Some(null) => test.corrected(null),
                    None => test,
                };
                ReplicateRecord {
                    replicate: r,
                    seed: rep_seed,
                    method: None,
                    p_raw: Some(test.p_raw),
                    p_corrected: test.p_corrected,
                    df: Some(test.df),
                    standardized_coefficients: Vec::new(),
                    standardized_differences: test.standardized_differences.clone(),
                    trace_digest: Some(test.screening.digest()),
                    error: None,
                }
            }
            Err(e) => failed_record(r, rep_seed, None, &e),
        });
    }
    let raw: Vec<f64> = records.iter().filter_map(|r| r.p_raw).collect();
    let failures = reps - raw.len();
    if failures as f64 > MAX_FAILURE_RATE * reps as f64 {
        return Err(TehError::NullSimUnreliable { failures, reps });
    }
    let corrected: Vec<f64> = records.iter().filter_map(|r| r.p_corrected).collect();
    let ks_source = if corrected.is_empty() { &raw } else { &corrected };
    Ok(SimulationReport {
        reps,
        seed,
        failures,
        summary: SimulationSummary {
            ks_distance: Some(ks_distance_uniform(ks_source)),
            rejection_rate_05: Some(rejection_rate(&raw, 0.05)),
            rejection_rate_10: Some(rejection_rate(&raw, 0.10)),
            ..Default::default()
        },
        records,
    })
}

/// Row-major copy of a matrix, for reports.
pub fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}
