//! Stage-1 screening: rank candidates (or linear projections of them) by
//! their main-effect evidence, then keep the K leading ones for Stage-2.
//!
//! K always comes from the caller, fixed before any outcome-dependent fit.
//! When fewer than K items are available the result is capped and the cap is
//! written to the trace.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boosting::{fit_boost_with, select_by_influence, BoostConfig};
use crate::data::TrialDataset;
use crate::error::{Result, TehError};
use crate::glm::{
    self, build_additive_design, Arm, ColumnRole, DesignMatrix, Family, Projection, Selection,
};
use crate::lasso::{fit_path_with, rank_by_entry, LassoConfig};
use crate::pca::{compute_pca, rank_pcs_by_variance, PcaResult, PcaSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodTag {
    AllCandidates,
    FullModelP,
    UnivariateP,
    LassoEntry,
    PcaVariance,
    PcaSupervised,
    MultiStage,
    InternalRiskModel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MlMethod {
    #[default]
    Boosting,
    Lasso,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PcRank {
    #[default]
    Variance,
    Supervised,
}

/// Evidence used to rank PC scores when PC ranking is supervised.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Supervisor {
    #[default]
    Lasso,
    FullModel,
}

/// Per-coefficient evidence for the full-model ranker.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Evidence {
    #[default]
    Wald,
    /// Drop-one likelihood ratio; one extra fit per candidate.
    Lrt,
}

fn default_true() -> bool {
    true
}

/// Stage-1 method as written in a pipeline config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScreeningMethod {
    /// No screening; every candidate enters Stage-2.
    All,
    FullModel {
        #[serde(default)]
        evidence: Evidence,
    },
    Univariate,
    Lasso,
    Pca {
        #[serde(default)]
        supervised: bool,
    },
    MultiStage {
        #[serde(default)]
        ml: MlMethod,
        #[serde(default)]
        pc_rank: PcRank,
    },
    Irm {
        #[serde(default = "default_true")]
        include_treatment: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcaConfig {
    pub standardize: bool,
    pub supervisor: Supervisor,
}

impl Default for PcaConfig {
    fn default() -> Self {
        Self {
            standardize: true,
            supervisor: Supervisor::Lasso,
        }
    }
}

/// Everything a screener needs besides the data and K.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScreeningSettings {
    pub method: ScreeningMethod,
    pub boosting: BoostConfig,
    pub lasso: LassoConfig,
    pub pca: PcaConfig,
    /// Seed for any randomized screener (boosting subsampling).
    pub seed: u64,
}

impl ScreeningSettings {
    pub fn new(method: ScreeningMethod) -> Self {
        Self {
            method,
            boosting: BoostConfig::default(),
            lasso: LassoConfig::default(),
            pca: PcaConfig::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SubstageTrace {
    /// Number of variables picked by Substage-I.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_selected: Option<usize>,
    pub selected_variables: Vec<usize>,
    pub selected_names: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub relative_influence: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entry_order: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_values: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pca: Option<PcaSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub risk_coefficients: Option<Vec<f64>>,
    pub failed_candidates: Vec<usize>,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub method: MethodTag,
    /// Ranked candidate indices, or ranked component indices when a
    /// projection is present.
    pub ranking: Vec<usize>,
    pub k_requested: usize,
    pub k_selected: usize,
    /// p x K map for projection methods.
    pub projection: Option<Projection>,
    /// Every ranked component, in rank order; `projection` is its first K columns.
    #[serde(skip)]
    basis: Option<Projection>,
    pub trace: SubstageTrace,
}

impl ScreeningResult {
    fn from_ranking(method: MethodTag, ranking: Vec<usize>, k: usize, trace: SubstageTrace) -> Self {
        let mut r = Self {
            method,
            k_selected: 0,
            k_requested: k,
            ranking,
            projection: None,
            basis: None,
            trace,
        };
        r.apply_k(k);
        r
    }

    fn from_basis(
        method: MethodTag,
        ranking: Vec<usize>,
        basis: Projection,
        k: usize,
        trace: SubstageTrace,
    ) -> Self {
        let mut r = Self {
            method,
            k_selected: 0,
            k_requested: k,
            ranking,
            projection: None,
            basis: Some(basis),
            trace,
        };
        r.apply_k(k);
        r
    }

    fn available(&self) -> usize {
        match &self.basis {
            Some(b) => b.k(),
            None => self.ranking.len(),
        }
    }

    fn apply_k(&mut self, k: usize) {
        let available = self.available();
        self.k_requested = k;
        self.k_selected = k.min(available);
        self.trace.notes.retain(|n| !n.starts_with("K capped"));
        if k > available {
            self.trace
                .notes
                .push(format!("K capped at {available} (requested {k})"));
        }
        self.projection = self.basis.as_ref().map(|b| b.truncate(self.k_selected));
    }

    /// Same Stage-1 output carried to a different K.
    pub fn with_k(&self, k: usize) -> Self {
        let mut r = self.clone();
        r.apply_k(k);
        r
    }

    /// Candidate indices entering Stage-2 (index methods only).
    pub fn selected_indices(&self) -> &[usize] {
        &self.ranking[..self.k_selected.min(self.ranking.len())]
    }

    pub fn selection(&self) -> Selection<'_> {
        match &self.projection {
            Some(p) => Selection::Projection(p),
            None => Selection::Indices(self.selected_indices()),
        }
    }

    /// Short hash of everything that determines the Stage-2 input.
    pub fn digest(&self) -> String {
        self.hash(Some(self.k_selected))
    }

    /// Short hash of the Stage-1 ranking and basis, independent of K.
    pub fn trace_digest(&self) -> String {
        self.hash(None)
    }

    fn hash(&self, k: Option<usize>) -> String {
        let mut h = Sha256::new();
        h.update(format!("{:?}", self.method).as_bytes());
        for &r in &self.ranking {
            h.update((r as u64).to_le_bytes());
        }
        if let Some(k) = k {
            h.update((k as u64).to_le_bytes());
        }
        if let Some(basis) = self.basis.as_ref().or(self.projection.as_ref()) {
            for v in basis.weights.iter().chain(basis.offset.iter()) {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(&h.finalize()[..8])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum KRule {
    /// max(1, floor(ln n))
    Log,
    /// max(1, floor(c * n^a))
    PowerCurve { c: f64, a: f64 },
    Fixed { k: usize },
}

impl KRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KRule::Log => Ok(()),
            KRule::PowerCurve { c, a } => {
                if c > 0.0 && a > 0.0 && c.is_finite() && a.is_finite() {
                    Ok(())
                } else {
                    Err(TehError::Config(
                        "power_curve K rule needs positive c and a".into(),
                    ))
                }
            }
            KRule::Fixed { k } => {
                if k >= 1 {
                    Ok(())
                } else {
                    Err(TehError::Config("fixed K must be at least 1".into()))
                }
            }
        }
    }
}

/// K as a pure function of the sample size.
pub fn k_schedule(n: usize, rule: &KRule) -> Result<usize> {
    rule.validate()?;
    if n == 0 {
        return Err(TehError::InvalidInput("sample size must be positive".into()));
    }
    let k = match *rule {
        KRule::Log => (n as f64).ln().floor() as usize,
        KRule::PowerCurve { c, a } => (c * (n as f64).powf(a)).floor() as usize,
        KRule::Fixed { k } => k,
    };
    Ok(k.max(1))
}

/// Sort indices by decreasing |z|, ties by index. Equivalent to ascending
/// two-sided p-value without underflow ties.
fn order_by_abs_z(z: &[f64], last: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..z.len()).filter(|j| !last.contains(j)).collect();
    order.sort_by(|&a, &b| z[b].abs().total_cmp(&z[a].abs()).then(a.cmp(&b)));
    let mut tail = last.to_vec();
    tail.sort_unstable();
    order.extend(tail);
    order
}

fn names_of(data: &TrialDataset, idx: &[usize]) -> Vec<String> {
    idx.iter().map(|&j| data.candidate_names()[j].clone()).collect()
}

/// No screening: identity ranking.
pub fn rank_all(data: &TrialDataset, k: usize) -> ScreeningResult {
    let p = data.p();
    let ranking: Vec<usize> = (0..p).collect();
    let trace = SubstageTrace {
        selected_variables: ranking.clone(),
        selected_names: data.candidate_names().to_vec(),
        ..Default::default()
    };
    ScreeningResult::from_ranking(MethodTag::AllCandidates, ranking, k, trace)
}

/// Order candidates by Wald evidence for their pooled coefficients in the
/// additive model.
pub fn rank_full_model(data: &TrialDataset, family: Family, k: usize) -> Result<ScreeningResult> {
    rank_full_model_with(data, family, k, Evidence::Wald)
}

pub fn rank_full_model_with(
    data: &TrialDataset,
    family: Family,
    k: usize,
    evidence: Evidence,
) -> Result<ScreeningResult> {
    let design = build_additive_design(data)?;
    let fit = glm::fit(&design, data.y(), family)?;
    let p = data.p();
    let mut z = vec![0.0; p];
    let mut pv = vec![1.0; p];
    for j in 0..p {
        let Some(col) = fit.position(ColumnRole::Candidate { index: j }) else {
            continue;
        };
        if fit.is_dropped(col) {
            continue;
        }
        match evidence {
            Evidence::Wald => {
                z[j] = fit.wald_z(col);
                pv[j] = fit.wald_p_value(col);
            }
            Evidence::Lrt => {
                let keep: Vec<usize> = (0..design.width()).filter(|&c| c != col).collect();
                let roles = keep.iter().map(|&c| design.roles()[c]).collect();
                let reduced = DesignMatrix::new(design.columns().select_columns(keep.iter()), roles)?;
                let reduced_fit = glm::fit(&reduced, data.y(), family)?;
                let stat = (2.0 * (fit.log_likelihood - reduced_fit.log_likelihood)).max(0.0);
                z[j] = stat.sqrt();
                pv[j] = crate::stats::chi_square_sf(stat, 1);
            }
        }
    }
    let ranking = order_by_abs_z(&z, &[]);
    let trace = SubstageTrace {
        p_values: Some(pv),
        selected_names: names_of(data, &ranking[..k.min(p)]),
        selected_variables: ranking[..k.min(p)].to_vec(),
        ..Default::default()
    };
    Ok(ScreeningResult::from_ranking(MethodTag::FullModelP, ranking, k, trace))
}

/// One additive fit per candidate (arm intercepts and adjusters included).
pub fn rank_univariate(data: &TrialDataset, family: Family, k: usize) -> Result<ScreeningResult> {
    let (n, p) = (data.n(), data.p());
    let t = data.treatment();
    let base_width = 2 + data.p_adjust();
    let mut z = vec![0.0; p];
    let mut pv = vec![1.0; p];
    let mut failed = Vec::new();
    for j in 0..p {
        // candidate last, so a candidate duplicating an adjuster is the one dropped
        let mut cols = DMatrix::zeros(n, base_width + 1);
        cols.set_column(0, t);
        cols.set_column(1, &t.map(|v| 1.0 - v));
        cols.columns_mut(2, data.p_adjust()).copy_from(data.x_adjust());
        cols.set_column(base_width, &data.x_candidates().column(j));
        let mut roles = vec![
            ColumnRole::ArmIntercept { arm: Arm::A },
            ColumnRole::ArmIntercept { arm: Arm::B },
        ];
        roles.extend((0..data.p_adjust()).map(|index| ColumnRole::Adjust { index }));
        roles.push(ColumnRole::Candidate { index: j });
        let outcome = DesignMatrix::new(cols, roles).and_then(|d| glm::fit(&d, data.y(), family));
        match outcome {
            Ok(fit) => {
                if let Some(col) = fit.position(ColumnRole::Candidate { index: j }) {
                    z[j] = fit.wald_z(col);
                    pv[j] = fit.wald_p_value(col);
                }
            }
            Err(_) => failed.push(j),
        }
    }
    let ranking = order_by_abs_z(&z, &failed);
    let trace = SubstageTrace {
        p_values: Some(pv),
        selected_names: names_of(data, &ranking[..k.min(p)]),
        selected_variables: ranking[..k.min(p)].to_vec(),
        failed_candidates: failed,
        ..Default::default()
    };
    Ok(ScreeningResult::from_ranking(MethodTag::UnivariateP, ranking, k, trace))
}

pub fn rank_lasso(
    data: &TrialDataset,
    family: Family,
    k: usize,
    config: &LassoConfig,
) -> Result<ScreeningResult> {
    let path = fit_path_with(data, family, config)?;
    let p = data.p();
    let ranking = rank_by_entry(&path, p);
    let trace = SubstageTrace {
        entry_order: Some(path.entry_order.clone()),
        selected_names: names_of(data, &ranking[..k.min(p)]),
        selected_variables: ranking[..k.min(p)].to_vec(),
        ..Default::default()
    };
    Ok(ScreeningResult::from_ranking(MethodTag::LassoEntry, ranking, k, trace))
}

/// Rank PC scores by outcome evidence.
fn supervised_pc_ranking(
    data: &TrialDataset,
    family: Family,
    pca: &PcaResult,
    settings: &ScreeningSettings,
) -> Result<(Vec<usize>, SubstageTrace)> {
    let m = pca.m();
    let names = (0..m).map(|k| format!("PC{}", k + 1)).collect();
    let pcs = data.with_candidates(pca.scores.clone(), names)?;
    let inner = match settings.pca.supervisor {
        Supervisor::Lasso => rank_lasso(&pcs, family, m, &settings.lasso)?,
        Supervisor::FullModel => rank_full_model(&pcs, family, m)?,
    };
    Ok((inner.ranking, inner.trace))
}

/// PCA of all candidates, PCs ranked by variance or by outcome evidence.
pub fn screen_pca_single_stage(
    data: &TrialDataset,
    family: Family,
    supervised: bool,
    k: usize,
    settings: &ScreeningSettings,
) -> Result<ScreeningResult> {
    let pca = compute_pca(data.x_candidates(), settings.pca.standardize)?;
    let mut trace = SubstageTrace {
        pca: Some(pca.summary()),
        ..Default::default()
    };
    if !pca.constant_columns.is_empty() {
        trace.notes.push(format!(
            "constant columns {:?} left unscaled",
            pca.constant_columns
        ));
    }
    let (method, ranking) = if supervised {
        let (ranking, inner) = supervised_pc_ranking(data, family, &pca, settings)?;
        trace.entry_order = inner.entry_order;
        trace.p_values = inner.p_values;
        (MethodTag::PcaSupervised, ranking)
    } else {
        (MethodTag::PcaVariance, rank_pcs_by_variance(&pca)?)
    };
    note_degenerate(&mut trace, &pca, &ranking, k);
    let basis = pca.projection(&ranking);
    Ok(ScreeningResult::from_basis(method, ranking, basis, k, trace))
}

fn note_degenerate(trace: &mut SubstageTrace, pca: &PcaResult, ranking: &[usize], k: usize) {
    let degenerate: Vec<usize> = ranking
        .iter()
        .take(k)
        .copied()
        .filter(|&c| pca.degenerate[c])
        .collect();
    if !degenerate.is_empty() {
        trace
            .notes
            .push(format!("degenerate components selected: {degenerate:?}"));
    }
}

/// Substage-I variable selection, then PCA on the selected subset.
pub fn screen_multi_stage(
    data: &TrialDataset,
    family: Family,
    ml: MlMethod,
    pc_rank: PcRank,
    k: usize,
    settings: &ScreeningSettings,
) -> Result<ScreeningResult> {
    let p = data.p();
    let mut trace = SubstageTrace::default();
    let mut subset = match ml {
        MlMethod::Boosting => {
            let model = fit_boost_with(data, family, &settings.boosting, settings.seed)?;
            let chosen = select_by_influence(&model, settings.boosting.ri_threshold);
            trace.relative_influence = Some(model.relative_influence.clone());
            chosen
        }
        MlMethod::Lasso => {
            let path = fit_path_with(data, family, &settings.lasso)?;
            trace.entry_order = Some(path.entry_order.clone());
            path.entry_order
        }
    };
    if subset.is_empty() {
        return Err(TehError::EmptyScreen);
    }
    subset.sort_unstable();
    let m = subset.len();
    trace.m_selected = Some(m);
    trace.selected_names = names_of(data, &subset);
    trace.selected_variables = subset.clone();

    let sub = data.x_candidates().select_columns(subset.iter());
    let pca = compute_pca(&sub, settings.pca.standardize)?;
    trace.pca = Some(pca.summary());
    let ranking = match pc_rank {
        PcRank::Variance => rank_pcs_by_variance(&pca)?,
        PcRank::Supervised => {
            let sub_names = names_of(data, &subset);
            let sub_data = data.with_candidates(sub.clone(), sub_names)?;
            supervised_pc_ranking(&sub_data, family, &pca, settings)?.0
        }
    };
    note_degenerate(&mut trace, &pca, &ranking, k);

    // embed the m-variable loadings into p rows, zeros elsewhere
    let local = pca.projection(&ranking);
    let mut weights = DMatrix::zeros(p, local.k());
    let mut offset = DVector::zeros(p);
    for (a, &j) in subset.iter().enumerate() {
        weights.set_row(j, &local.weights.row(a));
        offset[j] = local.offset[a];
    }
    let basis = Projection { weights, offset };
    Ok(ScreeningResult::from_basis(MethodTag::MultiStage, ranking, basis, k, trace))
}

/// Risk score from an outcome model on all candidates: a single projection
/// given by the fitted candidate coefficients. With `include_treatment` the
/// risk model is the additive model with arm intercepts; otherwise treatment
/// is blinded and a common intercept is used.
pub fn irm_risk_projection(
    data: &TrialDataset,
    family: Family,
    include_treatment: bool,
) -> Result<ScreeningResult> {
    let (n, p, pc) = (data.n(), data.p(), data.p_adjust());
    let design = if include_treatment {
        build_additive_design(data)?
    } else {
        let mut cols = DMatrix::zeros(n, p + 1 + pc);
        cols.columns_mut(0, p).copy_from(data.x_candidates());
        cols.set_column(p, &DVector::from_element(n, 1.0));
        cols.columns_mut(p + 1, pc).copy_from(data.x_adjust());
        let mut roles: Vec<ColumnRole> = (0..p).map(|index| ColumnRole::Candidate { index }).collect();
        roles.push(ColumnRole::Intercept);
        roles.extend((0..pc).map(|index| ColumnRole::Adjust { index }));
        DesignMatrix::new(cols, roles)?
    };
    let fit = glm::fit(&design, data.y(), family)?;
    let beta: Vec<f64> = (0..p)
        .map(|j| {
            design
                .position(ColumnRole::Candidate { index: j })
                .map_or(0.0, |c| fit.coefficients[c])
        })
        .collect();
    let weights = DMatrix::from_column_slice(p, 1, &beta);
    let basis = Projection {
        weights,
        offset: DVector::zeros(p),
    };
    let trace = SubstageTrace {
        risk_coefficients: Some(beta),
        selected_variables: (0..p).collect(),
        selected_names: data.candidate_names().to_vec(),
        notes: if include_treatment {
            vec!["risk model includes treatment".into()]
        } else {
            vec!["risk model blinded to treatment".into()]
        },
        ..Default::default()
    };
    Ok(ScreeningResult::from_basis(
        MethodTag::InternalRiskModel,
        vec![0],
        basis,
        1,
        trace,
    ))
}

/// Run the configured screener. A multi-stage screen that selects nothing
/// falls back to single-stage PCA on all candidates.
pub fn screen(
    data: &TrialDataset,
    family: Family,
    settings: &ScreeningSettings,
    k: usize,
) -> Result<ScreeningResult> {
    match settings.method {
        ScreeningMethod::All => Ok(rank_all(data, data.p())),
        ScreeningMethod::FullModel { evidence } => rank_full_model_with(data, family, k, evidence),
        ScreeningMethod::Univariate => rank_univariate(data, family, k),
        ScreeningMethod::Lasso => rank_lasso(data, family, k, &settings.lasso),
        ScreeningMethod::Pca { supervised } => {
            screen_pca_single_stage(data, family, supervised, k, settings)
        }
        ScreeningMethod::MultiStage { ml, pc_rank } => {
            match screen_multi_stage(data, family, ml, pc_rank, k, settings) {
                Err(TehError::EmptyScreen) => {
                    let supervised = pc_rank == PcRank::Supervised;
                    let mut r = screen_pca_single_stage(data, family, supervised, k, settings)?;
                    r.trace.notes.push(
                        "substage-I selected no variables; fell back to single-stage PCA".into(),
                    );
                    Ok(r)
                }
                other => other,
            }
        }
        ScreeningMethod::Irm { include_treatment } => {
            irm_risk_projection(data, family, include_treatment)
        }
    }
}
