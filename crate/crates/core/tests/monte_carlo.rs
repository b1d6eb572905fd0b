//! Seeded Monte Carlo checks of screening, boosting, lasso and null
//! simulation behaviour.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use teh_core::boosting::{fit_boost, select_by_influence};
use teh_core::data::{generate_trial, SyntheticSpec, TrialDataset};
use teh_core::glm::{self, build_interaction_design, Family, Projection, Selection};
use teh_core::inference::{
    correct_pvalue, null_replicates, simulate_null, test_interaction, NullDistribution,
    NullGenerator, NullScheme, Pipeline,
};
use teh_core::lasso::{fit_path, rank_by_entry};
use teh_core::pca::compute_pca;
use teh_core::screening::{
    rank_full_model, rank_univariate, screen_multi_stage, screen_pca_single_stage, KRule, MlMethod,
    PcRank, ScreeningMethod, ScreeningSettings,
};
use teh_core::seeding::{replicate_seed, rng_from_seed};
use teh_core::stats::{ks_distance_uniform, mean, sample_variance};

fn spec(n: usize, main: &[f64], family: Family, seed: u64) -> SyntheticSpec {
    let mut s = SyntheticSpec::null(n, main.len(), family, seed);
    s.main_effects = main.to_vec();
    s
}

fn count<F: Fn(u64) -> bool + Sync>(seeds: u64, f: F) -> usize {
    (0..seeds).into_par_iter().filter(|&s| f(s)).count()
}

#[test]
fn full_model_ranks_strong_first() {
    let hits = count(100, |s| {
        let d = generate_trial(&spec(500, &[1.0, 0.0], Family::Gaussian, s)).unwrap();
        rank_full_model(&d, Family::Gaussian, 1).unwrap().ranking[0] == 0
    });
    assert!(hits >= 99, "{hits}");
}

#[test]
fn univariate_ranks_strong_first() {
    let hits = count(100, |s| {
        let d = generate_trial(&spec(500, &[1.0, 0.0], Family::Gaussian, 1000 + s)).unwrap();
        rank_univariate(&d, Family::Gaussian, 1).unwrap().ranking[0] == 0
    });
    assert!(hits >= 99, "{hits}");
}

#[test]
fn equal_effects_split_first_place() {
    let first = count(1000, |s| {
        let d = generate_trial(&spec(200, &[0.3, 0.3], Family::Gaussian, 2000 + s)).unwrap();
        rank_full_model(&d, Family::Gaussian, 1).unwrap().ranking[0] == 0
    });
    assert!((450..=550).contains(&first), "{first}");
}

#[test]
fn lasso_orders_strong_weak_null() {
    let hits = count(200, |s| {
        let d = generate_trial(&spec(300, &[1.0, 0.3, 0.0], Family::Gaussian, 3000 + s)).unwrap();
        let path = fit_path(&d, Family::Gaussian, true, 100).unwrap();
        rank_by_entry(&path, 3) == vec![0, 1, 2]
    });
    assert!(hits > 100, "{hits}");
}

#[test]
fn boosting_prefers_signal_over_noise() {
    let hits = count(100, |s| {
        let d = generate_trial(&spec(500, &[0.5, 0.0], Family::Gaussian, 4000 + s)).unwrap();
        let m = fit_boost(&d, Family::Gaussian, 100, 0.1, s).unwrap();
        m.relative_influence[1] < m.relative_influence[0]
    });
    assert!(hits >= 95, "{hits}");
}

#[test]
fn boosting_selection_covers_true_effects() {
    let main = [0.5, 0.4, 0.3, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let hits = count(100, |s| {
        let d = generate_trial(&spec(1000, &main, Family::Gaussian, 5000 + s)).unwrap();
        let m = fit_boost(&d, Family::Gaussian, 500, 0.05, s).unwrap();
        let sel = select_by_influence(&m, 1.0);
        (0..3).all(|j| sel.contains(&j))
    });
    assert!(hits >= 90, "{hits}");
}

#[test]
fn supervised_pca_finds_outcome_component() {
    let hits = count(100, |s| {
        let mut rng = rng_from_seed(6000 + s);
        let n = 300;
        // distinct variances make the PCs well separated
        let x = DMatrix::from_fn(n, 4, |_, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * [3.0, 2.0, 1.5, 1.0][j]
        });
        let pca = compute_pca(&x, true).unwrap();
        let y = DVector::from_fn(n, |i, _| {
            let e: f64 = StandardNormal.sample(&mut rng);
            pca.scores[(i, 2)] + 0.05 * e
        });
        let t = DVector::from_fn(n, |i, _| (i % 2) as f64);
        let d = TrialDataset::from_parts(y, t, x).unwrap();
        let settings = ScreeningSettings::new(ScreeningMethod::Pca { supervised: true });
        let r = screen_pca_single_stage(&d, Family::Gaussian, true, 1, &settings).unwrap();
        r.ranking[0] == 2
    });
    assert!(hits >= 95, "{hits}");
}

#[test]
fn multi_stage_projection_is_supported_on_selected_rows() {
    let mut s = spec(400, &[0.8, 0.6, 0.4, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], Family::Gaussian, 7);
    s.treatment_effect = 0.2;
    let d = generate_trial(&s).unwrap();
    let settings = ScreeningSettings::new(ScreeningMethod::MultiStage {
        ml: MlMethod::Boosting,
        pc_rank: PcRank::Variance,
    });
    let r = screen_multi_stage(&d, Family::Gaussian, MlMethod::Boosting, PcRank::Variance, 2, &settings)
        .unwrap();
    let selected = &r.trace.selected_variables;
    let w = &r.projection.as_ref().unwrap().weights;
    assert_eq!(w.ncols(), 2);
    for j in 0..10 {
        if !selected.contains(&j) {
            assert!(w.row(j).iter().all(|&v| v == 0.0));
        }
    }
}

#[test]
fn lasso_multi_stage_with_all_entries_equals_single_stage() {
    let main: Vec<f64> = vec![0.9, 0.7, 0.6, 0.5];
    let d = generate_trial(&spec(300, &main, Family::Gaussian, 8)).unwrap();
    let settings = ScreeningSettings::new(ScreeningMethod::MultiStage {
        ml: MlMethod::Lasso,
        pc_rank: PcRank::Variance,
    });
    let multi = screen_multi_stage(&d, Family::Gaussian, MlMethod::Lasso, PcRank::Variance, 3, &settings)
        .unwrap();
    assert_eq!(multi.trace.m_selected, Some(4));
    let single = screen_pca_single_stage(&d, Family::Gaussian, false, 3, &settings).unwrap();
    let (a, b) = (multi.projection.unwrap(), single.projection.unwrap());
    assert!((a.weights - b.weights).amax() < 1e-12);
    assert!((a.offset - b.offset).amax() < 1e-12);
}

fn null_pipeline(method: ScreeningMethod, k: usize, family: Family) -> Pipeline {
    Pipeline {
        label: "h0".into(),
        family,
        k_rule: KRule::Fixed { k },
        screening: ScreeningSettings::new(method),
    }
}

#[test]
fn multi_stage_null_p_values_are_uniform() {
    let mut s = spec(200, &[0.6, 0.4, 0.2, 0.0, 0.0, 0.0, 0.0, 0.0], Family::Gaussian, 0);
    s.treatment_effect = 0.3;
    let method = ScreeningMethod::MultiStage {
        ml: MlMethod::Boosting,
        pc_rank: PcRank::Variance,
    };
    let report = null_replicates(&s, &null_pipeline(method, 2, Family::Gaussian), 1000, 11, None).unwrap();
    let ks = report.summary.ks_distance.unwrap();
    assert!(ks < 0.05, "{ks}");
}

#[test]
fn risk_model_null_p_values_are_uniform() {
    let mut s = spec(300, &[0.8, 0.5, 0.3, 0.0, 0.0, 0.0], Family::Gaussian, 0);
    s.treatment_effect = 0.5;
    let method = ScreeningMethod::Irm {
        include_treatment: true,
    };
    let report = null_replicates(&s, &null_pipeline(method, 1, Family::Gaussian), 1000, 12, None).unwrap();
    let ks = report.summary.ks_distance.unwrap();
    assert!(ks < 0.05, "{ks}");
}

#[test]
fn gaussian_null_simulation_is_uniform() {
    let mut s = spec(500, &[0.5, 0.3, 0.0, 0.0], Family::Gaussian, 13);
    s.treatment_effect = 0.2;
    let d = generate_trial(&s).unwrap();
    let pipeline = null_pipeline(
        ScreeningMethod::FullModel {
            evidence: Default::default(),
        },
        2,
        Family::Gaussian,
    );
    let null = simulate_null(&d, &pipeline, NullScheme::Parametric, 1000, 14).unwrap();
    let ks = ks_distance_uniform(&null.p_values);
    assert!(ks < 0.05, "{ks}");
}

#[test]
fn correction_of_uniform_null_is_near_identity() {
    let reps = 2000;
    let mut draws: Vec<f64> = (0..reps)
        .map(|r| {
            use rand::Rng;
            rng_from_seed(replicate_seed(15, r)).random::<f64>()
        })
        .collect();
    draws.sort_by(f64::total_cmp);
    let null = NullDistribution {
        reps: reps as usize,
        requested_reps: reps as usize,
        failures: 0,
        p_values: draws,
        generator: NullGenerator {
            scheme: NullScheme::Parametric,
            family: Family::Gaussian,
            coefficients: vec![],
            roles: vec![],
            dispersion: 1.0,
            n: 0,
            n_treated: 0,
        },
        seed: 15,
    };
    let tol = 2.0 / (reps as f64).sqrt();
    for i in 0..=100 {
        let p = i as f64 / 100.0;
        assert!((correct_pvalue(p, &null) - p).abs() < tol, "{p}");
    }
}

#[test]
fn standardized_differences_are_standard_normal_under_h0() {
    let reps = 2000;
    let s = spec(300, &[0.5, 0.2], Family::Gaussian, 0);
    let draws: Vec<Vec<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let d = generate_trial(&s.with_seed(replicate_seed(16, r))).unwrap();
            let full = Projection::identity(2);
            let design = build_interaction_design(&d, Selection::Projection(&full)).unwrap();
            let fit = glm::fit(&design, d.y(), Family::Gaussian).unwrap();
            glm::standardized_arm_difference(&fit, 2).unwrap()
        })
        .collect();
    for k in 0..2 {
        let col: Vec<f64> = draws.iter().map(|v| v[k]).collect();
        assert!(mean(&col).abs() < 0.07);
        assert!((sample_variance(&col) - 1.0).abs() < 0.1);
    }
}

/// Interaction on the sixth-ranked covariate: sweeping K over one Stage-1
/// ranking, the p-value falls when K reaches 6.
#[test]
fn sweep_drops_at_sixth_ranked_covariate() {
    let main = [1.2, 1.0, 0.9, 0.8, 0.7, 0.35, 0.0, 0.0];
    let drops = count(100, |s| {
        let mut sp = spec(600, &main, Family::Gaussian, 17_000 + s);
        sp.interaction_effects = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.6, 0.0, 0.0];
        let d = generate_trial(&sp).unwrap();
        let r = rank_full_model(&d, Family::Gaussian, 8).unwrap();
        let p5 = test_interaction(&d, Family::Gaussian, &r.with_k(5)).unwrap().p_raw;
        let p6 = test_interaction(&d, Family::Gaussian, &r.with_k(6)).unwrap().p_raw;
        p6 < p5
    });
    assert!(drops > 50, "{drops}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let mut s = spec(120, &[0.5, 0.3, 0.0, 0.0], Family::Binomial, 0);
    s.treatment_effect = 0.2;
    let method = ScreeningMethod::MultiStage {
        ml: MlMethod::Boosting,
        pc_rank: PcRank::Supervised,
    };
    let pipeline = null_pipeline(method, 2, Family::Binomial);
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| null_replicates(&s, &pipeline, 40, 21, None).unwrap())
    };
    let (one, four) = (run(1), run(4));
    assert_eq!(one, four);
    assert_eq!(
        serde_json::to_string(&one).unwrap(),
        serde_json::to_string(&four).unwrap()
    );
}
