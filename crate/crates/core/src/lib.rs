//! Two-stage screening and interaction testing for treatment effect
//! heterogeneity in two-arm randomized trials.

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod boosting;
pub mod config;
pub mod data;
pub mod error;
pub mod glm;
pub mod inference;
pub mod lasso;
pub mod pca;
pub mod screening;
pub mod seeding;
pub mod stats;

pub use data::{generate_trial, load_csv, SyntheticSpec, TrialDataset};
pub use error::{ErrorClass, Result, TehError};
pub use glm::{Family, GlmFit, Projection, Selection};
pub use screening::{k_schedule, screen, KRule, ScreeningMethod, ScreeningResult, ScreeningSettings};
pub use config::PipelineConfig;
pub use inference::{
    correct_pvalue, power_study, simulate_null, test_interaction, validate_theorem1,
    InteractionTest, NullDistribution, Pipeline, SimulationReport,
};
