use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;
use teh_core::config::PipelineConfig;
use teh_core::data::{generate_trial, load_csv, TrialDataset};
use teh_core::error::{ErrorClass, Result, TehError};
use teh_core::inference::{
    power_study, simulate_null, test_interaction, validate_theorem1, InteractionTest,
    NullDistribution, SimulationReport,
};

const THREADS_ENV: &str = "TEH_SCREEN_THREADS";

#[derive(Parser)]
#[command(name = "teh-screen", version, about = "Two-stage screening and testing for treatment effect heterogeneity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Report path; a CSV table is written next to it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the master seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for replicate parallelism.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Stage-1 screening and Stage-2 interaction test on a dataset.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Stage-2 p-value for each K in the config's sweep list (exploratory).
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Simulated null distribution of the Stage-2 p-value for a dataset.
    SimulateNull {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Independence and uniformity checks on synthetic null trials.
    ValidateTheorem {
        #[command(flatten)]
        common: Common,
    },
    /// Paired rejection rates of several pipelines on synthetic trials.
    PowerStudy {
        #[command(flatten)]
        common: Common,
    },
    /// Write a synthetic trial to CSV.
    Generate {
        #[command(flatten)]
        common: Common,
    },
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numerical => 4,
    }
}

fn class_name(class: ErrorClass) -> &'static str {
    match class {
        ErrorClass::Config => "config",
        ErrorClass::Data => "data",
        ErrorClass::Numerical => "numerical",
    }
}

fn fail(class: ErrorClass, kind: &str, message: String) -> ExitCode {
    let body = json!({
        "error": {
            "class": class_name(class),
            "kind": kind,
            "message": message,
        }
    });
    eprintln!("{body}");
    ExitCode::from(exit_code(class))
}

/// Everything a report needs to be reproduced.
struct Context {
    command: &'static str,
    config_text: String,
    config: PipelineConfig,
    seed: u64,
    out: Option<PathBuf>,
}

impl Context {
    fn new(command: &'static str, common: &Common) -> Result<Self> {
        let config_text = std::fs::read_to_string(&common.config).map_err(|e| {
            TehError::Config(format!("cannot read config {}: {e}", common.config.display()))
        })?;
        let config = PipelineConfig::from_toml_str(&config_text)?;
        let seed = common.seed.unwrap_or(config.seed);
        let out = common
            .out
            .clone()
            .or_else(|| config.output.report.as_ref().map(PathBuf::from));
        Ok(Self {
            command,
            config_text,
            config,
            seed,
            out,
        })
    }

    fn report_path(&self) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}_report.json", self.command)))
    }

    fn load(&self, path: &Path) -> Result<TrialDataset> {
        let d = &self.config.data;
        load_csv(path, &d.outcome, &d.treatment, &d.adjust)
    }

    fn write<T: Serialize>(&self, result: &T, table: Table) -> Result<PathBuf> {
        let report = json!({
            "command": self.command,
            "version": teh_core::VERSION,
            "seed": self.seed,
            "config": self.config_text,
            "result": result,
        });
        let path = self.report_path();
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| TehError::InvalidInput(format!("cannot serialize report: {e}")))?;
        std::fs::write(&path, text + "\n")?;
        let mut w = csv::Writer::from_path(path.with_extension("csv"))?;
        w.write_record(&table.header)?;
        for row in &table.rows {
            w.write_record(row)?;
        }
        w.flush()?;
        Ok(path)
    }
}

struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn ranking_table(test: &InteractionTest, data: &TrialDataset) -> Table {
    let s = &test.screening;
    let rows = s
        .ranking
        .iter()
        .enumerate()
        .map(|(rank, &item)| {
            let name = if s.projection.is_some() {
                format!("PC{}", item + 1)
            } else {
                data.candidate_names()[item].clone()
            };
            vec![
                (rank + 1).to_string(),
                item.to_string(),
                name,
                (rank < s.k_selected).to_string(),
            ]
        })
        .collect();
    Table {
        header: vec!["rank", "index", "name", "selected"],
        rows,
    }
}

fn analyze(common: &Common, data_path: &Path) -> Result<PathBuf> {
    let ctx = Context::new("analyze", common)?;
    let data = ctx.load(data_path)?;
    let pipeline = ctx.config.pipeline();
    let k = pipeline.k_for(data.n())?;
    let screening = pipeline.screen(&data, ctx.seed)?;
    let mut test = test_interaction(&data, pipeline.family, &screening)?;
    let mut null_summary = None;
    if ctx.config.null_sim.reps > 0 {
        let dist = simulate_null(&data, &pipeline, ctx.config.null_sim.scheme, ctx.config.null_sim.reps, ctx.seed)?;
        test = test.corrected(&dist);
        null_summary = Some(json!({
            "reps": dist.reps,
            "requested_reps": dist.requested_reps,
            "failures": dist.failures,
            "scheme": dist.generator.scheme,
        }));
    }
    let result = json!({
        "n": data.n(),
        "p": data.p(),
        "candidate_names": data.candidate_names(),
        "k_requested": k,
        "test": test,
        "trace_digest": test.screening.digest(),
        "null_simulation": null_summary,
    });
    ctx.write(&result, ranking_table(&test, &data))
}

fn sweep_k(common: &Common, data_path: &Path) -> Result<PathBuf> {
    let ctx = Context::new("sweep-k", common)?;
    let data = ctx.load(data_path)?;
    let p = data.p();
    let k_values: Vec<usize> = if ctx.config.sweep.k_values.is_empty() {
        (1..=p).collect()
    } else {
        ctx.config.sweep.k_values.clone()
    };
    if let Some(&bad) = k_values.iter().find(|&&k| k > p) {
        return Err(TehError::InvalidInput(format!(
            "sweep K = {bad} exceeds the {p} candidates"
        )));
    }
    let pipeline = ctx.config.pipeline();
    let k_max = *k_values.iter().max().unwrap_or(&1);
    let mut settings = pipeline.screening;
    settings.seed = ctx.seed;
    let stage1 = teh_core::screening::screen(&data, pipeline.family, &settings, k_max)?;
    let mut tests = Vec::with_capacity(k_values.len());
    let mut rows = Vec::with_capacity(k_values.len());
    for &k in &k_values {
        let screening = stage1.with_k(k);
        let test = test_interaction(&data, pipeline.family, &screening)?;
        rows.push(vec![
            k.to_string(),
            test.df.to_string(),
            test.statistic.to_string(),
            test.p_raw.to_string(),
            screening.trace_digest(),
            screening.digest(),
        ]);
        tests.push(json!({
            "k": k,
            "df": test.df,
            "statistic": test.statistic,
            "p_raw": test.p_raw,
            "standardized_differences": test.standardized_differences,
            "df_repair": test.df_repair,
            "trace_digest": screening.trace_digest(),
            "selection_digest": screening.digest(),
        }));
    }
    let result = json!({
        "exploratory": true,
        "note": "K sweep for exploration only; not a pre-registered analysis",
        "ranking": stage1.ranking,
        "trace_digest": stage1.trace_digest(),
        "trace": stage1.trace,
        "tests": tests,
    });
    ctx.write(
        &result,
        Table {
            header: vec!["k", "df", "statistic", "p_raw", "trace_digest", "selection_digest"],
            rows,
        },
    )
}

fn null_table(null: &NullDistribution) -> Table {
    Table {
        header: vec!["order", "p_value"],
        rows: null
            .p_values
            .iter()
            .enumerate()
            .map(|(i, p)| vec![(i + 1).to_string(), p.to_string()])
            .collect(),
    }
}

fn simulate(common: &Common, data_path: &Path) -> Result<PathBuf> {
    let ctx = Context::new("simulate-null", common)?;
    let data = ctx.load(data_path)?;
    let reps = ctx.config.null_sim.reps;
    if reps == 0 {
        return Err(TehError::Config("null_sim.reps must be set for simulate-null".into()));
    }
    let pipeline = ctx.config.pipeline();
    let null = simulate_null(&data, &pipeline, ctx.config.null_sim.scheme, reps, ctx.seed)?;
    let result = json!({
        "null_distribution": null,
        "ks_distance": teh_core::stats::ks_distance_uniform(&null.p_values),
        "rejection_rate_05": teh_core::stats::rejection_rate(&null.p_values, 0.05),
    });
    ctx.write(&result, null_table(&null))
}

fn replicate_table(report: &SimulationReport, labels: &[String]) -> Table {
    Table {
        header: vec!["replicate", "seed", "method", "p_raw", "p_corrected", "df", "trace_digest"],
        rows: report
            .records
            .iter()
            .map(|r| {
                vec![
                    r.replicate.to_string(),
                    r.seed.to_string(),
                    r.method.map(|m| labels[m].clone()).unwrap_or_default(),
                    opt(r.p_raw),
                    opt(r.p_corrected),
                    r.df.map(|d| d.to_string()).unwrap_or_default(),
                    r.trace_digest.clone().unwrap_or_default(),
                ]
            })
            .collect(),
    }
}

fn validate(common: &Common) -> Result<PathBuf> {
    let ctx = Context::new("validate-theorem", common)?;
    let spec = ctx.config.generator()?;
    if spec.interaction_effects.iter().any(|&b| b != 0.0) {
        return Err(TehError::Config(
            "validate-theorem needs a generator without interaction effects".into(),
        ));
    }
    let report = validate_theorem1(spec, &ctx.config.pipeline(), ctx.config.theorem.reps, ctx.seed)?;
    let band = report.summary.correlation_band.unwrap_or(f64::NAN);
    let within = |s: &Option<teh_core::inference::IndependenceSummary>| {
        s.as_ref().map(|s| s.max_abs_correlation <= band)
    };
    let result = json!({
        "within_band": within(&report.summary.independence),
        "projected_within_band": within(&report.summary.projected),
        "report": report,
    });
    ctx.write(&result, replicate_table(&report, &[]))
}

fn power(common: &Common) -> Result<PathBuf> {
    let ctx = Context::new("power-study", common)?;
    let spec = ctx.config.generator()?;
    let methods = ctx.config.power_pipelines()?;
    let cfg = ctx.config.power.as_ref().expect("power_pipelines checked the section");
    let report = power_study(spec, &methods, cfg.reps, ctx.seed, cfg.alpha)?;
    let labels: Vec<String> = methods.iter().map(|m| m.label.clone()).collect();
    let summary = report.summary.methods.clone().unwrap_or_default();
    let table = Table {
        header: vec!["method", "rejection_rate", "failures", "mean_df"],
        rows: summary
            .iter()
            .map(|m| {
                vec![
                    m.label.clone(),
                    m.rejection_rate.to_string(),
                    m.failures.to_string(),
                    m.mean_df.to_string(),
                ]
            })
            .collect(),
    };
    let path = ctx.write(&report, table)?;
    let replicates = path.with_file_name(format!(
        "{}_replicates.csv",
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("report")
    ));
    let t = replicate_table(&report, &labels);
    let mut w = csv::Writer::from_path(replicates)?;
    w.write_record(&t.header)?;
    for row in &t.rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(path)
}

fn generate(common: &Common) -> Result<PathBuf> {
    let ctx = Context::new("generate", common)?;
    let spec = ctx.config.generator()?.with_seed(ctx.seed);
    let data = generate_trial(&spec)?;
    let path = ctx
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("synthetic.csv"));
    let d = &ctx.config.data;
    data.write_csv(&path, &d.outcome, &d.treatment)?;
    Ok(path)
}

fn configure_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(TehError::Config("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| TehError::Config(format!("cannot start thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<PathBuf> {
    let common = match &cli.command {
        Command::Analyze { common, .. }
        | Command::SweepK { common, .. }
        | Command::SimulateNull { common, .. }
        | Command::ValidateTheorem { common }
        | Command::PowerStudy { common }
        | Command::Generate { common } => common,
    };
    configure_threads(common.threads)?;
    match &cli.command {
        Command::Analyze { common, data } => analyze(common, data),
        Command::SweepK { common, data } => sweep_k(common, data),
        Command::SimulateNull { common, data } => simulate(common, data),
        Command::ValidateTheorem { common } => validate(common),
        Command::PowerStudy { common } => power(common),
        Command::Generate { common } => generate(common),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            return fail(ErrorClass::Config, "usage", e.to_string());
        }
    };
    match run(&cli) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.class(), e.kind(), e.to_string()),
    }
}
