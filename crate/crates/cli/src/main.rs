//! `diffeo-pa`: simulate synthetic cohorts and run the diurnal
//! activity-change pipeline stage by stage or end to end.
//!
//! Exit codes: 0 on success, 2 on validation/configuration failure,
//! 3 on numeric failure.

use clap::{Args, Parser, Subcommand};
use diffeo_pa::error::Error;
use diffeo_pa::geodesics::io::read_momenta_csv;
use diffeo_pa::geodesics::{MomentaField, Period};
use diffeo_pa::pipeline::{
    self, feature_stage, fpca_stage_for_period, prep_stage, read_covariates_csv,
    read_outcomes_csv, render_models_text, run_pipeline, PipelineConfig,
};
use diffeo_pa::prep::io::{read_curves_csv, read_minute_csv_path};
use diffeo_pa::prep::CurveStage;
use diffeo_pa::sim::{simulate_cohort, SimConfig};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "diffeo-pa",
    about = "Diffeomorphic modeling of diurnal physical-activity change",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// TOML config file holding `[sim]` and/or `[pipeline]` tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override for `simulate`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker-pool size override (0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic cohort with known ground truth.
    Simulate(CommonArgs),
    /// Minute records to smoothed, scaled diurnal curves.
    Prep(CommonArgs),
    /// Geodesic matching of consecutive-visit curves.
    Match(CommonArgs),
    /// Univariate, multivariate, and concatenated FPCA of the momenta.
    Mfpca(CommonArgs),
    /// Feature assembly and the two mixed-effects models.
    Assoc(CommonArgs),
    /// The full pipeline, prep through plots.
    Run(CommonArgs),
    /// Print the fitted model tables and the PVE table.
    Report(CommonArgs),
}

#[derive(serde::Deserialize, Default)]
struct ConfigFile {
    #[serde(default)]
    sim: Option<SimConfig>,
    #[serde(default)]
    pipeline: Option<PipelineConfig>,
}

fn load_config(args: &CommonArgs) -> Result<ConfigFile, Error> {
    match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            toml::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))
        }
        None => Ok(ConfigFile::default()),
    }
}

fn pipeline_config(args: &CommonArgs) -> Result<PipelineConfig, Error> {
    let mut cfg = load_config(args)?
        .pipeline
        .ok_or_else(|| Error::Config("config file must contain a [pipeline] table".into()))?;
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    if let Some(workers) = args.workers {
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Prep(args) => cmd_prep(&args),
        Command::Match(args) => cmd_match(&args),
        Command::Mfpca(args) => cmd_mfpca(&args),
        Command::Assoc(args) => cmd_assoc(&args),
        Command::Run(args) => cmd_run(&args),
        Command::Report(args) => cmd_report(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(if e.is_validation() { 2 } else { 3 });
    }
}

fn cmd_simulate(args: &CommonArgs) -> Result<(), Error> {
    let mut cfg = load_config(args)?.sim.unwrap_or_default();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let cohort = simulate_cohort(&cfg)?;
    pipeline::write_cohort_inputs(&out, &cohort)?;
    println!(
        "simulated {} participants, {} visits each -> {}",
        cfg.n_participants,
        cfg.visits,
        out.display()
    );
    Ok(())
}

fn cmd_prep(args: &CommonArgs) -> Result<(), Error> {
    let cfg = pipeline_config(args)?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    let records = read_minute_csv_path(&cfg.input)?;
    let prep = prep_stage(&records, &cfg.prep)?;
    pipeline::write_prep_artifacts(&cfg.out_dir, &prep)?;
    println!(
        "prep: {} curves retained, {} participant-visits excluded",
        prep.scaled.len(),
        prep.summary.exclusions.len()
    );
    Ok(())
}

fn cmd_match(args: &CommonArgs) -> Result<(), Error> {
    let cfg = pipeline_config(args)?;
    let curves_path = cfg.out_dir.join("scaled_curves.csv");
    let file = std::fs::File::open(&curves_path)?;
    let scaled = read_curves_csv(std::io::BufReader::new(file), CurveStage::Scaled)?;
    let cache = pipeline::cache::Cache::for_out_dir(&cfg.out_dir)?;
    let pool = pipeline::worker_pool(cfg.workers)?;
    let matches = pool.install(|| pipeline::match_stage(&scaled, &cfg.kernel, &cache))?;
    pipeline::write_match_artifacts(&cfg.out_dir, &matches, &cfg)?;
    println!("matched {} participant-periods", matches.len());
    Ok(())
}

fn cmd_mfpca(args: &CommonArgs) -> Result<(), Error> {
    let cfg = pipeline_config(args)?;
    let matches = load_match_records(&cfg.out_dir)?;
    let mut exports = Vec::new();
    for period in Period::ALL {
        if matches.iter().filter(|m| m.field.period == period).count() >= 2 {
            exports.push(fpca_stage_for_period(&matches, period, &cfg.fpca)?);
        }
    }
    for e in &exports {
        std::fs::write(
            cfg.out_dir.join(format!("fpca_period_{}.json", e.period.index())),
            serde_json::to_vec(e)?,
        )?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(cfg.out_dir.join("scores.csv"))?);
    diffeo_pa::fpca::export::write_scores_csv(&mut f, &exports)?;
    std::fs::write(
        cfg.out_dir.join("pve_table.csv"),
        diffeo_pa::fpca::export::pve_table(&exports),
    )?;
    for e in &exports {
        println!(
            "period {}: L = {} components reach {:.0}% multivariate PVE",
            e.period,
            e.multivariate.l,
            100.0 * cfg.fpca.pve_multivariate
        );
    }
    Ok(())
}

fn load_match_records(out_dir: &Path) -> Result<Vec<pipeline::MatchRecord>, Error> {
    let path = out_dir.join("momenta.csv");
    let file = std::fs::File::open(&path)?;
    let fields = read_momenta_csv(std::io::BufReader::new(file))?;
    Ok(fields
        .into_iter()
        .map(|field| pipeline::MatchRecord {
            field,
            attachment_residual: f64::NAN,
            iterations: 0,
            converged: true,
        })
        .collect())
}

fn cmd_assoc(args: &CommonArgs) -> Result<(), Error> {
    let cfg = pipeline_config(args)?;
    let matches = load_match_records(&cfg.out_dir)?;
    let fields: Vec<MomentaField> = matches.iter().map(|m| m.field.clone()).collect();
    let mut exports = Vec::new();
    for period in Period::ALL {
        let path = cfg.out_dir.join(format!("fpca_period_{}.json", period.index()));
        if path.exists() {
            let bytes = std::fs::read(&path)?;
            exports.push(serde_json::from_slice(&bytes)?);
        }
    }
    let deltas = read_delta_csv(&cfg.out_dir.join("delta_net_auc.csv"))?;
    let spec: Vec<diffeo_pa::assoc::CovariateSpec> = cfg
        .covariate_columns
        .iter()
        .map(|c| c.to_spec())
        .collect::<Result<_, _>>()?;
    let outcomes = read_outcomes_csv(&cfg.outcomes)?;
    let covariate_rows = read_covariates_csv(&cfg.covariates, &spec)?;
    let table = feature_stage(&fields, &exports, &deltas, &outcomes, &covariate_rows, &spec)?;
    let options = diffeo_pa::assoc::RunModelsOptions {
        lasso_grid: cfg.models.lasso.then(|| {
            if cfg.models.lambda_grid.is_empty() {
                (0..40).map(|i| 500.0 * 0.75f64.powi(i)).collect()
            } else {
                cfg.models.lambda_grid.clone()
            }
        }),
    };
    let report = diffeo_pa::assoc::run_models(&table, &options)?;
    std::fs::write(cfg.out_dir.join("models.json"), serde_json::to_vec(&report)?)?;
    std::fs::write(cfg.out_dir.join("models.txt"), render_models_text(&report))?;
    println!("{}", render_models_text(&report));
    Ok(())
}

type DeltaRows = Vec<((String, Period), f64)>;

fn read_delta_csv(path: &Path) -> Result<DeltaRows, Error> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        let mut parts = line.split(',');
        let id = parts
            .next()
            .ok_or_else(|| Error::InvalidInput("short delta row".into()))?;
        let period = Period::from_index(
            parts
                .next()
                .ok_or_else(|| Error::InvalidInput("missing period".into()))?
                .parse::<u8>()
                .map_err(|e| Error::InvalidInput(format!("bad period: {e}")))?,
        )?;
        let d: f64 = parts
            .next()
            .ok_or_else(|| Error::InvalidInput("missing delta".into()))?
            .parse()
            .map_err(|e| Error::InvalidInput(format!("bad delta: {e}")))?;
        out.push(((id.to_string(), period), d));
    }
    Ok(out)
}

fn cmd_run(args: &CommonArgs) -> Result<(), Error> {
    let cfg = pipeline_config(args)?;
    let manifest = run_pipeline(&cfg)?;
    println!(
        "pipeline complete: {} stages -> {}",
        manifest.stages.len(),
        cfg.out_dir.join("manifest.json").display()
    );
    for stage in &manifest.stages {
        println!("  {}: {} artifact(s)", stage.name, stage.artifacts.len());
    }
    Ok(())
}

fn cmd_report(args: &CommonArgs) -> Result<(), Error> {
    let out = match (&args.out, load_config(args)?.pipeline) {
        (Some(out), _) => out.clone(),
        (None, Some(cfg)) => cfg.out_dir,
        (None, None) => {
            return Err(Error::Config(
                "report needs --out or a [pipeline] config".into(),
            ))
        }
    };
    let models_path = out.join("models.json");
    if models_path.exists() {
        let report: diffeo_pa::assoc::ModelsReport =
            serde_json::from_slice(&std::fs::read(&models_path)?)?;
        println!("{}", render_models_text(&report));
    } else {
        println!("no models.json under {}", out.display());
    }
    let pve_path = out.join("pve_table.csv");
    if pve_path.exists() {
        println!("PVE by component and period:");
        println!("{}", std::fs::read_to_string(&pve_path)?);
    }
    Ok(())
}
