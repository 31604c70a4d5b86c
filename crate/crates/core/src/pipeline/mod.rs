//! End-to-end orchestration: prep, matching, FPCA, features, models,
//! plot data.
//!
//! Every stage writes its artifacts under the output directory and is
//! listed in `manifest.json` with a content key. Matching results are
//! cached content-addressed (curve bytes plus kernel config), so reruns
//! with unchanged inputs reuse momenta and reproduce identical
//! downstream CSVs, while any config change recomputes exactly the
//! affected stages.

pub mod cache;

use crate::assoc::{
    assemble_features, run_models, render_coefficient_table, CovValue, CovariateKind,
    CovariateSpec, FeatureInputs, FeatureTable, ModelsReport, RunModelsOptions,
};
use crate::error::{Error, Result};
use crate::fpca::export::{pve_table, write_scores_csv, FpcaExport};
use crate::fpca::{
    concat_ufpca, mean_momenta_field, mfpca, pc_deformation, ufpca, DomainLabel, FunctionalSample,
};
use crate::geodesics::io::{
    write_momenta_binary, write_momenta_csv, RunSidecar,
};
use crate::geodesics::{
    kernel_energy, match_curves, DeformationResult, KernelConfig, MomentaField,
    Period,
};
use crate::prep::io::{
    read_minute_csv_path, write_curves_csv, PrepSummary,
};
use crate::prep::{
    average_daily_profile_refs, delta_net_auc, filter_valid_days_refs, fit_scaling, scale_curve,
    smooth_curve_with, DayFilterVerdict, DiurnalCurve, MinuteRecord, SmoothingSpline, Visit,
};
use crate::sim::SimulatedCohort;
use cache::{hash_json, Cache, ContentHasher};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

/// Declared covariate column for the pipeline config.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovariateColumn {
    pub name: String,
    pub kind: String,
    #[serde(default)]
    pub levels: Vec<String>,
    #[serde(default)]
    pub reference: String,
}

impl CovariateColumn {
    pub fn to_spec(&self) -> Result<CovariateSpec> {
        match self.kind.as_str() {
            "numeric" => Ok(CovariateSpec::numeric(&self.name)),
            "categorical" => {
                let levels: Vec<&str> = self.levels.iter().map(|s| s.as_str()).collect();
                CovariateSpec::categorical(&self.name, &levels, &self.reference)
            }
            other => Err(Error::Config(format!(
                "covariate `{}`: unknown kind `{other}`",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepSettings {
    pub target_df: f64,
}

impl Default for PrepSettings {
    fn default() -> Self {
        PrepSettings { target_df: 25.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FpcaSettings {
    pub pve_univariate: f64,
    pub pve_multivariate: f64,
}

impl Default for FpcaSettings {
    fn default() -> Self {
        FpcaSettings {
            pve_univariate: 0.99,
            pve_multivariate: 0.90,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelSettings {
    /// Run LASSO selection before the final fits.
    pub lasso: bool,
    /// Decreasing penalty grid; defaults to a 40-point geometric grid.
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            lasso: true,
            lambda_grid: Vec::new(),
        }
    }
}

/// Pipeline configuration, usually read from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Minute-level CSV.
    pub input: PathBuf,
    /// Outcome CSV: `participant_id,period,pf`.
    pub outcomes: PathBuf,
    /// Covariate CSV: `participant_id,baseline_pf,<columns...>`.
    pub covariates: PathBuf,
    pub out_dir: PathBuf,
    /// 0 means one worker per core.
    #[serde(default)]
    pub workers: usize,
    /// Also write the compact binary momenta files.
    #[serde(default)]
    pub emit_binary_momenta: bool,
    #[serde(default)]
    pub prep: PrepSettings,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub fpca: FpcaSettings,
    #[serde(default)]
    pub models: ModelSettings,
    #[serde(default)]
    pub covariate_columns: Vec<CovariateColumn>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("bad pipeline config: {e}")))
    }

    pub fn from_toml_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        for path in [&self.input, &self.outcomes, &self.covariates] {
            if !path.exists() {
                return Err(Error::Config(format!("input {} does not exist", path.display())));
            }
        }
        if !(self.fpca.pve_univariate > 0.0 && self.fpca.pve_univariate <= 1.0)
            || !(self.fpca.pve_multivariate > 0.0 && self.fpca.pve_multivariate <= 1.0)
        {
            return Err(Error::Config("PVE targets must lie in (0, 1]".into()));
        }
        for c in &self.covariate_columns {
            c.to_spec()?;
        }
        Ok(())
    }

    fn lambda_grid(&self) -> Vec<f64> {
        if self.models.lambda_grid.is_empty() {
            (0..40).map(|i| 500.0 * 0.75f64.powi(i)).collect()
        } else {
            self.models.lambda_grid.clone()
        }
    }
}

/// One stage entry of the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub artifacts: Vec<String>,
}

/// Run manifest: config hash, stage artifacts, versions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub crate_version: String,
    pub config_hash: String,
    pub stages: Vec<StageRecord>,
}

impl Manifest {
    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }
}

fn stage_err(stage: &str, e: Error) -> Error {
    Error::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    }
}

/// Build the bounded worker pool (0 = one worker per core).
pub fn worker_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))
}

/// Everything the prep stage hands to downstream stages.
pub struct PrepOutput {
    pub scaled: Vec<DiurnalCurve>,
    pub summary: PrepSummary,
    pub delta_net_auc: Vec<((String, Period), f64)>,
}

/// Run the prep stage on loaded minute records.
pub fn prep_stage(records: &[MinuteRecord], settings: &PrepSettings) -> Result<PrepOutput> {
    let mut by_pv: BTreeMap<(&str, Visit), Vec<&MinuteRecord>> = BTreeMap::new();
    for r in records {
        by_pv
            .entry((r.participant_id.as_str(), r.visit))
            .or_default()
            .push(r);
    }
    let spline = SmoothingSpline::new(&crate::grid::minute_grid(), settings.target_df)?;
    let mut summary = PrepSummary {
        scaling: crate::prep::ScalingParams {
            grand_mean: 0.0,
            grand_sd: 1.0,
        },
        target_df: settings.target_df,
        achieved_df: spline.df(),
        included_participant_visits: 0,
        exclusions: Vec::new(),
    };
    let mut smoothed = Vec::new();
    for ((pid, visit), recs) in &by_pv {
        match filter_valid_days_refs(recs.iter().copied())? {
            DayFilterVerdict::Valid { days } => {
                let raw = average_daily_profile_refs(recs.iter().copied(), &days)?;
                smoothed.push(smooth_curve_with(&raw, &spline)?);
            }
            DayFilterVerdict::Excluded(e) => summary.push_exclusion(pid, *visit, &e),
        }
    }
    if smoothed.is_empty() {
        return Err(Error::degenerate(
            "no participant-visit passed the valid-day rules",
        ));
    }
    let scaling = fit_scaling(&smoothed)?;
    summary.scaling = scaling;
    summary.included_participant_visits = smoothed.len();
    let scaled: Vec<DiurnalCurve> = smoothed
        .iter()
        .map(|c| scale_curve(c, &scaling))
        .collect::<Result<_>>()?;

    // per-period net-AUC change
    let by_key: BTreeMap<(String, Visit), &DiurnalCurve> = scaled
        .iter()
        .map(|c| ((c.participant_id.clone(), c.visit), c))
        .collect();
    let mut deltas = Vec::new();
    for ((pid, visit), curve) in &by_key {
        for period in Period::ALL {
            let (earlier, later) = period.visits();
            if *visit != earlier {
                continue;
            }
            if let Some(next) = by_key.get(&(pid.clone(), later)) {
                deltas.push(((pid.clone(), period), delta_net_auc(curve, next)?));
            }
        }
    }
    Ok(PrepOutput {
        scaled,
        summary,
        delta_net_auc: deltas,
    })
}

/// Matching output per participant-period, plus run diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatchRecord {
    pub field: MomentaField,
    pub attachment_residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Run the matching stage over all consecutive-visit pairs.
pub fn match_stage(
    scaled: &[DiurnalCurve],
    kernel: &KernelConfig,
    cache: &Cache,
) -> Result<Vec<MatchRecord>> {
    let by_key: BTreeMap<(String, Visit), &DiurnalCurve> = scaled
        .iter()
        .map(|c| ((c.participant_id.clone(), c.visit), c))
        .collect();
    let mut tasks: Vec<(&DiurnalCurve, &DiurnalCurve, Period)> = Vec::new();
    for ((pid, visit), curve) in &by_key {
        for period in Period::ALL {
            let (earlier, later) = period.visits();
            if *visit != earlier {
                continue;
            }
            if let Some(next) = by_key.get(&(pid.clone(), later)) {
                tasks.push((curve, next, period));
            }
        }
    }
    if tasks.is_empty() {
        return Err(Error::invalid(
            "no participant has two consecutive valid visits; nothing to match",
        ));
    }

    let kernel_hash = hash_json(kernel)?;
    let results: Vec<Result<MatchRecord>> = tasks
        .par_iter()
        .map(|(source, target, period)| {
            let mut h = ContentHasher::new();
            h.update(source.participant_id.as_bytes());
            h.update(&[period.index()]);
            h.update_f64s(&source.values);
            h.update_f64s(&target.values);
            h.update(&kernel_hash.to_le_bytes());
            let key = h.finish();
            if let Some(hit) = cache.get::<MatchRecord>("momenta", key) {
                return Ok(hit);
            }
            let res: DeformationResult = match_curves(source, target, kernel)?;
            let record = MatchRecord {
                field: res.momenta_field,
                attachment_residual: res.attachment_residual,
                iterations: res.iterations,
                converged: res.converged,
            };
            cache.put("momenta", key, &record)?;
            Ok(record)
        })
        .collect();

    let mut records = Vec::with_capacity(results.len());
    let mut failed: Vec<String> = Vec::new();
    for (res, (source, _, period)) in results.into_iter().zip(&tasks) {
        match res {
            Ok(r) => records.push(r),
            Err(e) => failed.push(format!(
                "{} period {period}: {e}",
                source.participant_id
            )),
        }
    }
    if !failed.is_empty() {
        return Err(Error::numeric(format!(
            "matching failed for {} participant-period(s): [{}]",
            failed.len(),
            failed.join("; ")
        )));
    }
    records.sort_by(|a, b| {
        (&a.field.participant_id, a.field.period).cmp(&(&b.field.participant_id, b.field.period))
    });
    Ok(records)
}

/// Fit the FPCA stage for one period.
pub fn fpca_stage_for_period(
    matches: &[MatchRecord],
    period: Period,
    settings: &FpcaSettings,
) -> Result<FpcaExport> {
    let fields: Vec<MomentaField> = matches
        .iter()
        .filter(|m| m.field.period == period)
        .map(|m| m.field.clone())
        .collect();
    if fields.len() < 2 {
        return Err(Error::invalid(format!(
            "period {period}: need at least 2 momenta fields for FPCA, got {}",
            fields.len()
        )));
    }
    let sample_x = FunctionalSample::from_momenta(&fields, DomainLabel::X)?;
    let sample_y = FunctionalSample::from_momenta(&fields, DomainLabel::Y)?;
    let model_x = ufpca(&sample_x, settings.pve_univariate)?;
    let model_y = ufpca(&sample_y, settings.pve_univariate)?;
    let multivariate = mfpca(&model_x, &model_y, settings.pve_multivariate)?;
    let concatenated = concat_ufpca(&sample_x, &sample_y, settings.pve_univariate)?;
    Ok(FpcaExport {
        period,
        model_x,
        model_y,
        multivariate,
        concatenated,
    })
}

/// Outcome rows read from the outcomes CSV.
pub fn read_outcomes_csv(path: &Path) -> Result<Vec<(String, Period, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let id = row
            .get(0)
            .ok_or_else(|| Error::invalid("outcomes: missing participant_id"))?;
        let period = Period::from_index(
            row.get(1)
                .ok_or_else(|| Error::invalid("outcomes: missing period"))?
                .parse::<u8>()
                .map_err(|e| Error::invalid(format!("outcomes: bad period: {e}")))?,
        )?;
        let pf: f64 = row
            .get(2)
            .ok_or_else(|| Error::invalid("outcomes: missing pf"))?
            .parse()
            .map_err(|e| Error::invalid(format!("outcomes: bad pf: {e}")))?;
        if !(0.0..=100.0).contains(&pf) {
            return Err(Error::invalid(format!("outcomes: pf {pf} outside 0-100")));
        }
        out.push((id.to_string(), period, pf));
    }
    Ok(out)
}

/// Covariate rows: `(id, baseline_pf, values per declared column)`.
type CovariateRows = Vec<(String, Option<f64>, Vec<Option<CovValue>>)>;

pub fn read_covariates_csv(path: &Path, spec: &[CovariateSpec]) -> Result<CovariateRows> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    {
        let headers = rdr.headers()?;
        let got: Vec<&str> = headers.iter().collect();
        let mut expected = vec!["participant_id", "baseline_pf"];
        expected.extend(spec.iter().map(|c| c.name.as_str()));
        if got != expected {
            return Err(Error::invalid(format!(
                "covariates CSV header mismatch: expected {expected:?}, got {got:?}"
            )));
        }
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let id = row
            .get(0)
            .ok_or_else(|| Error::invalid("covariates: missing participant_id"))?
            .to_string();
        let bpf = match row.get(1).unwrap_or("") {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .map_err(|e| Error::invalid(format!("covariates: bad baseline_pf: {e}")))?,
            ),
        };
        let mut values = Vec::with_capacity(spec.len());
        for (j, col) in spec.iter().enumerate() {
            let raw = row.get(2 + j).unwrap_or("");
            if raw.is_empty() {
                values.push(None);
                continue;
            }
            values.push(Some(match &col.kind {
                CovariateKind::Numeric => CovValue::Numeric(raw.parse::<f64>().map_err(|e| {
                    Error::invalid(format!("covariates: bad `{}`: {e}", col.name))
                })?),
                CovariateKind::Categorical { .. } => CovValue::Category(raw.to_string()),
            }));
        }
        out.push((id, bpf, values));
    }
    Ok(out)
}

/// Assemble the feature table from stage outputs and the outcome files.
pub fn feature_stage(
    fields: &[MomentaField],
    exports: &[FpcaExport],
    deltas: &[((String, Period), f64)],
    outcomes: &[(String, Period, f64)],
    covariate_rows: &CovariateRows,
    spec: &[CovariateSpec],
) -> Result<FeatureTable> {
    let mut inputs = FeatureInputs {
        covariate_spec: spec.to_vec(),
        ..Default::default()
    };
    for e in exports {
        let ids = e
            .multivariate
            .row_ids
            .as_ref()
            .ok_or_else(|| Error::invalid("FPCA model lost its participant ids"))?;
        for (i, id) in ids.iter().enumerate() {
            inputs
                .scores
                .push(((id.clone(), e.period), e.multivariate.scores[i].clone()));
        }
    }
    for f in fields {
        inputs
            .energies
            .push(((f.participant_id.clone(), f.period), f.energy));
    }
    inputs.delta_net_auc = deltas.to_vec();
    inputs.outcomes = outcomes
        .iter()
        .map(|(id, p, pf)| ((id.clone(), *p), *pf))
        .collect();
    for (id, bpf, values) in covariate_rows {
        if let Some(bpf) = bpf {
            inputs.baseline_pf.push((id.clone(), *bpf));
        }
        inputs.covariates.push((id.clone(), values.clone()));
    }
    assemble_features(inputs)
}

/// The full pipeline. Writes artifacts under `config.out_dir` and
/// returns the manifest.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest> {
    config.validate()?;
    std::fs::create_dir_all(&config.out_dir)?;
    let cache = Cache::for_out_dir(&config.out_dir)?;
    let config_hash = hash_json(config)?;

    let pool = worker_pool(config.workers)?;

    let mut manifest = Manifest {
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: format!("{config_hash:032x}"),
        stages: Vec::new(),
    };

    // stage 1: prep
    let records = read_minute_csv_path(&config.input).map_err(|e| stage_err("prep", e))?;
    let prep = prep_stage(&records, &config.prep).map_err(|e| stage_err("prep", e))?;
    let prep_artifacts = write_prep_artifacts(&config.out_dir, &prep)?;
    manifest.stages.push(StageRecord {
        name: "prep".into(),
        key: format!("{:032x}", hash_json(&prep.summary)?),
        artifacts: prep_artifacts,
    });

    // stage 2: matching
    let matches = pool
        .install(|| match_stage(&prep.scaled, &config.kernel, &cache))
        .map_err(|e| stage_err("match", e))?;
    let match_artifacts =
        write_match_artifacts(&config.out_dir, &matches, config)?;
    manifest.stages.push(StageRecord {
        name: "match".into(),
        key: format!(
            "{:032x}",
            hash_json(&matches.iter().map(|m| m.field.energy).collect::<Vec<_>>())?
        ),
        artifacts: match_artifacts,
    });

    // stage 3: FPCA per period
    let mut exports = Vec::new();
    for period in Period::ALL {
        if matches.iter().filter(|m| m.field.period == period).count() >= 2 {
            exports
                .push(fpca_stage_for_period(&matches, period, &config.fpca)
                    .map_err(|e| stage_err("mfpca", e))?);
        }
    }
    if exports.is_empty() {
        return Err(stage_err(
            "mfpca",
            Error::invalid("no period has enough matched participants"),
        ));
    }
    let fpca_artifacts = write_fpca_artifacts(&config.out_dir, &exports)?;
    manifest.stages.push(StageRecord {
        name: "mfpca".into(),
        key: format!(
            "{:032x}",
            hash_json(&exports.iter().map(|e| &e.multivariate.eigenvalues).collect::<Vec<_>>())?
        ),
        artifacts: fpca_artifacts,
    });

    // stage 4: features
    let spec: Vec<CovariateSpec> = config
        .covariate_columns
        .iter()
        .map(|c| c.to_spec())
        .collect::<Result<_>>()?;
    let outcomes = read_outcomes_csv(&config.outcomes).map_err(|e| stage_err("features", e))?;
    let covariate_rows =
        read_covariates_csv(&config.covariates, &spec).map_err(|e| stage_err("features", e))?;
    let fields: Vec<MomentaField> = matches.iter().map(|m| m.field.clone()).collect();
    let table = feature_stage(
        &fields,
        &exports,
        &prep.delta_net_auc,
        &outcomes,
        &covariate_rows,
        &spec,
    )
    .map_err(|e| stage_err("features", e))?;
    let feature_artifacts = write_feature_artifacts(&config.out_dir, &table)?;
    manifest.stages.push(StageRecord {
        name: "features".into(),
        key: format!("{:032x}", hash_json(&table.complete_cases)?),
        artifacts: feature_artifacts,
    });

    // stage 5: models
    let options = RunModelsOptions {
        lasso_grid: config.models.lasso.then(|| config.lambda_grid()),
    };
    let report = run_models(&table, &options).map_err(|e| stage_err("models", e))?;
    let model_artifacts = write_model_artifacts(&config.out_dir, &report)?;
    manifest.stages.push(StageRecord {
        name: "models".into(),
        key: format!("{:032x}", hash_json(&report.model1.fit.loglik)?),
        artifacts: model_artifacts,
    });

    // stage 6: plot data
    let plot_artifacts = write_plot_artifacts(&config.out_dir, &matches, &exports, &table, &report, &config.kernel)
        .map_err(|e| stage_err("plots", e))?;
    manifest.stages.push(StageRecord {
        name: "plots".into(),
        key: format!("{:032x}", config_hash),
        artifacts: plot_artifacts,
    });

    let manifest_path = config.out_dir.join("manifest.json");
    std::fs::write(&manifest_path, serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn rel(out_dir: &Path, path: &Path) -> String {
    path.strip_prefix(out_dir)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

/// Write the prep stage's artifacts; returns their out-dir-relative paths.
pub fn write_prep_artifacts(out_dir: &Path, prep: &PrepOutput) -> Result<Vec<String>> {
    let curves = out_dir.join("scaled_curves.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&curves)?);
    write_curves_csv(&mut f, &prep.scaled)?;
    let summary = out_dir.join("prep_summary.json");
    std::fs::write(&summary, serde_json::to_vec_pretty(&prep.summary)?)?;
    let deltas = out_dir.join("delta_net_auc.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&deltas)?);
    writeln!(f, "participant_id,period,delta_net_auc")?;
    for ((id, period), d) in &prep.delta_net_auc {
        writeln!(f, "{id},{period},{d}")?;
    }
    Ok(vec![
        rel(out_dir, &curves),
        rel(out_dir, &summary),
        rel(out_dir, &deltas),
    ])
}

/// Write the matching stage's artifacts (CSV, per-run sidecars, and the
/// optional binaries); returns their out-dir-relative paths.
pub fn write_match_artifacts(
    out_dir: &Path,
    matches: &[MatchRecord],
    config: &PipelineConfig,
) -> Result<Vec<String>> {
    let csv_path = out_dir.join("momenta.csv");
    let fields: Vec<MomentaField> = matches.iter().map(|m| m.field.clone()).collect();
    let mut f = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    write_momenta_csv(&mut f, &fields)?;
    let side_dir = out_dir.join("momenta");
    std::fs::create_dir_all(&side_dir)?;
    let mut artifacts = vec![rel(out_dir, &csv_path)];
    for m in matches {
        let sidecar = RunSidecar {
            participant_id: m.field.participant_id.clone(),
            period: m.field.period,
            config: config.kernel.clone(),
            energy: m.field.energy,
            kernel_energy: kernel_energy(&m.field, config.kernel.sigma_v),
            attachment_residual: m.attachment_residual,
            iterations: m.iterations,
            converged: m.converged,
        };
        let path = side_dir.join(format!(
            "{}_{}.json",
            m.field.participant_id,
            m.field.period.index()
        ));
        std::fs::write(&path, serde_json::to_vec_pretty(&sidecar)?)?;
    }
    artifacts.push(rel(out_dir, &side_dir));
    if config.emit_binary_momenta {
        let bin_dir = out_dir.join("momenta_bin");
        std::fs::create_dir_all(&bin_dir)?;
        for m in matches {
            let path = bin_dir.join(format!(
                "{}_{}.dpa",
                m.field.participant_id,
                m.field.period.index()
            ));
            let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
            write_momenta_binary(&mut f, &m.field)?;
        }
        artifacts.push(rel(out_dir, &bin_dir));
    }
    Ok(artifacts)
}

fn write_fpca_artifacts(out_dir: &Path, exports: &[FpcaExport]) -> Result<Vec<String>> {
    let mut artifacts = Vec::new();
    for e in exports {
        let path = out_dir.join(format!("fpca_period_{}.json", e.period.index()));
        std::fs::write(&path, serde_json::to_vec(&e)?)?;
        artifacts.push(rel(out_dir, &path));
    }
    let scores = out_dir.join("scores.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&scores)?);
    write_scores_csv(&mut f, exports)?;
    artifacts.push(rel(out_dir, &scores));
    let pve = out_dir.join("pve_table.csv");
    std::fs::write(&pve, pve_table(exports))?;
    artifacts.push(rel(out_dir, &pve));
    Ok(artifacts)
}

fn write_feature_artifacts(out_dir: &Path, table: &FeatureTable) -> Result<Vec<String>> {
    let json = out_dir.join("features.json");
    std::fs::write(&json, serde_json::to_vec(table)?)?;
    let csv_path = out_dir.join("features.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    let mut header = String::from("participant_id,period,pf,baseline_pf");
    for k in 1..=table.pc_count {
        header.push_str(&format!(",pc{k}"));
    }
    header.push_str(",delta_net_auc,energy");
    for c in &table.covariate_spec {
        header.push_str(&format!(",{}", c.name));
    }
    writeln!(f, "{header}")?;
    for r in &table.rows {
        let mut line = format!(
            "{},{},{},{}",
            r.participant_id,
            r.period,
            r.outcome_pf.map_or(String::new(), |v| v.to_string()),
            r.baseline_pf.map_or(String::new(), |v| v.to_string()),
        );
        for s in &r.pc_scores {
            line.push_str(&format!(",{s}"));
        }
        line.push_str(&format!(",{},{}", r.delta_net_auc, r.deformation_energy));
        for c in &r.covariates {
            match c {
                Some(CovValue::Numeric(v)) => line.push_str(&format!(",{v}")),
                Some(CovValue::Category(s)) => line.push_str(&format!(",{s}")),
                None => line.push(','),
            }
        }
        writeln!(f, "{line}")?;
    }
    Ok(vec![rel(out_dir, &json), rel(out_dir, &csv_path)])
}

fn write_model_artifacts(out_dir: &Path, report: &ModelsReport) -> Result<Vec<String>> {
    let json = out_dir.join("models.json");
    std::fs::write(&json, serde_json::to_vec(report)?)?;
    let text_path = out_dir.join("models.txt");
    std::fs::write(&text_path, render_models_text(report))?;
    Ok(vec![rel(out_dir, &json), rel(out_dir, &text_path)])
}

/// Human-readable model report mirroring the published table layout.
pub fn render_models_text(report: &ModelsReport) -> String {
    let mut out = String::new();
    out.push_str(&render_coefficient_table(
        &report.model1.fit,
        "Model 1: PC scores + deformation energy",
    ));
    out.push_str(&format!(
        "energy x period LRT: statistic {:.4}, df {}, p {:.5} ({} at alpha {})\n\n",
        report.model1.interaction_lrt.statistic,
        report.model1.interaction_lrt.df,
        report.model1.interaction_lrt.p_value,
        if report.model1.interaction_lrt.p_value < report.alpha {
            "significant"
        } else {
            "not significant"
        },
        report.alpha
    ));
    out.push_str(&render_coefficient_table(
        &report.model2.fit,
        "Model 2: delta net-AUC + deformation energy",
    ));
    out.push_str(&format!(
        "energy x period LRT: statistic {:.4}, df {}, p {:.5} ({} at alpha {})\n",
        report.model2.interaction_lrt.statistic,
        report.model2.interaction_lrt.df,
        report.model2.interaction_lrt.p_value,
        if report.model2.interaction_lrt.p_value < report.alpha {
            "significant"
        } else {
            "not significant"
        },
        report.alpha
    ));
    if !report.collinearity.is_empty() {
        out.push_str("\nflagged collinear pairs (|r| > 0.8):\n");
        for f in &report.collinearity {
            out.push_str(&format!(
                "  period {}: {} ~ {} (r = {:.3})\n",
                f.period, f.var_a, f.var_b, f.r
            ));
        }
    }
    out
}

fn write_plot_artifacts(
    out_dir: &Path,
    matches: &[MatchRecord],
    exports: &[FpcaExport],
    table: &FeatureTable,
    report: &ModelsReport,
    kernel: &KernelConfig,
) -> Result<Vec<String>> {
    let plots = out_dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    let mut artifacts = Vec::new();

    // mean momenta per domain and period
    let mean_path = plots.join("mean_momenta.csv");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&mean_path)?);
        writeln!(f, "period,x,mean_mx,mean_my")?;
        for e in exports {
            for (j, &x) in e.multivariate.grid.iter().enumerate() {
                writeln!(
                    f,
                    "{},{},{},{}",
                    e.period, x, e.multivariate.mean_x[j], e.multivariate.mean_y[j]
                )?;
            }
        }
    }
    artifacts.push(rel(out_dir, &mean_path));

    // PC deformation arrows over the observed mean source curve
    let arrows_path = plots.join("pc_deformation.csv");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&arrows_path)?);
        writeln!(f, "period,pc,kind,idx,x,y,mx,my")?;
        let fields: Vec<MomentaField> = matches.iter().map(|m| m.field.clone()).collect();
        for e in exports {
            let mean_field = mean_momenta_field(&fields, e.period)?;
            let n_modes = e.multivariate.l.min(2);
            for l in 1..=n_modes {
                let scale = e.multivariate.mode_scale(l)?;
                let mode_field = pc_deformation(&e.multivariate, &mean_field, l, scale)?;
                for (idx, (q, m)) in mode_field
                    .control_points
                    .iter()
                    .zip(&mode_field.momenta)
                    .enumerate()
                {
                    writeln!(
                        f,
                        "{},{},arrow,{},{},{},{},{}",
                        e.period, l, idx, q.x, q.y, m.x, m.y
                    )?;
                }
                let deformed = crate::geodesics::apply_momenta(&mode_field, kernel)?;
                for (idx, q) in deformed.iter().enumerate() {
                    writeln!(
                        f,
                        "{},{},deformed,{},{},{},0,0",
                        e.period, l, idx, q.x, q.y
                    )?;
                }
            }
            for (idx, q) in mean_field.control_points.iter().enumerate() {
                writeln!(f, "{},0,mean_curve,{},{},{},0,0", e.period, idx, q.x, q.y)?;
            }
        }
    }
    artifacts.push(rel(out_dir, &arrows_path));

    // MFPCA vs concatenated UFPCA eigenfunction overlays
    let overlay_path = plots.join("mfpca_vs_ufpca.csv");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&overlay_path)?);
        writeln!(f, "period,component,domain,x,mfpca,ufpca")?;
        for e in exports {
            let n = e.multivariate.l.min(e.concatenated.n_components()).min(2);
            for l in 0..n {
                let (ux, uy) = e.concatenated.eigenfunction_slices(l)?;
                for (j, &x) in e.multivariate.grid.iter().enumerate() {
                    writeln!(
                        f,
                        "{},{},x,{},{},{}",
                        e.period,
                        l + 1,
                        x,
                        e.multivariate.eigenfunctions_x[l][j],
                        ux[j]
                    )?;
                    writeln!(
                        f,
                        "{},{},y,{},{},{}",
                        e.period,
                        l + 1,
                        x,
                        e.multivariate.eigenfunctions_y[l][j],
                        uy[j]
                    )?;
                }
            }
        }
    }
    artifacts.push(rel(out_dir, &overlay_path));

    // energy-by-period interaction predictions over the observed range
    let interaction_path = plots.join("interaction.csv");
    {
        let mut f = std::io::BufWriter::new(std::fs::File::create(&interaction_path)?);
        writeln!(f, "model,period,energy,predicted_pf")?;
        for (label, fit) in [("model1", &report.model1.fit), ("model2", &report.model2.fit)] {
            let coef = |name: &str| fit.effect(name).map_or(0.0, |e| e.estimate);
            let (b0, be, bp, bep) = (
                coef("intercept"),
                coef("energy"),
                coef("period"),
                coef("energy:period"),
            );
            for period in Period::ALL {
                let energies: Vec<f64> = table
                    .rows
                    .iter()
                    .filter(|r| r.period == period)
                    .map(|r| r.deformation_energy)
                    .collect();
                if energies.is_empty() {
                    continue;
                }
                let lo = energies.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let eta = period.index() as f64;
                for step in 0..=50 {
                    let d = lo + (hi - lo) * step as f64 / 50.0;
                    let y = b0 + be * d + bp * eta + bep * d * eta;
                    writeln!(f, "{label},{period},{d},{y}")?;
                }
            }
        }
    }
    artifacts.push(rel(out_dir, &interaction_path));

    Ok(artifacts)
}

/// Write a simulated cohort in the pipeline's input formats.
pub fn write_cohort_inputs(dir: &Path, cohort: &SimulatedCohort) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("cohort.csv"))?);
    crate::prep::io::write_minute_csv(&mut f, &cohort.records)?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("outcomes.csv"))?);
    writeln!(f, "participant_id,period,pf")?;
    for (id, period, pf) in &cohort.outcomes {
        writeln!(f, "{id},{period},{pf}")?;
    }

    let baseline: BTreeMap<&str, f64> = cohort
        .baseline_pf
        .iter()
        .map(|(id, v)| (id.as_str(), *v))
        .collect();
    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("covariates.csv"))?);
    writeln!(f, "participant_id,baseline_pf,age,health")?;
    for (id, age, health) in &cohort.covariates {
        writeln!(
            f,
            "{id},{},{},{}",
            baseline.get(id.as_str()).map_or(String::new(), |v| v.to_string()),
            age.map_or(String::new(), |v| v.to_string()),
            health.clone().unwrap_or_default()
        )?;
    }

    std::fs::write(
        dir.join("truth.json"),
        serde_json::to_vec_pretty(&cohort.truth)?,
    )?;
    Ok(())
}

/// The standard covariate schema for simulated cohorts.
pub fn simulated_covariate_columns() -> Vec<CovariateColumn> {
    vec![
        CovariateColumn {
            name: "age".into(),
            kind: "numeric".into(),
            levels: Vec::new(),
            reference: String::new(),
        },
        CovariateColumn {
            name: "health".into(),
            kind: "categorical".into(),
            levels: vec!["excellent".into(), "good".into(), "poor".into()],
            reference: "excellent".into(),
        },
    ]
}
