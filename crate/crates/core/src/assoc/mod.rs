//! Association between deformation features and the health outcome.
//!
//! Builds the per participant-period feature table (PC scores, net-AUC
//! change, deformation energy, covariates, outcome), fits the two
//! random-intercept models, tests the energy-by-period interaction with
//! likelihood ratios, and optionally runs L1 selection with BIC.

mod lasso;
mod lmm;
pub mod stats;

pub use lasso::{lasso_path_design, LassoEntry, LassoPath};
pub use lmm::{fit_lmm_design, lrt, FixedEffect, LmmFit, LmmProblem, LrtResult};

use crate::error::{Error, Result};
use crate::geodesics::Period;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

/// Bonferroni-adjusted significance threshold for the two models.
pub const BONFERRONI_ALPHA: f64 = 0.025;

/// Pairwise correlation magnitude above which two change summaries are
/// flagged as not co-includable.
pub const COLLINEARITY_LIMIT: f64 = 0.8;

/// Covariate measurement kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateKind {
    Numeric,
    Categorical {
        levels: Vec<String>,
        reference: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn numeric(name: impl Into<String>) -> Self {
        CovariateSpec {
            name: name.into(),
            kind: CovariateKind::Numeric,
        }
    }

    pub fn categorical(
        name: impl Into<String>,
        levels: &[&str],
        reference: &str,
    ) -> Result<Self> {
        let levels: Vec<String> = levels.iter().map(|s| s.to_string()).collect();
        if !levels.contains(&reference.to_string()) {
            return Err(Error::invalid(format!(
                "reference level `{reference}` is not among the declared levels"
            )));
        }
        Ok(CovariateSpec {
            name: name.into(),
            kind: CovariateKind::Categorical {
                levels,
                reference: reference.to_string(),
            },
        })
    }
}

/// One covariate value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovValue {
    Numeric(f64),
    Category(String),
}

/// One participant-period row of the feature table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRow {
    pub participant_id: String,
    pub period: Period,
    /// Physical function at the period's later visit (0-100).
    pub outcome_pf: Option<f64>,
    pub baseline_pf: Option<f64>,
    pub pc_scores: Vec<f64>,
    pub delta_net_auc: f64,
    pub deformation_energy: f64,
    pub covariates: Vec<Option<CovValue>>,
}

/// A flagged collinear pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CollinearityFlag {
    pub period: Period,
    pub var_a: String,
    pub var_b: String,
    pub r: f64,
}

/// Assembled per participant-period features.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
    pub pc_count: usize,
    pub covariate_spec: Vec<CovariateSpec>,
    /// Rows with every modeled column present.
    pub complete_cases: usize,
    pub collinearity: Vec<CollinearityFlag>,
}

/// Keyed inputs to [`assemble_features`].
#[derive(Debug, Clone, Default)]
pub struct FeatureInputs {
    pub scores: Vec<((String, Period), Vec<f64>)>,
    pub energies: Vec<((String, Period), f64)>,
    pub delta_net_auc: Vec<((String, Period), f64)>,
    pub outcomes: Vec<((String, Period), f64)>,
    pub baseline_pf: Vec<(String, f64)>,
    pub covariate_spec: Vec<CovariateSpec>,
    pub covariates: Vec<(String, Vec<Option<CovValue>>)>,
}

fn to_map<K: Ord + std::fmt::Debug, V>(pairs: Vec<(K, V)>, what: &str) -> Result<BTreeMap<K, V>> {
    let mut map = BTreeMap::new();
    for (k, v) in pairs {
        if map.contains_key(&k) {
            return Err(Error::invalid(format!("duplicate {what} key {k:?}")));
        }
        map.insert(k, v);
    }
    Ok(map)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// Inner-join the deformation features with outcomes and covariates.
///
/// Joins on the keys shared by the score, energy, and net-AUC inputs;
/// outcome, baseline PF, and covariates attach when present and rows
/// missing modeled columns are dropped (and counted) at design-build
/// time. Pearson correlations among {PC1, delta net-AUC, energy} are
/// flagged per period when |r| exceeds 0.8.
pub fn assemble_features(inputs: FeatureInputs) -> Result<FeatureTable> {
    let scores = to_map(inputs.scores, "score")?;
    let energies = to_map(inputs.energies, "energy")?;
    let aucs = to_map(inputs.delta_net_auc, "delta net-AUC")?;
    let outcomes = to_map(inputs.outcomes, "outcome")?;
    let baseline = to_map(inputs.baseline_pf, "baseline PF")?;
    let covariates = to_map(inputs.covariates, "covariate")?;

    for (id, values) in &covariates {
        if values.len() != inputs.covariate_spec.len() {
            return Err(Error::invalid(format!(
                "participant {id}: covariate count {} does not match the declared columns {}",
                values.len(),
                inputs.covariate_spec.len()
            )));
        }
    }

    let keys: Vec<(String, Period)> = scores
        .keys()
        .filter(|k| energies.contains_key(*k) && aucs.contains_key(*k))
        .cloned()
        .collect();
    if keys.is_empty() {
        return Err(Error::invalid(
            "feature join is empty: zero complete cases across scores, energies and net-AUC",
        ));
    }
    let pc_count = keys
        .iter()
        .map(|k| scores[k].len())
        .min()
        .expect("nonempty keys");

    let mut rows = Vec::with_capacity(keys.len());
    for key in keys {
        let (id, period) = key.clone();
        let mut pc = scores[&key].clone();
        pc.truncate(pc_count);
        rows.push(FeatureRow {
            outcome_pf: outcomes.get(&key).copied(),
            baseline_pf: baseline.get(&id).copied(),
            covariates: covariates
                .get(&id)
                .cloned()
                .unwrap_or_else(|| vec![None; inputs.covariate_spec.len()]),
            participant_id: id,
            period,
            pc_scores: pc,
            delta_net_auc: aucs[&key],
            deformation_energy: energies[&key],
        });
    }

    // collinearity screen among the three change summaries, per period
    let mut collinearity = Vec::new();
    for period in Period::ALL {
        let in_period: Vec<&FeatureRow> = rows.iter().filter(|r| r.period == period).collect();
        if in_period.len() < 3 || pc_count == 0 {
            continue;
        }
        let pc1: Vec<f64> = in_period.iter().map(|r| r.pc_scores[0]).collect();
        let auc: Vec<f64> = in_period.iter().map(|r| r.delta_net_auc).collect();
        let energy: Vec<f64> = in_period.iter().map(|r| r.deformation_energy).collect();
        for (name_a, name_b, a, b) in [
            ("pc1", "delta_net_auc", &pc1, &auc),
            ("pc1", "energy", &pc1, &energy),
            ("delta_net_auc", "energy", &auc, &energy),
        ] {
            let r = pearson(a, b);
            if r.abs() > COLLINEARITY_LIMIT {
                collinearity.push(CollinearityFlag {
                    period,
                    var_a: name_a.to_string(),
                    var_b: name_b.to_string(),
                    r,
                });
            }
        }
    }

    let spec = inputs.covariate_spec;
    let complete_cases = rows
        .iter()
        .filter(|r| {
            r.outcome_pf.is_some()
                && r.baseline_pf.is_some()
                && r.covariates.iter().all(|c| c.is_some())
        })
        .count();

    Ok(FeatureTable {
        rows,
        pc_count,
        covariate_spec: spec,
        complete_cases,
        collinearity,
    })
}

/// A fixed-effect term of a model formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Term {
    Intercept,
    /// 1-based multivariate PC score.
    PcScore(usize),
    DeltaNetAuc,
    Energy,
    Period,
    EnergyByPeriod,
    BaselinePf,
    Covariate(String),
}

/// Fixed-effect structure of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Formula {
    pub terms: Vec<Term>,
}

impl Formula {
    /// Model 1: stacked PC scores plus energy, period, their
    /// interaction, baseline PF, and covariates.
    pub fn model1(pc_count: usize, covariates: &[CovariateSpec]) -> Formula {
        let mut terms = vec![Term::Intercept];
        terms.extend((1..=pc_count).map(Term::PcScore));
        terms.extend([Term::Energy, Term::Period, Term::EnergyByPeriod, Term::BaselinePf]);
        terms.extend(covariates.iter().map(|c| Term::Covariate(c.name.clone())));
        Formula { terms }
    }

    /// Model 2: delta net-AUC in place of the PC scores.
    pub fn model2(covariates: &[CovariateSpec]) -> Formula {
        let mut terms = vec![Term::Intercept, Term::DeltaNetAuc];
        terms.extend([Term::Energy, Term::Period, Term::EnergyByPeriod, Term::BaselinePf]);
        terms.extend(covariates.iter().map(|c| Term::Covariate(c.name.clone())));
        Formula { terms }
    }

    pub fn without(&self, drop: &Term) -> Formula {
        Formula {
            terms: self.terms.iter().filter(|t| *t != drop).cloned().collect(),
        }
    }
}

/// A materialized design: response, dense matrix, group labels.
pub struct Design {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
    pub groups: Vec<usize>,
    pub names: Vec<String>,
    /// Column penalty eligibility, aligned with `names`.
    pub penalized: Vec<bool>,
    pub row_keys: Vec<(String, Period)>,
    pub n_groups: usize,
    /// Rows dropped for missing modeled columns.
    pub dropped_rows: usize,
}

/// Terms never subject to the L1 penalty: intercept, period, energy,
/// their interaction, and baseline PF.
fn is_never_penalized(term: &Term) -> bool {
    matches!(
        term,
        Term::Intercept | Term::Period | Term::Energy | Term::EnergyByPeriod | Term::BaselinePf
    )
}

/// Expand a formula against the table into a dense design, dropping
/// incomplete rows (complete-case analysis).
pub fn build_design(table: &FeatureTable, formula: &Formula) -> Result<Design> {
    // expanded column layout
    let mut names: Vec<String> = Vec::new();
    let mut penalized: Vec<bool> = Vec::new();
    for term in &formula.terms {
        match term {
            Term::Intercept => {
                names.push("intercept".into());
                penalized.push(false);
            }
            Term::PcScore(k) => {
                if *k == 0 || *k > table.pc_count {
                    return Err(Error::invalid(format!(
                        "PC{k} not available; table holds {} scores",
                        table.pc_count
                    )));
                }
                names.push(format!("pc{k}"));
                penalized.push(true);
            }
            Term::DeltaNetAuc => {
                names.push("delta_net_auc".into());
                penalized.push(true);
            }
            Term::Energy => {
                names.push("energy".into());
                penalized.push(false);
            }
            Term::Period => {
                names.push("period".into());
                penalized.push(false);
            }
            Term::EnergyByPeriod => {
                names.push("energy:period".into());
                penalized.push(false);
            }
            Term::BaselinePf => {
                names.push("baseline_pf".into());
                penalized.push(false);
            }
            Term::Covariate(name) => {
                let spec = table
                    .covariate_spec
                    .iter()
                    .find(|c| c.name == *name)
                    .ok_or_else(|| Error::invalid(format!("unknown covariate `{name}`")))?;
                match &spec.kind {
                    CovariateKind::Numeric => {
                        names.push(name.clone());
                        penalized.push(true);
                    }
                    CovariateKind::Categorical { levels, reference } => {
                        for level in levels.iter().filter(|l| *l != reference) {
                            names.push(format!("{name}:{level}"));
                            penalized.push(true);
                        }
                    }
                }
            }
        }
    }
    let never: Vec<bool> = {
        // recompute from the term list so covariate expansion stays aligned
        let mut v = Vec::new();
        for term in &formula.terms {
            let np = is_never_penalized(term);
            match term {
                Term::Covariate(name) => {
                    let spec = table
                        .covariate_spec
                        .iter()
                        .find(|c| c.name == *name)
                        .expect("checked above");
                    let cols = match &spec.kind {
                        CovariateKind::Numeric => 1,
                        CovariateKind::Categorical { levels, reference } => {
                            levels.iter().filter(|l| *l != reference).count()
                        }
                    };
                    v.extend(std::iter::repeat_n(np, cols));
                }
                _ => v.push(np),
            }
        }
        v
    };
    let penalized: Vec<bool> = penalized
        .iter()
        .zip(&never)
        .map(|(p, np)| *p && !np)
        .collect();

    let covariate_index: BTreeMap<&str, usize> = table
        .covariate_spec
        .iter()
        .enumerate()
        .map(|(i, c)| (c.name.as_str(), i))
        .collect();

    let mut rows_y = Vec::new();
    let mut rows_x: Vec<Vec<f64>> = Vec::new();
    let mut row_keys = Vec::new();
    let mut group_of: BTreeMap<&str, usize> = BTreeMap::new();
    let mut groups = Vec::new();
    let mut dropped = 0usize;

    'rows: for row in &table.rows {
        let Some(outcome) = row.outcome_pf else {
            dropped += 1;
            continue;
        };
        let mut x = Vec::with_capacity(names.len());
        for term in &formula.terms {
            match term {
                Term::Intercept => x.push(1.0),
                Term::PcScore(k) => x.push(row.pc_scores[*k - 1]),
                Term::DeltaNetAuc => x.push(row.delta_net_auc),
                Term::Energy => x.push(row.deformation_energy),
                Term::Period => x.push(row.period.index() as f64),
                Term::EnergyByPeriod => {
                    x.push(row.deformation_energy * row.period.index() as f64)
                }
                Term::BaselinePf => match row.baseline_pf {
                    Some(v) => x.push(v),
                    None => {
                        dropped += 1;
                        continue 'rows;
                    }
                },
                Term::Covariate(name) => {
                    let idx = covariate_index[name.as_str()];
                    let spec = &table.covariate_spec[idx];
                    match (&spec.kind, &row.covariates[idx]) {
                        (CovariateKind::Numeric, Some(CovValue::Numeric(v))) => x.push(*v),
                        (
                            CovariateKind::Categorical { levels, reference },
                            Some(CovValue::Category(cat)),
                        ) => {
                            if !levels.contains(cat) {
                                return Err(Error::invalid(format!(
                                    "participant {}: level `{cat}` not declared for `{name}`",
                                    row.participant_id
                                )));
                            }
                            for level in levels.iter().filter(|l| *l != reference) {
                                x.push(if level == cat { 1.0 } else { 0.0 });
                            }
                        }
                        (_, None) => {
                            dropped += 1;
                            continue 'rows;
                        }
                        (kind, value) => {
                            return Err(Error::invalid(format!(
                                "participant {}: covariate `{name}` value {value:?} does not \
                                 match its declared kind {kind:?}",
                                row.participant_id
                            )))
                        }
                    }
                }
            }
        }
        debug_assert_eq!(x.len(), names.len());
        rows_y.push(outcome);
        rows_x.push(x);
        let next = group_of.len();
        let g = *group_of.entry(row.participant_id.as_str()).or_insert(next);
        groups.push(g);
        row_keys.push((row.participant_id.clone(), row.period));
    }

    if rows_y.is_empty() {
        return Err(Error::invalid(
            "no complete cases: every row is missing a modeled column",
        ));
    }
    let n = rows_y.len();
    let p = names.len();
    let mut x = DMatrix::zeros(n, p);
    for (i, row) in rows_x.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    Ok(Design {
        y: rows_y,
        x,
        groups,
        names,
        penalized,
        row_keys,
        n_groups: group_of.len(),
        dropped_rows: dropped,
    })
}

/// Fit one formula on the table by profiled maximum likelihood (or REML
/// for variance reporting).
pub fn fit_lmm(table: &FeatureTable, formula: &Formula, reml: bool) -> Result<LmmFit> {
    let design = build_design(table, formula)?;
    fit_lmm_design(
        &LmmProblem {
            y: &design.y,
            x: &design.x,
            groups: &design.groups,
            names: &design.names,
        },
        reml,
    )
}

/// L1 selection over the formula's penalizable terms, then an
/// unpenalized refit of the chosen support.
pub fn lasso_lmm(table: &FeatureTable, formula: &Formula, lambda_grid: &[f64]) -> Result<LassoPath> {
    let design = build_design(table, formula)?;
    lasso_path_design(
        &LmmProblem {
            y: &design.y,
            x: &design.x,
            groups: &design.groups,
            names: &design.names,
        },
        &design.penalized,
        lambda_grid,
    )
}

/// Report from one model family (full fit plus the interaction LRT).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub fit: LmmFit,
    pub interaction_lrt: LrtResult,
    /// Selection path when LASSO ran first.
    pub lasso: Option<LassoPath>,
}

/// The two model families fitted on one feature table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelsReport {
    pub model1: ModelReport,
    pub model2: ModelReport,
    pub alpha: f64,
    pub complete_cases: usize,
    pub collinearity: Vec<CollinearityFlag>,
}

/// Options for [`run_models`].
#[derive(Debug, Clone, Default)]
pub struct RunModelsOptions {
    /// When set, run LASSO selection on each model's penalizable terms
    /// before the final fits.
    pub lasso_grid: Option<Vec<f64>>,
}

/// Fit Model 1 (PC scores) and Model 2 (delta net-AUC), each with the
/// energy-by-period interaction LRT, at the Bonferroni threshold 0.025.
pub fn run_models(table: &FeatureTable, options: &RunModelsOptions) -> Result<ModelsReport> {
    let formula1 = Formula::model1(table.pc_count, &table.covariate_spec);
    let formula2 = Formula::model2(&table.covariate_spec);
    let model1 = run_one(table, formula1, options)?;
    let model2 = run_one(table, formula2, options)?;
    Ok(ModelsReport {
        model1,
        model2,
        alpha: BONFERRONI_ALPHA,
        complete_cases: table.complete_cases,
        collinearity: table.collinearity.clone(),
    })
}

fn run_one(
    table: &FeatureTable,
    mut formula: Formula,
    options: &RunModelsOptions,
) -> Result<ModelReport> {
    let mut lasso = None;
    if let Some(grid) = &options.lasso_grid {
        let path = lasso_lmm(table, &formula, grid)?;
        // restrict the formula to the selected support (structural terms
        // survive selection by construction)
        let selected: BTreeSet<&str> = path.selected.iter().map(|s| s.as_str()).collect();
        formula = Formula {
            terms: formula
                .terms
                .iter()
                .filter(|t| term_selected(t, table, &selected))
                .cloned()
                .collect(),
        };
        lasso = Some(path);
    }
    let fit = fit_lmm(table, &formula, false)?;
    let reduced = fit_lmm(table, &formula.without(&Term::EnergyByPeriod), false)?;
    let interaction_lrt = lrt(&fit, &reduced)?;
    Ok(ModelReport {
        fit,
        interaction_lrt,
        lasso,
    })
}

fn term_selected(term: &Term, table: &FeatureTable, selected: &BTreeSet<&str>) -> bool {
    match term {
        Term::Intercept => selected.contains("intercept"),
        Term::PcScore(k) => selected.contains(format!("pc{k}").as_str()),
        Term::DeltaNetAuc => selected.contains("delta_net_auc"),
        Term::Energy => selected.contains("energy"),
        Term::Period => selected.contains("period"),
        Term::EnergyByPeriod => selected.contains("energy:period"),
        Term::BaselinePf => selected.contains("baseline_pf"),
        Term::Covariate(name) => {
            let spec = table
                .covariate_spec
                .iter()
                .find(|c| c.name == *name)
                .expect("formula was built from the table");
            match &spec.kind {
                CovariateKind::Numeric => selected.contains(name.as_str()),
                CovariateKind::Categorical { levels, reference } => levels
                    .iter()
                    .filter(|l| *l != reference)
                    .any(|l| selected.contains(format!("{name}:{l}").as_str())),
            }
        }
    }
}

/// Plain-text coefficient table in the layout of the published model
/// tables: variable, coefficient (s.e.), p-value.
pub fn render_coefficient_table(fit: &LmmFit, title: &str) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{title} (N = {}, participants = {})\n",
        fit.n_obs, fit.n_groups
    ));
    out.push_str(&format!(
        "{:<28} {:>20} {:>10}\n",
        "Variable", "Coefficient (s.e)", "p-value"
    ));
    for e in &fit.fixed_effects {
        let p = if e.p_value < 1e-4 {
            "<0.0001".to_string()
        } else {
            format!("{:.4}", e.p_value)
        };
        out.push_str(&format!(
            "{:<28} {:>20} {:>10}\n",
            e.name,
            format!("{:.3} ({:.3})", e.estimate, e.std_err),
            p
        ));
    }
    out.push_str(&format!(
        "random intercept var {:.4}, residual var {:.4}, loglik {:.3}, BIC {:.2}\n",
        fit.var_random, fit.var_resid, fit.loglik, fit.bic
    ));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn key(id: &str, period: Period) -> (String, Period) {
        (id.to_string(), period)
    }

    fn basic_inputs(n: usize, seed: u64) -> FeatureInputs {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let norm = Normal::new(0.0, 1.0).unwrap();
        let mut inputs = FeatureInputs {
            covariate_spec: vec![
                CovariateSpec::numeric("age"),
                CovariateSpec::categorical("health", &["excellent", "good", "poor"], "excellent")
                    .unwrap(),
            ],
            ..Default::default()
        };
        for i in 0..n {
            let id = format!("p{i:03}");
            let age: f64 = 70.0 + rng.random_range(0.0..15.0);
            let health = match i % 3 {
                0 => "excellent",
                1 => "good",
                _ => "poor",
            };
            inputs.baseline_pf.push((id.clone(), 75.0 + norm.sample(&mut rng)));
            inputs.covariates.push((
                id.clone(),
                vec![
                    Some(CovValue::Numeric(age)),
                    Some(CovValue::Category(health.to_string())),
                ],
            ));
            for period in Period::ALL {
                let k = key(&id, period);
                let pc1: f64 = norm.sample(&mut rng);
                let energy: f64 = rng.random_range(0.0..0.04);
                inputs.scores.push((k.clone(), vec![pc1, norm.sample(&mut rng)]));
                inputs.energies.push((k.clone(), energy));
                inputs.delta_net_auc.push((k.clone(), 0.5 * pc1 + 0.1 * norm.sample(&mut rng)));
                let outcome = 70.0 + 8.0 * pc1 - 0.4 * (age - 77.0) + norm.sample(&mut rng);
                inputs.outcomes.push((k, outcome.clamp(0.0, 100.0)));
            }
        }
        inputs
    }

    #[test]
    fn assemble_joins_and_counts_complete_cases() {
        let mut inputs = basic_inputs(12, 1);
        // drop one outcome: the row stays but is incomplete
        inputs.outcomes.remove(0);
        let table = assemble_features(inputs).unwrap();
        assert_eq!(table.rows.len(), 24);
        assert_eq!(table.complete_cases, 23);
        assert_eq!(table.pc_count, 2);
    }

    #[test]
    fn assemble_rejects_duplicates_and_empty_join() {
        let mut inputs = basic_inputs(4, 2);
        inputs
            .scores
            .push((key("p000", Period::BaselineToW1), vec![0.0, 0.0]));
        assert!(matches!(
            assemble_features(inputs),
            Err(Error::InvalidInput(_))
        ));

        let inputs = FeatureInputs {
            scores: vec![(key("a", Period::BaselineToW1), vec![1.0])],
            energies: vec![(key("b", Period::BaselineToW1), 0.1)],
            ..Default::default()
        };
        assert!(assemble_features(inputs).is_err());
    }

    #[test]
    fn duplicated_summary_is_flagged_as_collinear() {
        let mut inputs = basic_inputs(10, 3);
        // make delta net-AUC an exact copy of PC1
        let scores: BTreeMap<(String, Period), Vec<f64>> =
            inputs.scores.iter().cloned().collect();
        for (k, v) in inputs.delta_net_auc.iter_mut() {
            *v = scores[k][0];
        }
        let table = assemble_features(inputs).unwrap();
        assert!(table
            .collinearity
            .iter()
            .any(|f| f.var_a == "pc1" && f.var_b == "delta_net_auc" && (f.r.abs() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn missing_rows_drop_from_the_design_but_not_from_the_table() {
        let mut inputs = basic_inputs(10, 4);
        inputs.outcomes.retain(|(k, _)| k.0 != "p003");
        inputs.covariates.iter_mut().for_each(|(id, v)| {
            if id == "p004" {
                v[0] = None;
            }
        });
        let table = assemble_features(inputs).unwrap();
        assert_eq!(table.rows.len(), 20);
        let design = build_design(
            &table,
            &Formula::model1(table.pc_count, &table.covariate_spec),
        )
        .unwrap();
        // p003 loses both periods (no outcome), p004 both (missing age)
        assert_eq!(design.y.len(), 16);
        assert_eq!(design.dropped_rows, 4);
        assert_eq!(design.n_groups, 8);
        // categorical expansion produced reference-coded dummies
        assert!(design.names.contains(&"health:good".to_string()));
        assert!(design.names.contains(&"health:poor".to_string()));
        assert!(!design.names.contains(&"health:excellent".to_string()));
    }

    #[test]
    fn model1_and_model2_fit_identical_rows() {
        let table = assemble_features(basic_inputs(40, 5)).unwrap();
        let report = run_models(&table, &RunModelsOptions::default()).unwrap();
        assert_eq!(report.model1.fit.n_obs, report.model2.fit.n_obs);
        assert_eq!(report.model1.fit.n_groups, report.model2.fit.n_groups);
        assert!(report.model1.fit.effect("pc1").is_some());
        assert!(report.model2.fit.effect("delta_net_auc").is_some());
        assert_eq!(report.alpha, 0.025);
    }

    #[test]
    fn planted_pc1_effect_is_detected() {
        let table = assemble_features(basic_inputs(150, 6)).unwrap();
        let report = run_models(&table, &RunModelsOptions::default()).unwrap();
        let pc1 = report.model1.fit.effect("pc1").unwrap();
        assert!(pc1.estimate > 0.0);
        assert!(pc1.p_value < 0.01, "p = {}", pc1.p_value);
    }

    #[test]
    fn lasso_keeps_structural_terms() {
        let table = assemble_features(basic_inputs(60, 7)).unwrap();
        let grid: Vec<f64> = (0..30).map(|i| 400.0 * 0.7f64.powi(i)).collect();
        let report = run_models(
            &table,
            &RunModelsOptions {
                lasso_grid: Some(grid),
            },
        )
        .unwrap();
        let names = report.model1.fit.term_names();
        for required in ["intercept", "energy", "period", "energy:period", "baseline_pf"] {
            assert!(names.contains(&required), "missing {required}");
        }
        assert!(report.model1.lasso.is_some());
    }

    #[test]
    fn coefficient_table_renders() {
        let table = assemble_features(basic_inputs(30, 8)).unwrap();
        let report = run_models(&table, &RunModelsOptions::default()).unwrap();
        let text = render_coefficient_table(&report.model1.fit, "Model 1");
        assert!(text.contains("Variable"));
        assert!(text.contains("pc1"));
        assert!(text.contains("energy:period"));
    }
}
