//! Simulation oracles for the association module that go beyond quick
//! unit checks: full-scale BIC support recovery and the calibration of
//! the interaction LRT on interaction-free cohorts.

use diffeo_pa::assoc::{
    assemble_features, lasso_path_design, run_models, CovValue, CovariateSpec, FeatureInputs,
    LmmProblem, RunModelsOptions,
};
use diffeo_pa::geodesics::Period;
use nalgebra::DMatrix;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Sparse ground truth (3 active of 15 predictors) at SNR 10 with 800
/// participants, two observations each.
fn sparse_problem(seed: u64) -> (Vec<f64>, DMatrix<f64>, Vec<usize>, Vec<String>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = Normal::new(0.0, 1.0).unwrap();
    let active = [(1usize, 1.0f64), (7, -1.0), (12, 0.8)];
    let (tau, sigma) = (0.3, 0.4);
    let n_groups = 800;
    let per_group = 2;
    let p = 16;
    let n = n_groups * per_group;
    let mut x = DMatrix::zeros(n, p);
    let mut y = vec![0.0; n];
    let mut groups = vec![0usize; n];
    let mut row = 0;
    for g in 0..n_groups {
        let u = tau * norm.sample(&mut rng);
        for _ in 0..per_group {
            x[(row, 0)] = 1.0;
            for j in 1..p {
                x[(row, j)] = norm.sample(&mut rng);
            }
            let mut mu = 1.0 + u + sigma * norm.sample(&mut rng);
            for &(j, b) in &active {
                mu += b * x[(row, j + 1)];
            }
            y[row] = mu;
            groups[row] = g;
            row += 1;
        }
    }
    let mut names = vec!["intercept".to_string()];
    names.extend((0..p - 1).map(|j| format!("x{j}")));
    let mut penalized = vec![true; p];
    penalized[0] = false;
    (y, x, groups, names, penalized)
}

#[test]
fn bic_selection_recovers_sparse_support_in_100_replicates() {
    let mut hits = 0;
    for seed in 0..100u64 {
        let (y, x, groups, names, penalized) = sparse_problem(40_000 + seed);
        let problem = LmmProblem {
            y: &y,
            x: &x,
            groups: &groups,
            names: &names,
        };
        let grid: Vec<f64> = (0..40).map(|i| 800.0 * 0.75f64.powi(i)).collect();
        let path = lasso_path_design(&problem, &penalized, &grid).unwrap();
        let mut selected: Vec<&str> = path
            .selected
            .iter()
            .map(|s| s.as_str())
            .filter(|s| *s != "intercept")
            .collect();
        selected.sort_unstable();
        if selected == vec!["x1", "x12", "x7"] {
            hits += 1;
        }
    }
    println!("BIC exact support recovery: {hits}/100");
    assert!(hits >= 90, "recovered {hits}/100");
}

/// Feature tables with no energy-by-period interaction in the truth.
fn interaction_free_table(seed: u64, n: usize) -> diffeo_pa::assoc::FeatureTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let norm = Normal::new(0.0, 1.0).unwrap();
    let mut inputs = FeatureInputs {
        covariate_spec: vec![CovariateSpec::numeric("age")],
        ..Default::default()
    };
    for i in 0..n {
        let id = format!("p{i:04}");
        let age: f64 = rng.random_range(65.0..90.0);
        let bpf = 75.0 + 5.0 * norm.sample(&mut rng);
        let u = 2.0 * norm.sample(&mut rng);
        inputs.baseline_pf.push((id.clone(), bpf));
        inputs
            .covariates
            .push((id.clone(), vec![Some(CovValue::Numeric(age))]));
        for period in Period::ALL {
            let key = (id.clone(), period);
            let pc1: f64 = norm.sample(&mut rng);
            let energy: f64 = rng.random_range(0.001..0.04);
            inputs.scores.push((key.clone(), vec![pc1]));
            inputs.energies.push((key.clone(), energy));
            inputs
                .delta_net_auc
                .push((key.clone(), 0.4 * pc1 + 0.2 * norm.sample(&mut rng)));
            // energy enters, but identically in both periods
            let pf = 70.0 + 4.0 * pc1 + 100.0 * energy - 1.5 * period.index() as f64
                + 0.3 * (bpf - 75.0)
                - 0.2 * (age - 77.0)
                + u
                + 2.0 * norm.sample(&mut rng);
            inputs.outcomes.push((key, pf.clamp(0.0, 100.0)));
        }
    }
    assemble_features(inputs).unwrap()
}

#[test]
fn interaction_lrt_is_calibrated_on_null_cohorts() {
    let replicates = 120;
    let mut rejections = 0;
    for rep in 0..replicates {
        let table = interaction_free_table(70_000 + rep, 80);
        let report = run_models(&table, &RunModelsOptions::default()).unwrap();
        if report.model1.interaction_lrt.p_value < 0.05 {
            rejections += 1;
        }
    }
    // no systematic rejection: the 5% test should reject about 5% of
    // the time; 2 to 12 of 120 spans a comfortable binomial band
    println!("null interaction rejections: {rejections}/{replicates}");
    assert!(
        (1..=14).contains(&rejections),
        "rejected {rejections}/{replicates} at the 5% level"
    );
}

#[test]
fn planted_interaction_is_detected() {
    // complementary power check: a strong planted interaction rejects
    let mut rng = ChaCha8Rng::seed_from_u64(90_001);
    let norm = Normal::new(0.0, 1.0).unwrap();
    let mut inputs = FeatureInputs {
        covariate_spec: vec![],
        ..Default::default()
    };
    for i in 0..300 {
        let id = format!("p{i:04}");
        let u = 1.5 * norm.sample(&mut rng);
        inputs
            .baseline_pf
            .push((id.clone(), 75.0 + 5.0 * norm.sample(&mut rng)));
        inputs.covariates.push((id.clone(), vec![]));
        for period in Period::ALL {
            let key = (id.clone(), period);
            let energy: f64 = rng.random_range(0.001..0.04);
            inputs.scores.push((key.clone(), vec![norm.sample(&mut rng)]));
            inputs.energies.push((key.clone(), energy));
            inputs.delta_net_auc.push((key.clone(), norm.sample(&mut rng)));
            let pf = 70.0 + 150.0 * energy + 400.0 * energy * period.index() as f64 + u
                + 1.5 * norm.sample(&mut rng);
            inputs.outcomes.push((key, pf.clamp(0.0, 100.0)));
        }
    }
    let table = assemble_features(inputs).unwrap();
    let report = run_models(&table, &RunModelsOptions::default()).unwrap();
    assert!(
        report.model1.interaction_lrt.p_value < 0.025,
        "planted interaction missed: p = {}",
        report.model1.interaction_lrt.p_value
    );
    let eff = report.model1.fit.effect("energy:period").unwrap();
    assert!(eff.estimate > 0.0);
}
