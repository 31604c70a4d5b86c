//! End-to-end pipeline behavior on a small simulated cohort: smoke run,
//! manifest contents, determinism, and cache reuse.

use diffeo_pa::geodesics::KernelConfig;
use diffeo_pa::pipeline::{
    run_pipeline, simulated_covariate_columns, write_cohort_inputs, PipelineConfig,
};
use diffeo_pa::sim::{simulate_cohort, SimConfig, WearModel};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

fn scratch_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("dpa-pipeline-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn small_sim() -> SimConfig {
    SimConfig {
        n_participants: 24,
        visits: 3,
        outcome_missing_rate: 0.1,
        covariate_missing_rate: 0.05,
        wear: WearModel {
            days_min: 4,
            days_max: 6,
            gap_probability: 0.4,
            ..WearModel::default()
        },
        seed: 99,
        ..SimConfig::default()
    }
}

fn small_pipeline_config(dir: &Path) -> PipelineConfig {
    PipelineConfig {
        input: dir.join("cohort.csv"),
        outcomes: dir.join("outcomes.csv"),
        covariates: dir.join("covariates.csv"),
        out_dir: dir.join("out"),
        workers: 2,
        emit_binary_momenta: true,
        prep: Default::default(),
        kernel: KernelConfig {
            n_steps: 8,
            control_stride: 27, // 40 control points keeps the test quick
            max_iters: 120,
            rel_tol: 1e-5,
            ..KernelConfig::default()
        },
        // low PVE targets keep the component count workable at this
        // cohort size
        fpca: diffeo_pa::pipeline::FpcaSettings {
            pve_univariate: 0.9,
            pve_multivariate: 0.6,
        },
        models: diffeo_pa::pipeline::ModelSettings {
            lasso: false,
            lambda_grid: Vec::new(),
        },
        covariate_columns: simulated_covariate_columns(),
    }
}

fn hash_files(root: &Path) -> BTreeMap<String, u64> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeMap<String, u64>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                if path.file_name().is_some_and(|n| n == ".cache") {
                    continue;
                }
                walk(&path, root, out);
            } else if path.extension().is_some_and(|e| e == "csv") {
                let bytes = std::fs::read(&path).unwrap();
                let mut h = 0xcbf29ce484222325u64;
                for b in bytes {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
                let key = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(key, h);
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

#[test]
fn full_pipeline_smoke_and_determinism() {
    let dir = scratch_dir("smoke");
    let cohort = simulate_cohort(&small_sim()).unwrap();
    write_cohort_inputs(&dir, &cohort).unwrap();
    let config = small_pipeline_config(&dir);

    let manifest = run_pipeline(&config).unwrap();
    // six stages, in order
    let names: Vec<&str> = manifest.stages.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        vec!["prep", "match", "mfpca", "features", "models", "plots"]
    );
    for stage in &manifest.stages {
        assert!(!stage.artifacts.is_empty(), "stage {} has no artifacts", stage.name);
        for artifact in &stage.artifacts {
            assert!(
                config.out_dir.join(artifact).exists(),
                "missing artifact {artifact}"
            );
        }
    }
    // binary momenta requested
    assert!(config.out_dir.join("momenta_bin").read_dir().unwrap().count() > 0);

    let first = hash_files(&config.out_dir);
    assert!(first.contains_key("scaled_curves.csv"));
    assert!(first.contains_key("momenta.csv"));
    assert!(first.keys().any(|k| k.starts_with("plots/")));

    // cached rerun must reproduce byte-identical CSVs
    let started = std::time::Instant::now();
    let manifest2 = run_pipeline(&config).unwrap();
    let rerun_time = started.elapsed();
    assert_eq!(manifest.config_hash, manifest2.config_hash);
    let second = hash_files(&config.out_dir);
    assert_eq!(first, second);
    // the momenta cache must have been hit; a full re-match at this size
    // takes much longer than a cached pass
    let cache_dir = config.out_dir.join(".cache");
    let cache_entries = cache_dir.read_dir().unwrap().count();
    assert!(cache_entries >= 16, "expected momenta cache entries, got {cache_entries}");
    assert!(
        rerun_time.as_secs_f64() < 30.0,
        "cached rerun took {rerun_time:?}"
    );

    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn kernel_config_change_invalidates_momenta_cache() {
    let dir = scratch_dir("invalidate");
    let mut sim = small_sim();
    sim.n_participants = 14;
    let cohort = simulate_cohort(&sim).unwrap();
    write_cohort_inputs(&dir, &cohort).unwrap();
    let mut config = small_pipeline_config(&dir);

    run_pipeline(&config).unwrap();
    let cache_dir = config.out_dir.join(".cache");
    let before = cache_dir.read_dir().unwrap().count();

    // a one-bit-equivalent config change: different attachment weight
    config.kernel.gamma_data += 1.0;
    run_pipeline(&config).unwrap();
    let after = cache_dir.read_dir().unwrap().count();
    assert!(
        after > before,
        "kernel change must create new cache entries ({before} -> {after})"
    );

    // an fpca-only change must NOT create new momenta entries
    config.fpca.pve_multivariate = 0.85;
    run_pipeline(&config).unwrap();
    let unchanged = cache_dir.read_dir().unwrap().count();
    assert_eq!(after, unchanged, "fpca change must reuse cached momenta");

    let _ = std::fs::remove_dir_all(&dir);
}

// The DIFFEO_PA_CACHE override is exercised in the CLI integration
// tests, where each invocation gets its own process environment.
