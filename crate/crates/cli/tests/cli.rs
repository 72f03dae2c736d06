use std::path::Path;
use std::process::Command;

use entangle_cli::config::SourceKind;
use entangle_cli::{execute, ExperimentConfig, RunError, RunOptions, Stage};
use entangle_core::chsh::ideal_single_photon_chsh;
use entangle_core::Pipeline;

fn entangle(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_entangle")).args(args).output().expect("binary runs")
}

fn summary_value(path: &Path, key: &str) -> String {
    let text = std::fs::read_to_string(path).unwrap();
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")).map(str::to_string))
        .unwrap_or_else(|| panic!("{key} missing from {}", path.display()))
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

fn small() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.counts.per_intensity = 20_000;
    c.counts.vacuum = 100_000;
    c.counts.direct = 20_000;
    c
}

#[test]
fn config_errors_exit_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 3\n[counts]\nvacuum = 0\n").unwrap();
    let out = entangle(&["chsh-scan", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bad.toml:3") && err.contains("counts.vacuum"), "{err}");

    std::fs::write(&cfg, "[chsh]\nt_step = \"fast\"\n").unwrap();
    let out = entangle(&["chsh-scan", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml:2:"));
}

#[test]
fn fair_sampling_verdicts_and_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = |n: &str| dir.path().join(n).to_string_lossy().into_owned();
    let pass = entangle(&["fair-sampling-check", "--out", &o("pass")]);
    assert_eq!(pass.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("pass/fair_sampling_report.txt")).unwrap();
    assert_eq!(report.lines().last(), Some("PASS"));
    let residual: f64 = summary_value(&dir.path().join("pass/fair_sampling_report.txt"), "max_residual").parse().unwrap();
    assert!(residual <= 1e-10);

    let fault = entangle(&["fair-sampling-check", "--inject-fault", "--out", &o("fault")]);
    assert_eq!(fault.status.code(), Some(3));
    let report = std::fs::read_to_string(dir.path().join("fault/fair_sampling_report.txt")).unwrap();
    assert_eq!(report.lines().last(), Some("FAIL"));

    let explore = entangle(&["fair-sampling-check", "--cutoff", "2", "--out", &o("explore")]);
    assert_eq!(explore.status.code(), Some(0));
    let report = std::fs::read_to_string(dir.path().join("explore/fair_sampling_report.txt")).unwrap();
    assert_eq!(report.lines().last(), Some("REPORT-ONLY"));
}

#[test]
fn manifest_lists_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let config = small();
    for stage in [Stage::Simulate, Stage::CorrelationScan, Stage::ChshScan, Stage::DecoyEstimate] {
        let out = dir.path().join(stage.name());
        let report = execute(stage, &config, &out, &RunOptions::default()).unwrap();
        let manifest: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["command"], stage.name());
        assert_eq!(manifest["config_hash"], config.hash());
        let files = manifest["files"].as_array().unwrap();
        assert_eq!(files.len(), report.files.len());
        for f in files {
            let meta = std::fs::metadata(out.join(f["path"].as_str().unwrap())).unwrap();
            assert!(meta.len() > 0);
            assert_eq!(meta.len(), f["bytes"].as_u64().unwrap());
        }
        assert!(out.join("timings.json").exists());
    }
}

#[test]
fn exact_csv_headers() {
    let dir = tempfile::tempdir().unwrap();
    let config = small();
    execute(Stage::ChshScan, &config, &dir.path().join("c"), &RunOptions::default()).unwrap();
    execute(Stage::CorrelationScan, &config, &dir.path().join("e"), &RunOptions::default()).unwrap();
    let first = |p: &str| std::fs::read_to_string(dir.path().join(p)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(first("c/chsh.csv"), "T,s_est,s_lower,s_upper");
    assert_eq!(first("e/correlation.csv"), "dtheta,e_est,e_lower,e_upper");
}

#[test]
fn thresholds_without_survivors_are_marked_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small();
    config.chsh.t_start = 7.0;
    config.chsh.t_stop = 7.0;
    execute(Stage::ChshScan, &config, dir.path(), &RunOptions::default()).unwrap();
    let rows = csv_rows(&dir.path().join("chsh.csv"));
    assert_eq!(rows, vec![vec!["7", "invalid", "invalid", "invalid"]]);
}

#[test]
fn unconverged_tomography_exits_4_and_keeps_the_partial_result() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.toml");
    std::fs::write(&cfg, "[counts]\nper_intensity = 5000\nvacuum = 20000\n[tomography]\ncutoff = 1\nmax_iterations = 2\n")
        .unwrap();
    let out = dir.path().join("o");
    let run = entangle(&["tomography", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(4));
    assert_eq!(summary_value(&out.join("tomography_summary.txt"), "converged"), "false");
    assert!(out.join("density_matrix.txt").exists());
    let manifest = std::fs::read_to_string(out.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"status\": \"failed\""));
}

#[test]
fn decoy_estimate_needs_a_coherent_source() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small();
    config.pipeline = Pipeline::IdealFock;
    config.source.kind = SourceKind::Fock;
    let err = execute(Stage::DecoyEstimate, &config, dir.path(), &RunOptions::default()).unwrap_err();
    assert!(matches!(err, RunError::Config(_)));
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn decoy_estimate_reports_weights_and_bounds() {
    let dir = tempfile::tempdir().unwrap();
    execute(Stage::DecoyEstimate, &small(), dir.path(), &RunOptions::default()).unwrap();
    let delta: f64 = summary_value(&dir.path().join("decoy.txt"), "delta").parse().unwrap();
    assert!((delta - 1.086521830497795e-3).abs() < 1e-15);
    let rows = csv_rows(&dir.path().join("decoy_estimates.csv"));
    assert_eq!(rows.len(), 16);
    for r in rows {
        let v: Vec<f64> = r[3..].iter().map(|x| x.parse().unwrap()).collect();
        assert!(v[1] <= v[0] && v[0] <= v[2], "{r:?}");
    }
}

/// Default counts at threshold 1: cosine amplitude and the
/// quadrature row.
#[test]
fn correlation_scan_at_reference_operating_point() {
    let dir = tempfile::tempdir().unwrap();
    execute(Stage::CorrelationScan, &ExperimentConfig::default(), dir.path(), &RunOptions::default()).unwrap();
    let amplitude: f64 = summary_value(&dir.path().join("correlation_fit.txt"), "fit_amplitude").parse().unwrap();
    assert!((0.95..=1.09).contains(&amplitude), "amplitude {amplitude}");
    let rows = csv_rows(&dir.path().join("correlation.csv"));
    let errors = csv_rows(&dir.path().join("correlation_errors.csv"));
    let k = rows.iter().position(|r| (r[0].parse::<f64>().unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-6).unwrap();
    let e: f64 = rows[k][1].parse().unwrap();
    let se: f64 = errors[k][1].parse().unwrap();
    assert!(e.abs() <= 3.0 * se, "E(π/2) = {e} ± {se}");
}

#[test]
fn chsh_scan_crosses_two_early_and_starts_on_the_oracle() {
    let dir = tempfile::tempdir().unwrap();
    execute(Stage::ChshScan, &ExperimentConfig::default(), dir.path(), &RunOptions::default()).unwrap();
    let rows = csv_rows(&dir.path().join("chsh.csv"));
    let errors = csv_rows(&dir.path().join("chsh_errors.csv"));
    let first_violation = rows.iter().find(|r| r[1].parse::<f64>().unwrap() > 2.0).map(|r| r[0].parse::<f64>().unwrap()).unwrap();
    assert!(first_violation <= 0.25, "first T with S > 2: {first_violation}");
    let s0: f64 = rows[0][1].parse().unwrap();
    let se0: f64 = errors[0][1].parse().unwrap();
    let oracle = ideal_single_photon_chsh::<f64>(0.0).unwrap();
    assert!((s0 - oracle).abs() <= 3.0 * se0, "T=0: {s0} vs {oracle} ± {se0}");
}

#[test]
fn ideal_fock_tomography_reaches_the_bell_state() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = ExperimentConfig { pipeline: Pipeline::IdealFock, ..ExperimentConfig::default() };
    config.source.kind = SourceKind::Fock;
    config.counts.direct = 100_000;
    config.tomography.cutoff = 3;
    execute(Stage::Tomography, &config, dir.path(), &RunOptions::default()).unwrap();
    let summary = dir.path().join("tomography_summary.txt");
    let fidelity: f64 = summary_value(&summary, "fidelity").parse().unwrap();
    assert!(fidelity >= 0.98, "fidelity {fidelity}");
    assert_eq!(summary_value(&summary, "log_likelihood_monotone"), "true");
}

fn decoy_tomography(scale: u64) -> (f64, f64) {
    let dir = tempfile::tempdir().unwrap();
    let config = ExperimentConfig::default().scaled(scale);
    execute(Stage::Tomography, &config, dir.path(), &RunOptions::default()).unwrap();
    let summary = dir.path().join("tomography_summary.txt");
    (summary_value(&summary, "fidelity").parse().unwrap(), summary_value(&summary, "multiphoton_mass").parse().unwrap())
}

#[test]
fn decoy_tomography_at_default_counts() {
    let (fidelity, multiphoton) = decoy_tomography(1);
    assert!(fidelity >= 0.90, "fidelity {fidelity}");
    assert!(multiphoton <= 0.03, "multiphoton mass {multiphoton}");
}

/// Regression thresholds from the first run at one tenth of the counts
/// (fidelity 0.663, multiphoton mass 0.053).
#[test]
fn decoy_tomography_at_tenth_counts_regression() {
    let (fidelity, multiphoton) = decoy_tomography(10);
    assert!(fidelity >= 0.60, "fidelity {fidelity}");
    assert!(multiphoton <= 0.06, "multiphoton mass {multiphoton}");
}
