use std::path::Path;
use std::process::Command;

use glbranch_cli::config::TGrid;
use glbranch_cli::pipeline::{BRANCH_CSV, MANIFEST, SPECTRUM_CSV, THRESHOLD_CSV};
use glbranch_cli::plots::{AMPLITUDE_PLOT, EPS_PLOT, RESIDUAL_PLOT};
use glbranch_cli::{emit_plots, run, ConfigError, Mode, RunConfig, RunError, RunManifest};

fn config(dir: &Path, mode: &str) -> RunConfig {
    RunConfig::from_toml_str(&format!(
        r#"
geometry = "torus"
resolution = 10
degree = 1
kappa2 = 1.0
mode = "{mode}"
tau_ratios = [0.9, 1.1]
seed = 11
output_dir = "{}"

[t_grid]
t_max = 0.2
t_min = 0.02
points = 5
"#,
        dir.display()
    ))
    .unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn identical_configs_give_identical_csvs() {
    let root = tempfile::tempdir().unwrap();
    let runs: Vec<_> = [(Some(1), "a"), (Some(4), "b"), (None, "c")]
        .into_iter()
        .map(|(workers, name)| {
            let dir = root.path().join(name);
            run(&config(&dir, "all"), workers).unwrap();
            dir
        })
        .collect();
    for name in [SPECTRUM_CSV, BRANCH_CSV, THRESHOLD_CSV] {
        let first = read(&runs[0], name);
        assert!(first.len() > 100, "{name} is nearly empty");
        for other in &runs[1..] {
            assert!(first == read(other, name), "{name} differs between runs");
        }
    }
}

#[test]
fn spectrum_mode_matches_the_flat_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), "spectrum");
    c.resolution = 32;
    let manifest = run(&c, None).unwrap();
    let lambda = manifest.spectrum.lambda;
    assert!((lambda - 2.0 * std::f64::consts::PI).abs() < 0.02 * 2.0 * std::f64::consts::PI);
    assert_eq!(manifest.spectrum.cluster_size, 1);
    assert!(manifest.files.branch.is_none() && manifest.files.threshold.is_none());
    let csv = String::from_utf8(read(dir.path(), SPECTRUM_CSV)).unwrap();
    assert!(csv.starts_with("index,eigenvalue,cluster_id,residual\n"));
}

#[test]
fn branch_mode_polishes_every_point() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run(&config(dir.path(), "branch"), Some(2)).unwrap();
    assert!(manifest.errors.is_empty(), "{:?}", manifest.errors);
    assert!(manifest.verification.max_branch_res_wgl1.unwrap() <= 1e-10);
    assert!(manifest.verification.max_branch_res_wgl2.unwrap() <= 1e-10);

    let mut reader = csv::Reader::from_path(dir.path().join(BRANCH_CSV)).unwrap();
    let ts: Vec<f64> = reader.records().map(|r| r.unwrap()[0].parse().unwrap()).collect();
    assert_eq!(ts.len(), 5);
    assert!(ts.windows(2).all(|w| w[1] < w[0]));

    let written: serde_json::Value = serde_json::from_slice(&read(dir.path(), MANIFEST)).unwrap();
    assert_eq!(written["config"]["kappa2"], 1.0);
    assert_eq!(written["spectrum"]["cluster_size"], 1);
}

#[test]
fn plots_follow_the_csvs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = run(&config(dir.path(), "all"), None).unwrap();
    for name in [EPS_PLOT, RESIDUAL_PLOT, AMPLITUDE_PLOT] {
        let svg = String::from_utf8(read(dir.path(), name)).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"), "{name}");
        assert!(manifest.files.plots.contains(&dir.path().join(name)));
    }
}

#[test]
fn missing_or_empty_results_produce_no_plots() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest: RunManifest = run(&config(dir.path(), "spectrum"), None).unwrap();
    assert!(manifest.files.plots.is_empty());

    std::fs::write(dir.path().join(BRANCH_CSV), "t,tau_t,eps_t,res_wgl1,res_wgl2\n").unwrap();
    manifest.files.branch = Some(dir.path().join(BRANCH_CSV));
    manifest.files.threshold = Some(dir.path().join("absent.csv"));
    assert!(emit_plots(&manifest).is_empty());
    assert!(!dir.path().join(EPS_PLOT).exists());
}

#[test]
fn t_max_beyond_the_contraction_cap_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = config(dir.path(), "branch");
    c.t_grid = Some(TGrid {
        t_max: 50.0,
        t_min: 0.1,
        points: 3,
    });
    match run(&c, None) {
        Err(RunError::Config(ConfigError::Invalid(errors))) => assert_eq!(errors[0].field, "t_grid.t_max"),
        other => panic!("expected a t_max rejection, got {other:?}"),
    }
}

#[test]
fn binary_rejects_zero_kappa_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(
        &path,
        "geometry = \"torus\"\nresolution = 8\ndegree = 1\nkappa2 = 0.0\nmode = \"spectrum\"\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_glbranch"))
        .args(["--config", path.to_str().unwrap(), "--out"])
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("kappa2"), "{stderr}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn binary_overrides_mode_and_output() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    let text = toml::to_string(&config(&dir.path().join("ignored"), "all")).unwrap();
    std::fs::write(&path, text).unwrap();
    let out_dir = dir.path().join("chosen");
    let out = Command::new(env!("CARGO_BIN_EXE_glbranch"))
        .args(["--config", path.to_str().unwrap(), "--mode", "spectrum", "--seed", "3", "--workers", "1"])
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join(SPECTRUM_CSV).exists());
    assert!(!out_dir.join(BRANCH_CSV).exists());
    assert!(!dir.path().join("ignored").exists());
    let manifest: RunManifest = serde_json::from_slice(&read(&out_dir, MANIFEST)).unwrap();
    assert_eq!(manifest.config.mode, Mode::Spectrum);
    assert_eq!(manifest.config.seed, 3);
}
