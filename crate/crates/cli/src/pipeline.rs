//! Spectrum, branch and threshold pipelines and the run manifest.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use glbranch_core::bundle::{make_constant_curvature_field, GaugeField};
use glbranch_core::energy::{threshold_csv, threshold_scan, MinimizeOptions, ThresholdRow};
use glbranch_core::geometry::{build_icosphere, build_torus, DecMesh, GenusLabel};
use glbranch_core::reduction::{
    branch_csv, contraction_t0, link_branch, solve_branch_point, BranchRecord, CouplingParams, ReductionSettings,
};
use glbranch_core::spectral::{eigensolve, SpectralData};
use glbranch_core::verify::{weitzenboeck_check, WeitzenboeckReport};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{FieldError, Geometry, RunConfig};
use crate::{plots, ConfigError, RunError};

pub const SPECTRUM_CSV: &str = "spectrum.csv";
pub const BRANCH_CSV: &str = "branch.csv";
pub const THRESHOLD_CSV: &str = "threshold.csv";
pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSummary {
    pub genus: String,
    pub vertices: usize,
    pub edges: usize,
    pub faces: usize,
    pub euler_characteristic: i64,
    pub total_volume: f64,
    pub mesh_size: f64,
}

impl MeshSummary {
    fn of(mesh: &DecMesh) -> Self {
        Self {
            genus: match mesh.genus_label {
                GenusLabel::Torus => "torus",
                GenusLabel::Sphere => "sphere",
            }
            .into(),
            vertices: mesh.vertex_count(),
            edges: mesh.edge_count(),
            faces: mesh.face_count(),
            euler_characteristic: mesh.euler_characteristic(),
            total_volume: mesh.total_volume,
            mesh_size: mesh.mesh_size(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub lambda: f64,
    /// `D + 1`
    pub cluster_size: usize,
    pub f0: f64,
    pub chern_number: i64,
    pub eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputFiles {
    pub spectrum: Option<PathBuf>,
    pub branch: Option<PathBuf>,
    pub threshold: Option<PathBuf>,
    pub plots: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub weitzenboeck: WeitzenboeckReport,
    pub contraction_t0: Option<f64>,
    pub max_branch_res_wgl1: Option<f64>,
    pub max_branch_res_wgl2: Option<f64>,
    pub branch_failures: usize,
    pub threshold_failures: usize,
}

/// Failure of a single grid point; the rest of the run proceeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub stage: String,
    /// `t` for branch points, `τ` for threshold rows.
    pub parameter: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub config: RunConfig,
    pub output_dir: PathBuf,
    pub mesh: MeshSummary,
    pub spectrum: SpectralSummary,
    pub files: OutputFiles,
    pub verification: Verification,
    pub errors: Vec<ItemError>,
    pub wall_clock_seconds: f64,
}

fn write_file(path: &Path, contents: &str) -> Result<(), RunError> {
    std::fs::write(path, contents).map_err(|source| RunError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn build_field(config: &RunConfig) -> Result<GaugeField, RunError> {
    let mesh = match config.geometry {
        Geometry::Torus => build_torus(config.side_length, config.resolution)?,
        Geometry::Icosphere => build_icosphere(config.resolution)?,
    };
    Ok(make_constant_curvature_field(Arc::new(mesh), config.degree)?)
}

fn reduction_settings(config: &RunConfig) -> ReductionSettings {
    ReductionSettings {
        fixed_point_tol: config.tolerances.fixed_point,
        kernel_tol: config.tolerances.kernel,
        linear_tol: config.tolerances.linear_solve,
        seed: config.seed,
        ..ReductionSettings::default()
    }
}

/// Runs the configured pipeline, writes CSVs, plots and `manifest.json`
/// into `config.output_dir`. `workers` caps the grid parallelism; `None`
/// uses every core.
pub fn run(config: &RunConfig, workers: Option<usize>) -> Result<RunManifest, RunError> {
    config.validate()?;
    let started = Instant::now();
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
        path: dir.clone(),
        source,
    })?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.unwrap_or(0))
        .build()?;

    let field = build_field(config)?;
    let spec = eigensolve(field.laplacian0(), config.eigen_count)?;
    info!(
        "lambda = {:.12}, cluster size {}, f0 = {:.12}",
        spec.lambda, spec.kernel_dim, field.f0
    );
    let spectrum_path = dir.join(SPECTRUM_CSV);
    write_file(&spectrum_path, &spec.to_csv())?;

    let mut files = OutputFiles {
        spectrum: Some(spectrum_path),
        ..OutputFiles::default()
    };
    let mut verification = Verification {
        weitzenboeck: weitzenboeck_check(&field, &spec),
        contraction_t0: None,
        max_branch_res_wgl1: None,
        max_branch_res_wgl2: None,
        branch_failures: 0,
        threshold_failures: 0,
    };
    let mut errors = Vec::new();
    let params = CouplingParams::new(config.kappa2, spec.lambda / config.kappa2, config.p)?;

    if config.mode.runs_branch() {
        let records = run_branch(config, &field, &spec, &params, &pool, &mut verification)?;
        for rec in &records {
            match &rec.result {
                Ok(p) => {
                    let r1 = verification.max_branch_res_wgl1.get_or_insert(0.0);
                    *r1 = r1.max(p.residual_wgl1);
                    let r2 = verification.max_branch_res_wgl2.get_or_insert(0.0);
                    *r2 = r2.max(p.residual_wgl2);
                }
                Err(e) => {
                    verification.branch_failures += 1;
                    errors.push(ItemError {
                        stage: "branch".into(),
                        parameter: rec.t,
                        detail: e.to_string(),
                    });
                }
            }
        }
        let path = dir.join(BRANCH_CSV);
        write_file(&path, &branch_csv(&field, &records))?;
        files.branch = Some(path);
    }

    if config.mode.runs_threshold() {
        let rows = run_threshold(config, &field, &spec, &params, &pool, &mut errors);
        verification.threshold_failures = rows.iter().filter(|r| r.error.is_some()).count();
        for row in rows.iter().filter(|r| r.error.is_some()) {
            errors.push(ItemError {
                stage: format!("threshold/{}", row.init_kind),
                parameter: row.tau,
                detail: row.error.clone().unwrap_or_default(),
            });
        }
        let path = dir.join(THRESHOLD_CSV);
        write_file(&path, &threshold_csv(&rows))?;
        files.threshold = Some(path);
    }

    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        output_dir: dir.clone(),
        mesh: MeshSummary::of(&field.mesh),
        spectrum: SpectralSummary {
            lambda: spec.lambda,
            cluster_size: spec.kernel_dim,
            f0: field.f0,
            chern_number: field.chern_number()?,
            eigenvalues: spec.eigenvalues.clone(),
        },
        files,
        verification,
        errors,
        wall_clock_seconds: 0.0,
    };
    manifest.files.plots = plots::emit_plots(&manifest);
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    let path = dir.join(MANIFEST);
    write_file(&path, &serde_json::to_string_pretty(&manifest)?)?;
    if !manifest.errors.is_empty() {
        warn!("{} grid points failed; see {}", manifest.errors.len(), path.display());
    }
    Ok(manifest)
}

fn run_branch(
    config: &RunConfig,
    field: &GaugeField,
    spec: &SpectralData,
    params: &CouplingParams,
    pool: &rayon::ThreadPool,
    verification: &mut Verification,
) -> Result<Vec<BranchRecord>, RunError> {
    let grid = config.t_grid.expect("validated: branch runs carry a t grid");
    let settings = reduction_settings(config);
    let t0 = contraction_t0(field, params, spec, &settings)?;
    verification.contraction_t0 = Some(t0);
    if grid.t_max >= t0 {
        return Err(ConfigError::Invalid(vec![FieldError {
            field: "t_grid.t_max",
            message: format!("{} is not below the contraction cap {t0:.6e}", grid.t_max),
        }])
        .into());
    }
    let ts = grid.values();
    info!("branch: {} points in [{:e}, {:e}], t0 = {t0:.6e}", ts.len(), grid.t_min, grid.t_max);
    let points = pool.install(|| {
        ts.par_iter()
            .map(|&t| (t, solve_branch_point(field, t, params, spec, &settings)))
            .collect::<Vec<_>>()
    });
    Ok(link_branch(field, points))
}

fn run_threshold(
    config: &RunConfig,
    field: &GaugeField,
    spec: &SpectralData,
    params: &CouplingParams,
    pool: &rayon::ThreadPool,
    errors: &mut Vec<ItemError>,
) -> Vec<ThresholdRow> {
    let tau0 = params.tau;
    let taus: Vec<f64> = config
        .tau_values
        .iter()
        .copied()
        .chain(config.tau_ratios.iter().map(|r| r * tau0))
        .collect();
    info!("threshold: {} values of tau, tau0 = {tau0:.12}", taus.len());
    let opts = MinimizeOptions::default();
    let per_tau = pool.install(|| {
        taus.par_iter()
            .map(|&tau| {
                let rows = threshold_scan(field, params, spec, &[tau], &opts, config.seed, config.allow_small_kappa);
                (tau, rows)
            })
            .collect::<Vec<_>>()
    });
    let mut rows = Vec::new();
    for (tau, result) in per_tau {
        match result {
            Ok(r) => rows.extend(r),
            Err(e) => errors.push(ItemError {
                stage: "threshold".into(),
                parameter: tau,
                detail: e.to_string(),
            }),
        }
    }
    rows
}
