//! SVG figures rendered from the result CSVs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use log::warn;
use plotters::prelude::*;
use serde::Deserialize;

use crate::pipeline::RunManifest;

pub const EPS_PLOT: &str = "eps_vs_t.svg";
pub const RESIDUAL_PLOT: &str = "residuals_vs_t.svg";
pub const AMPLITUDE_PLOT: &str = "amplitude_vs_tau.svg";

const SIZE: (u32, u32) = (720, 480);

type PlotResult = Result<(), Box<dyn std::error::Error>>;

#[derive(Debug, Deserialize)]
struct BranchRow {
    t: f64,
    eps_t: f64,
    res_wgl1: f64,
    res_wgl2: f64,
}

#[derive(Debug, Deserialize)]
struct ThresholdRow {
    tau_over_tau0: f64,
    norm_phi: f64,
    init_kind: String,
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, csv::Error> {
    csv::Reader::from_path(path)?.deserialize().collect()
}

/// Renders every figure whose CSV is present and non-empty; returns the
/// written paths. Missing or unreadable inputs are skipped with a warning.
pub fn emit_plots(manifest: &RunManifest) -> Vec<PathBuf> {
    let dir = &manifest.output_dir;
    let mut written = Vec::new();

    if let Some(path) = &manifest.files.branch {
        match read_rows::<BranchRow>(path) {
            Ok(rows) if !rows.is_empty() => {
                for (name, render) in [
                    (EPS_PLOT, eps_plot as fn(&Path, &[BranchRow]) -> PlotResult),
                    (RESIDUAL_PLOT, residual_plot),
                ] {
                    let out = dir.join(name);
                    match render(&out, &rows) {
                        Ok(()) => written.push(out),
                        Err(e) => warn!("skipping {name}: {e}"),
                    }
                }
            }
            Ok(_) => warn!("{} has no rows; branch plots skipped", path.display()),
            Err(e) => warn!("cannot read {}: {e}; branch plots skipped", path.display()),
        }
    }

    if let Some(path) = &manifest.files.threshold {
        match read_rows::<ThresholdRow>(path) {
            Ok(rows) if rows.iter().any(|r| r.norm_phi.is_finite()) => {
                let out = dir.join(AMPLITUDE_PLOT);
                match amplitude_plot(&out, &rows) {
                    Ok(()) => written.push(out),
                    Err(e) => warn!("skipping {AMPLITUDE_PLOT}: {e}"),
                }
            }
            Ok(_) => warn!("{} has no finite rows; threshold plot skipped", path.display()),
            Err(e) => warn!("cannot read {}: {e}; threshold plot skipped", path.display()),
        }
    }
    written
}

fn padded((lo, hi): (f64, f64)) -> (f64, f64) {
    let pad = 0.05 * (hi - lo).abs().max(1e-12 * hi.abs().max(1.0));
    (lo - pad, hi + pad)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn eps_plot(out: &Path, rows: &[BranchRow]) -> PlotResult {
    let (t_lo, t_hi) = bounds(rows.iter().map(|r| r.t));
    let (e_lo, e_hi) = padded(bounds(rows.iter().map(|r| r.eps_t)));
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .caption("eps_t against t", ("sans-serif", 18))
        .build_cartesian_2d((t_lo..t_hi).log_scale(), e_lo..e_hi)?;
    chart.configure_mesh().x_desc("t").y_desc("eps_t").draw()?;
    let points: Vec<_> = rows.iter().map(|r| (r.t, r.eps_t)).collect();
    chart.draw_series(LineSeries::new(points.iter().copied(), &BLUE))?;
    chart.draw_series(points.iter().map(|&p| Circle::new(p, 3, BLUE.filled())))?;
    root.present()?;
    Ok(())
}

fn residual_plot(out: &Path, rows: &[BranchRow]) -> PlotResult {
    let positive = |v: f64| v.is_finite() && v > 0.0;
    let (t_lo, t_hi) = bounds(rows.iter().map(|r| r.t));
    let (r_lo, r_hi) = bounds(
        rows.iter()
            .flat_map(|r| [r.res_wgl1, r.res_wgl2])
            .filter(|&v| positive(v)),
    );
    if !(r_lo <= r_hi) {
        return Err("no positive residuals".into());
    }
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .caption("weak residuals against t", ("sans-serif", 18))
        .build_cartesian_2d((t_lo..t_hi).log_scale(), (r_lo * 0.5..r_hi * 2.0).log_scale())?;
    chart.configure_mesh().x_desc("t").y_desc("residual").draw()?;
    for (label, color, pick) in [
        ("res_wgl1", RED, (|r: &BranchRow| r.res_wgl1) as fn(&BranchRow) -> f64),
        ("res_wgl2", BLUE, |r: &BranchRow| r.res_wgl2),
    ] {
        let points: Vec<_> = rows.iter().map(|r| (r.t, pick(r))).filter(|p| positive(p.1)).collect();
        chart
            .draw_series(points.iter().map(|&p| Circle::new(p, 3, color.filled())))?
            .label(label)
            .legend(move |(x, y)| Circle::new((x, y), 3, color.filled()));
    }
    chart.configure_series_labels().border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}

fn amplitude_plot(out: &Path, rows: &[ThresholdRow]) -> PlotResult {
    let (x_lo, x_hi) = padded(bounds(rows.iter().map(|r| r.tau_over_tau0)));
    let (_, y_hi) = bounds(rows.iter().map(|r| r.norm_phi));
    let mut series: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.norm_phi.is_finite()) {
        series.entry(&r.init_kind).or_default().push((r.tau_over_tau0, r.norm_phi));
    }
    let root = SVGBackend::new(out, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(16)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .caption("minimizer amplitude against tau/tau0", ("sans-serif", 18))
        .build_cartesian_2d(x_lo..x_hi, 0.0..(1.1 * y_hi).max(1e-3))?;
    chart.configure_mesh().x_desc("tau/tau0").y_desc("|phi|_L2").draw()?;
    for (i, (kind, mut points)) in series.into_iter().enumerate() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color))?
            .label(kind)
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
    }
    chart.configure_series_labels().border_style(BLACK).draw()?;
    root.present()?;
    Ok(())
}
