//! Residual checks that recompute everything from raw cochains, plus the
//! maximum-principle and Weitzenböck diagnostics.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bundle::{self, GaugeField};
use crate::error::{check_len, Result};
use crate::geometry::{Degree, GenusLabel};
use crate::linalg;
use crate::reduction::CouplingParams;
use crate::spectral::SpectralData;

/// Edge data `(U_e, (∇⁰ + iA)φ_e, φ_mid,e)` computed directly.
fn edge_values(field: &GaugeField, a: &[f64], phi: &[Complex64]) -> Vec<(Complex64, Complex64, Complex64)> {
    field
        .mesh
        .edges
        .iter()
        .zip(&field.link_phases)
        .zip(a)
        .map(|((&[v, w], theta), ae)| {
            let u = Complex64::from_polar(1.0, *theta);
            let moved = u * phi[w];
            let mid = 0.5 * (phi[v] + moved);
            let d = moved - phi[v] + Complex64::new(0.0, *ae) * mid;
            (u, d, mid)
        })
        .collect()
}

/// Weak residuals `(res_wgl1, res_wgl2)`: the dual norms of both
/// Ginzburg–Landau equations over coclosed 1-forms and over sections.
pub fn weak_residuals(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
) -> Result<(f64, f64)> {
    let mesh = &field.mesh;
    check_len(mesh.edge_count(), a.len())?;
    check_len(mesh.vertex_count(), phi.len())?;
    let edges = edge_values(field, a, phi);

    // first equation, as a 1-form against the M1 pairing
    let mut star_f = vec![0.0; mesh.edge_count()];
    for face in 0..mesh.face_count() {
        let flux: f64 =
            field.plaquette_flux[face] + mesh.d1.row(face).map(|(e, s)| s * a[e]).sum::<f64>();
        for (e, s) in mesh.d1.row(face) {
            star_f[e] += s * mesh.hodge2[face] * flux;
        }
    }
    let r1: Vec<f64> = star_f
        .iter()
        .zip(&mesh.hodge1)
        .zip(&edges)
        .map(|((sf, w), (_, d, mid))| sf / w - (d.conj() * mid).im)
        .collect();
    let p1 = bundle::coulomb_project(mesh, &r1)?;
    let res1 = linalg::weighted_norm(&mesh.hodge1, &p1);

    // second equation, accumulated vertex by vertex
    let mut r2 = vec![Complex64::new(0.0, 0.0); mesh.vertex_count()];
    for ((&[v, w], (u, d, _)), (ae, h1)) in mesh
        .edges
        .iter()
        .zip(&edges)
        .zip(a.iter().zip(&mesh.hodge1))
    {
        let half = Complex64::new(0.0, 0.5 * ae);
        r2[v] += h1 * (-1.0 - half) * d;
        r2[w] += h1 * u.conj() * (1.0 - half) * d;
    }
    for ((r, p), h0) in r2.iter_mut().zip(phi).zip(&mesh.hodge0) {
        *r = *r / h0 + params.kappa2 * (p.norm_sqr() - params.tau) * p;
    }
    let res2 = linalg::weighted_norm(&mesh.hodge0, &r2);
    Ok((res1, res2))
}

/// `|∇φ|²` at vertices: `Σ_{e∋v} h1 |(∇⁰+iA)φ_e|² / (2 h0_v)`.
pub fn vertex_gradient_density(field: &GaugeField, a: &[f64], phi: &[Complex64]) -> Vec<f64> {
    let mesh = &field.mesh;
    let mut out = vec![0.0; mesh.vertex_count()];
    for ((&[v, w], (_, d, _)), h1) in mesh.edges.iter().zip(edge_values(field, a, phi)).zip(&mesh.hodge1) {
        let q = 0.5 * h1 * d.norm_sqr();
        out[v] += q;
        out[w] += q;
    }
    out.iter_mut().zip(&mesh.hodge0).for_each(|(o, h)| *o /= h);
    out
}

/// Face values of `∇^{1,0}φ` and `∇^{0,1}φ` on the torus grid, in the frame
/// of the lower-left corner; `None` off the torus.
///
/// With `∇_x, ∇_y` the averaged edge derivatives,
/// `∇^{1,0} = (∇_x + i∇_y)/√2` and `∇^{0,1} = (∇_x − i∇_y)/√2`, so that
/// `|∇^{1,0}|² + |∇^{0,1}|² = |∇_x|² + |∇_y|²`.
pub fn holomorphic_split(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
) -> Option<Vec<(Complex64, Complex64)>> {
    let grid = field.mesh.torus?;
    let n = grid.n;
    let h = grid.spacing();
    let edges = edge_values(field, a, phi);
    let mut out = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let bottom = grid.x_edge(i, j);
            let top = grid.x_edge(i, (j + 1) % n);
            let left = grid.y_edge(i, j);
            let right = grid.y_edge((i + 1) % n, j);
            let dx = (edges[bottom].1 + edges[left].0 * edges[top].1) / (2.0 * h);
            let dy = (edges[left].1 + edges[bottom].0 * edges[right].1) / (2.0 * h);
            let s = std::f64::consts::FRAC_1_SQRT_2;
            let i_unit = Complex64::new(0.0, 1.0);
            out.push(((dx + i_unit * dy) * s, (dx - i_unit * dy) * s));
        }
    }
    Some(out)
}

/// `(‖∇^{1,0}φ‖, ‖∇^{0,1}φ‖)` over the torus faces.
pub fn holomorphic_norms(field: &GaugeField, phi: &[Complex64]) -> Option<(f64, f64)> {
    let zero = vec![0.0; field.edge_count()];
    let split = holomorphic_split(field, &zero, phi)?;
    let (mut p, mut q) = (0.0, 0.0);
    for ((u, v), w) in split.iter().zip(&field.mesh.hodge2) {
        p += u.norm_sqr() / w;
        q += v.norm_sqr() / w;
    }
    Some((p.sqrt(), q.sqrt()))
}

/// Relative defect of `(Δ + |φ|²) f = |∇^{1,0}φ|² − |∇^{0,1}φ|²` on the
/// torus faces, `f` the curvature density; `None` off the torus.
pub fn f_identity_defect(field: &GaugeField, a: &[f64], phi: &[Complex64]) -> Option<f64> {
    let grid = field.mesh.torus?;
    let n = grid.n;
    let h2 = grid.spacing().powi(2);
    let split = holomorphic_split(field, a, phi)?;
    let da = field.mesh.d1(a);
    let f: Vec<f64> = (0..field.mesh.face_count())
        .map(|k| (field.plaquette_flux[k] + da[k]) * field.mesh.hodge2[k])
        .collect();
    let (mut defect, mut scale) = (0.0, 0.0);
    for j in 0..n {
        for i in 0..n {
            let k = grid.face(i, j);
            let neighbours = [
                grid.face((i + 1) % n, j),
                grid.face((i + n - 1) % n, j),
                grid.face(i, (j + 1) % n),
                grid.face(i, (j + n - 1) % n),
            ];
            let lap = (4.0 * f[k] - neighbours.iter().map(|&m| f[m]).sum::<f64>()) / h2;
            let corners = [
                grid.vertex(i, j),
                grid.vertex((i + 1) % n, j),
                grid.vertex(i, (j + 1) % n),
                grid.vertex((i + 1) % n, (j + 1) % n),
            ];
            let s = corners.iter().map(|&v| phi[v].norm_sqr()).sum::<f64>() / 4.0;
            let (p, q) = split[k];
            let rhs = p.norm_sqr() - q.norm_sqr();
            defect += (lap + s * f[k] - rhs).powi(2);
            scale += rhs * rhs;
        }
    }
    Some((defect / scale.max(f64::MIN_POSITIVE)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeitzenboeckReport {
    /// `λ_min(Δ₀) − f₀`
    pub gap: f64,
    pub cluster_dim: usize,
    /// Holomorphic section count: `d` on the torus (`1` when `d = 0`),
    /// `d + 1` on the sphere.
    pub expected_dim: usize,
}

pub fn weitzenboeck_check(field: &GaugeField, spec: &SpectralData) -> WeitzenboeckReport {
    let d = field.degree.max(0) as usize;
    let expected_dim = match field.mesh.genus_label {
        GenusLabel::Torus => d.max(1),
        GenusLabel::Sphere => d + 1,
    };
    let lowest = spec.cluster(0);
    WeitzenboeckReport {
        gap: spec.eigenvalues[0] - field.f0,
        cluster_dim: lowest.len(),
        expected_dim,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub res_wgl1: f64,
    pub res_wgl2: f64,
    /// `min ½(τ − |φ|²)` over vertices.
    pub min_w: f64,
    /// `max |f|` over faces, `f` the curvature density; torus only.
    pub max_abs_f: Option<f64>,
    /// `min (κ²τ − |φ|² − |f|)` over faces; torus only.
    pub min_f_margin: Option<f64>,
    pub weitzenboeck_gap: Option<f64>,
    /// `‖δA‖`
    pub coulomb_defect: f64,
    /// Relative defect of `(Δ + 2κ²|φ|²) w = |∇φ|²`.
    pub w_identity_defect: f64,
    /// See [`f_identity_defect`].
    pub f_identity_defect: Option<f64>,
}

impl VerificationReport {
    /// Both maximum-principle conclusions hold where they are evaluated.
    pub fn max_principle_holds(&self) -> bool {
        self.min_w > 0.0 && self.min_f_margin.is_none_or(|m| m > 0.0)
    }
}

/// Residuals and maximum-principle diagnostics at `(A, φ)`.
pub fn max_principle_report(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
    spec: Option<&SpectralData>,
) -> Result<VerificationReport> {
    let mesh = &field.mesh;
    let (res_wgl1, res_wgl2) = weak_residuals(field, a, phi, params)?;
    let s: Vec<f64> = phi.iter().map(|v| v.norm_sqr()).collect();
    let w: Vec<f64> = s.iter().map(|x| 0.5 * (params.tau - x)).collect();
    let min_w = w.iter().copied().fold(f64::INFINITY, f64::min);

    let grad2 = vertex_gradient_density(field, a, phi);
    let lap_w = mesh.delta1(&mesh.d0(&w));
    let lhs: Vec<f64> = lap_w
        .iter()
        .zip(&w)
        .zip(&s)
        .map(|((l, wi), si)| l + 2.0 * params.kappa2 * si * wi)
        .collect();
    let diff = linalg::sub(&lhs, &grad2);
    let scale = mesh.norm(Degree::Zero, &grad2).max(f64::MIN_POSITIVE);
    let w_identity_defect = mesh.norm(Degree::Zero, &diff) / scale;

    let (max_abs_f, min_f_margin) = if mesh.torus.is_some() {
        let da = mesh.d1(a);
        let mut max_f: f64 = 0.0;
        let mut margin = f64::INFINITY;
        for (face, verts) in mesh.faces.iter().enumerate() {
            let f = (field.plaquette_flux[face] + da[face]) * mesh.hodge2[face];
            let sf = verts.iter().map(|&v| s[v]).sum::<f64>() / verts.len() as f64;
            max_f = max_f.max(f.abs());
            margin = margin.min(params.kappa2 * params.tau - sf - f.abs());
        }
        (Some(max_f), Some(margin))
    } else {
        (None, None)
    };

    Ok(VerificationReport {
        res_wgl1,
        res_wgl2,
        min_w,
        max_abs_f,
        min_f_margin,
        weitzenboeck_gap: spec.map(|sp| weitzenboeck_check(field, sp).gap),
        coulomb_defect: mesh.norm(Degree::Zero, &mesh.delta1(a)),
        w_identity_defect,
        f_identity_defect: f_identity_defect(field, a, phi),
    })
}
