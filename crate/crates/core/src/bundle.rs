//! Hermitian line bundles over a [`DecMesh`]: U(1) link phases, sections,
//! imaginary 1-forms, the connection Laplacian and the Green operators.
//!
//! Conventions. A connection is stored as one phase `θ_e` per oriented edge
//! `e = (v → w)`; parallel transport from `w` back to `v` multiplies by
//! `U_e = exp(iθ_e)`. The covariant derivative is the integrated edge
//! cochain `(∇φ)_e = U_e φ(w) − φ(v)` and its real curvature is the
//! plaquette sum `F = d1 θ`. An imaginary 1-form `i·a` is stored through
//! its real cochain `a`, acts on sections through the transported midpoint
//! `φ_mid,e = (φ(v) + U_e φ(w)) / 2`, and shifts the curvature to
//! `F + d1 a`. Gauge transformations `φ ↦ e^{if} φ` act on phases by
//! `θ ↦ θ − d0 f`.

use std::f64::consts::PI;
use std::ops::{Deref, DerefMut};
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::geometry::{DecMesh, GenusLabel};
use crate::linalg::{self, Csr, SolveStats};

const POISSON_TOL: f64 = 1e-14;
const GREEN_TOL: f64 = 1e-13;

/// Complex 0-cochain: one value per vertex.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Section(pub Vec<Complex64>);

impl Section {
    pub fn zeros(n: usize) -> Self {
        Section(vec![Complex64::new(0.0, 0.0); n])
    }

    pub fn from_real(values: &[f64]) -> Self {
        Section(values.iter().map(|&v| Complex64::new(v, 0.0)).collect())
    }

    pub fn scaled(&self, s: Complex64) -> Self {
        Section(self.0.iter().map(|v| v * s).collect())
    }

    pub fn axpy(&self, s: Complex64, other: &Section) -> Self {
        Section(self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect())
    }

    /// Pointwise `|φ|²`.
    pub fn abs2(&self) -> Vec<f64> {
        self.0.iter().map(|v| v.norm_sqr()).collect()
    }
}

impl Deref for Section {
    type Target = [Complex64];
    fn deref(&self) -> &[Complex64] {
        &self.0
    }
}

impl DerefMut for Section {
    fn deref_mut(&mut self) -> &mut [Complex64] {
        &mut self.0
    }
}

/// Real 1-cochain representing an imaginary 1-form.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OneForm {
    pub values: Vec<f64>,
    /// Set by operations whose output is coclosed by construction.
    pub coclosed: bool,
}

impl OneForm {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            coclosed: true,
        }
    }

    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            coclosed: false,
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            coclosed: self.coclosed,
        }
    }
}

impl Deref for OneForm {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.values
    }
}

/// Norms carried by a section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionNorms {
    pub l2: f64,
    pub l4: f64,
    pub lp: f64,
    pub p: f64,
    /// `‖∇⁰φ‖_{L²} + ‖φ‖_{Lᵖ}`
    pub x: f64,
}

/// `Δ₀ = (∇⁰)*∇⁰`, stored as the Hermitian stiffness `K = D^H M1 D` and the
/// vertex masses, so that `Δ₀ = M0^{-1} K`.
#[derive(Debug, Clone)]
pub struct ConnectionLaplacian {
    pub stiffness: Csr<Complex64>,
    pub mass: Vec<f64>,
    inv_sqrt_mass: Vec<f64>,
}

impl ConnectionLaplacian {
    fn new(stiffness: Csr<Complex64>, mass: Vec<f64>) -> Self {
        let inv_sqrt_mass = mass.iter().map(|m| 1.0 / m.sqrt()).collect();
        Self {
            stiffness,
            mass,
            inv_sqrt_mass,
        }
    }

    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    /// `Δ₀ φ`
    pub fn apply(&self, phi: &[Complex64]) -> Vec<Complex64> {
        self.stiffness
            .mul_vec(phi)
            .into_iter()
            .zip(&self.mass)
            .map(|(v, m)| v / m)
            .collect()
    }

    /// `M0^{-1/2} K M0^{-1/2} y`, the Euclidean-Hermitian form of `Δ₀`.
    pub fn apply_symmetric(&self, y: &[Complex64]) -> Vec<Complex64> {
        let x: Vec<Complex64> = y
            .iter()
            .zip(&self.inv_sqrt_mass)
            .map(|(v, s)| v * s)
            .collect();
        self.stiffness
            .mul_vec(&x)
            .into_iter()
            .zip(&self.inv_sqrt_mass)
            .map(|(v, s)| v * s)
            .collect()
    }

    pub fn inv_sqrt_mass(&self) -> &[f64] {
        &self.inv_sqrt_mass
    }

    /// Gershgorin bound on the largest eigenvalue.
    pub fn upper_bound(&self) -> f64 {
        (0..self.dim())
            .map(|r| {
                self.stiffness
                    .row(r)
                    .map(|(c, v)| v.norm() * self.inv_sqrt_mass[r] * self.inv_sqrt_mass[c])
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}

/// Base U(1) connection `∇⁰` on a mesh.
#[derive(Debug, Clone)]
pub struct GaugeField {
    pub mesh: Arc<DecMesh>,
    pub link_phases: Vec<f64>,
    /// Principal-value plaquette curvature, radians per face.
    pub plaquette_flux: Vec<f64>,
    pub degree: i64,
    /// Mean curvature density: total flux / total volume.
    pub f0: f64,
    transport: Vec<Complex64>,
    covariant: Csr<Complex64>,
    laplacian: ConnectionLaplacian,
}

fn principal_value(x: f64) -> f64 {
    let mut y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

impl GaugeField {
    /// Builds a field from link phases, deriving curvature and degree.
    pub fn from_link_phases(mesh: Arc<DecMesh>, link_phases: Vec<f64>) -> Result<Self> {
        check_len(mesh.edge_count(), link_phases.len())?;
        let plaquette_flux: Vec<f64> = mesh
            .d1(&link_phases)
            .into_iter()
            .map(principal_value)
            .collect();
        let total: f64 = plaquette_flux.iter().sum();
        let degree = (total / (2.0 * PI)).round();
        if (total - 2.0 * PI * degree).abs() > 1e-6 {
            return Err(Error::Inconsistency(format!(
                "total flux {total} is not an integer multiple of 2π"
            )));
        }
        let transport: Vec<Complex64> = link_phases
            .iter()
            .map(|&t| Complex64::from_polar(1.0, t))
            .collect();
        let mut trip = Vec::with_capacity(2 * mesh.edge_count());
        for (e, &[tail, head]) in mesh.edges.iter().enumerate() {
            trip.push((e, head, transport[e]));
            trip.push((e, tail, Complex64::new(-1.0, 0.0)));
        }
        let covariant = Csr::from_triplets(mesh.edge_count(), mesh.vertex_count(), &trip);
        let laplacian =
            ConnectionLaplacian::new(covariant.weighted_gram(&mesh.hodge1), mesh.hodge0.clone());
        let f0 = total / mesh.total_volume;
        Ok(Self {
            mesh,
            link_phases,
            plaquette_flux,
            degree: degree as i64,
            f0,
            transport,
            covariant,
            laplacian,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.mesh.vertex_count()
    }

    pub fn edge_count(&self) -> usize {
        self.mesh.edge_count()
    }

    pub fn transport(&self) -> &[Complex64] {
        &self.transport
    }

    /// Curvature density per face (flux / area).
    pub fn curvature_density(&self) -> Vec<f64> {
        self.plaquette_flux
            .iter()
            .zip(&self.mesh.hodge2)
            .map(|(f, w)| f * w)
            .collect()
    }

    /// Integer degree from the total flux.
    pub fn chern_number(&self) -> Result<i64> {
        let total: f64 = self.plaquette_flux.iter().sum();
        let k = (total / (2.0 * PI)).round();
        if (total - 2.0 * PI * k).abs() > 1e-6 {
            return Err(Error::Inconsistency(format!(
                "total flux {total} is not an integer multiple of 2π"
            )));
        }
        Ok(k as i64)
    }

    /// Field after the gauge transformation `e^{if}`; pair with
    /// [`gauge_transform_section`].
    pub fn gauge_transform(&self, f: &[f64]) -> Result<Self> {
        check_len(self.vertex_count(), f.len())?;
        let df = self.mesh.d0(f);
        let phases = self
            .link_phases
            .iter()
            .zip(df)
            .map(|(t, d)| t - d)
            .collect();
        Self::from_link_phases(self.mesh.clone(), phases)
    }

    /// Adds a real 1-cochain to the link phases (a flat shift when the
    /// cochain is closed).
    pub fn shifted(&self, shift: &[f64]) -> Result<Self> {
        check_len(self.edge_count(), shift.len())?;
        let phases = self
            .link_phases
            .iter()
            .zip(shift)
            .map(|(t, s)| t + s)
            .collect();
        Self::from_link_phases(self.mesh.clone(), phases)
    }

    /// Transported midpoint values `(φ(v) + U_e φ(w)) / 2` per edge.
    pub fn midpoint(&self, phi: &[Complex64]) -> Vec<Complex64> {
        self.mesh
            .edges
            .iter()
            .zip(&self.transport)
            .map(|(&[tail, head], u)| 0.5 * (phi[tail] + u * phi[head]))
            .collect()
    }

    /// `(∇⁰ + i a) φ` as an integrated edge cochain.
    pub fn covariant_derivative(
        &self,
        phi: &[Complex64],
        perturbation: Option<&[f64]>,
    ) -> Result<Vec<Complex64>> {
        check_len(self.vertex_count(), phi.len())?;
        let mut out = self.covariant.mul_vec(phi);
        if let Some(a) = perturbation {
            check_len(self.edge_count(), a.len())?;
            let mid = self.midpoint(phi);
            for ((o, m), ae) in out.iter_mut().zip(mid).zip(a) {
                *o += Complex64::new(0.0, *ae) * m;
            }
        }
        Ok(out)
    }

    /// `(∇⁰)*` applied to an edge cochain.
    pub fn covariant_adjoint(&self, edge_values: &[Complex64]) -> Vec<Complex64> {
        let weighted: Vec<Complex64> = edge_values
            .iter()
            .zip(&self.mesh.hodge1)
            .map(|(v, w)| v * w)
            .collect();
        self.covariant
            .adjoint_mul_vec(&weighted)
            .into_iter()
            .zip(&self.mesh.hodge0)
            .map(|(v, m)| v / m)
            .collect()
    }

    /// Adjoint of the midpoint map: edge cochain → section.
    pub fn midpoint_adjoint(&self, edge_values: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.vertex_count()];
        for ((&[tail, head], u), (v, w)) in self
            .mesh
            .edges
            .iter()
            .zip(&self.transport)
            .zip(edge_values.iter().zip(&self.mesh.hodge1))
        {
            out[tail] += 0.5 * w * v;
            out[head] += 0.5 * w * u.conj() * v;
        }
        out.iter_mut()
            .zip(&self.mesh.hodge0)
            .for_each(|(o, m)| *o /= m);
        out
    }

    /// `(∇⁰ + i a)*(∇⁰ + i a) φ`
    pub fn perturbed_laplacian(&self, phi: &[Complex64], a: &[f64]) -> Result<Vec<Complex64>> {
        let da = self.covariant_derivative(phi, Some(a))?;
        let mut out = self.covariant_adjoint(&da);
        let coupled: Vec<Complex64> = da
            .iter()
            .zip(a)
            .map(|(v, ae)| Complex64::new(0.0, -ae) * v)
            .collect();
        for (o, m) in out.iter_mut().zip(self.midpoint_adjoint(&coupled)) {
            *o += m;
        }
        Ok(out)
    }

    /// `(∇⁰ + i a)*(∇⁰ + i a) φ − Δ₀ φ`, evaluated without cancellation.
    pub fn perturbation_terms(&self, phi: &[Complex64], a: &[f64]) -> Result<Vec<Complex64>> {
        check_len(self.vertex_count(), phi.len())?;
        check_len(self.edge_count(), a.len())?;
        let mid = self.midpoint(phi);
        let da = self.covariant_derivative(phi, Some(a))?;
        let shift: Vec<Complex64> = mid
            .iter()
            .zip(a)
            .map(|(m, ae)| Complex64::new(0.0, *ae) * m)
            .collect();
        let coupled: Vec<Complex64> = da
            .iter()
            .zip(a)
            .map(|(v, ae)| Complex64::new(0.0, -ae) * v)
            .collect();
        Ok(self
            .covariant_adjoint(&shift)
            .into_iter()
            .zip(self.midpoint_adjoint(&coupled))
            .map(|(x, y)| x + y)
            .collect())
    }

    pub fn laplacian0(&self) -> &ConnectionLaplacian {
        &self.laplacian
    }

    pub fn inner0(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        linalg::weighted_dot(&self.mesh.hodge0, a, b)
    }

    pub fn inner1(&self, a: &[Complex64], b: &[Complex64]) -> Complex64 {
        linalg::weighted_dot(&self.mesh.hodge1, a, b)
    }

    pub fn norm_l2(&self, phi: &[Complex64]) -> f64 {
        linalg::weighted_norm(&self.mesh.hodge0, phi)
    }

    pub fn norm_lp(&self, phi: &[Complex64], p: f64) -> f64 {
        self.mesh
            .hodge0
            .iter()
            .zip(phi)
            .map(|(w, v)| w * v.norm().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }

    pub fn norms(&self, phi: &[Complex64], p: f64) -> Result<SectionNorms> {
        let grad = self.covariant_derivative(phi, None)?;
        let lp = self.norm_lp(phi, p);
        Ok(SectionNorms {
            l2: self.norm_l2(phi),
            l4: self.norm_lp(phi, 4.0),
            lp,
            p,
            x: linalg::weighted_norm(&self.mesh.hodge1, &grad) + lp,
        })
    }
}

/// Section after the gauge transformation `e^{if}`.
pub fn gauge_transform_section(phi: &[Complex64], f: &[f64]) -> Section {
    Section(
        phi.iter()
            .zip(f)
            .map(|(v, fi)| v * Complex64::from_polar(1.0, *fi))
            .collect(),
    )
}

/// Constant-curvature (Hermitian Yang–Mills) connection of the given degree.
///
/// On the torus grid this is the Landau gauge with flux `2π·degree/F` per
/// plaquette. On the sphere each face carries flux proportional to its area,
/// so the curvature density is exactly `2π·degree / area`; the link phases
/// are the minimum-norm solution of `d1 θ = F mod 2π`.
pub fn make_constant_curvature_field(mesh: Arc<DecMesh>, degree: i64) -> Result<GaugeField> {
    if degree < 0 {
        return Err(Error::Unsupported(format!(
            "negative degree {degree} (use the conjugate bundle)"
        )));
    }
    let phases = match (mesh.genus_label, mesh.torus) {
        (GenusLabel::Torus, Some(grid)) => {
            let n = grid.n;
            let alpha = 2.0 * PI * degree as f64 / (n * n) as f64;
            let mut theta = vec![0.0; mesh.edge_count()];
            for j in 0..n {
                for i in 0..n {
                    theta[grid.y_edge(i, j)] = alpha * i as f64;
                }
                theta[grid.x_edge(n - 1, j)] = -alpha * (n * j) as f64;
            }
            theta
        }
        (GenusLabel::Sphere, _) => sphere_monopole_phases(&mesh, degree)?,
        (GenusLabel::Torus, None) => {
            return Err(Error::Unsupported("torus mesh without grid data".into()))
        }
    };
    let field = GaugeField::from_link_phases(mesh, phases)?;
    if field.degree != degree {
        return Err(Error::Inconsistency(format!(
            "constructed degree {} instead of {degree}",
            field.degree
        )));
    }
    Ok(field)
}

fn sphere_monopole_phases(mesh: &DecMesh, degree: i64) -> Result<Vec<f64>> {
    let nf = mesh.face_count();
    let total = 2.0 * PI * degree as f64;
    // F_f − 2π m_f must sum to zero to lie in the range of d1.
    let mut target: Vec<f64> = mesh
        .hodge2
        .iter()
        .map(|w| total / (w * mesh.total_volume))
        .collect();
    let winding_faces = (degree as usize).min(nf);
    for t in target.iter_mut().take(winding_faces) {
        *t -= 2.0 * PI;
    }
    // min-norm θ = d1^T ψ with (d1 d1^T) ψ = target
    let gram = mesh.d1.adjoint().weighted_gram(&vec![1.0; mesh.edge_count()]);
    let project = |v: &mut [f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    let solve = |rhs: &[f64]| {
        linalg::conjugate_gradient(|v| gram.mul_vec(v), &gram.diagonal(), rhs, project, 1e-14, 20 * nf)
    };
    let mut theta = mesh.d1.adjoint_mul_vec(&solve(&target)?.0);
    // one refinement pass against the flux actually produced
    let mut defect = linalg::sub(&target, &mesh.d1(&theta));
    project(&mut defect);
    let correction = mesh.d1.adjoint_mul_vec(&solve(&defect)?.0);
    linalg::axpy(1.0, &correction, &mut theta);
    Ok(theta)
}

/// Scalar Green operator: the mean-zero `x` with `Δx = rhs − mean(rhs)`,
/// `Δ = δ d` on 0-cochains.
pub fn scalar_green(mesh: &DecMesh, rhs: &[f64]) -> Result<(Vec<f64>, SolveStats)> {
    check_len(mesh.vertex_count(), rhs.len())?;
    let mean = mesh.mean0(rhs);
    let b: Vec<f64> = rhs
        .iter()
        .zip(&mesh.hodge0)
        .map(|(r, w)| (r - mean) * w)
        .collect();
    let k = &mesh.scalar_stiffness;
    let project = |v: &mut [f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter_mut().for_each(|x| *x -= m);
    };
    let (mut x, stats) = linalg::conjugate_gradient(
        |v| k.mul_vec(v),
        &k.diagonal(),
        &b,
        project,
        POISSON_TOL,
        50 * mesh.vertex_count() + 100,
    )?;
    let m = mesh.mean0(&x);
    x.iter_mut().for_each(|v| *v -= m);
    Ok((x, stats))
}

/// `Π_{d*}(a) = a − d G(δa)`: L²-orthogonal projection onto coclosed
/// 1-cochains.
pub fn coulomb_project(mesh: &DecMesh, a: &[f64]) -> Result<OneForm> {
    check_len(mesh.edge_count(), a.len())?;
    let (g, _) = scalar_green(mesh, &mesh.delta1(a))?;
    let dg = mesh.d0(&g);
    Ok(OneForm {
        values: a.iter().zip(dg).map(|(x, y)| x - y).collect(),
        coclosed: true,
    })
}

/// Checks that `basis` is orthonormal in the `M0` pairing.
pub fn check_orthonormal(field: &GaugeField, basis: &[Section], tol: f64) -> Result<()> {
    for (i, u) in basis.iter().enumerate() {
        check_len(field.vertex_count(), u.len())?;
        for (j, v) in basis.iter().enumerate() {
            let g = field.inner0(u, v);
            let expect = if i == j { 1.0 } else { 0.0 };
            if (g - Complex64::new(expect, 0.0)).norm() > tol {
                return Err(Error::Input(format!(
                    "deflation basis not orthonormal: <{i},{j}> = {g}"
                )));
            }
        }
    }
    Ok(())
}

/// Removes the components along an orthonormal set.
pub fn project_out(field: &GaugeField, basis: &[Section], phi: &mut [Complex64]) {
    for u in basis {
        let c = field.inner0(u, phi);
        for (p, ui) in phi.iter_mut().zip(u.iter()) {
            *p -= c * ui;
        }
    }
}

/// `G_λ`: solves `(Δ₀ − λ) x = P⊥ rhs` with `x ⊥ deflation`, acting as zero
/// on the span of `deflation`.
pub fn shifted_green(
    field: &GaugeField,
    lambda: f64,
    deflation: &[Section],
    rhs: &[Complex64],
) -> Result<(Section, SolveStats)> {
    shifted_green_with_tol(field, lambda, deflation, rhs, GREEN_TOL)
}

/// [`shifted_green`] at relative tolerance `rel_tol`.
pub fn shifted_green_with_tol(
    field: &GaugeField,
    lambda: f64,
    deflation: &[Section],
    rhs: &[Complex64],
    rel_tol: f64,
) -> Result<(Section, SolveStats)> {
    check_len(field.vertex_count(), rhs.len())?;
    check_orthonormal(field, deflation, 1e-8)?;
    let lap = field.laplacian0();
    let project = |v: &mut [Complex64]| project_out(field, deflation, v);
    let apply = |v: &[Complex64]| {
        let mut out = lap.apply(v);
        for (o, x) in out.iter_mut().zip(v) {
            *o -= lambda * x;
        }
        out
    };
    let (x, stats) = linalg::minres(
        apply,
        &field.mesh.hodge0,
        rhs,
        project,
        rel_tol,
        20 * field.vertex_count() + 200,
    )?;
    Ok((Section(x), stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_icosphere, build_torus, Degree};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_real(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn rand_section(n: usize, rng: &mut ChaCha8Rng) -> Section {
        Section(
            (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect(),
        )
    }

    fn torus(n: usize, d: i64) -> GaugeField {
        make_constant_curvature_field(Arc::new(build_torus(1.0, n).unwrap()), d).unwrap()
    }

    #[test]
    fn torus_flux_is_exactly_uniform() {
        let f = torus(12, 3);
        let total: f64 = f.plaquette_flux.iter().sum();
        assert!((total - 6.0 * PI).abs() < 1e-10);
        let per = 6.0 * PI / 144.0;
        assert!(f.plaquette_flux.iter().all(|x| (x - per).abs() < 1e-12));
        for dens in f.curvature_density() {
            assert!((dens - f.f0).abs() <= 1e-10);
        }
        assert_eq!(f.chern_number().unwrap(), 3);
    }

    #[test]
    fn degree_zero_is_flat() {
        let f = torus(8, 0);
        assert!(f.plaquette_flux.iter().all(|x| *x == 0.0));
        assert_eq!(f.f0, 0.0);
        let s = make_constant_curvature_field(Arc::new(build_icosphere(1).unwrap()), 0).unwrap();
        assert!(s.plaquette_flux.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn negative_degree_is_unsupported() {
        let mesh = Arc::new(build_torus(1.0, 6).unwrap());
        assert!(matches!(
            make_constant_curvature_field(mesh, -1),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn sphere_monopole_curvature() {
        let mesh = Arc::new(build_icosphere(4).unwrap());
        let f = make_constant_curvature_field(mesh, 2).unwrap();
        assert_eq!(f.chern_number().unwrap(), 2);
        assert!((f.f0 - 1.0).abs() <= 0.01, "f0 = {}", f.f0);
        for dens in f.curvature_density() {
            assert!((dens - f.f0).abs() <= 1e-9);
        }
    }

    #[test]
    fn chern_number_is_gauge_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = torus(10, 5);
        for _ in 0..20 {
            let g: Vec<f64> = (0..f.vertex_count()).map(|_| rng.gen_range(-10.0..10.0)).collect();
            assert_eq!(f.gauge_transform(&g).unwrap().chern_number().unwrap(), 5);
        }
    }

    #[test]
    fn inconsistent_flux_is_rejected() {
        let mesh = Arc::new(build_torus(1.0, 6).unwrap());
        let mut phases = vec![0.0; mesh.edge_count()];
        phases[0] = 0.3;
        // a single edge phase changes two plaquettes by ±0.3: still degree 0
        assert_eq!(
            GaugeField::from_link_phases(mesh.clone(), phases.clone())
                .unwrap()
                .degree,
            0
        );
        assert!(matches!(
            GaugeField::from_link_phases(mesh, vec![0.0; 3]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn covariant_derivative_basics() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let flat = torus(8, 0);
        let c = Section(vec![Complex64::new(0.3, -1.2); 64]);
        assert!(flat
            .covariant_derivative(&c, None)
            .unwrap()
            .iter()
            .all(|v| v.norm() < 1e-14));
        let f = torus(8, 2);
        let a = rand_real(f.edge_count(), &mut rng);
        let zero = Section::zeros(64);
        assert!(f
            .covariant_derivative(&zero, Some(&a))
            .unwrap()
            .iter()
            .all(|v| v.norm() == 0.0));
        assert!(f.covariant_derivative(&zero[..10], None).is_err());
    }

    #[test]
    fn covariant_derivative_is_gauge_covariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let f = torus(8, 1);
        let phi = rand_section(64, &mut rng);
        let a = rand_real(f.edge_count(), &mut rng);
        let g = rand_real(64, &mut rng);
        let fg = f.gauge_transform(&g).unwrap();
        let d = f.covariant_derivative(&phi, Some(&a)).unwrap();
        let dg = fg
            .covariant_derivative(&gauge_transform_section(&phi, &g), Some(&a))
            .unwrap();
        for (e, &[tail, _]) in f.mesh.edges.iter().enumerate() {
            let expect = d[e] * Complex64::from_polar(1.0, g[tail]);
            assert!((dg[e] - expect).norm() < 1e-12);
        }
    }

    #[test]
    fn product_rule_defect_is_first_order() {
        // Leibniz defect of the one-sided split is O(h) per unit length for smooth data;
        // the Landau gauge seam makes a smooth φ non-smooth, so use the flat bundle.
        let mut defects = Vec::new();
        let mut sizes = Vec::new();
        for n in [16, 32, 64] {
            let field = torus(n, 0);
            let mesh = &field.mesh;
            let fx: Vec<f64> = mesh
                .positions
                .iter()
                .map(|p| (2.0 * PI * p[0]).sin() + (2.0 * PI * p[1]).cos())
                .collect();
            let phi = Section(
                mesh.positions
                    .iter()
                    .map(|p| Complex64::from_polar(1.0, 2.0 * PI * (p[0] + 2.0 * p[1])))
                    .collect(),
            );
            let fphi = Section(phi.iter().zip(&fx).map(|(v, f)| v * f).collect());
            let lhs = field.covariant_derivative(&fphi, None).unwrap();
            let dphi = field.covariant_derivative(&phi, None).unwrap();
            let df = mesh.d0(&fx);
            let mid = field.midpoint(&phi);
            let mut worst: f64 = 0.0;
            for (e, &[tail, head]) in mesh.edges.iter().enumerate() {
                let favg = 0.5 * (fx[tail] + fx[head]);
                let defect = lhs[e] - favg * dphi[e] - df[e] * mid[e];
                worst = worst.max(defect.norm() / mesh.edge_lengths[e]);
                // the symmetric split is exact
                assert!(defect.norm() < 1e-12);
                let one_sided = lhs[e] - fx[tail] * dphi[e] - df[e] * mid[e];
                worst = worst.max(one_sided.norm() / mesh.edge_lengths[e]);
            }
            defects.push(worst);
            sizes.push(mesh.mesh_size());
        }
        let slope = linalg::log_log_slope(&sizes, &defects);
        assert!(slope > 0.9, "defect slope {slope}");
    }

    #[test]
    fn laplacian_flat_torus_spectrum() {
        let n = 10;
        let f = torus(n, 0);
        let lap = f.laplacian0();
        let dense = DMatrix::from_fn(n * n, n * n, |r, c| {
            let mut e = vec![Complex64::new(0.0, 0.0); n * n];
            e[c] = Complex64::new(1.0, 0.0);
            lap.apply_symmetric(&e)[r]
        });
        let mut ev: Vec<f64> = dense.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let h = 1.0 / n as f64;
        assert!(ev[0].abs() < 1e-10);
        let expect = 2.0 / (h * h) * (1.0 - (2.0 * PI * h).cos());
        assert!((ev[1] - expect).abs() < 1e-9 * expect);
        // constant section is in the kernel
        let c = vec![Complex64::new(1.0, 0.0); n * n];
        assert!(lap.apply(&c).iter().all(|v| v.norm() < 1e-10));
    }

    #[test]
    fn laplacian_is_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mesh = Arc::new(build_icosphere(2).unwrap());
        let f = make_constant_curvature_field(mesh, 3).unwrap();
        for _ in 0..5 {
            let x = rand_section(f.vertex_count(), &mut rng);
            let y = rand_section(f.vertex_count(), &mut rng);
            let lhs = f.inner0(&f.laplacian0().apply(&x), &y);
            let rhs = f.inner0(&x, &f.laplacian0().apply(&y));
            assert!((lhs - rhs).norm() < 1e-12 * lhs.norm().max(1.0));
            assert!(f.inner0(&x, &f.laplacian0().apply(&x)).re >= 0.0);
        }
    }

    #[test]
    fn adjoint_helpers_match_inner_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = torus(6, 2);
        let phi = rand_section(36, &mut rng);
        let edge = rand_section(f.edge_count(), &mut rng);
        let lhs = f.inner1(&f.covariant_derivative(&phi, None).unwrap(), &edge);
        let rhs = f.inner0(&phi, &f.covariant_adjoint(&edge));
        assert!((lhs - rhs).norm() < 1e-12);
        let lhs = f.inner1(&f.midpoint(&phi), &edge);
        let rhs = f.inner0(&phi, &f.midpoint_adjoint(&edge));
        assert!((lhs - rhs).norm() < 1e-12);
    }

    #[test]
    fn perturbed_laplacian_matches_quadratic_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let f = torus(6, 1);
        let phi = rand_section(36, &mut rng);
        let psi = rand_section(36, &mut rng);
        let a = rand_real(f.edge_count(), &mut rng);
        let lhs = f.inner0(&psi, &f.perturbed_laplacian(&phi, &a).unwrap());
        let rhs = f.inner1(
            &f.covariant_derivative(&psi, Some(&a)).unwrap(),
            &f.covariant_derivative(&phi, Some(&a)).unwrap(),
        );
        assert!((lhs - rhs).norm() < 1e-12 * rhs.norm().max(1.0));
        let n = f.perturbation_terms(&phi, &a).unwrap();
        let full = f.perturbed_laplacian(&phi, &a).unwrap();
        let base = f.laplacian0().apply(&phi);
        for ((x, y), z) in n.iter().zip(&full).zip(&base) {
            assert!((x - (y - z)).norm() < 1e-10);
        }
    }

    #[test]
    fn coulomb_projection_identities() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for mesh in [build_torus(1.0, 12).unwrap(), build_icosphere(2).unwrap()] {
            let g = rand_real(mesh.vertex_count(), &mut rng);
            let exact = mesh.d0(&g);
            let p = coulomb_project(&mesh, &exact).unwrap();
            assert!(mesh.norm(Degree::One, &p) <= 1e-10 * mesh.norm(Degree::One, &exact));
            let a = rand_real(mesh.edge_count(), &mut rng);
            let pa = coulomb_project(&mesh, &a).unwrap();
            assert!(pa.coclosed);
            let ppa = coulomb_project(&mesh, &pa).unwrap();
            let diff = linalg::sub(&ppa, &pa);
            assert!(mesh.norm(Degree::One, &diff) <= 1e-10 * mesh.norm(Degree::One, &a));
            assert!(
                mesh.norm(Degree::Zero, &mesh.delta1(&pa)) <= 1e-10 * mesh.norm(Degree::One, &a)
            );
        }
    }

    #[test]
    fn scalar_green_inverts_laplacian() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mesh = build_icosphere(2).unwrap();
        let f = rand_real(mesh.vertex_count(), &mut rng);
        let lap_f = mesh.delta1(&mesh.d0(&f));
        let (g, _) = scalar_green(&mesh, &lap_f).unwrap();
        let mean = mesh.mean0(&f);
        for (gi, fi) in g.iter().zip(&f) {
            assert!((gi - (fi - mean)).abs() < 1e-9);
        }
    }

    #[test]
    fn shifted_green_deflates_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let n = 8;
        let f = torus(n, 0);
        let c = Section(vec![Complex64::new(1.0, 0.0); n * n]);
        let basis = vec![c.clone()];
        let (x, _) = shifted_green(&f, 0.0, &basis, &c).unwrap();
        assert!(f.norm_l2(&x) < 1e-14);
        let rhs = rand_section(n * n, &mut rng);
        let lambda = 3.0; // inside the spectrum: indefinite
        let (x, _) = shifted_green(&f, lambda, &[], &rhs).unwrap();
        let mut r = f.laplacian0().apply(&x);
        for (ri, (xi, bi)) in r.iter_mut().zip(x.iter().zip(rhs.iter())) {
            *ri -= lambda * xi + bi;
        }
        assert!(f.norm_l2(&r) <= 1e-10 * f.norm_l2(&rhs));
        let bad = vec![c.scaled(Complex64::new(2.0, 0.0))];
        assert!(matches!(
            shifted_green(&f, 0.0, &bad, &rhs),
            Err(Error::Input(_))
        ));
    }
}
