//! Bifurcation branches from the normal phase by Lyapunov–Schmidt reduction.
//!
//! A branch point at amplitude `t` is the triple
//! `(t² 𝒜_t, t Φ_t + t³ Ψ_t, λ/κ² + t² ε_t)` with `Φ_t` a unit element of
//! `ker(Δ₀ − λ)`, `Ψ_t` orthogonal to that kernel and `𝒜_t` coclosed.
//! The connection is eliminated by [`solve_a`], `Ψ` is found by a Picard
//! iteration through the deflated Green operator, `ε` by the Rayleigh-type
//! quotient [`epsilon_of`], and the kernel direction `Φ_t` by zeroing the
//! reduced one-form on `ℂP^D`.

use std::fmt::Write as _;

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{self, project_out, GaugeField, OneForm, Section};
use crate::energy;
use crate::error::{check_len, Error, Result};
use crate::linalg::{self, SolveStats};
use crate::spectral::SpectralData;
use crate::verify;

const ELIMINATION_TOL: f64 = 1e-13;
/// Tikhonov floor on harmonic 1-forms in the elimination.
pub const HARMONIC_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingParams {
    pub kappa2: f64,
    pub tau: f64,
    /// Exponent of the modified potential above the vacuum level.
    pub p: f64,
}

impl CouplingParams {
    pub fn new(kappa2: f64, tau: f64, p: f64) -> Result<Self> {
        let out = Self { kappa2, tau, p };
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa2 > 0.0) {
            return Err(Error::Input(format!("kappa2 = {} must be > 0", self.kappa2)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Input(format!("tau = {} must be > 0", self.tau)));
        }
        if !(self.p > 2.0) {
            return Err(Error::Input(format!("p = {} must be > 2", self.p)));
        }
        Ok(())
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..*self }
    }
}

/// Tolerances and caps of the reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionSettings {
    /// Picard convergence: `‖update‖_{L²} ≤ fixed_point_tol · t`.
    pub fixed_point_tol: f64,
    pub max_sweeps: usize,
    /// Initial relaxation factor, halved on divergence.
    pub relaxation: f64,
    /// Kernel zero acceptance: `‖Υ‖ ≤ kernel_tol · t³ · scale`.
    pub kernel_tol: f64,
    pub seeds: usize,
    pub seed: u64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    /// Largest weak residual accepted as a Newton starting point.
    pub newton_basin: f64,
    pub polish: bool,
    /// Relative tolerance of the elimination and Green solves.
    pub linear_tol: f64,
}

impl Default for ReductionSettings {
    fn default() -> Self {
        Self {
            fixed_point_tol: 1e-12,
            max_sweeps: 200,
            relaxation: 1.0,
            kernel_tol: 1e-9,
            seeds: 8,
            seed: crate::spectral::DEFAULT_SEED,
            newton_tol: 1e-11,
            newton_max_iter: 20,
            newton_basin: 1e-2,
            polish: true,
            linear_tol: ELIMINATION_TOL,
        }
    }
}

/// Edge-wise current `Im(conj((∇⁰ + i a)φ) · φ_mid)` before projection.
pub fn raw_current(field: &GaugeField, phi: &[Complex64], a: Option<&[f64]>) -> Result<Vec<f64>> {
    let dphi = field.covariant_derivative(phi, a)?;
    let mid = field.midpoint(phi);
    Ok(dphi
        .iter()
        .zip(&mid)
        .map(|(d, m)| (d.conj() * m).im)
        .collect())
}

/// `j = Π_{d*}(raw current)`; coclosed.
pub fn current_j(field: &GaugeField, phi: &[Complex64], a: Option<&[f64]>) -> Result<OneForm> {
    let raw = raw_current(field, phi, a)?;
    bundle::coulomb_project(&field.mesh, &raw)
}

/// Output of the connection elimination.
#[derive(Debug, Clone, PartialEq)]
pub struct Elimination {
    pub form: OneForm,
    /// `‖harmonic part‖_{L²}`
    pub harmonic_norm: f64,
    /// `‖coexact part‖_{L²}`
    pub coexact_norm: f64,
    /// Harmonic part exceeds ten times the coexact part.
    pub harmonic_dominant: bool,
    pub stats: SolveStats,
}

/// Coclosed `A` minimizing `½‖dA‖² + ½‖φ_mid A‖² − ⟨j(∇⁰,φ), A⟩`.
pub fn solve_a(field: &GaugeField, phi: &[Complex64]) -> Result<OneForm> {
    Ok(solve_a_detailed(field, phi)?.form)
}

pub fn solve_a_detailed(field: &GaugeField, phi: &[Complex64]) -> Result<Elimination> {
    solve_a_with_tol(field, phi, ELIMINATION_TOL)
}

/// [`solve_a_detailed`] at relative tolerance `rel_tol`.
pub fn solve_a_with_tol(field: &GaugeField, phi: &[Complex64], rel_tol: f64) -> Result<Elimination> {
    let mesh = &field.mesh;
    let rhs = current_j(field, phi, None)?;
    let weights: Vec<f64> = field.midpoint(phi).iter().map(|m| m.norm_sqr()).collect();
    let harmonic = mesh.harmonic_basis();
    let split = |v: &mut Vec<f64>| -> Vec<f64> {
        harmonic
            .iter()
            .map(|eta| {
                let c = linalg::weighted_dot(&mesh.hodge1, eta, v);
                linalg::axpy(-c, eta, v);
                c
            })
            .collect()
    };
    let mass_projected = |a: &[f64]| -> Result<Vec<f64>> {
        let ma: Vec<f64> = a.iter().zip(&weights).map(|(x, w)| x * w).collect();
        Ok(bundle::coulomb_project(mesh, &ma)?.values)
    };
    // the coexact block; keeping the harmonic coefficients out of the Krylov
    // vectors avoids rounding of δd on an O(1) harmonic part
    let apply = |a: &[f64]| -> Vec<f64> {
        let mut out = mesh.delta_d1(a);
        let mut pma = mass_projected(a).unwrap_or_else(|_| vec![0.0; a.len()]);
        split(&mut pma);
        linalg::axpy(1.0, &pma, &mut out);
        out
    };
    let solve = |b: &[f64]| -> Result<(Vec<f64>, SolveStats)> {
        linalg::weighted_cg(
            &apply,
            &mesh.hodge1,
            b,
            |r| r.to_vec(),
            rel_tol,
            4 * mesh.edge_count() + 100,
        )
    };

    let mut rhs_c = rhs.values.clone();
    let rhs_h = split(&mut rhs_c);
    let (mut values, mut stats) = solve(&rhs_c)?;
    let k = harmonic.len();
    if k > 0 {
        // coupling columns K_ch e_k and their coexact responses
        let mut responses = Vec::with_capacity(k);
        let mut schur = DMatrix::<f64>::zeros(k, k);
        for (col, eta) in harmonic.iter().enumerate() {
            let mut coupling = mass_projected(eta)?;
            let diag = split(&mut coupling);
            let (y, s) = solve(&coupling)?;
            stats.iterations += s.iterations;
            stats.relative_residual = stats.relative_residual.max(s.relative_residual);
            for row in 0..k {
                schur[(row, col)] = diag[row];
            }
            schur[(col, col)] += HARMONIC_FLOOR;
            responses.push((y, coupling));
        }
        // K_hc y = ⟨m η_row, y⟩ by self-adjointness
        let mut reduced = DVector::from_vec(rhs_h);
        for row in 0..k {
            let m_eta: Vec<f64> = harmonic[row].iter().zip(&weights).map(|(x, w)| x * w).collect();
            reduced[row] -= linalg::weighted_dot(&mesh.hodge1, &m_eta, &values);
            for col in 0..k {
                schur[(row, col)] -= linalg::weighted_dot(&mesh.hodge1, &m_eta, &responses[col].0);
            }
        }
        let coeffs = schur
            .lu()
            .solve(&reduced)
            .ok_or_else(|| Error::Degenerate("singular harmonic block in the elimination".into()))?;
        for (col, (y, _)) in responses.iter().enumerate() {
            linalg::axpy(-coeffs[col], y, &mut values);
        }
        for (eta, c) in harmonic.iter().zip(coeffs.iter()) {
            linalg::axpy(*c, eta, &mut values);
        }
    }
    let mut coexact = values.clone();
    let mut harmonic_sq = 0.0;
    for eta in &harmonic {
        let c = linalg::weighted_dot(&mesh.hodge1, eta, &values);
        harmonic_sq += c * c;
        linalg::axpy(-c, eta, &mut coexact);
    }
    let harmonic_norm = harmonic_sq.sqrt();
    let coexact_norm = linalg::weighted_norm(&mesh.hodge1, &coexact);
    let harmonic_dominant = harmonic_norm > 10.0 * coexact_norm;
    if harmonic_dominant {
        warn!("harmonic part of the eliminated connection dominates: {harmonic_norm:e} vs {coexact_norm:e}");
    }
    Ok(Elimination {
        form: OneForm {
            values,
            coclosed: true,
        },
        harmonic_norm,
        coexact_norm,
        harmonic_dominant,
        stats,
    })
}

/// `κ²|φ|²φ`
fn cubic(phi: &[Complex64], kappa2: f64) -> Vec<Complex64> {
    phi.iter().map(|v| kappa2 * v.norm_sqr() * v).collect()
}

/// `ε(Φ,t)`: the quotient `(‖(∇⁰+A)φ‖² − λ‖φ‖² + κ²‖φ‖⁴_{L⁴}) / (κ²‖φ‖²)`
/// for `φ = tΦ + Ψ̃`, returned unscaled (it is `O(t²)`).
pub fn epsilon_of(
    field: &GaugeField,
    phi: &[Complex64],
    a: &[f64],
    lambda: f64,
    params: &CouplingParams,
) -> Result<f64> {
    let norm2 = field.norm_l2(phi).powi(2);
    if norm2 == 0.0 {
        return Err(Error::Degenerate("ε is undefined at φ = 0".into()));
    }
    // ‖B_a φ‖² − λ‖φ‖² = ⟨φ, (Δ₀ − λ)φ⟩ + ⟨φ, Nφ⟩, split to avoid cancellation
    let mut shifted = field.laplacian0().apply(phi);
    for (s, v) in shifted.iter_mut().zip(phi) {
        *s -= lambda * v;
    }
    let n = field.perturbation_terms(phi, a)?;
    let quad = field.inner0(phi, &shifted).re + field.inner0(phi, &n).re;
    let quartic = field.norm_lp(phi, 4.0).powi(4);
    Ok((quad + params.kappa2 * quartic) / (params.kappa2 * norm2))
}

/// Result of the inner fixed-point solve at fixed `Φ` and `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPoint {
    /// `Ψ̃`, orthogonal to the kernel.
    pub psi: Section,
    /// Full connection perturbation `A(tΦ + Ψ̃)`.
    pub a: OneForm,
    /// Unscaled `ε`.
    pub epsilon: f64,
    pub sweeps: usize,
    pub harmonic_norm: f64,
    pub harmonic_dominant: bool,
    pub history: Vec<f64>,
}

/// Kernel projection data shared by the reduction steps.
pub struct Kernel<'a> {
    pub field: &'a GaugeField,
    pub basis: &'a [Section],
    pub lambda: f64,
    pub linear_tol: f64,
}

impl<'a> Kernel<'a> {
    pub fn new(field: &'a GaugeField, spec: &'a SpectralData) -> Self {
        Self {
            field,
            basis: spec.kernel_basis(),
            lambda: spec.lambda,
            linear_tol: ELIMINATION_TOL,
        }
    }

    pub fn with_tolerance(self, linear_tol: f64) -> Self {
        Self { linear_tol, ..self }
    }

    fn green(&self, rhs: &[Complex64]) -> Result<Section> {
        Ok(bundle::shifted_green_with_tol(self.field, self.lambda, self.basis, rhs, self.linear_tol)?.0)
    }

    fn project_perp(&self, v: &mut [Complex64]) {
        project_out(self.field, self.basis, v);
    }
}

/// `𝔾(Ψ̃) = G_λ(P⊥[κ²εΨ̃ − N(φ,A) − κ²|φ|²φ])` at `φ = tΦ + Ψ̃`.
fn picard_map(
    kernel: &Kernel,
    phi_full: &[Complex64],
    psi: &[Complex64],
    a: &[f64],
    epsilon: f64,
    params: &CouplingParams,
) -> Result<Section> {
    let field = kernel.field;
    let n = field.perturbation_terms(phi_full, a)?;
    let c = cubic(phi_full, params.kappa2);
    let mut rhs: Vec<Complex64> = psi
        .iter()
        .zip(n.iter().zip(&c))
        .map(|(p, (ni, ci))| params.kappa2 * epsilon * p - ni - ci)
        .collect();
    kernel.project_perp(&mut rhs);
    kernel.green(&rhs)
}

fn combine(phi: &[Complex64], t: f64, psi: &[Complex64]) -> Vec<Complex64> {
    phi.iter().zip(psi).map(|(p, q)| t * p + q).collect()
}

/// Picard iteration for `Ψ̃` at fixed `ε`.
pub fn fixed_point_psi(
    kernel: &Kernel,
    phi: &[Complex64],
    t: f64,
    epsilon: f64,
    params: &CouplingParams,
    settings: &ReductionSettings,
) -> Result<(Section, usize)> {
    let fp = solve_fixed_point(kernel, phi, t, Some(epsilon), None, params, settings)?;
    Ok((fp.psi, fp.sweeps))
}

/// Joint Picard iteration for `(Ψ̃, ε)`. With `epsilon = Some`, `ε` stays
/// fixed; otherwise it is refreshed from [`epsilon_of`] every sweep.
pub fn solve_fixed_point(
    kernel: &Kernel,
    phi: &[Complex64],
    t: f64,
    epsilon: Option<f64>,
    warm: Option<&Section>,
    params: &CouplingParams,
    settings: &ReductionSettings,
) -> Result<FixedPoint> {
    let field = kernel.field;
    check_len(field.vertex_count(), phi.len())?;
    let n = field.vertex_count();
    let mut psi = match warm {
        Some(w) => {
            check_len(n, w.len())?;
            let mut w = w.clone();
            kernel.project_perp(&mut w);
            w
        }
        None => Section::zeros(n),
    };
    if field.norm_l2(phi) == 0.0 || t == 0.0 {
        return Ok(FixedPoint {
            psi: Section::zeros(n),
            a: OneForm::zeros(field.edge_count()),
            epsilon: epsilon.unwrap_or(0.0),
            sweeps: 0,
            harmonic_norm: 0.0,
            harmonic_dominant: false,
            history: Vec::new(),
        });
    }
    let mut omega = settings.relaxation;
    let mut history = Vec::new();
    let mut eps = epsilon.unwrap_or(0.0);
    for sweep in 1..=settings.max_sweeps {
        let phi_full = combine(phi, t, &psi);
        let elim = solve_a_with_tol(field, &phi_full, settings.linear_tol)?;
        if epsilon.is_none() {
            eps = epsilon_of(field, &phi_full, &elim.form, kernel.lambda, params)?;
        }
        let next = picard_map(kernel, &phi_full, &psi, &elim.form, eps, params)?;
        let diff: Vec<Complex64> = next.iter().zip(psi.iter()).map(|(a, b)| a - b).collect();
        let update = omega * field.norm_l2(&diff);
        history.push(update);
        if history.len() >= 3 {
            let k = history.len();
            if history[k - 1] > history[k - 2] && history[k - 2] > history[k - 3] {
                omega *= 0.5;
                debug!("halving relaxation to {omega} at sweep {sweep}");
            }
        }
        for (p, d) in psi.iter_mut().zip(&diff) {
            *p += omega * d;
        }
        if update <= settings.fixed_point_tol * t {
            // final consistent evaluation at the converged Ψ̃
            let phi_full = combine(phi, t, &psi);
            let elim = solve_a_with_tol(field, &phi_full, settings.linear_tol)?;
            if epsilon.is_none() {
                eps = epsilon_of(field, &phi_full, &elim.form, kernel.lambda, params)?;
            }
            return Ok(FixedPoint {
                psi,
                a: elim.form,
                epsilon: eps,
                sweeps: sweep,
                harmonic_norm: elim.harmonic_norm,
                harmonic_dominant: elim.harmonic_dominant,
                history,
            });
        }
        if !update.is_finite() || omega < 1e-3 {
            break;
        }
    }
    Err(Error::NonContraction { history })
}

/// Leading-order branch data.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadingOrder {
    /// `𝒜₀`: coclosed solution of `d*d𝒜₀ = j(∇⁰, Φ)`.
    pub a0: OneForm,
    /// `ε₀ = ‖Φ‖⁴_{L⁴} + 2κ⁻² Re⟨∇⁰Φ, 𝒜₀Φ⟩`.
    pub epsilon0: f64,
    /// `Ψ₀ = −G_λ(N₁(Φ, 𝒜₀) + κ²|Φ|²Φ)` where `N₁` is the part of the
    /// perturbed Laplacian linear in `𝒜₀`.
    pub psi0: Section,
}

/// Leading-order terms of the branch through the unit kernel element `Φ`.
pub fn leading_order(kernel: &Kernel, phi: &[Complex64], params: &CouplingParams) -> Result<LeadingOrder> {
    let field = kernel.field;
    let mesh = &field.mesh;
    check_len(field.vertex_count(), phi.len())?;
    let j = current_j(field, phi, None)?;
    let harmonic = mesh.harmonic_basis();
    // δd on coexact forms: j has no harmonic part on the constant-curvature fields
    // used here, any residual harmonic component is dropped.
    let mut rhs = j.values.clone();
    for eta in &harmonic {
        let c = linalg::weighted_dot(&mesh.hodge1, eta, &rhs);
        linalg::axpy(-c, eta, &mut rhs);
    }
    let project_harmonic = |v: &[f64]| -> Vec<f64> {
        let mut out = v.to_vec();
        for eta in &harmonic {
            let c = linalg::weighted_dot(&mesh.hodge1, eta, &out);
            linalg::axpy(-c, eta, &mut out);
        }
        out
    };
    let (a0, _) = linalg::weighted_cg(
        |a| project_harmonic(&mesh.delta_d1(a)),
        &mesh.hodge1,
        &rhs,
        |r| r.to_vec(),
        ELIMINATION_TOL,
        4 * mesh.edge_count() + 100,
    )?;
    let mid = field.midpoint(phi);
    let dphi = field.covariant_derivative(phi, None)?;
    let shift: Vec<Complex64> = mid
        .iter()
        .zip(&a0)
        .map(|(m, ae)| Complex64::new(0.0, *ae) * m)
        .collect();
    let pairing = field.inner1(&dphi, &shift).re;
    let quartic = field.norm_lp(phi, 4.0).powi(4);
    let epsilon0 = quartic + 2.0 * pairing / params.kappa2;
    // N₁ = D*(i a φ_mid) + mid*(−i a Dφ)
    let coupled: Vec<Complex64> = dphi
        .iter()
        .zip(&a0)
        .map(|(v, ae)| Complex64::new(0.0, -ae) * v)
        .collect();
    let mut rhs: Vec<Complex64> = field
        .covariant_adjoint(&shift)
        .into_iter()
        .zip(field.midpoint_adjoint(&coupled))
        .zip(cubic(phi, params.kappa2))
        .map(|((x, y), c)| -(x + y + c))
        .collect();
    kernel.project_perp(&mut rhs);
    let psi0 = kernel.green(&rhs)?;
    Ok(LeadingOrder {
        a0: OneForm {
            values: a0,
            coclosed: true,
        },
        epsilon0,
        psi0,
    })
}

/// Orthonormal basis of `ker ∩ (ℂΦ)^⊥`.
fn complement_basis(field: &GaugeField, basis: &[Section], phi: &[Complex64]) -> Vec<Section> {
    let mut out: Vec<Section> = Vec::new();
    for b in basis {
        let mut v = b.clone();
        for _ in 0..2 {
            let c = field.inner0(phi, &v);
            for (x, p) in v.iter_mut().zip(phi) {
                *x -= c * p;
            }
            project_out(field, &out, &mut v);
        }
        let norm = field.norm_l2(&v);
        if norm > 1e-6 {
            out.push(v.scaled(Complex64::new(1.0 / norm, 0.0)));
        }
    }
    out.truncate(basis.len().saturating_sub(1));
    out
}

/// Reduced one-form `Υ_t(ℂΦ)`: the kernel components of the gradient
/// orthogonal to `Φ`, at the converged fixed point.
pub fn kernel_one_form(
    kernel: &Kernel,
    phi: &[Complex64],
    t: f64,
    fp: &FixedPoint,
    params: &CouplingParams,
) -> Result<Vec<Complex64>> {
    let field = kernel.field;
    let directions = complement_basis(field, kernel.basis, phi);
    if directions.is_empty() {
        return Ok(Vec::new());
    }
    let phi_full = combine(phi, t, &fp.psi);
    let tau = kernel.lambda / params.kappa2 + fp.epsilon;
    let (_, g) = energy::raw_gradient(field, &fp.a, &phi_full, &params.with_tau(tau))?;
    Ok(directions.iter().map(|d| field.inner0(d, &g)).collect())
}

/// One point of the bifurcation branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub t: f64,
    pub tau_t: f64,
    pub eps_t: f64,
    pub phi_t: Section,
    pub psi_t: Section,
    pub a_t: OneForm,
    pub harmonic_a_norm: f64,
    pub residual_wgl1: f64,
    pub residual_wgl2: f64,
    pub energy: f64,
    pub fixed_point_iterations: usize,
    /// `‖Υ_t‖` at the accepted kernel direction.
    pub kernel_residual: f64,
    pub polished: bool,
    pub polish_failed: bool,
    /// Weak residuals of the leading-order ansatz at this `t`.
    pub leading_order_residual: f64,
}

impl BranchPoint {
    /// `(A, φ, τ)` in unscaled form.
    pub fn unscaled(&self) -> (Vec<f64>, Section, f64) {
        let t = self.t;
        let a = self.a_t.values.iter().map(|v| v * t * t).collect();
        let phi = Section(
            self.phi_t
                .iter()
                .zip(self.psi_t.iter())
                .map(|(p, q)| t * p + t * t * t * q)
                .collect(),
        );
        (a, phi, self.tau_t)
    }
}

/// Fixed point with `ε` solved jointly, for a kernel direction.
fn evaluate_direction(
    kernel: &Kernel,
    phi: &[Complex64],
    t: f64,
    warm: Option<&Section>,
    params: &CouplingParams,
    settings: &ReductionSettings,
) -> Result<(FixedPoint, Vec<Complex64>)> {
    let fp = solve_fixed_point(kernel, phi, t, None, warm, params, settings)?;
    let ups = kernel_one_form(kernel, phi, t, &fp, params)?;
    Ok((fp, ups))
}

fn upsilon_norm(ups: &[Complex64]) -> f64 {
    ups.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Unit kernel element with the phase fixed so that the largest-magnitude
/// vertex value is real positive.
fn normalize_direction(field: &GaugeField, v: &[Complex64]) -> Section {
    let norm = field.norm_l2(v);
    let pivot = v
        .iter()
        .enumerate()
        .fold((0, -1.0), |best, (i, z)| {
            if z.norm() > best.1 * (1.0 + 1e-9) {
                (i, z.norm())
            } else {
                best
            }
        })
        .0;
    let phase = v[pivot].conj() / v[pivot].norm();
    Section(v.iter().map(|z| z * phase / norm).collect())
}

/// Moves `phi` along `Σ w_j d_j` in the kernel and renormalizes. The
/// directions are orthogonal to `phi`, so `⟨phi, ·⟩` stays real positive and
/// the phase varies smoothly; a pivot-based phase fix can jump between
/// symmetric vertices and corrupt the difference quotients.
fn chart(field: &GaugeField, phi: &[Complex64], dirs: &[Section], w: &[f64]) -> Section {
    let mut v = phi.to_vec();
    for (k, d) in dirs.iter().enumerate() {
        let c = Complex64::new(w[2 * k], w[2 * k + 1]);
        for (x, y) in v.iter_mut().zip(d.iter()) {
            *x += c * y;
        }
    }
    let norm = field.norm_l2(&v);
    Section(v.iter().map(|z| z / norm).collect())
}

/// Solves `Υ_t(ℂΦ) = 0` by Newton iteration with a finite-difference
/// Jacobian in tangent coordinates, from several starting directions.
fn find_kernel_zero(
    kernel: &Kernel,
    t: f64,
    start: Option<&Section>,
    warm: Option<&Section>,
    params: &CouplingParams,
    settings: &ReductionSettings,
) -> Result<(Section, FixedPoint, f64)> {
    let field = kernel.field;
    let dim = kernel.basis.len();
    if dim == 1 {
        let phi = normalize_direction(field, &kernel.basis[0]);
        let (fp, _) = evaluate_direction(kernel, &phi, t, warm, params, settings)?;
        return Ok((phi, fp, 0.0));
    }
    let scale = t.powi(3) * params.kappa2.max(1.0) * kernel.lambda.max(1.0);
    let tol = settings.kernel_tol * scale;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut starts: Vec<Section> = Vec::new();
    if let Some(s) = start {
        starts.push(normalize_direction(field, s));
    }
    starts.push(normalize_direction(field, &kernel.basis[0]));
    while starts.len() < settings.seeds.max(1) + usize::from(start.is_some()) {
        let mut v = Section::zeros(field.vertex_count());
        for b in kernel.basis {
            let c = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            for (x, y) in v.iter_mut().zip(b.iter()) {
                *x += c * y;
            }
        }
        starts.push(normalize_direction(field, &v));
    }
    let mut best: Option<(Section, FixedPoint, f64)> = None;
    for s in starts {
        match newton_on_kernel(kernel, s, t, warm, params, settings, tol) {
            Ok((phi, fp, res)) => {
                if res <= tol {
                    return Ok((phi, fp, res));
                }
                if best.as_ref().is_none_or(|b| res < b.2) {
                    best = Some((phi, fp, res));
                }
            }
            Err(e) => debug!("kernel Newton start failed: {e}"),
        }
    }
    Err(Error::KernelZeroNotFound {
        best: best.map_or(f64::INFINITY, |b| b.2),
        tol,
    })
}

fn newton_on_kernel(
    kernel: &Kernel,
    mut phi: Section,
    t: f64,
    warm: Option<&Section>,
    params: &CouplingParams,
    settings: &ReductionSettings,
    tol: f64,
) -> Result<(Section, FixedPoint, f64)> {
    let field = kernel.field;
    let (mut fp, mut ups) = evaluate_direction(kernel, &phi, t, warm, params, settings)?;
    let mut res = upsilon_norm(&ups);
    let mut damping = 1e-8;
    for _ in 0..40 {
        if res <= tol {
            break;
        }
        let dirs = complement_basis(field, kernel.basis, &phi);
        let m = 2 * dirs.len();
        let h = 1e-4;
        let mut jac = DMatrix::<f64>::zeros(m, m);
        for k in 0..m {
            let mut w = vec![0.0; m];
            w[k] = h;
            let plus = chart(field, &phi, &dirs, &w);
            w[k] = -h;
            let minus = chart(field, &phi, &dirs, &w);
            // Υ components are taken in the frame of the base point
            let up = ups_in_frame(kernel, &plus, t, Some(&fp.psi), params, settings, &dirs)?;
            let um = ups_in_frame(kernel, &minus, t, Some(&fp.psi), params, settings, &dirs)?;
            for r in 0..dirs.len() {
                let d = (up[r] - um[r]) / (2.0 * h);
                jac[(2 * r, k)] = d.re;
                jac[(2 * r + 1, k)] = d.im;
            }
        }
        let rhs = DVector::from_iterator(m, ups.iter().flat_map(|z| [-z.re, -z.im]));
        // Levenberg-Marquardt on the SVD: near-null directions of the
        // Jacobian only move as far as the damping allows.
        let svd = jac.svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
            break;
        };
        let coeffs = u.transpose() * &rhs;
        let sigma_max = svd.singular_values.max();
        let mut improved = false;
        for _ in 0..12 {
            let mu = damping * sigma_max * sigma_max;
            let mut step = DVector::<f64>::zeros(m);
            for (i, &s) in svd.singular_values.iter().enumerate() {
                step += v_t.row(i).transpose() * (s * coeffs[i] / (s * s + mu));
            }
            let trial = chart(field, &phi, &dirs, step.as_slice());
            let (tfp, tups) = evaluate_direction(kernel, &trial, t, Some(&fp.psi), params, settings)?;
            let tres = upsilon_norm(&tups);
            if tres < res {
                phi = trial;
                fp = tfp;
                ups = tups;
                res = tres;
                damping = (damping * 0.1).max(1e-16);
                improved = true;
                break;
            }
            damping *= 10.0;
        }
        if !improved {
            break;
        }
    }
    Ok((phi, fp, res))
}

/// `Υ` at `phi`, expressed against fixed directions.
fn ups_in_frame(
    kernel: &Kernel,
    phi: &[Complex64],
    t: f64,
    warm: Option<&Section>,
    params: &CouplingParams,
    settings: &ReductionSettings,
    dirs: &[Section],
) -> Result<Vec<Complex64>> {
    let field = kernel.field;
    let fp = solve_fixed_point(kernel, phi, t, None, warm, params, settings)?;
    let phi_full = combine(phi, t, &fp.psi);
    let tau = kernel.lambda / params.kappa2 + fp.epsilon;
    let (_, g) = energy::raw_gradient(field, &fp.a, &phi_full, &params.with_tau(tau))?;
    Ok(dirs.iter().map(|d| field.inner0(d, &g)).collect())
}

/// Residual of the leading-order ansatz `(t²𝒜₀, tΦ + t³Ψ₀, λ/κ² + t²ε₀)`.
pub fn leading_order_residual(
    field: &GaugeField,
    phi: &[Complex64],
    lo: &LeadingOrder,
    lambda: f64,
    t: f64,
    params: &CouplingParams,
) -> Result<f64> {
    let a: Vec<f64> = lo.a0.iter().map(|v| v * t * t).collect();
    let state: Vec<Complex64> = phi
        .iter()
        .zip(lo.psi0.iter())
        .map(|(p, q)| t * p + t.powi(3) * q)
        .collect();
    let tau = lambda / params.kappa2 + t * t * lo.epsilon0;
    let (r1, r2) = verify::weak_residuals(field, &a, &state, &params.with_tau(tau))?;
    Ok(r1.hypot(r2))
}

/// Solves one branch point at amplitude `t`.
pub fn solve_branch_point(
    field: &GaugeField,
    t: f64,
    params: &CouplingParams,
    spec: &SpectralData,
    settings: &ReductionSettings,
) -> Result<BranchPoint> {
    solve_branch_point_warm(field, t, params, spec, settings, None)
}

fn solve_branch_point_warm(
    field: &GaugeField,
    t: f64,
    params: &CouplingParams,
    spec: &SpectralData,
    settings: &ReductionSettings,
    previous: Option<&BranchPoint>,
) -> Result<BranchPoint> {
    if !(t > 0.0) {
        return Err(Error::Input(format!("amplitude t = {t} must be > 0")));
    }
    let kernel = Kernel::new(field, spec).with_tolerance(settings.linear_tol);
    let warm_psi = previous.map(|p| p.psi_t.scaled(Complex64::new(t.powi(3), 0.0)));
    let start = previous.map(|p| &p.phi_t);
    let (phi, fp, kres) = find_kernel_zero(&kernel, t, start, warm_psi.as_ref(), params, settings)?;
    let lo = leading_order(&kernel, &phi, params)?;
    let lo_res = leading_order_residual(field, &phi, &lo, kernel.lambda, t, params)?;
    let t2 = t * t;
    let eps_t = fp.epsilon / t2;
    let tau_t = kernel.lambda / params.kappa2 + t2 * eps_t;
    let mut point = BranchPoint {
        t,
        tau_t,
        eps_t,
        phi_t: phi,
        psi_t: fp.psi.scaled(Complex64::new(1.0 / (t2 * t), 0.0)),
        a_t: fp.a.scaled(1.0 / t2),
        harmonic_a_norm: fp.harmonic_norm / t2,
        residual_wgl1: 0.0,
        residual_wgl2: 0.0,
        energy: 0.0,
        fixed_point_iterations: fp.sweeps,
        kernel_residual: kres,
        polished: false,
        polish_failed: false,
        leading_order_residual: lo_res,
    };
    refresh_diagnostics(field, &mut point, params)?;
    if settings.polish {
        point = newton_polish(field, &point, params, settings)?;
    }
    Ok(point)
}

fn refresh_diagnostics(field: &GaugeField, point: &mut BranchPoint, params: &CouplingParams) -> Result<()> {
    let (a, phi, tau) = point.unscaled();
    let p = params.with_tau(tau);
    let (r1, r2) = verify::weak_residuals(field, &a, &phi, &p)?;
    point.residual_wgl1 = r1;
    point.residual_wgl2 = r2;
    point.energy = energy::gl_energy(field, &a, &phi, &p)?.total;
    Ok(())
}

/// Outcome of one continuation step.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchRecord {
    pub t: f64,
    pub result: std::result::Result<BranchPoint, Error>,
    /// `min_θ ‖Φ_t − e^{iθ}Φ_prev‖` against the previous accepted point.
    pub direction_jump: Option<f64>,
}

/// Solves the branch on a descending `t` grid, warm-starting each point
/// from the previous accepted one.
pub fn continue_branch(
    field: &GaugeField,
    t_grid: &[f64],
    params: &CouplingParams,
    spec: &SpectralData,
    settings: &ReductionSettings,
) -> Vec<BranchRecord> {
    let mut out: Vec<BranchRecord> = Vec::with_capacity(t_grid.len());
    let mut previous: Option<BranchPoint> = None;
    for &t in t_grid {
        let result = solve_branch_point_warm(field, t, params, spec, settings, previous.as_ref());
        let direction_jump = direction_jump(field, &result, previous.as_ref());
        if let Ok(p) = &result {
            previous = Some(p.clone());
        }
        out.push(BranchRecord {
            t,
            result,
            direction_jump,
        });
    }
    out
}

fn direction_jump(field: &GaugeField, result: &Result<BranchPoint>, previous: Option<&BranchPoint>) -> Option<f64> {
    match (result, previous) {
        (Ok(p), Some(q)) => {
            let c = field.inner0(&q.phi_t, &p.phi_t);
            Some((2.0 - 2.0 * c.norm()).max(0.0).sqrt())
        }
        _ => None,
    }
}

/// Records for independently solved points, in grid order; the direction
/// jump is taken against the previous successful point.
pub fn link_branch(field: &GaugeField, points: Vec<(f64, Result<BranchPoint>)>) -> Vec<BranchRecord> {
    let mut out: Vec<BranchRecord> = Vec::with_capacity(points.len());
    let mut previous: Option<usize> = None;
    for (t, result) in points {
        let prev = previous.and_then(|i| out[i].result.as_ref().ok());
        let direction_jump = direction_jump(field, &result, prev);
        if result.is_ok() {
            previous = Some(out.len());
        }
        out.push(BranchRecord {
            t,
            result,
            direction_jump,
        });
    }
    out
}

/// `t₀` candidate: `0.5·√λ / ‖Φ‖²_{L⁴}` halved until Picard contracts.
pub fn contraction_t0(
    field: &GaugeField,
    params: &CouplingParams,
    spec: &SpectralData,
    settings: &ReductionSettings,
) -> Result<f64> {
    let kernel = Kernel::new(field, spec).with_tolerance(settings.linear_tol);
    let phi = normalize_direction(field, &kernel.basis[0]);
    let l4 = field.norm_lp(&phi, 4.0);
    let mut t0 = 0.5 * kernel.lambda.max(1e-12).sqrt() / (l4 * l4);
    for _ in 0..20 {
        match solve_fixed_point(&kernel, &phi, t0, None, None, params, settings) {
            Ok(fp) => {
                let h = &fp.history;
                let ratio = if h.len() >= 3 { h[2] / h[1] } else { 0.0 };
                if ratio < 0.5 {
                    return Ok(t0);
                }
            }
            Err(e) => debug!("t0 = {t0} rejected: {e}"),
        }
        t0 *= 0.5;
    }
    Err(Error::Degenerate("no contracting amplitude found".into()))
}

/// Unknown layout of the polish system: `a` (edges), Lagrange multiplier
/// `p` (vertices), `Re φ`, `Im φ` (vertices), phase multiplier `ν`.
struct PolishSystem<'a> {
    field: &'a GaugeField,
    params: CouplingParams,
    anchor: Section,
}

impl PolishSystem<'_> {
    fn dims(&self) -> (usize, usize) {
        (self.field.edge_count(), self.field.vertex_count())
    }

    fn pack(&self, a: &[f64], phi: &[Complex64]) -> Vec<f64> {
        let (_, nv) = self.dims();
        let mut x = a.to_vec();
        x.extend(std::iter::repeat_n(0.0, nv));
        x.extend(phi.iter().map(|z| z.re));
        x.extend(phi.iter().map(|z| z.im));
        x.push(0.0);
        x
    }

    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Section, f64) {
        let (ne, nv) = self.dims();
        let a = x[..ne].to_vec();
        let p = x[ne..ne + nv].to_vec();
        let phi = Section(
            (0..nv)
                .map(|i| Complex64::new(x[ne + nv + i], x[ne + 2 * nv + i]))
                .collect(),
        );
        (a, p, phi, x[ne + 3 * nv])
    }

    fn residual(&self, x: &[f64]) -> Result<Vec<f64>> {
        let field = self.field;
        let mesh = &field.mesh;
        let (a, p, phi, nu) = self.unpack(x);
        let (ga, gphi) = energy::raw_gradient(field, &a, &phi, &self.params)?;
        let dp = mesh.d0(&p);
        let mut out: Vec<f64> = ga.iter().zip(&dp).map(|(g, d)| g + d).collect();
        let mean_p = p.iter().zip(&mesh.hodge0).map(|(x, w)| x * w).sum::<f64>() / mesh.total_volume;
        let div = mesh.d0.adjoint_mul_vec(
            &a.iter().zip(&mesh.hodge1).map(|(x, w)| x * w).collect::<Vec<_>>(),
        );
        out.extend(div.iter().zip(&mesh.hodge0).map(|(d, w)| d + w * mean_p));
        let g: Vec<Complex64> = gphi
            .iter()
            .zip(self.anchor.iter())
            .map(|(gi, ai)| gi + Complex64::new(0.0, nu) * ai)
            .collect();
        out.extend(g.iter().map(|z| z.re));
        out.extend(g.iter().map(|z| z.im));
        out.push(field.inner0(&self.anchor, &phi).im);
        Ok(out)
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton iteration on the full discrete system at fixed `τ = τ_t`.
/// Returns the input with `polish_failed` set when the iteration diverges.
pub fn newton_polish(
    field: &GaugeField,
    point: &BranchPoint,
    params: &CouplingParams,
    settings: &ReductionSettings,
) -> Result<BranchPoint> {
    let mut failed = point.clone();
    failed.polish_failed = true;
    if point.residual_wgl1.max(point.residual_wgl2) > settings.newton_basin {
        return Ok(failed);
    }
    let (a, phi, tau) = point.unscaled();
    let system = PolishSystem {
        field,
        params: params.with_tau(tau),
        anchor: point.phi_t.clone(),
    };
    let mut x = system.pack(&a, &phi);
    let mut r = system.residual(&x)?;
    let n = x.len();
    let weak = |x: &[f64]| -> Result<f64> {
        let (a, _, phi, _) = system.unpack(x);
        let (r1, r2) = verify::weak_residuals(field, &a, &phi, &system.params)?;
        Ok(r1.max(r2))
    };
    let mut current = weak(&x)?;
    for _ in 0..settings.newton_max_iter {
        if current <= settings.newton_tol {
            break;
        }
        let scale = max_abs(&x).max(1e-300);
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for k in 0..n {
            let h = 1e-6 * x[k].abs().max(scale * 1e-2);
            let mut xp = x.clone();
            xp[k] += h;
            let mut xm = x.clone();
            xm[k] -= h;
            let rp = system.residual(&xp)?;
            let rm = system.residual(&xm)?;
            for (row, (u, v)) in rp.iter().zip(&rm).enumerate() {
                jac[(row, k)] = (u - v) / (2.0 * h);
            }
        }
        let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        let Some(step) = jac.lu().solve(&rhs) else {
            return Ok(failed);
        };
        let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
        let next = weak(&trial)?;
        if !next.is_finite() || next > 10.0 * current.max(settings.newton_tol) {
            return Ok(failed);
        }
        x = trial;
        r = system.residual(&x)?;
        current = next;
    }
    if current > settings.newton_tol.max(point.residual_wgl1.max(point.residual_wgl2)) {
        return Ok(failed);
    }
    let (a, _, phi, _) = system.unpack(&x);
    let t = point.t;
    let t2 = t * t;
    // re-split φ = tΦ_t + t³Ψ_t with Ψ_t ⊥ kernel span of the original Φ_t
    let along = field.inner0(&point.phi_t, &phi);
    let psi: Vec<Complex64> = phi
        .iter()
        .zip(point.phi_t.iter())
        .map(|(v, p)| (v - along * p) / (t2 * t))
        .collect();
    let phi_t = point.phi_t.scaled(along / t);
    let mut out = point.clone();
    out.phi_t = phi_t;
    out.psi_t = Section(psi);
    out.a_t = OneForm {
        values: a.iter().map(|v| v / t2).collect(),
        coclosed: true,
    };
    out.polished = true;
    out.polish_failed = false;
    refresh_diagnostics(field, &mut out, params)?;
    Ok(out)
}

/// Branch CSV with 17 significant digits; failed points are skipped.
pub fn branch_csv(field: &GaugeField, records: &[BranchRecord]) -> String {
    let mut out = String::from(
        "t,tau_t,eps_t,norm_phi_L2,norm_A,norm_Psi,harmonic_A_norm,res_wgl1,res_wgl2,energy,fp_iters,polish_flag\n",
    );
    for rec in records {
        let Ok(p) = &rec.result else { continue };
        let (_, phi, _) = p.unscaled();
        let flag = if p.polished {
            "polished"
        } else if p.polish_failed {
            "failed"
        } else {
            "raw"
        };
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            p.t,
            p.tau_t,
            p.eps_t,
            field.norm_l2(&phi),
            field.mesh.norm(crate::geometry::Degree::One, &p.a_t),
            field.norm_l2(&p.psi_t),
            p.harmonic_a_norm,
            p.residual_wgl1,
            p.residual_wgl2,
            p.energy,
            p.fixed_point_iterations,
            flag
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::bundle::make_constant_curvature_field;
    use crate::geometry::{build_torus, Degree};
    use crate::spectral::eigensolve;

    fn torus_field(n: usize, degree: i64) -> GaugeField {
        make_constant_curvature_field(Arc::new(build_torus(1.0, n).unwrap()), degree).unwrap()
    }

    fn random_section(rng: &mut ChaCha8Rng, n: usize, amp: f64) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)))
            .collect()
    }

    #[test]
    fn current_pairs_with_coclosed_forms() {
        let field = torus_field(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let phi = random_section(&mut rng, field.vertex_count(), 1.0);
            let raw: Vec<f64> = (0..field.edge_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b = bundle::coulomb_project(&field.mesh, &raw).unwrap();
            let j = current_j(&field, &phi, None).unwrap();
            let dphi = field.covariant_derivative(&phi, None).unwrap();
            let bphi: Vec<Complex64> = field
                .midpoint(&phi)
                .iter()
                .zip(b.iter())
                .map(|(m, bv)| Complex64::new(0.0, *bv) * m)
                .collect();
            let lhs = linalg::weighted_dot(&field.mesh.hodge1, &j, &b) + field.inner1(&dphi, &bphi).re;
            let scale = field.norm_l2(&phi).powi(2) * field.mesh.norm(Degree::One, &b);
            assert!(lhs.abs() <= 1e-9 * scale, "{lhs}");
        }
    }

    /// Dense KKT solve of the same minimization, with one vertex grounded.
    fn dense_elimination(field: &GaugeField, phi: &[Complex64]) -> Vec<f64> {
        let mesh = &field.mesh;
        let (ne, nv) = (mesh.edge_count(), mesh.vertex_count());
        let raw = raw_current(field, phi, None).unwrap();
        let m: Vec<f64> = field.midpoint(phi).iter().map(|z| z.norm_sqr()).collect();
        let size = ne + nv - 1;
        let mut k = DMatrix::<f64>::zeros(size, size);
        for face in 0..mesh.face_count() {
            let row: Vec<(usize, f64)> = mesh.d1.row(face).collect();
            for &(e1, s1) in &row {
                for &(e2, s2) in &row {
                    k[(e1, e2)] += mesh.hodge2[face] * s1 * s2;
                }
            }
        }
        for e in 0..ne {
            k[(e, e)] += mesh.hodge1[e] * m[e];
            let [v, w] = mesh.edges[e];
            for (vertex, sign) in [(v, -1.0), (w, 1.0)] {
                if vertex > 0 {
                    k[(e, ne + vertex - 1)] += mesh.hodge1[e] * sign;
                    k[(ne + vertex - 1, e)] += mesh.hodge1[e] * sign;
                }
            }
        }
        let mut rhs = DVector::<f64>::zeros(size);
        for e in 0..ne {
            rhs[e] = mesh.hodge1[e] * raw[e];
        }
        let sol = k.lu().solve(&rhs).unwrap();
        sol.rows(0, ne).iter().copied().collect()
    }

    #[test]
    fn elimination_matches_dense_solve() {
        let field = torus_field(8, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = random_section(&mut rng, field.vertex_count(), 1.0);
        let a = solve_a(&field, &phi).unwrap();
        let dense = dense_elimination(&field, &phi);
        let diff = linalg::sub(&a, &dense);
        let rel = field.mesh.norm(Degree::One, &diff) / field.mesh.norm(Degree::One, &dense);
        assert!(rel <= 1e-9, "{rel}");
        assert!(field.mesh.norm(Degree::Zero, &field.mesh.delta1(&a)) < 1e-10);
    }

    #[test]
    fn elimination_bound() {
        let field = torus_field(10, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for k in 0..20 {
            let amp = 10f64.powf(-2.0 + 0.2 * k as f64);
            let phi = random_section(&mut rng, field.vertex_count(), amp);
            let a = solve_a(&field, &phi).unwrap();
            let x = field.norms(&phi, 4.0).unwrap().x;
            let da = field.mesh.norm(Degree::Two, &field.mesh.d1(&a));
            assert!(da <= 0.5 * x * x, "amp {amp}: {da} > {}", 0.5 * x * x);
        }
    }

    #[test]
    fn elimination_is_gauge_invariant() {
        let field = torus_field(8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let phi = random_section(&mut rng, field.vertex_count(), 1.0);
        let f: Vec<f64> = (0..field.vertex_count()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let moved = field.gauge_transform(&f).unwrap();
        let a = solve_a(&field, &phi).unwrap();
        let b = solve_a(&moved, &bundle::gauge_transform_section(&phi, &f)).unwrap();
        let diff = linalg::sub(&a, &b);
        assert!(field.mesh.norm(Degree::One, &diff) <= 1e-10 * field.mesh.norm(Degree::One, &a));
    }

    #[test]
    fn epsilon_of_scaled_eigenvector() {
        let field = torus_field(12, 1);
        let spec = eigensolve(field.laplacian0(), 3).unwrap();
        let params = CouplingParams::new(0.7, spec.lambda / 0.7, 4.0).unwrap();
        let phi = spec.kernel_basis()[0].scaled(Complex64::new(0.3, 0.0));
        let zero = vec![0.0; field.edge_count()];
        let eps = epsilon_of(&field, &phi, &zero, spec.lambda, &params).unwrap();
        let expected = field.norm_lp(&phi, 4.0).powi(4) / field.norm_l2(&phi).powi(2);
        assert!((eps - expected).abs() <= 1e-10 * expected, "{eps} {expected}");
    }

    #[test]
    fn branch_points_solve_the_equations() {
        let field = torus_field(12, 1);
        let spec = eigensolve(field.laplacian0(), 3).unwrap();
        let params = CouplingParams::new(1.0, spec.lambda, 4.0).unwrap();
        let settings = ReductionSettings::default();
        let t0 = contraction_t0(&field, &params, &spec, &settings).unwrap();
        let grid: Vec<f64> = (0..4).map(|k| 0.5 * t0 * 0.5f64.powi(k)).collect();
        let records = continue_branch(&field, &grid, &params, &spec, &settings);
        let kernel = Kernel::new(&field, &spec);
        for rec in &records {
            let p = rec.result.as_ref().unwrap();
            assert!(p.residual_wgl1 <= 1e-10 && p.residual_wgl2 <= 1e-10);
            assert!(p.fixed_point_iterations <= 100);
            assert!((field.norm_l2(&p.phi_t) - 1.0).abs() < 1e-12);
            let lo = leading_order(&kernel, &p.phi_t, &params).unwrap();
            assert!((p.eps_t - lo.epsilon0).abs() <= 0.05 * lo.epsilon0);
            assert!(p.tau_t > spec.lambda / params.kappa2);
        }
        assert!(records[1..].iter().all(|r| r.direction_jump.unwrap() < 0.1));
        let csv = branch_csv(&field, &records);
        assert_eq!(csv.lines().count(), records.len() + 1);
    }

    #[test]
    fn rejects_nonpositive_amplitude() {
        let field = torus_field(8, 1);
        let spec = eigensolve(field.laplacian0(), 2).unwrap();
        let params = CouplingParams::new(1.0, spec.lambda, 4.0).unwrap();
        let err = solve_branch_point(&field, 0.0, &params, &spec, &ReductionSettings::default());
        assert!(matches!(err, Err(Error::Input(_))));
    }
}
