//! Ginzburg–Landau energies, their gradients, descent and the τ-threshold
//! scan.

use std::collections::VecDeque;
use std::fmt::Write as _;

use log::warn;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{self, GaugeField, OneForm, Section};
use crate::error::{check_len, Error, Result};
use crate::linalg;
use crate::reduction::{raw_current, CouplingParams};
use crate::spectral::SpectralData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PotentialKind {
    /// `(s − τ)²`
    Standard,
    /// `(s − τ)²` for `s ≤ τ`, `(s − τ)^p` above.
    Modified,
}

impl PotentialKind {
    /// `W(s)` with `s = |φ|²`.
    pub fn value(self, s: f64, tau: f64, p: f64) -> f64 {
        match self {
            Self::Modified if s > tau => (s - tau).powf(p),
            _ => (s - tau) * (s - tau),
        }
    }

    /// `W(s) − W(0)`, free of cancellation for small `s`.
    fn excess(self, s: f64, tau: f64, p: f64) -> f64 {
        match self {
            Self::Modified if s > tau => (s - tau).powf(p) - tau * tau,
            _ => s * (s - 2.0 * tau),
        }
    }

    pub fn derivative(self, s: f64, tau: f64, p: f64) -> f64 {
        match self {
            Self::Modified if s > tau => p * (s - tau).powf(p - 1.0),
            _ => 2.0 * (s - tau),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub total: f64,
    pub curvature_term: f64,
    pub kinetic_term: f64,
    pub potential_term: f64,
    pub gradient_norm: f64,
}

fn curvature(field: &GaugeField, a: &[f64]) -> Vec<f64> {
    field
        .plaquette_flux
        .iter()
        .zip(field.mesh.d1(a))
        .map(|(f, da)| f + da)
        .collect()
}

fn terms(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
    kind: PotentialKind,
) -> Result<(f64, f64, f64)> {
    check_len(field.edge_count(), a.len())?;
    check_len(field.vertex_count(), phi.len())?;
    let mesh = &field.mesh;
    let f = curvature(field, a);
    let curv = 0.5 * linalg::weighted_dot(&mesh.hodge2, &f, &f);
    let dphi = field.covariant_derivative(phi, Some(a))?;
    let kin = 0.5 * linalg::weighted_norm(&mesh.hodge1, &dphi).powi(2);
    let pot = 0.25
        * params.kappa2
        * phi
            .iter()
            .zip(&mesh.hodge0)
            .map(|(v, w)| w * kind.value(v.norm_sqr(), params.tau, params.p))
            .sum::<f64>();
    Ok((curv, kin, pot))
}

fn report(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
    kind: PotentialKind,
) -> Result<EnergyReport> {
    let (curvature_term, kinetic_term, potential_term) = terms(field, a, phi, params, kind)?;
    let (ga, gphi) = energy_gradient(field, a, phi, params, kind)?;
    Ok(EnergyReport {
        total: curvature_term + kinetic_term + potential_term,
        curvature_term,
        kinetic_term,
        potential_term,
        gradient_norm: gradient_norm(field, &ga, &gphi),
    })
}

/// Standard energy `½‖F⁰ + dA‖² + ½‖(∇⁰ + iA)φ‖² + κ²/4 Σ (τ − |φ|²)²`.
pub fn gl_energy(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
) -> Result<EnergyReport> {
    report(field, a, phi, params, PotentialKind::Standard)
}

/// Energy with the modified potential `W_τ`.
pub fn modified_energy(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
) -> Result<EnergyReport> {
    report(field, a, phi, params, PotentialKind::Modified)
}

/// Energy of the normal phase `(A, φ) = (0, 0)`.
pub fn normal_phase_energy(field: &GaugeField, params: &CouplingParams) -> f64 {
    let f = &field.plaquette_flux;
    0.5 * linalg::weighted_dot(&field.mesh.hodge2, f, f)
        + 0.25 * params.kappa2 * params.tau * params.tau * field.mesh.total_volume
}

/// `E(A, φ) − E(0, 0)` evaluated term by term.
pub fn excess_energy(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
    kind: PotentialKind,
) -> Result<f64> {
    check_len(field.edge_count(), a.len())?;
    check_len(field.vertex_count(), phi.len())?;
    let mesh = &field.mesh;
    let da = mesh.d1(a);
    let curv: f64 = field
        .plaquette_flux
        .iter()
        .zip(&da)
        .zip(&mesh.hodge2)
        .map(|((f, d), w)| w * (f * d + 0.5 * d * d))
        .sum();
    let dphi = field.covariant_derivative(phi, Some(a))?;
    let kin = 0.5 * linalg::weighted_norm(&mesh.hodge1, &dphi).powi(2);
    let pot = 0.25
        * params.kappa2
        * phi
            .iter()
            .zip(&mesh.hodge0)
            .map(|(v, w)| w * kind.excess(v.norm_sqr(), params.tau, params.p))
            .sum::<f64>();
    Ok(curv + kin + pot)
}

/// `E(A + δA, φ + δφ) − E(A, φ)`, expanded term by term so that small steps
/// keep their relative accuracy.
pub fn energy_change(
    field: &GaugeField,
    (a, phi): (&[f64], &[Complex64]),
    (step_a, step_phi): (&[f64], &[Complex64]),
    params: &CouplingParams,
    kind: PotentialKind,
) -> Result<f64> {
    check_len(field.edge_count(), a.len())?;
    check_len(field.edge_count(), step_a.len())?;
    check_len(field.vertex_count(), phi.len())?;
    check_len(field.vertex_count(), step_phi.len())?;
    let mesh = &field.mesh;
    let f = curvature(field, a);
    let df = mesh.d1(step_a);
    let curv: f64 = f
        .iter()
        .zip(&df)
        .zip(&mesh.hodge2)
        .map(|((x, d), w)| w * d * (x + 0.5 * d))
        .sum();

    // D_{A+δA}(φ+δφ) − D_A φ = D_A δφ + i δA mid(φ + δφ)
    let moved: Vec<Complex64> = phi.iter().zip(step_phi).map(|(p, s)| p + s).collect();
    let dphi = field.covariant_derivative(phi, Some(a))?;
    let mut delta = field.covariant_derivative(step_phi, Some(a))?;
    for ((d, m), sa) in delta.iter_mut().zip(field.midpoint(&moved)).zip(step_a) {
        *d += Complex64::new(0.0, *sa) * m;
    }
    let kin: f64 = delta
        .iter()
        .zip(&dphi)
        .zip(&mesh.hodge1)
        .map(|((d, x), w)| 0.5 * w * (d.conj() * (2.0 * x + d)).re)
        .sum();

    let tau = params.tau;
    let pot: f64 = phi
        .iter()
        .zip(step_phi)
        .zip(&mesh.hodge0)
        .map(|((p, s), w)| {
            let s0 = p.norm_sqr();
            let ds = 2.0 * (p.conj() * s).re + s.norm_sqr();
            let s1 = s0 + ds;
            let change = match kind {
                PotentialKind::Modified if s0 > tau && s1 > tau => {
                    let base = s0 - tau;
                    base.powf(params.p) * (params.p * (ds / base).ln_1p()).exp_m1()
                }
                PotentialKind::Modified if s0 > tau || s1 > tau => {
                    kind.value(s1, tau, params.p) - kind.value(s0, tau, params.p)
                }
                _ => ds * (ds + 2.0 * (s0 - tau)),
            };
            w * change
        })
        .sum();
    Ok(curv + kin + 0.25 * params.kappa2 * pot)
}

fn raw_gradient_kind(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
    kind: PotentialKind,
) -> Result<(Vec<f64>, Vec<Complex64>)> {
    check_len(field.edge_count(), a.len())?;
    check_len(field.vertex_count(), phi.len())?;
    let mesh = &field.mesh;
    let f = curvature(field, a);
    let weighted: Vec<f64> = f.iter().zip(&mesh.hodge2).map(|(x, w)| x * w).collect();
    let current = raw_current(field, phi, Some(a))?;
    let ga: Vec<f64> = mesh
        .d1
        .adjoint_mul_vec(&weighted)
        .iter()
        .zip(&mesh.hodge1)
        .zip(&current)
        .map(|((v, w), j)| v / w - j)
        .collect();
    let mut gphi = field.perturbed_laplacian(phi, a)?;
    for (g, v) in gphi.iter_mut().zip(phi) {
        *g += 0.5 * params.kappa2 * kind.derivative(v.norm_sqr(), params.tau, params.p) * v;
    }
    Ok((ga, gphi))
}

/// Unprojected gradient of the standard energy: the 1-form slot is
/// `δ(F⁰ + dA) − Im(conj((∇⁰+iA)φ) φ_mid)`, the section slot
/// `(∇⁰+iA)*(∇⁰+iA)φ − κ²(τ − |φ|²)φ`.
pub fn raw_gradient(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
) -> Result<(Vec<f64>, Vec<Complex64>)> {
    raw_gradient_kind(field, a, phi, params, PotentialKind::Standard)
}

/// Gradient against the Hodge inner products, Coulomb-projected in the
/// 1-form slot.
pub fn energy_gradient(
    field: &GaugeField,
    a: &[f64],
    phi: &[Complex64],
    params: &CouplingParams,
    kind: PotentialKind,
) -> Result<(OneForm, Section)> {
    let (ga, gphi) = raw_gradient_kind(field, a, phi, params, kind)?;
    Ok((bundle::coulomb_project(&field.mesh, &ga)?, Section(gphi)))
}

fn gradient_norm(field: &GaugeField, ga: &[f64], gphi: &[Complex64]) -> f64 {
    (linalg::weighted_norm(&field.mesh.hodge1, ga).powi(2) + field.norm_l2(gphi).powi(2)).sqrt()
}

const NONMONOTONE_WINDOW: usize = 10;
const MEMORY: usize = 10;
const ARMIJO: f64 = 1e-4;

/// Starting point of a descent.
#[derive(Debug, Clone, PartialEq)]
pub enum Init {
    Normal,
    /// `(0, sΦ)`
    Trial { s: f64, phi: Section },
    Random { seed: u64 },
}

impl Init {
    pub fn kind(&self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::Trial { .. } => "trial",
            Self::Random { .. } => "random",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Stop at `gradient_norm ≤ rel_tol · (1 + |total|)`.
    pub rel_tol: f64,
    pub potential: PotentialKind,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        Self {
            max_iter: 50_000,
            rel_tol: 1e-9,
            potential: PotentialKind::Modified,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub a: OneForm,
    pub phi: Section,
    pub report: EnergyReport,
    pub iterations: usize,
}

fn initial_state(field: &GaugeField, params: &CouplingParams, init: &Init) -> Result<(Vec<f64>, Section)> {
    let ne = field.edge_count();
    let nv = field.vertex_count();
    match init {
        Init::Normal => Ok((vec![0.0; ne], Section::zeros(nv))),
        Init::Trial { s, phi } => {
            check_len(nv, phi.len())?;
            Ok((vec![0.0; ne], phi.scaled(Complex64::new(*s, 0.0))))
        }
        Init::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let amp = params.tau.sqrt();
            let phi = Section(
                (0..nv)
                    .map(|_| Complex64::from_polar(amp * rng.gen_range(0.0..1.0), rng.gen_range(0.0..std::f64::consts::TAU)))
                    .collect(),
            );
            let raw: Vec<f64> = (0..ne).map(|_| rng.gen_range(-0.1..0.1)).collect();
            let a = bundle::coulomb_project(&field.mesh, &raw)?.values;
            Ok((a, phi))
        }
    }
}

/// Curvature pairs of the quasi-Newton memory.
struct Pair {
    sa: Vec<f64>,
    sphi: Vec<Complex64>,
    ya: Vec<f64>,
    yphi: Vec<Complex64>,
    rho: f64,
}

/// Real Hodge pairing on `(A, φ)`.
fn pairing(field: &GaugeField, (a, phi): (&[f64], &[Complex64]), (b, psi): (&[f64], &[Complex64])) -> f64 {
    linalg::weighted_dot(&field.mesh.hodge1, a, b) + field.inner0(phi, psi).re
}

/// Two-loop recursion: `−H g` with `H₀ = γ` (the Barzilai–Borwein step).
fn quasi_newton_direction(
    field: &GaugeField,
    memory: &VecDeque<Pair>,
    gamma: f64,
    ga: &[f64],
    gphi: &[Complex64],
) -> (Vec<f64>, Vec<Complex64>) {
    let mut qa = ga.to_vec();
    let mut qphi = gphi.to_vec();
    let mut alphas = Vec::with_capacity(memory.len());
    for pair in memory.iter().rev() {
        let alpha = pair.rho * pairing(field, (&pair.sa, &pair.sphi), (&qa, &qphi));
        linalg::axpy(-alpha, &pair.ya, &mut qa);
        linalg::axpy(Complex64::new(-alpha, 0.0), &pair.yphi, &mut qphi);
        alphas.push(alpha);
    }
    qa.iter_mut().for_each(|v| *v *= gamma);
    qphi.iter_mut().for_each(|v| *v *= gamma);
    for (pair, alpha) in memory.iter().zip(alphas.iter().rev()) {
        let beta = pair.rho * pairing(field, (&pair.ya, &pair.yphi), (&qa, &qphi));
        linalg::axpy(alpha - beta, &pair.sa, &mut qa);
        linalg::axpy(Complex64::new(alpha - beta, 0.0), &pair.sphi, &mut qphi);
    }
    qa.iter_mut().for_each(|v| *v = -*v);
    qphi.iter_mut().for_each(|v| *v = -*v);
    (qa, qphi)
}

/// Descent over coclosed `A` and sections: quasi-Newton directions scaled
/// by the Barzilai–Borwein step, nonmonotone Armijo backtracking. Returns
/// the critical point reached.
pub fn minimize(
    field: &GaugeField,
    params: &CouplingParams,
    init: &Init,
    opts: &MinimizeOptions,
) -> Result<Minimum> {
    params.validate()?;
    let kind = opts.potential;
    let (mut a, mut phi) = initial_state(field, params, init)?;
    let e_normal = normal_phase_energy(field, params);
    let mut excess = excess_energy(field, &a, &phi, params, kind)?;
    let mut recent = VecDeque::from([excess]);
    let mut memory: VecDeque<Pair> = VecDeque::new();
    let (mut ga, mut gphi) = energy_gradient(field, &a, &phi, params, kind)?;
    let mut gnorm = gradient_norm(field, &ga, &gphi);
    let mut gamma = 1.0 / field.laplacian0().upper_bound().max(1.0);
    for iter in 0..opts.max_iter {
        if gnorm <= opts.rel_tol * (1.0 + (e_normal + excess).abs()) {
            let (curvature_term, kinetic_term, potential_term) = terms(field, &a, &phi, params, kind)?;
            return Ok(Minimum {
                a: OneForm {
                    values: a,
                    coclosed: true,
                },
                phi,
                report: EnergyReport {
                    total: curvature_term + kinetic_term + potential_term,
                    curvature_term,
                    kinetic_term,
                    potential_term,
                    gradient_norm: gnorm,
                },
                iterations: iter,
            });
        }
        let (mut da, mut dphi) = quasi_newton_direction(field, &memory, gamma, &ga, &gphi);
        let mut slope = pairing(field, (&ga, &gphi), (&da, &dphi));
        if !(slope < 0.0) {
            memory.clear();
            da = ga.iter().map(|g| -gamma * g).collect();
            dphi = gphi.iter().map(|g| -gamma * g).collect();
            slope = -gamma * gnorm * gnorm;
        }
        let slack = recent.iter().fold(f64::NEG_INFINITY, |m, &e| m.max(e)) - excess;
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let sa: Vec<f64> = da.iter().map(|d| alpha * d).collect();
            let sphi: Vec<Complex64> = dphi.iter().map(|d| alpha * d).collect();
            let change = energy_change(field, (&a, &phi), (&sa, &sphi), params, kind)?;
            if change <= slack + ARMIJO * alpha * slope {
                accepted = Some((sa, sphi, change));
                break;
            }
            alpha *= 0.5;
        }
        let Some((sa, sphi, change)) = accepted else {
            return Err(Error::NotConverged {
                iterations: iter,
                gradient_norm: gnorm,
            });
        };
        let na = linalg::add(&a, &sa);
        let nphi = Section(linalg::add(&phi, &sphi));
        let (nga, ngphi) = energy_gradient(field, &na, &nphi, params, kind)?;
        let ya = linalg::sub(&nga, &ga);
        let yphi = linalg::sub(&ngphi, &gphi);
        let sy = pairing(field, (&sa, &sphi), (&ya, &yphi));
        let yy = pairing(field, (&ya, &yphi), (&ya, &yphi));
        if sy > 1e-12 * yy.sqrt() * pairing(field, (&sa, &sphi), (&sa, &sphi)).sqrt() {
            gamma = sy / yy;
            memory.push_back(Pair { sa, sphi, ya, yphi, rho: 1.0 / sy });
            if memory.len() > MEMORY {
                memory.pop_front();
            }
        }
        a = na;
        phi = nphi;
        excess += change;
        ga = nga;
        gphi = ngphi;
        gnorm = gradient_norm(field, &ga, &gphi);
        recent.push_back(excess);
        if recent.len() > NONMONOTONE_WINDOW {
            recent.pop_front();
        }
    }
    Err(Error::NotConverged {
        iterations: opts.max_iter,
        gradient_norm: gnorm,
    })
}

/// One row of the τ-threshold table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub tau: f64,
    pub tau_over_tau0: f64,
    pub norm_phi: f64,
    pub energy: f64,
    pub energy_gap_to_normal: f64,
    pub iters: usize,
    pub init_kind: String,
    /// Set when the descent failed; the numeric fields are then NaN.
    pub error: Option<String>,
}

/// `C = max ‖Φ‖_{L⁴}` over the kernel basis.
pub fn trial_constant(field: &GaugeField, spec: &SpectralData) -> f64 {
    spec.kernel_basis()
        .iter()
        .map(|b| field.norm_lp(b, 4.0))
        .fold(0.0, f64::max)
}

/// Trial amplitude `½·√(2|τ − τ₀|)/C²`, inside the range where the trial
/// section lowers the energy whenever `τ > τ₀`.
pub fn trial_amplitude(field: &GaugeField, spec: &SpectralData, params: &CouplingParams) -> f64 {
    let tau0 = spec.lambda / params.kappa2;
    let c = trial_constant(field, spec);
    0.5 * (2.0 * (params.tau - tau0).abs()).sqrt() / (c * c)
}

/// Runs descents from the normal, trial and random starts at every `τ`.
pub fn threshold_scan(
    field: &GaugeField,
    params: &CouplingParams,
    spec: &SpectralData,
    tau_values: &[f64],
    opts: &MinimizeOptions,
    seed: u64,
    allow_small_kappa: bool,
) -> Result<Vec<ThresholdRow>> {
    if params.kappa2 < 0.5 {
        if allow_small_kappa {
            warn!("threshold scan with kappa2 = {} < 1/2", params.kappa2);
        } else {
            return Err(Error::Input(format!(
                "threshold scan needs kappa2 >= 1/2, got {}",
                params.kappa2
            )));
        }
    }
    let mut rows = Vec::new();
    for &tau in tau_values {
        rows.extend(threshold_point(field, params, spec, tau, opts, seed)?);
    }
    Ok(rows)
}

/// Rows of one `τ` value, one per start.
pub fn threshold_point(
    field: &GaugeField,
    params: &CouplingParams,
    spec: &SpectralData,
    tau: f64,
    opts: &MinimizeOptions,
    seed: u64,
) -> Result<Vec<ThresholdRow>> {
    let p = params.with_tau(tau);
    p.validate()?;
    let tau0 = spec.lambda / params.kappa2;
    let e_normal = normal_phase_energy(field, &p);
    let direction = spec.kernel_basis()[0].clone();
    let inits = [
        Init::Normal,
        Init::Trial {
            s: trial_amplitude(field, spec, &p),
            phi: direction,
        },
        Init::Random { seed },
    ];
    Ok(inits
        .iter()
        .map(|init| match minimize(field, &p, init, opts) {
            Ok(m) => ThresholdRow {
                tau,
                tau_over_tau0: tau / tau0,
                norm_phi: field.norm_l2(&m.phi),
                energy: m.report.total,
                energy_gap_to_normal: m.report.total - e_normal,
                iters: m.iterations,
                init_kind: init.kind().to_string(),
                error: None,
            },
            Err(e) => ThresholdRow {
                tau,
                tau_over_tau0: tau / tau0,
                norm_phi: f64::NAN,
                energy: f64::NAN,
                energy_gap_to_normal: f64::NAN,
                iters: 0,
                init_kind: init.kind().to_string(),
                error: Some(e.to_string()),
            },
        })
        .collect())
}

/// Threshold CSV with 17 significant digits.
pub fn threshold_csv(rows: &[ThresholdRow]) -> String {
    let mut out =
        String::from("tau,tau_over_tau0,norm_phi,energy,energy_gap_to_normal,iters,init_kind\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{},{}",
            r.tau, r.tau_over_tau0, r.norm_phi, r.energy, r.energy_gap_to_normal, r.iters, r.init_kind
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::bundle::make_constant_curvature_field;
    use crate::geometry::{build_icosphere, build_torus};
    use crate::spectral::eigensolve;

    fn torus_field(n: usize, degree: i64) -> GaugeField {
        make_constant_curvature_field(Arc::new(build_torus(1.0, n).unwrap()), degree).unwrap()
    }

    fn random_state(field: &GaugeField, rng: &mut ChaCha8Rng, amp: f64) -> (Vec<f64>, Vec<Complex64>) {
        let raw: Vec<f64> = (0..field.edge_count()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let a = bundle::coulomb_project(&field.mesh, &raw).unwrap().values;
        let phi = (0..field.vertex_count())
            .map(|_| Complex64::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)))
            .collect();
        (a, phi)
    }

    #[test]
    fn gradient_matches_central_differences() {
        let field = torus_field(8, 1);
        let params = CouplingParams::new(0.8, 1.5, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for kind in [PotentialKind::Standard, PotentialKind::Modified] {
            for _ in 0..5 {
                let (a, phi) = random_state(&field, &mut rng, 1.5);
                let (b, psi) = random_state(&field, &mut rng, 1.0);
                let (ga, gphi) = energy_gradient(&field, &a, &phi, &params, kind).unwrap();
                let exact = linalg::weighted_dot(&field.mesh.hodge1, &ga, &b) + field.inner0(&gphi, &psi).re;
                let h = 1e-5;
                let step = |s: f64| {
                    let sb: Vec<f64> = b.iter().map(|x| s * x).collect();
                    let sp: Vec<Complex64> = psi.iter().map(|x| s * x).collect();
                    energy_change(&field, (&a, &phi), (&sb, &sp), &params, kind).unwrap()
                };
                let fd = (step(h) - step(-h)) / (2.0 * h);
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1.0), "{kind:?}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn energy_change_agrees_with_totals() {
        let field = torus_field(6, 1);
        let params = CouplingParams::new(1.0, 1.0, 3.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for kind in [PotentialKind::Standard, PotentialKind::Modified] {
            let (a, phi) = random_state(&field, &mut rng, 1.2);
            let (b, psi) = random_state(&field, &mut rng, 0.5);
            let change = energy_change(&field, (&a, &phi), (&b, &psi), &params, kind).unwrap();
            let ab = linalg::add(&a, &b);
            let pp = linalg::add(&phi, &psi);
            let direct = excess_energy(&field, &ab, &pp, &params, kind).unwrap()
                - excess_energy(&field, &a, &phi, &params, kind).unwrap();
            assert!((change - direct).abs() <= 1e-10 * direct.abs().max(1.0));
            let total = report(&field, &a, &phi, &params, kind).unwrap().total;
            let excess = excess_energy(&field, &a, &phi, &params, kind).unwrap();
            assert!((total - normal_phase_energy(&field, &params) - excess).abs() <= 1e-10 * total);
        }
    }

    #[test]
    fn energies_are_gauge_invariant() {
        let field = torus_field(8, 2);
        let params = CouplingParams::new(0.6, 2.0, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (a, phi) = random_state(&field, &mut rng, 1.0);
        let f: Vec<f64> = (0..field.vertex_count()).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let moved = field.gauge_transform(&f).unwrap();
        let phi_moved = bundle::gauge_transform_section(&phi, &f);
        for kind in [PotentialKind::Standard, PotentialKind::Modified] {
            let e0 = report(&field, &a, &phi, &params, kind).unwrap();
            let e1 = report(&moved, &a, &phi_moved, &params, kind).unwrap();
            assert!((e0.total - e1.total).abs() <= 1e-10 * e0.total);
            assert!((e0.gradient_norm - e1.gradient_norm).abs() <= 1e-9 * e0.gradient_norm.max(1.0));
        }
    }

    #[test]
    fn modified_potential_matches_standard_below_vacuum() {
        for s in [0.0, 0.3, 0.99] {
            let (std, modified) = (PotentialKind::Standard, PotentialKind::Modified);
            assert_eq!(std.value(s, 1.0, 4.0), modified.value(s, 1.0, 4.0));
            assert_eq!(std.derivative(s, 1.0, 4.0), modified.derivative(s, 1.0, 4.0));
        }
        assert_eq!(PotentialKind::Modified.value(3.0, 1.0, 3.0), 8.0);
        assert_eq!(PotentialKind::Modified.derivative(3.0, 1.0, 3.0), 12.0);
    }

    #[test]
    fn normal_phase_is_critical() {
        let field = make_constant_curvature_field(Arc::new(build_icosphere(1).unwrap()), 1).unwrap();
        let params = CouplingParams::new(1.0, 2.0, 4.0).unwrap();
        let m = minimize(&field, &params, &Init::Normal, &MinimizeOptions::default()).unwrap();
        assert_eq!(m.iterations, 0);
        assert!(m.phi.iter().all(|v| *v == Complex64::new(0.0, 0.0)));
        let e = normal_phase_energy(&field, &params);
        assert!((m.report.total - e).abs() <= 1e-12 * e);
    }

    #[test]
    fn trial_section_lowers_energy_above_threshold() {
        let field = torus_field(12, 1);
        let spec = eigensolve(field.laplacian0(), 3).unwrap();
        let tau0 = spec.lambda;
        let params = CouplingParams::new(1.0, 1.05 * tau0, 4.0).unwrap();
        let s = trial_amplitude(&field, &spec, &params);
        let phi = spec.kernel_basis()[0].scaled(Complex64::new(s, 0.0));
        let zero = vec![0.0; field.edge_count()];
        assert!(excess_energy(&field, &zero, &phi, &params, PotentialKind::Standard).unwrap() < 0.0);
    }

    #[test]
    fn threshold_separates_normal_and_superconducting() {
        let field = torus_field(12, 1);
        let spec = eigensolve(field.laplacian0(), 3).unwrap();
        let params = CouplingParams::new(0.5, 1.0, 4.0).unwrap();
        let tau0 = spec.lambda / params.kappa2;
        let rows = threshold_scan(&field, &params, &spec, &[0.9 * tau0, 1.1 * tau0], &MinimizeOptions::default(), 5, false)
            .unwrap();
        assert_eq!(rows.len(), 6);
        for row in &rows {
            assert!(row.error.is_none(), "{row:?}");
            if row.tau < tau0 {
                assert!(row.norm_phi <= 1e-6);
            } else if row.init_kind != "normal" {
                assert!(row.norm_phi >= 1e-2 && row.energy_gap_to_normal < 0.0);
            }
        }
        assert_eq!(threshold_csv(&rows).lines().count(), 7);
    }

    #[test]
    fn threshold_scan_guards_small_coupling() {
        let field = torus_field(6, 1);
        let spec = eigensolve(field.laplacian0(), 2).unwrap();
        let params = CouplingParams::new(0.3, 1.0, 4.0).unwrap();
        let res = threshold_scan(&field, &params, &spec, &[1.0], &MinimizeOptions::default(), 1, false);
        assert!(matches!(res, Err(Error::Input(_))));
    }
}
