//! Low eigenpairs of the connection Laplacian and their eigenspaces.
//!
//! Small problems are solved densely. Larger ones use Chebyshev-filtered
//! subspace iteration with Rayleigh–Ritz extraction on the symmetrized
//! operator `M0^{-1/2} K M0^{-1/2}`.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{ConnectionLaplacian, Section};
use crate::error::{Error, Result};

/// Largest cluster spread, relative, at which the canonical basis rotation
/// is applied.
const ROTATION_TOL: f64 = 1e-10;

pub const CLUSTER_TOL: f64 = 1e-6;
pub const DEFAULT_SEED: u64 = 0x5eed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigensolveOptions {
    pub count: usize,
    pub seed: u64,
    /// Largest dimension handled by the dense solver.
    pub dense_limit: usize,
    /// Residual target relative to `max(λ, 1)`.
    pub tol: f64,
    pub max_iter: usize,
}

impl EigensolveOptions {
    pub fn new(count: usize) -> Self {
        Self {
            count,
            seed: DEFAULT_SEED,
            dense_limit: 800,
            tol: 1e-10,
            max_iter: 400,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Orthonormal in the `M0` pairing.
    pub eigenvectors: Vec<Section>,
    /// `‖Δ₀v − λv‖_{M0}` per pair.
    pub residuals: Vec<f64>,
    /// Start index of every cluster, followed by `eigenvalues.len()`.
    pub cluster_bounds: Vec<usize>,
    /// Index of the selected cluster.
    pub selected: usize,
    /// Mean of the selected cluster.
    pub lambda: f64,
    /// `D + 1`: complex dimension of the selected eigenspace.
    pub kernel_dim: usize,
}

impl SpectralData {
    pub fn clusters(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.cluster_bounds.windows(2).map(|w| w[0]..w[1])
    }

    pub fn cluster_count(&self) -> usize {
        self.cluster_bounds.len() - 1
    }

    pub fn cluster(&self, id: usize) -> Range<usize> {
        self.cluster_bounds[id]..self.cluster_bounds[id + 1]
    }

    pub fn cluster_id_of_index(&self, index: usize) -> usize {
        self.cluster_bounds
            .windows(2)
            .position(|w| w[0] <= index && index < w[1])
            .expect("index within spectrum")
    }

    fn cluster_mean(&self, id: usize) -> f64 {
        let r = self.cluster(id);
        let len = r.len() as f64;
        self.eigenvalues[r].iter().sum::<f64>() / len
    }

    /// Cluster whose range contains `lambda` up to the clustering tolerance.
    pub fn find_cluster(&self, lambda: f64) -> Result<usize> {
        (0..self.cluster_count())
            .find(|&id| {
                let r = self.cluster(id);
                let lo = self.eigenvalues[r.start];
                let hi = self.eigenvalues[r.end - 1];
                let slack = CLUSTER_TOL * lambda.abs().max(hi.abs()) + 1e-12;
                lambda >= lo - slack && lambda <= hi + slack
            })
            .ok_or(Error::Lookup(lambda))
    }

    /// Copy with the cluster containing `lambda` selected.
    pub fn select(&self, lambda: f64) -> Result<Self> {
        let id = self.find_cluster(lambda)?;
        Ok(self.select_cluster(id))
    }

    pub fn select_cluster(&self, id: usize) -> Self {
        let mut out = self.clone();
        out.selected = id;
        out.lambda = self.cluster_mean(id);
        out.kernel_dim = self.cluster(id).len();
        out
    }

    /// Basis of the selected eigenspace.
    pub fn kernel_basis(&self) -> &[Section] {
        &self.eigenvectors[self.cluster(self.selected)]
    }

    /// `index,eigenvalue,cluster_id,residual` with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,eigenvalue,cluster_id,residual\n");
        for (i, (l, r)) in self.eigenvalues.iter().zip(&self.residuals).enumerate() {
            let _ = writeln!(out, "{i},{l:.16e},{},{r:.16e}", self.cluster_id_of_index(i));
        }
        out
    }
}

/// Lowest `count` eigenpairs with the default options.
pub fn eigensolve(operator: &ConnectionLaplacian, count: usize) -> Result<SpectralData> {
    eigensolve_with(operator, &EigensolveOptions::new(count))
}

/// Lowest eigenpairs of `Δ₀`. The last cluster is completed when the
/// requested count splits it.
pub fn eigensolve_with(
    operator: &ConnectionLaplacian,
    opts: &EigensolveOptions,
) -> Result<SpectralData> {
    let n = operator.dim();
    if opts.count == 0 || opts.count > n {
        return Err(Error::Input(format!(
            "requested {} eigenpairs of a {n}-dimensional operator",
            opts.count
        )));
    }
    let guard = (opts.count / 2).max(8);
    let (values, vectors) = if n <= opts.dense_limit {
        dense_eigenpairs(operator)
    } else {
        let block = (opts.count + guard).min(n);
        chebyshev_subspace(operator, block, opts.count, opts)?
    };
    let scale = operator.upper_bound();
    let bounds_all = cluster_bounds(&values, scale);
    // include the whole cluster that contains index count-1 when available
    let mut keep = opts.count;
    for w in bounds_all.windows(2) {
        if w[0] < keep && keep < w[1] {
            keep = if w[1] < values.len() { w[1] } else { keep };
        }
    }
    let inv_sqrt = operator.inv_sqrt_mass();
    let mut eigenvectors = Vec::with_capacity(keep);
    for y in &vectors[..keep] {
        eigenvectors.push(Section(
            y.iter().zip(inv_sqrt).map(|(v, s)| v * s).collect(),
        ));
    }
    let eigenvalues = values[..keep].to_vec();
    let cluster_bounds = cluster_bounds(&eigenvalues, scale);
    for w in cluster_bounds.windows(2) {
        let spread = eigenvalues[w[1] - 1] - eigenvalues[w[0]];
        if spread <= ROTATION_TOL * eigenvalues[w[0]].abs().max(1.0) {
            canonicalize(operator, &mut eigenvectors[w[0]..w[1]]);
        } else {
            // split cluster: rotating would mix distinct eigenvalues
            for i in w[0]..w[1] {
                canonicalize(operator, &mut eigenvectors[i..=i]);
            }
        }
    }
    let residuals = eigenvectors
        .iter()
        .zip(&eigenvalues)
        .map(|(v, &l)| residual(operator, v, l))
        .collect();
    let mut data = SpectralData {
        eigenvalues,
        eigenvectors,
        residuals,
        cluster_bounds,
        selected: 0,
        lambda: 0.0,
        kernel_dim: 0,
    };
    data = data.select_cluster(0);
    Ok(data)
}

/// Orthonormal canonical basis of the cluster containing `lambda`.
pub fn eigenspace_basis(data: &SpectralData, lambda: f64) -> Result<Vec<Section>> {
    let id = data.find_cluster(lambda)?;
    Ok(data.eigenvectors[data.cluster(id)].to_vec())
}

fn residual(op: &ConnectionLaplacian, v: &[Complex64], lambda: f64) -> f64 {
    let lv = op.apply(v);
    lv.iter()
        .zip(v)
        .zip(&op.mass)
        .map(|((a, b), m)| m * (a - lambda * b).norm_sqr())
        .sum::<f64>()
        .sqrt()
}

fn cluster_bounds(values: &[f64], scale: f64) -> Vec<usize> {
    let mut bounds = vec![0];
    for i in 1..values.len() {
        let gap = values[i] - values[i - 1];
        let tol = CLUSTER_TOL * values[i].abs().max(values[i - 1].abs()) + 1e-12 * scale;
        if gap > tol {
            bounds.push(i);
        }
    }
    bounds.push(values.len());
    bounds
}

/// Rotates an eigenspace basis into a canonical orientation that depends
/// only on the span: repeatedly pick the vertex where the remaining
/// projector has the largest diagonal, take its column and fix the phase at
/// that vertex to be real positive.
fn canonicalize(op: &ConnectionLaplacian, basis: &mut [Section]) {
    let k = basis.len();
    if k == 0 {
        return;
    }
    let sqrt_mass: Vec<f64> = op.mass.iter().map(|m| m.sqrt()).collect();
    // Euclidean-orthonormal representation
    let mut y: Vec<Vec<Complex64>> = basis
        .iter()
        .map(|v| v.iter().zip(&sqrt_mass).map(|(a, s)| a * s).collect())
        .collect();
    let n = sqrt_mass.len();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let mut best = (0, -1.0);
        for v in 0..n {
            let d: f64 = y.iter().map(|col| col[v].norm_sqr()).sum();
            // ties are broken towards the lower index
            if d > best.1 * (1.0 + 1e-9) {
                best = (v, d);
            }
        }
        let pivot = best.0;
        let coeffs: Vec<Complex64> = y.iter().map(|col| col[pivot].conj()).collect();
        let mut u = vec![Complex64::new(0.0, 0.0); n];
        for (col, c) in y.iter().zip(&coeffs) {
            for (ui, yi) in u.iter_mut().zip(col) {
                *ui += c * yi;
            }
        }
        let norm = u.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        u.iter_mut().for_each(|z| *z /= norm);
        // u[pivot] = norm is already real positive
        for col in y.iter_mut() {
            let c: Complex64 = u.iter().zip(col.iter()).map(|(a, b)| a.conj() * b).sum();
            for (yi, ui) in col.iter_mut().zip(&u) {
                *yi -= c * ui;
            }
        }
        out.push(u);
    }
    orthonormalize(&mut out);
    for (b, u) in basis.iter_mut().zip(out) {
        *b = Section(u.iter().zip(&sqrt_mass).map(|(a, s)| a / s).collect());
    }
}

fn dense_eigenpairs(op: &ConnectionLaplacian) -> (Vec<f64>, Vec<Vec<Complex64>>) {
    let n = op.dim();
    let inv = op.inv_sqrt_mass();
    let mut m = DMatrix::<Complex64>::zeros(n, n);
    for r in 0..n {
        for (c, v) in op.stiffness.row(r) {
            m[(r, c)] += v * inv[r] * inv[c];
        }
    }
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vectors)
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Two passes of modified Gram–Schmidt.
fn orthonormalize(vs: &mut [Vec<Complex64>]) {
    for _ in 0..2 {
        for i in 0..vs.len() {
            let (done, rest) = vs.split_at_mut(i);
            let v = &mut rest[0];
            for u in done.iter() {
                let c = dot(u, v);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= c * ui;
                }
            }
            let norm = dot(v, v).re.sqrt();
            v.iter_mut().for_each(|z| *z /= norm);
        }
    }
}

fn chebyshev_subspace(
    op: &ConnectionLaplacian,
    block: usize,
    wanted: usize,
    opts: &EigensolveOptions,
) -> Result<(Vec<f64>, Vec<Vec<Complex64>>)> {
    let n = op.dim();
    let upper = op.upper_bound() * 1.01;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut basis: Vec<Vec<Complex64>> = (0..block)
        .map(|_| {
            (0..n)
                .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect()
        })
        .collect();
    orthonormalize(&mut basis);
    let mut degree = 40;
    let mut worst = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (values, vectors, images) = rayleigh_ritz(op, &basis);
        let mut converged = true;
        worst = 0.0;
        for i in 0..wanted.min(block) {
            let r: f64 = images[i]
                .iter()
                .zip(&vectors[i])
                .map(|(a, b)| (a - values[i] * b).norm_sqr())
                .sum::<f64>()
                .sqrt();
            let rel = r / values[i].abs().max(1.0);
            worst = worst.max(rel);
            if rel > opts.tol {
                converged = false;
            }
        }
        if converged {
            return Ok((values, vectors));
        }
        let cut = values[block - 1];
        basis = chebyshev_filter(op, &vectors, degree, cut, upper);
        orthonormalize(&mut basis);
        degree = (degree + 20).min(400);
    }
    Err(Error::Solver {
        solver: "chebyshev subspace iteration",
        iterations: opts.max_iter,
        residual: worst,
    })
}

type RitzPairs = (Vec<f64>, Vec<Vec<Complex64>>, Vec<Vec<Complex64>>);

fn rayleigh_ritz(op: &ConnectionLaplacian, basis: &[Vec<Complex64>]) -> RitzPairs {
    let k = basis.len();
    let images: Vec<Vec<Complex64>> = basis.iter().map(|v| op.apply_symmetric(v)).collect();
    let h = DMatrix::from_fn(k, k, |i, j| {
        0.5 * (dot(&basis[i], &images[j]) + dot(&images[i], &basis[j]))
    });
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let n = basis[0].len();
    let combine = |src: &[Vec<Complex64>], col: usize| {
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (j, s) in src.iter().enumerate() {
            let c = eig.eigenvectors[(j, col)];
            for (o, v) in out.iter_mut().zip(s) {
                *o += c * v;
            }
        }
        out
    };
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = order.iter().map(|&i| combine(basis, i)).collect();
    let mapped = order.iter().map(|&i| combine(&images, i)).collect();
    (values, vectors, mapped)
}

/// Scaled Chebyshev filter damping `[cut, upper]`.
fn chebyshev_filter(
    op: &ConnectionLaplacian,
    vectors: &[Vec<Complex64>],
    degree: usize,
    cut: f64,
    upper: f64,
) -> Vec<Vec<Complex64>> {
    let e = 0.5 * (upper - cut);
    let c = 0.5 * (upper + cut);
    vectors
        .iter()
        .map(|x| {
            let mut y_prev = x.clone();
            let ax = op.apply_symmetric(x);
            let mut y: Vec<Complex64> = ax.iter().zip(x).map(|(a, b)| (a - c * b) / e).collect();
            for _ in 1..degree {
                let ay = op.apply_symmetric(&y);
                let y_next: Vec<Complex64> = ay
                    .iter()
                    .zip(&y)
                    .zip(&y_prev)
                    .map(|((a, yi), yp)| 2.0 * (a - c * yi) / e - yp)
                    .collect();
                y_prev = std::mem::replace(&mut y, y_next);
                // keep magnitudes bounded
                let norm = dot(&y, &y).re.sqrt();
                if norm > 1e100 {
                    y.iter_mut().for_each(|z| *z /= norm);
                    y_prev.iter_mut().for_each(|z| *z /= norm);
                }
            }
            y
        })
        .collect()
}
