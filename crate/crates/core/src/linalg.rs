//! Sparse storage and Krylov solvers shared by the mesh and bundle operators.
//!
//! Everything here works with an explicit diagonal weight (a discrete Hodge
//! star), so "orthonormal" and "self-adjoint" always refer to the weighted
//! inner product `<x, y> = sum_i w_i conj(x_i) y_i`.

use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Scalars the sparse kernels operate on.
pub trait Scalar:
    Copy
    + Default
    + PartialEq
    + std::fmt::Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Mul<f64, Output = Self>
{
    fn conj(self) -> Self;
    fn abs2(self) -> f64;
    fn from_real(x: f64) -> Self;
    fn re(self) -> f64;
}

impl Scalar for f64 {
    fn conj(self) -> Self {
        self
    }
    fn abs2(self) -> f64 {
        self * self
    }
    fn from_real(x: f64) -> Self {
        x
    }
    fn re(self) -> f64 {
        self
    }
}

impl Scalar for Complex64 {
    fn conj(self) -> Self {
        Complex64::conj(&self)
    }
    fn abs2(self) -> f64 {
        self.norm_sqr()
    }
    fn from_real(x: f64) -> Self {
        Complex64::new(x, 0.0)
    }
    fn re(self) -> f64 {
        self.re
    }
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Csr<T> {
    nrows: usize,
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> Csr<T> {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Self {
        let mut rows: Vec<Vec<(usize, T)>> = vec![Vec::new(); nrows];
        for &(r, c, v) in triplets {
            assert!(r < nrows && c < ncols, "triplet ({r}, {c}) out of bounds");
            rows[r].push((c, v));
        }
        let mut indptr = Vec::with_capacity(nrows + 1);
        let mut indices = Vec::with_capacity(triplets.len());
        let mut values = Vec::with_capacity(triplets.len());
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Self {
            nrows,
            ncols,
            indptr,
            indices,
            values,
        }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let span = self.indptr[r]..self.indptr[r + 1];
        self.indices[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn triplets(&self) -> Vec<(usize, usize, T)> {
        (0..self.nrows)
            .flat_map(|r| self.row(r).map(move |(c, v)| (r, c, v)))
            .collect()
    }

    /// `y = A x`
    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|r| {
                let mut acc = T::default();
                for (c, v) in self.row(r) {
                    acc += v * x[c];
                }
                acc
            })
            .collect()
    }

    /// `y = A^H x` (conjugate transpose).
    pub fn adjoint_mul_vec(&self, x: &[T]) -> Vec<T> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![T::default(); self.ncols];
        for (r, &xr) in x.iter().enumerate() {
            for (c, v) in self.row(r) {
                y[c] += v.conj() * xr;
            }
        }
        y
    }

    /// Conjugate transpose as a new matrix.
    pub fn adjoint(&self) -> Self {
        let t: Vec<_> = self
            .triplets()
            .into_iter()
            .map(|(r, c, v)| (c, r, v.conj()))
            .collect();
        Self::from_triplets(self.ncols, self.nrows, &t)
    }

    /// `A^H diag(w) A`, assembled.
    pub fn weighted_gram(&self, w: &[f64]) -> Self {
        assert_eq!(w.len(), self.nrows);
        let at = self.adjoint();
        let mut trip = Vec::new();
        for i in 0..self.ncols {
            for (k, a_ik) in at.row(i) {
                for (j, a_kj) in self.row(k) {
                    trip.push((i, j, a_ik * a_kj * w[k]));
                }
            }
        }
        Self::from_triplets(self.ncols, self.ncols, &trip)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.nrows.min(self.ncols))
            .map(|r| {
                self.row(r)
                    .find(|&(c, _)| c == r)
                    .map(|(_, v)| v)
                    .unwrap_or_default()
            })
            .collect()
    }

    /// Scales row `r` by `s[r]`.
    pub fn scale_rows(&self, s: &[f64]) -> Self {
        let mut out = self.clone();
        for r in 0..self.nrows {
            for k in self.indptr[r]..self.indptr[r + 1] {
                out.values[k] = out.values[k] * s[r];
            }
        }
        out
    }

    /// Largest absolute row sum; bounds the spectral radius.
    pub fn max_abs_row_sum(&self) -> f64 {
        (0..self.nrows)
            .map(|r| self.row(r).map(|(_, v)| v.abs2().sqrt()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

pub fn weighted_dot<T: Scalar>(w: &[f64], x: &[T], y: &[T]) -> T {
    let mut acc = T::default();
    for ((wi, xi), yi) in w.iter().zip(x).zip(y) {
        acc += xi.conj() * *yi * *wi;
    }
    acc
}

pub fn weighted_norm<T: Scalar>(w: &[f64], x: &[T]) -> f64 {
    w.iter()
        .zip(x)
        .map(|(wi, xi)| wi * xi.abs2())
        .sum::<f64>()
        .sqrt()
}

pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

pub fn scale<T: Scalar>(alpha: T, x: &mut [T]) {
    for xi in x.iter_mut() {
        *xi = alpha * *xi;
    }
}

pub fn sub<T: Scalar>(x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(a, b)| *a - *b).collect()
}

pub fn add<T: Scalar>(x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(a, b)| *a + *b).collect()
}

/// Outcome of an iterative solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

/// Jacobi-preconditioned conjugate gradients for a real symmetric positive
/// semidefinite system `A x = b` in the Euclidean inner product.
///
/// `project` is applied to every residual and search direction; pass the
/// projection onto the complement of the null space for consistent singular
/// systems.
pub fn conjugate_gradient(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    diag: &[f64],
    b: &[f64],
    project: impl Fn(&mut [f64]),
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    project(&mut r);
    let b_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let precond = |r: &[f64]| -> Vec<f64> {
        let mut z: Vec<f64> = r
            .iter()
            .zip(diag)
            .map(|(ri, di)| if *di > 0.0 { ri / di } else { *ri })
            .collect();
        project(&mut z);
        z
    };
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut rel = 1.0;
    for it in 0..max_iter {
        let ap = apply(&p);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::Solver {
                solver: "conjugate gradient (indefinite direction)",
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        project(&mut r);
        rel = r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
        if rel <= rel_tol {
            // Recompute the true residual to guard against drift.
            let mut true_r = sub(b, &apply(&x));
            project(&mut true_r);
            let true_rel = true_r.iter().map(|v| v * v).sum::<f64>().sqrt() / b_norm;
            if true_rel <= rel_tol * 10.0 {
                return Ok((
                    x,
                    SolveStats {
                        iterations: it + 1,
                        relative_residual: true_rel,
                    },
                ));
            }
            r = true_r;
        }
        z = precond(&r);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::Solver {
        solver: "conjugate gradient",
        iterations: max_iter,
        residual: rel,
    })
}

/// MINRES for an operator that is self-adjoint in the `weights` inner
/// product. Handles indefinite operators. `project` is applied to every
/// Lanczos vector (use it for deflation).
pub fn minres<T: Scalar>(
    apply: impl Fn(&[T]) -> Vec<T>,
    weights: &[f64],
    b: &[T],
    project: impl Fn(&mut [T]),
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<T>, SolveStats)> {
    minres_dyn(&apply, weights, b, &project, rel_tol, max_iter)
}

fn minres_dyn<T: Scalar>(
    apply: &dyn Fn(&[T]) -> Vec<T>,
    weights: &[f64],
    b: &[T],
    project: &dyn Fn(&mut [T]),
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<T>, SolveStats)> {
    let n = b.len();
    let mut x = vec![T::default(); n];
    let mut r0 = b.to_vec();
    project(&mut r0);
    let beta1 = weighted_norm(weights, &r0);
    if beta1 == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut v_prev = vec![T::default(); n];
    let mut v = r0;
    scale(T::from_real(1.0 / beta1), &mut v);
    let mut beta = 0.0; // off-diagonal coupling to the previous Lanczos vector
    let (mut c_prev, mut c) = (1.0, 1.0);
    let (mut s_prev, mut s) = (0.0, 0.0);
    let mut w_prev = vec![T::default(); n];
    let mut w = vec![T::default(); n];
    let mut eta = beta1;
    let mut rel = 1.0;
    for it in 0..max_iter {
        let mut p = apply(&v);
        project(&mut p);
        axpy(T::from_real(-beta), &v_prev, &mut p);
        let alpha = weighted_dot(weights, &v, &p).re();
        axpy(T::from_real(-alpha), &v, &mut p);
        // one step of re-orthogonalisation keeps the recurrence honest
        let corr = weighted_dot(weights, &v, &p);
        axpy(-corr, &v, &mut p);
        project(&mut p);
        let beta_next = weighted_norm(weights, &p);

        let eps = s_prev * beta;
        let delta_hat = c_prev * beta;
        let delta = c * delta_hat + s * alpha;
        let gamma_hat = -s * delta_hat + c * alpha;
        let gamma = gamma_hat.hypot(beta_next);
        if gamma == 0.0 {
            return Err(Error::Solver {
                solver: "minres (breakdown)",
                iterations: it,
                residual: rel,
            });
        }
        let c_next = gamma_hat / gamma;
        let s_next = beta_next / gamma;
        let tau = c_next * eta;
        eta = -s_next * eta;

        let mut w_next = v.clone();
        axpy(T::from_real(-delta), &w, &mut w_next);
        axpy(T::from_real(-eps), &w_prev, &mut w_next);
        scale(T::from_real(1.0 / gamma), &mut w_next);
        axpy(T::from_real(tau), &w_next, &mut x);

        w_prev = std::mem::replace(&mut w, w_next);
        c_prev = c;
        s_prev = s;
        c = c_next;
        s = s_next;

        rel = eta.abs() / beta1;
        if rel <= rel_tol || beta_next == 0.0 {
            let mut true_r = sub(b, &apply(&x));
            project(&mut true_r);
            let true_rel = weighted_norm(weights, &true_r) / beta1;
            if true_rel <= rel_tol * 10.0 || beta_next == 0.0 {
                project(&mut x);
                return Ok((
                    x,
                    SolveStats {
                        iterations: it + 1,
                        relative_residual: true_rel,
                    },
                ));
            }
            // restart from the current iterate on the true residual
            let (dx, stats) = minres_dyn(
                apply,
                weights,
                &true_r,
                project,
                rel_tol * beta1 / weighted_norm(weights, &true_r).max(f64::MIN_POSITIVE),
                max_iter.saturating_sub(it + 1),
            )?;
            let mut out = add(&x, &dx);
            project(&mut out);
            return Ok((
                out,
                SolveStats {
                    iterations: it + 1 + stats.iterations,
                    relative_residual: stats.relative_residual
                        * weighted_norm(weights, &true_r)
                        / beta1,
                },
            ));
        }
        let mut v_next = p;
        scale(T::from_real(1.0 / beta_next), &mut v_next);
        v_prev = std::mem::replace(&mut v, v_next);
        beta = beta_next;
    }
    Err(Error::Solver {
        solver: "minres",
        iterations: max_iter,
        residual: rel,
    })
}

/// Preconditioned conjugate gradients for an operator that is self-adjoint
/// and positive in the `weights` inner product. The Krylov space stays in
/// any subspace that `apply` and `precond` preserve and that contains `b`.
pub fn weighted_cg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    weights: &[f64],
    b: &[f64],
    precond: impl Fn(&[f64]) -> Vec<f64>,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let mut x = vec![0.0; n];
    let b_norm = weighted_norm(weights, b);
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = weighted_dot(weights, &r, &z);
    let mut rel = 1.0;
    for it in 0..max_iter {
        let ap = apply(&p);
        let pap = weighted_dot(weights, &p, &ap);
        if pap <= 0.0 {
            return Err(Error::Solver {
                solver: "weighted conjugate gradient (indefinite direction)",
                iterations: it,
                residual: rel,
            });
        }
        let alpha = rz / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        rel = weighted_norm(weights, &r) / b_norm;
        if rel <= rel_tol {
            let true_r = sub(b, &apply(&x));
            let true_rel = weighted_norm(weights, &true_r) / b_norm;
            if true_rel <= rel_tol * 10.0 {
                return Ok((
                    x,
                    SolveStats {
                        iterations: it + 1,
                        relative_residual: true_rel,
                    },
                ));
            }
            r = true_r;
        }
        z = precond(&r);
        let rz_new = weighted_dot(weights, &r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    Err(Error::Solver {
        solver: "weighted conjugate gradient",
        iterations: max_iter,
        residual: rel,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}
