//! Discrete exterior calculus complexes for closed oriented surfaces.

use std::collections::HashMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{self, Csr};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenusLabel {
    Torus,
    Sphere,
}

impl GenusLabel {
    pub fn euler_characteristic(self) -> i64 {
        match self {
            GenusLabel::Torus => 0,
            GenusLabel::Sphere => 2,
        }
    }

    /// First Betti number of the underlying surface.
    pub fn first_betti(self) -> usize {
        match self {
            GenusLabel::Torus => 2,
            GenusLabel::Sphere => 0,
        }
    }
}

/// Structured-grid data for the flat torus; absent on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusGrid {
    pub n: usize,
    pub side_length: f64,
}

impl TorusGrid {
    pub fn spacing(&self) -> f64 {
        self.side_length / self.n as f64
    }

    pub fn vertex(&self, i: usize, j: usize) -> usize {
        (i % self.n) + self.n * (j % self.n)
    }

    /// Edge from (i, j) to (i + 1, j).
    pub fn x_edge(&self, i: usize, j: usize) -> usize {
        self.vertex(i, j)
    }

    /// Edge from (i, j) to (i, j + 1).
    pub fn y_edge(&self, i: usize, j: usize) -> usize {
        self.n * self.n + self.vertex(i, j)
    }

    pub fn face(&self, i: usize, j: usize) -> usize {
        self.vertex(i, j)
    }
}

/// Cochain degree; used to check operator arguments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Degree {
    Zero,
    One,
    Two,
}

/// Immutable DEC complex of a closed oriented surface.
///
/// Hodge weights are diagonal: `hodge0` holds dual cell areas, `hodge1` the
/// ratio dual length / primal length and `hodge2` inverse face areas.
#[derive(Debug, Clone)]
pub struct DecMesh {
    pub genus_label: GenusLabel,
    pub torus: Option<TorusGrid>,
    pub positions: Vec<[f64; 3]>,
    /// Oriented edges `[tail, head]`.
    pub edges: Vec<[usize; 2]>,
    /// Vertices of each face in counterclockwise order.
    pub faces: Vec<Vec<usize>>,
    pub d0: Csr<f64>,
    pub d1: Csr<f64>,
    pub hodge0: Vec<f64>,
    pub hodge1: Vec<f64>,
    pub hodge2: Vec<f64>,
    pub edge_lengths: Vec<f64>,
    pub total_volume: f64,
    /// `d0^T diag(hodge1) d0`, the weak scalar Laplacian.
    pub scalar_stiffness: Csr<f64>,
}

impl DecMesh {
    pub fn vertex_count(&self) -> usize {
        self.hodge0.len()
    }

    pub fn edge_count(&self) -> usize {
        self.hodge1.len()
    }

    pub fn face_count(&self) -> usize {
        self.hodge2.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertex_count() as i64 - self.edge_count() as i64 + self.face_count() as i64
    }

    pub fn len_of(&self, degree: Degree) -> usize {
        match degree {
            Degree::Zero => self.vertex_count(),
            Degree::One => self.edge_count(),
            Degree::Two => self.face_count(),
        }
    }

    pub fn weights(&self, degree: Degree) -> &[f64] {
        match degree {
            Degree::Zero => &self.hodge0,
            Degree::One => &self.hodge1,
            Degree::Two => &self.hodge2,
        }
    }

    /// Applies `d` to a 0- or 1-cochain.
    pub fn exterior_derivative(&self, degree: Degree, form: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len_of(degree), form.len())?;
        match degree {
            Degree::Zero => Ok(self.d0.mul_vec(form)),
            Degree::One => Ok(self.d1.mul_vec(form)),
            Degree::Two => Err(Error::Unsupported(
                "d of a top-degree cochain on a surface".into(),
            )),
        }
    }

    /// Codifferential `δ` mapping a `degree`-cochain to degree − 1; the
    /// adjoint of `d` in the Hodge inner products.
    pub fn codifferential(&self, degree: Degree, form: &[f64]) -> Result<Vec<f64>> {
        check_len(self.len_of(degree), form.len())?;
        let (d, lower, upper) = match degree {
            Degree::Zero => return Err(Error::Unsupported("codifferential of a 0-cochain".into())),
            Degree::One => (&self.d0, &self.hodge0, &self.hodge1),
            Degree::Two => (&self.d1, &self.hodge1, &self.hodge2),
        };
        let weighted: Vec<f64> = form.iter().zip(upper).map(|(a, w)| a * w).collect();
        Ok(d.adjoint_mul_vec(&weighted)
            .into_iter()
            .zip(lower)
            .map(|(v, w)| v / w)
            .collect())
    }

    pub fn d0(&self, f: &[f64]) -> Vec<f64> {
        self.d0.mul_vec(f)
    }

    pub fn d1(&self, a: &[f64]) -> Vec<f64> {
        self.d1.mul_vec(a)
    }

    /// `δ` on 1-cochains without the shape check.
    pub fn delta1(&self, a: &[f64]) -> Vec<f64> {
        self.codifferential(Degree::One, a).expect("1-cochain length")
    }

    /// `δ d` on 1-cochains: `M1⁻¹ d1ᵀ M2 d1`.
    pub fn delta_d1(&self, a: &[f64]) -> Vec<f64> {
        let weighted: Vec<f64> = self
            .d1(a)
            .iter()
            .zip(&self.hodge2)
            .map(|(v, w)| v * w)
            .collect();
        self.d1
            .adjoint_mul_vec(&weighted)
            .iter()
            .zip(&self.hodge1)
            .map(|(v, w)| v / w)
            .collect()
    }

    /// Hodge-weighted inner product of two real cochains.
    pub fn inner_product(&self, degree: Degree, a: &[f64], b: &[f64]) -> Result<f64> {
        check_len(self.len_of(degree), a.len())?;
        check_len(self.len_of(degree), b.len())?;
        Ok(linalg::weighted_dot(self.weights(degree), a, b))
    }

    pub fn norm(&self, degree: Degree, a: &[f64]) -> f64 {
        linalg::weighted_norm(self.weights(degree), a)
    }

    /// Hodge-weighted mean of a 0-cochain.
    pub fn mean0(&self, f: &[f64]) -> f64 {
        linalg::weighted_dot(&self.hodge0, &vec![1.0; f.len()], f) / self.total_volume
    }

    /// M1-orthonormal basis of harmonic 1-cochains (closed and coclosed).
    /// Two on the torus grid (the x- and y-edge indicators), none on the
    /// sphere.
    pub fn harmonic_basis(&self) -> Vec<Vec<f64>> {
        match self.torus {
            Some(grid) => {
                let nv = grid.n * grid.n;
                let mut hx = vec![0.0; 2 * nv];
                let mut hy = vec![0.0; 2 * nv];
                hx[..nv].iter_mut().for_each(|v| *v = 1.0);
                hy[nv..].iter_mut().for_each(|v| *v = 1.0);
                for h in [&mut hx, &mut hy] {
                    let n = linalg::weighted_norm(&self.hodge1, h);
                    h.iter_mut().for_each(|v| *v /= n);
                }
                vec![hx, hy]
            }
            None => Vec::new(),
        }
    }

    /// Mean edge length; the mesh size used in refinement studies.
    pub fn mesh_size(&self) -> f64 {
        self.edge_lengths.iter().sum::<f64>() / self.edge_count() as f64
    }

    fn assemble(
        genus_label: GenusLabel,
        torus: Option<TorusGrid>,
        positions: Vec<[f64; 3]>,
        edges: Vec<[usize; 2]>,
        faces: Vec<Vec<usize>>,
        face_edges: Vec<Vec<(usize, f64)>>,
        hodge0: Vec<f64>,
        hodge1: Vec<f64>,
        hodge2: Vec<f64>,
        edge_lengths: Vec<f64>,
    ) -> Result<Self> {
        let nv = positions.len();
        let ne = edges.len();
        let nf = faces.len();
        for (kind, weights) in [("hodge0", &hodge0), ("hodge1", &hodge1), ("hodge2", &hodge2)] {
            if let Some((index, &value)) = weights
                .iter()
                .enumerate()
                .find(|(_, w)| !(**w > 0.0 && w.is_finite()))
            {
                return Err(Error::FlaggedWeight { kind, index, value });
            }
        }
        let d0_trip: Vec<_> = edges
            .iter()
            .enumerate()
            .flat_map(|(e, &[t, h])| [(e, t, -1.0), (e, h, 1.0)])
            .collect();
        let d1_trip: Vec<_> = face_edges
            .iter()
            .enumerate()
            .flat_map(|(f, list)| list.iter().map(move |&(e, s)| (f, e, s)))
            .collect();
        let d0 = Csr::from_triplets(ne, nv, &d0_trip);
        let d1 = Csr::from_triplets(nf, ne, &d1_trip);
        let scalar_stiffness = d0.weighted_gram(&hodge1);
        let total_volume = hodge0.iter().sum();
        let mesh = Self {
            genus_label,
            torus,
            positions,
            edges,
            faces,
            d0,
            d1,
            hodge0,
            hodge1,
            hodge2,
            edge_lengths,
            total_volume,
            scalar_stiffness,
        };
        if mesh.euler_characteristic() != genus_label.euler_characteristic() {
            return Err(Error::Inconsistency(format!(
                "Euler characteristic {} does not match {:?}",
                mesh.euler_characteristic(),
                genus_label
            )));
        }
        Ok(mesh)
    }
}

/// Uniform `n × n` quadrilateral grid on the flat square torus of the given
/// side length.
pub fn build_torus(side_length: f64, n: usize) -> Result<DecMesh> {
    if n < 4 {
        return Err(Error::InvalidResolution(n, 4));
    }
    if !(side_length > 0.0 && side_length.is_finite()) {
        return Err(Error::Input(format!("side length {side_length}")));
    }
    let grid = TorusGrid { n, side_length };
    let h = grid.spacing();
    let nv = n * n;
    let mut positions = vec![[0.0; 3]; nv];
    let mut edges = vec![[0, 0]; 2 * nv];
    let mut faces = vec![Vec::new(); nv];
    let mut face_edges = vec![Vec::new(); nv];
    for j in 0..n {
        for i in 0..n {
            let v = grid.vertex(i, j);
            positions[v] = [i as f64 * h, j as f64 * h, 0.0];
            edges[grid.x_edge(i, j)] = [v, grid.vertex(i + 1, j)];
            edges[grid.y_edge(i, j)] = [v, grid.vertex(i, j + 1)];
            let f = grid.face(i, j);
            faces[f] = vec![
                v,
                grid.vertex(i + 1, j),
                grid.vertex(i + 1, j + 1),
                grid.vertex(i, j + 1),
            ];
            face_edges[f] = vec![
                (grid.x_edge(i, j), 1.0),
                (grid.y_edge(i + 1, j), 1.0),
                (grid.x_edge(i, j + 1), -1.0),
                (grid.y_edge(i, j), -1.0),
            ];
        }
    }
    DecMesh::assemble(
        GenusLabel::Torus,
        Some(grid),
        positions,
        edges,
        faces,
        face_edges,
        vec![h * h; nv],
        vec![1.0; 2 * nv],
        vec![1.0 / (h * h); nv],
        vec![h; 2 * nv],
    )
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize3(a: [f64; 3]) -> [f64; 3] {
    let n = dot3(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Cotangent of the angle at `p` in triangle (p, q, r).
fn cot_at(p: [f64; 3], q: [f64; 3], r: [f64; 3]) -> f64 {
    let u = sub3(q, p);
    let v = sub3(r, p);
    let c = cross3(u, v);
    dot3(u, v) / dot3(c, c).sqrt()
}

/// Icosahedron subdivided `subdivisions` times (each triangle split in four)
/// and projected to the unit sphere, with circumcentric dual weights.
pub fn build_icosphere(subdivisions: usize) -> Result<DecMesh> {
    if subdivisions < 1 {
        return Err(Error::InvalidResolution(subdivisions, 1));
    }
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    let mut positions: Vec<[f64; 3]> = [
        [-1.0, g, 0.0],
        [1.0, g, 0.0],
        [-1.0, -g, 0.0],
        [1.0, -g, 0.0],
        [0.0, -1.0, g],
        [0.0, 1.0, g],
        [0.0, -1.0, -g],
        [0.0, 1.0, -g],
        [g, 0.0, -1.0],
        [g, 0.0, 1.0],
        [-g, 0.0, -1.0],
        [-g, 0.0, 1.0],
    ]
    .into_iter()
    .map(normalize3)
    .collect();
    let mut tris: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, positions: &mut Vec<[f64; 3]>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let pa = positions[a];
                let pb = positions[b];
                positions.push(normalize3([
                    pa[0] + pb[0],
                    pa[1] + pb[1],
                    pa[2] + pb[2],
                ]));
                positions.len() - 1
            })
        };
        let mut next = Vec::with_capacity(tris.len() * 4);
        for &[a, b, c] in &tris {
            let ab = mid(a, b, &mut positions);
            let bc = mid(b, c, &mut positions);
            let ca = mid(c, a, &mut positions);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        tris = next;
    }
    // outward orientation
    for t in tris.iter_mut() {
        let [a, b, c] = *t;
        let n = cross3(sub3(positions[b], positions[a]), sub3(positions[c], positions[a]));
        let centroid = [
            positions[a][0] + positions[b][0] + positions[c][0],
            positions[a][1] + positions[b][1] + positions[c][1],
            positions[a][2] + positions[b][2] + positions[c][2],
        ];
        if dot3(n, centroid) < 0.0 {
            t.swap(1, 2);
        }
    }

    let nv = positions.len();
    let mut edge_index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut edges = Vec::new();
    for t in &tris {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            edge_index.entry(key).or_insert_with(|| {
                edges.push([key.0, key.1]);
                edges.len() - 1
            });
        }
    }
    let ne = edges.len();
    let mut hodge0 = vec![0.0; nv];
    let mut dual_len_ratio = vec![0.0; ne];
    let mut hodge2 = Vec::with_capacity(tris.len());
    let mut face_edges = Vec::with_capacity(tris.len());
    for t in &tris {
        let p = [positions[t[0]], positions[t[1]], positions[t[2]]];
        let c = cross3(sub3(p[1], p[0]), sub3(p[2], p[0]));
        let area = 0.5 * dot3(c, c).sqrt();
        hodge2.push(1.0 / area);
        let mut fe = Vec::with_capacity(3);
        for k in 0..3 {
            let (i, j, o) = (k, (k + 1) % 3, (k + 2) % 3);
            let (a, b) = (t[i], t[j]);
            let e = edge_index[&(a.min(b), a.max(b))];
            fe.push((e, if edges[e] == [a, b] { 1.0 } else { -1.0 }));
            let cot_o = cot_at(p[o], p[i], p[j]);
            dual_len_ratio[e] += 0.5 * cot_o;
            // circumcentric dual area split between the edge's endpoints
            let l2 = dot3(sub3(p[j], p[i]), sub3(p[j], p[i]));
            hodge0[a] += l2 * cot_o / 8.0;
            hodge0[b] += l2 * cot_o / 8.0;
        }
        face_edges.push(fe);
    }
    let edge_lengths: Vec<f64> = edges
        .iter()
        .map(|&[a, b]| {
            let d = sub3(positions[a], positions[b]);
            dot3(d, d).sqrt()
        })
        .collect();
    DecMesh::assemble(
        GenusLabel::Sphere,
        None,
        positions,
        edges,
        tris.into_iter().map(|t| t.to_vec()).collect(),
        face_edges,
        hodge0,
        dual_len_ratio,
        hodge2,
        edge_lengths,
    )
}

/// Exact area of the unit sphere, for refinement studies.
pub const UNIT_SPHERE_AREA: f64 = 4.0 * PI;
