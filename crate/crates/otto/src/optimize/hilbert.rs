//! Identification of gradients through graph-Laplacian inner products on
//! the seed space `R^{2N}` and the measure space `R^N`.

use nalgebra::{DMatrix, DVector};
use sprs::CsMat;

use crate::error::{OttoError, Result};
use crate::geometry::{Constraint, Piece, Point, PowerDiagram};
use crate::linalg::{dot, matvec, Factorization, SymAssembler};

/// How the normal components of boundary seeds are treated when
/// identifying a seed gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeedConstraint {
    /// Plain smoothing, no constraint.
    Free,
    /// Saddle-point system with one multiplier per boundary normal.
    Kkt,
    /// Exact penalization of the normal components with parameter `ε`.
    Penalty(f64),
}

/// Penalty parameter of [`SeedConstraint::Penalty`] used by default.
pub const DEFAULT_PENALTY: f64 = 1e-6;

/// Inner products `a_s(h¹, h²) = ⟨(α²A_s + I)h¹, h²⟩` on seed displacements
/// (interleaved `x, y` per seed) and `a_ν(ν¹, ν²) = ⟨(α²A_ν + I)ν¹, ν²⟩` on
/// measure variations, with `A_s`, `A_ν` the graph Laplacians of the
/// neighbour relation of the cells.
pub struct HilbertProducts {
    /// Number of seeds.
    pub n: usize,
    /// Regularization length, in units of neighbour hops.
    pub alpha: f64,
    /// Graph Laplacian `A_ν` (`N × N`).
    pub laplacian: CsMat<f64>,
    /// `α²A_s + I` (`2N × 2N`).
    pub seed_matrix: CsMat<f64>,
    /// `α²A_ν + I` (`N × N`).
    pub measure_matrix: CsMat<f64>,
    /// Constraint rows: seed index and outward unit normal of a domain edge
    /// carried by its cell.
    pub normals: Vec<(usize, Point)>,
    seed_factor: Factorization,
    measure_factor: Factorization,
}

/// Symmetrized neighbour lists of the cells of a diagram.
pub fn neighbor_graph(d: &PowerDiagram) -> Vec<Vec<usize>> {
    let n = d.len();
    let mut adj = vec![Vec::new(); n];
    for i in 0..n {
        for &j in &d.cells[i].neighbors {
            if j != i && j < n {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    adj
}

/// Outward normals of the domain edges met by each cell along a piece of
/// positive length, one entry per (cell, edge) pair.
pub fn boundary_normals(d: &PowerDiagram) -> Vec<(usize, Point)> {
    let mut out = Vec::new();
    for (i, cell) in d.cells.iter().enumerate() {
        let mut edges: Vec<usize> = cell
            .pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Segment { a, b, on: Constraint::Domain(k) }
                    if (d.vertices[*a].pos - d.vertices[*b].pos).norm() > 0.0 =>
                {
                    Some(*k)
                }
                _ => None,
            })
            .collect();
        edges.sort_unstable();
        edges.dedup();
        // Collinear domain edges (a split boundary segment) share one normal.
        let mut normals: Vec<Point> = Vec::new();
        for k in edges {
            let n = d.domain.normal(k);
            if normals.iter().all(|m| m.dot(&n) < 1.0 - 1e-12) {
                normals.push(n);
            }
        }
        out.extend(normals.into_iter().map(|n| (i, n)));
    }
    out
}

/// Mean distance between the seeds of neighbouring cells.
pub fn mean_neighbor_distance(seeds: &[Point], adj: &[Vec<usize>]) -> f64 {
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, nb) in adj.iter().enumerate() {
        for &j in nb.iter().filter(|&&j| j > i) {
            sum += (seeds[i] - seeds[j]).norm();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

impl HilbertProducts {
    /// Builds the products from symmetric neighbour lists.
    pub fn new(adj: &[Vec<usize>], alpha: f64, normals: Vec<(usize, Point)>) -> Result<Self> {
        let n = adj.len();
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(OttoError::InvalidArgument(format!("regularization length {alpha} must be nonnegative")));
        }
        if let Some(&(i, _)) = normals.iter().find(|(i, _)| *i >= n) {
            return Err(OttoError::InvalidArgument(format!("boundary normal for seed {i} of {n}")));
        }
        let a2 = alpha * alpha;
        let mut lap = SymAssembler::new(n);
        let mut seed = SymAssembler::new(2 * n);
        let mut meas = SymAssembler::new(n);
        for (i, nb) in adj.iter().enumerate() {
            lap.add(i, i, nb.len() as f64);
            meas.add(i, i, 1.0 + a2 * nb.len() as f64);
            for c in 0..2 {
                seed.add(2 * i + c, 2 * i + c, 1.0 + a2 * nb.len() as f64);
            }
            for &j in nb {
                lap.add(i, j, -1.0);
                meas.add(i, j, -a2);
                for c in 0..2 {
                    seed.add(2 * i + c, 2 * j + c, -a2);
                }
            }
        }
        let seed_matrix = seed.to_csr();
        let measure_matrix = meas.to_csr();
        let seed_factor = Factorization::new(&seed_matrix)?;
        let measure_factor = Factorization::new(&measure_matrix)?;
        Ok(HilbertProducts {
            n,
            alpha,
            laplacian: lap.to_csr(),
            seed_matrix,
            measure_matrix,
            normals,
            seed_factor,
            measure_factor,
        })
    }

    /// `a_s(x, y)`.
    pub fn seed_product(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(&matvec(&self.seed_matrix, x), y)
    }

    /// `a_ν(x, y)`.
    pub fn measure_product(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(&matvec(&self.measure_matrix, x), y)
    }

    /// Gradient of a measure functional for `a_ν`: solves `(α²A_ν + I) θ = g`.
    pub fn identify_measures(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check_len(raw, self.n)?;
        self.measure_factor.solve(raw)
    }

    /// Gradient of a seed functional for `a_s`. Returns the direction and the
    /// multipliers of the boundary-normal constraints (empty unless `Kkt`).
    pub fn identify_seeds(&self, raw: &[f64], mode: SeedConstraint) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_len(raw, 2 * self.n)?;
        match mode {
            SeedConstraint::Free => Ok((self.seed_factor.solve(raw)?, Vec::new())),
            SeedConstraint::Penalty(eps) => {
                if !(eps > 0.0) {
                    return Err(OttoError::InvalidArgument(format!("penalty parameter {eps} must be positive")));
                }
                let mut asm = SymAssembler::new(2 * self.n);
                for (i, row) in self.seed_matrix.outer_iterator().enumerate() {
                    for (j, &v) in row.iter() {
                        asm.add(i, j, v);
                    }
                }
                for &(i, nrm) in &self.normals {
                    for a in 0..2 {
                        for b in 0..2 {
                            asm.add(2 * i + a, 2 * i + b, nrm[a] * nrm[b] / eps);
                        }
                    }
                }
                Ok((Factorization::new(&asm.to_csr())?.solve(raw)?, Vec::new()))
            }
            SeedConstraint::Kkt => self.solve_kkt(raw),
        }
    }

    /// Solves `[M L; Lᵀ 0] [h; λ] = [g; 0]` by elimination of `h`:
    /// `(Lᵀ M⁻¹ L) λ = Lᵀ M⁻¹ g`, then `h = M⁻¹(g − L λ)`.
    fn solve_kkt(&self, raw: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let b = self.normals.len();
        let h0 = self.seed_factor.solve(raw)?;
        if b == 0 {
            return Ok((h0, Vec::new()));
        }
        let mut y = Vec::with_capacity(b);
        for &(i, nrm) in &self.normals {
            let mut col = vec![0.0; 2 * self.n];
            col[2 * i] = nrm.x;
            col[2 * i + 1] = nrm.y;
            y.push(self.seed_factor.solve(&col)?);
        }
        let lt = |v: &[f64], k: usize| {
            let (i, nrm) = self.normals[k];
            nrm.x * v[2 * i] + nrm.y * v[2 * i + 1]
        };
        let schur = DMatrix::from_fn(b, b, |r, c| 0.5 * (lt(&y[c], r) + lt(&y[r], c)));
        let rhs = DVector::from_fn(b, |r, _| lt(&h0, r));
        let eig = schur.clone().symmetric_eigen();
        let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &x| (l.min(x), h.max(x.abs())));
        if !(lo > 1e-12 * hi) {
            return Err(OttoError::Solver("singular KKT system: dependent boundary normals".into()));
        }
        let lambda = schur
            .cholesky()
            .ok_or_else(|| OttoError::Solver("singular KKT system: dependent boundary normals".into()))?
            .solve(&rhs);
        let mut h = h0;
        for (k, yk) in y.iter().enumerate() {
            for (hv, yv) in h.iter_mut().zip(yk) {
                *hv -= lambda[k] * yv;
            }
        }
        Ok((h, lambda.iter().copied().collect()))
    }

    fn check_len(&self, v: &[f64], want: usize) -> Result<()> {
        if v.len() != want {
            return Err(OttoError::InvalidArgument(format!("vector of length {} where {want} is expected", v.len())));
        }
        Ok(())
    }
}

/// Largest normal component `max_k |h_i·n_k|` over the constraint rows.
pub fn max_normal_component(h: &[f64], normals: &[(usize, Point)]) -> f64 {
    normals.iter().fold(0.0, |m, &(i, nrm)| m.max((nrm.x * h[2 * i] + nrm.y * h[2 * i + 1]).abs()))
}
