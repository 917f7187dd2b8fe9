//! Sparse symmetric linear algebra: assembly, Dirichlet elimination, direct
//! and iterative solves, and a generalized symmetric eigensolver.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::error::{OttoError, Result};

/// Systems up to this size are factorized; larger ones use Jacobi-CG.
pub const DIRECT_LIMIT: usize = 50_000;

/// Relative residual target of the iterative solver.
pub const CG_TOL: f64 = 1e-10;

/// Symmetric sparse matrix under assembly, stored as coordinate triplets.
#[derive(Debug, Clone)]
pub struct SymAssembler {
    n: usize,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymAssembler {
    /// Empty `n x n` matrix.
    pub fn new(n: usize) -> Self {
        SymAssembler { n, rows: Vec::new(), cols: Vec::new(), vals: Vec::new() }
    }

    /// Matrix size.
    pub fn size(&self) -> usize {
        self.n
    }

    /// Adds `v` at `(i, j)`.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        if v != 0.0 {
            self.rows.push(i);
            self.cols.push(j);
            self.vals.push(v);
        }
    }

    /// Adds a dense local block with global indices `dofs`, symmetrized.
    pub fn add_block(&mut self, dofs: &[usize], block: &DMatrix<f64>) {
        for (a, &i) in dofs.iter().enumerate() {
            for (b, &j) in dofs.iter().enumerate() {
                self.add(i, j, 0.5 * (block[(a, b)] + block[(b, a)]));
            }
        }
    }

    /// Compressed row matrix (duplicates summed).
    pub fn to_csr(&self) -> CsMat<f64> {
        let tri = TriMat::from_triplets((self.n, self.n), self.rows.clone(), self.cols.clone(), self.vals.clone());
        tri.to_csr()
    }
}

/// Sparse matrix-vector product.
pub fn matvec(a: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.rows()];
    for (i, row) in a.outer_iterator().enumerate() {
        let mut s = 0.0;
        for (j, &v) in row.iter() {
            s += v * x[j];
        }
        y[i] = s;
    }
    y
}

/// Euclidean dot product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean norm.
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Maximum norm.
pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Reusable solver for a symmetric positive (or negative) definite matrix.
pub enum Factorization {
    Dense(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
    Direct(Box<LdlNumeric<f64, usize>>),
    Iterative(CsMat<f64>),
}

impl Factorization {
    /// Factorizes `a` directly when small enough, otherwise keeps it for CG.
    pub fn new(a: &CsMat<f64>) -> Result<Self> {
        if a.rows() <= 8 {
            let lu = to_dense(a).lu();
            if !lu.is_invertible() {
                return Err(OttoError::Solver("matrix is singular".into()));
            }
            Ok(Factorization::Dense(lu))
        } else if a.rows() <= DIRECT_LIMIT {
            Self::direct(a)
        } else {
            Ok(Factorization::Iterative(a.clone()))
        }
    }

    /// Sparse LDL^T factorization with reverse Cuthill-McKee ordering.
    pub fn direct(a: &CsMat<f64>) -> Result<Self> {
        let csc = a.to_csc();
        let ldl = Ldl::new()
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .numeric(csc.view())
            .map_err(|e| OttoError::Solver(format!("LDL factorization failed: {e:?}")))?;
        let d = ldl.d();
        let scale = d.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if d.iter().any(|x| !x.is_finite() || x.abs() <= 1e-14 * scale) {
            return Err(OttoError::Solver("matrix is numerically singular".into()));
        }
        Ok(Factorization::Direct(Box::new(ldl)))
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        match self {
            Factorization::Dense(lu) => lu
                .solve(&DVector::from_column_slice(b))
                .map(|x| x.iter().copied().collect())
                .ok_or_else(|| OttoError::Solver("singular dense system".into())),
            Factorization::Direct(ldl) => {
                let x: Vec<f64> = ldl.solve(b.to_vec());
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(OttoError::Solver("non-finite solution".into()));
                }
                Ok(x)
            }
            Factorization::Iterative(a) => cg_jacobi(a, b, CG_TOL, 20 * a.rows() + 100),
        }
    }
}

/// Solves the symmetric definite system `A x = b`.
pub fn solve_sym(a: &CsMat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    Factorization::new(a)?.solve(b)
}

/// Jacobi-preconditioned conjugate gradient for definite matrices (either
/// sign); stops when the residual drops below `tol * |b|`.
pub fn cg_jacobi(a: &CsMat<f64>, b: &[f64], tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    let n = b.len();
    let mut diag = vec![1.0; n];
    for (i, row) in a.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            if i == j && v != 0.0 {
                diag[i] = v;
            }
        }
    }
    // A negative definite matrix is handled through -A.
    let sign = if diag.iter().filter(|d| **d < 0.0).count() * 2 > n { -1.0 } else { 1.0 };
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(x);
    }
    let mut r: Vec<f64> = b.iter().map(|v| sign * v).collect();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / (sign * d)).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for _ in 0..max_iter {
        let ap: Vec<f64> = matvec(a, &p).into_iter().map(|v| sign * v).collect();
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(OttoError::Solver("CG breakdown: matrix not definite".into()));
        }
        let alpha = rz / pap;
        for k in 0..n {
            x[k] += alpha * p[k];
            r[k] -= alpha * ap[k];
        }
        if norm(&r) <= tol * bnorm {
            return Ok(x);
        }
        for k in 0..n {
            z[k] = r[k] / (sign * diag[k]);
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for k in 0..n {
            p[k] = z[k] + beta * p[k];
        }
    }
    Err(OttoError::Solver(format!("CG did not reach tolerance {tol:e} in {max_iter} iterations")))
}

/// Splits degrees of freedom into free ones and Dirichlet-constrained ones.
#[derive(Debug, Clone)]
pub struct DofMap {
    /// Free index of each dof, `None` for constrained dofs.
    pub free_index: Vec<Option<usize>>,
    /// Prescribed values (zero for free dofs).
    pub values: Vec<f64>,
    pub num_free: usize,
}

impl DofMap {
    /// All dofs free.
    pub fn all_free(n: usize) -> Self {
        DofMap { free_index: (0..n).map(Some).collect(), values: vec![0.0; n], num_free: n }
    }

    /// Fixes the listed dofs to the given values.
    pub fn with_fixed(n: usize, fixed: &[(usize, f64)]) -> Self {
        let mut is_fixed = vec![None; n];
        for &(d, v) in fixed {
            is_fixed[d] = Some(v);
        }
        let mut free_index = vec![None; n];
        let mut values = vec![0.0; n];
        let mut k = 0;
        for d in 0..n {
            match is_fixed[d] {
                Some(v) => values[d] = v,
                None => {
                    free_index[d] = Some(k);
                    k += 1;
                }
            }
        }
        DofMap { free_index, values, num_free: k }
    }

    /// Restricts a full matrix to the free dofs and moves the prescribed values
    /// to the right-hand side.
    pub fn reduce(&self, a: &CsMat<f64>, b: &[f64]) -> (CsMat<f64>, Vec<f64>) {
        let mut asm = SymAssembler::new(self.num_free);
        let mut rhs = vec![0.0; self.num_free];
        for (i, fi) in self.free_index.iter().enumerate() {
            if let Some(fi) = fi {
                rhs[*fi] += b[i];
            }
        }
        for (i, row) in a.outer_iterator().enumerate() {
            let Some(fi) = self.free_index[i] else { continue };
            for (j, &v) in row.iter() {
                match self.free_index[j] {
                    Some(fj) => asm.add(fi, fj, v),
                    None => rhs[fi] -= v * self.values[j],
                }
            }
        }
        (asm.to_csr(), rhs)
    }

    /// Restricts a full vector to the free dofs.
    pub fn restrict_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_free];
        for (i, fi) in self.free_index.iter().enumerate() {
            if let Some(fi) = fi {
                out[*fi] = v[i];
            }
        }
        out
    }

    /// Expands a free-dof vector, filling in the prescribed values.
    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        self.free_index
            .iter()
            .enumerate()
            .map(|(i, fi)| match fi {
                Some(k) => x[*k],
                None => self.values[i],
            })
            .collect()
    }

    /// Expands a free-dof vector with zeros on constrained dofs.
    pub fn expand_zero(&self, x: &[f64]) -> Vec<f64> {
        self.free_index.iter().map(|fi| fi.map(|k| x[k]).unwrap_or(0.0)).collect()
    }
}

/// Solves `A u = b` with Dirichlet values from `dofs`; returns the full vector.
pub fn solve_dirichlet(a: &CsMat<f64>, b: &[f64], dofs: &DofMap) -> Result<Vec<f64>> {
    let (ar, br) = dofs.reduce(a, b);
    let x = if dofs.num_free == 0 { Vec::new() } else { solve_sym(&ar, &br)? };
    Ok(dofs.expand(&x))
}

/// Relative residual `|K x - lambda M x| / |K x|` of an eigenpair.
pub fn eigen_residual(k_mat: &CsMat<f64>, m_mat: &CsMat<f64>, lambda: f64, x: &[f64]) -> f64 {
    let kx = matvec(k_mat, x);
    let mx = matvec(m_mat, x);
    let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - lambda * b).collect();
    norm(&r) / norm(&kx).max(1e-300)
}

/// Smallest eigenpairs of `K x = lambda M x` for symmetric `K` and symmetric
/// positive definite `M`, by shift-invert subspace iteration (shift 0) with
/// Rayleigh-Ritz projection. Iteration stops once every requested pair has a
/// relative residual below `tol`. Eigenvectors are `M`-orthonormal.
pub fn generalized_eigs(
    k_mat: &CsMat<f64>,
    m_mat: &CsMat<f64>,
    count: usize,
    max_iter: usize,
    tol: f64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = k_mat.rows();
    if count == 0 || count > n {
        return Err(OttoError::InvalidArgument(format!("cannot compute {count} eigenpairs of a size-{n} problem")));
    }
    let p = (count + 5).min(n);
    if n <= 200 {
        return dense_generalized_eigs(k_mat, m_mat, count);
    }
    let fact = Factorization::new(k_mat)?;
    let mut rng = ChaCha8Rng::seed_from_u64(12345);
    let mut x: Vec<Vec<f64>> = (0..p).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut prev = vec![f64::INFINITY; count];
    for _ in 0..max_iter.max(1) {
        let mut y = Vec::with_capacity(p);
        for v in &x {
            y.push(fact.solve(&matvec(m_mat, v))?);
        }
        let (vals, vecs) = rayleigh_ritz(k_mat, m_mat, &y)?;
        x = vecs;
        let done = (0..count).all(|i| eigen_residual(k_mat, m_mat, vals[i], &x[i]) <= tol);
        prev = vals[..count].to_vec();
        if done {
            return Ok((prev, x[..count].to_vec()));
        }
    }
    Ok((prev, x[..count].to_vec()))
}

fn rayleigh_ritz(k_mat: &CsMat<f64>, m_mat: &CsMat<f64>, y: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let p = y.len();
    let ky: Vec<Vec<f64>> = y.iter().map(|v| matvec(k_mat, v)).collect();
    let my: Vec<Vec<f64>> = y.iter().map(|v| matvec(m_mat, v)).collect();
    let kr = DMatrix::from_fn(p, p, |a, b| 0.5 * (dot(&y[a], &ky[b]) + dot(&y[b], &ky[a])));
    let mr = DMatrix::from_fn(p, p, |a, b| 0.5 * (dot(&y[a], &my[b]) + dot(&y[b], &my[a])));
    let (vals, z) = small_generalized(&kr, &mr)?;
    let n = y[0].len();
    let vecs = (0..p)
        .map(|c| {
            let mut v = vec![0.0; n];
            for (a, ya) in y.iter().enumerate() {
                let w = z[(a, c)];
                for (vi, yi) in v.iter_mut().zip(ya) {
                    *vi += w * yi;
                }
            }
            v
        })
        .collect();
    Ok((vals, vecs))
}

/// Dense generalized symmetric eigenproblem with sorted eigenvalues and
/// `M`-orthonormal eigenvectors stored as matrix columns.
pub fn small_generalized(k: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let chol = m.clone().cholesky().ok_or_else(|| OttoError::Solver("mass matrix is not positive definite".into()))?;
    let l = chol.l();
    let linv = l.clone().try_inverse().ok_or_else(|| OttoError::Solver("singular Cholesky factor".into()))?;
    let a = &linv * k * linv.transpose();
    let a = (&a + a.transpose()) * 0.5;
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let q = DMatrix::from_fn(k.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    let z = linv.transpose() * q;
    Ok((vals, z))
}

fn dense_generalized_eigs(k_mat: &CsMat<f64>, m_mat: &CsMat<f64>, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let k = to_dense(k_mat);
    let m = to_dense(m_mat);
    let (vals, z) = small_generalized(&((&k + k.transpose()) * 0.5), &((&m + m.transpose()) * 0.5))?;
    let vecs = (0..count).map(|c| z.column(c).iter().copied().collect()).collect();
    Ok((vals[..count].to_vec(), vecs))
}

/// Dense copy of a sparse matrix.
pub fn to_dense(a: &CsMat<f64>) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.rows(), a.cols());
    for (i, row) in a.outer_iterator().enumerate() {
        for (j, &v) in row.iter() {
            d[(i, j)] += v;
        }
    }
    d
}

/// Solves a small dense symmetric system, falling back to LU.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    a.clone().lu().solve(b).ok_or_else(|| OttoError::Solver("singular dense system".into()))
}
