//! Lowest-order virtual element method on polygonal meshes: global assembly
//! with labelled boundary conditions, linear solves and generalized
//! eigenvalue problems.

pub mod local;

use std::io::{self, Write};

use nalgebra::DMatrix;
use sprs::CsMat;

pub use local::{
    conduc_local, elas_local, elastic_energy_matrix, mass_local, ElasticLocal, ElementGeometry, ScalarLocal,
};

use crate::error::{OttoError, Result};
use crate::geometry::{EdgeTag, Point, PolyMesh, LABEL_FREE};
use crate::linalg::{generalized_eigs, matvec, norm, DofMap, Factorization, SymAssembler};

/// Scalar function of the position.
pub type ScalarFn<'a> = &'a dyn Fn(Point) -> f64;
/// Vector function of the position.
pub type VectorFn<'a> = &'a dyn Fn(Point) -> Point;

/// Relative residual required from linear solves.
pub const SOLVE_TOL: f64 = 1e-10;
/// Relative residual required from eigenpairs.
pub const EIGEN_TOL: f64 = 1e-8;
/// Iteration cap of the eigen solver.
pub const EIGEN_MAX_ITER: usize = 200;

/// Assembled global operator with its right-hand side and Dirichlet data.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    /// Full symmetric matrix before elimination of the Dirichlet dofs.
    pub matrix: CsMat<f64>,
    /// Full load vector.
    pub rhs: Vec<f64>,
    pub dofs: DofMap,
}

/// Boundary data of the conductivity problem: `u = g` on edges with a
/// Dirichlet label, flux `γ ∂u/∂n = g` on edges with a Neumann label.
/// Other boundary edges are insulated.
#[derive(Default)]
pub struct ScalarBc<'a> {
    pub dirichlet: Vec<(i32, ScalarFn<'a>)>,
    pub neumann: Vec<(i32, ScalarFn<'a>)>,
}

/// Boundary data of linear elasticity: prescribed displacement on Dirichlet
/// labels, surface load on Neumann labels, traction-free elsewhere.
#[derive(Default)]
pub struct ElasticBc<'a> {
    pub dirichlet: Vec<(i32, VectorFn<'a>)>,
    pub neumann: Vec<(i32, VectorFn<'a>)>,
}

/// Global conductivity stiffness with per-element conductivities.
pub fn assemble_stiffness_scalar(mesh: &PolyMesh, gamma: &[f64]) -> Result<CsMat<f64>> {
    check_len(mesh, gamma.len())?;
    let mut asm = SymAssembler::new(mesh.num_vertices());
    for (e, el) in mesh.elements.iter().enumerate() {
        let op = conduc_local(&mesh.element_points(e), gamma[e])?;
        asm.add_block(el, &op.k);
    }
    Ok(asm.to_csr())
}

/// Global elastic stiffness with per-element Lamé pairs `(λ, μ)`. Dof `2v`
/// is the x displacement of vertex `v`, dof `2v + 1` the y displacement.
pub fn assemble_stiffness_elastic(mesh: &PolyMesh, lame: &[(f64, f64)]) -> Result<CsMat<f64>> {
    check_len(mesh, lame.len())?;
    let mut asm = SymAssembler::new(2 * mesh.num_vertices());
    for (e, el) in mesh.elements.iter().enumerate() {
        let (l, m) = lame[e];
        let op = elas_local(&mesh.element_points(e), l, m)?;
        asm.add_block(&elastic_dofs(el), &op.k);
    }
    Ok(asm.to_csr())
}

/// Global scalar mass matrix.
pub fn assemble_mass(mesh: &PolyMesh) -> Result<CsMat<f64>> {
    let mut asm = SymAssembler::new(mesh.num_vertices());
    for (e, el) in mesh.elements.iter().enumerate() {
        let op = conduc_local(&mesh.element_points(e), 1.0)?;
        asm.add_block(el, &mass_local(&op));
    }
    Ok(asm.to_csr())
}

/// Interleaved elastic dofs of an element.
pub fn elastic_dofs(el: &[usize]) -> Vec<usize> {
    el.iter().flat_map(|&v| [2 * v, 2 * v + 1]).collect()
}

fn check_len(mesh: &PolyMesh, n: usize) -> Result<()> {
    if n != mesh.num_elements() {
        return Err(OttoError::InvalidArgument(format!("{n} material values for {} elements", mesh.num_elements())));
    }
    Ok(())
}

/// Boundary label of an element edge: the domain edge label, or
/// `LABEL_FREE` for a free boundary edge. Shared edges carry no label.
pub fn edge_label(tag: &EdgeTag) -> Option<i32> {
    match tag {
        EdgeTag::Domain { label, .. } => Some(*label),
        EdgeTag::Free => Some(LABEL_FREE),
        EdgeTag::Shared(_) => None,
    }
}

/// Boundary edges `(a, b)` carrying `label`; an error if there is none.
fn labelled_edges(mesh: &PolyMesh, label: i32) -> Result<Vec<(usize, usize)>> {
    let mut out = Vec::new();
    for (e, el) in mesh.elements.iter().enumerate() {
        let n = el.len();
        for k in 0..n {
            if edge_label(&mesh.edge_tags[e][k]) == Some(label) {
                out.push((el[k], el[(k + 1) % n]));
            }
        }
    }
    if out.is_empty() {
        return Err(OttoError::UnlabeledBoundary(format!("no mesh edge carries label {label}")));
    }
    Ok(out)
}

/// One-point body-force load: each vertex of `E` receives `f(q̄) |E| / n`.
pub fn body_load(mesh: &PolyMesh, f: ScalarFn) -> Result<Vec<f64>> {
    let mut rhs = vec![0.0; mesh.num_vertices()];
    for (e, el) in mesh.elements.iter().enumerate() {
        let geo = ElementGeometry::new(&mesh.element_points(e))?;
        let share = f(geo.center) * geo.area / el.len() as f64;
        for &v in el {
            rhs[v] += share;
        }
    }
    Ok(rhs)
}

/// Conductivity system `K u = F` with Dirichlet and trapezoidal Neumann data.
pub fn scalar_system(mesh: &PolyMesh, gamma: &[f64], source: ScalarFn, bc: &ScalarBc) -> Result<LinearSystem> {
    let matrix = assemble_stiffness_scalar(mesh, gamma)?;
    let mut rhs = body_load(mesh, source)?;
    for (label, g) in &bc.neumann {
        for (a, b) in labelled_edges(mesh, *label)? {
            let (qa, qb) = (mesh.vertices[a], mesh.vertices[b]);
            let half = 0.5 * (qb - qa).norm();
            rhs[a] += half * g(qa);
            rhs[b] += half * g(qb);
        }
    }
    let mut fixed = Vec::new();
    let mut seen = vec![false; mesh.num_vertices()];
    for (label, g) in &bc.dirichlet {
        for (a, b) in labelled_edges(mesh, *label)? {
            for v in [a, b] {
                if !seen[v] {
                    seen[v] = true;
                    fixed.push((v, g(mesh.vertices[v])));
                }
            }
        }
    }
    let dofs = DofMap::with_fixed(mesh.num_vertices(), &fixed);
    Ok(LinearSystem { matrix, rhs, dofs })
}

/// Elasticity system `K u = F` with per-element Lamé pairs, one-point body
/// force and trapezoidal surface loads.
pub fn elastic_system(mesh: &PolyMesh, lame: &[(f64, f64)], body: VectorFn, bc: &ElasticBc) -> Result<LinearSystem> {
    let matrix = assemble_stiffness_elastic(mesh, lame)?;
    let nv = mesh.num_vertices();
    let bx = body_load(mesh, &|x| body(x).x)?;
    let by = body_load(mesh, &|x| body(x).y)?;
    let mut rhs: Vec<f64> = (0..nv).flat_map(|v| [bx[v], by[v]]).collect();
    for (label, g) in &bc.neumann {
        for (a, b) in labelled_edges(mesh, *label)? {
            let (qa, qb) = (mesh.vertices[a], mesh.vertices[b]);
            let half = 0.5 * (qb - qa).norm();
            let (ga, gb) = (g(qa), g(qb));
            rhs[2 * a] += half * ga.x;
            rhs[2 * a + 1] += half * ga.y;
            rhs[2 * b] += half * gb.x;
            rhs[2 * b + 1] += half * gb.y;
        }
    }
    let mut fixed = Vec::new();
    let mut seen = vec![false; nv];
    for (label, g) in &bc.dirichlet {
        for (a, b) in labelled_edges(mesh, *label)? {
            for v in [a, b] {
                if !seen[v] {
                    seen[v] = true;
                    let u = g(mesh.vertices[v]);
                    fixed.push((2 * v, u.x));
                    fixed.push((2 * v + 1, u.y));
                }
            }
        }
    }
    let dofs = DofMap::with_fixed(2 * nv, &fixed);
    Ok(LinearSystem { matrix, rhs, dofs })
}

/// Solves a system after symmetric elimination of its Dirichlet dofs and
/// returns the full nodal vector. The reduced residual is driven below
/// `SOLVE_TOL` relative by iterative refinement.
pub fn solve(sys: &LinearSystem) -> Result<Vec<f64>> {
    let (a, b) = sys.dofs.reduce(&sys.matrix, &sys.rhs);
    if sys.dofs.num_free == 0 {
        return Ok(sys.dofs.expand(&[]));
    }
    let x = solve_refined(&a, &b)?;
    Ok(sys.dofs.expand(&x))
}

/// Solves `A x = b` with a few steps of iterative refinement.
pub fn solve_refined(a: &CsMat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let bn = norm(b);
    if bn == 0.0 {
        return Ok(vec![0.0; b.len()]);
    }
    let fact = Factorization::new(a)?;
    let mut x = fact.solve(b)?;
    let mut rel = f64::INFINITY;
    for _ in 0..4 {
        let ax = matvec(a, &x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        rel = norm(&r) / bn;
        if !rel.is_finite() {
            break;
        }
        if rel <= SOLVE_TOL {
            return Ok(x);
        }
        let dx = fact.solve(&r)?;
        for (xi, di) in x.iter_mut().zip(&dx) {
            *xi += di;
        }
    }
    Err(OttoError::Solver(format!("linear solve residual {rel:e} above {SOLVE_TOL:e}")))
}

/// Smallest `count` eigenpairs of `K u = λ M u` restricted to the free dofs
/// of `dofs` (constrained dofs are zero). Eigenvectors are returned as full
/// nodal vectors, `M`-orthonormal, with their first nonzero component positive.
pub fn solve_eigs(k: &CsMat<f64>, m: &CsMat<f64>, dofs: &DofMap, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = dofs.num_free;
    if count == 0 || count > n {
        return Err(OttoError::InvalidArgument(format!("cannot compute {count} eigenpairs with {n} free dofs")));
    }
    let zero = vec![0.0; k.rows()];
    let (kr, _) = dofs.reduce(k, &zero);
    let (mr, _) = dofs.reduce(m, &zero);
    let (vals, vecs) = generalized_eigs(&kr, &mr, count, EIGEN_MAX_ITER, 1e-10)?;
    let mut out = Vec::with_capacity(count);
    for (lambda, mut v) in vals.iter().copied().zip(vecs) {
        let res = crate::linalg::eigen_residual(&kr, &mr, lambda, &v);
        if !(res <= EIGEN_TOL) {
            return Err(OttoError::Solver(format!("eigenpair residual {res:e} above {EIGEN_TOL:e}")));
        }
        let mv = matvec(&mr, &v);
        let scale = crate::linalg::dot(&v, &mv).sqrt();
        let big = v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let first = v.iter().copied().find(|x| x.abs() > 1e-10 * big).unwrap_or(1.0);
        let sign = if first < 0.0 { -1.0 } else { 1.0 };
        for x in v.iter_mut() {
            *x *= sign / scale;
        }
        out.push(dofs.expand_zero(&v));
    }
    Ok((vals, out))
}

/// Dirichlet dof map fixing every vertex on edges carrying one of `labels`
/// to zero, with `components` dofs per vertex.
pub fn homogeneous_dofs(mesh: &PolyMesh, labels: &[i32], components: usize) -> Result<DofMap> {
    let mut fixed = Vec::new();
    let mut seen = vec![false; mesh.num_vertices()];
    for &label in labels {
        for (a, b) in labelled_edges(mesh, label)? {
            for v in [a, b] {
                if !seen[v] {
                    seen[v] = true;
                    for c in 0..components {
                        fixed.push((components * v + c, 0.0));
                    }
                }
            }
        }
    }
    Ok(DofMap::with_fixed(components * mesh.num_vertices(), &fixed))
}

/// Discrete L² norm `sqrt(uᵀ M u)`.
pub fn l2_norm(m: &CsMat<f64>, u: &[f64]) -> f64 {
    crate::linalg::dot(u, &matvec(m, u)).max(0.0).sqrt()
}

/// Writes a nodal field as CSV with header `vertex_id,x,y,value` (scalar) or
/// `vertex_id,x,y,value,value2` (two interleaved components).
pub fn write_nodal_csv<W: Write>(w: &mut W, vertices: &[Point], values: &[f64]) -> io::Result<()> {
    let comps = if vertices.is_empty() { 1 } else { values.len() / vertices.len() };
    if comps * vertices.len() != values.len() || !(1..=2).contains(&comps) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "field size does not match the vertex count"));
    }
    if comps == 1 {
        writeln!(w, "vertex_id,x,y,value")?;
    } else {
        writeln!(w, "vertex_id,x,y,value,value2")?;
    }
    for (v, q) in vertices.iter().enumerate() {
        write!(w, "{v},{:.17e},{:.17e}", q.x, q.y)?;
        for c in 0..comps {
            write!(w, ",{:.17e}", values[comps * v + c])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Dense local matrix of an element for the given operator, used by
/// sensitivity code that differentiates element matrices.
pub fn local_matrix(pts: &[Point], kind: LocalKind) -> Result<DMatrix<f64>> {
    Ok(match kind {
        LocalKind::Conductivity(g) => conduc_local(pts, g)?.k,
        LocalKind::Elasticity(l, m) => elas_local(pts, l, m)?.k,
        LocalKind::Mass => mass_local(&conduc_local(pts, 1.0)?),
    })
}

/// Which element operator to compute.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocalKind {
    Conductivity(f64),
    Elasticity(f64, f64),
    Mass,
}
