//! Vertex gradients of mesh functionals.

use crate::error::Result;
use crate::functionals::{
    element_fd_gradient, element_objective, gather, FunctionalKind, PdeProblem, PdeState, ShapeDerivativeFields,
};
use crate::geometry::{EdgeTag, Point, PolyMesh};
use crate::vem::ElementGeometry;

/// Vertices lying on an edge that is not shared by two elements.
pub fn boundary_vertices(mesh: &PolyMesh) -> Vec<bool> {
    let mut out = vec![false; mesh.num_vertices()];
    for (e, el) in mesh.elements.iter().enumerate() {
        let n = el.len();
        for (k, tag) in mesh.edge_tags[e].iter().enumerate() {
            if !matches!(tag, EdgeTag::Shared(_)) {
                out[el[k]] = true;
                out[el[(k + 1) % n]] = true;
            }
        }
    }
    out
}

/// Vertex gradient of the volume form `Σ_E ∫_E t_E·θ + S_E:∇θ` on the
/// vertex basis deformations: `Σ_{E∋i} t_E |E|/n_E + ½ S_E (|ê_i| n_{ê_i})`.
/// Entries of vertices with `select[i] == false` are left at zero.
pub fn discrete_shape_gradient(mesh: &PolyMesh, fields: &ShapeDerivativeFields, select: &[bool]) -> Result<Vec<Point>> {
    let mut grad = vec![Point::zeros(); mesh.num_vertices()];
    for (e, el) in mesh.elements.iter().enumerate() {
        if !el.iter().any(|&v| select[v]) {
            continue;
        }
        let geo = ElementGeometry::new(&mesh.element_points(e))?;
        let tshare = fields.t[e] * (geo.area / el.len() as f64);
        for (k, &v) in el.iter().enumerate() {
            if select[v] {
                grad[v] += tshare + fields.s[e] * geo.hat_normals[k] * 0.5;
            }
        }
    }
    Ok(grad)
}

/// Exact vertex gradient of the discrete PDE functional `J(q, u(q))` with
/// `K(q) u = F(q)`. With the adjoint `p` (`K p = −∂J/∂u`), the total
/// derivative is the sum over elements of the partial vertex derivatives of
/// `Φ_E(q_E) = J_E(q_E, u_E) − p_Eᵀ(F_E(q_E) − K_E(q_E) u_E)` at fixed
/// `u`, `p`, taken by central differences of the element operators.
pub fn exact_vertex_gradient(
    mesh: &PolyMesh,
    problem: &PdeProblem,
    kind: FunctionalKind,
    state: &PdeState,
    adjoint: &[f64],
) -> Result<Vec<Point>> {
    let mut grad = vec![Point::zeros(); mesh.num_vertices()];
    for (e, el) in mesh.elements.iter().enumerate() {
        let dofs = problem.element_dofs(el);
        let ue = gather(&state.u, &dofs);
        let pe = gather(adjoint, &dofs);
        let phi = |pts: &[Point]| -> Result<f64> {
            let j = element_objective(problem, kind, mesh, e, pts, &ue)?;
            let f = problem.local_load(mesh, e, pts)?;
            let k = problem.local_stiffness(e, pts)?;
            Ok(j - pe.dot(&(f - k * &ue)))
        };
        let g = element_fd_gradient(&mesh.element_points(e), phi)?;
        for (k, &v) in el.iter().enumerate() {
            grad[v] += g[k];
        }
    }
    Ok(grad)
}
