//! Derivative chain from mesh functionals to the design variables: vertex
//! Jacobians of the diagram, vertex gradients of the discretized
//! functionals, and the adjoint transfer to seeds and measures.

pub mod gradient;
pub mod jacobians;
pub mod transfer;

pub use gradient::{boundary_vertices, discrete_shape_gradient, exact_vertex_gradient};
pub use jacobians::{vertex_jacobians, vertex_key, vertex_key_map, VertexJacobians};
pub use transfer::{transfer_partials, transfer_to_design, DesignGradient};

use crate::error::Result;
use crate::functionals::{adjoint_state, shape_derivative_fields, FunctionalKind, PdeProblem, PdeState};
use crate::geometry::{Point, PolyMesh};

/// How vertex gradients of PDE functionals are obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientMethod {
    /// Exact derivative of the discrete functional (element Lagrangian).
    Exact,
    /// Volume-form shape derivative with piecewise-constant fields.
    VolumeForm,
}

/// Options of [`pde_vertex_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradientOptions {
    pub method: GradientMethod,
    /// Zero the entries of vertices that are not on the mesh boundary.
    pub zero_interior: bool,
}

impl Default for GradientOptions {
    fn default() -> Self {
        GradientOptions { method: GradientMethod::Exact, zero_interior: false }
    }
}

/// Vertex gradient of a PDE functional (eigenvalues excluded) at a solved state.
pub fn pde_vertex_gradient(
    mesh: &PolyMesh,
    problem: &PdeProblem,
    kind: FunctionalKind,
    state: &PdeState,
    opts: GradientOptions,
) -> Result<Vec<Point>> {
    let p = adjoint_state(mesh, problem, kind, state)?;
    let boundary = boundary_vertices(mesh);
    let mut grad = match opts.method {
        GradientMethod::Exact => exact_vertex_gradient(mesh, problem, kind, state, &p)?,
        GradientMethod::VolumeForm => {
            let fields = shape_derivative_fields(mesh, problem, kind, state, Some(&p))?;
            let all = vec![true; mesh.num_vertices()];
            discrete_shape_gradient(mesh, &fields, &all)?
        }
    };
    if opts.zero_interior {
        for (g, &b) in grad.iter_mut().zip(&boundary) {
            if !b {
                *g = Point::zeros();
            }
        }
    }
    Ok(grad)
}
