//! Laguerre diagrams of a convex domain: exact predicates, the dual regular
//! triangulation, cell clipping by half-planes and balls, vertex classes and
//! arc discretization.

pub mod diagram;
pub mod domain;
pub mod mesh;
pub mod moments;
pub mod predicates;
pub mod triangulation;

/// Points and vectors of the plane.
pub type Point = nalgebra::Vector2<f64>;

pub use diagram::{
    build_diagram, classify_vertices, vertex_residual, Cell, Constraint, DiagramVertex, Mode, Piece, PowerDiagram,
    SeedConfig, VertexClass,
};
pub use domain::{Domain, LABEL_FREE};
pub use mesh::{
    diagram_mesh, discretize_arcs, polygon_area, read_poly, write_poly, EdgeTag, MeshArc, PolyDump, PolyMesh,
};
pub use moments::Moments;
pub use predicates::{orient2d, power_conflict};
pub use triangulation::RegularTriangulation;

/// Per-cell areas of a diagram (exact curved cells, not their polygonal
/// discretization).
pub fn cell_measures(d: &PowerDiagram) -> Vec<f64> {
    d.cells.iter().map(|c| c.area()).collect()
}

/// 90 degree counterclockwise rotation.
pub fn perp(u: Point) -> Point {
    Point::new(-u.y, u.x)
}
