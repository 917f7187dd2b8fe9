//! Shape and topology optimization with (modified) Laguerre diagrams.
//!
//! Shapes are unions of cells of a Laguerre diagram whose seeds and cell
//! measures are the design variables. The crate provides the diagram
//! machinery, a semi-discrete optimal transport Newton solver mapping measures
//! to weights, a lowest-order virtual element solver on the resulting
//! polygonal meshes, sensitivity transfer from mesh vertices to design
//! variables, and a constrained gradient-flow optimizer.

pub mod diagram_ops;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod linalg;
pub mod optimize;
pub mod sdot;
pub mod sensitivity;
pub mod vem;

pub use error::{OttoError, Result};
