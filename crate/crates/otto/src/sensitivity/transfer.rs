//! Transfer of vertex gradients to the design variables through the
//! optimal transport constraint `F(s, ν, ψ) = 0`.

use crate::error::{OttoError, Result};
use crate::geometry::{Mode, Point};
use crate::linalg::{matvec, norm, DofMap};
use crate::sdot::KantorovichDerivatives;
use crate::vem::solve_refined;

use super::jacobians::VertexJacobians;

/// Gradients of the reduced functional with respect to seeds and measures.
#[derive(Debug, Clone)]
pub struct DesignGradient {
    pub seeds: Vec<Point>,
    pub measures: Vec<f64>,
    /// Adjoint vector `p`, solution of `[∇_ψ F]ᵀ p = −[∇_ψ Q]ᵀ ∇_q J`.
    pub adjoint: Vec<f64>,
    /// Relative residual of the adjoint system.
    pub adjoint_residual: f64,
}

/// Computes `∇_s J̃ = [∇_s Q]ᵀ g + [∇_s F]ᵀ p` and `∇_ν J̃ = p`. In
/// classical mode the Hessian has the constants in its kernel: the first
/// adjoint entry is pinned and `∇_ν J̃` is projected onto zero-sum
/// variations (measures keep the domain area).
pub fn transfer_to_design(
    grad_q: &[Point],
    jac: &VertexJacobians,
    kd: &KantorovichDerivatives,
    mode: Mode,
) -> Result<DesignGradient> {
    let (gs, gpsi) = jac.apply_transpose(grad_q);
    transfer_partials(&gs, &gpsi, kd, mode)
}

/// Transfer of a functional given by its partial derivatives `∂J/∂s`,
/// `∂J/∂ψ` at fixed weights.
pub fn transfer_partials(
    gs_direct: &[Point],
    gpsi: &[f64],
    kd: &KantorovichDerivatives,
    mode: Mode,
) -> Result<DesignGradient> {
    let n = gpsi.len();
    let h = &kd.hessian;
    for i in 0..n {
        let diag = h.get(i, i).copied().unwrap_or(0.0);
        if diag == 0.0 {
            return Err(OttoError::HessianUndefined(i));
        }
    }
    let rhs: Vec<f64> = gpsi.iter().map(|x| -x).collect();
    let p = match mode {
        Mode::Modified => solve_refined(h, &rhs)?,
        Mode::Classical => {
            let dofs = DofMap::with_fixed(n, &[(0, 0.0)]);
            let (hr, br) = dofs.reduce(h, &rhs);
            let x = solve_refined(&hr, &br)?;
            dofs.expand(&x)
        }
    };
    let hp = matvec(h, &p);
    let res: Vec<f64> = hp.iter().zip(&rhs).map(|(a, b)| a - b).collect();
    let adjoint_residual = norm(&res) / norm(&rhs).max(f64::MIN_POSITIVE);
    let ftp = {
        let jt = kd.seed_jacobian.transpose_view();
        matvec(&jt.to_csr(), &p)
    };
    let seeds = (0..n).map(|i| gs_direct[i] + Point::new(ftp[2 * i], ftp[2 * i + 1])).collect();
    let measures = match mode {
        Mode::Modified => p.clone(),
        Mode::Classical => {
            let mean = p.iter().sum::<f64>() / n as f64;
            p.iter().map(|x| x - mean).collect()
        }
    };
    Ok(DesignGradient { seeds, measures, adjoint: p, adjoint_residual })
}
