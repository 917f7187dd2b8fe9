//! Null-space step for equality constrained descent and the merit-based
//! step control.

use nalgebra::{DMatrix, DVector};

use crate::error::{OttoError, Result};
use crate::linalg::norm_inf;

/// Rates and length scale fixing the step weights:
/// `α_J = a_j·scale / |ξ_J|_∞`, `α_G = a_g·scale / |ξ_G|_∞`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRates {
    pub a_j: f64,
    pub a_g: f64,
    pub scale: f64,
}

/// Decomposition of a descent step into a part tangent to the constraints
/// and a part restoring them.
#[derive(Debug, Clone, PartialEq)]
pub struct NullSpaceStep {
    /// `ξ_J = θ_J + Σ λ_j θ_{G_j}`, `a`-orthogonal to every `θ_{G_j}`.
    pub xi_j: Vec<f64>,
    /// `ξ_G = Σ β_j θ_{G_j}`.
    pub xi_g: Vec<f64>,
    pub lambda: Vec<f64>,
    pub beta: Vec<f64>,
    /// Gram matrix `S_ij = a(θ_{G_i}, θ_{G_j})`.
    pub s: DMatrix<f64>,
    /// `b_i = −a(θ_J, θ_{G_i})`.
    pub b: Vec<f64>,
    /// Constraint values `c_i = G_i`.
    pub c: Vec<f64>,
    pub alpha_j: f64,
    pub alpha_g: f64,
}

/// Computes the null-space and range-space steps for the gradients `θ_J`,
/// `θ_{G_i}` (with respect to the inner product `a`) and constraint values
/// `g_values`.
pub fn nullspace_step(
    theta_j: &[f64],
    theta_g: &[Vec<f64>],
    g_values: &[f64],
    a: impl Fn(&[f64], &[f64]) -> f64,
    rates: StepRates,
) -> Result<NullSpaceStep> {
    let p = theta_g.len();
    if g_values.len() != p {
        return Err(OttoError::InvalidArgument(format!("{} constraint values for {p} gradients", g_values.len())));
    }
    if let Some(t) = theta_g.iter().find(|t| t.len() != theta_j.len()) {
        return Err(OttoError::InvalidArgument(format!(
            "constraint gradient of length {} for objective gradient of length {}",
            t.len(),
            theta_j.len()
        )));
    }
    let s = DMatrix::from_fn(p, p, |i, j| a(&theta_g[i], &theta_g[j]));
    let s = (&s + s.transpose()) * 0.5;
    let b: Vec<f64> = theta_g.iter().map(|t| -a(theta_j, t)).collect();
    let c = g_values.to_vec();
    let (lambda, beta) = if p == 0 {
        (Vec::new(), Vec::new())
    } else if p == 1 {
        let s00 = s[(0, 0)];
        if !(s00 > 0.0) {
            return Err(OttoError::DependentConstraints(format!("Gram matrix entry {s00:e}")));
        }
        (vec![b[0] / s00], vec![c[0] / s00])
    } else {
        let scale = s.diagonal().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let ev = s.clone().symmetric_eigen().eigenvalues;
        let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
        if !(scale > 0.0 && lo > 1e-12 * scale) {
            return Err(OttoError::DependentConstraints(format!(
                "Gram matrix eigenvalue {lo:e} against scale {scale:e}"
            )));
        }
        let chol = s
            .clone()
            .cholesky()
            .ok_or_else(|| OttoError::DependentConstraints("Gram matrix is not positive definite".into()))?;
        let lambda = chol.solve(&DVector::from_column_slice(&b));
        let beta = chol.solve(&DVector::from_column_slice(&c));
        (lambda.iter().copied().collect(), beta.iter().copied().collect())
    };
    let mut xi_j = theta_j.to_vec();
    let mut xi_g = vec![0.0; theta_j.len()];
    for k in 0..p {
        for (i, t) in theta_g[k].iter().enumerate() {
            xi_j[i] += lambda[k] * t;
            xi_g[i] += beta[k] * t;
        }
    }
    let weight = |rate: f64, v: &[f64]| {
        let m = norm_inf(v);
        if m > 0.0 {
            rate * rates.scale / m
        } else {
            0.0
        }
    };
    let alpha_j = weight(rates.a_j, &xi_j);
    let alpha_g = weight(rates.a_g, &xi_g);
    Ok(NullSpaceStep { xi_j, xi_g, lambda, beta, s, b, c, alpha_j, alpha_g })
}

impl NullSpaceStep {
    /// Descent direction `ξ = −(α_J ξ_J + α_G ξ_G)`.
    pub fn direction(&self) -> Vec<f64> {
        self.xi_j.iter().zip(&self.xi_g).map(|(j, g)| -(self.alpha_j * j + self.alpha_g * g)).collect()
    }

    /// Merit `M = α_J (J + λ·G) + (α_G / 2) Gᵀ S⁻¹ G`, whose gradient at the
    /// current point is `−ξ`.
    pub fn merit(&self, objective: f64, g_values: &[f64]) -> f64 {
        let lin: f64 = self.lambda.iter().zip(g_values).map(|(l, g)| l * g).sum();
        let quad = if self.lambda.is_empty() {
            0.0
        } else {
            let g = DVector::from_column_slice(g_values);
            match self.s.clone().cholesky() {
                Some(ch) => g.dot(&ch.solve(&g)),
                None => f64::INFINITY,
            }
        };
        self.alpha_j * (objective + lin) + 0.5 * self.alpha_g * quad
    }
}

/// Maximum number of step halvings before an iteration is rejected.
pub const MAX_HALVINGS: usize = 8;

/// Result of the merit line search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepOutcome {
    /// The merit decreased with step `dt` after `halvings` halvings.
    Accepted { dt: f64, merit: f64, halvings: usize },
    /// No trial step decreased the merit.
    Rejected { halvings: usize },
}

impl StepOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, StepOutcome::Accepted { .. })
    }
}

/// Tries the steps `Δt = 1, 1/2, …, 2^-max_halvings`. `trial(Δt)` returns the
/// merit of the updated point with any data worth keeping, or `None` when
/// the point cannot be evaluated. The first trial whose merit is below
/// `merit0` is accepted.
pub fn merit_accept<T>(
    merit0: f64,
    max_halvings: usize,
    mut trial: impl FnMut(f64) -> Option<(f64, T)>,
) -> (StepOutcome, Option<T>) {
    let mut dt = 1.0;
    for halvings in 0..=max_halvings {
        if let Some((m, data)) = trial(dt) {
            if m < merit0 {
                return (StepOutcome::Accepted { dt, merit: m, halvings }, Some(data));
            }
        }
        dt *= 0.5;
    }
    (StepOutcome::Rejected { halvings: max_halvings }, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use proptest::prelude::*;

    fn rates() -> StepRates {
        StepRates { a_j: 0.25, a_g: 0.25, scale: 0.01 }
    }

    #[test]
    fn single_volume_constraint_closed_forms() {
        let n = 7;
        let theta_j = vec![0.3, -1.0, 2.0, 0.5, 0.0, -0.25, 1.5];
        let ones = vec![1.0; n];
        let (vol, vt) = (0.61, 0.6);
        let st = nullspace_step(&theta_j, &[ones.clone()], &[vol - vt], dot, rates()).unwrap();
        assert_eq!(st.s[(0, 0)], n as f64);
        assert_eq!(st.beta[0], (vol - vt) / n as f64);
        let mean = theta_j.iter().sum::<f64>() / n as f64;
        assert!((st.lambda[0] + mean).abs() < 1e-15);
        assert!(dot(&st.xi_j, &ones).abs() < 1e-10);
        for x in &st.xi_g {
            assert_eq!(*x, (vol - vt) / n as f64);
        }
    }

    #[test]
    fn satisfied_constraint_gives_no_range_step() {
        let st = nullspace_step(&[1.0, 2.0, 3.0], &[vec![1.0; 3]], &[0.0], dot, rates()).unwrap();
        assert!(st.xi_g.iter().all(|&x| x == 0.0));
        assert_eq!(st.alpha_g, 0.0);
    }

    #[test]
    fn dependent_constraints_are_rejected() {
        let err =
            nullspace_step(&[1.0, 0.0], &[vec![1.0, 1.0], vec![2.0, 2.0]], &[0.0, 0.0], dot, rates()).unwrap_err();
        assert!(err.to_string().contains("dependent constraints"));
    }

    #[test]
    fn weights_bound_the_step() {
        let st = nullspace_step(&[4.0, -2.0, 1.0], &[vec![1.0, 1.0, 1.0]], &[0.3], dot, rates()).unwrap();
        let dir = st.direction();
        assert!(norm_inf(&dir) <= (0.25 + 0.25) * 0.01 * (1.0 + 1e-12));
        assert!((norm_inf(&st.xi_j) * st.alpha_j - 0.0025).abs() < 1e-15);
    }

    #[test]
    fn merit_gradient_is_minus_the_direction() {
        // Linear J and G: the merit is quadratic and its gradient is −ξ.
        let cj = [1.0, -2.0, 0.5];
        let cg = [[1.0, 1.0, 0.0], [0.0, 1.0, -1.0]];
        let x0 = [0.2, 0.1, -0.3];
        let j = |x: &[f64]| dot(&cj, x);
        let g = |x: &[f64]| vec![dot(&cg[0], x) - 0.1, dot(&cg[1], x) + 0.05];
        let st = nullspace_step(&cj, &[cg[0].to_vec(), cg[1].to_vec()], &g(&x0), dot, rates()).unwrap();
        let dir = st.direction();
        let h = 1e-6;
        for k in 0..3 {
            let mut xp = x0;
            xp[k] += h;
            let mut xm = x0;
            xm[k] -= h;
            let fd = (st.merit(j(&xp), &g(&xp)) - st.merit(j(&xm), &g(&xm))) / (2.0 * h);
            assert!((fd + dir[k]).abs() < 1e-8, "{fd} vs {}", -dir[k]);
        }
    }

    #[test]
    fn linear_constraint_decays_at_the_predicted_rate() {
        let cg = [0.5, 2.0, -1.0];
        let x0 = [0.3, 0.4, 0.2];
        let g = |x: &[f64]| dot(&cg, x) - 1.0;
        let st = nullspace_step(&[1.0, 0.0, 3.0], &[cg.to_vec()], &[g(&x0)], dot, rates()).unwrap();
        let dir = st.direction();
        for dt in [1.0, 0.5, 0.1] {
            let x: Vec<f64> = x0.iter().zip(&dir).map(|(a, b)| a + dt * b).collect();
            assert!((g(&x) - (1.0 - dt * st.alpha_g) * g(&x0)).abs() < 1e-14);
        }
    }

    #[test]
    fn feasible_descent_accepts_iff_objective_decreases() {
        let st = nullspace_step(&[1.0, -1.0], &[], &[], dot, rates()).unwrap();
        let m0 = st.merit(2.0, &[]);
        assert_eq!(m0, st.alpha_j * 2.0);
        let (out, data) = merit_accept(m0, MAX_HALVINGS, |dt| Some((st.merit(2.0 - dt, &[]), dt)));
        assert_eq!(out, StepOutcome::Accepted { dt: 1.0, merit: st.alpha_j, halvings: 0 });
        assert_eq!(data, Some(1.0));
        let (out, _) = merit_accept(m0, MAX_HALVINGS, |dt| Some((st.merit(2.0 + dt, &[]), ())));
        assert!(!out.is_accepted());
    }

    #[test]
    fn zero_step_is_rejected_after_all_halvings() {
        let mut calls = 0;
        let (out, data) = merit_accept::<()>(1.0, MAX_HALVINGS, |_| {
            calls += 1;
            Some((1.0, ()))
        });
        assert_eq!(out, StepOutcome::Rejected { halvings: 8 });
        assert!(data.is_none());
        assert_eq!(calls, 9);
    }

    #[test]
    fn halving_finds_a_decrease() {
        // Merit of a quadratic overshooting for large steps.
        let (out, _) = merit_accept(0.0, MAX_HALVINGS, |dt| Some(((dt - 0.1) * (dt - 0.1) - 0.01, ())));
        match out {
            StepOutcome::Accepted { dt, halvings, .. } => {
                assert_eq!(dt, 0.125);
                assert_eq!(halvings, 3);
            }
            _ => panic!("expected acceptance"),
        }
    }

    proptest! {
        #[test]
        fn xi_j_is_orthogonal_to_constraint_gradients(
            tj in proptest::collection::vec(-5.0f64..5.0, 6),
            g1 in proptest::collection::vec(-5.0f64..5.0, 6),
            g2 in proptest::collection::vec(-5.0f64..5.0, 6),
            w in proptest::collection::vec(0.5f64..3.0, 6),
        ) {
            let a = |x: &[f64], y: &[f64]| x.iter().zip(y).zip(&w).map(|((a, b), c)| a * b * c).sum::<f64>();
            if let Ok(st) = nullspace_step(&tj, &[g1.clone(), g2.clone()], &[0.1, -0.2], a, rates()) {
                let scale = a(&tj, &tj).sqrt() * (a(&g1, &g1).sqrt() + a(&g2, &g2).sqrt()) + 1.0;
                for g in [&g1, &g2] {
                    prop_assert!(a(&st.xi_j, g).abs() <= 1e-10 * scale);
                }
                // ξ_G restores the constraints at first order: a(ξ_G, θ_Gi) = G_i.
                prop_assert!((a(&st.xi_g, &g1) - 0.1).abs() <= 1e-8 * scale);
                prop_assert!((a(&st.xi_g, &g2) + 0.2).abs() <= 1e-8 * scale);
            }
        }
    }
}
