//! Objective and constraint functionals: values, vertex gradients of the
//! geometric functionals, adjoint data and volume-form shape derivative
//! fields of the PDE functionals, and the compliance topological derivative.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};

use crate::error::{OttoError, Result};
use crate::geometry::{Point, PolyMesh};
use crate::linalg::{matvec, DofMap};
use crate::vem::{
    assemble_mass, assemble_stiffness_elastic, assemble_stiffness_scalar, conduc_local, edge_label, elas_local,
    elastic_dofs, homogeneous_dofs, mass_local, solve, solve_eigs, ElasticLocal, LinearSystem,
};

/// Functionals known to the optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalKind {
    /// Area of the shape.
    Volume,
    /// Length of the shape boundary.
    Perimeter,
    /// Mean value of the temperature over the mesh, divided by the reference area.
    MeanTemperature,
    /// `∫ f u + ∫ g u` for the conductivity equation.
    ConducCompliance,
    /// `∫ f·u + ∫ g·u` for linear elasticity.
    ElasticCompliance,
    /// The `k`-th (1-based) Dirichlet eigenvalue of the Laplacian.
    DirichletEigenvalue(usize),
    /// `∫ ‖A e(u)‖²`.
    StressIntegral,
}

impl FunctionalKind {
    /// Whether the adjoint state is a multiple of the state for `problem`.
    pub fn is_self_adjoint(&self, problem: &PdeProblem) -> bool {
        matches!(self.adjoint_factor(problem), Some(_))
    }

    /// Factor `c` with `p = c u` when the functional is self-adjoint.
    pub fn adjoint_factor(&self, problem: &PdeProblem) -> Option<f64> {
        match self {
            FunctionalKind::ConducCompliance | FunctionalKind::ElasticCompliance => Some(-1.0),
            FunctionalKind::MeanTemperature => {
                let unit_source = problem.source.x == 1.0 && problem.neumann.is_empty();
                unit_source.then(|| -1.0 / problem.reference_area)
            }
            _ => None,
        }
    }

    /// Whether the functional needs a state solve.
    pub fn is_pde(&self) -> bool {
        !matches!(self, FunctionalKind::Volume | FunctionalKind::Perimeter)
    }
}

/// Equality constraint `value(functional) = target`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constraint {
    pub kind: FunctionalKind,
    pub target: f64,
}

/// Material data of a state problem, one entry per mesh element.
#[derive(Debug, Clone, PartialEq)]
pub enum Material {
    /// Conductivities.
    Conduction(Vec<f64>),
    /// Lamé pairs `(λ, μ)`.
    Elasticity(Vec<(f64, f64)>),
}

/// Linear state problem with homogeneous Dirichlet conditions, a constant
/// source and constant Neumann loads. Scalar problems use the `x` component
/// of `source` and of the loads.
#[derive(Debug, Clone, PartialEq)]
pub struct PdeProblem {
    pub material: Material,
    pub source: Point,
    /// Labels of the clamped boundary parts. `LABEL_FREE` designates the
    /// free boundary together with unlabelled domain edges.
    pub dirichlet: Vec<i32>,
    pub neumann: Vec<(i32, Point)>,
    /// Normalization area of the mean temperature (the area of the domain).
    pub reference_area: f64,
}

/// Solved state.
#[derive(Debug, Clone)]
pub struct PdeState {
    pub u: Vec<f64>,
    pub load: Vec<f64>,
    pub dofs: DofMap,
}

/// Piecewise-constant fields `t_E`, `S_E` of the volume form
/// `J'(θ) = Σ_E ∫_E t_E·θ + S_E:∇θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeDerivativeFields {
    pub t: Vec<Point>,
    pub s: Vec<Matrix2<f64>>,
}

/// Adjoint data: either `p = factor · u`, or a load to solve for.
#[derive(Debug, Clone, PartialEq)]
pub enum AdjointRhs {
    SelfAdjoint(f64),
    Load(Vec<f64>),
}

impl PdeProblem {
    /// Dofs per vertex.
    pub fn components(&self) -> usize {
        match self.material {
            Material::Conduction(_) => 1,
            Material::Elasticity(_) => 2,
        }
    }

    /// Global dof indices of an element.
    pub fn element_dofs(&self, el: &[usize]) -> Vec<usize> {
        match self.material {
            Material::Conduction(_) => el.to_vec(),
            Material::Elasticity(_) => elastic_dofs(el),
        }
    }

    fn check(&self, mesh: &PolyMesh) -> Result<()> {
        let n = match &self.material {
            Material::Conduction(g) => g.len(),
            Material::Elasticity(l) => l.len(),
        };
        if n != mesh.num_elements() {
            return Err(OttoError::InvalidArgument(format!(
                "{n} material values for {} elements",
                mesh.num_elements()
            )));
        }
        Ok(())
    }

    /// Stiffness of element `e` with vertex coordinates `pts`.
    pub fn local_stiffness(&self, e: usize, pts: &[Point]) -> Result<DMatrix<f64>> {
        Ok(match &self.material {
            Material::Conduction(g) => conduc_local(pts, g[e])?.k,
            Material::Elasticity(l) => elas_local(pts, l[e].0, l[e].1)?.k,
        })
    }

    /// Load of element `e` with vertex coordinates `pts`: the source split
    /// equally among the vertices plus trapezoidal Neumann loads on the
    /// element's labelled boundary edges.
    pub fn local_load(&self, mesh: &PolyMesh, e: usize, pts: &[Point]) -> Result<DVector<f64>> {
        let n = pts.len();
        let c = self.components();
        let area = crate::geometry::polygon_area(pts);
        let mut f = DVector::zeros(c * n);
        for k in 0..n {
            for a in 0..c {
                f[c * k + a] = self.source[a] * area / n as f64;
            }
        }
        for (k, tag) in mesh.edge_tags[e].iter().enumerate() {
            let Some(label) = edge_label(tag) else { continue };
            for (l, g) in &self.neumann {
                if *l != label {
                    continue;
                }
                let k1 = (k + 1) % n;
                let half = 0.5 * (pts[k1] - pts[k]).norm();
                for a in 0..c {
                    f[c * k + a] += half * g[a];
                    f[c * k1 + a] += half * g[a];
                }
            }
        }
        Ok(f)
    }

    /// Assembled system with homogeneous Dirichlet conditions.
    pub fn system(&self, mesh: &PolyMesh) -> Result<LinearSystem> {
        self.check(mesh)?;
        let matrix = match &self.material {
            Material::Conduction(g) => assemble_stiffness_scalar(mesh, g)?,
            Material::Elasticity(l) => assemble_stiffness_elastic(mesh, l)?,
        };
        let mut rhs = vec![0.0; self.components() * mesh.num_vertices()];
        for l in &self.neumann {
            if !mesh.edge_tags.iter().flatten().any(|t| edge_label(t) == Some(l.0)) {
                return Err(OttoError::UnlabeledBoundary(format!("no mesh edge carries load label {}", l.0)));
            }
        }
        for (e, el) in mesh.elements.iter().enumerate() {
            let f = self.local_load(mesh, e, &mesh.element_points(e))?;
            for (k, d) in self.element_dofs(el).into_iter().enumerate() {
                rhs[d] += f[k];
            }
        }
        let dofs = homogeneous_dofs(mesh, &self.dirichlet, self.components())?;
        Ok(LinearSystem { matrix, rhs, dofs })
    }

    /// Solves the state problem.
    pub fn solve(&self, mesh: &PolyMesh) -> Result<PdeState> {
        let sys = self.system(mesh)?;
        let u = solve(&sys)?;
        Ok(PdeState { u, load: sys.rhs, dofs: sys.dofs })
    }

    /// Smallest `count` Dirichlet eigenpairs (conduction only).
    pub fn eigenpairs(&self, mesh: &PolyMesh, count: usize) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        self.check(mesh)?;
        let Material::Conduction(g) = &self.material else {
            return Err(OttoError::InvalidArgument("eigenvalues are computed for the scalar problem".into()));
        };
        let k = assemble_stiffness_scalar(mesh, g)?;
        let m = assemble_mass(mesh)?;
        let dofs = homogeneous_dofs(mesh, &self.dirichlet, 1)?;
        solve_eigs(&k, &m, &dofs, count)
    }
}

/// Value and vertex gradient of the volume or the perimeter of the region
/// covered by the mesh, computed from its boundary edges. Interior vertices
/// get an exactly zero gradient.
pub fn geometric_value_and_grad(mesh: &PolyMesh, kind: FunctionalKind) -> Result<(f64, Vec<Point>)> {
    let edges = mesh.boundary_edges();
    let mut balance = vec![0i64; mesh.num_vertices()];
    for &(a, b, _, _) in &edges {
        balance[a] += 1;
        balance[b] -= 1;
    }
    if let Some(v) = balance.iter().position(|&x| x != 0) {
        return Err(OttoError::InvalidArgument(format!("boundary loop is open at vertex {v}")));
    }
    let mut grad = vec![Point::zeros(); mesh.num_vertices()];
    let mut value = 0.0;
    match kind {
        FunctionalKind::Volume => {
            for &(a, b, _, _) in &edges {
                let (qa, qb) = (mesh.vertices[a], mesh.vertices[b]);
                value += 0.5 * (qa.x * qb.y - qa.y * qb.x);
                grad[a] += 0.5 * Point::new(qb.y, -qb.x);
                grad[b] += 0.5 * Point::new(-qa.y, qa.x);
            }
        }
        FunctionalKind::Perimeter => {
            for &(a, b, _, _) in &edges {
                let d = mesh.vertices[b] - mesh.vertices[a];
                let len = d.norm();
                value += len;
                grad[a] -= d / len;
                grad[b] += d / len;
            }
        }
        other => {
            return Err(OttoError::InvalidArgument(format!("{other:?} is not a geometric functional")));
        }
    }
    Ok((value, grad))
}

/// Stress weighting `Q = Pᵀ diag(1, 1, 2) P` with `P` mapping the strain
/// coordinates `(e11, e22, e12)` to `(σ11, σ22, σ12)`.
fn stress_weight(lambda: f64, mu: f64) -> Matrix3<f64> {
    let p = Matrix3::new(2.0 * mu + lambda, lambda, 0.0, lambda, 2.0 * mu + lambda, 0.0, 0.0, 0.0, 2.0 * mu);
    p.transpose() * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 2.0)) * p
}

/// Contribution of element `e` (vertex coordinates `pts`, local state `ue`)
/// to a PDE functional.
pub fn element_objective(
    problem: &PdeProblem,
    kind: FunctionalKind,
    mesh: &PolyMesh,
    e: usize,
    pts: &[Point],
    ue: &DVector<f64>,
) -> Result<f64> {
    Ok(match kind {
        FunctionalKind::ConducCompliance | FunctionalKind::ElasticCompliance => {
            problem.local_load(mesh, e, pts)?.dot(ue)
        }
        FunctionalKind::MeanTemperature => {
            let area = crate::geometry::polygon_area(pts);
            area * ue.mean() / problem.reference_area
        }
        FunctionalKind::StressIntegral => {
            let Material::Elasticity(l) = &problem.material else {
                return Err(OttoError::InvalidArgument("stress integral needs an elastic problem".into()));
            };
            let op = elas_local(pts, l[e].0, l[e].1)?;
            let eps = op.w_c.transpose() * ue;
            let q = stress_weight(l[e].0, l[e].1);
            let eps3 = Vector3::new(eps[0], eps[1], eps[2]);
            op.geometry.area * eps3.dot(&(q * eps3))
        }
        other => return Err(OttoError::InvalidArgument(format!("{other:?} has no element contribution"))),
    })
}

fn check_physics(problem: &PdeProblem, kind: FunctionalKind, state: &PdeState, mesh: &PolyMesh) -> Result<()> {
    let ok = match kind {
        FunctionalKind::MeanTemperature | FunctionalKind::ConducCompliance => {
            matches!(problem.material, Material::Conduction(_))
        }
        FunctionalKind::ElasticCompliance | FunctionalKind::StressIntegral => {
            matches!(problem.material, Material::Elasticity(_))
        }
        _ => false,
    };
    if !ok {
        return Err(OttoError::InvalidArgument(format!("{kind:?} does not apply to this state problem")));
    }
    if state.u.len() != problem.components() * mesh.num_vertices() {
        return Err(OttoError::InvalidArgument("state field does not match the mesh".into()));
    }
    Ok(())
}

/// Local restriction of a nodal field.
pub fn gather(values: &[f64], dofs: &[usize]) -> DVector<f64> {
    DVector::from_iterator(dofs.len(), dofs.iter().map(|&d| values[d]))
}

/// Value of a PDE functional (eigenvalues excluded) for a solved state.
pub fn pde_value(mesh: &PolyMesh, problem: &PdeProblem, kind: FunctionalKind, state: &PdeState) -> Result<f64> {
    check_physics(problem, kind, state, mesh)?;
    let mut total = 0.0;
    for (e, el) in mesh.elements.iter().enumerate() {
        let ue = gather(&state.u, &problem.element_dofs(el));
        total += element_objective(problem, kind, mesh, e, &mesh.element_points(e), &ue)?;
    }
    Ok(total)
}

/// Adjoint data with the sign convention `K p = −∂J/∂u`.
pub fn adjoint_rhs(
    mesh: &PolyMesh,
    problem: &PdeProblem,
    kind: FunctionalKind,
    state: &PdeState,
) -> Result<AdjointRhs> {
    check_physics(problem, kind, state, mesh)?;
    if let Some(c) = kind.adjoint_factor(problem) {
        return Ok(AdjointRhs::SelfAdjoint(c));
    }
    let mut rhs = vec![0.0; state.u.len()];
    for (e, el) in mesh.elements.iter().enumerate() {
        let pts = mesh.element_points(e);
        let dofs = problem.element_dofs(el);
        let local: DVector<f64> = match kind {
            FunctionalKind::MeanTemperature => {
                let area = crate::geometry::polygon_area(&pts);
                DVector::from_element(dofs.len(), area / (el.len() as f64 * problem.reference_area))
            }
            FunctionalKind::StressIntegral => {
                let Material::Elasticity(l) = &problem.material else { unreachable!() };
                let op = elas_local(&pts, l[e].0, l[e].1)?;
                let q = DMatrix::from_fn(3, 3, |r, c| stress_weight(l[e].0, l[e].1)[(r, c)]);
                let ue = gather(&state.u, &dofs);
                (&op.w_c * q * op.w_c.transpose() * ue) * (2.0 * op.geometry.area)
            }
            _ => unreachable!(),
        };
        for (k, d) in dofs.into_iter().enumerate() {
            rhs[d] -= local[k];
        }
    }
    Ok(AdjointRhs::Load(rhs))
}

/// Adjoint state `p` of a PDE functional, solving `K p = −∂J/∂u` with the
/// homogeneous Dirichlet conditions of the state when needed.
pub fn adjoint_state(
    mesh: &PolyMesh,
    problem: &PdeProblem,
    kind: FunctionalKind,
    state: &PdeState,
) -> Result<Vec<f64>> {
    match adjoint_rhs(mesh, problem, kind, state)? {
        AdjointRhs::SelfAdjoint(c) => Ok(state.u.iter().map(|x| c * x).collect()),
        AdjointRhs::Load(rhs) => {
            let sys = problem.system(mesh)?;
            solve(&LinearSystem { matrix: sys.matrix, rhs, dofs: sys.dofs })
        }
    }
}

/// Projected gradient `∇(π u)` of a scalar field on an element.
fn scalar_gradient(pts: &[Point], ue: &DVector<f64>) -> Result<Point> {
    let op = conduc_local(pts, 1.0)?;
    let c = &op.pi * ue;
    Ok(Point::new(c[1], c[2]))
}

/// Projected displacement gradient `(∂u_a/∂x_b)` of an elastic field.
fn elastic_gradient(op: &ElasticLocal, ue: &DVector<f64>) -> Matrix2<f64> {
    let e = op.w_c.transpose() * ue;
    let r = op.w_r.transpose() * ue;
    Matrix2::new(e[0], e[2] - r[2], e[2] + r[2], e[1])
}

fn stress_of(grad: &Matrix2<f64>, lambda: f64, mu: f64) -> Matrix2<f64> {
    let e = (grad + grad.transpose()) * 0.5;
    Matrix2::identity() * (lambda * e.trace()) + e * (2.0 * mu)
}

/// Volume-form shape derivative fields of a PDE functional, with projected
/// gradients and vertex-averaged values on every element. `adjoint` is the
/// adjoint state in the convention of [`adjoint_state`]; it is required
/// unless the functional is self-adjoint.
pub fn shape_derivative_fields(
    mesh: &PolyMesh,
    problem: &PdeProblem,
    kind: FunctionalKind,
    state: &PdeState,
    adjoint: Option<&[f64]>,
) -> Result<ShapeDerivativeFields> {
    check_physics(problem, kind, state, mesh)?;
    let p_owned;
    let p: &[f64] = match (adjoint, kind.adjoint_factor(problem)) {
        (Some(p), _) => p,
        (None, Some(c)) => {
            p_owned = state.u.iter().map(|x| c * x).collect::<Vec<_>>();
            &p_owned
        }
        (None, None) => {
            return Err(OttoError::InvalidArgument(format!("{kind:?} needs an adjoint state")));
        }
    };
    let ne = mesh.num_elements();
    let mut t = vec![Point::zeros(); ne];
    let mut s = vec![Matrix2::zeros(); ne];
    let f = problem.source;
    for (e, el) in mesh.elements.iter().enumerate() {
        let pts = mesh.element_points(e);
        let dofs = problem.element_dofs(el);
        let ue = gather(&state.u, &dofs);
        let pe = gather(p, &dofs);
        let id = Matrix2::identity();
        s[e] = match &problem.material {
            Material::Conduction(g) => {
                let (gu, gp) = (scalar_gradient(&pts, &ue)?, scalar_gradient(&pts, &pe)?);
                let (um, pm) = (ue.mean(), pe.mean());
                let explicit = match kind {
                    FunctionalKind::MeanTemperature => um / problem.reference_area,
                    _ => f.x * um,
                };
                (id * gu.dot(&gp) - gu * gp.transpose() - gp * gu.transpose()) * g[e] + id * (explicit - f.x * pm)
            }
            Material::Elasticity(l) => {
                let (lambda, mu) = l[e];
                let op = elas_local(&pts, lambda, mu)?;
                let (gu, gp) = (elastic_gradient(&op, &ue), elastic_gradient(&op, &pe));
                let (su, sp) = (stress_of(&gu, lambda, mu), stress_of(&gp, lambda, mu));
                let mean = |v: &DVector<f64>| {
                    let n = el.len() as f64;
                    Point::new(v.iter().step_by(2).sum::<f64>() / n, v.iter().skip(1).step_by(2).sum::<f64>() / n)
                };
                let (umean, pmean) = (mean(&ue), mean(&pe));
                let base = id * su.component_mul(&((gp + gp.transpose()) * 0.5)).sum()
                    - gu.transpose() * sp
                    - gp.transpose() * su
                    - id * f.dot(&pmean);
                match kind {
                    FunctionalKind::StressIntegral => {
                        let asu = stress_of(&su, lambda, mu);
                        base + id * su.component_mul(&su).sum() - gu.transpose() * asu * 2.0
                    }
                    _ => base + id * f.dot(&umean),
                }
            }
        };
        t[e] = Point::zeros();
    }
    Ok(ShapeDerivativeFields { t, s })
}

/// Topological derivative of the elastic compliance on every element,
/// evaluated with the projected constant strain:
/// `π(λ+2μ)/(2μ(λ+μ)) (4μ σ:e + (λ−μ) tr σ tr e)`.
pub fn topological_derivative_field(mesh: &PolyMesh, problem: &PdeProblem, state: &PdeState) -> Result<Vec<f64>> {
    let Material::Elasticity(l) = &problem.material else {
        return Err(OttoError::InvalidArgument("topological derivative needs an elastic problem".into()));
    };
    let mut out = Vec::with_capacity(mesh.num_elements());
    for (e, el) in mesh.elements.iter().enumerate() {
        let (lambda, mu) = l[e];
        let op = elas_local(&mesh.element_points(e), lambda, mu)?;
        let ue = gather(&state.u, &elastic_dofs(el));
        let eps = op.w_c.transpose() * ue;
        let strain = Matrix2::new(eps[0], eps[2], eps[2], eps[1]);
        out.push(topological_derivative(&strain, lambda, mu));
    }
    Ok(out)
}

/// Compliance topological derivative for a given symmetric strain.
pub fn topological_derivative(strain: &Matrix2<f64>, lambda: f64, mu: f64) -> f64 {
    let sigma = stress_of(strain, lambda, mu);
    let c = std::f64::consts::PI * (lambda + 2.0 * mu) / (2.0 * mu * (lambda + mu));
    c * (4.0 * mu * sigma.component_mul(strain).sum() + (lambda - mu) * sigma.trace() * strain.trace())
}

/// Result of the eigenvalue sensitivity.
#[derive(Debug, Clone)]
pub struct EigenGradient {
    pub grad: Vec<Point>,
    /// Set when the eigenvalue is nearly multiple and thus not differentiable.
    pub near_multiple: bool,
}

/// Vertex gradient of a simple eigenvalue with `M`-normalized eigenvector
/// `u`: `∂λ/∂q = uᵀ(∂K/∂q − λ ∂M/∂q)u`, the element matrix derivatives being
/// central differences of the local operators with step `1e-6·h_E`.
/// `neighbors` are the adjacent eigenvalues used to flag a small spectral gap.
pub fn eigenvalue_vertex_gradient(mesh: &PolyMesh, lambda: f64, u: &[f64], neighbors: &[f64]) -> Result<EigenGradient> {
    let mut grad = vec![Point::zeros(); mesh.num_vertices()];
    for (e, el) in mesh.elements.iter().enumerate() {
        let pts = mesh.element_points(e);
        let ue = gather(u, el);
        let phi = |p: &[Point]| -> Result<f64> {
            let op = conduc_local(p, 1.0)?;
            let m = mass_local(&op);
            Ok(ue.dot(&((&op.k - m * lambda) * &ue)))
        };
        let g = element_fd_gradient(&pts, phi)?;
        for (k, &v) in el.iter().enumerate() {
            grad[v] += g[k];
        }
    }
    let near_multiple = neighbors.iter().any(|&mu| (mu - lambda).abs() < 1e-6 * lambda.abs());
    Ok(EigenGradient { grad, near_multiple })
}

/// Central-difference gradient of an element function with respect to its
/// vertex coordinates, with step `1e-6` times the element diameter.
pub fn element_fd_gradient(pts: &[Point], f: impl Fn(&[Point]) -> Result<f64>) -> Result<Vec<Point>> {
    let mut diam: f64 = 0.0;
    for a in pts {
        for b in pts {
            diam = diam.max((a - b).norm());
        }
    }
    let h = 1e-6 * diam;
    let mut work = pts.to_vec();
    let mut out = vec![Point::zeros(); pts.len()];
    for k in 0..pts.len() {
        for c in 0..2 {
            work[k][c] = pts[k][c] + h;
            let fp = f(&work)?;
            work[k][c] = pts[k][c] - h;
            let fm = f(&work)?;
            work[k][c] = pts[k][c];
            out[k][c] = (fp - fm) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Load vector action `K u` (used to check the compliance duality).
pub fn stiffness_action(mesh: &PolyMesh, problem: &PdeProblem, u: &[f64]) -> Result<Vec<f64>> {
    let sys = problem.system(mesh)?;
    Ok(matvec(&sys.matrix, u))
}
