//! Element-level operators of the lowest-order virtual element method.
//!
//! Every element is a convex polygon with counterclockwise vertices
//! `q_1, ..., q_n`. The affine monomials are `m_1 = 1`, `m_2 = x - x̄`,
//! `m_3 = y - ȳ` where `(x̄, ȳ)` is the vertex average. Elastic degrees of
//! freedom are interleaved: local dof `2i` is the x component at vertex `i`
//! and `2i + 1` the y component.

use nalgebra::{DMatrix, Matrix3};

use crate::error::{OttoError, Result};
use crate::geometry::Point;

/// Geometric data shared by all local operators of one element.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    /// Vertex average.
    pub center: Point,
    pub area: f64,
    /// `|ê_i| n_{ê_i}`: sum of the length-weighted outward normals of the two
    /// edges meeting at vertex `i`.
    pub hat_normals: Vec<Point>,
    /// Vertex coordinates relative to `center`.
    pub local: Vec<Point>,
}

impl ElementGeometry {
    /// Checks that the polygon has at least three vertices and a positive
    /// area relative to its size.
    pub fn new(pts: &[Point]) -> Result<Self> {
        let n = pts.len();
        if n < 3 {
            return Err(OttoError::DegenerateElement(format!("{n} vertices")));
        }
        let center = pts.iter().fold(Point::zeros(), |a, p| a + p) / n as f64;
        let local: Vec<Point> = pts.iter().map(|p| p - center).collect();
        let mut area = 0.0;
        let mut diam2: f64 = 0.0;
        for k in 0..n {
            let a = local[k];
            let b = local[(k + 1) % n];
            area += 0.5 * (a.x * b.y - a.y * b.x);
            diam2 = diam2.max(a.norm_squared());
        }
        if !(area > 1e-13 * diam2) {
            return Err(OttoError::DegenerateElement(format!("area {area:e} for squared size {diam2:e}")));
        }
        let hat_normals = (0..n)
            .map(|i| {
                let next = local[(i + 1) % n];
                let prev = local[(i + n - 1) % n];
                Point::new(next.y - prev.y, prev.x - next.x)
            })
            .collect();
        Ok(ElementGeometry { center, area, hat_normals, local })
    }

    pub fn len(&self) -> usize {
        self.local.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty()
    }

    /// Integrals of `1, x, y, x², xy, y²` over the element, in coordinates
    /// relative to the vertex average.
    pub fn monomial_moments(&self) -> [f64; 6] {
        let n = self.len();
        let mut m = [0.0; 6];
        for k in 0..n {
            let a = self.local[k];
            let b = self.local[(k + 1) % n];
            let c = a.x * b.y - b.x * a.y;
            m[0] += c / 2.0;
            m[1] += c * (a.x + b.x) / 6.0;
            m[2] += c * (a.y + b.y) / 6.0;
            m[3] += c * (a.x * a.x + a.x * b.x + b.x * b.x) / 12.0;
            m[4] += c * (a.x * b.y + 2.0 * a.x * a.y + 2.0 * b.x * b.y + b.x * a.y) / 24.0;
            m[5] += c * (a.y * a.y + a.y * b.y + b.y * b.y) / 12.0;
        }
        m
    }
}

/// Local operators of the conductivity problem.
#[derive(Debug, Clone)]
pub struct ScalarLocal {
    pub geometry: ElementGeometry,
    /// `D_{iα} = m_α(q_i)`, size `n × 3`.
    pub d: DMatrix<f64>,
    /// Right-hand side of the projection system, size `3 × n`.
    pub b: DMatrix<f64>,
    /// `G̃ = B D`.
    pub g_tilde: DMatrix<f64>,
    /// Coefficients of the projections `π_P ζ_i` in the monomial basis, size `3 × n`.
    pub pi: DMatrix<f64>,
    /// Consistency part `γ Πᵀ G Π`.
    pub p: DMatrix<f64>,
    /// Stabilization `(I - DΠ)ᵀ(I - DΠ)`.
    pub s: DMatrix<f64>,
    /// Stiffness `P + S`.
    pub k: DMatrix<f64>,
}

/// Conductivity stiffness of one element with conductivity `gamma`.
pub fn conduc_local(pts: &[Point], gamma: f64) -> Result<ScalarLocal> {
    let geometry = ElementGeometry::new(pts)?;
    let n = geometry.len();
    let d = DMatrix::from_fn(n, 3, |i, a| match a {
        0 => 1.0,
        1 => geometry.local[i].x,
        _ => geometry.local[i].y,
    });
    let b = DMatrix::from_fn(3, n, |a, i| match a {
        0 => 1.0 / n as f64,
        1 => 0.5 * geometry.hat_normals[i].x,
        _ => 0.5 * geometry.hat_normals[i].y,
    });
    let g_tilde = &b * &d;
    let pi = g_tilde
        .clone()
        .lu()
        .solve(&b)
        .ok_or_else(|| OttoError::DegenerateElement("singular projection matrix".into()))?;
    let mut g = DMatrix::zeros(3, 3);
    g[(1, 1)] = geometry.area;
    g[(2, 2)] = geometry.area;
    let p = pi.transpose() * g * &pi * gamma;
    let r = DMatrix::identity(n, n) - &d * &pi;
    let s = r.transpose() * &r;
    let k = &p + &s;
    Ok(ScalarLocal { geometry, d, b, g_tilde, pi, p, s, k })
}

/// Local mass matrix: exact consistency block on the affine projections plus
/// a stabilization scaled by the element area.
pub fn mass_local(op: &ScalarLocal) -> DMatrix<f64> {
    let m = op.geometry.monomial_moments();
    let h = DMatrix::from_row_slice(3, 3, &[m[0], m[1], m[2], m[1], m[3], m[4], m[2], m[4], m[5]]);
    let n = op.geometry.len();
    let r = DMatrix::identity(n, n) - &op.d * &op.pi;
    let m = op.pi.transpose() * h * &op.pi + r.transpose() * r * op.geometry.area;
    (&m + m.transpose()) * 0.5
}

/// Local operators of plane linear elasticity.
#[derive(Debug, Clone)]
pub struct ElasticLocal {
    pub geometry: ElementGeometry,
    /// Coordinates of `π_C ζ_i` on the constant strain fields, size `2n × 3`.
    pub w_c: DMatrix<f64>,
    /// Coordinates of `π_R ζ_i` on the rigid motions, size `2n × 3`.
    pub w_r: DMatrix<f64>,
    /// Constant strain fields sampled at the vertices, size `2n × 3`.
    pub n_c: DMatrix<f64>,
    /// Rigid motions sampled at the vertices, size `2n × 3`.
    pub n_r: DMatrix<f64>,
    /// Energies of the constant strain fields.
    pub d_elas: Matrix3<f64>,
    pub p_c: DMatrix<f64>,
    pub p_r: DMatrix<f64>,
    pub p_p: DMatrix<f64>,
    /// Consistency part `W_C D W_Cᵀ`.
    pub p: DMatrix<f64>,
    /// Stabilization `α (I - P_P)ᵀ(I - P_P)`.
    pub s: DMatrix<f64>,
    pub alpha: f64,
    /// Stiffness `P + S`.
    pub k: DMatrix<f64>,
}

/// Energy matrix `|E| [[2μ+λ, λ, 0], [λ, 2μ+λ, 0], [0, 0, 4μ]]` of the
/// constant strain fields.
pub fn elastic_energy_matrix(area: f64, lambda: f64, mu: f64) -> Matrix3<f64> {
    Matrix3::new(2.0 * mu + lambda, lambda, 0.0, lambda, 2.0 * mu + lambda, 0.0, 0.0, 0.0, 4.0 * mu) * area
}

/// Elastic stiffness of one element with Lamé coefficients `lambda`, `mu`.
pub fn elas_local(pts: &[Point], lambda: f64, mu: f64) -> Result<ElasticLocal> {
    let geometry = ElementGeometry::new(pts)?;
    let n = geometry.len();
    let inv_n = 1.0 / n as f64;
    let mut w_c = DMatrix::zeros(2 * n, 3);
    let mut w_r = DMatrix::zeros(2 * n, 3);
    let mut n_c = DMatrix::zeros(2 * n, 3);
    let mut n_r = DMatrix::zeros(2 * n, 3);
    for i in 0..n {
        let a = geometry.hat_normals[i] / (2.0 * geometry.area);
        let q = geometry.local[i];
        let (x, y) = (2 * i, 2 * i + 1);
        w_c[(x, 0)] = a.x;
        w_c[(x, 2)] = 0.5 * a.y;
        w_c[(y, 1)] = a.y;
        w_c[(y, 2)] = 0.5 * a.x;
        w_r[(x, 0)] = inv_n;
        w_r[(x, 2)] = -0.5 * a.y;
        w_r[(y, 1)] = inv_n;
        w_r[(y, 2)] = 0.5 * a.x;
        n_c[(x, 0)] = q.x;
        n_c[(x, 2)] = q.y;
        n_c[(y, 1)] = q.y;
        n_c[(y, 2)] = q.x;
        n_r[(x, 0)] = 1.0;
        n_r[(x, 2)] = -q.y;
        n_r[(y, 1)] = 1.0;
        n_r[(y, 2)] = q.x;
    }
    let d_elas = elastic_energy_matrix(geometry.area, lambda, mu);
    let d_dyn = DMatrix::from_fn(3, 3, |r, c| d_elas[(r, c)]);
    let p = &w_c * &d_dyn * w_c.transpose();
    let p_c = &n_c * w_c.transpose();
    let p_r = &n_r * w_r.transpose();
    let p_p = &p_c + &p_r;
    let ntn = n_c.transpose() * &n_c;
    let alpha = d_elas.trace() / ntn.trace();
    let r = DMatrix::identity(2 * n, 2 * n) - &p_p;
    let s = r.transpose() * &r * alpha;
    let k = &p + &s;
    Ok(ElasticLocal { geometry, w_c, w_r, n_c, n_r, d_elas, p_c, p_r, p_p, p, s, alpha, k })
}
