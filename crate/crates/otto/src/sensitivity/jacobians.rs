//! Derivatives of the mesh vertices with respect to the seeds and weights
//! of the generating diagram.
//!
//! Each vertex is the solution of two scalar equations chosen by its class:
//! a power bisector `2q·(s_j − s_i) + |s_i|² − |s_j|² − ψ_i + ψ_j = 0`, the
//! circle of a cell `|q − s_i|² − ψ_i = 0`, or a domain edge `n·q = c`.
//! Differentiating gives `G_q dq = −(G_s ds + G_ψ dψ)`. Arc samples follow
//! their arc: the endpoints move and the sampled angle is rescaled.

use std::collections::HashMap;

use nalgebra::Matrix2;

use crate::error::{OttoError, Result};
use crate::geometry::mesh::arc_angle;
use crate::geometry::{perp, Point, PolyMesh, PowerDiagram, VertexClass};

/// Sparse derivative of every mesh vertex. Design variables are numbered
/// `2i`, `2i + 1` for the coordinates of seed `i` and `2N + i` for `ψ_i`;
/// `columns[v]` lists `(variable, ∂q_v/∂variable)`.
#[derive(Debug, Clone)]
pub struct VertexJacobians {
    pub num_seeds: usize,
    pub columns: Vec<Vec<(usize, Point)>>,
    /// Reciprocal condition number of the 2×2 system of each vertex
    /// (1 for vertices without system).
    pub rcond: Vec<f64>,
}

impl VertexJacobians {
    /// Variable index of coordinate `c` of seed `i`.
    pub fn seed_var(&self, i: usize, c: usize) -> usize {
        2 * i + c
    }

    /// Variable index of weight `i`.
    pub fn weight_var(&self, i: usize) -> usize {
        2 * self.num_seeds + i
    }

    /// Block `∂q_v/∂s_i` (columns are the seed coordinates).
    pub fn seed_block(&self, v: usize, i: usize) -> Matrix2<f64> {
        let mut m = Matrix2::zeros();
        for &(var, col) in &self.columns[v] {
            if var == 2 * i || var == 2 * i + 1 {
                m.set_column(var - 2 * i, &col);
            }
        }
        m
    }

    /// Column `∂q_v/∂ψ_i`.
    pub fn weight_column(&self, v: usize, i: usize) -> Point {
        let var = self.weight_var(i);
        self.columns[v].iter().filter(|(k, _)| *k == var).map(|(_, c)| *c).sum()
    }

    /// Vertex velocities for a variation `(ds, dψ)`.
    pub fn apply(&self, ds: &[Point], dpsi: &[f64]) -> Vec<Point> {
        let n = self.num_seeds;
        self.columns
            .iter()
            .map(|cols| {
                cols.iter().fold(Point::zeros(), |acc, &(var, col)| {
                    let x = if var < 2 * n { ds[var / 2][var % 2] } else { dpsi[var - 2 * n] };
                    acc + col * x
                })
            })
            .collect()
    }

    /// Transposed action `([∇_s Q]ᵀ g, [∇_ψ Q]ᵀ g)` for vertex covectors `g`.
    pub fn apply_transpose(&self, g: &[Point]) -> (Vec<Point>, Vec<f64>) {
        let n = self.num_seeds;
        let mut gs = vec![Point::zeros(); n];
        let mut gpsi = vec![0.0; n];
        for (cols, gv) in self.columns.iter().zip(g) {
            for &(var, col) in cols {
                let x = col.dot(gv);
                if var < 2 * n {
                    gs[var / 2][var % 2] += x;
                } else {
                    gpsi[var - 2 * n] += x;
                }
            }
        }
        (gs, gpsi)
    }
}

/// One scalar equation through the vertex: gradient in `q` and partial
/// derivatives in the design variables.
struct Equation {
    dq: Point,
    dvars: Vec<(usize, Point)>,
}

fn push_scalar(dvars: &mut Vec<(usize, Point)>, var: usize, value: f64) {
    dvars.push((var, Point::new(value, 0.0)));
}

fn bisector(d: &PowerDiagram, q: Point, i: usize, j: usize) -> Equation {
    let n = d.len();
    let (si, sj) = (d.seeds[i], d.seeds[j]);
    let gi = (si - q) * 2.0;
    let gj = (q - sj) * 2.0;
    let mut dvars = Vec::new();
    push_scalar(&mut dvars, 2 * i, gi.x);
    push_scalar(&mut dvars, 2 * i + 1, gi.y);
    push_scalar(&mut dvars, 2 * j, gj.x);
    push_scalar(&mut dvars, 2 * j + 1, gj.y);
    push_scalar(&mut dvars, 2 * n + i, -1.0);
    push_scalar(&mut dvars, 2 * n + j, 1.0);
    Equation { dq: (sj - si) * 2.0, dvars }
}

fn circle(d: &PowerDiagram, q: Point, i: usize) -> Equation {
    let n = d.len();
    let u = q - d.seeds[i];
    let mut dvars = Vec::new();
    push_scalar(&mut dvars, 2 * i, -2.0 * u.x);
    push_scalar(&mut dvars, 2 * i + 1, -2.0 * u.y);
    push_scalar(&mut dvars, 2 * n + i, -1.0);
    Equation { dq: u * 2.0, dvars }
}

fn edge(d: &PowerDiagram, k: usize) -> Equation {
    Equation { dq: d.domain.normal(k), dvars: Vec::new() }
}

/// Solves the 2×2 system of two equations; the `x` slot of each `dvars`
/// entry holds the scalar partial derivative.
fn solve_pair(id: usize, a: Equation, b: Equation) -> Result<(Vec<(usize, Point)>, f64)> {
    let m = Matrix2::new(a.dq.x, a.dq.y, b.dq.x, b.dq.y);
    let scale = a.dq.norm() * b.dq.norm();
    let det = m.determinant();
    let rcond = if scale > 0.0 { det.abs() / scale } else { 0.0 };
    if !(rcond > 1e-12) {
        return Err(OttoError::DegenerateVertex(format!(
            "vertex {id}: defining curves are tangent (sine of the crossing angle {rcond:e})"
        )));
    }
    let inv = m.try_inverse().expect("nonzero determinant");
    let mut acc: HashMap<usize, Point> = HashMap::new();
    for (slot, eq) in [(0usize, &a), (1usize, &b)] {
        for &(var, val) in &eq.dvars {
            let mut rhs = Point::zeros();
            rhs[slot] = -val.x;
            *acc.entry(var).or_insert_with(Point::zeros) += inv * rhs;
        }
    }
    let mut cols: Vec<(usize, Point)> = acc.into_iter().collect();
    cols.sort_by_key(|c| c.0);
    Ok((cols, rcond))
}

/// Jacobian of a vertex that is not an arc sample.
fn vertex_columns(d: &PowerDiagram, id: usize, q: Point, class: VertexClass) -> Result<(Vec<(usize, Point)>, f64)> {
    match class {
        VertexClass::ThreeCells { i, j, k } => solve_pair(id, bisector(d, q, i, j), bisector(d, q, i, k)),
        VertexClass::TwoCellsVoid { i, j } => solve_pair(id, circle(d, q, i), circle(d, q, j)),
        VertexClass::TwoCellsBoundary { i, j, edge: k } => solve_pair(id, bisector(d, q, i, j), edge(d, k)),
        VertexClass::CellVoidBoundary { i, edge: k } => solve_pair(id, circle(d, q, i), edge(d, k)),
        VertexClass::DomainCorner { .. } => Ok((Vec::new(), 1.0)),
        VertexClass::ArcSample { .. } => unreachable!("arc samples are handled by their arc"),
    }
}

fn add_scaled(acc: &mut HashMap<usize, Point>, cols: &[(usize, Point)], m: &Matrix2<f64>) {
    for &(var, col) in cols {
        *acc.entry(var).or_insert_with(Point::zeros) += m * col;
    }
}

/// Derivatives of all vertices of `mesh`, a mesh of the diagram `d`.
///
/// Fails on a vertex without generic class or with a singular defining
/// system, naming the vertex.
pub fn vertex_jacobians(d: &PowerDiagram, mesh: &PolyMesh) -> Result<VertexJacobians> {
    let nv = mesh.num_vertices();
    let n = d.len();
    let mut columns = vec![Vec::new(); nv];
    let mut rcond = vec![1.0; nv];
    for v in 0..nv {
        let class = mesh.classes[v].ok_or_else(|| {
            OttoError::DegenerateVertex(format!(
                "vertex {v} at ({:.6e}, {:.6e}) has no generic class",
                mesh.vertices[v].x, mesh.vertices[v].y
            ))
        })?;
        if matches!(class, VertexClass::ArcSample { .. }) {
            continue;
        }
        let (cols, rc) = vertex_columns(d, v, mesh.vertices[v], class)?;
        columns[v] = cols;
        rcond[v] = rc;
    }
    for arc in &mesh.arcs {
        let i = arc.cell;
        let s = d.seeds[i];
        let seed_cols = [(2 * i, Point::new(1.0, 0.0)), (2 * i + 1, Point::new(0.0, 1.0))];
        match (arc.start, arc.end) {
            (Some(a), Some(b)) => {
                let (u0, u1) = (mesh.vertices[a] - s, mesh.vertices[b] - s);
                let alpha = arc_angle(u0, u1);
                let a0 = perp(u0) / u0.norm_squared();
                let a1 = perp(u1) / u1.norm_squared();
                // Derivatives of u0 = q0 − s and u1 = q1 − s.
                let mut du0: HashMap<usize, Point> = columns[a].iter().copied().collect();
                let mut du1: HashMap<usize, Point> = columns[b].iter().copied().collect();
                for &(var, col) in &seed_cols {
                    *du0.entry(var).or_insert_with(Point::zeros) -= col;
                    *du1.entry(var).or_insert_with(Point::zeros) -= col;
                }
                for &r in &arc.samples {
                    let Some(VertexClass::ArcSample { t, .. }) = mesh.classes[r] else { unreachable!() };
                    let (c, sn) = ((t * alpha).cos(), (t * alpha).sin());
                    let rot = Matrix2::new(c, -sn, sn, c);
                    let w = perp(mesh.vertices[r] - s) * t;
                    let mut acc: HashMap<usize, Point> = HashMap::new();
                    add_scaled(&mut acc, &seed_cols, &Matrix2::identity());
                    for (&var, &col) in &du0 {
                        *acc.entry(var).or_insert_with(Point::zeros) += rot * col - w * a0.dot(&col);
                    }
                    for (&var, &col) in &du1 {
                        *acc.entry(var).or_insert_with(Point::zeros) += w * a1.dot(&col);
                    }
                    let mut cols: Vec<(usize, Point)> = acc.into_iter().collect();
                    cols.sort_by_key(|c| c.0);
                    columns[r] = cols;
                }
            }
            _ => {
                for &r in &arc.samples {
                    let u = mesh.vertices[r] - s;
                    let mut cols = seed_cols.to_vec();
                    cols.push((2 * n + i, u / (2.0 * d.weights[i])));
                    columns[r] = cols;
                }
            }
        }
    }
    Ok(VertexJacobians { num_seeds: n, columns, rcond })
}

/// Stable identifier of a mesh vertex built from its generating indices,
/// used to match vertices between nearby diagrams. Curves crossing twice
/// are told apart by the side of the crossing.
pub fn vertex_key(d: &PowerDiagram, mesh: &PolyMesh, v: usize) -> Option<String> {
    let class = mesh.classes[v]?;
    let q = mesh.vertices[v];
    let side = |a: Point, dir: Point| if dir.perp(&(q - a)) >= 0.0 { '+' } else { '-' };
    Some(match class {
        VertexClass::ArcSample { i, .. } => {
            let arc = &mesh.arcs[mesh.vertex_arc[v]?];
            let r = arc.samples.iter().position(|&x| x == v)?;
            let start = arc.start.and_then(|a| vertex_key(d, mesh, a)).unwrap_or_default();
            let end = arc.end.and_then(|b| vertex_key(d, mesh, b)).unwrap_or_default();
            format!("AS:{i}:{start}:{end}:{r}")
        }
        VertexClass::ThreeCells { i, j, k } => format!("3C:{i}:{j}:{k}"),
        VertexClass::TwoCellsVoid { i, j } => {
            format!("2V:{i}:{j}:{}", side(d.seeds[i], d.seeds[j] - d.seeds[i]))
        }
        VertexClass::TwoCellsBoundary { i, j, edge } => format!("2B:{i}:{j}:{edge}"),
        VertexClass::CellVoidBoundary { i, edge } => {
            let (a, b) = d.domain.edge(edge);
            format!("1B:{i}:{edge}:{}", side(d.seeds[i], perp(b - a)))
        }
        VertexClass::DomainCorner { i, corner } => format!("DC:{i}:{corner}"),
    })
}

/// Map from vertex key to vertex index. Ambiguous keys are dropped.
pub fn vertex_key_map(d: &PowerDiagram, mesh: &PolyMesh) -> HashMap<String, usize> {
    let mut map: HashMap<String, Option<usize>> = HashMap::new();
    for v in 0..mesh.num_vertices() {
        if let Some(k) = vertex_key(d, mesh, v) {
            map.entry(k).and_modify(|e| *e = None).or_insert(Some(v));
        }
    }
    map.into_iter().filter_map(|(k, v)| v.map(|v| (k, v))).collect()
}
