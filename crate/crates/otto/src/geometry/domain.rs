//! Convex polygonal computational domain with labeled boundary edges.

use super::predicates::orient2d;
use super::Point;
use crate::error::{OttoError, Result};

/// Boundary label reserved for edges without boundary condition.
pub const LABEL_FREE: i32 = 0;

/// Convex polygon given as a counterclockwise vertex loop. Edge `k` joins
/// vertex `k` to vertex `k + 1`. Collinear intermediate vertices are allowed
/// so that a side can carry several labeled sub-segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    vertices: Vec<Point>,
    labels: Vec<i32>,
    normals: Vec<Point>,
    offsets: Vec<f64>,
}

impl Domain {
    /// Builds a domain from a counterclockwise convex loop and one label per edge.
    pub fn new(vertices: Vec<Point>, labels: Vec<i32>) -> Result<Self> {
        let n = vertices.len();
        if n < 3 {
            return Err(OttoError::InvalidDomain(format!("polygon needs at least 3 vertices, got {n}")));
        }
        if labels.len() != n {
            return Err(OttoError::InvalidDomain(format!("expected {n} edge labels, got {}", labels.len())));
        }
        let mut normals = Vec::with_capacity(n);
        let mut offsets = Vec::with_capacity(n);
        for k in 0..n {
            let a = vertices[k];
            let b = vertices[(k + 1) % n];
            let d = b - a;
            let len = d.norm();
            if !(len > 0.0) {
                return Err(OttoError::InvalidDomain(format!("edge {k} has zero length")));
            }
            let nrm = Point::new(d.y / len, -d.x / len);
            normals.push(nrm);
            offsets.push(nrm.dot(&a));
        }
        let mut turns = 0;
        for k in 0..n {
            let o = orient2d(vertices[(k + n - 1) % n], vertices[k], vertices[(k + 1) % n]);
            if o < 0 {
                return Err(OttoError::InvalidDomain(format!(
                    "polygon is not convex or not counterclockwise at vertex {k}"
                )));
            }
            if o > 0 {
                turns += 1;
            }
        }
        if turns < 3 {
            return Err(OttoError::InvalidDomain("polygon is degenerate".into()));
        }
        let dom = Domain { vertices, labels, normals, offsets };
        let area = dom.area();
        // A convex CCW loop has total turning 2*pi; anything larger would wind twice.
        let mut total = 0.0;
        for k in 0..n {
            let d0 = dom.vertices[k] - dom.vertices[(k + n - 1) % n];
            let d1 = dom.vertices[(k + 1) % n] - dom.vertices[k];
            total += (d0.x * d1.y - d0.y * d1.x).atan2(d0.dot(&d1));
        }
        if !(area > 0.0) || (total - std::f64::consts::TAU).abs() > 1e-6 {
            return Err(OttoError::InvalidDomain("polygon is not simple".into()));
        }
        Ok(dom)
    }

    /// Axis-aligned rectangle `[x0, x1] x [y0, y1]` with edge labels given in
    /// the order bottom, right, top, left.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64, labels: [i32; 4]) -> Result<Self> {
        Self::new(vec![Point::new(x0, y0), Point::new(x1, y0), Point::new(x1, y1), Point::new(x0, y1)], labels.to_vec())
    }

    /// Polygon vertices in counterclockwise order.
    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    /// Label of every edge.
    pub fn labels(&self) -> &[i32] {
        &self.labels
    }

    /// Number of edges.
    pub fn num_edges(&self) -> usize {
        self.vertices.len()
    }

    /// Outward unit normal of edge `k`.
    pub fn normal(&self, k: usize) -> Point {
        self.normals[k]
    }

    /// Offset `c_k` such that edge `k` lies on `n_k . x = c_k`.
    pub fn offset(&self, k: usize) -> f64 {
        self.offsets[k]
    }

    /// Endpoints of edge `k`.
    pub fn edge(&self, k: usize) -> (Point, Point) {
        (self.vertices[k], self.vertices[(k + 1) % self.vertices.len()])
    }

    /// Level-set value `max_k (n_k . x - c_k)`: negative inside, zero on the
    /// boundary, positive outside.
    pub fn phi(&self, x: Point) -> f64 {
        self.phi_with_edge(x).0
    }

    /// Level-set value together with the index of the active edge. The gradient
    /// of the level set at `x` is the normal of that edge.
    pub fn phi_with_edge(&self, x: Point) -> (f64, usize) {
        let mut best = (f64::NEG_INFINITY, 0);
        for k in 0..self.vertices.len() {
            let v = self.normals[k].dot(&x) - self.offsets[k];
            if v > best.0 {
                best = (v, k);
            }
        }
        best
    }

    /// Gradient of the level set at `x`.
    pub fn grad_phi(&self, x: Point) -> Point {
        self.normals[self.phi_with_edge(x).1]
    }

    /// Polygon area.
    pub fn area(&self) -> f64 {
        let n = self.vertices.len();
        let mut a = 0.0;
        for k in 0..n {
            let p = self.vertices[k];
            let q = self.vertices[(k + 1) % n];
            a += p.x * q.y - p.y * q.x;
        }
        0.5 * a
    }

    /// Lower-left and upper-right corners of the bounding box.
    pub fn bbox(&self) -> (Point, Point) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for v in &self.vertices {
            lo = Point::new(lo.x.min(v.x), lo.y.min(v.y));
            hi = Point::new(hi.x.max(v.x), hi.y.max(v.y));
        }
        (lo, hi)
    }

    /// Diameter of the bounding box.
    pub fn diameter(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Closest point of the closed polygon to `x` (identity for interior points).
    pub fn project(&self, x: Point) -> Point {
        if self.phi(x) <= 0.0 {
            return x;
        }
        let mut best = x;
        let mut best_d = f64::INFINITY;
        for k in 0..self.vertices.len() {
            let (a, b) = self.edge(k);
            let d = b - a;
            let t = ((x - a).dot(&d) / d.norm_squared()).clamp(0.0, 1.0);
            let q = a + d * t;
            let dist = (x - q).norm();
            if dist < best_d {
                best_d = dist;
                best = q;
            }
        }
        best
    }
}
