//! Classical and modified Laguerre diagrams restricted to a convex domain.

use std::collections::HashMap;
use std::f64::consts::TAU;

use super::domain::Domain;
use super::moments::{self, Moments};
use super::triangulation::RegularTriangulation;
use super::Point;
use crate::error::{OttoError, Result};

/// Diagram flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Laguerre cells clipped to the domain; the cells tile D.
    Classical,
    /// Laguerre cells additionally clipped by the ball of radius `sqrt(psi_i)`.
    Modified,
}

/// Seed points, weights and target measures.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedConfig {
    pub seeds: Vec<Point>,
    pub weights: Vec<f64>,
    pub measures: Vec<f64>,
}

impl SeedConfig {
    /// Bundles the three arrays after a length check.
    pub fn new(seeds: Vec<Point>, weights: Vec<f64>, measures: Vec<f64>) -> Result<Self> {
        if seeds.len() != weights.len() || seeds.len() != measures.len() {
            return Err(OttoError::InvalidSeeds(format!(
                "length mismatch: {} seeds, {} weights, {} measures",
                seeds.len(),
                weights.len(),
                measures.len()
            )));
        }
        Ok(SeedConfig { seeds, weights, measures })
    }

    /// Number of seeds.
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    /// Whether there are no seeds.
    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Checks the measure admissibility condition for the given mode.
    pub fn check_measures(&self, domain: &Domain, mode: Mode) -> Result<()> {
        if self.measures.iter().any(|&v| !(v > 0.0)) {
            return Err(OttoError::InvalidSeeds("every target measure must be positive".into()));
        }
        let total: f64 = self.measures.iter().sum();
        let area = domain.area();
        match mode {
            Mode::Modified if total >= area => Err(OttoError::InvalidSeeds(format!(
                "total measure {total} must be smaller than |D| = {area} in modified mode"
            ))),
            Mode::Classical if (total - area).abs() > 1e-9 * area => {
                Err(OttoError::InvalidSeeds(format!("total measure {total} must equal |D| = {area} in classical mode")))
            }
            _ => Ok(()),
        }
    }
}

/// Constraint defining one side of a cell boundary walk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Constraint {
    /// Power bisector with seed `j`.
    Bisector(usize),
    /// Domain edge `k`.
    Domain(usize),
    /// The circle of the cell's own ball.
    Circle,
}

/// Category of a diagram vertex with its generating indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VertexClass {
    /// Meeting point of three cells.
    ThreeCells { i: usize, j: usize, k: usize },
    /// Meeting point of two cells and the void.
    TwoCellsVoid { i: usize, j: usize },
    /// Interior sample of arc `arc` of cell `i` at parameter `t` in (0, 1).
    ArcSample { i: usize, arc: usize, t: f64 },
    /// Meeting point of two cells and domain edge `edge`.
    TwoCellsBoundary { i: usize, j: usize, edge: usize },
    /// Meeting point of one cell, the void and domain edge `edge`.
    CellVoidBoundary { i: usize, edge: usize },
    /// Corner `corner` of the domain polygon, inside cell `i`. It does not move.
    DomainCorner { i: usize, corner: usize },
}

/// Global diagram vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagramVertex {
    pub pos: Point,
    /// Generic class, or `None` for a vertex violating the genericity
    /// assumptions (for instance four cells meeting at one point).
    pub class: Option<VertexClass>,
    /// Cells whose boundary walk passes through this vertex.
    pub cells: Vec<usize>,
    /// Constraints met at this vertex, as `(cell, constraint)` pairs.
    pub constraints: Vec<(usize, Constraint)>,
}

/// One piece of a cell boundary, oriented counterclockwise around the cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Piece {
    /// Straight piece between global vertices `a` and `b`, lying on a bisector
    /// or a domain edge.
    Segment { a: usize, b: usize, on: Constraint },
    /// Circular arc of the cell's ball from vertex `a` (angle `phi0`) to vertex
    /// `b`, sweeping `theta` counterclockwise.
    Arc { a: usize, b: usize, phi0: f64, theta: f64 },
    /// The entire circle: the cell is a full disk.
    Circle,
}

/// One cell of the diagram.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub pieces: Vec<Piece>,
    /// Moments about the cell's own seed.
    pub moments: Moments,
    /// Area of the classical cell restricted to D (equals the area in classical mode).
    pub laguerre_area: f64,
    /// Seeds sharing a straight edge of positive length with this cell.
    pub neighbors: Vec<usize>,
    pub empty: bool,
}

impl Cell {
    /// Cell area.
    pub fn area(&self) -> f64 {
        self.moments.area
    }

    /// Indices into `pieces` of the arcs (or the full circle), in walk order.
    pub fn arcs(&self) -> impl Iterator<Item = &Piece> {
        self.pieces.iter().filter(|p| matches!(p, Piece::Arc { .. } | Piece::Circle))
    }
}

/// A (modified) Laguerre diagram of a convex domain.
#[derive(Debug, Clone)]
pub struct PowerDiagram {
    pub mode: Mode,
    pub seeds: Vec<Point>,
    pub weights: Vec<f64>,
    pub cells: Vec<Cell>,
    pub vertices: Vec<DiagramVertex>,
    pub domain: Domain,
    pub triangulation: RegularTriangulation,
}

impl PowerDiagram {
    /// Number of cells.
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    /// Whether the diagram has no cells.
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Area of cell `i`.
    pub fn area(&self, i: usize) -> f64 {
        self.cells[i].area()
    }

    /// Centroid of cell `i` in global coordinates.
    pub fn centroid(&self, i: usize) -> Point {
        self.seeds[i] + self.cells[i].moments.centroid()
    }

    /// Area of the void phase, computed cell by cell as the part of each
    /// classical cell lying outside its ball.
    pub fn void_area(&self) -> f64 {
        self.cells.iter().map(|c| (c.laguerre_area - c.area()).max(0.0)).sum()
    }

    /// Radius of the ball of cell `i`.
    pub fn radius(&self, i: usize) -> f64 {
        self.weights[i].max(0.0).sqrt()
    }

    /// Straight edges `(a, b)` of cell `i` shared with cell `j`.
    pub fn shared_edges(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells[i].pieces.iter().filter_map(move |p| match *p {
            Piece::Segment { a, b, on: Constraint::Bisector(k) } if k == j => Some((a, b)),
            _ => None,
        })
    }
}

struct WalkPiece {
    start: Point,
    on: Constraint,
    arc: Option<(f64, f64)>,
}

/// Builds the diagram of `seeds` (positions and weights) over `domain`.
pub fn build_diagram(seeds: &[Point], weights: &[f64], domain: &Domain, mode: Mode) -> Result<PowerDiagram> {
    let n = seeds.len();
    if weights.len() != n {
        return Err(OttoError::InvalidSeeds("seed and weight counts differ".into()));
    }
    let diam = domain.diameter();
    for (i, s) in seeds.iter().enumerate() {
        if domain.phi(*s) > 1e-12 * diam {
            return Err(OttoError::InvalidSeeds(format!("seed {i} at ({}, {}) lies outside D", s.x, s.y)));
        }
    }
    if mode == Mode::Modified {
        if let Some(i) = weights.iter().position(|&w| !(w > 0.0)) {
            return Err(OttoError::InvalidSeeds(format!(
                "weight {i} must be positive in modified mode, got {}",
                weights[i]
            )));
        }
    }
    let tri = RegularTriangulation::new(seeds, weights)?;
    let nbrs = tri.seed_neighbors();
    let hidden = tri.hidden().to_vec();
    let tol = 1e-10 * diam;

    let mut registry = VertexRegistry::new(tol);
    let mut cells = Vec::with_capacity(n);
    for i in 0..n {
        if hidden[i] {
            cells.push(empty_cell());
            continue;
        }
        let s = seeds[i];
        let mut poly = ClipPoly::from_domain(domain, s);
        for &j in &nbrs[i] {
            let d = seeds[j] - s;
            let k = d.norm_squared() - weights[j] + weights[i];
            poly.clip(d, k, Constraint::Bisector(j), tol);
            if poly.pts.is_empty() {
                break;
            }
        }
        if poly.pts.len() < 3 {
            cells.push(empty_cell());
            continue;
        }
        let lag = moments::polygon(&poly.pts);
        let walk = match mode {
            Mode::Classical => poly.walk(),
            Mode::Modified => clip_disk(&poly, weights[i].sqrt(), tol),
        };
        let Some(walk) = walk else {
            let mut c = empty_cell();
            c.laguerre_area = lag.area;
            cells.push(c);
            continue;
        };
        cells.push(assemble_cell(i, s, weights[i], &walk, lag.area, &mut registry));
    }
    let vertices = registry.classify(domain);
    let mut diagram = PowerDiagram {
        mode,
        seeds: seeds.to_vec(),
        weights: weights.to_vec(),
        cells,
        vertices,
        domain: domain.clone(),
        triangulation: tri,
    };
    symmetrize_neighbors(&mut diagram);
    Ok(diagram)
}

fn empty_cell() -> Cell {
    Cell { pieces: Vec::new(), moments: Moments::default(), laguerre_area: 0.0, neighbors: Vec::new(), empty: true }
}

fn symmetrize_neighbors(d: &mut PowerDiagram) {
    let n = d.cells.len();
    let lists: Vec<Vec<usize>> = d.cells.iter().map(|c| c.neighbors.clone()).collect();
    for i in 0..n {
        d.cells[i].neighbors.retain(|&j| lists[j].contains(&i));
    }
}

fn assemble_cell(
    i: usize,
    s: Point,
    psi: f64,
    walk: &[WalkPiece],
    laguerre_area: f64,
    reg: &mut VertexRegistry,
) -> Cell {
    let m = walk.len();
    let mut pieces = Vec::with_capacity(m);
    let mut mom = Moments::default();
    let mut neighbors = Vec::new();
    if m == 1 && walk[0].arc.map(|(_, t)| t >= TAU).unwrap_or(false) {
        mom += moments::arc(psi.sqrt(), 0.0, TAU);
        return Cell { pieces: vec![Piece::Circle], moments: mom, laguerre_area, neighbors, empty: false };
    }
    let ids: Vec<usize> = (0..m)
        .map(|k| {
            let prev = walk[(k + m - 1) % m].on;
            reg.insert(s + walk[k].start, i, prev, walk[k].on)
        })
        .collect();
    for k in 0..m {
        let a = walk[k].start;
        let b = walk[(k + 1) % m].start;
        let (ia, ib) = (ids[k], ids[(k + 1) % m]);
        match walk[k].arc {
            Some((phi0, theta)) => {
                mom += moments::arc(psi.sqrt(), phi0, theta);
                pieces.push(Piece::Arc { a: ia, b: ib, phi0, theta });
            }
            None => {
                mom += moments::segment(a, b);
                if let Constraint::Bisector(j) = walk[k].on {
                    neighbors.push(j);
                }
                pieces.push(Piece::Segment { a: ia, b: ib, on: walk[k].on });
            }
        }
    }
    neighbors.sort_unstable();
    neighbors.dedup();
    Cell { pieces, moments: mom, laguerre_area, neighbors, empty: false }
}

/// Convex polygon in coordinates relative to a seed; `tags[m]` labels the
/// edge from `pts[m]` to `pts[m + 1]`.
struct ClipPoly {
    pts: Vec<Point>,
    tags: Vec<Constraint>,
}

impl ClipPoly {
    fn from_domain(domain: &Domain, origin: Point) -> Self {
        let pts = domain.vertices().iter().map(|v| v - origin).collect();
        let tags = (0..domain.num_edges()).map(Constraint::Domain).collect();
        ClipPoly { pts, tags }
    }

    /// Keeps the half-plane `2 x . d <= k`.
    fn clip(&mut self, d: Point, k: f64, tag: Constraint, tol: f64) {
        let n = self.pts.len();
        let scale = 2.0 * d.norm();
        let dist: Vec<f64> = self.pts.iter().map(|p| (2.0 * p.dot(&d) - k) / scale).collect();
        if dist.iter().all(|&x| x <= 0.0) {
            return;
        }
        let mut pts = Vec::with_capacity(n + 1);
        let mut tags = Vec::with_capacity(n + 1);
        for m in 0..n {
            let nx = (m + 1) % n;
            let (a, b) = (self.pts[m], self.pts[nx]);
            let a_in = dist[m] <= 0.0;
            let b_in = dist[nx] <= 0.0;
            if a_in {
                pts.push(a);
                tags.push(self.tags[m]);
                if !b_in {
                    let t = dist[m] / (dist[m] - dist[nx]);
                    pts.push(a + (b - a) * t);
                    tags.push(tag);
                }
            } else if b_in {
                let t = dist[m] / (dist[m] - dist[nx]);
                pts.push(a + (b - a) * t);
                tags.push(self.tags[m]);
            }
        }
        self.pts = pts;
        self.tags = tags;
        self.merge(tol);
    }

    /// Removes edges shorter than `tol`, keeping the constraint of the next edge.
    fn merge(&mut self, tol: f64) {
        let mut changed = true;
        while changed && self.pts.len() > 2 {
            changed = false;
            let n = self.pts.len();
            for m in 0..n {
                let nx = (m + 1) % n;
                if (self.pts[nx] - self.pts[m]).norm() <= tol {
                    self.tags[m] = self.tags[nx];
                    self.pts.remove(nx);
                    self.tags.remove(nx);
                    changed = true;
                    break;
                }
            }
        }
        if self.pts.len() < 3 {
            self.pts.clear();
            self.tags.clear();
        }
    }

    fn walk(&self) -> Option<Vec<WalkPiece>> {
        if self.pts.len() < 3 {
            return None;
        }
        Some(self.pts.iter().zip(&self.tags).map(|(&p, &t)| WalkPiece { start: p, on: t, arc: None }).collect())
    }
}

struct InPiece {
    a: Point,
    b: Point,
    on: Constraint,
    edge: usize,
    from_vertex: bool,
    to_vertex: bool,
}

/// Intersects the relative convex polygon with the disk of radius `r`
/// centered at the origin.
fn clip_disk(poly: &ClipPoly, r: f64, tol: f64) -> Option<Vec<WalkPiece>> {
    const SNAP: f64 = 1e-12;
    let n = poly.pts.len();
    let r2 = r * r;
    let mut inside: Vec<InPiece> = Vec::new();
    for m in 0..n {
        let p = poly.pts[m];
        let q = poly.pts[(m + 1) % n];
        let d = q - p;
        let a = d.norm_squared();
        let b = 2.0 * d.dot(&p);
        let c = p.norm_squared() - r2;
        let disc = b * b - 4.0 * a * c;
        if !(disc > 0.0) {
            continue;
        }
        let sq = disc.sqrt();
        let h = -0.5 * (b + b.signum() * sq);
        let (mut t0, mut t1) = if h == 0.0 { (-sq / (2.0 * a), sq / (2.0 * a)) } else { (h / a, c / h) };
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        let from_vertex = t0 <= SNAP;
        let to_vertex = t1 >= 1.0 - SNAP;
        let lo = if from_vertex { 0.0 } else { t0 };
        let hi = if to_vertex { 1.0 } else { t1 };
        if hi - lo <= SNAP {
            continue;
        }
        let pa = if from_vertex { p } else { p + d * lo };
        let pb = if to_vertex { q } else { p + d * hi };
        if (pb - pa).norm() <= tol {
            continue;
        }
        inside.push(InPiece { a: pa, b: pb, on: poly.tags[m], edge: m, from_vertex, to_vertex });
    }
    if inside.is_empty() {
        // Either the ball lies inside the polygon or misses it entirely.
        let center_inside = (0..n).all(|m| {
            let p = poly.pts[m];
            let q = poly.pts[(m + 1) % n];
            (q - p).perp(&(-p)) > 0.0
        });
        return if center_inside {
            Some(vec![WalkPiece { start: Point::new(r, 0.0), on: Constraint::Circle, arc: Some((0.0, TAU)) }])
        } else {
            None
        };
    }
    let mut walk = Vec::with_capacity(2 * inside.len());
    let k = inside.len();
    for idx in 0..k {
        let cur = &inside[idx];
        let next = &inside[(idx + 1) % k];
        walk.push(WalkPiece { start: cur.a, on: cur.on, arc: None });
        let joined = cur.to_vertex && next.from_vertex && next.edge == (cur.edge + 1) % n;
        if !joined && (next.a - cur.b).norm() > tol {
            let phi0 = cur.b.y.atan2(cur.b.x);
            let phi1 = next.a.y.atan2(next.a.x);
            let mut theta = phi1 - phi0;
            while theta <= 0.0 {
                theta += TAU;
            }
            while theta > TAU {
                theta -= TAU;
            }
            walk.push(WalkPiece { start: cur.b, on: Constraint::Circle, arc: Some((phi0, theta)) });
        }
    }
    Some(walk)
}

struct RawVertex {
    pos: Point,
    cells: Vec<usize>,
    constraints: Vec<(usize, Constraint)>,
}

struct VertexRegistry {
    tol: f64,
    grid: HashMap<(i64, i64), Vec<usize>>,
    raw: Vec<RawVertex>,
}

impl VertexRegistry {
    fn new(tol: f64) -> Self {
        VertexRegistry { tol, grid: HashMap::new(), raw: Vec::new() }
    }

    fn key(&self, p: Point) -> (i64, i64) {
        ((p.x / (4.0 * self.tol)).floor() as i64, (p.y / (4.0 * self.tol)).floor() as i64)
    }

    fn insert(&mut self, p: Point, cell: usize, c0: Constraint, c1: Constraint) -> usize {
        let (kx, ky) = self.key(p);
        let mut found = None;
        'search: for dx in -1..=1 {
            for dy in -1..=1 {
                if let Some(list) = self.grid.get(&(kx + dx, ky + dy)) {
                    for &id in list {
                        if (self.raw[id].pos - p).norm() <= self.tol {
                            found = Some(id);
                            break 'search;
                        }
                    }
                }
            }
        }
        let id = match found {
            Some(id) => id,
            None => {
                self.raw.push(RawVertex { pos: p, cells: Vec::new(), constraints: Vec::new() });
                let id = self.raw.len() - 1;
                self.grid.entry((kx, ky)).or_default().push(id);
                id
            }
        };
        let v = &mut self.raw[id];
        if !v.cells.contains(&cell) {
            v.cells.push(cell);
        }
        v.constraints.push((cell, c0));
        v.constraints.push((cell, c1));
        id
    }

    fn classify(self, domain: &Domain) -> Vec<DiagramVertex> {
        let mut out = Vec::with_capacity(self.raw.len());
        for (id, v) in self.raw.into_iter().enumerate() {
            let mut cells = v.cells.clone();
            cells.sort_unstable();
            let class = classify_raw(id, v.pos, &cells, &v.constraints, domain).ok();
            out.push(DiagramVertex { pos: v.pos, class, cells, constraints: v.constraints });
        }
        out
    }
}

fn classify_raw(
    id: usize,
    pos: Point,
    cells: &[usize],
    cons: &[(usize, Constraint)],
    domain: &Domain,
) -> Result<VertexClass> {
    let describe = || format!("vertex {id} at ({:.6e}, {:.6e}) touching cells {:?}", pos.x, pos.y, cells);
    if cells.len() >= 4 {
        return Err(OttoError::DegenerateVertex(format!("{} is shared by {} cells", describe(), cells.len())));
    }
    let circle = cons.iter().any(|(_, c)| *c == Constraint::Circle);
    let mut edges: Vec<usize> =
        cons.iter().filter_map(|(_, c)| if let Constraint::Domain(k) = c { Some(*k) } else { None }).collect();
    edges.sort_unstable();
    edges.dedup();
    let bad = || OttoError::DegenerateVertex(format!("{} has no generic class", describe()));
    let class = match (cells.len(), circle, edges.len()) {
        (3, false, 0) => VertexClass::ThreeCells { i: cells[0], j: cells[1], k: cells[2] },
        (2, true, 0) => VertexClass::TwoCellsVoid { i: cells[0], j: cells[1] },
        (2, false, 1) => VertexClass::TwoCellsBoundary { i: cells[0], j: cells[1], edge: edges[0] },
        (1, true, 1) => VertexClass::CellVoidBoundary { i: cells[0], edge: edges[0] },
        (1, false, 2) => {
            let ne = domain.num_edges();
            let (a, b) = (edges[0], edges[1]);
            let corner = if (a + 1) % ne == b {
                b
            } else if (b + 1) % ne == a {
                a
            } else {
                return Err(bad());
            };
            VertexClass::DomainCorner { i: cells[0], corner }
        }
        _ => return Err(bad()),
    };
    Ok(class)
}

/// Recomputes the vertex classes of a diagram, checking each vertex against
/// the algebraic system of its class. Returns the classes in vertex order.
pub fn classify_vertices(d: &PowerDiagram) -> Result<Vec<VertexClass>> {
    let diam = d.domain.diameter();
    let tol = 1e-9 * diam * diam;
    let mut out = Vec::with_capacity(d.vertices.len());
    for (id, v) in d.vertices.iter().enumerate() {
        let class = match v.class {
            Some(c) => c,
            None => return Err(classify_raw(id, v.pos, &v.cells, &v.constraints, &d.domain).unwrap_err()),
        };
        let res = vertex_residual(d, id);
        if res > tol {
            return Err(OttoError::DegenerateVertex(format!("vertex {id} of class {:?} has residual {res:e}", class)));
        }
        out.push(class);
    }
    Ok(out)
}

/// Largest residual of the defining equations of vertex `id`
/// (infinite for a vertex without class).
pub fn vertex_residual(d: &PowerDiagram, id: usize) -> f64 {
    let v = &d.vertices[id];
    let Some(class) = v.class else {
        return f64::INFINITY;
    };
    let pow = |i: usize| (v.pos - d.seeds[i]).norm_squared() - d.weights[i];
    let on_edge = |k: usize| (d.domain.normal(k).dot(&v.pos) - d.domain.offset(k)).abs();
    match class {
        VertexClass::ThreeCells { i, j, k } => (pow(i) - pow(j)).abs().max((pow(i) - pow(k)).abs()),
        VertexClass::TwoCellsVoid { i, j } => pow(i).abs().max(pow(j).abs()),
        VertexClass::TwoCellsBoundary { i, j, edge } => (pow(i) - pow(j)).abs().max(on_edge(edge)),
        VertexClass::CellVoidBoundary { i, edge } => pow(i).abs().max(on_edge(edge)),
        VertexClass::DomainCorner { corner, .. } => (d.domain.vertices()[corner] - v.pos).norm(),
        VertexClass::ArcSample { i, .. } => pow(i).abs(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit() -> Domain {
        Domain::rectangle(0.0, 0.0, 1.0, 1.0, [1, 2, 3, 4]).unwrap()
    }

    fn random_seeds(n: usize, seed: u64) -> (Vec<Point>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..n).map(|_| Point::new(rng.gen_range(0.05..0.95), rng.gen_range(0.05..0.95))).collect();
        let w = (0..n).map(|_| rng.gen_range(0.002..0.01)).collect();
        (s, w)
    }

    #[test]
    fn single_seed_full_disk() {
        let d = build_diagram(&[Point::new(0.5, 0.5)], &[0.04], &unit(), Mode::Modified).unwrap();
        assert_eq!(d.cells[0].pieces, vec![Piece::Circle]);
        assert!((d.area(0) - PI * 0.04).abs() < 1e-12 * PI * 0.04);
        assert!((d.area(0) - 0.12566).abs() < 1e-5);
        assert!(d.vertices.is_empty());
    }

    #[test]
    fn mirror_seeds_split_along_bisector() {
        let s = [Point::new(0.3, 0.4), Point::new(0.7, 0.4)];
        let d = build_diagram(&s, &[0.0, 0.0], &unit(), Mode::Classical).unwrap();
        assert!((d.area(0) - 0.5).abs() < 1e-14);
        assert!((d.area(1) - 0.5).abs() < 1e-14);
        for (a, b) in d.shared_edges(0, 1) {
            assert!((d.vertices[a].pos.x - 0.5).abs() < 1e-15);
            assert!((d.vertices[b].pos.x - 0.5).abs() < 1e-15);
        }
        assert_eq!(d.cells[0].neighbors, vec![1]);
    }

    #[test]
    fn four_symmetric_seeds_have_quarter_areas() {
        let s = [Point::new(0.25, 0.25), Point::new(0.75, 0.25), Point::new(0.25, 0.75), Point::new(0.75, 0.75)];
        let d = build_diagram(&s, &[5.0; 4], &unit(), Mode::Classical).unwrap();
        for i in 0..4 {
            assert!((d.area(i) - 0.25).abs() < 1e-14);
        }
        // The center is shared by four cells, which is not a generic vertex.
        let err = classify_vertices(&d).unwrap_err();
        assert!(err.to_string().contains("shared by 4 cells"));
    }

    #[test]
    fn equal_weights_give_voronoi_cells() {
        let (s, _) = random_seeds(30, 3);
        let a = build_diagram(&s, &vec![0.0; 30], &unit(), Mode::Classical).unwrap();
        let b = build_diagram(&s, &vec![0.37; 30], &unit(), Mode::Classical).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for i in 0..30 {
            assert!((a.area(i) - b.area(i)).abs() < 1e-13);
        }
        // Nearest-seed membership agrees with the Voronoi cells.
        for _ in 0..2000 {
            let x = Point::new(rng.gen(), rng.gen());
            let near = (0..30).min_by(|&i, &j| (x - s[i]).norm().total_cmp(&(x - s[j]).norm())).unwrap();
            assert!(point_in_cell(&a, near, x, 1e-12));
        }
    }

    fn point_in_cell(d: &PowerDiagram, i: usize, x: Point, tol: f64) -> bool {
        let mut w = 0.0;
        for p in &d.cells[i].pieces {
            if let Piece::Segment { a, b, .. } = p {
                let (pa, pb) = (d.vertices[*a].pos, d.vertices[*b].pos);
                if (pb - pa).perp(&(x - pa)) < -tol * (pb - pa).norm() {
                    return false;
                }
                w += 1.0;
            }
        }
        w > 0.0
    }

    #[test]
    fn area_additivity_classical_and_modified() {
        let (s, w) = random_seeds(40, 11);
        let dom = unit();
        let c = build_diagram(&s, &w, &dom, Mode::Classical).unwrap();
        let total: f64 = c.cells.iter().map(|c| c.area()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        let m = build_diagram(&s, &w, &dom, Mode::Modified).unwrap();
        let total: f64 = m.cells.iter().map(|c| c.area()).sum::<f64>() + m.void_area();
        assert!((total - 1.0).abs() < 1e-10);
        assert!(m.void_area() > 0.0);
    }

    #[test]
    fn edges_are_orthogonal_to_seed_offsets_and_neighbors_symmetric() {
        let (s, w) = random_seeds(50, 5);
        for mode in [Mode::Classical, Mode::Modified] {
            let d = build_diagram(&s, &w, &unit(), mode).unwrap();
            for i in 0..50 {
                for &j in &d.cells[i].neighbors {
                    assert!(d.cells[j].neighbors.contains(&i));
                    for (a, b) in d.shared_edges(i, j) {
                        let e = d.vertices[b].pos - d.vertices[a].pos;
                        let sd = s[j] - s[i];
                        assert!(e.dot(&sd).abs() <= 1e-9 * e.norm() * sd.norm());
                    }
                }
            }
        }
    }

    #[test]
    fn interior_voronoi_vertex_is_three_cells() {
        let s = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(0.0, 1.0)];
        let dom = Domain::rectangle(-10.0, -7.0, 9.0, 10.0, [0; 4]).unwrap();
        let d = build_diagram(&s, &[0.0; 3], &dom, Mode::Classical).unwrap();
        let v: Vec<_> = d.vertices.iter().filter(|v| matches!(v.class, Some(VertexClass::ThreeCells { .. }))).collect();
        assert_eq!(v.len(), 1);
        assert!((v[0].pos - Point::new(0.5, 0.5)).norm() < 1e-14);
        classify_vertices(&d).unwrap();
    }

    #[test]
    fn two_intersecting_balls_give_two_cells_void_vertices() {
        let s = [Point::new(0.4, 0.5), Point::new(0.6, 0.5)];
        let w = [0.02, 0.03];
        let d = build_diagram(&s, &w, &unit(), Mode::Modified).unwrap();
        // Direct solution: bisector x satisfies |x - s0|^2 - w0 = |x - s1|^2 - w1,
        // then y from the first circle.
        let x = (w[0] - w[1] + 0.6f64.powi(2) - 0.4f64.powi(2)) / (2.0 * 0.2);
        let dy = (w[0] - (x - 0.4f64).powi(2)).sqrt();
        let mut found: Vec<Point> = d
            .vertices
            .iter()
            .filter(|v| matches!(v.class, Some(VertexClass::TwoCellsVoid { i: 0, j: 1 })))
            .map(|v| v.pos)
            .collect();
        found.sort_by(|a, b| a.y.total_cmp(&b.y));
        assert_eq!(found.len(), 2);
        assert!((found[0] - Point::new(x, 0.5 - dy)).norm() < 1e-14);
        assert!((found[1] - Point::new(x, 0.5 + dy)).norm() < 1e-14);
        classify_vertices(&d).unwrap();
    }

    #[test]
    fn ball_crossing_the_boundary_gives_cell_void_boundary_vertices() {
        let d = build_diagram(&[Point::new(0.1, 0.5)], &[0.04], &unit(), Mode::Modified).unwrap();
        let v: Vec<_> = d
            .vertices
            .iter()
            .filter(|v| matches!(v.class, Some(VertexClass::CellVoidBoundary { i: 0, edge: 3 })))
            .collect();
        assert_eq!(v.len(), 2);
        // Circle (x - 0.1)^2 + (y - 0.5)^2 = 0.04 meets x = 0 at y = 0.5 +- sqrt(0.03).
        for q in v {
            assert!(q.pos.x.abs() < 1e-15);
            assert!(((q.pos.y - 0.5).abs() - 0.03f64.sqrt()).abs() < 1e-14);
        }
        // Area: disk minus the circular segment beyond x = 0.
        let r = 0.2f64;
        let h = 0.1f64;
        let seg = r * r * (h / r).acos() - h * (r * r - h * h).sqrt();
        assert!((d.area(0) - (PI * r * r - seg)).abs() < 1e-14);
    }

    #[test]
    fn modified_areas_match_monte_carlo() {
        let (s, w) = random_seeds(20, 21);
        let d = build_diagram(&s, &w, &unit(), Mode::Modified).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples = 400_000;
        let mut count = vec![0usize; 20];
        for _ in 0..samples {
            let x = Point::new(rng.gen(), rng.gen());
            let (best, val) =
                (0..20).map(|i| (i, (x - s[i]).norm_squared() - w[i])).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
            if val <= 0.0 {
                count[best] += 1;
            }
        }
        for i in 0..20 {
            let p = d.area(i);
            let est = count[i] as f64 / samples as f64;
            let sigma = (p * (1.0 - p) / samples as f64).sqrt();
            assert!((est - p).abs() <= 4.0 * sigma + 1e-12, "cell {i}: {est} vs {p}");
        }
    }

    #[test]
    fn seeds_outside_the_domain_are_rejected() {
        let err = build_diagram(&[Point::new(1.5, 0.5)], &[0.01], &unit(), Mode::Modified).unwrap_err();
        assert!(err.to_string().contains("outside D"));
    }

    #[test]
    fn translation_with_weight_shift_preserves_cells() {
        let (s, _) = random_seeds(15, 8);
        let dom = Domain::rectangle(-3.0, -3.0, 4.0, 4.0, [0; 4]).unwrap();
        let base = build_diagram(&s, &vec![0.0; 15], &dom, Mode::Classical).unwrap();
        let h = Point::new(0.31, -0.17);
        let moved: Vec<Point> = s.iter().map(|p| p + h).collect();
        let w: Vec<f64> = s.iter().map(|p| 2.0 * p.dot(&h) + h.norm_squared()).collect();
        let shifted = build_diagram(&moved, &w, &dom, Mode::Classical).unwrap();
        let interior = |d: &PowerDiagram| {
            let mut v: Vec<Point> = d
                .vertices
                .iter()
                .filter(|v| matches!(v.class, Some(VertexClass::ThreeCells { .. })))
                .map(|v| v.pos)
                .collect();
            v.sort_by(|a, b| a.x.total_cmp(&b.x));
            v
        };
        let (a, b) = (interior(&base), interior(&shifted));
        assert_eq!(a.len(), b.len());
        for p in &a {
            assert!(b.iter().any(|q| (p - q).norm() < 1e-10));
        }
    }
}
