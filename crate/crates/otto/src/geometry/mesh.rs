//! Polygonal meshes obtained from diagrams by replacing arcs with chords.

use std::io::{self, BufRead, Write};

use super::diagram::{Constraint, Piece, PowerDiagram, VertexClass};
use super::Point;
use crate::error::{OttoError, Result};

/// What lies across an element edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeTag {
    /// Edge shared with the element of cell `cell`.
    Shared(usize),
    /// Edge on domain edge `edge`, carrying that edge's boundary label.
    Domain { edge: usize, label: i32 },
    /// Free boundary: an arc chord, or an interface with an excluded cell.
    Free,
}

/// A discretized arc: endpoints (absent for a full circle) and interior samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshArc {
    pub cell: usize,
    /// Index of the arc among the arcs of its cell, in walk order.
    pub index: usize,
    pub start: Option<usize>,
    pub end: Option<usize>,
    pub samples: Vec<usize>,
}

/// Polygonal mesh with counterclockwise elements and tagged edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PolyMesh {
    pub vertices: Vec<Point>,
    /// Vertex classes (`None` for non-generic vertices).
    pub classes: Vec<Option<VertexClass>>,
    /// Arc owning each sample vertex.
    pub vertex_arc: Vec<Option<usize>>,
    pub arcs: Vec<MeshArc>,
    pub elements: Vec<Vec<usize>>,
    /// `edge_tags[e][k]` describes the edge from vertex `k` to vertex `k + 1` of element `e`.
    pub edge_tags: Vec<Vec<EdgeTag>>,
    /// Diagram cell of each element.
    pub element_cell: Vec<usize>,
}

impl PolyMesh {
    /// Number of elements.
    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    /// Number of vertices.
    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    /// Coordinates of the vertices of element `e`.
    pub fn element_points(&self, e: usize) -> Vec<Point> {
        self.elements[e].iter().map(|&v| self.vertices[v]).collect()
    }

    /// Signed area of element `e`.
    pub fn element_area(&self, e: usize) -> f64 {
        polygon_area(&self.element_points(e))
    }

    /// Total area.
    pub fn area(&self) -> f64 {
        (0..self.num_elements()).map(|e| self.element_area(e)).sum()
    }

    /// Element index of every diagram cell (`None` for cells without element).
    pub fn cell_element(&self, num_cells: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; num_cells];
        for (e, &c) in self.element_cell.iter().enumerate() {
            out[c] = Some(e);
        }
        out
    }

    /// Keeps the elements whose cell satisfies `keep`; edges towards removed
    /// cells become free boundary and unused vertices are dropped.
    pub fn restrict(&self, keep: &[bool]) -> PolyMesh {
        let mut map = vec![usize::MAX; self.vertices.len()];
        let mut out = PolyMesh {
            vertices: Vec::new(),
            classes: Vec::new(),
            vertex_arc: Vec::new(),
            arcs: Vec::new(),
            elements: Vec::new(),
            edge_tags: Vec::new(),
            element_cell: Vec::new(),
        };
        let mut arc_map = vec![usize::MAX; self.arcs.len()];
        for (e, el) in self.elements.iter().enumerate() {
            let cell = self.element_cell[e];
            if !keep[cell] {
                continue;
            }
            let mut nel = Vec::with_capacity(el.len());
            for &v in el {
                if map[v] == usize::MAX {
                    map[v] = out.vertices.len();
                    out.vertices.push(self.vertices[v]);
                    out.classes.push(self.classes[v]);
                    out.vertex_arc.push(self.vertex_arc[v]);
                }
                nel.push(map[v]);
            }
            let tags = self.edge_tags[e]
                .iter()
                .map(|t| match *t {
                    EdgeTag::Shared(c) if !keep[c] => EdgeTag::Free,
                    other => other,
                })
                .collect();
            out.elements.push(nel);
            out.edge_tags.push(tags);
            out.element_cell.push(cell);
        }
        for (k, arc) in self.arcs.iter().enumerate() {
            if keep[arc.cell] {
                arc_map[k] = out.arcs.len();
                out.arcs.push(MeshArc {
                    cell: arc.cell,
                    index: arc.index,
                    start: arc.start.map(|v| map[v]),
                    end: arc.end.map(|v| map[v]),
                    samples: arc.samples.iter().map(|&v| map[v]).collect(),
                });
            }
        }
        for a in out.vertex_arc.iter_mut() {
            *a = a.map(|k| arc_map[k]);
        }
        out
    }

    /// Builds a mesh from counterclockwise element vertex lists. Interior edges
    /// are matched between elements; a boundary edge `a -> b` is tagged with
    /// `boundary(q_a, q_b)` as `(domain edge, label)`, or `Free` when that
    /// returns `None`. Each element is its own cell and vertices carry no class.
    pub fn from_elements(
        vertices: Vec<Point>,
        elements: Vec<Vec<usize>>,
        boundary: impl Fn(Point, Point) -> Option<(usize, i32)>,
    ) -> PolyMesh {
        let mut owner = std::collections::HashMap::new();
        for (e, el) in elements.iter().enumerate() {
            let n = el.len();
            for k in 0..n {
                owner.insert((el[k], el[(k + 1) % n]), e);
            }
        }
        let edge_tags = elements
            .iter()
            .map(|el| {
                let n = el.len();
                (0..n)
                    .map(|k| {
                        let (a, b) = (el[k], el[(k + 1) % n]);
                        match owner.get(&(b, a)) {
                            Some(&f) => EdgeTag::Shared(f),
                            None => match boundary(vertices[a], vertices[b]) {
                                Some((edge, label)) => EdgeTag::Domain { edge, label },
                                None => EdgeTag::Free,
                            },
                        }
                    })
                    .collect()
            })
            .collect();
        let nv = vertices.len();
        PolyMesh {
            classes: vec![None; nv],
            vertex_arc: vec![None; nv],
            arcs: Vec::new(),
            element_cell: (0..elements.len()).collect(),
            vertices,
            elements,
            edge_tags,
        }
    }

    /// Boundary edges `(a, b, element, local index)` oriented counterclockwise
    /// around the mesh: edges that belong to a single element.
    pub fn boundary_edges(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut out = Vec::new();
        for (e, el) in self.elements.iter().enumerate() {
            let n = el.len();
            for k in 0..n {
                if !matches!(self.edge_tags[e][k], EdgeTag::Shared(_)) {
                    out.push((el[k], el[(k + 1) % n], e, k));
                }
            }
        }
        out
    }
}

/// Signed polygon area by the shoelace formula.
pub fn polygon_area(p: &[Point]) -> f64 {
    let n = p.len();
    let mut a = 0.0;
    for k in 0..n {
        let (u, v) = (p[k], p[(k + 1) % n]);
        a += u.x * v.y - u.y * v.x;
    }
    0.5 * a
}

/// Angle in `(0, 2 pi)` from `u0` to `u1`, through the half-angle cotangent.
pub fn arc_angle(u0: Point, u1: Point) -> f64 {
    let a = u0 / u0.norm();
    let b = u1 / u1.norm();
    let c = a.dot(&b);
    let s = a.x * b.y - a.y * b.x;
    if s == 0.0 {
        return if c < 0.0 { std::f64::consts::PI } else { std::f64::consts::TAU };
    }
    std::f64::consts::PI - 2.0 * ((1.0 + c) / s).atan()
}

/// Replaces every arc of a modified diagram by `n_arc` chords.
///
/// Full circles use `max(n_arc, 3)` chords so that the element stays a polygon.
pub fn discretize_arcs(d: &PowerDiagram, n_arc: usize) -> Result<PolyMesh> {
    if n_arc < 1 {
        return Err(OttoError::InvalidArgument("n_arc must be at least 1".into()));
    }
    let mut mesh = PolyMesh {
        vertices: d.vertices.iter().map(|v| v.pos).collect(),
        classes: d.vertices.iter().map(|v| v.class).collect(),
        vertex_arc: vec![None; d.vertices.len()],
        arcs: Vec::new(),
        elements: Vec::new(),
        edge_tags: Vec::new(),
        element_cell: Vec::new(),
    };
    let labels = d.domain.labels();
    for (i, cell) in d.cells.iter().enumerate() {
        if cell.empty {
            continue;
        }
        let s = d.seeds[i];
        let mut el = Vec::new();
        let mut tags = Vec::new();
        let mut arc_index = 0;
        for piece in &cell.pieces {
            match *piece {
                Piece::Segment { a, on, .. } => {
                    el.push(a);
                    tags.push(match on {
                        Constraint::Bisector(j) => EdgeTag::Shared(j),
                        Constraint::Domain(k) => EdgeTag::Domain { edge: k, label: labels[k] },
                        Constraint::Circle => EdgeTag::Free,
                    });
                }
                Piece::Arc { a, b, .. } => {
                    let u0 = mesh.vertices[a] - s;
                    let u1 = mesh.vertices[b] - s;
                    let alpha = arc_angle(u0, u1);
                    let perp = Point::new(-u0.y, u0.x);
                    let arc_id = mesh.arcs.len();
                    let mut samples = Vec::with_capacity(n_arc.saturating_sub(1));
                    el.push(a);
                    tags.push(EdgeTag::Free);
                    for r in 1..n_arc {
                        let t = r as f64 / n_arc as f64;
                        let q = s + u0 * (t * alpha).cos() + perp * (t * alpha).sin();
                        let id = mesh.vertices.len();
                        mesh.vertices.push(q);
                        mesh.classes.push(Some(VertexClass::ArcSample { i, arc: arc_index, t }));
                        mesh.vertex_arc.push(Some(arc_id));
                        samples.push(id);
                        el.push(id);
                        tags.push(EdgeTag::Free);
                    }
                    mesh.arcs.push(MeshArc { cell: i, index: arc_index, start: Some(a), end: Some(b), samples });
                    arc_index += 1;
                }
                Piece::Circle => {
                    let n = n_arc.max(3);
                    let r = d.weights[i].sqrt();
                    let arc_id = mesh.arcs.len();
                    let mut samples = Vec::with_capacity(n);
                    for k in 0..n {
                        let t = k as f64 / n as f64;
                        let ang = std::f64::consts::TAU * t;
                        let q = s + Point::new(r * ang.cos(), r * ang.sin());
                        let id = mesh.vertices.len();
                        mesh.vertices.push(q);
                        mesh.classes.push(Some(VertexClass::ArcSample { i, arc: 0, t }));
                        mesh.vertex_arc.push(Some(arc_id));
                        samples.push(id);
                        el.push(id);
                        tags.push(EdgeTag::Free);
                    }
                    mesh.arcs.push(MeshArc { cell: i, index: 0, start: None, end: None, samples });
                }
            }
        }
        mesh.elements.push(el);
        mesh.edge_tags.push(tags);
        mesh.element_cell.push(i);
    }
    Ok(mesh)
}

/// Polygonal mesh of a diagram: classical diagrams have no arcs, so this is
/// the cell complex itself; modified diagrams use `n_arc` chords per arc.
pub fn diagram_mesh(d: &PowerDiagram, n_arc: usize) -> Result<PolyMesh> {
    discretize_arcs(d, n_arc)
}

fn class_code(c: &Option<VertexClass>) -> String {
    let Some(c) = c else {
        return "XX".to_string();
    };
    match *c {
        VertexClass::ThreeCells { i, j, k } => format!("3C:{i}:{j}:{k}"),
        VertexClass::TwoCellsVoid { i, j } => format!("2V:{i}:{j}"),
        VertexClass::ArcSample { i, arc, t } => format!("AS:{i}:{arc}:{t}"),
        VertexClass::TwoCellsBoundary { i, j, edge } => format!("2B:{i}:{j}:{edge}"),
        VertexClass::CellVoidBoundary { i, edge } => format!("1B:{i}:{edge}"),
        VertexClass::DomainCorner { i, corner } => format!("DC:{i}:{corner}"),
    }
}

/// Writes the ASCII polygon dump: a header `N M`, one line `s_x s_y psi nu`
/// per seed, one line `q_x q_y class` per vertex, then one line
/// `k v1 ... vk flags` per seed (k = 0 for seeds without element). The flag
/// field holds bit 0 for an element with free edges and bit 1 for an element
/// touching the domain boundary.
pub fn write_poly<W: Write>(
    w: &mut W,
    mesh: &PolyMesh,
    seeds: &[Point],
    weights: &[f64],
    measures: &[f64],
) -> io::Result<()> {
    let n = seeds.len();
    writeln!(w, "{} {}", n, mesh.vertices.len())?;
    for i in 0..n {
        writeln!(w, "{:.17e} {:.17e} {:.17e} {:.17e}", seeds[i].x, seeds[i].y, weights[i], measures[i])?;
    }
    for (q, c) in mesh.vertices.iter().zip(&mesh.classes) {
        writeln!(w, "{:.17e} {:.17e} {}", q.x, q.y, class_code(c))?;
    }
    let elem = mesh.cell_element(n);
    for e in elem.iter() {
        match e {
            None => writeln!(w, "0 0")?,
            Some(e) => {
                let el = &mesh.elements[*e];
                let mut flags = 0u32;
                for t in &mesh.edge_tags[*e] {
                    match t {
                        EdgeTag::Free => flags |= 1,
                        EdgeTag::Domain { .. } => flags |= 2,
                        EdgeTag::Shared(_) => {}
                    }
                }
                let ids: Vec<String> = el.iter().map(|v| v.to_string()).collect();
                writeln!(w, "{} {} {}", el.len(), ids.join(" "), flags)?;
            }
        }
    }
    Ok(())
}

/// Contents of a polygon dump written by [`write_poly`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolyDump {
    pub seeds: Vec<Point>,
    pub weights: Vec<f64>,
    pub measures: Vec<f64>,
    pub vertices: Vec<Point>,
    /// Vertex class codes as written (`3C:i:j:k`, `AS:i:arc:t`, ...).
    pub classes: Vec<String>,
    /// Per seed: element vertex ids and flag bits, or `None` for no element.
    pub elements: Vec<Option<(Vec<usize>, u32)>>,
}

impl PolyDump {
    /// Signed area of the element of seed `i` (zero without element).
    pub fn element_area(&self, i: usize) -> f64 {
        self.elements[i].as_ref().map_or(0.0, |(ids, _)| {
            let pts: Vec<Point> = ids.iter().map(|&v| self.vertices[v]).collect();
            polygon_area(&pts)
        })
    }

    /// Checks that all values are finite, vertex ids are in range, every
    /// element has at least three distinct vertices and positive area.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OttoError::InvalidArgument(m));
        let finite = |p: &Point| p.x.is_finite() && p.y.is_finite();
        if !self.seeds.iter().all(finite) || !self.vertices.iter().all(finite) {
            return bad("non-finite coordinate".into());
        }
        if !self.weights.iter().chain(&self.measures).all(|v| v.is_finite()) {
            return bad("non-finite weight or measure".into());
        }
        for (i, el) in self.elements.iter().enumerate() {
            let Some((ids, _)) = el else { continue };
            if ids.len() < 3 || ids.iter().any(|&v| v >= self.vertices.len()) {
                return bad(format!("element {i} has invalid vertex ids"));
            }
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != ids.len() {
                return bad(format!("element {i} repeats a vertex"));
            }
            if self.element_area(i) <= 0.0 {
                return bad(format!("element {i} has non-positive area"));
            }
        }
        Ok(())
    }
}

/// Parses a polygon dump written by [`write_poly`].
pub fn read_poly<R: BufRead>(r: R) -> Result<PolyDump> {
    let mut lines = r.lines();
    let mut line_no = 0usize;
    let mut next = || -> Result<Vec<String>> {
        line_no += 1;
        match lines.next() {
            Some(Ok(l)) => Ok(l.split_whitespace().map(str::to_string).collect()),
            Some(Err(e)) => Err(OttoError::InvalidArgument(format!("line {line_no}: {e}"))),
            None => Err(OttoError::InvalidArgument(format!("line {line_no}: unexpected end of dump"))),
        }
    };
    fn num<T: std::str::FromStr>(t: &[String], k: usize) -> Result<T> {
        t.get(k)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| OttoError::InvalidArgument(format!("bad field {k} in `{}`", t.join(" "))))
    }
    let head = next()?;
    let (n, m): (usize, usize) = (num(&head, 0)?, num(&head, 1)?);
    let mut dump = PolyDump {
        seeds: Vec::with_capacity(n),
        weights: Vec::with_capacity(n),
        measures: Vec::with_capacity(n),
        vertices: Vec::with_capacity(m),
        classes: Vec::with_capacity(m),
        elements: Vec::with_capacity(n),
    };
    for _ in 0..n {
        let t = next()?;
        dump.seeds.push(Point::new(num(&t, 0)?, num(&t, 1)?));
        dump.weights.push(num(&t, 2)?);
        dump.measures.push(num(&t, 3)?);
    }
    for _ in 0..m {
        let t = next()?;
        dump.vertices.push(Point::new(num(&t, 0)?, num(&t, 1)?));
        dump.classes.push(t.get(2).cloned().unwrap_or_default());
    }
    for _ in 0..n {
        let t = next()?;
        let k: usize = num(&t, 0)?;
        if k == 0 {
            dump.elements.push(None);
            continue;
        }
        let ids = (1..=k).map(|j| num(&t, j)).collect::<Result<Vec<usize>>>()?;
        dump.elements.push(Some((ids, num(&t, k + 1)?)));
    }
    Ok(dump)
}
