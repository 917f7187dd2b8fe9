//! Regular (weighted Delaunay) triangulation built by Bowyer-Watson insertion.
//!
//! The triangulation is a triangle soup with neighbor links. Three far-away
//! frame vertices enclose every seed, so the structure never has an outer
//! boundary to special-case. Their weight is the smallest seed weight and their
//! distance grows with the weight spread, which keeps their power cells away
//! from the domain.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

use super::predicates::{orient2d, power_conflict};
use super::Point;
use crate::error::{OttoError, Result};

/// Marker for "no neighbor".
pub const NONE: u32 = u32::MAX;

/// One triangle. `n[k]` is the triangle across the edge opposite `v[k]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tri {
    pub v: [u32; 3],
    pub n: [u32; 3],
}

/// Regular triangulation of weighted seeds plus three frame vertices.
#[derive(Debug, Clone)]
pub struct RegularTriangulation {
    points: Vec<Point>,
    weights: Vec<f64>,
    num_seeds: usize,
    tris: Vec<Tri>,
    alive: Vec<bool>,
    free: Vec<u32>,
    hidden: Vec<bool>,
    last: u32,
}

impl RegularTriangulation {
    /// Inserts all seeds in the given order.
    pub fn new(seeds: &[Point], weights: &[f64]) -> Result<Self> {
        let order: Vec<usize> = (0..seeds.len()).collect();
        Self::with_order(seeds, weights, &order)
    }

    /// Inserts the seeds following `order` (a permutation of `0..N`).
    pub fn with_order(seeds: &[Point], weights: &[f64], order: &[usize]) -> Result<Self> {
        let n = seeds.len();
        if weights.len() != n || order.len() != n {
            return Err(OttoError::InvalidSeeds("seed, weight and order lengths differ".into()));
        }
        if n == 0 {
            return Err(OttoError::InvalidSeeds("no seeds".into()));
        }
        for (i, s) in seeds.iter().enumerate() {
            if !(s.x.is_finite() && s.y.is_finite() && weights[i].is_finite()) {
                return Err(OttoError::InvalidSeeds(format!("seed {i} has a non-finite coordinate or weight")));
            }
        }
        let mut lo = seeds[0];
        let mut hi = seeds[0];
        let mut wmin = weights[0];
        let mut wmax = weights[0];
        for (s, &w) in seeds.iter().zip(weights) {
            lo = Point::new(lo.x.min(s.x), lo.y.min(s.y));
            hi = Point::new(hi.x.max(s.x), hi.y.max(s.y));
            wmin = wmin.min(w);
            wmax = wmax.max(w);
        }
        let c = (lo + hi) * 0.5;
        let l = (hi - lo).norm().max(1e-3) + (wmax - wmin).sqrt();
        let m = 16.0 * l;
        let mut points = seeds.to_vec();
        let mut w = weights.to_vec();
        points.push(Point::new(c.x - m, c.y - m));
        points.push(Point::new(c.x + 3.0 * m, c.y - m));
        points.push(Point::new(c.x - m, c.y + 3.0 * m));
        w.extend_from_slice(&[wmin, wmin, wmin]);
        let f = n as u32;
        let mut t = RegularTriangulation {
            points,
            weights: w,
            num_seeds: n,
            tris: vec![Tri { v: [f, f + 1, f + 2], n: [NONE; 3] }],
            alive: vec![true],
            free: Vec::new(),
            hidden: vec![false; n + 3],
            last: 0,
        };
        let mut seen: HashMap<(u64, u64), usize> = HashMap::with_capacity(n);
        for &i in order {
            if i >= n {
                return Err(OttoError::InvalidSeeds(format!("order entry {i} out of range")));
            }
            let key = (seeds[i].x.to_bits(), seeds[i].y.to_bits());
            if let Some(j) = seen.insert(key, i) {
                return Err(OttoError::InvalidSeeds(format!("seeds {j} and {i} are duplicates")));
            }
            t.insert(i)?;
        }
        Ok(t)
    }

    /// Number of seeds (frame vertices excluded).
    pub fn num_seeds(&self) -> usize {
        self.num_seeds
    }

    /// Whether vertex `i` is a frame vertex.
    pub fn is_frame(&self, i: usize) -> bool {
        i >= self.num_seeds
    }

    /// Seeds whose power cell is empty.
    pub fn hidden(&self) -> &[bool] {
        &self.hidden[..self.num_seeds]
    }

    /// Alive triangles.
    pub fn triangles(&self) -> impl Iterator<Item = &Tri> {
        self.tris.iter().zip(&self.alive).filter(|(_, &a)| a).map(|(t, _)| t)
    }

    /// Sorted seed neighbors of every seed (frame vertices dropped).
    pub fn seed_neighbors(&self) -> Vec<Vec<usize>> {
        let mut nb: Vec<Vec<usize>> = vec![Vec::new(); self.num_seeds];
        for t in self.triangles() {
            for a in 0..3 {
                let i = t.v[a] as usize;
                if self.is_frame(i) {
                    continue;
                }
                for b in 0..3 {
                    let j = t.v[b] as usize;
                    if a != b && !self.is_frame(j) {
                        nb[i].push(j);
                    }
                }
            }
        }
        for l in &mut nb {
            l.sort_unstable();
            l.dedup();
        }
        nb
    }

    /// Whether vertex `i` is adjacent to a frame vertex.
    pub fn touches_frame(&self) -> Vec<bool> {
        let mut out = vec![false; self.num_seeds];
        for t in self.triangles() {
            let has_frame = t.v.iter().any(|&v| self.is_frame(v as usize));
            if has_frame {
                for &v in &t.v {
                    if !self.is_frame(v as usize) {
                        out[v as usize] = true;
                    }
                }
            }
        }
        out
    }

    fn conflict(&self, t: u32, p: usize) -> Result<bool> {
        let tri = self.tris[t as usize].v;
        let ids = [tri[0] as usize, tri[1] as usize, tri[2] as usize, p];
        let s = [self.points[ids[0]], self.points[ids[1]], self.points[ids[2]], self.points[p]];
        let w = [self.weights[ids[0]], self.weights[ids[1]], self.weights[ids[2]], self.weights[p]];
        Ok(power_conflict(s, w, ids)? > 0)
    }

    fn locate(&self, p: Point, rng: &mut ChaCha8Rng) -> u32 {
        let mut t = self.last;
        if !self.alive[t as usize] {
            t = self.alive.iter().position(|&a| a).expect("alive triangle") as u32;
        }
        let cap = 4 * self.tris.len() + 64;
        'walk: for _ in 0..cap {
            let tri = self.tris[t as usize];
            let start = rng.gen_range(0..3);
            for e in 0..3 {
                let k = (start + e) % 3;
                let a = self.points[tri.v[(k + 1) % 3] as usize];
                let b = self.points[tri.v[(k + 2) % 3] as usize];
                if orient2d(a, b, p) < 0 && tri.n[k] != NONE {
                    t = tri.n[k];
                    continue 'walk;
                }
            }
            return t;
        }
        // Exhaustive fallback; never reached for well-formed triangulations.
        for (idx, tri) in self.tris.iter().enumerate() {
            if !self.alive[idx] {
                continue;
            }
            let inside = (0..3).all(|k| {
                let a = self.points[tri.v[(k + 1) % 3] as usize];
                let b = self.points[tri.v[(k + 2) % 3] as usize];
                orient2d(a, b, p) >= 0
            });
            if inside {
                return idx as u32;
            }
        }
        t
    }

    fn insert(&mut self, p: usize) -> Result<()> {
        let mut rng = ChaCha8Rng::seed_from_u64(p as u64);
        let pt = self.points[p];
        let t0 = self.locate(pt, &mut rng);
        if !self.conflict(t0, p)? {
            self.hidden[p] = true;
            return Ok(());
        }
        // Flood fill the conflict zone.
        let mut in_cavity: HashMap<u32, ()> = HashMap::new();
        let mut cavity = vec![t0];
        in_cavity.insert(t0, ());
        let mut stack = vec![t0];
        while let Some(t) = stack.pop() {
            for k in 0..3 {
                let nb = self.tris[t as usize].n[k];
                if nb == NONE || in_cavity.contains_key(&nb) {
                    continue;
                }
                if self.conflict(nb, p)? {
                    in_cavity.insert(nb, ());
                    cavity.push(nb);
                    stack.push(nb);
                }
            }
        }
        // Boundary edges (a, b, outside neighbor) in counterclockwise order.
        let mut boundary: Vec<(u32, u32, u32, u32)> = Vec::new();
        let mut cavity_vertices: Vec<u32> = Vec::new();
        for &t in &cavity {
            let tri = self.tris[t as usize];
            for k in 0..3 {
                cavity_vertices.push(tri.v[k]);
                let nb = tri.n[k];
                if nb == NONE || !in_cavity.contains_key(&nb) {
                    boundary.push((tri.v[(k + 1) % 3], tri.v[(k + 2) % 3], nb, t));
                }
            }
        }
        for &(a, b, _, _) in &boundary {
            if orient2d(self.points[a as usize], self.points[b as usize], pt) <= 0 {
                return Err(OttoError::UnresolvableDegeneracy(format!(
                    "seed {p} is not strictly visible from cavity edge ({a}, {b})"
                )));
            }
        }
        let mut on_boundary: HashMap<u32, ()> = HashMap::new();
        for &(a, b, _, _) in &boundary {
            on_boundary.insert(a, ());
            on_boundary.insert(b, ());
        }
        cavity_vertices.sort_unstable();
        cavity_vertices.dedup();
        for v in cavity_vertices {
            if !on_boundary.contains_key(&v) {
                self.hidden[v as usize] = true;
            }
        }
        for &t in &cavity {
            self.alive[t as usize] = false;
        }
        let mut by_start: HashMap<u32, u32> = HashMap::with_capacity(boundary.len());
        let mut by_end: HashMap<u32, u32> = HashMap::with_capacity(boundary.len());
        let mut created = Vec::with_capacity(boundary.len());
        for &(a, b, out, old) in &boundary {
            let tri = Tri { v: [a, b, p as u32], n: [NONE, NONE, out] };
            let idx = match self.free.pop() {
                Some(i) => {
                    self.tris[i as usize] = tri;
                    self.alive[i as usize] = true;
                    i
                }
                None => {
                    self.tris.push(tri);
                    self.alive.push(true);
                    (self.tris.len() - 1) as u32
                }
            };
            if out != NONE {
                let o = &mut self.tris[out as usize];
                for k in 0..3 {
                    if o.n[k] == old {
                        o.n[k] = idx;
                    }
                }
            }
            by_start.insert(a, idx);
            by_end.insert(b, idx);
            created.push((a, b, idx));
        }
        for &(a, b, idx) in &created {
            // Edge (b, p) is opposite a; the triangle across starts at b.
            let across_bp = *by_start
                .get(&b)
                .ok_or_else(|| OttoError::UnresolvableDegeneracy(format!("open cavity at vertex {b}")))?;
            let across_pa = *by_end
                .get(&a)
                .ok_or_else(|| OttoError::UnresolvableDegeneracy(format!("open cavity at vertex {a}")))?;
            let t = &mut self.tris[idx as usize];
            t.n[0] = across_bp;
            t.n[1] = across_pa;
        }
        // Cavity slots become reusable only now, so that stale links into the
        // cavity can never alias a freshly created triangle above.
        self.free.extend_from_slice(&cavity);
        self.last = created[0].2;
        Ok(())
    }

    /// Checks neighbor links and orientation; used by tests.
    pub fn check(&self) -> Result<()> {
        for (idx, t) in self.tris.iter().enumerate() {
            if !self.alive[idx] {
                continue;
            }
            let [a, b, c] = t.v.map(|v| self.points[v as usize]);
            if orient2d(a, b, c) <= 0 {
                return Err(OttoError::UnresolvableDegeneracy(format!("triangle {idx} is not counterclockwise")));
            }
            for k in 0..3 {
                let nb = t.n[k];
                if nb == NONE {
                    continue;
                }
                if !self.alive[nb as usize] {
                    return Err(OttoError::UnresolvableDegeneracy(format!("triangle {idx} links to a dead triangle")));
                }
                if !self.tris[nb as usize].n.contains(&(idx as u32)) {
                    return Err(OttoError::UnresolvableDegeneracy(format!("asymmetric link {idx} -> {nb}")));
                }
            }
        }
        Ok(())
    }

    /// Checks the regularity condition on every pair of adjacent triangles.
    pub fn is_regular(&self) -> Result<bool> {
        for (idx, t) in self.tris.iter().enumerate() {
            if !self.alive[idx] {
                continue;
            }
            for k in 0..3 {
                let nb = t.n[k];
                if nb == NONE {
                    continue;
                }
                let other = self.tris[nb as usize];
                let opp = other.v.iter().find(|v| !t.v.contains(v)).copied().expect("opposite vertex");
                if self.conflict(idx as u32, opp as usize)? {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}
