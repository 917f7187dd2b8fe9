//! Diagram maintenance between optimization iterations: Lloyd smoothing at
//! fixed cell measures, resampling of the number of cells, and removal of
//! material components not attached to a labelled boundary.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{OttoError, Result};
use crate::geometry::{Constraint, Domain, Mode, Piece, Point, PowerDiagram};
use crate::sdot::{newton_solve, solve_weights, NewtonOptions};

/// Parameters of the measure-constrained Lloyd iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LloydConfig {
    /// Relaxation `alpha` in `(0, 1)`: seeds move to `(1 - alpha) s + alpha c`.
    pub alpha: f64,
    pub max_iter: usize,
    /// Stop once every centroid is closer than this to its seed; `None`
    /// means `1e-3 * sqrt(mean nu)`.
    pub tol: Option<f64>,
}

impl Default for LloydConfig {
    fn default() -> Self {
        LloydConfig { alpha: 0.5, max_iter: 20, tol: None }
    }
}

/// Output of [`lloyd_smooth`].
#[derive(Debug, Clone)]
pub struct LloydResult {
    pub seeds: Vec<Point>,
    pub psi: Vec<f64>,
    pub diagram: PowerDiagram,
    pub iterations: usize,
    /// Largest centroid displacement `max_i |c_i - s_i|` of the final diagram.
    pub displacement: f64,
}

fn max_displacement(d: &PowerDiagram) -> f64 {
    (0..d.len()).map(|i| (d.centroid(i) - d.seeds[i]).norm()).fold(0.0, f64::max)
}

/// Newton solve warm-started from `psi`, falling back to the default
/// initial weights when the warm start fails.
pub fn resolve_weights(
    s: &[Point],
    nu: &[f64],
    psi: &[f64],
    domain: &Domain,
    mode: Mode,
    opts: &NewtonOptions,
) -> Result<crate::sdot::NewtonResult> {
    match newton_solve(s, nu, psi, domain, mode, opts) {
        Ok(r) => Ok(r),
        Err(_) => solve_weights(s, nu, domain, mode, opts),
    }
}

/// Lloyd iteration with prescribed cell measures: seeds move towards the
/// centroids of their cells and the weights are re-solved after each move.
/// `psi` must realize `nu` for `s` (it is used as the Newton warm start).
pub fn lloyd_smooth(
    s: &[Point],
    nu: &[f64],
    psi: &[f64],
    domain: &Domain,
    mode: Mode,
    cfg: &LloydConfig,
    opts: &NewtonOptions,
) -> Result<LloydResult> {
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(OttoError::InvalidArgument(format!("Lloyd relaxation {} outside (0, 1)", cfg.alpha)));
    }
    let mean = nu.iter().sum::<f64>() / nu.len().max(1) as f64;
    let tol = cfg.tol.unwrap_or(1e-3 * mean.sqrt());
    let mut res = resolve_weights(s, nu, psi, domain, mode, opts)?;
    let mut seeds = s.to_vec();
    let mut iterations = 0;
    loop {
        let disp = max_displacement(&res.diagram);
        if disp < tol || iterations >= cfg.max_iter {
            return Ok(LloydResult { seeds, psi: res.psi, diagram: res.diagram, iterations, displacement: disp });
        }
        let next: Vec<Point> =
            (0..seeds.len()).map(|i| seeds[i] * (1.0 - cfg.alpha) + res.diagram.centroid(i) * cfg.alpha).collect();
        res = resolve_weights(&next, nu, &res.psi, domain, mode, opts)?;
        seeds = next;
        iterations += 1;
    }
}

/// Cells on the boundary of the shape: cells bearing an arc, or having a
/// neighbour outside the material set.
pub fn shape_boundary_cells(d: &PowerDiagram, material: &[bool]) -> Vec<bool> {
    (0..d.len())
        .map(|i| {
            let c = &d.cells[i];
            material[i] && (c.arcs().next().is_some() || c.neighbors.iter().any(|&j| !material[j]))
        })
        .collect()
}

/// Graph distance (through neighbour edges) from every cell to the nearest
/// marked cell; `usize::MAX` when unreachable.
pub fn graph_distance(d: &PowerDiagram, marked: &[bool]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; d.len()];
    let mut queue = VecDeque::new();
    for (i, &m) in marked.iter().enumerate() {
        if m {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &j in &d.cells[i].neighbors {
            if dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    dist
}

/// Output of [`resample`]: the new configuration, with weights usable as a
/// Newton warm start.
#[derive(Debug, Clone, PartialEq)]
pub struct Resampled {
    pub seeds: Vec<Point>,
    pub measures: Vec<f64>,
    pub weights: Vec<f64>,
    pub material: Vec<bool>,
    pub added: usize,
    pub removed: usize,
}

/// Adjusts the number of material cells towards `Vol / nu_target`, where
/// `Vol` is the total measure of the material cells. Seeds are added in the
/// largest interior cells (new measure `nu_target`, removed equally from the
/// split cell and its material neighbours) and deleted from the smallest
/// interior cells (measure split equally among material neighbours). Only
/// cells at graph distance at least 2 from the shape boundary are touched.
pub fn resample(d: &PowerDiagram, nu: &[f64], material: &[bool], nu_target: f64, rng_seed: u64) -> Result<Resampled> {
    let n = d.len();
    if nu.len() != n || material.len() != n {
        return Err(OttoError::InvalidArgument("measure or phase count differs from cell count".into()));
    }
    if !(nu_target > 0.0) {
        return Err(OttoError::InvalidArgument(format!("target mean measure {nu_target} must be positive")));
    }
    let vol: f64 = (0..n).filter(|&i| material[i]).map(|i| nu[i]).sum();
    let current = material.iter().filter(|&&m| m).count();
    let wanted = (vol / nu_target).round() as i64;
    if wanted < 1 {
        return Err(OttoError::InvalidArgument(format!("resampling asks for {wanted} cells")));
    }
    let mut out = Resampled {
        seeds: d.seeds.clone(),
        measures: nu.to_vec(),
        weights: d.weights.clone(),
        material: material.to_vec(),
        added: 0,
        removed: 0,
    };
    let diff = wanted - current as i64;
    if diff.abs() <= 1 {
        return Ok(out);
    }
    let boundary = shape_boundary_cells(d, material);
    let dist = graph_distance(d, &boundary);
    let mut eligible: Vec<usize> = (0..n).filter(|&i| material[i] && dist[i] >= 2).collect();
    let mut used = vec![false; n];
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let jitter = 0.05 * nu_target.sqrt();
    let mut remove = vec![false; n];
    if diff > 0 {
        eligible.sort_by(|&a, &b| nu[b].total_cmp(&nu[a]).then(a.cmp(&b)));
        for &i in &eligible {
            if out.added as i64 >= diff {
                break;
            }
            if used[i] {
                continue;
            }
            let group: Vec<usize> =
                std::iter::once(i).chain(d.cells[i].neighbors.iter().copied().filter(|&j| material[j])).collect();
            let share = nu_target / group.len() as f64;
            if group.iter().any(|&j| used[j] || out.measures[j] - share < 0.1 * nu_target) {
                continue;
            }
            for &j in &group {
                out.measures[j] -= share;
                used[j] = true;
            }
            let c = d.centroid(i);
            let mut p = c + Point::new(rng.gen_range(-jitter..jitter), rng.gen_range(-jitter..jitter));
            if d.domain.phi(p) > 0.0 || (p - d.seeds[i]).norm() < 1e-9 {
                p = 0.5 * (c + d.seeds[i]);
            }
            out.seeds.push(p);
            out.measures.push(nu_target);
            out.weights.push(d.weights[i]);
            out.material.push(true);
            out.added += 1;
        }
    } else {
        eligible.sort_by(|&a, &b| nu[a].total_cmp(&nu[b]).then(a.cmp(&b)));
        for &i in &eligible {
            if out.removed as i64 >= -diff {
                break;
            }
            if used[i] {
                continue;
            }
            let nbrs: Vec<usize> = d.cells[i].neighbors.iter().copied().filter(|&j| material[j]).collect();
            if nbrs.is_empty() || nbrs.iter().any(|&j| used[j]) {
                continue;
            }
            let share = nu[i] / nbrs.len() as f64;
            for &j in &nbrs {
                out.measures[j] += share;
                used[j] = true;
            }
            used[i] = true;
            remove[i] = true;
            out.removed += 1;
        }
        let keep: Vec<usize> = (0..n).filter(|&i| !remove[i]).collect();
        out.seeds = keep.iter().map(|&i| out.seeds[i]).collect();
        out.measures = keep.iter().map(|&i| out.measures[i]).collect();
        out.weights = keep.iter().map(|&i| out.weights[i]).collect();
        out.material = keep.iter().map(|&i| out.material[i]).collect();
    }
    Ok(out)
}

/// Cells owning a straight boundary piece on a domain edge labelled `label`.
pub fn anchor_cells(d: &PowerDiagram, label: i32) -> Vec<usize> {
    let labels = d.domain.labels();
    (0..d.len())
        .filter(|&i| {
            d.cells[i].pieces.iter().any(|p| {
                matches!(p, Piece::Segment { on: Constraint::Domain(k), a, b }
                    if labels[*k] == label && (d.vertices[*a].pos - d.vertices[*b].pos).norm() > 0.0)
            })
        })
        .collect()
}

/// Material cells connected to the anchor cells (material cells touching the
/// boundary label `anchor_label`) through neighbour edges of positive length.
/// Returns the sorted list of kept cells.
pub fn remove_islands(d: &PowerDiagram, material: &[bool], anchor_label: i32) -> Result<Vec<usize>> {
    let anchors: Vec<usize> = anchor_cells(d, anchor_label).into_iter().filter(|&i| material[i]).collect();
    if anchors.is_empty() {
        return Err(OttoError::EmptyAnchorSet(format!("no material cell touches label {anchor_label}")));
    }
    let mut seen = vec![false; d.len()];
    let mut queue: VecDeque<usize> = anchors.into_iter().collect();
    for &i in &queue {
        seen[i] = true;
    }
    while let Some(i) = queue.pop_front() {
        for &j in &d.cells[i].neighbors {
            if material[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    Ok((0..d.len()).filter(|&i| seen[i]).collect())
}
