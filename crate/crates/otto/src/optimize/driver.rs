//! Outer optimization loop: weights by Newton, diagram maintenance, state
//! and adjoint solves, and alternating descent on seeds and measures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diagram_ops::{
    graph_distance, lloyd_smooth, remove_islands, resample, resolve_weights, shape_boundary_cells, LloydConfig,
};
use crate::error::{OttoError, Result};
use crate::functionals::{
    eigenvalue_vertex_gradient, geometric_value_and_grad, pde_value, topological_derivative_field, FunctionalKind,
    Material, PdeProblem, PdeState,
};
use crate::geometry::{
    diagram_mesh, Constraint, Domain, EdgeTag, Mode, Piece, Point, PolyMesh, PowerDiagram, LABEL_FREE,
};
use crate::sdot::{init_weights, kantorovich_eval, NewtonOptions};
use crate::sensitivity::{pde_vertex_gradient, transfer_to_design, vertex_jacobians, DesignGradient, GradientOptions};

use super::hilbert::{boundary_normals, mean_neighbor_distance, neighbor_graph, HilbertProducts, SeedConstraint};
use super::nullspace::{merit_accept, nullspace_step, StepOutcome, StepRates};

/// Physical model attached to the objective.
#[derive(Debug, Clone, PartialEq)]
pub enum Physics {
    /// Purely geometric functionals (volume, perimeter).
    Geometric,
    /// Dirichlet eigenvalues of the Laplacian on the material region, with
    /// homogeneous conditions on its whole boundary.
    Eigen,
    /// Two-phase conductivity `(γ_void, γ_material)` with a scalar source
    /// and scalar Neumann fluxes.
    Conduction { gamma: (f64, f64), source: f64, dirichlet: Vec<i32>, neumann: Vec<(i32, f64)> },
    /// Linear elasticity with Lamé pair `lame` on the material; void cells
    /// get `ersatz · lame`.
    Elasticity { lame: (f64, f64), ersatz: f64, source: Point, dirichlet: Vec<i32>, neumann: Vec<(i32, Point)> },
}

/// Optimization problem: minimize `objective` subject to an optional
/// volume constraint `Σ_{material} ν_i = V_T`.
#[derive(Debug, Clone, PartialEq)]
pub struct OptProblem {
    pub domain: Domain,
    pub mode: Mode,
    pub objective: FunctionalKind,
    pub physics: Physics,
    pub volume_target: Option<f64>,
    /// Boundary label to which material must stay connected; `None` keeps
    /// the largest connected component instead.
    pub anchor_label: Option<i32>,
}

/// Step rates of the seed and measure updates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentRates {
    pub a_js: f64,
    pub a_gs: f64,
    pub a_jnu: f64,
    pub a_gnu: f64,
}

impl Default for DescentRates {
    fn default() -> Self {
        DescentRates { a_js: 0.5, a_gs: 0.5, a_jnu: 0.25, a_gnu: 0.25 }
    }
}

/// Settings of [`run`]. Cadences of `0` disable the operation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptParams {
    pub iterations: usize,
    pub rates: DescentRates,
    /// Regularization length `α` in units of the mean neighbour distance `h_av`.
    pub alpha_factor: f64,
    pub seed_constraint: SeedConstraint,
    pub update_seeds: bool,
    pub update_measures: bool,
    /// Chords per arc in the meshes.
    pub n_arc: usize,
    pub lloyd_every: usize,
    pub resample_every: usize,
    pub islands_every: usize,
    pub topo_every: usize,
    /// Fraction of the cells switched to void by one topological step.
    pub topo_fraction: f64,
    pub max_halvings: usize,
    /// Lower bound on the measures, relative to the mean measure.
    pub nu_floor: f64,
    /// Newton tolerance relative to the smallest measure.
    pub newton_rel_tol: f64,
    pub rng_seed: u64,
}

impl Default for OptParams {
    fn default() -> Self {
        OptParams {
            iterations: 100,
            rates: DescentRates::default(),
            alpha_factor: 2.0,
            seed_constraint: SeedConstraint::Kkt,
            update_seeds: true,
            update_measures: true,
            n_arc: 2,
            lloyd_every: 0,
            resample_every: 0,
            islands_every: 0,
            topo_every: 0,
            topo_fraction: 0.005,
            max_halvings: super::nullspace::MAX_HALVINGS,
            nu_floor: 0.1,
            newton_rel_tol: 1e-6,
            rng_seed: 0,
        }
    }
}

/// Design variables with the current weights and phases.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub seeds: Vec<Point>,
    pub measures: Vec<f64>,
    /// Weights realizing the measures (a Newton warm start).
    pub weights: Vec<f64>,
    /// Phase of each cell (all `true` for free-boundary designs).
    pub material: Vec<bool>,
}

impl Design {
    /// Design with default initial weights.
    pub fn new(seeds: Vec<Point>, measures: Vec<f64>, material: Vec<bool>, domain: &Domain, mode: Mode) -> Self {
        let weights = init_weights(&seeds, &measures, domain, mode);
        Design { seeds, measures, weights, material }
    }

    /// Number of cells.
    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    /// Whether the design has no cells.
    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }

    /// Total measure of the material cells.
    pub fn volume(&self) -> f64 {
        self.measures.iter().zip(&self.material).filter(|(_, &m)| m).map(|(v, _)| v).sum()
    }
}

/// Objective, state and diagram at a design.
pub struct Evaluation {
    pub design: Design,
    pub diagram: PowerDiagram,
    pub mesh: PolyMesh,
    pub newton_iters: usize,
    pub objective: f64,
    /// Volume constraint value `Vol − V_T` (0 without constraint).
    pub constraint: f64,
    data: EvalData,
}

enum EvalData {
    Geometric(Vec<Point>),
    Eigen { lambda: f64, u: Vec<f64>, neighbors: Vec<f64> },
    Pde { problem: Box<PdeProblem>, state: PdeState },
}

/// Kind of a descent substep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubstepKind {
    Seeds,
    Measures,
}

/// One seed or measure update with the merit before and after it. Both
/// merits use the coefficients of the substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Substep {
    pub kind: SubstepKind,
    pub outcome: StepOutcome,
    pub merit_before: f64,
    pub merit_after: f64,
    /// Largest change of a seed coordinate or measure.
    pub max_change: f64,
    /// Bound `(A_J + A_G)·scale` on that change.
    pub change_bound: f64,
}

/// Per-iteration record.
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub objective: f64,
    pub constraint_violation: f64,
    pub merit: f64,
    pub n: usize,
    pub newton_iters: usize,
    pub accepted: bool,
    pub substeps: Vec<Substep>,
}

impl IterRecord {
    /// CSV header of [`IterRecord::csv_row`].
    pub const CSV_HEADER: &'static str = "iter,objective,constraint_violation,merit,N,newton_iters,accepted";

    /// CSV row.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{},{},{}",
            self.iter,
            self.objective,
            self.constraint_violation,
            self.merit,
            self.n,
            self.newton_iters,
            u8::from(self.accepted)
        )
    }
}

/// Read-only view handed to the observer after every iteration.
pub struct Snapshot<'a> {
    pub record: &'a IterRecord,
    pub evaluation: &'a Evaluation,
}

/// Result of [`run`].
pub struct OptOutcome {
    pub history: Vec<IterRecord>,
    pub last: Evaluation,
    /// Set when an iteration rejected every substep and nothing else could
    /// change the design any more.
    pub stalled: bool,
}

fn wrap<T>(iter: usize, r: Result<T>) -> Result<T> {
    r.map_err(|e| OttoError::Iteration { iter, source: Box::new(e) })
}

/// Labels of the domain edges present in the mesh.
fn mesh_labels(mesh: &PolyMesh) -> Vec<i32> {
    let mut labels: Vec<i32> = mesh
        .edge_tags
        .iter()
        .flatten()
        .filter_map(|t| match t {
            EdgeTag::Domain { label, .. } => Some(*label),
            EdgeTag::Free => Some(LABEL_FREE),
            EdgeTag::Shared(_) => None,
        })
        .collect();
    labels.sort_unstable();
    labels.dedup();
    labels
}

/// State problem of `physics` on `mesh`.
pub fn pde_problem(problem: &OptProblem, mesh: &PolyMesh, material: &[bool]) -> Option<PdeProblem> {
    let reference_area = problem.domain.area();
    match &problem.physics {
        Physics::Geometric | Physics::Eigen => None,
        Physics::Conduction { gamma, source, dirichlet, neumann } => Some(PdeProblem {
            material: Material::Conduction(
                mesh.element_cell.iter().map(|&c| if material[c] { gamma.1 } else { gamma.0 }).collect(),
            ),
            source: Point::new(*source, 0.0),
            dirichlet: dirichlet.clone(),
            neumann: neumann.iter().map(|&(l, g)| (l, Point::new(g, 0.0))).collect(),
            reference_area,
        }),
        Physics::Elasticity { lame, ersatz, source, dirichlet, neumann } => Some(PdeProblem {
            material: Material::Elasticity(
                mesh.element_cell
                    .iter()
                    .map(|&c| if material[c] { *lame } else { (ersatz * lame.0, ersatz * lame.1) })
                    .collect(),
            ),
            source: *source,
            dirichlet: dirichlet.clone(),
            neumann: neumann.clone(),
            reference_area,
        }),
    }
}

/// Solves the weights of `design`, meshes the diagram and evaluates the
/// objective and the volume constraint.
pub fn evaluate(problem: &OptProblem, params: &OptParams, design: &Design) -> Result<Evaluation> {
    let min_nu = design.measures.iter().copied().fold(f64::INFINITY, f64::min);
    let opts = NewtonOptions { tol: Some(params.newton_rel_tol * min_nu), ..Default::default() };
    let res = resolve_weights(&design.seeds, &design.measures, &design.weights, &problem.domain, problem.mode, &opts)?;
    let mut design = design.clone();
    design.weights = res.psi;
    let diagram = res.diagram;
    let full = diagram_mesh(&diagram, params.n_arc)?;
    let mesh = match (&problem.physics, problem.mode) {
        (Physics::Geometric | Physics::Eigen, Mode::Classical) => full.restrict(&design.material),
        _ => full,
    };
    let constraint = problem.volume_target.map_or(0.0, |vt| design.volume() - vt);
    let (objective, data) = match &problem.physics {
        Physics::Geometric => {
            let (v, g) = geometric_value_and_grad(&mesh, problem.objective)?;
            (v, EvalData::Geometric(g))
        }
        Physics::Eigen => {
            let FunctionalKind::DirichletEigenvalue(k) = problem.objective else {
                return Err(OttoError::InvalidArgument(format!("{:?} is not an eigenvalue", problem.objective)));
            };
            if k == 0 {
                return Err(OttoError::InvalidArgument("eigenvalue indices start at 1".into()));
            }
            let pde = PdeProblem {
                material: Material::Conduction(vec![1.0; mesh.num_elements()]),
                source: Point::zeros(),
                dirichlet: mesh_labels(&mesh),
                neumann: vec![],
                reference_area: problem.domain.area(),
            };
            let (vals, vecs) = pde.eigenpairs(&mesh, k + 1).or_else(|_| pde.eigenpairs(&mesh, k))?;
            let lambda = vals[k - 1];
            let neighbors: Vec<f64> = vals.iter().enumerate().filter(|(i, _)| *i != k - 1).map(|(_, v)| *v).collect();
            (lambda, EvalData::Eigen { lambda, u: vecs[k - 1].clone(), neighbors })
        }
        _ => {
            let pde = pde_problem(problem, &mesh, &design.material).expect("physics with a state problem");
            let state = pde.solve(&mesh)?;
            let value = pde_value(&mesh, &pde, problem.objective, &state)?;
            (value, EvalData::Pde { problem: Box::new(pde), state })
        }
    };
    Ok(Evaluation { design, diagram, mesh, newton_iters: res.iterations, objective, constraint, data })
}

impl Evaluation {
    /// Vertex gradient of the objective.
    pub fn vertex_gradient(&self, kind: FunctionalKind) -> Result<Vec<Point>> {
        match &self.data {
            EvalData::Geometric(g) => Ok(g.clone()),
            EvalData::Eigen { lambda, u, neighbors } => {
                Ok(eigenvalue_vertex_gradient(&self.mesh, *lambda, u, neighbors)?.grad)
            }
            EvalData::Pde { problem, state } => {
                pde_vertex_gradient(&self.mesh, problem, kind, state, GradientOptions::default())
            }
        }
    }

    /// Gradient of the objective with respect to seeds and measures.
    pub fn design_gradient(&self, problem: &OptProblem) -> Result<DesignGradient> {
        let g = self.vertex_gradient(problem.objective)?;
        let jac = vertex_jacobians(&self.diagram, &self.mesh)?;
        let kd = kantorovich_eval(&self.design.measures, &self.diagram)?;
        transfer_to_design(&g, &jac, &kd, problem.mode)
    }

    /// Per-element compliance topological derivative (elastic problems).
    pub fn topological_derivative(&self) -> Result<Vec<f64>> {
        match &self.data {
            EvalData::Pde { problem, state } => topological_derivative_field(&self.mesh, problem, state),
            _ => Err(OttoError::InvalidArgument("topological derivative needs an elastic state".into())),
        }
    }
}

/// Moves `p` into `domain` at distance at least `margin` from its boundary.
pub fn keep_inside(domain: &Domain, p: Point, margin: f64) -> Point {
    let mut q = p;
    for _ in 0..20 {
        let (phi, k) = domain.phi_with_edge(q);
        if phi <= -margin {
            return q;
        }
        q -= domain.normal(k) * (phi + margin);
    }
    q
}

/// Adds `delta` to the measures, raising every measure to at least `floor`
/// and taking the excess proportionally from the other cells of the same
/// phase so that the change of each phase total is the intended one.
/// Returns `None` if a phase cannot absorb the excess.
pub fn clamp_measures(nu: &[f64], delta: &[f64], material: &[bool], floor: f64) -> Option<Vec<f64>> {
    let mut out: Vec<f64> = nu.iter().zip(delta).map(|(a, b)| a + b).collect();
    for phase in [true, false] {
        let idx: Vec<usize> = (0..nu.len()).filter(|&i| material[i] == phase).collect();
        let intended: f64 = idx.iter().map(|&i| out[i]).sum();
        for &i in &idx {
            out[i] = out[i].max(floor);
        }
        let excess: f64 = idx.iter().map(|&i| out[i]).sum::<f64>() - intended;
        if excess <= 0.0 {
            continue;
        }
        let room: f64 = idx.iter().map(|&i| out[i] - floor).sum();
        if room <= excess {
            return None;
        }
        for &i in &idx {
            out[i] -= excess * (out[i] - floor) / room;
        }
    }
    Some(out)
}

fn flatten(v: &[Point]) -> Vec<f64> {
    v.iter().flat_map(|p| [p.x, p.y]).collect()
}

/// Gradient of the volume constraint with respect to the measures, in the
/// subspace of admissible variations.
fn volume_measure_gradient(design: &Design, mode: Mode) -> Vec<f64> {
    let ind: Vec<f64> = design.material.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
    match mode {
        Mode::Modified => ind,
        Mode::Classical => {
            let mean = ind.iter().sum::<f64>() / ind.len() as f64;
            ind.iter().map(|x| x - mean).collect()
        }
    }
}

struct Stepper<'a> {
    problem: &'a OptProblem,
    params: &'a OptParams,
    newton_iters: usize,
}

impl Stepper<'_> {
    fn try_eval(&mut self, design: &Design) -> Option<Evaluation> {
        let ev = evaluate(self.problem, self.params, design).ok()?;
        self.newton_iters += ev.newton_iters;
        Some(ev)
    }

    fn seed_step(&mut self, ev: &Evaluation) -> Result<(Substep, Option<Evaluation>)> {
        let grad = ev.design_gradient(self.problem)?;
        let adj = neighbor_graph(&ev.diagram);
        let h_av = mean_neighbor_distance(&ev.design.seeds, &adj);
        let normals = match self.params.seed_constraint {
            SeedConstraint::Free => Vec::new(),
            _ => boundary_normals(&ev.diagram),
        };
        let hp = HilbertProducts::new(&adj, self.params.alpha_factor, normals)?;
        let (theta_j, _) = hp.identify_seeds(&flatten(&grad.seeds), self.params.seed_constraint)?;
        // The volume is the sum of the material measures: it does not depend
        // on the seeds, so the seed step carries no constraint.
        let rates = StepRates { a_j: self.params.rates.a_js, a_g: self.params.rates.a_gs, scale: h_av };
        let step = nullspace_step(&theta_j, &[], &[], |x, y| hp.seed_product(x, y), rates)?;
        let m0 = step.merit(ev.objective, &[]);
        let dir = step.direction();
        let margin = 1e-3 * h_av;
        let domain = &self.problem.domain;
        let (outcome, next) = merit_accept(m0, self.params.max_halvings, |dt| {
            let mut d = ev.design.clone();
            for (i, s) in d.seeds.iter_mut().enumerate() {
                *s = keep_inside(domain, *s + Point::new(dir[2 * i], dir[2 * i + 1]) * dt, margin);
            }
            let t = self.try_eval(&d)?;
            Some((step.merit(t.objective, &[]), t))
        });
        let max_change = next.as_ref().map_or(0.0, |t| {
            t.design.seeds.iter().zip(&ev.design.seeds).fold(0.0f64, |m, (a, b)| m.max((a - b).abs().max()))
        });
        let merit_after = match outcome {
            StepOutcome::Accepted { merit, .. } => merit,
            StepOutcome::Rejected { .. } => m0,
        };
        let sub = Substep {
            kind: SubstepKind::Seeds,
            outcome,
            merit_before: m0,
            merit_after,
            max_change,
            change_bound: (rates.a_j + rates.a_g) * h_av,
        };
        Ok((sub, next))
    }

    fn measure_step(&mut self, ev: &Evaluation) -> Result<(Substep, Option<Evaluation>)> {
        let grad = ev.design_gradient(self.problem)?;
        let adj = neighbor_graph(&ev.diagram);
        let hp = HilbertProducts::new(&adj, self.params.alpha_factor, Vec::new())?;
        let theta_j = hp.identify_measures(&grad.measures)?;
        let (theta_g, g_values) = match self.problem.volume_target {
            Some(_) => (
                vec![hp.identify_measures(&volume_measure_gradient(&ev.design, self.problem.mode))?],
                vec![ev.constraint],
            ),
            None => (Vec::new(), Vec::new()),
        };
        let v_av = ev.design.measures.iter().sum::<f64>() / ev.design.len() as f64;
        let rates = StepRates { a_j: self.params.rates.a_jnu, a_g: self.params.rates.a_gnu, scale: v_av };
        let step = nullspace_step(&theta_j, &theta_g, &g_values, |x, y| hp.measure_product(x, y), rates)?;
        let m0 = step.merit(ev.objective, &g_values);
        let dir = step.direction();
        let floor = self.params.nu_floor * v_av;
        let constrained = self.problem.volume_target.is_some();
        let (outcome, next) = merit_accept(m0, self.params.max_halvings, |dt| {
            let delta: Vec<f64> = dir.iter().map(|x| x * dt).collect();
            let mut d = ev.design.clone();
            d.measures = clamp_measures(&ev.design.measures, &delta, &d.material, floor)?;
            let t = self.try_eval(&d)?;
            let g: Vec<f64> = if constrained { vec![t.constraint] } else { Vec::new() };
            Some((step.merit(t.objective, &g), t))
        });
        let max_change = next.as_ref().map_or(0.0, |t| {
            t.design.measures.iter().zip(&ev.design.measures).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
        });
        let merit_after = match outcome {
            StepOutcome::Accepted { merit, .. } => merit,
            StepOutcome::Rejected { .. } => m0,
        };
        let sub = Substep {
            kind: SubstepKind::Measures,
            outcome,
            merit_before: m0,
            merit_after,
            max_change,
            change_bound: (rates.a_j + rates.a_g) * v_av,
        };
        Ok((sub, next))
    }
}

fn due(every: usize, iter: usize) -> bool {
    every > 0 && iter > 0 && iter % every == 0
}

/// Connected components of the material cells through neighbour edges.
fn material_components(d: &PowerDiagram, material: &[bool]) -> Vec<Vec<usize>> {
    let mut comp = vec![usize::MAX; d.len()];
    let mut out: Vec<Vec<usize>> = Vec::new();
    for start in 0..d.len() {
        if !material[start] || comp[start] != usize::MAX {
            continue;
        }
        let id = out.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut k = 0;
        while k < members.len() {
            let i = members[k];
            k += 1;
            for &j in &d.cells[i].neighbors {
                if material[j] && comp[j] == usize::MAX {
                    comp[j] = id;
                    members.push(j);
                }
            }
        }
        out.push(members);
    }
    out
}

/// Detached material is switched to void (classical designs with an anchor)
/// or, for free-boundary designs, its cells are moved next to random cells
/// of the largest component. Returns whether the design changed.
fn handle_islands(problem: &OptProblem, ev: &Evaluation, design: &mut Design, rng: &mut ChaCha8Rng) -> Result<bool> {
    let d = &ev.diagram;
    match (problem.mode, problem.anchor_label) {
        (Mode::Classical, Some(label)) => {
            let kept = remove_islands(d, &design.material, label)?;
            let mut keep = vec![false; d.len()];
            for i in kept {
                keep[i] = true;
            }
            let mut changed = false;
            for i in 0..d.len() {
                if design.material[i] && !keep[i] {
                    design.material[i] = false;
                    changed = true;
                }
            }
            Ok(changed)
        }
        _ => {
            let mut comps = material_components(d, &design.material);
            if comps.len() <= 1 {
                return Ok(false);
            }
            comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
            let main = comps[0].clone();
            for comp in &comps[1..] {
                for &i in comp {
                    let host = main[rng.gen_range(0..main.len())];
                    let r = 0.25 * (design.measures[host] / std::f64::consts::PI).sqrt();
                    let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
                    let p = d.centroid(host) + Point::new(angle.cos(), angle.sin()) * r;
                    design.seeds[i] = keep_inside(&problem.domain, p, 1e-3 * r);
                    design.weights[i] = design.weights[host];
                }
            }
            Ok(true)
        }
    }
}

/// Switches to void the interior material cells where the compliance
/// topological derivative is smallest.
fn topological_flip(ev: &Evaluation, design: &mut Design, fraction: f64) -> Result<bool> {
    let field = ev.topological_derivative()?;
    let d = &ev.diagram;
    let n = d.len();
    let mut sum = vec![0.0; n];
    let mut area = vec![0.0; n];
    for (e, &c) in ev.mesh.element_cell.iter().enumerate() {
        let a = ev.mesh.element_area(e);
        sum[c] += field[e] * a;
        area[c] += a;
    }
    let boundary = shape_boundary_cells(d, &design.material);
    let dist = graph_distance(d, &boundary);
    let touches_domain =
        |i: usize| d.cells[i].pieces.iter().any(|p| matches!(p, Piece::Segment { on: Constraint::Domain(_), .. }));
    let mut cand: Vec<(f64, usize)> = (0..n)
        .filter(|&i| design.material[i] && dist[i] >= 1 && dist[i] != usize::MAX && !touches_domain(i) && area[i] > 0.0)
        .map(|i| (sum[i] / area[i], i))
        .collect();
    if cand.is_empty() {
        return Ok(false);
    }
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let count = ((fraction * n as f64).ceil() as usize).max(1);
    for &(_, i) in cand.iter().take(count) {
        design.material[i] = false;
    }
    Ok(true)
}

/// Diagram maintenance due at iteration `iter`. Returns the new design if
/// anything changed.
fn maintenance(
    problem: &OptProblem,
    params: &OptParams,
    ev: &Evaluation,
    iter: usize,
    nu_target: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Design>> {
    let mut design = ev.design.clone();
    let mut changed = false;
    if due(params.lloyd_every, iter) {
        let min_nu = design.measures.iter().copied().fold(f64::INFINITY, f64::min);
        let opts = NewtonOptions { tol: Some(params.newton_rel_tol * min_nu), ..Default::default() };
        let cfg = LloydConfig { max_iter: 3, ..Default::default() };
        let r =
            lloyd_smooth(&design.seeds, &design.measures, &design.weights, &problem.domain, problem.mode, &cfg, &opts)?;
        design.seeds = r.seeds;
        design.weights = r.psi;
        changed = true;
    }
    if due(params.topo_every, iter) && topological_flip(ev, &mut design, params.topo_fraction)? {
        changed = true;
    }
    if due(params.islands_every, iter) && handle_islands(problem, ev, &mut design, rng)? {
        changed = true;
    }
    if due(params.resample_every, iter) {
        // Resampling works on the diagram of the current design; rebuild it
        // when an earlier operation moved the seeds or phases.
        let base = if changed { evaluate(problem, params, &design)? } else { evaluate(problem, params, &ev.design)? };
        let r = resample(&base.diagram, &base.design.measures, &design.material, nu_target, rng.gen())?;
        if r.added + r.removed > 0 {
            design = Design { seeds: r.seeds, measures: r.measures, weights: r.weights, material: r.material };
            changed = true;
        } else if changed {
            design = base.design;
        }
    }
    Ok(changed.then_some(design))
}

/// Runs the optimization from `initial`. The observer sees every iteration.
pub fn run(
    problem: &OptProblem,
    params: &OptParams,
    initial: Design,
    observer: &mut dyn FnMut(&Snapshot) -> Result<()>,
) -> Result<OptOutcome> {
    if initial.material.len() != initial.len() || initial.measures.len() != initial.len() {
        return Err(OttoError::InvalidArgument("design vectors differ in length".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut ev = wrap(0, evaluate(problem, params, &initial))?;
    let n_mat = initial.material.iter().filter(|&&m| m).count().max(1);
    let nu_target = initial.volume() / n_mat as f64;
    let mut history = Vec::new();
    let mut stalled = false;
    // Substeps of the last iteration when it left the design unchanged.
    let mut idle: Option<Vec<Substep>> = None;
    for iter in 0..params.iterations {
        let mut stepper = Stepper { problem, params, newton_iters: 0 };
        if let Some(design) = wrap(iter, maintenance(problem, params, &ev, iter, nu_target, &mut rng))? {
            ev = wrap(iter, evaluate(problem, params, &design))?;
            stepper.newton_iters += ev.newton_iters;
            idle = None;
        }
        let mut substeps = Vec::new();
        if let Some(prev) = &idle {
            // The steps are deterministic in the design, so repeating them
            // would reproduce the same rejections.
            substeps = prev.clone();
        } else if params.update_seeds {
            let (sub, next) = wrap(iter, stepper.seed_step(&ev))?;
            substeps.push(sub);
            if let Some(t) = next {
                ev = t;
            }
        }
        if idle.is_none() && params.update_measures {
            let (sub, next) = wrap(iter, stepper.measure_step(&ev))?;
            substeps.push(sub);
            if let Some(t) = next {
                ev = t;
            }
        }
        let accepted = substeps.iter().any(|s| s.outcome.is_accepted());
        idle = if accepted { None } else { Some(substeps.clone()) };
        let merit = substeps.last().map_or(ev.objective, |s| s.merit_after);
        let record = IterRecord {
            iter,
            objective: ev.objective,
            constraint_violation: ev.constraint.abs(),
            merit,
            n: ev.design.len(),
            newton_iters: stepper.newton_iters,
            accepted,
            substeps,
        };
        wrap(iter, observer(&Snapshot { record: &record, evaluation: &ev }))?;
        history.push(record);
        let cadence_ahead =
            [params.lloyd_every, params.resample_every, params.islands_every, params.topo_every].iter().any(|&c| c > 0);
        if !accepted && !cadence_ahead {
            stalled = true;
            break;
        }
    }
    Ok(OptOutcome { history, last: ev, stalled })
}

/// Seeds drawn uniformly in the box `[lo, hi]` intersected with the domain.
pub fn uniform_seeds(domain: &Domain, lo: Point, hi: Point, n: usize, rng_seed: u64) -> Result<Vec<Point>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n {
        tries += 1;
        if tries > 1000 * n + 1000 {
            return Err(OttoError::InvalidArgument("sampling box does not meet the domain interior".into()));
        }
        let p = Point::new(rng.gen_range(lo.x..hi.x), rng.gen_range(lo.y..hi.y));
        if domain.phi(p) < 0.0 {
            out.push(p);
        }
    }
    Ok(out)
}
