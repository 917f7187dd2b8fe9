//! Acceptance checks. Prints one `criterion N PASS|FAIL` line per criterion
//! and exits with a failure status if any criterion fails.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use nalgebra::Matrix2;
use num_traits::{Signed, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use otto::diagram_ops::{lloyd_smooth, LloydConfig};
use otto::functionals::{pde_value, FunctionalKind, Material, PdeProblem};
use otto::geometry::predicates::{power_det_rational, power_det_sign};
use otto::geometry::{
    build_diagram, diagram_mesh, orient2d, power_conflict, Domain, EdgeTag, Mode, Piece, Point, PolyMesh, PowerDiagram,
    RegularTriangulation, VertexClass,
};
use otto::linalg::to_dense;
use otto::optimize::hilbert::{boundary_normals, neighbor_graph, HilbertProducts};
use otto::optimize::{nullspace_step, run, uniform_seeds, Design, OptParams, OptProblem, Physics, StepRates};
use otto::sdot::{kantorovich_eval, kantorovich_value, newton_solve, solve_weights, NewtonOptions};
use otto::sensitivity::{pde_vertex_gradient, transfer_to_design, vertex_jacobians, vertex_key_map, GradientOptions};
use otto::vem::{
    assemble_mass, assemble_stiffness_scalar, conduc_local, elas_local, elastic_system, homogeneous_dofs, l2_norm,
    scalar_system, solve, solve_eigs, ElasticBc, ScalarBc, ScalarFn,
};

/// First zero of the Bessel function `J_0`.
const J01: f64 = 2.404_825_557_695_773;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn unit_square() -> Domain {
    Domain::rectangle(0.0, 0.0, 1.0, 1.0, [1, 2, 3, 4]).unwrap()
}

fn tight() -> NewtonOptions {
    NewtonOptions { tol: Some(1e-13), ..Default::default() }
}

fn random_points(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<Point> {
    (0..n).map(|_| Point::new(rng.gen_range(lo..hi), rng.gen_range(lo..hi))).collect()
}

/// Classical diagram of `n` seeds with equal measures, relaxed by Lloyd.
fn lloyd_diagram(domain: &Domain, n: usize, seed: u64) -> PowerDiagram {
    let (lo, hi) = domain.bbox();
    let s = uniform_seeds(domain, lo, hi, n, seed).unwrap();
    let nu = vec![domain.area() / n as f64; n];
    let r = solve_weights(&s, &nu, domain, Mode::Classical, &tight()).unwrap();
    let cfg = LloydConfig { max_iter: 50, ..Default::default() };
    lloyd_smooth(&s, &nu, &r.psi, domain, Mode::Classical, &cfg, &tight()).unwrap().diagram
}

fn criterion_1() -> Outcome {
    let domain = unit_square();
    let mut worst_iters = 0;
    let mut worst_time: f64 = 0.0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_points(&mut rng, 100, 0.0, 1.0);
        let nu = vec![0.5 / 100.0; 100];
        let t = Instant::now();
        let r = solve_weights(&s, &nu, &domain, Mode::Modified, &NewtonOptions::default())
            .map_err(|e| format!("instance {seed}: {e}"))?;
        let dt = t.elapsed().as_secs_f64();
        let eps = 0.01 * nu[0];
        let res = nu.iter().zip(&r.diagram.cells).map(|(v, c)| (v - c.area()).abs()).fold(0.0, f64::max);
        ensure!(res < eps, "instance {seed}: |F|_inf = {res:e} >= {eps:e}");
        ensure!(r.iterations <= 15, "instance {seed}: {} Newton iterations", r.iterations);
        ensure!(dt < 5.0, "instance {seed}: {dt:.2} s");
        worst_iters = worst_iters.max(r.iterations);
        worst_time = worst_time.max(dt);
    }
    Ok(format!("20 instances, at most {worst_iters} iterations, slowest {worst_time:.3} s"))
}

fn criterion_2() -> Outcome {
    let mut worst_cell: f64 = 0.0;
    let mut worst_total: f64 = 0.0;
    for (mode, fill, domain) in [
        (Mode::Modified, 0.5, unit_square()),
        (Mode::Modified, 0.9, unit_square()),
        (Mode::Classical, 2.0, Domain::rectangle(0.0, 0.0, 2.0, 1.0, [1, 2, 3, 4]).unwrap()),
    ] {
        for seed in 0..5u64 {
            let (lo, hi) = domain.bbox();
            let s = uniform_seeds(&domain, lo, hi, 100, 100 + seed).unwrap();
            let nu = vec![fill / 100.0; 100];
            let r = solve_weights(&s, &nu, &domain, mode, &NewtonOptions::default()).map_err(|e| e.to_string())?;
            let eps = 0.01 * nu[0];
            for (i, c) in r.diagram.cells.iter().enumerate() {
                let err = (c.area() - nu[i]).abs();
                ensure!(err < eps, "{mode:?} instance {seed}: cell {i} misses its measure by {err:e}");
                worst_cell = worst_cell.max(err / eps);
            }
            let total: f64 = r.diagram.cells.iter().map(|c| c.area()).sum::<f64>() + r.diagram.void_area();
            let rel = (total - domain.area()).abs() / domain.area();
            ensure!(rel <= 1e-10, "{mode:?} instance {seed}: areas + void differ from |D| by {rel:e}");
            worst_total = worst_total.max(rel);
        }
    }
    Ok(format!("worst cell error {worst_cell:.3} eps_Newt, worst partition error {worst_total:.1e}"))
}

/// Random seeds and weights whose classical and modified diagrams have no
/// empty cell.
fn small_instance(n: usize, seed: u64) -> (Vec<Point>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let s = random_points(&mut rng, n, 0.1, 0.9);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.004..0.012)).collect();
        let full = [Mode::Classical, Mode::Modified]
            .iter()
            .all(|&m| build_diagram(&s, &w, &unit_square(), m).unwrap().cells.iter().all(|c| !c.empty));
        if full {
            return (s, w);
        }
    }
}

fn criterion_3() -> Outcome {
    let domain = unit_square();
    let (mut worst_g, mut worst_h): (f64, f64) = (0.0, 0.0);
    let mut arc_rows = 0;
    for (k, mode) in
        [Mode::Modified, Mode::Modified, Mode::Classical, Mode::Modified, Mode::Classical].into_iter().enumerate()
    {
        let (s, w) = small_instance(10, 40 + k as u64);
        let nu: Vec<f64> = (0..10).map(|i| 0.03 + 0.004 * i as f64).collect();
        let d = build_diagram(&s, &w, &domain, mode).unwrap();
        let der = kantorovich_eval(&nu, &d).map_err(|e| e.to_string())?;
        let kval = |wv: &[f64]| kantorovich_value(&nu, &build_diagram(&s, wv, &domain, mode).unwrap());
        let areas = |wv: &[f64]| -> Vec<f64> {
            build_diagram(&s, wv, &domain, mode).unwrap().cells.iter().map(|c| c.area()).collect()
        };
        // Gradient: Richardson extrapolation of central differences of K.
        let gscale = der.gradient.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for i in 0..10 {
            let cd = |h: f64| {
                let (mut a, mut b) = (w.clone(), w.clone());
                a[i] += h;
                b[i] -= h;
                (kval(&a) - kval(&b)) / (2.0 * h)
            };
            let h = 1e-4;
            let fd = (4.0 * cd(h / 2.0) - cd(h)) / 3.0;
            let rel = (fd - der.gradient[i]).abs() / gscale;
            ensure!(rel <= 1e-5, "instance {k}: dK/dpsi_{i} fd {fd:e} vs {:e}", der.gradient[i]);
            worst_g = worst_g.max(rel);
        }
        // Hessian: central differences of F = nu - |V|, column by column.
        let h = to_dense(&der.hessian);
        let eps = 1e-6;
        for j in 0..10 {
            let (mut a, mut b) = (w.clone(), w.clone());
            a[j] += eps;
            b[j] -= eps;
            let (ap, am) = (areas(&a), areas(&b));
            let cscale = (0..10).map(|i| h[(i, j)].abs()).fold(0.0, f64::max);
            for i in 0..10 {
                let fd = -(ap[i] - am[i]) / (2.0 * eps);
                let rel = (fd - h[(i, j)]).abs() / cscale;
                ensure!(rel <= 1e-5, "instance {k}: H[{i},{j}] fd {fd:e} vs {:e}", h[(i, j)]);
                worst_h = worst_h.max(rel);
            }
        }
        for i in 0..10 {
            let off: f64 = (0..10).filter(|&j| j != i).map(|j| h[(i, j)].abs()).sum();
            let rowscale = h[(i, i)].abs().max(1.0);
            for j in 0..10 {
                ensure!(
                    (h[(i, j)] - h[(j, i)]).abs() <= 1e-10 * h[(i, j)].abs().max(1.0),
                    "instance {k}: H not symmetric at ({i},{j})"
                );
            }
            let has_arc = d.cells[i].arcs().next().is_some();
            if has_arc {
                let theta: f64 = d.cells[i]
                    .arcs()
                    .map(|p| match p {
                        Piece::Arc { theta, .. } => *theta,
                        _ => 2.0 * PI,
                    })
                    .sum();
                ensure!(h[(i, i)].abs() - off > 0.0, "instance {k}: arc row {i} not strictly dominant");
                ensure!(
                    (h[(i, i)].abs() - off - 0.5 * theta).abs() <= 1e-12 * rowscale,
                    "instance {k}: arc row {i} excess differs from half its arc angle"
                );
                arc_rows += 1;
            } else {
                let sum: f64 = (0..10).map(|j| h[(i, j)]).sum();
                ensure!(sum.abs() <= 1e-12 * rowscale, "instance {k}: interior row {i} sums to {sum:e}");
            }
        }
    }
    ensure!(arc_rows > 0, "no arc-bearing row was checked");
    Ok(format!("5 instances, gradient {worst_g:.1e}, Hessian {worst_h:.1e}, {arc_rows} arc rows dominant"))
}

fn class_tag(c: &VertexClass) -> usize {
    match c {
        VertexClass::ThreeCells { .. } => 0,
        VertexClass::TwoCellsVoid { .. } => 1,
        VertexClass::ArcSample { .. } => 2,
        VertexClass::TwoCellsBoundary { .. } => 3,
        VertexClass::CellVoidBoundary { .. } => 4,
        VertexClass::DomainCorner { .. } => 5,
    }
}

fn mesh_at(s: &[Point], psi: &[f64], mode: Mode) -> (PowerDiagram, PolyMesh) {
    let d = build_diagram(s, psi, &unit_square(), mode).unwrap();
    let m = diagram_mesh(&d, 4).unwrap();
    (d, m)
}

fn criterion_4() -> Outcome {
    let mut seen = [false; 5];
    let mut worst: f64 = 0.0;
    let mut checked = 0usize;
    let mut equivariant = 0usize;
    for (mode, fill, seed) in [(Mode::Modified, 0.6, 11u64), (Mode::Modified, 0.85, 12), (Mode::Classical, 1.0, 13)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_points(&mut rng, 10, 0.05, 0.95);
        let nu = vec![fill / 10.0; 10];
        let psi = solve_weights(&s, &nu, &unit_square(), mode, &tight()).map_err(|e| e.to_string())?.psi;
        let (d, mesh) = mesh_at(&s, &psi, mode);
        let jac = vertex_jacobians(&d, &mesh).map_err(|e| e.to_string())?;
        let keys = vertex_key_map(&d, &mesh);
        let h = 1e-6;
        for var in 0..30 {
            let perturbed = |sign: f64| {
                let (mut sp, mut pp) = (s.clone(), psi.clone());
                if var < 20 {
                    sp[var / 2][var % 2] += sign * h;
                } else {
                    pp[var - 20] += sign * h;
                }
                let (dp, mp) = mesh_at(&sp, &pp, mode);
                (vertex_key_map(&dp, &mp), mp)
            };
            let (kp, mp) = perturbed(1.0);
            let (km, mm) = perturbed(-1.0);
            for (key, &v) in &keys {
                let (Some(&a), Some(&b)) = (kp.get(key), km.get(key)) else { continue };
                let fd = (mp.vertices[a] - mm.vertices[b]) / (2.0 * h);
                let an: Point = jac.columns[v].iter().filter(|c| c.0 == var).map(|c| c.1).sum();
                let rel = (fd - an).norm() / an.norm().max(1.0);
                ensure!(rel <= 1e-5, "vertex {key}, variable {var}: fd {fd:?} vs {an:?}");
                worst = worst.max(rel);
                checked += 1;
                let tag = class_tag(mesh.classes[v].as_ref().unwrap());
                if tag < 5 {
                    seen[tag] = true;
                }
            }
        }
        let interior_class = |c: Option<VertexClass>| {
            matches!(c, Some(VertexClass::ThreeCells { .. }) | Some(VertexClass::TwoCellsVoid { .. }))
        };
        for v in 0..mesh.num_vertices() {
            let interior = match mesh.classes[v] {
                Some(VertexClass::ArcSample { .. }) => {
                    let arc = &mesh.arcs[mesh.vertex_arc[v].unwrap()];
                    let ok = |x: Option<usize>| x.map_or(true, |a| interior_class(mesh.classes[a]));
                    ok(arc.start) && ok(arc.end)
                }
                c => interior_class(c),
            };
            if interior {
                let sum: Matrix2<f64> = (0..10).map(|i| jac.seed_block(v, i)).sum();
                let err = (sum - Matrix2::identity()).norm();
                ensure!(err <= 1e-8, "vertex {v}: seed blocks sum to {sum}");
                equivariant += 1;
            }
        }
    }
    ensure!(seen.iter().all(|&x| x), "vertex classes covered: {seen:?}");
    ensure!(equivariant > 0, "no interior vertex found");
    Ok(format!(
        "5 classes, {checked} vertex derivatives, worst {worst:.1e}; {equivariant} interior vertices equivariant"
    ))
}

fn criterion_5() -> Outcome {
    let domain = unit_square();
    let d = lloyd_diagram(&domain, 200, 5);
    let mesh = diagram_mesh(&d, 1).map_err(|e| e.to_string())?;
    ensure!(mesh.num_elements() == 200, "{} elements", mesh.num_elements());

    let exact = |x: Point| 0.3 - 1.2 * x.x + 0.7 * x.y;
    let gamma = 2.0;
    let right = |_: Point| gamma * -1.2;
    let top = |_: Point| gamma * 0.7;
    let bc = ScalarBc { dirichlet: vec![(1, &exact as ScalarFn), (4, &exact)], neumann: vec![(2, &right), (3, &top)] };
    let sys = scalar_system(&mesh, &vec![gamma; 200], &|_| 0.0, &bc).map_err(|e| e.to_string())?;
    let u = solve(&sys).map_err(|e| e.to_string())?;
    let scalar_err = mesh.vertices.iter().enumerate().map(|(v, q)| (u[v] - exact(*q)).abs()).fold(0.0, f64::max);
    ensure!(scalar_err <= 1e-9, "scalar patch error {scalar_err:e}");

    let (lambda, mu) = (1.3, 0.8);
    let (a, b, c, dd) = (0.01, -0.02, 0.015, 0.03);
    let disp = move |x: Point| Point::new(a * x.x + b * x.y + 0.1, c * x.x + dd * x.y - 0.2);
    let tr = a + dd;
    let (s11, s22, s12) = (2.0 * mu * a + lambda * tr, 2.0 * mu * dd + lambda * tr, mu * (b + c));
    let rt = move |_: Point| Point::new(s11, s12);
    let tp = move |_: Point| Point::new(s12, s22);
    let bt = move |_: Point| Point::new(-s12, -s22);
    let ebc = ElasticBc { dirichlet: vec![(4, &disp)], neumann: vec![(1, &bt), (2, &rt), (3, &tp)] };
    let sys = elastic_system(&mesh, &vec![(lambda, mu); 200], &|_| Point::zeros(), &ebc).map_err(|e| e.to_string())?;
    let u = solve(&sys).map_err(|e| e.to_string())?;
    let elastic_err = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(v, q)| {
            let ex = disp(*q);
            (u[2 * v] - ex.x).abs().max((u[2 * v + 1] - ex.y).abs())
        })
        .fold(0.0, f64::max);
    ensure!(elastic_err <= 1e-9, "elastic patch error {elastic_err:e}");

    let mut kernel: f64 = 0.0;
    for e in 0..mesh.num_elements() {
        let pts = mesh.element_points(e);
        let k = conduc_local(&pts, gamma).map_err(|e| e.to_string())?.k;
        let scale = k.abs().max();
        let r = &k * nalgebra::DVector::from_element(pts.len(), 1.0);
        kernel = kernel.max(r.amax() / scale);
        let k = elas_local(&pts, lambda, mu).map_err(|e| e.to_string())?.k;
        let scale = k.abs().max();
        for mode in 0..3 {
            let rigid = nalgebra::DVector::from_iterator(
                2 * pts.len(),
                pts.iter().flat_map(|p| match mode {
                    0 => [1.0, 0.0],
                    1 => [0.0, 1.0],
                    _ => [-p.y, p.x],
                }),
            );
            let r = &k * &rigid;
            kernel = kernel.max(r.amax() / (scale * rigid.amax()));
        }
    }
    ensure!(kernel <= 1e-11, "local kernel residual {kernel:e}");
    Ok(format!("scalar {scalar_err:.1e}, elastic {elastic_err:.1e}, kernels {kernel:.1e} on 200 Lloyd cells"))
}

/// Voronoi mesh of jittered grid seeds on the unit square.
fn jittered_mesh(n: usize, seed: u64) -> PolyMesh {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1.0 / n as f64;
    let mut s = Vec::new();
    for j in 0..n {
        for i in 0..n {
            s.push(Point::new(
                (i as f64 + 0.5 + rng.gen_range(-0.25..0.25)) * h,
                (j as f64 + 0.5 + rng.gen_range(-0.25..0.25)) * h,
            ));
        }
    }
    let d = build_diagram(&s, &vec![0.0; s.len()], &unit_square(), Mode::Classical).unwrap();
    diagram_mesh(&d, 1).unwrap()
}

fn criterion_6() -> Outcome {
    let exact = |x: Point| (PI * x.x).sin() * (PI * x.y).sin();
    let mut errs = Vec::new();
    for n in [8usize, 16] {
        let mesh = jittered_mesh(n, 11);
        let zero = |_: Point| 0.0;
        let bc = ScalarBc { dirichlet: (1..=4).map(|l| (l, &zero as ScalarFn)).collect(), neumann: vec![] };
        let sys = scalar_system(&mesh, &vec![1.0; mesh.num_elements()], &|x| 2.0 * PI * PI * exact(x), &bc)
            .map_err(|e| e.to_string())?;
        let u = solve(&sys).map_err(|e| e.to_string())?;
        let m = assemble_mass(&mesh).map_err(|e| e.to_string())?;
        let e: Vec<f64> = mesh.vertices.iter().enumerate().map(|(v, q)| u[v] - exact(*q)).collect();
        errs.push(l2_norm(&m, &e));
    }
    let ratio = errs[0] / errs[1];
    ensure!(ratio >= 3.4, "L2 errors {errs:?}, ratio {ratio:.3}");
    Ok(format!("L2 errors {:.3e} -> {:.3e}, ratio {ratio:.3}", errs[0], errs[1]))
}

fn first_dirichlet_eigenvalue(domain: &Domain, n: usize) -> Result<f64, String> {
    let d = lloyd_diagram(domain, n, 7);
    let mesh = diagram_mesh(&d, 1).map_err(|e| e.to_string())?;
    let k = assemble_stiffness_scalar(&mesh, &vec![1.0; mesh.num_elements()]).map_err(|e| e.to_string())?;
    let m = assemble_mass(&mesh).map_err(|e| e.to_string())?;
    let dofs = homogeneous_dofs(&mesh, &[1], 1).map_err(|e| e.to_string())?;
    let (vals, _) = solve_eigs(&k, &m, &dofs, 1).map_err(|e| e.to_string())?;
    Ok(vals[0])
}

fn criterion_7() -> Outcome {
    let ring: Vec<Point> = (0..96)
        .map(|k| {
            let t = 2.0 * PI * k as f64 / 96.0;
            Point::new(t.cos(), t.sin())
        })
        .collect();
    let disk = Domain::new(ring, vec![1; 96]).map_err(|e| e.to_string())?;
    let square = Domain::rectangle(0.0, 0.0, 1.0, 1.0, [1; 4]).unwrap();
    let ld = first_dirichlet_eigenvalue(&disk, 300)?;
    let ls = first_dirichlet_eigenvalue(&square, 300)?;
    let (ed, es) = ((ld - J01 * J01) / (J01 * J01), (ls - 2.0 * PI * PI) / (2.0 * PI * PI));
    ensure!(ed.abs() <= 0.02, "disk eigenvalue {ld} (relative error {ed:.4})");
    ensure!(es.abs() <= 0.02, "square eigenvalue {ls} (relative error {es:.4})");
    Ok(format!("disk {ld:.4} ({:+.2}%), square {ls:.4} ({:+.2}%)", 100.0 * ed, 100.0 * es))
}

struct AdjointCase {
    domain: Domain,
    kind: FunctionalKind,
    material: Vec<bool>,
    problem: fn(&PolyMesh, &[bool]) -> PdeProblem,
    restrict: bool,
}

impl AdjointCase {
    fn mesh(&self, d: &PowerDiagram) -> PolyMesh {
        let mesh = diagram_mesh(d, 4).unwrap();
        if self.restrict {
            mesh.restrict(&self.material)
        } else {
            mesh
        }
    }

    fn value(&self, s: &[Point], nu: &[f64], psi0: &[f64]) -> f64 {
        let r = newton_solve(s, nu, psi0, &self.domain, Mode::Classical, &tight()).unwrap();
        let mesh = self.mesh(&r.diagram);
        let problem = (self.problem)(&mesh, &self.material);
        let st = problem.solve(&mesh).unwrap();
        pde_value(&mesh, &problem, self.kind, &st).unwrap()
    }

    /// Worst relative error over 20 random components of the design gradient.
    fn worst_error(&self, s: Vec<Point>, nu: Vec<f64>, rng: &mut ChaCha8Rng) -> Result<f64, String> {
        let r = solve_weights(&s, &nu, &self.domain, Mode::Classical, &tight()).map_err(|e| e.to_string())?;
        let mesh = self.mesh(&r.diagram);
        let problem = (self.problem)(&mesh, &self.material);
        let st = problem.solve(&mesh).map_err(|e| e.to_string())?;
        let g = pde_vertex_gradient(&mesh, &problem, self.kind, &st, GradientOptions::default())
            .map_err(|e| e.to_string())?;
        let jac = vertex_jacobians(&r.diagram, &mesh).map_err(|e| e.to_string())?;
        let kd = kantorovich_eval(&nu, &r.diagram).map_err(|e| e.to_string())?;
        let out = transfer_to_design(&g, &jac, &kd, Mode::Classical).map_err(|e| e.to_string())?;
        let n = s.len();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..20 {
            let (fd, an) = if rng.gen_bool(0.5) {
                let (i, c) = (rng.gen_range(0..n), rng.gen_range(0..2));
                let (mut sp, mut sm) = (s.clone(), s.clone());
                sp[i][c] += h;
                sm[i][c] -= h;
                ((self.value(&sp, &nu, &r.psi) - self.value(&sm, &nu, &r.psi)) / (2.0 * h), out.seeds[i][c])
            } else {
                // Classical measures keep the domain area: pair cell i with cell j.
                let i = rng.gen_range(0..n);
                let j = (i + 1 + rng.gen_range(0..n - 1)) % n;
                let (mut np, mut nm) = (nu.clone(), nu.clone());
                np[i] += h;
                np[j] -= h;
                nm[i] -= h;
                nm[j] += h;
                let an = out.measures[i] - out.measures[j];
                ((self.value(&s, &np, &r.psi) - self.value(&s, &nm, &r.psi)) / (2.0 * h), an)
            };
            worst = worst.max((fd - an).abs() / an.abs().max(fd.abs()));
        }
        Ok(worst)
    }
}

fn conduction_problem(mesh: &PolyMesh, material: &[bool]) -> PdeProblem {
    let gamma = mesh.element_cell.iter().map(|&c| if material[c] { 10.0 } else { 1.0 }).collect();
    PdeProblem {
        material: Material::Conduction(gamma),
        source: Point::new(1.0, 0.0),
        dirichlet: vec![4],
        neumann: vec![],
        reference_area: 1.0,
    }
}

fn cantilever_problem(mesh: &PolyMesh, _: &[bool]) -> PdeProblem {
    PdeProblem {
        material: Material::Elasticity(vec![(0.5769, 0.3846); mesh.num_elements()]),
        source: Point::zeros(),
        dirichlet: vec![4],
        neumann: vec![(2, Point::new(0.0, -1.0))],
        reference_area: 2.0,
    }
}

fn criterion_8() -> Outcome {
    let t = Instant::now();
    let square = unit_square();
    let s = uniform_seeds(&square, Point::new(0.0, 0.0), Point::new(1.0, 1.0), 50, 81).unwrap();
    let material = s.iter().map(|p| (p - Point::new(0.5, 0.5)).norm() < 0.3).collect();
    let case = AdjointCase {
        domain: square,
        kind: FunctionalKind::MeanTemperature,
        material,
        problem: conduction_problem,
        restrict: false,
    };
    let temp = case.worst_error(s, vec![1.0 / 50.0; 50], &mut ChaCha8Rng::seed_from_u64(82))?;

    let beam = Domain::rectangle(0.0, 0.0, 2.0, 1.0, [1, 2, 3, 4]).unwrap();
    let s = uniform_seeds(&beam, Point::new(0.0, 0.0), Point::new(2.0, 1.0), 50, 83).unwrap();
    let material = s.iter().map(|p| (p - Point::new(1.0, 0.5)).norm() > 0.25).collect();
    let case = AdjointCase {
        domain: beam,
        kind: FunctionalKind::ElasticCompliance,
        material,
        problem: cantilever_problem,
        restrict: true,
    };
    let comp = case.worst_error(s, vec![2.0 / 50.0; 50], &mut ChaCha8Rng::seed_from_u64(84))?;
    let dt = t.elapsed().as_secs_f64();
    ensure!(temp <= 1e-3, "mean temperature: worst relative error {temp:e}");
    ensure!(comp <= 1e-3, "compliance: worst relative error {comp:e}");
    ensure!(dt < 60.0, "{dt:.1} s");
    Ok(format!("mean temperature {temp:.1e}, compliance {comp:.1e}, {dt:.1} s"))
}

/// Area and boundary length of a polygonal mesh, from its elements.
fn area_and_perimeter(mesh: &PolyMesh) -> (f64, f64) {
    let mut area = 0.0;
    let mut per = 0.0;
    for e in 0..mesh.num_elements() {
        area += mesh.element_area(e);
        let el = &mesh.elements[e];
        for (k, tag) in mesh.edge_tags[e].iter().enumerate() {
            if !matches!(tag, EdgeTag::Shared(_)) {
                per += (mesh.vertices[el[(k + 1) % el.len()]] - mesh.vertices[el[k]]).norm();
            }
        }
    }
    (area, per)
}

fn free_boundary_run(
    objective: FunctionalKind,
    physics: Physics,
    n: usize,
    iters: usize,
    lo: f64,
    hi: f64,
) -> otto::Result<(PolyMesh, f64, usize)> {
    let domain = unit_square();
    let s = uniform_seeds(&domain, Point::new(lo, lo), Point::new(hi, hi), n, 1)?;
    let design = Design::new(s, vec![0.3 / n as f64; n], vec![true; n], &domain, Mode::Modified);
    let problem =
        OptProblem { domain, mode: Mode::Modified, objective, physics, volume_target: None, anchor_label: None };
    let params =
        OptParams { iterations: iters, update_measures: false, islands_every: 10, rng_seed: 1, ..Default::default() };
    let out = run(&problem, &params, design, &mut |_| Ok(()))?;
    Ok((out.last.mesh, out.last.objective, out.history.len()))
}

fn criterion_9() -> Outcome {
    let t = Instant::now();
    let (mesh, objective, iters) = free_boundary_run(FunctionalKind::Perimeter, Physics::Geometric, 100, 300, 0.0, 1.0)
        .map_err(|e| e.to_string())?;
    let dt = t.elapsed().as_secs_f64();
    let (area, per) = area_and_perimeter(&mesh);
    let ratio = 4.0 * PI * area / (per * per);
    ensure!(iters == 300, "stopped after {iters} iterations");
    ensure!((objective - per).abs() <= 1e-9 * per, "objective {objective} differs from the mesh perimeter {per}");
    ensure!(ratio >= 0.95, "isoperimetric ratio {ratio:.4}");
    ensure!(dt < 600.0, "{dt:.1} s");
    Ok(format!("4 pi Vol / Per^2 = {ratio:.4} after {iters} iterations, {dt:.1} s"))
}

fn criterion_10() -> Outcome {
    let t = Instant::now();
    let (mesh, lambda, iters) =
        free_boundary_run(FunctionalKind::DirichletEigenvalue(1), Physics::Eigen, 300, 200, 0.2, 0.8)
            .map_err(|e| e.to_string())?;
    let dt = t.elapsed().as_secs_f64();
    let (area, _) = area_and_perimeter(&mesh);
    let target = PI * J01 * J01;
    let rel = (lambda * area - target) / target;
    ensure!(iters == 200, "stopped after {iters} iterations");
    ensure!(rel.abs() <= 0.03, "lambda Vol = {:.4} against {target:.4}", lambda * area);
    Ok(format!("lambda Vol = {:.4} ({:+.2}% of pi j01^2), {dt:.1} s", lambda * area, 100.0 * rel))
}

fn criterion_11() -> Outcome {
    // Null-space step with the measure product of a real diagram.
    let domain = unit_square();
    let n = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    let s = random_points(&mut rng, n, 0.0, 1.0);
    let nu = vec![0.4 / n as f64; n];
    let d =
        solve_weights(&s, &nu, &domain, Mode::Modified, &NewtonOptions::default()).map_err(|e| e.to_string())?.diagram;
    let hp = HilbertProducts::new(&neighbor_graph(&d), 2.0, boundary_normals(&d)).map_err(|e| e.to_string())?;
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let theta_j = hp.identify_measures(&raw).map_err(|e| e.to_string())?;
    let ones = vec![1.0; n];
    let smoothed = hp.identify_measures(&ones).map_err(|e| e.to_string())?;
    ensure!(smoothed.iter().all(|x| (x - 1.0).abs() < 1e-12), "the volume gradient is not the constant field");
    let (vol, vt): (f64, f64) = (nu.iter().sum(), 0.35);
    let a = |x: &[f64], y: &[f64]| hp.measure_product(x, y);
    let rates = StepRates { a_j: 0.25, a_g: 0.25, scale: vol / n as f64 };
    let step = nullspace_step(&theta_j, &[ones.clone()], &[vol - vt], a, rates).map_err(|e| e.to_string())?;
    ensure!(step.s[(0, 0)] == n as f64, "S = {} instead of {n}", step.s[(0, 0)]);
    ensure!(step.beta[0] == (vol - vt) / n as f64, "beta = {:e} instead of {:e}", step.beta[0], (vol - vt) / n as f64);
    let norm_a = |x: &[f64]| a(x, x).sqrt();
    let orth = a(&step.xi_j, &ones).abs() / (norm_a(&theta_j) * norm_a(&ones));
    ensure!(orth <= 1e-10, "a(xi_J, theta_G) relative {orth:e}");
    let raw2: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let theta_g2 = hp.identify_measures(&raw2).map_err(|e| e.to_string())?;
    let step2 = nullspace_step(&theta_j, &[ones.clone(), theta_g2.clone()], &[vol - vt, 0.01], a, rates)
        .map_err(|e| e.to_string())?;
    let mut orth2: f64 = 0.0;
    for t in [&ones, &theta_g2] {
        orth2 = orth2.max(a(&step2.xi_j, t).abs() / (norm_a(&theta_j) * norm_a(t)));
    }
    ensure!(orth2 <= 1e-10, "two constraints: a(xi_J, theta_G) relative {orth2:e}");

    // Merit history of a short cantilever run.
    let v = vec![
        Point::new(0.0, 0.0),
        Point::new(2.0, 0.0),
        Point::new(2.0, 0.45),
        Point::new(2.0, 0.55),
        Point::new(2.0, 1.0),
        Point::new(0.0, 1.0),
    ];
    let beam = Domain::new(v, vec![1, 2, 5, 2, 3, 4]).map_err(|e| e.to_string())?;
    let cells = 200;
    let s = uniform_seeds(&beam, Point::new(0.0, 0.0), Point::new(2.0, 1.0), cells, 1).map_err(|e| e.to_string())?;
    let holes = [Point::new(0.5, 0.5), Point::new(1.0, 0.25), Point::new(1.0, 0.75), Point::new(1.5, 0.5)];
    let material: Vec<bool> = s.iter().map(|p| holes.iter().all(|h| (p - h).norm() > 0.2)).collect();
    let design = Design::new(s, vec![2.0 / cells as f64; cells], material, &beam, Mode::Classical);
    let problem = OptProblem {
        domain: beam,
        mode: Mode::Classical,
        objective: FunctionalKind::ElasticCompliance,
        physics: Physics::Elasticity {
            lame: (0.3 / (1.3 * 0.4), 1.0 / 2.6),
            ersatz: 1e-3,
            source: Point::zeros(),
            dirichlet: vec![4],
            neumann: vec![(5, Point::new(0.0, -1.0))],
        },
        volume_target: Some(0.7),
        anchor_label: Some(4),
    };
    let params = OptParams { iterations: 40, lloyd_every: 3, islands_every: 10, rng_seed: 1, ..Default::default() };
    let out = run(&problem, &params, design, &mut |_| Ok(())).map_err(|e| e.to_string())?;
    let mut accepted = 0;
    for r in &out.history {
        for sub in r.substeps.iter().filter(|s| s.outcome.is_accepted()) {
            ensure!(
                sub.merit_after <= sub.merit_before,
                "iteration {}: merit rose from {:e} to {:e}",
                r.iter,
                sub.merit_before,
                sub.merit_after
            );
            accepted += 1;
        }
    }
    ensure!(accepted > 0, "no substep accepted");
    Ok(format!(
        "S = N, beta exact, orthogonality {:.1e}; cantilever {accepted} accepted substeps non-increasing",
        orth.max(orth2)
    ))
}

const TRIPLES: [(i64, i64, i64); 5] = [(3, 4, 5), (5, 12, 13), (8, 15, 17), (7, 24, 25), (20, 21, 29)];

/// Lattice points of the circle of radius `r` centred at the origin.
fn circle_points(a: i64, b: i64, r: i64) -> Vec<(i64, i64)> {
    let mut pts = vec![(r, 0), (-r, 0), (0, r), (0, -r)];
    for (x, y) in [(a, b), (b, a)] {
        for (sx, sy) in [(1, 1), (1, -1), (-1, 1), (-1, -1)] {
            pts.push((sx * x, sy * y));
        }
    }
    pts
}

const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];

/// Sign of the conflict test, required to be nonzero, repeatable and
/// independent of the order of the triangle rows.
fn stable_conflict(s: [Point; 4], psi: [f64; 4], ids: [usize; 4]) -> Result<i32, String> {
    let c = power_conflict(s, psi, ids).map_err(|e| e.to_string())?;
    if c == 0 {
        return Err(format!("zero conflict sign for {s:?}"));
    }
    for p in PERMS {
        let sp = [s[p[0]], s[p[1]], s[p[2]], s[3]];
        let wp = [psi[p[0]], psi[p[1]], psi[p[2]], psi[3]];
        let ip = [ids[p[0]], ids[p[1]], ids[p[2]], ids[3]];
        for _ in 0..2 {
            let again = power_conflict(sp, wp, ip).map_err(|e| e.to_string())?;
            if again != c {
                return Err(format!("conflict sign changes with the row order for {s:?}"));
            }
        }
    }
    Ok(c)
}

fn exact_sign(s: [Point; 4], psi: [f64; 4]) -> i32 {
    let d = power_det_rational(s, psi);
    if d.is_zero() {
        0
    } else if d.is_positive() {
        1
    } else {
        -1
    }
}

fn criterion_12() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(120);
    let mut cocyclic = 0;
    let mut collinear = 0;
    for case in 0..10_000 {
        let ids = {
            let mut v: Vec<usize> = (0..1000).collect();
            v.shuffle(&mut rng);
            [v[0], v[1], v[2], v[3]]
        };
        if case % 2 == 0 {
            let (a, b, r) = TRIPLES[rng.gen_range(0..TRIPLES.len())];
            let mut pts = circle_points(a, b, r);
            pts.shuffle(&mut rng);
            let scale = 2f64.powi(rng.gen_range(-12..12));
            let (cx, cy) = (rng.gen_range(-50..50) as f64, rng.gen_range(-50..50) as f64);
            let s: Vec<Point> =
                pts[..4].iter().map(|&(x, y)| Point::new((x as f64 + cx) * scale, (y as f64 + cy) * scale)).collect();
            let s = [s[0], s[1], s[2], s[3]];
            let w = rng.gen_range(-64..64) as f64 * scale * scale / 8.0;
            let psi = [w; 4];
            ensure!(power_det_sign(s, psi) == 0, "case {case}: cocyclic points with a nonzero filtered sign");
            ensure!(exact_sign(s, psi) == 0, "case {case}: cocyclic points with a nonzero exact determinant");
            stable_conflict(s, psi, ids).map_err(|e| format!("case {case}: {e}"))?;
            cocyclic += 1;
        } else {
            let p =
                |rng: &mut ChaCha8Rng| Point::new(rng.gen_range(-1000..1000) as f64, rng.gen_range(-1000..1000) as f64);
            let (s0, s1) = (p(&mut rng), p(&mut rng));
            if s0 == s1 {
                continue;
            }
            let t = rng.gen_range(-128..192) as f64 / 64.0;
            let s3 = s0 + (s1 - s0) * t;
            ensure!(orient2d(s0, s1, s3) == 0, "case {case}: dyadic point off its line");
            let mut s2 = p(&mut rng);
            while orient2d(s0, s1, s2) == 0 {
                s2 = p(&mut rng);
            }
            let scale = 2f64.powi(rng.gen_range(-12..12));
            let s = [s0 * scale, s1 * scale, s2 * scale, s3 * scale];
            ensure!(orient2d(s[0], s[1], s[3]) == 0, "case {case}: scaling broke collinearity");
            let psi = if rng.gen_bool(0.5) {
                [0.0; 4]
            } else {
                let mut w = [0.0; 4];
                for x in &mut w {
                    *x = rng.gen_range(-1000..1000) as f64 * scale * scale;
                }
                w
            };
            let exact = exact_sign(s, psi);
            ensure!(power_det_sign(s, psi) == exact, "case {case}: filtered sign disagrees with the exact one");
            let c = stable_conflict(s, psi, ids).map_err(|e| format!("case {case}: {e}"))?;
            // Orientation of the triangle normalizes the sign of the determinant.
            let o = orient2d(s[0], s[1], s[2]);
            ensure!(exact == 0 || c == exact * o, "case {case}: conflict sign {c} against exact {exact}");
            collinear += 1;
        }
    }

    // Insertion order does not change the complex.
    let mut instances = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);
        let n = 60;
        let s = random_points(&mut rng, n, 0.0, 1.0);
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..0.01)).collect();
        let base = RegularTriangulation::new(&s, &w).map_err(|e| e.to_string())?;
        let edges = edge_set(&base.seed_neighbors());
        for _ in 0..3 {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let other = RegularTriangulation::with_order(&s, &w, &order).map_err(|e| e.to_string())?;
            ensure!(edge_set(&other.seed_neighbors()) == edges, "instance {seed}: edges depend on the insertion order");
            ensure!(other.hidden() == base.hidden(), "instance {seed}: hidden seeds depend on the insertion order");
        }
        instances += 1;
    }
    Ok(format!("{cocyclic} cocyclic and {collinear} collinear cases; {instances} permuted triangulations identical"))
}

fn edge_set(nb: &[Vec<usize>]) -> HashSet<(usize, usize)> {
    nb.iter().enumerate().flat_map(|(i, l)| l.iter().map(move |&j| (i.min(j), i.max(j)))).collect()
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("Newton convergence", criterion_1),
        ("measure fidelity", criterion_2),
        ("Kantorovich derivatives", criterion_3),
        ("vertex Jacobians", criterion_4),
        ("VEM patch tests", criterion_5),
        ("VEM convergence", criterion_6),
        ("eigenvalue oracle", criterion_7),
        ("end-to-end adjoint", criterion_8),
        ("isoperimetric descent", criterion_9),
        ("Faber-Krahn descent", criterion_10),
        ("optimizer contracts", criterion_11),
        ("predicate robustness", criterion_12),
    ];
    // Panics are reported as failures of their criterion.
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (k, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(r) => r,
            Err(p) => Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into())),
        };
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail} [{secs:.1} s]", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail} [{secs:.1} s]", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all 12 acceptance criteria passed");
}
