//! Semi-discrete optimal transport: the Kantorovich functional of the weights,
//! its derivatives, and the damped Newton solver that finds the weights
//! realizing prescribed cell measures.

use sprs::CsMat;

use crate::error::{OttoError, Result};
use crate::geometry::{build_diagram, perp, Constraint, Domain, Mode, Piece, Point, PowerDiagram};
use crate::linalg::{norm, norm_inf, solve_sym, SymAssembler};

/// Value and derivatives of the Kantorovich functional at `(s, nu, psi)`.
#[derive(Debug, Clone)]
pub struct KantorovichDerivatives {
    /// `K = sum_i [ int_{V_i} |x - s_i|^2 - psi_i |V_i| ] + sum_i nu_i psi_i`.
    pub value: f64,
    /// `F_i = nu_i - |V_i|`.
    pub gradient: Vec<f64>,
    /// `H = dF / dpsi`, symmetric `N x N`.
    pub hessian: CsMat<f64>,
    /// `dF / ds`, `N x 2N` with columns ordered `(s_0x, s_0y, s_1x, ...)`.
    pub seed_jacobian: CsMat<f64>,
}

/// Evaluates the Kantorovich functional and its derivatives on a diagram
/// built from `(s, psi)`. Every cell must be nonempty.
pub fn kantorovich_eval(nu: &[f64], d: &PowerDiagram) -> Result<KantorovichDerivatives> {
    let n = d.len();
    if nu.len() != n {
        return Err(OttoError::InvalidArgument("measure count differs from cell count".into()));
    }
    if let Some(i) = d.cells.iter().position(|c| c.empty || c.area() <= 0.0) {
        return Err(OttoError::HessianUndefined(i));
    }
    let mut value = 0.0;
    let mut grad = vec![0.0; n];
    let mut h = SymAssembler::new(n);
    let mut js_rows = Vec::new();
    let mut js_cols = Vec::new();
    let mut js_vals = Vec::new();
    let mut push_js = |i: usize, j: usize, g: Point| {
        js_rows.extend_from_slice(&[i, i]);
        js_cols.extend_from_slice(&[2 * j, 2 * j + 1]);
        js_vals.extend_from_slice(&[g.x, g.y]);
    };
    for (i, cell) in d.cells.iter().enumerate() {
        let s = d.seeds[i];
        value += cell.moments.second - d.weights[i] * cell.area() + nu[i] * d.weights[i];
        grad[i] = nu[i] - cell.area();
        let mut diag = 0.0;
        let mut gi = Point::zeros();
        for piece in &cell.pieces {
            match *piece {
                Piece::Segment { a, b, on: Constraint::Bisector(j) } => {
                    let (qa, qb) = (d.vertices[a].pos, d.vertices[b].pos);
                    let len = (qb - qa).norm();
                    let w = len / (d.seeds[j] - s).norm();
                    let m = (qa + qb) * 0.5;
                    h.add(i, j, 0.5 * w);
                    diag -= 0.5 * w;
                    gi -= (m - s) * w;
                    push_js(i, j, (m - d.seeds[j]) * w);
                }
                Piece::Segment { .. } => {}
                Piece::Arc { a, b, theta, .. } => {
                    diag -= 0.5 * theta;
                    let (q0, q1) = (d.vertices[a].pos, d.vertices[b].pos);
                    gi -= perp(q0 - q1);
                }
                Piece::Circle => diag -= std::f64::consts::PI,
            }
        }
        h.add(i, i, diag);
        push_js(i, i, gi);
    }
    let seed_jacobian = sprs::TriMat::from_triplets((n, 2 * n), js_rows, js_cols, js_vals).to_csr();
    Ok(KantorovichDerivatives { value, gradient: grad, hessian: h.to_csr(), seed_jacobian })
}

/// Value of the Kantorovich functional only (for empty cells too).
pub fn kantorovich_value(nu: &[f64], d: &PowerDiagram) -> f64 {
    d.cells.iter().enumerate().map(|(i, c)| c.moments.second - d.weights[i] * c.area() + nu[i] * d.weights[i]).sum()
}

/// Initial weights: `mean(nu) / pi` for every seed when that leaves every
/// modified cell nonempty, all ones otherwise and in classical mode.
pub fn init_weights(s: &[Point], nu: &[f64], domain: &Domain, mode: Mode) -> Vec<f64> {
    let n = s.len();
    let ones = vec![1.0; n];
    if mode == Mode::Classical || n == 0 {
        return ones;
    }
    let mean = nu.iter().sum::<f64>() / n as f64;
    let guess = vec![mean / std::f64::consts::PI; n];
    match build_diagram(s, &guess, domain, mode) {
        Ok(d) if d.cells.iter().all(|c| !c.empty && c.area() > 0.0) => guess,
        _ => ones,
    }
}

/// One row of the Newton residual history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonRecord {
    pub iter: usize,
    pub res_inf: f64,
    pub res_l2: f64,
    pub alpha: f64,
    pub min_cell_area: f64,
}

impl NewtonRecord {
    /// CSV header matching [`NewtonRecord::csv_row`].
    pub const CSV_HEADER: &'static str = "iter,res_inf,res_l2,alpha,min_cell_area";

    /// CSV row.
    pub fn csv_row(&self) -> String {
        format!("{},{:e},{:e},{},{:e}", self.iter, self.res_inf, self.res_l2, self.alpha, self.min_cell_area)
    }
}

/// Newton solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    /// Stopping tolerance on `|F|_inf`; `None` means `0.01 * min_i nu_i`.
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: None, max_iter: 100, max_halvings: 60 }
    }
}

/// Converged weights with their diagram and residual history.
#[derive(Debug, Clone)]
pub struct NewtonResult {
    pub psi: Vec<f64>,
    pub diagram: PowerDiagram,
    pub iterations: usize,
    pub history: Vec<NewtonRecord>,
}

fn residual(nu: &[f64], d: &PowerDiagram) -> Vec<f64> {
    nu.iter().zip(&d.cells).map(|(v, c)| v - c.area()).collect()
}

fn min_area(d: &PowerDiagram) -> f64 {
    d.cells.iter().map(|c| if c.empty { 0.0 } else { c.area() }).fold(f64::INFINITY, f64::min)
}

/// Lower bound on cell areas accepted by the line search. Modified diagrams
/// use half the smallest target measure; classical ones also take the
/// zero-weight (Voronoi) cells into account.
pub fn nu_min(s: &[Point], nu: &[f64], domain: &Domain, mode: Mode) -> Result<f64> {
    let min_nu = nu.iter().copied().fold(f64::INFINITY, f64::min);
    match mode {
        Mode::Modified => Ok(0.5 * min_nu),
        Mode::Classical => {
            let vor = build_diagram(s, &vec![0.0; s.len()], domain, Mode::Classical)?;
            Ok(0.5 * min_area(&vor).min(min_nu))
        }
    }
}

/// Newton direction `p` solving `H p = -F`. In classical mode `H` has the
/// constant vector in its kernel, so the first weight is pinned.
fn newton_direction(der: &KantorovichDerivatives, mode: Mode) -> Result<Vec<f64>> {
    let n = der.gradient.len();
    let rhs: Vec<f64> = der.gradient.iter().map(|f| -f).collect();
    match mode {
        Mode::Modified => solve_sym(&der.hessian, &rhs),
        Mode::Classical => {
            if n == 1 {
                return Ok(vec![0.0]);
            }
            let mut asm = SymAssembler::new(n - 1);
            for (i, row) in der.hessian.outer_iterator().enumerate() {
                if i == 0 {
                    continue;
                }
                for (j, &v) in row.iter() {
                    if j > 0 {
                        asm.add(i - 1, j - 1, v);
                    }
                }
            }
            let x = solve_sym(&asm.to_csr(), &rhs[1..])?;
            let mut p = vec![0.0];
            p.extend(x);
            Ok(p)
        }
    }
}

/// Largest step `alpha = 2^-k` that keeps every cell above `nu_min` and
/// shrinks the Euclidean residual by the factor `1 - alpha / 2`. Returns the
/// step with the accepted diagram.
#[allow(clippy::too_many_arguments)]
pub fn kmt_linesearch(
    s: &[Point],
    nu: &[f64],
    psi: &[f64],
    p: &[f64],
    domain: &Domain,
    mode: Mode,
    nu_min: f64,
    max_halvings: usize,
) -> Result<(f64, PowerDiagram)> {
    let f0 = {
        let d = build_diagram(s, psi, domain, mode)?;
        norm(&residual(nu, &d))
    };
    kmt_from_residual(s, nu, psi, p, domain, mode, nu_min, max_halvings, f0)
}

#[allow(clippy::too_many_arguments)]
fn kmt_from_residual(
    s: &[Point],
    nu: &[f64],
    psi: &[f64],
    p: &[f64],
    domain: &Domain,
    mode: Mode,
    nu_min: f64,
    max_halvings: usize,
    f0: f64,
) -> Result<(f64, PowerDiagram)> {
    let mut alpha = 1.0;
    for _ in 0..=max_halvings {
        let trial: Vec<f64> = psi.iter().zip(p).map(|(a, b)| a + alpha * b).collect();
        if let Ok(d) = build_diagram(s, &trial, domain, mode) {
            let ok_area = d.cells.iter().all(|c| !c.empty && c.area() > nu_min);
            if ok_area && norm(&residual(nu, &d)) <= (1.0 - 0.5 * alpha) * f0 {
                return Ok((alpha, d));
            }
        }
        alpha *= 0.5;
    }
    Err(OttoError::KmtStall(max_halvings))
}

/// Damped Newton iteration for `F(s, nu, psi) = 0` starting from `psi0`.
pub fn newton_solve(
    s: &[Point],
    nu: &[f64],
    psi0: &[f64],
    domain: &Domain,
    mode: Mode,
    opts: &NewtonOptions,
) -> Result<NewtonResult> {
    let tol = opts.tol.unwrap_or_else(|| 0.01 * nu.iter().copied().fold(f64::INFINITY, f64::min));
    let mut psi = psi0.to_vec();
    let mut d = build_diagram(s, &psi, domain, mode)?;
    // The floor may not exceed what the starting diagram already satisfies.
    let numin = nu_min(s, nu, domain, mode)?.min(0.5 * min_area(&d));
    let mut history = Vec::new();
    for iter in 0..=opts.max_iter {
        let f = residual(nu, &d);
        let (rinf, r2) = (norm_inf(&f), norm(&f));
        if rinf < tol {
            history.push(NewtonRecord { iter, res_inf: rinf, res_l2: r2, alpha: 0.0, min_cell_area: min_area(&d) });
            return Ok(NewtonResult { psi, diagram: d, iterations: iter, history });
        }
        if iter == opts.max_iter {
            return Err(OttoError::NoConvergence { iters: iter, residual: rinf });
        }
        let der = kantorovich_eval(nu, &d)?;
        let p = newton_direction(&der, mode)?;
        let (alpha, nd) = kmt_from_residual(s, nu, &psi, &p, domain, mode, numin, opts.max_halvings, r2)?;
        history.push(NewtonRecord { iter, res_inf: rinf, res_l2: r2, alpha, min_cell_area: min_area(&d) });
        for (a, b) in psi.iter_mut().zip(&p) {
            *a += alpha * b;
        }
        d = nd;
    }
    unreachable!("loop returns on its last iteration")
}

/// Convenience wrapper: heuristic initial weights followed by Newton.
pub fn solve_weights(
    s: &[Point],
    nu: &[f64],
    domain: &Domain,
    mode: Mode,
    opts: &NewtonOptions,
) -> Result<NewtonResult> {
    let psi0 = init_weights(s, nu, domain, mode);
    newton_solve(s, nu, &psi0, domain, mode, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::to_dense;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn unit() -> Domain {
        Domain::rectangle(0.0, 0.0, 1.0, 1.0, [0; 4]).unwrap()
    }

    /// Random seeds and weights whose classical and modified diagrams have no
    /// empty cell.
    fn instance(n: usize, seed: u64) -> (Vec<Point>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let s: Vec<Point> = (0..n).map(|_| Point::new(rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9))).collect();
            let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.004..0.012)).collect();
            let full = [Mode::Classical, Mode::Modified]
                .iter()
                .all(|&m| build_diagram(&s, &w, &unit(), m).unwrap().cells.iter().all(|c| !c.empty));
            if full {
                return (s, w);
            }
        }
    }

    fn areas(s: &[Point], w: &[f64], mode: Mode) -> Vec<f64> {
        build_diagram(s, w, &unit(), mode).unwrap().cells.iter().map(|c| c.area()).collect()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for (mode, seed) in [(Mode::Modified, 1u64), (Mode::Modified, 2), (Mode::Classical, 3)] {
            let (s, w) = instance(10, seed);
            let nu = vec![0.05; 10];
            let d = build_diagram(&s, &w, &unit(), mode).unwrap();
            let der = kantorovich_eval(&nu, &d).unwrap();
            let h = to_dense(&der.hessian);
            let js = to_dense(&der.seed_jacobian);
            let eps = 1e-6;
            for j in 0..10 {
                let mut wp = w.clone();
                let mut wm = w.clone();
                wp[j] += eps;
                wm[j] -= eps;
                let (ap, am) = (areas(&s, &wp, mode), areas(&s, &wm, mode));
                for i in 0..10 {
                    let fd = -(ap[i] - am[i]) / (2.0 * eps);
                    assert!(
                        (fd - h[(i, j)]).abs() <= 1e-5 * h[(i, j)].abs().max(1e-2),
                        "H[{i},{j}] {fd} vs {}",
                        h[(i, j)]
                    );
                }
                for c in 0..2 {
                    let mut sp = s.clone();
                    let mut sm = s.clone();
                    sp[j][c] += eps;
                    sm[j][c] -= eps;
                    let (ap, am) = (areas(&sp, &w, mode), areas(&sm, &w, mode));
                    for i in 0..10 {
                        let fd = -(ap[i] - am[i]) / (2.0 * eps);
                        let an = js[(i, 2 * j + c)];
                        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1e-2), "Js[{i},{}] {fd} vs {an}", 2 * j + c);
                    }
                }
            }
        }
    }

    #[test]
    fn gradient_is_the_weight_derivative_of_k() {
        let (s, w) = instance(10, 4);
        let nu = vec![0.04; 10];
        let d = build_diagram(&s, &w, &unit(), Mode::Modified).unwrap();
        let der = kantorovich_eval(&nu, &d).unwrap();
        let k = |wv: &[f64]| kantorovich_value(&nu, &build_diagram(&s, wv, &unit(), Mode::Modified).unwrap());
        for i in 0..10 {
            // Richardson extrapolation of central differences.
            let cd = |h: f64| {
                let mut a = w.clone();
                let mut b = w.clone();
                a[i] += h;
                b[i] -= h;
                (k(&a) - k(&b)) / (2.0 * h)
            };
            let h = 1e-4;
            let fd = (4.0 * cd(h / 2.0) - cd(h)) / 3.0;
            assert!((fd - der.gradient[i]).abs() <= 1e-5 * der.gradient[i].abs().max(1e-3));
        }
    }

    #[test]
    fn classical_hessian_rows_sum_to_zero_and_arcs_add_dominance() {
        let (s, w) = instance(12, 5);
        let d = build_diagram(&s, &w, &unit(), Mode::Classical).unwrap();
        let h = to_dense(&kantorovich_eval(&vec![1.0 / 12.0; 12], &d).unwrap().hessian);
        for i in 0..12 {
            let row: f64 = (0..12).map(|j| h[(i, j)]).sum();
            assert!(row.abs() < 1e-12);
        }
        let d = build_diagram(&s, &w, &unit(), Mode::Modified).unwrap();
        let h = to_dense(&kantorovich_eval(&vec![0.02; 12], &d).unwrap().hessian);
        for i in 0..12 {
            let off: f64 = (0..12).filter(|&j| j != i).map(|j| h[(i, j)].abs()).sum();
            let theta: f64 = d.cells[i]
                .arcs()
                .map(|p| match p {
                    Piece::Arc { theta, .. } => *theta,
                    _ => 2.0 * PI,
                })
                .sum();
            assert!((h[(i, i)].abs() - off - 0.5 * theta).abs() < 1e-12);
            assert!((h[(i, j_sym(i))] - h[(j_sym(i), i)]).abs() < 1e-10);
        }
    }

    fn j_sym(i: usize) -> usize {
        (i + 3) % 12
    }

    #[test]
    fn kantorovich_is_concave_in_the_weights() {
        let (s, wa) = instance(10, 6);
        let (_, wb) = instance(10, 7);
        let nu = vec![0.03; 10];
        let k = |w: &[f64]| kantorovich_value(&nu, &build_diagram(&s, w, &unit(), Mode::Modified).unwrap());
        for t in [0.2, 0.5, 0.8] {
            let wt: Vec<f64> = wa.iter().zip(&wb).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            assert!(k(&wt) >= t * k(&wa) + (1.0 - t) * k(&wb) - 1e-10);
        }
    }

    #[test]
    fn area_responds_monotonically_to_weights() {
        let (s, w) = instance(15, 8);
        let base = areas(&s, &w, Mode::Modified);
        for i in 0..15 {
            let mut w2 = w.clone();
            w2[i] += 1e-3;
            let a = areas(&s, &w2, Mode::Modified);
            assert!(a[i] >= base[i]);
            for j in 0..15 {
                if j != i {
                    assert!(a[j] <= base[j] + 1e-15);
                }
            }
        }
    }

    #[test]
    fn heuristic_initialization() {
        let s = vec![Point::new(0.25, 0.25), Point::new(0.75, 0.75)];
        let nu = vec![PI * 0.01; 2];
        let psi = init_weights(&s, &nu, &unit(), Mode::Modified);
        assert!((psi[0] - 0.01).abs() < 1e-15);
        assert_eq!(init_weights(&s, &[0.5, 0.5], &unit(), Mode::Classical), vec![1.0, 1.0]);
        // Well separated seeds: the balls do not interact, so no Newton step is needed.
        let r = solve_weights(&s, &nu, &unit(), Mode::Modified, &NewtonOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn newton_converges_on_100_random_seeds() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let s: Vec<Point> = (0..100).map(|_| Point::new(rng.gen(), rng.gen())).collect();
        let nu = vec![0.6 / 100.0; 100];
        let r = solve_weights(&s, &nu, &unit(), Mode::Modified, &NewtonOptions::default()).unwrap();
        assert!(r.iterations <= 15, "{} iterations", r.iterations);
        let eps = 0.01 * nu[0];
        for c in &r.diagram.cells {
            assert!((c.area() - nu[0]).abs() < eps);
        }
        for rec in r.history.windows(2) {
            assert!(rec[1].res_l2 <= (1.0 - 0.5 * rec[0].alpha) * rec[0].res_l2 + 1e-15);
        }
    }

    #[test]
    fn classical_newton_reaches_unequal_measures() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s: Vec<Point> = (0..30).map(|_| Point::new(rng.gen(), rng.gen())).collect();
        let raw: Vec<f64> = (0..30).map(|_| rng.gen_range(1.0..3.0)).collect();
        let tot: f64 = raw.iter().sum();
        let nu: Vec<f64> = raw.iter().map(|v| v / tot).collect();
        let opts = NewtonOptions { tol: Some(1e-12), ..Default::default() };
        let r = solve_weights(&s, &nu, &unit(), Mode::Classical, &opts).unwrap();
        for (c, v) in r.diagram.cells.iter().zip(&nu) {
            assert!((c.area() - v).abs() < 1e-12);
        }
    }

    #[test]
    fn single_seed_solves_in_one_shot() {
        let s = vec![Point::new(0.5, 0.5)];
        let nu = vec![0.1];
        let r = newton_solve(&s, &nu, &[0.02], &unit(), Mode::Modified, &NewtonOptions::default()).unwrap();
        assert!((r.psi[0] - 0.1 / PI).abs() < 1e-12);
        assert_eq!(nu_min(&s, &nu, &unit(), Mode::Modified).unwrap(), 0.05);
    }
}
