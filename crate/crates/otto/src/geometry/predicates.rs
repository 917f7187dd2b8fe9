//! Exact-sign orientation and power-conflict predicates.
//!
//! Each predicate first evaluates the determinant in floating point and
//! compares it against a forward error bound. When the filter cannot certify
//! the sign, the determinant is recomputed in exact rational arithmetic from
//! the original `f64` inputs.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};

use super::Point;
use crate::error::{OttoError, Result};

const EPS: f64 = f64::EPSILON * 0.5;

fn rat(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite coordinate")
}

fn sign_of(x: &BigRational) -> i32 {
    if x.is_zero() {
        0
    } else if x.is_positive() {
        1
    } else {
        -1
    }
}

/// Sign of the orientation determinant of `(a, b, c)`: `+1` for a
/// counterclockwise turn, `-1` for clockwise, `0` for collinear points.
pub fn orient2d(a: Point, b: Point, c: Point) -> i32 {
    let l = (a.x - c.x) * (b.y - c.y);
    let r = (a.y - c.y) * (b.x - c.x);
    let det = l - r;
    let bound = 4.0 * EPS * (l.abs() + r.abs()) * (1.0 + 8.0 * EPS);
    if det > bound {
        return 1;
    }
    if -det > bound {
        return -1;
    }
    orient2d_exact(a, b, c)
}

/// Floating-point orientation determinant (twice the signed triangle area).
pub fn orient2d_value(a: Point, b: Point, c: Point) -> f64 {
    (a.x - c.x) * (b.y - c.y) - (a.y - c.y) * (b.x - c.x)
}

fn orient2d_exact(a: Point, b: Point, c: Point) -> i32 {
    let (ax, ay) = (rat(a.x), rat(a.y));
    let (bx, by) = (rat(b.x), rat(b.y));
    let (cx, cy) = (rat(c.x), rat(c.y));
    let det = (&ax - &cx) * (&by - &cy) - (&ay - &cy) * (&bx - &cx);
    sign_of(&det)
}

/// Sign of the lifted 4x4 determinant with rows `[x, y, |s|^2 - psi, 1]` for
/// `i, j, k, n` in that order, without any orientation normalization or
/// perturbation. Returns 0 only for an exact zero.
pub fn power_det_sign(s: [Point; 4], psi: [f64; 4]) -> i32 {
    // Translating by s_n and eliminating the last row reduces the 4x4
    // determinant to a 3x3 one with lifts |d|^2 - psi_a + psi_n.
    let n = s[3];
    let mut d = [[0.0f64; 3]; 3];
    let mut mag = [0.0f64; 3];
    for a in 0..3 {
        let dx = s[a].x - n.x;
        let dy = s[a].y - n.y;
        let lift = dx * dx + dy * dy - psi[a] + psi[3];
        d[a] = [dx, dy, lift];
        mag[a] = dx * dx + dy * dy + psi[a].abs() + psi[3].abs();
    }
    let t0 = d[1][0] * d[2][1] - d[2][0] * d[1][1];
    let t1 = d[2][0] * d[0][1] - d[0][0] * d[2][1];
    let t2 = d[0][0] * d[1][1] - d[1][0] * d[0][1];
    let det = d[0][2] * t0 + d[1][2] * t1 + d[2][2] * t2;
    let perm = mag[0] * ((d[1][0] * d[2][1]).abs() + (d[2][0] * d[1][1]).abs())
        + mag[1] * ((d[2][0] * d[0][1]).abs() + (d[0][0] * d[2][1]).abs())
        + mag[2] * ((d[0][0] * d[1][1]).abs() + (d[1][0] * d[0][1]).abs());
    let bound = 64.0 * EPS * perm;
    if det > bound {
        return 1;
    }
    if -det > bound {
        return -1;
    }
    power_det_exact(s, psi)
}

fn power_det_exact(s: [Point; 4], psi: [f64; 4]) -> i32 {
    let nx = rat(s[3].x);
    let ny = rat(s[3].y);
    let pn = rat(psi[3]);
    let mut d: Vec<[BigRational; 3]> = Vec::with_capacity(3);
    for a in 0..3 {
        let dx = rat(s[a].x) - &nx;
        let dy = rat(s[a].y) - &ny;
        let lift = &dx * &dx + &dy * &dy - rat(psi[a]) + &pn;
        d.push([dx, dy, lift]);
    }
    let t0 = &d[1][0] * &d[2][1] - &d[2][0] * &d[1][1];
    let t1 = &d[2][0] * &d[0][1] - &d[0][0] * &d[2][1];
    let t2 = &d[0][0] * &d[1][1] - &d[1][0] * &d[0][1];
    let det = &d[0][2] * t0 + &d[1][2] * t1 + &d[2][2] * t2;
    sign_of(&det)
}

/// Exact power-conflict test of the weighted point `n` against the triangle
/// `(i, j, k)`.
///
/// `ids` are the global indices used to order the symbolic perturbation
/// `psi_m -> psi_m + eps^(ids[m])`. The triangle is first brought to
/// counterclockwise order. A positive result means that `n` lies strictly
/// inside the orthogonal circle of the triangle, so the triangle must be
/// removed when `n` is inserted.
pub fn power_conflict(s: [Point; 4], psi: [f64; 4], ids: [usize; 4]) -> Result<i32> {
    let (mut s, mut psi, mut ids) = (s, psi, ids);
    let o = orient2d(s[0], s[1], s[2]);
    if o < 0 {
        s.swap(1, 2);
        psi.swap(1, 2);
        ids.swap(1, 2);
    }
    let c = power_det_sign(s, psi);
    if c != 0 {
        return Ok(c);
    }
    if o == 0 {
        return Err(OttoError::UnresolvableDegeneracy(format!(
            "collinear triangle ({}, {}, {}) with zero conflict determinant against {}",
            ids[0], ids[1], ids[2], ids[3]
        )));
    }
    Ok(perturbed_sign(s, ids))
}

/// Sign of the leading nonzero term of the perturbed determinant, assuming
/// `(s[0], s[1], s[2])` is counterclockwise and the unperturbed value is zero.
fn perturbed_sign(s: [Point; 4], ids: [usize; 4]) -> i32 {
    // Cofactors of the lift column: d C / d psi_m for each row m.
    let coeff = |m: usize| -> i32 {
        match m {
            0 => -orient2d(s[1], s[2], s[3]),
            1 => orient2d(s[0], s[2], s[3]),
            2 => -orient2d(s[0], s[1], s[3]),
            _ => orient2d(s[0], s[1], s[2]),
        }
    };
    let mut order = [0usize, 1, 2, 3];
    order.sort_by_key(|&m| ids[m]);
    for m in order {
        let c = coeff(m);
        if c != 0 {
            return c;
        }
    }
    0
}

/// Exact value of the lifted determinant as a rational number, for tests and
/// diagnostics.
pub fn power_det_rational(s: [Point; 4], psi: [f64; 4]) -> BigRational {
    let mut rows: Vec<[BigRational; 4]> = Vec::with_capacity(4);
    for a in 0..4 {
        let x = rat(s[a].x);
        let y = rat(s[a].y);
        let l = &x * &x + &y * &y - rat(psi[a]);
        rows.push([x, y, l, BigRational::from_integer(BigInt::from(1))]);
    }
    det4(&rows)
}

fn det3(m: [[&BigRational; 3]; 3]) -> BigRational {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn det4(r: &[[BigRational; 4]]) -> BigRational {
    let mut total = BigRational::zero();
    for col in 0..4 {
        let cols: Vec<usize> = (0..4).filter(|&c| c != col).collect();
        let minor = [
            [&r[1][cols[0]], &r[1][cols[1]], &r[1][cols[2]]],
            [&r[2][cols[0]], &r[2][cols[1]], &r[2][cols[2]]],
            [&r[3][cols[0]], &r[3][cols[1]], &r[3][cols[2]]],
        ];
        let term = &r[0][col] * det3(minor);
        if col % 2 == 0 {
            total += term;
        } else {
            total -= term;
        }
    }
    total
}
