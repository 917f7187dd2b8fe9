//! Closed-form area moments of regions bounded by segments and circular arcs.
//!
//! All boundary pieces are integrated with Green's theorem in coordinates
//! relative to a local origin, which keeps the second moments accurate for
//! cells far from the global origin.

use super::Point;

/// Area, first moment and polar second moment of a region about the local origin.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub area: f64,
    pub first: Point,
    pub second: f64,
}

impl Moments {
    /// Centroid in local coordinates.
    pub fn centroid(&self) -> Point {
        if self.area == 0.0 {
            Point::zeros()
        } else {
            self.first / self.area
        }
    }
}

impl std::ops::AddAssign for Moments {
    fn add_assign(&mut self, o: Moments) {
        self.area += o.area;
        self.first += o.first;
        self.second += o.second;
    }
}

/// Boundary contribution of the oriented segment `a -> b`.
pub fn segment(a: Point, b: Point) -> Moments {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let area = 0.5 * (a.x * b.y - a.y * b.x);
    let mx = dy / 6.0 * (a.x * a.x + a.x * b.x + b.x * b.x);
    let my = -dx / 6.0 * (a.y * a.y + a.y * b.y + b.y * b.y);
    let cx = a.x * a.x * a.x + a.x * a.x * b.x + a.x * b.x * b.x + b.x * b.x * b.x;
    let cy = a.y * a.y * a.y + a.y * a.y * b.y + a.y * b.y * b.y + b.y * b.y * b.y;
    let second = dy / 12.0 * cx - dx / 12.0 * cy;
    Moments { area, first: Point::new(mx, my), second }
}

/// Boundary contribution of the counterclockwise arc of radius `r` centered at
/// the local origin, from angle `phi0` to `phi0 + theta`.
pub fn arc(r: f64, phi0: f64, theta: f64) -> Moments {
    let phi1 = phi0 + theta;
    let fx = |p: f64| {
        let s = p.sin();
        s - s * s * s / 3.0
    };
    let fy = |p: f64| {
        let c = p.cos();
        -c + c * c * c / 3.0
    };
    let f2 = |p: f64| 0.75 * p + (4.0 * p).sin() / 16.0;
    let r2 = r * r;
    Moments {
        area: 0.5 * r2 * theta,
        first: Point::new(0.5 * r2 * r * (fx(phi1) - fx(phi0)), 0.5 * r2 * r * (fy(phi1) - fy(phi0))),
        second: r2 * r2 / 3.0 * (f2(phi1) - f2(phi0)),
    }
}

/// Moments of a closed polygon given as a counterclockwise vertex loop.
pub fn polygon(pts: &[Point]) -> Moments {
    let mut m = Moments::default();
    let n = pts.len();
    for k in 0..n {
        m += segment(pts[k], pts[(k + 1) % n]);
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn unit_square_moments() {
        let sq = [Point::new(0.0, 0.0), Point::new(1.0, 0.0), Point::new(1.0, 1.0), Point::new(0.0, 1.0)];
        let m = polygon(&sq);
        assert!((m.area - 1.0).abs() < 1e-15);
        assert!((m.centroid() - Point::new(0.5, 0.5)).norm() < 1e-15);
        // Integral of x^2 + y^2 over the unit square is 2/3.
        assert!((m.second - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn full_circle_moments() {
        let r = 0.3;
        let m = arc(r, 0.0, 2.0 * PI);
        assert!((m.area - PI * r * r).abs() < 1e-15);
        assert!(m.first.norm() < 1e-15);
        assert!((m.second - PI * r.powi(4) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn half_disk_by_arc_and_chord() {
        let r = 2.0;
        let mut m = arc(r, 0.0, PI);
        m += segment(Point::new(-r, 0.0), Point::new(r, 0.0));
        assert!((m.area - PI * r * r / 2.0).abs() < 1e-14);
        // Centroid of a half disk sits at 4r/(3 pi) above the diameter.
        assert!((m.centroid().y - 4.0 * r / (3.0 * PI)).abs() < 1e-14);
        assert!((m.second - PI * r.powi(4) / 4.0).abs() < 1e-13);
    }

    #[test]
    fn triangle_second_moment_matches_quadrature() {
        let t = [Point::new(0.2, -0.1), Point::new(1.3, 0.4), Point::new(0.1, 0.9)];
        let m = polygon(&t);
        // Edge-midpoint quadrature is exact for quadratics on triangles.
        let mids = [(t[0] + t[1]) / 2.0, (t[1] + t[2]) / 2.0, (t[2] + t[0]) / 2.0];
        let q: f64 = mids.iter().map(|p| p.norm_squared()).sum::<f64>() / 3.0 * m.area;
        assert!((m.second - q).abs() < 1e-14);
    }
}
