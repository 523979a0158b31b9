//! Gauss rules on the reference triangle and the unit interval, and composite
//! integration across straight or circular discontinuity interfaces.

use std::sync::OnceLock;

use gauss_quad::GaussLegendre;

use crate::error::{DpgError, Result};
use crate::geometry::{clip_half_plane, fan, pt, AffineMap, Point2, Triangle};

pub const MAX_TRIANGLE_DEGREE: usize = 10;
pub const MAX_EDGE_DEGREE: usize = 31;

/// Sagitta of the inscribed polygon relative to the circle radius.
pub const CIRCLE_SAGITTA: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct QuadRule<P> {
    pub points: Vec<P>,
    pub weights: Vec<f64>,
    pub exactness_degree: usize,
}

/// ∫_T x^p y^q over the reference triangle.
pub fn reference_monomial_integral(p: usize, q: usize) -> f64 {
    factorial(p) * factorial(q) / factorial(p + q + 2)
}

pub(crate) fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Gauss-Legendre nodes and weights mapped to [0,1].
fn gauss_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    if n == 1 {
        return (vec![0.5], vec![1.0]);
    }
    let rule = GaussLegendre::new(n).expect("Gauss-Legendre rule with n >= 2");
    let mut pairs: Vec<(f64, f64)> = rule.as_node_weight_pairs().to_vec();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).unzip()
}

fn build_triangle_rule(degree: usize) -> QuadRule<Point2> {
    let (points, weights) = match degree {
        0 | 1 => (vec![pt(1.0 / 3.0, 1.0 / 3.0)], vec![0.5]),
        2 => (
            vec![pt(0.5, 0.0), pt(0.5, 0.5), pt(0.0, 0.5)],
            vec![1.0 / 6.0; 3],
        ),
        _ => {
            // Collapsed tensor rule; the extra (1-s) factor raises the s-degree by one.
            let n = (degree + 3) / 2;
            let (x, w) = gauss_unit(n);
            let mut points = Vec::with_capacity(n * n);
            let mut weights = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let s = x[i];
                    points.push(pt(s, (1.0 - s) * x[j]));
                    weights.push(w[i] * w[j] * (1.0 - s));
                }
            }
            (points, weights)
        }
    };
    let rule = QuadRule { points, weights, exactness_degree: degree.max(1) };
    verify_triangle_rule(&rule);
    rule
}

fn verify_triangle_rule(rule: &QuadRule<Point2>) {
    for d in 0..=rule.exactness_degree {
        for p in 0..=d {
            let q = d - p;
            let approx: f64 = rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(x, w)| w * x.x.powi(p as i32) * x.y.powi(q as i32))
                .sum();
            let exact = reference_monomial_integral(p, q);
            assert!(
                ((approx - exact) / exact).abs() < 1e-13,
                "triangle rule of degree {} fails on x^{p} y^{q}",
                rule.exactness_degree
            );
        }
    }
}

fn build_edge_rule(degree: usize) -> QuadRule<f64> {
    let n = degree / 2 + 1;
    let (points, weights) = gauss_unit(n);
    QuadRule { points, weights, exactness_degree: 2 * n - 1 }
}

/// Rule exact for total degree `degree` on the reference triangle.
pub fn triangle_rule(degree: usize) -> Result<&'static QuadRule<Point2>> {
    static RULES: OnceLock<Vec<QuadRule<Point2>>> = OnceLock::new();
    if degree > MAX_TRIANGLE_DEGREE {
        return Err(DpgError::QuadratureDegree(degree));
    }
    let rules = RULES.get_or_init(|| (0..=MAX_TRIANGLE_DEGREE).map(build_triangle_rule).collect());
    Ok(&rules[degree])
}

/// Gauss-Legendre rule on [0,1] exact for polynomials of degree `degree`.
pub fn edge_rule(degree: usize) -> Result<&'static QuadRule<f64>> {
    static RULES: OnceLock<Vec<QuadRule<f64>>> = OnceLock::new();
    if degree > MAX_EDGE_DEGREE {
        return Err(DpgError::QuadratureDegree(degree));
    }
    let rules = RULES.get_or_init(|| (0..=MAX_EDGE_DEGREE).map(build_edge_rule).collect());
    Ok(&rules[degree])
}

/// Physical points and weights of the pushed-forward triangle rule.
pub fn triangle_points(tri: &Triangle, degree: usize) -> Result<(Vec<Point2>, Vec<f64>)> {
    let rule = triangle_rule(degree)?;
    let map = AffineMap::new(tri);
    let scale = map.det.abs();
    Ok((
        rule.points.iter().map(|r| map.apply(*r)).collect(),
        rule.weights.iter().map(|w| w * scale).collect(),
    ))
}

pub fn integrate_triangle(f: impl Fn(Point2) -> f64, tri: &Triangle, degree: usize) -> Result<f64> {
    let (p, w) = triangle_points(tri, degree)?;
    Ok(p.iter().zip(&w).map(|(x, w)| w * f(*x)).sum())
}

/// Line integral over the segment a→b (arc-length measure).
pub fn integrate_segment(f: impl Fn(Point2) -> f64, a: Point2, b: Point2, degree: usize) -> Result<f64> {
    let rule = edge_rule(degree)?;
    let len = (b - a).norm();
    Ok(rule.points.iter().zip(&rule.weights).map(|(t, w)| w * len * f(a.lerp(b, *t))).sum())
}

/// Discontinuity set of a piecewise-smooth function.
#[derive(Clone, Debug, PartialEq)]
pub enum Interface {
    None,
    /// Side 0 is `normal·x >= offset`, side 1 the rest.
    Line { normal: Point2, offset: f64 },
    /// Concentric circles with ascending radii; the side of a point is the number
    /// of radii `r` with `|x - center| >= r`.
    Circles { center: Point2, radii: Vec<f64> },
}

impl Interface {
    pub fn circles(center: Point2, mut radii: Vec<f64>) -> Self {
        radii.sort_by(f64::total_cmp);
        Interface::Circles { center, radii }
    }

    pub fn num_sides(&self) -> usize {
        match self {
            Interface::None => 1,
            Interface::Line { .. } => 2,
            Interface::Circles { radii, .. } => radii.len() + 1,
        }
    }

    pub fn side(&self, p: Point2) -> usize {
        match self {
            Interface::None => 0,
            Interface::Line { normal, offset } => usize::from(normal.dot(p) < *offset),
            Interface::Circles { center, radii } => {
                let d = (p - *center).norm();
                radii.iter().filter(|r| d >= **r).count()
            }
        }
    }

    /// Parameters in (0,1) where the segment a→b crosses the interface.
    pub fn crossings(&self, a: Point2, b: Point2) -> Vec<f64> {
        const EPS: f64 = 1e-14;
        let mut ts = Vec::new();
        let d = b - a;
        match self {
            Interface::None => {}
            Interface::Line { normal, offset } => {
                let den = normal.dot(d);
                if den.abs() > EPS * normal.norm() * d.norm() {
                    ts.push((offset - normal.dot(a)) / den);
                }
            }
            Interface::Circles { center, radii } => {
                let e = a - *center;
                let qa = d.dot(d);
                let qb = 2.0 * e.dot(d);
                for r in radii {
                    let qc = e.dot(e) - r * r;
                    let disc = qb * qb - 4.0 * qa * qc;
                    if disc > 0.0 && qa > 0.0 {
                        let s = disc.sqrt();
                        ts.push((-qb - s) / (2.0 * qa));
                        ts.push((-qb + s) / (2.0 * qa));
                    }
                }
            }
        }
        ts.retain(|t| *t > EPS && *t < 1.0 - EPS);
        ts.sort_by(f64::total_cmp);
        ts
    }
}

/// Weighted points labelled with the interface side they belong to. Weights may
/// be negative when a region is obtained by subtraction.
#[derive(Clone, Debug, Default)]
pub struct SidedPoints {
    pub points: Vec<Point2>,
    pub weights: Vec<f64>,
    pub sides: Vec<usize>,
}

impl SidedPoints {
    fn push_triangle(&mut self, tri: &Triangle, rule: &QuadRule<Point2>, side: usize, sign: f64) {
        let map = AffineMap::new(tri);
        let scale = sign * map.det.abs();
        for (r, w) in rule.points.iter().zip(&rule.weights) {
            self.points.push(map.apply(*r));
            self.weights.push(w * scale);
            self.sides.push(side);
        }
    }

    fn push_polygon(&mut self, poly: &[Point2], rule: &QuadRule<Point2>, side: usize, sign: f64) {
        for t in fan(poly) {
            self.push_triangle(&t, rule, side, sign);
        }
    }

    pub fn integrate(&self, f: impl Fn(Point2, usize) -> f64) -> f64 {
        let mut s = 0.0;
        for i in 0..self.points.len() {
            s += self.weights[i] * f(self.points[i], self.sides[i]);
        }
        s
    }
}

enum DiskPiece {
    Empty,
    Whole,
    Polygon(Vec<Point2>),
}

fn circle_polygon_sides() -> usize {
    static N: OnceLock<usize> = OnceLock::new();
    *N.get_or_init(|| (std::f64::consts::PI / (1.0 - CIRCLE_SAGITTA).acos()).ceil() as usize)
}

fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let d = b - a;
    let t = ((p - a).dot(d) / d.dot(d)).clamp(0.0, 1.0);
    (p - a.lerp(b, t)).norm()
}

fn disk_piece(tri: &Triangle, center: Point2, r: f64) -> DiskPiece {
    let n = circle_polygon_sides();
    let r_in = r * (std::f64::consts::PI / n as f64).cos();
    if tri.iter().all(|v| (*v - center).norm() <= r_in) {
        return DiskPiece::Whole;
    }
    let inside = {
        let l = crate::geometry::barycentric(tri, center);
        l.iter().all(|x| *x >= 0.0)
    };
    let dist = if inside {
        0.0
    } else {
        (0..3).map(|i| point_segment_distance(center, tri[i], tri[(i + 1) % 3])).fold(f64::INFINITY, f64::min)
    };
    if dist >= r {
        return DiskPiece::Empty;
    }
    // Only the arc near the triangle matters; restrict the polygon to vertices
    // within reach to keep the clip cheap.
    let mut poly: Vec<Point2> = (0..n)
        .map(|k| {
            let a = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            pt(center.x + r * a.cos(), center.y + r * a.sin())
        })
        .collect();
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let normal = (b - a).perp();
        poly = clip_half_plane(&poly, normal, normal.dot(a));
        if poly.len() < 3 {
            return DiskPiece::Empty;
        }
    }
    DiskPiece::Polygon(poly)
}

/// Quadrature points for ∫_tri f(x, side(x)) that respect the interface.
pub fn split_triangle_points(tri: &Triangle, interface: &Interface, degree: usize) -> Result<SidedPoints> {
    let rule = triangle_rule(degree)?;
    let mut out = SidedPoints::default();
    match interface {
        Interface::None => out.push_triangle(tri, rule, 0, 1.0),
        Interface::Line { normal, offset } => {
            let scale = normal.norm() * crate::geometry::diameter(tri);
            let d: Vec<f64> = tri.iter().map(|v| normal.dot(*v) - offset).collect();
            if d.iter().all(|x| *x >= -1e-14 * scale) || d.iter().all(|x| *x <= 1e-14 * scale) {
                let side = interface.side(crate::geometry::centroid(tri));
                out.push_triangle(tri, rule, side, 1.0);
            } else {
                let upper = clip_half_plane(tri, *normal, *offset);
                let lower = clip_half_plane(tri, -*normal, -*offset);
                out.push_polygon(&upper, rule, 0, 1.0);
                out.push_polygon(&lower, rule, 1, 1.0);
            }
        }
        Interface::Circles { center, radii } => {
            let pieces: Vec<DiskPiece> = radii.iter().map(|r| disk_piece(tri, *center, *r)).collect();
            if pieces.iter().all(|p| !matches!(p, DiskPiece::Polygon(_))) {
                let side = pieces.iter().filter(|p| matches!(p, DiskPiece::Empty)).count();
                out.push_triangle(tri, rule, side, 1.0);
                return Ok(out);
            }
            // Region of side s is D_{s+1} \ D_s, with D_0 = ∅ and D_{k+1} = tri.
            let k = radii.len();
            for s in 0..=k {
                let add = |piece: Option<&DiskPiece>, sign: f64, out: &mut SidedPoints| match piece {
                    None => out.push_triangle(tri, rule, s, sign),
                    Some(DiskPiece::Empty) => {}
                    Some(DiskPiece::Whole) => out.push_triangle(tri, rule, s, sign),
                    Some(DiskPiece::Polygon(p)) => out.push_polygon(p, rule, s, sign),
                };
                add(pieces.get(s), 1.0, &mut out);
                if s > 0 {
                    add(pieces.get(s - 1), -1.0, &mut out);
                }
            }
        }
    }
    Ok(out)
}

/// Quadrature points on the segment a→b split at interface crossings; the
/// weights include the arc-length factor.
pub fn split_segment_points(a: Point2, b: Point2, interface: &Interface, degree: usize) -> Result<SidedPoints> {
    let rule = edge_rule(degree)?;
    let len = (b - a).norm();
    let mut cuts = vec![0.0];
    cuts.extend(interface.crossings(a, b));
    cuts.push(1.0);
    let mut out = SidedPoints::default();
    for win in cuts.windows(2) {
        let (t0, t1) = (win[0], win[1]);
        let side = interface.side(a.lerp(b, 0.5 * (t0 + t1)));
        for (t, w) in rule.points.iter().zip(&rule.weights) {
            out.points.push(a.lerp(b, t0 + (t1 - t0) * t));
            out.weights.push(w * (t1 - t0) * len);
            out.sides.push(side);
        }
    }
    Ok(out)
}

/// ∫_tri f(x, side(x)) dx for a function that is smooth on each side of the interface.
pub fn integrate_split(
    f: impl Fn(Point2, usize) -> f64,
    tri: &Triangle,
    interface: &Interface,
    degree: usize,
) -> Result<f64> {
    Ok(split_triangle_points(tri, interface, degree)?.integrate(f))
}
