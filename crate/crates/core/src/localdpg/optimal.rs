//! Closed-form local test functions for constant convection b̄, the shadow of an
//! element along b̄, the modified element inner product and the perturbed form.
//!
//! Work happens in a rotated frame (ξ, η) with ξ along b̄/|b̄|. Every line η = y
//! meets a convex element in an interval [x₋(y), x₊(y)].

use crate::error::{DpgError, Result};
use crate::geometry::{convex_hull, diameter, pt, signed_area, Point2, Triangle};
use crate::mesh::{outward_normal, EdgeLabel};
use crate::poly::{Poly1, Poly2};
use crate::quadrature::{edge_rule, triangle_points};

/// Rotated coordinates with the first axis along a constant field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub dir: Point2,
    pub speed: f64,
}

impl Frame {
    pub fn new(b: Point2) -> Result<Self> {
        let speed = b.norm();
        if !(speed > 0.0) || !speed.is_finite() {
            return Err(DpgError::DegenerateField(0));
        }
        Ok(Frame { dir: b * (1.0 / speed), speed })
    }

    pub fn to_frame(&self, p: Point2) -> Point2 {
        pt(self.dir.dot(p), self.dir.perp().dot(p))
    }

    pub fn from_frame(&self, q: Point2) -> Point2 {
        self.dir * q.x + self.dir.perp() * q.y
    }

    /// p expressed in frame coordinates.
    pub fn poly_to_frame(&self, p: &Poly2) -> Poly2 {
        let d = self.dir;
        p.compose_affine([[d.x, -d.y], [d.y, d.x]], pt(0.0, 0.0))
    }

    pub fn poly_from_frame(&self, q: &Poly2) -> Poly2 {
        let d = self.dir;
        q.compose_affine([[d.x, d.y], [-d.y, d.x]], pt(0.0, 0.0))
    }
}

/// Entry and exit abscissae x₋(y), x₊(y) of the line η = y through the convex
/// polygon `poly` (global coordinates), in the frame of `frame`.
pub fn ray_exit(poly: &[Point2], frame: &Frame, y: f64) -> Result<(f64, f64)> {
    let q: Vec<Point2> = poly.iter().map(|p| frame.to_frame(*p)).collect();
    ray_exit_frame(&q, y)
}

pub(crate) fn ray_exit_frame(q: &[Point2], y: f64) -> Result<(f64, f64)> {
    let scale = q.iter().map(|p| p.x.abs().max(p.y.abs())).fold(1e-300, f64::max);
    let tol = 1e-12 * scale;
    let (lo, hi) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.y), b.max(p.y)));
    if y < lo - tol || y > hi + tol {
        return Err(DpgError::OutsideShadow(y));
    }
    let y = y.clamp(lo, hi);
    let mut xmin = f64::INFINITY;
    let mut xmax = f64::NEG_INFINITY;
    let n = q.len();
    for i in 0..n {
        let a = q[i];
        let b = q[(i + 1) % n];
        let (ylo, yhi) = (a.y.min(b.y), a.y.max(b.y));
        if y < ylo - tol || y > yhi + tol {
            continue;
        }
        if (b.y - a.y).abs() <= tol {
            for x in [a.x, b.x] {
                xmin = xmin.min(x);
                xmax = xmax.max(x);
            }
        } else {
            let t = ((y - a.y) / (b.y - a.y)).clamp(0.0, 1.0);
            let x = a.x + t * (b.x - a.x);
            xmin = xmin.min(x);
            xmax = xmax.max(x);
        }
    }
    Ok((xmin, xmax))
}

/// A function on an element whose derivative along the element's field is known.
pub trait AlongField {
    fn value(&self, p: Point2) -> f64;
    /// b̄·∇ of the function.
    fn deriv_b(&self, p: Point2) -> f64;
}

/// A polynomial paired with the constant field used for its derivative.
pub struct FieldPoly<'a> {
    pub poly: &'a Poly2,
    pub deriv: Poly2,
}

impl<'a> FieldPoly<'a> {
    pub fn new(poly: &'a Poly2, b: Point2) -> Self {
        FieldPoly { poly, deriv: poly.directional(b) }
    }
}

impl AlongField for FieldPoly<'_> {
    fn value(&self, p: Point2) -> f64 {
        self.poly.eval(p)
    }
    fn deriv_b(&self, p: Point2) -> f64 {
        self.deriv.eval(p)
    }
}

/// Difference of two functions.
pub struct Difference<'a>(pub &'a dyn AlongField, pub &'a dyn AlongField);

impl AlongField for Difference<'_> {
    fn value(&self, p: Point2) -> f64 {
        self.0.value(p) - self.1.value(p)
    }
    fn deriv_b(&self, p: Point2) -> f64 {
        self.0.deriv_b(p) - self.1.deriv_b(p)
    }
}

/// Split a triangle by the lines η = const through its vertices. On each piece
/// x₋ and x₊ are affine in η, so the optimal test function is polynomial there.
pub fn characteristic_fan(tri: &Triangle, frame: &Frame) -> Vec<Triangle> {
    let mut v: Vec<Point2> = tri.iter().map(|p| frame.to_frame(*p)).collect();
    v.sort_by(|a, b| a.y.total_cmp(&b.y));
    let span = v[2].y - v[0].y;
    let orient = |t: Triangle| -> Triangle {
        let g = t.map(|q| frame.from_frame(q));
        if signed_area(&g) < 0.0 {
            [g[0], g[2], g[1]]
        } else {
            g
        }
    };
    if (v[1].y - v[0].y).abs() <= 1e-14 * span || (v[2].y - v[1].y).abs() <= 1e-14 * span {
        return vec![orient([v[0], v[1], v[2]])];
    }
    let t = (v[1].y - v[0].y) / span;
    let cut = v[0].lerp(v[2], t);
    vec![orient([v[0], v[1], cut]), orient([v[1], v[2], cut])]
}

fn check_regime(tri: &Triangle, speed: f64) -> Result<()> {
    let diam = diameter(tri);
    if diam > speed * (1.0 + 1e-12) {
        return Err(DpgError::EquivalenceRegime { diam, speed });
    }
    Ok(())
}

/// Exact local test function for constant (b̄, c̄, d̄) and polynomial (u, w):
/// the Riesz lift of the perturbed form in the modified inner product.
#[derive(Clone, Debug)]
pub struct OptimalTest {
    frame: Frame,
    verts: Vec<Point2>,
    /// |b̄|∂_ξu + c̄u + d̄w in frame coordinates.
    source: Poly2,
    /// c̄u + d̄w in frame coordinates.
    zeroth: Poly2,
    u: Poly2,
    w: Poly2,
}

struct LineData {
    xm: f64,
    /// Antiderivative of the source along the line, vanishing at x₋.
    g1: Poly1,
    /// Antiderivative of g1, vanishing at x₋.
    g2: Poly1,
    alpha: f64,
    beta: f64,
}

impl OptimalTest {
    pub fn new(tri: &Triangle, b: Point2, c: f64, d: f64, u: &Poly2, w: &Poly2) -> Result<Self> {
        let frame = Frame::new(b)?;
        check_regime(tri, frame.speed)?;
        let uf = frame.poly_to_frame(u);
        let wf = frame.poly_to_frame(w);
        let zeroth = &(&uf * c) + &(&wf * d);
        let source = &(&uf.dx() * frame.speed) + &zeroth;
        Ok(OptimalTest { frame, verts: tri.iter().map(|p| frame.to_frame(*p)).collect(), source, zeroth, u: uf, w: wf })
    }

    fn line(&self, y: f64) -> Result<LineData> {
        let (xm, xp) = ray_exit_frame(&self.verts, y)?;
        let speed = self.frame.speed;
        let a = self.source.restrict_y(y).antiderivative();
        let mut g1 = a.clone();
        g1.0[0] -= a.eval(xm);
        let b2 = g1.antiderivative();
        let mut g2 = b2.clone();
        g2.0[0] -= b2.eval(xm);
        let z = self.zeroth.restrict_y(y);
        let s = z.integral(xm, xp);
        let wl = self.w.restrict_y(y);
        let ul = self.u.restrict_y(y);
        let alpha = wl.eval(xp) - ul.eval(xm) + s / speed;
        let len = xp - xm;
        // Difference quotients, with their limits on a degenerate chord.
        let (dw, dz) = if len > 1e-13 * (1.0 + xm.abs()) {
            ((wl.eval(xp) - wl.eval(xm)) / len, s / len)
        } else {
            (wl.derivative().eval(xm), z.eval(xm))
        };
        let beta = speed * speed * (dw + dz / speed);
        Ok(LineData { xm, g1, g2, alpha, beta })
    }

    pub fn try_value(&self, p: Point2) -> Result<f64> {
        let q = self.frame.to_frame(p);
        let l = self.line(q.y)?;
        let s = self.frame.speed;
        Ok((-l.g2.eval(q.x) / s + l.alpha * (q.x - l.xm) + l.beta) / s)
    }

    pub fn try_deriv_b(&self, p: Point2) -> Result<f64> {
        let q = self.frame.to_frame(p);
        let l = self.line(q.y)?;
        Ok(-l.g1.eval(q.x) / self.frame.speed + l.alpha)
    }

    /// Pieces of the element on which the function is a single polynomial.
    pub fn fan(&self) -> Vec<Triangle> {
        let tri = [0, 1, 2].map(|i| self.frame.from_frame(self.verts[i]));
        characteristic_fan(&tri, &self.frame)
    }
}

impl AlongField for OptimalTest {
    fn value(&self, p: Point2) -> f64 {
        self.try_value(p).expect("point inside the element")
    }
    fn deriv_b(&self, p: Point2) -> f64 {
        self.try_deriv_b(p).expect("point inside the element")
    }
}

/// Shadow of a triangle along b̄: the hull of the vertex opposite the chosen
/// inflow face and the projections of all vertices onto that face's line.
#[derive(Clone, Debug)]
pub struct ShadowFrame {
    pub frame: Frame,
    /// Local index of the inflow face with the largest |b̂·n|.
    pub face: usize,
    /// x̄₋(η) = offset + slope·η in frame coordinates.
    pub offset: f64,
    pub slope: f64,
    /// Vertices of the shadow in global coordinates, counterclockwise.
    pub shadow: Vec<Point2>,
}

impl ShadowFrame {
    pub fn inflow_abscissa(&self, y: f64) -> f64 {
        self.offset + self.slope * y
    }
}

pub fn shadow_frame(tri: &Triangle, b: Point2) -> Result<ShadowFrame> {
    let frame = Frame::new(b)?;
    if signed_area(tri) <= 0.0 {
        return Err(DpgError::DegenerateTriangle(0));
    }
    let mut face = None;
    let mut best = 0.0;
    for i in 0..3 {
        let n = outward_normal(tri[(i + 1) % 3], tri[(i + 2) % 3]);
        let flux = frame.dir.dot(n);
        if EdgeLabel::from_flux(flux, 1.0) != EdgeLabel::Inflow {
            continue;
        }
        if face.is_none() || -flux > best * (1.0 + 1e-12) {
            face = Some(i);
            best = -flux;
        }
    }
    let face = face.ok_or(DpgError::NoInflowFace)?;
    let p = frame.to_frame(tri[(face + 1) % 3]);
    let q = frame.to_frame(tri[(face + 2) % 3]);
    let slope = (q.x - p.x) / (q.y - p.y);
    let offset = p.x - slope * p.y;
    let mut pts = vec![frame.to_frame(tri[face])];
    for v in tri {
        let f = frame.to_frame(*v);
        pts.push(pt(offset + slope * f.y, f.y));
    }
    let shadow = convex_hull(&pts).into_iter().map(|q| frame.from_frame(q)).collect();
    Ok(ShadowFrame { frame, face, offset, slope, shadow })
}

/// Single-polynomial approximation of the optimal test function built from the
/// data on the inflow line of the shadow.
#[derive(Clone, Debug)]
pub struct NearOptimalTest {
    pub poly: Poly2,
    pub deriv: Poly2,
    pub shadow: ShadowFrame,
}

impl NearOptimalTest {
    pub fn new(tri: &Triangle, b: Point2, c: f64, d: f64, u: &Poly2, w: &Poly2) -> Result<Self> {
        let sf = shadow_frame(tri, b)?;
        check_regime(tri, sf.frame.speed)?;
        let fr = sf.frame;
        let uf = fr.poly_to_frame(u);
        let wf = fr.poly_to_frame(w);
        // (ξ, η) ↦ (x̄₋(η), η)
        let sub = |p: &Poly2| p.compose_affine([[0.0, sf.slope], [0.0, 1.0]], pt(sf.offset, 0.0));
        let jump = sub(&(&wf - &uf));
        let rest = sub(&(&(&(&wf.dx() * fr.speed) + &(&uf * c)) + &(&wf * d)));
        let dist = Poly2::linear(-sf.offset, 1.0, -sf.slope);
        let frame_poly = &(&(&jump * &dist) * (1.0 / fr.speed)) + &rest;
        let poly = fr.poly_from_frame(&frame_poly);
        let deriv = poly.directional(b);
        Ok(NearOptimalTest { poly, deriv, shadow: sf })
    }
}

impl AlongField for NearOptimalTest {
    fn value(&self, p: Point2) -> f64 {
        self.poly.eval(p)
    }
    fn deriv_b(&self, p: Point2) -> f64 {
        self.deriv.eval(p)
    }
}

fn integrate_fan(tri: &Triangle, frame: &Frame, degree: usize, f: impl Fn(Point2) -> f64) -> Result<f64> {
    let mut s = 0.0;
    for piece in characteristic_fan(tri, frame) {
        let (pts, w) = triangle_points(&piece, degree)?;
        s += pts.iter().zip(&w).map(|(p, w)| w * f(*p)).sum::<f64>();
    }
    Ok(s)
}

/// Inflow edges of `tri` split at the η-values of the vertices; the weight r is
/// affine on each piece. Calls `f(point, weight)` with the full weight
/// |b̂·n|·r·ds·quadrature weight.
fn inflow_boundary(tri: &Triangle, frame: &Frame, degree: usize, mut f: impl FnMut(Point2, f64)) -> Result<()> {
    let rule = edge_rule(degree)?;
    let verts: Vec<Point2> = tri.iter().map(|p| frame.to_frame(*p)).collect();
    for i in 0..3 {
        let a = tri[(i + 1) % 3];
        let b = tri[(i + 2) % 3];
        let n = outward_normal(a, b);
        let flux = frame.dir.dot(n);
        if EdgeLabel::from_flux(flux, 1.0) != EdgeLabel::Inflow {
            continue;
        }
        let (ya, yb) = (frame.to_frame(a).y, frame.to_frame(b).y);
        let mut cuts = vec![0.0, 1.0];
        for v in &verts {
            let t = (v.y - ya) / (yb - ya);
            if t > 1e-14 && t < 1.0 - 1e-14 {
                cuts.push(t);
            }
        }
        cuts.sort_by(f64::total_cmp);
        let len = (b - a).norm();
        for win in cuts.windows(2) {
            for (t, w) in rule.points.iter().zip(&rule.weights) {
                let s = win[0] + (win[1] - win[0]) * t;
                let p = a.lerp(b, s);
                let (xm, xp) = ray_exit_frame(&verts, frame.to_frame(p).y)?;
                f(p, w * (win[1] - win[0]) * len * (-flux) * (xp - xm));
            }
        }
    }
    Ok(())
}

/// ∫_K ∂_b̄v ∂_b̄z + ∫_{∂K₋} v z |b̂·n| r ds, with r the chord length along b̄.
pub fn modified_inner_product(
    tri: &Triangle,
    b: Point2,
    v: &dyn AlongField,
    z: &dyn AlongField,
    quad_degree: usize,
) -> Result<f64> {
    check_regime(tri, b.norm())?;
    modified_inner_product_unchecked(tri, b, v, z, quad_degree)
}

/// The modified inner product without the diam(K) ≤ |b̄| check.
pub(crate) fn modified_inner_product_unchecked(
    tri: &Triangle,
    b: Point2,
    v: &dyn AlongField,
    z: &dyn AlongField,
    quad_degree: usize,
) -> Result<f64> {
    let frame = Frame::new(b)?;
    let mut s = integrate_fan(tri, &frame, quad_degree, |p| v.deriv_b(p) * z.deriv_b(p))?;
    inflow_boundary(tri, &frame, quad_degree + 1, |p, w| s += w * v.value(p) * z.value(p))?;
    Ok(s)
}

/// Inflow-boundary part of the modified inner product, ∫_{∂K₋} v² |b̂·n| r ds.
pub fn inflow_weighted_norm_sq(tri: &Triangle, b: Point2, v: &dyn AlongField, quad_degree: usize) -> Result<f64> {
    let frame = Frame::new(b)?;
    let mut s = 0.0;
    inflow_boundary(tri, &frame, quad_degree + 1, |p, w| s += w * v.value(p).powi(2))?;
    Ok(s)
}

/// (‖v‖², ‖b̄·∇v‖²) on K, integrated piecewise over the characteristic fan.
pub fn h_norm_parts(tri: &Triangle, b: Point2, v: &dyn AlongField, quad_degree: usize) -> Result<(f64, f64)> {
    let frame = Frame::new(b)?;
    let l2 = integrate_fan(tri, &frame, quad_degree, |p| v.value(p).powi(2))?;
    let db = integrate_fan(tri, &frame, quad_degree, |p| v.deriv_b(p).powi(2))?;
    Ok((l2, db))
}

/// ‖v‖²_{H(b̄;K)}.
pub fn h_norm_sq(tri: &Triangle, b: Point2, v: &dyn AlongField, quad_degree: usize) -> Result<f64> {
    let (a, c) = h_norm_parts(tri, b, v, quad_degree)?;
    Ok(a + c)
}

/// ∫_K c̄vu + (w−u) b̄·∇v + v b̄·∇w + d̄vw.
#[allow(clippy::too_many_arguments)]
pub fn perturbed_local_bform(
    tri: &Triangle,
    b: Point2,
    c: f64,
    d: f64,
    u: &Poly2,
    w: &Poly2,
    v: &dyn AlongField,
    quad_degree: usize,
) -> Result<f64> {
    let frame = Frame::new(b)?;
    let dw = w.directional(b);
    integrate_fan(tri, &frame, quad_degree, |p| {
        let (uv, wv, vv) = (u.eval(p), w.eval(p), v.value(p));
        c * vv * uv + (wv - uv) * v.deriv_b(p) + vv * dw.eval(p) + d * vv * wv
    })
}
