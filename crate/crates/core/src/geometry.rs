use std::ops::{Add, Mul, Neg, Sub};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

pub const fn pt(x: f64, y: f64) -> Point2 {
    Point2 { x, y }
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    pub fn dot(self, o: Point2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the cross product.
    pub fn cross(self, o: Point2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Rotation by +90 degrees.
    pub fn perp(self) -> Point2 {
        pt(-self.y, self.x)
    }

    pub fn lerp(self, o: Point2, t: f64) -> Point2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, o: Point2) -> Point2 {
        pt(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, o: Point2) -> Point2 {
        pt(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, s: f64) -> Point2 {
        pt(self.x * s, self.y * s)
    }
}

impl Neg for Point2 {
    type Output = Point2;
    fn neg(self) -> Point2 {
        pt(-self.x, -self.y)
    }
}

impl From<[f64; 2]> for Point2 {
    fn from(a: [f64; 2]) -> Self {
        pt(a[0], a[1])
    }
}

pub type Triangle = [Point2; 3];

pub fn signed_area(t: &Triangle) -> f64 {
    0.5 * (t[1] - t[0]).cross(t[2] - t[0])
}

pub fn centroid(t: &Triangle) -> Point2 {
    (t[0] + t[1] + t[2]) * (1.0 / 3.0)
}

pub fn diameter(t: &Triangle) -> f64 {
    let a = (t[1] - t[2]).norm();
    let b = (t[2] - t[0]).norm();
    let c = (t[0] - t[1]).norm();
    a.max(b).max(c)
}

pub fn inradius(t: &Triangle) -> f64 {
    let perimeter = (t[1] - t[2]).norm() + (t[2] - t[0]).norm() + (t[0] - t[1]).norm();
    2.0 * signed_area(t).abs() / perimeter
}

/// Barycentric coordinates of `p` with respect to `t`.
pub fn barycentric(t: &Triangle, p: Point2) -> [f64; 3] {
    let det = (t[1] - t[0]).cross(t[2] - t[0]);
    let l1 = (p - t[0]).cross(t[2] - t[0]) / det;
    let l2 = (t[1] - t[0]).cross(p - t[0]) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Affine map from the reference triangle (0,0),(1,0),(0,1).
#[derive(Clone, Copy, Debug)]
pub struct AffineMap {
    pub origin: Point2,
    /// Columns are the images of the reference axes.
    pub jac: [[f64; 2]; 2],
    pub det: f64,
    /// Inverse transpose of the Jacobian, used to map reference gradients.
    pub inv_t: [[f64; 2]; 2],
}

impl AffineMap {
    pub fn new(t: &Triangle) -> Self {
        let e1 = t[1] - t[0];
        let e2 = t[2] - t[0];
        let jac = [[e1.x, e2.x], [e1.y, e2.y]];
        let det = e1.x * e2.y - e2.x * e1.y;
        // J^{-1} = [[e2.y, -e2.x], [-e1.y, e1.x]] / det, then transpose.
        let inv_t = [[e2.y / det, -e1.y / det], [-e2.x / det, e1.x / det]];
        AffineMap { origin: t[0], jac, det, inv_t }
    }

    pub fn apply(&self, r: Point2) -> Point2 {
        pt(
            self.origin.x + self.jac[0][0] * r.x + self.jac[0][1] * r.y,
            self.origin.y + self.jac[1][0] * r.x + self.jac[1][1] * r.y,
        )
    }

    pub fn inverse(&self, p: Point2) -> Point2 {
        let d = p - self.origin;
        // J^{-1} = inv_t^T
        pt(
            self.inv_t[0][0] * d.x + self.inv_t[1][0] * d.y,
            self.inv_t[0][1] * d.x + self.inv_t[1][1] * d.y,
        )
    }

    pub fn grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.inv_t[0][0] * g[0] + self.inv_t[0][1] * g[1],
            self.inv_t[1][0] * g[0] + self.inv_t[1][1] * g[1],
        ]
    }
}

/// Clip a convex polygon against the half-plane `normal·x >= offset`.
pub fn clip_half_plane(poly: &[Point2], normal: Point2, offset: f64) -> Vec<Point2> {
    let n = poly.len();
    let mut out = Vec::with_capacity(n + 1);
    if n == 0 {
        return out;
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let da = normal.dot(a) - offset;
        let db = normal.dot(b) - offset;
        if da >= 0.0 {
            out.push(a);
        }
        if (da >= 0.0) != (db >= 0.0) {
            let t = da / (da - db);
            out.push(a.lerp(b, t));
        }
    }
    out
}

/// Area of a simple polygon with counterclockwise vertices.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    let mut s = 0.0;
    for i in 0..n {
        s += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * s
}

/// Fan triangulation of a convex polygon, dropping slivers.
pub fn fan(poly: &[Point2]) -> Vec<Triangle> {
    let mut out = Vec::new();
    if poly.len() < 3 {
        return out;
    }
    let scale: f64 = poly.iter().map(|p| (*p - poly[0]).norm()).fold(0.0, f64::max);
    for i in 1..poly.len() - 1 {
        let t = [poly[0], poly[i], poly[i + 1]];
        if signed_area(&t).abs() > 1e-15 * scale * scale {
            out.push(t);
        }
    }
    out
}

/// Convex hull (counterclockwise, monotone chain).
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut p: Vec<Point2> = points.to_vec();
    p.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    p.dedup_by(|a, b| (*a - *b).norm() <= 1e-14 * (1.0 + a.norm()));
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<Point2> = Vec::new();
    for &q in &p {
        while lower.len() >= 2 {
            let k = lower.len();
            if (lower[k - 1] - lower[k - 2]).cross(q - lower[k - 2]) <= 0.0 {
                lower.pop();
            } else {
                break;
            }
        }
        lower.push(q);
    }
    let mut upper: Vec<Point2> = Vec::new();
    for &q in p.iter().rev() {
        while upper.len() >= 2 {
            let k = upper.len();
            if (upper[k - 1] - upper[k - 2]).cross(q - upper[k - 2]) <= 0.0 {
                upper.pop();
            } else {
                break;
            }
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}
