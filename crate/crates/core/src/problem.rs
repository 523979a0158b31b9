//! Transport problems b·∇u + cu = f with inflow data, cell-averaged coefficients
//! and the three benchmark configurations on the unit square.

use std::fmt;
use std::sync::Arc;

use crate::error::Result;
use crate::geometry::{pt, Point2};
use crate::mesh::TriMesh;
use crate::quadrature::{integrate_triangle, Interface};

pub type ScalarFn = Arc<dyn Fn(Point2) -> f64 + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(Point2) -> Point2 + Send + Sync>;
pub type BranchFn = Arc<dyn Fn(Point2, usize) -> f64 + Send + Sync>;

/// A function that is smooth on each side of an interface. `branch(x, s)`
/// evaluates the formula valid on side `s`.
#[derive(Clone)]
pub struct Piecewise {
    pub interface: Interface,
    pub branch: BranchFn,
}

impl Piecewise {
    pub fn new(interface: Interface, branch: impl Fn(Point2, usize) -> f64 + Send + Sync + 'static) -> Self {
        Piecewise { interface, branch: Arc::new(branch) }
    }

    pub fn smooth(f: impl Fn(Point2) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(Interface::None, move |p, _| f(p))
    }

    pub fn constant(v: f64) -> Self {
        Self::smooth(move |_| v)
    }

    pub fn eval(&self, p: Point2) -> f64 {
        (self.branch)(p, self.interface.side(p))
    }
}

impl fmt::Debug for Piecewise {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Piecewise").field("interface", &self.interface).finish_non_exhaustive()
    }
}

#[derive(Clone)]
pub struct TransportProblem {
    pub name: String,
    pub b: VectorFn,
    pub div_b: ScalarFn,
    pub c: ScalarFn,
    pub f: Piecewise,
    /// Inflow data; `None` means homogeneous.
    pub g: Option<ScalarFn>,
    /// Extension of g into the domain, required when g is present.
    pub g_bar: Option<Piecewise>,
    pub exact_u: Option<Piecewise>,
    /// Set when b is constant, so callers can skip variable-field work.
    pub constant_b: Option<Point2>,
}

impl fmt::Debug for TransportProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TransportProblem")
            .field("name", &self.name)
            .field("constant_b", &self.constant_b)
            .field("f", &self.f)
            .field("g_bar", &self.g_bar)
            .field("exact_u", &self.exact_u)
            .finish_non_exhaustive()
    }
}

impl TransportProblem {
    /// Constant field b, constant reaction c and source f, homogeneous inflow data.
    pub fn constant(b: Point2, c: f64, f: f64) -> Self {
        TransportProblem {
            name: "custom".into(),
            b: Arc::new(move |_| b),
            div_b: Arc::new(|_| 0.0),
            c: Arc::new(move |_| c),
            f: Piecewise::constant(f),
            g: None,
            g_bar: None,
            exact_u: None,
            constant_b: Some(b),
        }
    }

    pub fn inflow_value(&self, p: Point2) -> f64 {
        self.g.as_ref().map_or(0.0, |g| g(p))
    }

    /// Largest deviation between div_b and a central-difference divergence of b.
    pub fn divergence_defect(&self, samples: &[Point2]) -> f64 {
        let h = 1e-5;
        samples
            .iter()
            .map(|&p| {
                let bx = ((self.b)(p + pt(h, 0.0)).x - (self.b)(p - pt(h, 0.0)).x) / (2.0 * h);
                let by = ((self.b)(p + pt(0.0, h)).y - (self.b)(p - pt(0.0, h)).y) / (2.0 * h);
                (bx + by - (self.div_b)(p)).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Smallest |b| over the centres of an n×n grid on the unit square.
    pub fn min_speed(&self, n: usize) -> f64 {
        let mut m = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                let p = pt((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
                m = m.min((self.b)(p).norm());
            }
        }
        m
    }
}

/// Per-element means of b, c − div b and div b.
#[derive(Clone, Debug, PartialEq)]
pub struct CellData {
    pub b: Vec<Point2>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

pub fn cell_averages(problem: &TransportProblem, mesh: &TriMesh, degree: usize) -> Result<CellData> {
    let n = mesh.num_triangles();
    let mut out = CellData { b: Vec::with_capacity(n), c: Vec::with_capacity(n), d: Vec::with_capacity(n) };
    for t in 0..n {
        let tri = mesh.triangle(t);
        let area = mesh.area(t);
        let bx = integrate_triangle(|p| (problem.b)(p).x, &tri, degree)? / area;
        let by = integrate_triangle(|p| (problem.b)(p).y, &tri, degree)? / area;
        let c = integrate_triangle(|p| (problem.c)(p) - (problem.div_b)(p), &tri, degree)? / area;
        let d = integrate_triangle(|p| (problem.div_b)(p), &tri, degree)? / area;
        out.b.push(pt(bx, by));
        out.c.push(c);
        out.d.push(d);
    }
    Ok(out)
}

/// Constant field b with f = 1 − x₁ and zero inflow data. The exact solution is
/// continuous with a kink along the characteristic through the origin.
pub fn benchmark_exp1(b: Point2) -> TransportProblem {
    assert!(b.x > 0.0 && b.y >= 0.0, "exp1 needs b₁ > 0, b₂ ≥ 0");
    let (b1, b2) = (b.x, b.y);
    let iface = Interface::Line { normal: pt(-b2, b1), offset: 0.0 };
    let upper = move |p: Point2| p.x / b1 - p.x * p.x / (2.0 * b1);
    let exact = Piecewise::new(iface, move |p, side| {
        if side == 0 || b2 == 0.0 {
            upper(p)
        } else {
            p.y / b2 - p.y * (2.0 * b2 * p.x - b1 * p.y) / (2.0 * b2 * b2)
        }
    });
    TransportProblem {
        name: "exp1".into(),
        exact_u: Some(exact),
        f: Piecewise::smooth(|p| 1.0 - p.x),
        ..TransportProblem::constant(b, 0.0, 0.0)
    }
}

/// Same field as [`benchmark_exp1`] but with the source cut off below the
/// characteristic −b₂x₁ + b₁x₂ = 1/4, giving a discontinuous solution.
pub fn benchmark_exp2(b: Point2) -> TransportProblem {
    assert!(b.x > 0.0, "exp2 needs b₁ > 0");
    let (b1, b2) = (b.x, b.y);
    let iface = Interface::Line { normal: pt(-b2, b1), offset: 0.25 };
    let f = Piecewise::new(iface.clone(), |p, side| if side == 0 { 1.0 - p.x } else { 0.0 });
    let exact = Piecewise::new(iface, move |p, side| if side == 0 { p.x / b1 - p.x * p.x / (2.0 * b1) } else { 0.0 });
    TransportProblem { name: "exp2".into(), exact_u: Some(exact), f, ..TransportProblem::constant(b, 0.0, 0.0) }
}

/// Rotation field b = (x₂, −x₁) with inflow data that jumps at (0, 1/4). The
/// solution is the indicator of the annulus 1/4 ≤ |x| ≤ 1, which also serves as
/// the extension of the inflow data.
pub fn benchmark_exp3() -> TransportProblem {
    let annulus = Interface::circles(pt(0.0, 0.0), vec![0.25, 1.0]);
    let indicator = Piecewise::new(annulus, |_, side| if side == 1 { 1.0 } else { 0.0 });
    TransportProblem {
        name: "exp3".into(),
        b: Arc::new(|p| pt(p.y, -p.x)),
        div_b: Arc::new(|_| 0.0),
        c: Arc::new(|_| 0.0),
        f: Piecewise::constant(0.0),
        g: Some(Arc::new(|p| if p.x.abs() < 1e-12 && p.y >= 0.25 && p.y < 1.0 { 1.0 } else { 0.0 })),
        g_bar: Some(indicator.clone()),
        exact_u: Some(indicator),
        constant_b: None,
    }
}
