#![allow(dead_code)]

use dpg_core::assembly::Discretization;
use dpg_core::geometry::{barycentric, AffineMap, Point2};
use dpg_core::poly::Poly2;
use dpg_core::polyspace::ThetaShape;
use dpg_core::problem::TransportProblem;
use dpg_core::pt;
use dpg_core::quadrature::integrate_triangle;
use nalgebra::DMatrix;

pub fn simpson(a: Point2, b: Point2, f: impl Fn(Point2) -> f64) -> f64 {
    // Composite Simpson, exact for the cubic edge integrands used here.
    let n = 4;
    let len = (b - a).norm();
    let mut s = 0.0;
    for k in 0..n {
        let (t0, t1) = (k as f64 / n as f64, (k + 1) as f64 / n as f64);
        s += (t1 - t0) / 6.0 * (f(a.lerp(b, t0)) + 4.0 * f(a.lerp(b, 0.5 * (t0 + t1))) + f(a.lerp(b, t1)));
    }
    s * len
}

/// A_ij = b_h(φ_j; T^hφ_i) with T^hφ_i built as explicit polynomials and the
/// form integrated directly.
pub fn brute_force_matrix(disc: &Discretization, problem: &TransportProblem) -> DMatrix<f64> {
    let n = disc.num_dofs();
    let mut a = DMatrix::zeros(n, n);
    let b = problem.constant_b.unwrap();
    for t in 0..disc.coarse.num_triangles() {
        let blk = disc.element_block(problem, t).unwrap();
        let cells = disc.cells(t);
        let macro_tri = disc.coarse.triangle(t);
        let macro_map = AffineMap::new(&macro_tri);
        let lt = disc.trial.local(&disc.coarse, t);
        // Trial functions on this element as closures.
        let mut trial: Vec<Box<dyn Fn(Point2) -> f64>> = Vec::new();
        for k in 0..lt.u_dofs.len() {
            let p = disc.u_basis.physical(k, &macro_map);
            trial.push(Box::new(move |x| p.eval(x)));
        }
        for (_, shape) in &lt.theta {
            let ThetaShape::Node(node) = *shape else { panic!("conforming only") };
            let vertex = (0..3).find(|&a| node[a] == 1).unwrap();
            trial.push(Box::new(move |x| barycentric(&macro_tri, x)[vertex]));
        }
        let per = disc.test_basis.len();
        for (ci, cell) in cells.iter().enumerate() {
            let gram = &blk.grams[ci];
            let psi: Vec<Poly2> = (0..per).map(|k| disc.test_basis.reference.physical(k, &cell.map)).collect();
            for (i, &di) in blk.dofs.iter().enumerate() {
                let rhs = blk.local.b.view((ci * per, i), (per, 1)).clone_owned();
                let coeff = gram.chol.solve(&rhs);
                let mut test = Poly2::zero();
                for k in 0..per {
                    test = &test + &(&psi[k] * coeff[k]);
                }
                let dt = test.directional(b);
                for (j, &dj) in blk.dofs.iter().enumerate() {
                    let phi = &trial[j];
                    let c = (problem.c)(cell.tri[0]);
                    let mut v = 0.0;
                    if j < lt.u_dofs.len() {
                        v += integrate_triangle(|x| (c * test.eval(x) - dt.eval(x)) * phi(x), &cell.tri, 8).unwrap();
                    } else {
                        for e in 0..3 {
                            let (p, q) = (cell.tri[(e + 1) % 3], cell.tri[(e + 2) % 3]);
                            let d = q - p;
                            let flux = b.dot(pt(d.y, -d.x) * (1.0 / d.norm()));
                            v += simpson(p, q, |x| flux * test.eval(x) * phi(x));
                        }
                    }
                    a[(di, dj)] += v;
                }
            }
        }
    }
    a
}
