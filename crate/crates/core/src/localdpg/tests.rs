use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::DpgError;
use crate::geometry::{clip_half_plane, diameter, pt, signed_area};
use crate::mesh::{classify_edges, EdgeLabel, TriMesh};
use crate::poly::Poly2;
use crate::polyspace::{build_trial_space, TraceMode};
use crate::problem::Piecewise;
use crate::quadrature::{reference_monomial_integral, Interface};
use std::sync::Arc;

const REF: Triangle = [pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 1.0)];

fn exact_ref_integral(p: &Poly2) -> f64 {
    p.terms().map(|(i, j, c)| c * reference_monomial_integral(i, j)).sum()
}

fn random_poly(rng: &mut ChaCha8Rng, degree: usize) -> Poly2 {
    let mut p = Poly2::with_degree(degree);
    for i in 0..=degree {
        for j in 0..=degree - i {
            p.set(i, j, rng.random_range(-1.0..1.0));
        }
    }
    p
}

fn random_triangle(rng: &mut ChaCha8Rng, max_diam: f64) -> Triangle {
    loop {
        let c = pt(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let mut t = [0; 3].map(|_| c + pt(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)) * max_diam);
        if signed_area(&t) < 0.0 {
            t.swap(1, 2);
        }
        if diameter(&t) <= max_diam && crate::mesh::triangle_shape(&t).is_some_and(|s| s < 8.0) {
            return t;
        }
    }
}

#[test]
fn gram_with_zero_field_is_identity() {
    let tb = TestBasis::new(3, 6).unwrap();
    let g = gram_matrix(&REF, &|_| pt(0.0, 0.0), &tb);
    assert!((g - DMatrix::identity(10, 10)).abs().max() < 1e-11);
}

#[test]
fn gram_constant_basis() {
    let tb = TestBasis::new(0, 2).unwrap();
    let g = gram_matrix(&REF, &|_| pt(1.0, 0.0), &tb);
    assert!((g[(0, 0)] - 1.0).abs() < 1e-14);
}

#[test]
fn gram_matches_symbolic_stiffness() {
    let tb = TestBasis::new(2, 6).unwrap();
    let g = gram_matrix(&REF, &|_| pt(1.0, 0.0), &tb);
    let f = &tb.reference.functions;
    for i in 0..f.len() {
        for j in 0..f.len() {
            let e = exact_ref_integral(&(&f[i] * &f[j])) + exact_ref_integral(&(&f[i].dx() * &f[j].dx()));
            assert!((g[(i, j)] - e).abs() < 1e-13);
        }
    }
    assert!(local_gram(&REF, &|_| pt(1.0, 0.0), &tb).is_some());
}

fn single_triangle(b: Point2) -> (TriMesh, crate::mesh::EdgeClass) {
    let mut m = TriMesh::new(REF.to_vec(), vec![[0, 1, 2]]).unwrap();
    m.tag_boundary(|_| b);
    let cls = classify_edges(&m, &[b]).unwrap();
    (m, cls)
}

#[test]
fn bform_trivial_entries() {
    let b = pt(1.0, 0.0);
    let (mesh, cls) = single_triangle(b);
    let space = build_trial_space(&mesh, &cls, 1, TraceMode::Nonconforming, 0).unwrap();
    let lt = space.local(&mesh, 0);
    let ub = reference_basis(0).unwrap();
    let tb = TestBasis::new(2, 6).unwrap();
    let problem = TransportProblem::constant(b, 0.0, 0.0);
    let mac = MacroTrial { element: 0, tri: REF, trial: &lt, m: 1, u_basis: &ub };
    let cells = [SubCell::new(0, REF, &REF)];
    let lb = local_bform(&mac, &problem, &tb, &cells).unwrap();
    // u = 1, v = 1: no derivative or jump terms.
    assert!(lb.b[(0, 0)].abs() < 1e-15);
    // θ = 1 on the outflow hypotenuse only (the x = 0 edge is inflow, y = 0 is
    // characteristic), v = 1 = ψ₀/√2.
    assert_eq!(lt.theta.len(), 2);
    let entry = (lb.b[(0, 1)] + lb.b[(0, 2)]) / 2f64.sqrt();
    assert!((entry - 1.0).abs() < 1e-14);
}

#[test]
fn bform_integration_by_parts() {
    // b_h(w, w|skeleton; v) = Σ_K ∫_K v (b·∇w + c w) for w continuous.
    let problem = TransportProblem {
        b: Arc::new(|p| pt(1.0 + 0.5 * p.x, 0.2 * p.y)),
        div_b: Arc::new(|_| 0.7),
        c: Arc::new(|p| 1.0 + p.y),
        ..TransportProblem::constant(pt(1.0, 0.0), 0.0, 0.0)
    };
    let bbar = pt(1.0 + 0.5 / 3.0, 0.2 / 3.0);
    let (mesh, cls) = single_triangle(bbar);
    // w vanishes on both legs, which covers every inflow edge of the cell.
    let m = 3;
    let space = build_trial_space(&mesh, &cls, m, TraceMode::Conforming, 1).unwrap();
    let lt = space.local(&mesh, 0);
    let ub = reference_basis(m - 1).unwrap();
    let tb = TestBasis::new(m + 1, 2 * (m + 2)).unwrap();
    let (fine, _) = crate::mesh::red_refine(&mesh, 1);
    let cells: Vec<SubCell> = (0..4).map(|c| SubCell::new(c, fine.triangle(c), &REF)).collect();
    let mac = MacroTrial { element: 0, tri: REF, trial: &lt, m, u_basis: &ub };
    let lb = local_bform(&mac, &problem, &tb, &cells).unwrap();

    let w = &Poly2::x() * &Poly2::y();
    let mut x = DVector::zeros(lt.len());
    let map = AffineMap::new(&REF);
    for j in 0..lt.u_dofs.len() {
        x[j] = exact_ref_integral(&(&w * &ub.physical(j, &map)));
    }
    let th = space.interpolate_trace(&mesh, |p| w.eval(p));
    for (j, (d, _)) in lt.theta.iter().enumerate() {
        x[lt.u_dofs.len() + j] = th[d - space.n_u];
    }
    let bx = &lb.b * &x;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..5 {
        let r = DVector::from_fn(bx.len(), |_, _| rng.random_range(-1.0..1.0));
        let mut oracle = 0.0;
        for (ci, cell) in cells.iter().enumerate() {
            for k in 0..tb.len() {
                let v = tb.reference.physical(k, &cell.map);
                let integrand = |p: Point2| v.eval(p) * ((1.0 + 0.5 * p.x) * p.y + 0.2 * p.y * p.x + (1.0 + p.y) * p.x * p.y);
                oracle += r[ci * tb.len() + k] * crate::quadrature::integrate_triangle(integrand, &cell.tri, 10).unwrap();
            }
        }
        assert!((r.dot(&bx) - oracle).abs() < 1e-11, "{} vs {}", r.dot(&bx), oracle);
    }
}

#[test]
fn inhomogeneous_load_divergence_identity() {
    // ḡ = 1: the load change on a cell is −∫_{∂K} ψ b·n = −∫_K div(bψ).
    let b = pt(0.8, 0.3);
    let mut problem = TransportProblem::constant(b, 0.0, 0.0);
    problem.g_bar = Some(Piecewise::constant(1.0));
    let (mesh, cls) = single_triangle(b);
    let space = build_trial_space(&mesh, &cls, 1, TraceMode::Conforming, 0).unwrap();
    let lt = space.local(&mesh, 0);
    let ub = reference_basis(0).unwrap();
    let tb = TestBasis::new(2, 6).unwrap();
    let cell = [pt(0.25, 0.25), pt(0.5, 0.25), pt(0.25, 0.5)];
    let cells = [SubCell::new(0, cell, &REF)];
    let mac = MacroTrial { element: 0, tri: REF, trial: &lt, m: 1, u_basis: &ub };
    let lb = local_bform(&mac, &problem, &tb, &cells).unwrap();
    for k in 0..tb.len() {
        let v = tb.reference.physical(k, &cells[0].map);
        let div = v.directional(b);
        let e = -crate::quadrature::integrate_triangle(|p| div.eval(p), &cell, 4).unwrap();
        assert!((lb.load[k] - e).abs() < 1e-13);
    }
}

#[test]
fn annulus_extension_edge_integrals() {
    let b = pt(1.0, 0.0);
    let iface = Interface::circles(pt(0.0, 0.0), vec![0.25, 1.0]);
    let mut problem = TransportProblem::constant(b, 0.0, 0.0);
    problem.g_bar = Some(Piecewise::new(iface, |_, s| if s == 1 { 1.0 } else { 0.0 }));
    let tri = [pt(0.1, 0.1), pt(0.4, 0.1), pt(0.1, 0.4)];
    let (mesh, cls) = single_triangle(b);
    let space = build_trial_space(&mesh, &cls, 1, TraceMode::Conforming, 0).unwrap();
    let lt = space.local(&mesh, 0);
    let ub = reference_basis(0).unwrap();
    let tb = TestBasis::new(2, 6).unwrap();
    let cells = [SubCell::new(0, tri, &REF)];
    let mac = MacroTrial { element: 0, tri: REF, trial: &lt, m: 1, u_basis: &ub };
    let lb = local_bform(&mac, &problem, &tb, &cells).unwrap();
    let g = problem.g_bar.as_ref().unwrap();
    for k in 0..tb.len() {
        let v = tb.reference.physical(k, &cells[0].map);
        // Jumps located by bisection on the indicator, Simpson on each piece.
        let mut e = 0.0;
        for i in 0..3 {
            let (a, c) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
            let n = outward_normal(a, c);
            let gv = |t: f64| g.eval(a.lerp(c, t));
            let mut breaks = vec![0.0];
            let samples = 1000;
            for s in 0..samples {
                let (mut lo, mut hi) = (s as f64 / samples as f64, (s + 1) as f64 / samples as f64);
                if gv(lo) != gv(hi) {
                    for _ in 0..80 {
                        let mid = 0.5 * (lo + hi);
                        if gv(mid) == gv(lo) {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    breaks.push(0.5 * (lo + hi));
                }
            }
            breaks.push(1.0);
            let len = (c - a).norm();
            for w in breaks.windows(2) {
                let (t0, t1) = (w[0], w[1]);
                let gmid = gv(0.5 * (t0 + t1));
                let h = |t: f64| v.eval(a.lerp(c, t));
                let simpson = (t1 - t0) / 6.0 * (h(t0) + 4.0 * h(0.5 * (t0 + t1)) + h(t1));
                e -= len * b.dot(n) * gmid * simpson;
            }
        }
        assert!((lb.load[k] - e).abs() < 1e-12, "{k}: {} vs {e}", lb.load[k]);
    }
}

#[test]
fn trial_to_test_solves() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 6;
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let g = &a * a.transpose() + DMatrix::identity(n, n);
    let gram = LocalGram { matrix: g.clone(), chol: Cholesky::new(g.clone()).unwrap() };
    let b = DMatrix::from_fn(2 * n, 3, |_, _| rng.random_range(-1.0..1.0));
    let grams = [gram.clone(), gram];
    let x = trial_to_test(&grams, &b);
    let top = &g * x.rows(0, n);
    let bottom = &g * x.rows(n, n);
    assert!((top - b.rows(0, n)).abs().max() < 1e-11);
    assert!((bottom - b.rows(n, n)).abs().max() < 1e-11);
    let zero = trial_to_test(&grams, &DMatrix::zeros(2 * n, 1));
    assert_eq!(zero.abs().max(), 0.0);
    let one = LocalGram { matrix: DMatrix::from_element(1, 1, 4.0), chol: Cholesky::new(DMatrix::from_element(1, 1, 4.0)).unwrap() };
    let x = trial_to_test(&[one], &DMatrix::from_element(1, 1, 2.0));
    assert!((x[(0, 0)] - 0.5).abs() < 1e-16);
}

#[test]
fn ray_exit_reference() {
    let f = Frame::new(pt(1.0, 0.0)).unwrap();
    assert_eq!(ray_exit(&REF, &f, 0.25).unwrap(), (0.0, 0.75));
    assert_eq!(ray_exit(&REF, &f, 0.0).unwrap(), (0.0, 1.0));
    assert!(matches!(ray_exit(&REF, &f, 1.5), Err(DpgError::OutsideShadow(_))));
}

#[test]
fn ray_exit_diagonal_square_matches_clipping() {
    let square = [pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)];
    let f = Frame::new(pt(1.0, 1.0)).unwrap();
    for y in [-0.6, -0.3, 0.0, 0.2, 0.5] {
        let (xm, xp) = ray_exit(&square, &f, y).unwrap();
        // Clip the square to the thin band around the line, then read off the ξ-range.
        let n = f.dir.perp();
        let band = clip_half_plane(&clip_half_plane(&square, n, y - 1e-13), -n, -(y + 1e-13));
        let xs: Vec<f64> = band.iter().map(|p| f.dir.dot(*p)).collect();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!((xm - lo).abs() < 1e-9 && (xp - hi).abs() < 1e-9, "y = {y}");
    }
}

#[test]
fn analytic_test_simple_cases() {
    let b = pt(2.0, 0.0);
    let zero = Poly2::zero();
    let one = Poly2::constant(1.0);
    let t = OptimalTest::new(&REF, b, 0.0, 0.0, &zero, &zero).unwrap();
    assert_eq!(t.value(pt(0.3, 0.2)), 0.0);
    let t = OptimalTest::new(&REF, b, 0.0, 0.0, &one, &zero).unwrap();
    let t2 = OptimalTest::new(&REF, b, 0.0, 0.0, &zero, &one).unwrap();
    for p in [pt(0.3, 0.2), pt(0.1, 0.8), pt(0.6, 0.05)] {
        assert!((t.value(p) + p.x / 2.0).abs() < 1e-14);
        assert!((t.deriv_b(p) + 1.0).abs() < 1e-14);
        assert!((t2.value(p) - p.x / 2.0).abs() < 1e-14);
    }
    let big = [pt(0.0, 0.0), pt(3.0, 0.0), pt(0.0, 3.0)];
    assert!(matches!(OptimalTest::new(&big, b, 0.0, 0.0, &one, &zero), Err(DpgError::EquivalenceRegime { .. })));
}

#[test]
fn analytic_test_strong_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let b = pt(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let b = b * (1.0 / b.norm());
        let tri = random_triangle(&mut rng, 0.9);
        let (c, d) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let u = random_poly(&mut rng, 3);
        let w = random_poly(&mut rng, 3);
        let t = OptimalTest::new(&tri, b, c, d, &u, &w).unwrap();
        let source = |p: Point2| u.directional(b).eval(p) + c * u.eval(p) + d * w.eval(p);
        for piece in t.fan() {
            let p = crate::geometry::centroid(&piece);
            let h = 1e-5;
            let dd = (t.deriv_b(p + b * h) - t.deriv_b(p - b * h)) / (2.0 * h);
            assert!((-dd - source(p)).abs() < 1e-7 * (1.0 + source(p).abs()));
            // directional derivative consistent with values
            let dv = (t.value(p + b * h) - t.value(p - b * h)) / (2.0 * h);
            assert!((dv - t.deriv_b(p)).abs() < 1e-7);
        }
        let frame = Frame::new(b).unwrap();
        for i in 0..3 {
            let (a, e) = (tri[(i + 1) % 3], tri[(i + 2) % 3]);
            let n = outward_normal(a, e);
            let p = a.lerp(e, rng.random_range(0.1..0.9));
            let jump = w.eval(p) - u.eval(p);
            let label = EdgeLabel::from_flux(b.dot(n), 1.0);
            if label == EdgeLabel::Outflow {
                assert!((t.deriv_b(p) - jump).abs() < 1e-9);
            } else if label == EdgeLabel::Inflow {
                let (xm, xp) = ray_exit(&tri, &frame, frame.to_frame(p).y).unwrap();
                let r = xp - xm;
                assert!((t.deriv_b(p) - t.value(p) * r / frame.speed - jump).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn analytic_test_variational_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let b = pt(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let tri = random_triangle(&mut rng, b.norm().min(1.0));
        let (c, d) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let u = random_poly(&mut rng, 3);
        let w = random_poly(&mut rng, 3);
        let t = OptimalTest::new(&tri, b, c, d, &u, &w).unwrap();
        for _ in 0..5 {
            let v = random_poly(&mut rng, 4);
            let fv = FieldPoly::new(&v, b);
            let lhs = modified_inner_product(&tri, b, &t, &fv, 10).unwrap();
            let rhs = perturbed_local_bform(&tri, b, c, d, &u, &w, &fv, 10).unwrap();
            assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1e-3), "{lhs} vs {rhs}");
        }
    }
}

#[test]
fn shadow_examples() {
    let sf = shadow_frame(&REF, pt(1.0, 0.0)).unwrap();
    assert_eq!(sf.face, 1);
    assert!((crate::geometry::polygon_area(&sf.shadow) - 0.5).abs() < 1e-15);
    assert!(sf.inflow_abscissa(0.3).abs() < 1e-15);
    let sf = shadow_frame(&REF, pt(1.0, 1.0)).unwrap();
    assert_eq!(sf.face, 1);
    let area = crate::geometry::polygon_area(&sf.shadow);
    assert!(area > 0.5 + 1e-3);
    for v in REF {
        let q = sf.frame.to_frame(v);
        let hull: Vec<Point2> = sf.shadow.iter().map(|p| sf.frame.to_frame(*p)).collect();
        let (lo, hi) = ray_exit_frame(&hull, q.y).unwrap();
        assert!(q.x >= lo - 1e-12 && q.x <= hi + 1e-12);
    }
    let sf = shadow_frame(&REF, pt(2.0, 1.0)).unwrap();
    assert_eq!(sf.face, 1);
    assert!(sf.inflow_abscissa(0.0).abs() < 1e-15);
    let sliver = [pt(0.0, 0.0), pt(1.0, 0.0), pt(0.5, 1e-20)];
    assert!(shadow_frame(&sliver, pt(1.0, 0.0)).is_err());
}

#[test]
fn near_optimal_examples() {
    let b = pt(2.0, 0.0);
    let zero = Poly2::zero();
    let one = Poly2::constant(1.0);
    let t = NearOptimalTest::new(&REF, b, 0.0, 0.0, &zero, &zero).unwrap();
    assert!(t.poly.max_abs_coeff() == 0.0);
    let t = NearOptimalTest::new(&REF, b, 0.0, 0.0, &one, &zero).unwrap();
    let exact = OptimalTest::new(&REF, b, 0.0, 0.0, &one, &zero).unwrap();
    for p in [pt(0.2, 0.3), pt(0.7, 0.1)] {
        assert!((t.value(p) + p.x / 2.0).abs() < 1e-14);
        assert!((t.value(p) - exact.value(p)).abs() < 1e-14);
    }
    // Shifted triangle so that x̄₋ is nonzero: inflow face on x = 0.2.
    let tri = [pt(0.2, 0.0), pt(0.9, 0.0), pt(0.2, 0.7)];
    let t = NearOptimalTest::new(&tri, b, 0.0, 0.0, &zero, &Poly2::x()).unwrap();
    for p in [pt(0.3, 0.3), pt(0.5, 0.1)] {
        let xb = 0.2;
        assert!((t.value(p) - (xb * (p.x - xb) / 2.0 + 2.0)).abs() < 1e-14);
    }
}

#[test]
fn modified_inner_product_examples() {
    let b = pt(1.0, 0.0);
    let one = Poly2::constant(1.0);
    let x = Poly2::x();
    let f1 = FieldPoly::new(&one, b);
    let fx = FieldPoly::new(&x, b);
    // The reference triangle is outside the regime diam ≤ |b̄|; the values are
    // still well defined.
    assert!(matches!(modified_inner_product(&REF, b, &f1, &f1, 4), Err(DpgError::EquivalenceRegime { .. })));
    assert!((modified_inner_product_unchecked(&REF, b, &f1, &f1, 4).unwrap() - 0.5).abs() < 1e-15);
    assert!((modified_inner_product_unchecked(&REF, b, &fx, &fx, 4).unwrap() - 0.5).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tri = random_triangle(&mut rng, 0.8);
    let bb = pt(0.6, -0.8);
    let p = random_poly(&mut rng, 3);
    let q = random_poly(&mut rng, 3);
    let (fp, fq) = (FieldPoly::new(&p, bb), FieldPoly::new(&q, bb));
    let a = modified_inner_product(&tri, bb, &fp, &fq, 8).unwrap();
    let c = modified_inner_product(&tri, bb, &fq, &fp, 8).unwrap();
    assert!((a - c).abs() < 1e-15 * a.abs().max(1.0));
}

#[test]
fn perturbed_form_examples() {
    let b = pt(0.7, 0.4);
    let (c, d) = (0.3, -0.2);
    let one = Poly2::constant(1.0);
    let zero = Poly2::zero();
    let f1 = FieldPoly::new(&one, b);
    let v = perturbed_local_bform(&REF, b, c, d, &one, &zero, &f1, 4).unwrap();
    assert!((v - c * 0.5).abs() < 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let u = random_poly(&mut rng, 2);
    let w = random_poly(&mut rng, 2);
    let vp = random_poly(&mut rng, 3);
    let fv = FieldPoly::new(&vp, b);
    let oracle = exact_ref_integral(
        &(&(&(&(&(&vp * &u) * c) + &(&(&w - &u) * &vp.directional(b))) + &(&vp * &w.directional(b))) + &(&(&vp * &w) * d)),
    );
    let got = perturbed_local_bform(&REF, b, c, d, &u, &w, &fv, 8).unwrap();
    assert!((got - oracle).abs() < 1e-13);
    let same = perturbed_local_bform(&REF, b, c, d, &w, &w, &fv, 8).unwrap();
    let oracle_same =
        exact_ref_integral(&(&(&(&(&vp * &w) * c) + &(&vp * &w.directional(b))) + &(&(&vp * &w) * d)));
    assert!((same - oracle_same).abs() < 1e-13);
}
