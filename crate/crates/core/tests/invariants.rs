use dpg_core::geometry::{signed_area, AffineMap, Point2};
use dpg_core::mesh::*;
use dpg_core::polyspace::{build_trial_space, reference_basis, TraceMode};
use dpg_core::problem::*;
use dpg_core::pt;
use dpg_core::quadrature::{integrate_triangle, reference_monomial_integral, triangle_rule, MAX_TRIANGLE_DEGREE};
use nalgebra::DMatrix;
use proptest::prelude::*;

#[test]
fn rules_exact_on_monomials() {
    for d in 0..=MAX_TRIANGLE_DEGREE {
        let rule = triangle_rule(d).unwrap();
        for p in 0..=d {
            for q in 0..=d - p {
                let exact = reference_monomial_integral(p, q);
                let approx: f64 = rule.points.iter().zip(&rule.weights).map(|(x, w)| w * x.x.powi(p as i32) * x.y.powi(q as i32)).sum();
                assert!((approx - exact).abs() <= 1e-14 * exact, "degree {d}: x^{p} y^{q}");
            }
        }
    }
}

#[test]
fn basis_gram_condition() {
    for d in 0..=4 {
        let basis = reference_basis(d).unwrap();
        let rule = triangle_rule(2 * d).unwrap();
        let ev = basis.eval_rule(rule);
        let n = basis.len();
        let g = DMatrix::from_fn(n, n, |i, j| {
            rule.weights.iter().enumerate().map(|(q, w)| w * ev.values[q][i] * ev.values[q][j]).sum::<f64>()
        });
        let eig = g.symmetric_eigen().eigenvalues;
        let cond = eig.max() / eig.min();
        assert!(cond <= 10.0, "degree {d}: {cond}");
    }
}

#[test]
fn benchmarks_satisfy_the_equation() {
    let h = 1e-6;
    for p in [benchmark_exp1(pt(1.0, 1.0)), benchmark_exp1(pt(1.0, 1.0 / 16.0)), benchmark_exp2(pt(1.0, 1.0)), benchmark_exp3()] {
        let u = p.exact_u.as_ref().unwrap();
        for i in 1..20 {
            for j in 1..20 {
                let x = pt(i as f64 / 20.0 + 0.013, j as f64 / 20.0 - 0.007);
                let side = u.interface.side(x);
                let near = [x + pt(h, 0.0), x - pt(h, 0.0), x + pt(0.0, h), x - pt(0.0, h)].iter().any(|y| u.interface.side(*y) != side);
                if near {
                    continue;
                }
                let grad = pt((u.eval(x + pt(h, 0.0)) - u.eval(x - pt(h, 0.0))) / (2.0 * h), (u.eval(x + pt(0.0, h)) - u.eval(x - pt(0.0, h))) / (2.0 * h));
                let r = (p.b)(x).dot(grad) + (p.c)(x) * u.eval(x) - p.f.eval(x);
                assert!(r.abs() <= 1e-8, "{} at {x:?}: {r}", p.name);
            }
        }
        // Inflow data on the inflow boundary.
        if let Some(g) = &p.g {
            let mesh = build_structured_mesh(8);
            let mut tagged = mesh.clone();
            tagged.tag_boundary(|x| (p.b)(x));
            for (e, tag) in tagged.boundary_tag.iter().enumerate() {
                if *tag == Some(EdgeLabel::Inflow) {
                    let (a, b) = tagged.edge_points(e);
                    let x = a.lerp(b, 0.37);
                    assert!((g(x) - u.eval(x)).abs() < 1e-12, "{} at {x:?}", p.name);
                }
            }
        }
    }
}

#[test]
fn linear_field_averages_at_centroids() {
    let p = benchmark_exp3();
    let mesh = red_refine(&build_structured_mesh(3), 1).0;
    let cd = cell_averages(&p, &mesh, 2).unwrap();
    for t in 0..mesh.num_triangles() {
        let c = dpg_core::geometry::centroid(&mesh.triangle(t));
        assert!((cd.b[t] - (p.b)(c)).norm() < 1e-14);
    }
}

#[test]
fn conforming_interpolation_reproduces_polynomials() {
    // w vanishes on the inflow edges x = 0 and y = 0 of b = (1, 0.5).
    let b = pt(1.0, 0.5);
    let mut mesh = build_structured_mesh(3);
    mesh.tag_boundary(|_| b);
    let cls = classify_edges(&mesh, &vec![b; mesh.num_triangles()]).unwrap();
    for m in 2..=3 {
        let w = |x: Point2| x.x * x.y * (1.0 + x.x - 0.5 * x.y.powi(m - 2));
        let space = build_trial_space(&mesh, &cls, m as usize, TraceMode::Conforming, 0).unwrap();
        let mut x = vec![0.0; space.total_dim];
        let th = space.interpolate_trace(&mesh, w);
        x[space.n_u..].copy_from_slice(&th);
        for s in skeleton(&mesh, &cls) {
            let vals = space.edge_values(&mesh, &x, s.edge);
            let (a, c) = mesh.edge_points(s.edge);
            for (k, v) in vals.iter().enumerate() {
                let p = a.lerp(c, k as f64 / m as f64);
                assert!((v - w(p)).abs() < 1e-14);
            }
        }
    }
}

fn random_marks(mesh: &TriMesh, seed: u64, frac: f64) -> Vec<usize> {
    (0..mesh.num_triangles()).filter(|&t| ((t as u64 * 2654435761 + seed * 97) % 1000) as f64 / 1000.0 < frac).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn affine_push_forward(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, d in -2.0f64..2.0, ox in -1.0f64..1.0, oy in -1.0f64..1.0) {
        let det = a * d - b * c;
        prop_assume!(det.abs() > 0.1);
        let o = pt(ox, oy);
        let mut tri = [o, o + pt(a, c), o + pt(b, d)];
        if signed_area(&tri) < 0.0 {
            tri.swap(1, 2);
        }
        let map = AffineMap::new(&tri);
        let f = |r: Point2| 1.0 + r.x * r.x * r.y - 2.0 * r.y.powi(3);
        let phys = integrate_triangle(|x| f(map.inverse(x)), &tri, 4).unwrap();
        let refi = integrate_triangle(f, &[pt(0.0, 0.0), pt(1.0, 0.0), pt(0.0, 1.0)], 4).unwrap();
        prop_assert!((phys - map.det.abs() * refi).abs() < 1e-12 * phys.abs().max(1.0));
    }

    #[test]
    fn bisection_stays_conforming_and_regular(seed in 0u64..1000, frac in 0.05f64..0.5) {
        let mut mesh = build_structured_mesh(2);
        let q0 = shape_regularity(&mesh).unwrap();
        for g in 0..10 {
            let marks = random_marks(&mesh, seed + g, frac);
            mesh = bisect_refine(&mesh, &marks).unwrap();
            mesh.check_conformity().unwrap();
        }
        prop_assert!((mesh.total_area() - 1.0).abs() < 1e-12);
        prop_assert!(shape_regularity(&mesh).unwrap() <= 2.0 * q0);
    }

    #[test]
    fn flux_balance_and_flip(bx in -2.0f64..2.0, by in -2.0f64..2.0, levels in 0usize..2) {
        let bbar = pt(bx, by);
        prop_assume!(bbar.norm() > 0.1);
        let mesh = red_refine(&build_structured_mesh(2), levels).0;
        let field = vec![bbar; mesh.num_triangles()];
        let neg = vec![-bbar; mesh.num_triangles()];
        let cls = classify_edges(&mesh, &field).unwrap();
        let flipped = classify_edges(&mesh, &neg).unwrap();
        for t in 0..mesh.num_triangles() {
            let mut total = 0.0;
            for i in 0..3 {
                let (a, b) = mesh.local_edge(t, i);
                total += cls.flux[t][i] * (b - a).norm();
                let expect = match cls.labels[t][i] {
                    EdgeLabel::Inflow => EdgeLabel::Outflow,
                    EdgeLabel::Outflow => EdgeLabel::Inflow,
                    EdgeLabel::Characteristic => EdgeLabel::Characteristic,
                };
                prop_assert_eq!(flipped.labels[t][i], expect);
            }
            prop_assert!(total.abs() < 1e-12);
        }
    }

    #[test]
    fn red_refinement_keeps_shape(n in 1usize..5, levels in 1usize..3) {
        let mesh = build_structured_mesh(n);
        let fine = red_refine(&mesh, levels).0;
        fine.check_conformity().unwrap();
        prop_assert!((shape_regularity(&fine).unwrap() - shape_regularity(&mesh).unwrap()).abs() < 1e-12);
    }
}
