//! Element-local DPG calculus: H(b;K) Gram matrices, the broken bilinear form
//! over the subgrid of a macro element, trial-to-test solves, and the analytic
//! and near-optimal test functions for constant convection.

mod optimal;

pub use optimal::*;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{DpgError, Result};
use crate::geometry::{barycentric, AffineMap, Point2, Triangle};
use crate::mesh::outward_normal;
use crate::polyspace::{reference_basis, BasisEval, LocalTrial, ReferenceBasis};
use crate::problem::{Piecewise, TransportProblem};
use crate::quadrature::{edge_rule, split_segment_points, split_triangle_points, triangle_rule, QuadRule};

/// Reference test basis with its values cached at the volume and edge rules.
#[derive(Clone, Debug)]
pub struct TestBasis {
    pub reference: ReferenceBasis,
    pub quad_degree: usize,
    pub rule: &'static QuadRule<Point2>,
    pub edge_rule: &'static QuadRule<f64>,
    pub volume: BasisEval,
    /// Values on reference local edge i, parametrised counterclockwise.
    pub edges: [BasisEval; 3],
}

const REF_VERTS: [Point2; 3] = [Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(0.0, 1.0)];

impl TestBasis {
    pub fn new(degree: usize, quad_degree: usize) -> Result<Self> {
        let reference = reference_basis(degree)?;
        let rule = triangle_rule(quad_degree)?;
        let erule = edge_rule(quad_degree)?;
        let volume = reference.eval_rule(rule);
        let edges = [0, 1, 2].map(|i| {
            let a = REF_VERTS[(i + 1) % 3];
            let b = REF_VERTS[(i + 2) % 3];
            let pts: Vec<Point2> = erule.points.iter().map(|t| a.lerp(b, *t)).collect();
            reference.eval_points(&pts)
        });
        Ok(TestBasis { reference, quad_degree, rule, edge_rule: erule, volume, edges })
    }

    pub fn len(&self) -> usize {
        self.reference.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reference.is_empty()
    }

    /// Physical values at an arbitrary point of the cell with map `map`.
    pub fn values_at(&self, map: &AffineMap, p: Point2) -> Vec<f64> {
        let r = map.inverse(p);
        let s = 1.0 / map.det.abs().sqrt();
        self.reference.functions.iter().map(|f| f.eval(r) * s).collect()
    }
}

/// A subgrid cell inside its macro element.
#[derive(Clone, Debug)]
pub struct SubCell {
    pub id: usize,
    pub tri: Triangle,
    pub map: AffineMap,
    /// Local macro edge containing each local edge of the cell, if any.
    pub on_macro_edge: [Option<usize>; 3],
}

impl SubCell {
    pub fn new(id: usize, tri: Triangle, macro_tri: &Triangle) -> Self {
        let mut on_macro_edge = [None; 3];
        for (i, slot) in on_macro_edge.iter_mut().enumerate() {
            let la = barycentric(macro_tri, tri[(i + 1) % 3]);
            let lb = barycentric(macro_tri, tri[(i + 2) % 3]);
            *slot = (0..3).find(|&j| la[j].abs() < 1e-12 && lb[j].abs() < 1e-12);
        }
        SubCell { id, tri, map: AffineMap::new(&tri), on_macro_edge }
    }
}

/// Gram matrix of ⟨ψᵢ,ψⱼ⟩_{H(b;K)} for the L2(K)-orthonormal test basis.
#[derive(Clone, Debug)]
pub struct LocalGram {
    pub matrix: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
}

pub fn gram_matrix(tri: &Triangle, field: &dyn Fn(Point2) -> Point2, basis: &TestBasis) -> DMatrix<f64> {
    let map = AffineMap::new(tri);
    let n = basis.len();
    let mut g = DMatrix::zeros(n, n);
    let mut db = vec![0.0; n];
    for (q, (r, w)) in basis.rule.points.iter().zip(&basis.rule.weights).enumerate() {
        let b = field(map.apply(*r));
        let vals = &basis.volume.values[q];
        for (k, gr) in basis.volume.grads[q].iter().enumerate() {
            let g = map.grad(*gr);
            db[k] = b.x * g[0] + b.y * g[1];
        }
        // The 1/|det| of the orthonormal scaling cancels the Jacobian of the rule.
        for i in 0..n {
            for j in 0..=i {
                g[(i, j)] += w * (vals[i] * vals[j] + db[i] * db[j]);
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    g
}

pub fn local_gram(tri: &Triangle, field: &dyn Fn(Point2) -> Point2, basis: &TestBasis) -> Option<LocalGram> {
    let matrix = gram_matrix(tri, field, basis);
    let chol = Cholesky::new(matrix.clone())?;
    Some(LocalGram { matrix, chol })
}

/// Coupling matrix of one macro element: rows are test functions of its subgrid
/// cells (cell-major), columns are the local trial functions.
#[derive(Clone, Debug)]
pub struct LocalB {
    pub element: usize,
    pub cells: Vec<usize>,
    pub b: DMatrix<f64>,
    pub load: DVector<f64>,
}

/// Everything a macro element needs from the trial side.
pub struct MacroTrial<'a> {
    pub element: usize,
    pub tri: Triangle,
    pub trial: &'a LocalTrial,
    pub m: usize,
    pub u_basis: &'a ReferenceBasis,
}

/// b_h(φ;ψ) for all local trial φ and subgrid test ψ, plus the load
/// f(ψ) − Σ_K ∫_{∂K} (b·n) ψ ḡ.
pub fn local_bform(
    mac: &MacroTrial<'_>,
    problem: &TransportProblem,
    test: &TestBasis,
    cells: &[SubCell],
) -> Result<LocalB> {
    let per = test.len();
    let nu = mac.trial.u_dofs.len();
    let ncol = mac.trial.len();
    let mut bmat = DMatrix::zeros(cells.len() * per, ncol);
    let mut load = DVector::zeros(cells.len() * per);
    let macro_map = AffineMap::new(&mac.tri);
    let macro_scale = 1.0 / macro_map.det.abs().sqrt();
    let b = &problem.b;
    let mut coef = vec![0.0; per];
    let mut uvals = vec![0.0; nu];
    let mut tvals = vec![0.0; ncol - nu];

    for (ci, cell) in cells.iter().enumerate() {
        let r0 = ci * per;
        let map = &cell.map;
        let s = 1.0 / map.det.abs().sqrt();
        for (q, (r, w)) in test.rule.points.iter().zip(&test.rule.weights).enumerate() {
            let x = map.apply(*r);
            let bx = b(x);
            let c = (problem.c)(x);
            let dv = (problem.div_b)(x);
            for k in 0..per {
                let g = map.grad(test.volume.grads[q][k]);
                let v = test.volume.values[q][k];
                coef[k] = s * (c * v - (bx.x * g[0] + bx.y * g[1]) - v * dv);
            }
            let rm = macro_map.inverse(x);
            for (j, slot) in uvals.iter_mut().enumerate() {
                *slot = mac.u_basis.functions[j].eval(rm) * macro_scale;
            }
            let wj = w * map.det.abs();
            for j in 0..nu {
                let f = wj * uvals[j];
                for k in 0..per {
                    bmat[(r0 + k, j)] += coef[k] * f;
                }
            }
        }
        for i in 0..3 {
            let a = cell.tri[(i + 1) % 3];
            let e = cell.tri[(i + 2) % 3];
            let n = outward_normal(a, e);
            let len = (e - a).norm();
            let on_edge = cell.on_macro_edge[i];
            for (q, (t, w)) in test.edge_rule.points.iter().zip(&test.edge_rule.weights).enumerate() {
                let x = a.lerp(e, *t);
                let flux = b(x).dot(n);
                let l = barycentric(&mac.tri, x);
                for (j, (_, shape)) in mac.trial.theta.iter().enumerate() {
                    tvals[j] = shape.eval(mac.m, l, on_edge);
                }
                let f = w * len * flux * s;
                for k in 0..per {
                    let v = f * test.edges[i].values[q][k];
                    for (j, tv) in tvals.iter().enumerate() {
                        bmat[(r0 + k, nu + j)] += v * tv;
                    }
                }
            }
        }
        // Load.
        let pts = split_triangle_points(&cell.tri, &problem.f.interface, test.quad_degree)?;
        for ((x, w), side) in pts.points.iter().zip(&pts.weights).zip(&pts.sides) {
            let fv = w * (problem.f.branch)(*x, *side);
            if fv == 0.0 {
                continue;
            }
            for (k, v) in test.values_at(map, *x).iter().enumerate() {
                load[r0 + k] += fv * v;
            }
        }
    }
    if let Some(gb) = &problem.g_bar {
        load += extension_load(problem, gb, test, cells)?;
    }
    Ok(LocalB { element: mac.element, cells: cells.iter().map(|c| c.id).collect(), b: bmat, load })
}

/// −Σ_K ∫_{∂K} (b·n) ψ ḡ for the test functions of `cells`, with the edges split
/// where ḡ jumps.
pub fn extension_load(
    problem: &TransportProblem,
    g_bar: &Piecewise,
    test: &TestBasis,
    cells: &[SubCell],
) -> Result<DVector<f64>> {
    let per = test.len();
    let mut load = DVector::zeros(cells.len() * per);
    for (ci, cell) in cells.iter().enumerate() {
        for i in 0..3 {
            let a = cell.tri[(i + 1) % 3];
            let e = cell.tri[(i + 2) % 3];
            let n = outward_normal(a, e);
            let pts = split_segment_points(a, e, &g_bar.interface, test.quad_degree)?;
            for ((x, w), side) in pts.points.iter().zip(&pts.weights).zip(&pts.sides) {
                let gv = w * (problem.b)(*x).dot(n) * (g_bar.branch)(*x, *side);
                if gv == 0.0 {
                    continue;
                }
                for (k, v) in test.values_at(&cell.map, *x).iter().enumerate() {
                    load[ci * per + k] -= gv * v;
                }
            }
        }
    }
    Ok(load)
}

/// Coefficients of T^hφ = G⁻¹Bφ for every column of `b`, block by block.
pub fn trial_to_test(grams: &[LocalGram], b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = b.clone();
    let mut r0 = 0;
    for g in grams {
        let n = g.matrix.nrows();
        let mut block = out.rows_mut(r0, n);
        let sol = g.chol.solve(&block.clone_owned());
        block.copy_from(&sol);
        r0 += n;
    }
    out
}

/// Gram matrices of all cells with element context in the error.
pub fn cell_grams(
    element: usize,
    cells: &[SubCell],
    field: &dyn Fn(Point2) -> Point2,
    basis: &TestBasis,
) -> Result<Vec<LocalGram>> {
    cells
        .iter()
        .map(|c| local_gram(&c.tri, field, basis).ok_or(DpgError::LocalGram { element, cell: c.id }))
        .collect()
}

#[cfg(test)]
mod tests;
