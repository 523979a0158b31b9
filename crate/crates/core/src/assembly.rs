//! Global normal equations Σ BᵀG⁻¹B over the trial DOFs, the linear solve and
//! L2 error measurement.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{DpgError, Result};
use crate::geometry::{AffineMap, Point2};
use crate::linalg::{solve_spd, CsrMatrix, SolveInfo};
use crate::localdpg::{cell_grams, extension_load, local_bform, LocalB, LocalGram, MacroTrial, SubCell, TestBasis};
use crate::mesh::{classify_edges, red_refine, EdgeClass, RefinementMap, TriMesh};
use crate::polyspace::{build_test_space, build_trial_space, reference_basis, ReferenceBasis, TestSpace, TraceMode, TrialSpace};
use crate::problem::{cell_averages, TransportProblem};
use crate::quadrature::{split_triangle_points, MAX_TRIANGLE_DEGREE};

/// Default relative residual for the global solve.
pub const SOLVER_TOL: f64 = 1e-10;

pub fn default_quad_degree(m: usize) -> usize {
    (2 * (m + 2)).min(MAX_TRIANGLE_DEGREE)
}

/// Trial mesh, subgrid, and both discrete spaces for one problem.
#[derive(Clone, Debug)]
pub struct Discretization {
    /// Trial mesh with boundary tags from the true field.
    pub coarse: TriMesh,
    pub cls: EdgeClass,
    pub fine: TriMesh,
    pub refmap: RefinementMap,
    pub trial: TrialSpace,
    pub test: TestSpace,
    pub quad_degree: usize,
    pub u_basis: ReferenceBasis,
    pub test_basis: TestBasis,
}

impl Discretization {
    pub fn new(
        problem: &TransportProblem,
        mesh: &TriMesh,
        m: usize,
        mode: TraceMode,
        subgrid_depth: usize,
        quad_degree: Option<usize>,
    ) -> Result<Self> {
        let quad_degree = quad_degree.unwrap_or_else(|| default_quad_degree(m));
        let mut coarse = mesh.clone();
        coarse.tag_boundary(|p| (problem.b)(p));
        let avg = cell_averages(problem, &coarse, quad_degree)?;
        let cls = classify_edges(&coarse, &avg.b)?;
        let trial = build_trial_space(&coarse, &cls, m, mode, subgrid_depth)?;
        let (fine, refmap) = red_refine(&coarse, subgrid_depth);
        let test = build_test_space(&fine, m + 1)?;
        let u_basis = reference_basis(m - 1)?;
        let test_basis = TestBasis::new(m + 1, quad_degree)?;
        Ok(Discretization { coarse, cls, fine, refmap, trial, test, quad_degree, u_basis, test_basis })
    }

    pub fn m(&self) -> usize {
        self.trial.m
    }

    pub fn num_dofs(&self) -> usize {
        self.trial.total_dim
    }

    pub fn cells(&self, t: usize) -> Vec<SubCell> {
        let tri = self.coarse.triangle(t);
        self.refmap.children_of[t].iter().map(|&c| SubCell::new(c, self.fine.triangle(c), &tri)).collect()
    }

    /// B and the load of macro element `t` with the Gram factors of its cells.
    pub fn element_block(&self, problem: &TransportProblem, t: usize) -> Result<ElementBlock> {
        let cells = self.cells(t);
        let trial = self.trial.local(&self.coarse, t);
        let mac = MacroTrial { element: t, tri: self.coarse.triangle(t), trial: &trial, m: self.m(), u_basis: &self.u_basis };
        let local = local_bform(&mac, problem, &self.test_basis, &cells)?;
        let field = |p: Point2| (problem.b)(p);
        let grams = cell_grams(t, &cells, &field, &self.test_basis)?;
        Ok(ElementBlock { dofs: trial.dofs(), local, grams })
    }

    /// u^H at a point of macro element `t`.
    pub fn eval_u(&self, x: &[f64], t: usize, p: Point2) -> f64 {
        let map = AffineMap::new(&self.coarse.triangle(t));
        let r = map.inverse(p);
        let s = 1.0 / map.det.abs().sqrt();
        self.trial.u_range(t).zip(&self.u_basis.functions).map(|(d, f)| x[d] * f.eval(r) * s).sum()
    }
}

/// Everything one macro element contributes, kept for the estimator.
#[derive(Clone, Debug)]
pub struct ElementBlock {
    /// Global DOF of each local trial column.
    pub dofs: Vec<usize>,
    pub local: LocalB,
    pub grams: Vec<LocalGram>,
}

impl ElementBlock {
    /// Rows of B and of the load scaled by the inverse Cholesky factor of each cell Gram.
    pub fn whitened(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut w = self.local.b.clone();
        let mut l = self.local.load.clone();
        let mut r0 = 0;
        for g in &self.grams {
            let n = g.matrix.nrows();
            let lower = g.chol.l();
            let wb = lower.solve_lower_triangular(&w.rows(r0, n).clone_owned()).expect("Cholesky factor is regular");
            w.rows_mut(r0, n).copy_from(&wb);
            let lb = lower.solve_lower_triangular(&l.rows(r0, n).clone_owned()).expect("Cholesky factor is regular");
            l.rows_mut(r0, n).copy_from(&lb);
            r0 += n;
        }
        (w, l)
    }

    /// Local normal matrix WᵀW (exactly symmetric) and right-hand side Wᵀl.
    pub fn normal(&self) -> (DMatrix<f64>, DVector<f64>) {
        let (w, l) = self.whitened();
        let n = w.ncols();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = w.column(i).dot(&w.column(j));
                a[(i, j)] = v;
                a[(j, i)] = v;
            }
        }
        (a, w.tr_mul(&l))
    }

    /// G⁻¹(l − Bx) cell by cell, for the global coefficient vector `x`.
    pub fn residual_lift(&self, x: &[f64]) -> DVector<f64> {
        let xl = DVector::from_iterator(self.dofs.len(), self.dofs.iter().map(|&d| x[d]));
        let mut r = &self.local.load - &self.local.b * xl;
        let mut r0 = 0;
        for g in &self.grams {
            let n = g.matrix.nrows();
            let s = g.chol.solve(&r.rows(r0, n).clone_owned());
            r.rows_mut(r0, n).copy_from(&s);
            r0 += n;
        }
        r
    }
}

/// A x = rhs over all trial DOFs.
#[derive(Clone, Debug)]
pub struct NormalSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub n_u: usize,
    pub n_theta: usize,
}

/// Local blocks for every macro element, computed concurrently, in element order.
pub fn element_blocks(disc: &Discretization, problem: &TransportProblem) -> Result<Vec<ElementBlock>> {
    (0..disc.coarse.num_triangles()).into_par_iter().map(|t| disc.element_block(problem, t)).collect()
}

/// Scatters element contributions in element order, so the sums do not depend
/// on the thread schedule.
pub fn scatter(disc: &Discretization, blocks: &[ElementBlock]) -> NormalSystem {
    let n = disc.num_dofs();
    let locals: Vec<(DMatrix<f64>, DVector<f64>)> = blocks.par_iter().map(ElementBlock::normal).collect();
    let mut trip = Vec::with_capacity(locals.iter().map(|(a, _)| a.len()).sum());
    let mut rhs = vec![0.0; n];
    for (blk, (a, r)) in blocks.iter().zip(&locals) {
        for (i, &di) in blk.dofs.iter().enumerate() {
            rhs[di] += r[i];
            for (j, &dj) in blk.dofs.iter().enumerate() {
                trip.push((di, dj, a[(i, j)]));
            }
        }
    }
    NormalSystem { matrix: CsrMatrix::from_triplets(n, trip), rhs, n_u: disc.trial.n_u, n_theta: disc.trial.n_theta }
}

pub fn assemble(disc: &Discretization, problem: &TransportProblem) -> Result<(NormalSystem, Vec<ElementBlock>)> {
    let blocks = element_blocks(disc, problem)?;
    Ok((scatter(disc, &blocks), blocks))
}

/// The part of the right-hand side coming from the extension ḡ of the inflow data.
pub fn inhomogeneous_rhs(disc: &Discretization, problem: &TransportProblem, blocks: &[ElementBlock]) -> Result<Vec<f64>> {
    let g_bar = problem.g_bar.as_ref().ok_or(DpgError::MissingExtension)?;
    let parts: Vec<(Vec<usize>, DVector<f64>)> = blocks
        .par_iter()
        .map(|blk| {
            let cells = disc.cells(blk.local.element);
            let mut l = extension_load(problem, g_bar, &disc.test_basis, &cells)?;
            let mut b = blk.local.b.clone();
            let mut r0 = 0;
            for g in &blk.grams {
                let n = g.matrix.nrows();
                let lower = g.chol.l();
                let wb = lower.solve_lower_triangular(&b.rows(r0, n).clone_owned()).expect("regular factor");
                b.rows_mut(r0, n).copy_from(&wb);
                let wl = lower.solve_lower_triangular(&l.rows(r0, n).clone_owned()).expect("regular factor");
                l.rows_mut(r0, n).copy_from(&wl);
                r0 += n;
            }
            Ok((blk.dofs.clone(), b.tr_mul(&l)))
        })
        .collect::<Result<_>>()?;
    let mut rhs = vec![0.0; disc.num_dofs()];
    for (dofs, r) in parts {
        for (i, d) in dofs.iter().enumerate() {
            rhs[*d] += r[i];
        }
    }
    Ok(rhs)
}

#[derive(Clone, Debug)]
pub struct Solution {
    /// u coefficients first (element-major), then θ.
    pub x: Vec<f64>,
    pub n_u: usize,
    pub info: SolveInfo,
}

impl Solution {
    pub fn u_coeffs(&self) -> &[f64] {
        &self.x[..self.n_u]
    }

    pub fn theta_coeffs(&self) -> &[f64] {
        &self.x[self.n_u..]
    }
}

pub fn solve(system: &NormalSystem, tol: f64) -> Result<Solution> {
    let (x, info) = solve_spd(&system.matrix, &system.rhs, tol)?;
    Ok(Solution { x, n_u: system.n_u, info })
}

/// Assemble and solve in one go.
pub fn solve_problem(disc: &Discretization, problem: &TransportProblem) -> Result<(Solution, NormalSystem, Vec<ElementBlock>)> {
    let (sys, blocks) = assemble(disc, problem)?;
    let sol = solve(&sys, SOLVER_TOL)?;
    Ok((sol, sys, blocks))
}

fn split_error(
    problem: &TransportProblem,
    mesh: &TriMesh,
    quad_degree: usize,
    approx: impl Fn(usize, Point2) -> f64 + Sync,
) -> Result<f64> {
    let exact = problem.exact_u.as_ref().ok_or(DpgError::MissingExactSolution)?;
    let parts: Vec<f64> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let pts = split_triangle_points(&mesh.triangle(t), &exact.interface, quad_degree)?;
            Ok(pts.integrate(|p, side| ((exact.branch)(p, side) - approx(t, p)).powi(2)))
        })
        .collect::<Result<_>>()?;
    Ok(parts.iter().sum::<f64>().max(0.0).sqrt())
}

/// ‖u − u^H‖ in L2(Ω), with quadrature split along the jumps of u.
pub fn l2_error_u(disc: &Discretization, sol: &Solution, problem: &TransportProblem, quad_degree: usize) -> Result<f64> {
    split_error(problem, &disc.coarse, quad_degree, |t, p| disc.eval_u(&sol.x, t, p))
}

/// L2 distance from u to its elementwise L2 projection onto P_degree.
pub fn best_approx_error(problem: &TransportProblem, mesh: &TriMesh, degree: usize, quad_degree: usize) -> Result<f64> {
    let exact = problem.exact_u.as_ref().ok_or(DpgError::MissingExactSolution)?;
    let basis = reference_basis(degree)?;
    let coeffs: Vec<Vec<f64>> = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let map = AffineMap::new(&mesh.triangle(t));
            let s = 1.0 / map.det.abs().sqrt();
            let pts = split_triangle_points(&mesh.triangle(t), &exact.interface, quad_degree)?;
            Ok(basis
                .functions
                .iter()
                .map(|f| pts.integrate(|p, side| (exact.branch)(p, side) * f.eval(map.inverse(p)) * s))
                .collect())
        })
        .collect::<Result<_>>()?;
    split_error(problem, mesh, quad_degree, |t, p| {
        let map = AffineMap::new(&mesh.triangle(t));
        let s = 1.0 / map.det.abs().sqrt();
        let r = map.inverse(p);
        basis.functions.iter().zip(&coeffs[t]).map(|(f, c)| c * f.eval(r) * s).sum()
    })
}

/// Solution export: `kind,id,index,value` rows, u coefficients per element
/// (the element value when m = 1) and nodal θ values per skeleton edge.
pub fn solution_csv(disc: &Discretization, sol: &Solution) -> String {
    let mut out = String::from("kind,id,index,value\n");
    let per = disc.trial.u_per_element;
    for t in 0..disc.coarse.num_triangles() {
        let vals: Vec<f64> = if per == 1 {
            vec![disc.eval_u(&sol.x, t, crate::geometry::centroid(&disc.coarse.triangle(t)))]
        } else {
            disc.trial.u_range(t).map(|d| sol.x[d]).collect()
        };
        for (k, v) in vals.iter().enumerate() {
            out.push_str(&format!("u,{t},{k},{v:.16e}\n"));
        }
    }
    let on_skeleton: std::collections::BTreeSet<usize> =
        crate::mesh::skeleton(&disc.coarse, &disc.cls).into_iter().map(|s| s.edge).collect();
    for e in on_skeleton {
        for (k, v) in disc.trial.edge_values(&disc.coarse, &sol.x, e).iter().enumerate() {
            out.push_str(&format!("theta,{e},{k},{v:.16e}\n"));
        }
    }
    out
}
