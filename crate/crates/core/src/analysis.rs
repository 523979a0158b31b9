//! Empirical stability: discrete inf-sup constants, quasi-optimality ratios,
//! and the local norm-equivalence and near-optimality measurements.

use faer::{Mat, Par, Side};
use nalgebra::DMatrix;

use crate::assembly::{assemble, best_approx_error, l2_error_u, solve, Discretization, SOLVER_TOL};
use crate::error::{DpgError, Result};
use crate::geometry::{diameter, AffineMap, Point2, Triangle};
use crate::localdpg::{h_norm_parts, h_norm_sq, inflow_weighted_norm_sq, Difference, FieldPoly, NearOptimalTest, OptimalTest};
use crate::mesh::{build_structured_mesh, EdgeLabel};
use crate::poly::Poly2;
use crate::polyspace::{lagrange_poly, TraceMode};
use crate::problem::TransportProblem;
use crate::quadrature::triangle_rule;

/// Dense eigensolves beyond this many trial DOFs are refused.
pub const MAX_EIGEN_DOFS: usize = 5000;

/// Lagrange nodes of the continuous P_m space on the trial mesh that lie on the
/// inflow boundary, where extensions vanish.
fn inflow_nodes(disc: &Discretization) -> Vec<bool> {
    let mesh = &disc.coarse;
    let lattice = disc.trial.lattice();
    let mut out = vec![false; disc.trial.node_points().len()];
    for t in 0..mesh.num_triangles() {
        for i in 0..3 {
            let e = mesh.tri_edges[t][i];
            if mesh.edges[e].is_boundary() && mesh.boundary_tag[e] == Some(EdgeLabel::Inflow) {
                for (k, node) in lattice.iter().enumerate() {
                    if node[i] == 0 {
                        out[disc.trial.element_nodes(t)[k]] = true;
                    }
                }
            }
        }
    }
    out
}

/// H(b;Ω) Gram matrix of the continuous P_m functions vanishing on the inflow
/// boundary. The first `n_theta` rows are the θ DOFs in DOF order, the rest are
/// the remaining free nodes.
pub fn extension_gram(disc: &Discretization, problem: &TransportProblem) -> Result<(DMatrix<f64>, usize)> {
    if disc.trial.mode != TraceMode::Conforming {
        return Err(DpgError::Unsupported("trace norm surrogate needs conforming traces".into()));
    }
    let n_u = disc.trial.n_u;
    let n_theta = disc.trial.n_theta;
    let inflow = inflow_nodes(disc);
    let mut index = vec![None; inflow.len()];
    let mut next = n_theta;
    for (id, dof) in disc.trial.node_dofs().iter().enumerate() {
        match dof {
            Some(d) => index[id] = Some(d - n_u),
            None if !inflow[id] => {
                index[id] = Some(next);
                next += 1;
            }
            None => {}
        }
    }
    let m = disc.m();
    let lattice = disc.trial.lattice();
    let shapes: Vec<Poly2> = lattice.iter().map(|n| lagrange_poly(m, *n)).collect();
    let grads: Vec<(Poly2, Poly2)> = shapes.iter().map(|p| (p.dx(), p.dy())).collect();
    let rule = triangle_rule(disc.quad_degree)?;
    let mut g = DMatrix::zeros(next, next);
    for t in 0..disc.coarse.num_triangles() {
        let map = AffineMap::new(&disc.coarse.triangle(t));
        let nodes = disc.trial.element_nodes(t);
        for (r, w) in rule.points.iter().zip(&rule.weights) {
            let x = map.apply(*r);
            let b = (problem.b)(x);
            let wq = w * map.det.abs();
            let vals: Vec<f64> = shapes.iter().map(|p| p.eval(*r)).collect();
            let db: Vec<f64> = grads
                .iter()
                .map(|(dx, dy)| {
                    let gr = map.grad([dx.eval(*r), dy.eval(*r)]);
                    b.x * gr[0] + b.y * gr[1]
                })
                .collect();
            for (a, &na) in nodes.iter().enumerate() {
                let Some(ia) = index[na] else { continue };
                for (c, &nc) in nodes.iter().enumerate() {
                    let Some(ic) = index[nc] else { continue };
                    g[(ia, ic)] += wq * (vals[a] * vals[c] + db[a] * db[c]);
                }
            }
        }
    }
    Ok((g, n_theta))
}

/// M_θ: the minimal-extension norm of θ over discrete continuous P_m
/// extensions, as a Schur complement of the extension Gram matrix.
pub fn theta_norm_surrogate(disc: &Discretization, problem: &TransportProblem) -> Result<DMatrix<f64>> {
    let (g, nt) = extension_gram(disc, problem)?;
    Ok(schur_complement(&g, nt))
}

pub(crate) fn schur_complement(g: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let n = g.nrows();
    let gdd = g.view((0, 0), (k, k)).clone_owned();
    if n == k {
        return gdd;
    }
    let gdi = g.view((0, k), (k, n - k)).clone_owned();
    let gii = g.view((k, k), (n - k, n - k)).clone_owned();
    let chol = nalgebra::Cholesky::new(gii).expect("extension Gram is positive definite");
    let x = chol.solve(&gdi.transpose());
    let mut s = gdd - &gdi * x;
    let st = s.transpose();
    s += st;
    s * 0.5
}

/// blockdiag(I, M_θ): the trial norm, with the u basis L2-orthonormal.
pub fn trial_mass(disc: &Discretization, problem: &TransportProblem) -> Result<DMatrix<f64>> {
    let mt = theta_norm_surrogate(disc, problem)?;
    let n_u = disc.trial.n_u;
    let n = disc.num_dofs();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n_u {
        m[(i, i)] = 1.0;
    }
    m.view_mut((n_u, n_u), (n - n_u, n - n_u)).copy_from(&mt);
    Ok(m)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InfSup {
    /// √λ_min of the pencil (A, M_U).
    pub gamma: f64,
    /// √λ_max of the same pencil.
    pub gamma_max: f64,
}

/// Extreme generalized eigenvalues of A x = λ M x for symmetric A and SPD M.
pub fn generalized_extremes(a: &DMatrix<f64>, m: &DMatrix<f64>) -> Result<(f64, f64)> {
    let n = a.nrows();
    if n > MAX_EIGEN_DOFS {
        return Err(DpgError::TooLarge(n));
    }
    let fm = Mat::from_fn(n, n, |i, j| m[(i, j)]);
    let llt = fm.llt(Side::Lower).map_err(|e| match e {
        faer::linalg::cholesky::llt::factor::LltError::NonPositivePivot { index } => {
            DpgError::NotPositiveDefinite { pivot: index }
        }
    })?;
    let l = llt.L();
    let mut x = Mat::from_fn(n, n, |i, j| a[(i, j)]);
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, x.as_mut(), Par::Seq);
    let mut c = x.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, c.as_mut(), Par::Seq);
    let c = Mat::from_fn(n, n, |i, j| 0.5 * (c[(i, j)] + c[(j, i)]));
    let ev = c
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| DpgError::InvalidParameter(format!("eigensolver: {e:?}")))?;
    let lo = ev.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// γ^h = inf over trial functions of the optimal-test supremum, measured in
/// the L2 × minimal-extension trial norm.
pub fn infsup_gamma(disc: &Discretization, problem: &TransportProblem) -> Result<InfSup> {
    if disc.num_dofs() > MAX_EIGEN_DOFS {
        return Err(DpgError::TooLarge(disc.num_dofs()));
    }
    let (sys, _) = assemble(disc, problem)?;
    let a = DMatrix::from_fn(sys.matrix.n, sys.matrix.n, |i, j| sys.matrix.get(i, j));
    let mu = trial_mass(disc, problem)?;
    let (lo, hi) = generalized_extremes(&a, &mu)?;
    Ok(InfSup { gamma: lo.max(0.0).sqrt(), gamma_max: hi.max(0.0).sqrt() })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StabilityRow {
    pub level: usize,
    pub h: f64,
    pub subgrid_depth: usize,
    pub m: usize,
    pub dofs: usize,
    pub gamma: Option<f64>,
    pub l2_error: f64,
    pub best_approx: f64,
    pub ratio: f64,
}

/// Structured meshes with 2^level cells per side; one row per level.
pub fn quasi_optimality(
    problem: &TransportProblem,
    levels: &[usize],
    m: usize,
    subgrid_depth: usize,
    mode: TraceMode,
    with_gamma: bool,
) -> Result<Vec<StabilityRow>> {
    levels
        .iter()
        .map(|&k| {
            let mesh = build_structured_mesh(1 << k);
            let disc = Discretization::new(problem, &mesh, m, mode, subgrid_depth, None)?;
            let (sys, _) = assemble(&disc, problem)?;
            let sol = solve(&sys, SOLVER_TOL)?;
            let l2_error = l2_error_u(&disc, &sol, problem, disc.quad_degree)?;
            let best_approx = best_approx_error(problem, &disc.coarse, m - 1, disc.quad_degree)?;
            let gamma = if with_gamma { Some(infsup_gamma(&disc, problem)?.gamma) } else { None };
            Ok(StabilityRow {
                level: k,
                h: disc.coarse.max_diameter(),
                subgrid_depth,
                m,
                dofs: disc.num_dofs(),
                gamma,
                l2_error,
                best_approx,
                ratio: l2_error / best_approx,
            })
        })
        .collect()
}

/// 2 + ‖div b‖ + ‖c − div b‖ with the sup norms sampled on an n × n grid of the unit square.
pub fn operator_norm_bound(problem: &TransportProblem, n: usize) -> f64 {
    let (mut div, mut react) = (0.0f64, 0.0f64);
    for i in 0..=n {
        for j in 0..=n {
            let p = Point2::new(i as f64 / n as f64, j as f64 / n as f64);
            let d = (problem.div_b)(p);
            div = div.max(d.abs());
            react = react.max(((problem.c)(p) - d).abs());
        }
    }
    2.0 + div + react
}

/// √(‖B*‖² + C̃²) with C̃ = (1 + ‖B^{-*}‖(1 + ‖c − div b‖))‖B⁻¹‖(‖c − div b‖ + 1).
/// The operator norms are problem constants supplied by the caller.
pub fn inverse_bound(adjoint_norm: f64, inverse_norm: f64, adjoint_inverse_norm: f64, reaction: f64) -> f64 {
    let c = (1.0 + adjoint_inverse_norm * (1.0 + reaction)) * inverse_norm * (reaction + 1.0);
    (adjoint_norm.powi(2) + c * c).sqrt()
}

/// Ratio of the inflow-weighted norm to the scaled H(b̄;K) norm,
/// (q²‖∂v‖² + ∫_{∂K₋} v²|b̂·n| r) / (q²‖∂v‖² + ‖v‖²) with q = diam(K)/|b̄|.
pub fn norm_equivalence_ratio(tri: &Triangle, b: Point2, v: &Poly2, quad_degree: usize) -> Result<f64> {
    let q = diameter(tri) / b.norm();
    let fv = FieldPoly::new(v, b);
    let (l2, db) = h_norm_parts(tri, b, &fv, quad_degree)?;
    let inflow = inflow_weighted_norm_sq(tri, b, &fv, quad_degree)?;
    Ok((q * q * db + inflow) / (q * q * db + l2))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NearOptimalDeviation {
    /// ‖t_K − t̆_K‖_{H(b̄;K)}.
    pub deviation: f64,
    /// ‖t̆_K‖_{H(b̄;K)}.
    pub near_norm: f64,
    /// ‖u‖ + ‖w‖_{H(b̄;K)} + ‖∂u‖ + ‖∂²w‖ on K.
    pub data_norm: f64,
}

impl NearOptimalDeviation {
    /// Deviation relative to the near-optimal test function itself.
    pub fn relative(&self) -> f64 {
        self.deviation / self.near_norm
    }
}

pub fn near_optimal_deviation(
    tri: &Triangle,
    b: Point2,
    c: f64,
    d: f64,
    u: &Poly2,
    w: &Poly2,
    quad_degree: usize,
) -> Result<NearOptimalDeviation> {
    let t = OptimalTest::new(tri, b, c, d, u, w)?;
    let tb = NearOptimalTest::new(tri, b, c, d, u, w)?;
    let deviation = h_norm_sq(tri, b, &Difference(&t, &tb), quad_degree)?.sqrt();
    let near_norm = h_norm_sq(tri, b, &tb, quad_degree)?.sqrt();
    let (u_l2, u_db) = h_norm_parts(tri, b, &FieldPoly::new(u, b), quad_degree)?;
    let (w_l2, w_db) = h_norm_parts(tri, b, &FieldPoly::new(w, b), quad_degree)?;
    let dw = w.directional(b);
    let (_, w_dbb) = h_norm_parts(tri, b, &FieldPoly::new(&dw, b), quad_degree)?;
    let data_norm = u_l2.sqrt() + (w_l2 + w_db).sqrt() + u_db.sqrt() + w_dbb.sqrt();
    Ok(NearOptimalDeviation { deviation, near_norm, data_norm })
}
