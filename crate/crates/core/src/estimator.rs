//! Riesz lift of the discrete residual, element indicators, Dörfler marking and
//! the adaptive loop.

use rayon::prelude::*;

use crate::assembly::{best_approx_error, l2_error_u, solve_problem, Discretization, ElementBlock, Solution};
use crate::error::{DpgError, Result};
use crate::mesh::{bisect_refine, TriMesh};
use crate::polyspace::TraceMode;
use crate::problem::TransportProblem;

/// r̃ ∈ 𝕍^h as coefficients over the subgrid test space, cell by cell.
pub fn residual_representation(disc: &Discretization, blocks: &[ElementBlock], x: &[f64]) -> Vec<f64> {
    let per = disc.test.per_cell;
    let lifts: Vec<_> = blocks.par_iter().map(|b| b.residual_lift(x)).collect();
    let mut r = vec![0.0; disc.test.total_dim];
    for (blk, lift) in blocks.iter().zip(&lifts) {
        for (ci, &cell) in blk.local.cells.iter().enumerate() {
            r[disc.test.block(cell)].copy_from_slice(lift.rows(ci * per, per).as_slice());
        }
    }
    r
}

#[derive(Clone, Debug, PartialEq)]
pub struct Indicators {
    /// ‖r̃‖²_{H(b;K')} per macro element, summed over its subgrid cells.
    pub eta2: Vec<f64>,
    pub total: f64,
}

/// ‖r̃‖² restricted to each macro element.
pub fn local_indicators(disc: &Discretization, blocks: &[ElementBlock], r: &[f64]) -> Indicators {
    let per = disc.test.per_cell;
    let eta2: Vec<f64> = blocks
        .par_iter()
        .map(|blk| {
            blk.local
                .cells
                .iter()
                .zip(&blk.grams)
                .map(|(&cell, g)| {
                    let v = nalgebra::DVector::from_column_slice(&r[disc.test.block(cell)]);
                    debug_assert_eq!(v.len(), per);
                    v.dot(&(&g.matrix * &v)).max(0.0)
                })
                .sum()
        })
        .collect();
    let total = eta2.iter().sum();
    Indicators { eta2, total }
}

/// Smallest greedy prefix, largest indicators first, carrying a fraction
/// `theta` of the total. Ties go to the lower element id. Returned sorted.
pub fn dorfler_mark(ind: &Indicators, theta: f64) -> Result<Vec<usize>> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(DpgError::InvalidParameter(format!("marking parameter {theta} not in (0, 1]")));
    }
    let mut order: Vec<usize> = (0..ind.eta2.len()).filter(|&k| ind.eta2[k] > 0.0).collect();
    order.sort_by(|&a, &b| ind.eta2[b].total_cmp(&ind.eta2[a]).then(a.cmp(&b)));
    let mut marked = if theta == 1.0 {
        order
    } else {
        let target = theta * ind.total;
        let mut acc = 0.0;
        let mut out = Vec::new();
        for k in order {
            if acc >= target {
                break;
            }
            acc += ind.eta2[k];
            out.push(k);
        }
        out
    };
    marked.sort_unstable();
    Ok(marked)
}

#[derive(Clone, Debug)]
pub struct AfemStep {
    pub iteration: usize,
    pub mesh: TriMesh,
    pub dofs: usize,
    pub l2_error: Option<f64>,
    pub best_approx: Option<f64>,
    pub total_indicator: f64,
    /// Elements of `mesh` marked for refinement (empty after the last solve).
    pub marked: Vec<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct AfemParams {
    pub iterations: usize,
    pub theta: f64,
    pub m: usize,
    pub subgrid_depth: usize,
    pub mode: TraceMode,
    pub quad_degree: Option<usize>,
}

/// One solve-estimate step on `mesh`.
pub fn estimate(problem: &TransportProblem, mesh: &TriMesh, p: &AfemParams) -> Result<(Discretization, Solution, Indicators)> {
    let disc = Discretization::new(problem, mesh, p.m, p.mode, p.subgrid_depth, p.quad_degree)?;
    let (sol, _, blocks) = solve_problem(&disc, problem)?;
    let r = residual_representation(&disc, &blocks, &sol.x);
    let ind = local_indicators(&disc, &blocks, &r);
    Ok((disc, sol, ind))
}

/// Solve, estimate, mark, bisect; `iterations` refinements give
/// `iterations + 1` records. The subgrid depth stays fixed.
pub fn afem_loop(problem: &TransportProblem, initial: &TriMesh, p: &AfemParams) -> Result<Vec<AfemStep>> {
    let mut mesh = initial.clone();
    let mut out = Vec::with_capacity(p.iterations + 1);
    for it in 0..=p.iterations {
        let (disc, sol, ind) = estimate(problem, &mesh, p)?;
        let (l2_error, best_approx) = if problem.exact_u.is_some() {
            (
                Some(l2_error_u(&disc, &sol, problem, disc.quad_degree)?),
                Some(best_approx_error(problem, &disc.coarse, p.m - 1, disc.quad_degree)?),
            )
        } else {
            (None, None)
        };
        let marked = if it < p.iterations { dorfler_mark(&ind, p.theta)? } else { Vec::new() };
        let next = if marked.is_empty() { None } else { Some(bisect_refine(&mesh, &marked)?) };
        out.push(AfemStep {
            iteration: it,
            mesh: mesh.clone(),
            dofs: disc.num_dofs(),
            l2_error,
            best_approx,
            total_indicator: ind.total,
            marked,
        });
        match next {
            Some(m) => mesh = m,
            None if it < p.iterations => {
                // Nothing to refine: the residual vanishes.
                break;
            }
            None => {}
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ind(v: &[f64]) -> Indicators {
        Indicators { eta2: v.to_vec(), total: v.iter().sum() }
    }

    #[test]
    fn dorfler_examples() {
        assert_eq!(dorfler_mark(&ind(&[4.0, 3.0, 2.0, 1.0]), 0.5).unwrap(), vec![0, 1]);
        assert_eq!(dorfler_mark(&ind(&[1.0, 4.0, 0.0, 2.0]), 1.0).unwrap(), vec![0, 1, 3]);
        assert_eq!(dorfler_mark(&ind(&[1.0, 1.0, 1.0, 1.0]), 0.5).unwrap(), vec![0, 1]);
        assert!(dorfler_mark(&ind(&[0.0, 0.0]), 0.5).unwrap().is_empty());
        assert!(dorfler_mark(&ind(&[1.0]), 0.0).is_err());
        assert!(dorfler_mark(&ind(&[1.0]), 1.5).is_err());
    }

    #[test]
    fn dorfler_monotone_in_theta() {
        let v: Vec<f64> = (0..40).map(|k| ((k * 37 % 11) as f64).powi(2)).collect();
        let mut prev = 0;
        for k in 1..=20 {
            let n = dorfler_mark(&ind(&v), k as f64 / 20.0).unwrap().len();
            assert!(n >= prev);
            prev = n;
        }
    }
}
