//! Orthonormal reference bases, Lagrange trace bases and the DOF layouts of the
//! trial space (u, θ) on the macro mesh and the broken test space on the subgrid.

use std::ops::Range;

use crate::error::{DpgError, Result};
use crate::geometry::{AffineMap, Point2};
use crate::mesh::{skeleton, EdgeClass, EdgeLabel, TriMesh};
use crate::poly::Poly2;
use crate::quadrature::{reference_monomial_integral, QuadRule};

pub const MAX_BASIS_DEGREE: usize = 6;

/// L2-orthonormal basis of P_degree on the reference triangle.
#[derive(Clone, Debug)]
pub struct ReferenceBasis {
    pub degree: usize,
    pub functions: Vec<Poly2>,
}

pub fn dim_p(degree: usize) -> usize {
    (degree + 1) * (degree + 2) / 2
}

fn reference_inner(p: &Poly2, q: &Poly2) -> f64 {
    let mut s = 0.0;
    for (i, j, a) in p.terms() {
        if a == 0.0 {
            continue;
        }
        for (k, l, b) in q.terms() {
            if b != 0.0 {
                s += a * b * reference_monomial_integral(i + k, j + l);
            }
        }
    }
    s
}

fn centered_monomial(i: usize, j: usize) -> Poly2 {
    let c = 1.0 / 3.0;
    let sx = Poly2::linear(-c, 1.0, 0.0);
    let sy = Poly2::linear(-c, 0.0, 1.0);
    let mut p = Poly2::constant(1.0);
    for _ in 0..i {
        p = &p * &sx;
    }
    for _ in 0..j {
        p = &p * &sy;
    }
    p
}

/// Gram-Schmidt over monomials about the centroid, ordered by total degree,
/// with one round of re-orthogonalization.
pub fn reference_basis(degree: usize) -> Result<ReferenceBasis> {
    if degree > MAX_BASIS_DEGREE {
        return Err(DpgError::BasisDegree(degree));
    }
    let mut functions: Vec<Poly2> = Vec::with_capacity(dim_p(degree));
    for d in 0..=degree {
        for j in 0..=d {
            let mut p = centered_monomial(d - j, j);
            for _ in 0..2 {
                for q in &functions {
                    let c = reference_inner(&p, q);
                    p = &p - &(q * c);
                }
            }
            let n = reference_inner(&p, &p).sqrt();
            functions.push(&p * (1.0 / n));
        }
    }
    Ok(ReferenceBasis { degree, functions })
}

/// Values and reference gradients of a basis at a batch of points.
#[derive(Clone, Debug)]
pub struct BasisEval {
    /// values[q][k] is function k at point q.
    pub values: Vec<Vec<f64>>,
    pub grads: Vec<Vec<[f64; 2]>>,
}

impl ReferenceBasis {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn eval_points(&self, points: &[Point2]) -> BasisEval {
        let dx: Vec<Poly2> = self.functions.iter().map(Poly2::dx).collect();
        let dy: Vec<Poly2> = self.functions.iter().map(Poly2::dy).collect();
        let values = points.iter().map(|p| self.functions.iter().map(|f| f.eval(*p)).collect()).collect();
        let grads = points
            .iter()
            .map(|p| dx.iter().zip(&dy).map(|(a, b)| [a.eval(*p), b.eval(*p)]).collect())
            .collect();
        BasisEval { values, grads }
    }

    pub fn eval_rule(&self, rule: &QuadRule<Point2>) -> BasisEval {
        self.eval_points(&rule.points)
    }

    /// Function k on the physical triangle with map `map`, scaled to unit L2(K) norm.
    pub fn physical(&self, k: usize, map: &AffineMap) -> Poly2 {
        let j = map.inv_t;
        // ζ = J^{-1}(x - origin), with J^{-1} = inv_t^T.
        let a = [[j[0][0], j[1][0]], [j[0][1], j[1][1]]];
        let o = map.origin;
        let shift = Point2::new(-(a[0][0] * o.x + a[0][1] * o.y), -(a[1][0] * o.x + a[1][1] * o.y));
        &self.functions[k].compose_affine(a, shift) * (1.0 / map.det.abs().sqrt())
    }
}

/// Lattice of degree-m Lagrange nodes in barycentric multi-index form.
pub fn lagrange_lattice(m: usize) -> Vec<[usize; 3]> {
    let mut out = Vec::with_capacity(dim_p(m));
    for i in (0..=m).rev() {
        for j in (0..=m - i).rev() {
            out.push([i, j, m - i - j]);
        }
    }
    out
}

/// Degree-m Lagrange basis function of lattice node `node` at barycentrics `l`.
pub fn lagrange_value(m: usize, node: [usize; 3], l: [f64; 3]) -> f64 {
    let mut v = 1.0;
    for a in 0..3 {
        for s in 0..node[a] {
            v *= (m as f64 * l[a] - s as f64) / (s + 1) as f64;
        }
    }
    v
}

/// The same function as a polynomial in reference coordinates, where the
/// barycentrics are (1 − x − y, x, y).
pub fn lagrange_poly(m: usize, node: [usize; 3]) -> Poly2 {
    let mf = m as f64;
    let mut p = Poly2::constant(1.0);
    for a in 0..3 {
        for s in 0..node[a] {
            let k = (s + 1) as f64;
            let sf = s as f64;
            let factor = match a {
                0 => Poly2::linear((mf - sf) / k, -mf / k, -mf / k),
                1 => Poly2::linear(-sf / k, mf / k, 0.0),
                _ => Poly2::linear(-sf / k, 0.0, mf / k),
            };
            p = &p * &factor;
        }
    }
    p
}

/// Degree-m Lagrange basis on [0,1] with nodes k/m.
pub fn edge_lagrange(m: usize, k: usize, t: f64) -> f64 {
    let mut v = 1.0;
    for j in 0..=m {
        if j != k {
            v *= (m as f64 * t - j as f64) / (k as f64 - j as f64);
        }
    }
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceMode {
    Conforming,
    Nonconforming,
}

/// Shape of a θ basis function restricted to one macro element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaShape {
    /// Degree-m Lagrange function of the given lattice node.
    Node([usize; 3]),
    /// Edge-local Lagrange function, nonzero only on local edge `edge`. The
    /// parameter runs from the lower-id endpoint to local vertex `end`.
    EdgeNode { edge: usize, end: usize, k: usize },
}

impl ThetaShape {
    /// Value at a point with barycentrics `l`; `on_edge` names the local macro
    /// edge the point lies on, if any.
    pub fn eval(&self, m: usize, l: [f64; 3], on_edge: Option<usize>) -> f64 {
        match *self {
            ThetaShape::Node(n) => lagrange_value(m, n, l),
            ThetaShape::EdgeNode { edge, end, k } => {
                if on_edge == Some(edge) {
                    edge_lagrange(m, k, l[end])
                } else {
                    0.0
                }
            }
        }
    }
}

/// Trial functions touching one macro element.
#[derive(Clone, Debug)]
pub struct LocalTrial {
    pub u_dofs: Range<usize>,
    pub theta: Vec<(usize, ThetaShape)>,
}

impl LocalTrial {
    pub fn len(&self) -> usize {
        self.u_dofs.len() + self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global DOF ids in local column order.
    pub fn dofs(&self) -> Vec<usize> {
        self.u_dofs.clone().chain(self.theta.iter().map(|t| t.0)).collect()
    }
}

#[derive(Clone, Debug)]
pub struct TrialSpace {
    pub m: usize,
    pub mode: TraceMode,
    pub subgrid_depth: usize,
    pub n_elements: usize,
    pub u_per_element: usize,
    pub n_u: usize,
    pub n_theta: usize,
    pub total_dim: usize,
    /// Conforming mode: global Lagrange node of each lattice node per element.
    element_nodes: Vec<Vec<usize>>,
    node_points: Vec<Point2>,
    node_dof: Vec<Option<usize>>,
    /// Nonconforming mode: first of m+1 consecutive DOFs per edge.
    edge_dof: Vec<Option<usize>>,
    /// Per element, local vertex index of the higher-id endpoint of each local edge.
    edge_end: Vec<[usize; 3]>,
    lattice: Vec<[usize; 3]>,
}

fn inflow_edges(mesh: &TriMesh, cls: &EdgeClass) -> Vec<bool> {
    mesh.edges
        .iter()
        .enumerate()
        .map(|(e, edge)| {
            edge.is_boundary()
                && match mesh.boundary_tag[e] {
                    Some(tag) => tag == EdgeLabel::Inflow,
                    None => {
                        let (t, i) = edge.adj[0];
                        cls.labels[t][i] == EdgeLabel::Inflow
                    }
                }
        })
        .collect()
}

/// Trial space on the macro mesh. Boundary tags of `mesh` (or, if untagged, the
/// labels in `cls`) decide the inflow boundary where θ vanishes.
///
/// With `subgrid_depth == 0` only Lagrange nodes on skeleton edges carry θ DOFs.
/// With a refined subgrid θ is also needed on interior subgrid edges, so every
/// node off the inflow boundary is a DOF.
pub fn build_trial_space(
    mesh: &TriMesh,
    cls: &EdgeClass,
    m: usize,
    mode: TraceMode,
    subgrid_depth: usize,
) -> Result<TrialSpace> {
    if !(1..=3).contains(&m) {
        return Err(DpgError::InvalidParameter(format!("trace degree m = {m} must be in 1..=3")));
    }
    if mode == TraceMode::Nonconforming && subgrid_depth > 0 {
        return Err(DpgError::Unsupported("nonconforming traces need subgrid depth 0".into()));
    }
    let ne = mesh.num_triangles();
    let nv = mesh.num_vertices();
    let nedge = mesh.num_edges();
    let inflow = inflow_edges(mesh, cls);
    let mut on_skeleton = vec![false; nedge];
    for s in skeleton(mesh, cls) {
        on_skeleton[s.edge] = true;
    }
    let lattice = lagrange_lattice(m);
    let u_per_element = dim_p(m - 1);
    let n_u = ne * u_per_element;
    let edge_end: Vec<[usize; 3]> = mesh
        .triangles
        .iter()
        .map(|tri| {
            let mut e = [0; 3];
            for (i, slot) in e.iter_mut().enumerate() {
                let (a, b) = ((i + 1) % 3, (i + 2) % 3);
                *slot = if tri[a] > tri[b] { a } else { b };
            }
            e
        })
        .collect();

    let mut space = TrialSpace {
        m,
        mode,
        subgrid_depth,
        n_elements: ne,
        u_per_element,
        n_u,
        n_theta: 0,
        total_dim: 0,
        element_nodes: Vec::new(),
        node_points: Vec::new(),
        node_dof: Vec::new(),
        edge_dof: vec![None; nedge],
        edge_end,
        lattice: lattice.clone(),
    };

    match mode {
        TraceMode::Conforming => {
            let per_edge = m - 1;
            let n_int = lattice.iter().filter(|n| n.iter().all(|&k| k > 0)).count();
            let n_nodes = nv + nedge * per_edge + ne * n_int;
            let mut points = vec![Point2::default(); n_nodes];
            let mut constrained = vec![false; n_nodes];
            let mut on_skel = vec![false; n_nodes];
            let mut element_nodes = Vec::with_capacity(ne);
            for (t, tri) in mesh.triangles.iter().enumerate() {
                let geo = mesh.triangle(t);
                let mut ids = Vec::with_capacity(lattice.len());
                let mut interior = 0;
                for node in &lattice {
                    let l = node.map(|k| k as f64 / m as f64);
                    let p = geo[0] * l[0] + geo[1] * l[1] + geo[2] * l[2];
                    let zeros: Vec<usize> = (0..3).filter(|&a| node[a] == 0).collect();
                    let (id, edges): (usize, Vec<usize>) = match zeros.len() {
                        2 => {
                            let a = (0..3).find(|&a| node[a] == m).unwrap();
                            let v = tri[a];
                            let incident = mesh.tri_edges[t]
                                .iter()
                                .copied()
                                .filter(|&e| mesh.edges[e].v.contains(&v))
                                .collect();
                            (v, incident)
                        }
                        1 => {
                            let a = zeros[0];
                            let e = mesh.tri_edges[t][a];
                            let end = space.edge_end[t][a];
                            (nv + e * per_edge + node[end] - 1, vec![e])
                        }
                        _ => {
                            interior += 1;
                            (nv + nedge * per_edge + t * n_int + interior - 1, vec![])
                        }
                    };
                    points[id] = p;
                    for &e in &edges {
                        constrained[id] |= inflow[e];
                        on_skel[id] |= on_skeleton[e];
                    }
                    ids.push(id);
                }
                element_nodes.push(ids);
            }
            // A vertex touches more edges than the ones seen from one element.
            for (e, edge) in mesh.edges.iter().enumerate() {
                for &v in &edge.v {
                    constrained[v] |= inflow[e];
                    on_skel[v] |= on_skeleton[e];
                }
            }
            let mut node_dof = vec![None; n_nodes];
            let mut next = n_u;
            for id in 0..n_nodes {
                if !constrained[id] && (subgrid_depth > 0 || on_skel[id]) {
                    node_dof[id] = Some(next);
                    next += 1;
                }
            }
            space.n_theta = next - n_u;
            space.element_nodes = element_nodes;
            space.node_points = points;
            space.node_dof = node_dof;
        }
        TraceMode::Nonconforming => {
            let mut next = n_u;
            for e in 0..nedge {
                if on_skeleton[e] && !inflow[e] {
                    space.edge_dof[e] = Some(next);
                    next += m + 1;
                }
            }
            space.n_theta = next - n_u;
        }
    }
    space.total_dim = n_u + space.n_theta;
    Ok(space)
}

impl TrialSpace {
    pub fn u_range(&self, t: usize) -> Range<usize> {
        t * self.u_per_element..(t + 1) * self.u_per_element
    }

    pub fn local(&self, mesh: &TriMesh, t: usize) -> LocalTrial {
        let mut theta = Vec::new();
        match self.mode {
            TraceMode::Conforming => {
                for (k, &id) in self.element_nodes[t].iter().enumerate() {
                    if let Some(d) = self.node_dof[id] {
                        theta.push((d, ThetaShape::Node(self.lattice[k])));
                    }
                }
            }
            TraceMode::Nonconforming => {
                for i in 0..3 {
                    if let Some(d) = self.edge_dof[mesh.tri_edges[t][i]] {
                        for k in 0..=self.m {
                            theta.push((d + k, ThetaShape::EdgeNode { edge: i, end: self.edge_end[t][i], k }));
                        }
                    }
                }
            }
        }
        LocalTrial { u_dofs: self.u_range(t), theta }
    }

    /// θ DOF values interpolating `w` (nodal interpolation on the skeleton).
    pub fn interpolate_trace(&self, mesh: &TriMesh, w: impl Fn(Point2) -> f64) -> Vec<f64> {
        let mut out = vec![0.0; self.n_theta];
        match self.mode {
            TraceMode::Conforming => {
                for (id, d) in self.node_dof.iter().enumerate() {
                    if let Some(d) = d {
                        out[d - self.n_u] = w(self.node_points[id]);
                    }
                }
            }
            TraceMode::Nonconforming => {
                for (e, d) in self.edge_dof.iter().enumerate() {
                    if let Some(d) = d {
                        let (a, b) = mesh.edge_points(e);
                        for k in 0..=self.m {
                            out[d - self.n_u + k] = w(a.lerp(b, k as f64 / self.m as f64));
                        }
                    }
                }
            }
        }
        out
    }

    /// Nodal θ values at the m+1 equispaced points of edge `e` (canonical
    /// orientation) from a full trial coefficient vector.
    pub fn edge_values(&self, mesh: &TriMesh, x: &[f64], e: usize) -> Vec<f64> {
        let m = self.m;
        match self.mode {
            TraceMode::Nonconforming => match self.edge_dof[e] {
                Some(d) => x[d..=d + m].to_vec(),
                None => vec![0.0; m + 1],
            },
            TraceMode::Conforming => {
                let (t, i) = mesh.edges[e].adj[0];
                let end = self.edge_end[t][i];
                let mut vals = vec![0.0; m + 1];
                for (k, node) in self.lattice.iter().enumerate() {
                    if node[i] != 0 {
                        continue;
                    }
                    if let Some(d) = self.node_dof[self.element_nodes[t][k]] {
                        vals[node[end]] = x[d];
                    }
                }
                vals
            }
        }
    }

    /// Conforming mode: number of global Lagrange nodes and their coordinates.
    pub fn node_points(&self) -> &[Point2] {
        &self.node_points
    }

    pub fn node_dofs(&self) -> &[Option<usize>] {
        &self.node_dof
    }

    pub fn element_nodes(&self, t: usize) -> &[usize] {
        &self.element_nodes[t]
    }

    pub fn lattice(&self) -> &[[usize; 3]] {
        &self.lattice
    }
}

/// Broken polynomial test space on the subgrid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestSpace {
    pub degree: usize,
    pub n_cells: usize,
    pub per_cell: usize,
    pub total_dim: usize,
}

pub fn build_test_space(fine: &TriMesh, degree: usize) -> Result<TestSpace> {
    if degree > MAX_BASIS_DEGREE {
        return Err(DpgError::BasisDegree(degree));
    }
    let per_cell = dim_p(degree);
    Ok(TestSpace { degree, n_cells: fine.num_triangles(), per_cell, total_dim: per_cell * fine.num_triangles() })
}

impl TestSpace {
    pub fn block(&self, cell: usize) -> Range<usize> {
        cell * self.per_cell..(cell + 1) * self.per_cell
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::pt;
    use crate::mesh::{build_structured_mesh, classify_edges, red_refine};
    use crate::quadrature::triangle_rule;

    #[test]
    fn reference_basis_examples() {
        let b0 = reference_basis(0).unwrap();
        assert_eq!(b0.len(), 1);
        assert!((b0.functions[0].eval(pt(0.2, 0.3)) - 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(reference_basis(2).unwrap().len(), 6);
        assert!(reference_basis(7).is_err());
        for d in 1..=MAX_BASIS_DEGREE {
            let b = reference_basis(d).unwrap();
            let rule = triangle_rule(2 * d.min(5)).unwrap();
            if 2 * d > 10 {
                continue;
            }
            let ev = b.eval_rule(rule);
            for i in 0..b.len() {
                for j in 0..b.len() {
                    let s: f64 = (0..rule.weights.len()).map(|q| rule.weights[q] * ev.values[q][i] * ev.values[q][j]).sum();
                    let e = if i == j { 1.0 } else { 0.0 };
                    // Monomial coefficients grow with the degree and so does rounding.
                    let tol = if d <= 4 { 1e-11 } else { 1e-9 };
                    assert!((s - e).abs() < tol, "degree {d}: ({i},{j}) = {s}");
                }
            }
        }
    }

    #[test]
    fn lagrange_poly_matches_values() {
        for m in 1..=3 {
            for node in lagrange_lattice(m) {
                let p = lagrange_poly(m, node);
                for r in [pt(0.1, 0.2), pt(0.6, 0.3), pt(0.0, 1.0)] {
                    let l = [1.0 - r.x - r.y, r.x, r.y];
                    assert!((p.eval(r) - lagrange_value(m, node, l)).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn lagrange_partition_of_unity() {
        for m in 1..=3 {
            let l = [0.2, 0.5, 0.3];
            let s: f64 = lagrange_lattice(m).iter().map(|n| lagrange_value(m, *n, l)).sum();
            assert!((s - 1.0).abs() < 1e-14);
            for t in [0.0, 0.37, 1.0] {
                let s: f64 = (0..=m).map(|k| edge_lagrange(m, k, t)).sum();
                assert!((s - 1.0).abs() < 1e-14);
            }
        }
    }

    fn anti_diagonal_square() -> TriMesh {
        TriMesh::new(vec![pt(0.0, 0.0), pt(1.0, 0.0), pt(1.0, 1.0), pt(0.0, 1.0)], vec![[0, 1, 3], [1, 2, 3]]).unwrap()
    }

    #[test]
    fn trial_dof_counts() {
        let mut m = anti_diagonal_square();
        m.tag_boundary(|_| pt(1.0, 1.0));
        let cls = classify_edges(&m, &[pt(1.0, 1.0); 2]).unwrap();
        let s = build_trial_space(&m, &cls, 1, TraceMode::Conforming, 0).unwrap();
        assert_eq!((s.n_u, s.n_theta, s.total_dim), (2, 1, 3));
        let s = build_trial_space(&m, &cls, 1, TraceMode::Nonconforming, 0).unwrap();
        assert_eq!((s.n_u, s.n_theta, s.total_dim), (2, 6, 8));
        assert!(build_trial_space(&m, &cls, 1, TraceMode::Nonconforming, 1).is_err());
    }

    #[test]
    fn trial_dofs_structured_with_characteristic_diagonal() {
        let mut m = build_structured_mesh(1);
        m.tag_boundary(|_| pt(1.0, 1.0));
        let cls = classify_edges(&m, &[pt(1.0, 1.0); 2]).unwrap();
        let s = build_trial_space(&m, &cls, 1, TraceMode::Conforming, 0).unwrap();
        assert_eq!(s.total_dim, 3);
        // The diagonal is characteristic, leaving right and top edges.
        let s = build_trial_space(&m, &cls, 1, TraceMode::Nonconforming, 0).unwrap();
        assert_eq!(s.total_dim, 6);
        let s = build_trial_space(&m, &cls, 2, TraceMode::Conforming, 0).unwrap();
        // u: 2×3; θ: vertex (1,1) plus midpoints of right and top edges.
        assert_eq!((s.n_u, s.n_theta), (6, 3));
        let s = build_trial_space(&m, &cls, 2, TraceMode::Conforming, 1).unwrap();
        // The diagonal midpoint also carries θ once the subgrid cuts through.
        assert_eq!(s.n_theta, 4);
    }

    #[test]
    fn conforming_interpolation_reproduces_polynomials() {
        let mut m = build_structured_mesh(3);
        let b = pt(1.0, 0.5);
        m.tag_boundary(|_| b);
        let cls = classify_edges(&m, &vec![b; m.num_triangles()]).unwrap();
        for deg in 2..=3 {
            let s = build_trial_space(&m, &cls, deg, TraceMode::Conforming, 1).unwrap();
            // Vanishes on x = 0 and y = 0.
            let w = |p: Point2| p.x * p.y * if deg == 3 { 1.0 + p.x } else { 1.0 };
            let th = s.interpolate_trace(&m, w);
            let mut x = vec![0.0; s.total_dim];
            x[s.n_u..].copy_from_slice(&th);
            for t in 0..m.num_triangles() {
                let lt = s.local(&m, t);
                let tri = m.triangle(t);
                for l in [[0.2, 0.3, 0.5], [0.0, 0.4, 0.6], [0.1, 0.9, 0.0]] {
                    let p = tri[0] * l[0] + tri[1] * l[1] + tri[2] * l[2];
                    let v: f64 = lt.theta.iter().map(|(d, sh)| x[*d] * sh.eval(deg, l, None)).sum();
                    assert!((v - w(p)).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn test_space_sizes() {
        let m = build_structured_mesh(1);
        assert_eq!(build_test_space(&m, 2).unwrap().total_dim, 12);
        assert_eq!(build_test_space(&m, 3).unwrap().total_dim, 20);
        let (f, _) = red_refine(&m, 1);
        assert_eq!(build_test_space(&f, 2).unwrap().total_dim, 48);
    }
}
