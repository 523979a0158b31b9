//! Conforming triangulations: structured generation, red refinement, newest-vertex
//! bisection, flux classification of element edges and a plain-text format.
//!
//! Local edge `i` of a triangle joins vertices `i+1` and `i+2` (mod 3), so it lies
//! opposite vertex `i`. Local edge 0 is the refinement edge for bisection.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use crate::error::{DpgError, Result};
use crate::geometry::{diameter, inradius, pt, signed_area, Triangle};
pub use crate::geometry::Point2;

/// Relative threshold below which |b̄·n| counts as zero flux.
pub const CHARACTERISTIC_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum EdgeLabel {
    Inflow,
    Outflow,
    Characteristic,
}

impl EdgeLabel {
    /// Label of a unit-normal flux `flux` for a field of magnitude `speed`.
    pub fn from_flux(flux: f64, speed: f64) -> Self {
        if flux < -CHARACTERISTIC_TOL * speed {
            EdgeLabel::Inflow
        } else if flux > CHARACTERISTIC_TOL * speed {
            EdgeLabel::Outflow
        } else {
            EdgeLabel::Characteristic
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeLabel::Inflow => "inflow",
            EdgeLabel::Outflow => "outflow",
            EdgeLabel::Characteristic => "characteristic",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    /// Endpoints, lower vertex id first.
    pub v: [usize; 2],
    /// Adjacent (triangle, local edge) pairs; one entry on the boundary.
    pub adj: Vec<(usize, usize)>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.adj.len() == 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Generation {
    pub level: u32,
    pub parent: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct TriMesh {
    pub vertices: Vec<Point2>,
    pub triangles: Vec<[usize; 3]>,
    pub edges: Vec<Edge>,
    /// Global edge id of each local edge.
    pub tri_edges: Vec<[usize; 3]>,
    /// Flux label of boundary edges with respect to the global field; `None` for
    /// interior edges and untagged meshes.
    pub boundary_tag: Vec<Option<EdgeLabel>>,
    pub generation: Vec<Generation>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RefinementMap {
    pub child_of: Vec<usize>,
    pub children_of: Vec<Vec<usize>>,
}

impl RefinementMap {
    pub fn identity(n: usize) -> Self {
        RefinementMap { child_of: (0..n).collect(), children_of: (0..n).map(|i| vec![i]).collect() }
    }
}

/// Per-element flux classification of the three local edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeClass {
    pub labels: Vec<[EdgeLabel; 3]>,
    /// b̄_K · n with n the outward unit normal.
    pub flux: Vec<[f64; 3]>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SkeletonEdge {
    pub edge: usize,
    /// Unit normal of the canonical orientation (left-to-right turn of v0→v1).
    pub normal: Point2,
}

impl TriMesh {
    /// Builds adjacency for the given triangles. Triangles must be counterclockwise.
    pub fn new(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        let generation = vec![Generation { level: 0, parent: None }; triangles.len()];
        Self::with_generation(vertices, triangles, generation)
    }

    fn with_generation(vertices: Vec<Point2>, triangles: Vec<[usize; 3]>, generation: Vec<Generation>) -> Result<Self> {
        if let Some(v) = vertices.iter().position(|p| !p.is_finite()) {
            return Err(DpgError::InvalidParameter(format!("vertex {v} is not finite")));
        }
        let mut edges: Vec<Edge> = Vec::new();
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= vertices.len()) {
                return Err(DpgError::InvalidParameter(format!("triangle {t} references a missing vertex")));
            }
            let geo = [vertices[tri[0]], vertices[tri[1]], vertices[tri[2]]];
            if signed_area(&geo) <= 0.0 {
                return Err(DpgError::DegenerateTriangle(t));
            }
            let mut te = [0; 3];
            for (i, slot) in te.iter_mut().enumerate() {
                let a = tri[(i + 1) % 3];
                let b = tri[(i + 2) % 3];
                let key = (a.min(b), a.max(b));
                let id = *lookup.entry(key).or_insert_with(|| {
                    edges.push(Edge { v: [key.0, key.1], adj: Vec::with_capacity(2) });
                    edges.len() - 1
                });
                edges[id].adj.push((t, i));
                if edges[id].adj.len() > 2 {
                    return Err(DpgError::NonConforming(format!("edge {key:?} has more than two triangles")));
                }
                *slot = id;
            }
            tri_edges.push(te);
        }
        let boundary_tag = vec![None; edges.len()];
        Ok(TriMesh { vertices, triangles, edges, tri_edges, boundary_tag, generation })
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn triangle(&self, t: usize) -> Triangle {
        let v = self.triangles[t];
        [self.vertices[v[0]], self.vertices[v[1]], self.vertices[v[2]]]
    }

    pub fn area(&self, t: usize) -> f64 {
        signed_area(&self.triangle(t))
    }

    pub fn total_area(&self) -> f64 {
        (0..self.num_triangles()).map(|t| self.area(t)).sum()
    }

    /// Endpoints of local edge `i` of triangle `t` in counterclockwise order.
    pub fn local_edge(&self, t: usize, i: usize) -> (Point2, Point2) {
        let v = self.triangles[t];
        (self.vertices[v[(i + 1) % 3]], self.vertices[v[(i + 2) % 3]])
    }

    pub fn edge_points(&self, e: usize) -> (Point2, Point2) {
        let [a, b] = self.edges[e].v;
        (self.vertices[a], self.vertices[b])
    }

    pub fn max_diameter(&self) -> f64 {
        (0..self.num_triangles()).map(|t| diameter(&self.triangle(t))).fold(0.0, f64::max)
    }

    /// Tags boundary edges by the sign of b·n at the edge midpoint.
    pub fn tag_boundary(&mut self, field: impl Fn(Point2) -> Point2) {
        for (e, edge) in self.edges.iter().enumerate() {
            if !edge.is_boundary() {
                self.boundary_tag[e] = None;
                continue;
            }
            let (t, i) = edge.adj[0];
            let (a, b) = self.local_edge(t, i);
            let n = outward_normal(a, b);
            let bv = field(a.lerp(b, 0.5));
            self.boundary_tag[e] = Some(EdgeLabel::from_flux(bv.dot(n), bv.norm()));
        }
    }

    /// Edge-sharing audit: at most two triangles per edge, positive orientation and
    /// no vertex lying inside a boundary edge (which would be a hanging node).
    pub fn check_conformity(&self) -> Result<()> {
        for t in 0..self.num_triangles() {
            if self.area(t) <= 0.0 {
                return Err(DpgError::DegenerateTriangle(t));
            }
        }
        let mut on_boundary = vec![false; self.num_vertices()];
        for e in self.edges.iter().filter(|e| e.is_boundary()) {
            on_boundary[e.v[0]] = true;
            on_boundary[e.v[1]] = true;
        }
        for (id, e) in self.edges.iter().enumerate() {
            if e.adj.is_empty() || e.adj.len() > 2 {
                return Err(DpgError::NonConforming(format!("edge {id} has {} triangles", e.adj.len())));
            }
            if !e.is_boundary() {
                continue;
            }
            let (a, b) = self.edge_points(id);
            let d = b - a;
            let len2 = d.dot(d);
            for (v, p) in self.vertices.iter().enumerate() {
                if v == e.v[0] || v == e.v[1] || !on_boundary[v] {
                    continue;
                }
                let s = (*p - a).dot(d) / len2;
                let off = (*p - a).cross(d).abs() / len2.sqrt();
                if s > 1e-12 && s < 1.0 - 1e-12 && off < 1e-12 * len2.sqrt() {
                    return Err(DpgError::NonConforming(format!("vertex {v} hangs on edge {id}")));
                }
            }
        }
        Ok(())
    }

    /// Plain-text export: vertex table, triangle table, tagged boundary edges.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "vertices {}", self.num_vertices());
        for p in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", p.x, p.y);
        }
        let _ = writeln!(s, "triangles {}", self.num_triangles());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        let boundary: Vec<usize> = (0..self.num_edges()).filter(|&e| self.edges[e].is_boundary()).collect();
        let _ = writeln!(s, "boundary {}", boundary.len());
        for e in boundary {
            let tag = self.boundary_tag[e].map_or("none", EdgeLabel::as_str);
            let _ = writeln!(s, "{} {} {}", self.edges[e].v[0], self.edges[e].v[1], tag);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let bad = |line: usize, msg: &str| DpgError::MeshFormat { line, msg: msg.to_string() };
        let mut header = |name: &str| -> Result<usize> {
            let (ln, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
            let mut it = l.split_whitespace();
            if it.next() != Some(name) {
                return Err(bad(ln, &format!("expected '{name}'")));
            }
            it.next().and_then(|n| n.parse().ok()).ok_or_else(|| bad(ln, "missing count"))
        };
        let nv = header("vertices")?;
        let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
        drop(header);
        let mut take = |n: usize, rows: &mut Vec<(usize, Vec<String>)>| -> Result<()> {
            for _ in 0..n {
                let (ln, l) = lines.next().ok_or_else(|| bad(0, "unexpected end of file"))?;
                rows.push((ln, l.split_whitespace().map(str::to_string).collect()));
            }
            Ok(())
        };
        take(nv, &mut rows)?;
        let mut vertices = Vec::with_capacity(nv);
        for (ln, r) in rows.drain(..) {
            if r.len() != 2 {
                return Err(bad(ln, "vertex needs two coordinates"));
            }
            let x: f64 = r[0].parse().map_err(|_| bad(ln, "bad coordinate"))?;
            let y: f64 = r[1].parse().map_err(|_| bad(ln, "bad coordinate"))?;
            vertices.push(pt(x, y));
        }
        take(1, &mut rows)?;
        let (ln, h) = rows.pop().unwrap();
        if h.first().map(String::as_str) != Some("triangles") || h.len() != 2 {
            return Err(bad(ln, "expected 'triangles'"));
        }
        let nt: usize = h[1].parse().map_err(|_| bad(ln, "missing count"))?;
        take(nt, &mut rows)?;
        let mut triangles = Vec::with_capacity(nt);
        for (ln, r) in rows.drain(..) {
            let ids: Vec<usize> = r.iter().filter_map(|s| s.parse().ok()).collect();
            if ids.len() != 3 || r.len() != 3 {
                return Err(bad(ln, "triangle needs three vertex ids"));
            }
            triangles.push([ids[0], ids[1], ids[2]]);
        }
        let mut mesh = TriMesh::new(vertices, triangles)?;
        take(1, &mut rows)?;
        let (ln, h) = rows.pop().unwrap();
        if h.first().map(String::as_str) != Some("boundary") || h.len() != 2 {
            return Err(bad(ln, "expected 'boundary'"));
        }
        let nb: usize = h[1].parse().map_err(|_| bad(ln, "missing count"))?;
        take(nb, &mut rows)?;
        let lookup: HashMap<[usize; 2], usize> = mesh.edges.iter().enumerate().map(|(i, e)| (e.v, i)).collect();
        for (ln, r) in rows.drain(..) {
            if r.len() != 3 {
                return Err(bad(ln, "boundary record needs two vertex ids and a tag"));
            }
            let a: usize = r[0].parse().map_err(|_| bad(ln, "bad vertex id"))?;
            let b: usize = r[1].parse().map_err(|_| bad(ln, "bad vertex id"))?;
            let e = *lookup.get(&[a.min(b), a.max(b)]).ok_or_else(|| bad(ln, "unknown edge"))?;
            if !mesh.edges[e].is_boundary() {
                return Err(bad(ln, "edge is not on the boundary"));
            }
            mesh.boundary_tag[e] = match r[2].as_str() {
                "inflow" => Some(EdgeLabel::Inflow),
                "outflow" => Some(EdgeLabel::Outflow),
                "characteristic" => Some(EdgeLabel::Characteristic),
                "none" => None,
                _ => return Err(bad(ln, "unknown boundary tag")),
            };
        }
        Ok(mesh)
    }
}

/// Outward unit normal of the counterclockwise boundary segment a→b.
pub fn outward_normal(a: Point2, b: Point2) -> Point2 {
    let d = b - a;
    pt(d.y, -d.x) * (1.0 / d.norm())
}

/// Unit square split into 2n² right triangles with hypotenuses parallel to (1,1).
/// The right-angle vertex comes first so the hypotenuse is the refinement edge.
pub fn build_structured_mesh(n: usize) -> TriMesh {
    assert!(n >= 1, "structured mesh needs n >= 1");
    let h = 1.0 / n as f64;
    let id = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(pt(i as f64 * h, j as f64 * h));
        }
    }
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            triangles.push([id(i + 1, j), id(i + 1, j + 1), id(i, j)]);
            triangles.push([id(i, j + 1), id(i, j), id(i + 1, j + 1)]);
        }
    }
    TriMesh::new(vertices, triangles).expect("structured mesh is valid")
}

/// `levels` rounds of uniform red refinement. Children keep the vertex order of
/// their parent, so they are similar copies with the same refinement edge direction.
pub fn red_refine(mesh: &TriMesh, levels: usize) -> (TriMesh, RefinementMap) {
    let mut current = mesh.clone();
    let mut map = RefinementMap::identity(mesh.num_triangles());
    for _ in 0..levels {
        let (next, step) = red_once(&current);
        let child_of: Vec<usize> = step.child_of.iter().map(|&p| map.child_of[p]).collect();
        let mut children_of = vec![Vec::new(); mesh.num_triangles()];
        for (c, &p) in child_of.iter().enumerate() {
            children_of[p].push(c);
        }
        map = RefinementMap { child_of, children_of };
        current = next;
    }
    if levels > 0 {
        current.boundary_tag = vec![None; current.num_edges()];
    }
    (current, map)
}

fn red_once(mesh: &TriMesh) -> (TriMesh, RefinementMap) {
    let mut vertices = mesh.vertices.clone();
    let mid: Vec<usize> = mesh
        .edges
        .iter()
        .map(|e| {
            vertices.push(mesh.vertices[e.v[0]].lerp(mesh.vertices[e.v[1]], 0.5));
            vertices.len() - 1
        })
        .collect();
    let mut triangles = Vec::with_capacity(4 * mesh.num_triangles());
    let mut generation = Vec::with_capacity(4 * mesh.num_triangles());
    let mut child_of = Vec::with_capacity(4 * mesh.num_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = *tri;
        let m = mesh.tri_edges[t].map(|e| mid[e]);
        // m[i] is the midpoint of the edge opposite vertex i.
        for child in [[a, m[2], m[1]], [m[2], b, m[0]], [m[1], m[0], c], [m[0], m[1], m[2]]] {
            triangles.push(child);
            generation.push(Generation { level: mesh.generation[t].level + 1, parent: Some(t) });
            child_of.push(t);
        }
    }
    let fine = TriMesh::with_generation(vertices, triangles, generation).expect("red refinement is valid");
    let mut children_of = vec![Vec::new(); mesh.num_triangles()];
    for (c, &p) in child_of.iter().enumerate() {
        children_of[p].push(c);
    }
    (fine, RefinementMap { child_of, children_of })
}

/// Newest-vertex bisection of the marked triangles plus the closure needed for
/// conformity. Each marked triangle is bisected at least once.
pub fn bisect_refine(mesh: &TriMesh, marked: &[usize]) -> Result<TriMesh> {
    if let Some(&t) = marked.iter().find(|&&t| t >= mesh.num_triangles()) {
        return Err(DpgError::InvalidParameter(format!("marked triangle {t} does not exist")));
    }
    if marked.is_empty() {
        return Ok(mesh.clone());
    }
    let mut edge_marked = vec![false; mesh.num_edges()];
    for &t in marked {
        edge_marked[mesh.tri_edges[t][0]] = true;
    }
    // Closure: a triangle with any marked edge must have its refinement edge marked.
    let mut queue: VecDeque<usize> = (0..mesh.num_edges()).filter(|&e| edge_marked[e]).collect();
    while let Some(e) = queue.pop_front() {
        for &(t, _) in &mesh.edges[e].adj {
            let r = mesh.tri_edges[t][0];
            if !edge_marked[r] {
                edge_marked[r] = true;
                queue.push_back(r);
            }
        }
    }
    let mut vertices = mesh.vertices.clone();
    let mut mid: HashMap<(usize, usize), usize> = HashMap::new();
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge_marked[e] {
            vertices.push(mesh.vertices[edge.v[0]].lerp(mesh.vertices[edge.v[1]], 0.5));
            mid.insert((edge.v[0], edge.v[1]), vertices.len() - 1);
        }
    }
    let midpoint = |a: usize, b: usize| mid.get(&(a.min(b), a.max(b))).copied();
    let mut triangles = Vec::with_capacity(mesh.num_triangles() + 2 * marked.len());
    let mut generation = Vec::with_capacity(triangles.capacity());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let level = mesh.generation[t].level;
        let mut stack = vec![(*tri, level)];
        while let Some(([p, a, b], lvl)) = stack.pop() {
            match midpoint(a, b) {
                Some(m) => {
                    // Pushed in reverse so children come out in a fixed order.
                    stack.push(([m, b, p], lvl + 1));
                    stack.push(([m, p, a], lvl + 1));
                }
                None => {
                    triangles.push([p, a, b]);
                    generation.push(Generation { level: lvl, parent: Some(t) });
                }
            }
        }
    }
    let out = TriMesh::with_generation(vertices, triangles, generation)?;
    Ok(out)
}

/// Flux labels for every local edge from per-element constant velocities.
pub fn classify_edges(mesh: &TriMesh, field: &[Point2]) -> Result<EdgeClass> {
    assert_eq!(field.len(), mesh.num_triangles());
    let mut labels = Vec::with_capacity(field.len());
    let mut flux = Vec::with_capacity(field.len());
    for (t, b) in field.iter().enumerate() {
        let speed = b.norm();
        if !(speed > 0.0) || !speed.is_finite() {
            return Err(DpgError::DegenerateField(t));
        }
        let mut l = [EdgeLabel::Characteristic; 3];
        let mut f = [0.0; 3];
        for i in 0..3 {
            let (a, c) = mesh.local_edge(t, i);
            f[i] = b.dot(outward_normal(a, c));
            l[i] = EdgeLabel::from_flux(f[i], speed);
        }
        labels.push(l);
        flux.push(f);
    }
    Ok(EdgeClass { labels, flux })
}

/// Edges carrying a trace unknown: every edge with a non-characteristic side.
/// Interior edges that are characteristic for both neighbours are left out.
pub fn skeleton(mesh: &TriMesh, cls: &EdgeClass) -> Vec<SkeletonEdge> {
    let mut out = Vec::new();
    for (e, edge) in mesh.edges.iter().enumerate() {
        if edge.adj.iter().any(|&(t, i)| cls.labels[t][i] != EdgeLabel::Characteristic) {
            let (a, b) = mesh.edge_points(e);
            out.push(SkeletonEdge { edge: e, normal: outward_normal(a, b) });
        }
    }
    out
}

/// max over triangles of diam(K) / (2·inradius(K)).
pub fn shape_regularity(mesh: &TriMesh) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..mesh.num_triangles() {
        worst = worst.max(triangle_shape(&mesh.triangle(t)).ok_or(DpgError::DegenerateTriangle(t))?);
    }
    Ok(worst)
}

pub fn triangle_shape(tri: &Triangle) -> Option<f64> {
    let area = signed_area(tri).abs();
    let d = diameter(tri);
    if area <= 1e-14 * d * d {
        return None;
    }
    Some(d / (2.0 * inradius(tri)))
}
