//! Conforming triangle meshes with subdomain ids, tagged boundary edges, and
//! oriented interior edges.
//!
//! Conventions kept as invariants:
//! - triangle vertices are CCW; the refinement edge is (v[0], v[1]);
//!   `edges[i]` is the global id of the edge opposite `v[i]`
//! - every interior edge stores a plus/minus element pair with
//!   alpha(plus) >= alpha(minus), ties broken toward the lower element id;
//!   the edge normal points out of the plus element
//! - bisection is newest-vertex: splitting (a, b, c) at m = (a+b)/2 yields
//!   (c, a, m) and (b, c, m), so each child's refinement edge is the parent
//!   edge it inherits
//! - `half_refine` connects the three edge midpoints of every triangle
//!   (vertex ids: parent vertices first, then one per parent edge)

use std::collections::HashMap;

use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("vertex index {0} out of range")]
    BadVertex(usize),
    #[error("element index {0} out of range")]
    BadElement(usize),
    #[error("element {0} has zero area")]
    DegenerateElement(usize),
    #[error("element {element} references subdomain {subdomain} with no diffusion coefficient")]
    MissingAlpha { element: usize, subdomain: usize },
    #[error("subdomain {subdomain} has non-positive diffusion coefficient {alpha}")]
    InvalidAlpha { subdomain: usize, alpha: f64 },
    #[error("edge ({0}, {1}) is shared by more than two elements")]
    NonManifoldEdge(usize, usize),
    #[error("boundary edge ({0}, {1}) is untagged (missing boundary spec or hanging node)")]
    UntaggedBoundaryEdge(usize, usize),
    #[error("boundary tag names edge ({0}, {1}) which is not a boundary edge")]
    BadBoundaryTag(usize, usize),
    #[error("vertex {vertex} lies in the interior of edge ({0}, {1}) (hanging node)", edge.0, edge.1)]
    HangingNode { vertex: usize, edge: (usize, usize) },
    #[error("element {element} is not contained in its subdomain polygon (interface cuts it or the tag is wrong)")]
    InterfaceCut { element: usize },
    #[error("vertex {0} is referenced by no element")]
    IsolatedVertex(usize),
    #[error("vertex star at {0} is not a simple fan")]
    BrokenStar(usize),
    #[error("mesh text: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Interior,
    Dirichlet,
    Neumann,
}

/// One tagged boundary edge of the input, with its boundary-segment id
/// (segments group edges that share boundary data).
#[derive(Debug, Clone, Copy)]
pub struct BoundarySpec {
    pub v: [usize; 2],
    pub tag: BoundaryTag,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Triangle {
    pub v: [usize; 3],
    pub subdomain: usize,
    pub edges: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub v: [usize; 2],
    pub tag: BoundaryTag,
    pub segment: usize,
    pub plus: usize,
    pub minus: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<Triangle>,
    pub edges: Vec<Edge>,
    /// Diffusion coefficient per subdomain id; fixes the edge orientation.
    pub alpha: Vec<f64>,
    dirichlet_vertex: Vec<bool>,
    boundary_vertex: Vec<bool>,
    vertex_edges: Vec<Vec<usize>>,
}

/// How `build_mesh` assigns initial refinement edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefEdgeRule {
    /// Rotate each triangle so its strictly longest edge (deterministic
    /// tie-break on vertex ids) becomes (v[0], v[1]).
    LongestEdge,
    /// Trust the input vertex order.
    AsGiven,
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

pub fn midpoint(a: Point, b: Point) -> Point {
    [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn tri_coords(&self, k: usize) -> [Point; 3] {
        let t = &self.triangles[k];
        [
            self.vertices[t.v[0]],
            self.vertices[t.v[1]],
            self.vertices[t.v[2]],
        ]
    }

    pub fn tri_area(&self, k: usize) -> f64 {
        let p = self.tri_coords(k);
        0.5 * cross(sub(p[1], p[0]), sub(p[2], p[0]))
    }

    /// Element diameter (longest edge).
    pub fn tri_diameter(&self, k: usize) -> f64 {
        let p = self.tri_coords(k);
        dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[2], p[0]))
    }

    /// Diameter of the inscribed circle, 4*area / perimeter.
    pub fn tri_incircle_diameter(&self, k: usize) -> f64 {
        let p = self.tri_coords(k);
        let per = dist(p[0], p[1]) + dist(p[1], p[2]) + dist(p[2], p[0]);
        4.0 * self.tri_area(k) / per
    }

    /// Barycentric gradients (grad lambda_i) and the element area.
    pub fn grad_lambdas(&self, k: usize) -> ([Point; 3], f64) {
        let p = self.tri_coords(k);
        let area2 = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        let g = |a: Point, b: Point| [-(b[1] - a[1]) / area2, (b[0] - a[0]) / area2];
        // grad lambda_i = perp(p[i+2] - p[i+1]) / (2 area)
        ([g(p[1], p[2]), g(p[2], p[0]), g(p[0], p[1])], 0.5 * area2)
    }

    pub fn alpha_of(&self, k: usize) -> f64 {
        self.alpha[self.triangles[k].subdomain]
    }

    pub fn alpha_plus(&self, e: usize) -> f64 {
        self.alpha_of(self.edges[e].plus)
    }

    /// On boundary edges this is the (single) adjacent element's coefficient.
    pub fn alpha_minus(&self, e: usize) -> f64 {
        match self.edges[e].minus {
            Some(k) => self.alpha_of(k),
            None => self.alpha_plus(e),
        }
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let ed = &self.edges[e];
        dist(self.vertices[ed.v[0]], self.vertices[ed.v[1]])
    }

    pub fn edge_midpoint(&self, e: usize) -> Point {
        let ed = &self.edges[e];
        midpoint(self.vertices[ed.v[0]], self.vertices[ed.v[1]])
    }

    /// Unit tangent from v[0] to v[1].
    pub fn edge_tangent(&self, e: usize) -> Point {
        let ed = &self.edges[e];
        let d = sub(self.vertices[ed.v[1]], self.vertices[ed.v[0]]);
        let l = norm(d);
        [d[0] / l, d[1] / l]
    }

    /// Unit normal pointing out of the plus element.
    pub fn edge_normal(&self, e: usize) -> Point {
        let t = self.edge_tangent(e);
        let n = [t[1], -t[0]];
        let k = self.edges[e].plus;
        let opp = self.vertices[self.opposite_vertex(k, e)];
        // flip if the candidate points toward the plus element's interior
        if dot(n, sub(opp, self.edge_midpoint(e))) > 0.0 {
            [-n[0], -n[1]]
        } else {
            n
        }
    }

    /// Local index of edge `e` within triangle `k` (panics if not incident).
    pub fn local_edge_index(&self, k: usize, e: usize) -> usize {
        self.triangles[k]
            .edges
            .iter()
            .position(|&x| x == e)
            .expect("edge not in triangle")
    }

    /// Vertex of triangle `k` opposite edge `e`.
    pub fn opposite_vertex(&self, k: usize, e: usize) -> usize {
        self.triangles[k].v[self.local_edge_index(k, e)]
    }

    pub fn vertex_on_dirichlet(&self, v: usize) -> bool {
        self.dirichlet_vertex[v]
    }

    pub fn vertex_on_boundary(&self, v: usize) -> bool {
        self.boundary_vertex[v]
    }

    /// Edge ids incident to a vertex (unordered).
    pub fn incident_edges(&self, v: usize) -> &[usize] {
        &self.vertex_edges[v]
    }

    /// Number of non-Dirichlet edges (the free CR unknowns).
    pub fn n_free_edges(&self) -> usize {
        self.edges
            .iter()
            .filter(|e| e.tag != BoundaryTag::Dirichlet)
            .count()
    }

    /// Re-assign plus/minus orientation from a new coefficient table.
    pub fn orient_edges(&mut self, alpha: &[f64]) -> Result<(), MeshError> {
        check_alpha(&self.triangles, alpha)?;
        self.alpha = alpha.to_vec();
        for e in &mut self.edges {
            if let Some(minus) = e.minus {
                let (p, m) = orient_pair(e.plus.min(minus), e.plus.max(minus), alpha, &self.triangles);
                e.plus = p;
                e.minus = Some(m);
            }
        }
        Ok(())
    }

    /// Structural re-validation (used by tests and after refinement).
    pub fn validate(&self) -> Result<(), MeshError> {
        let mut seen = vec![false; self.n_vertices()];
        for (k, t) in self.triangles.iter().enumerate() {
            for &v in &t.v {
                if v >= self.n_vertices() {
                    return Err(MeshError::BadVertex(v));
                }
                seen[v] = true;
            }
            if self.tri_area(k) <= 0.0 {
                return Err(MeshError::DegenerateElement(k));
            }
            for (i, &e) in t.edges.iter().enumerate() {
                let want = edge_key(t.v[(i + 1) % 3], t.v[(i + 2) % 3]);
                if edge_key(self.edges[e].v[0], self.edges[e].v[1]) != want {
                    return Err(MeshError::Parse(format!("edge table broken at element {k}")));
                }
            }
        }
        if let Some(v) = seen.iter().position(|s| !s) {
            return Err(MeshError::IsolatedVertex(v));
        }
        for ed in &self.edges {
            let interior = ed.minus.is_some();
            if interior != (ed.tag == BoundaryTag::Interior) {
                return Err(MeshError::UntaggedBoundaryEdge(ed.v[0], ed.v[1]));
            }
            if let Some(minus) = ed.minus {
                if self.alpha_of(ed.plus) < self.alpha_of(minus) {
                    return Err(MeshError::Parse(format!(
                        "edge ({}, {}) violates the plus/minus coefficient convention",
                        ed.v[0], ed.v[1]
                    )));
                }
            }
        }
        Ok(())
    }
}

fn check_alpha(triangles: &[Triangle], alpha: &[f64]) -> Result<(), MeshError> {
    for (s, &a) in alpha.iter().enumerate() {
        if !(a > 0.0) || !a.is_finite() {
            return Err(MeshError::InvalidAlpha {
                subdomain: s,
                alpha: a,
            });
        }
    }
    for (k, t) in triangles.iter().enumerate() {
        if t.subdomain >= alpha.len() {
            return Err(MeshError::MissingAlpha {
                element: k,
                subdomain: t.subdomain,
            });
        }
    }
    Ok(())
}

fn orient_pair(a: usize, b: usize, alpha: &[f64], triangles: &[Triangle]) -> (usize, usize) {
    let aa = alpha[triangles[a].subdomain];
    let ab = alpha[triangles[b].subdomain];
    if ab > aa {
        (b, a)
    } else {
        // equal coefficients fall to the lower element id, and a < b here
        (a, b)
    }
}

/// Build a validated mesh from raw vertices, triangles (vertex triple +
/// subdomain id), tagged boundary edges, and the per-subdomain coefficient
/// table. Triangle orientation is normalized to CCW.
pub fn build_mesh(
    vertices: &[Point],
    triangles: &[([usize; 3], usize)],
    boundary: &[BoundarySpec],
    alpha: &[f64],
    ref_rule: RefEdgeRule,
) -> Result<Mesh, MeshError> {
    let nv = vertices.len();
    let mut tris: Vec<([usize; 3], usize)> = Vec::with_capacity(triangles.len());
    for (k, &(v, sub_id)) in triangles.iter().enumerate() {
        for &vi in &v {
            if vi >= nv {
                return Err(MeshError::BadVertex(vi));
            }
        }
        let p = [vertices[v[0]], vertices[v[1]], vertices[v[2]]];
        let area2 = cross(sub(p[1], p[0]), sub(p[2], p[0]));
        let scale = dist(p[0], p[1]).max(dist(p[1], p[2])).max(dist(p[2], p[0]));
        if area2.abs() <= 1e-13 * scale * scale {
            return Err(MeshError::DegenerateElement(k));
        }
        let v = if area2 < 0.0 { [v[0], v[2], v[1]] } else { v };
        tris.push((v, sub_id));
    }
    if ref_rule == RefEdgeRule::LongestEdge {
        for (v, _) in &mut tris {
            // strict total order: (length^2, min id, max id); rotations keep CCW
            let key = |a: usize, b: usize| {
                let l2 = dot(sub(vertices[a], vertices[b]), sub(vertices[a], vertices[b]));
                (l2, a.min(b), a.max(b))
            };
            let k01 = key(v[0], v[1]);
            let k12 = key(v[1], v[2]);
            let k20 = key(v[2], v[0]);
            let best = [k01, k12, k20]
                .iter()
                .cloned()
                .max_by(|x, y| x.partial_cmp(y).unwrap())
                .unwrap();
            if best == k12 {
                *v = [v[1], v[2], v[0]];
            } else if best == k20 {
                *v = [v[2], v[0], v[1]];
            }
        }
    }
    let mut boundary_map: HashMap<(usize, usize), (BoundaryTag, usize)> = HashMap::new();
    for bs in boundary {
        if bs.v[0] >= nv || bs.v[1] >= nv {
            return Err(MeshError::BadVertex(bs.v[0].max(bs.v[1])));
        }
        boundary_map.insert(edge_key(bs.v[0], bs.v[1]), (bs.tag, bs.segment));
    }
    let mesh = assemble(vertices.to_vec(), tris, &boundary_map, alpha)?;
    scan_hanging_nodes(&mesh)?;
    Ok(mesh)
}

/// Shared constructor: builds the edge table, applies tags, orients edges.
fn assemble(
    vertices: Vec<Point>,
    tris: Vec<([usize; 3], usize)>,
    boundary_map: &HashMap<(usize, usize), (BoundaryTag, usize)>,
    alpha: &[f64],
) -> Result<Mesh, MeshError> {
    let nv = vertices.len();
    let mut triangles: Vec<Triangle> = tris
        .iter()
        .map(|&(v, subdomain)| Triangle {
            v,
            subdomain,
            edges: [usize::MAX; 3],
        })
        .collect();
    check_alpha(&triangles, alpha)?;

    let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
    let mut owners: Vec<(usize, Option<usize>)> = Vec::new();
    let mut edge_verts: Vec<[usize; 2]> = Vec::new();
    for k in 0..triangles.len() {
        let v = triangles[k].v;
        for i in 0..3 {
            let (a, b) = (v[(i + 1) % 3], v[(i + 2) % 3]);
            let key = edge_key(a, b);
            let id = match edge_ids.get(&key) {
                Some(&id) => {
                    match owners[id] {
                        (_, Some(_)) => return Err(MeshError::NonManifoldEdge(key.0, key.1)),
                        (first, None) => owners[id] = (first, Some(k)),
                    }
                    id
                }
                None => {
                    let id = edge_verts.len();
                    edge_ids.insert(key, id);
                    edge_verts.push([key.0, key.1]);
                    owners.push((k, None));
                    id
                }
            };
            triangles[k].edges[i] = id;
        }
    }

    let mut edges: Vec<Edge> = Vec::with_capacity(edge_verts.len());
    for (id, &v) in edge_verts.iter().enumerate() {
        let (tag, segment, plus, minus) = match owners[id] {
            (a, Some(b)) => {
                if boundary_map.contains_key(&(v[0], v[1])) {
                    return Err(MeshError::BadBoundaryTag(v[0], v[1]));
                }
                let (p, m) = orient_pair(a.min(b), a.max(b), alpha, &triangles);
                (BoundaryTag::Interior, 0, p, Some(m))
            }
            (a, None) => match boundary_map.get(&(v[0], v[1])) {
                Some(&(tag, segment)) => (tag, segment, a, None),
                None => return Err(MeshError::UntaggedBoundaryEdge(v[0], v[1])),
            },
        };
        edges.push(Edge {
            v,
            tag,
            segment,
            plus,
            minus,
        });
    }
    for key in boundary_map.keys() {
        match edge_ids.get(key) {
            Some(&id) if edges[id].minus.is_none() => {}
            _ => return Err(MeshError::BadBoundaryTag(key.0, key.1)),
        }
    }

    let mut dirichlet_vertex = vec![false; nv];
    let mut boundary_vertex = vec![false; nv];
    let mut vertex_edges: Vec<Vec<usize>> = vec![Vec::new(); nv];
    for (id, e) in edges.iter().enumerate() {
        for &v in &e.v {
            vertex_edges[v].push(id);
            if e.tag != BoundaryTag::Interior {
                boundary_vertex[v] = true;
            }
            if e.tag == BoundaryTag::Dirichlet {
                dirichlet_vertex[v] = true;
            }
        }
    }
    let mut referenced = vec![false; nv];
    for t in &triangles {
        for &v in &t.v {
            referenced[v] = true;
        }
    }
    if let Some(v) = referenced.iter().position(|r| !r) {
        return Err(MeshError::IsolatedVertex(v));
    }

    Ok(Mesh {
        vertices,
        triangles,
        edges,
        alpha: alpha.to_vec(),
        dirichlet_vertex,
        boundary_vertex,
        vertex_edges,
    })
}

/// Reject vertices lying strictly inside another edge. Bucketed by a grid so
/// large meshes stay near-linear.
fn scan_hanging_nodes(mesh: &Mesh) -> Result<(), MeshError> {
    let scale = mesh
        .vertices
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0_f64, |m, &c| m.max(c.abs()));
    let tol = 1e-12 * scale;
    let mean_len: f64 =
        mesh.edges.iter().enumerate().map(|(e, _)| mesh.edge_length(e)).sum::<f64>()
            / mesh.n_edges().max(1) as f64;
    let cell = mean_len.max(tol * 16.0);
    let key = |p: Point| ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64);
    let mut grid: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (v, &p) in mesh.vertices.iter().enumerate() {
        grid.entry(key(p)).or_default().push(v);
    }
    for ed in &mesh.edges {
        let a = mesh.vertices[ed.v[0]];
        let b = mesh.vertices[ed.v[1]];
        let lo = key([a[0].min(b[0]) - tol, a[1].min(b[1]) - tol]);
        let hi = key([a[0].max(b[0]) + tol, a[1].max(b[1]) + tol]);
        let d = sub(b, a);
        let len2 = dot(d, d);
        for gx in lo.0..=hi.0 {
            for gy in lo.1..=hi.1 {
                let Some(cands) = grid.get(&(gx, gy)) else {
                    continue;
                };
                for &v in cands {
                    if v == ed.v[0] || v == ed.v[1] {
                        continue;
                    }
                    let p = mesh.vertices[v];
                    let t = dot(sub(p, a), d) / len2;
                    if t <= 1e-9 || t >= 1.0 - 1e-9 {
                        continue;
                    }
                    let perp = cross(d, sub(p, a)).abs() / len2.sqrt();
                    if perp <= tol {
                        return Err(MeshError::HangingNode {
                            vertex: v,
                            edge: (ed.v[0], ed.v[1]),
                        });
                    }
                }
            }
        }
    }
    Ok(())
}

/// Classify a point against a polygon (closed boundary counts as inside).
fn point_in_polygon(p: Point, poly: &[Point], tol: f64) -> bool {
    let n = poly.len();
    // on-boundary test
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let d = sub(b, a);
        let len2 = dot(d, d);
        if len2 == 0.0 {
            continue;
        }
        let t = (dot(sub(p, a), d) / len2).clamp(0.0, 1.0);
        let foot = [a[0] + t * d[0], a[1] + t * d[1]];
        if dist(p, foot) <= tol {
            return true;
        }
    }
    // ray cast
    let mut inside = false;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

/// Check that every element lies inside the polygon of its claimed subdomain,
/// i.e. no interface cuts an element and no element is mis-tagged.
pub fn check_subdomain_polygons(mesh: &Mesh, polygons: &[Vec<Point>]) -> Result<(), MeshError> {
    let scale = mesh
        .vertices
        .iter()
        .flat_map(|p| p.iter())
        .fold(1.0_f64, |m, &c| m.max(c.abs()));
    let tol = 1e-12 * scale;
    for k in 0..mesh.n_elements() {
        let sd = mesh.triangles[k].subdomain;
        let poly = polygons
            .get(sd)
            .ok_or(MeshError::MissingAlpha {
                element: k,
                subdomain: sd,
            })?;
        let p = mesh.tri_coords(k);
        let c = [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ];
        let ok = p.iter().all(|&q| point_in_polygon(q, poly, tol)) && point_in_polygon(c, poly, tol);
        if !ok {
            return Err(MeshError::InterfaceCut { element: k });
        }
    }
    Ok(())
}

/// Newest-vertex bisection of the marked elements plus conforming closure.
/// Returns the refined mesh and, per new element, the id of its ancestor in
/// the input mesh.
pub fn bisect(mesh: &Mesh, marked: &[usize]) -> Result<(Mesh, Vec<usize>), MeshError> {
    for &k in marked {
        if k >= mesh.n_elements() {
            return Err(MeshError::BadElement(k));
        }
    }
    let mut edge_marked = vec![false; mesh.n_edges()];
    let mut queue: Vec<usize> = Vec::new();
    let push_ref_edge = |k: usize, edge_marked: &mut Vec<bool>, queue: &mut Vec<usize>| {
        let e = mesh.triangles[k].edges[2];
        if !edge_marked[e] {
            edge_marked[e] = true;
            let ed = &mesh.edges[e];
            queue.push(ed.plus);
            if let Some(m) = ed.minus {
                queue.push(m);
            }
        }
    };
    for &k in marked {
        push_ref_edge(k, &mut edge_marked, &mut queue);
    }
    // closure: any element with a marked edge must have its refinement edge marked
    while let Some(k) = queue.pop() {
        let t = &mesh.triangles[k];
        if t.edges.iter().any(|&e| edge_marked[e]) && !edge_marked[t.edges[2]] {
            push_ref_edge(k, &mut edge_marked, &mut queue);
        }
    }

    let mut vertices = mesh.vertices.clone();
    let mut mid_vertex: Vec<usize> = vec![usize::MAX; mesh.n_edges()];
    for (e, ed) in mesh.edges.iter().enumerate() {
        if edge_marked[e] {
            mid_vertex[e] = vertices.len();
            vertices.push(midpoint(mesh.vertices[ed.v[0]], mesh.vertices[ed.v[1]]));
        }
    }

    let mut tris: Vec<([usize; 3], usize)> = Vec::new();
    let mut genealogy: Vec<usize> = Vec::new();
    for (k, t) in mesh.triangles.iter().enumerate() {
        let sd = t.subdomain;
        let [a, b, c] = t.v;
        if !edge_marked[t.edges[2]] {
            tris.push((t.v, sd));
            genealogy.push(k);
            continue;
        }
        let m = mid_vertex[t.edges[2]];
        // children (c, a, m) and (b, c, m); their refinement edges are the
        // parent edges (c, a) = edges[1] and (b, c) = edges[0]
        let mut emit = |child: [usize; 3], inherited: usize| {
            if edge_marked[inherited] {
                let mm = mid_vertex[inherited];
                tris.push(([child[2], child[0], mm], sd));
                tris.push(([child[1], child[2], mm], sd));
                genealogy.push(k);
                genealogy.push(k);
            } else {
                tris.push((child, sd));
                genealogy.push(k);
            }
        };
        emit([c, a, m], t.edges[1]);
        emit([b, c, m], t.edges[0]);
    }

    let mut boundary_map: HashMap<(usize, usize), (BoundaryTag, usize)> = HashMap::new();
    for (e, ed) in mesh.edges.iter().enumerate() {
        if ed.tag == BoundaryTag::Interior {
            continue;
        }
        if edge_marked[e] {
            let m = mid_vertex[e];
            boundary_map.insert(edge_key(ed.v[0], m), (ed.tag, ed.segment));
            boundary_map.insert(edge_key(m, ed.v[1]), (ed.tag, ed.segment));
        } else {
            boundary_map.insert(edge_key(ed.v[0], ed.v[1]), (ed.tag, ed.segment));
        }
    }
    let refined = assemble(vertices, tris, &boundary_map, &mesh.alpha)?;
    Ok((refined, genealogy))
}

/// Uniform red refinement: every triangle is split into four by connecting
/// edge midpoints. Wraps the refined mesh together with the parent bookkeeping
/// the half-mesh interpolation needs.
#[derive(Debug, Clone)]
pub struct HalfMesh {
    pub mesh: Mesh,
    /// Parent element of each half-mesh element.
    pub parent_of: Vec<usize>,
    /// Children of each parent element: [corner v0, corner v1, corner v2, center].
    pub children: Vec<[usize; 4]>,
    /// Vertex count of the parent mesh; half-mesh vertex `n_parent_vertices + e`
    /// is the midpoint of parent edge `e`.
    pub n_parent_vertices: usize,
    /// For each half-mesh edge: Some((parent edge, end)) if it is one half of a
    /// parent edge (end = index of the parent endpoint it touches), else None.
    pub parent_edge_of: Vec<Option<(usize, usize)>>,
}

pub fn half_refine(mesh: &Mesh) -> HalfMesh {
    let nv = mesh.n_vertices();
    let mut vertices = mesh.vertices.clone();
    for e in 0..mesh.n_edges() {
        vertices.push(mesh.edge_midpoint(e));
    }
    let mut tris: Vec<([usize; 3], usize)> = Vec::with_capacity(4 * mesh.n_elements());
    let mut parent_of = Vec::with_capacity(4 * mesh.n_elements());
    let mut children = Vec::with_capacity(mesh.n_elements());
    for (k, t) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = t.v;
        let m_bc = nv + t.edges[0];
        let m_ca = nv + t.edges[1];
        let m_ab = nv + t.edges[2];
        let base = tris.len();
        tris.push(([a, m_ab, m_ca], t.subdomain));
        tris.push(([b, m_bc, m_ab], t.subdomain));
        tris.push(([c, m_ca, m_bc], t.subdomain));
        tris.push(([m_ab, m_bc, m_ca], t.subdomain));
        parent_of.extend_from_slice(&[k, k, k, k]);
        children.push([base, base + 1, base + 2, base + 3]);
    }
    let mut boundary_map: HashMap<(usize, usize), (BoundaryTag, usize)> = HashMap::new();
    for (e, ed) in mesh.edges.iter().enumerate() {
        if ed.tag == BoundaryTag::Interior {
            continue;
        }
        boundary_map.insert(edge_key(ed.v[0], nv + e), (ed.tag, ed.segment));
        boundary_map.insert(edge_key(nv + e, ed.v[1]), (ed.tag, ed.segment));
    }
    let refined = assemble(vertices, tris, &boundary_map, &mesh.alpha)
        .expect("red refinement of a valid mesh is valid");
    let mut parent_edge_of = vec![None; refined.n_edges()];
    for (e, ed) in refined.edges.iter().enumerate() {
        let (lo, hi) = (ed.v[0].min(ed.v[1]), ed.v[0].max(ed.v[1]));
        if lo < nv && hi >= nv {
            let pe = hi - nv;
            let pv = mesh.edges[pe].v;
            if pv[0] == lo {
                parent_edge_of[e] = Some((pe, 0));
            } else if pv[1] == lo {
                parent_edge_of[e] = Some((pe, 1));
            }
        }
    }
    HalfMesh {
        mesh: refined,
        parent_of,
        children,
        n_parent_vertices: nv,
        parent_edge_of,
    }
}

/// The fan of elements and edges around a vertex.
///
/// Edges and triangles are in rotational order; `triangles[i]` lies between
/// `edges[i]` and `edges[(i+1) % edges.len()]`. For a boundary vertex the
/// edge list has one more entry than the triangle list and starts/ends with
/// the two boundary edges.
#[derive(Debug, Clone)]
pub struct Star {
    pub center: usize,
    pub triangles: Vec<usize>,
    pub edges: Vec<usize>,
    pub interior: bool,
}

impl Star {
    /// The two edges of star triangle `i` incident to the center.
    pub fn wing_edges(&self, i: usize) -> (usize, usize) {
        (self.edges[i], self.edges[(i + 1) % self.edges.len()])
    }
}

pub fn vertex_star(mesh: &Mesh, z: usize) -> Result<Star, MeshError> {
    if z >= mesh.n_vertices() {
        return Err(MeshError::BadVertex(z));
    }
    let inc = mesh.incident_edges(z);
    if inc.is_empty() {
        return Err(MeshError::IsolatedVertex(z));
    }
    let mut order: Vec<(f64, usize)> = inc
        .iter()
        .map(|&e| {
            let ed = &mesh.edges[e];
            let other = if ed.v[0] == z { ed.v[1] } else { ed.v[0] };
            let d = sub(mesh.vertices[other], mesh.vertices[z]);
            (d[1].atan2(d[0]), e)
        })
        .collect();
    order.sort_by(|a, b| a.partial_cmp(b).unwrap());

    // triangle between each adjacent edge pair
    let mut pair_tri: HashMap<(usize, usize), usize> = HashMap::new();
    let mut tri_seen: Vec<usize> = Vec::new();
    for &e in inc {
        let ed = &mesh.edges[e];
        for k in [Some(ed.plus), ed.minus].into_iter().flatten() {
            if !tri_seen.contains(&k) {
                tri_seen.push(k);
                let at_z: Vec<usize> = mesh.triangles[k]
                    .edges
                    .iter()
                    .copied()
                    .filter(|&e2| {
                        let v2 = mesh.edges[e2].v;
                        v2[0] == z || v2[1] == z
                    })
                    .collect();
                if at_z.len() != 2 {
                    return Err(MeshError::BrokenStar(z));
                }
                pair_tri.insert(edge_key(at_z[0], at_z[1]), k);
            }
        }
    }

    let n = order.len();
    // corner with a single triangle: the two cyclic pairs collapse to one key
    if n == 2 {
        if mesh.vertex_on_boundary(z) && pair_tri.len() == 1 {
            let edges: Vec<usize> = order.iter().map(|&(_, e)| e).collect();
            if edges
                .iter()
                .any(|&e| mesh.edges[e].tag == BoundaryTag::Interior)
            {
                return Err(MeshError::BrokenStar(z));
            }
            let t = *pair_tri.values().next().unwrap();
            return Ok(Star {
                center: z,
                triangles: vec![t],
                edges,
                interior: false,
            });
        }
        return Err(MeshError::BrokenStar(z));
    }
    let between: Vec<Option<usize>> = (0..n)
        .map(|i| {
            let a = order[i].1;
            let b = order[(i + 1) % n].1;
            pair_tri.get(&edge_key(a, b)).copied()
        })
        .collect();
    let gaps: Vec<usize> = (0..n).filter(|&i| between[i].is_none()).collect();
    let interior = !mesh.vertex_on_boundary(z);
    if interior {
        if !gaps.is_empty() || pair_tri.len() != n {
            return Err(MeshError::BrokenStar(z));
        }
        let edges: Vec<usize> = order.iter().map(|&(_, e)| e).collect();
        let triangles: Vec<usize> = (0..n).map(|i| between[i].unwrap()).collect();
        Ok(Star {
            center: z,
            triangles,
            edges,
            interior: true,
        })
    } else {
        if gaps.len() != 1 || pair_tri.len() != n - 1 {
            return Err(MeshError::BrokenStar(z));
        }
        let start = (gaps[0] + 1) % n;
        let edges: Vec<usize> = (0..n).map(|i| order[(start + i) % n].1).collect();
        let triangles: Vec<usize> = (0..n - 1)
            .map(|i| between[(start + i) % n].unwrap())
            .collect();
        for &e in [edges[0], edges[n - 1]].iter() {
            if mesh.edges[e].tag == BoundaryTag::Interior {
                return Err(MeshError::BrokenStar(z));
            }
        }
        Ok(Star {
            center: z,
            triangles,
            edges,
            interior: false,
        })
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{:.16e}", x)
}

/// Serialize to the plain text format:
/// header `mesh 2d v<Nv> t<Nt> e<Nb>`, then vertex lines `x y`, triangle
/// lines `v0 v1 v2 subdomain`, boundary lines `v0 v1 tag [segment]`
/// (segment omitted when 0). Coordinates carry 17 significant digits.
pub fn write_mesh(mesh: &Mesh) -> String {
    let nb = mesh
        .edges
        .iter()
        .filter(|e| e.tag != BoundaryTag::Interior)
        .count();
    let mut out = format!(
        "mesh 2d v{} t{} e{}\n",
        mesh.n_vertices(),
        mesh.n_elements(),
        nb
    );
    for p in &mesh.vertices {
        out.push_str(&format!("{} {}\n", fmt_f64(p[0]), fmt_f64(p[1])));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("{} {} {} {}\n", t.v[0], t.v[1], t.v[2], t.subdomain));
    }
    for e in &mesh.edges {
        let tag = match e.tag {
            BoundaryTag::Interior => continue,
            BoundaryTag::Dirichlet => "D",
            BoundaryTag::Neumann => "N",
        };
        if e.segment == 0 {
            out.push_str(&format!("{} {} {}\n", e.v[0], e.v[1], tag));
        } else {
            out.push_str(&format!("{} {} {} {}\n", e.v[0], e.v[1], tag, e.segment));
        }
    }
    out
}

/// Parse the text format and build a validated mesh. The stored triangle
/// vertex order is kept (it encodes the refinement edges), so write/read/write
/// round-trips byte-identically.
pub fn read_mesh(text: &str, alpha: &[f64]) -> Result<Mesh, MeshError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| MeshError::Parse("empty input".into()))?;
    let horig = header;
    let mut it = header.split_whitespace();
    let bad = |msg: &str| MeshError::Parse(format!("{msg}: {horig:?}"));
    if it.next() != Some("mesh") || it.next() != Some("2d") {
        return Err(bad("bad header"));
    }
    let counts: Vec<&str> = it.collect();
    if counts.len() != 3 {
        return Err(bad("bad header"));
    }
    let parse_count = |s: &str, prefix: char| -> Result<usize, MeshError> {
        s.strip_prefix(prefix)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| MeshError::Parse(format!("bad count field {s:?}")))
    };
    let nv = parse_count(counts[0], 'v')?;
    let nt = parse_count(counts[1], 't')?;
    let nb = parse_count(counts[2], 'e')?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| MeshError::Parse("missing vertex line".into()))?;
        let nums: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| MeshError::Parse(format!("vertex line {line:?}: {e}")))?;
        if nums.len() != 2 {
            return Err(MeshError::Parse(format!("vertex line {line:?}")));
        }
        vertices.push([nums[0], nums[1]]);
    }
    let mut tris = Vec::with_capacity(nt);
    for _ in 0..nt {
        let line = lines.next().ok_or_else(|| MeshError::Parse("missing triangle line".into()))?;
        let nums: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| MeshError::Parse(format!("triangle line {line:?}: {e}")))?;
        if nums.len() != 4 {
            return Err(MeshError::Parse(format!("triangle line {line:?}")));
        }
        tris.push(([nums[0], nums[1], nums[2]], nums[3]));
    }
    let mut boundary = Vec::with_capacity(nb);
    for _ in 0..nb {
        let line = lines.next().ok_or_else(|| MeshError::Parse("missing boundary line".into()))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 && toks.len() != 4 {
            return Err(MeshError::Parse(format!("boundary line {line:?}")));
        }
        let v0: usize = toks[0]
            .parse()
            .map_err(|_| MeshError::Parse(format!("boundary line {line:?}")))?;
        let v1: usize = toks[1]
            .parse()
            .map_err(|_| MeshError::Parse(format!("boundary line {line:?}")))?;
        let tag = match toks[2] {
            "D" => BoundaryTag::Dirichlet,
            "N" => BoundaryTag::Neumann,
            other => return Err(MeshError::Parse(format!("bad boundary tag {other:?}"))),
        };
        let segment = if toks.len() == 4 {
            toks[3]
                .parse()
                .map_err(|_| MeshError::Parse(format!("boundary line {line:?}")))?
        } else {
            0
        };
        boundary.push(BoundarySpec {
            v: [v0, v1],
            tag,
            segment,
        });
    }
    if lines.next().is_some() {
        return Err(MeshError::Parse("trailing content".into()));
    }
    build_mesh(&vertices, &tris, &boundary, alpha, RefEdgeRule::AsGiven)
}

/// Square [-1,1]^2 split into four triangles around the center vertex, one
/// subdomain per triangle, all boundary Dirichlet; handy interface fixture.
pub fn criss_cross_square(alphas: &[f64; 4]) -> Mesh {
    let vertices = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0], [0.0, 0.0]];
    let tris = [
        ([0, 1, 4], 0),
        ([1, 2, 4], 1),
        ([2, 3, 4], 2),
        ([3, 0, 4], 3),
    ];
    let boundary: Vec<BoundarySpec> = [[0usize, 1], [1, 2], [2, 3], [3, 0]]
        .iter()
        .map(|&v| BoundarySpec {
            v,
            tag: BoundaryTag::Dirichlet,
            segment: 0,
        })
        .collect();
    build_mesh(&vertices, &tris, &boundary, alphas, RefEdgeRule::LongestEdge).unwrap()
}

/// Structured n x n unit-square mesh, each cell split along the up diagonal.
/// Segments: 0 bottom+right, 1 top, 2 left. With `mixed` the top and left are
/// Neumann, otherwise everything is Dirichlet.
pub fn grid_unit_square(n: usize, alpha: f64, mixed: bool) -> Mesh {
    assert!(n >= 1);
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut tris = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            tris.push(([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)], 0));
            tris.push(([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)], 0));
        }
    }
    let side = |v: [usize; 2], seg: usize, neumann: bool| BoundarySpec {
        v,
        tag: if neumann {
            BoundaryTag::Neumann
        } else {
            BoundaryTag::Dirichlet
        },
        segment: seg,
    };
    let mut boundary = Vec::with_capacity(4 * n);
    for i in 0..n {
        boundary.push(side([idx(i, 0), idx(i + 1, 0)], 0, false));
        boundary.push(side([idx(n, i), idx(n, i + 1)], 0, false));
        boundary.push(side([idx(i, n), idx(i + 1, n)], 1, mixed));
        boundary.push(side([idx(0, i), idx(0, i + 1)], 2, mixed));
    }
    build_mesh(&vertices, &tris, &boundary, &[alpha], RefEdgeRule::LongestEdge).unwrap()
}

/// Unit square split by the diagonal, all boundary Dirichlet; handy fixture.
pub fn unit_square_two_tri(alpha: f64) -> Mesh {
    let vertices = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
    let tris = [([0, 1, 2], 0), ([0, 2, 3], 0)];
    let d = BoundaryTag::Dirichlet;
    let boundary: Vec<BoundarySpec> = [[0usize, 1], [1, 2], [2, 3], [3, 0]]
        .iter()
        .map(|&v| BoundarySpec {
            v,
            tag: d,
            segment: 0,
        })
        .collect();
    build_mesh(&vertices, &tris, &boundary, &[alpha], RefEdgeRule::LongestEdge).unwrap()
}
