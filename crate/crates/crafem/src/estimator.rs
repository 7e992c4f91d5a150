//! Residual error indicators for the CR discretization.
//!
//! Per element the squared indicator collects a source residual, flux-jump
//! terms, and solution-jump terms. The solution-jump part exists in three
//! flavors: the standard endpoint-jump form, a modified form that replaces
//! the contributions at vertices with a non-quasi-monotone coefficient
//! distribution by a patch interpolation term, and a tangential-derivative
//! form kept for comparison runs.
//!
//! Solution jumps are measured through their endpoint values: a CR jump is
//! linear along an edge and vanishes at the midpoint, so the norm
//! h (d0^2 + d1^2) / 6 is exact on interior edges and exact for affine
//! boundary data on Dirichlet edges.

use crate::fem::CrSolution;
pub use crate::fem::{clement_interpolate, cr_interpolate};
use crate::mesh::{dot, half_refine, vertex_star, BoundaryTag, HalfMesh, Mesh, MeshError};
use crate::problems::ProblemSpec;
use crate::quad::{edge_rule, integrate_edge, integrate_tri, tri_rule};

use rayon::prelude::*;
use std::io::{self, Write};

/// Squared indicator parts of one element.
#[derive(Debug, Clone, Copy, Default)]
pub struct ElementIndicators {
    pub rf_sq: f64,
    pub jsigma_sq: f64,
    pub ju_sq: f64,
    pub ju_mod_sq: f64,
    pub jtau_sq: f64,
}

impl ElementIndicators {
    pub fn eta_sq(&self) -> f64 {
        self.rf_sq + self.jsigma_sq + self.ju_sq
    }
    pub fn eta(&self) -> f64 {
        self.eta_sq().sqrt()
    }
    pub fn eta_mod_sq(&self) -> f64 {
        self.rf_sq + self.jsigma_sq + self.ju_mod_sq
    }
    pub fn eta_mod(&self) -> f64 {
        self.eta_mod_sq().sqrt()
    }
    pub fn eta_tan_sq(&self) -> f64 {
        self.rf_sq + self.jsigma_sq + self.jtau_sq
    }
    pub fn eta_tan(&self) -> f64 {
        self.eta_tan_sq().sqrt()
    }
}

/// Global estimates plus the per-element breakdown.
#[derive(Debug, Clone)]
pub struct IndicatorReport {
    pub elements: Vec<ElementIndicators>,
    pub eta: f64,
    pub eta_mod: f64,
    pub eta_tan: f64,
    pub eta_ju: f64,
    pub eta_ju_mod: f64,
    /// Pure patch-interpolation variant of the solution-jump estimate,
    /// applied at every vertex; upper-bound diagnostic.
    pub eta_hat_ju: f64,
    /// Vertices whose coefficient patch is not quasi-monotone, sorted.
    pub non_monotone: Vec<usize>,
}

/// Squared edge-jump norms; entries are zero where the edge type rules a
/// jump out (flux on Dirichlet, solution/tangential on Neumann edges).
#[derive(Debug, Clone, Copy, Default)]
pub struct EdgeJumps {
    pub ju_sq: f64,
    pub jsigma_sq: f64,
    pub jtau_sq: f64,
    /// Solution jump at the edge endpoints v[0], v[1] (interior and
    /// Dirichlet edges only).
    pub endpoint_jumps: Option<[f64; 2]>,
}

fn local_vertex(mesh: &Mesh, k: usize, z: usize) -> usize {
    mesh.triangles[k]
        .v
        .iter()
        .position(|&v| v == z)
        .expect("vertex belongs to element")
}

/// Jump quantities of a single edge.
pub fn edge_jumps(mesh: &Mesh, spec: &ProblemSpec, u: &CrSolution, e: usize) -> EdgeJumps {
    let ed = &mesh.edges[e];
    let h = mesh.edge_length(e);
    let n = mesh.edge_normal(e);
    let tau = mesh.edge_tangent(e);
    let kp = ed.plus;
    let ap = mesh.alpha_of(kp);
    let gp = u.gradient(mesh, kp);
    match ed.tag {
        BoundaryTag::Interior => {
            let km = ed.minus.expect("interior edge");
            let am = mesh.alpha_of(km);
            let gm = u.gradient(mesh, km);
            let jsig = ap * dot(gp, n) - am * dot(gm, n);
            let jtau = dot(gp, tau) - dot(gm, tau);
            let d = [0, 1].map(|i| {
                let z = ed.v[i];
                u.vertex_value(mesh, kp, local_vertex(mesh, kp, z))
                    - u.vertex_value(mesh, km, local_vertex(mesh, km, z))
            });
            EdgeJumps {
                ju_sq: h * (d[0] * d[0] + d[1] * d[1]) / 6.0,
                jsigma_sq: h * jsig * jsig,
                jtau_sq: h * jtau * jtau,
                endpoint_jumps: Some(d),
            }
        }
        BoundaryTag::Dirichlet => {
            let g = &spec.segment(ed.segment).value;
            let dg = &spec.segment(ed.segment).gradient;
            let d = [0, 1].map(|i| {
                let z = ed.v[i];
                u.vertex_value(mesh, kp, local_vertex(mesh, kp, z)) - g(mesh.vertices[z])
            });
            let rule = edge_rule(5).expect("degree within range");
            let p0 = mesh.vertices[ed.v[0]];
            let p1 = mesh.vertices[ed.v[1]];
            let jtau_sq = integrate_edge(&rule, p0, p1, &mut |p| {
                let jt = dot(gp, tau) - dot(dg(p), tau);
                jt * jt
            });
            EdgeJumps {
                ju_sq: h * (d[0] * d[0] + d[1] * d[1]) / 6.0,
                jsigma_sq: 0.0,
                jtau_sq,
                endpoint_jumps: Some(d),
            }
        }
        BoundaryTag::Neumann => {
            let g = &spec.segment(ed.segment).value;
            let rule = edge_rule(7).expect("degree within range");
            let p0 = mesh.vertices[ed.v[0]];
            let p1 = mesh.vertices[ed.v[1]];
            let jsigma_sq = integrate_edge(&rule, p0, p1, &mut |p| {
                let js = ap * dot(gp, n) - g(p);
                js * js
            });
            EdgeJumps {
                ju_sq: 0.0,
                jsigma_sq,
                jtau_sq: 0.0,
                endpoint_jumps: None,
            }
        }
    }
}

/// Quasi-monotonicity classification of the coefficient patch around one
/// vertex, with the path constants entering the patch interpolation bound.
#[derive(Debug, Clone)]
pub struct VertexPatch {
    pub vertex: usize,
    pub quasi_monotone: bool,
    /// Element whose trace provides the vertex value of the patch
    /// interpolant; None for Dirichlet vertices (anchored to boundary data).
    pub anchor: Option<usize>,
    /// (element, path constant) per star element. The constant is the worst
    /// coefficient drop along the best admissible path; 1 on quasi-monotone
    /// patches.
    pub path_constants: Vec<(usize, f64)>,
}

/// Classify the coefficient distribution around vertex z.
///
/// A patch is quasi-monotone when every element can reach a reference with
/// no coefficient drop along the way: for a Dirichlet vertex the reference
/// is a fan end holding a Dirichlet edge, otherwise a designated element of
/// maximal coefficient reachable by all.
pub fn classify_vertex(mesh: &Mesh, z: usize) -> Result<VertexPatch, MeshError> {
    let star = vertex_star(mesh, z)?;
    let n = star.triangles.len();
    let a: Vec<f64> = star.triangles.iter().map(|&k| mesh.alpha_of(k)).collect();
    let tol = 1.0 + 1e-12;

    if mesh.vertex_on_dirichlet(z) {
        let left = mesh.edges[star.edges[0]].tag == BoundaryTag::Dirichlet;
        let right = mesh.edges[*star.edges.last().expect("fan has edges")].tag
            == BoundaryTag::Dirichlet;
        assert!(left || right, "Dirichlet vertex has a Dirichlet fan end");
        let mut consts = Vec::with_capacity(n);
        let mut qm = true;
        for i in 0..n {
            let mut reach: f64 = 0.0;
            if left {
                reach = reach.max(a[..=i].iter().cloned().fold(f64::INFINITY, f64::min));
            }
            if right {
                reach = reach.max(a[i..].iter().cloned().fold(f64::INFINITY, f64::min));
            }
            let c = (a[i] / reach).max(1.0);
            if c > tol {
                qm = false;
            }
            consts.push((star.triangles[i], c));
        }
        return Ok(VertexPatch {
            vertex: z,
            quasi_monotone: qm,
            anchor: None,
            path_constants: consts,
        });
    }

    // best coefficient floor along an admissible arc from i to m
    let reach = |i: usize, m: usize| -> f64 {
        if star.interior {
            let fwd = {
                let mut v = f64::INFINITY;
                let mut j = i;
                loop {
                    v = v.min(a[j]);
                    if j == m {
                        break;
                    }
                    j = (j + 1) % n;
                }
                v
            };
            let bwd = {
                let mut v = f64::INFINITY;
                let mut j = i;
                loop {
                    v = v.min(a[j]);
                    if j == m {
                        break;
                    }
                    j = (j + n - 1) % n;
                }
                v
            };
            fwd.max(bwd)
        } else {
            let (lo, hi) = (i.min(m), i.max(m));
            a[lo..=hi].iter().cloned().fold(f64::INFINITY, f64::min)
        }
    };

    let amax = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for m in 0..n {
        if a[m] < amax {
            continue;
        }
        let cs: Vec<f64> = (0..n).map(|i| (a[i] / reach(i, m)).max(1.0)).collect();
        let worst = cs.iter().cloned().fold(1.0, f64::max);
        let id = star.triangles[m];
        let better = match &best {
            None => true,
            Some((w, bid, _)) => worst < *w || (worst == *w && id < *bid),
        };
        if better {
            best = Some((worst, id, cs));
        }
    }
    let (worst, anchor_id, cs) = best.expect("patch has elements");
    Ok(VertexPatch {
        vertex: z,
        quasi_monotone: worst <= tol,
        anchor: Some(anchor_id),
        path_constants: star.triangles.iter().cloned().zip(cs).collect(),
    })
}

pub fn classify_patches(mesh: &Mesh) -> Result<Vec<VertexPatch>, MeshError> {
    (0..mesh.n_vertices())
        .map(|z| classify_vertex(mesh, z))
        .collect()
}

pub fn non_monotone_vertices(patches: &[VertexPatch]) -> Vec<usize> {
    patches
        .iter()
        .filter(|p| !p.quasi_monotone)
        .map(|p| p.vertex)
        .collect()
}

/// Boundary datum at a Dirichlet vertex, read from its lowest incident
/// Dirichlet edge.
fn dirichlet_value_at(mesh: &Mesh, spec: &ProblemSpec, z: usize) -> f64 {
    let e = mesh
        .incident_edges(z)
        .iter()
        .cloned()
        .filter(|&e| mesh.edges[e].tag == BoundaryTag::Dirichlet)
        .min()
        .expect("Dirichlet vertex has a Dirichlet edge");
    (spec.segment(mesh.edges[e].segment).value)(mesh.vertices[z])
}

/// Conforming P1 interpolant of a CR function on the half-refined mesh.
#[derive(Debug, Clone)]
pub struct HalfInterpolant {
    pub half: HalfMesh,
    /// One value per half-mesh vertex: parent vertices first, then parent
    /// edge midpoints.
    pub values: Vec<f64>,
}

/// Interpolate onto the half-refined mesh: boundary data at Dirichlet
/// vertices, the CR dof at edge midpoints, and at the remaining vertices the
/// trace from the patch anchor element.
pub fn ihalf_interpolate(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &CrSolution,
    patches: &[VertexPatch],
) -> HalfInterpolant {
    let half = half_refine(mesh);
    let nv = mesh.n_vertices();
    let mut values = vec![0.0; half.mesh.n_vertices()];
    for e in 0..mesh.n_edges() {
        values[nv + e] = u.dofs[e];
    }
    for z in 0..nv {
        if mesh.vertex_on_dirichlet(z) {
            values[z] = dirichlet_value_at(mesh, spec, z);
        } else {
            let k = patches[z].anchor.expect("non-Dirichlet vertex has anchor");
            values[z] = u.vertex_value(mesh, k, local_vertex(mesh, k, z));
        }
    }
    HalfInterpolant { half, values }
}

/// Compute all indicator parts for a solution.
pub fn indicators(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &CrSolution,
) -> Result<IndicatorReport, MeshError> {
    let patches = classify_patches(mesh)?;
    let interp = ihalf_interpolate(mesh, spec, u, &patches);
    let non_monotone = non_monotone_vertices(&patches);
    let is_nm = {
        let mut v = vec![false; mesh.n_vertices()];
        for &z in &non_monotone {
            v[z] = true;
        }
        v
    };

    let jumps: Vec<EdgeJumps> = (0..mesh.n_edges())
        .into_par_iter()
        .map(|e| edge_jumps(mesh, spec, u, e))
        .collect();

    let rf_rule = match spec.source.degree() {
        Some(d) => tri_rule((2 * d).clamp(4, 10)).expect("degree within range"),
        None => tri_rule(8).expect("degree within range"),
    };
    let has_source = !spec.source.is_zero();

    let mut elements = Vec::with_capacity(mesh.n_elements());
    let mut eta_hat_sq = 0.0;
    for k in 0..mesh.n_elements() {
        let t = &mesh.triangles[k];
        let h_k = mesh.tri_diameter(k);
        let a_k = mesh.alpha_of(k);
        let mut ind = ElementIndicators::default();

        if has_source {
            let tri = mesh.tri_coords(k);
            let f2 = integrate_tri(&rf_rule, &tri, &mut |p| {
                let f = spec.source.eval(p, t.subdomain);
                f * f
            });
            ind.rf_sq = h_k * h_k / a_k * f2;
        }

        for &e in &t.edges {
            let ed = &mesh.edges[e];
            let h_e = mesh.edge_length(e);
            let j = &jumps[e];
            match ed.tag {
                BoundaryTag::Interior => {
                    let a_minus = mesh.alpha_minus(e);
                    ind.jsigma_sq += h_e / (2.0 * mesh.alpha_plus(e)) * j.jsigma_sq;
                    ind.ju_sq += a_minus / (2.0 * h_e) * j.ju_sq;
                    ind.jtau_sq += a_minus * h_e / 2.0 * j.jtau_sq;
                }
                BoundaryTag::Dirichlet => {
                    let a_e = mesh.alpha_plus(e);
                    ind.ju_sq += a_e / h_e * j.ju_sq;
                    ind.jtau_sq += a_e * h_e * j.jtau_sq;
                }
                BoundaryTag::Neumann => {
                    ind.jsigma_sq += h_e / mesh.alpha_plus(e) * j.jsigma_sq;
                }
            }
        }

        // modified solution jump: endpoint halves away from non-monotone
        // vertices, a patch interpolation term at them
        for &e in &t.edges {
            let ed = &mesh.edges[e];
            let Some(d) = jumps[e].endpoint_jumps else {
                continue;
            };
            for i in 0..2 {
                let z = ed.v[i];
                if is_nm[z] {
                    continue;
                }
                let term = match ed.tag {
                    BoundaryTag::Interior => mesh.alpha_minus(e) * d[i] * d[i] / 12.0,
                    BoundaryTag::Dirichlet => mesh.alpha_plus(e) * d[i] * d[i] / 6.0,
                    BoundaryTag::Neumann => unreachable!(),
                };
                ind.ju_mod_sq += term;
            }
        }
        for (j, &z) in t.v.iter().enumerate() {
            let delta = interp.values[z] - u.vertex_value(mesh, k, j);
            // half-lengths of the two element edges meeting at z
            let l1 = 0.5 * mesh.edge_length(t.edges[(j + 1) % 3]);
            let l2 = 0.5 * mesh.edge_length(t.edges[(j + 2) % 3]);
            let patch_term = a_k / h_k * delta * delta * (l1 + l2) / 3.0;
            if is_nm[z] {
                ind.ju_mod_sq += 0.5 * patch_term;
            }
            eta_hat_sq += patch_term;
        }

        elements.push(ind);
    }

    let sum = |f: &dyn Fn(&ElementIndicators) -> f64| elements.iter().map(f).sum::<f64>();
    Ok(IndicatorReport {
        eta: sum(&|i| i.eta_sq()).sqrt(),
        eta_mod: sum(&|i| i.eta_mod_sq()).sqrt(),
        eta_tan: sum(&|i| i.eta_tan_sq()).sqrt(),
        eta_ju: sum(&|i| i.ju_sq).sqrt(),
        eta_ju_mod: sum(&|i| i.ju_mod_sq).sqrt(),
        eta_hat_ju: eta_hat_sq.sqrt(),
        non_monotone,
        elements,
    })
}

/// Per-element evidence for the patch interpolation bound at vertex z:
/// (patch term, path-constant bound) pairs, one per star element. The first
/// entry never exceeds the second.
pub fn patch_bound_check(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &CrSolution,
    z: usize,
) -> Result<Vec<(f64, f64)>, MeshError> {
    let patch = classify_vertex(mesh, z)?;
    let iz = match patch.anchor {
        None => dirichlet_value_at(mesh, spec, z),
        Some(k) => u.vertex_value(mesh, k, local_vertex(mesh, k, z)),
    };
    // endpoint jumps at z over the incident interior and Dirichlet edges
    let mut jump_sum = 0.0;
    for &e in mesh.incident_edges(z) {
        let ed = &mesh.edges[e];
        if ed.tag == BoundaryTag::Neumann {
            continue;
        }
        let i = if ed.v[0] == z { 0 } else { 1 };
        let d = edge_jumps(mesh, spec, u, e)
            .endpoint_jumps
            .expect("jump edges carry endpoint values")[i];
        jump_sum += mesh.alpha_minus(e) * d * d / 3.0;
    }
    let mut out = Vec::with_capacity(patch.path_constants.len());
    for &(k, c) in &patch.path_constants {
        let j = local_vertex(mesh, k, z);
        let delta = iz - u.vertex_value(mesh, k, j);
        let t = &mesh.triangles[k];
        let l1 = 0.5 * mesh.edge_length(t.edges[(j + 1) % 3]);
        let l2 = 0.5 * mesh.edge_length(t.edges[(j + 2) % 3]);
        let lhs = mesh.alpha_of(k) / mesh.tri_diameter(k) * delta * delta * (l1 + l2) / 3.0;
        let rhs = 2.0 * c * jump_sum;
        out.push((lhs, rhs));
    }
    Ok(out)
}

/// Write the per-element indicator table as CSV, headed by the list of
/// non-quasi-monotone vertices.
pub fn write_indicator_csv(
    w: &mut dyn Write,
    mesh: &Mesh,
    report: &IndicatorReport,
) -> io::Result<()> {
    write!(w, "# N_M:")?;
    for z in &report.non_monotone {
        write!(w, " {z}")?;
    }
    writeln!(w)?;
    writeln!(
        w,
        "element,h,alpha,rf_sq,jsigma_sq,ju_sq,ju_mod_sq,jtau_sq,eta,eta_tilde"
    )?;
    for (k, ind) in report.elements.iter().enumerate() {
        writeln!(
            w,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            k,
            mesh.tri_diameter(k),
            mesh.alpha_of(k),
            ind.rf_sq,
            ind.jsigma_sq,
            ind.ju_sq,
            ind.ju_mod_sq,
            ind.jtau_sq,
            ind.eta(),
            ind.eta_mod()
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::{assemble, solve};
    use crate::mesh::{
        bisect, build_mesh, criss_cross_square, unit_square_two_tri, BoundarySpec, Point,
        RefEdgeRule,
    };
    use crate::problems::{kellogg_problem, Poly2, ProblemSpec, SegmentData, Source};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn simple_spec(mesh: Mesh, source: Source, segments: Vec<SegmentData>) -> ProblemSpec {
        ProblemSpec::new("test", mesh, source, segments, None)
    }

    #[test]
    fn hand_computed_indicators_on_square() {
        // f = 1, g = 0, alpha = 1: the solution has the single free dof 1/24;
        // per element rf^2 = 1, jsigma^2 = 1/18, ju^2 = 1/864, jtau^2 = 1/72,
        // and the interior edge contributes no solution jump
        let m = unit_square_two_tri(1.0);
        let spec = simple_spec(
            m.clone(),
            Source::PerSubdomain(vec![Poly2::constant(1.0)]),
            vec![SegmentData::zero()],
        );
        let u = solve(&assemble(&m, &spec), 1e-13).unwrap();
        let report = indicators(&m, &spec, &u).unwrap();
        assert!(report.non_monotone.is_empty());
        for ind in &report.elements {
            assert_relative_eq!(ind.rf_sq, 1.0, max_relative = 1e-12);
            assert_relative_eq!(ind.jsigma_sq, 1.0 / 18.0, max_relative = 1e-12);
            assert_relative_eq!(ind.ju_sq, 1.0 / 864.0, max_relative = 1e-12);
            assert_relative_eq!(ind.jtau_sq, 1.0 / 72.0, max_relative = 1e-12);
            // uniform coefficients: the modified and standard parts agree
            assert_relative_eq!(ind.ju_mod_sq, ind.ju_sq, max_relative = 1e-12);
        }
        let diag = (0..m.n_edges())
            .find(|&e| m.edges[e].tag == BoundaryTag::Interior)
            .unwrap();
        let j = edge_jumps(&m, &spec, &u, diag);
        assert!(j.ju_sq < 1e-30);
        assert!(j.jtau_sq < 1e-30);
        let eta_sq: f64 = 2.0 * (1.0 + 1.0 / 18.0 + 1.0 / 864.0);
        assert_relative_eq!(report.eta, eta_sq.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn solution_and_tangential_jumps_are_proportional_on_interior_edges() {
        let mut m = criss_cross_square(&[1.0, 7.0, 3.0, 0.5]);
        for _ in 0..2 {
            let all: Vec<usize> = (0..m.n_elements()).collect();
            m = bisect(&m, &all).unwrap().0;
        }
        let spec = simple_spec(m.clone(), Source::Zero, vec![SegmentData::zero()]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let u = CrSolution {
                dofs: (0..m.n_edges()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            for e in 0..m.n_edges() {
                if m.edges[e].tag != BoundaryTag::Interior {
                    continue;
                }
                let j = edge_jumps(&m, &spec, &u, e);
                let h = m.edge_length(e);
                assert_relative_eq!(
                    j.ju_sq,
                    h * h / 12.0 * j.jtau_sq,
                    max_relative = 1e-11,
                    epsilon = 1e-14
                );
            }
        }
    }

    #[test]
    fn flux_jumps_vanish_for_piecewise_harmonic_solutions() {
        // zero source and piecewise-constant coefficients: the discrete flux
        // is continuous, so the entire estimate is the solution-jump part
        let spec = kellogg_problem();
        let m = spec.initial_mesh();
        let u = solve(&assemble(&m, &spec), 1e-13).unwrap();
        let report = indicators(&m, &spec, &u).unwrap();
        let scale: f64 = report.eta;
        for ind in &report.elements {
            assert!(ind.rf_sq == 0.0);
            assert!(
                ind.jsigma_sq.sqrt() < 1e-10 * scale,
                "flux jump {}",
                ind.jsigma_sq
            );
        }
        let ju_total: f64 = report.elements.iter().map(|i| i.ju_sq).sum();
        assert_relative_eq!(report.eta, ju_total.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn indicators_scale_linearly_with_coefficients_and_source() {
        let alphas = [1.0, 25.0, 5.0, 125.0];
        let scaled: Vec<f64> = alphas.iter().map(|a| 10.0 * a).collect();
        let m1 = criss_cross_square(&alphas);
        let m2 = criss_cross_square(&[scaled[0], scaled[1], scaled[2], scaled[3]]);
        let g = Poly2 {
            terms: vec![(0.3, 1, 0), (0.1, 0, 2)],
        };
        let s1 = simple_spec(
            m1.clone(),
            Source::PerSubdomain(vec![Poly2::constant(1.0); 4]),
            vec![SegmentData::from_poly(&g)],
        );
        let s2 = simple_spec(
            m2.clone(),
            Source::PerSubdomain(vec![Poly2::constant(10.0); 4]),
            vec![SegmentData::from_poly(&g)],
        );
        let u1 = solve(&assemble(&m1, &s1), 1e-13).unwrap();
        let u2 = solve(&assemble(&m2, &s2), 1e-13).unwrap();
        for e in 0..m1.n_edges() {
            assert_relative_eq!(u1.dofs[e], u2.dofs[e], max_relative = 1e-9, epsilon = 1e-12);
        }
        let r1 = indicators(&m1, &s1, &u1).unwrap();
        let r2 = indicators(&m2, &s2, &u2).unwrap();
        for (a, b) in r1.elements.iter().zip(&r2.elements) {
            assert_relative_eq!(10.0 * a.eta_sq(), b.eta_sq(), max_relative = 1e-8);
            assert_relative_eq!(10.0 * a.eta_mod_sq(), b.eta_mod_sq(), max_relative = 1e-8);
        }
    }

    #[test]
    fn uniform_and_straight_interface_patches_are_quasi_monotone() {
        for alphas in [[1.0, 1.0, 1.0, 1.0], [1.0, 5.0, 5.0, 1.0], [9.0, 9.0, 1.0, 1.0]] {
            let m = criss_cross_square(&alphas);
            let patches = classify_patches(&m).unwrap();
            assert!(
                non_monotone_vertices(&patches).is_empty(),
                "alphas {alphas:?}"
            );
            for p in &patches {
                for &(_, c) in &p.path_constants {
                    assert_relative_eq!(c, 1.0);
                }
            }
        }
    }

    #[test]
    fn checkerboard_center_is_not_quasi_monotone() {
        let m = criss_cross_square(&[1.0, 5.0, 1.0, 5.0]);
        let patches = classify_patches(&m).unwrap();
        assert_eq!(non_monotone_vertices(&patches), vec![4]);
        let center = &patches[4];
        assert!(!center.quasi_monotone);
        // designated anchor is the lowest max-coefficient element
        assert_eq!(center.anchor, Some(1));
        let mut cs: Vec<f64> = center.path_constants.iter().map(|&(_, c)| c).collect();
        cs.sort_by(f64::total_cmp);
        // low elements reach the anchor directly, the opposite high element
        // must cross a low one
        assert_relative_eq!(cs[0], 1.0);
        assert_relative_eq!(cs[1], 1.0);
        assert_relative_eq!(cs[2], 1.0);
        assert_relative_eq!(cs[3], 5.0);
    }

    #[test]
    fn checkerboard_problem_origin_is_the_only_non_monotone_vertex() {
        let spec = kellogg_problem();
        let m = spec.initial_mesh();
        let patches = classify_patches(&m).unwrap();
        assert_eq!(non_monotone_vertices(&patches), vec![4]);
    }

    fn fan_mesh(alphas: &[f64], left_tag: BoundaryTag, right_tag: BoundaryTag) -> Mesh {
        // fan of triangles around a boundary vertex at the origin
        let n = alphas.len();
        let span = std::f64::consts::PI * n as f64 / (n as f64 + 1.0);
        let mut vertices = vec![[0.0, 0.0]];
        for i in 0..=n {
            let th = span * i as f64 / n as f64;
            vertices.push([th.cos(), th.sin()]);
        }
        let tris: Vec<([usize; 3], usize)> =
            (0..n).map(|i| ([0, i + 1, i + 2], i)).collect();
        let mut boundary = vec![
            BoundarySpec {
                v: [0, 1],
                tag: right_tag,
                segment: 0,
            },
            BoundarySpec {
                v: [0, n + 1],
                tag: left_tag,
                segment: 0,
            },
        ];
        for i in 0..n {
            boundary.push(BoundarySpec {
                v: [i + 1, i + 2],
                tag: BoundaryTag::Dirichlet,
                segment: 0,
            });
        }
        build_mesh(&vertices, &tris, &boundary, alphas, RefEdgeRule::AsGiven).unwrap()
    }

    #[test]
    fn dirichlet_vertices_anchor_to_the_boundary() {
        use BoundaryTag::{Dirichlet, Neumann};
        // a peak between the origin and the only Dirichlet end blocks the path
        let m = fan_mesh(&[1.0, 5.0, 1.0], Dirichlet, Neumann);
        let p = classify_vertex(&m, 0).unwrap();
        assert!(!p.quasi_monotone);
        assert_eq!(p.anchor, None);
        // the same coefficients are quasi-monotone when the vertex sees no
        // Dirichlet edge: the peak itself serves as the reference
        let m = fan_mesh(&[1.0, 5.0, 1.0], Neumann, Neumann);
        let p = classify_vertex(&m, 0).unwrap();
        assert!(p.quasi_monotone);
        assert_eq!(p.anchor, Some(1));
        // coefficients growing toward the Dirichlet end pass
        let m = fan_mesh(&[1.0, 5.0, 25.0], Dirichlet, Neumann);
        let p = classify_vertex(&m, 0).unwrap();
        assert!(p.quasi_monotone);
        // but not toward the opposite end
        let m = fan_mesh(&[1.0, 5.0, 25.0], Neumann, Dirichlet);
        let p = classify_vertex(&m, 0).unwrap();
        assert!(!p.quasi_monotone);
        let c25 = p
            .path_constants
            .iter()
            .find(|&&(k, _)| k == 2)
            .unwrap()
            .1;
        assert_relative_eq!(c25, 25.0);
    }

    #[test]
    fn classifier_matches_exhaustive_arc_search() {
        // oracle: enumerate every contiguous arc of the patch directly
        fn oracle(a: &[f64], interior: bool, ends: (bool, bool)) -> bool {
            let n = a.len();
            let arcs: Vec<Vec<usize>> = if interior {
                let mut arcs = Vec::new();
                for s in 0..n {
                    for len in 1..=n {
                        arcs.push((0..len).map(|o| (s + o) % n).collect());
                    }
                }
                arcs
            } else {
                let mut arcs = Vec::new();
                for s in 0..n {
                    for e in s..n {
                        arcs.push((s..=e).collect());
                    }
                }
                arcs
            };
            let dirichlet = ends.0 || ends.1;
            let amax = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            'elems: for k in 0..n {
                for arc in &arcs {
                    if !arc.contains(&k) {
                        continue;
                    }
                    if arc.iter().any(|&i| a[i] < a[k]) {
                        continue;
                    }
                    let ok = if dirichlet {
                        (ends.0 && arc.contains(&0)) || (ends.1 && arc.contains(&(n - 1)))
                    } else {
                        (0..n).filter(|&i| a[i] == amax).all(|i| arc.contains(&i))
                    };
                    if ok {
                        continue 'elems;
                    }
                }
                return false;
            }
            true
        }

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let pool = [1.0, 5.0, 25.0, 161.0];
        // boundary fans with random end tags
        for _ in 0..40 {
            let n = rng.gen_range(1..=6);
            let a: Vec<f64> = (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
            let tags = [BoundaryTag::Dirichlet, BoundaryTag::Neumann];
            let right = tags[rng.gen_range(0..2)];
            let left = tags[rng.gen_range(0..2)];
            let m = fan_mesh(&a, left, right);
            let star = vertex_star(&m, 0).unwrap();
            let sa: Vec<f64> = star.triangles.iter().map(|&k| m.alpha_of(k)).collect();
            let ends = (
                m.edges[star.edges[0]].tag == BoundaryTag::Dirichlet,
                m.edges[*star.edges.last().unwrap()].tag == BoundaryTag::Dirichlet,
            );
            let expect = if ends.0 || ends.1 {
                oracle(&sa, false, ends)
            } else {
                oracle(&sa, false, (false, false))
            };
            let got = classify_vertex(&m, 0).unwrap().quasi_monotone;
            assert_eq!(got, expect, "alphas {sa:?} ends {ends:?}");
        }
        // interior rings
        for _ in 0..40 {
            let n = rng.gen_range(3..=8);
            let a: Vec<f64> = (0..n).map(|_| pool[rng.gen_range(0..pool.len())]).collect();
            let m = ring_mesh(&a);
            let star = vertex_star(&m, 0).unwrap();
            assert!(star.interior);
            let sa: Vec<f64> = star.triangles.iter().map(|&k| m.alpha_of(k)).collect();
            let got = classify_vertex(&m, 0).unwrap().quasi_monotone;
            assert_eq!(got, oracle(&sa, true, (false, false)), "alphas {sa:?}");
        }
    }

    fn ring_mesh(alphas: &[f64]) -> Mesh {
        let n = alphas.len();
        let mut vertices = vec![[0.0, 0.0]];
        for i in 0..n {
            let th = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            vertices.push([th.cos(), th.sin()]);
        }
        let tris: Vec<([usize; 3], usize)> = (0..n)
            .map(|i| ([0, i + 1, if i + 1 == n { 1 } else { i + 2 }], i))
            .collect();
        let boundary: Vec<BoundarySpec> = (0..n)
            .map(|i| BoundarySpec {
                v: [i + 1, if i + 1 == n { 1 } else { i + 2 }],
                tag: BoundaryTag::Dirichlet,
                segment: 0,
            })
            .collect();
        build_mesh(&vertices, &tris, &boundary, alphas, RefEdgeRule::AsGiven).unwrap()
    }

    #[test]
    fn half_interpolation_reproduces_linears_and_boundary_data() {
        let m = criss_cross_square(&[2.0, 2.0, 2.0, 2.0]);
        let lin = |p: Point| 0.5 * p[0] - 1.25 * p[1] + 0.75;
        let g = Poly2 {
            terms: vec![(0.5, 1, 0), (-1.25, 0, 1), (0.75, 0, 0)],
        };
        let spec = simple_spec(m.clone(), Source::Zero, vec![SegmentData::from_poly(&g)]);
        let mut dofs = vec![0.0; m.n_edges()];
        for e in 0..m.n_edges() {
            dofs[e] = lin(m.edge_midpoint(e));
        }
        let u = CrSolution { dofs };
        let patches = classify_patches(&m).unwrap();
        let interp = ihalf_interpolate(&m, &spec, &u, &patches);
        for (i, v) in interp.values.iter().enumerate() {
            let p = interp.half.mesh.vertices[i];
            assert_relative_eq!(*v, lin(p), epsilon = 1e-13);
        }

        // nonlinear Dirichlet data takes precedence over element traces
        let g2 = Poly2 {
            terms: vec![(1.0, 2, 0)],
        };
        let spec2 = simple_spec(m.clone(), Source::Zero, vec![SegmentData::from_poly(&g2)]);
        let interp2 = ihalf_interpolate(&m, &spec2, &u, &patches);
        for z in 0..m.n_vertices() {
            if m.vertex_on_dirichlet(z) {
                let p = m.vertices[z];
                assert_relative_eq!(interp2.values[z], p[0] * p[0], epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn modified_indicator_reduces_to_standard_away_from_bad_vertices() {
        let spec = kellogg_problem();
        let mut m = spec.initial_mesh();
        let all: Vec<usize> = (0..m.n_elements()).collect();
        m = bisect(&m, &all).unwrap().0;
        let u = solve(&assemble(&m, &spec), 1e-13).unwrap();
        let report = indicators(&m, &spec, &u).unwrap();
        assert_eq!(report.non_monotone, vec![4]);
        let mut touched = 0;
        for (k, ind) in report.elements.iter().enumerate() {
            if m.triangles[k].v.contains(&4) {
                touched += 1;
            } else {
                assert_relative_eq!(ind.ju_mod_sq, ind.ju_sq, max_relative = 1e-11);
            }
        }
        assert!(touched >= 4);
        // global totals stay within the expected robust range
        assert!(report.eta_mod > 0.0 && report.eta > 0.0);
        assert!(report.eta_hat_ju > 0.0);
    }

    #[test]
    fn patch_bound_holds_on_checkerboard_patches() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..200 {
            let lo = 10f64.powf(rng.gen_range(-2.0..0.0));
            let hi = 10f64.powf(rng.gen_range(0.5..3.0));
            let m = criss_cross_square(&[lo, hi, lo, hi]);
            let spec = simple_spec(m.clone(), Source::Zero, vec![SegmentData::zero()]);
            let u = CrSolution {
                dofs: (0..m.n_edges()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            for (lhs, rhs) in patch_bound_check(&m, &spec, &u, 4).unwrap() {
                assert!(
                    lhs <= rhs * (1.0 + 1e-12) + 1e-300,
                    "lhs {lhs} rhs {rhs} lo {lo} hi {hi}"
                );
            }
        }
    }

    #[test]
    fn indicator_csv_layout() {
        let m = unit_square_two_tri(1.0);
        let spec = simple_spec(
            m.clone(),
            Source::PerSubdomain(vec![Poly2::constant(1.0)]),
            vec![SegmentData::zero()],
        );
        let u = solve(&assemble(&m, &spec), 1e-13).unwrap();
        let report = indicators(&m, &spec, &u).unwrap();
        let mut buf = Vec::new();
        write_indicator_csv(&mut buf, &m, &report).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("# N_M:"));
        assert_eq!(
            lines.next(),
            Some("element,h,alpha,rf_sq,jsigma_sq,ju_sq,ju_mod_sq,jtau_sq,eta,eta_tilde")
        );
        assert_eq!(lines.count(), m.n_elements());
    }
}
