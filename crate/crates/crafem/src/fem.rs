//! Nonconforming P1 elements with one unknown per edge midpoint: assembly,
//! Dirichlet elimination, direct and iterative solves, broken energy norms,
//! true error against a known solution, and an error-representation identity
//! splitting the residual into volume, flux-jump, and solution-jump parts.
//!
//! Basis convention on an element: psi_i = 1 - 2 lambda_i belongs to the edge
//! opposite vertex i, equals 1 along that edge, and has gradient
//! -2 grad lambda_i.

use crate::mesh::{dot, sub, BoundaryTag, Mesh, Point};
use crate::problems::ProblemSpec;
use crate::quad::{edge_rule, graded_tri_integrate, integrate_edge, integrate_tri, tri_rule};

use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FemError {
    #[error("solver did not converge within {iterations} iterations (relative residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("factorization failed (matrix not positive definite)")]
    Factorization,
    #[error("problem has no exact solution")]
    MissingExactSolution,
}

/// Default grading depth for integrals of singular exact solutions.
pub const DEFAULT_GRADING: u32 = 14;

/// Finite element function: one value per edge, taken at the edge midpoint.
/// Dirichlet edges hold the boundary datum at the midpoint.
#[derive(Debug, Clone)]
pub struct CrSolution {
    pub dofs: Vec<f64>,
}

impl CrSolution {
    /// Constant gradient on element k.
    pub fn gradient(&self, mesh: &Mesh, k: usize) -> Point {
        let (gl, _) = mesh.grad_lambdas(k);
        let t = &mesh.triangles[k];
        let mut g = [0.0, 0.0];
        for i in 0..3 {
            let d = self.dofs[t.edges[i]];
            g[0] -= 2.0 * d * gl[i][0];
            g[1] -= 2.0 * d * gl[i][1];
        }
        g
    }

    /// Value at vertex `local_v` of element k (CR functions are two-valued at
    /// vertices; this is the trace from within k).
    pub fn vertex_value(&self, mesh: &Mesh, k: usize, local_v: usize) -> f64 {
        let t = &mesh.triangles[k];
        let s: f64 = t.edges.iter().map(|&e| self.dofs[e]).sum();
        s - 2.0 * self.dofs[t.edges[local_v]]
    }

    /// Value at an arbitrary point of element k.
    pub fn eval(&self, mesh: &Mesh, k: usize, p: Point) -> f64 {
        let (gl, _) = mesh.grad_lambdas(k);
        let c = mesh.tri_coords(k);
        let t = &mesh.triangles[k];
        let mut v = 0.0;
        for i in 0..3 {
            // lambda_i(p) = 1 at vertex i, affine
            let lam = 1.0 + dot(gl[i], sub(p, c[i]));
            v += self.dofs[t.edges[i]] * (1.0 - 2.0 * lam);
        }
        v
    }
}

/// Symmetric sparse matrix over the free (non-Dirichlet) edges plus the data
/// needed to reconstruct the full dof vector.
pub struct SparseSystem {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
    pub rhs: Vec<f64>,
    pub free_of_edge: Vec<Option<usize>>,
    pub edge_of_free: Vec<usize>,
    /// Prescribed midpoint value per edge (zero on non-Dirichlet edges).
    pub dirichlet: Vec<f64>,
}

impl SparseSystem {
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut acc = 0.0;
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[idx] * x[self.cols[idx]];
            }
            y[i] = acc;
        }
    }

    /// Full dof vector from a free-dof solution.
    pub fn expand(&self, x: &[f64]) -> CrSolution {
        let mut dofs = self.dirichlet.clone();
        for (f, &e) in self.edge_of_free.iter().enumerate() {
            dofs[e] = x[f];
        }
        CrSolution { dofs }
    }
}

/// Stiffness contribution of one element, rows/cols following the local edge
/// order (edges[i] opposite vertex i): 4 alpha |K| grad lambda_i . grad lambda_j.
pub fn element_stiffness(mesh: &Mesh, k: usize) -> [[f64; 3]; 3] {
    let (gl, area) = mesh.grad_lambdas(k);
    let a = mesh.alpha_of(k);
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            s[i][j] = 4.0 * a * area * dot(gl[i], gl[j]);
        }
    }
    s
}

/// Assemble the linear system for a mesh and problem: stiffness on free edges,
/// load, Neumann data, and Dirichlet lifting moved to the right-hand side.
pub fn assemble(mesh: &Mesh, spec: &ProblemSpec) -> SparseSystem {
    let ne = mesh.n_edges();
    let mut free_of_edge = vec![None; ne];
    let mut edge_of_free = Vec::new();
    let mut dirichlet = vec![0.0; ne];
    for (e, ed) in mesh.edges.iter().enumerate() {
        if ed.tag == BoundaryTag::Dirichlet {
            dirichlet[e] = (spec.segment(ed.segment).value)(mesh.edge_midpoint(e));
        } else {
            free_of_edge[e] = Some(edge_of_free.len());
            edge_of_free.push(e);
        }
    }
    let n = edge_of_free.len();

    let load_degree = spec
        .source
        .degree()
        .map(|d| (d + 1).clamp(4, 10))
        .unwrap_or(6);
    let load_rule = tri_rule(load_degree).expect("degree within range");
    let has_source = !spec.source.is_zero();

    // per-element contributions computed in parallel, folded in element order
    // so the result is bit-stable
    let local: Vec<([usize; 3], [[f64; 3]; 3], [f64; 3])> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let s = element_stiffness(mesh, k);
            let t = &mesh.triangles[k];
            let mut load = [0.0; 3];
            if has_source {
                let tri = mesh.tri_coords(k);
                let (gl, _) = mesh.grad_lambdas(k);
                for i in 0..3 {
                    load[i] = integrate_tri(&load_rule, &tri, &mut |p| {
                        let lam = 1.0 + dot(gl[i], sub(p, tri[i]));
                        spec.source.eval(p, t.subdomain) * (1.0 - 2.0 * lam)
                    });
                }
            }
            (t.edges, s, load)
        })
        .collect();

    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut rhs = vec![0.0; n];
    for (edges, s, load) in &local {
        for i in 0..3 {
            let Some(fi) = free_of_edge[edges[i]] else {
                continue;
            };
            rhs[fi] += load[i];
            for j in 0..3 {
                match free_of_edge[edges[j]] {
                    Some(fj) => rows[fi].push((fj, s[i][j])),
                    None => rhs[fi] -= s[i][j] * dirichlet[edges[j]],
                }
            }
        }
    }

    // Neumann data: along its own edge psi_e = 1 while every other CR basis
    // function has zero mean, so only the owning dof sees the flux integral
    let neumann_rule = edge_rule(7).expect("degree within range");
    for (e, ed) in mesh.edges.iter().enumerate() {
        if ed.tag != BoundaryTag::Neumann {
            continue;
        }
        let fi = free_of_edge[e].expect("Neumann edges are free");
        let g = &spec.segment(ed.segment).value;
        let p0 = mesh.vertices[ed.v[0]];
        let p1 = mesh.vertices[ed.v[1]];
        rhs[fi] += integrate_edge(&neumann_rule, p0, p1, &mut |p| g(p));
    }

    let mut row_ptr = vec![0usize; n + 1];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (i, row) in rows.iter_mut().enumerate() {
        row.sort_by_key(|&(c, _)| c);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(row.len());
        for &(c, v) in row.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => merged.push((c, v)),
            }
        }
        for (c, v) in merged {
            cols.push(c);
            vals.push(v);
        }
        row_ptr[i + 1] = cols.len();
    }

    SparseSystem {
        n,
        row_ptr,
        cols,
        vals,
        rhs,
        free_of_edge,
        edge_of_free,
        dirichlet,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStrategy {
    /// Direct factorization up to 200k unknowns, conjugate gradient beyond.
    Auto,
    Direct,
    ConjugateGradient,
}

const DIRECT_LIMIT: usize = 200_000;

pub fn solve(system: &SparseSystem, tol: f64) -> Result<CrSolution, FemError> {
    solve_with(system, tol, SolveStrategy::Auto)
}

pub fn solve_with(
    system: &SparseSystem,
    tol: f64,
    strategy: SolveStrategy,
) -> Result<CrSolution, FemError> {
    let bnorm = system.rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
    if system.n == 0 || bnorm == 0.0 {
        return Ok(system.expand(&vec![0.0; system.n]));
    }
    let direct = match strategy {
        SolveStrategy::Auto => system.n <= DIRECT_LIMIT,
        SolveStrategy::Direct => true,
        SolveStrategy::ConjugateGradient => false,
    };
    let x = if direct {
        solve_direct(system)?
    } else {
        solve_cg(system, tol)?
    };
    // verify the advertised residual
    let mut r = vec![0.0; system.n];
    system.matvec(&x, &mut r);
    let res = system
        .rhs
        .iter()
        .zip(&r)
        .map(|(b, ax)| (b - ax) * (b - ax))
        .sum::<f64>()
        .sqrt()
        / bnorm;
    if !res.is_finite() || res > tol.max(1e-12) {
        return Err(FemError::NoConvergence {
            iterations: 0,
            residual: res,
        });
    }
    Ok(system.expand(&x))
}

fn solve_direct(system: &SparseSystem) -> Result<Vec<f64>, FemError> {
    use faer::prelude::*;
    let mut triplets = Vec::with_capacity(system.vals.len());
    for i in 0..system.n {
        for idx in system.row_ptr[i]..system.row_ptr[i + 1] {
            triplets.push((i, system.cols[idx], system.vals[idx]));
        }
    }
    let m = faer::sparse::SparseColMat::<usize, f64>::try_new_from_triplets(
        system.n, system.n, &triplets,
    )
    .map_err(|_| FemError::Factorization)?;
    let llt = m
        .as_ref()
        .sp_cholesky(faer::Side::Lower)
        .map_err(|_| FemError::Factorization)?;
    let b = faer::Mat::<f64>::from_fn(system.n, 1, |i, _| system.rhs[i]);
    let x = llt.solve(&b);
    Ok((0..system.n).map(|i| x[(i, 0)]).collect())
}

/// Conjugate gradient with a symmetric Gauss-Seidel preconditioner.
fn solve_cg(system: &SparseSystem, tol: f64) -> Result<Vec<f64>, FemError> {
    let n = system.n;
    let mut diag = vec![0.0; n];
    for i in 0..n {
        for idx in system.row_ptr[i]..system.row_ptr[i + 1] {
            if system.cols[idx] == i {
                diag[i] = system.vals[idx];
            }
        }
    }
    if diag.iter().any(|&d| d <= 0.0) {
        return Err(FemError::Factorization);
    }
    // z = (D+U)^-1 D (D+L)^-1 r
    let precond = |r: &[f64], z: &mut [f64], y: &mut [f64]| {
        for i in 0..n {
            let mut acc = r[i];
            for idx in system.row_ptr[i]..system.row_ptr[i + 1] {
                let j = system.cols[idx];
                if j < i {
                    acc -= system.vals[idx] * y[j];
                }
            }
            y[i] = acc / diag[i];
        }
        for i in (0..n).rev() {
            let mut acc = diag[i] * y[i];
            for idx in system.row_ptr[i]..system.row_ptr[i + 1] {
                let j = system.cols[idx];
                if j > i {
                    acc -= system.vals[idx] * z[j];
                }
            }
            z[i] = acc / diag[i];
        }
    };

    let b = &system.rhs;
    let bnorm = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let cap = 100 + (20.0 * (n as f64).sqrt()) as usize;
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut z = vec![0.0; n];
    let mut y = vec![0.0; n];
    precond(&r, &mut z, &mut y);
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..cap {
        system.matvec(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(FemError::Factorization);
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if rnorm <= tol * bnorm {
            // recompute the true residual to guard against drift
            system.matvec(&x, &mut ap);
            let true_r: f64 = b
                .iter()
                .zip(&ap)
                .map(|(bi, axi)| (bi - axi) * (bi - axi))
                .sum::<f64>()
                .sqrt();
            if true_r <= tol * bnorm * 1.1 {
                return Ok(x);
            }
            for i in 0..n {
                r[i] = b[i] - ap[i];
            }
        }
        precond(&r, &mut z, &mut y);
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    let rnorm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    Err(FemError::NoConvergence {
        iterations: cap,
        residual: rnorm / bnorm,
    })
}

/// Broken energy norm of a CR function: exact since gradients are constant.
pub fn broken_energy_norm(mesh: &Mesh, u: &CrSolution) -> f64 {
    let mut total = 0.0;
    for k in 0..mesh.n_elements() {
        let g = u.gradient(mesh, k);
        total += mesh.alpha_of(k) * mesh.tri_area(k) * dot(g, g);
    }
    total.sqrt()
}

/// Broken energy norm of a general function given by its gradient, graded at
/// the problem's singular points.
pub fn broken_energy_norm_fn(
    mesh: &Mesh,
    spec: &ProblemSpec,
    grad: &(dyn Fn(Point) -> Point + Sync),
    grading: u32,
) -> f64 {
    let base = tri_rule(10).expect("degree within range");
    let per: Vec<f64> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let tri = mesh.tri_coords(k);
            let a = mesh.alpha_of(k);
            let mut f = |p: Point| {
                let g = grad(p);
                a * dot(g, g)
            };
            match spec.singular_vertex(mesh, k) {
                Some(i) => graded_tri_integrate(&tri, i, grading, &base, &mut f),
                None => integrate_tri(&base, &tri, &mut f),
            }
        })
        .collect();
    per.iter().sum::<f64>().sqrt()
}

/// |||u - u_h||| against the problem's exact solution.
pub fn true_error(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &CrSolution,
    grading: u32,
) -> Result<f64, FemError> {
    let exact = spec.exact.as_ref().ok_or(FemError::MissingExactSolution)?;
    let base = tri_rule(10).expect("degree within range");
    let grad = &exact.gradient;
    let per: Vec<f64> = (0..mesh.n_elements())
        .into_par_iter()
        .map(|k| {
            let tri = mesh.tri_coords(k);
            let a = mesh.alpha_of(k);
            let gh = u.gradient(mesh, k);
            let mut f = |p: Point| {
                let g = grad(p);
                let d = [g[0] - gh[0], g[1] - gh[1]];
                a * dot(d, d)
            };
            match spec.singular_vertex(mesh, k) {
                Some(i) => graded_tri_integrate(&tri, i, grading, &base, &mut f),
                None => integrate_tri(&base, &tri, &mut f),
            }
        })
        .collect();
    Ok(per.iter().sum::<f64>().sqrt())
}

/// Interpolate an element-aware function into the CR space by midpoint
/// evaluation; optionally zero the Dirichlet dofs so the result lies in the
/// discrete space with homogeneous Dirichlet values.
pub fn cr_interpolate(
    mesh: &Mesh,
    f: &mut dyn FnMut(Point, usize) -> f64,
    dirichlet_zero: bool,
) -> CrSolution {
    let mut dofs = vec![0.0; mesh.n_edges()];
    for (e, ed) in mesh.edges.iter().enumerate() {
        if dirichlet_zero && ed.tag == BoundaryTag::Dirichlet {
            continue;
        }
        dofs[e] = f(mesh.edge_midpoint(e), ed.plus);
    }
    CrSolution { dofs }
}

/// Interpolate an element-aware function into the CR space by element means:
/// the dof at edge e is the average of f over the plus element. Zeroing the
/// Dirichlet dofs puts the result into the discrete space with homogeneous
/// Dirichlet values.
pub fn clement_interpolate(
    mesh: &Mesh,
    f: &mut dyn FnMut(Point, usize) -> f64,
    dirichlet_zero: bool,
) -> CrSolution {
    let rule = tri_rule(8).expect("degree within range");
    let mut dofs = vec![0.0; mesh.n_edges()];
    for (e, ed) in mesh.edges.iter().enumerate() {
        if dirichlet_zero && ed.tag == BoundaryTag::Dirichlet {
            continue;
        }
        let k = ed.plus;
        let tri = mesh.tri_coords(k);
        dofs[e] = integrate_tri(&rule, &tri, &mut |p| f(p, k)) / mesh.tri_area(k);
    }
    CrSolution { dofs }
}

/// Comparison function subtracted from the error inside the representation
/// identity. Admissible choices vanish at Dirichlet midpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorComparison {
    Zero,
    /// Element-mean interpolant of the error. Admissible only with the
    /// Dirichlet dofs zeroed; the raw variant is kept to demonstrate that
    /// the restriction matters.
    Clement { dirichlet_zero: bool },
}

/// The two sides of the error-representation identity
/// |||e|||^2 = volume - flux - jump for e = u - u_h.
#[derive(Debug, Clone, Copy)]
pub struct ResidualParts {
    pub energy_sq: f64,
    pub volume: f64,
    pub flux: f64,
    pub jump: f64,
}

impl ResidualParts {
    pub fn rhs(&self) -> f64 {
        self.volume - self.flux - self.jump
    }
}

/// Evaluate both sides of the error-representation identity. Exact for
/// problems whose data stay within the quadrature degrees (volume 8, edge 7);
/// quadrature-limited near singular points.
pub fn error_representation(
    mesh: &Mesh,
    spec: &ProblemSpec,
    u: &CrSolution,
    comparison: ErrorComparison,
    grading: u32,
) -> Result<ResidualParts, FemError> {
    let exact = spec.exact.as_ref().ok_or(FemError::MissingExactSolution)?;
    let uex = exact.value.clone();
    let gex = exact.gradient.clone();

    let e_h = match comparison {
        ErrorComparison::Zero => CrSolution {
            dofs: vec![0.0; mesh.n_edges()],
        },
        ErrorComparison::Clement { dirichlet_zero } => clement_interpolate(
            mesh,
            &mut |p, k| uex(p) - u.eval(mesh, k, p),
            dirichlet_zero,
        ),
    };

    let energy_sq = {
        let t = true_error(mesh, spec, u, grading)?;
        t * t
    };

    // volume: sum_K (f, (e - e_h))_K
    let vol_rule = tri_rule(8).expect("degree within range");
    let mut volume = 0.0;
    if !spec.source.is_zero() {
        for k in 0..mesh.n_elements() {
            let tri = mesh.tri_coords(k);
            let sd = mesh.triangles[k].subdomain;
            volume += integrate_tri(&vol_rule, &tri, &mut |p| {
                let e = uex(p) - u.eval(mesh, k, p);
                spec.source.eval(p, sd) * (e - e_h.eval(mesh, k, p))
            });
        }
    }

    let erule = edge_rule(7).expect("degree within range");
    let mut flux = 0.0;
    let mut jump = 0.0;
    for (e, ed) in mesh.edges.iter().enumerate() {
        let p0 = mesh.vertices[ed.v[0]];
        let p1 = mesh.vertices[ed.v[1]];
        let n = mesh.edge_normal(e);
        let kp = ed.plus;
        let ap = mesh.alpha_of(kp);
        let gp = u.gradient(mesh, kp);
        match ed.tag {
            BoundaryTag::Interior => {
                let km = ed.minus.expect("interior edge");
                let am = mesh.alpha_of(km);
                let gm = u.gradient(mesh, km);
                // discrete flux jump is constant along the edge
                let jsig = ap * dot(gp, n) - am * dot(gm, n);
                flux += integrate_edge(&erule, p0, p1, &mut |p| {
                    let vp = (uex(p) - u.eval(mesh, kp, p)) - e_h.eval(mesh, kp, p);
                    let vm = (uex(p) - u.eval(mesh, km, p)) - e_h.eval(mesh, km, p);
                    jsig * 0.5 * (vp + vm)
                });
                jump += integrate_edge(&erule, p0, p1, &mut |p| {
                    let g = gex(p);
                    let fep = ap * (dot(g, n) - dot(gp, n));
                    let fem = am * (dot(g, n) - dot(gm, n));
                    let ju = u.eval(mesh, kp, p) - u.eval(mesh, km, p);
                    0.5 * (fep + fem) * ju
                });
            }
            BoundaryTag::Neumann => {
                let g_n = &spec.segment(ed.segment).value;
                flux += integrate_edge(&erule, p0, p1, &mut |p| {
                    let jsig = ap * dot(gp, n) - g_n(p);
                    let v = (uex(p) - u.eval(mesh, kp, p)) - e_h.eval(mesh, kp, p);
                    jsig * v
                });
            }
            BoundaryTag::Dirichlet => {
                let g_d = &spec.segment(ed.segment).value;
                jump += integrate_edge(&erule, p0, p1, &mut |p| {
                    let g = gex(p);
                    let fe = ap * (dot(g, n) - dot(gp, n));
                    fe * (u.eval(mesh, kp, p) - g_d(p))
                });
            }
        }
    }

    Ok(ResidualParts {
        energy_sq,
        volume,
        flux,
        jump,
    })
}
