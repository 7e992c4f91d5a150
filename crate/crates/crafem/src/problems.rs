//! Problem definitions: coefficients, source, boundary data, optional exact
//! solution, and the two built-in benchmarks (checkerboard interface problem
//! and the L-shaped corner problem), plus loading custom problems from a
//! structured text file.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::mesh::{
    self, build_mesh, check_subdomain_polygons, half_refine, BoundarySpec, BoundaryTag, Mesh,
    MeshError, Point, RefEdgeRule,
};
use crate::quad::{graded_tri_integrate, integrate_tri, tri_rule};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("problem file: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("problem file: {0}")]
    Schema(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("problem has no exact solution")]
    NoExactSolution,
}

/// Bivariate polynomial as a list of (coefficient, x-exponent, y-exponent).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly2 {
    pub terms: Vec<(f64, u32, u32)>,
}

impl Poly2 {
    pub fn constant(c: f64) -> Self {
        if c == 0.0 {
            Self { terms: Vec::new() }
        } else {
            Self {
                terms: vec![(c, 0, 0)],
            }
        }
    }

    pub fn eval(&self, p: Point) -> f64 {
        self.terms
            .iter()
            .map(|&(c, i, j)| c * p[0].powi(i as i32) * p[1].powi(j as i32))
            .sum()
    }

    pub fn grad(&self) -> (Poly2, Poly2) {
        let mut gx = Vec::new();
        let mut gy = Vec::new();
        for &(c, i, j) in &self.terms {
            if i > 0 {
                gx.push((c * i as f64, i - 1, j));
            }
            if j > 0 {
                gy.push((c * j as f64, i, j - 1));
            }
        }
        (Poly2 { terms: gx }, Poly2 { terms: gy })
    }

    pub fn degree(&self) -> usize {
        self.terms
            .iter()
            .map(|&(_, i, j)| (i + j) as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|&(c, _, _)| c == 0.0)
    }
}

/// Right-hand side of the PDE.
pub enum Source {
    Zero,
    /// One polynomial per subdomain id.
    PerSubdomain(Vec<Poly2>),
    Function(Arc<dyn Fn(Point) -> f64 + Send + Sync>),
}

impl Source {
    pub fn eval(&self, p: Point, subdomain: usize) -> f64 {
        match self {
            Source::Zero => 0.0,
            Source::PerSubdomain(polys) => polys[subdomain].eval(p),
            Source::Function(f) => f(p),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Source::Zero => true,
            Source::PerSubdomain(polys) => polys.iter().all(Poly2::is_zero),
            Source::Function(_) => false,
        }
    }

    /// Polynomial degree when known (None for opaque functions).
    pub fn degree(&self) -> Option<usize> {
        match self {
            Source::Zero => Some(0),
            Source::PerSubdomain(polys) => {
                Some(polys.iter().map(Poly2::degree).max().unwrap_or(0))
            }
            Source::Function(_) => None,
        }
    }
}

/// Boundary data on one segment: the value and the gradient of a smooth
/// extension (the gradient feeds tangential derivatives along edges).
#[derive(Clone)]
pub struct SegmentData {
    pub value: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    pub gradient: Arc<dyn Fn(Point) -> Point + Send + Sync>,
}

impl SegmentData {
    pub fn zero() -> Self {
        Self {
            value: Arc::new(|_| 0.0),
            gradient: Arc::new(|_| [0.0, 0.0]),
        }
    }

    pub fn from_poly(p: &Poly2) -> Self {
        let (gx, gy) = p.grad();
        let p = p.clone();
        Self {
            value: Arc::new(move |x| p.eval(x)),
            gradient: Arc::new(move |x| [gx.eval(x), gy.eval(x)]),
        }
    }
}

/// Known exact solution with its gradient.
pub struct ExactSolution {
    pub value: Arc<dyn Fn(Point) -> f64 + Send + Sync>,
    pub gradient: Arc<dyn Fn(Point) -> Point + Send + Sync>,
    /// Squared energy norm |||u|||^2 when available. The benchmark values are
    /// frozen from the self-convergence study run by `energy_norm_of_exact`
    /// over increasing reference depths (see `energy_note`).
    pub energy_norm_sq: Option<f64>,
    pub energy_note: String,
}

pub struct ProblemSpec {
    pub name: String,
    initial: Mesh,
    pub alpha: Vec<f64>,
    pub source: Source,
    /// Boundary data indexed by the mesh edges' segment ids.
    pub segments: Vec<SegmentData>,
    pub exact: Option<ExactSolution>,
    pub singular_points: Vec<Point>,
    pub subdomain_polygons: Option<Vec<Vec<Point>>>,
}

impl ProblemSpec {
    /// Assemble a problem from parts. The mesh subdomain ids must index into
    /// `alpha`, the boundary segment ids into `segments`.
    pub fn new(
        name: impl Into<String>,
        initial: Mesh,
        source: Source,
        segments: Vec<SegmentData>,
        exact: Option<ExactSolution>,
    ) -> Self {
        let alpha = initial.alpha.clone();
        ProblemSpec {
            name: name.into(),
            initial,
            alpha,
            source,
            segments,
            exact,
            singular_points: Vec::new(),
            subdomain_polygons: None,
        }
    }

    pub fn initial_mesh(&self) -> Mesh {
        self.initial.clone()
    }

    pub fn segment(&self, id: usize) -> &SegmentData {
        &self.segments[id]
    }

    /// Local index of a vertex of element `k` sitting on a declared singular
    /// point, if any.
    pub fn singular_vertex(&self, mesh: &Mesh, k: usize) -> Option<usize> {
        if self.singular_points.is_empty() {
            return None;
        }
        let p = mesh.tri_coords(k);
        let scale = mesh.tri_diameter(k).max(1.0);
        for (i, &v) in p.iter().enumerate() {
            for &s in &self.singular_points {
                if mesh::dist(v, s) <= 1e-12 * scale {
                    return Some(i);
                }
            }
        }
        None
    }

    /// Normalized textual echo of the resolved problem.
    pub fn describe(&self) -> String {
        let m = &self.initial;
        let nb = m
            .edges
            .iter()
            .filter(|e| e.tag != BoundaryTag::Interior)
            .count();
        let nd = m
            .edges
            .iter()
            .filter(|e| e.tag == BoundaryTag::Dirichlet)
            .count();
        let mut out = format!("problem: {}\n", self.name);
        out.push_str(&format!(
            "initial mesh: {} vertices, {} elements, {} boundary edges ({} Dirichlet, {} Neumann)\n",
            m.n_vertices(),
            m.n_elements(),
            nb,
            nd,
            nb - nd
        ));
        out.push_str(&format!("subdomains: {}\n", self.alpha.len()));
        for (i, a) in self.alpha.iter().enumerate() {
            out.push_str(&format!("  {i}: alpha = {a}\n"));
        }
        let src = match &self.source {
            Source::Zero => "zero".to_string(),
            Source::PerSubdomain(p) => format!(
                "piecewise polynomial (degree {})",
                p.iter().map(Poly2::degree).max().unwrap_or(0)
            ),
            Source::Function(_) => "function".to_string(),
        };
        out.push_str(&format!("source: {src}\n"));
        out.push_str(&format!("boundary segments: {}\n", self.segments.len()));
        match &self.exact {
            Some(e) => {
                let norm = match e.energy_norm_sq {
                    Some(sq) => format!(", energy norm {:.16e}", sq.sqrt()),
                    None => String::new(),
                };
                out.push_str(&format!("exact solution: yes{norm}\n"));
            }
            None => out.push_str("exact solution: no\n"),
        }
        if self.singular_points.is_empty() {
            out.push_str("singular points: none\n");
        } else {
            let pts: Vec<String> = self
                .singular_points
                .iter()
                .map(|p| format!("({}, {})", p[0], p[1]))
                .collect();
            out.push_str(&format!("singular points: {}\n", pts.join(", ")));
        }
        out
    }
}

// Checkerboard benchmark constants. beta, rho are exact; R and sigma solve the
// transmission relations R tan(rho beta) = -tan((pi/2 - sigma) beta) etc.
// (closed forms R = cot^2(pi/40), sigma = -4.75 pi).
pub const CHECKERBOARD_BETA: f64 = 0.1;
pub const CHECKERBOARD_R: f64 = 161.4476387975881;
pub const CHECKERBOARD_RHO: f64 = PI / 4.0;
pub const CHECKERBOARD_SIGMA: f64 = -14.92256510455152;

/// |||u|||^2 for the checkerboard benchmark, frozen from the depth-4/depth-5
/// self-convergence study (successive depths agreed to 2e-7 relative).
pub const CHECKERBOARD_ENERGY_SQ: f64 = 0.3192380445785417;

/// |||u|||^2 for the L-shape benchmark, frozen the same way (agreement 3e-8).
pub const LSHAPE_ENERGY_SQ: f64 = 1.8362266618751626;

fn checkerboard_mu(theta: f64) -> f64 {
    let b = CHECKERBOARD_BETA;
    let (rho, sigma) = (CHECKERBOARD_RHO, CHECKERBOARD_SIGMA);
    if theta < 0.5 * PI {
        ((0.5 * PI - sigma) * b).cos() * ((theta - 0.5 * PI + rho) * b).cos()
    } else if theta < PI {
        (rho * b).cos() * ((theta - PI + sigma) * b).cos()
    } else if theta < 1.5 * PI {
        (sigma * b).cos() * ((theta - PI - rho) * b).cos()
    } else {
        ((0.5 * PI - rho) * b).cos() * ((theta - 1.5 * PI - sigma) * b).cos()
    }
}

fn checkerboard_mu_prime(theta: f64) -> f64 {
    let b = CHECKERBOARD_BETA;
    let (rho, sigma) = (CHECKERBOARD_RHO, CHECKERBOARD_SIGMA);
    if theta < 0.5 * PI {
        -b * ((0.5 * PI - sigma) * b).cos() * ((theta - 0.5 * PI + rho) * b).sin()
    } else if theta < PI {
        -b * (rho * b).cos() * ((theta - PI + sigma) * b).sin()
    } else if theta < 1.5 * PI {
        -b * (sigma * b).cos() * ((theta - PI - rho) * b).sin()
    } else {
        -b * ((0.5 * PI - rho) * b).cos() * ((theta - 1.5 * PI - sigma) * b).sin()
    }
}

fn theta_0_2pi(p: Point) -> f64 {
    let t = p[1].atan2(p[0]);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

fn checkerboard_value(p: Point) -> f64 {
    let r = mesh::norm(p);
    if r == 0.0 {
        return 0.0;
    }
    r.powf(CHECKERBOARD_BETA) * checkerboard_mu(theta_0_2pi(p))
}

fn checkerboard_gradient(p: Point) -> Point {
    let r = mesh::norm(p);
    let t = theta_0_2pi(p);
    let (ct, st) = (t.cos(), t.sin());
    let mu = checkerboard_mu(t);
    let mup = checkerboard_mu_prime(t);
    let b = CHECKERBOARD_BETA;
    let s = r.powf(b - 1.0);
    [
        s * (b * mu * ct - mup * st),
        s * (b * mu * st + mup * ct),
    ]
}

/// Interface benchmark on (-1,1)^2: alpha = R on the first and third
/// quadrants, 1 elsewhere, f = 0, pure Dirichlet data from the exact
/// r^beta mu(theta) solution with beta = 0.1. The coefficient checkerboard
/// makes the origin patch non-quasi-monotone.
pub fn kellogg_problem() -> ProblemSpec {
    // 3x3 grid corners plus the four quadrant centers, criss-cross in each
    // quadrant so the interface lies on mesh lines
    let g = |i: i32, j: i32| [i as f64, j as f64];
    let vertices: Vec<Point> = vec![
        g(-1, -1),
        g(0, -1),
        g(1, -1),
        g(-1, 0),
        g(0, 0),
        g(1, 0),
        g(-1, 1),
        g(0, 1),
        g(1, 1),
        [0.5, 0.5],
        [-0.5, 0.5],
        [-0.5, -0.5],
        [0.5, -0.5],
    ];
    // quadrant subdomains: 0 = (+,+), 1 = (-,+), 2 = (-,-), 3 = (+,-)
    let quad = |a: usize, b: usize, c: usize, d: usize, center: usize, sub: usize| {
        [
            ([a, b, center], sub),
            ([b, c, center], sub),
            ([c, d, center], sub),
            ([d, a, center], sub),
        ]
    };
    let mut tris: Vec<([usize; 3], usize)> = Vec::new();
    tris.extend(quad(4, 5, 8, 7, 9, 0));
    tris.extend(quad(3, 4, 7, 6, 10, 1));
    tris.extend(quad(0, 1, 4, 3, 11, 2));
    tris.extend(quad(1, 2, 5, 4, 12, 3));
    let boundary: Vec<BoundarySpec> = [
        [0usize, 1],
        [1, 2],
        [2, 5],
        [5, 8],
        [8, 7],
        [7, 6],
        [6, 3],
        [3, 0],
    ]
    .iter()
    .map(|&v| BoundarySpec {
        v,
        tag: BoundaryTag::Dirichlet,
        segment: 0,
    })
    .collect();
    let alpha = vec![CHECKERBOARD_R, 1.0, CHECKERBOARD_R, 1.0];
    let initial = build_mesh(&vertices, &tris, &boundary, &alpha, RefEdgeRule::LongestEdge)
        .expect("built-in mesh is valid");
    let exact = ExactSolution {
        value: Arc::new(checkerboard_value),
        gradient: Arc::new(checkerboard_gradient),
        energy_norm_sq: Some(CHECKERBOARD_ENERGY_SQ),
        energy_note: "frozen from the reference-mesh self-convergence study \
                      (energy_norm_of_exact at depths 4 and 5, graded quadrature)"
            .to_string(),
    };
    let polygons = vec![
        vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
        vec![[-1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]],
        vec![[-1.0, -1.0], [0.0, -1.0], [0.0, 0.0], [-1.0, 0.0]],
        vec![[0.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0]],
    ];
    ProblemSpec {
        name: "kellogg".to_string(),
        initial,
        alpha,
        source: Source::Zero,
        segments: vec![SegmentData {
            value: Arc::new(checkerboard_value),
            gradient: Arc::new(checkerboard_gradient),
        }],
        exact: Some(exact),
        singular_points: vec![[0.0, 0.0]],
        subdomain_polygons: Some(polygons),
    }
}

fn lshape_value(p: Point) -> f64 {
    let r = mesh::norm(p);
    if r == 0.0 {
        return 0.0;
    }
    let t = p[1].atan2(p[0]);
    r.powf(2.0 / 3.0) * ((2.0 * t + PI) / 3.0).sin()
}

fn lshape_gradient(p: Point) -> Point {
    let r = mesh::norm(p);
    let t = p[1].atan2(p[0]);
    let a = (2.0 * t + PI) / 3.0;
    let s = (2.0 / 3.0) * r.powf(-1.0 / 3.0);
    let (ct, st) = (t.cos(), t.sin());
    [
        s * (a.sin() * ct - a.cos() * st),
        s * (a.sin() * st + a.cos() * ct),
    ]
}

/// Poisson benchmark on the L-shaped domain (-1,1)^2 minus the closed third
/// quadrant: alpha = 1, f = 0, Dirichlet data from u = r^(2/3) sin((2t+pi)/3)
/// which vanishes on both edges of the re-entrant corner.
pub fn lshape_problem() -> ProblemSpec {
    let vertices: Vec<Point> = vec![
        [0.0, -1.0],
        [1.0, -1.0],
        [-1.0, 0.0],
        [0.0, 0.0],
        [1.0, 0.0],
        [-1.0, 1.0],
        [0.0, 1.0],
        [1.0, 1.0],
        [0.5, 0.5],
        [-0.5, 0.5],
        [0.5, -0.5],
    ];
    let quad = |a: usize, b: usize, c: usize, d: usize, center: usize| {
        [
            ([a, b, center], 0),
            ([b, c, center], 0),
            ([c, d, center], 0),
            ([d, a, center], 0),
        ]
    };
    let mut tris: Vec<([usize; 3], usize)> = Vec::new();
    tris.extend(quad(3, 4, 7, 6, 8));
    tris.extend(quad(2, 3, 6, 5, 9));
    tris.extend(quad(0, 1, 4, 3, 10));
    let boundary: Vec<BoundarySpec> = [
        [0usize, 1],
        [1, 4],
        [4, 7],
        [7, 6],
        [6, 5],
        [5, 2],
        [2, 3],
        [3, 0],
    ]
    .iter()
    .map(|&v| BoundarySpec {
        v,
        tag: BoundaryTag::Dirichlet,
        segment: 0,
    })
    .collect();
    let alpha = vec![1.0];
    let initial = build_mesh(&vertices, &tris, &boundary, &alpha, RefEdgeRule::LongestEdge)
        .expect("built-in mesh is valid");
    let exact = ExactSolution {
        value: Arc::new(lshape_value),
        gradient: Arc::new(lshape_gradient),
        energy_norm_sq: Some(LSHAPE_ENERGY_SQ),
        energy_note: "frozen from the reference-mesh self-convergence study \
                      (energy_norm_of_exact at depths 4 and 5, graded quadrature)"
            .to_string(),
    };
    ProblemSpec {
        name: "lshape".to_string(),
        initial,
        alpha,
        source: Source::Zero,
        segments: vec![SegmentData {
            value: Arc::new(lshape_value),
            gradient: Arc::new(lshape_gradient),
        }],
        exact: Some(exact),
        singular_points: vec![[0.0, 0.0]],
        subdomain_polygons: None,
    }
}

/// |||u||| of the exact solution by graded quadrature on uniformly refined
/// reference meshes; `value` is the deepest result, `self_error` the relative
/// change from the previous depth.
pub struct EnergyEstimate {
    pub value: f64,
    pub self_error: f64,
}

pub fn energy_norm_of_exact(
    spec: &ProblemSpec,
    reference_depth: u32,
) -> Result<EnergyEstimate, ProblemError> {
    let exact = spec.exact.as_ref().ok_or(ProblemError::NoExactSolution)?;
    let base = tri_rule(10).expect("degree 10 supported");
    let grad = &exact.gradient;
    let norm_at = |depth: u32| -> f64 {
        let mut m = spec.initial_mesh();
        for _ in 0..depth {
            m = half_refine(&m).mesh;
        }
        let mut total = 0.0;
        for k in 0..m.n_elements() {
            let tri = m.tri_coords(k);
            let a = m.alpha_of(k);
            let mut f = |p: Point| {
                let g = grad(p);
                a * (g[0] * g[0] + g[1] * g[1])
            };
            total += match spec.singular_vertex(&m, k) {
                Some(i) => graded_tri_integrate(&tri, i, 14, &base, &mut f),
                None => integrate_tri(&base, &tri, &mut f),
            };
        }
        total.sqrt()
    };
    let coarse = norm_at(reference_depth.saturating_sub(1));
    let value = norm_at(reference_depth);
    Ok(EnergyEstimate {
        value,
        self_error: ((value - coarse) / value).abs(),
    })
}

fn toml_point(v: &toml::Value, what: &str) -> Result<Point, ProblemError> {
    let arr = v
        .as_array()
        .filter(|a| a.len() == 2)
        .ok_or_else(|| ProblemError::Schema(format!("{what}: expected [x, y]")))?;
    let num = |x: &toml::Value| {
        x.as_float()
            .or_else(|| x.as_integer().map(|i| i as f64))
            .ok_or_else(|| ProblemError::Schema(format!("{what}: expected a number")))
    };
    Ok([num(&arr[0])?, num(&arr[1])?])
}

fn toml_poly(v: &toml::Value, what: &str) -> Result<Poly2, ProblemError> {
    if let Some(c) = v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
        return Ok(Poly2::constant(c));
    }
    let arr = v
        .as_array()
        .ok_or_else(|| ProblemError::Schema(format!("{what}: expected a number or [[c, i, j], ...]")))?;
    let mut terms = Vec::new();
    for t in arr {
        let m = t.as_array().filter(|a| a.len() == 3).ok_or_else(|| {
            ProblemError::Schema(format!("{what}: each monomial is [coeff, xexp, yexp]"))
        })?;
        let c = m[0]
            .as_float()
            .or_else(|| m[0].as_integer().map(|i| i as f64))
            .ok_or_else(|| ProblemError::Schema(format!("{what}: bad coefficient")))?;
        let e = |x: &toml::Value| {
            x.as_integer()
                .filter(|&i| (0..=8).contains(&i))
                .map(|i| i as u32)
                .ok_or_else(|| ProblemError::Schema(format!("{what}: exponents must be 0..=8")))
        };
        terms.push((c, e(&m[1])?, e(&m[2])?));
    }
    Ok(Poly2 { terms })
}

/// Load a problem from a TOML description:
///
/// ```toml
/// name = "strip"
/// vertices = [[0.0, 0.0], [1.0, 0.0], ...]
/// elements = [[0, 1, 2, 0], ...]            # v0 v1 v2 subdomain
/// singular_points = [[0.0, 0.0]]            # optional
///
/// [[subdomain]]                             # one block per subdomain id
/// alpha = 5.0
/// f = 1.0                                   # number or [[c, i, j], ...]
/// polygon = [[0.0, 0.0], ...]               # optional containment check
///
/// [[segment]]                               # one block per boundary segment
/// edges = [[0, 1], [1, 2]]
/// tag = "D"                                 # or "N"
/// g = [[1.0, 1, 0]]                         # boundary data polynomial
/// ```
pub fn from_str(text: &str) -> Result<ProblemSpec, ProblemError> {
    let root: toml::Value = text.parse()?;
    let table = root
        .as_table()
        .ok_or_else(|| ProblemError::Schema("top level must be a table".into()))?;
    let name = table
        .get("name")
        .and_then(|v| v.as_str())
        .unwrap_or("custom")
        .to_string();

    let vertices: Vec<Point> = table
        .get("vertices")
        .and_then(|v| v.as_array())
        .ok_or_else(|| ProblemError::Schema("missing vertices".into()))?
        .iter()
        .map(|v| toml_point(v, "vertices"))
        .collect::<Result<_, _>>()?;

    let elements: Vec<([usize; 3], usize)> = table
        .get("elements")
        .and_then(|v| v.as_array())
        .ok_or_else(|| ProblemError::Schema("missing elements".into()))?
        .iter()
        .map(|v| {
            let arr = v
                .as_array()
                .filter(|a| a.len() == 4)
                .ok_or_else(|| ProblemError::Schema("elements: expected [v0, v1, v2, subdomain]".into()))?;
            let idx = |x: &toml::Value| {
                x.as_integer()
                    .filter(|&i| i >= 0)
                    .map(|i| i as usize)
                    .ok_or_else(|| ProblemError::Schema("elements: bad index".into()))
            };
            Ok((
                [idx(&arr[0])?, idx(&arr[1])?, idx(&arr[2])?],
                idx(&arr[3])?,
            ))
        })
        .collect::<Result<_, ProblemError>>()?;

    let singular_points: Vec<Point> = match table.get("singular_points") {
        Some(v) => v
            .as_array()
            .ok_or_else(|| ProblemError::Schema("singular_points: expected a list".into()))?
            .iter()
            .map(|p| toml_point(p, "singular_points"))
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };

    let sub_blocks = table
        .get("subdomain")
        .and_then(|v| v.as_array())
        .ok_or_else(|| ProblemError::Schema("missing [[subdomain]] blocks".into()))?;
    let mut alpha = Vec::with_capacity(sub_blocks.len());
    let mut source_polys = Vec::with_capacity(sub_blocks.len());
    let mut polygons: Vec<Option<Vec<Point>>> = Vec::with_capacity(sub_blocks.len());
    for (i, block) in sub_blocks.iter().enumerate() {
        let t = block
            .as_table()
            .ok_or_else(|| ProblemError::Schema(format!("subdomain {i}: expected a table")))?;
        let a = t
            .get("alpha")
            .and_then(|v| v.as_float().or_else(|| v.as_integer().map(|x| x as f64)))
            .ok_or_else(|| ProblemError::Schema(format!("subdomain {i}: missing alpha")))?;
        alpha.push(a);
        let f = match t.get("f") {
            Some(v) => toml_poly(v, &format!("subdomain {i} f"))?,
            None => Poly2::default(),
        };
        if f.degree() > 5 {
            return Err(ProblemError::Schema(format!(
                "subdomain {i}: source polynomial degree above 5 is unsupported"
            )));
        }
        source_polys.push(f);
        polygons.push(match t.get("polygon") {
            Some(v) => Some(
                v.as_array()
                    .ok_or_else(|| ProblemError::Schema(format!("subdomain {i}: bad polygon")))?
                    .iter()
                    .map(|p| toml_point(p, "polygon"))
                    .collect::<Result<_, _>>()?,
            ),
            None => None,
        });
    }

    let seg_blocks = table
        .get("segment")
        .and_then(|v| v.as_array())
        .ok_or_else(|| ProblemError::Schema("missing [[segment]] blocks".into()))?;
    let mut segments = Vec::with_capacity(seg_blocks.len());
    let mut boundary: Vec<BoundarySpec> = Vec::new();
    for (i, block) in seg_blocks.iter().enumerate() {
        let t = block
            .as_table()
            .ok_or_else(|| ProblemError::Schema(format!("segment {i}: expected a table")))?;
        let tag = match t.get("tag").and_then(|v| v.as_str()) {
            Some("D") => BoundaryTag::Dirichlet,
            Some("N") => BoundaryTag::Neumann,
            _ => {
                return Err(ProblemError::Schema(format!(
                    "segment {i}: tag must be \"D\" or \"N\""
                )))
            }
        };
        let edges = t
            .get("edges")
            .and_then(|v| v.as_array())
            .ok_or_else(|| ProblemError::Schema(format!("segment {i}: missing edges")))?;
        for e in edges {
            let arr = e
                .as_array()
                .filter(|a| a.len() == 2)
                .ok_or_else(|| ProblemError::Schema(format!("segment {i}: edges are [v0, v1]")))?;
            let idx = |x: &toml::Value| {
                x.as_integer()
                    .filter(|&v| v >= 0)
                    .map(|v| v as usize)
                    .ok_or_else(|| ProblemError::Schema(format!("segment {i}: bad vertex id")))
            };
            boundary.push(BoundarySpec {
                v: [idx(&arr[0])?, idx(&arr[1])?],
                tag,
                segment: i,
            });
        }
        let g = match t.get("g") {
            Some(v) => toml_poly(v, &format!("segment {i} g"))?,
            None => Poly2::default(),
        };
        segments.push(SegmentData::from_poly(&g));
    }
    if !boundary
        .iter()
        .any(|b| b.tag == BoundaryTag::Dirichlet)
    {
        return Err(ProblemError::Schema(
            "the Dirichlet part of the boundary is empty".into(),
        ));
    }

    let initial = build_mesh(&vertices, &elements, &boundary, &alpha, RefEdgeRule::LongestEdge)?;

    let n_with_poly = polygons.iter().filter(|p| p.is_some()).count();
    let subdomain_polygons = if n_with_poly == 0 {
        None
    } else if n_with_poly == polygons.len() {
        let polys: Vec<Vec<Point>> = polygons.into_iter().map(Option::unwrap).collect();
        check_subdomain_polygons(&initial, &polys)?;
        Some(polys)
    } else {
        return Err(ProblemError::Schema(
            "either every subdomain declares a polygon or none does".into(),
        ));
    };

    let source = if source_polys.iter().all(Poly2::is_zero) {
        Source::Zero
    } else {
        Source::PerSubdomain(source_polys)
    };

    Ok(ProblemSpec {
        name,
        initial,
        alpha,
        source,
        segments,
        exact: None,
        singular_points,
        subdomain_polygons,
    })
}

pub fn from_file(path: &std::path::Path) -> Result<ProblemSpec, ProblemError> {
    from_str(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn checkerboard_mesh_shape() {
        let p = kellogg_problem();
        let m = p.initial_mesh();
        assert_eq!((m.n_vertices(), m.n_elements(), m.n_edges()), (13, 16, 28));
        assert_eq!(m.n_free_edges(), 20);
        assert!(m.edges.iter().all(|e| e.tag != BoundaryTag::Neumann));
        m.validate().unwrap();
        // subdomain ids follow quadrants, alpha follows the checkerboard
        for k in 0..m.n_elements() {
            let c = m.tri_coords(k);
            let cx = (c[0][0] + c[1][0] + c[2][0]) / 3.0;
            let cy = (c[0][1] + c[1][1] + c[2][1]) / 3.0;
            let expect = match (cx > 0.0, cy > 0.0) {
                (true, true) => CHECKERBOARD_R,
                (false, true) => 1.0,
                (false, false) => CHECKERBOARD_R,
                (true, false) => 1.0,
            };
            assert_eq!(m.alpha_of(k), expect, "element {k}");
        }
        check_subdomain_polygons(&m, p.subdomain_polygons.as_ref().unwrap()).unwrap();
    }

    #[test]
    fn checkerboard_solution_basics() {
        assert_eq!(checkerboard_value([0.0, 0.0]), 0.0);
        // branch continuity across the interfaces
        for r in [0.3, 0.7, 0.95] {
            for quarter in 1..=3 {
                let t0 = 0.5 * PI * quarter as f64;
                let a = checkerboard_mu(t0 - 1e-12);
                let b = checkerboard_mu(t0 + 1e-12);
                assert!((a - b).abs() < 1e-10, "mu jump at {t0}: {a} vs {b}");
                let _ = r;
            }
        }
        // flux continuity alpha mu' across each interface, relative 1e-8
        let alpha_of = |t: f64| {
            let q = (t / (0.5 * PI)) as usize % 4;
            if q % 2 == 0 {
                CHECKERBOARD_R
            } else {
                1.0
            }
        };
        for quarter in 0..4 {
            let t0 = 0.5 * PI * quarter as f64;
            let tm = if t0 == 0.0 { 2.0 * PI - 1e-9 } else { t0 - 1e-9 };
            let tp = t0 + 1e-9;
            let fm = alpha_of(tm) * checkerboard_mu_prime(tm);
            let fp = alpha_of(tp) * checkerboard_mu_prime(tp);
            let scale = fm.abs().max(fp.abs()).max(1e-3);
            assert!(
                ((fm - fp) / scale).abs() < 1e-8,
                "flux jump at {t0}: {fm} vs {fp}"
            );
        }
    }

    #[test]
    fn checkerboard_interface_conditions_in_cartesian() {
        // sample points straddling the x = 0 and y = 0 interfaces
        let d = 1e-9;
        for &c in &[0.2, 0.55, 0.9] {
            for (pm, pp, n) in [
                ([-d, c], [d, c], [1.0, 0.0]),
                ([-d, -c], [d, -c], [1.0, 0.0]),
                ([c, -d], [c, d], [0.0, 1.0]),
                ([-c, -d], [-c, d], [0.0, 1.0]),
            ] {
                let um = checkerboard_value(pm);
                let up = checkerboard_value(pp);
                assert!((um - up).abs() < 1e-8, "[u] at {pm:?}: {um} vs {up}");
                let quadrant_alpha = |p: [f64; 2]| {
                    if p[0] * p[1] > 0.0 {
                        CHECKERBOARD_R
                    } else {
                        1.0
                    }
                };
                let gm = checkerboard_gradient(pm);
                let gp = checkerboard_gradient(pp);
                let fm = quadrant_alpha(pm) * (gm[0] * n[0] + gm[1] * n[1]);
                let fp = quadrant_alpha(pp) * (gp[0] * n[0] + gp[1] * n[1]);
                let scale = fm.abs().max(fp.abs()).max(1e-6);
                assert!(
                    ((fm - fp) / scale).abs() < 1e-6,
                    "[a du/dn] at {pm:?}: {fm} vs {fp}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-6;
        let fd = |f: &dyn Fn(Point) -> f64, p: Point| {
            [
                (f([p[0] + h, p[1]]) - f([p[0] - h, p[1]])) / (2.0 * h),
                (f([p[0], p[1] + h]) - f([p[0], p[1] - h])) / (2.0 * h),
            ]
        };
        // l-shape spec point
        let g = lshape_gradient([0.3, 0.4]);
        let g2 = fd(&lshape_value, [0.3, 0.4]);
        assert_relative_eq!(g[0], g2[0], max_relative = 1e-6);
        assert_relative_eq!(g[1], g2[1], max_relative = 1e-6);
        for _ in 0..30 {
            // keep away from the axes where branches switch
            let p = [
                rng.gen_range(0.1..0.9) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
                rng.gen_range(0.1..0.9) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 },
            ];
            let g = checkerboard_gradient(p);
            let g2 = fd(&checkerboard_value, p);
            for i in 0..2 {
                assert_relative_eq!(g[i], g2[i], max_relative = 1e-5, epsilon = 1e-9);
            }
            if p[0] > 0.0 || p[1] > 0.0 {
                let g = lshape_gradient(p);
                let g2 = fd(&lshape_value, p);
                for i in 0..2 {
                    assert_relative_eq!(g[i], g2[i], max_relative = 1e-5, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn lshape_mesh_and_zero_rays() {
        let p = lshape_problem();
        let m = p.initial_mesh();
        assert_eq!((m.n_vertices(), m.n_elements(), m.n_edges()), (11, 12, 22));
        m.validate().unwrap();
        // domain excludes the third quadrant
        for k in 0..m.n_elements() {
            let c = m.tri_coords(k);
            let cx = (c[0][0] + c[1][0] + c[2][0]) / 3.0;
            let cy = (c[0][1] + c[1][1] + c[2][1]) / 3.0;
            assert!(cx > 0.0 || cy > 0.0, "element {k} in the cut quadrant");
        }
        assert!(lshape_value([-1.0, 0.0]).abs() < 1e-15);
        for t in [0.1, 0.4, 1.0] {
            assert!(lshape_value([-t, 0.0]).abs() < 1e-14);
            assert!(lshape_value([0.0, -t]).abs() < 1e-14);
        }
        assert!(lshape_value([0.5, 0.5]) > 0.0);
    }

    #[test]
    fn energy_norm_of_linear_solution_is_exact() {
        // alpha = 1, u = x on the unit square: |||u||| = 1
        let m = mesh::unit_square_two_tri(1.0);
        let spec = ProblemSpec {
            name: "linear".to_string(),
            initial: m,
            alpha: vec![1.0],
            source: Source::Zero,
            segments: vec![SegmentData::from_poly(&Poly2 {
                terms: vec![(1.0, 1, 0)],
            })],
            exact: Some(ExactSolution {
                value: Arc::new(|p| p[0]),
                gradient: Arc::new(|_| [1.0, 0.0]),
                energy_norm_sq: Some(1.0),
                energy_note: "analytic".to_string(),
            }),
            singular_points: Vec::new(),
            subdomain_polygons: None,
        };
        let est = energy_norm_of_exact(&spec, 1).unwrap();
        assert_relative_eq!(est.value, 1.0, epsilon = 1e-13);
        assert!(est.self_error < 1e-13);
    }

    #[test]
    fn frozen_energy_norms_reproduce() {
        let k = energy_norm_of_exact(&kellogg_problem(), 4).unwrap();
        assert!(k.self_error < 1e-5, "self error {}", k.self_error);
        assert_relative_eq!(
            k.value * k.value,
            CHECKERBOARD_ENERGY_SQ,
            max_relative = 1e-6
        );
        let l = energy_norm_of_exact(&lshape_problem(), 4).unwrap();
        assert!(l.self_error < 1e-5, "self error {}", l.self_error);
        assert_relative_eq!(l.value * l.value, LSHAPE_ENERGY_SQ, max_relative = 1e-6);
    }

    #[test]
    fn describe_is_stable_and_informative() {
        let p = kellogg_problem();
        let d1 = p.describe();
        let d2 = p.describe();
        assert_eq!(d1, d2);
        assert!(d1.contains("problem: kellogg"));
        assert!(d1.contains("16 elements"));
        assert!(d1.contains("subdomains: 4"));
        assert!(d1.contains("161.4476387975881"));
        assert!(d1.contains("source: zero"));
        assert!(d1.contains("exact solution: yes"));
        assert!(d1.contains("singular points: (0, 0)"));
    }

    #[test]
    fn poly2_eval_and_grad() {
        let p = Poly2 {
            terms: vec![(2.0, 0, 0), (-1.0, 1, 0), (3.0, 2, 1)],
        };
        let x = [1.5, -2.0];
        assert_relative_eq!(p.eval(x), 2.0 - 1.5 + 3.0 * 2.25 * -2.0, epsilon = 1e-14);
        let (gx, gy) = p.grad();
        assert_relative_eq!(gx.eval(x), -1.0 + 6.0 * 1.5 * -2.0, epsilon = 1e-14);
        assert_relative_eq!(gy.eval(x), 3.0 * 2.25, epsilon = 1e-14);
        assert_eq!(p.degree(), 3);
    }

    const STRIP: &str = r#"
name = "strip"
vertices = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0], [0.0, 1.0]]
elements = [[0, 1, 4, 0], [0, 4, 5, 0], [1, 2, 3, 1], [1, 3, 4, 1]]
singular_points = [[1.0, 0.0]]

[[subdomain]]
alpha = 1.0
f = 1.0
polygon = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]

[[subdomain]]
alpha = 7.5
f = [[2.0, 1, 0], [1.0, 0, 1]]
polygon = [[1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0]]

[[segment]]
edges = [[0, 1], [1, 2], [4, 5], [3, 4]]
tag = "D"
g = [[1.0, 1, 0]]

[[segment]]
edges = [[2, 3], [5, 0]]
tag = "N"
"#;

    #[test]
    fn custom_problem_from_text() {
        let p = from_str(STRIP).unwrap();
        assert_eq!(p.name, "strip");
        assert_eq!(p.alpha, vec![1.0, 7.5]);
        let m = p.initial_mesh();
        assert_eq!(m.n_elements(), 4);
        assert_eq!(
            m.edges
                .iter()
                .filter(|e| e.tag == BoundaryTag::Neumann)
                .count(),
            2
        );
        assert_eq!(p.singular_points, vec![[1.0, 0.0]]);
        // source: subdomain 0 constant, subdomain 1 linear
        assert_relative_eq!(p.source.eval([0.3, 0.3], 0), 1.0, epsilon = 1e-15);
        assert_relative_eq!(p.source.eval([1.5, 0.5], 1), 3.5, epsilon = 1e-15);
        // boundary data g = x on segment 0, zero on segment 1
        assert_relative_eq!((p.segment(0).value)([0.7, 0.0]), 0.7, epsilon = 1e-15);
        assert_eq!((p.segment(0).gradient)([0.7, 0.0]), [1.0, 0.0]);
        assert_relative_eq!((p.segment(1).value)([2.0, 0.5]), 0.0, epsilon = 1e-15);
        assert!(p.subdomain_polygons.is_some());
        assert!(p.exact.is_none());
    }

    #[test]
    fn custom_problem_schema_errors() {
        // missing alpha
        let bad = STRIP.replace("alpha = 7.5", "beta = 7.5");
        assert!(matches!(from_str(&bad), Err(ProblemError::Schema(_))));
        // no Dirichlet boundary
        let bad = STRIP.replace("tag = \"D\"", "tag = \"N\"");
        assert!(matches!(from_str(&bad), Err(ProblemError::Schema(_))));
        // mis-tagged element: swap the two subdomain polygons
        let bad = STRIP
            .replace(
                "polygon = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]",
                "polygon = [[1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0]]",
            )
            .replace(
                "polygon = [[1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [1.0, 1.0]]\n\n[[segment]]",
                "polygon = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]\n\n[[segment]]",
            );
        assert!(matches!(
            from_str(&bad),
            Err(ProblemError::Mesh(MeshError::InterfaceCut { .. }))
        ));
        // not toml at all
        assert!(matches!(from_str("= 3"), Err(ProblemError::Toml(_))));
    }
}
