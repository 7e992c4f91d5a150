//! Quadrature rules on triangles and edges, plus graded integration toward a
//! point singularity.
//!
//! Triangle rules are collapsed Gauss-Legendre products mapped through
//! x = xi*(1-eta), y = eta; all weights are positive and sum to the reference
//! area 1/2. Graded integration splits a triangle geometrically toward the
//! singular vertex (ratio 1/2 per level), applies the base rule on subdivided
//! ring cells, and finishes the innermost cell with a radial tanh-sinh tensor
//! rule, so integrands like r^s (any s > -2) converge far below the ring
//! truncation error.

use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum QuadError {
    #[error("unsupported quadrature degree {0} (supported: 1..=10)")]
    UnsupportedDegree(usize),
}

/// Quadrature rule on the reference triangle (barycentric points, weights sum to 1/2).
#[derive(Debug, Clone)]
pub struct TriRule {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

/// Quadrature rule on the unit interval (weights sum to 1).
#[derive(Debug, Clone)]
pub struct EdgeRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

pub const MAX_DEGREE: usize = 10;

/// Gauss-Legendre nodes/weights on [0,1], by Newton iteration on P_n.
fn gauss_legendre_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    for i in 0..n {
        // initial guess on [-1,1], roots ordered descending
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // evaluate P_n and P_n' by the three-term recurrence
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        // recompute derivative at the converged node for the weight
        let mut p0 = 1.0;
        let mut p1 = x;
        for k in 2..=n {
            let kf = k as f64;
            let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        // map [-1,1] -> [0,1]; store ascending
        xs[n - 1 - i] = 0.5 * (x + 1.0);
        ws[n - 1 - i] = 0.5 * w;
    }
    (xs, ws)
}

/// Rule on the reference triangle exact for total degree <= `degree`.
pub fn tri_rule(degree: usize) -> Result<TriRule, QuadError> {
    if degree < 1 || degree > MAX_DEGREE {
        return Err(QuadError::UnsupportedDegree(degree));
    }
    // xi integrand has degree <= d, eta integrand (after the (1-eta) Jacobian)
    // has degree <= d+1
    let n_xi = degree / 2 + 1;
    let n_eta = (degree + 1) / 2 + 1;
    let (xi, wxi) = gauss_legendre_01(n_xi);
    let (eta, weta) = gauss_legendre_01(n_eta);
    let mut points = Vec::with_capacity(n_xi * n_eta);
    let mut weights = Vec::with_capacity(n_xi * n_eta);
    for (e, we) in eta.iter().zip(&weta) {
        for (q, wq) in xi.iter().zip(&wxi) {
            let x = q * (1.0 - e);
            let y = *e;
            points.push([1.0 - x - y, x, y]);
            weights.push(wq * we * (1.0 - e));
        }
    }
    Ok(TriRule {
        points,
        weights,
        degree,
    })
}

/// Rule on [0,1] exact for degree <= `degree` (degree 1 gives the midpoint rule).
pub fn edge_rule(degree: usize) -> Result<EdgeRule, QuadError> {
    if degree < 1 || degree > MAX_DEGREE {
        return Err(QuadError::UnsupportedDegree(degree));
    }
    let n = degree / 2 + 1;
    let (points, weights) = gauss_legendre_01(n);
    Ok(EdgeRule {
        points,
        weights,
        degree,
    })
}

/// Integral of `f` over the physical triangle `tri` with the given rule.
pub fn integrate_tri(rule: &TriRule, tri: &[[f64; 2]; 3], f: &mut dyn FnMut([f64; 2]) -> f64) -> f64 {
    let area2 = ((tri[1][0] - tri[0][0]) * (tri[2][1] - tri[0][1])
        - (tri[2][0] - tri[0][0]) * (tri[1][1] - tri[0][1]))
        .abs();
    let mut acc = 0.0;
    for (p, w) in rule.points.iter().zip(&rule.weights) {
        let x = p[0] * tri[0][0] + p[1] * tri[1][0] + p[2] * tri[2][0];
        let y = p[0] * tri[0][1] + p[1] * tri[1][1] + p[2] * tri[2][1];
        acc += w * f([x, y]);
    }
    acc * area2
}

/// Integral of `f` along the segment p0 -> p1.
pub fn integrate_edge(
    rule: &EdgeRule,
    p0: [f64; 2],
    p1: [f64; 2],
    f: &mut dyn FnMut([f64; 2]) -> f64,
) -> f64 {
    let len = ((p1[0] - p0[0]).powi(2) + (p1[1] - p0[1]).powi(2)).sqrt();
    let mut acc = 0.0;
    for (t, w) in rule.points.iter().zip(&rule.weights) {
        let x = p0[0] + t * (p1[0] - p0[0]);
        let y = p0[1] + t * (p1[1] - p0[1]);
        acc += w * f([x, y]);
    }
    acc * len
}

// The innermost cell is integrated in polar-like coordinates
// (t, xi) -> s + t * (edge point xi), with tanh-sinh quadrature in the radial
// t direction. The double-exponential node clustering at t = 0 integrates any
// endpoint behavior t^(s+1) with s > -2, so r^s vertex singularities converge
// to near machine precision without knowing s.
const RADIAL_U_MAX: f64 = 5.0;
const RADIAL_N_T: usize = 81;
const RADIAL_N_XI: usize = 12;

struct RadialRule {
    // (t, xi, weight) with weight including the t dt Jacobian factor
    nodes: Vec<(f64, f64, f64)>,
}

fn radial_rule() -> &'static RadialRule {
    static RULE: OnceLock<RadialRule> = OnceLock::new();
    RULE.get_or_init(|| {
        let h = 2.0 * RADIAL_U_MAX / (RADIAL_N_T as f64 - 1.0);
        let (xis, wxis) = gauss_legendre_01(RADIAL_N_XI);
        let mut nodes = Vec::with_capacity(RADIAL_N_T * RADIAL_N_XI);
        for i in 0..RADIAL_N_T {
            let u = -RADIAL_U_MAX + h * i as f64;
            let v = 0.5 * std::f64::consts::PI * u.sinh();
            // t = (1 + tanh v) / 2 evaluated without cancellation at either end
            let t = if v < 0.0 {
                let e = (2.0 * v).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + (-2.0 * v).exp())
            };
            let dt = 0.25 * std::f64::consts::PI * u.cosh() / v.cosh().powi(2);
            let wt = h * dt * t;
            if !(t > 0.0 && t < 1.0 && wt > 0.0) {
                continue;
            }
            for (xi, wx) in xis.iter().zip(&wxis) {
                nodes.push((t, *xi, wt * wx));
            }
        }
        RadialRule { nodes }
    })
}

/// Integral over the triangle (s, a, b) of a function singular at `s`,
/// via the radially power-mapped tensor rule.
fn radial_integrate(
    s: [f64; 2],
    a: [f64; 2],
    b: [f64; 2],
    f: &mut dyn FnMut([f64; 2]) -> f64,
) -> f64 {
    let area2 = ((a[0] - s[0]) * (b[1] - s[1]) - (b[0] - s[0]) * (a[1] - s[1])).abs();
    let rule = radial_rule();
    let mut acc = 0.0;
    for &(t, xi, w) in &rule.nodes {
        let qx = a[0] + xi * (b[0] - a[0]);
        let qy = a[1] + xi * (b[1] - a[1]);
        let x = s[0] + t * (qx - s[0]);
        let y = s[1] + t * (qy - s[1]);
        acc += w * f([x, y]);
    }
    acc * area2
}

/// Graded integration of `f` over `tri`, resolving a point singularity at the
/// vertex with local index `singular`. Ring cells use `base`; the innermost
/// cell (scale 2^-levels) uses the radial rule. `levels = 0` falls back to the
/// radial rule on the whole triangle.
pub fn graded_tri_integrate(
    tri: &[[f64; 2]; 3],
    singular: usize,
    levels: u32,
    base: &TriRule,
    f: &mut dyn FnMut([f64; 2]) -> f64,
) -> f64 {
    assert!(singular < 3, "singular vertex index out of range");
    let mid = |p: [f64; 2], q: [f64; 2]| [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
    // base rule on the four red children; one extra subdivision keeps the
    // ring truncation error far below the radial rule's accuracy
    let cell = |t: [[f64; 2]; 3], f: &mut dyn FnMut([f64; 2]) -> f64| {
        let m01 = mid(t[0], t[1]);
        let m12 = mid(t[1], t[2]);
        let m20 = mid(t[2], t[0]);
        integrate_tri(base, &[t[0], m01, m20], f)
            + integrate_tri(base, &[t[1], m12, m01], f)
            + integrate_tri(base, &[t[2], m20, m12], f)
            + integrate_tri(base, &[m01, m12, m20], f)
    };
    let s = tri[singular];
    let mut a = tri[(singular + 1) % 3];
    let mut b = tri[(singular + 2) % 3];
    let mut acc = 0.0;
    for _ in 0..levels {
        let ma = mid(s, a);
        let mb = mid(s, b);
        acc += cell([ma, a, b], f);
        acc += cell([ma, b, mb], f);
        a = ma;
        b = mb;
    }
    acc + radial_integrate(s, a, b, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    /// int_T x^i y^j over the reference triangle = i! j! / (i+j+2)!
    fn monomial_exact(i: u32, j: u32) -> f64 {
        let fact = |n: u32| (1..=n).map(|k| k as f64).product::<f64>().max(1.0);
        fact(i) * fact(j) / fact(i + j + 2)
    }

    #[test]
    fn tri_rules_integrate_monomials_exactly() {
        for degree in 1..=MAX_DEGREE {
            let rule = tri_rule(degree).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 0.5, epsilon = 1e-14);
            for i in 0..=degree as u32 {
                for j in 0..=(degree as u32 - i) {
                    let got = integrate_tri(&rule, &REF, &mut |p| {
                        p[0].powi(i as i32) * p[1].powi(j as i32)
                    });
                    assert_relative_eq!(got, monomial_exact(i, j), epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn degree_five_rule_on_x2y3() {
        let rule = tri_rule(5).unwrap();
        let got = integrate_tri(&rule, &REF, &mut |p| p[0] * p[0] * p[1].powi(3));
        assert_relative_eq!(got, 1.0 / 420.0, epsilon = 1e-16);
    }

    #[test]
    fn edge_rules_integrate_monomials_exactly() {
        for degree in 1..=MAX_DEGREE {
            let rule = edge_rule(degree).unwrap();
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            assert_relative_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
            for k in 0..=degree {
                let exact = 1.0 / (k as f64 + 1.0);
                let got: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(t, w)| w * t.powi(k as i32))
                    .sum();
                assert_relative_eq!(got, exact, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn edge_rule_degree_one_is_midpoint() {
        let rule = edge_rule(1).unwrap();
        assert_eq!(rule.points.len(), 1);
        assert_relative_eq!(rule.points[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(rule.weights[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn edge_rule_t4() {
        let rule = edge_rule(4).unwrap();
        let got = integrate_edge(&rule, [0.0, 0.0], [1.0, 0.0], &mut |p| p[0].powi(4));
        assert_relative_eq!(got, 0.2, epsilon = 1e-15);
    }

    #[test]
    fn unsupported_degrees_are_rejected() {
        assert_eq!(tri_rule(0).unwrap_err(), QuadError::UnsupportedDegree(0));
        assert_eq!(tri_rule(11).unwrap_err(), QuadError::UnsupportedDegree(11));
        assert_eq!(edge_rule(0).unwrap_err(), QuadError::UnsupportedDegree(0));
    }

    #[test]
    fn graded_equals_plain_on_polynomials() {
        let base = tri_rule(10).unwrap();
        let tri = [[0.2, -0.1], [1.3, 0.4], [0.1, 1.1]];
        let mut poly = |p: [f64; 2]| {
            1.5 - 2.0 * p[0] + p[1] * p[1] * p[0] + 0.3 * p[0].powi(4) * p[1].powi(3)
        };
        let plain = integrate_tri(&base, &tri, &mut poly);
        for levels in [1u32, 6, 14] {
            let graded = graded_tri_integrate(&tri, 1, levels, &base, &mut poly);
            assert_relative_eq!(graded, plain, max_relative = 1e-13);
        }
    }

    #[test]
    fn graded_constant_gives_area() {
        let base = tri_rule(4).unwrap();
        let tri = [[0.0, 0.0], [2.0, 0.0], [0.0, 3.0]];
        for levels in [0u32, 1, 5, 14] {
            let got = graded_tri_integrate(&tri, 0, levels, &base, &mut |_| 1.0);
            assert_relative_eq!(got, 3.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn graded_resolves_strong_corner_singularity() {
        // int over the unit right triangle of r^-1.8
        //   = 5 * int_0^{pi/2} (cos t + sin t)^-0.2 dt = 7.492613949133883
        let base = tri_rule(10).unwrap();
        let mut f = |p: [f64; 2]| (p[0] * p[0] + p[1] * p[1]).powf(-0.9);
        let v12 = graded_tri_integrate(&REF, 0, 12, &base, &mut f);
        let v16 = graded_tri_integrate(&REF, 0, 16, &base, &mut f);
        assert!(((v12 - v16) / v16).abs() < 1e-6, "v12={v12} v16={v16}");
        assert_relative_eq!(v16, 7.492613949133883, max_relative = 5e-5);
    }

    #[test]
    fn graded_resolves_mild_corner_singularity() {
        let base = tri_rule(10).unwrap();
        let mut f = |p: [f64; 2]| (p[0] * p[0] + p[1] * p[1]).powf(-0.45);
        let v12 = graded_tri_integrate(&REF, 0, 12, &base, &mut f);
        let v16 = graded_tri_integrate(&REF, 0, 16, &base, &mut f);
        assert!(((v12 - v16) / v16).abs() < 1e-6);
    }

    #[test]
    fn graded_handles_any_singular_corner_index() {
        let base = tri_rule(10).unwrap();
        let tri = [[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]];
        let mut f = |p: [f64; 2]| (p[0] * p[0] + p[1] * p[1]).powf(-0.9);
        let v = graded_tri_integrate(&tri, 2, 16, &base, &mut f);
        assert_relative_eq!(v, 7.492613949133883, max_relative = 5e-5);
    }
}
