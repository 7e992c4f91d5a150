//! Exact error representation: a_h(E, E) equals the residual of the volume,
//! flux-jump, and solution-jump terms, evaluated against E minus an
//! admissible comparison function E_h.
//!
//! With E_h = 0 the identity is plain; with E_h the Clement interpolant of E
//! it only holds when the interpolant is zeroed on Dirichlet edges, which is
//! what makes the zeroed variant admissible.

use crafem::fem::{assemble, error_representation, solve, ErrorComparison};
use crafem::mesh::{bisect, grid_unit_square, Point};
use crafem::problems::{ExactSolution, Poly2, ProblemSpec, SegmentData, Source};
use std::sync::Arc;

fn main() {
    // u = x^2 + y^2, f = -4, Dirichlet on bottom+right, Neumann on top+left
    let mut mesh = grid_unit_square(4, 1.0, true);
    mesh = bisect(&mesh, &(0..mesh.n_elements()).collect::<Vec<_>>()).unwrap().0;
    let g = Poly2 {
        terms: vec![(1.0, 2, 0), (1.0, 0, 2)],
    };
    let exact = ExactSolution {
        value: Arc::new(|p: Point| p[0] * p[0] + p[1] * p[1]),
        gradient: Arc::new(|p: Point| [2.0 * p[0], 2.* p[1]]),
        energy_norm_sq: None,
        energy_note: String::new(),
    };
    let spec = ProblemSpec::new(
        "quadratic",
        mesh,
        Source::PerSubdomain(vec![Poly2::constant(-4.0)]),
        vec![
            SegmentData::from_poly(&g),
            SegmentData::from_poly(&Poly2::constant(2.0)), // g_N = grad u . n on y = 1
            SegmentData::from_poly(&Poly2::constant(0.0)), // g_N on x = 0
        ],
        Some(exact),
    );
    let mesh = spec.initial_mesh();
    println!("{} elements", mesh.n_elements());

    let u = solve(&assemble(&mesh, &spec), 1e-12).unwrap();

    for (label, cmp) in [
        ("E_h = 0", ErrorComparison::Zero),
        ("E_h = Clement, Dirichlet-zeroed", ErrorComparison::Clement { dirichlet_zero: true }),
        ("E_h = Clement, not zeroed", ErrorComparison::Clement { dirichlet_zero: false }),
    ] {
        let parts = error_representation(&mesh, &spec, &u, cmp, 0).unwrap();
        println!("\n{label}:");
        println!("  a_h(E,E)      = {:.12e}", parts.energy_sq);
        println!("  volume term   = {:+.12e}", parts.volume);
        println!("  flux term     = {:+.12e}", -parts.flux);
        println!("  jump term     = {:+.12e}", -parts.jump);
        println!(
            "  residual      = {:.2e} (relative)",
            (parts.energy_sq - parts.rhs()).abs() / parts.energy_sq
        );
    }
}
