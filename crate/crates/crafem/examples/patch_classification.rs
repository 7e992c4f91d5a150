//! Quasi-monotonicity classification around mesh vertices.
//!
//! A vertex patch is quasi-monotone when every element can reach the
//! maximal-coefficient elements (or the Dirichlet boundary) through a
//! connected arc of no-smaller coefficients. The checkerboard center is the
//! canonical failure: both high-coefficient quadrants are maximal, but any
//! arc joining them has to pass through a low-coefficient quadrant.

use crafem::estimator::{classify_patches, classify_vertex, non_monotone_vertices};
use crafem::mesh::criss_cross_square;
use crafem::problems::kellogg_problem;

fn main() {
    // four quadrants, alternating coefficient, eight triangles
    let mesh = criss_cross_square(&[100.0, 1.0, 100.0, 1.0]);
    let center = 4; // the interior vertex at the origin

    let patch = classify_vertex(&mesh, center).unwrap();
    println!("checkerboard center:");
    println!("  quasi-monotone: {}", patch.quasi_monotone);
    println!("  anchor element: {:?}", patch.anchor);
    for (k, c) in &patch.path_constants {
        println!("  element {k}: C = {c}");
    }

    // straight interface: high coefficients on one side only
    let mesh = criss_cross_square(&[100.0, 100.0, 1.0, 1.0]);
    let patch = classify_vertex(&mesh, center).unwrap();
    println!("\nstraight interface:");
    println!("  quasi-monotone: {}", patch.quasi_monotone);

    // the checkerboard benchmark: exactly one bad vertex, at the origin
    let spec = kellogg_problem();
    let mesh = spec.initial_mesh();
    let patches = classify_patches(&mesh).unwrap();
    let bad = non_monotone_vertices(&patches);
    println!("\ncheckerboard benchmark, initial mesh:");
    println!("  vertices: {}", mesh.n_vertices());
    for &z in &bad {
        println!(
            "  non-quasi-monotone vertex {z} at ({}, {})",
            mesh.vertices[z][0], mesh.vertices[z][1]
        );
    }
}
