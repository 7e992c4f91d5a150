//! Newest-vertex bisection with conforming closure, and half refinement.

use crafem::mesh::{bisect, half_refine, unit_square_two_tri, write_mesh};

fn main() {
    let mesh = unit_square_two_tri(1.0);
    println!(
        "start: {} vertices, {} elements, {} edges",
        mesh.n_vertices(),
        mesh.n_elements(),
        mesh.edges.len()
    );

    // bisecting one element forces its neighbor to split too (closure keeps
    // the triangulation conforming)
    let (mesh, parents) = bisect(&mesh, &[0]).unwrap();
    println!(
        "after marking element 0: {} elements (parents: {:?})",
        mesh.n_elements(),
        parents
    );

    // drive refinement into the corner at the origin
    let mut mesh = mesh;
    for _ in 0..6 {
        let touching: Vec<usize> = (0..mesh.n_elements())
            .filter(|&k| {
                mesh.tri_coords(k)
                    .iter()
                    .any(|p| p[0].abs() < 1e-12 && p[1].abs() < 1e-12)
            })
            .collect();
        mesh = bisect(&mesh, &touching).unwrap().0;
    }
    let h_min = (0..mesh.n_elements())
        .map(|k| mesh.tri_diameter(k))
        .fold(f64::INFINITY, f64::min);
    let h_max = (0..mesh.n_elements())
        .map(|k| mesh.tri_diameter(k))
        .fold(0.0f64, f64::max);
    println!(
        "after 6 rounds at the corner: {} elements, h in [{h_min:.3e}, {h_max:.3e}]",
        mesh.n_elements()
    );

    // red subdivision of every element, used by the half-mesh interpolation
    let half = half_refine(&mesh);
    println!(
        "half refinement: {} -> {} elements, old edge midpoints become vertices {}..{}",
        mesh.n_elements(),
        half.mesh.n_elements(),
        half.n_parent_vertices,
        half.mesh.n_vertices() - 1
    );

    // text round-trip format
    let text = write_mesh(&unit_square_two_tri(1.0));
    println!("\nmesh text format:\n{text}");
}
