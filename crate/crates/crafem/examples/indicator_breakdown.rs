//! Per-element error indicator components on one checkerboard solve.

use crafem::estimator::indicators;
use crafem::fem::{assemble, solve};
use crafem::mesh::bisect;
use crafem::problems::kellogg_problem;

fn main() {
    let spec = kellogg_problem();
    let mut mesh = spec.initial_mesh();
    for _ in 0..3 {
        mesh = bisect(&mesh, &(0..mesh.n_elements()).collect::<Vec<_>>())
            .unwrap()
            .0;
    }

    let u = solve(&assemble(&mesh, &spec), 1e-10).unwrap();
    let report = indicators(&mesh, &spec, &u).unwrap();

    println!("non-quasi-monotone vertices: {:?}", report.non_monotone);
    println!(
        "eta = {:.6e}, eta_tilde = {:.6e}, eta_tan = {:.6e}\n",
        report.eta, report.eta_mod, report.eta_tan
    );

    let mut order: Vec<usize> = (0..mesh.n_elements()).collect();
    order.sort_by(|&a, &b| {
        report.elements[b]
            .eta_sq()
            .total_cmp(&report.elements[a].eta_sq())
    });

    println!("ten largest indicators:");
    println!(
        "{:>5} {:>7} {:>12} {:>12} {:>12} {:>12} {:>12}",
        "elt", "alpha", "rf^2", "jsigma^2", "ju^2", "ju_mod^2", "eta"
    );
    for &k in order.iter().take(10) {
        let i = &report.elements[k];
        println!(
            "{:>5} {:>7.1} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e} {:>12.4e}",
            k,
            mesh.alpha_of(k),
            i.rf_sq,
            i.jsigma_sq,
            i.ju_sq,
            i.ju_mod_sq,
            i.eta()
        );
    }

    // with f = 0 and piecewise constant coefficients the flux jumps vanish:
    // the whole estimate is carried by the solution jumps
    let jsig: f64 = report.elements.iter().map(|i| i.jsigma_sq).sum();
    let rf: f64 = report.elements.iter().map(|i| i.rf_sq).sum();
    println!("\nsum rf^2 = {rf:.3e}, sum jsigma^2 = {jsig:.3e}");
}
