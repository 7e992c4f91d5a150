//! Adaptive solve-estimate-mark-refine loop with bulk marking.

use crate::estimator::{indicators, IndicatorReport};
use crate::fem::{assemble, broken_energy_norm, solve_with, true_error, CrSolution, FemError,
    SolveStrategy, DEFAULT_GRADING};
use crate::mesh::{bisect, Mesh, MeshError};
use crate::problems::ProblemSpec;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Standard,
    Modified,
    Tangential,
}

#[derive(Debug, Clone, Copy)]
pub struct AdaptOptions {
    pub estimator: EstimatorKind,
    /// Bulk fraction of the squared estimate covered by marked elements.
    pub theta: f64,
    /// Target relative error (estimated when no exact solution is known).
    pub tol: f64,
    /// Refinement rounds allowed before giving up.
    pub max_steps: usize,
    /// Grading depth for quadrature near singular points.
    pub grading: u32,
    pub solver_tol: f64,
    pub strategy: SolveStrategy,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        AdaptOptions {
            estimator: EstimatorKind::Standard,
            theta: 0.2,
            tol: 0.1,
            max_steps: 400,
            grading: DEFAULT_GRADING,
            solver_tol: 1e-10,
            strategy: SolveStrategy::Auto,
        }
    }
}

/// One row of the convergence history. `eta` is the global estimate of the
/// running estimator family (standard or tangential); `eta_tilde` always
/// reports the modified estimate.
#[derive(Debug, Clone, Copy)]
pub struct ConvergenceRecord {
    pub step: usize,
    pub elements: usize,
    pub dofs: usize,
    pub true_error: Option<f64>,
    pub rel_err: Option<f64>,
    pub eta: f64,
    pub eta_tilde: f64,
    pub eff_eta: Option<f64>,
    pub eff_eta_tilde: Option<f64>,
    pub marked: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxSteps,
}

pub struct AdaptOutcome {
    pub records: Vec<ConvergenceRecord>,
    pub reason: StopReason,
    pub mesh: Mesh,
    pub solution: CrSolution,
    pub report: IndicatorReport,
}

/// Bulk marking on squared indicators: the smallest set of elements, by
/// decreasing indicator with index ties broken low, whose squared sum reaches
/// theta times the total. Returned sorted by element id.
pub fn mark(indicator_sq: &[f64], theta: f64) -> Vec<usize> {
    let total: f64 = indicator_sq.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicator_sq.len()).collect();
    order.sort_by(|&a, &b| {
        indicator_sq[b]
            .total_cmp(&indicator_sq[a])
            .then(a.cmp(&b))
    });
    let target = theta * total;
    let mut acc = 0.0;
    let mut out = Vec::new();
    for k in order {
        if acc >= target || indicator_sq[k] == 0.0 {
            break;
        }
        acc += indicator_sq[k];
        out.push(k);
    }
    out.sort_unstable();
    out
}

fn active_sq(report: &IndicatorReport, kind: EstimatorKind) -> Vec<f64> {
    report
        .elements
        .iter()
        .map(|i| match kind {
            EstimatorKind::Standard => i.eta_sq(),
            EstimatorKind::Modified => i.eta_mod_sq(),
            EstimatorKind::Tangential => i.eta_tan_sq(),
        })
        .collect()
}

fn active_total(report: &IndicatorReport, kind: EstimatorKind) -> f64 {
    match kind {
        EstimatorKind::Standard | EstimatorKind::Modified => report.eta,
        EstimatorKind::Tangential => report.eta_tan,
    }
}

/// Run the adaptive loop. The callback sees every record as it is produced,
/// together with the mesh and indicator report of that step.
pub fn adaptive_solve(
    spec: &ProblemSpec,
    opts: &AdaptOptions,
    mut on_step: impl FnMut(&ConvergenceRecord, &Mesh, &IndicatorReport),
) -> Result<AdaptOutcome, AdaptError> {
    let exact_norm = spec
        .exact
        .as_ref()
        .and_then(|e| e.energy_norm_sq)
        .map(f64::sqrt);
    let mut mesh = spec.initial_mesh();
    let mut records = Vec::new();
    let mut step = 0;
    loop {
        let system = assemble(&mesh, spec);
        let u = solve_with(&system, opts.solver_tol, opts.strategy)?;
        let report = indicators(&mesh, spec, &u)?;

        let err = match (&spec.exact, exact_norm) {
            (Some(_), _) => Some(true_error(&mesh, spec, &u, opts.grading)?),
            _ => None,
        };
        let rel = match (err, exact_norm) {
            (Some(e), Some(n)) => Some(e / n),
            _ => None,
        };
        let eta = active_total(&report, opts.estimator);
        let marking = match opts.estimator {
            EstimatorKind::Standard => report.eta,
            EstimatorKind::Modified => report.eta_mod,
            EstimatorKind::Tangential => report.eta_tan,
        };
        let converged = match rel {
            Some(r) => r <= opts.tol,
            None => {
                // estimated relative error against the discrete energy
                let uh = broken_energy_norm(&mesh, &u);
                marking <= opts.tol * (marking * marking + uh * uh).sqrt()
            }
        };
        let done = converged || step >= opts.max_steps;

        let marked = if done {
            Vec::new()
        } else {
            mark(&active_sq(&report, opts.estimator), opts.theta)
        };
        let record = ConvergenceRecord {
            step,
            elements: mesh.n_elements(),
            dofs: system.n,
            true_error: err,
            rel_err: rel,
            eta,
            eta_tilde: report.eta_mod,
            eff_eta: err.map(|e| eta / e),
            eff_eta_tilde: err.map(|e| report.eta_mod / e),
            marked: marked.len(),
        };
        on_step(&record, &mesh, &report);
        records.push(record);

        if done {
            let reason = if converged {
                StopReason::Converged
            } else {
                StopReason::MaxSteps
            };
            return Ok(AdaptOutcome {
                records,
                reason,
                mesh,
                solution: u,
                report,
            });
        }
        mesh = bisect(&mesh, &marked)?.0;
        step += 1;
    }
}

/// Least-squares slope of log(true_error) against log(dofs) over the last
/// `tail` fraction of the records; None with fewer than three usable points.
pub fn convergence_slope(records: &[ConvergenceRecord], tail: f64) -> Option<f64> {
    let pts: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| {
            r.true_error
                .filter(|e| *e > 0.0 && r.dofs > 0)
                .map(|e| ((r.dofs as f64).ln(), e.ln()))
        })
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let take = ((pts.len() as f64 * tail).ceil() as usize).clamp(3, pts.len());
    let pts = &pts[pts.len() - take..];
    let n = pts.len() as f64;
    let sx: f64 = pts.iter().map(|p| p.0).sum();
    let sy: f64 = pts.iter().map(|p| p.1).sum();
    let sxx: f64 = pts.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = pts.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{criss_cross_square, unit_square_two_tri, Point};
    use crate::problems::{ExactSolution, Poly2, SegmentData, Source};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    #[test]
    fn bulk_marking_covers_the_requested_fraction() {
        // equal indicators: ceil(theta n) elements
        let sq = vec![1.0; 16];
        assert_eq!(mark(&sq, 0.2).len(), 4);
        assert_eq!(mark(&sq, 0.5).len(), 8);
        assert_eq!(mark(&sq, 1.0).len(), 16);
        // theta = 1 marks every nonzero element, zeros never marked
        let sq = vec![0.5, 0.0, 2.0, 0.0, 1.0];
        assert_eq!(mark(&sq, 1.0), vec![0, 2, 4]);
        assert_eq!(mark(&sq, 0.57), vec![2]);
        assert_eq!(mark(&sq, 0.58), vec![2, 4]);
        // all-zero field marks nothing
        assert!(mark(&[0.0; 4], 0.5).is_empty());
        // ties resolved toward low element ids
        let sq = vec![1.0, 1.0, 1.0, 1.0];
        assert_eq!(mark(&sq, 0.5), vec![0, 1]);
    }

    fn linear_spec() -> ProblemSpec {
        let m = criss_cross_square(&[2.0, 2.0, 2.0, 2.0]);
        let g = Poly2 {
            terms: vec![(2.0, 1, 0), (3.0, 0, 1), (-1.0, 0, 0)],
        };
        // |grad u|^2 = 13, alpha = 2, area = 4
        let exact = ExactSolution {
            value: Arc::new(|p: Point| 2.0 * p[0] + 3.0 * p[1] - 1.0),
            gradient: Arc::new(|_| [2.0, 3.0]),
            energy_norm_sq: Some(104.0),
            energy_note: "analytic".to_string(),
        };
        ProblemSpec::new(
            "linear",
            m,
            Source::Zero,
            vec![SegmentData::from_poly(&g)],
            Some(exact),
        )
    }

    #[test]
    fn representable_solutions_converge_immediately() {
        let spec = linear_spec();
        let mut seen = 0;
        let out = adaptive_solve(&spec, &AdaptOptions::default(), |r, m, _| {
            seen += 1;
            assert_eq!(r.step, 0);
            assert_eq!(r.elements, m.n_elements());
        })
        .unwrap();
        assert_eq!(out.reason, StopReason::Converged);
        assert_eq!(out.records.len(), 1);
        assert_eq!(seen, 1);
        let r = &out.records[0];
        assert!(r.rel_err.unwrap() < 1e-10);
        assert_eq!(r.marked, 0);
        assert!(r.eta < 1e-9);
    }

    #[test]
    fn estimated_stopping_without_exact_solution() {
        let m = unit_square_two_tri(1.0);
        let spec = ProblemSpec::new(
            "forced",
            m,
            Source::PerSubdomain(vec![Poly2::constant(1.0)]),
            vec![SegmentData::zero()],
            None,
        );
        let opts = AdaptOptions {
            tol: 0.8,
            theta: 0.6,
            max_steps: 40,
            ..AdaptOptions::default()
        };
        let out = adaptive_solve(&spec, &opts, |r, _, _| {
            assert!(r.true_error.is_none() && r.rel_err.is_none());
        })
        .unwrap();
        assert_eq!(out.reason, StopReason::Converged);
        let first = out.records.first().unwrap();
        let last = out.records.last().unwrap();
        assert!(last.eta < first.eta);
        assert!(out.mesh.n_elements() > 2);
    }

    #[test]
    fn max_steps_is_respected() {
        let spec = ProblemSpec::new(
            "forced",
            unit_square_two_tri(1.0),
            Source::PerSubdomain(vec![Poly2::constant(1.0)]),
            vec![SegmentData::zero()],
            None,
        );
        let opts = AdaptOptions {
            tol: 1e-9,
            max_steps: 2,
            theta: 0.5,
            ..AdaptOptions::default()
        };
        let out = adaptive_solve(&spec, &opts, |_, _, _| {}).unwrap();
        assert_eq!(out.reason, StopReason::MaxSteps);
        assert_eq!(out.records.len(), 3);
        assert_eq!(out.records.last().unwrap().marked, 0);
        let e: Vec<usize> = out.records.iter().map(|r| r.elements).collect();
        assert!(e[0] < e[1] && e[1] < e[2]);
    }

    #[test]
    fn slope_recovers_synthetic_rates() {
        let mut records = Vec::new();
        for i in 1..=12 {
            let dofs = 10 * 1 << i;
            records.push(ConvergenceRecord {
                step: i,
                elements: dofs,
                dofs,
                true_error: Some(3.0 * (dofs as f64).powf(-0.5)),
                rel_err: None,
                eta: 0.0,
                eta_tilde: 0.0,
                eff_eta: None,
                eff_eta_tilde: None,
                marked: 0,
            });
        }
        let s = convergence_slope(&records, 0.5).unwrap();
        assert_relative_eq!(s, -0.5, epsilon = 1e-12);
        assert!(convergence_slope(&records[..2], 1.0).is_none());
    }
}
