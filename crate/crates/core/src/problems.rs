//! High-level solver entry points and distortion sweeps.

use crate::copulas::SourceSpec;
use crate::error::{RdpfError, Result};
use crate::marginals::MarginalFamily;
use crate::optimizer::{run_estimation, run_fixed_theta, OptimizerConfig, SolveResult};
use crate::projection::{mutual_information, DistortionKind, MultiplierVector, ProjectionProblem};
use rayon::prelude::*;

/// Analytic distortion floor for the case where both specs are Gaussian under
/// MSE: the squared mean difference plus the squared scale difference, summed
/// over coordinates. Below it no coupling can meet the constraint.
fn gaussian_mse_floor(source: &SourceSpec, target: &SourceSpec) -> Option<f64> {
    let all_gaussian = source
        .marginals()
        .iter()
        .chain(target.marginals())
        .all(|m| m.family() == MarginalFamily::Gaussian);
    if !all_gaussian {
        return None;
    }
    let mut floor = 0.0;
    for (mx, my) in source.marginals().iter().zip(target.marginals()) {
        let dm = mx.mean() - my.mean();
        let ds = mx.scale() - my.scale();
        floor += dm * dm + ds * ds;
    }
    Some(floor)
}

/// Solves the output-constrained rate-distortion instance at level `d`.
pub fn solve_ocrdf(
    source: &SourceSpec,
    target: &SourceSpec,
    kind: DistortionKind,
    d: f64,
    moment_order: usize,
    config: &OptimizerConfig,
) -> Result<SolveResult> {
    if kind == DistortionKind::Mse {
        if let Some(floor) = gaussian_mse_floor(source, target) {
            if d < floor {
                return Err(RdpfError::Domain(format!(
                    "distortion {d} is below the Gaussian MSE feasibility floor {floor}"
                )));
            }
        }
    }
    let problem = ProjectionProblem::new(source.clone(), target.clone(), kind, d, moment_order)?;
    run_estimation(&problem, config, None)
}

/// Perfect-realism instance: the target distribution equals the source.
pub fn solve_prrdpf(
    source: &SourceSpec,
    kind: DistortionKind,
    d: f64,
    moment_order: usize,
    config: &OptimizerConfig,
) -> Result<SolveResult> {
    solve_ocrdf(source, source, kind, d, moment_order, config)
}

/// Entropic-optimal-transport value at regularization `epsilon`.
#[derive(Debug, Clone)]
pub struct EotSolution {
    /// `E[Delta] + epsilon * I` at the solution.
    pub d_eot: f64,
    /// Mutual information of the optimal coupling, in nats.
    pub coupling_rate_nats: f64,
    /// `E[Delta]` of the optimal coupling.
    pub achieved_distortion: f64,
    pub epsilon: f64,
    pub multipliers: MultiplierVector,
    pub converged: bool,
}

/// Solves the EOT problem by pinning the distortion multiplier to the slope
/// `theta = -1/epsilon` and optimizing the remaining dual coordinates. The
/// slope is the natural parameter of the correspondence between the
/// distortion-constrained and entropy-regularized problems, so no bisection
/// over distortion levels is needed.
pub fn solve_eot(
    source: &SourceSpec,
    target: &SourceSpec,
    kind: DistortionKind,
    epsilon: f64,
    moment_order: usize,
    config: &OptimizerConfig,
) -> Result<EotSolution> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(RdpfError::InvalidParameter(format!(
            "epsilon must be finite and positive (got {epsilon})"
        )));
    }
    // The distortion level enters the dual only through the frozen theta
    // coordinate; use a placeholder of 1 and reconstruct the rate from the
    // measured distortion below.
    let problem = ProjectionProblem::new(source.clone(), target.clone(), kind, 1.0, moment_order)?;
    let mut init = MultiplierVector::zeros_for(&problem);
    init.theta = -1.0 / epsilon;
    let result = run_fixed_theta(&problem, config, init)?;
    let achieved = result.achieved_distortion;
    // KL(Q||R) with the measured distortion in place of the placeholder level
    let rate = mutual_information(&result.multipliers, &problem)
        + result.multipliers.theta * (achieved - problem.distortion());
    Ok(EotSolution {
        d_eot: achieved + epsilon * rate,
        coupling_rate_nats: rate,
        achieved_distortion: achieved,
        epsilon,
        multipliers: result.multipliers,
        converged: result.converged,
    })
}

/// One solved point of a rate-distortion curve.
#[derive(Debug, Clone)]
pub struct CurvePoint {
    pub distortion: f64,
    pub rate_nats: f64,
    pub achieved_distortion: f64,
    pub residual_max: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct CurveMetadata {
    pub description: String,
    pub moment_order: usize,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
}

/// A solved rate-distortion curve; failed points are recorded separately and
/// do not abort the sweep.
#[derive(Debug, Clone)]
pub struct RDCurve {
    pub points: Vec<CurvePoint>,
    pub failures: Vec<(f64, String)>,
    pub metadata: CurveMetadata,
}

impl RDCurve {
    pub fn total_iterations(&self) -> usize {
        self.points.iter().map(|p| p.iterations).sum()
    }
}

/// Sweep execution strategy.
#[derive(Debug, Clone, Copy)]
pub struct SweepOptions {
    /// Chain the solution of each point into the next (high to low
    /// distortion); implies sequential execution.
    pub warm_start: bool,
    /// Solve points concurrently with per-point generator streams. Ignored
    /// when warm starts are requested.
    pub parallel: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self { warm_start: true, parallel: false }
    }
}

fn point_seed(base: u64, index: usize) -> u64 {
    // splitmix-style decorrelation of per-point generator streams
    let mut z = base.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn curve_point(d: f64, result: &SolveResult) -> CurvePoint {
    CurvePoint {
        distortion: d,
        rate_nats: result.mi_nats,
        achieved_distortion: result.achieved_distortion,
        residual_max: result.residuals.max_abs(),
        iterations: result.iterations_used(),
        converged: result.converged,
    }
}

/// Solves a strictly increasing distortion grid and assembles the curve in
/// ascending order. Warm-started sweeps walk the grid from high to low
/// distortion, seeding each solve with the previous multipliers: the dual
/// sharpens as the distortion drops, so starting from the flat end is the
/// stable direction.
pub fn sweep_curve(
    source: &SourceSpec,
    target: &SourceSpec,
    kind: DistortionKind,
    d_grid: &[f64],
    moment_order: usize,
    config: &OptimizerConfig,
    options: &SweepOptions,
    description: &str,
) -> Result<RDCurve> {
    if d_grid.is_empty() {
        return Err(RdpfError::InvalidArgument("distortion grid is empty".into()));
    }
    if d_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RdpfError::InvalidArgument("distortion grid must be strictly increasing".into()));
    }
    if d_grid[0] <= 0.0 {
        return Err(RdpfError::InvalidArgument("distortion grid must be positive".into()));
    }
    let template = ProjectionProblem::new(source.clone(), target.clone(), kind, d_grid[0], moment_order)?;

    let metadata = CurveMetadata {
        description: description.to_string(),
        moment_order,
        batch_size: config.batch_size,
        iterations: config.iterations,
        seed: config.seed,
    };

    let mut points: Vec<(usize, CurvePoint)> = Vec::with_capacity(d_grid.len());
    let mut failures: Vec<(f64, String)> = Vec::new();

    if options.warm_start {
        let mut warm: Option<MultiplierVector> = None;
        for (rank, idx) in (0..d_grid.len()).rev().enumerate() {
            let d = d_grid[idx];
            let problem = template.with_distortion(d)?;
            let cfg = OptimizerConfig { seed: point_seed(config.seed, rank), ..config.clone() };
            match run_estimation(&problem, &cfg, warm.clone()) {
                Ok(result) => {
                    warm = Some(result.multipliers.clone());
                    points.push((idx, curve_point(d, &result)));
                }
                Err(e) => failures.push((d, e.to_string())),
            }
        }
    } else {
        let solve_one = |(idx, &d): (usize, &f64)| -> (usize, std::result::Result<CurvePoint, (f64, String)>) {
            let cfg = OptimizerConfig { seed: point_seed(config.seed, idx), ..config.clone() };
            match template
                .with_distortion(d)
                .and_then(|problem| run_estimation(&problem, &cfg, None))
            {
                Ok(result) => (idx, Ok(curve_point(d, &result))),
                Err(e) => (idx, Err((d, e.to_string()))),
            }
        };
        let solved: Vec<_> = if options.parallel {
            d_grid.par_iter().enumerate().map(solve_one).collect()
        } else {
            d_grid.iter().enumerate().map(solve_one).collect()
        };
        for (idx, outcome) in solved {
            match outcome {
                Ok(p) => points.push((idx, p)),
                Err(f) => failures.push(f),
            }
        }
    }

    points.sort_by_key(|(idx, _)| *idx);
    failures.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(RDCurve { points: points.into_iter().map(|(_, p)| p).collect(), failures, metadata })
}
