//! Brute-force validation on discretized scalar instances.
//!
//! The unit square is covered by `G x G` midpoint cells; the projection then
//! becomes a finite-dimensional convex program solved two independent ways:
//! exact-sum Newton on the dual, and cyclic iterative scaling on the primal.
//! Their agreement (strong duality) and the agreement with the Monte-Carlo
//! pipeline certify the shared core.
//!
//! Moment targets use the discrete midpoint moments rather than `1/(n+1)`:
//! on the grid, the exactly-uniform marginal (every bin mass `1/G`) satisfies
//! the discrete moments but not the continuous ones, and the relaxation
//! ladder is only monotone up to its full-marginal cap when the targets are
//! consistent with that cap.

use crate::error::{RdpfError, Result};
use crate::projection::{MultiplierVector, ProjectionProblem};
use nalgebra::{DMatrix, DVector};

/// A discretized scalar projection instance (`2d = 2` only).
#[derive(Debug, Clone)]
pub struct GridInstance {
    points_per_axis: usize,
    centers: Vec<f64>,
    /// Normalized reference weights, row-major over (source cell, target cell).
    ref_weights: Vec<f64>,
    /// Distortion at each cell center pair.
    distortion: Vec<f64>,
}

impl GridInstance {
    /// Discretizes the copula square of a scalar problem with `g` midpoint
    /// cells per axis. The distortion level and moment order of `problem` are
    /// not baked in; they are arguments of the solve calls.
    pub fn new(problem: &ProjectionProblem, g: usize) -> Result<Self> {
        if problem.dim() != 1 {
            return Err(RdpfError::InvalidArgument(
                "the grid oracle only handles scalar sources (2d = 2)".into(),
            ));
        }
        if g < 4 {
            return Err(RdpfError::InvalidArgument("grid needs at least 4 points per axis".into()));
        }
        let centers: Vec<f64> = (0..g).map(|i| (i as f64 + 0.5) / g as f64).collect();
        let mut ref_weights = vec![0.0f64; g * g];
        let mut distortion = vec![0.0f64; g * g];
        let mut total = 0.0;
        for (i, &ux) in centers.iter().enumerate() {
            for (j, &uy) in centers.iter().enumerate() {
                let u = [ux, uy];
                let w = problem.reference_log_density(&u).exp();
                ref_weights[i * g + j] = w;
                distortion[i * g + j] = problem.distortion_at(&u);
                total += w;
            }
        }
        for w in ref_weights.iter_mut() {
            *w /= total;
        }
        Ok(Self { points_per_axis: g, centers, ref_weights, distortion })
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Discrete `n`-th midpoint moment of the uniform marginal.
    pub fn alpha_hat(&self, n: usize) -> f64 {
        self.centers.iter().map(|c| c.powi(n as i32)).sum::<f64>() / self.points_per_axis as f64
    }

    /// Mean distortion under the reference measure.
    pub fn reference_distortion(&self) -> f64 {
        self.ref_weights.iter().zip(&self.distortion).map(|(w, d)| w * d).sum()
    }

    fn check_distortion_feasible(&self, d: f64) -> Result<()> {
        let min = self.distortion.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.distortion.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !(d > min && d < max) {
            return Err(RdpfError::Domain(format!(
                "distortion {d} outside the grid-achievable open interval ({min}, {max})"
            )));
        }
        Ok(())
    }

    /// Feature vector of cell `(i, j)`: `(1, Delta, u1..u1^N, u2..u2^N)`.
    fn feature_into(&self, i: usize, j: usize, order: usize, out: &mut [f64]) {
        out[0] = 1.0;
        out[1] = self.distortion[i * self.points_per_axis + j];
        let mut p = 1.0;
        for n in 0..order {
            p *= self.centers[i];
            out[2 + n] = p;
        }
        let mut p = 1.0;
        for n in 0..order {
            p *= self.centers[j];
            out[2 + order + n] = p;
        }
    }

    fn targets(&self, d: f64, order: usize) -> Vec<f64> {
        let mut b = Vec::with_capacity(2 + 2 * order);
        b.push(1.0);
        b.push(d);
        for n in 1..=order {
            b.push(self.alpha_hat(n));
        }
        for n in 1..=order {
            b.push(self.alpha_hat(n));
        }
        b
    }
}

/// Exact-sum Newton solve of the dual on the grid, to gradient norm 1e-10.
/// Returns the rate in nats and the converged multipliers.
pub fn grid_dual_solve(
    instance: &GridInstance,
    d: f64,
    order: usize,
) -> Result<(f64, MultiplierVector)> {
    if order == 0 {
        return Err(RdpfError::InvalidArgument("moment order must be at least 1".into()));
    }
    instance.check_distortion_feasible(d)?;
    let g = instance.points_per_axis;
    let dim = 2 + 2 * order;
    let b = DVector::from_vec(instance.targets(d, order));
    let mut l = DVector::<f64>::zeros(dim);

    // objective, gradient and Hessian of the exact finite dual at l
    let eval = |l: &DVector<f64>, want_hessian: bool| {
        let mut feature = vec![0.0f64; dim];
        let mut grad = DVector::<f64>::zeros(dim);
        let mut hess = DMatrix::<f64>::zeros(dim, dim);
        let mut expectation = 0.0f64;
        for i in 0..g {
            for j in 0..g {
                let r = instance.ref_weights[i * g + j];
                if r == 0.0 {
                    continue;
                }
                instance.feature_into(i, j, order, &mut feature);
                let s: f64 = feature.iter().zip(l.iter()).map(|(f, lk)| f * lk).sum();
                let w = r * s.exp();
                expectation += w;
                for a in 0..dim {
                    grad[a] += w * feature[a];
                }
                if want_hessian {
                    for a in 0..dim {
                        let wa = w * feature[a];
                        for c in a..dim {
                            hess[(a, c)] += wa * feature[c];
                        }
                    }
                }
            }
        }
        for a in 0..dim {
            grad[a] -= b[a];
            for c in 0..a {
                hess[(a, c)] = hess[(c, a)];
            }
        }
        let f = -l.dot(&b) + (expectation - 1.0);
        (f, grad, hess)
    };

    let mut converged = false;
    for _ in 0..200 {
        let (f, grad, hess) = eval(&l, true);
        if grad.norm() <= 1e-10 {
            converged = true;
            break;
        }
        // Newton direction with a ridge fallback when the factorization fails
        let mut ridge = 0.0;
        let step = loop {
            let mut h = hess.clone();
            if ridge > 0.0 {
                for a in 0..dim {
                    h[(a, a)] += ridge;
                }
            }
            match h.cholesky() {
                Some(ch) => break ch.solve(&grad),
                None => {
                    ridge = if ridge == 0.0 { 1e-10 } else { ridge * 100.0 };
                    if ridge > 1.0 {
                        return Err(RdpfError::Numerical(
                            "grid dual Hessian could not be stabilized".into(),
                        ));
                    }
                }
            }
        };
        if grad.norm() < 1e-5 {
            // quadratic phase: objective decrements sit below float noise, so
            // an Armijo test would stall; the pure step contracts the gradient
            l -= &step;
            continue;
        }
        // backtracking line search on the exact objective
        let mut tau = 1.0;
        let descent = grad.dot(&step);
        loop {
            let candidate = &l - tau * &step;
            let (fc, _, _) = eval(&candidate, false);
            if fc.is_finite() && fc <= f - 1e-4 * tau * descent {
                l = candidate;
                break;
            }
            tau *= 0.5;
            if tau < 1e-12 {
                return Err(RdpfError::Numerical(
                    "grid dual line search stalled; the distortion level may sit on the feasibility boundary".into(),
                ));
            }
        }
    }
    if !converged {
        let (_, grad, _) = eval(&l, false);
        if grad.norm() > 1e-10 {
            return Err(RdpfError::Numerical(format!(
                "grid dual Newton did not reach 1e-10 (gradient norm {:.3e})",
                grad.norm()
            )));
        }
    }
    let rate = l.dot(&b);
    let multipliers = MultiplierVector::from_flat(2, order, l.as_slice())?;
    Ok((rate, multipliers))
}

/// Cyclic iterative scaling on the primal: repeatedly I-projects the current
/// weights onto one constraint at a time until every residual is below 1e-9.
/// Returns the rate (KL to the reference) and the optimal cell weights.
pub fn grid_primal_scaling(instance: &GridInstance, d: f64, order: usize) -> Result<(f64, Vec<f64>)> {
    if order == 0 {
        return Err(RdpfError::InvalidArgument("moment order must be at least 1".into()));
    }
    instance.check_distortion_feasible(d)?;
    let g = instance.points_per_axis;
    let cells = g * g;
    let mut log_q: Vec<f64> = instance.ref_weights.iter().map(|r| r.ln()).collect();

    // per-constraint feature arrays
    let mut features: Vec<(Vec<f64>, f64)> = Vec::with_capacity(1 + 2 * order);
    features.push((instance.distortion.clone(), d));
    for axis in 0..2 {
        for n in 1..=order {
            let mut phi = vec![0.0f64; cells];
            for i in 0..g {
                for j in 0..g {
                    let c = if axis == 0 { instance.centers[i] } else { instance.centers[j] };
                    phi[i * g + j] = c.powi(n as i32);
                }
            }
            features.push((phi, instance.alpha_hat(n)));
        }
    }

    let mut cycles = 0usize;
    loop {
        cycles += 1;
        if cycles > 100_000 {
            return Err(RdpfError::Numerical(
                "iterative scaling did not converge within 100000 cycles".into(),
            ));
        }
        normalize_log(&mut log_q);
        for (phi, target) in &features {
            let beta = match solve_tilt(&log_q, phi, *target) {
                Some(beta) => beta,
                None => {
                    return Err(RdpfError::Numerical(
                        "iterative scaling could not match a constraint; the target may be unreachable".into(),
                    ))
                }
            };
            let mut lse = f64::NEG_INFINITY;
            for (lq, p) in log_q.iter_mut().zip(phi) {
                *lq += beta * p;
                lse = lse.max(*lq);
            }
            let z: f64 = log_q.iter().map(|lq| (lq - lse).exp()).sum::<f64>().ln() + lse;
            for lq in log_q.iter_mut() {
                *lq -= z;
            }
        }
        // residual check
        let q: Vec<f64> = log_q.iter().map(|lq| lq.exp()).collect();
        let mut worst = (q.iter().sum::<f64>() - 1.0).abs();
        for (phi, target) in &features {
            let v: f64 = q.iter().zip(phi).map(|(qi, p)| qi * p).sum();
            worst = worst.max((v - target).abs());
        }
        if worst <= 1e-9 {
            let rate = q
                .iter()
                .zip(&instance.ref_weights)
                .map(|(qi, r)| if *qi > 0.0 { qi * (qi / r).ln() } else { 0.0 })
                .sum();
            return Ok((rate, q));
        }
    }
}

fn normalize_log(log_q: &mut [f64]) {
    let m = log_q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z = log_q.iter().map(|lq| (lq - m).exp()).sum::<f64>().ln() + m;
    for lq in log_q.iter_mut() {
        *lq -= z;
    }
}

/// Finds `beta` with `E_{q e^{beta phi}}[phi] = target`; Newton with bisection
/// safeguarding on the monotone map `beta -> E_beta[phi]`.
fn solve_tilt(log_q: &[f64], phi: &[f64], target: f64) -> Option<f64> {
    let moment = |beta: f64| -> (f64, f64) {
        let mut m = f64::NEG_INFINITY;
        for (lq, p) in log_q.iter().zip(phi) {
            m = m.max(lq + beta * p);
        }
        let mut z = 0.0;
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for (lq, p) in log_q.iter().zip(phi) {
            let w = (lq + beta * p - m).exp();
            z += w;
            e1 += w * p;
            e2 += w * p * p;
        }
        let mean = e1 / z;
        (mean, (e2 / z - mean * mean).max(0.0))
    };

    // bracket the root
    let (m0, _) = moment(0.0);
    if (m0 - target).abs() <= 1e-16 {
        return Some(0.0);
    }
    let mut width = 1.0;
    let (mut lo, mut hi);
    if m0 < target {
        lo = 0.0;
        loop {
            hi = width;
            if moment(hi).0 >= target {
                break;
            }
            width *= 2.0;
            if width > 1e8 {
                return None;
            }
        }
    } else {
        hi = 0.0;
        loop {
            lo = -width;
            if moment(lo).0 <= target {
                break;
            }
            width *= 2.0;
            if width > 1e8 {
                return None;
            }
        }
    }

    let mut beta = 0.5 * (lo + hi);
    for _ in 0..100 {
        let (mean, var) = moment(beta);
        let err = mean - target;
        if err.abs() <= 1e-14 {
            return Some(beta);
        }
        if err > 0.0 {
            hi = beta;
        } else {
            lo = beta;
        }
        let newton = if var > 1e-300 { beta - err / var } else { f64::NAN };
        beta = if newton.is_finite() && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo < 1e-15 * (1.0 + beta.abs()) {
            return Some(beta);
        }
    }
    Some(beta)
}

/// Rates of the moment-relaxation ladder plus the full-marginal projection.
#[derive(Debug, Clone)]
pub struct LadderResult {
    /// `R^(N)` for `N = 1..=n_max`.
    pub moment_rates: Vec<f64>,
    /// Rate with every marginal bin mass forced to `1/G` (the finite analogue
    /// of the unrelaxed problem).
    pub full_rate: f64,
}

/// Solves the ladder `N = 1..n_max` with the exact dual, then the
/// full-marginal projection with iterative proportional fitting.
pub fn relaxation_ladder(instance: &GridInstance, d: f64, n_max: usize) -> Result<LadderResult> {
    if n_max == 0 || n_max > 8 {
        return Err(RdpfError::InvalidArgument(
            "ladder order must lie in 1..=8 (grid conditioning)".into(),
        ));
    }
    let mut moment_rates = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        moment_rates.push(grid_dual_solve(instance, d, n)?.0);
    }
    Ok(LadderResult { moment_rates, full_rate: full_marginal_rate(instance, d)? })
}

/// I-projection with both marginals pinned to the uniform bin masses, via
/// cyclic proportional fitting (closed-form marginal scalings plus a 1-D
/// distortion tilt per cycle).
pub fn full_marginal_rate(instance: &GridInstance, d: f64) -> Result<f64> {
    instance.check_distortion_feasible(d)?;
    let g = instance.points_per_axis;
    let uniform = 1.0 / g as f64;
    let mut log_q: Vec<f64> = instance.ref_weights.iter().map(|r| r.ln()).collect();

    let mut cycles = 0usize;
    loop {
        cycles += 1;
        if cycles > 100_000 {
            return Err(RdpfError::Numerical(
                "proportional fitting did not converge within 100000 cycles".into(),
            ));
        }
        // distortion tilt
        let beta = solve_tilt(&log_q, &instance.distortion, d).ok_or_else(|| {
            RdpfError::Numerical("distortion constraint unreachable on the grid".into())
        })?;
        let mut lse = f64::NEG_INFINITY;
        for (lq, delta) in log_q.iter_mut().zip(&instance.distortion) {
            *lq += beta * delta;
            lse = lse.max(*lq);
        }
        let z: f64 = log_q.iter().map(|lq| (lq - lse).exp()).sum::<f64>().ln() + lse;
        for lq in log_q.iter_mut() {
            *lq -= z;
        }
        // row and column scalings
        for axis in 0..2 {
            for k in 0..g {
                let mut m = f64::NEG_INFINITY;
                for t in 0..g {
                    let idx = if axis == 0 { k * g + t } else { t * g + k };
                    m = m.max(log_q[idx]);
                }
                let mut mass = 0.0;
                for t in 0..g {
                    let idx = if axis == 0 { k * g + t } else { t * g + k };
                    mass += (log_q[idx] - m).exp();
                }
                let log_mass = mass.ln() + m;
                let shift = uniform.ln() - log_mass;
                for t in 0..g {
                    let idx = if axis == 0 { k * g + t } else { t * g + k };
                    log_q[idx] += shift;
                }
            }
        }
        // residuals
        let q: Vec<f64> = log_q.iter().map(|lq| lq.exp()).collect();
        let mut worst = (q.iter().sum::<f64>() - 1.0).abs();
        let dist: f64 = q.iter().zip(&instance.distortion).map(|(qi, delta)| qi * delta).sum();
        worst = worst.max((dist - d).abs());
        for k in 0..g {
            let row: f64 = (0..g).map(|t| q[k * g + t]).sum();
            let col: f64 = (0..g).map(|t| q[t * g + k]).sum();
            worst = worst.max((row - uniform).abs()).max((col - uniform).abs());
        }
        if worst <= 1e-9 {
            let rate = q
                .iter()
                .zip(&instance.ref_weights)
                .map(|(qi, r)| if *qi > 0.0 { qi * (qi / r).ln() } else { 0.0 })
                .sum();
            return Ok(rate);
        }
    }
}
