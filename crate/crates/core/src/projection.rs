//! The exponential-family projection core.
//!
//! The optimal coupling has density `dQ/dR(u) = exp(mu + theta * Delta(u) +
//! sum_{i,n} nu_{i,n} u_i^n)` with respect to the product-copula reference
//! `R`, where `Delta` is the distortion transported through the marginal
//! quantiles. The multipliers solve the unconstrained convex dual
//!
//! ```text
//!   f(l) = -mu - theta D - sum nu_{i,n} alpha_n + (E_R[dQ/dR] - 1)
//! ```
//!
//! whose gradient components are exactly the constraint residuals of the
//! projection. At the optimum the residuals vanish, `f = -I(X,Y)`, and the
//! mutual information is recovered from the multipliers alone.

use crate::copulas::{reference_log_density, SampleBatch, SamplingScheme, SourceSpec};
use crate::error::{RdpfError, Result};
use crate::marginals::QUANTILE_CLAMP;

/// Exponents above this are treated as divergence of the current iterate.
const LOG_WEIGHT_GUARD: f64 = 700.0;

/// Distortion measures; both accumulate over coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DistortionKind {
    /// Squared error summed over coordinates.
    Mse,
    /// Absolute error summed over coordinates.
    Mae,
}

impl DistortionKind {
    pub fn name(&self) -> &'static str {
        match self {
            DistortionKind::Mse => "mse",
            DistortionKind::Mae => "mae",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mse" => Ok(DistortionKind::Mse),
            "mae" => Ok(DistortionKind::Mae),
            other => Err(RdpfError::InvalidParameter(format!(
                "unknown distortion kind \"{other}\" (expected mse|mae)"
            ))),
        }
    }
}

/// `Delta(x, y)` for equal-length vectors.
pub fn distortion_eval(kind: DistortionKind, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(RdpfError::InvalidArgument(format!(
            "distortion arguments have mismatched dimensions {} vs {}",
            x.len(),
            y.len()
        )));
    }
    Ok(distortion_unchecked(kind, x, y))
}

#[inline]
fn distortion_unchecked(kind: DistortionKind, x: &[f64], y: &[f64]) -> f64 {
    match kind {
        DistortionKind::Mse => x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
        DistortionKind::Mae => x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum(),
    }
}

/// `n`-th moment of the uniform distribution on `[0,1]`.
pub fn uniform_moment(n: usize) -> Result<f64> {
    if n == 0 {
        return Err(RdpfError::InvalidArgument(
            "moment index starts at 1 (the zeroth moment is absorbed by mu)".into(),
        ));
    }
    Ok(1.0 / (n as f64 + 1.0))
}

/// One instance of the moment-relaxed projection.
#[derive(Debug, Clone)]
pub struct ProjectionProblem {
    source: SourceSpec,
    target: SourceSpec,
    distortion_kind: DistortionKind,
    distortion: f64,
    moment_order: usize,
}

impl ProjectionProblem {
    pub fn new(
        source: SourceSpec,
        target: SourceSpec,
        distortion_kind: DistortionKind,
        distortion: f64,
        moment_order: usize,
    ) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(RdpfError::InvalidParameter(format!(
                "source dimension {} differs from target dimension {}",
                source.dim(),
                target.dim()
            )));
        }
        if !(distortion > 0.0) || !distortion.is_finite() {
            return Err(RdpfError::InvalidParameter(format!(
                "distortion level must be finite and positive (got {distortion})"
            )));
        }
        if moment_order == 0 {
            return Err(RdpfError::InvalidParameter("moment order must be at least 1".into()));
        }
        Ok(Self { source, target, distortion_kind, distortion, moment_order })
    }

    pub fn source(&self) -> &SourceSpec {
        &self.source
    }

    pub fn target(&self) -> &SourceSpec {
        &self.target
    }

    pub fn distortion_kind(&self) -> DistortionKind {
        self.distortion_kind
    }

    /// The target distortion level `D`.
    pub fn distortion(&self) -> f64 {
        self.distortion
    }

    /// Returns a copy of the problem at a different distortion level.
    pub fn with_distortion(&self, distortion: f64) -> Result<Self> {
        Self::new(
            self.source.clone(),
            self.target.clone(),
            self.distortion_kind,
            distortion,
            self.moment_order,
        )
    }

    pub fn moment_order(&self) -> usize {
        self.moment_order
    }

    /// Dimension of one side (`d`); the copula space has `2d` coordinates.
    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    pub fn coords(&self) -> usize {
        2 * self.source.dim()
    }

    /// Total dual dimension `2 + 2 d N`.
    pub fn dual_dim(&self) -> usize {
        2 + self.coords() * self.moment_order
    }

    pub fn reference_log_density(&self, u: &[f64]) -> f64 {
        reference_log_density(&self.source, &self.target, u)
    }

    /// Distortion of a copula point transported through the quantiles.
    pub fn distortion_at(&self, u: &[f64]) -> f64 {
        let d = self.dim();
        debug_assert_eq!(u.len(), 2 * d);
        let mut acc = 0.0;
        for k in 0..d {
            let x = self.source.marginals()[k].quantile_clamped(u[k]);
            let y = self.target.marginals()[k].quantile_clamped(u[d + k]);
            acc += match self.distortion_kind {
                DistortionKind::Mse => (x - y) * (x - y),
                DistortionKind::Mae => (x - y).abs(),
            };
        }
        acc
    }
}

/// The dual variables `(mu, theta, {nu_{i,n}})`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierVector {
    pub mu: f64,
    pub theta: f64,
    nu: Vec<f64>,
    coords: usize,
    order: usize,
}

impl MultiplierVector {
    pub fn zeros(coords: usize, order: usize) -> Self {
        Self { mu: 0.0, theta: 0.0, nu: vec![0.0; coords * order], coords, order }
    }

    pub fn zeros_for(problem: &ProjectionProblem) -> Self {
        Self::zeros(problem.coords(), problem.moment_order())
    }

    /// Default initial point of the optimizer: all zeros except `theta = -1`,
    /// the sign of the operational branch of the rate-distortion slope.
    pub fn default_init(problem: &ProjectionProblem) -> Self {
        let mut l = Self::zeros_for(problem);
        l.theta = -1.0;
        l
    }

    pub fn coords(&self) -> usize {
        self.coords
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Total dimension `2 + coords * order`.
    pub fn dim(&self) -> usize {
        2 + self.nu.len()
    }

    /// `nu_{i,n}` with `i` in `0..coords` and `n` in `1..=order`.
    pub fn nu(&self, i: usize, n: usize) -> f64 {
        self.nu[i * self.order + (n - 1)]
    }

    pub fn nu_slice(&self) -> &[f64] {
        &self.nu
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.mu);
        v.push(self.theta);
        v.extend_from_slice(&self.nu);
        v
    }

    pub fn from_flat(coords: usize, order: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != 2 + coords * order {
            return Err(RdpfError::InvalidArgument(format!(
                "flat multiplier vector has length {} but 2 + {coords}x{order} was expected",
                flat.len()
            )));
        }
        Ok(Self { mu: flat[0], theta: flat[1], nu: flat[2..].to_vec(), coords, order })
    }

    pub fn is_finite(&self) -> bool {
        self.mu.is_finite() && self.theta.is_finite() && self.nu.iter().all(|v| v.is_finite())
    }

    pub fn l2_norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// `ln dQ/dR` at a copula point (clamped componentwise).
pub fn log_radon_nikodym(l: &MultiplierVector, u: &[f64], problem: &ProjectionProblem) -> f64 {
    debug_assert_eq!(l.coords, problem.coords());
    debug_assert_eq!(l.order, problem.moment_order());
    let mut clamped = [0.0f64; 16];
    let clamped = clamp_row(u, &mut clamped);
    let mut s = l.mu + l.theta * problem.distortion_at(clamped);
    let order = l.order;
    for (i, &ui) in clamped.iter().enumerate() {
        let mut p = 1.0;
        for n in 0..order {
            p *= ui;
            s += l.nu[i * order + n] * p;
        }
    }
    s
}

#[inline]
fn clamp_row<'a>(u: &[f64], scratch: &'a mut [f64; 16]) -> &'a [f64] {
    let k = u.len();
    assert!(k <= 16, "copula dimension above 8 is not supported");
    for (dst, &src) in scratch.iter_mut().zip(u) {
        *dst = src.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
    }
    &scratch[..k]
}

/// Objective and gradient of the Monte-Carlo dual on one batch, sharing a
/// single pass over the rows.
///
/// The gradient components are `(-1 + E[w], -D + E[Delta w], -alpha_n +
/// E[u_i^n w])` with importance weight `w = exp(ln dQ/dR + ln dR)` (the
/// reference term is dropped for batches already drawn from `R`).
pub fn dual_eval(
    l: &MultiplierVector,
    problem: &ProjectionProblem,
    batch: &SampleBatch,
) -> Result<(f64, MultiplierVector)> {
    let coords = problem.coords();
    if batch.dim() != coords {
        return Err(RdpfError::InvalidArgument(format!(
            "batch dimension {} does not match problem coordinates {coords}",
            batch.dim()
        )));
    }
    let order = problem.moment_order();
    let rows = batch.rows();
    let inv_m = 1.0 / rows as f64;
    let include_reference = batch.scheme() == SamplingScheme::Uniform;

    let mut exponents = vec![0.0f64; rows];
    let mut grad = MultiplierVector::zeros(coords, order);
    let mut sum_w = 0.0;
    let mut sum_wd = 0.0;
    let mut scratch = [0.0f64; 16];

    for r in 0..rows {
        let u = clamp_row(batch.row(r), &mut scratch);
        let delta = problem.distortion_at(u);
        let mut s = l.mu + l.theta * delta;
        for (i, &ui) in u.iter().enumerate() {
            let mut p = 1.0;
            for n in 0..order {
                p *= ui;
                s += l.nu[i * order + n] * p;
            }
        }
        if include_reference {
            s += problem.reference_log_density(u);
        }
        if s > LOG_WEIGHT_GUARD || !s.is_finite() {
            return Err(RdpfError::Divergence(format!(
                "log importance weight {s:.3} exceeded the {LOG_WEIGHT_GUARD} guard at batch row {r}"
            )));
        }
        exponents[r] = s;
        let w = s.exp() * inv_m;
        sum_w += w;
        sum_wd += w * delta;
        for (i, &ui) in u.iter().enumerate() {
            let mut p = 1.0;
            for n in 0..order {
                p *= ui;
                grad.nu[i * order + n] += w * p;
            }
        }
    }

    grad.mu = sum_w - 1.0;
    grad.theta = sum_wd - problem.distortion();
    let mut linear = -l.mu - l.theta * problem.distortion();
    for i in 0..coords {
        for n in 1..=order {
            let alpha = 1.0 / (n as f64 + 1.0);
            grad.nu[i * order + (n - 1)] -= alpha;
            linear -= l.nu(i, n) * alpha;
        }
    }

    // Log-domain estimate of E[w] for the reported objective value.
    let max_s = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max_s + exponents.iter().map(|s| (s - max_s).exp()).sum::<f64>().ln();
    let expectation = (lse - (rows as f64).ln()).exp();
    Ok((linear + (expectation - 1.0), grad))
}

/// Monte-Carlo estimate of the dual objective on one batch.
pub fn dual_objective(l: &MultiplierVector, problem: &ProjectionProblem, batch: &SampleBatch) -> Result<f64> {
    dual_eval(l, problem, batch).map(|(f, _)| f)
}

/// Monte-Carlo estimate of the dual gradient on one batch; unbiased for the
/// gradient of the population dual.
pub fn dual_gradient(
    l: &MultiplierVector,
    problem: &ProjectionProblem,
    batch: &SampleBatch,
) -> Result<MultiplierVector> {
    dual_eval(l, problem, batch).map(|(_, g)| g)
}

/// Mutual information implied by a (converged) multiplier vector, in nats.
///
/// At the dual optimum `KL(Q||R) = mu + theta D + sum nu_{i,n} alpha_n`,
/// which equals the negated linear part of the dual objective; the value is
/// deterministic given the multipliers.
pub fn mutual_information(l: &MultiplierVector, problem: &ProjectionProblem) -> f64 {
    let mut v = l.mu + l.theta * problem.distortion();
    for i in 0..l.coords() {
        for n in 1..=l.order() {
            v += l.nu(i, n) / (n as f64 + 1.0);
        }
    }
    v
}

/// Importance-sampled plug-in estimate of `E_Q[g]` at the multipliers `l`.
/// The callback receives the clamped copula point.
pub fn plugin_expectation<F: Fn(&[f64]) -> f64>(
    l: &MultiplierVector,
    problem: &ProjectionProblem,
    batch: &SampleBatch,
    g: F,
) -> Result<f64> {
    let coords = problem.coords();
    if batch.dim() != coords {
        return Err(RdpfError::InvalidArgument(format!(
            "batch dimension {} does not match problem coordinates {coords}",
            batch.dim()
        )));
    }
    let include_reference = batch.scheme() == SamplingScheme::Uniform;
    let rows = batch.rows();
    let inv_m = 1.0 / rows as f64;
    let mut acc = 0.0;
    let mut scratch = [0.0f64; 16];
    for r in 0..rows {
        let u = clamp_row(batch.row(r), &mut scratch);
        let mut s = log_radon_nikodym(l, u, problem);
        if include_reference {
            s += problem.reference_log_density(u);
        }
        if s > LOG_WEIGHT_GUARD || !s.is_finite() {
            return Err(RdpfError::Divergence(format!(
                "log importance weight {s:.3} exceeded the {LOG_WEIGHT_GUARD} guard at batch row {r}"
            )));
        }
        acc += s.exp() * g(u) * inv_m;
    }
    Ok(acc)
}

/// Achieved-distortion plug-in: `E_Q[Delta]` estimated on `batch`.
pub fn plugin_distortion(
    l: &MultiplierVector,
    problem: &ProjectionProblem,
    batch: &SampleBatch,
) -> Result<f64> {
    plugin_expectation(l, problem, batch, |u| problem.distortion_at(u))
}
