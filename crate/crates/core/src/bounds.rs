//! Closed-form lower bounds for the perfect-realism rate under MSE.
//!
//! The scalar Gaussian perfect-realism rate is `0.5 ln(s^2 / (D - D^2/(4 s^2)))`
//! and vanishes at `D = 2 s^2`. Substituting `D_i = 2 lambda_i (1 - rho_i)`
//! turns each component rate into `-0.5 ln(1 - rho_i^2)`, which makes the
//! vector allocation an equal-slope problem with a closed-form component
//! response to the shared slope multiplier; only a scalar bisection remains.

use crate::error::{RdpfError, Result};
use nalgebra::DMatrix;

const LN_2PI_E: f64 = 2.837877066409345;

/// Exact perfect-realism rate of a scalar Gaussian source, in nats.
pub fn scalar_gaussian_pr(variance: f64, distortion: f64) -> Result<f64> {
    if !(variance > 0.0) {
        return Err(RdpfError::Domain(format!("variance must be positive (got {variance})")));
    }
    if !(distortion > 0.0 && distortion <= 2.0 * variance) {
        return Err(RdpfError::Domain(format!(
            "distortion {distortion} outside (0, 2*variance] = (0, {}]",
            2.0 * variance
        )));
    }
    let denom = distortion - distortion * distortion / (4.0 * variance);
    Ok(0.5 * (variance / denom).ln())
}

/// Scalar Shannon lower bound with entropy power `n`, clamped at zero.
pub fn scalar_slb(entropy_power: f64, variance: f64, distortion: f64) -> Result<f64> {
    if !(entropy_power > 0.0) {
        return Err(RdpfError::Domain(format!(
            "entropy power must be positive (got {entropy_power})"
        )));
    }
    if !(variance > 0.0) {
        return Err(RdpfError::Domain(format!("variance must be positive (got {variance})")));
    }
    if !(distortion > 0.0 && distortion <= 2.0 * variance) {
        return Err(RdpfError::Domain(format!(
            "distortion {distortion} outside (0, 2*variance] = (0, {}]",
            2.0 * variance
        )));
    }
    let denom = distortion - distortion * distortion / (4.0 * variance);
    Ok((0.5 * (entropy_power / denom).ln()).max(0.0))
}

/// Component correlation solving the equal-slope condition
/// `rho / (1 - rho^2) = 2 lambda s` for a given slope magnitude `s > 0`.
#[inline]
fn rho_for_slope(lambda: f64, s: f64) -> f64 {
    let a = 2.0 * lambda * s;
    // positive root of a*rho^2 + rho - a = 0, stable for small and large a
    2.0 * a / (1.0 + (1.0 + 4.0 * a * a).sqrt())
}

/// Vector Gaussian perfect-realism rate by reverse water-filling over the
/// covariance eigenvalues. Returns the rate in nats and the per-component
/// distortion allocation.
pub fn vector_gaussian_pr(eigenvalues: &[f64], distortion: f64) -> Result<(f64, Vec<f64>)> {
    if eigenvalues.is_empty() {
        return Err(RdpfError::Domain("eigenvalue list is empty".into()));
    }
    if eigenvalues.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(RdpfError::Domain(format!(
            "eigenvalues must be finite and positive (got {eigenvalues:?})"
        )));
    }
    let total = 2.0 * eigenvalues.iter().sum::<f64>();
    if !(distortion > 0.0 && distortion <= total) {
        return Err(RdpfError::Domain(format!(
            "distortion {distortion} outside (0, 2*sum(lambda)] = (0, {total}]"
        )));
    }
    if eigenvalues.len() == 1 {
        return Ok((scalar_gaussian_pr(eigenvalues[0], distortion)?, vec![distortion]));
    }
    if (total - distortion) / total < 1e-14 {
        // every component saturates at zero rate
        return Ok((0.0, eigenvalues.iter().map(|&l| 2.0 * l).collect()));
    }

    // Bisection on ln(s); the total allocation is strictly decreasing in s.
    let alloc_total = |s: f64| -> f64 {
        eigenvalues.iter().map(|&l| 2.0 * l * (1.0 - rho_for_slope(l, s))).sum()
    };
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    if alloc_total(lo.exp()) < distortion || alloc_total(hi.exp()) > distortion {
        return Err(RdpfError::Numerical(
            "reverse water-filling bracket does not contain the requested distortion".into(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if alloc_total(mid.exp()) > distortion {
            lo = mid; // too much distortion allocated -> increase slope
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let s = (0.5 * (lo + hi)).exp();
    let mut allocation = Vec::with_capacity(eigenvalues.len());
    let mut rate = 0.0;
    for &l in eigenvalues {
        let rho = rho_for_slope(l, s);
        allocation.push(2.0 * l * (1.0 - rho));
        rate += -0.5 * (1.0 - rho * rho).ln();
    }
    // distribute the residual rounding over the components proportionally
    let drift: f64 = distortion - allocation.iter().sum::<f64>();
    if drift.abs() > 0.0 {
        let scale = distortion / (distortion - drift);
        for a in allocation.iter_mut() {
            *a *= scale;
        }
    }
    Ok((rate, allocation))
}

/// Inputs of the vector Shannon lower bound.
#[derive(Debug, Clone)]
pub struct SlbInstance {
    /// Differential entropy of the source, in nats.
    pub entropy_nats: f64,
    /// Source covariance.
    pub covariance: DMatrix<f64>,
    /// Total distortion budget.
    pub distortion: f64,
}

/// Vector Shannon lower bound `max(0, h(X) - h(X*) + R^G(D))`, where `X*` is
/// the Gaussian with the same covariance.
pub fn vector_slb(instance: &SlbInstance) -> Result<f64> {
    let d = instance.covariance.nrows();
    if d == 0 || instance.covariance.ncols() != d {
        return Err(RdpfError::Domain("covariance must be square and non-empty".into()));
    }
    for i in 0..d {
        for j in 0..i {
            if (instance.covariance[(i, j)] - instance.covariance[(j, i)]).abs() > 1e-9 {
                return Err(RdpfError::Domain("covariance must be symmetric".into()));
            }
        }
    }
    let eig = instance.covariance.clone().symmetric_eigenvalues();
    let eigenvalues: Vec<f64> = eig.iter().cloned().collect();
    if eigenvalues.iter().any(|&l| l <= 1e-300) {
        return Err(RdpfError::Domain(
            "covariance is singular; the Gaussian reference entropy is -inf".into(),
        ));
    }
    let log_det: f64 = eigenvalues.iter().map(|l| l.ln()).sum();
    let gaussian_entropy = 0.5 * (d as f64 * LN_2PI_E + log_det);
    let (gaussian_rate, _) = vector_gaussian_pr(&eigenvalues, instance.distortion)?;
    Ok((instance.entropy_nats - gaussian_entropy + gaussian_rate).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn scalar_gaussian_rate_examples() {
        assert!(scalar_gaussian_pr(1.0, 2.0).unwrap().abs() < 1e-15);
        assert!((scalar_gaussian_pr(1.0, 1.0).unwrap() - 0.14384103622589045).abs() < 1e-12);
        assert!((scalar_gaussian_pr(1.0, 0.4).unwrap() - 0.5108256237659907).abs() < 1e-12);
        assert!(scalar_gaussian_pr(1.0, 0.0).is_err());
        assert!(scalar_gaussian_pr(1.0, 2.5).is_err());
    }

    #[test]
    fn scalar_slb_examples() {
        // Gaussian: entropy power equals the variance, bound is the exact rate
        assert!((scalar_slb(1.0, 1.0, 1.0).unwrap() - 0.14384103622589045).abs() < 1e-12);
        // Uniform at D=1: raw value is negative, clamped to zero
        let n_uniform = 12.0 / (2.0 * std::f64::consts::PI * std::f64::consts::E);
        let raw = 0.5 * (n_uniform / 0.75f64).ln();
        assert!(raw < 0.0 && raw > -0.04);
        assert_eq!(scalar_slb(n_uniform, 1.0, 1.0).unwrap(), 0.0);
        // Exponential at D=0.1
        let n_exp = std::f64::consts::E / (2.0 * std::f64::consts::PI);
        let expected = 0.5 * (n_exp / (0.1 - 0.0025f64)).ln();
        assert!((scalar_slb(n_exp, 1.0, 0.1).unwrap() - expected).abs() < 1e-12);
        assert!((expected - 0.7450129172844950).abs() < 1e-12);
    }

    #[test]
    fn vector_rate_symmetric_pair() {
        let (rate, alloc) = vector_gaussian_pr(&[1.0, 1.0], 2.0).unwrap();
        assert!((rate - 2.0 * 0.14384103622589045).abs() < 1e-9);
        assert!((alloc[0] - 1.0).abs() < 1e-9);
        assert!((alloc[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vector_rate_saturates_at_total_distortion() {
        let (rate, alloc) = vector_gaussian_pr(&[1.0, 0.25], 2.5).unwrap();
        assert_eq!(rate, 0.0);
        assert_eq!(alloc, vec![2.0, 0.5]);
    }

    #[test]
    fn vector_rate_blows_up_at_low_distortion() {
        let (r1, alloc) = vector_gaussian_pr(&[1.0, 0.5], 1e-6).unwrap();
        assert!(r1 > 6.0);
        assert!(alloc.iter().all(|&a| a > 0.0 && a < 1e-5));
        let (r2, _) = vector_gaussian_pr(&[1.0, 0.5], 1e-8).unwrap();
        assert!(r2 > r1);
    }

    #[test]
    fn singleton_matches_scalar_formula() {
        for d in [0.1, 0.5, 1.0, 1.55] {
            let (rate, alloc) = vector_gaussian_pr(&[0.8], d).unwrap();
            assert!((rate - scalar_gaussian_pr(0.8, d).unwrap()).abs() < 1e-12);
            assert_eq!(alloc, vec![d]);
        }
    }

    fn slope_at(lambda: f64, d: f64) -> f64 {
        let rho = 1.0 - d / (2.0 * lambda);
        -rho / (2.0 * lambda * (1.0 - rho * rho))
    }

    #[test]
    fn allocation_satisfies_equal_slope_kkt() {
        for (l1, l2, d) in [(1.0, 0.25, 0.8), (2.0, 0.5, 1.5), (1.0, 1.0, 0.4)] {
            let (_, alloc) = vector_gaussian_pr(&[l1, l2], d).unwrap();
            let s1 = slope_at(l1, alloc[0]);
            let s2 = slope_at(l2, alloc[1]);
            assert!((s1 - s2).abs() < 1e-9, "slopes {s1} vs {s2}");
            assert!((alloc[0] + alloc[1] - d).abs() < 1e-10);
        }
    }

    #[test]
    fn rate_is_convex_and_non_increasing_in_distortion() {
        let eigen = [1.0, 0.4, 0.1];
        let total = 2.0 * eigen.iter().sum::<f64>();
        let rates: Vec<f64> = (1..=100)
            .map(|k| vector_gaussian_pr(&eigen, total * k as f64 / 100.0).unwrap().0)
            .collect();
        for w in rates.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "rate increased: {} -> {}", w[0], w[1]);
        }
        for w in rates.windows(3) {
            assert!(w[0] + w[2] >= 2.0 * w[1] - 1e-9, "convexity violated");
        }
    }

    #[test]
    fn bisection_matches_brute_force_allocation() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let l1 = 0.2 + 1.8 * rng.random::<f64>();
            let l2 = 0.2 + 1.8 * rng.random::<f64>();
            let total = 2.0 * (l1 + l2);
            let d = total * (0.05 + 0.9 * rng.random::<f64>());
            let (rate, _) = vector_gaussian_pr(&[l1, l2], d).unwrap();
            // brute force over the first component at 1e-4 resolution
            let lo = (d - 2.0 * l2).max(1e-9);
            let hi = (2.0 * l1).min(d - 1e-9);
            let steps = ((hi - lo) / 1e-4).ceil() as usize;
            let mut best = f64::INFINITY;
            for k in 0..=steps {
                let d1 = (lo + (hi - lo) * k as f64 / steps as f64).min(2.0 * l1);
                let d2 = (d - d1).min(2.0 * l2);
                if d2 <= 0.0 {
                    continue;
                }
                let r = scalar_gaussian_pr(l1, d1).unwrap() + scalar_gaussian_pr(l2, d2).unwrap();
                best = best.min(r);
            }
            assert!(
                (rate - best).abs() < 1e-6,
                "bisection {rate} vs brute force {best} for ({l1}, {l2}, {d})"
            );
        }
    }

    #[test]
    fn vector_slb_reduces_to_gaussian_rate_for_gaussian_sources() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let log_det = (1.0f64 - 0.25).ln();
        let h = 0.5 * (2.0 * LN_2PI_E + log_det);
        let instance = SlbInstance { entropy_nats: h, covariance: cov.clone(), distortion: 1.0 };
        let slb = vector_slb(&instance).unwrap();
        let eig: Vec<f64> = cov.symmetric_eigenvalues().iter().cloned().collect();
        let (rate, _) = vector_gaussian_pr(&eig, 1.0).unwrap();
        assert!((slb - rate).abs() < 1e-12);
    }

    #[test]
    fn vector_slb_composes_entropies_for_independent_exponentials() {
        let cov = DMatrix::identity(2, 2);
        let instance = SlbInstance { entropy_nats: 2.0, covariance: cov, distortion: 0.2 };
        let slb = vector_slb(&instance).unwrap();
        let (rg, _) = vector_gaussian_pr(&[1.0, 1.0], 0.2).unwrap();
        let expected = 2.0 - LN_2PI_E + rg;
        assert!((slb - expected).abs() < 1e-12);
    }

    #[test]
    fn vector_slb_zero_at_total_distortion_and_rejects_singular() {
        let cov = DMatrix::identity(2, 2);
        let instance = SlbInstance { entropy_nats: 1.7, covariance: cov, distortion: 4.0 };
        assert_eq!(vector_slb(&instance).unwrap(), 0.0);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let bad = SlbInstance { entropy_nats: 1.0, covariance: singular, distortion: 1.0 };
        assert!(vector_slb(&bad).is_err());
    }
}
