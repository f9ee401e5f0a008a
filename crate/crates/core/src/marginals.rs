//! Univariate continuous distribution families.
//!
//! Each family exposes the cdf, the quantile (a.s.-inverse of the cdf), the
//! density, the differential entropy and the entropy power. Quantiles are the
//! bridge between copula space `[0,1]` and source space: distortions are
//! always evaluated on `quantile(u)`, never on `u` itself.

use crate::error::{RdpfError, Result};
use statrs::function::erf;

/// Quantile arguments are clamped to `[QUANTILE_CLAMP, 1 - QUANTILE_CLAMP]`
/// before inversion so that unbounded families cannot inject infinities into
/// the Monte-Carlo loop.
pub const QUANTILE_CLAMP: f64 = 1e-12;

const LN_2PI_E: f64 = 2.837877066409345; // ln(2*pi*e)

/// Supported univariate families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalFamily {
    Gaussian,
    Laplace,
    Exponential,
    Uniform,
}

impl MarginalFamily {
    /// Lowercase name used in config files.
    pub fn name(&self) -> &'static str {
        match self {
            MarginalFamily::Gaussian => "gaussian",
            MarginalFamily::Laplace => "laplace",
            MarginalFamily::Exponential => "exponential",
            MarginalFamily::Uniform => "uniform",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(MarginalFamily::Gaussian),
            "laplace" => Ok(MarginalFamily::Laplace),
            "exponential" => Ok(MarginalFamily::Exponential),
            "uniform" => Ok(MarginalFamily::Uniform),
            other => Err(RdpfError::InvalidParameter(format!(
                "unknown marginal family \"{other}\" (expected gaussian|laplace|exponential|uniform)"
            ))),
        }
    }
}

/// A univariate continuous distribution with location/scale parameters.
///
/// Parameterization per family:
/// - Gaussian: `location` = mean, `scale` = standard deviation.
/// - Laplace: `location` = mean, `scale` = diversity `b`.
/// - Exponential: `location` = support shift, `scale` = mean above the shift
///   (i.e. rate `1/scale`).
/// - Uniform: `location` = lower endpoint, `scale` = width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginalDistribution {
    family: MarginalFamily,
    location: f64,
    scale: f64,
}

impl MarginalDistribution {
    pub fn new(family: MarginalFamily, location: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() || !location.is_finite() {
            return Err(RdpfError::InvalidParameter(format!(
                "marginal scale must be finite and strictly positive (got location={location}, scale={scale})"
            )));
        }
        Ok(Self { family, location, scale })
    }

    /// Builds a distribution with the requested mean and variance.
    ///
    /// The exponential family has a single shape, so the request is honored by
    /// fixing `rate = 1/sqrt(variance)` and shifting the support left so the
    /// mean matches (a zero-mean unit-variance exponential lives on `[-1, inf)`).
    pub fn make_standardized(family: MarginalFamily, mean: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) || !variance.is_finite() || !mean.is_finite() {
            return Err(RdpfError::InvalidParameter(format!(
                "variance must be finite and strictly positive (got {variance})"
            )));
        }
        let sd = variance.sqrt();
        match family {
            MarginalFamily::Gaussian => Self::new(family, mean, sd),
            // Var = 2 b^2
            MarginalFamily::Laplace => Self::new(family, mean, (variance / 2.0).sqrt()),
            // Var = 1/rate^2, mean above shift = 1/rate
            MarginalFamily::Exponential => Self::new(family, mean - sd, sd),
            // Var = w^2 / 12
            MarginalFamily::Uniform => {
                let width = (12.0 * variance).sqrt();
                Self::new(family, mean - width / 2.0, width)
            }
        }
    }

    pub fn family(&self) -> MarginalFamily {
        self.family
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn mean(&self) -> f64 {
        match self.family {
            MarginalFamily::Gaussian | MarginalFamily::Laplace => self.location,
            MarginalFamily::Exponential => self.location + self.scale,
            MarginalFamily::Uniform => self.location + self.scale / 2.0,
        }
    }

    pub fn variance(&self) -> f64 {
        match self.family {
            MarginalFamily::Gaussian => self.scale * self.scale,
            MarginalFamily::Laplace => 2.0 * self.scale * self.scale,
            MarginalFamily::Exponential => self.scale * self.scale,
            MarginalFamily::Uniform => self.scale * self.scale / 12.0,
        }
    }

    /// Cumulative distribution function; tails saturate to 0/1.
    pub fn cdf(&self, x: f64) -> f64 {
        let t = (x - self.location) / self.scale;
        match self.family {
            MarginalFamily::Gaussian => standard_normal_cdf(t),
            MarginalFamily::Laplace => {
                if t < 0.0 {
                    0.5 * t.exp()
                } else {
                    1.0 - 0.5 * (-t).exp()
                }
            }
            MarginalFamily::Exponential => {
                if t <= 0.0 {
                    0.0
                } else {
                    -(-t).exp_m1()
                }
            }
            MarginalFamily::Uniform => t.clamp(0.0, 1.0),
        }
    }

    /// Quantile function (a.s.-inverse of `cdf`). The argument is clamped to
    /// `[QUANTILE_CLAMP, 1 - QUANTILE_CLAMP]` before inversion; arguments
    /// outside `[0, 1]` are rejected.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&u) {
            return Err(RdpfError::InvalidArgument(format!(
                "quantile argument must lie in [0,1] (got {u})"
            )));
        }
        Ok(self.quantile_clamped(u))
    }

    /// Quantile without the range check; used by the sampling hot loop where
    /// the argument is a freshly drawn uniform.
    #[inline]
    pub fn quantile_clamped(&self, u: f64) -> f64 {
        let u = u.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP);
        let t = match self.family {
            MarginalFamily::Gaussian => standard_normal_quantile(u),
            MarginalFamily::Laplace => {
                if u < 0.5 {
                    (2.0 * u).ln()
                } else {
                    -(2.0 * (1.0 - u)).ln()
                }
            }
            MarginalFamily::Exponential => -(-u).ln_1p(),
            MarginalFamily::Uniform => u,
        };
        self.location + self.scale * t
    }

    /// Probability density function.
    pub fn density(&self, x: f64) -> f64 {
        let t = (x - self.location) / self.scale;
        let standard = match self.family {
            MarginalFamily::Gaussian => (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt(),
            MarginalFamily::Laplace => 0.5 * (-t.abs()).exp(),
            MarginalFamily::Exponential => {
                if t < 0.0 {
                    0.0
                } else {
                    (-t).exp()
                }
            }
            MarginalFamily::Uniform => {
                if (0.0..=1.0).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
        };
        standard / self.scale
    }

    /// Differential entropy in nats.
    pub fn differential_entropy(&self) -> f64 {
        match self.family {
            MarginalFamily::Gaussian => 0.5 * LN_2PI_E + self.scale.ln(),
            MarginalFamily::Laplace => 1.0 + (2.0 * self.scale).ln(),
            MarginalFamily::Exponential => 1.0 + self.scale.ln(),
            MarginalFamily::Uniform => self.scale.ln(),
        }
    }

    /// Entropy power `exp(2 h) / (2 pi e)`; equals the variance iff Gaussian.
    pub fn entropy_power(&self) -> f64 {
        (2.0 * self.differential_entropy() - LN_2PI_E).exp()
    }
}

/// Standard normal cdf.
#[inline]
pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Standard normal quantile for `u` in `(0, 1)`.
#[inline]
pub fn standard_normal_quantile(u: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * u)
}
