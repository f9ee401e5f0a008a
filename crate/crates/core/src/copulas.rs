//! Coupling structures on the unit hypercube.
//!
//! The reference measure of the projection is `R = C_X (x) C_Y`, the product
//! of the source and target copulas. Only the independence copula and the
//! Gaussian copula are built in; together they cover every benchmark source,
//! and the enum is the extension point for other parametric families.

use crate::error::{RdpfError, Result};
use crate::marginals::{standard_normal_cdf, standard_normal_quantile, MarginalDistribution, QUANTILE_CLAMP};
use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// A validated Gaussian-copula correlation structure with the quantities the
/// density needs precomputed: `P^{-1} - I`, `ln det P` and a Cholesky factor
/// for sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCoupling {
    correlation: DMatrix<f64>,
    inv_minus_identity: DMatrix<f64>,
    cholesky_lower: DMatrix<f64>,
    log_det: f64,
}

impl GaussianCoupling {
    pub fn new(correlation: DMatrix<f64>) -> Result<Self> {
        let d = correlation.nrows();
        if d == 0 || correlation.ncols() != d {
            return Err(RdpfError::InvalidParameter(
                "correlation matrix must be square and non-empty".into(),
            ));
        }
        for i in 0..d {
            if (correlation[(i, i)] - 1.0).abs() > 1e-12 {
                return Err(RdpfError::InvalidParameter(format!(
                    "correlation diagonal entry ({i},{i}) = {} is not 1",
                    correlation[(i, i)]
                )));
            }
            for j in 0..i {
                if (correlation[(i, j)] - correlation[(j, i)]).abs() > 1e-12 {
                    return Err(RdpfError::InvalidParameter(format!(
                        "correlation matrix is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let chol = correlation.clone().cholesky().ok_or_else(|| {
            RdpfError::InvalidParameter("correlation matrix is not positive-definite".into())
        })?;
        let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let inverse = chol.inverse();
        let mut inv_minus_identity = inverse;
        for i in 0..d {
            inv_minus_identity[(i, i)] -= 1.0;
        }
        Ok(Self {
            correlation,
            inv_minus_identity,
            cholesky_lower: chol.l(),
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.correlation.nrows()
    }

    pub fn correlation(&self) -> &DMatrix<f64> {
        &self.correlation
    }

    /// `ln det P`; twice the copula's negative mutual information.
    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Log density at a point of the open unit cube. Components are clamped
    /// away from 0/1 before the normal quantile transform.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        debug_assert_eq!(u.len(), self.dim());
        let z: Vec<f64> = u
            .iter()
            .map(|&ui| standard_normal_quantile(ui.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP)))
            .collect();
        let mut quad = 0.0;
        let d = self.dim();
        for i in 0..d {
            let mut row = 0.0;
            for j in 0..d {
                row += self.inv_minus_identity[(i, j)] * z[j];
            }
            quad += z[i] * row;
        }
        -0.5 * (self.log_det + quad)
    }

    /// Draws one copula sample into `out` via the correlated-normal transform.
    fn sample_into(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        let d = self.dim();
        let g: Vec<f64> = (0..d).map(|_| standard_normal_from_uniform(rng)).collect();
        for i in 0..d {
            let mut z = 0.0;
            for j in 0..=i {
                z += self.cholesky_lower[(i, j)] * g[j];
            }
            out[i] = standard_normal_cdf(z);
        }
    }
}

#[inline]
fn standard_normal_from_uniform(rng: &mut ChaCha8Rng) -> f64 {
    let u: f64 = rng.random();
    standard_normal_quantile(u.clamp(QUANTILE_CLAMP, 1.0 - QUANTILE_CLAMP))
}

/// The dependence structure of a multivariate source.
#[derive(Debug, Clone, PartialEq)]
pub enum CouplingSpec {
    Independence,
    Gaussian(GaussianCoupling),
}

impl CouplingSpec {
    pub fn independence() -> Self {
        CouplingSpec::Independence
    }

    pub fn gaussian(correlation: DMatrix<f64>) -> Result<Self> {
        Ok(CouplingSpec::Gaussian(GaussianCoupling::new(correlation)?))
    }

    pub fn gaussian_from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        if d == 0 || rows.iter().any(|r| r.len() != d) {
            return Err(RdpfError::InvalidParameter(
                "correlation must be a non-empty square row-major matrix".into(),
            ));
        }
        let m = DMatrix::from_fn(d, d, |i, j| rows[i][j]);
        Self::gaussian(m)
    }

    /// Log copula density; identically zero for independence.
    pub fn log_density(&self, u: &[f64]) -> f64 {
        match self {
            CouplingSpec::Independence => 0.0,
            CouplingSpec::Gaussian(g) => g.log_density(u),
        }
    }

    /// Mutual information locked in the coupling, `KL(C || uniform)`, in nats.
    pub fn mutual_information(&self) -> f64 {
        match self {
            CouplingSpec::Independence => 0.0,
            CouplingSpec::Gaussian(g) => -0.5 * g.log_det(),
        }
    }

    fn accepts_dim(&self, d: usize) -> bool {
        match self {
            CouplingSpec::Independence => true,
            CouplingSpec::Gaussian(g) => g.dim() == d,
        }
    }
}

/// A fully specified d-dimensional source: marginals plus coupling copula.
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSpec {
    marginals: Vec<MarginalDistribution>,
    coupling: CouplingSpec,
}

impl SourceSpec {
    pub fn new(marginals: Vec<MarginalDistribution>, coupling: CouplingSpec) -> Result<Self> {
        if marginals.is_empty() {
            return Err(RdpfError::InvalidParameter("a source needs at least one marginal".into()));
        }
        if !coupling.accepts_dim(marginals.len()) {
            return Err(RdpfError::InvalidParameter(format!(
                "coupling dimension does not match {} marginals",
                marginals.len()
            )));
        }
        Ok(Self { marginals, coupling })
    }

    /// Scalar source (dimension 1, coupling irrelevant).
    pub fn scalar(marginal: MarginalDistribution) -> Self {
        Self { marginals: vec![marginal], coupling: CouplingSpec::Independence }
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn marginals(&self) -> &[MarginalDistribution] {
        &self.marginals
    }

    pub fn coupling(&self) -> &CouplingSpec {
        &self.coupling
    }

    pub fn log_copula_density(&self, u: &[f64]) -> f64 {
        self.coupling.log_density(u)
    }

    /// Maps a copula point to source space componentwise.
    pub fn quantile_into(&self, u: &[f64], out: &mut [f64]) {
        for (k, (&ui, m)) in u.iter().zip(&self.marginals).enumerate() {
            out[k] = m.quantile_clamped(ui);
        }
    }

    /// Joint differential entropy in nats: sum of marginal entropies minus the
    /// mutual information carried by the coupling.
    pub fn differential_entropy(&self) -> f64 {
        let marginal_sum: f64 = self.marginals.iter().map(|m| m.differential_entropy()).sum();
        marginal_sum - self.coupling.mutual_information()
    }

    /// Covariance matrix of the source, by Simpson quadrature in normal-score
    /// space for the coupled off-diagonal terms. Exact (closed-form) on the
    /// diagonal.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut cov = DMatrix::zeros(d, d);
        for i in 0..d {
            cov[(i, i)] = self.marginals[i].variance();
        }
        if let CouplingSpec::Gaussian(g) = &self.coupling {
            for i in 0..d {
                for j in 0..i {
                    let rho = g.correlation()[(i, j)];
                    let c = coupled_covariance(&self.marginals[i], &self.marginals[j], rho);
                    cov[(i, j)] = c;
                    cov[(j, i)] = c;
                }
            }
        }
        cov
    }
}

/// `Cov(X_i, X_j)` for marginals joined by a bivariate Gaussian copula with
/// correlation `rho`, via nested composite-Simpson quadrature over the normal
/// scores `z_j = rho z_i + sqrt(1-rho^2) w`.
fn coupled_covariance(mi: &MarginalDistribution, mj: &MarginalDistribution, rho: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    let half_width = 8.5;
    let n = 257usize; // odd
    let h = 2.0 * half_width / (n - 1) as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let node = |k: usize| -half_width + k as f64 * h;
    let weight = |k: usize| {
        if k == 0 || k == n - 1 {
            1.0
        } else if k % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let sq = (1.0 - rho * rho).sqrt();
    let gi = |z: f64| mi.quantile_clamped(standard_normal_cdf(z)) - mi.mean();
    let gj = |z: f64| mj.quantile_clamped(standard_normal_cdf(z)) - mj.mean();
    let mut outer = 0.0;
    for a in 0..n {
        let z1 = node(a);
        let phi1 = norm * (-0.5 * z1 * z1).exp();
        let mut inner = 0.0;
        for b in 0..n {
            let w = node(b);
            let phi2 = norm * (-0.5 * w * w).exp();
            inner += weight(b) * phi2 * gj(rho * z1 + sq * w);
        }
        outer += weight(a) * phi1 * gi(z1) * inner * (h / 3.0);
    }
    outer * (h / 3.0)
}

/// Log density of the reference measure `R = C_X (x) C_Y` at a `2d` point.
pub fn reference_log_density(source: &SourceSpec, target: &SourceSpec, u: &[f64]) -> f64 {
    let d = source.dim();
    debug_assert_eq!(u.len(), 2 * d);
    source.log_copula_density(&u[..d]) + target.log_copula_density(&u[d..])
}

/// How a batch was drawn; determines the importance weight attached to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplingScheme {
    /// `u ~ U([0,1]^{2d})`; rows carry the reference density as weight.
    Uniform,
    /// `u ~ R = C_X (x) C_Y`; the reference density is absorbed by sampling.
    Reference,
}

/// A batch of `rows` points in `[0,1]^dim`, stored row-major.
#[derive(Debug, Clone)]
pub struct SampleBatch {
    scheme: SamplingScheme,
    dim: usize,
    data: Vec<f64>,
}

impl SampleBatch {
    pub fn from_rows(scheme: SamplingScheme, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(RdpfError::InvalidArgument(
                "batch data length must be a positive multiple of the dimension".into(),
            ));
        }
        Ok(Self { scheme, dim, data })
    }

    pub fn scheme(&self) -> SamplingScheme {
        self.scheme
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Draws `rows` i.i.d. points of `[0,1]^dim`. Deterministic given the
/// generator state; the state is advanced in place.
pub fn sample_uniform_batch(dim: usize, rows: usize, rng: &mut ChaCha8Rng) -> Result<SampleBatch> {
    if rows == 0 {
        return Err(RdpfError::InvalidArgument("batch size must be at least 1".into()));
    }
    if dim == 0 {
        return Err(RdpfError::InvalidArgument("batch dimension must be at least 1".into()));
    }
    let mut data = vec![0.0f64; rows * dim];
    for v in data.iter_mut() {
        *v = rng.random();
    }
    SampleBatch::from_rows(SamplingScheme::Uniform, dim, data)
}

/// Draws `rows` points of `[0,1]^{2d}` from `R = C_X (x) C_Y` via the
/// correlated-normal transform, for the variance-reduced sampling path.
pub fn sample_reference_batch(
    source: &SourceSpec,
    target: &SourceSpec,
    rows: usize,
    rng: &mut ChaCha8Rng,
) -> Result<SampleBatch> {
    if rows == 0 {
        return Err(RdpfError::InvalidArgument("batch size must be at least 1".into()));
    }
    let d = source.dim();
    if target.dim() != d {
        return Err(RdpfError::InvalidArgument("source/target dimension mismatch".into()));
    }
    let dim = 2 * d;
    let mut data = vec![0.0f64; rows * dim];
    for r in 0..rows {
        let row = &mut data[r * dim..(r + 1) * dim];
        match source.coupling() {
            CouplingSpec::Independence => {
                for v in row[..d].iter_mut() {
                    *v = rng.random();
                }
            }
            CouplingSpec::Gaussian(g) => g.sample_into(rng, &mut row[..d]),
        }
        match target.coupling() {
            CouplingSpec::Independence => {
                for v in row[d..].iter_mut() {
                    *v = rng.random();
                }
            }
            CouplingSpec::Gaussian(g) => g.sample_into(rng, &mut row[d..]),
        }
    }
    SampleBatch::from_rows(SamplingScheme::Reference, dim, data)
}
