//! Target distributions `pi ∝ exp(-U)`.
//!
//! A [`Target`] bundles a potential with its strong-convexity and smoothness
//! constants and, when known, its mean, covariance and Fisher matrix. Two
//! families ship with the crate: Gaussians and products of the 1d potential
//! `z^2/2 + log cosh z` (optionally rescaled per coordinate).

use crate::error::{Error, Result};
use crate::linalg::{spectral_function, GaussianLaw, SpdMatrix};
use crate::rng::StreamRng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::{Arc, OnceLock};

/// Potential `U` with gradient access.
pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Declared FLOP cost of one gradient call.
    fn gradient_cost(&self) -> u64;
}

/// Constants of a target preconditioned by `M`: bounds on the spectrum of
/// `M^{-1/2} ∇²U M^{-1/2}` over all of space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreconditionedConstants {
    pub m_m: f64,
    pub l_m: f64,
    pub kappa_m: f64,
    /// False when the values are a conservative bracket rather than exact.
    pub exact: bool,
}

impl PreconditionedConstants {
    pub fn new(m_m: f64, l_m: f64, exact: bool) -> Result<Self> {
        if !(m_m > 0.0) || !(l_m >= m_m) || !l_m.is_finite() {
            return Err(Error::Parameter(format!(
                "preconditioned constants need 0 < m <= L, got m = {m_m}, L = {l_m}"
            )));
        }
        Ok(Self {
            m_m,
            l_m,
            kappa_m: l_m / m_m,
            exact,
        })
    }
}

/// Certified Hessian bounds `m2 * M2 ⪯ ∇²U ⪯ L2 * M2` in the sense of the
/// preconditioned constants of `M2`.
#[derive(Debug, Clone)]
pub struct HessianWitness {
    pub reference: SpdMatrix,
    pub constants: PreconditionedConstants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetFamily {
    Gaussian,
    LogCoshProduct,
    Custom,
}

#[derive(Clone)]
pub struct Target {
    potential: Arc<dyn Potential>,
    family: TargetFamily,
    m: f64,
    l: f64,
    analytic_covariance: Option<SpdMatrix>,
    analytic_fisher: Option<SpdMatrix>,
    analytic_mean: Option<DVector<f64>>,
    mode: Option<DVector<f64>>,
    witness: Option<HessianWitness>,
    gaussian: Option<GaussianLaw>,
    description: String,
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Target")
            .field("description", &self.description)
            .field("dim", &self.dim())
            .field("m", &self.m)
            .field("L", &self.l)
            .finish()
    }
}

impl Target {
    /// General target from a potential and its (m, L) constants. Optional
    /// metadata is attached with the `with_*` builders.
    pub fn custom(potential: Arc<dyn Potential>, m: f64, l: f64, description: &str) -> Result<Self> {
        if !(m > 0.0) || !(l >= m) || !l.is_finite() {
            return Err(Error::Parameter(format!("need 0 < m <= L, got m = {m}, L = {l}")));
        }
        Ok(Self {
            potential,
            family: TargetFamily::Custom,
            m,
            l,
            analytic_covariance: None,
            analytic_fisher: None,
            analytic_mean: None,
            mode: None,
            witness: None,
            gaussian: None,
            description: description.to_string(),
        })
    }

    pub fn with_mean(mut self, mean: DVector<f64>) -> Self {
        self.analytic_mean = Some(mean);
        self
    }

    pub fn with_mode(mut self, mode: DVector<f64>) -> Self {
        self.mode = Some(mode);
        self
    }

    pub fn with_covariance(mut self, cov: SpdMatrix) -> Self {
        self.analytic_covariance = Some(cov);
        self
    }

    pub fn with_fisher(mut self, fisher: SpdMatrix) -> Self {
        self.analytic_fisher = Some(fisher);
        self
    }

    pub fn with_witness(mut self, witness: HessianWitness) -> Self {
        self.witness = Some(witness);
        self
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    pub fn family(&self) -> TargetFamily {
        self.family
    }

    pub fn description(&self) -> &str {
        &self.description
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn l(&self) -> f64 {
        self.l
    }

    pub fn kappa(&self) -> f64 {
        self.l / self.m
    }

    pub fn potential(&self, x: &DVector<f64>) -> f64 {
        self.potential.value(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        self.potential.gradient(x)
    }

    pub fn gradient_cost(&self) -> u64 {
        self.potential.gradient_cost()
    }

    pub fn analytic_covariance(&self) -> Option<&SpdMatrix> {
        self.analytic_covariance.as_ref()
    }

    pub fn analytic_fisher(&self) -> Option<&SpdMatrix> {
        self.analytic_fisher.as_ref()
    }

    pub fn analytic_mean(&self) -> Option<&DVector<f64>> {
        self.analytic_mean.as_ref()
    }

    pub fn mode(&self) -> Option<&DVector<f64>> {
        self.mode.as_ref()
    }

    pub fn witness(&self) -> Option<&HessianWitness> {
        self.witness.as_ref()
    }

    /// The target as a Gaussian law, for Gaussian targets.
    pub fn gaussian_law(&self) -> Option<&GaussianLaw> {
        self.gaussian.as_ref()
    }

    /// `tr Σ_π`, exact when the covariance is known, else the upper bound `d/m`.
    pub fn trace_sigma_upper(&self) -> f64 {
        match &self.analytic_covariance {
            Some(c) => c.trace(),
            None => self.dim() as f64 / self.m,
        }
    }

    /// `tr Σ_π`, exact when the covariance is known, else the lower bound `d/L`.
    pub fn trace_sigma_lower(&self) -> f64 {
        match &self.analytic_covariance {
            Some(c) => c.trace(),
            None => self.dim() as f64 / self.l,
        }
    }

    /// `W2(π, δ_x)`, exact when mean and covariance are known:
    /// `W2² = tr Σ_π + |μ_π - x|²`.
    pub fn w2_to_point(&self, x: &DVector<f64>) -> Option<f64> {
        let mean = self.analytic_mean.as_ref()?;
        let cov = self.analytic_covariance.as_ref()?;
        Some((cov.trace() + (mean - x).norm_squared()).sqrt())
    }
}

#[derive(Debug)]
struct GaussianPotential {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl Potential for GaussianPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        let r = x - &self.mean;
        0.5 * r.dot(&(&self.precision * &r))
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.precision * (x - &self.mean)
    }

    fn gradient_cost(&self) -> u64 {
        crate::flops::matvec_flops(self.dim())
    }
}

/// Gaussian target `N(mean, covariance)`.
pub fn make_gaussian_target(mean: DVector<f64>, covariance: SpdMatrix) -> Result<Target> {
    let d = covariance.dim();
    if mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: mean.len(),
        });
    }
    let fisher = covariance.inverse()?;
    let m = fisher.lambda_min();
    let l = fisher.lambda_max();
    let law = GaussianLaw::from_spd(mean.clone(), &covariance)?;
    let potential = Arc::new(GaussianPotential {
        mean: mean.clone(),
        precision: fisher.matrix().clone(),
    });
    Ok(Target {
        potential,
        family: TargetFamily::Gaussian,
        m,
        l,
        analytic_covariance: Some(covariance),
        analytic_fisher: Some(fisher),
        analytic_mean: Some(mean.clone()),
        mode: Some(mean),
        witness: None,
        gaussian: Some(law),
        description: format!("gaussian(d={d})"),
    })
}

/// Centered Gaussian whose precision has eigenvalues spaced geometrically in
/// `[1, kappa]`, so `m = 1` and `L = kappa`. With `rotation_seed` the
/// eigenbasis is a seeded random rotation, otherwise the axes.
pub fn gaussian_with_condition(d: usize, kappa: f64, rotation_seed: Option<u64>) -> Result<Target> {
    if d == 0 {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    if !(kappa >= 1.0) || !kappa.is_finite() {
        return Err(Error::Parameter(format!("kappa must be >= 1, got {kappa}")));
    }
    if d == 1 && kappa != 1.0 {
        return Err(Error::Parameter("a one-dimensional Gaussian has kappa = 1".into()));
    }
    let precision: Vec<f64> = (0..d)
        .map(|i| {
            if d == 1 {
                1.0
            } else {
                kappa.powf(i as f64 / (d - 1) as f64)
            }
        })
        .collect();
    let variances = DVector::from_iterator(d, precision.iter().map(|p| 1.0 / p));
    let basis = match rotation_seed {
        Some(seed) => crate::linalg::random_orthogonal(d, &mut StreamRng::new(seed, 0)),
        None => DMatrix::identity(d, d),
    };
    let cov = SpdMatrix::new(spectral_function(&variances, &basis, |v| v))?;
    let mut t = make_gaussian_target(DVector::zeros(d), cov)?;
    // Report the designed constants rather than their round-off perturbations.
    t.m = 1.0;
    t.l = kappa;
    t.description = format!("gaussian(d={d},kappa={kappa})");
    Ok(t)
}

/// Moments of the 1d density `∝ exp(-z^2/2) / cosh z`.
#[derive(Debug, Clone, Copy)]
pub struct LogCoshMoments {
    /// `E[z^2]` (the mean is zero by symmetry).
    pub variance: f64,
    /// `E[(z + tanh z)^2]`.
    pub fisher: f64,
    /// `E[1 + sech^2 z]`, equal to `fisher` by integration by parts.
    pub mean_hessian: f64,
}

/// Trapezoidal quadrature on `[-40, 40]`; the integrand is analytic and
/// decays like `exp(-z^2/2)`, so the rule converges geometrically.
pub fn logcosh_moments() -> LogCoshMoments {
    static CELL: OnceLock<LogCoshMoments> = OnceLock::new();
    *CELL.get_or_init(|| {
        let (a, n) = (40.0_f64, 160_000usize);
        let step = 2.0 * a / n as f64;
        let (mut z0, mut z2, mut zf, mut zh) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..=n {
            let z = -a + step * i as f64;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            let dens = (-0.5 * z * z - log_cosh(z)).exp() * w;
            let sech = 1.0 / z.cosh();
            z0 += dens;
            z2 += dens * z * z;
            zf += dens * (z + z.tanh()).powi(2);
            zh += dens * (1.0 + sech * sech);
        }
        LogCoshMoments {
            variance: z2 / z0,
            fisher: zf / z0,
            mean_hessian: zh / z0,
        }
    })
}

/// `log cosh z` without overflow.
pub fn log_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

#[derive(Debug)]
struct LogCoshProduct {
    scales: Vec<f64>,
}

impl Potential for LogCoshProduct {
    fn dim(&self) -> usize {
        self.scales.len()
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        x.iter()
            .zip(&self.scales)
            .map(|(xi, s)| {
                let z = xi / s;
                0.5 * z * z + log_cosh(z)
            })
            .sum()
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            x.iter().zip(&self.scales).map(|(xi, s)| {
                let z = xi / s;
                (z + z.tanh()) / s
            }),
        )
    }

    fn gradient_cost(&self) -> u64 {
        // divide, tanh, add, divide, plus the tanh evaluation charged as two.
        6 * self.scales.len() as u64
    }
}

/// Product target `U(x) = Σ_i u(x_i / s_i)` with `u(z) = z^2/2 + log cosh z`.
/// The Hessian of `u` lies in `[1, 2]`, so the target has
/// `m = min 1/s_i^2`, `L = max 2/s_i^2` and the Hessian witness
/// `diag(1/s^2)` with constants `(1, 2)`.
pub fn logcosh_product(scales: &[f64]) -> Result<Target> {
    if scales.is_empty() {
        return Err(Error::Parameter("dimension must be positive".into()));
    }
    if scales.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::Parameter("scales must be positive and finite".into()));
    }
    let d = scales.len();
    let moments = logcosh_moments();
    let inv_sq: Vec<f64> = scales.iter().map(|s| 1.0 / (s * s)).collect();
    let m = inv_sq.iter().cloned().fold(f64::INFINITY, f64::min);
    let l = 2.0 * inv_sq.iter().cloned().fold(0.0, f64::max);
    let cov = SpdMatrix::from_diagonal(&scales.iter().map(|s| s * s * moments.variance).collect::<Vec<_>>())?;
    let fisher = SpdMatrix::from_diagonal(&inv_sq.iter().map(|v| v * moments.fisher).collect::<Vec<_>>())?;
    let witness = HessianWitness {
        reference: SpdMatrix::from_diagonal(&inv_sq)?,
        constants: PreconditionedConstants::new(1.0, 2.0, true)?,
    };
    let potential = Arc::new(LogCoshProduct {
        scales: scales.to_vec(),
    });
    let mut t = Target::custom(potential, m, l, &format!("logcosh-product(d={d})"))?
        .with_mean(DVector::zeros(d))
        .with_mode(DVector::zeros(d))
        .with_covariance(cov)
        .with_fisher(fisher)
        .with_witness(witness);
    t.family = TargetFamily::LogCoshProduct;
    Ok(t)
}

/// Exact constants for Gaussian targets; for other targets the Ostrowski
/// bracket derived from the target's Hessian witness.
pub fn preconditioned_constants(target: &Target, m: &SpdMatrix) -> Result<PreconditionedConstants> {
    if m.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: m.dim(),
        });
    }
    if target.family == TargetFamily::Gaussian {
        let precision = target
            .analytic_fisher
            .as_ref()
            .expect("Gaussian targets carry their precision");
        let w = SpdMatrix::new(m.whiten(precision.matrix())?)?;
        return PreconditionedConstants::new(w.lambda_min(), w.lambda_max(), true);
    }
    let witness = target.witness.as_ref().ok_or_else(|| {
        Error::UnsupportedTarget(format!(
            "{} has no Hessian witness; preconditioned constants are not computable",
            target.description
        ))
    })?;
    let (lo, hi) = ostrowski_bounds(m, &witness.reference, &witness.constants)?;
    PreconditionedConstants::new(lo, hi, false)
}

/// Bracket `(λ_min(W) m_{M2}, λ_max(W) L_{M2})` on the constants of `M1`,
/// where `W = M1^{-1/2} M2 M1^{-1/2}`.
pub fn ostrowski_bounds(m1: &SpdMatrix, m2: &SpdMatrix, c2: &PreconditionedConstants) -> Result<(f64, f64)> {
    if m1.dim() != m2.dim() {
        return Err(Error::DimensionMismatch {
            expected: m1.dim(),
            found: m2.dim(),
        });
    }
    let w = SpdMatrix::new(m1.whiten(m2.matrix())?)?;
    Ok((w.lambda_min() * c2.m_m, w.lambda_max() * c2.l_m))
}

/// Upper bound `κ(M1^{-1/2} M2 M1^{-1/2}) κ_{M2}` on `κ_{M1}`.
pub fn condition_number_transfer(m1: &SpdMatrix, m2: &SpdMatrix, kappa_m2: f64) -> Result<f64> {
    if m1.dim() != m2.dim() {
        return Err(Error::DimensionMismatch {
            expected: m1.dim(),
            found: m2.dim(),
        });
    }
    let w = SpdMatrix::new(m1.whiten(m2.matrix())?)?;
    Ok(w.condition_number() * kappa_m2)
}

fn check_bracket_tol(delta_tol: f64) -> Result<()> {
    if !(0.0..1.0).contains(&delta_tol) {
        return Err(Error::InvalidTolerance(format!(
            "relative tolerance must lie in [0, 1), got {delta_tol}"
        )));
    }
    Ok(())
}

/// Constants valid for every preconditioner `M = Ŝ^{-1}` whose inverse is
/// within relative error `delta_tol` of `M_ref^{-1}` (a certified covariance
/// estimate): `((1-Δ) m, (1+Δ) L, (1+Δ)/(1-Δ) κ)`.
pub fn estimated_preconditioner_bracket(
    delta_tol: f64,
    c_ref: &PreconditionedConstants,
) -> Result<PreconditionedConstants> {
    check_bracket_tol(delta_tol)?;
    Ok(PreconditionedConstants {
        m_m: (1.0 - delta_tol) * c_ref.m_m,
        l_m: (1.0 + delta_tol) * c_ref.l_m,
        kappa_m: (1.0 + delta_tol) / (1.0 - delta_tol) * c_ref.kappa_m,
        exact: false,
    })
}

/// Constants valid for every preconditioner `M` within relative error
/// `delta_tol` of `M_ref` itself (a certified Fisher estimate). Whitening
/// inverts the eigenvalue range, so the bracket is
/// `(m / (1+Δ), L / (1-Δ), (1+Δ)/(1-Δ) κ)`.
pub fn fisher_preconditioner_bracket(
    delta_tol: f64,
    c_ref: &PreconditionedConstants,
) -> Result<PreconditionedConstants> {
    check_bracket_tol(delta_tol)?;
    Ok(PreconditionedConstants {
        m_m: c_ref.m_m / (1.0 + delta_tol),
        l_m: c_ref.l_m / (1.0 - delta_tol),
        kappa_m: (1.0 + delta_tol) / (1.0 - delta_tol) * c_ref.kappa_m,
        exact: false,
    })
}

/// Largest relative gap between the gradient and central finite differences
/// of the potential over `points`, measured as `|fd - g| / max(|g|, 1)`.
pub fn gradient_fd_error(target: &Target, points: &[DVector<f64>]) -> f64 {
    let mut worst = 0.0_f64;
    for x in points {
        let g = target.gradient(x);
        let mut fd = DVector::zeros(x.len());
        for i in 0..x.len() {
            let step = 1e-5 * x[i].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            fd[i] = (target.potential(&xp) - target.potential(&xm)) / (2.0 * step);
        }
        worst = worst.max((&fd - &g).norm() / g.norm().max(1.0));
    }
    worst
}
