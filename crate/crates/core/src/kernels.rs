//! One-step Markov kernels and their W2-contraction parameters.
//!
//! A kernel `K` is a `(Γ, γ, b)`-contraction to `π` when
//! `W2(π, μK^k) <= Γ exp(-γk) W2(π, μ) + b` for every initial law `μ`.

use crate::error::{Error, Result};
use crate::flops;
use crate::linalg::SpdMatrix;
use crate::numerics::NumericPolicy;
use crate::rng::StreamRng;
use crate::target::Target;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionParams {
    /// Prefactor `Γ >= 1`.
    pub big_gamma: f64,
    /// Per-iteration exponential rate `γ > 0`.
    pub gamma: f64,
    /// Stationary bias `b >= 0`.
    pub b: f64,
    /// Largest step size for which the parametrization is valid.
    pub h_max: f64,
    /// Step size the parameters were derived for.
    pub h: f64,
}

impl ContractionParams {
    pub fn new(big_gamma: f64, gamma: f64, b: f64, h_max: f64, h: f64) -> Result<Self> {
        if !(big_gamma >= 1.0) || !(gamma > 0.0) || !(b >= 0.0) || !gamma.is_finite() || !b.is_finite() {
            return Err(Error::Parameter(format!(
                "contraction parameters need Gamma >= 1, gamma > 0, b >= 0; got ({big_gamma}, {gamma}, {b})"
            )));
        }
        Ok(Self {
            big_gamma,
            gamma,
            b,
            h_max,
            h,
        })
    }
}

fn check_step(h: f64, h_max: f64) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Parameter(format!(
            "step size must be positive and finite, got {h}"
        )));
    }
    if !NumericPolicy::default().at_most(h, h_max) {
        return Err(Error::StepSizeTooLarge { h, h_max });
    }
    Ok(())
}

/// ULA parameters from raw constants: `(1, m h, 1.65 κ sqrt(d h))`, valid for
/// `h <= 2/(L+m)`.
pub fn ula_params(m: f64, l: f64, d: usize, h: f64) -> Result<ContractionParams> {
    let h_max = 2.0 / (l + m);
    check_step(h, h_max)?;
    let kappa = l / m;
    ContractionParams::new(1.0, m * h, 1.65 * kappa * (d as f64 * h).sqrt(), h_max, h)
}

pub fn contraction_params_ula(target: &Target, h: f64) -> Result<ContractionParams> {
    ula_params(target.m(), target.l(), target.dim(), h)
}

/// Bias constant `E_K = 26 (d/m + D^2)` of the underdamped kernel.
pub fn underdamped_energy(m: f64, d: usize, d_init: f64) -> f64 {
    26.0 * (d as f64 / m + d_init * d_init)
}

/// Underdamped parameters from raw constants: `(4, h/(2κ), 16 κ sqrt(2 E_K/5) h)`,
/// valid for `h <= 1`.
pub fn underdamped_params(m: f64, l: f64, d: usize, h: f64, d_init: f64) -> Result<ContractionParams> {
    if !(d_init >= 0.0) {
        return Err(Error::Parameter(format!(
            "initial-distance bound must be >= 0, got {d_init}"
        )));
    }
    check_step(h, 1.0)?;
    let kappa = l / m;
    let e_k = underdamped_energy(m, d, d_init);
    ContractionParams::new(
        4.0,
        h / (2.0 * kappa),
        16.0 * kappa * (2.0 * e_k / 5.0).sqrt() * h,
        1.0,
        h,
    )
}

pub fn contraction_params_underdamped(target: &Target, h: f64, d_init: f64) -> Result<ContractionParams> {
    underdamped_params(target.m(), target.l(), target.dim(), h, d_init)
}

/// Parameters of unadjusted HMC with integration time `T` and leapfrog step
/// `h`: `(1, m T^2/6, 1704 L^{1/4} sqrt(d κ) h^{3/2} / (m T^2))`. Only the
/// parameters are provided; there is no HMC kernel.
pub fn contraction_params_hmc_preset(target: &Target, h: f64, t: f64) -> Result<ContractionParams> {
    let (m, l, d) = (target.m(), target.l(), target.dim() as f64);
    let t_max = 1.0 / (8.0 * l).sqrt();
    if !(t > 0.0) || !NumericPolicy::default().at_most(t, t_max) {
        return Err(Error::Parameter(format!(
            "integration time must satisfy 0 < T <= 1/sqrt(8L) = {t_max:e}, got {t}"
        )));
    }
    if !(h > 0.0) || !NumericPolicy::default().at_most(h, t) {
        return Err(Error::Parameter(format!(
            "leapfrog step must satisfy 0 < h <= T = {t:e}, got {h}"
        )));
    }
    let kappa = l / m;
    let b = 1704.0 * l.powf(0.25) * (d * kappa).sqrt() / (m * t * t) * h.powf(1.5);
    ContractionParams::new(1.0, m * t * t / 6.0, b, t, h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Ula,
    Underdamped,
}

/// Extra parameters of the underdamped kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnderdampedParams {
    /// Friction coefficient (2 by default).
    pub friction: f64,
    /// Velocity scale `u`; `None` means `1/L` of the sampled target.
    pub velocity_scale: Option<f64>,
    /// Bound `D` on the distance from the initial state to the mode.
    pub d_init: f64,
}

impl Default for UnderdampedParams {
    fn default() -> Self {
        Self {
            friction: 2.0,
            velocity_scale: None,
            d_init: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub h: f64,
    pub preconditioner: Option<SpdMatrix>,
    pub underdamped: UnderdampedParams,
}

impl KernelConfig {
    pub fn ula(h: f64) -> Self {
        Self {
            family: KernelFamily::Ula,
            h,
            preconditioner: None,
            underdamped: UnderdampedParams::default(),
        }
    }

    pub fn underdamped(h: f64, params: UnderdampedParams) -> Self {
        Self {
            family: KernelFamily::Underdamped,
            h,
            preconditioner: None,
            underdamped: params,
        }
    }

    pub fn with_preconditioner(mut self, m: SpdMatrix) -> Self {
        self.preconditioner = Some(m);
        self
    }

    /// FLOPs of one step, given the target's gradient cost.
    pub fn step_flops(&self, d: usize, gradient_cost: u64) -> u64 {
        let base = match self.family {
            KernelFamily::Ula => flops::ula_step_flops(d, gradient_cost),
            KernelFamily::Underdamped => flops::underdamped_step_flops(d, gradient_cost),
        };
        base + if self.preconditioner.is_some() {
            flops::preconditioned_step_extra(d)
        } else {
            0
        }
    }

    pub fn vector_ops(&self) -> u64 {
        match self.family {
            KernelFamily::Ula => flops::ULA_VECTOR_OPS,
            KernelFamily::Underdamped => flops::UNDERDAMPED_VECTOR_OPS,
        }
    }
}

fn numerical_failure(detail: &str, state: &DVector<f64>) -> Error {
    Error::NumericalFailure {
        iteration: 0,
        detail: detail.to_string(),
        state: state.iter().copied().collect(),
    }
}

fn check_finite(v: &DVector<f64>, what: &str, state: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(numerical_failure(&format!("non-finite {what}"), state))
    }
}

/// Deterministic ULA update `x - h g + sqrt(2h) noise`.
pub fn ula_update(x: &DVector<f64>, grad: &DVector<f64>, h: f64, noise: &DVector<f64>) -> DVector<f64> {
    let s = (2.0 * h).sqrt();
    DVector::from_iterator(
        x.len(),
        x.iter()
            .zip(grad.iter())
            .zip(noise.iter())
            .map(|((xi, gi), zi)| xi - h * gi + s * zi),
    )
}

/// One ULA step; consumes `d` standard normals.
pub fn ula_step(state: &DVector<f64>, target: &Target, h: f64, rng: &mut StreamRng) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {h}")));
    }
    let g = target.gradient(state);
    check_finite(&g, "gradient", state)?;
    let xi = rng.normal_vec(state.len());
    let next = ula_update(state, &g, h, &xi);
    check_finite(&next, "state", state)?;
    Ok(next)
}

/// Gradient of the pushforward potential `U(M^{-1/2} y)`.
pub fn pushforward_gradient(y: &DVector<f64>, target: &Target, m: &SpdMatrix) -> DVector<f64> {
    let x = m.inv_sqrt_matrix() * y;
    m.inv_sqrt_matrix() * target.gradient(&x)
}

/// One ULA step on `M^{1/2}_# π` in the coordinates `y = M^{1/2} x`.
pub fn preconditioned_ula_step(
    state: &DVector<f64>,
    target: &Target,
    m: &SpdMatrix,
    h: f64,
    rng: &mut StreamRng,
) -> Result<DVector<f64>> {
    if !(h > 0.0) {
        return Err(Error::Parameter(format!("step size must be positive, got {h}")));
    }
    if m.dim() != state.len() {
        return Err(Error::DimensionMismatch {
            expected: state.len(),
            found: m.dim(),
        });
    }
    let g = pushforward_gradient(state, target, m);
    check_finite(&g, "gradient", state)?;
    let xi = rng.normal_vec(state.len());
    let next = ula_update(state, &g, h, &xi);
    check_finite(&next, "state", state)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
}

impl PhaseState {
    pub fn at_rest(position: DVector<f64>) -> Self {
        let d = position.len();
        Self {
            position,
            velocity: DVector::zeros(d),
        }
    }
}

/// Coefficients of one underdamped step with frozen gradient: the exact
/// solution of `dv = -γ v dt - u g dt + sqrt(2γu) dB`, `dx = v dt` over time `h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnderdampedCoefficients {
    pub velocity_decay: f64,
    pub velocity_grad: f64,
    pub position_velocity: f64,
    pub position_grad: f64,
    pub var_position: f64,
    pub cov_position_velocity: f64,
    pub var_velocity: f64,
    chol_11: f64,
    chol_21: f64,
    chol_22: f64,
}

/// `2s - 4(1 - e^{-s}) + (1 - e^{-2s})`, with a series for small `s` where
/// the direct form cancels.
fn position_variance_kernel(s: f64) -> f64 {
    if s < 1e-2 {
        s.powi(3) * (2.0 / 3.0 - s * (0.5 - s * (7.0 / 30.0 - s * (1.0 / 12.0 - s * 31.0 / 1260.0))))
    } else {
        2.0 * s + 4.0 * (-s).exp_m1() - (-2.0 * s).exp_m1()
    }
}

impl UnderdampedCoefficients {
    pub fn new(h: f64, friction: f64, velocity_scale: f64) -> Result<Self> {
        if !(h > 0.0) || !(friction > 0.0) || !(velocity_scale > 0.0) {
            return Err(Error::Parameter(format!(
                "underdamped step needs h, friction, velocity scale > 0; got ({h}, {friction}, {velocity_scale})"
            )));
        }
        let (g, u) = (friction, velocity_scale);
        let s = g * h;
        let one_minus = -(-s).exp_m1();
        let var_position = u / (g * g) * position_variance_kernel(s);
        let cov_position_velocity = u / g * one_minus * one_minus;
        let var_velocity = -u * (-2.0 * s).exp_m1();
        let chol_11 = var_position.sqrt();
        let chol_21 = cov_position_velocity / chol_11;
        let chol_22 = (var_velocity - chol_21 * chol_21).max(0.0).sqrt();
        Ok(Self {
            velocity_decay: (-s).exp(),
            velocity_grad: u / g * one_minus,
            position_velocity: one_minus / g,
            position_grad: u / (g * g) * (s + (-s).exp_m1()),
            var_position,
            cov_position_velocity,
            var_velocity,
            chol_11,
            chol_21,
            chol_22,
        })
    }

    /// Deterministic update given the gradient and two noise vectors.
    pub fn apply(&self, state: &PhaseState, grad: &DVector<f64>, z1: &DVector<f64>, z2: &DVector<f64>) -> PhaseState {
        let d = state.position.len();
        let mut position = DVector::zeros(d);
        let mut velocity = DVector::zeros(d);
        for i in 0..d {
            let (x, v, g) = (state.position[i], state.velocity[i], grad[i]);
            position[i] = x + self.position_velocity * v - self.position_grad * g + self.chol_11 * z1[i];
            velocity[i] =
                self.velocity_decay * v - self.velocity_grad * g + self.chol_21 * z1[i] + self.chol_22 * z2[i];
        }
        PhaseState { position, velocity }
    }
}

/// One underdamped step with friction and velocity scale from `params`
/// (velocity scale defaulting to `1/L`); consumes `2d` standard normals.
pub fn underdamped_step(
    state: &PhaseState,
    target: &Target,
    h: f64,
    params: &UnderdampedParams,
    rng: &mut StreamRng,
) -> Result<PhaseState> {
    check_step(h, 1.0)?;
    let u = params.velocity_scale.unwrap_or(1.0 / target.l());
    let coeffs = UnderdampedCoefficients::new(h, params.friction, u)?;
    let g = target.gradient(&state.position);
    underdamped_advance(state, &g, &coeffs, rng)
}

/// Advance with a precomputed gradient; shared by the plain and
/// preconditioned underdamped chains.
pub fn underdamped_advance(
    state: &PhaseState,
    grad: &DVector<f64>,
    coeffs: &UnderdampedCoefficients,
    rng: &mut StreamRng,
) -> Result<PhaseState> {
    check_finite(grad, "gradient", &state.position)?;
    let d = state.position.len();
    let z1 = rng.normal_vec(d);
    let z2 = rng.normal_vec(d);
    let next = coeffs.apply(state, grad, &z1, &z2);
    check_finite(&next.position, "state", &state.position)?;
    check_finite(&next.velocity, "velocity", &state.position)?;
    Ok(next)
}
