//! Thinned and two-phase preconditioned samplers with FLOP accounting.

use crate::budget::{
    certified_bracket, plan_learning, plan_preconditioned, plan_ula_unpreconditioned_from,
    plan_underdamped_unpreconditioned, reference_constants, Budget, LearnSpec, LearningKernel, PreconditionerKind,
    UlaLearning, UnderdampedLearning,
};
use crate::error::{Error, Result};
use crate::estimators::{
    certify, estimate_ledger, estimate_preconditioner, Certificate, Ensemble, EnsembleMeta, SteppingMode,
};
use crate::flops::{self, FlopLedger};
use crate::kernels::{
    pushforward_gradient, ula_update, underdamped_advance, KernelConfig, KernelFamily, PhaseState,
    UnderdampedCoefficients, UnderdampedParams,
};
use crate::linalg::{bures_w2, GaussianLaw, SpdMatrix};
use crate::numerics::NumericPolicy;
use crate::oracle::{preconditioned_law, LinearGaussianChain};
use crate::rng::{streams, StreamRng};
use crate::target::{PreconditionedConstants, Target};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Initial law `μ0` (Gaussian, possibly degenerate) with optional
/// caller-supplied bounds on `W2(π, μ0)` and on the distance to the mode.
#[derive(Debug, Clone)]
pub struct InitialLaw {
    pub law: GaussianLaw,
    pub w2_bound: Option<f64>,
    pub mode_distance: Option<f64>,
}

impl InitialLaw {
    pub fn point(x: DVector<f64>) -> Self {
        Self::gaussian(GaussianLaw::point_mass(x))
    }

    pub fn gaussian(law: GaussianLaw) -> Self {
        Self {
            law,
            w2_bound: None,
            mode_distance: None,
        }
    }

    /// Point mass at the target's mode.
    pub fn at_mode(target: &Target) -> Result<Self> {
        let mode = target
            .mode()
            .ok_or_else(|| Error::Parameter("the target's mode is unknown; supply an initial distribution".into()))?;
        Ok(Self::point(mode.clone()))
    }

    pub fn with_w2_bound(mut self, bound: f64) -> Self {
        self.w2_bound = Some(bound);
        self
    }

    pub fn dim(&self) -> usize {
        self.law.dim()
    }

    pub fn sample(&self, rng: &mut StreamRng) -> DVector<f64> {
        self.law.sample(rng)
    }

    /// `W2(π, μ0)`: exact for Gaussian targets, otherwise
    /// `sqrt(tr Σ) + sqrt(tr C0 + |m0 - μ|²)` from known moments.
    pub fn w2_to_target(&self, target: &Target) -> Result<f64> {
        if let Some(b) = self.w2_bound {
            return Ok(b);
        }
        if let Some(law) = target.gaussian_law() {
            return bures_w2(law, &self.law);
        }
        match (target.analytic_mean(), target.analytic_covariance()) {
            (Some(mean), Some(cov)) => {
                let spread = self.law.covariance().trace() + (self.law.mean() - mean).norm_squared();
                Ok(cov.trace().sqrt() + spread.sqrt())
            }
            _ => Err(Error::Parameter(
                "W2 between the target and the initial law is unknown; supply an upper bound".into(),
            )),
        }
    }

    /// `D = sqrt(tr C0 + |m0 - mode|²)`.
    pub fn mode_distance(&self, target: &Target) -> Result<f64> {
        if let Some(d) = self.mode_distance {
            return Ok(d);
        }
        let mode = target.mode().ok_or_else(|| {
            Error::Parameter("the target's mode is unknown; supply a bound on the initial distance to it".into())
        })?;
        Ok((self.law.covariance().trace() + (self.law.mean() - mode).norm_squared()).sqrt())
    }

    /// Law of `B X` for `X ~ μ0`; distance bounds are dropped.
    pub fn push_forward(&self, b: &DMatrix<f64>) -> Result<Self> {
        Ok(Self::gaussian(self.law.push_forward(b, &DVector::zeros(b.nrows()))?))
    }
}

/// How the chain is advanced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stepping {
    Iterate,
    /// Exact `k`-step transitions; ULA on Gaussian targets only.
    Exact,
    /// `Exact` when available and the run exceeds the policy threshold.
    #[default]
    Auto,
}

fn kernel_label(kernel: &KernelConfig) -> String {
    let family = match kernel.family {
        KernelFamily::Ula => "ula",
        KernelFamily::Underdamped => "underdamped",
    };
    let pre = if kernel.preconditioner.is_some() {
        "preconditioned "
    } else {
        ""
    };
    format!("{pre}{family} h={:e}", kernel.h)
}

/// The Gaussian law the chain targets in its own coordinates, if any.
fn chain_gaussian(kernel: &KernelConfig, target: &Target) -> Result<Option<GaussianLaw>> {
    if kernel.family != KernelFamily::Ula {
        return Ok(None);
    }
    match (target.gaussian_law(), &kernel.preconditioner) {
        (None, _) => Ok(None),
        (Some(law), None) => Ok(Some(law.clone())),
        (Some(law), Some(m)) => Ok(Some(preconditioned_law(law, m)?)),
    }
}

/// Burn in, then thin: `X_1 ~ μ0 K^{k_burn}`, `X_{t+1} ~ K^{k_thin}(X_t → ·)`.
///
/// With a preconditioner `M` in `kernel`, the chain runs on `M^{1/2}_♯ π` in
/// the coordinates `y = M^{1/2} x` and `init` must be given in those coordinates.
pub fn run_thinned(
    kernel: &KernelConfig,
    target: &Target,
    init: &InitialLaw,
    budget: &Budget,
    rng: &mut StreamRng,
    stepping: Stepping,
) -> Result<Ensemble> {
    run_thinned_with(kernel, target, init, budget, rng, stepping, &NumericPolicy::default())
}

pub fn run_thinned_with(
    kernel: &KernelConfig,
    target: &Target,
    init: &InitialLaw,
    budget: &Budget,
    rng: &mut StreamRng,
    stepping: Stepping,
    policy: &NumericPolicy,
) -> Result<Ensemble> {
    let d = target.dim();
    if init.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: init.dim(),
        });
    }
    if budget.n == 0 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    let total = budget.total_steps();
    let exact_law = chain_gaussian(kernel, target)?;
    let mode = match (stepping, &exact_law) {
        (Stepping::Iterate, _) => SteppingMode::Iterate,
        (Stepping::Exact, Some(_)) => SteppingMode::Exact,
        (Stepping::Exact, None) => {
            return Err(Error::UnsupportedTarget(
                "exact stepping needs ULA on a Gaussian target".into(),
            ))
        }
        (Stepping::Auto, Some(_)) if total > policy.exact_stepping_threshold as u128 => SteppingMode::Exact,
        (Stepping::Auto, _) => SteppingMode::Iterate,
    };
    let (states, step_indices) = match (mode, &exact_law) {
        (SteppingMode::Exact, Some(law)) => exact_run(law, kernel.h, init, budget, rng)?,
        _ => iterate_run(kernel, target, init, budget, rng)?,
    };
    let mut ledger = FlopLedger::new(target.gradient_cost());
    let matvecs = if kernel.preconditioner.is_some() { 2 } else { 0 };
    ledger.charge_steps(total, d, matvecs, kernel.vector_ops());
    let meta = EnsembleMeta {
        seed: rng.seed(),
        stream: rng.stream(),
        kernel: kernel_label(kernel),
        budget: Some(budget.clone()),
        ledger,
        step_indices,
        stepping: mode,
    };
    Ensemble::new(states, meta)
}

fn exact_run(
    law: &GaussianLaw,
    h: f64,
    init: &InitialLaw,
    budget: &Budget,
    rng: &mut StreamRng,
) -> Result<(Vec<DVector<f64>>, Vec<u128>)> {
    let chain = LinearGaussianChain::new(law, h)?;
    let burn = chain.k_step(budget.k_burn);
    let thin = chain.k_step(budget.k_thin);
    let mut x = init.sample(rng);
    if budget.k_burn > 0 {
        x = chain.sample_from(&x, &burn, rng);
    }
    let mut states = Vec::with_capacity(budget.n);
    let mut indices = Vec::with_capacity(budget.n);
    let mut counter = budget.k_burn as u128;
    states.push(x.clone());
    indices.push(counter);
    for _ in 1..budget.n {
        x = chain.sample_from(&x, &thin, rng);
        counter += budget.k_thin as u128;
        states.push(x.clone());
        indices.push(counter);
    }
    Ok((states, indices))
}

/// One-step kernel state machine shared by the iterated runs.
enum Stepper<'a> {
    Ula {
        target: &'a Target,
        preconditioner: Option<&'a SpdMatrix>,
        h: f64,
    },
    Underdamped {
        target: &'a Target,
        preconditioner: Option<&'a SpdMatrix>,
        coeffs: UnderdampedCoefficients,
        velocity: DVector<f64>,
    },
}

impl Stepper<'_> {
    fn gradient(target: &Target, m: Option<&SpdMatrix>, y: &DVector<f64>) -> DVector<f64> {
        match m {
            Some(m) => pushforward_gradient(y, target, m),
            None => target.gradient(y),
        }
    }

    fn step(&mut self, x: &DVector<f64>, rng: &mut StreamRng) -> Result<DVector<f64>> {
        match self {
            Stepper::Ula {
                target,
                preconditioner,
                h,
            } => {
                let g = Self::gradient(target, *preconditioner, x);
                if !g.iter().all(|v| v.is_finite()) {
                    return Err(Error::NumericalFailure {
                        iteration: 0,
                        detail: "non-finite gradient".into(),
                        state: x.iter().copied().collect(),
                    });
                }
                let xi = rng.normal_vec(x.len());
                let next = ula_update(x, &g, *h, &xi);
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(Error::NumericalFailure {
                        iteration: 0,
                        detail: "non-finite state".into(),
                        state: x.iter().copied().collect(),
                    });
                }
                Ok(next)
            }
            Stepper::Underdamped {
                target,
                preconditioner,
                coeffs,
                velocity,
            } => {
                let g = Self::gradient(target, *preconditioner, x);
                let state = PhaseState {
                    position: x.clone(),
                    velocity: velocity.clone(),
                };
                let next = underdamped_advance(&state, &g, coeffs, rng)?;
                *velocity = next.velocity;
                Ok(next.position)
            }
        }
    }
}

fn iterate_run(
    kernel: &KernelConfig,
    target: &Target,
    init: &InitialLaw,
    budget: &Budget,
    rng: &mut StreamRng,
) -> Result<(Vec<DVector<f64>>, Vec<u128>)> {
    if !(kernel.h > 0.0) {
        return Err(Error::Parameter(format!(
            "step size must be positive, got {}",
            kernel.h
        )));
    }
    let d = target.dim();
    let pre = kernel.preconditioner.as_ref();
    if let Some(m) = pre {
        if m.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: m.dim(),
            });
        }
    }
    let mut stepper = match kernel.family {
        KernelFamily::Ula => Stepper::Ula {
            target,
            preconditioner: pre,
            h: kernel.h,
        },
        KernelFamily::Underdamped => {
            let u = kernel.underdamped.velocity_scale.unwrap_or(1.0 / target.l());
            Stepper::Underdamped {
                target,
                preconditioner: pre,
                coeffs: UnderdampedCoefficients::new(kernel.h, kernel.underdamped.friction, u)?,
                velocity: DVector::zeros(d),
            }
        }
    };
    let mut x = init.sample(rng);
    let mut counter: u64 = 0;
    let mut advance = |x: &mut DVector<f64>, k: u64, counter: &mut u64, rng: &mut StreamRng| -> Result<()> {
        for _ in 0..k {
            *x = stepper.step(x, rng).map_err(|e| e.at_iteration(*counter + 1))?;
            *counter += 1;
        }
        Ok(())
    };
    advance(&mut x, budget.k_burn, &mut counter, rng)?;
    let mut states = vec![x.clone()];
    let mut indices = vec![counter as u128];
    for _ in 1..budget.n {
        advance(&mut x, budget.k_thin, &mut counter, rng)?;
        states.push(x.clone());
        indices.push(counter as u128);
    }
    Ok((states, indices))
}

/// Options for [`run_preconditioned`].
#[derive(Debug, Clone, Default)]
pub struct PreconditionedOptions {
    pub family: Option<KernelFamily>,
    pub stepping: Stepping,
    /// Replace the learned preconditioner (test hook).
    pub forced_preconditioner: Option<SpdMatrix>,
    /// Constants of the reference preconditioner; derived from the target when absent.
    pub reference_constants: Option<PreconditionedConstants>,
    pub policy: NumericPolicy,
}

#[derive(Debug, Clone)]
pub struct PreconditionedRun {
    /// Output states `M^{-1/2} X̃_t`; the ledger covers both phases.
    pub ensemble: Ensemble,
    /// Phase-2 chain states `X̃_t`.
    pub raw: Ensemble,
    pub learn_ensemble: Ensemble,
    pub preconditioner: SpdMatrix,
    /// `Σ̂` or `F̂`.
    pub estimate: SpdMatrix,
    pub certificate: Option<Certificate>,
    pub learn_budget: Budget,
    pub sample_budget: Budget,
    pub learn_ledger: FlopLedger,
    pub sample_ledger: FlopLedger,
}

impl PreconditionedRun {
    pub fn total_ledger(&self) -> FlopLedger {
        self.learn_ledger.merged(&self.sample_ledger)
    }
}

fn learning_kernel(family: KernelFamily, d_init: f64) -> Box<dyn LearningKernel> {
    match family {
        KernelFamily::Ula => Box::new(UlaLearning),
        KernelFamily::Underdamped => Box::new(UnderdampedLearning { d_init }),
    }
}

fn kernel_for(family: KernelFamily, h: f64, d_init: f64, velocity_scale: Option<f64>) -> KernelConfig {
    match family {
        KernelFamily::Ula => KernelConfig::ula(h),
        KernelFamily::Underdamped => KernelConfig::underdamped(
            h,
            UnderdampedParams {
                friction: 2.0,
                velocity_scale,
                d_init,
            },
        ),
    }
}

/// Certificate of an estimate against the target's analytic reference.
pub fn certificate_for(
    target: &Target,
    kind: PreconditionerKind,
    estimate: &SpdMatrix,
    tol: f64,
) -> Result<Option<Certificate>> {
    let reference = match kind {
        PreconditionerKind::Covariance => target.analytic_covariance(),
        PreconditionerKind::Fisher => target.analytic_fisher(),
    };
    reference.map(|r| certify(estimate, r, tol)).transpose()
}

/// Phase 1 only: learn `M` with the planned learning budget.
pub fn run_learning(
    target: &Target,
    spec: &LearnSpec,
    family: KernelFamily,
    init: &InitialLaw,
    rng: &mut StreamRng,
    stepping: Stepping,
    policy: &NumericPolicy,
) -> Result<(Ensemble, Budget)> {
    let w2 = init.w2_to_target(target)?;
    let d_init = match family {
        KernelFamily::Ula => 0.0,
        KernelFamily::Underdamped => init.mode_distance(target)?,
    };
    let budget = plan_learning(target, spec, learning_kernel(family, d_init).as_ref(), w2)?;
    let kernel = kernel_for(family, budget.h, d_init, None);
    let ensemble = run_thinned_with(&kernel, target, init, &budget, rng, stepping, policy)?;
    Ok((ensemble, budget))
}

/// Two-phase sampling: learn `M` from a thinned run, re-plan with the certified
/// bracket, sample `M^{1/2}_♯ π`, and map the outputs back through `M^{-1/2}`.
///
/// `eps` is the accuracy of the phase-2 chain in its own coordinates; the
/// returned states are then `√N ‖M^{-1/2}‖ eps`-AIID from `π`.
pub fn run_preconditioned(
    target: &Target,
    spec: &LearnSpec,
    eps: f64,
    n: usize,
    init: &InitialLaw,
    seed: u64,
    options: &PreconditionedOptions,
) -> Result<PreconditionedRun> {
    let family = options.family.unwrap_or(KernelFamily::Ula);
    let policy = &options.policy;
    let d = target.dim();
    let g = target.gradient_cost();

    let mut learn_rng = StreamRng::new(seed, streams::LEARN);
    let (learn, learn_budget) = run_learning(target, spec, family, init, &mut learn_rng, options.stepping, policy)?;
    let (learned, estimate) =
        estimate_preconditioner(spec.kind, learn.states(), target, policy).map_err(|e| match e {
            Error::DegenerateEnsemble(msg) => Error::DegenerateEnsemble(format!(
                "{msg} (learning phase: N = {}, h = {:e}, k_burn = {}, k_thin = {})",
                learn_budget.n, learn_budget.h, learn_budget.k_burn, learn_budget.k_thin
            )),
            other => other,
        })?;
    let certificate = certificate_for(target, spec.kind, &estimate, spec.tol)?;
    let mut learn_ledger = learn
        .meta
        .ledger
        .merged(&estimate_ledger(spec.kind, learn_budget.n, d, g));
    learn_ledger.factorization_flops += flops::cholesky_flops(d) as u128;

    let m = options.forced_preconditioner.clone().unwrap_or(learned);
    let c_ref = match options.reference_constants {
        Some(c) => c,
        None => reference_constants(target, spec.kind)?,
    };
    let scale = m.lambda_max().sqrt();
    let w2 = scale * init.w2_to_target(target)?;
    let d_init = match family {
        KernelFamily::Ula => 0.0,
        KernelFamily::Underdamped => scale * init.mode_distance(target)?,
    };
    let sample_budget = plan_preconditioned(family, d, spec.kind, &c_ref, spec.tol, eps, n, w2, d_init)?;
    let (bracket, _, _) = certified_bracket(spec.kind, spec.tol, &c_ref)?;
    let velocity_scale = Some(1.0 / bracket.l_m);
    let kernel = kernel_for(family, sample_budget.h, d_init, velocity_scale).with_preconditioner(m.clone());
    let pushed = init.push_forward(m.sqrt_matrix())?;
    let mut sample_rng = StreamRng::new(seed, streams::SAMPLE);
    let raw = run_thinned_with(
        &kernel,
        target,
        &pushed,
        &sample_budget,
        &mut sample_rng,
        options.stepping,
        policy,
    )?;
    let mut sample_ledger = raw.meta.ledger;
    sample_ledger.matvec_flops += (n as u64 * flops::matvec_flops(d)) as u128;

    let outputs: Vec<DVector<f64>> = raw.states().iter().map(|y| m.inv_sqrt_matrix() * y).collect();
    let mut meta = raw.meta.clone();
    meta.seed = seed;
    meta.ledger = learn_ledger.merged(&sample_ledger);
    let ensemble = Ensemble::new(outputs, meta)?;
    Ok(PreconditionedRun {
        ensemble,
        raw,
        learn_ensemble: learn,
        preconditioner: m,
        estimate,
        certificate,
        learn_budget,
        sample_budget,
        learn_ledger,
        sample_ledger,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastMode {
    Unpre,
    Cov,
    Fisher,
}

impl ForecastMode {
    pub fn kind(&self) -> Option<PreconditionerKind> {
        match self {
            ForecastMode::Unpre => None,
            ForecastMode::Cov => Some(PreconditionerKind::Covariance),
            ForecastMode::Fisher => Some(PreconditionerKind::Fisher),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ForecastMode::Unpre => "unpre",
            ForecastMode::Cov => "cov",
            ForecastMode::Fisher => "fisher",
        }
    }
}

/// Planned FLOP totals. Totals are `f64` because they routinely exceed `u64`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlopForecast {
    pub mode: ForecastMode,
    pub family: KernelFamily,
    pub learn_total: f64,
    pub sample_total: f64,
    pub total: f64,
    pub learn_budget: Option<Budget>,
    pub sample_budget: Budget,
    /// Leading-order expression and its value without log factors.
    pub asymptotic: String,
    pub asymptotic_value: f64,
}

fn per_step(family: KernelFamily, d: usize, g: u64, preconditioned: bool) -> f64 {
    let vector = match family {
        KernelFamily::Ula => flops::ULA_VECTOR_OPS,
        KernelFamily::Underdamped => flops::UNDERDAMPED_VECTOR_OPS,
    };
    let extra = if preconditioned {
        flops::preconditioned_step_extra(d)
    } else {
        0
    };
    (g + vector * d as u64 + extra) as f64
}

/// Exact planned FLOP total from the emitted budgets.
///
/// Learning phase: kernel steps, the estimate, its inversion (covariance)
/// and the Cholesky factor of `M`. Sampling phase: preconditioned kernel
/// steps and the `N` output maps. The phase-2 initial distance uses the
/// bracket bound `sqrt(d / m_bracket) + sup ‖M^{1/2}‖ W2(δ_μ, μ0)`.
pub fn total_flops_forecast(
    target: &Target,
    mode: ForecastMode,
    family: KernelFamily,
    eps: f64,
    n: usize,
    learn: &LearnSpec,
    init: &InitialLaw,
) -> Result<FlopForecast> {
    let d = target.dim();
    let df = d as f64;
    let g = target.gradient_cost();
    let gf = g as f64;
    let (m, kappa) = (target.m(), target.kappa());
    let w2 = init.w2_to_target(target)?;
    let Some(kind) = mode.kind() else {
        let (budget, asymptotic, value) = match family {
            KernelFamily::Ula => {
                let b = plan_ula_unpreconditioned_from(target, eps, n, w2)?;
                (
                    b,
                    "m^-1 (d + G) kappa^2 N eps^-2",
                    (df + gf) * kappa * kappa * n as f64 / (m * eps * eps),
                )
            }
            KernelFamily::Underdamped => {
                let dist = init.mode_distance(target)?;
                let b = plan_underdamped_unpreconditioned(target, eps, n, dist, w2)?;
                let e_k = crate::kernels::underdamped_energy(m, d, dist);
                (
                    b,
                    "(d + G) kappa^2 sqrt(E_K) N / eps",
                    (df + gf) * kappa * kappa * e_k.sqrt() * n as f64 / eps,
                )
            }
        };
        let sample_total = budget.total_steps_f64() * per_step(family, d, g, false);
        return Ok(FlopForecast {
            mode,
            family,
            learn_total: 0.0,
            sample_total,
            total: sample_total,
            learn_budget: None,
            sample_budget: budget,
            asymptotic: asymptotic.into(),
            asymptotic_value: value,
        });
    };
    let mut spec = *learn;
    spec.kind = kind;
    let d_init = match family {
        KernelFamily::Ula => 0.0,
        KernelFamily::Underdamped => init.mode_distance(target)?,
    };
    let learn_budget = plan_learning(target, &spec, learning_kernel(family, d_init).as_ref(), w2)?;
    let nl = learn_budget.n;
    let est = estimate_ledger(kind, nl, d, g);
    let learn_total = learn_budget.total_steps_f64() * per_step(family, d, g, false)
        + est.total() as f64
        + flops::cholesky_flops(d) as f64;

    let c_ref = reference_constants(target, kind)?;
    let tol = spec.tol;
    let m_ref_max = match kind {
        PreconditionerKind::Covariance => target.analytic_covariance().map(|c| 1.0 / c.lambda_min()),
        PreconditionerKind::Fisher => target.analytic_fisher().map(|f| f.lambda_max()),
    }
    .unwrap_or(target.l());
    let centre = target
        .analytic_mean()
        .or(target.mode())
        .ok_or_else(|| Error::Parameter("forecast needs the target mean or mode".into()))?;
    let offset = (init.law.covariance().trace() + (init.law.mean() - centre).norm_squared()).sqrt();
    let (bracket, _, _) = certified_bracket(kind, tol, &c_ref)?;
    // λ_max(M) over the certificate: M = Ŝ^{-1} <= M_ref / (1-Δ) for covariance, M <= (1+Δ) M_ref for Fisher.
    let m_max = match kind {
        PreconditionerKind::Covariance => m_ref_max / (1.0 - tol),
        PreconditionerKind::Fisher => m_ref_max * (1.0 + tol),
    };
    let w2_phase2 = (df / bracket.m_m).sqrt() + m_max.sqrt() * offset;
    let d_init2 = m_max.sqrt() * d_init;
    let sample_budget = plan_preconditioned(family, d, kind, &c_ref, tol, eps, n, w2_phase2, d_init2)?;
    let sample_total =
        sample_budget.total_steps_f64() * per_step(family, d, g, true) + (n as u64 * flops::matvec_flops(d)) as f64;

    let delta = spec.delta;
    let kc = learn_budget.learn.map(|l| l.k_constant).unwrap_or(1.0);
    let (asymptotic, value) = match kind {
        PreconditionerKind::Covariance => (
            "delta^-2 d^3 (d + G) kappa^3 max{delta^-1, K^3} + (d^2 + G) kappa_ref^2 N eps^-2",
            df.powi(3) * (df + gf) * kappa.powi(3) * (1.0 / delta).max(kc.powi(3)) / (delta * delta)
                + (df * df + gf) * c_ref.kappa_m.powi(2) * n as f64 / (eps * eps),
        ),
        PreconditionerKind::Fisher => (
            "delta^-2 d^3 (d + G) kappa^4 K^3 + (d^2 + G) kappa_ref^2 N eps^-2",
            df.powi(3) * (df + gf) * kappa.powi(4) * kc.powi(3) / (delta * delta)
                + (df * df + gf) * c_ref.kappa_m.powi(2) * n as f64 / (eps * eps),
        ),
    };
    Ok(FlopForecast {
        mode,
        family,
        learn_total,
        sample_total,
        total: learn_total + sample_total,
        learn_budget: Some(learn_budget),
        sample_budget,
        asymptotic: asymptotic.into(),
        asymptotic_value: value,
    })
}

/// Write `states.csv` and the JSON sidecar `states.csv.json`.
pub fn write_ensemble(path: &Path, ensemble: &Ensemble, sidecar: &serde_json::Value) -> Result<()> {
    ensemble.write_csv(path)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    std::fs::write(Path::new(&side), serde_json::to_string_pretty(sidecar)? + "\n")?;
    Ok(())
}
