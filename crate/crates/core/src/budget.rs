//! Burn-in, thinning, step-size and learning-size schedules.
//!
//! For a `(Γ, γ, b)`-contraction, a thinned chain with
//!
//! ```text
//! k_burn >= (1/γ)  ln( 3Γ³ W2(π, μ0) / (ε − 3Γ²b) )
//! k_thin >= (1/2γ) ln( 2Γ²(3 tr Σ + 4b²) / (ε² − 2b²) )
//! ```
//!
//! outputs `N` states whose joint law is within `√N ε` of `π^⊗N` in W2,
//! provided `3Γ²b < ε` and `ε² <= Γ²(3 tr Σ + 4b²) + 2b²`. Every planner
//! below reduces to this rule after choosing a step size.

use crate::error::{Error, Result};
use crate::kernels::{ula_params, underdamped_energy, underdamped_params, ContractionParams, KernelFamily};
use crate::numerics::NumericPolicy;
use crate::target::{
    estimated_preconditioner_bracket, fisher_preconditioner_bracket, preconditioned_constants, PreconditionedConstants,
    Target,
};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

/// One inequality checked while planning, with both sides evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InequalityCheck {
    pub name: String,
    pub lhs: f64,
    pub relation: String,
    pub rhs: f64,
    pub holds: bool,
}

impl InequalityCheck {
    fn new(name: &str, lhs: f64, relation: &str, rhs: f64) -> Self {
        let policy = NumericPolicy::default();
        let holds = match relation {
            "<" => lhs < rhs,
            _ => policy.at_most(lhs, rhs),
        };
        Self {
            name: name.to_string(),
            lhs,
            relation: relation.to_string(),
            rhs,
            holds,
        }
    }
}

/// Which rule produced a budget field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProvenanceEntry {
    pub field: String,
    pub rule: String,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub entries: Vec<ProvenanceEntry>,
    pub checks: Vec<InequalityCheck>,
    pub notes: Vec<String>,
    /// Set when the schedule depends on the unspecified absolute constant of
    /// the covariance concentration bound.
    pub depends_on_absolute_constant: bool,
}

impl Provenance {
    fn entry(&mut self, field: &str, rule: &str, value: f64) {
        self.entries.push(ProvenanceEntry {
            field: field.to_string(),
            rule: rule.to_string(),
            value,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    Covariance,
    Fisher,
}

impl PreconditionerKind {
    pub fn label(&self) -> &'static str {
        match self {
            PreconditionerKind::Covariance => "covariance",
            PreconditionerKind::Fisher => "fisher",
        }
    }
}

/// Settings of the preconditioner-learning phase.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnSpec {
    /// Failure probability δ in (0, 1).
    pub delta: f64,
    /// Relative tolerance Δ in (0, 1).
    pub tol: f64,
    pub kind: PreconditionerKind,
    /// Lower bound β on `λ_min(Σ_π)` (covariance) or α on `λ_min(F)` (Fisher);
    /// defaults to `1/L` and `m` respectively.
    pub lower_bound: Option<f64>,
    /// Sub-Gaussian constant K; defaults to `sqrt(8/(3 m_{Σ^{-1}}))`
    /// (covariance) or `sqrt((8/3) L_F)` (Fisher).
    pub k_constant: Option<f64>,
    /// Absolute constant C of the covariance concentration bound.
    pub c_absolute: f64,
    /// Requested learning sample size; must not undercut the planned size.
    pub n_learn: Option<usize>,
}

impl LearnSpec {
    pub fn new(kind: PreconditionerKind, delta: f64, tol: f64) -> Self {
        Self {
            delta,
            tol,
            kind,
            lower_bound: None,
            k_constant: None,
            c_absolute: 1.0,
            n_learn: None,
        }
    }
}

/// Learning-phase details recorded on a learning budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearnDetails {
    pub kind: PreconditionerKind,
    pub delta: f64,
    pub tol: f64,
    pub lower_bound: f64,
    pub k_constant: f64,
    pub c_absolute: f64,
    pub interval_lower: f64,
    pub interval_upper: f64,
    pub required_n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    pub family: KernelFamily,
    pub h: f64,
    pub k_burn: u64,
    pub k_thin: u64,
    pub n: usize,
    pub epsilon: f64,
    pub contraction: ContractionParams,
    pub trace_sigma: f64,
    pub w2_init: f64,
    pub learn: Option<LearnDetails>,
    pub provenance: Provenance,
}

impl Budget {
    /// `k_burn + (N - 1) k_thin`.
    pub fn total_steps(&self) -> u128 {
        self.k_burn as u128 + (self.n as u128 - 1) * self.k_thin as u128
    }

    pub fn total_steps_f64(&self) -> f64 {
        self.k_burn as f64 + (self.n as f64 - 1.0) * self.k_thin as f64
    }

    /// Human-readable report.
    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "family        {:?}", self.family);
        let _ = writeln!(s, "h             {:e}", self.h);
        let _ = writeln!(s, "k_burn        {}", self.k_burn);
        let _ = writeln!(s, "k_thin        {}", self.k_thin);
        let _ = writeln!(s, "N             {}", self.n);
        let _ = writeln!(s, "epsilon       {:e}", self.epsilon);
        let _ = writeln!(s, "total_steps   {}", self.total_steps());
        let c = &self.contraction;
        let _ = writeln!(
            s,
            "contraction   Gamma={} gamma={:e} b={:e} h_max={:e}",
            c.big_gamma, c.gamma, c.b, c.h_max
        );
        let _ = writeln!(s, "trace_sigma   {:e}", self.trace_sigma);
        let _ = writeln!(s, "w2_init       {:e}", self.w2_init);
        if let Some(l) = &self.learn {
            let _ = writeln!(
                s,
                "learning      kind={} delta={} tol={} K={:e} C={} interval=({:e}, {:e}] required_N={}",
                l.kind.label(),
                l.delta,
                l.tol,
                l.k_constant,
                l.c_absolute,
                l.interval_lower,
                l.interval_upper,
                l.required_n
            );
        }
        for e in &self.provenance.entries {
            let _ = writeln!(s, "rule          {} = {:e}  [{}]", e.field, e.value, e.rule);
        }
        for c in &self.provenance.checks {
            let _ = writeln!(
                s,
                "check         {}: {:e} {} {:e}  {}",
                c.name,
                c.lhs,
                c.relation,
                c.rhs,
                if c.holds { "ok" } else { "VIOLATED" }
            );
        }
        for n in &self.provenance.notes {
            let _ = writeln!(s, "note          {n}");
        }
        if self.provenance.depends_on_absolute_constant {
            let _ = writeln!(s, "note          depends on the absolute constant C");
        }
        s
    }
}

fn ceil_count(x: f64, what: &str) -> Result<u64> {
    if !x.is_finite() || x > 1.8e19 {
        return Err(Error::Parameter(format!(
            "{what} = {x:e} does not fit an iteration counter"
        )));
    }
    Ok(x.max(0.0).ceil() as u64)
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Burn-in and thinning for a `(Γ, γ, b)`-contraction.
pub fn plan_thinned(cp: &ContractionParams, eps: f64, n: usize, trace_sigma: f64, w2_init: f64) -> Result<Budget> {
    positive("eps", eps)?;
    positive("trace_sigma", trace_sigma)?;
    if n == 0 {
        return Err(Error::Parameter("ensemble size N must be at least 1".into()));
    }
    if !(w2_init >= 0.0) || !w2_init.is_finite() {
        return Err(Error::Parameter(format!(
            "W2(pi, mu0) must be finite and >= 0, got {w2_init}"
        )));
    }
    if !(cp.big_gamma >= 1.0) {
        return Err(Error::Parameter(format!("Gamma must be >= 1, got {}", cp.big_gamma)));
    }
    let policy = NumericPolicy::default();
    let (g_cap, rate, b) = (cp.big_gamma, cp.gamma, cp.b);
    let g2 = g_cap * g_cap;
    let floor = 3.0 * g2 * b;
    if !(eps > floor) {
        return Err(Error::BiasDominates {
            eps,
            floor,
            ceiling: (3.0 * trace_sigma).sqrt(),
        });
    }
    let ceiling_sq = g2 * (3.0 * trace_sigma + 4.0 * b * b) + 2.0 * b * b;
    if !policy.at_most(eps * eps, ceiling_sq) {
        return Err(Error::EpsilonTooLarge {
            eps,
            bound: ceiling_sq.sqrt(),
            rule: "eps^2 <= Gamma^2 (3 tr Sigma + 4 b^2) + 2 b^2".into(),
        });
    }
    let burn_arg = 3.0 * g2 * g_cap * w2_init / (eps - floor);
    let k_burn_real = if burn_arg > 1.0 { burn_arg.ln() / rate } else { 0.0 };
    let thin_arg = 2.0 * g2 * (3.0 * trace_sigma + 4.0 * b * b) / (eps * eps - 2.0 * b * b);
    let k_thin_real = thin_arg.max(1.0).ln() / (2.0 * rate);
    let k_burn = ceil_count(k_burn_real, "k_burn")?;
    let k_thin = ceil_count(k_thin_real, "k_thin")?.max(1);

    let mut prov = Provenance::default();
    prov.entry(
        "k_burn",
        "k_burn >= (1/gamma) ln(3 Gamma^3 W2(pi, mu0) / (eps - 3 Gamma^2 b)), ceiling, 0 when the log is negative",
        k_burn_real,
    );
    prov.entry(
        "k_thin",
        "k_thin >= (1/(2 gamma)) ln(2 Gamma^2 (3 tr Sigma + 4 b^2) / (eps^2 - 2 b^2)), ceiling, at least 1",
        k_thin_real,
    );
    prov.checks
        .push(InequalityCheck::new("bias floor 3 Gamma^2 b < eps", floor, "<", eps));
    prov.checks.push(InequalityCheck::new(
        "eps^2 <= Gamma^2 (3 tr Sigma + 4 b^2) + 2 b^2",
        eps * eps,
        "<=",
        ceiling_sq,
    ));
    // The two sufficient conditions behind the schedule, evaluated with the
    // contraction bound W2(pi, mu0 K^k_burn) <= Gamma e^{-gamma k_burn} W2(pi, mu0) + b.
    let r = (-2.0 * rate * k_thin as f64).exp();
    let w_burn = g_cap * (-rate * k_burn as f64).exp() * w2_init + b;
    prov.checks.push(InequalityCheck::new(
        "(1 + 8 Gamma^4 r/(1-r)) W2(pi, mu0 K^k_burn)^2 <= eps^2, r = exp(-2 gamma k_thin)",
        (1.0 + 8.0 * g2 * g2 * r / (1.0 - r)) * w_burn * w_burn,
        "<=",
        eps * eps,
    ));
    prov.checks.push(InequalityCheck::new(
        "2 Gamma^2 r (4 b^2 + 3 tr Sigma) + 2 b^2 <= eps^2",
        2.0 * g2 * r * (4.0 * b * b + 3.0 * trace_sigma) + 2.0 * b * b,
        "<=",
        eps * eps,
    ));
    Ok(Budget {
        family: KernelFamily::Ula,
        h: cp.h,
        k_burn,
        k_thin,
        n,
        epsilon: eps,
        contraction: *cp,
        trace_sigma,
        w2_init,
        learn: None,
        provenance: prov,
    })
}

/// `W2(π, δ_mode)` for targets with known mean, covariance and mode.
pub fn default_w2_init(target: &Target) -> Result<f64> {
    target.mode().and_then(|x| target.w2_to_point(x)).ok_or_else(|| {
        Error::Parameter("W2 between the target and the initial law is unknown; supply an upper bound".into())
    })
}

/// ULA schedule with `h = eps^2 / (100 d κ^2)`, starting from the target's mode.
pub fn plan_ula_unpreconditioned(target: &Target, eps: f64, n: usize) -> Result<Budget> {
    plan_ula_unpreconditioned_from(target, eps, n, default_w2_init(target)?)
}

/// ULA schedule with `h = eps^2 / (100 d κ^2)` for a given `W2(π, μ0)`;
/// requires `eps <= min{10 κ sqrt(d/L), sqrt(3 tr Σ)}`.
pub fn plan_ula_unpreconditioned_from(target: &Target, eps: f64, n: usize, w2_init: f64) -> Result<Budget> {
    positive("eps", eps)?;
    let (m, l, d) = (target.m(), target.l(), target.dim());
    let kappa = l / m;
    let df = d as f64;
    let first = 10.0 * kappa * df.sqrt() / l.sqrt();
    let second = (3.0 * target.trace_sigma_lower()).sqrt();
    let policy = NumericPolicy::default();
    if !policy.at_most(eps, first) || !policy.at_most(eps, second) {
        return Err(Error::EpsilonOutOfRange {
            eps,
            first,
            first_rule: "10 kappa sqrt(d) / sqrt(L)".into(),
            second,
            second_rule: "sqrt(3 tr Sigma)".into(),
        });
    }
    let h = (eps / 10.0).powi(2) / (df * kappa * kappa);
    let cp = ula_params(m, l, d, h)?;
    let mut budget = plan_thinned(&cp, eps, n, target.trace_sigma_upper(), w2_init)?;
    budget.provenance.entry("h", "h = eps^2 / (100 d kappa^2)", h);
    budget.provenance.checks.push(InequalityCheck::new(
        "eps <= 10 kappa sqrt(d) / sqrt(L)",
        eps,
        "<=",
        first,
    ));
    budget
        .provenance
        .checks
        .push(InequalityCheck::new("eps <= sqrt(3 tr Sigma)", eps, "<=", second));
    Ok(budget)
}

/// Underdamped schedule with `h = eps / (1536 κ sqrt(2 E_K / 5))`, which makes
/// `3 Γ² b = eps / 2`; requires `eps <= min{1536 κ sqrt(2 E_K/5), sqrt(3 tr Σ)}`.
pub fn plan_underdamped_unpreconditioned(
    target: &Target,
    eps: f64,
    n: usize,
    d_init: f64,
    w2_init: f64,
) -> Result<Budget> {
    positive("eps", eps)?;
    let (m, l, d) = (target.m(), target.l(), target.dim());
    let kappa = l / m;
    let e_k = underdamped_energy(m, d, d_init);
    let scale = kappa * (2.0 * e_k / 5.0).sqrt();
    let first = 1536.0 * scale;
    let second = (3.0 * target.trace_sigma_lower()).sqrt();
    let policy = NumericPolicy::default();
    if !policy.at_most(eps, first) || !policy.at_most(eps, second) {
        return Err(Error::EpsilonOutOfRange {
            eps,
            first,
            first_rule: "1536 kappa sqrt(2 E_K / 5)".into(),
            second,
            second_rule: "sqrt(3 tr Sigma)".into(),
        });
    }
    let h = (eps / (1536.0 * scale)).min(1.0);
    let cp = underdamped_params(m, l, d, h, d_init)?;
    let mut budget = plan_thinned(&cp, eps, n, target.trace_sigma_upper(), w2_init)?;
    budget.family = KernelFamily::Underdamped;
    budget
        .provenance
        .entry("h", "h = eps / (1536 kappa sqrt(2 E_K / 5)), E_K = 26 (d/m + D^2)", h);
    budget.provenance.entry("E_K", "E_K = 26 (d/m + D^2)", e_k);
    budget.provenance.checks.push(InequalityCheck::new(
        "eps <= 1536 kappa sqrt(2 E_K / 5)",
        eps,
        "<=",
        first,
    ));
    budget
        .provenance
        .checks
        .push(InequalityCheck::new("eps <= sqrt(3 tr Sigma)", eps, "<=", second));
    Ok(budget)
}

/// Kernel used during the learning phase: fixes the step size as a function
/// of the learning accuracy and supplies the contraction parameters.
pub trait LearningKernel {
    fn family(&self) -> KernelFamily;
    fn step_size(&self, m: f64, l: f64, d: usize, eps: f64) -> f64;
    fn params(&self, m: f64, l: f64, d: usize, h: f64) -> Result<ContractionParams>;
    fn step_rule(&self) -> &'static str;
}

/// ULA with `h = (100/99²) eps² / (κ² d)`, giving `3 b = eps / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UlaLearning;

impl LearningKernel for UlaLearning {
    fn family(&self) -> KernelFamily {
        KernelFamily::Ula
    }
    fn step_size(&self, m: f64, l: f64, d: usize, eps: f64) -> f64 {
        let kappa = l / m;
        100.0 / (99.0 * 99.0) / (kappa * kappa * d as f64) * eps * eps
    }
    fn params(&self, m: f64, l: f64, d: usize, h: f64) -> Result<ContractionParams> {
        ula_params(m, l, d, h)
    }
    fn step_rule(&self) -> &'static str {
        "h = (100/99^2) eps^2 / (kappa^2 d)"
    }
}

/// Underdamped kernel with `h = eps / (1536 κ sqrt(2 E_K/5))`, giving
/// `3 Γ² b = eps / 2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UnderdampedLearning {
    pub d_init: f64,
}

impl LearningKernel for UnderdampedLearning {
    fn family(&self) -> KernelFamily {
        KernelFamily::Underdamped
    }
    fn step_size(&self, m: f64, l: f64, d: usize, eps: f64) -> f64 {
        let e_k = underdamped_energy(m, d, self.d_init);
        (eps / (1536.0 * (l / m) * (2.0 * e_k / 5.0).sqrt())).min(1.0)
    }
    fn params(&self, m: f64, l: f64, d: usize, h: f64) -> Result<ContractionParams> {
        underdamped_params(m, l, d, h, self.d_init)
    }
    fn step_rule(&self) -> &'static str {
        "h = eps / (1536 kappa sqrt(2 E_K / 5))"
    }
}

/// Reference constants of the ideal preconditioner (`Σ^{-1}` or `F`).
pub fn reference_constants(target: &Target, kind: PreconditionerKind) -> Result<PreconditionedConstants> {
    let m_ref = match kind {
        PreconditionerKind::Covariance => target.analytic_covariance().map(|c| c.inverse()).transpose()?,
        PreconditionerKind::Fisher => target.analytic_fisher().cloned(),
    };
    let m_ref = m_ref.ok_or_else(|| {
        Error::UnsupportedTarget(format!(
            "the {} preconditioner constants of {} are unknown; supply them explicitly",
            kind.label(),
            target.description()
        ))
    })?;
    preconditioned_constants(target, &m_ref)
}

/// Learning-phase schedule: accuracy, step size, learning sample size and
/// burn-in/thinning for the chain that feeds the estimator.
pub fn plan_learning(target: &Target, spec: &LearnSpec, kernel: &dyn LearningKernel, w2_init: f64) -> Result<Budget> {
    let (delta, tol) = (spec.delta, spec.tol);
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::InvalidTolerance(format!(
            "delta must lie in (0, 1), got {delta}"
        )));
    }
    if !(0.0..1.0).contains(&tol) {
        return Err(Error::InvalidTolerance(format!("Delta must lie in (0, 1), got {tol}")));
    }
    positive("C", spec.c_absolute)?;
    let dd = delta * tol;
    let (m, l, d) = (target.m(), target.l(), target.dim());
    let df = d as f64;
    let tr_lower = target.trace_sigma_lower();
    let (lower_bound, eps_per_dd, k_constant) = match spec.kind {
        PreconditionerKind::Covariance => {
            let beta = spec.lower_bound.unwrap_or(1.0 / l);
            positive("beta", beta)?;
            let eps_per_dd = 2f64.sqrt() / 120.0 / df.sqrt() * beta.sqrt();
            let k = match spec.k_constant {
                Some(k) => k,
                None => (8.0 / (3.0 * reference_constants(target, spec.kind)?.m_m)).sqrt(),
            };
            (beta, eps_per_dd, k)
        }
        PreconditionerKind::Fisher => {
            let alpha = spec.lower_bound.unwrap_or(m);
            positive("alpha", alpha)?;
            let eps_per_dd = 3.0 / 8.0 / (l * df.sqrt()) * alpha.sqrt();
            let k = match spec.k_constant {
                Some(k) => k,
                None => (8.0 / 3.0 * reference_constants(target, spec.kind)?.l_m).sqrt(),
            };
            (alpha, eps_per_dd, k)
        }
    };
    positive("K", k_constant)?;
    let (lower_rule, upper_rule) = match spec.kind {
        PreconditionerKind::Covariance => (
            "360 Gamma^2 b sqrt(d) / sqrt(beta)",
            "120 Gamma sqrt(tr Sigma d) / sqrt(beta)",
        ),
        PreconditionerKind::Fisher => (
            "8 Gamma^2 b L sqrt(d) / sqrt(alpha)",
            "(8/3) Gamma L sqrt(3 tr Sigma d) / sqrt(alpha)",
        ),
    };
    let upper_per_gamma = match spec.kind {
        PreconditionerKind::Covariance => 120.0 * (tr_lower * df).sqrt() / lower_bound.sqrt(),
        PreconditionerKind::Fisher => 8.0 / 3.0 * l * (3.0 * tr_lower * df).sqrt() / lower_bound.sqrt(),
    };
    if !(dd > 0.0) {
        // Γ does not depend on the step size; probe it at δΔ = 1.
        let probe = kernel.params(m, l, d, kernel.step_size(m, l, d, eps_per_dd))?;
        return Err(Error::InadmissibleTolerance {
            value: dd,
            lower: 0.0,
            lower_rule: lower_rule.into(),
            upper: probe.big_gamma * upper_per_gamma,
            upper_rule: upper_rule.into(),
        });
    }
    let eps = eps_per_dd * dd;
    let h = kernel.step_size(m, l, d, eps);
    let cp = kernel.params(m, l, d, h)?;
    let g = cp.big_gamma;
    let upper = g * upper_per_gamma;
    let lower = match spec.kind {
        PreconditionerKind::Covariance => 360.0 * g * g * cp.b * df.sqrt() / lower_bound.sqrt(),
        PreconditionerKind::Fisher => 8.0 * g * g * cp.b * l * df.sqrt() / lower_bound.sqrt(),
    };
    if !(lower < dd) || !NumericPolicy::default().at_most(dd, upper) {
        return Err(Error::InadmissibleTolerance {
            value: dd,
            lower,
            lower_rule: lower_rule.into(),
            upper,
            upper_rule: upper_rule.into(),
        });
    }
    let c = spec.c_absolute;
    let k2 = k_constant * k_constant;
    let concentration = 2.0 * c * k2 * (df + (4.0 / delta).ln()) * (c * k2 + 2.0 * tol).sqrt() / tol;
    let n_real = match spec.kind {
        PreconditionerKind::Covariance => (5.0 * df / dd).max(concentration),
        PreconditionerKind::Fisher => concentration,
    };
    let required_n = ceil_count(n_real, "N_learn")? as usize;
    let n = match spec.n_learn {
        Some(req) if req < required_n => {
            return Err(Error::InsufficientLearnSize {
                requested: req,
                required: required_n,
            })
        }
        Some(req) => req,
        None => required_n,
    };
    let mut budget = plan_thinned(&cp, eps, n, target.trace_sigma_upper(), w2_init)?;
    budget.family = kernel.family();
    let prov = &mut budget.provenance;
    match spec.kind {
        PreconditionerKind::Covariance => {
            prov.entry("epsilon", "eps = (sqrt(2)/120) (delta Delta / sqrt(d)) sqrt(beta)", eps);
            prov.entry(
                "N",
                "N = max{5 d/(delta Delta), 2 C K^2 (d + ln(4/delta)) sqrt(C K^2 + 2 Delta) / Delta}",
                n_real,
            );
            prov.entry("K", "K = sqrt(8 / (3 m_{Sigma^-1}))", k_constant);
        }
        PreconditionerKind::Fisher => {
            prov.entry("epsilon", "eps = (3/8) (delta Delta / (L sqrt(d))) sqrt(alpha)", eps);
            prov.entry(
                "N",
                "N = 2 C K^2 (d + ln(4/delta)) sqrt(C K^2 + 2 Delta) / Delta",
                n_real,
            );
            prov.entry("K", "K = sqrt((8/3) L_F)", k_constant);
        }
    }
    prov.entry("h", kernel.step_rule(), h);
    prov.checks.push(InequalityCheck::new(lower_rule, lower, "<", dd));
    prov.checks.push(InequalityCheck::new(upper_rule, dd, "<=", upper));
    if spec.k_constant.is_some() {
        prov.notes.push("K supplied by the caller".into());
    }
    prov.depends_on_absolute_constant = true;
    budget.learn = Some(LearnDetails {
        kind: spec.kind,
        delta,
        tol,
        lower_bound,
        k_constant,
        c_absolute: c,
        interval_lower: lower,
        interval_upper: upper,
        required_n,
    });
    Ok(budget)
}

/// Sampling-phase schedule after preconditioning with an estimate certified
/// to lie within relative error `tol` of the reference preconditioner whose
/// constants are `c_ref`.
///
/// The schedule is computed from the bracket of [`certified_bracket`], so it
/// is valid for every estimate inside the certificate. `w2_init` is the W2
/// distance between the preconditioned target and the chain's initial law.
#[allow(clippy::too_many_arguments)]
pub fn plan_preconditioned(
    family: KernelFamily,
    d: usize,
    kind: PreconditionerKind,
    c_ref: &PreconditionedConstants,
    tol: f64,
    eps: f64,
    n: usize,
    w2_init: f64,
    d_init: f64,
) -> Result<Budget> {
    positive("eps", eps)?;
    let (bracket, m_rule, l_rule) = certified_bracket(kind, tol, c_ref)?;
    let df = d as f64;
    let (m_b, l_b, kappa_b) = (bracket.m_m, bracket.l_m, bracket.kappa_m);
    // tr Σ of the preconditioned target: upper bound d / m, and a lower bound
    // from the certificate.
    let trace_upper = df / m_b;
    let (trace_lower, trace_rule) = match kind {
        PreconditionerKind::Covariance => (df / (1.0 + tol), "sqrt(3 d / (1 + Delta))"),
        PreconditionerKind::Fisher => (df * (1.0 - tol), "sqrt(3 d (1 - Delta))"),
    };
    let second = (3.0 * trace_lower).sqrt();
    let policy = NumericPolicy::default();
    let statement_bound = 2.0 * c_ref.kappa_m * df.sqrt() / c_ref.l_m.sqrt();
    let (h, cp, first, first_rule, step_rule) = match family {
        KernelFamily::Ula => {
            let first = 10.0 * (1.0 - tol) / (1.0 + tol) * c_ref.kappa_m * df.sqrt() / l_b.sqrt();
            if !policy.at_most(eps, first) || !policy.at_most(eps, second) {
                return Err(Error::EpsilonOutOfRange {
                    eps,
                    first,
                    first_rule: "10 ((1-Delta)/(1+Delta)) kappa_ref sqrt(d) / sqrt(L_bracket)".into(),
                    second,
                    second_rule: trace_rule.into(),
                });
            }
            let h = (eps / 10.0).powi(2) / (df * kappa_b * kappa_b);
            let mut cp = ula_params(m_b, l_b, d, h)?;
            // Any estimate in the bracket has L + m <= (L_bracket / L_ref)(L_ref + m_ref).
            cp.h_max = 2.0 / ((l_b / c_ref.l_m) * (c_ref.l_m + c_ref.m_m));
            if !policy.at_most(h, cp.h_max) {
                return Err(Error::StepSizeTooLarge { h, h_max: cp.h_max });
            }
            (
                h,
                cp,
                first,
                "10 ((1-Delta)/(1+Delta)) kappa_ref sqrt(d) / sqrt(L_bracket)",
                "h = eps^2 / (100 d kappa_bracket^2)",
            )
        }
        KernelFamily::Underdamped => {
            let e_k = underdamped_energy(m_b, d, d_init);
            let scale = kappa_b * (2.0 * e_k / 5.0).sqrt();
            let first = 1536.0 * scale;
            if !policy.at_most(eps, first) || !policy.at_most(eps, second) {
                return Err(Error::EpsilonOutOfRange {
                    eps,
                    first,
                    first_rule: "1536 kappa_bracket sqrt(2 E_K / 5)".into(),
                    second,
                    second_rule: trace_rule.into(),
                });
            }
            let h = (eps / (1536.0 * scale)).min(1.0);
            let cp = underdamped_params(m_b, l_b, d, h, d_init)?;
            (
                h,
                cp,
                first,
                "1536 kappa_bracket sqrt(2 E_K / 5)",
                "h = eps / (1536 kappa_bracket sqrt(2 E_K / 5))",
            )
        }
    };
    let mut budget = plan_thinned(&cp, eps, n, trace_upper, w2_init)?;
    budget.family = family;
    let prov = &mut budget.provenance;
    prov.entry("h", step_rule, h);
    prov.entry("m_bracket", m_rule, m_b);
    prov.entry("L_bracket", l_rule, l_b);
    prov.entry("kappa_bracket", "((1 + Delta)/(1 - Delta)) kappa_ref", kappa_b);
    prov.entry("trace_sigma", "tr Sigma <= d / m_bracket", trace_upper);
    prov.checks
        .push(InequalityCheck::new(&format!("eps <= {first_rule}"), eps, "<=", first));
    prov.checks
        .push(InequalityCheck::new(&format!("eps <= {trace_rule}"), eps, "<=", second));
    if family == KernelFamily::Ula {
        prov.notes.push(format!(
            "statement-form bound eps <= 2 kappa_ref sqrt(d) / sqrt(L_ref) = {statement_bound:e} (recorded, not enforced)"
        ));
    }
    Ok(budget)
}

/// Constants valid for every estimate certified within `tol` of the
/// reference, with the rules that produced them. A covariance certificate
/// bounds `Ŝ` against `Σ` and hence `M = Ŝ^{-1}` from both sides by
/// `(1 ∓ Δ)`; a Fisher certificate bounds `M` itself, which inverts the range.
pub fn certified_bracket(
    kind: PreconditionerKind,
    tol: f64,
    c_ref: &PreconditionedConstants,
) -> Result<(PreconditionedConstants, &'static str, &'static str)> {
    match kind {
        PreconditionerKind::Covariance => Ok((
            estimated_preconditioner_bracket(tol, c_ref)?,
            "(1 - Delta) m_ref",
            "(1 + Delta) L_ref",
        )),
        PreconditionerKind::Fisher => Ok((
            fisher_preconditioner_bracket(tol, c_ref)?,
            "m_ref / (1 + Delta)",
            "L_ref / (1 - Delta)",
        )),
    }
}

/// ULA sampling-phase schedule; see [`plan_preconditioned`].
pub fn plan_ula_preconditioned(
    target: &Target,
    kind: PreconditionerKind,
    c_ref: &PreconditionedConstants,
    tol: f64,
    eps: f64,
    n: usize,
    w2_init: f64,
) -> Result<Budget> {
    plan_preconditioned(KernelFamily::Ula, target.dim(), kind, c_ref, tol, eps, n, w2_init, 0.0)
}

/// Schedule for a kernel with `γ = θ h^{k1}` and `b = φ h^{k2}` valid for
/// `h <= h0`. The step size makes `3 Γ² b = eps / 2`:
///
/// ```text
/// k_burn >= (1/θ) (6Γ²φ/ε)^{k1/k2} ln(6Γ³ W2 / ε)
/// k_thin >= (1/(2θ)) (6Γ²φ/ε)^{k1/k2} ln(4Γ⁶ (27Γ⁴ tr Σ + ε²) / ((18Γ⁴ − 1) ε²))
/// ```
#[allow(clippy::too_many_arguments)]
pub fn plan_generalized(
    theta: f64,
    k1: f64,
    phi: f64,
    k2: f64,
    h0: f64,
    eps: f64,
    n: usize,
    trace_sigma: f64,
    w2_init: f64,
    big_gamma: f64,
) -> Result<Budget> {
    for (name, v) in [
        ("theta", theta),
        ("k1", k1),
        ("phi", phi),
        ("k2", k2),
        ("h0", h0),
        ("eps", eps),
        ("trace_sigma", trace_sigma),
    ] {
        positive(name, v)?;
    }
    if !(big_gamma >= 1.0) {
        return Err(Error::Parameter(format!("Gamma must be >= 1, got {big_gamma}")));
    }
    if n == 0 {
        return Err(Error::Parameter("ensemble size N must be at least 1".into()));
    }
    if !(w2_init >= 0.0) {
        return Err(Error::Parameter(format!("W2(pi, mu0) must be >= 0, got {w2_init}")));
    }
    let g2 = big_gamma * big_gamma;
    let first = 6.0 * g2 * phi * h0.powf(k2);
    let second = (3.0 * trace_sigma).sqrt();
    let policy = NumericPolicy::default();
    if !policy.at_most(eps, first) || !policy.at_most(eps, second) {
        return Err(Error::EpsilonOutOfRange {
            eps,
            first,
            first_rule: "6 Gamma^2 phi h0^k2".into(),
            second,
            second_rule: "sqrt(3 tr Sigma)".into(),
        });
    }
    let h = (eps / (6.0 * g2 * phi)).powf(1.0 / k2).min(h0);
    let inv_rate = (6.0 * g2 * phi / eps).powf(k1 / k2) / theta;
    let burn_arg = 6.0 * g2 * big_gamma * w2_init / eps;
    let k_burn_real = if burn_arg > 1.0 { inv_rate * burn_arg.ln() } else { 0.0 };
    let thin_arg =
        4.0 * g2 * g2 * g2 * (27.0 * g2 * g2 * trace_sigma + eps * eps) / ((18.0 * g2 * g2 - 1.0) * eps * eps);
    let k_thin_real = 0.5 * inv_rate * thin_arg.max(1.0).ln();
    let cp = ContractionParams::new(big_gamma, theta * h.powf(k1), phi * h.powf(k2), h0, h)?;
    let mut prov = Provenance::default();
    prov.entry("h", "h = (eps / (6 Gamma^2 phi))^(1/k2)", h);
    prov.entry(
        "k_burn",
        "(1/theta) (6 Gamma^2 phi / eps)^(k1/k2) ln(6 Gamma^3 W2 / eps)",
        k_burn_real,
    );
    prov.entry(
        "k_thin",
        "(1/(2 theta)) (6 Gamma^2 phi / eps)^(k1/k2) ln(4 Gamma^6 (27 Gamma^4 tr Sigma + eps^2) / ((18 Gamma^4 - 1) eps^2))",
        k_thin_real,
    );
    prov.checks
        .push(InequalityCheck::new("eps <= 6 Gamma^2 phi h0^k2", eps, "<=", first));
    prov.checks
        .push(InequalityCheck::new("eps <= sqrt(3 tr Sigma)", eps, "<=", second));
    prov.checks.push(InequalityCheck::new(
        "bias floor 3 Gamma^2 b < eps",
        3.0 * g2 * cp.b,
        "<",
        eps,
    ));
    Ok(Budget {
        family: KernelFamily::Ula,
        h,
        k_burn: ceil_count(k_burn_real, "k_burn")?,
        k_thin: ceil_count(k_thin_real, "k_thin")?.max(1),
        n,
        epsilon: eps,
        contraction: cp,
        trace_sigma,
        w2_init,
        learn: None,
        provenance: prov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::SpdMatrix;
    use crate::target::{gaussian_with_condition, logcosh_product, make_gaussian_target};
    use nalgebra::DVector;

    fn cp(big_gamma: f64, gamma: f64, b: f64) -> ContractionParams {
        ContractionParams::new(big_gamma, gamma, b, 1.0, 0.1).unwrap()
    }

    #[test]
    fn thinned_worked_example() {
        // k_burn = ceil(10 ln 30) = 35, k_thin = ceil(5 ln 600) = 32.
        let b = plan_thinned(&cp(1.0, 0.1, 0.0), 0.1, 10, 1.0, 1.0).unwrap();
        assert_eq!((10.0 * 30f64.ln()).ceil() as u64, 35);
        assert_eq!((5.0 * 600f64.ln()).ceil() as u64, 32);
        assert_eq!((b.k_burn, b.k_thin), (35, 32));
        assert!(b.provenance.checks.iter().all(|c| c.holds));
    }

    #[test]
    fn thinned_bias_boundary() {
        let eps = 0.3;
        let err = plan_thinned(&cp(1.0, 0.1, eps / 3.0), eps, 5, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::BiasDominates { .. }));
        let err = plan_thinned(&cp(2.0, 0.1, eps / 12.0), eps, 5, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, Error::BiasDominates { .. }));
    }

    #[test]
    fn thinned_upper_boundary_accepted() {
        let tr: f64 = 2.0;
        let b = plan_thinned(&cp(1.0, 0.1, 0.0), (3.0 * tr).sqrt(), 5, tr, 1.0).unwrap();
        assert!(b.k_thin >= 1);
        assert!(matches!(
            plan_thinned(&cp(1.0, 0.1, 0.0), (3.0 * tr).sqrt() * 1.001, 5, tr, 1.0),
            Err(Error::EpsilonTooLarge { .. })
        ));
    }

    #[test]
    fn zero_w2_means_no_burn_in() {
        let b = plan_thinned(&cp(1.0, 0.1, 0.0), 0.5, 3, 1.0, 0.0).unwrap();
        assert_eq!(b.k_burn, 0);
    }

    #[test]
    fn ula_step_rule_and_bias() {
        let t = make_gaussian_target(DVector::zeros(1), SpdMatrix::identity(1)).unwrap();
        let b = plan_ula_unpreconditioned(&t, 0.1, 10).unwrap();
        assert!((b.h - 1e-4).abs() < 1e-18);
        assert!((b.contraction.b - 0.0165).abs() < 1e-15);
        assert!(3.0 * b.contraction.b < 0.1);
    }

    #[test]
    fn ula_trace_bound_binds_and_is_inclusive() {
        // tr Sigma <= d/m makes 10 kappa sqrt(d/L) >= (10/sqrt(3)) sqrt(3 tr Sigma).
        let t = make_gaussian_target(DVector::zeros(3), SpdMatrix::from_diagonal(&[0.5, 1.0, 2.0]).unwrap()).unwrap();
        let first = 10.0 * t.kappa() * 3f64.sqrt() / t.l().sqrt();
        let edge = (3.0 * t.trace_sigma_lower()).sqrt();
        assert!(first > edge);
        assert!(plan_ula_unpreconditioned(&t, edge, 4).is_ok());
        assert!(matches!(
            plan_ula_unpreconditioned(&t, edge * 1.0001, 4),
            Err(Error::EpsilonOutOfRange { .. })
        ));
    }

    #[test]
    fn learning_eps_examples() {
        // d = 2, L = 2 (logcosh product has m = 1, L = 2), beta = 1/L.
        let t = logcosh_product(&[1.0, 1.0]).unwrap();
        let spec = LearnSpec::new(PreconditionerKind::Covariance, 0.25, 0.5);
        let b = plan_learning(&t, &spec, &UlaLearning, default_w2_init(&t).unwrap()).unwrap();
        let expected = 2f64.sqrt() / 120.0 * 0.125 / 4f64.sqrt();
        assert!((b.epsilon - expected).abs() < 1e-18);
        assert!((b.epsilon - 7.3657e-4).abs() < 1e-8);
        // h = k eps^2 gives 3 b = eps / 2.
        assert!((3.0 * b.contraction.b - b.epsilon / 2.0).abs() < 1e-12 * b.epsilon);
        let fspec = LearnSpec::new(PreconditionerKind::Fisher, 0.25, 0.5);
        let fb = plan_learning(&t, &fspec, &UlaLearning, default_w2_init(&t).unwrap()).unwrap();
        let fexp = 3.0 / 8.0 * 0.125 / (2.0 * 2f64.sqrt()) * 1.0;
        assert!((fb.epsilon - fexp).abs() < 1e-15);
    }

    #[test]
    fn fisher_eps_carries_extra_inverse_l() {
        // With the lower bounds set equal, the two rules differ by a factor
        // (3/8) / (sqrt(2)/120) / L.
        for l in [2.0, 8.0, 32.0] {
            let t = gaussian_with_condition(3, l, Some(1)).unwrap();
            let mut c = LearnSpec::new(PreconditionerKind::Covariance, 0.25, 0.5);
            let mut f = LearnSpec::new(PreconditionerKind::Fisher, 0.25, 0.5);
            c.lower_bound = Some(0.5);
            f.lower_bound = Some(0.5);
            let w2 = default_w2_init(&t).unwrap();
            let ec = plan_learning(&t, &c, &UlaLearning, w2).unwrap().epsilon;
            let ef = plan_learning(&t, &f, &UlaLearning, w2).unwrap().epsilon;
            let ratio = ef / ec;
            let expected = (3.0 / 8.0) / (2f64.sqrt() / 120.0) / l;
            assert!((ratio - expected).abs() < 1e-12 * expected);
        }
    }

    #[test]
    fn learning_sample_size_gaussian() {
        let t = gaussian_with_condition(2, 4.0, Some(0)).unwrap();
        let spec = LearnSpec::new(PreconditionerKind::Covariance, 0.25, 0.5);
        let b = plan_learning(&t, &spec, &UlaLearning, default_w2_init(&t).unwrap()).unwrap();
        let k2 = 8.0 / 3.0;
        let conc = 2.0 * k2 * (2.0 + 16f64.ln()) * (k2 + 1.0).sqrt() / 0.5;
        assert_eq!(b.n, conc.max(80.0).ceil() as usize);
        assert!(b.provenance.depends_on_absolute_constant);
        let mut zero = spec;
        zero.n_learn = Some(0);
        assert!(matches!(
            plan_learning(&t, &zero, &UlaLearning, 1.0),
            Err(Error::InsufficientLearnSize { .. })
        ));
    }

    struct FixedBias(f64);
    impl LearningKernel for FixedBias {
        fn family(&self) -> KernelFamily {
            KernelFamily::Ula
        }
        fn step_size(&self, _: f64, _: f64, _: usize, _: f64) -> f64 {
            0.01
        }
        fn params(&self, _: f64, _: f64, _: usize, h: f64) -> Result<ContractionParams> {
            ContractionParams::new(1.0, 0.01, self.0, 1.0, h)
        }
        fn step_rule(&self) -> &'static str {
            "fixed"
        }
    }

    #[test]
    fn fixed_bias_makes_small_tolerance_inadmissible() {
        let t = gaussian_with_condition(2, 4.0, Some(0)).unwrap();
        let spec = LearnSpec::new(PreconditionerKind::Covariance, 0.01, 0.01);
        let err = plan_learning(&t, &spec, &FixedBias(1e-3), 1.0).unwrap_err();
        match err {
            Error::InadmissibleTolerance { lower_rule, .. } => assert!(lower_rule.contains("360")),
            other => panic!("unexpected {other:?}"),
        }
        let zero = LearnSpec::new(PreconditionerKind::Covariance, 0.25, 0.0);
        assert!(matches!(
            plan_learning(&t, &zero, &UlaLearning, 1.0),
            Err(Error::InadmissibleTolerance { .. })
        ));
    }

    #[test]
    fn preconditioned_reduces_to_whitened_unpreconditioned() {
        let t = gaussian_with_condition(3, 50.0, Some(9)).unwrap();
        let c_ref = reference_constants(&t, PreconditionerKind::Covariance).unwrap();
        let white = gaussian_with_condition(3, 1.0, None).unwrap();
        let w2 = default_w2_init(&white).unwrap();
        let exact = PreconditionedConstants::new(1.0, 1.0, true).unwrap();
        let a = plan_ula_preconditioned(&t, PreconditionerKind::Covariance, &exact, 0.0, 0.2, 7, w2).unwrap();
        let b = plan_ula_unpreconditioned(&white, 0.2, 7).unwrap();
        assert!((c_ref.kappa_m - 1.0).abs() < 1e-9);
        assert_eq!((a.k_burn, a.k_thin), (b.k_burn, b.k_thin));
        assert!((a.h - b.h).abs() < 1e-18);
    }

    #[test]
    fn preconditioned_bracket_and_boundaries() {
        let t = gaussian_with_condition(4, 100.0, Some(2)).unwrap();
        let one = PreconditionedConstants::new(1.0, 1.0, true).unwrap();
        let b = plan_ula_preconditioned(&t, PreconditionerKind::Covariance, &one, 0.5, 0.3, 5, 2.0).unwrap();
        let kappa = b
            .provenance
            .entries
            .iter()
            .find(|e| e.field == "kappa_bracket")
            .unwrap()
            .value;
        assert_eq!(kappa, 3.0);
        // Large reference scale makes the trace bound the binding one.
        let big = PreconditionedConstants::new(1.0, 1.0, true).unwrap();
        let d = 4.0_f64;
        let cov_edge = (2.0 * d).sqrt();
        let c = plan_preconditioned(
            KernelFamily::Ula,
            4,
            PreconditionerKind::Covariance,
            &big,
            0.5,
            cov_edge,
            5,
            2.0,
            0.0,
        );
        let fis_edge = (1.5 * d).sqrt();
        let f = plan_preconditioned(
            KernelFamily::Ula,
            4,
            PreconditionerKind::Fisher,
            &big,
            0.5,
            fis_edge,
            5,
            2.0,
            0.0,
        );
        // The first bound (2.72 sqrt(d)) exceeds both trace bounds, so only the trace bound binds.
        assert!(c.is_ok(), "{c:?}");
        assert!(f.is_ok(), "{f:?}");
        assert!(plan_preconditioned(
            KernelFamily::Ula,
            4,
            PreconditionerKind::Fisher,
            &big,
            0.5,
            fis_edge * 1.001,
            5,
            2.0,
            0.0
        )
        .is_err());
    }

    #[test]
    fn generalized_matches_ula_at_same_step() {
        let mut rng = crate::rng::StreamRng::new(2024, 0);
        for _ in 0..20 {
            let d = 1 + (rng.uniform() * 5.0) as usize;
            let m = 0.2 + rng.uniform();
            let l = m * (1.0 + 20.0 * rng.uniform());
            let tr = d as f64 / m * (0.5 + 0.5 * rng.uniform());
            let w2 = 0.5 + 3.0 * rng.uniform();
            let kappa = l / m;
            let phi = 1.65 * kappa * (d as f64).sqrt();
            let h0 = 2.0 / (l + m);
            let eps = (0.05 + 0.9 * rng.uniform()) * (6.0 * phi * h0.sqrt()).min((3.0 * tr).sqrt());
            let g = plan_generalized(m, 1.0, phi, 0.5, h0, eps, 10, tr, w2, 1.0).unwrap();
            let u = plan_thinned(&ula_params(m, l, d, g.h).unwrap(), eps, 10, tr, w2).unwrap();
            assert!(g.k_burn.abs_diff(u.k_burn) <= 1, "{} vs {}", g.k_burn, u.k_burn);
            assert!(g.k_thin.abs_diff(u.k_thin) <= 1, "{} vs {}", g.k_thin, u.k_thin);
        }
    }

    #[test]
    fn generalized_boundaries() {
        let (phi, h0, tr): (f64, f64, f64) = (0.5, 0.25, 100.0);
        let edge = 6.0 * phi * h0.sqrt();
        assert!(plan_generalized(1.0, 1.0, phi, 0.5, h0, edge, 5, tr, 1.0, 1.0).is_ok());
        assert!(plan_generalized(1.0, 1.0, phi, 0.5, h0, 2.0 * phi * h0.sqrt(), 5, tr, 1.0, 1.0).is_ok());
        assert!(plan_generalized(1.0, 1.0, phi, 0.5, h0, edge * 1.001, 5, tr, 1.0, 1.0).is_err());
    }

    #[test]
    fn underdamped_preset_matches_generalized() {
        let t = gaussian_with_condition(2, 3.0, Some(5)).unwrap();
        let (m, kappa) = (t.m(), t.kappa());
        let d_init = 0.5;
        let e_k = underdamped_energy(m, 2, d_init);
        let edge = (3.0 * t.trace_sigma_lower()).sqrt();
        assert!(edge < 1536.0 * kappa * (2.0 * e_k / 5.0).sqrt());
        let b = plan_underdamped_unpreconditioned(&t, edge, 3, d_init, 1.0).unwrap();
        assert!(plan_underdamped_unpreconditioned(&t, edge * 1.001, 3, d_init, 1.0).is_err());
        // gamma = h / (2 kappa), b = 16 kappa sqrt(2 E_K/5) h, Gamma = 4.
        let phi = 16.0 * kappa * (2.0 * e_k / 5.0).sqrt();
        let g = plan_generalized(
            1.0 / (2.0 * kappa),
            1.0,
            phi,
            1.0,
            1.0,
            edge,
            3,
            t.trace_sigma_upper(),
            1.0,
            4.0,
        )
        .unwrap();
        assert!((g.h - b.h).abs() < 1e-12 * b.h);
        assert!((g.contraction.b - b.contraction.b).abs() < 1e-12 * b.contraction.b);
    }

    #[test]
    fn underdamped_bias_is_half_eps() {
        let t = gaussian_with_condition(3, 10.0, Some(1)).unwrap();
        let b = plan_underdamped_unpreconditioned(&t, 0.2, 5, 1.0, 2.0).unwrap();
        let c = b.contraction;
        assert!((3.0 * c.big_gamma * c.big_gamma * c.b - 0.1).abs() < 1e-12);
    }

    #[test]
    fn every_emitted_step_is_within_h_max() {
        for kappa in [1.0, 4.0, 25.0] {
            for d in [2, 3] {
                let t = gaussian_with_condition(d, kappa, Some(d as u64)).unwrap();
                let tr = t.trace_sigma_lower();
                for frac in [0.1, 0.5, 1.0] {
                    let eps = frac * (10.0 * kappa * (d as f64).sqrt() / t.l().sqrt()).min((3.0 * tr).sqrt());
                    let b = plan_ula_unpreconditioned(&t, eps, 5).unwrap();
                    assert!(b.h <= b.contraction.h_max);
                    assert!(b.provenance.checks.iter().all(|c| c.holds), "{}", b.report());
                }
            }
        }
    }
}
