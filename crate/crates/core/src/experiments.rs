//! Pre-registered experiment recipes: certification-frequency trials for the
//! learning phase and planned-FLOP comparisons across ensemble sizes.
//!
//! Every experiment is a pure function of its [`ExperimentSpec`]; repetitions
//! and grid points run in parallel on independent RNG substreams and the
//! reports are assembled in index order.

use crate::budget::{plan_ula_unpreconditioned_from, Budget, LearnSpec, PreconditionerKind};
use crate::error::{Error, Result};
use crate::estimators::{estimate_preconditioner, relative_error};
use crate::kernels::KernelFamily;
use crate::linalg::SpdMatrix;
use crate::numerics::NumericPolicy;
use crate::oracle::exact_joint_law;
use crate::par::map_indexed;
use crate::rng::StreamRng;
use crate::sampler::{
    certificate_for, run_learning, total_flops_forecast, FlopForecast, ForecastMode, InitialLaw, Stepping,
};
use crate::target::{gaussian_with_condition, logcosh_product, make_gaussian_target, Target};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Textual target description, e.g. `gaussian:d=2,kappa=4`,
/// `gaussian:d=20,kappa=100,rotation=7`, `gaussian:covariance=cov.txt` or
/// `logcosh:d=3,spread=4`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum TargetSpec {
    /// Centered Gaussian with precision spectrum geometric in `[1, kappa]`.
    Gaussian {
        d: usize,
        kappa: f64,
        rotation: Option<u64>,
    },
    /// Centered Gaussian with covariance read from a matrix file.
    GaussianFile { covariance: PathBuf },
    /// Log-cosh product with inverse squared scales geometric in `[1, spread]`.
    LogCosh { d: usize, spread: f64 },
}

fn parse_field<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parse(format!("invalid value {value:?} for target key {key:?}")))
}

impl FromStr for TargetSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (family, rest) = s.split_once(':').unwrap_or((s, ""));
        let mut d = None;
        let mut kappa = None;
        let mut rotation = None;
        let mut spread = None;
        let mut covariance = None;
        for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("expected key=value in target {s:?}, found {pair:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "d" => d = Some(parse_field(key, value)?),
                "kappa" => kappa = Some(parse_field(key, value)?),
                "rotation" => rotation = Some(parse_field(key, value)?),
                "spread" => spread = Some(parse_field(key, value)?),
                "covariance" => covariance = Some(PathBuf::from(value)),
                _ => return Err(Error::Parse(format!("unknown target key {key:?} in {s:?}"))),
            }
        }
        let missing = |key: &str| Error::Parse(format!("target {s:?} needs {key}=..."));
        match family.trim() {
            "gaussian" => match covariance {
                Some(path) => {
                    if d.is_some() || kappa.is_some() || rotation.is_some() {
                        return Err(Error::Parse(format!(
                            "target {s:?}: covariance= excludes d, kappa and rotation"
                        )));
                    }
                    Ok(TargetSpec::GaussianFile { covariance: path })
                }
                None => Ok(TargetSpec::Gaussian {
                    d: d.ok_or_else(|| missing("d"))?,
                    kappa: kappa.unwrap_or(1.0),
                    rotation,
                }),
            },
            "logcosh" => {
                if kappa.is_some() || rotation.is_some() || covariance.is_some() {
                    return Err(Error::Parse(format!("target {s:?}: logcosh accepts only d and spread")));
                }
                Ok(TargetSpec::LogCosh {
                    d: d.ok_or_else(|| missing("d"))?,
                    spread: spread.unwrap_or(1.0),
                })
            }
            other => Err(Error::Parse(format!(
                "unknown target family {other:?}; expected gaussian or logcosh"
            ))),
        }
    }
}

impl fmt::Display for TargetSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetSpec::Gaussian { d, kappa, rotation } => {
                write!(f, "gaussian:d={d},kappa={kappa}")?;
                if let Some(r) = rotation {
                    write!(f, ",rotation={r}")?;
                }
                Ok(())
            }
            TargetSpec::GaussianFile { covariance } => write!(f, "gaussian:covariance={}", covariance.display()),
            TargetSpec::LogCosh { d, spread } => write!(f, "logcosh:d={d},spread={spread}"),
        }
    }
}

impl TryFrom<String> for TargetSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<TargetSpec> for String {
    fn from(t: TargetSpec) -> String {
        t.to_string()
    }
}

impl TargetSpec {
    pub fn build(&self) -> Result<Target> {
        match self {
            TargetSpec::Gaussian { d, kappa, rotation } => gaussian_with_condition(*d, *kappa, *rotation),
            TargetSpec::GaussianFile { covariance } => {
                let cov = SpdMatrix::read_file(covariance)
                    .map_err(|e| Error::Io(format!("cannot load covariance {}: {e}", covariance.display())))?;
                make_gaussian_target(DVector::zeros(cov.dim()), cov)
            }
            TargetSpec::LogCosh { d, spread } => {
                if *d == 0 || !(*spread >= 1.0) {
                    return Err(Error::Parameter(format!(
                        "logcosh needs d >= 1 and spread >= 1, got d = {d}, spread = {spread}"
                    )));
                }
                let scales: Vec<f64> = (0..*d)
                    .map(|i| {
                        let frac = if *d == 1 { 0.0 } else { i as f64 / (*d - 1) as f64 };
                        spread.powf(-0.5 * frac)
                    })
                    .collect();
                logcosh_product(&scales)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    pub target: TargetSpec,
    pub mode: ForecastMode,
    pub family: KernelFamily,
    pub eps: f64,
    pub n: usize,
    pub delta: f64,
    pub tol: f64,
    pub repetitions: usize,
    pub seed: u64,
    /// Directory receiving `<name>.csv` and `<name>.txt`.
    pub output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(name: &str, target: TargetSpec) -> Self {
        Self {
            name: name.to_string(),
            target,
            mode: ForecastMode::Cov,
            family: KernelFamily::Ula,
            eps: 0.1,
            n: 10,
            delta: 0.25,
            tol: 0.5,
            repetitions: 200,
            seed: 0,
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Parameter("repetitions must be at least 1".into()));
        }
        if self.n == 0 {
            return Err(Error::Parameter("N must be at least 1".into()));
        }
        if !(self.eps > 0.0) || !self.eps.is_finite() {
            return Err(Error::Parameter(format!("eps must be positive, got {}", self.eps)));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Parameter(format!(
                "experiment name {:?} is not a valid file stem",
                self.name
            )));
        }
        if let TargetSpec::GaussianFile { covariance } = &self.target {
            if !covariance.is_file() {
                return Err(Error::Io(format!("covariance file {} not found", covariance.display())));
            }
        }
        Ok(())
    }

    fn learn_spec(&self, kind: PreconditionerKind) -> LearnSpec {
        LearnSpec::new(kind, self.delta, self.tol)
    }
}

/// Two-sided exact (Clopper–Pearson) binomial interval.
pub fn clopper_pearson(successes: usize, trials: usize, confidence: f64) -> Result<(f64, f64)> {
    if trials == 0 || successes > trials || !(0.0 < confidence && confidence < 1.0) {
        return Err(Error::Parameter(format!(
            "binomial interval needs 0 <= k <= n, n > 0 and confidence in (0, 1); got k = {successes}, n = {trials}, confidence = {confidence}"
        )));
    }
    let alpha = 1.0 - confidence;
    let (k, n) = (successes as f64, trials as f64);
    let beta = |a: f64, b: f64| Beta::new(a, b).map_err(|e| Error::Parameter(e.to_string()));
    let lower = if successes == 0 {
        0.0
    } else {
        beta(k, n - k + 1.0)?.inverse_cdf(alpha / 2.0)
    };
    let upper = if successes == trials {
        1.0
    } else {
        beta(k + 1.0, n - k)?.inverse_cdf(1.0 - alpha / 2.0)
    };
    Ok((lower, upper))
}

/// Least-squares slope of `log y` against `log x`.
pub fn fitted_exponent(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 || xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::Parameter(
            "exponent fit needs at least two positive (x, y) pairs".into(),
        ));
    }
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Parameter("exponent fit needs distinct x values".into()));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Serialize)]
pub struct RepetitionOutcome {
    pub repetition: usize,
    /// `None` when the learned ensemble was degenerate.
    pub relative_error: Option<f64>,
    pub certified: bool,
    /// Fisher mode on a Gaussian target: relative error against `Σ^{-1}`.
    pub inverse_covariance_error: Option<f64>,
    pub note: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct FrequencyReport {
    pub name: String,
    pub target: String,
    pub kind: PreconditionerKind,
    pub family: KernelFamily,
    pub seed: u64,
    pub delta: f64,
    pub tol: f64,
    pub repetitions: usize,
    pub successes: usize,
    pub frequency: f64,
    pub interval: (f64, f64),
    pub confidence: f64,
    pub required: f64,
    /// Planned kernel iterations per repetition.
    pub planned_iterations: u128,
    pub learn_budget: Budget,
    /// Certified Fisher estimates on Gaussians whose error against `Σ^{-1}` exceeds Δ.
    pub identity_violations: usize,
    pub passed: bool,
    pub outcomes: Vec<RepetitionOutcome>,
}

/// Confidence level of the binomial intervals.
pub const FREQUENCY_CONFIDENCE: f64 = 0.99;

/// Repeat the learning phase `R` times on independent substreams and compare
/// the certification frequency with `1 - δ`. Passes when the exact 99%
/// interval reaches `1 - δ` and no certified Fisher estimate of a Gaussian
/// misses `Σ^{-1}` by more than Δ.
pub fn run_thm5_frequency(spec: &ExperimentSpec) -> Result<FrequencyReport> {
    spec.validate()?;
    let kind = spec
        .mode
        .kind()
        .ok_or_else(|| Error::Parameter("frequency experiments need mode cov or fisher".into()))?;
    let target = spec.target.build()?;
    let learn = spec.learn_spec(kind);
    let init = InitialLaw::at_mode(&target)?;
    let policy = NumericPolicy::default();
    let inverse_covariance = match (kind, target.gaussian_law()) {
        (PreconditionerKind::Fisher, Some(_)) => {
            Some(target.analytic_covariance().expect("gaussian covariance").inverse()?)
        }
        _ => None,
    };

    let results = map_indexed(spec.repetitions, |r| -> Result<(RepetitionOutcome, Budget)> {
        let mut rng = StreamRng::repetition(spec.seed, r as u64, 0);
        let (ensemble, budget) = run_learning(&target, &learn, spec.family, &init, &mut rng, Stepping::Auto, &policy)?;
        let outcome = match estimate_preconditioner(kind, ensemble.states(), &target, &policy) {
            Ok((_, estimate)) => {
                let cert = certificate_for(&target, kind, &estimate, spec.tol)?
                    .ok_or_else(|| Error::UnsupportedTarget("certification needs an analytic reference".into()))?;
                let inverse_covariance_error = inverse_covariance
                    .as_ref()
                    .map(|s| relative_error(&estimate, s))
                    .transpose()?;
                RepetitionOutcome {
                    repetition: r,
                    relative_error: Some(cert.relative_error),
                    certified: cert.certified,
                    inverse_covariance_error,
                    note: String::new(),
                }
            }
            Err(Error::DegenerateEnsemble(msg)) => RepetitionOutcome {
                repetition: r,
                relative_error: None,
                certified: false,
                inverse_covariance_error: None,
                note: msg,
            },
            Err(e) => return Err(e),
        };
        Ok((outcome, budget))
    });

    let mut outcomes = Vec::with_capacity(spec.repetitions);
    let mut learn_budget = None;
    for result in results {
        let (outcome, budget) = result?;
        learn_budget.get_or_insert(budget);
        outcomes.push(outcome);
    }
    let learn_budget = learn_budget.expect("at least one repetition");
    let successes = outcomes.iter().filter(|o| o.certified).count();
    let identity_violations = outcomes
        .iter()
        .filter(|o| o.certified && o.inverse_covariance_error.is_some_and(|e| e > spec.tol * (1.0 + 1e-12)))
        .count();
    let interval = clopper_pearson(successes, spec.repetitions, FREQUENCY_CONFIDENCE)?;
    let required = 1.0 - spec.delta;
    let report = FrequencyReport {
        name: spec.name.clone(),
        target: spec.target.to_string(),
        kind,
        family: spec.family,
        seed: spec.seed,
        delta: spec.delta,
        tol: spec.tol,
        repetitions: spec.repetitions,
        successes,
        frequency: successes as f64 / spec.repetitions as f64,
        interval,
        confidence: FREQUENCY_CONFIDENCE,
        required,
        planned_iterations: learn_budget.total_steps(),
        learn_budget,
        identity_violations,
        passed: interval.1 >= required && identity_violations == 0,
        outcomes,
    };
    if let Some(dir) = &spec.output_dir {
        report.write(dir)?;
    }
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

impl FrequencyReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s += &format!("experiment: {}\n", self.name);
        s += &format!("target: {}\n", self.target);
        s += &format!(
            "preconditioner: {}  kernel: {:?}  seed: {}\n",
            self.kind.label(),
            self.family,
            self.seed
        );
        s += &format!("delta = {}  Delta = {}\n", self.delta, self.tol);
        s += &format!(
            "learning budget: N = {}, h = {:e}, k_burn = {}, k_thin = {}, iterations = {}\n",
            self.learn_budget.n,
            self.learn_budget.h,
            self.learn_budget.k_burn,
            self.learn_budget.k_thin,
            self.planned_iterations
        );
        s += &format!(
            "certified: {}/{} (frequency {:.4})\n",
            self.successes, self.repetitions, self.frequency
        );
        s += &format!(
            "{:.0}% exact binomial interval: [{:.4}, {:.4}]  required 1 - delta = {:.4}\n",
            100.0 * self.confidence,
            self.interval.0,
            self.interval.1,
            self.required
        );
        if self.kind == PreconditionerKind::Fisher && self.outcomes.iter().any(|o| o.inverse_covariance_error.is_some())
        {
            s += &format!(
                "certified Fisher estimates farther than Delta from Sigma^-1: {}\n",
                self.identity_violations
            );
        }
        s += &format!("result: {}\n", if self.passed { "PASS" } else { "FAIL" });
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", self.name)))?;
        w.write_record([
            "repetition",
            "relative_error",
            "certified",
            "inverse_covariance_error",
            "note",
        ])?;
        for o in &self.outcomes {
            w.write_record([
                o.repetition.to_string(),
                opt(o.relative_error),
                o.certified.to_string(),
                opt(o.inverse_covariance_error),
                o.note.clone(),
            ])?;
        }
        w.flush()?;
        fs::write(dir.join(format!("{}.txt", self.name)), self.summary())?;
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonRow {
    pub n: usize,
    pub unpre: FlopForecast,
    pub cov: FlopForecast,
    pub fisher: FlopForecast,
}

/// Exact-oracle check of the unpreconditioned ULA budget at one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct OracleEvidence {
    pub n: usize,
    pub eps: f64,
    pub joint_w2: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub name: String,
    pub target: String,
    pub family: KernelFamily,
    pub eps: f64,
    pub delta: f64,
    pub tol: f64,
    pub rows: Vec<ComparisonRow>,
    /// Smallest grid N from which the mode's total stays below UNPRE.
    pub crossover_cov: Option<usize>,
    pub crossover_fisher: Option<usize>,
    pub evidence: Option<OracleEvidence>,
    /// Why no oracle evidence is attached.
    pub evidence_note: String,
}

/// Smallest grid value from which `better` holds at every larger grid value.
fn crossover(rows: &[ComparisonRow], better: impl Fn(&ComparisonRow) -> bool) -> Option<usize> {
    let mut first = None;
    for row in rows.iter().rev() {
        if !better(row) {
            break;
        }
        first = Some(row.n);
    }
    first
}

fn oracle_evidence(target: &Target, eps: f64, n: usize, init: &InitialLaw) -> Result<OracleEvidence> {
    let law = target
        .gaussian_law()
        .ok_or_else(|| Error::UnsupportedTarget("oracle unsupported for non-Gaussian targets".into()))?;
    let budget = plan_ula_unpreconditioned_from(target, eps, n, init.w2_to_target(target)?)?;
    let joint = exact_joint_law(law, &budget, &init.law)?;
    let joint_w2 = joint.w2_to_product(law)?;
    let bound = (n as f64).sqrt() * eps;
    Ok(OracleEvidence {
        n,
        eps,
        joint_w2,
        bound,
        holds: joint_w2 <= bound + 1e-8,
    })
}

/// Planned FLOP totals of the three modes across `n_grid`, the crossover
/// sizes, and (for Gaussian ULA) exact-oracle evidence at the smallest size.
pub fn run_complexity_comparison(spec: &ExperimentSpec, n_grid: &[usize]) -> Result<ComparisonReport> {
    spec.validate()?;
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::Parameter(
            "the N grid must be non-empty with positive entries".into(),
        ));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let target = spec.target.build()?;
    let init = InitialLaw::at_mode(&target)?;
    let learn = spec.learn_spec(PreconditionerKind::Covariance);
    let forecast = |mode, n| total_flops_forecast(&target, mode, spec.family, spec.eps, n, &learn, &init);
    let rows = map_indexed(grid.len(), |i| -> Result<ComparisonRow> {
        let n = grid[i];
        Ok(ComparisonRow {
            n,
            unpre: forecast(ForecastMode::Unpre, n)?,
            cov: forecast(ForecastMode::Cov, n)?,
            fisher: forecast(ForecastMode::Fisher, n)?,
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let crossover_cov = crossover(&rows, |r| r.cov.total < r.unpre.total);
    let crossover_fisher = crossover(&rows, |r| r.fisher.total < r.unpre.total);
    let (evidence, evidence_note) = if spec.family != KernelFamily::Ula {
        (None, "oracle evidence covers the ULA kernel only".to_string())
    } else if target.gaussian_law().is_none() {
        (None, "oracle unsupported for non-Gaussian targets".to_string())
    } else {
        match oracle_evidence(&target, spec.eps, grid[0], &init) {
            Ok(e) => (Some(e), String::new()),
            Err(e @ Error::OracleTooLarge { .. }) => (None, e.to_string()),
            Err(e) => return Err(e),
        }
    };
    let report = ComparisonReport {
        name: spec.name.clone(),
        target: spec.target.to_string(),
        family: spec.family,
        eps: spec.eps,
        delta: spec.delta,
        tol: spec.tol,
        rows,
        crossover_cov,
        crossover_fisher,
        evidence,
        evidence_note,
    };
    if let Some(dir) = &spec.output_dir {
        report.write(dir)?;
    }
    Ok(report)
}

impl ComparisonReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        s += &format!("experiment: {}\n", self.name);
        s += &format!("target: {}\n", self.target);
        s += &format!(
            "kernel: {:?}  eps = {}  delta = {}  Delta = {}\n",
            self.family, self.eps, self.delta, self.tol
        );
        s += &format!(
            "{:>10} {:>14} {:>14} {:>14} {:>14} {:>14}\n",
            "N", "unpre", "cov", "cov_learn", "fisher", "fisher_learn"
        );
        for r in &self.rows {
            s += &format!(
                "{:>10} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e} {:>14.6e}\n",
                r.n, r.unpre.total, r.cov.total, r.cov.learn_total, r.fisher.total, r.fisher.learn_total
            );
        }
        let cross = |c: Option<usize>| c.map(|n| n.to_string()).unwrap_or_else(|| "none in grid".into());
        s += &format!("crossover N* (cov): {}\n", cross(self.crossover_cov));
        s += &format!("crossover N* (fisher): {}\n", cross(self.crossover_fisher));
        match &self.evidence {
            Some(e) => {
                s += &format!(
                    "oracle at N = {}: W2(joint, product) = {:.6e} <= sqrt(N) eps = {:.6e}: {}\n",
                    e.n,
                    e.joint_w2,
                    e.bound,
                    if e.holds { "holds" } else { "VIOLATED" }
                )
            }
            None => s += &format!("oracle evidence: none ({})\n", self.evidence_note),
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join(format!("{}.csv", self.name)))?;
        w.write_record([
            "n",
            "unpre_total",
            "cov_learn",
            "cov_sample",
            "cov_total",
            "fisher_learn",
            "fisher_sample",
            "fisher_total",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.n.to_string(),
                format!("{:e}", r.unpre.total),
                format!("{:e}", r.cov.learn_total),
                format!("{:e}", r.cov.sample_total),
                format!("{:e}", r.cov.total),
                format!("{:e}", r.fisher.learn_total),
                format!("{:e}", r.fisher.sample_total),
                format!("{:e}", r.fisher.total),
            ])?;
        }
        w.flush()?;
        fs::write(dir.join(format!("{}.txt", self.name)), self.summary())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn target_spec_round_trips() {
        for s in [
            "gaussian:d=2,kappa=4",
            "gaussian:d=20,kappa=100,rotation=7",
            "logcosh:d=3,spread=4",
        ] {
            let t: TargetSpec = s.parse().unwrap();
            assert_eq!(t.to_string(), s);
        }
        assert!("gaussian:kappa=4".parse::<TargetSpec>().is_err());
        assert!("gaussian:d=2,colour=red".parse::<TargetSpec>().is_err());
        assert!("cauchy:d=2".parse::<TargetSpec>().is_err());
        let t = "gaussian:d=3,kappa=9".parse::<TargetSpec>().unwrap().build().unwrap();
        assert_eq!((t.dim(), t.kappa()), (3, 9.0));
    }

    #[test]
    fn clopper_pearson_reference_values() {
        // Closed forms at the endpoints: (α/2)^{1/n} and 1 - (α/2)^{1/n}.
        let (lo, hi) = clopper_pearson(10, 10, 0.99).unwrap();
        assert_eq!(hi, 1.0);
        assert!((lo - 0.005f64.powf(0.1)).abs() < 1e-9);
        let (lo, hi) = clopper_pearson(0, 10, 0.99).unwrap();
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.005f64.powf(0.1))).abs() < 1e-9);
        let (lo, hi) = clopper_pearson(50, 100, 0.95).unwrap();
        assert!(lo < 0.5 && hi > 0.5 && ((0.5 - lo) - (hi - 0.5)).abs() < 1e-9);
    }

    #[test]
    fn exponent_fit_recovers_power_laws() {
        let xs = [1.0, 2.0, 5.0, 10.0];
        let ys: Vec<f64> = xs.iter().map(|x: &f64| 3.0 * x.powf(1.7)).collect();
        assert!((fitted_exponent(&xs, &ys).unwrap() - 1.7).abs() < 1e-12);
        assert!(fitted_exponent(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn crossover_requires_every_larger_size() {
        let t = gaussian_with_condition(2, 4.0, None).unwrap();
        let init = InitialLaw::at_mode(&t).unwrap();
        let spec = LearnSpec::new(PreconditionerKind::Covariance, 0.25, 0.5);
        let f = |mode, n| total_flops_forecast(&t, mode, KernelFamily::Ula, 0.1, n, &spec, &init).unwrap();
        let row = |n, better: bool| {
            let mut r = ComparisonRow {
                n,
                unpre: f(ForecastMode::Unpre, n),
                cov: f(ForecastMode::Cov, n),
                fisher: f(ForecastMode::Fisher, n),
            };
            r.cov.total = if better { 0.0 } else { f64::INFINITY };
            r
        };
        let rows = vec![row(1, true), row(2, false), row(4, true), row(8, true)];
        assert_eq!(crossover(&rows, |r| r.cov.total < r.unpre.total), Some(4));
        let rows = vec![row(1, true), row(2, false)];
        assert_eq!(crossover(&rows, |r| r.cov.total < r.unpre.total), None);
    }

    #[test]
    fn isotropic_gaussian_never_crosses_over() {
        let mut spec = ExperimentSpec::new("iso", "gaussian:d=2,kappa=1".parse().unwrap());
        spec.eps = 0.1;
        let report = run_complexity_comparison(&spec, &[1, 16, 256, 4096]).unwrap();
        assert_eq!(report.crossover_cov, None);
        assert_eq!(report.crossover_fisher, None);
        assert!(report.evidence.as_ref().unwrap().holds);
    }

    #[test]
    fn zero_tolerance_is_inadmissible() {
        let mut spec = ExperimentSpec::new("zero", "gaussian:d=2,kappa=4".parse().unwrap());
        spec.tol = 0.0;
        spec.repetitions = 2;
        assert!(matches!(
            run_thm5_frequency(&spec),
            Err(Error::InadmissibleTolerance { .. })
        ));
    }

    #[test]
    fn unpreconditioned_mode_has_no_frequency_experiment() {
        let mut spec = ExperimentSpec::new("u", "gaussian:d=2,kappa=4".parse().unwrap());
        spec.mode = ForecastMode::Unpre;
        assert!(matches!(run_thm5_frequency(&spec), Err(Error::Parameter(_))));
    }
}
