//! Covariance and Fisher estimates from ensembles, and their certification.

use crate::budget::{Budget, PreconditionerKind};
use crate::error::{Error, Result};
use crate::flops::FlopLedger;
use crate::linalg::{sym_eigen, sym_spectral_norm, symmetrize, SpdMatrix};
use crate::numerics::NumericPolicy;
use crate::par::chunked_fold;
use crate::target::Target;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// How the chain was advanced between outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SteppingMode {
    /// One kernel application at a time.
    #[default]
    Iterate,
    /// Exact multi-step transitions of the linear-Gaussian chain.
    Exact,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub seed: u64,
    pub stream: u64,
    pub kernel: String,
    pub budget: Option<Budget>,
    pub ledger: FlopLedger,
    /// Kernel steps taken before each output state.
    pub step_indices: Vec<u128>,
    pub stepping: SteppingMode,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    states: Vec<DVector<f64>>,
    pub meta: EnsembleMeta,
}

impl Ensemble {
    pub fn new(states: Vec<DVector<f64>>, meta: EnsembleMeta) -> Result<Self> {
        let first = states
            .first()
            .ok_or_else(|| Error::Parameter("an ensemble needs at least one state".into()))?;
        let d = first.len();
        for s in &states {
            if s.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: s.len(),
                });
            }
            if !s.iter().all(|v| v.is_finite()) {
                return Err(Error::NumericalFailure {
                    iteration: 0,
                    detail: "non-finite ensemble state".into(),
                    state: s.iter().copied().collect(),
                });
            }
        }
        Ok(Self { states, meta })
    }

    pub fn from_states(states: Vec<DVector<f64>>) -> Result<Self> {
        Self::new(states, EnsembleMeta::default())
    }

    pub fn dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn into_states(self) -> Vec<DVector<f64>> {
        self.states
    }

    pub fn mean(&self) -> DVector<f64> {
        sample_mean(&self.states)
    }

    /// CSV with one row per state and columns `x0..x{d-1}`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (0..self.dim()).map(|i| format!("x{i}")).collect();
        w.write_record(&header)?;
        for s in &self.states {
            w.write_record(s.iter().map(|v| format!("{v:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Vec<DVector<f64>>> {
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let row: std::result::Result<Vec<f64>, _> = rec.iter().map(|f| f.trim().parse::<f64>()).collect();
            out.push(DVector::from_vec(row.map_err(|e| Error::Parse(e.to_string()))?));
        }
        Ok(out)
    }
}

fn sample_mean(states: &[DVector<f64>]) -> DVector<f64> {
    let d = states[0].len();
    let sum = chunked_fold(states, || DVector::zeros(d), |acc, x| acc + x, |a, b| a + b);
    sum / states.len() as f64
}

fn second_moment<F>(states: &[DVector<f64>], d: usize, map: F) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync + Send,
{
    let sum = chunked_fold(
        states,
        || DMatrix::zeros(d, d),
        |mut acc, x| {
            let v = map(x);
            acc.ger(1.0, &v, &v, 1.0);
            acc
        },
        |a, b| a + b,
    );
    symmetrize(&(sum / states.len() as f64))
}

fn reject_degenerate(m: DMatrix<f64>, what: &str, policy: &NumericPolicy) -> Result<SpdMatrix> {
    let (values, _) = sym_eigen(&m, policy)?;
    let (lo, hi) = (values[0], values[values.len() - 1]);
    if !(hi > 0.0) || lo <= policy.degeneracy_floor * hi {
        return Err(Error::DegenerateEnsemble(format!(
            "{what} has eigenvalues in [{lo:e}, {hi:e}]; increase the ensemble size"
        )));
    }
    SpdMatrix::with_policy(m, policy).map_err(|e| Error::DegenerateEnsemble(format!("{what}: {e}")))
}

/// `(1/N) Σ (X_t - X̄)(X_t - X̄)ᵀ`.
pub fn empirical_covariance(e: &Ensemble) -> Result<SpdMatrix> {
    covariance_of(e.states(), &NumericPolicy::default())
}

pub fn covariance_of(states: &[DVector<f64>], policy: &NumericPolicy) -> Result<SpdMatrix> {
    if states.len() < 2 {
        return Err(Error::DegenerateEnsemble(format!(
            "covariance needs at least 2 states, got {}; increase the ensemble size",
            states.len()
        )));
    }
    let d = states[0].len();
    let mean = sample_mean(states);
    let m = second_moment(states, d, |x| x - &mean);
    reject_degenerate(m, "empirical covariance", policy)
}

/// `(1/N) Σ ∇log π(X_t) ∇log π(X_t)ᵀ`.
pub fn empirical_fisher(e: &Ensemble, target: &Target) -> Result<SpdMatrix> {
    fisher_of(e.states(), target, &NumericPolicy::default())
}

pub fn fisher_of(states: &[DVector<f64>], target: &Target, policy: &NumericPolicy) -> Result<SpdMatrix> {
    let d = states[0].len();
    if d != target.dim() {
        return Err(Error::DimensionMismatch {
            expected: target.dim(),
            found: d,
        });
    }
    for (i, x) in states.iter().enumerate() {
        if !target.gradient(x).iter().all(|v| v.is_finite()) {
            return Err(Error::NumericalFailure {
                iteration: i as u64,
                detail: "non-finite score in Fisher estimate".into(),
                state: x.iter().copied().collect(),
            });
        }
    }
    let m = second_moment(states, d, |x| target.gradient(x));
    reject_degenerate(m, "empirical Fisher matrix", policy)
}

/// The preconditioner built from an ensemble: `Σ̂^{-1}` or `F̂`, together with
/// the estimate it was built from.
pub fn estimate_preconditioner(
    kind: PreconditionerKind,
    states: &[DVector<f64>],
    target: &Target,
    policy: &NumericPolicy,
) -> Result<(SpdMatrix, SpdMatrix)> {
    match kind {
        PreconditionerKind::Covariance => {
            let cov = covariance_of(states, policy)?;
            Ok((cov.inverse()?, cov))
        }
        PreconditionerKind::Fisher => {
            let f = fisher_of(states, target, policy)?;
            Ok((f.clone(), f))
        }
    }
}

/// Ledger for building the estimate (and inverting it for the covariance kind).
pub fn estimate_ledger(kind: PreconditionerKind, n: usize, d: usize, gradient_cost: u64) -> FlopLedger {
    let mut ledger = FlopLedger::new(gradient_cost);
    match kind {
        PreconditionerKind::Covariance => {
            ledger.other_flops += crate::flops::covariance_estimate_flops(n, d) as u128;
            ledger.factorization_flops += crate::flops::inversion_flops(d) as u128;
        }
        PreconditionerKind::Fisher => {
            ledger.other_flops += crate::flops::fisher_estimate_flops(n, d) as u128;
            ledger.gradient_calls += n as u128;
        }
    }
    ledger
}

/// `‖M_ref^{-1/2} M_hat M_ref^{-1/2} - I‖₂`.
pub fn relative_error(m_hat: &SpdMatrix, m_ref: &SpdMatrix) -> Result<f64> {
    if m_hat.dim() != m_ref.dim() {
        return Err(Error::DimensionMismatch {
            expected: m_ref.dim(),
            found: m_hat.dim(),
        });
    }
    let w = m_ref.whiten(m_hat.matrix())?;
    let d = w.nrows();
    sym_spectral_norm(&(w - DMatrix::identity(d, d)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub relative_error: f64,
    pub tol: f64,
    pub certified: bool,
}

/// Closed test `relative_error <= tol`; the error is dimensionless, so the
/// round-off slack is absolute.
pub fn certify(m_hat: &SpdMatrix, m_ref: &SpdMatrix, tol: f64) -> Result<Certificate> {
    let err = relative_error(m_hat, m_ref)?;
    let slack = NumericPolicy::default().boundary_slack * tol.max(1.0);
    Ok(Certificate {
        relative_error: err,
        tol,
        certified: err <= tol + slack,
    })
}

/// Write `m` in the SPD text format plus a JSON sidecar at `<path>.json`.
pub fn export_estimate(path: &Path, m: &SpdMatrix, sidecar: &serde_json::Value) -> Result<()> {
    m.write_file(path)?;
    let mut side = path.as_os_str().to_owned();
    side.push(".json");
    std::fs::write(Path::new(&side), serde_json::to_string_pretty(sidecar)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{random_spd_with_spectrum, GaussianLaw};
    use crate::rng::StreamRng;
    use crate::target::make_gaussian_target;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_vec(xs.to_vec())
    }

    #[test]
    fn covariance_of_two_points() {
        let e = Ensemble::from_states(vec![v(&[-1.0]), v(&[1.0])]).unwrap();
        assert!((empirical_covariance(&e).unwrap().matrix()[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_states_are_degenerate() {
        let e = Ensemble::from_states(vec![v(&[1.0, 2.0]); 5]).unwrap();
        let err = empirical_covariance(&e).unwrap_err();
        assert!(matches!(err, Error::DegenerateEnsemble(ref m) if m.contains("increase")));
    }

    #[test]
    fn fisher_examples() {
        let t = make_gaussian_target(DVector::zeros(1), SpdMatrix::identity(1)).unwrap();
        let e = Ensemble::from_states(vec![v(&[-1.0]), v(&[1.0])]).unwrap();
        assert!((empirical_fisher(&e, &t).unwrap().matrix()[(0, 0)] - 1.0).abs() < 1e-15);
        let at_mode = Ensemble::from_states(vec![v(&[0.0])]).unwrap();
        assert!(matches!(
            empirical_fisher(&at_mode, &t),
            Err(Error::DegenerateEnsemble(_))
        ));
    }

    #[test]
    fn relative_error_examples() {
        let mut rng = StreamRng::new(3, 0);
        let m = random_spd_with_spectrum(&[0.5, 1.0, 3.0], &mut rng).unwrap();
        assert!(relative_error(&m, &m).unwrap() < 1e-12);
        let twice = m.scaled(2.0).unwrap();
        assert!((relative_error(&twice, &m).unwrap() - 1.0).abs() < 1e-12);
        let c = certify(&twice, &m, 1.0).unwrap();
        assert!(c.certified);
        assert!(certify(&m, &m, 0.0).unwrap().certified);
    }

    #[test]
    fn relative_error_matches_brute_force() {
        let mut rng = StreamRng::new(11, 0);
        let a = random_spd_with_spectrum(&[0.3, 1.0, 2.5], &mut rng).unwrap();
        let b = random_spd_with_spectrum(&[0.7, 1.1, 1.9], &mut rng).unwrap();
        // Independent oracle: generalized eigenvalues of (a, b) via b^{-1} a.
        let prod = b.inverse_matrix() * a.matrix();
        let eig = prod.complex_eigenvalues();
        let brute = eig.iter().map(|z| (z.re - 1.0).abs()).fold(0.0, f64::max);
        assert!((relative_error(&a, &b).unwrap() - brute).abs() < 1e-10);
    }

    #[test]
    fn exact_draws_recover_covariance_and_fisher() {
        let cov = SpdMatrix::from_diagonal(&[1.0, 4.0]).unwrap();
        let law = GaussianLaw::from_spd(DVector::zeros(2), &cov).unwrap();
        let mut rng = StreamRng::new(5, 0);
        let draws: Vec<_> = (0..100_000).map(|_| law.sample(&mut rng)).collect();
        let e = Ensemble::from_states(draws).unwrap();
        let t = make_gaussian_target(DVector::zeros(2), cov.clone()).unwrap();
        assert!(relative_error(&empirical_covariance(&e).unwrap(), &cov).unwrap() <= 0.05);
        let prec = cov.inverse().unwrap();
        assert!(relative_error(&empirical_fisher(&e, &t).unwrap(), &prec).unwrap() <= 0.05);
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.csv");
        let e = Ensemble::from_states(vec![v(&[1.5, -2.0]), v(&[0.1, 3e-7])]).unwrap();
        e.write_csv(&p).unwrap();
        assert_eq!(Ensemble::read_csv(&p).unwrap(), e.states().to_vec());
    }
}
