//! Exact laws of the ULA chain on Gaussian targets.
//!
//! On `π = N(μ, Σ)` with precision `P = Σ^{-1}`, ULA is the linear recursion
//! `X' = μ + A (X - μ) + sqrt(2h) ξ` with `A = I - hP`, so every marginal and
//! the joint law of the thinned output are Gaussian and available in closed
//! form. The Monte Carlo consequence checks couple the chain's joint law with
//! `π^⊗N` through the explicit Gaussian optimal transport map.

use crate::budget::Budget;
use crate::error::{Error, Result};
use crate::kernels::{PhaseState, UnderdampedCoefficients};
use crate::linalg::{bures_w2, bures_w2_squared, optimal_coupling_map, sym_eigen, symmetrize, GaussianLaw, SpdMatrix};
use crate::numerics::NumericPolicy;
use crate::par::map_indexed;
use crate::rng::StreamRng;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Exact `k`-step transition of ULA on a Gaussian target.
#[derive(Debug, Clone)]
pub struct LinearGaussianChain {
    mean: DVector<f64>,
    h: f64,
    /// Precision eigenvalues and eigenvectors.
    precision_values: DVector<f64>,
    basis: DMatrix<f64>,
}

/// `A^k` and the `k`-step noise covariance in the precision eigenbasis.
#[derive(Debug, Clone)]
pub struct KStep {
    pub drift: DMatrix<f64>,
    pub noise: DMatrix<f64>,
    pub noise_sqrt: DMatrix<f64>,
    pub steps: u64,
}

impl LinearGaussianChain {
    pub fn new(target: &GaussianLaw, h: f64) -> Result<Self> {
        if !(h > 0.0) {
            return Err(Error::Parameter(format!("step size must be positive, got {h}")));
        }
        let precision = target.spd_covariance()?.inverse()?;
        let chain = Self {
            mean: target.mean().clone(),
            h,
            precision_values: precision.eigenvalues().clone(),
            basis: precision.eigenvectors().clone(),
        };
        // Decide on `hp` itself: `|1 - hp|` rounds to 1 once `hp` is below
        // machine epsilon, yet such chains are contracting.
        let stable = chain.precision_values.iter().all(|p| {
            let hp = h * p;
            hp > 0.0 && hp < 2.0
        });
        if !stable {
            return Err(Error::Instability {
                radius: chain.spectral_radius(),
            });
        }
        Ok(chain)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn spectral_radius(&self) -> f64 {
        self.precision_values
            .iter()
            .map(|p| (1.0 - self.h * p).abs())
            .fold(0.0, f64::max)
    }

    fn in_basis(&self, diag: impl Iterator<Item = f64>) -> DMatrix<f64> {
        let d = DVector::from_iterator(self.dim(), diag);
        symmetrize(&(&self.basis * DMatrix::from_diagonal(&d) * self.basis.transpose()))
    }

    /// `a^k` and `2h (1 - a^{2k}) / (1 - a^2)` per precision eigenvalue, with
    /// `a = 1 - hp` handled through `ln1p`/`expm1` so that `hp ≪ 1` keeps
    /// full relative accuracy.
    fn coefficients(&self, k: u64) -> Vec<(f64, f64)> {
        self.precision_values
            .iter()
            .map(|&p| {
                if k == 0 {
                    return (1.0, 0.0);
                }
                let hp = self.h * p;
                let kf = k as f64;
                let log_abs = if hp < 1.0 { (-hp).ln_1p() } else { (hp - 1.0).ln() };
                let sign = if hp > 1.0 && k % 2 == 1 { -1.0 } else { 1.0 };
                let power = sign * (kf * log_abs).exp();
                let one_minus_a2k = -(2.0 * kf * log_abs).exp_m1();
                let noise = 2.0 * one_minus_a2k / (p * (2.0 - hp));
                (power, noise)
            })
            .collect()
    }

    pub fn k_step(&self, k: u64) -> KStep {
        let c = self.coefficients(k);
        KStep {
            drift: self.in_basis(c.iter().map(|x| x.0)),
            noise: self.in_basis(c.iter().map(|x| x.1)),
            noise_sqrt: self.in_basis(c.iter().map(|x| x.1.max(0.0).sqrt())),
            steps: k,
        }
    }

    /// Law after `k` steps from `init`.
    pub fn marginal(&self, init: &GaussianLaw, k: u64) -> Result<GaussianLaw> {
        if init.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: init.dim(),
            });
        }
        if k == 0 {
            return Ok(init.clone());
        }
        let ks = self.k_step(k);
        Ok(self.advance_law(init, &ks)?.0)
    }

    fn advance_law(&self, law: &GaussianLaw, ks: &KStep) -> Result<(GaussianLaw, DMatrix<f64>)> {
        let mean = &self.mean + &ks.drift * (law.mean() - &self.mean);
        let cov = symmetrize(&(&ks.drift * law.covariance() * &ks.drift + &ks.noise));
        Ok((GaussianLaw::new(mean, cov.clone())?, cov))
    }

    /// One draw of `X_{k}` given `X_0 = x`, consuming `d` normals.
    pub fn sample_from(&self, x: &DVector<f64>, ks: &KStep, rng: &mut StreamRng) -> DVector<f64> {
        let xi = rng.normal_vec(self.dim());
        &self.mean + &ks.drift * (x - &self.mean) + &ks.noise_sqrt * xi
    }
}

/// Law of `μ0 K^k` for ULA with step `h` on `target`.
pub fn exact_marginal_law(target: &GaussianLaw, h: f64, k: u64, mu0: &GaussianLaw) -> Result<GaussianLaw> {
    LinearGaussianChain::new(target, h)?.marginal(mu0, k)
}

/// Joint law of the `N` thinned outputs.
#[derive(Debug, Clone)]
pub struct ChainLaw {
    pub chain: LinearGaussianChain,
    pub joint: GaussianLaw,
    pub n: usize,
    pub step_indices: Vec<u64>,
}

impl ChainLaw {
    pub fn dim(&self) -> usize {
        self.chain.dim()
    }

    pub fn marginal(&self, t: usize) -> Result<GaussianLaw> {
        self.joint.block(t * self.dim(), self.dim())
    }

    /// `W2(law of the outputs, π^⊗N)`.
    pub fn w2_to_product(&self, target: &GaussianLaw) -> Result<f64> {
        bures_w2(&self.joint, &target.product(self.n))
    }

    /// `E|X̄ - μ|²` and `tr Var(X̄)` for the sample mean `X̄`.
    pub fn mean_moments(&self, target: &GaussianLaw) -> (f64, f64) {
        let d = self.dim();
        let n = self.n;
        let mut mean = DVector::zeros(d);
        let mut trace = 0.0;
        for s in 0..n {
            mean += self.joint.mean().rows(s * d, d);
            for t in 0..n {
                let block = self.joint.covariance().view((s * d, t * d), (d, d));
                trace += block.trace();
            }
        }
        let nf = n as f64;
        mean /= nf;
        let var_trace = trace / (nf * nf);
        ((mean - target.mean()).norm_squared() + var_trace, var_trace)
    }
}

/// Joint law of the thinned output: `X_1 ~ μ0 K^{k_burn}` and
/// `X_{t+1} ~ K^{k_thin}(X_t → ·)`, with `Cov(X_t, X_s) = A^{(t-s) k_thin} Var(X_s)`.
pub fn exact_joint_law(target: &GaussianLaw, budget: &Budget, mu0: &GaussianLaw) -> Result<ChainLaw> {
    exact_joint_law_with(
        target,
        budget.h,
        budget.k_burn,
        budget.k_thin,
        budget.n,
        mu0,
        &NumericPolicy::default(),
    )
}

pub fn exact_joint_law_with(
    target: &GaussianLaw,
    h: f64,
    k_burn: u64,
    k_thin: u64,
    n: usize,
    mu0: &GaussianLaw,
    policy: &NumericPolicy,
) -> Result<ChainLaw> {
    let d = target.dim();
    let size = d * n;
    if size > policy.oracle_max_size {
        return Err(Error::OracleTooLarge {
            size,
            limit: policy.oracle_max_size,
        });
    }
    if n == 0 {
        return Err(Error::Parameter("N must be at least 1".into()));
    }
    let chain = LinearGaussianChain::new(target, h)?;
    let first = chain.marginal(mu0, k_burn)?;
    let thin = chain.k_step(k_thin);
    let mut means = vec![first.mean().clone()];
    let mut vars = vec![first.covariance().clone()];
    for t in 1..n {
        let prev = GaussianLaw::new(means[t - 1].clone(), vars[t - 1].clone())?;
        let (next, cov) = chain.advance_law(&prev, &thin)?;
        means.push(next.mean().clone());
        vars.push(cov);
    }
    let mut joint_cov = DMatrix::zeros(size, size);
    for (s, var) in vars.iter().enumerate() {
        // Column block s: Cov(X_t, X_s) for t >= s.
        let mut block = var.clone();
        for t in s..n {
            if t > s {
                block = &thin.drift * block;
            }
            joint_cov.view_mut((t * d, s * d), (d, d)).copy_from(&block);
            if t > s {
                joint_cov.view_mut((s * d, t * d), (d, d)).copy_from(&block.transpose());
            }
        }
    }
    let mut joint_mean = DVector::zeros(size);
    for (t, m) in means.iter().enumerate() {
        joint_mean.rows_mut(t * d, d).copy_from(m);
    }
    let step_indices = (0..n as u64).map(|t| k_burn + t * k_thin).collect();
    Ok(ChainLaw {
        chain,
        joint: GaussianLaw::with_policy(joint_mean, symmetrize(&joint_cov), policy)?,
        n,
        step_indices,
    })
}

/// Both sides of the contraction inequality
/// `W2(π, δ_{x0} K^k) <= Γ e^{-γk} W2(π, δ_{x0}) + b` for ULA.
pub fn contraction_check(
    target: &GaussianLaw,
    h: f64,
    x0: &DVector<f64>,
    k: u64,
    params: (f64, f64, f64),
) -> Result<(f64, f64)> {
    let (big_gamma, gamma, b) = params;
    let start = GaussianLaw::point_mass(x0.clone());
    let law = exact_marginal_law(target, h, k, &start)?;
    let lhs = bures_w2(target, &law)?;
    let rhs = big_gamma * (-gamma * k as f64).exp() * bures_w2(target, &start)? + b;
    Ok((lhs, rhs))
}

/// Position law after `k` underdamped steps from `init` with zero initial
/// velocity, on a Gaussian target. The 2d-dimensional affine recursion is
/// composed by repeated squaring.
pub fn underdamped_position_law(
    target: &GaussianLaw,
    h: f64,
    friction: f64,
    velocity_scale: f64,
    k: u64,
    init: &GaussianLaw,
) -> Result<GaussianLaw> {
    let d = target.dim();
    let precision = target.spd_covariance()?.inverse()?;
    let p = precision.matrix();
    let c = UnderdampedCoefficients::new(h, friction, velocity_scale)?;
    let id = DMatrix::<f64>::identity(d, d);
    // z = (x - μ, v); z' = F z + noise.
    let mut f = DMatrix::zeros(2 * d, 2 * d);
    f.view_mut((0, 0), (d, d)).copy_from(&(&id - p * c.position_grad));
    f.view_mut((0, d), (d, d)).copy_from(&(&id * c.position_velocity));
    f.view_mut((d, 0), (d, d)).copy_from(&(-p * c.velocity_grad));
    f.view_mut((d, d), (d, d)).copy_from(&(&id * c.velocity_decay));
    let mut q = DMatrix::zeros(2 * d, 2 * d);
    q.view_mut((0, 0), (d, d)).copy_from(&(&id * c.var_position));
    q.view_mut((0, d), (d, d)).copy_from(&(&id * c.cov_position_velocity));
    q.view_mut((d, 0), (d, d)).copy_from(&(&id * c.cov_position_velocity));
    q.view_mut((d, d), (d, d)).copy_from(&(&id * c.var_velocity));

    // (F, Q)^k by binary powering: (F2, Q2)∘(F1, Q1) = (F2 F1, F2 Q1 F2ᵀ + Q2).
    let mut acc_f = DMatrix::<f64>::identity(2 * d, 2 * d);
    let mut acc_q = DMatrix::<f64>::zeros(2 * d, 2 * d);
    let (mut base_f, mut base_q) = (f, q);
    let mut rem = k;
    while rem > 0 {
        if rem & 1 == 1 {
            acc_q = &base_f * acc_q * base_f.transpose() + &base_q;
            acc_f = &base_f * acc_f;
        }
        rem >>= 1;
        if rem > 0 {
            base_q = &base_f * &base_q * base_f.transpose() + &base_q;
            base_f = &base_f * &base_f;
        }
    }
    let mut z_mean = DVector::zeros(2 * d);
    z_mean.rows_mut(0, d).copy_from(&(init.mean() - target.mean()));
    let mut z_cov = DMatrix::zeros(2 * d, 2 * d);
    z_cov.view_mut((0, 0), (d, d)).copy_from(init.covariance());
    let mean = &acc_f * z_mean;
    let cov = symmetrize(&(&acc_f * z_cov * acc_f.transpose() + acc_q));
    let pos_mean = target.mean() + mean.rows(0, d);
    GaussianLaw::new(pos_mean, cov.view((0, 0), (d, d)).into_owned())
}

/// Minimum-cost perfect assignment (Hungarian algorithm, O(n³)).
/// Returns `assignment[row] = column`.
pub fn hungarian(cost: &DMatrix<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// W2 between two uniform empirical measures with the same number of atoms.
pub fn empirical_w2(xs: &[DVector<f64>], ys: &[DVector<f64>]) -> f64 {
    let n = xs.len();
    let cost = DMatrix::from_fn(n, n, |i, j| (&xs[i] - &ys[j]).norm_squared());
    let a = hungarian(&cost);
    let total: f64 = a.iter().enumerate().map(|(i, &j)| cost[(i, j)]).sum();
    (total / n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsequenceRow {
    pub check: String,
    pub replication: u64,
    pub lhs: f64,
    pub standard_error: f64,
    pub rhs: f64,
    /// `rhs - (lhs - 3 SE)`; non-negative when the check passes.
    pub margin: f64,
    pub holds: bool,
}

impl ConsequenceRow {
    fn new(check: &str, replication: u64, lhs: f64, se: f64, rhs: f64) -> Self {
        let margin = rhs - (lhs - 3.0 * se);
        Self {
            check: check.to_string(),
            replication,
            lhs,
            standard_error: se,
            rhs,
            margin,
            holds: margin >= 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsequenceReport {
    pub epsilon: f64,
    pub joint_w2: f64,
    pub rows: Vec<ConsequenceRow>,
}

impl ConsequenceReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "check",
            "replication",
            "lhs",
            "standard_error",
            "rhs",
            "margin",
            "holds",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.check.clone(),
                r.replication.to_string(),
                format!("{:e}", r.lhs),
                format!("{:e}", r.standard_error),
                format!("{:e}", r.rhs),
                format!("{:e}", r.margin),
                r.holds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Monte Carlo checks of the consequences of `√N ε`-AIID output, using
/// `mc_draws` coupled pairs `(X, Y)` with `Y ~ π^⊗N` and `X = T(Y)` for the
/// optimal map `T` onto the chain's joint law:
///
/// - `E|X̄ - μ|² <= (ε + sqrt(tr Σ / N))²`
/// - `tr Var(X̄) <= (sqrt(tr Σ) + ε)² / N + (2 sqrt(tr Σ) + ε) ε`
/// - `E W2(ν_X, ν_Y) <= ε` for the empirical measures
/// - `E‖(1/N)Σ X̃X̃ᵀ - (1/N)Σ ỸỸᵀ‖_F <= 2 sqrt(tr Σ) ε + ε²` (centred)
/// - linear maps `F`: `W2(F_♯ joint, (F_♯π)^⊗N) <= √N ‖F‖ ε` (exact)
///
/// Refuses to run unless `W2(joint, π^⊗N) <= √N ε` holds exactly.
pub fn aiid_consequence_checks(
    chain: &ChainLaw,
    target: &GaussianLaw,
    eps: f64,
    mc_draws: usize,
    linear_maps: &[DMatrix<f64>],
    replication: u64,
    rng: &StreamRng,
) -> Result<ConsequenceReport> {
    let n = chain.n;
    let d = chain.dim();
    let nf = n as f64;
    let product = target.product(n);
    let joint_w2 = bures_w2(&chain.joint, &product)?;
    let policy = NumericPolicy::default();
    if !policy.at_most(joint_w2, nf.sqrt() * eps) {
        return Err(Error::PreconditionUnverified(format!(
            "W2(joint, pi^N) = {joint_w2:e} exceeds sqrt(N) eps = {:e}",
            nf.sqrt() * eps
        )));
    }
    if mc_draws < 2 {
        return Err(Error::Parameter("at least two Monte Carlo draws are needed".into()));
    }
    let map = optimal_coupling_map(&product, &chain.joint)?;
    let tr = target.covariance().trace();
    let mu = target.mean().clone();

    // Deterministic chunks, each with its own substream.
    const CHUNK: usize = 1024;
    let chunks = mc_draws.div_ceil(CHUNK);
    let per_chunk = map_indexed(chunks, |c| {
        let mut local = rng.substream(rng.stream().wrapping_mul(1 << 20).wrapping_add(c as u64));
        let count = CHUNK.min(mc_draws - c * CHUNK);
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            let y = product.sample(&mut local);
            let x = map.apply(&y);
            let xs: Vec<DVector<f64>> = (0..n).map(|t| x.rows(t * d, d).into_owned()).collect();
            let ys: Vec<DVector<f64>> = (0..n).map(|t| y.rows(t * d, d).into_owned()).collect();
            let xbar = xs.iter().fold(DVector::zeros(d), |a, v| a + v) / nf;
            let mean_err = (&xbar - &mu).norm_squared();
            let w2_emp = empirical_w2(&xs, &ys);
            let mut diff = DMatrix::<f64>::zeros(d, d);
            for (xt, yt) in xs.iter().zip(&ys) {
                let (xc, yc) = (xt - &mu, yt - &mu);
                diff.ger(1.0 / nf, &xc, &xc, 1.0);
                diff.ger(-1.0 / nf, &yc, &yc, 1.0);
            }
            rows.push((mean_err, xbar, w2_emp, diff.norm()));
        }
        rows
    });
    let samples: Vec<_> = per_chunk.into_iter().flatten().collect();
    let mean_errs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let (prop9, prop9_se) = mean_and_se(&mean_errs);

    let m = samples.len() as f64;
    let grand = samples.iter().fold(DVector::zeros(d), |a, s| a + &s.1) / m;
    let spread: Vec<f64> = samples
        .iter()
        .map(|s| (&s.1 - &grand).norm_squared() * m / (m - 1.0))
        .collect();
    let (prop10, prop10_se) = mean_and_se(&spread);

    let w2s: Vec<f64> = samples.iter().map(|s| s.2).collect();
    let (prop11, prop11_se) = mean_and_se(&w2s);
    let fro: Vec<f64> = samples.iter().map(|s| s.3).collect();
    let (cov_lhs, cov_se) = mean_and_se(&fro);

    let sq = tr.sqrt();
    let mut rows = vec![
        ConsequenceRow::new(
            "mean_error",
            replication,
            prop9,
            prop9_se,
            (eps + (tr / nf).sqrt()).powi(2),
        ),
        ConsequenceRow::new(
            "mean_variance",
            replication,
            prop10,
            prop10_se,
            (sq + eps).powi(2) / nf + (2.0 * sq + eps) * eps,
        ),
        ConsequenceRow::new("empirical_measure_w2", replication, prop11, prop11_se, eps),
        ConsequenceRow::new(
            "covariance_difference",
            replication,
            cov_lhs,
            cov_se,
            2.0 * sq * eps + eps * eps,
        ),
    ];
    for (i, f) in linear_maps.iter().enumerate() {
        if f.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: f.ncols(),
            });
        }
        let r = f.nrows();
        let mut block = DMatrix::zeros(r * n, d * n);
        for t in 0..n {
            block.view_mut((t * r, t * d), (r, d)).copy_from(f);
        }
        let zero = DVector::zeros(r * n);
        let pushed = chain.joint.push_forward(&block, &zero)?;
        let pushed_target = target.push_forward(f, &DVector::zeros(r))?.product(n);
        let lhs = bures_w2(&pushed, &pushed_target)?;
        let lip = crate::linalg::operator_norm(f)?;
        let mut row = ConsequenceRow::new(
            &format!("lipschitz_map_{i}"),
            replication,
            lhs,
            0.0,
            nf.sqrt() * lip * eps,
        );
        row.holds = policy.at_most(lhs, row.rhs);
        rows.push(row);
    }
    Ok(ConsequenceReport {
        epsilon: eps,
        joint_w2,
        rows,
    })
}

/// Both sides of the decomposition
/// `W2(π^⊗N, μ_N)² <= W2(π, μ0 K^{k_burn})² + Σ_{t<N} E W2(π, K^{k_thin}(X_t → ·))²`,
/// with each expectation estimated from `mc_draws` draws of `X_t`.
/// Returns `(lhs, rhs, standard_error_of_rhs)`.
pub fn decomposition_check(
    chain: &ChainLaw,
    target: &GaussianLaw,
    k_thin: u64,
    mc_draws: usize,
    rng: &StreamRng,
) -> Result<(f64, f64, f64)> {
    let n = chain.n;
    let lhs = bures_w2_squared(&chain.joint, &target.product(n))?;
    let first = bures_w2_squared(target, &chain.marginal(0)?)?;
    let ks = chain.chain.k_step(k_thin);
    // W2(π, N(μ + A(x - μ), Q))² = |A(x - μ)|² + W2(N(0, Σ), N(0, Q))².
    let noise_law = GaussianLaw::new(DVector::zeros(chain.dim()), ks.noise.clone())?;
    let centred = GaussianLaw::new(DVector::zeros(chain.dim()), target.covariance().clone())?;
    let cov_part = bures_w2_squared(&centred, &noise_law)?;
    let per_t = map_indexed(n.saturating_sub(1), |t| -> Result<(f64, f64)> {
        let marginal = chain.marginal(t)?;
        let mut local = rng.substream(rng.stream().wrapping_mul(1 << 20).wrapping_add(t as u64));
        let vals: Vec<f64> = (0..mc_draws)
            .map(|_| {
                let x = marginal.sample(&mut local);
                (&ks.drift * (x - target.mean())).norm_squared() + cov_part
            })
            .collect();
        Ok(mean_and_se(&vals))
    });
    let mut rhs = first;
    let mut var = 0.0;
    for r in per_t {
        let (m, se) = r?;
        rhs += m;
        var += se * se;
    }
    Ok((lhs, rhs, var.sqrt()))
}

/// Positions of an underdamped state; convenience for oracle comparisons.
pub fn positions(states: &[PhaseState]) -> Vec<DVector<f64>> {
    states.iter().map(|s| s.position.clone()).collect()
}

/// Whitened version of a Gaussian law under the preconditioner `m`: the law of `M^{1/2} X`.
pub fn preconditioned_law(target: &GaussianLaw, m: &SpdMatrix) -> Result<GaussianLaw> {
    target.push_forward(m.sqrt_matrix(), &DVector::zeros(target.dim()))
}

/// Exact eigenvalues of the ULA drift matrix `I - hP`.
pub fn drift_eigenvalues(target: &GaussianLaw, h: f64) -> Result<DVector<f64>> {
    let precision = target.spd_covariance()?.inverse()?;
    let (vals, _) = sym_eigen(precision.matrix(), &NumericPolicy::default())?;
    Ok(vals.map(|p| 1.0 - h * p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::budget::plan_ula_unpreconditioned;
    use crate::linalg::random_spd_with_spectrum;
    use crate::target::{gaussian_with_condition, make_gaussian_target};

    fn std1() -> GaussianLaw {
        GaussianLaw::standard(1)
    }

    #[test]
    fn zero_steps_is_identity() {
        let init = GaussianLaw::point_mass(DVector::from_vec(vec![3.0]));
        let law = exact_marginal_law(&std1(), 0.1, 0, &init).unwrap();
        assert_eq!(law.mean()[0], 3.0);
        assert_eq!(law.covariance()[(0, 0)], 0.0);
    }

    #[test]
    fn stationary_variance_of_ula() {
        let law = exact_marginal_law(&std1(), 0.1, 10_000, &std1()).unwrap();
        assert!((law.covariance()[(0, 0)] - 0.2 / 0.19).abs() < 1e-12);
        // Brute-force recursion v <- a² v + 2h.
        let mut v = 1.0;
        for _ in 0..37 {
            v = 0.81 * v + 0.2;
        }
        let law = exact_marginal_law(&std1(), 0.1, 37, &std1()).unwrap();
        assert!((law.covariance()[(0, 0)] - v).abs() < 1e-12);
    }

    #[test]
    fn bias_vanishes_with_step() {
        let init = GaussianLaw::point_mass(DVector::from_vec(vec![0.0]));
        let err = |h: f64| {
            let k = (5.0 / h).round() as u64;
            let v = exact_marginal_law(&std1(), h, k, &init).unwrap().covariance()[(0, 0)];
            (v - (1.0 - (-10.0f64).exp())).abs()
        };
        let (e2, e3) = (err(1e-2), err(1e-3));
        assert!(e3 < e2 / 5.0 && e3 > e2 / 20.0, "{e2} {e3}");
    }

    #[test]
    fn unstable_step_is_rejected() {
        let init = std1();
        assert!(matches!(
            exact_marginal_law(&std1(), 2.5, 3, &init),
            Err(Error::Instability { .. })
        ));
    }

    #[test]
    fn steps_below_machine_epsilon_stay_exact() {
        // 1 - h rounds to 1, yet 10^18 steps of size 10^-18 contract by e^-1.
        let init = GaussianLaw::point_mass(DVector::from_vec(vec![0.0]));
        let law = exact_marginal_law(&std1(), 1e-18, 1_000_000_000_000_000_000, &init).unwrap();
        let expected = 1.0 - (-2.0f64).exp();
        assert!((law.covariance()[(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn joint_marginals_match_marginal_law() {
        let t = gaussian_with_condition(2, 4.0, Some(3)).unwrap();
        let law = t.gaussian_law().unwrap().clone();
        let b = plan_ula_unpreconditioned(&t, 0.3, 4).unwrap();
        let mu0 = GaussianLaw::point_mass(DVector::from_vec(vec![1.0, -2.0]));
        let chain = exact_joint_law(&law, &b, &mu0).unwrap();
        for (t_idx, &k) in chain.step_indices.iter().enumerate() {
            let direct = exact_marginal_law(&law, b.h, k, &mu0).unwrap();
            let block = chain.marginal(t_idx).unwrap();
            assert!((direct.mean() - block.mean()).norm() < 1e-10);
            assert!((direct.covariance() - block.covariance()).norm() < 1e-10);
        }
    }

    #[test]
    fn single_output_reduces_to_marginal() {
        let t = make_gaussian_target(DVector::zeros(1), SpdMatrix::identity(1)).unwrap();
        let mut b = plan_ula_unpreconditioned(&t, 0.3, 1).unwrap();
        b.n = 1;
        let mu0 = GaussianLaw::point_mass(DVector::zeros(1));
        let chain = exact_joint_law(&std1(), &b, &mu0).unwrap();
        let m = exact_marginal_law(&std1(), b.h, b.k_burn, &mu0).unwrap();
        assert!((chain.joint.covariance()[(0, 0)] - m.covariance()[(0, 0)]).abs() < 1e-14);
    }

    #[test]
    fn long_thinning_gives_product_of_marginals() {
        let law = std1();
        let mu0 = GaussianLaw::point_mass(DVector::zeros(1));
        let chain = exact_joint_law_with(&law, 0.1, 100_000, 100_000, 5, &mu0, &NumericPolicy::default()).unwrap();
        let marginal_w2 = bures_w2(&law, &chain.marginal(0).unwrap()).unwrap();
        let joint = chain.w2_to_product(&law).unwrap();
        assert!((joint - 5f64.sqrt() * marginal_w2).abs() < 1e-9);
        assert!(chain.joint.covariance()[(0, 1)].abs() < 1e-300);
    }

    #[test]
    fn size_guard() {
        let law = GaussianLaw::standard(10);
        let mu0 = GaussianLaw::standard(10);
        let err = exact_joint_law_with(&law, 0.1, 1, 1, 401, &mu0, &NumericPolicy::default()).unwrap_err();
        assert!(matches!(
            err,
            Error::OracleTooLarge {
                size: 4010,
                limit: 4000
            }
        ));
    }

    #[test]
    fn skip_ahead_matches_iterated_recursion() {
        let mut rng = StreamRng::new(8, 0);
        let cov = random_spd_with_spectrum(&[0.5, 2.0, 3.0], &mut rng).unwrap();
        let law = GaussianLaw::from_spd(DVector::from_vec(vec![1.0, 0.0, -1.0]), &cov).unwrap();
        let h = 0.05;
        let chain = LinearGaussianChain::new(&law, h).unwrap();
        let ks = chain.k_step(25);
        let p = cov.inverse_matrix();
        let a = DMatrix::identity(3, 3) - p * h;
        let mut drift = DMatrix::identity(3, 3);
        let mut noise = DMatrix::zeros(3, 3);
        for _ in 0..25 {
            noise = &a * noise * &a + DMatrix::identity(3, 3) * (2.0 * h);
            drift = &a * drift;
        }
        assert!((ks.drift - drift).norm() < 1e-12);
        assert!((ks.noise - noise).norm() < 1e-12);
    }

    #[test]
    fn hungarian_finds_optimum_by_enumeration() {
        let mut rng = StreamRng::new(21, 0);
        for _ in 0..20 {
            let n = 5;
            let c = DMatrix::from_fn(n, n, |_, _| rng.uniform());
            let a = hungarian(&c);
            let cost: f64 = a.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum();
            let mut best = f64::INFINITY;
            let mut perm: Vec<usize> = (0..n).collect();
            permute(&mut perm, 0, &mut |p| {
                best = best.min(p.iter().enumerate().map(|(i, &j)| c[(i, j)]).sum());
            });
            assert!((cost - best).abs() < 1e-12);
        }
    }

    fn permute(p: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
        if k == p.len() {
            f(p);
            return;
        }
        for i in k..p.len() {
            p.swap(k, i);
            permute(p, k + 1, f);
            p.swap(k, i);
        }
    }

    #[test]
    fn iid_chain_attains_mean_error_bound() {
        let law = GaussianLaw::from_spd(
            DVector::from_vec(vec![0.5, 0.0]),
            &SpdMatrix::from_diagonal(&[1.0, 2.0]).unwrap(),
        )
        .unwrap();
        let mut chain = exact_joint_law_with(&law, 0.1, 0, 1, 4, &law, &NumericPolicy::default()).unwrap();
        chain.joint = law.product(4);
        let (err, var) = chain.mean_moments(&law);
        assert!((err - 3.0 / 4.0).abs() < 1e-14);
        assert!((var - 3.0 / 4.0).abs() < 1e-14);
        let report = aiid_consequence_checks(
            &chain,
            &law,
            1e-6,
            20_000,
            &[DMatrix::identity(2, 2)],
            0,
            &StreamRng::new(1, 2),
        )
        .unwrap();
        assert!(report.all_hold(), "{:?}", report.rows);
    }

    #[test]
    fn unverified_chain_is_refused() {
        let law = GaussianLaw::standard(1);
        let mu0 = GaussianLaw::point_mass(DVector::from_vec(vec![10.0]));
        let chain = exact_joint_law_with(&law, 0.1, 0, 1, 3, &mu0, &NumericPolicy::default()).unwrap();
        let err = aiid_consequence_checks(&chain, &law, 0.1, 10, &[], 0, &StreamRng::new(1, 2)).unwrap_err();
        assert!(matches!(err, Error::PreconditionUnverified(_)));
    }

    #[test]
    fn underdamped_oracle_matches_brute_force() {
        let law =
            GaussianLaw::from_spd(DVector::from_vec(vec![1.0]), &SpdMatrix::from_diagonal(&[0.5]).unwrap()).unwrap();
        let init = GaussianLaw::point_mass(DVector::from_vec(vec![-1.0]));
        let (h, gam, u) = (0.1, 2.0, 0.5);
        let c = UnderdampedCoefficients::new(h, gam, u).unwrap();
        let p = 2.0;
        // Brute-force mean/covariance of (x - μ, v).
        let f = [
            [1.0 - c.position_grad * p, c.position_velocity],
            [-c.velocity_grad * p, c.velocity_decay],
        ];
        let q = [
            [c.var_position, c.cov_position_velocity],
            [c.cov_position_velocity, c.var_velocity],
        ];
        let mut m = [-2.0, 0.0];
        let mut s = [[0.0; 2]; 2];
        for _ in 0..13 {
            m = [f[0][0] * m[0] + f[0][1] * m[1], f[1][0] * m[0] + f[1][1] * m[1]];
            let mut fs = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    fs[i][j] = f[i][0] * s[0][j] + f[i][1] * s[1][j];
                }
            }
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = fs[i][0] * f[j][0] + fs[i][1] * f[j][1] + q[i][j];
                }
            }
            s = next;
        }
        let out = underdamped_position_law(&law, h, gam, u, 13, &init).unwrap();
        assert!((out.mean()[0] - (1.0 + m[0])).abs() < 1e-12);
        assert!((out.covariance()[(0, 0)] - s[0][0]).abs() < 1e-12);
    }
}
