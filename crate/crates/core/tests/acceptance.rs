//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every criterion is attempted even if
//! an earlier one fails; the process exits non-zero on any failure.

use nalgebra::{DMatrix, DVector};
use precond_langevin::budget::LearnSpec;
use precond_langevin::budget::{certified_bracket, plan_ula_unpreconditioned, PreconditionerKind};
use precond_langevin::estimators::{certify, SteppingMode};
use precond_langevin::experiments::{fitted_exponent, run_complexity_comparison, run_thm5_frequency, ExperimentSpec};
use precond_langevin::flops;
use precond_langevin::kernels::{KernelConfig, KernelFamily};
use precond_langevin::linalg::{random_orthogonal, random_spd_with_spectrum, spd_sqrt, spectral_function};
use precond_langevin::oracle::{aiid_consequence_checks, contraction_check, exact_joint_law};
use precond_langevin::rng::StreamRng;
use precond_langevin::sampler::{
    run_preconditioned, run_thinned, total_flops_forecast, ForecastMode, InitialLaw, PreconditionedOptions, Stepping,
};
use precond_langevin::target::{
    condition_number_transfer, gaussian_with_condition, gradient_fd_error, logcosh_product, make_gaussian_target,
    ostrowski_bounds, preconditioned_constants,
};
use precond_langevin::{GaussianLaw, SpdMatrix, Target};
use std::panic;
use std::time::Instant;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn log_uniform(rng: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.uniform() * (hi.ln() - lo.ln())).exp()
}

fn random_spd(d: usize, lo: f64, hi: f64, rng: &mut StreamRng) -> SpdMatrix {
    let eig: Vec<f64> = (0..d).map(|_| log_uniform(rng, lo, hi)).collect();
    random_spd_with_spectrum(&eig, rng).unwrap()
}

fn aiid_soundness() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for d in 1..=3usize {
        for kappa in [1.0, 4.0, 25.0] {
            if d == 1 && kappa != 1.0 {
                continue;
            }
            let t = gaussian_with_condition(d, kappa, Some(100 + d as u64)).map_err(err)?;
            let law = t.gaussian_law().unwrap();
            let ceiling = (3.0 * t.trace_sigma_lower()).sqrt();
            let start = GaussianLaw::point_mass(t.mode().unwrap().clone());
            for frac in [0.01, 0.1, 0.5, 1.0] {
                let eps = frac * ceiling;
                for n in [5usize, 20, 50] {
                    let budget = plan_ula_unpreconditioned(&t, eps, n).map_err(err)?;
                    let chain = exact_joint_law(law, &budget, &start).map_err(err)?;
                    let w2 = chain.w2_to_product(law).map_err(err)?;
                    let bound = (n as f64).sqrt() * eps;
                    ensure(w2 <= bound + 1e-8, || {
                        format!("d={d} kappa={kappa} eps={eps:e} N={n}: W2 = {w2:e} > sqrt(N) eps = {bound:e}")
                    })?;
                    worst = worst.max(w2 / bound);
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} cases, max W2 / (sqrt(N) eps) = {worst:.4}"))
}

fn contraction_literal() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    for i in 0..50u64 {
        let mut rng = StreamRng::new(2024, i);
        let d = 1 + (rng.next_u64() % 5) as usize;
        let cov = random_spd(d, 0.05, 20.0, &mut rng);
        let mean = rng.normal_vec(d);
        let law = GaussianLaw::from_spd(mean.clone(), &cov).map_err(err)?;
        let (m, l) = (1.0 / cov.lambda_max(), 1.0 / cov.lambda_min());
        let h_max = 2.0 / (l + m);
        let h = if i % 10 == 0 {
            h_max
        } else {
            h_max * rng.uniform().max(1e-6)
        };
        let x0 = &mean + 3.0 * rng.normal_vec(d);
        let k = 1 + rng.next_u64() % 300;
        let b = 33.0 / 20.0 * (l / m) * (d as f64 * h).sqrt();
        let (lhs, rhs) = contraction_check(&law, h, &x0, k, (1.0, m * h, b)).map_err(err)?;
        ensure(lhs <= rhs * (1.0 + 1e-12) + 1e-12, || {
            format!("tuple {i}: d={d} h={h:e} k={k}: {lhs:e} > {rhs:e}")
        })?;
        worst = worst.max(lhs / rhs);
    }
    Ok(format!("50 tuples, zero violations, max lhs/rhs = {worst:.4}"))
}

fn frequency() -> Outcome {
    let mut lines = Vec::new();
    for (mode, seed) in [(ForecastMode::Cov, 5u64), (ForecastMode::Fisher, 6)] {
        let mut spec = ExperimentSpec::new(mode.label(), "gaussian:d=2,kappa=4".parse().map_err(err)?);
        spec.mode = mode;
        spec.delta = 0.25;
        spec.tol = 0.5;
        spec.repetitions = 200;
        spec.seed = seed;
        let r = run_thm5_frequency(&spec).map_err(err)?;
        let line = format!(
            "{}: {}/{} certified, 99% interval [{:.3}, {:.3}] vs 1 - delta = {:.2}, {} iterations per learn phase",
            mode.label(),
            r.successes,
            r.repetitions,
            r.interval.0,
            r.interval.1,
            r.required,
            r.planned_iterations
        );
        ensure(r.passed, || {
            format!("{line}; Sigma^-1 identity violations = {}", r.identity_violations)
        })?;
        lines.push(line);
    }
    Ok(lines.join("; "))
}

fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

fn property_suites() -> Outcome {
    let slack = 1e-9;
    for i in 0..1000u64 {
        let mut rng = StreamRng::new(4004, i);
        let d = 2 + (i % 7) as usize;
        let cov = random_spd(d, 0.01, 10.0, &mut rng);
        let t = make_gaussian_target(DVector::zeros(d), cov.clone()).map_err(err)?;

        // Ostrowski brackets contain the exact constants of M1.
        let m1 = random_spd(d, 0.1, 10.0, &mut rng);
        let m2 = random_spd(d, 0.1, 10.0, &mut rng);
        let c1 = preconditioned_constants(&t, &m1).map_err(err)?;
        let c2 = preconditioned_constants(&t, &m2).map_err(err)?;
        let (lo, hi) = ostrowski_bounds(&m1, &m2, &c2).map_err(err)?;
        ensure(lo <= c1.m_m * (1.0 + slack) && c1.l_m <= hi * (1.0 + slack), || {
            format!(
                "instance {i}: Ostrowski bracket [{lo:e}, {hi:e}] misses ({:e}, {:e})",
                c1.m_m, c1.l_m
            )
        })?;
        let kappa_bound = condition_number_transfer(&m1, &m2, c2.kappa_m).map_err(err)?;
        ensure(c1.kappa_m <= kappa_bound * (1.0 + slack), || {
            format!(
                "instance {i}: kappa {:e} exceeds transfer bound {kappa_bound:e}",
                c1.kappa_m
            )
        })?;

        // Certified estimates, built by perturbing the reference eigenvalues,
        // stay inside the certified bracket.
        let tol = 0.05 + 0.85 * rng.uniform();
        let spread = DVector::from_iterator(d, (0..d).map(|_| 1.0 + tol * (2.0 * rng.uniform() - 1.0)));
        let basis = random_orthogonal(d, &mut rng);
        let perturb = spectral_function(&spread, &basis, |v| v);
        for kind in [PreconditionerKind::Covariance, PreconditionerKind::Fisher] {
            let reference = match kind {
                PreconditionerKind::Covariance => cov.clone(),
                PreconditionerKind::Fisher => t.analytic_fisher().unwrap().clone(),
            };
            let root = reference.sqrt_matrix();
            let estimate = SpdMatrix::new(root * &perturb * root).map_err(err)?;
            ensure(certify(&estimate, &reference, tol).map_err(err)?.certified, || {
                format!("instance {i}: perturbed estimate not certified")
            })?;
            let (m_ref, m_hat) = match kind {
                PreconditionerKind::Covariance => (cov.inverse().map_err(err)?, estimate.inverse().map_err(err)?),
                PreconditionerKind::Fisher => (reference.clone(), estimate.clone()),
            };
            let c_ref = preconditioned_constants(&t, &m_ref).map_err(err)?;
            let c_hat = preconditioned_constants(&t, &m_hat).map_err(err)?;
            let (bracket, _, _) = certified_bracket(kind, tol, &c_ref).map_err(err)?;
            ensure(
                bracket.m_m <= c_hat.m_m * (1.0 + slack)
                    && c_hat.l_m <= bracket.l_m * (1.0 + slack)
                    && c_hat.kappa_m <= bracket.kappa_m * (1.0 + slack),
                || format!("instance {i} ({}): bracket {bracket:?} misses {c_hat:?}", kind.label()),
            )?;
        }

        // Scale invariance of the condition number.
        let c = log_uniform(&mut rng, 1e-3, 1e3);
        let scaled = m2.scaled(c).map_err(err)?;
        let transferred = condition_number_transfer(&scaled, &m2, c2.kappa_m).map_err(err)?;
        let direct = preconditioned_constants(&t, &scaled).map_err(err)?.kappa_m;
        ensure(
            relative(transferred, c2.kappa_m) < 1e-9 && relative(direct, c2.kappa_m) < 1e-9,
            || {
                format!(
                    "instance {i}: kappa under scaling by {c:e}: {transferred:e}, {direct:e} vs {:e}",
                    c2.kappa_m
                )
            },
        )?;
    }
    Ok("1000 instances x (Ostrowski, certified brackets for both kinds, scale invariance), zero violations".into())
}

fn consequence_bounds() -> Outcome {
    let t = gaussian_with_condition(2, 4.0, Some(55)).map_err(err)?;
    let law = t.gaussian_law().unwrap();
    let eps = 0.5;
    let budget = plan_ula_unpreconditioned(&t, eps, 10).map_err(err)?;
    let start = GaussianLaw::point_mass(t.mode().unwrap().clone());
    let chain = exact_joint_law(law, &budget, &start).map_err(err)?;
    let maps = vec![
        DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        DMatrix::from_row_slice(2, 2, &[2.0, -1.0, 0.5, 3.0]),
    ];
    let mut worst = f64::INFINITY;
    let mut rows = 0;
    for rep in 0..20u64 {
        let rng = StreamRng::new(777, rep);
        let report = aiid_consequence_checks(&chain, law, eps, 100_000, &maps, rep, &rng).map_err(err)?;
        for row in &report.rows {
            ensure(row.holds, || {
                format!(
                    "replication {rep}, {}: lhs {:e} (se {:e}) vs rhs {:e}",
                    row.check, row.lhs, row.standard_error, row.rhs
                )
            })?;
            worst = worst.min(row.margin);
            rows += 1;
        }
    }
    Ok(format!(
        "20 replications, {rows} checks hold, smallest margin {worst:.3e}"
    ))
}

fn scaled_gaussian(d: usize, kappa: f64, scale: f64) -> Result<Target, String> {
    let base = gaussian_with_condition(d, kappa, Some(9)).map_err(err)?;
    let cov = base.analytic_covariance().unwrap().scaled(scale).map_err(err)?;
    make_gaussian_target(DVector::zeros(d), cov).map_err(err)
}

fn complexity_scaling() -> Outcome {
    let learn = LearnSpec::new(PreconditionerKind::Covariance, 0.25, 0.5);
    let total = |t: &Target, family, eps| -> Result<f64, String> {
        let init = InitialLaw::at_mode(t).map_err(err)?;
        Ok(
            total_flops_forecast(t, ForecastMode::Unpre, family, eps, 10, &learn, &init)
                .map_err(err)?
                .total,
        )
    };
    // A large tr Σ makes the burn-in and thinning logarithms nearly flat in
    // eps, so the fit sees the polynomial order rather than the log factors.
    let (d, scale) = (4, 1e4);
    let kappas = [10.0, 30.0, 100.0];
    let mut ys = Vec::new();
    for &k in &kappas {
        ys.push(total(&scaled_gaussian(d, k, scale)?, KernelFamily::Ula, 0.1)?);
    }
    let kappa_exp = fitted_exponent(&kappas, &ys).map_err(err)?;

    let t = scaled_gaussian(d, 10.0, scale)?;
    let epss = [0.4, 0.2, 0.1];
    let inv: Vec<f64> = epss.iter().map(|e| 1.0 / e).collect();
    let ula: Vec<f64> = epss
        .iter()
        .map(|&e| total(&t, KernelFamily::Ula, e))
        .collect::<Result<_, _>>()?;
    let eps_exp = fitted_exponent(&inv, &ula).map_err(err)?;
    let und: Vec<f64> = epss
        .iter()
        .map(|&e| total(&t, KernelFamily::Underdamped, e))
        .collect::<Result<_, _>>()?;
    let und_exp = fitted_exponent(&inv, &und).map_err(err)?;

    let summary = format!(
        "kappa exponent {kappa_exp:.3}, ULA 1/eps exponent {eps_exp:.3}, underdamped 1/eps exponent {und_exp:.3}"
    );
    ensure((1.8..=2.2).contains(&kappa_exp), || summary.clone())?;
    ensure((1.8..=2.2).contains(&eps_exp), || summary.clone())?;
    ensure((0.8..=1.2).contains(&und_exp), || summary.clone())?;
    Ok(summary)
}

fn amortization_crossover() -> Outcome {
    let mut spec = ExperimentSpec::new("crossover", "gaussian:d=20,kappa=100,rotation=3".parse().map_err(err)?);
    spec.eps = 1e-4;
    let grid: Vec<usize> = (4..=20).map(|p| 1usize << p).collect();
    let report = run_complexity_comparison(&spec, &grid).map_err(err)?;
    let t = spec.target.build().map_err(err)?;
    let (d, g) = (t.dim(), t.gradient_cost());
    ensure(g == 2 * (d as u64).pow(2), || format!("gradient cost {g} != 2 d^2"))?;
    let n_star = report.crossover_cov.ok_or("no crossover N* in the sweep")?;

    // Two-term decomposition: the learning term is independent of N and both
    // terms match an independent recount from the emitted budgets.
    let learn0 = report.rows[0].cov.learn_total;
    for row in &report.rows {
        let f = &row.cov;
        ensure(f.total == f.learn_total + f.sample_total, || {
            format!("N={}: total != learn + sample", row.n)
        })?;
        ensure(f.learn_total == learn0, || {
            format!("N={}: learning term depends on N", row.n)
        })?;
        let lb = f.learn_budget.as_ref().ok_or("missing learning budget")?;
        let nl = lb.n as f64;
        let df = d as f64;
        let learn = lb.total_steps_f64() * (g as f64 + 4.0 * df)
            + nl * (2.0 * df + 2.0 * df * df)
            + df.powi(3)
            + flops::cholesky_flops(d) as f64;
        let sample =
            f.sample_budget.total_steps_f64() * (g as f64 + 4.0 * df + 4.0 * df * df) + row.n as f64 * 2.0 * df * df;
        ensure(
            relative(f.learn_total, learn) < 1e-12 && relative(f.sample_total, sample) < 1e-12,
            || {
                format!(
                    "N={}: ledger split ({:e}, {:e}) vs recount ({learn:e}, {sample:e})",
                    row.n, f.learn_total, f.sample_total
                )
            },
        )?;
    }
    let evidence = report
        .evidence
        .as_ref()
        .ok_or_else(|| format!("no oracle evidence: {}", report.evidence_note))?;
    ensure(evidence.holds, || format!("oracle check failed at N={}", evidence.n))?;
    Ok(format!(
        "N* = {n_star} (cov), fisher N* = {:?}; learn term {learn0:.3e} FLOPs; oracle W2 {:.3e} <= {:.3e} at N = {}",
        report.crossover_fisher, evidence.joint_w2, evidence.bound, evidence.n
    ))
}

fn determinism_and_numerics() -> Outcome {
    let dir = tempfile::tempdir().map_err(err)?;
    let t = gaussian_with_condition(3, 25.0, Some(8)).map_err(err)?;
    let init = InitialLaw::at_mode(&t).map_err(err)?;
    let budget = plan_ula_unpreconditioned(&t, 0.5, 20).map_err(err)?;
    let mut files = Vec::new();
    for (i, stepping) in [Stepping::Iterate, Stepping::Iterate, Stepping::Exact, Stepping::Exact]
        .into_iter()
        .enumerate()
    {
        let e = run_thinned(
            &KernelConfig::ula(budget.h),
            &t,
            &init,
            &budget,
            &mut StreamRng::new(42, 1),
            stepping,
        )
        .map_err(err)?;
        let path = dir.path().join(format!("thinned{i}.csv"));
        e.write_csv(&path).map_err(err)?;
        files.push(std::fs::read(&path).map_err(err)?);
    }
    ensure(files[0] == files[1] && files[2] == files[3], || {
        "repeated thinned runs differ".into()
    })?;
    let spec = LearnSpec::new(PreconditionerKind::Covariance, 0.25, 0.5);
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|i| -> Result<Vec<u8>, String> {
            let run =
                run_preconditioned(&t, &spec, 0.5, 10, &init, 42, &PreconditionedOptions::default()).map_err(err)?;
            ensure(run.learn_ensemble.meta.stepping == SteppingMode::Exact, || {
                "learning phase not exact".into()
            })?;
            let path = dir.path().join(format!("pre{i}.csv"));
            run.ensemble.write_csv(&path).map_err(err)?;
            std::fs::read(&path).map_err(err)
        })
        .collect::<Result<_, _>>()?;
    ensure(runs[0] == runs[1], || "repeated preconditioned runs differ".into())?;

    let mut rng = StreamRng::new(8, 8);
    let targets = [
        gaussian_with_condition(5, 25.0, Some(3)).map_err(err)?,
        gaussian_with_condition(1, 1.0, None).map_err(err)?,
        logcosh_product(&[1.0, 0.5, 0.1, 3.0]).map_err(err)?,
    ];
    let mut fd_worst: f64 = 0.0;
    for t in &targets {
        let pts: Vec<DVector<f64>> = (0..20).map(|_| 2.0 * rng.normal_vec(t.dim())).collect();
        fd_worst = fd_worst.max(gradient_fd_error(t, &pts));
    }
    ensure(fd_worst <= 1e-5, || {
        format!("gradient/finite-difference gap {fd_worst:e}")
    })?;

    let mut sqrt_worst: f64 = 0.0;
    for i in 0..200u64 {
        let mut rng = StreamRng::new(9, i);
        let d = 1 + (i % 12) as usize;
        let a = random_spd(d, 1e-4, 1e4, &mut rng);
        let s = spd_sqrt(&a).map_err(err)?;
        let gap = (s.matrix() * s.matrix() - a.matrix()).norm() / a.matrix().norm();
        sqrt_worst = sqrt_worst.max(gap);
    }
    ensure(sqrt_worst <= 1e-10, || {
        format!("spd_sqrt round-trip error {sqrt_worst:e}")
    })?;
    Ok(format!(
        "byte-identical reruns; max gradient/FD gap {fd_worst:.2e}; max spd_sqrt round-trip error {sqrt_worst:.2e}"
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("AIID soundness (exact oracle)", aiid_soundness),
        ("contraction literal check", contraction_literal),
        ("learning certification frequency", frequency),
        ("preconditioner constant property suites", property_suites),
        ("AIID consequence bounds", consequence_bounds),
        ("complexity scaling exponents", complexity_scaling),
        ("amortization crossover", amortization_crossover),
        ("determinism and numerics", determinism_and_numerics),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(run).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {id} PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failures += 1;
                println!("criterion {id} FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    if failures > 0 {
        std::process::exit(1);
    }
}
