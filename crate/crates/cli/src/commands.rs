//! The five subcommands. Each returns the text printed on stdout and writes
//! its artifacts under the configured output directory.

use crate::config::Config;
use nalgebra::DMatrix;
use precond_langevin::budget::{
    plan_thinned, plan_ula_unpreconditioned_from, plan_underdamped_unpreconditioned, Budget,
};
use precond_langevin::estimators::{estimate_preconditioner, export_estimate};
use precond_langevin::experiments::{run_complexity_comparison, run_thm5_frequency, ExperimentSpec};
use precond_langevin::kernels::{contraction_params_ula, KernelConfig, KernelFamily, UnderdampedParams};
use precond_langevin::oracle::{aiid_consequence_checks, exact_joint_law};
use precond_langevin::rng::{streams, StreamRng};
use precond_langevin::sampler::{
    certificate_for, run_learning, run_preconditioned, run_thinned_with, total_flops_forecast, write_ensemble,
    FlopForecast, ForecastMode, InitialLaw, PreconditionedOptions,
};
use precond_langevin::{Error, Target};
use serde_json::json;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const VERIFICATION: i32 = 4;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: exit::CONFIG,
            message: message.into(),
        }
    }

    fn verification(message: impl Into<String>) -> Self {
        Self {
            code: exit::VERIFICATION,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_admissibility() {
            exit::CONFIG
        } else {
            exit::NUMERICAL
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::config(e.to_string())
    }
}

type CmdResult = Result<String, CliError>;

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text)?;
    Ok(())
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    write_text(dir, name, &(text + "\n"))
}

fn header(config: &Config) -> String {
    let s = &config.sampler;
    format!(
        "target   {}\nmode     {}\nkernel   {:?}\nseed     {}\n",
        config.target,
        s.mode.label(),
        s.family,
        config.seed
    )
}

/// Unpreconditioned schedule from the planner, with manual overrides applied.
fn unpre_budget(config: &Config, target: &Target, init: &InitialLaw) -> Result<Budget, CliError> {
    let s = &config.sampler;
    let w2 = init.w2_to_target(target)?;
    let over = &config.budget;
    let mut budget = match (s.family, over.h) {
        (KernelFamily::Ula, None) => plan_ula_unpreconditioned_from(target, s.eps, s.n, w2)?,
        (KernelFamily::Ula, Some(h)) => {
            let cp = contraction_params_ula(target, h)?;
            let mut b = plan_thinned(&cp, s.eps, s.n, target.trace_sigma_upper(), w2)?;
            b.provenance.notes.push(format!("step size h = {h:e} set by override"));
            b
        }
        (KernelFamily::Underdamped, None) => {
            plan_underdamped_unpreconditioned(target, s.eps, s.n, init.mode_distance(target)?, w2)?
        }
        (KernelFamily::Underdamped, Some(_)) => {
            return Err(CliError::config("budget.h overrides apply to the ULA kernel only"));
        }
    };
    if let Some(k) = over.k_burn {
        budget
            .provenance
            .notes
            .push(format!("k_burn = {k} set by override (planned {})", budget.k_burn));
        budget.k_burn = k;
    }
    if let Some(k) = over.k_thin {
        budget
            .provenance
            .notes
            .push(format!("k_thin = {k} set by override (planned {})", budget.k_thin));
        budget.k_thin = k.max(1);
    }
    Ok(budget)
}

fn forecast_lines(f: &FlopForecast) -> String {
    format!(
        "forecast_flops  learn={:e} sample={:e} total={:e}\nasymptotic      {} = {:e}\n",
        f.learn_total, f.sample_total, f.total, f.asymptotic, f.asymptotic_value
    )
}

pub fn plan(config: &Config) -> CmdResult {
    let target = config.target.build()?;
    let init = InitialLaw::at_mode(&target)?;
    let s = &config.sampler;
    let mut text = header(config);
    let forecast = if s.mode == ForecastMode::Unpre && !config.budget.is_empty() {
        let budget = unpre_budget(config, &target, &init)?;
        let per_step = KernelConfig::ula(budget.h).step_flops(target.dim(), target.gradient_cost()) as f64;
        let total = budget.total_steps_f64() * per_step;
        text += "\n[sampling phase]\n";
        text += &budget.report();
        text += &format!("forecast_flops  learn=0e0 sample={total:e} total={total:e}\n");
        json!({ "schema_version": 1, "command": "plan", "budget": budget, "forecast_total": total })
    } else {
        if !config.budget.is_empty() {
            return Err(CliError::config("budget overrides apply to mode unpre only"));
        }
        let learn = config.learn_spec(
            s.mode
                .kind()
                .unwrap_or(precond_langevin::budget::PreconditionerKind::Covariance),
        );
        let f = total_flops_forecast(&target, s.mode, s.family, s.eps, s.n, &learn, &init)?;
        if let Some(lb) = &f.learn_budget {
            text += "\n[learning phase]\n";
            text += &lb.report();
        }
        text += "\n[sampling phase]\n";
        text += &f.sample_budget.report();
        text += "\n";
        text += &forecast_lines(&f);
        json!({ "schema_version": 1, "command": "plan", "budget": f.sample_budget, "forecast": f })
    };
    write_text(&config.out, "plan.txt", &text)?;
    write_json(&config.out, "plan.json", &forecast)?;
    Ok(text)
}

pub fn run(config: &Config) -> CmdResult {
    let target = config.target.build()?;
    let init = InitialLaw::at_mode(&target)?;
    let s = &config.sampler;
    let mut text = header(config);
    fs::create_dir_all(&config.out)?;
    let csv_path = config.out.join("ensemble.csv");
    match s.mode.kind() {
        None => {
            let budget = unpre_budget(config, &target, &init)?;
            let kernel = match s.family {
                KernelFamily::Ula => KernelConfig::ula(budget.h),
                KernelFamily::Underdamped => KernelConfig::underdamped(
                    budget.h,
                    UnderdampedParams {
                        d_init: init.mode_distance(&target)?,
                        ..Default::default()
                    },
                ),
            };
            let mut rng = StreamRng::new(config.seed, streams::SAMPLE);
            let ensemble = run_thinned_with(&kernel, &target, &init, &budget, &mut rng, s.stepping, &config.policy)?;
            let sidecar = json!({
                "schema_version": 1,
                "command": "run",
                "target": config.target.to_string(),
                "mode": s.mode,
                "meta": ensemble.meta,
            });
            write_ensemble(&csv_path, &ensemble, &sidecar)?;
            let _ = writeln!(text, "states   {} x {}", ensemble.len(), ensemble.dim());
            let _ = writeln!(text, "steps    {}", budget.total_steps());
            let _ = writeln!(text, "flops    {}", ensemble.meta.ledger.total());
        }
        Some(kind) => {
            let options = PreconditionedOptions {
                family: Some(s.family),
                stepping: s.stepping,
                policy: config.policy,
                ..Default::default()
            };
            let spec = config.learn_spec(kind);
            let run = run_preconditioned(&target, &spec, s.eps, s.n, &init, config.seed, &options)?;
            let sidecar = json!({
                "schema_version": 1,
                "command": "run",
                "target": config.target.to_string(),
                "mode": s.mode,
                "meta": run.ensemble.meta,
                "certificate": run.certificate,
                "learn_budget": run.learn_budget,
                "sample_budget": run.sample_budget,
                "learn_ledger": run.learn_ledger,
                "sample_ledger": run.sample_ledger,
                "preconditioner": run.preconditioner.matrix().row_iter().map(|r| r.iter().copied().collect::<Vec<f64>>()).collect::<Vec<_>>(),
            });
            write_ensemble(&csv_path, &run.ensemble, &sidecar)?;
            let _ = writeln!(text, "states   {} x {}", run.ensemble.len(), run.ensemble.dim());
            if let Some(c) = &run.certificate {
                let _ = writeln!(
                    text,
                    "certificate  relative_error={:e} tol={} certified={}",
                    c.relative_error, c.tol, c.certified
                );
            }
            let _ = writeln!(
                text,
                "learn    steps={} flops={}",
                run.learn_budget.total_steps(),
                run.learn_ledger.total()
            );
            let _ = writeln!(
                text,
                "sample   steps={} flops={}",
                run.sample_budget.total_steps(),
                run.sample_ledger.total()
            );
        }
    }
    let _ = writeln!(text, "wrote    {}", csv_path.display());
    Ok(text)
}

fn experiment_spec(config: &Config, name: &str) -> ExperimentSpec {
    let s = &config.sampler;
    ExperimentSpec {
        name: name.to_string(),
        target: config.target.clone(),
        mode: s.mode,
        family: s.family,
        eps: s.eps,
        n: s.n,
        delta: config.learn.delta,
        tol: config.learn.tol,
        repetitions: config.learn.repetitions,
        seed: config.seed,
        output_dir: Some(config.out.clone()),
    }
}

pub fn learn(config: &Config) -> CmdResult {
    let s = &config.sampler;
    let kind = s
        .mode
        .kind()
        .ok_or_else(|| CliError::config("learn needs sampler.mode = cov or fisher"))?;
    if config.learn.repetitions > 1 {
        let report = run_thm5_frequency(&experiment_spec(config, "frequency"))?;
        let text = report.summary();
        if !report.passed {
            return Err(CliError::verification(text));
        }
        return Ok(text);
    }
    let target = config.target.build()?;
    let init = InitialLaw::at_mode(&target)?;
    let spec = config.learn_spec(kind);
    let mut rng = StreamRng::new(config.seed, streams::LEARN);
    let (ensemble, budget) = run_learning(&target, &spec, s.family, &init, &mut rng, s.stepping, &config.policy)?;
    let (m, estimate) = estimate_preconditioner(kind, ensemble.states(), &target, &config.policy)?;
    let certificate = certificate_for(&target, kind, &estimate, spec.tol)?;
    fs::create_dir_all(&config.out)?;
    ensemble.write_csv(&config.out.join("learn_ensemble.csv"))?;
    let sidecar = json!({
        "schema_version": 1,
        "command": "learn",
        "target": config.target.to_string(),
        "kind": kind,
        "budget": budget,
        "meta": ensemble.meta,
        "certificate": certificate,
    });
    let path = config.out.join("preconditioner.txt");
    export_estimate(&path, &m, &sidecar)?;
    let mut text = header(config);
    text += "\n[learning phase]\n";
    text += &budget.report();
    match certificate {
        Some(c) => {
            let _ = writeln!(
                text,
                "certificate  relative_error={:e} tol={} certified={}",
                c.relative_error, c.tol, c.certified
            );
        }
        None => text += "certificate  unavailable (no analytic reference)\n",
    }
    let _ = writeln!(text, "wrote    {}", path.display());
    Ok(text)
}

fn linear_maps(config: &Config, d: usize) -> Result<Vec<DMatrix<f64>>, CliError> {
    if config.verify.linear_maps.is_empty() {
        return Ok(vec![DMatrix::identity(d, d)]);
    }
    config
        .verify
        .linear_maps
        .iter()
        .enumerate()
        .map(|(i, rows)| {
            let cols = rows.first().map(|r| r.len()).unwrap_or(0);
            if cols != d || rows.iter().any(|r| r.len() != cols) {
                return Err(CliError::config(format!(
                    "verify.linear_maps[{i}] must be a list of rows of length {d}"
                )));
            }
            Ok(DMatrix::from_row_iterator(
                rows.len(),
                cols,
                rows.iter().flatten().copied(),
            ))
        })
        .collect()
}

pub fn verify(config: &Config) -> CmdResult {
    let target = config.target.build()?;
    let law = target
        .gaussian_law()
        .ok_or_else(|| CliError::config("oracle unsupported: verify needs a Gaussian target"))?;
    let s = &config.sampler;
    if s.mode != ForecastMode::Unpre || s.family != KernelFamily::Ula {
        return Err(CliError::config(
            "oracle unsupported: verify covers the unpreconditioned ULA chain (mode unpre, family ula)",
        ));
    }
    let informational = !config.budget.is_empty();
    let init = InitialLaw::at_mode(&target)?;
    let budget = unpre_budget(config, &target, &init)?;
    let chain = exact_joint_law(law, &budget, &init.law)?;
    let w2 = chain.w2_to_product(law)?;
    let bound = (s.n as f64).sqrt() * s.eps;
    let mut text = header(config);
    text += "\n[schedule]\n";
    text += &budget.report();
    text += "\n[oracle]\n";
    let _ = writeln!(
        text,
        "joint_w2  {w2:e} <= sqrt(N) eps = {bound:e}  margin {:e}  {}",
        bound - w2,
        if w2 <= bound + 1e-8 { "ok" } else { "VIOLATED" }
    );
    fs::create_dir_all(&config.out)?;
    if informational {
        text += "mode      informational (schedule overridden; the planned bounds are sufficient, not necessary)\n";
    }
    if w2 > bound + 1e-8 {
        write_text(&config.out, "verify.txt", &text)?;
        if informational {
            return Ok(text);
        }
        return Err(CliError::verification(text));
    }
    let maps = linear_maps(config, law.dim())?;
    let rng = StreamRng::new(config.seed, streams::MONTE_CARLO);
    let report = aiid_consequence_checks(
        &chain,
        law,
        s.eps,
        config.verify.mc_draws,
        &maps,
        config.verify.replication,
        &rng,
    )?;
    report.write_csv(&config.out.join("verify.csv"))?;
    for r in &report.rows {
        let _ = writeln!(
            text,
            "{:<22} lhs {:e} (se {:e}) <= rhs {:e}  margin {:e}  {}",
            r.check,
            r.lhs,
            r.standard_error,
            r.rhs,
            r.margin,
            if r.holds { "ok" } else { "VIOLATED" }
        );
    }
    let passed = report.all_hold();
    let _ = writeln!(text, "result    {}", if passed { "PASS" } else { "FAIL" });
    write_text(&config.out, "verify.txt", &text)?;
    if passed || informational {
        Ok(text)
    } else {
        Err(CliError::verification(text))
    }
}

pub fn compare(config: &Config) -> CmdResult {
    let spec = experiment_spec(config, &config.compare.name);
    let report = run_complexity_comparison(&spec, &config.compare.n_grid)?;
    let text = report.summary();
    if report.evidence.as_ref().is_some_and(|e| !e.holds) {
        return Err(CliError::verification(text));
    }
    Ok(text)
}
