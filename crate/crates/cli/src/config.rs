//! Run configuration: a TOML document with one section per stage.
//!
//! The config file, `--set key=value` overrides and dedicated flags are all
//! merged into one TOML table before a single typed, `deny_unknown_fields`
//! deserialization, so every source goes through the same validation.

use precond_langevin::budget::{LearnSpec, PreconditionerKind};
use precond_langevin::experiments::TargetSpec;
use precond_langevin::kernels::KernelFamily;
use precond_langevin::sampler::{ForecastMode, Stepping};
use precond_langevin::NumericPolicy;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use toml::{Table, Value};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub threads: Option<usize>,
    pub target: TargetSpec,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub learn: LearnSection,
    #[serde(default)]
    pub budget: BudgetOverrides,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub compare: CompareSection,
    #[serde(default)]
    pub policy: NumericPolicy,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerSection {
    pub mode: ForecastMode,
    pub family: KernelFamily,
    pub eps: f64,
    pub n: usize,
    pub stepping: Stepping,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            mode: ForecastMode::Unpre,
            family: KernelFamily::Ula,
            eps: 0.1,
            n: 10,
            stepping: Stepping::Auto,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnSection {
    pub delta: f64,
    pub tol: f64,
    pub lower_bound: Option<f64>,
    pub k_constant: Option<f64>,
    pub c_absolute: f64,
    pub n_learn: Option<usize>,
    /// More than one repetition turns `learn` into a certification-frequency experiment.
    pub repetitions: usize,
}

impl Default for LearnSection {
    fn default() -> Self {
        Self {
            delta: 0.25,
            tol: 0.5,
            lower_bound: None,
            k_constant: None,
            c_absolute: 1.0,
            n_learn: None,
            repetitions: 1,
        }
    }
}

/// Manual schedule overrides for the unpreconditioned ULA chain. Any
/// override makes `verify` informational.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetOverrides {
    pub h: Option<f64>,
    pub k_burn: Option<u64>,
    pub k_thin: Option<u64>,
}

impl BudgetOverrides {
    pub fn is_empty(&self) -> bool {
        self.h.is_none() && self.k_burn.is_none() && self.k_thin.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub mc_draws: usize,
    pub replication: u64,
    /// Linear maps as lists of rows; the identity when empty.
    pub linear_maps: Vec<Vec<Vec<f64>>>,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self {
            mc_draws: 10_000,
            replication: 0,
            linear_maps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareSection {
    pub name: String,
    pub n_grid: Vec<usize>,
}

impl Default for CompareSection {
    fn default() -> Self {
        Self {
            name: "compare".into(),
            n_grid: (4..=20).map(|p| 1usize << p).collect(),
        }
    }
}

impl Config {
    pub fn learn_spec(&self, kind: PreconditionerKind) -> LearnSpec {
        let l = &self.learn;
        LearnSpec {
            delta: l.delta,
            tol: l.tol,
            kind,
            lower_bound: l.lower_bound,
            k_constant: l.k_constant,
            c_absolute: l.c_absolute,
            n_learn: l.n_learn,
        }
    }

    fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!(
                "unsupported schema_version {} (this build reads version {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        if self.threads == Some(0) {
            return Err("threads must be at least 1".into());
        }
        let s = &self.sampler;
        if !(s.eps > 0.0 && s.eps.is_finite()) {
            return Err(format!("sampler.eps must be positive, got {}", s.eps));
        }
        if s.n == 0 {
            return Err("sampler.n must be at least 1".into());
        }
        if self.learn.repetitions == 0 {
            return Err("learn.repetitions must be at least 1".into());
        }
        if self.verify.mc_draws < 2 {
            return Err("verify.mc_draws must be at least 2".into());
        }
        if self.compare.n_grid.is_empty() || self.compare.n_grid.contains(&0) {
            return Err("compare.n_grid must be a non-empty list of positive sizes".into());
        }
        if let TargetSpec::GaussianFile { covariance } = &self.target {
            if !covariance.is_file() {
                return Err(format!("target covariance file {} not found", covariance.display()));
            }
        }
        Ok(())
    }
}

/// Parse the right-hand side of `--set key=value` as a TOML value, falling
/// back to a bare string.
fn parse_value(raw: &str) -> Value {
    toml::from_str::<Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Insert `value` at a dotted path, creating intermediate tables.
pub fn set_path(table: &mut Table, key: &str, value: Value) -> Result<(), String> {
    let parts: Vec<&str> = key.split('.').map(str::trim).collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(format!("invalid key {key:?}"));
    }
    let (last, prefix) = parts.split_last().expect("split yields at least one part");
    let mut node = table;
    for part in prefix {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| format!("key {key:?}: {part:?} is not a section"))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

/// Apply one `key=value` override.
pub fn apply_set(table: &mut Table, assignment: &str) -> Result<(), String> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| format!("--set expects KEY=VALUE, got {assignment:?}"))?;
    set_path(table, key, parse_value(raw.trim()))
}

/// Read the config file (if any) into a table; an absent file yields an
/// empty table with the current schema version.
pub fn load_table(path: Option<&Path>) -> Result<Table, String> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| format!("cannot read config {}: {e}", p.display()))?;
            toml::from_str::<Table>(&text).map_err(|e| format!("invalid config {}: {e}", p.display()))?
        }
        None => Table::new(),
    };
    if path.is_none() {
        table.insert("schema_version".into(), Value::Integer(SCHEMA_VERSION as i64));
    }
    Ok(table)
}

/// Typed, validated config from a merged table.
pub fn finish(table: Table) -> Result<Config, String> {
    if !table.contains_key("target") {
        return Err("no target given; use --target or set `target` in the config".into());
    }
    if !table.contains_key("schema_version") {
        return Err(format!(
            "config is missing schema_version (current version is {SCHEMA_VERSION})"
        ));
    }
    let config: Config = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| format!("invalid config: {}", e.message()))?;
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> Table {
        let mut t = load_table(None).unwrap();
        apply_set(&mut t, "target=gaussian:d=2,kappa=4").unwrap();
        t
    }

    #[test]
    fn overrides_reach_nested_sections() {
        let mut t = minimal();
        apply_set(&mut t, "sampler.eps=0.25").unwrap();
        apply_set(&mut t, "sampler.mode=cov").unwrap();
        apply_set(&mut t, "compare.n_grid=[1, 2, 3]").unwrap();
        let c = finish(t).unwrap();
        assert_eq!(c.sampler.eps, 0.25);
        assert_eq!(c.sampler.mode, ForecastMode::Cov);
        assert_eq!(c.compare.n_grid, vec![1, 2, 3]);
        assert_eq!(c.target.to_string(), "gaussian:d=2,kappa=4");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for bad in ["sampler.epsilon=0.1", "colour=1", "policy.tolerance=1"] {
            let mut t = minimal();
            apply_set(&mut t, bad).unwrap();
            let e = finish(t).unwrap_err();
            assert!(e.contains("unknown field"), "{bad}: {e}");
        }
    }

    #[test]
    fn schema_version_is_checked() {
        let mut t = minimal();
        apply_set(&mut t, "schema_version=2").unwrap();
        assert!(finish(t).unwrap_err().contains("schema_version"));
        let mut t = minimal();
        t.remove("schema_version");
        assert!(finish(t).unwrap_err().contains("schema_version"));
    }

    #[test]
    fn bare_strings_and_bad_assignments() {
        assert_eq!(parse_value("ula"), Value::String("ula".into()));
        assert_eq!(parse_value("3"), Value::Integer(3));
        assert!(apply_set(&mut Table::new(), "novalue").is_err());
        assert!(apply_set(&mut Table::new(), "a..b=1").is_err());
        let mut t = minimal();
        assert!(apply_set(&mut t, "target.d=3").is_err());
    }
}
