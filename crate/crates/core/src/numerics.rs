//! Central record of numerical tolerances.

use serde::{Deserialize, Serialize};

/// Every tolerance used by the toolkit. Construct with `Default` and
/// override individual fields per run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericPolicy {
    /// Symmetry check: |a_ij - a_ji| <= symmetry_tol * max(1, |a_ij|).
    pub symmetry_tol: f64,
    /// SPD construction rejects lambda_min <= spd_floor * lambda_max.
    pub spd_floor: f64,
    /// Estimators reject lambda_min <= degeneracy_floor * lambda_max.
    pub degeneracy_floor: f64,
    /// Relative slack applied when testing closed boundaries of admissible
    /// intervals, so that values computed to equal a bound are accepted.
    pub boundary_slack: f64,
    /// Eigensolver convergence threshold.
    pub eigen_eps: f64,
    /// Eigensolver iteration cap (0 means unlimited).
    pub eigen_max_iter: usize,
    /// Largest d*N accepted by the exact joint-law oracle.
    pub oracle_max_size: usize,
    /// Kernel-step count above which Gaussian ULA chains are advanced with the
    /// exact k-step transition instead of iterating.
    pub exact_stepping_threshold: u64,
}

impl Default for NumericPolicy {
    fn default() -> Self {
        Self {
            symmetry_tol: 1e-12,
            spd_floor: 1e-12,
            degeneracy_floor: 1e-10,
            boundary_slack: 1e-12,
            eigen_eps: f64::EPSILON,
            eigen_max_iter: 0,
            oracle_max_size: 4000,
            exact_stepping_threshold: 10_000_000,
        }
    }
}

impl NumericPolicy {
    /// `value <= bound`, tolerating relative round-off of `boundary_slack`.
    pub fn at_most(&self, value: f64, bound: f64) -> bool {
        value <= bound + self.boundary_slack * bound.abs().max(f64::MIN_POSITIVE)
    }
}
