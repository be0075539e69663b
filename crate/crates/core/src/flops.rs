//! FLOP accounting.
//!
//! One FLOP per scalar addition or multiplication. A kernel step is charged
//! one gradient call plus its vector work; the fixed per-coordinate constants
//! below are the counts of the update formulas as implemented.

use serde::{Deserialize, Serialize};

/// Vector FLOPs per coordinate of a ULA update `x - h g + sqrt(2h) xi`.
pub const ULA_VECTOR_OPS: u64 = 4;
/// Vector FLOPs per coordinate of an underdamped update (two means, two
/// correlated noise terms).
pub const UNDERDAMPED_VECTOR_OPS: u64 = 13;

pub fn matvec_flops(d: usize) -> u64 {
    2 * (d as u64) * (d as u64)
}

pub fn ula_step_flops(d: usize, gradient_cost: u64) -> u64 {
    gradient_cost + ULA_VECTOR_OPS * d as u64
}

pub fn preconditioned_step_extra(d: usize) -> u64 {
    2 * matvec_flops(d)
}

pub fn underdamped_step_flops(d: usize, gradient_cost: u64) -> u64 {
    gradient_cost + UNDERDAMPED_VECTOR_OPS * d as u64
}

/// One-time Cholesky cost `d^3 / 3`, rounded up.
pub fn cholesky_flops(d: usize) -> u64 {
    (d as u64).pow(3).div_ceil(3)
}

/// Dense symmetric inversion, charged at `d^3`.
pub fn inversion_flops(d: usize) -> u64 {
    (d as u64).pow(3)
}

/// Centered covariance estimate from `n` states: mean, centering and outer
/// product accumulation.
pub fn covariance_estimate_flops(n: usize, d: usize) -> u64 {
    let (n, d) = (n as u64, d as u64);
    n * (2 * d + 2 * d * d)
}

/// Uncentered score outer products, excluding the gradient calls.
pub fn fisher_estimate_flops(n: usize, d: usize) -> u64 {
    let (n, d) = (n as u64, d as u64);
    n * (d + 2 * d * d)
}

/// Itemized FLOP tally of a run or phase. Counts are `u128`: exact
/// skip-ahead makes runs of more than `2^64` kernel steps routine.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlopLedger {
    pub gradient_calls: u128,
    pub gradient_cost: u128,
    pub matvec_flops: u128,
    pub factorization_flops: u128,
    pub other_flops: u128,
    pub kernel_steps: u128,
}

impl FlopLedger {
    pub fn new(gradient_cost: u64) -> Self {
        Self {
            gradient_cost: gradient_cost as u128,
            ..Self::default()
        }
    }

    pub fn gradient_flops(&self) -> u128 {
        self.gradient_calls * self.gradient_cost
    }

    pub fn total(&self) -> u128 {
        self.gradient_flops() + self.matvec_flops + self.factorization_flops + self.other_flops
    }

    /// Charge `steps` kernel steps, each with one gradient call, `matvecs`
    /// d-by-d matrix-vector products and `vector_ops * d` vector FLOPs.
    pub fn charge_steps(&mut self, steps: u128, d: usize, matvecs: u64, vector_ops: u64) {
        self.kernel_steps += steps;
        self.gradient_calls += steps;
        self.matvec_flops += steps * (matvecs * matvec_flops(d)) as u128;
        self.other_flops += steps * (vector_ops * d as u64) as u128;
    }

    /// Component-wise sum. The gradient cost of `self` is kept unless unset.
    pub fn merged(&self, other: &FlopLedger) -> FlopLedger {
        FlopLedger {
            gradient_calls: self.gradient_calls + other.gradient_calls,
            gradient_cost: if self.gradient_cost == 0 {
                other.gradient_cost
            } else {
                self.gradient_cost
            },
            matvec_flops: self.matvec_flops + other.matvec_flops,
            factorization_flops: self.factorization_flops + other.factorization_flops,
            other_flops: self.other_flops + other.other_flops,
            kernel_steps: self.kernel_steps + other.kernel_steps,
        }
    }
}
