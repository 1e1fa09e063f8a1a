//! Brute-force region of attraction on the grid, and a desk check of how the
//! measure of a thin sublevel-set ring scales with the level multiplier.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::dynamics::{DiscreteMap, SafetyBox, StateVec};
use crate::error::{Error, Result};
use crate::grid::{GridDomain, RoaMask};

pub use crate::grid::{mask_measure, sym_diff_measure};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleConfig {
    /// steps allowed to reach the ball
    pub k_max: usize,
    pub ball_radius: f64,
    /// steps the state must then stay within twice the radius
    pub confirm_steps: usize,
    pub safety: SafetyBox,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            k_max: 8_000,
            ball_radius: 0.1,
            confirm_steps: 300,
            safety: SafetyBox::DEFAULT,
        }
    }
}

/// Whether the rollout from `x0` first enters `‖x‖ < r` within `k_max` steps
/// and then stays below `2r` for `confirm_steps` steps.
pub fn converges<M: DiscreteMap + ?Sized>(f: &M, x0: StateVec, cfg: &OracleConfig) -> bool {
    let mut x = x0;
    for k in 0..=cfg.k_max {
        if !cfg.safety.contains(x) {
            return false;
        }
        if x.norm() < cfg.ball_radius {
            let mut y = x;
            for _ in 0..cfg.confirm_steps {
                y = f.step(y);
                if !(y.norm() < 2.0 * cfg.ball_radius) {
                    return false;
                }
            }
            return true;
        }
        if k < cfg.k_max {
            x = f.step(x);
        }
    }
    false
}

/// Classify every cell center.
pub fn true_roa<M: DiscreteMap + ?Sized>(f: &M, grid: &GridDomain, cfg: &OracleConfig) -> RoaMask {
    RoaMask::from_fn(grid, |i| converges(f, grid.center(i), cfg))
}

/// Predicted versus grid-counted measure of `S_{αc} \ S_c` for `V = ‖x‖²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapGrowth {
    pub alpha: f64,
    /// `c·(α − 1)·perimeter / G` with `G = 2√c` the gradient norm on the level
    /// set, i.e. `π·c·(α − 1)`
    pub predicted: f64,
    pub measured: f64,
    pub rel_error: f64,
}

/// Measure of `{c ≤ ‖x‖² < α·c}` counted over cell centers, against the
/// first-order growth prediction.
pub fn gap_growth_check(c: f64, alphas: &[f64], grid: &GridDomain) -> Result<Vec<GapGrowth>> {
    if !(c > 0.0) {
        return Err(Error::InvalidParameter {
            name: "c",
            reason: "level must be positive",
        });
    }
    let values: Vec<f64> = grid
        .centers()
        .map(|x| x.theta * x.theta + x.omega * x.omega)
        .collect();
    let alpha_max = alphas.iter().cloned().fold(1.0, f64::max);
    let touches = (0..grid.len()).any(|i| grid.is_boundary(i) && values[i] < alpha_max * c);
    if touches {
        return Err(Error::LevelSetTouchesBoundary {
            level: alpha_max * c,
        });
    }
    let radius = libm::sqrt(c);
    let perimeter = 2.0 * PI * radius;
    let grad_lower_bound = 2.0 * radius;
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let count = values.iter().filter(|v| **v >= c && **v < alpha * c).count();
            let measured = count as f64 * grid.cell_area();
            let predicted = c * (alpha - 1.0) * perimeter / grad_lower_bound;
            let rel_error = if predicted == 0.0 {
                if measured == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                (measured - predicted).abs() / predicted
            };
            GapGrowth {
                alpha,
                predicted,
                measured,
                rel_error,
            }
        })
        .collect())
}
