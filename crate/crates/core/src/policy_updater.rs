//! Policy improvement against a frozen Lyapunov estimate.
//!
//! Initial states are drawn from the gap around `S_c(V)` and from its
//! interior, rolled out for `L_p` steps under the current policy, and the
//! loss
//!
//! ```text
//! L(ψ) = Σ_x [1{V(x_T) < c} + λ_u·1{V(x_T) > c}] · V(x_T),   x_T = Φ_ψ(x, L_p)
//! ```
//!
//! is minimized over the trainable saturation parameters by backpropagation
//! through the rollouts. The indicator weights are constants of each rollout.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dynamics::{ClosedLoop, DiscreteMap, PendulumParams, SafetyBox, StateVec};
use crate::error::{Error, Result};
use crate::grid::GridDomain;
use crate::lyapunov_net::{grid_values, LyapunovEvaluator};
use crate::policy::{crop_update, policy_grad_psi, sat_dz, SatPolicy};
use crate::roa_estimator::LevelSetEstimate;
use crate::sampling::{sample_gap_interior, MixtureSample};

/// A discrete map with the two Jacobians backpropagation needs.
pub trait DifferentiableStep: DiscreteMap {
    /// `∂x_{k+1}/∂x_k`
    fn jacobian_state(&self, x: StateVec) -> [[f64; 2]; 2];

    /// `∂⁺x_{k+1}/∂ψ`, the direct effect of the parameters with `x_k` held fixed
    fn jacobian_psi(&self, x: StateVec) -> [[f64; 4]; 2];
}

impl DifferentiableStep for ClosedLoop {
    fn jacobian_state(&self, x: StateVec) -> [[f64; 2]; 2] {
        let p = &self.params;
        let slope = sat_dz(self.policy.feedback(x), &self.policy.psi);
        let du_dtheta = -slope * self.policy.k[0];
        let du_domega = -slope * self.policy.k[1];
        [
            [1.0, p.dt],
            [
                p.dt * (p.g / p.l * libm::cos(x.theta) + du_dtheta / p.inertia),
                1.0 + p.dt * (-p.mu_f / p.inertia + du_domega / p.inertia),
            ],
        ]
    }

    fn jacobian_psi(&self, x: StateVec) -> [[f64; 4]; 2] {
        let du = policy_grad_psi(x, &self.policy);
        let s = self.params.dt / self.params.inertia;
        [[0.0; 4], [s * du[0], s * du[1], s * du[2], s * du[3]]]
    }
}

/// A differentiable scalar function of the state.
pub trait ScalarField {
    fn value(&self, x: StateVec) -> f64;
    fn value_and_grad(&self, x: StateVec) -> (f64, [f64; 2]);
}

impl ScalarField for LyapunovEvaluator {
    fn value(&self, x: StateVec) -> f64 {
        LyapunovEvaluator::value(self, x)
    }

    fn value_and_grad(&self, x: StateVec) -> (f64, [f64; 2]) {
        self.value_and_grad_x(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyUpdHyper {
    pub gamma: f64,
    pub beta: f64,
    pub n_samples: usize,
    /// rollout length `L_p`
    pub rollout_steps: usize,
    pub lambda_u: f64,
    pub lr: f64,
    pub sgd_steps: usize,
    pub safety: SafetyBox,
}

impl Default for PolicyUpdHyper {
    fn default() -> Self {
        Self {
            gamma: 4.0,
            beta: 0.6,
            n_samples: 10,
            rollout_steps: 10,
            lambda_u: 10.0,
            lr: 0.01,
            sgd_steps: 100,
            safety: SafetyBox::DEFAULT,
        }
    }
}

impl PolicyUpdHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::InvalidParameter {
                name: "gamma_p",
                reason: "must exceed 1",
            });
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter {
                name: "beta_p",
                reason: "must lie in [0, 1]",
            });
        }
        if !(self.lambda_u >= 1.0) {
            return Err(Error::InvalidParameter {
                name: "lambda_u",
                reason: "must be at least 1",
            });
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter {
                name: "n_samples",
                reason: "must be at least 1",
            });
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lr_p",
                reason: "must be positive",
            });
        }
        Ok(())
    }
}

/// Factors of the learning signal `∂L/∂ψ = ∂L/∂x_T · Σ_k ∂x_T/∂x_k · ∂⁺x_k/∂ψ`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SignalDiagnostics {
    /// `‖∂L/∂x_T‖` over the batch (root of the summed squared per-sample norms)
    pub grad_norm_final: f64,
    /// entry `k`: mean over samples of the spectral norm of `∂x_T/∂x_k`
    pub per_step_jacobian_norms: Vec<f64>,
    /// `‖∂L/∂ψ‖`
    pub grad_norm_psi: f64,
    /// `grad_norm_final` fell below `1e-6`
    pub vanishing: bool,
    pub diverged: usize,
}

pub const VANISHING_SIGNAL: f64 = 1e-6;

/// Loss value of a batch plus its bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyLoss {
    pub value: f64,
    pub inside: usize,
    pub outside: usize,
    pub diverged: usize,
}

#[inline]
fn endpoint_weight(v: f64, c: f64, lambda_u: f64, diverged: bool) -> f64 {
    if diverged || v > c {
        lambda_u
    } else if v < c {
        1.0
    } else {
        0.0
    }
}

/// Forward rollout that keeps every in-box state.
fn trajectory<F: DiscreteMap + ?Sized>(f: &F, x0: StateVec, steps: usize, safety: &SafetyBox) -> (Vec<StateVec>, bool) {
    let mut xs = Vec::with_capacity(steps + 1);
    xs.push(x0);
    if !safety.contains(x0) {
        return (xs, true);
    }
    let mut x = x0;
    for _ in 0..steps {
        let next = f.step(x);
        if !safety.contains(next) {
            return (xs, true);
        }
        xs.push(next);
        x = next;
    }
    (xs, false)
}

pub fn policy_loss<F, V>(
    f: &F,
    v: &V,
    c: f64,
    x0s: &[StateVec],
    steps: usize,
    lambda_u: f64,
    safety: &SafetyBox,
) -> PolicyLoss
where
    F: DiscreteMap + ?Sized,
    V: ScalarField + ?Sized,
{
    let mut out = PolicyLoss::default();
    for &x0 in x0s {
        let (xs, diverged) = trajectory(f, x0, steps, safety);
        let end = xs[xs.len() - 1];
        let value = v.value(end);
        if diverged {
            out.diverged += 1;
        }
        if diverged || value > c {
            out.outside += 1;
        } else if value < c {
            out.inside += 1;
        }
        out.value += endpoint_weight(value, c, lambda_u, diverged) * value;
    }
    out
}

/// Loss, gradient over `ψ` and learning-signal diagnostics of one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Bptt {
    pub loss: PolicyLoss,
    pub grad: [f64; 4],
    pub diagnostics: SignalDiagnostics,
}

#[inline]
fn mat_mul(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut m = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            m[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    m
}

/// Largest singular value of a 2×2 matrix.
fn spectral_norm(m: &[[f64; 2]; 2]) -> f64 {
    let (a, b, c, d) = (m[0][0], m[0][1], m[1][0], m[1][1]);
    // eigenvalues of MᵀM
    let p = a * a + c * c;
    let q = a * b + c * d;
    let r = b * b + d * d;
    let mean = 0.5 * (p + r);
    let dev = libm::sqrt(0.25 * (p - r) * (p - r) + q * q);
    libm::sqrt((mean + dev).max(0.0))
}

/// Reverse accumulation through `V ∘ f^{L}` for every initial state, summed in
/// sample order.
pub fn bptt<F, V>(
    f: &F,
    v: &V,
    c: f64,
    x0s: &[StateVec],
    steps: usize,
    lambda_u: f64,
    safety: &SafetyBox,
) -> Bptt
where
    F: DifferentiableStep + ?Sized,
    V: ScalarField + ?Sized,
{
    let mut loss = PolicyLoss::default();
    let mut grad = [0.0; 4];
    let mut final_sq = 0.0;
    let mut norm_sums = vec![0.0; steps + 1];
    let mut norm_counts = vec![0usize; steps + 1];

    for &x0 in x0s {
        let (xs, diverged) = trajectory(f, x0, steps, safety);
        let t = xs.len() - 1;
        let (value, dv) = v.value_and_grad(xs[t]);
        let w = endpoint_weight(value, c, lambda_u, diverged);
        if diverged {
            loss.diverged += 1;
        }
        if diverged || value > c {
            loss.outside += 1;
        } else if value < c {
            loss.inside += 1;
        }
        loss.value += w * value;

        // adjoint λ_k = ∂L/∂x_k, starting from ∂L/∂x_T
        let mut adj = [w * dv[0], w * dv[1]];
        final_sq += adj[0] * adj[0] + adj[1] * adj[1];
        // ∂x_T/∂x_k
        let mut sens = [[1.0, 0.0], [0.0, 1.0]];
        norm_sums[t] += 1.0;
        norm_counts[t] += 1;
        for k in (0..t).rev() {
            let jp = f.jacobian_psi(xs[k]);
            for (i, g) in grad.iter_mut().enumerate() {
                *g += adj[0] * jp[0][i] + adj[1] * jp[1][i];
            }
            let js = f.jacobian_state(xs[k]);
            adj = [
                adj[0] * js[0][0] + adj[1] * js[1][0],
                adj[0] * js[0][1] + adj[1] * js[1][1],
            ];
            sens = mat_mul(&sens, &js);
            norm_sums[k] += spectral_norm(&sens);
            norm_counts[k] += 1;
        }
    }

    let per_step_jacobian_norms = norm_sums
        .iter()
        .zip(&norm_counts)
        .map(|(s, n)| if *n == 0 { 0.0 } else { s / *n as f64 })
        .collect();
    let grad_norm_final = libm::sqrt(final_sq);
    let grad_norm_psi = libm::sqrt(grad.iter().map(|g| g * g).sum());
    Bptt {
        loss,
        grad,
        diagnostics: SignalDiagnostics {
            grad_norm_final,
            per_step_jacobian_norms,
            grad_norm_psi,
            vanishing: grad_norm_final < VANISHING_SIGNAL,
            diverged: loss.diverged,
        },
    }
}

/// `∂L/∂ψ` of [`policy_loss`] under the closed loop of `pol`.
pub fn bptt_grad<V: ScalarField + ?Sized>(
    pol: &SatPolicy,
    params: &PendulumParams,
    v: &V,
    c: f64,
    x0s: &[StateVec],
    steps: usize,
    lambda_u: f64,
    safety: &SafetyBox,
) -> [f64; 4] {
    let f = ClosedLoop {
        params: *params,
        policy: *pol,
    };
    bptt(&f, v, c, x0s, steps, lambda_u, safety).grad
}

pub fn signal_diagnostics<F, V>(
    f: &F,
    v: &V,
    c: f64,
    x0s: &[StateVec],
    steps: usize,
    lambda_u: f64,
    safety: &SafetyBox,
) -> SignalDiagnostics
where
    F: DifferentiableStep + ?Sized,
    V: ScalarField + ?Sized,
{
    bptt(f, v, c, x0s, steps, lambda_u, safety).diagnostics
}

/// Draw the policy batch: `β_p·U(G) + (1 − β_p)·U(S_c)`.
pub fn sample_policy_batch<R: Rng + ?Sized>(
    est: &LevelSetEstimate,
    hyper: &PolicyUpdHyper,
    grid: &GridDomain,
    rng: &mut R,
) -> MixtureSample {
    let eval = est.net.evaluator();
    let values = grid_values(&eval, grid);
    sample_gap_interior(
        &eval,
        &values,
        est.c,
        hyper.gamma,
        hyper.beta,
        hyper.n_samples,
        grid,
        rng,
    )
}

/// Outcome of one policy phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyUpdate {
    pub policy: SatPolicy,
    /// loss of the phase-start policy on the phase batch
    pub loss_start: PolicyLoss,
    /// loss of the cropped policy on the same batch
    pub loss_end: PolicyLoss,
    /// signal factors at the phase-start policy
    pub diagnostics: SignalDiagnostics,
    pub fallback: bool,
}

/// `sgd_steps` gradient steps on a batch sampled once, then cropped against
/// the phase-start parameters.
pub fn update_policy<R: Rng + ?Sized>(
    pol: &SatPolicy,
    est: &LevelSetEstimate,
    params: &PendulumParams,
    hyper: &PolicyUpdHyper,
    grid: &GridDomain,
    rng: &mut R,
) -> Result<PolicyUpdate> {
    hyper.validate()?;
    let eval = est.net.evaluator();
    let sample = sample_policy_batch(est, hyper, grid, rng);
    let x0s = &sample.states;
    let start = ClosedLoop {
        params: *params,
        policy: *pol,
    };
    let first = bptt(&start, &eval, est.c, x0s, hyper.rollout_steps, hyper.lambda_u, &hyper.safety);

    let mut psi = pol.psi;
    for step in 0..hyper.sgd_steps {
        let f = ClosedLoop {
            params: *params,
            policy: SatPolicy { psi, ..*pol },
        };
        let r = bptt(&f, &eval, est.c, x0s, hyper.rollout_steps, hyper.lambda_u, &hyper.safety);
        if !r.grad.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite {
                what: "policy gradient",
                step,
            });
        }
        let g = psi.mask(r.grad);
        let mut arr = psi.to_array();
        for (p, g) in arr.iter_mut().zip(g) {
            *p -= hyper.lr * g;
        }
        psi.set_array(arr);
    }
    let cropped = crop_update(&pol.psi, &psi, pol.crop_radius);
    let policy = SatPolicy { psi: cropped, ..*pol };
    let end = ClosedLoop {
        params: *params,
        policy,
    };
    let loss_end = policy_loss(&end, &eval, est.c, x0s, hyper.rollout_steps, hyper.lambda_u, &hyper.safety);
    Ok(PolicyUpdate {
        policy,
        loss_start: first.loss,
        loss_end,
        diagnostics: first.diagnostics,
        fallback: sample.fallback,
    })
}
