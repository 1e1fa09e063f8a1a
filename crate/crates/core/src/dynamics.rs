//! Pendulum model, forward-Euler discretization, closed-loop composition,
//! rollouts, linearization and discrete-time LQR design.

use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul, Sub};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::policy::{policy_eval, SatPolicy};

/// A point in the `(θ, ω)` state space: angle in radians, angular velocity in
/// radians per second.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVec {
    pub theta: f64,
    pub omega: f64,
}

impl StateVec {
    pub const ORIGIN: Self = Self {
        theta: 0.0,
        omega: 0.0,
    };

    #[inline]
    pub const fn new(theta: f64, omega: f64) -> Self {
        Self { theta, omega }
    }

    #[inline]
    pub fn norm(self) -> f64 {
        libm::sqrt(self.theta * self.theta + self.omega * self.omega)
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.theta.is_finite() && self.omega.is_finite()
    }

    #[inline]
    pub fn to_array(self) -> [f64; 2] {
        [self.theta, self.omega]
    }

    #[inline]
    pub fn from_array(a: [f64; 2]) -> Self {
        Self::new(a[0], a[1])
    }
}

impl Add for StateVec {
    type Output = Self;

    #[inline]
    fn add(self, rhs: Self) -> Self {
        Self::new(self.theta + rhs.theta, self.omega + rhs.omega)
    }
}

impl Sub for StateVec {
    type Output = Self;

    #[inline]
    fn sub(self, rhs: Self) -> Self {
        Self::new(self.theta - rhs.theta, self.omega - rhs.omega)
    }
}

impl Mul<StateVec> for f64 {
    type Output = StateVec;

    #[inline]
    fn mul(self, rhs: StateVec) -> StateVec {
        StateVec::new(self * rhs.theta, self * rhs.omega)
    }
}

/// Physical constants of the pendulum and the integration step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// gravitational acceleration, m/s²
    pub g: f64,
    /// length, m
    pub l: f64,
    /// mass · l², kg·m²
    pub inertia: f64,
    pub mu_f: f64,
    /// Euler step, s
    pub dt: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            g: 0.81,
            l: 0.5,
            inertia: 0.25,
            mu_f: 0.0,
            dt: 0.01,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.g, self.l, self.inertia, self.mu_f, self.dt]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidParameter {
                name: "pendulum",
                reason: "all constants must be finite",
            });
        }
        if self.l <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "l",
                reason: "must be positive",
            });
        }
        if self.inertia <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "inertia",
                reason: "must be positive",
            });
        }
        if self.dt <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "dt",
                reason: "must be positive",
            });
        }
        if self.mu_f < 0.0 {
            return Err(Error::InvalidParameter {
                name: "mu_f",
                reason: "must be non-negative",
            });
        }
        Ok(())
    }
}

/// Continuous-time vector field: `θ̇ = ω`, `ω̇ = (g/l)·sin θ + u/I − μ_f·ω/I`.
#[inline]
pub fn pendulum_deriv(s: StateVec, u: f64, p: &PendulumParams) -> StateVec {
    StateVec::new(
        s.omega,
        p.g / p.l * libm::sin(s.theta) + u / p.inertia - p.mu_f * s.omega / p.inertia,
    )
}

#[inline]
pub fn step_euler(s: StateVec, u: f64, p: &PendulumParams) -> StateVec {
    s + p.dt * pendulum_deriv(s, u, p)
}

/// A deterministic discrete-time map `x_{k+1} = f(x_k)`.
pub trait DiscreteMap {
    fn step(&self, x: StateVec) -> StateVec;

    /// Control applied at `x`, recorded in rollouts. Autonomous maps use 0.
    fn control(&self, _x: StateVec) -> f64 {
        0.0
    }
}

impl<F: Fn(StateVec) -> StateVec> DiscreteMap for F {
    #[inline]
    fn step(&self, x: StateVec) -> StateVec {
        self(x)
    }
}

/// The pendulum driven by a saturated feedback policy, `f_π`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosedLoop {
    pub params: PendulumParams,
    pub policy: SatPolicy,
}

impl DiscreteMap for ClosedLoop {
    #[inline]
    fn step(&self, x: StateVec) -> StateVec {
        step_euler(x, policy_eval(x, &self.policy), &self.params)
    }

    #[inline]
    fn control(&self, x: StateVec) -> f64 {
        policy_eval(x, &self.policy)
    }
}

pub fn closed_loop(policy: SatPolicy, params: PendulumParams) -> ClosedLoop {
    ClosedLoop { params, policy }
}

/// Axis-aligned box outside of which a rollout is declared divergent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyBox {
    pub theta_max: f64,
    pub omega_max: f64,
}

impl SafetyBox {
    /// Ten times the default domain half-extents.
    pub const DEFAULT: Self = Self {
        theta_max: 10.0 * PI / 2.0,
        omega_max: 10.0 * 2.0 * PI,
    };

    #[inline]
    pub fn contains(&self, x: StateVec) -> bool {
        x.is_finite() && x.theta.abs() <= self.theta_max && x.omega.abs() <= self.omega_max
    }
}

impl Default for SafetyBox {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// States `x_0..x_L` and the controls that produced them.
///
/// When the rollout leaves the safety box it is truncated at the last in-box
/// state and `diverged` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<StateVec>,
    pub controls: Vec<f64>,
    pub diverged: bool,
}

impl Trajectory {
    pub fn last(&self) -> StateVec {
        // states is never empty: x0 is always recorded
        self.states[self.states.len() - 1]
    }

    /// Number of transitions actually simulated.
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }
}

/// Flow `Φ(x0, k)` for `k = 0..=steps`.
pub fn rollout<M: DiscreteMap + ?Sized>(
    f: &M,
    x0: StateVec,
    steps: usize,
    safety: &SafetyBox,
) -> Trajectory {
    let mut states = Vec::with_capacity(steps + 1);
    let mut controls = Vec::with_capacity(steps);
    states.push(x0);
    if !safety.contains(x0) {
        return Trajectory {
            states,
            controls,
            diverged: true,
        };
    }
    let mut x = x0;
    for _ in 0..steps {
        let u = f.control(x);
        let next = f.step(x);
        if !safety.contains(next) {
            return Trajectory {
                states,
                controls,
                diverged: true,
            };
        }
        controls.push(u);
        states.push(next);
        x = next;
    }
    Trajectory {
        states,
        controls,
        diverged: false,
    }
}

/// Final state of a rollout without recording the trajectory.
///
/// Returns the last in-box state and whether the rollout diverged.
pub fn flow<M: DiscreteMap + ?Sized>(
    f: &M,
    x0: StateVec,
    steps: usize,
    safety: &SafetyBox,
) -> (StateVec, bool) {
    if !safety.contains(x0) {
        return (x0, true);
    }
    let mut x = x0;
    for _ in 0..steps {
        let next = f.step(x);
        if !safety.contains(next) {
            return (x, true);
        }
        x = next;
    }
    (x, false)
}

/// Jacobians of a discrete map `x_{k+1} = F(x_k, u_k)` at an operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// d×d
    pub a: Mat,
    /// d×p
    pub b: Mat,
}

/// Central finite-difference linearization of a controlled discrete map.
pub fn linearize<F>(step: F, s0: StateVec, u0: f64, h: f64) -> LinearModel
where
    F: Fn(StateVec, f64) -> StateVec,
{
    let mut a = Mat::zeros(2, 2);
    let mut b = Mat::zeros(2, 1);
    let dirs = [StateVec::new(h, 0.0), StateVec::new(0.0, h)];
    for (j, e) in dirs.iter().enumerate() {
        let plus = step(s0 + *e, u0).to_array();
        let minus = step(s0 - *e, u0).to_array();
        for i in 0..2 {
            a[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    let plus = step(s0, u0 + h).to_array();
    let minus = step(s0, u0 - h).to_array();
    for i in 0..2 {
        b[(i, 0)] = (plus[i] - minus[i]) / (2.0 * h);
    }
    LinearModel { a, b }
}

/// Exact Jacobian of the Euler-discretized pendulum:
/// `A = I + dt·[[0, 1], [(g/l)·cos θ₀, −μ_f/I]]`, `B = dt·[0, 1/I]ᵀ`.
pub fn euler_jacobian(s0: StateVec, p: &PendulumParams) -> LinearModel {
    let mut a = Mat::identity(2);
    a[(0, 1)] += p.dt;
    a[(1, 0)] += p.dt * p.g / p.l * libm::cos(s0.theta);
    a[(1, 1)] -= p.dt * p.mu_f / p.inertia;
    let mut b = Mat::zeros(2, 1);
    b[(1, 0)] = p.dt / p.inertia;
    LinearModel { a, b }
}

/// LQR gain with the `u = −K·x` convention and the Riccati solution it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrSolution {
    /// p×d
    pub k: Mat,
    pub p: Mat,
    pub iterations: usize,
}

pub const RICCATI_TOLERANCE: f64 = 1e-10;
pub const RICCATI_MAX_ITERATIONS: usize = 10_000;

/// One application of `P ← AᵀPA − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q`.
pub fn riccati_step(m: &LinearModel, q: &Mat, r: &Mat, p: &Mat) -> Result<Mat> {
    let at = m.a.transpose();
    let bt = m.b.transpose();
    let at_p = at.matmul(p)?;
    let at_p_a = at_p.matmul(&m.a)?;
    let at_p_b = at_p.matmul(&m.b)?;
    let bt_p = bt.matmul(p)?;
    let gain_inv = r.add(&bt_p.matmul(&m.b)?)?.inverse()?;
    let bt_p_a = bt_p.matmul(&m.a)?;
    let correction = at_p_b.matmul(&gain_inv)?.matmul(&bt_p_a)?;
    at_p_a.sub(&correction)?.add(q)
}

/// Discrete-time LQR by fixed-point iteration of the Riccati recursion from
/// `P = Q` until `‖ΔP‖∞ < 1e-10`.
pub fn dare_lqr(m: &LinearModel, q: &Mat, r: &Mat) -> Result<LqrSolution> {
    let d = m.a.rows();
    let pdim = m.b.cols();
    if m.a.cols() != d || m.b.rows() != d {
        return Err(Error::ShapeMismatch {
            expected_rows: d,
            expected_cols: pdim,
            rows: m.b.rows(),
            cols: m.b.cols(),
        });
    }
    if (q.rows(), q.cols()) != (d, d) {
        return Err(Error::ShapeMismatch {
            expected_rows: d,
            expected_cols: d,
            rows: q.rows(),
            cols: q.cols(),
        });
    }
    if (r.rows(), r.cols()) != (pdim, pdim) {
        return Err(Error::ShapeMismatch {
            expected_rows: pdim,
            expected_cols: pdim,
            rows: r.rows(),
            cols: r.cols(),
        });
    }
    let mut p = q.clone();
    let mut residual = f64::INFINITY;
    for it in 1..=RICCATI_MAX_ITERATIONS {
        let next = riccati_step(m, q, r, &p)?;
        residual = next.sub(&p)?.max_abs();
        p = next;
        if !residual.is_finite() {
            break;
        }
        if residual < RICCATI_TOLERANCE {
            let bt_p = m.b.transpose().matmul(&p)?;
            let k = r
                .add(&bt_p.matmul(&m.b)?)?
                .inverse()?
                .matmul(&bt_p.matmul(&m.a)?)?;
            return Ok(LqrSolution {
                k,
                p,
                iterations: it,
            });
        }
    }
    Err(Error::RiccatiNotConverged {
        iterations: RICCATI_MAX_ITERATIONS,
        residual,
    })
}

/// `A − B·K`.
pub fn closed_loop_matrix(m: &LinearModel, k: &Mat) -> Result<Mat> {
    m.a.sub(&m.b.matmul(k)?)
}

/// LQR gain for the pendulum linearized at the origin with `Q = I`, `R = 1`.
pub fn pendulum_lqr_gain(p: &PendulumParams) -> Result<[f64; 2]> {
    p.validate()?;
    let model = euler_jacobian(StateVec::ORIGIN, p);
    let sol = dare_lqr(&model, &Mat::identity(2), &Mat::scalar(1.0))?;
    Ok([sol.k[(0, 0)], sol.k[(0, 1)]])
}
