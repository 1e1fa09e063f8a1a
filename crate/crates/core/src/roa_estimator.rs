//! Growing an inner estimate `S_c(V)` of the region of attraction of a fixed
//! closed loop.
//!
//! Each growth iteration samples initial states from the ring around the
//! current estimate and from the whole domain, labels them by whether a short
//! rollout lands inside the current estimate, fits `V` to the labels with the
//! four-term objective below, and then picks the largest level for which the
//! decrease condition holds on every grid cell of the sublevel set.
//!
//! ```text
//! L(V) =   Σ_in  [V(x) − c̄]
//!        − Σ_out [V(x) − c̄]
//!        + λ_roa   · Σ_in [V(f(x)) − V(x)]
//!        + λ_monot · Σ_in [V(x) − V_prev(f_prev(x))]²
//! ```
//!
//! With `hinged` set, the first three brackets become `max(0, ·)`: an in-state
//! only pulls on `V` while `V(x) > c̄` or `ΔV(x) > 0`, an out-state only while
//! `V(x) < c̄`. With `mean_reduction` set, the in-sums and the out-sum are
//! divided by their sample counts. Clearing both gives the signed sums above.

use alloc::vec::Vec;

use rand::Rng;

use crate::dynamics::{flow, DiscreteMap, SafetyBox, StateVec};
use crate::error::{Error, Result};
use crate::grid::{GridDomain, RoaMask};
use crate::lyapunov_net::{grid_values, LyapunovEvaluator, ParamGrad, PdLyapunovNet};
use crate::sampling::sample_mixture;

/// A Lyapunov candidate together with the level of its sublevel-set estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelSetEstimate {
    pub net: PdLyapunovNet,
    pub c: f64,
}

impl LevelSetEstimate {
    /// Cells whose centers satisfy `V < c`.
    pub fn mask(&self, grid: &GridDomain) -> RoaMask {
        let eval = self.net.evaluator();
        RoaMask::from_fn(grid, |i| eval.value(grid.center(i)) < self.c)
    }

    pub fn fraction(&self, grid: &GridDomain) -> f64 {
        self.mask(grid).fraction()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoaEstHyper {
    /// gap multiplier `γ_r`
    pub gamma: f64,
    /// mixture weight `β_r` of the gap
    pub beta: f64,
    /// samples per growth iteration
    pub n_samples: usize,
    /// growth iterations `M`
    pub iterations: usize,
    /// labeling rollout length `L_r`
    pub rollout_steps: usize,
    pub lambda_roa: f64,
    pub lambda_monot: f64,
    pub lr: f64,
    pub sgd_steps: usize,
    /// target level `c̄`
    pub c_bar: f64,
    /// clip the classifier and decrease terms at zero
    pub hinged: bool,
    /// average each label set instead of summing it
    pub mean_reduction: bool,
    /// anchor the monotonicity term to the previous growth iteration's `V`
    /// and the current closed loop instead of the phase-start pair
    pub anchor_per_iteration: bool,
    pub safety: SafetyBox,
}

impl Default for RoaEstHyper {
    fn default() -> Self {
        Self {
            gamma: 4.0,
            beta: 0.6,
            n_samples: 10,
            iterations: 20,
            rollout_steps: 10,
            lambda_roa: 1000.0,
            lambda_monot: 0.01,
            lr: 0.01,
            sgd_steps: 10_000,
            c_bar: 1.0,
            hinged: true,
            mean_reduction: true,
            anchor_per_iteration: false,
            safety: SafetyBox::DEFAULT,
        }
    }
}

impl RoaEstHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 1.0) {
            return Err(Error::InvalidParameter {
                name: "gamma_r",
                reason: "must exceed 1",
            });
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::InvalidParameter {
                name: "beta_r",
                reason: "must lie in [0, 1]",
            });
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidParameter {
                name: "n_samples",
                reason: "must be at least 1",
            });
        }
        if self.rollout_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "l_r",
                reason: "must be at least 1",
            });
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParameter {
                name: "lr_r",
                reason: "must be positive",
            });
        }
        if !(self.c_bar > 0.0) {
            return Err(Error::InvalidParameter {
                name: "c_bar",
                reason: "must be positive",
            });
        }
        if !(self.lambda_roa >= 0.0 && self.lambda_monot >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                reason: "loss weights must be non-negative",
            });
        }
        Ok(())
    }
}

/// Initial states split by whether their rollout ends inside the estimate.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabeledBatch {
    pub x_in: Vec<StateVec>,
    pub x_out: Vec<StateVec>,
}

/// `x` is in iff `V(Φ(x, L)) < c`; divergent rollouts are always out.
pub fn label_batch<M: DiscreteMap + ?Sized>(
    x0s: &[StateVec],
    f: &M,
    eval: &LyapunovEvaluator,
    c: f64,
    steps: usize,
    safety: &SafetyBox,
) -> LabeledBatch {
    let mut batch = LabeledBatch::default();
    for &x in x0s {
        let (end, diverged) = flow(f, x, steps, safety);
        if !diverged && eval.value(end) < c {
            batch.x_in.push(x);
        } else {
            batch.x_out.push(x);
        }
    }
    batch
}

/// The estimation objective with everything that does not depend on the
/// trained network precomputed: successor states under the current closed
/// loop and the frozen targets `V_prev(f_prev(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoaObjective {
    x_in: Vec<StateVec>,
    next_in: Vec<StateVec>,
    x_out: Vec<StateVec>,
    monot_targets: Vec<f64>,
    c_bar: f64,
    lambda_roa: f64,
    lambda_monot: f64,
    hinged: bool,
    scale_in: f64,
    scale_out: f64,
}

impl RoaObjective {
    pub fn new<F, P>(
        batch: &LabeledBatch,
        f_pi: &F,
        prev: &LyapunovEvaluator,
        prev_f: &P,
        hyper: &RoaEstHyper,
    ) -> Self
    where
        F: DiscreteMap + ?Sized,
        P: DiscreteMap + ?Sized,
    {
        let scale = |n: usize| {
            if hyper.mean_reduction && n > 0 {
                1.0 / n as f64
            } else {
                1.0
            }
        };
        Self {
            x_in: batch.x_in.clone(),
            next_in: batch.x_in.iter().map(|x| f_pi.step(*x)).collect(),
            x_out: batch.x_out.clone(),
            monot_targets: batch
                .x_in
                .iter()
                .map(|x| prev.value(prev_f.step(*x)))
                .collect(),
            c_bar: hyper.c_bar,
            lambda_roa: hyper.lambda_roa,
            lambda_monot: hyper.lambda_monot,
            hinged: hyper.hinged,
            scale_in: scale(batch.x_in.len()),
            scale_out: scale(batch.x_out.len()),
        }
    }

    fn clip(&self, z: f64) -> f64 {
        if self.hinged {
            z.max(0.0)
        } else {
            z
        }
    }

    /// Slope of `clip` at `z`; zero on the flat side and at the kink.
    fn clip_slope(&self, z: f64) -> f64 {
        if !self.hinged || z > 0.0 {
            1.0
        } else {
            0.0
        }
    }

    fn in_term(&self, v: f64, v_next: f64, target: f64) -> f64 {
        let gap = v - target;
        self.scale_in
            * (self.clip(v - self.c_bar)
                + self.lambda_roa * self.clip(v_next - v)
                + self.lambda_monot * gap * gap)
    }

    fn out_term(&self, v: f64) -> f64 {
        self.scale_out * self.clip(self.c_bar - v)
    }

    pub fn loss(&self, eval: &LyapunovEvaluator) -> f64 {
        let mut loss = 0.0;
        for ((x, next), target) in self.x_in.iter().zip(&self.next_in).zip(&self.monot_targets) {
            loss += self.in_term(eval.value(*x), eval.value(*next), *target);
        }
        for x in &self.x_out {
            loss += self.out_term(eval.value(*x));
        }
        loss
    }

    /// Loss and its gradient with respect to the network parameters.
    pub fn loss_and_grad(&self, net: &PdLyapunovNet) -> (f64, ParamGrad) {
        let eval = net.evaluator();
        let mut dw = net.weight_grad_zeros();
        let mut loss = 0.0;
        for ((x, next), target) in self.x_in.iter().zip(&self.next_in).zip(&self.monot_targets) {
            let v_next = eval.value(*next);
            let (v, _) = eval.accumulate_with(
                *x,
                |v| {
                    let dec = self.lambda_roa * self.clip_slope(v_next - v);
                    self.scale_in
                        * (self.clip_slope(v - self.c_bar) - dec
                            + 2.0 * self.lambda_monot * (v - target))
                },
                &mut dw,
            );
            let dec = self.lambda_roa * self.clip_slope(v_next - v);
            if dec != 0.0 {
                eval.accumulate(*next, self.scale_in * dec, &mut dw);
            }
            loss += self.in_term(v, v_next, *target);
        }
        for x in &self.x_out {
            let (v, _) = eval.accumulate_with(
                *x,
                |v| -self.scale_out * self.clip_slope(self.c_bar - v),
                &mut dw,
            );
            loss += self.out_term(v);
        }
        (loss, net.weight_grad_to_params(&dw))
    }

    pub fn n_in(&self) -> usize {
        self.x_in.len()
    }

    pub fn n_out(&self) -> usize {
        self.x_out.len()
    }
}

/// Value of the estimation objective; `prev` and `prev_f` are held fixed.
pub fn roa_loss<F, P>(
    net: &PdLyapunovNet,
    batch: &LabeledBatch,
    f_pi: &F,
    prev: &LevelSetEstimate,
    prev_f: &P,
    hyper: &RoaEstHyper,
) -> f64
where
    F: DiscreteMap + ?Sized,
    P: DiscreteMap + ?Sized,
{
    RoaObjective::new(batch, f_pi, &prev.net.evaluator(), prev_f, hyper).loss(&net.evaluator())
}

/// `V` and `ΔV = V(f(x)) − V(x)` at every cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct DecreaseField {
    pub values: Vec<f64>,
    pub deltas: Vec<f64>,
}

pub fn decrease_field<M: DiscreteMap + ?Sized>(
    eval: &LyapunovEvaluator,
    f: &M,
    grid: &GridDomain,
) -> DecreaseField {
    let values = grid_values(eval, grid);
    let deltas = grid
        .centers()
        .zip(&values)
        .map(|(x, v)| eval.value(f.step(x)) - v)
        .collect();
    DecreaseField { values, deltas }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelSearch {
    pub c: f64,
    /// cells with `V < c`
    pub cells: usize,
    /// the cell that stopped the search
    pub blocking_cell: Option<usize>,
}

/// Largest grid value `c` such that every cell with `V < c` lies off the
/// domain boundary and, unless it is one of the cells nearest the origin,
/// has `ΔV < 0`.
pub fn line_search_level(
    values: &[f64],
    deltas: &[f64],
    grid: &GridDomain,
) -> Result<LevelSearch> {
    if values.len() != grid.len() || deltas.len() != grid.len() {
        return Err(Error::GridMismatch {
            left_cells: grid.len(),
            right_cells: values.len().min(deltas.len()),
        });
    }
    let (min, max) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if !min.is_finite() || !max.is_finite() || max - min <= 1e-12 * max.abs().max(1.0) {
        return Err(Error::DegenerateCandidate { min, max });
    }
    let exempt = grid.origin_cells();
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|a, b| values[*a].total_cmp(&values[*b]).then(a.cmp(b)));

    let bad = |i: usize| {
        grid.is_boundary(i) || (!exempt.contains(&i) && !(deltas[i] < 0.0))
    };
    let blocking = order.iter().position(|&i| bad(i));
    let (mut c, blocking_cell) = match blocking {
        Some(pos) => (values[order[pos]], Some(order[pos])),
        None => (max, None),
    };
    if !(c > 0.0) {
        c = order
            .iter()
            .map(|&i| values[i])
            .find(|v| *v > 0.0)
            .unwrap_or(max);
    }
    let cells = values.iter().filter(|v| **v < c).count();
    Ok(LevelSearch {
        c,
        cells,
        blocking_cell,
    })
}

/// [`line_search_level`] on a network and closed loop.
pub fn line_search<M: DiscreteMap + ?Sized>(
    net: &PdLyapunovNet,
    f: &M,
    grid: &GridDomain,
) -> Result<LevelSearch> {
    let field = decrease_field(&net.evaluator(), f, grid);
    line_search_level(&field.values, &field.deltas, grid)
}

/// Cells of `S_c(V)` other than the origin cells that violate `ΔV < 0`.
pub fn soundness_violations<M: DiscreteMap + ?Sized>(
    est: &LevelSetEstimate,
    f: &M,
    grid: &GridDomain,
) -> Vec<usize> {
    let field = decrease_field(&est.net.evaluator(), f, grid);
    let exempt = grid.origin_cells();
    (0..grid.len())
        .filter(|i| field.values[*i] < est.c && !exempt.contains(i) && !(field.deltas[*i] < 0.0))
        .collect()
}

/// Summary of one growth iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthRecord {
    /// 1-based
    pub iteration: usize,
    pub c: f64,
    pub estimated_fraction: f64,
    pub loss_start: f64,
    pub loss_end: f64,
    pub n_in: usize,
    pub n_out: usize,
    /// the gap was empty and the batch came from the whole domain
    pub fallback: bool,
}

/// Run `hyper.iterations` growth iterations starting from `prev`.
///
/// `prev` and `prev_f` also anchor the monotonicity term for the whole call.
/// `on_iteration` sees every record and the estimate it produced.
#[allow(clippy::too_many_arguments)]
pub fn estimate_roa<F, P, R>(
    prev: &LevelSetEstimate,
    prev_f: &P,
    f_pi: &F,
    hyper: &RoaEstHyper,
    grid: &GridDomain,
    rng: &mut R,
    mut on_iteration: impl FnMut(&GrowthRecord, &LevelSetEstimate),
) -> Result<LevelSetEstimate>
where
    F: DiscreteMap + ?Sized,
    P: DiscreteMap + ?Sized,
    R: Rng + ?Sized,
{
    hyper.validate()?;
    let prev_eval = prev.net.evaluator();
    let mut est = prev.clone();
    for iteration in 1..=hyper.iterations {
        let eval = est.net.evaluator();
        let values = grid_values(&eval, grid);
        let sample = sample_mixture(
            &eval,
            &values,
            est.c,
            hyper.gamma,
            hyper.beta,
            hyper.n_samples,
            grid,
            rng,
        );
        let batch = label_batch(
            &sample.states,
            f_pi,
            &eval,
            est.c,
            hyper.rollout_steps,
            &hyper.safety,
        );
        let objective = if hyper.anchor_per_iteration {
            RoaObjective::new(&batch, f_pi, &eval, f_pi, hyper)
        } else {
            RoaObjective::new(&batch, f_pi, &prev_eval, prev_f, hyper)
        };

        let mut net = est.net.clone();
        let mut loss_start = f64::NAN;
        let mut loss_end = objective.loss(&eval);
        for step in 0..hyper.sgd_steps {
            let (loss, grad) = objective.loss_and_grad(&net);
            if !loss.is_finite() {
                return Err(Error::NonFinite { what: "estimation loss", step });
            }
            if !grad.is_finite() {
                return Err(Error::NonFinite { what: "estimation gradient", step });
            }
            if step == 0 {
                loss_start = loss;
            }
            net.apply_sgd(&grad, hyper.lr);
        }
        if hyper.sgd_steps > 0 {
            loss_end = objective.loss(&net.evaluator());
        } else {
            loss_start = loss_end;
        }
        if !net.is_finite() || !loss_end.is_finite() {
            return Err(Error::NonFinite {
                what: "estimation parameters",
                step: hyper.sgd_steps,
            });
        }

        let search = line_search(&net, f_pi, grid)?;
        est = LevelSetEstimate { net, c: search.c };
        let record = GrowthRecord {
            iteration,
            c: est.c,
            estimated_fraction: search.cells as f64 / grid.len() as f64,
            loss_start,
            loss_end,
            n_in: objective.n_in(),
            n_out: objective.n_out(),
            fallback: sample.fallback,
        };
        on_iteration(&record, &est);
    }
    Ok(est)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_field(grid: &GridDomain, f: impl Fn(StateVec) -> StateVec) -> DecreaseField {
        let v = |x: StateVec| x.theta * x.theta + x.omega * x.omega;
        DecreaseField {
            values: grid.centers().map(v).collect(),
            deltas: grid.centers().map(|x| v(f(x)) - v(x)).collect(),
        }
    }

    #[test]
    fn contraction_is_limited_by_the_boundary_only() {
        let grid = GridDomain::default();
        let field = quadratic_field(&grid, |x| 0.5 * x);
        let search = line_search_level(&field.values, &field.deltas, &grid).unwrap();
        // oracle: smallest V over boundary cells
        let boundary_min = (0..grid.len())
            .filter(|i| grid.is_boundary(*i))
            .map(|i| field.values[i])
            .fold(f64::INFINITY, f64::min);
        assert_eq!(search.c, boundary_min);
        assert!(grid.is_boundary(search.blocking_cell.unwrap()));
    }

    #[test]
    fn expansion_gives_minimal_level() {
        let grid = GridDomain::default();
        let field = quadratic_field(&grid, |x| 2.0 * x);
        let search = line_search_level(&field.values, &field.deltas, &grid).unwrap();
        let exempt = grid.origin_cells();
        // everything but the exempt origin cells violates the decrease condition
        assert!(search.cells <= exempt.len());
        let min_non_exempt = (0..grid.len())
            .filter(|i| !exempt.contains(i))
            .map(|i| field.values[i])
            .fold(f64::INFINITY, f64::min);
        assert_eq!(search.c, min_non_exempt);
    }

    #[test]
    fn constant_candidate_is_degenerate() {
        let grid = GridDomain::pendulum(10, 10);
        let values = alloc::vec![1.0; grid.len()];
        let deltas = alloc::vec![-1.0; grid.len()];
        assert!(matches!(
            line_search_level(&values, &deltas, &grid),
            Err(Error::DegenerateCandidate { .. })
        ));
    }

    #[test]
    fn hyper_validation() {
        let mut h = RoaEstHyper::default();
        assert!(h.validate().is_ok());
        h.gamma = 0.5;
        assert!(h.validate().is_err());
        h = RoaEstHyper {
            beta: 1.5,
            ..Default::default()
        };
        assert!(h.validate().is_err());
    }
}
