//! Positive-definite Lyapunov candidate `V(x) = ‖v(x)‖²`.
//!
//! `v` is a bias-free perceptron whose layers are `h ← tanh(W·h)` with
//! `W = [G1ᵀG1 + εI; G2]`. The top block is symmetric positive definite, so
//! every `W` has a trivial nullspace, `v(x) = 0` only at `x = 0`, and `V` is
//! positive definite by construction.
//!
//! Differentiation is reverse mode over the cached layer activations. Batch
//! losses accumulate `∂L/∂W` per layer and map it back to `(G1, G2)` once per
//! step with `∂L/∂G1 = G1·(M + Mᵀ)`, `M` the top block of `∂L/∂W`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dynamics::StateVec;
use crate::error::{Error, Result};
use crate::grid::GridDomain;
use crate::linalg::{dot, Mat};

pub const DEFAULT_EPS: f64 = 0.01;
pub const DEFAULT_WIDTHS: [usize; 4] = [2, 64, 64, 64];

/// Free parameters of one non-contracting layer.
#[derive(Debug, Clone, PartialEq)]
pub struct PdLayer {
    /// q × d_in
    pub g1: Mat,
    /// (d_out − d_in) × d_in
    pub g2: Mat,
    pub eps: f64,
}

impl PdLayer {
    pub fn new(g1: Mat, g2: Mat, eps: f64) -> Result<Self> {
        if g1.cols() != g2.cols() && g2.rows() > 0 {
            return Err(Error::ShapeMismatch {
                expected_rows: g2.rows(),
                expected_cols: g1.cols(),
                rows: g2.rows(),
                cols: g2.cols(),
            });
        }
        if g1.rows() == 0 {
            return Err(Error::InvalidParameter {
                name: "g1",
                reason: "needs at least one row",
            });
        }
        if !(eps > 0.0) {
            return Err(Error::InvalidParameter {
                name: "eps",
                reason: "must be positive",
            });
        }
        let g2 = if g2.rows() == 0 {
            Mat::zeros(0, g1.cols())
        } else {
            g2
        };
        Ok(Self { g1, g2, eps })
    }

    /// Entries i.i.d. uniform in `[−s, s]`, `s = 1/√d_in`, with `q = d_in`.
    pub fn random<R: Rng + ?Sized>(d_in: usize, d_out: usize, eps: f64, rng: &mut R) -> Result<Self> {
        if d_out < d_in {
            return Err(Error::InvalidParameter {
                name: "widths",
                reason: "layers must not contract (d_out >= d_in)",
            });
        }
        let s = 1.0 / libm::sqrt(d_in as f64);
        let mut fill = |rows: usize, cols: usize| {
            let mut m = Mat::zeros(rows, cols);
            for v in m.as_mut_slice() {
                *v = rng.gen_range(-s..=s);
            }
            m
        };
        let g1 = fill(d_in, d_in);
        let g2 = fill(d_out - d_in, d_in);
        Self::new(g1, g2, eps)
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.g1.cols()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.g1.cols() + self.g2.rows()
    }

    /// `W = [G1ᵀG1 + εI; G2]`.
    pub fn build_weight(&self) -> Mat {
        let d_in = self.input_dim();
        let top = self.g1.gram();
        let mut w = Mat::zeros(self.output_dim(), d_in);
        for i in 0..d_in {
            for j in 0..d_in {
                w[(i, j)] = top[(i, j)];
            }
            w[(i, i)] += self.eps;
        }
        for i in 0..self.g2.rows() {
            for j in 0..d_in {
                w[(d_in + i, j)] = self.g2[(i, j)];
            }
        }
        w
    }
}

/// Gradient with respect to every free parameter, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    /// `(∂/∂G1, ∂/∂G2)` per layer
    pub layers: Vec<(Mat, Mat)>,
}

impl ParamGrad {
    pub fn zeros_like(net: &PdLyapunovNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| {
                    (
                        Mat::zeros(l.g1.rows(), l.g1.cols()),
                        Mat::zeros(l.g2.rows(), l.g2.cols()),
                    )
                })
                .collect(),
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for ((a1, a2), (b1, b2)) in self.layers.iter_mut().zip(&other.layers) {
            a1.axpy(alpha, b1);
            a2.axpy(alpha, b2);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|(g1, g2)| g1.as_slice().iter().chain(g2.as_slice()).copied())
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(self.iter().map(|v| v * v).sum())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(f64::is_finite)
    }
}

/// Scalar output gradient with respect to the input and to all parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TapeGradient {
    pub d_input: [f64; 2],
    pub d_params: ParamGrad,
}

/// The trainable network.
#[derive(Debug, Clone, PartialEq)]
pub struct PdLyapunovNet {
    pub layers: Vec<PdLayer>,
}

impl PdLyapunovNet {
    pub fn new(layers: Vec<PdLayer>) -> Result<Self> {
        let Some(first) = layers.first() else {
            return Err(Error::InvalidParameter {
                name: "layers",
                reason: "network needs at least one layer",
            });
        };
        if first.input_dim() != 2 {
            return Err(Error::ShapeMismatch {
                expected_rows: first.g1.rows(),
                expected_cols: 2,
                rows: first.g1.rows(),
                cols: first.input_dim(),
            });
        }
        for pair in layers.windows(2) {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(Error::ShapeMismatch {
                    expected_rows: pair[1].g1.rows(),
                    expected_cols: pair[0].output_dim(),
                    rows: pair[1].g1.rows(),
                    cols: pair[1].input_dim(),
                });
            }
        }
        Ok(Self { layers })
    }

    /// Random network with the given widths (`widths[0]` must be 2).
    pub fn random<R: Rng + ?Sized>(widths: &[usize], eps: f64, rng: &mut R) -> Result<Self> {
        let layers = widths
            .windows(2)
            .map(|w| PdLayer::random(w[0], w[1], eps, rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(layers)
    }

    /// 2 → 64 → 64 → 64 with `ε = 0.01`.
    pub fn default_architecture<R: Rng + ?Sized>(rng: &mut R) -> Self {
        // cannot fail: the widths are non-contracting and start at 2
        Self::random(&DEFAULT_WIDTHS, DEFAULT_EPS, rng).expect("default architecture is valid")
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![2];
        w.extend(self.layers.iter().map(PdLayer::output_dim));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.g1.as_slice().len() + l.g2.as_slice().len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.g1.is_finite() && l.g2.is_finite())
    }

    /// Frozen evaluator with the effective weights built once.
    pub fn evaluator(&self) -> LyapunovEvaluator {
        LyapunovEvaluator::new(self.layers.iter().map(PdLayer::build_weight).collect())
    }

    pub fn value(&self, x: StateVec) -> f64 {
        self.evaluator().value(x)
    }

    /// Map accumulated `∂L/∂W` to `∂L/∂(G1, G2)`.
    pub fn weight_grad_to_params(&self, dw: &[Mat]) -> ParamGrad {
        let layers = self
            .layers
            .iter()
            .zip(dw)
            .map(|(layer, dw)| {
                let d_in = layer.input_dim();
                let mut sym = Mat::zeros(d_in, d_in);
                for i in 0..d_in {
                    for j in 0..d_in {
                        sym[(i, j)] = dw[(i, j)] + dw[(j, i)];
                    }
                }
                // dims agree by construction
                let dg1 = layer.g1.matmul(&sym).expect("g1 is q x d_in");
                let mut dg2 = Mat::zeros(layer.g2.rows(), d_in);
                for i in 0..layer.g2.rows() {
                    for j in 0..d_in {
                        dg2[(i, j)] = dw[(d_in + i, j)];
                    }
                }
                (dg1, dg2)
            })
            .collect();
        ParamGrad { layers }
    }

    /// `θ ← θ − lr · grad`.
    pub fn apply_sgd(&mut self, grad: &ParamGrad, lr: f64) {
        for (layer, (d1, d2)) in self.layers.iter_mut().zip(&grad.layers) {
            layer.g1.axpy(-lr, d1);
            layer.g2.axpy(-lr, d2);
        }
    }

    /// Add `alpha · direction` to the parameters (finite-difference probes).
    pub fn perturb(&mut self, direction: &ParamGrad, alpha: f64) {
        self.apply_sgd(direction, -alpha);
    }

    /// Zero accumulator for `∂L/∂W`.
    pub fn weight_grad_zeros(&self) -> Vec<Mat> {
        self.layers
            .iter()
            .map(|l| Mat::zeros(l.output_dim(), l.input_dim()))
            .collect()
    }
}

/// A frozen snapshot of the network ready for evaluation.
#[derive(Debug, Clone)]
pub struct LyapunovEvaluator {
    weights: Vec<Mat>,
    max_width: usize,
}

impl LyapunovEvaluator {
    fn new(weights: Vec<Mat>) -> Self {
        let max_width = weights.iter().map(Mat::rows).max().unwrap_or(2).max(2);
        Self { weights, max_width }
    }

    pub fn weights(&self) -> &[Mat] {
        &self.weights
    }

    /// Post-activation outputs of every layer; `acts[0]` is the input.
    fn forward(&self, x: StateVec) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.weights.len() + 1);
        acts.push(vec![x.theta, x.omega]);
        for w in &self.weights {
            let prev = &acts[acts.len() - 1];
            let mut h = vec![0.0; w.rows()];
            for (i, hi) in h.iter_mut().enumerate() {
                *hi = libm::tanh(dot(w.row(i), prev));
            }
            acts.push(h);
        }
        acts
    }

    /// `v(x)`.
    pub fn features(&self, x: StateVec) -> Vec<f64> {
        self.forward(x).pop().unwrap_or_default()
    }

    /// `V(x) = ‖v(x)‖²`.
    pub fn value(&self, x: StateVec) -> f64 {
        self.features(x).iter().map(|v| v * v).sum()
    }

    /// `V(x)` and `∇ₓV(x)`.
    pub fn value_and_grad_x(&self, x: StateVec) -> (f64, [f64; 2]) {
        let acts = self.forward(x);
        let (v, g) = self.backward(&acts, 1.0, None);
        (v, g)
    }

    pub fn grad_x(&self, x: StateVec) -> [f64; 2] {
        self.value_and_grad_x(x).1
    }

    /// Evaluate `V(x)` and add `weight · ∂V/∂W` into `dw`. Returns `V(x)` and
    /// `weight · ∇ₓV(x)`.
    pub fn accumulate(&self, x: StateVec, weight: f64, dw: &mut [Mat]) -> (f64, [f64; 2]) {
        self.accumulate_with(x, |_| weight, dw)
    }

    /// Like [`accumulate`](Self::accumulate) with the weight computed from
    /// `V(x)` after the forward pass.
    pub fn accumulate_with(
        &self,
        x: StateVec,
        weight: impl FnOnce(f64) -> f64,
        dw: &mut [Mat],
    ) -> (f64, [f64; 2]) {
        let acts = self.forward(x);
        let out = &acts[acts.len() - 1];
        let value: f64 = out.iter().map(|v| v * v).sum();
        let w = weight(value);
        if w == 0.0 {
            return (value, [0.0, 0.0]);
        }
        self.backward(&acts, w, Some(dw))
    }

    fn backward(&self, acts: &[Vec<f64>], weight: f64, mut dw: Option<&mut [Mat]>) -> (f64, [f64; 2]) {
        let out = &acts[acts.len() - 1];
        let value: f64 = out.iter().map(|v| v * v).sum();
        let mut g_h: Vec<f64> = out.iter().map(|h| 2.0 * weight * h).collect();
        let mut g_prev = vec![0.0; self.max_width];
        for l in (0..self.weights.len()).rev() {
            let h = &acts[l + 1];
            let g_a: Vec<f64> = g_h.iter().zip(h).map(|(g, h)| g * (1.0 - h * h)).collect();
            if let Some(dw) = dw.as_deref_mut() {
                dw[l].add_outer(1.0, &g_a, &acts[l]);
            }
            let w = &self.weights[l];
            let gp = &mut g_prev[..w.cols()];
            w.matvec_t_into(&g_a, gp);
            g_h.clear();
            g_h.extend_from_slice(gp);
        }
        (value, [g_h[0], g_h[1]])
    }
}

/// `V` and its gradient with respect to the input and every parameter.
pub fn grad_params(x: StateVec, net: &PdLyapunovNet) -> TapeGradient {
    let eval = net.evaluator();
    let mut dw = net.weight_grad_zeros();
    let (_, d_input) = eval.accumulate(x, 1.0, &mut dw);
    TapeGradient {
        d_input,
        d_params: net.weight_grad_to_params(&dw),
    }
}

pub fn lyapunov_value(x: StateVec, net: &PdLyapunovNet) -> f64 {
    net.value(x)
}

pub fn grad_x(x: StateVec, net: &PdLyapunovNet) -> [f64; 2] {
    net.evaluator().grad_x(x)
}

/// `V` at every grid cell center.
pub fn grid_values(eval: &LyapunovEvaluator, grid: &GridDomain) -> Vec<f64> {
    grid.centers().map(|x| eval.value(x)).collect()
}

/// Quadratic warm-start target `0.1·θ² + 0.1·ω²`.
#[inline]
pub fn quadratic_target(x: StateVec) -> f64 {
    0.1 * x.theta * x.theta + 0.1 * x.omega * x.omega
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub lr: f64,
    pub steps: usize,
    /// grid cells drawn (with replacement) per SGD step
    pub batch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            steps: 10_000,
            batch: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainReport {
    pub initial_mse: f64,
    pub final_mse: f64,
    /// Pearson correlation between `V` and the target over the grid
    pub correlation: f64,
}

/// Mean squared error of `V` against the quadratic target over all cell centers.
pub fn grid_mse(eval: &LyapunovEvaluator, grid: &GridDomain) -> f64 {
    let n = grid.len() as f64;
    grid.centers()
        .map(|x| {
            let e = eval.value(x) - quadratic_target(x);
            e * e
        })
        .sum::<f64>()
        / n
}

fn grid_correlation(eval: &LyapunovEvaluator, grid: &GridDomain) -> f64 {
    let pairs: Vec<(f64, f64)> = grid.centers().map(|x| (eval.value(x), quadratic_target(x))).collect();
    let n = pairs.len() as f64;
    let (mv, mt) = pairs
        .iter()
        .fold((0.0, 0.0), |(a, b), (v, t)| (a + v / n, b + t / n));
    let (mut cov, mut vv, mut vt) = (0.0, 0.0, 0.0);
    for (v, t) in &pairs {
        cov += (v - mv) * (t - mt);
        vv += (v - mv) * (v - mv);
        vt += (t - mt) * (t - mt);
    }
    if vv == 0.0 || vt == 0.0 {
        return 0.0;
    }
    cov / libm::sqrt(vv * vt)
}

const PRETRAIN_CHECK_EVERY: usize = 1_000;

/// Fit `V` to `0.1·θ² + 0.1·ω²` by minibatch SGD on grid cell centers.
pub fn pretrain_quadratic<R: Rng + ?Sized>(
    net: &mut PdLyapunovNet,
    grid: &GridDomain,
    cfg: &PretrainConfig,
    rng: &mut R,
) -> Result<PretrainReport> {
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidParameter {
            name: "pretrain_lr",
            reason: "must be positive",
        });
    }
    if cfg.batch == 0 {
        return Err(Error::InvalidParameter {
            name: "pretrain_batch",
            reason: "must be at least 1",
        });
    }
    let initial_mse = grid_mse(&net.evaluator(), grid);
    let mut dw = net.weight_grad_zeros();
    for step in 0..cfg.steps {
        let eval = net.evaluator();
        dw.iter_mut().for_each(|m| m.as_mut_slice().fill(0.0));
        let scale = 2.0 / cfg.batch as f64;
        for _ in 0..cfg.batch {
            let x = grid.center(rng.gen_range(0..grid.len()));
            let t = quadratic_target(x);
            eval.accumulate_with(x, |v| scale * (v - t), &mut dw);
        }
        let grad = net.weight_grad_to_params(&dw);
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                what: "pretraining gradient",
                step,
            });
        }
        net.apply_sgd(&grad, cfg.lr);
        if (step + 1) % PRETRAIN_CHECK_EVERY == 0 {
            let mse = grid_mse(&net.evaluator(), grid);
            if !mse.is_finite() || mse > 10.0 * initial_mse {
                return Err(Error::PretrainDiverged {
                    step,
                    mse,
                    initial_mse,
                });
            }
        }
    }
    let eval = net.evaluator();
    Ok(PretrainReport {
        initial_mse,
        final_mse: grid_mse(&eval, grid),
        correlation: grid_correlation(&eval, grid),
    })
}
