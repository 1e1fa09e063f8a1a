use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use redesign_core::dynamics::pendulum_lqr_gain;
use redesign_core::lyapunov_net::{pretrain_quadratic, PretrainConfig};
use redesign_core::policy_updater::{
    bptt, bptt_grad, policy_loss, sample_policy_batch, signal_diagnostics, update_policy,
    DifferentiableStep, ScalarField,
};
use redesign_core::roa_estimator::line_search;
use redesign_core::*;

/// `V(x) = θ`, enough to place endpoints at chosen levels.
struct ThetaField;

impl ScalarField for ThetaField {
    fn value(&self, x: StateVec) -> f64 {
        x.theta
    }
    fn value_and_grad(&self, x: StateVec) -> (f64, [f64; 2]) {
        (x.theta, [1.0, 0.0])
    }
}

struct SquaredNorm;

impl ScalarField for SquaredNorm {
    fn value(&self, x: StateVec) -> f64 {
        x.theta * x.theta + x.omega * x.omega
    }
    fn value_and_grad(&self, x: StateVec) -> (f64, [f64; 2]) {
        (self.value(x), [2.0 * x.theta, 2.0 * x.omega])
    }
}

struct Halving;

impl DiscreteMap for Halving {
    fn step(&self, x: StateVec) -> StateVec {
        0.5 * x
    }
}

impl DifferentiableStep for Halving {
    fn jacobian_state(&self, _: StateVec) -> [[f64; 2]; 2] {
        [[0.5, 0.0], [0.0, 0.5]]
    }
    fn jacobian_psi(&self, _: StateVec) -> [[f64; 4]; 2] {
        [[0.0; 4]; 2]
    }
}

fn lqr_policy() -> (SatPolicy, PendulumParams) {
    let p = PendulumParams::default();
    let k = pendulum_lqr_gain(&p).unwrap();
    (SatPolicy::new(k, SatParams::symmetric(0.2), 0.1).unwrap(), p)
}

fn pretrained_estimate() -> LevelSetEstimate {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = PdLyapunovNet::default_architecture(&mut rng);
    let cfg = PretrainConfig {
        steps: 1_000,
        ..Default::default()
    };
    pretrain_quadratic(&mut net, &GridDomain::default(), &cfg, &mut rng).unwrap();
    let (pol, p) = lqr_policy();
    let c = line_search(&net, &closed_loop(pol, p), &GridDomain::default())
        .unwrap()
        .c;
    LevelSetEstimate { net, c }
}

#[test]
fn loss_weights_endpoints_by_side() {
    let (pol, p) = lqr_policy();
    let f = closed_loop(pol, p);
    let safety = SafetyBox::DEFAULT;
    let inside = StateVec::new(0.5, 0.0);
    let outside = StateVec::new(2.0, 0.0);
    let l = |x0s: &[StateVec]| policy_loss(&f, &ThetaField, 1.0, x0s, 0, 10.0, &safety).value;
    assert_eq!(l(&[inside]), 0.5);
    assert_eq!(l(&[outside]), 20.0);
    assert_eq!(l(&[inside, outside]), 20.5);
}

#[test]
fn zero_horizon_has_no_gradient() {
    let (pol, p) = lqr_policy();
    let x0s = [StateVec::new(0.5, -1.0), StateVec::new(-1.0, 2.0)];
    let g = bptt_grad(&pol, &p, &SquaredNorm, 1.0, &x0s, 0, 10.0, &SafetyBox::DEFAULT);
    assert_eq!(g, [0.0; 4]);
}

#[test]
fn origin_gives_a_vanishing_signal() {
    let (pol, p) = lqr_policy();
    let est = pretrained_estimate();
    let eval = est.net.evaluator();
    let f = closed_loop(pol, p);
    let d = signal_diagnostics(&f, &eval, est.c, &[StateVec::ORIGIN], 10, 10.0, &SafetyBox::DEFAULT);
    assert!(d.grad_norm_final < 1e-12);
    assert!(d.vanishing);
    let g = bptt_grad(&pol, &p, &eval, est.c, &[StateVec::ORIGIN], 10, 10.0, &SafetyBox::DEFAULT);
    assert!(g.iter().all(|g| g.abs() < 1e-12));
}

// ∂x_T/∂x_k = 0.5^{T−k}·I for the linear contraction.
#[test]
fn contraction_sensitivities_decay_geometrically() {
    let t = 8;
    let d = signal_diagnostics(
        &Halving,
        &SquaredNorm,
        1.0,
        &[StateVec::new(0.3, -0.2), StateVec::new(1.0, 1.0)],
        t,
        10.0,
        &SafetyBox::DEFAULT,
    );
    assert_eq!(d.per_step_jacobian_norms.len(), t + 1);
    for (k, n) in d.per_step_jacobian_norms.iter().enumerate() {
        let expected = 0.5f64.powi((t - k) as i32);
        assert!((n - expected).abs() < 1e-12, "k={k}: {n}");
    }
}

#[test]
fn psi_norm_matches_the_gradient() {
    let (pol, p) = lqr_policy();
    let est = pretrained_estimate();
    let eval = est.net.evaluator();
    let f = closed_loop(pol, p);
    let x0s = [StateVec::new(0.8, -1.0), StateVec::new(-1.2, 2.5), StateVec::new(0.1, 4.0)];
    let r = bptt(&f, &eval, est.c, &x0s, 10, 10.0, &SafetyBox::DEFAULT);
    let norm = r.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    assert!((r.diagnostics.grad_norm_psi - norm).abs() < 1e-12);
    let g = bptt_grad(&pol, &p, &eval, est.c, &x0s, 10, 10.0, &SafetyBox::DEFAULT);
    assert_eq!(g, r.grad);
}

fn passes_near_kink(pol: &SatPolicy, p: &PendulumParams, x0: StateVec, steps: usize) -> bool {
    let f = closed_loop(*pol, *p);
    let mut x = x0;
    for _ in 0..=steps {
        let z = pol.feedback(x);
        if (z - pol.psi.a).abs() < 1e-3 || (z - pol.psi.b).abs() < 1e-3 {
            return true;
        }
        x = f.step(x);
    }
    false
}

// Finite differences of the loss itself over each entry of ψ, with the
// endpoint weights held on one side of c.
#[test]
fn gradient_matches_central_differences() {
    let (base, p) = lqr_policy();
    let est = pretrained_estimate();
    let eval = est.net.evaluator();
    let safety = SafetyBox::DEFAULT;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let h = 1e-6;
    let steps = 10;
    let mut checked = 0;
    while checked < 20 {
        let psi = SatParams {
            a: rng.gen_range(0.1..0.6),
            b: rng.gen_range(-0.6..-0.1),
            m_a: rng.gen_range(0.0..0.5),
            m_b: rng.gen_range(0.0..0.5),
            trainable: [true; 4],
        };
        let pol = SatPolicy { psi, ..base };
        let x0 = StateVec::new(rng.gen_range(-1.0..1.0), rng.gen_range(-3.0..3.0));
        if passes_near_kink(&pol, &p, x0, steps) {
            continue;
        }
        let c = if checked % 2 == 0 { 1e9 } else { 0.0 };
        let g = bptt_grad(&pol, &p, &eval, c, &[x0], steps, 10.0, &safety);
        for i in 0..4 {
            let loss = |s: f64| {
                let mut q = pol;
                let mut arr = q.psi.to_array();
                arr[i] += s;
                q.psi.set_array(arr);
                policy_loss(&closed_loop(q, p), &eval, c, &[x0], steps, 10.0, &safety).value
            };
            let fd = (loss(h) - loss(-h)) / (2.0 * h);
            let scale = fd.abs().max(g[i].abs());
            if scale > 1e-8 {
                assert!((fd - g[i]).abs() / scale < 1e-4, "entry {i}: {fd} vs {}", g[i]);
            }
        }
        checked += 1;
    }
}

#[test]
fn zero_steps_leave_the_policy_unchanged() {
    let (pol, p) = lqr_policy();
    let est = pretrained_estimate();
    let hyper = PolicyUpdHyper {
        sgd_steps: 0,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = update_policy(&pol, &est, &p, &hyper, &GridDomain::default(), &mut rng).unwrap();
    assert_eq!(out.policy, pol);
}

#[test]
fn phase_moves_stay_within_the_crop_radius() {
    let (pol, p) = lqr_policy();
    let est = pretrained_estimate();
    let hyper = PolicyUpdHyper {
        sgd_steps: 50,
        lr: 1.0,
        n_samples: 40,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let out = update_policy(&pol, &est, &p, &hyper, &GridDomain::default(), &mut rng).unwrap();
    let (o, n) = (pol.psi.to_array(), out.policy.psi.to_array());
    for i in 0..4 {
        assert!((n[i] - o[i]).abs() <= pol.crop_radius + 1e-12);
    }
    assert!(out.loss_end.value.is_finite());
}

#[test]
fn batch_endpoints_of_the_mixture() {
    let est = pretrained_estimate();
    let eval = est.net.evaluator();
    let grid = GridDomain::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (beta, inside) in [(0.0, true), (1.0, false)] {
        let hyper = PolicyUpdHyper {
            beta,
            n_samples: 500,
            ..Default::default()
        };
        let s = sample_policy_batch(&est, &hyper, &grid, &mut rng);
        assert!(!s.fallback);
        for x in &s.states {
            let v = eval.value(*x);
            if inside {
                assert!(v < est.c);
            } else {
                assert!(v > est.c && v < hyper.gamma * est.c);
            }
        }
    }
}

#[test]
fn invalid_hyperparameters_are_rejected() {
    let (pol, p) = lqr_policy();
    let est = pretrained_estimate();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for hyper in [
        PolicyUpdHyper { gamma: 1.0, ..Default::default() },
        PolicyUpdHyper { beta: 1.5, ..Default::default() },
        PolicyUpdHyper { lambda_u: 0.5, ..Default::default() },
    ] {
        assert!(update_policy(&pol, &est, &p, &hyper, &GridDomain::default(), &mut rng).is_err());
    }
}
