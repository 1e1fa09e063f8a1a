//! The full redesign loop and its artifacts.
//!
//! ```text
//! pretrain V ≈ 0.1‖x‖², line search under π_0, oracle of π_0
//! for n = 1..=phases:
//!     grow the estimate under π_{n−1}   (M growth iterations, N = N_0 + (n−1)·ΔN)
//!     update the policy against it       -> π_n, oracle of π_n
//! ```
//!
//! Output directory layout:
//!
//! ```text
//! config.cfg            the effective configuration
//! metrics.csv           see [`crate::metrics`]
//! timing.csv            wall-clock seconds per metrics row
//! checkpoints/          v_pretrain.bin, v_phaseNN.bin (network and level)
//! heatmaps/             v_pretrain.ppm, initial.ppm, phaseNN.ppm
//! masks/                oracle_initial.pgm, oracle_phaseNN.pgm (+ .csv)
//! ```
//!
//! Every file is written as soon as it is known, so a failed run leaves the
//! artifacts of the phases it completed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use redesign_core::dynamics::pendulum_lqr_gain;
use redesign_core::lyapunov_net::{grid_values, pretrain_quadratic, PretrainReport};
use redesign_core::policy_updater::update_policy;
use redesign_core::roa_estimator::{estimate_roa, line_search, soundness_violations};
use redesign_core::roa_oracle::{converges, OracleConfig};
use redesign_core::{
    closed_loop, ClosedLoop, GridDomain, LevelSetEstimate, PdLyapunovNet, RoaMask, SatPolicy,
};

use crate::checkpoint;
use crate::config::RedesignConfig;
use crate::image::{self, Overlay};
use crate::metrics::{phase_levels, MetricsRow, MetricsWriter, RowKind};

/// Oracle classification with cells spread over the rayon pool.
pub fn par_true_roa(f: &ClosedLoop, grid: &GridDomain, cfg: &OracleConfig) -> RoaMask {
    let cells: Vec<bool> = (0..grid.len())
        .into_par_iter()
        .map(|i| converges(f, grid.center(i), cfg))
        .collect();
    RoaMask::new(grid, cells).expect("one flag per cell")
}

/// LQR gain of the configured pendulum behind the configured saturation.
pub fn initial_policy(cfg: &RedesignConfig) -> Result<SatPolicy> {
    let k = pendulum_lqr_gain(&cfg.pendulum).context("LQR design")?;
    Ok(SatPolicy::new(k, cfg.sat, cfg.crop_radius)?)
}

/// Cells with `c ≤ V < γc`.
pub fn gap_mask(est: &LevelSetEstimate, gamma: f64, grid: &GridDomain) -> RoaMask {
    let values = grid_values(&est.net.evaluator(), grid);
    RoaMask::from_fn(grid, |i| values[i] >= est.c && values[i] < gamma * est.c)
}

/// State of the loop at the end of one estimation phase.
#[derive(Debug, Clone)]
pub struct PhaseSnapshot {
    pub phase: usize,
    pub estimate: LevelSetEstimate,
    /// policy the estimate was grown under
    pub policy: SatPolicy,
    /// oracle of `policy`
    pub oracle: RoaMask,
    /// cells of the estimate (origin cells aside) where `V` does not decrease
    pub soundness_violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub pretrain: PretrainReport,
    /// the line-searched pretrained candidate under the initial policy
    pub initial: PhaseSnapshot,
    pub phases: Vec<PhaseSnapshot>,
    pub final_policy: SatPolicy,
    pub final_oracle: RoaMask,
    pub warnings: Vec<String>,
}

struct Dirs {
    checkpoints: PathBuf,
    heatmaps: PathBuf,
    masks: PathBuf,
}

impl Dirs {
    fn create(out: &Path) -> Result<Self> {
        let d = Self {
            checkpoints: out.join("checkpoints"),
            heatmaps: out.join("heatmaps"),
            masks: out.join("masks"),
        };
        for p in [&d.checkpoints, &d.heatmaps, &d.masks] {
            fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
        }
        Ok(d)
    }
}

fn warn(warnings: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    warnings.push(msg);
}

/// Pretrain the candidate and line-search its level under `f`.
pub fn pretrained_estimate(
    cfg: &RedesignConfig,
    f: &ClosedLoop,
    rng: &mut ChaCha8Rng,
) -> Result<(LevelSetEstimate, PretrainReport)> {
    let mut net = PdLyapunovNet::default_architecture(rng);
    let report = pretrain_quadratic(&mut net, &cfg.grid, &cfg.pretrain, rng).context("pretraining")?;
    let c = line_search(&net, f, &cfg.grid).context("initial line search")?.c;
    Ok((LevelSetEstimate { net, c }, report))
}

fn base_row(kind: RowKind, phase: usize, pol: &SatPolicy, started: Instant) -> MetricsRow {
    MetricsRow {
        kind,
        phase,
        iteration: 0,
        c: 0.0,
        estimated_fraction: 0.0,
        oracle_fraction: None,
        loss_start: 0.0,
        loss_end: 0.0,
        n_in: 0,
        n_out: 0,
        fallback: false,
        a: pol.psi.a,
        b: pol.psi.b,
        m_a: pol.psi.m_a,
        m_b: pol.psi.m_b,
        grad_norm_final: None,
        grad_norm_psi: None,
        jacobian_norm_first: None,
        vanishing: None,
        diverged: None,
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

pub fn run_redesign(cfg: &RedesignConfig, out: &Path) -> Result<RunOutput> {
    let started = Instant::now();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("config.cfg"), cfg.dump()).context("writing config.cfg")?;
    let dirs = Dirs::create(out)?;
    let mut metrics = MetricsWriter::create(out)?;
    let mut warnings = Vec::new();
    let grid = &cfg.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut policy = initial_policy(cfg)?;
    let mut f = closed_loop(policy, cfg.pendulum);
    let (mut est, pretrain) = pretrained_estimate(cfg, &f, &mut rng)?;
    log::info!(
        "pretrained: grid mse {:.3e} -> {:.3e}, initial level {:.4e}",
        pretrain.initial_mse,
        pretrain.final_mse,
        est.c
    );
    checkpoint::save(&dirs.checkpoints.join("v_pretrain.bin"), &est)?;
    image::write_scalar(
        &dirs.heatmaps.join("v_pretrain.ppm"),
        grid,
        &grid_values(&est.net.evaluator(), grid),
    )?;

    let mut oracle = par_true_roa(&f, grid, &cfg.oracle);
    image::write_mask_pgm(&dirs.masks.join("oracle_initial.pgm"), &oracle)?;
    image::write_mask_csv(&dirs.masks.join("oracle_initial.csv"), grid, &oracle)?;
    let initial = snapshot(0, &est, &policy, &oracle, &f, grid);
    write_panel(&dirs.heatmaps.join("initial.ppm"), &initial, cfg)?;
    metrics.push(MetricsRow {
        c: est.c,
        estimated_fraction: est.fraction(grid),
        oracle_fraction: Some(oracle.fraction()),
        ..base_row(RowKind::Initial, 0, &policy, started)
    })?;
    log::info!("initial oracle fraction {:.4}", oracle.fraction());

    let mut phases = Vec::with_capacity(cfg.phases);
    let mut prev_f = f;
    for n in 1..=cfg.phases {
        let hyper = cfg.roa_hyper(n);
        let mut write_err = None;
        let grown = estimate_roa(&est, &prev_f, &f, &hyper, grid, &mut rng, |r, e| {
            let row = MetricsRow {
                iteration: r.iteration,
                c: r.c,
                estimated_fraction: r.estimated_fraction,
                loss_start: r.loss_start,
                loss_end: r.loss_end,
                n_in: r.n_in,
                n_out: r.n_out,
                fallback: r.fallback,
                ..base_row(RowKind::Growth, n, &policy, started)
            };
            if write_err.is_none() {
                write_err = metrics.push(row).err();
            }
            log::debug!("phase {n} iteration {}: c {:.4e}, fraction {:.4}", r.iteration, r.c, e.fraction(grid));
        });
        if let Some(e) = write_err {
            return Err(e);
        }
        est = grown.with_context(|| format!("estimation phase {n}"))?;
        checkpoint::save(&dirs.checkpoints.join(format!("v_phase{n:02}.bin")), &est)?;
        let snap = snapshot(n, &est, &policy, &oracle, &f, grid);
        if snap.soundness_violations > 0 {
            warn(
                &mut warnings,
                format!("phase {n}: {} cells of the estimate without decrease", snap.soundness_violations),
            );
        }
        write_panel(&dirs.heatmaps.join(format!("phase{n:02}.ppm")), &snap, cfg)?;
        phases.push(snap);

        let update = update_policy(&policy, &est, &cfg.pendulum, &cfg.policy_hyper(n), grid, &mut rng)
            .with_context(|| format!("policy update {n}"))?;
        let d = &update.diagnostics;
        if d.vanishing {
            warn(
                &mut warnings,
                format!("phase {n}: vanishing policy learning signal (|dL/dx_T| = {:.3e})", d.grad_norm_final),
            );
        }
        prev_f = f;
        policy = update.policy;
        f = closed_loop(policy, cfg.pendulum);
        oracle = par_true_roa(&f, grid, &cfg.oracle);
        image::write_mask_pgm(&dirs.masks.join(format!("oracle_phase{n:02}.pgm")), &oracle)?;
        image::write_mask_csv(&dirs.masks.join(format!("oracle_phase{n:02}.csv")), grid, &oracle)?;
        metrics.push(MetricsRow {
            c: est.c,
            estimated_fraction: est.fraction(grid),
            oracle_fraction: Some(oracle.fraction()),
            loss_start: update.loss_start.value,
            loss_end: update.loss_end.value,
            n_in: update.loss_start.inside,
            n_out: update.loss_start.outside,
            fallback: update.fallback,
            grad_norm_final: Some(d.grad_norm_final),
            grad_norm_psi: Some(d.grad_norm_psi),
            jacobian_norm_first: d.per_step_jacobian_norms.first().copied(),
            vanishing: Some(d.vanishing),
            diverged: Some(d.diverged),
            ..base_row(RowKind::Policy, n, &policy, started)
        })?;
        log::info!(
            "phase {n}: level {:.4e}, estimated {:.4}, psi ({:.3}, {:.3}, {:.3}, {:.3}), oracle {:.4}",
            est.c,
            est.fraction(grid),
            policy.psi.a,
            policy.psi.b,
            policy.psi.m_a,
            policy.psi.m_b,
            oracle.fraction()
        );
    }

    let levels = phase_levels(metrics.rows());
    if let (Some(first), Some(last)) = (levels.first(), levels.last()) {
        let target = cfg.roa.c_bar;
        if levels.len() > 1 && !((last - target).abs() < (first - target).abs()) {
            warn(
                &mut warnings,
                format!("level did not approach {target}: c_1 = {first:.4e}, c_final = {last:.4e}"),
            );
        }
    }

    Ok(RunOutput {
        rows: metrics.into_rows(),
        pretrain,
        initial,
        phases,
        final_policy: policy,
        final_oracle: oracle,
        warnings,
    })
}

fn snapshot(
    phase: usize,
    est: &LevelSetEstimate,
    policy: &SatPolicy,
    oracle: &RoaMask,
    f: &ClosedLoop,
    grid: &GridDomain,
) -> PhaseSnapshot {
    PhaseSnapshot {
        phase,
        estimate: est.clone(),
        policy: *policy,
        oracle: oracle.clone(),
        soundness_violations: soundness_violations(est, f, grid).len(),
    }
}

fn write_panel(path: &Path, snap: &PhaseSnapshot, cfg: &RedesignConfig) -> Result<()> {
    let estimate = snap.estimate.mask(&cfg.grid);
    let gap = gap_mask(&snap.estimate, cfg.roa.gamma, &cfg.grid);
    image::write_overlay(
        path,
        &cfg.grid,
        &Overlay {
            oracle: Some(&snap.oracle),
            estimate: Some(&estimate),
            gap: Some(&gap),
        },
    )
}
