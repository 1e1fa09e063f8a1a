//! Flat `key = value` run configuration.
//!
//! Blank lines and everything after `#` are ignored. Every key is optional;
//! missing keys keep their defaults. [`RedesignConfig::dump`] writes every key
//! with its documentation and parses back to the same configuration.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use redesign_core::lyapunov_net::PretrainConfig;
use redesign_core::roa_oracle::OracleConfig;
use redesign_core::{GridDomain, PendulumParams, PolicyUpdHyper, RoaEstHyper, SatParams};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },

    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },

    #[error("line {line}: key `{key}` given twice (first on line {first})")]
    Duplicate { line: usize, key: String, first: usize },

    #[error("line {line}: cannot parse `{value}` for `{key}` ({expected})")]
    Malformed {
        line: usize,
        key: String,
        value: String,
        expected: &'static str,
    },

    #[error("{}`{key}` {reason}", at_line(*.line))]
    Invalid {
        line: Option<usize>,
        key: &'static str,
        reason: String,
    },
}

fn at_line(line: Option<usize>) -> String {
    match line {
        Some(l) => format!("line {l}: "),
        None => String::new(),
    }
}

/// Which entries of the saturation are trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Variant {
    /// thresholds `a`, `b` trainable, slopes fixed
    Thresholds,
    /// slopes `m_a`, `m_b` trainable, thresholds fixed
    Slopes,
}

impl Variant {
    pub fn trainable(self) -> [bool; 4] {
        match self {
            Variant::Thresholds => [true, true, false, false],
            Variant::Slopes => [false, false, true, true],
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Thresholds => "thresholds",
            Variant::Slopes => "slopes",
        })
    }
}

impl FromStr for Variant {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "thresholds" => Ok(Variant::Thresholds),
            "slopes" => Ok(Variant::Slopes),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RedesignConfig {
    pub seed: u64,
    pub phases: usize,
    pub variant: Variant,
    /// `false` zeroes the monotonicity weight
    pub monot: bool,
    pub out_dir: PathBuf,
    pub pendulum: PendulumParams,
    pub grid: GridDomain,
    /// initial saturation; the trainable mask comes from `variant`
    pub sat: SatParams,
    pub crop_radius: f64,
    pub pretrain: PretrainConfig,
    /// samples per iteration in phase 1
    pub samples_initial: usize,
    /// added to the sample count after every policy update
    pub samples_increment: usize,
    /// `n_samples` is overwritten per phase
    pub roa: RoaEstHyper,
    /// `n_samples` is overwritten per phase
    pub policy: PolicyUpdHyper,
    pub oracle: OracleConfig,
}

impl Default for RedesignConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            phases: 20,
            variant: Variant::Thresholds,
            monot: true,
            out_dir: PathBuf::from("runs/default"),
            pendulum: PendulumParams::default(),
            grid: GridDomain::default(),
            sat: SatParams::symmetric(0.2),
            crop_radius: 0.1,
            pretrain: PretrainConfig::default(),
            samples_initial: 10,
            samples_increment: 10,
            roa: RoaEstHyper::default(),
            policy: PolicyUpdHyper::default(),
            oracle: OracleConfig::default(),
        };
        cfg.sync();
        cfg
    }
}

/// Typed access to one field of the configuration.
enum Slot<'a> {
    F64(&'a mut f64),
    Usize(&'a mut usize),
    U64(&'a mut u64),
    Bool(&'a mut bool),
    Variant(&'a mut Variant),
    Path(&'a mut PathBuf),
}

impl Slot<'_> {
    fn set(self, raw: &str) -> Result<(), &'static str> {
        match self {
            Slot::F64(v) => *v = raw.parse().ok().filter(|x: &f64| x.is_finite()).ok_or("finite number")?,
            Slot::Usize(v) => *v = raw.parse().map_err(|_| "non-negative integer")?,
            Slot::U64(v) => *v = raw.parse().map_err(|_| "non-negative integer")?,
            Slot::Bool(v) => *v = raw.parse().map_err(|_| "true or false")?,
            Slot::Variant(v) => *v = raw.parse().map_err(|_| "thresholds or slopes")?,
            Slot::Path(v) => {
                if raw.is_empty() {
                    return Err("non-empty path");
                }
                *v = PathBuf::from(raw)
            }
        }
        Ok(())
    }

    fn render(&self) -> String {
        match self {
            Slot::F64(v) => format!("{v:?}"),
            Slot::Usize(v) => v.to_string(),
            Slot::U64(v) => v.to_string(),
            Slot::Bool(v) => v.to_string(),
            Slot::Variant(v) => v.to_string(),
            Slot::Path(v) => v.display().to_string(),
        }
    }
}

macro_rules! keys {
    ($( $key:literal, $doc:literal, $kind:ident => |$c:ident| $field:expr; )*) => {
        /// Every accepted key with its one-line documentation, in dump order.
        pub const KEYS: &[(&str, &str)] = &[$(($key, $doc)),*];

        fn slot<'a>(cfg: &'a mut RedesignConfig, key: &str) -> Option<Slot<'a>> {
            match key {
                $($key => { let $c = cfg; Some(Slot::$kind(&mut $field)) })*
                _ => None,
            }
        }
    };
}

keys! {
    "seed", "seed of the run's single random stream", U64 => |c| c.seed;
    "phases", "policy updates (each preceded by an estimation phase)", Usize => |c| c.phases;
    "variant", "thresholds | slopes: which saturation entries are trained", Variant => |c| c.variant;
    "monot", "keep the monotonicity term (false sets its weight to zero)", Bool => |c| c.monot;
    "out_dir", "output directory", Path => |c| c.out_dir;
    "g", "gravity", F64 => |c| c.pendulum.g;
    "l", "pendulum length", F64 => |c| c.pendulum.l;
    "inertia", "mass times length squared", F64 => |c| c.pendulum.inertia;
    "mu_f", "friction coefficient", F64 => |c| c.pendulum.mu_f;
    "dt", "Euler step", F64 => |c| c.pendulum.dt;
    "n_theta", "grid cells along theta", Usize => |c| c.grid.n_theta;
    "n_omega", "grid cells along omega", Usize => |c| c.grid.n_omega;
    "sat_a", "initial upper threshold", F64 => |c| c.sat.a;
    "sat_b", "initial lower threshold", F64 => |c| c.sat.b;
    "sat_m_a", "initial upper slope", F64 => |c| c.sat.m_a;
    "sat_m_b", "initial lower slope", F64 => |c| c.sat.m_b;
    "crop_radius", "largest change of a policy parameter per update", F64 => |c| c.crop_radius;
    "pretrain_lr", "pretraining learning rate", F64 => |c| c.pretrain.lr;
    "pretrain_steps", "pretraining SGD steps", Usize => |c| c.pretrain.steps;
    "pretrain_batch", "grid cells per pretraining step", Usize => |c| c.pretrain.batch;
    "samples_initial", "samples per iteration in the first phase", Usize => |c| c.samples_initial;
    "samples_increment", "samples added after every policy update", Usize => |c| c.samples_increment;
    "gamma_r", "gap multiplier for estimation (> 1)", F64 => |c| c.roa.gamma;
    "beta_r", "gap weight of the estimation mixture, in [0, 1]", F64 => |c| c.roa.beta;
    "m_iterations", "growth iterations per estimation phase", Usize => |c| c.roa.iterations;
    "l_r", "labeling rollout length", Usize => |c| c.roa.rollout_steps;
    "lambda_roa", "weight of the decrease term", F64 => |c| c.roa.lambda_roa;
    "lambda_monot", "weight of the monotonicity term", F64 => |c| c.roa.lambda_monot;
    "lr_r", "estimation learning rate", F64 => |c| c.roa.lr;
    "sgd_steps_r", "SGD steps per growth iteration", Usize => |c| c.roa.sgd_steps;
    "c_bar", "target level of the classifier terms", F64 => |c| c.roa.c_bar;
    "hinged", "clip the classifier and decrease terms at zero", Bool => |c| c.roa.hinged;
    "mean_reduction", "average each label set instead of summing", Bool => |c| c.roa.mean_reduction;
    "anchor_per_iteration", "anchor monotonicity to the previous iteration instead of the phase start", Bool => |c| c.roa.anchor_per_iteration;
    "gamma_p", "gap multiplier for policy samples (> 1)", F64 => |c| c.policy.gamma;
    "beta_p", "gap weight of the policy mixture, in [0, 1]", F64 => |c| c.policy.beta;
    "l_p", "policy rollout length", Usize => |c| c.policy.rollout_steps;
    "lambda_u", "weight of endpoints outside the estimate (>= 1)", F64 => |c| c.policy.lambda_u;
    "lr_p", "policy learning rate", F64 => |c| c.policy.lr;
    "sgd_steps_p", "SGD steps per policy update", Usize => |c| c.policy.sgd_steps;
    "oracle_k_max", "oracle steps allowed to reach the ball", Usize => |c| c.oracle.k_max;
    "oracle_ball_radius", "oracle convergence radius", F64 => |c| c.oracle.ball_radius;
    "oracle_confirm_steps", "steps the oracle state must stay within twice the radius", Usize => |c| c.oracle.confirm_steps;
    "safety_theta", "rollouts beyond this |theta| count as divergent", F64 => |c| c.oracle.safety.theta_max;
    "safety_omega", "rollouts beyond this |omega| count as divergent", F64 => |c| c.oracle.safety.omega_max;
}

impl RedesignConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        let mut seen: HashMap<&'static str, usize> = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let Some((key, value)) = body.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.trim().to_string(),
                });
            };
            let (key, value) = (key.trim(), value.trim());
            let Some(&(name, _)) = KEYS.iter().find(|(k, _)| *k == key) else {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_string(),
                });
            };
            if let Some(&first) = seen.get(name) {
                return Err(ConfigError::Duplicate {
                    line,
                    key: key.to_string(),
                    first,
                });
            }
            seen.insert(name, line);
            let slot = slot(&mut cfg, name).expect("every listed key has a slot");
            slot.set(value).map_err(|expected| ConfigError::Malformed {
                line,
                key: key.to_string(),
                value: value.to_string(),
                expected,
            })?;
        }
        cfg.sync();
        cfg.validate().map_err(|(key, reason)| ConfigError::Invalid {
            line: seen.get(key).copied(),
            key,
            reason,
        })?;
        Ok(cfg)
    }

    /// Copy shared settings into the per-module structs.
    fn sync(&mut self) {
        self.sat.trainable = self.variant.trainable();
        self.roa.safety = self.oracle.safety;
        self.policy.safety = self.oracle.safety;
    }

    /// Every key, documented, in a form [`Self::parse`] reads back.
    pub fn dump(&self) -> String {
        let mut copy = self.clone();
        let mut out = String::from("# lyapunov-redesign configuration\n");
        for (key, doc) in KEYS {
            let value = slot(&mut copy, key).expect("every listed key has a slot").render();
            let _ = writeln!(out, "\n# {doc}\n{key} = {value}");
        }
        out
    }

    /// Estimation hyperparameters of phase `n` (1-based).
    pub fn roa_hyper(&self, n: usize) -> RoaEstHyper {
        RoaEstHyper {
            n_samples: self.samples(n),
            lambda_monot: if self.monot { self.roa.lambda_monot } else { 0.0 },
            ..self.roa
        }
    }

    /// Policy hyperparameters of phase `n` (1-based).
    pub fn policy_hyper(&self, n: usize) -> PolicyUpdHyper {
        PolicyUpdHyper {
            n_samples: self.samples(n),
            ..self.policy
        }
    }

    pub fn samples(&self, n: usize) -> usize {
        self.samples_initial + n.saturating_sub(1) * self.samples_increment
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self.sync();
        self
    }

    fn validate(&self) -> Result<(), (&'static str, String)> {
        let fail = |key: &'static str, reason: &str| Err((key, reason.to_string()));
        let positive = [
            ("g", self.pendulum.g),
            ("l", self.pendulum.l),
            ("inertia", self.pendulum.inertia),
            ("dt", self.pendulum.dt),
            ("crop_radius", self.crop_radius),
            ("pretrain_lr", self.pretrain.lr),
            ("lr_r", self.roa.lr),
            ("c_bar", self.roa.c_bar),
            ("lr_p", self.policy.lr),
            ("oracle_ball_radius", self.oracle.ball_radius),
            ("safety_theta", self.oracle.safety.theta_max),
            ("safety_omega", self.oracle.safety.omega_max),
        ];
        for (key, v) in positive {
            if !(v > 0.0) {
                return fail(key, "must be positive");
            }
        }
        let non_negative = [
            ("mu_f", self.pendulum.mu_f),
            ("sat_m_a", self.sat.m_a),
            ("sat_m_b", self.sat.m_b),
            ("lambda_roa", self.roa.lambda_roa),
            ("lambda_monot", self.roa.lambda_monot),
        ];
        for (key, v) in non_negative {
            if !(v >= 0.0) {
                return fail(key, "must not be negative");
            }
        }
        for (key, v) in [("gamma_r", self.roa.gamma), ("gamma_p", self.policy.gamma)] {
            if !(v > 1.0) {
                return fail(key, "must exceed 1");
            }
        }
        for (key, v) in [("beta_r", self.roa.beta), ("beta_p", self.policy.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return fail(key, "must lie in [0, 1]");
            }
        }
        if !(self.policy.lambda_u >= 1.0) {
            return fail("lambda_u", "must be at least 1");
        }
        if self.sat.b > self.sat.a {
            return fail("sat_b", "must not exceed sat_a");
        }
        let at_least_one = [
            ("n_theta", self.grid.n_theta),
            ("n_omega", self.grid.n_omega),
            ("pretrain_batch", self.pretrain.batch),
            ("samples_initial", self.samples_initial),
            ("l_r", self.roa.rollout_steps),
            ("oracle_k_max", self.oracle.k_max),
        ];
        for (key, v) in at_least_one {
            if v == 0 {
                return fail(key, "must be at least 1");
            }
        }
        Ok(())
    }
}
