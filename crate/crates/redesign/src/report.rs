//! Figure tables re-derived from a metrics log alone.

use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};

use crate::metrics::{decreasing_steps, estimated_trace, oracle_trace, phase_levels, MetricsRow, RowKind};

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub phases: usize,
    pub initial_oracle: Option<f64>,
    pub final_oracle: Option<f64>,
    pub final_estimated: Option<f64>,
    /// strict decreases of the estimated fraction over growth iterations
    pub estimate_decreases: usize,
    pub first_level: Option<f64>,
    pub last_level: Option<f64>,
    pub final_psi: Option<[f64; 4]>,
}

pub fn summarize(rows: &[MetricsRow]) -> Summary {
    let oracle = oracle_trace(rows);
    let estimated = estimated_trace(rows);
    let levels = phase_levels(rows);
    Summary {
        phases: rows.iter().filter(|r| r.kind == RowKind::Policy).count(),
        initial_oracle: oracle.first().copied(),
        final_oracle: oracle.last().copied(),
        final_estimated: estimated.last().copied(),
        estimate_decreases: decreasing_steps(&estimated),
        first_level: levels.first().copied(),
        last_level: levels.last().copied(),
        final_psi: rows.last().map(|r| [r.a, r.b, r.m_a, r.m_b]),
    }
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        writeln!(f, "policy updates      {}", self.phases)?;
        writeln!(f, "oracle fraction     {} -> {}", opt(self.initial_oracle), opt(self.final_oracle))?;
        writeln!(f, "estimated fraction  {} ({} decreases)", opt(self.final_estimated), self.estimate_decreases)?;
        writeln!(f, "level c             {} -> {}", opt(self.first_level), opt(self.last_level))?;
        if let Some(p) = self.final_psi {
            write!(f, "psi (a, b, m_a, m_b) ({:.4}, {:.4}, {:.4}, {:.4})", p[0], p[1], p[2], p[3])?;
        }
        Ok(())
    }
}

/// Write `fractions.csv`, `levels.csv` and `psi.csv` into `dir`.
pub fn write_tables(rows: &[MetricsRow], dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut fractions = csv::Writer::from_path(dir.join("fractions.csv"))?;
    fractions.write_record(["step", "phase", "iteration", "estimated_fraction", "oracle_fraction"])?;
    let mut oracle = None;
    let mut step = 0;
    for r in rows {
        if r.oracle_fraction.is_some() {
            oracle = r.oracle_fraction;
        }
        if matches!(r.kind, RowKind::Initial | RowKind::Growth) {
            fractions.write_record([
                step.to_string(),
                r.phase.to_string(),
                r.iteration.to_string(),
                r.estimated_fraction.to_string(),
                oracle.map_or(String::new(), |o| o.to_string()),
            ])?;
            step += 1;
        }
    }
    fractions.flush()?;

    let mut levels = csv::Writer::from_path(dir.join("levels.csv"))?;
    levels.write_record(["phase", "c"])?;
    for (i, c) in phase_levels(rows).iter().enumerate() {
        levels.write_record([(i + 1).to_string(), c.to_string()])?;
    }
    levels.flush()?;

    let mut psi = csv::Writer::from_path(dir.join("psi.csv"))?;
    psi.write_record(["phase", "a", "b", "m_a", "m_b"])?;
    for r in rows.iter().filter(|r| matches!(r.kind, RowKind::Initial | RowKind::Policy)) {
        psi.write_record([r.phase.to_string(), r.a.to_string(), r.b.to_string(), r.m_a.to_string(), r.m_b.to_string()])?;
    }
    psi.flush()?;
    Ok(())
}
