//! Metrics log: one CSV row per growth iteration and per policy update.
//!
//! The file starts with a `# lyapunov-redesign metrics v1` line, then a header
//! row. Wall-clock times go to a `timing.csv` sidecar so the metrics file is a
//! pure function of the configuration and seed.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const SCHEMA_LINE: &str = "# lyapunov-redesign metrics v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    /// pretrained candidate and the initial policy, phase 0
    Initial,
    Growth,
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub kind: RowKind,
    pub phase: usize,
    /// growth iteration within the phase, 0 on policy and initial rows
    pub iteration: usize,
    pub c: f64,
    pub estimated_fraction: f64,
    /// oracle fraction of the policy in force after this row
    pub oracle_fraction: Option<f64>,
    pub loss_start: f64,
    pub loss_end: f64,
    pub n_in: usize,
    pub n_out: usize,
    pub fallback: bool,
    pub a: f64,
    pub b: f64,
    pub m_a: f64,
    pub m_b: f64,
    pub grad_norm_final: Option<f64>,
    pub grad_norm_psi: Option<f64>,
    /// `‖∂x_T/∂x_0‖` averaged over the batch
    pub jacobian_norm_first: Option<f64>,
    pub vanishing: Option<bool>,
    pub diverged: Option<usize>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

#[derive(Serialize)]
struct TimingRow {
    kind: RowKind,
    phase: usize,
    iteration: usize,
    wall_seconds: f64,
}

/// Append-only writer that flushes after every row.
pub struct MetricsWriter {
    rows: csv::Writer<File>,
    timing: csv::Writer<File>,
    log: Vec<MetricsRow>,
}

impl MetricsWriter {
    pub fn create(dir: &Path) -> Result<Self> {
        let path = dir.join("metrics.csv");
        let mut file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        writeln!(file, "{SCHEMA_LINE}")?;
        let timing_path = dir.join("timing.csv");
        let timing = File::create(&timing_path).with_context(|| format!("creating {}", timing_path.display()))?;
        Ok(Self {
            rows: csv::Writer::from_writer(file),
            timing: csv::Writer::from_writer(timing),
            log: Vec::new(),
        })
    }

    pub fn push(&mut self, row: MetricsRow) -> Result<()> {
        self.rows.serialize(&row)?;
        self.rows.flush()?;
        self.timing.serialize(TimingRow {
            kind: row.kind,
            phase: row.phase,
            iteration: row.iteration,
            wall_seconds: row.wall_seconds,
        })?;
        self.timing.flush()?;
        self.log.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.log
    }

    pub fn into_rows(self) -> Vec<MetricsRow> {
        self.log
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut reader = BufReader::new(file);
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != SCHEMA_LINE {
        bail!("{}: not a v1 metrics file (first line `{}`)", path.display(), first.trim_end());
    }
    let mut csv = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for (i, row) in csv.deserialize().enumerate() {
        let row: MetricsRow = row.with_context(|| format!("{}: data row {}", path.display(), i + 1))?;
        rows.push(row);
    }
    Ok(rows)
}

/// Number of strict decreases in a sequence.
pub fn decreasing_steps(values: &[f64]) -> usize {
    values.windows(2).filter(|w| w[1] < w[0]).count()
}

/// Estimated fraction after every growth iteration, preceded by the initial
/// estimate.
pub fn estimated_trace(rows: &[MetricsRow]) -> Vec<f64> {
    rows.iter()
        .filter(|r| matches!(r.kind, RowKind::Initial | RowKind::Growth))
        .map(|r| r.estimated_fraction)
        .collect()
}

/// Oracle fraction of the initial policy and after every policy update.
pub fn oracle_trace(rows: &[MetricsRow]) -> Vec<f64> {
    rows.iter()
        .filter(|r| matches!(r.kind, RowKind::Initial | RowKind::Policy))
        .filter_map(|r| r.oracle_fraction)
        .collect()
}

/// Level value at the end of each estimation phase, phase 1 first.
pub fn phase_levels(rows: &[MetricsRow]) -> Vec<f64> {
    let mut levels: Vec<(usize, f64)> = Vec::new();
    for r in rows.iter().filter(|r| r.kind == RowKind::Growth) {
        match levels.last_mut() {
            Some((p, c)) if *p == r.phase => *c = r.c,
            _ => levels.push((r.phase, r.c)),
        }
    }
    levels.into_iter().map(|(_, c)| c).collect()
}
