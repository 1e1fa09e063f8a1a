//! Mixture sampling of initial states from level-set regions of the grid.
//!
//! A draw first picks a region with the mixture weight, then a uniformly
//! random cell of that region, then a uniformly jittered point inside the
//! cell. The jitter is retried a few times so the point itself stays in the
//! region; after that the cell center is used, which always qualifies.

use alloc::vec::Vec;

use rand::Rng;

use crate::dynamics::StateVec;
use crate::grid::GridDomain;
use crate::lyapunov_net::LyapunovEvaluator;

const JITTER_ATTEMPTS: usize = 8;

/// Cells of the sublevel set `S_c` and of the gap `S_{γc} \ S_c`, by center value.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LevelPartition {
    /// `V < c`
    pub interior: Vec<usize>,
    /// `c < V < γ·c`
    pub gap: Vec<usize>,
}

pub fn level_partition(values: &[f64], c: f64, gamma: f64) -> LevelPartition {
    let mut part = LevelPartition::default();
    let hi = gamma * c;
    for (i, v) in values.iter().enumerate() {
        if *v < c {
            part.interior.push(i);
        } else if *v > c && *v < hi {
            part.gap.push(i);
        }
    }
    part
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Region {
    Gap,
    Interior,
    Domain,
}

/// Drawn states, the cell each came from, and which mixture component drew it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MixtureSample {
    pub states: Vec<StateVec>,
    pub cells: Vec<usize>,
    pub regions: Vec<Region>,
    /// a requested region was empty and the draw fell back to another one
    pub fallback: bool,
}

impl MixtureSample {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

struct Level<'a> {
    eval: &'a LyapunovEvaluator,
    c: f64,
    gamma: f64,
}

impl Level<'_> {
    fn admits(&self, region: Region, x: StateVec) -> bool {
        match region {
            Region::Domain => true,
            Region::Interior => self.eval.value(x) < self.c,
            Region::Gap => {
                let v = self.eval.value(x);
                v > self.c && v < self.gamma * self.c
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn draw<R: Rng + ?Sized>(
    first: (Region, &[usize]),
    second: (Region, &[usize]),
    beta: f64,
    n: usize,
    grid: &GridDomain,
    level: &Level<'_>,
    rng: &mut R,
    fallback: bool,
) -> MixtureSample {
    let mut out = MixtureSample {
        states: Vec::with_capacity(n),
        cells: Vec::with_capacity(n),
        regions: Vec::with_capacity(n),
        fallback,
    };
    for _ in 0..n {
        let pick_first = rng.gen::<f64>() < beta;
        let (region, cells) = if pick_first { first } else { second };
        let cell = cells[rng.gen_range(0..cells.len())];
        let mut x = grid.center(cell);
        for _ in 0..JITTER_ATTEMPTS {
            let cand = grid.point_in_cell(cell, rng.gen::<f64>(), rng.gen::<f64>());
            if level.admits(region, cand) {
                x = cand;
                break;
            }
        }
        out.states.push(x);
        out.cells.push(cell);
        out.regions.push(region);
    }
    out
}

/// `β·U(G) + (1 − β)·U(D)` with `G = S_{γc}(V) \ S_c(V)`.
///
/// An empty gap falls back to sampling the whole domain.
#[allow(clippy::too_many_arguments)]
pub fn sample_mixture<R: Rng + ?Sized>(
    eval: &LyapunovEvaluator,
    values: &[f64],
    c: f64,
    gamma: f64,
    beta: f64,
    n: usize,
    grid: &GridDomain,
    rng: &mut R,
) -> MixtureSample {
    let part = level_partition(values, c, gamma);
    let all: Vec<usize> = (0..grid.len()).collect();
    let level = Level { eval, c, gamma };
    if part.gap.is_empty() {
        return draw(
            (Region::Domain, &all),
            (Region::Domain, &all),
            1.0,
            n,
            grid,
            &level,
            rng,
            true,
        );
    }
    draw(
        (Region::Gap, &part.gap),
        (Region::Domain, &all),
        beta,
        n,
        grid,
        &level,
        rng,
        false,
    )
}

/// `β·U(G) + (1 − β)·U(S_c)`.
///
/// An empty gap falls back to the interior and vice versa; if both are
/// empty the whole domain is used.
#[allow(clippy::too_many_arguments)]
pub fn sample_gap_interior<R: Rng + ?Sized>(
    eval: &LyapunovEvaluator,
    values: &[f64],
    c: f64,
    gamma: f64,
    beta: f64,
    n: usize,
    grid: &GridDomain,
    rng: &mut R,
) -> MixtureSample {
    let part = level_partition(values, c, gamma);
    let level = Level { eval, c, gamma };
    match (part.gap.is_empty(), part.interior.is_empty()) {
        (false, false) => draw(
            (Region::Gap, &part.gap),
            (Region::Interior, &part.interior),
            beta,
            n,
            grid,
            &level,
            rng,
            false,
        ),
        (true, false) => draw(
            (Region::Interior, &part.interior),
            (Region::Interior, &part.interior),
            1.0,
            n,
            grid,
            &level,
            rng,
            true,
        ),
        (false, true) => draw(
            (Region::Gap, &part.gap),
            (Region::Gap, &part.gap),
            1.0,
            n,
            grid,
            &level,
            rng,
            true,
        ),
        (true, true) => {
            let all: Vec<usize> = (0..grid.len()).collect();
            draw(
                (Region::Domain, &all),
                (Region::Domain, &all),
                1.0,
                n,
                grid,
                &level,
                rng,
                true,
            )
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_is_strict_on_both_sides() {
        let values = [0.5, 1.0, 1.5, 4.0, 5.0];
        let p = level_partition(&values, 1.0, 4.0);
        assert_eq!(p.interior, [0]);
        assert_eq!(p.gap, [2]);
    }
}
