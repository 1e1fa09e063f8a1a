//! Uniform cell grid over the working domain and boolean cell masks.
//!
//! Cells are indexed row-major with θ varying fastest:
//! `index = row · n_theta + col`, `row` counting up in ω.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::dynamics::StateVec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDomain {
    pub theta_min: f64,
    pub theta_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,
    pub n_theta: usize,
    pub n_omega: usize,
}

impl Default for GridDomain {
    /// `[−π/2, π/2] × [−2π, 2π]` split into 100×100 cells.
    fn default() -> Self {
        Self::pendulum(100, 100)
    }
}

impl GridDomain {
    pub fn pendulum(n_theta: usize, n_omega: usize) -> Self {
        Self {
            theta_min: -PI / 2.0,
            theta_max: PI / 2.0,
            omega_min: -2.0 * PI,
            omega_max: 2.0 * PI,
            n_theta,
            n_omega,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_theta == 0 || self.n_omega == 0 {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: "cell counts must be positive",
            });
        }
        if !(self.theta_max > self.theta_min && self.omega_max > self.omega_min) {
            return Err(Error::InvalidParameter {
                name: "grid",
                reason: "ranges must be non-empty",
            });
        }
        Ok(())
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n_theta * self.n_omega
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn d_theta(&self) -> f64 {
        (self.theta_max - self.theta_min) / self.n_theta as f64
    }

    #[inline]
    pub fn d_omega(&self) -> f64 {
        (self.omega_max - self.omega_min) / self.n_omega as f64
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.d_theta() * self.d_omega()
    }

    pub fn area(&self) -> f64 {
        (self.theta_max - self.theta_min) * (self.omega_max - self.omega_min)
    }

    /// `(col, row)` of a cell index.
    #[inline]
    pub fn coords(&self, index: usize) -> (usize, usize) {
        (index % self.n_theta, index / self.n_theta)
    }

    #[inline]
    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.n_theta + col
    }

    #[inline]
    pub fn center(&self, index: usize) -> StateVec {
        let (col, row) = self.coords(index);
        StateVec::new(
            self.theta_min + (col as f64 + 0.5) * self.d_theta(),
            self.omega_min + (row as f64 + 0.5) * self.d_omega(),
        )
    }

    pub fn centers(&self) -> impl Iterator<Item = StateVec> + '_ {
        (0..self.len()).map(move |i| self.center(i))
    }

    /// Whether the cell lies on the outer ring of the grid.
    #[inline]
    pub fn is_boundary(&self, index: usize) -> bool {
        let (col, row) = self.coords(index);
        col == 0 || row == 0 || col + 1 == self.n_theta || row + 1 == self.n_omega
    }

    pub fn contains(&self, x: StateVec) -> bool {
        (self.theta_min..=self.theta_max).contains(&x.theta)
            && (self.omega_min..=self.omega_max).contains(&x.omega)
    }

    /// Cell containing `x`, if inside the domain.
    pub fn cell_of(&self, x: StateVec) -> Option<usize> {
        if !self.contains(x) {
            return None;
        }
        let col = (((x.theta - self.theta_min) / self.d_theta()) as usize).min(self.n_theta - 1);
        let row = (((x.omega - self.omega_min) / self.d_omega()) as usize).min(self.n_omega - 1);
        Some(self.index(col, row))
    }

    /// Cells whose centers are nearest the origin. With an even cell count per
    /// axis the origin sits on a shared corner and four cells tie.
    pub fn origin_cells(&self) -> Vec<usize> {
        let norms: Vec<f64> = self.centers().map(StateVec::norm).collect();
        let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
        norms
            .iter()
            .enumerate()
            .filter(|(_, n)| **n <= min * (1.0 + 1e-9) + 1e-15)
            .map(|(i, _)| i)
            .collect()
    }

    /// A point uniformly distributed within cell `index` given two uniforms in `[0, 1)`.
    #[inline]
    pub fn point_in_cell(&self, index: usize, u_theta: f64, u_omega: f64) -> StateVec {
        let (col, row) = self.coords(index);
        StateVec::new(
            self.theta_min + (col as f64 + u_theta) * self.d_theta(),
            self.omega_min + (row as f64 + u_omega) * self.d_omega(),
        )
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_theta == other.n_theta && self.n_omega == other.n_omega
    }
}

/// One flag per grid cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoaMask {
    n_theta: usize,
    n_omega: usize,
    cells: Vec<bool>,
}

impl RoaMask {
    pub fn new(grid: &GridDomain, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != grid.len() {
            return Err(Error::GridMismatch {
                left_cells: grid.len(),
                right_cells: cells.len(),
            });
        }
        Ok(Self {
            n_theta: grid.n_theta,
            n_omega: grid.n_omega,
            cells,
        })
    }

    pub fn filled(grid: &GridDomain, value: bool) -> Self {
        Self {
            n_theta: grid.n_theta,
            n_omega: grid.n_omega,
            cells: vec![value; grid.len()],
        }
    }

    pub fn from_fn(grid: &GridDomain, mut f: impl FnMut(usize) -> bool) -> Self {
        Self {
            n_theta: grid.n_theta,
            n_omega: grid.n_omega,
            cells: (0..grid.len()).map(&mut f).collect(),
        }
    }

    #[inline]
    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    #[inline]
    pub fn get(&self, index: usize) -> bool {
        self.cells[index]
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.n_theta, self.n_omega)
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.count() as f64 / self.cells.len() as f64
    }

    /// Whether every set cell of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &Self) -> Result<bool> {
        self.check_same(other)?;
        Ok(self.cells.iter().zip(&other.cells).all(|(a, b)| !a || *b))
    }

    /// Cells set in `self` but not in `other`.
    pub fn difference_count(&self, other: &Self) -> Result<usize> {
        self.check_same(other)?;
        Ok(self
            .cells
            .iter()
            .zip(&other.cells)
            .filter(|(a, b)| **a && !**b)
            .count())
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::GridMismatch {
                left_cells: self.cells.len(),
                right_cells: other.cells.len(),
            });
        }
        Ok(())
    }
}

/// Fraction of grid cells set in `mask`.
pub fn mask_measure(mask: &RoaMask) -> f64 {
    mask.fraction()
}

/// Fraction of grid cells set in exactly one of the two masks.
pub fn sym_diff_measure(a: &RoaMask, b: &RoaMask) -> Result<f64> {
    a.check_same(b)?;
    let xor = a.cells.iter().zip(&b.cells).filter(|(x, y)| x != y).count();
    Ok(xor as f64 / a.cells.len() as f64)
}
