//! Grid images and mask tables.
//!
//! Pixel `(col, row)` is cell `row·n_theta + col`: θ runs left to right and ω
//! top to bottom from its lower bound, one pixel per cell.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use redesign_core::{GridDomain, RoaMask};

pub type Rgb = [u8; 3];

pub const BACKGROUND: Rgb = [255, 255, 255];
pub const ORACLE_BOUNDARY: Rgb = [0, 160, 0];
pub const ESTIMATE: Rgb = [40, 80, 220];
pub const GAP: Rgb = [250, 170, 200];

/// Cells of the layered panel: the gap ring, the estimate drawn over it, and
/// the oracle boundary drawn over both.
pub struct Overlay<'a> {
    pub oracle: Option<&'a RoaMask>,
    pub estimate: Option<&'a RoaMask>,
    pub gap: Option<&'a RoaMask>,
}

/// Cells of `mask` with a 4-neighbour outside it or on the grid edge.
pub fn boundary_cells(mask: &RoaMask) -> Vec<bool> {
    let (nt, no) = mask.dims();
    let cells = mask.cells();
    (0..cells.len())
        .map(|i| {
            if !cells[i] {
                return false;
            }
            let (col, row) = (i % nt, i / nt);
            if col == 0 || row == 0 || col + 1 == nt || row + 1 == no {
                return true;
            }
            !(cells[i - 1] && cells[i + 1] && cells[i - nt] && cells[i + nt])
        })
        .collect()
}

pub fn overlay_pixels(grid: &GridDomain, layers: &Overlay<'_>) -> Result<Vec<Rgb>> {
    let mut pixels = vec![BACKGROUND; grid.len()];
    let dims = (grid.n_theta, grid.n_omega);
    for m in [layers.oracle, layers.estimate, layers.gap].into_iter().flatten() {
        ensure!(m.dims() == dims, "mask of {:?} cells on a {:?} grid", m.dims(), dims);
    }
    if let Some(gap) = layers.gap {
        paint(&mut pixels, gap.cells(), GAP);
    }
    if let Some(est) = layers.estimate {
        paint(&mut pixels, est.cells(), ESTIMATE);
    }
    if let Some(oracle) = layers.oracle {
        paint(&mut pixels, &boundary_cells(oracle), ORACLE_BOUNDARY);
    }
    Ok(pixels)
}

fn paint(pixels: &mut [Rgb], cells: &[bool], color: Rgb) {
    for (p, on) in pixels.iter_mut().zip(cells) {
        if *on {
            *p = color;
        }
    }
}

/// Binary portable pixmap.
pub fn ppm_bytes(width: usize, height: usize, pixels: &[Rgb]) -> Vec<u8> {
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    for p in pixels {
        out.extend_from_slice(p);
    }
    out
}

/// Binary portable graymap, one byte per cell: 255 inside, 0 outside.
pub fn pgm_bytes(mask: &RoaMask) -> Vec<u8> {
    let (w, h) = mask.dims();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(mask.cells().iter().map(|b| if *b { 255u8 } else { 0 }));
    out
}

pub fn write_overlay(path: &Path, grid: &GridDomain, layers: &Overlay<'_>) -> Result<()> {
    let pixels = overlay_pixels(grid, layers)?;
    write(path, &ppm_bytes(grid.n_theta, grid.n_omega, &pixels))
}

/// Scalar field as a heatmap from dark blue (minimum) to yellow (maximum).
pub fn write_scalar(path: &Path, grid: &GridDomain, values: &[f64]) -> Result<()> {
    ensure!(values.len() == grid.len(), "{} values on a {}-cell grid", values.len(), grid.len());
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let pixels: Vec<Rgb> = values
        .iter()
        .map(|v| {
            let t = ((v - lo) / span).clamp(0.0, 1.0);
            [(255.0 * t) as u8, (40.0 + 180.0 * t) as u8, (140.0 * (1.0 - t)) as u8]
        })
        .collect();
    write(path, &ppm_bytes(grid.n_theta, grid.n_omega, &pixels))
}

pub fn write_mask_pgm(path: &Path, mask: &RoaMask) -> Result<()> {
    write(path, &pgm_bytes(mask))
}

/// `col,row,theta,omega,inside` per cell.
pub fn mask_csv(grid: &GridDomain, mask: &RoaMask) -> String {
    let mut out = String::from("col,row,theta,omega,inside\n");
    for i in 0..grid.len() {
        let (col, row) = grid.coords(i);
        let x = grid.center(i);
        let _ = writeln!(out, "{col},{row},{},{},{}", x.theta, x.omega, u8::from(mask.get(i)));
    }
    out
}

pub fn write_mask_csv(path: &Path, grid: &GridDomain, mask: &RoaMask) -> Result<()> {
    write(path, mask_csv(grid, mask).as_bytes())
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}
