//! Periodic cell grids and the ball/cell-set conventions shared by every module.
//!
//! Cells are stored row-major: axis 0 varies slowest, axis `d - 1` fastest.
//! A ball is the set of cells whose centers lie strictly inside the radius,
//! measured with the minimal-image distance on the torus.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    d: usize,
    n: usize,
}

impl Grid {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        if d == 0 || d > MAX_DIM {
            return config(format!("dimension must be in 1..={MAX_DIM}, got {d}"));
        }
        if n < 2 {
            return config(format!("cells_per_side must be at least 2, got {n}"));
        }
        if n.checked_pow(d as u32).is_none() {
            return config("grid too large");
        }
        Ok(Grid { d, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.d - 1 - axis) as u32)
    }

    #[inline]
    pub fn coord(&self, idx: usize, axis: usize) -> usize {
        (idx / self.stride(axis)) % self.n
    }

    pub fn coords(&self, idx: usize) -> [usize; MAX_DIM] {
        let mut c = [0; MAX_DIM];
        let mut rest = idx;
        for axis in (0..self.d).rev() {
            c[axis] = rest % self.n;
            rest /= self.n;
        }
        c
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords[..self.d]
            .iter()
            .fold(0, |acc, &c| acc * self.n + (c % self.n))
    }

    /// Cell index of an arbitrary integer lattice point, reduced mod `n`.
    pub fn wrap(&self, point: &[i64]) -> usize {
        let n = self.n as i64;
        point[..self.d]
            .iter()
            .fold(0, |acc, &c| acc * self.n + c.rem_euclid(n) as usize)
    }

    /// Neighbor of `idx` along `axis`, one step forward or backward.
    #[inline]
    pub fn step(&self, idx: usize, axis: usize, forward: bool) -> usize {
        let s = self.stride(axis);
        let c = (idx / s) % self.n;
        if forward {
            if c + 1 == self.n {
                idx - (self.n - 1) * s
            } else {
                idx + s
            }
        } else if c == 0 {
            idx + (self.n - 1) * s
        } else {
            idx - s
        }
    }

    /// Physical coordinates of the center of cell `idx` for spacing `h`.
    pub fn center(&self, idx: usize, h: f64) -> [f64; MAX_DIM] {
        let c = self.coords(idx);
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.d {
            x[axis] = (c[axis] as f64 + 0.5) * h;
        }
        x
    }

    /// Minimal-image distance between a cell center and a point, box side `n * h`.
    pub fn torus_distance(&self, idx: usize, point: &[f64], h: f64) -> f64 {
        let side = self.n as f64 * h;
        let x = self.center(idx, h);
        let mut s = 0.0;
        for axis in 0..self.d {
            let mut dx = (x[axis] - point[axis]).rem_euclid(side);
            if dx > 0.5 * side {
                dx = side - dx;
            }
            s += dx * dx;
        }
        s.sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Self {
        Ball { center, radius }
    }

    /// Ball centered at the center of a cell.
    pub fn around_cell(grid: &Grid, h: f64, cell: usize, radius: f64) -> Self {
        Ball {
            center: grid.center(cell, h)[..grid.dim()].to_vec(),
            radius,
        }
    }

    /// Ball centered at the middle of the box.
    pub fn box_centered(grid: &Grid, h: f64, radius: f64) -> Self {
        let mid = 0.5 * grid.n() as f64 * h;
        Ball {
            center: vec![mid; grid.dim()],
            radius,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Ball {
            center: self.center.clone(),
            radius: self.radius * factor,
        }
    }

    pub fn cells(&self, grid: &Grid, h: f64) -> Vec<usize> {
        (0..grid.len())
            .filter(|&i| grid.torus_distance(i, &self.center, h) < self.radius)
            .collect()
    }

    pub fn mask(&self, grid: &Grid, h: f64) -> Vec<bool> {
        (0..grid.len())
            .map(|i| grid.torus_distance(i, &self.center, h) < self.radius)
            .collect()
    }
}

/// Cell-average norm `(|B|^{-1} sum_B |u|^r)^{1/r}`; `r = inf` gives the max.
pub fn ball_norm(values: &[f64], cells: &[usize], r: f64) -> f64 {
    if cells.is_empty() {
        return 0.0;
    }
    if r.is_infinite() {
        return cells.iter().map(|&i| values[i].abs()).fold(0.0, f64::max);
    }
    let s: f64 = cells.iter().map(|&i| values[i].abs().powf(r)).sum();
    (s / cells.len() as f64).powf(1.0 / r)
}

/// Un-normalized norm `(h^d sum |u|^r)^{1/r}` over the listed cells.
pub fn volume_norm(values: &[f64], cells: &[usize], r: f64, cell_volume: f64) -> f64 {
    if r.is_infinite() {
        return cells.iter().map(|&i| values[i].abs()).fold(0.0, f64::max);
    }
    let s: f64 = cells.iter().map(|&i| values[i].abs().powf(r)).sum();
    (s * cell_volume).powf(1.0 / r)
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    slope.is_finite().then_some(slope)
}
