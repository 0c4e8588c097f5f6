//! The uniform lattice `[Rⁿ]_η` with per-axis spacing `2η/√n`, restricted to
//! an axis-aligned box.
//!
//! Lattice points are identified by their integer keys; floating-point
//! coordinates are only ever derived from keys, never used as identities.

use crate::error::{Error, Result};

/// Region membership tolerance, as a fraction of the lattice spacing.
pub const BOUNDARY_TOL: f64 = 1e-9;
/// Relative slack on the `≤ η` ball test so exact geometric ties are kept.
const BALL_REL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    n: usize,
    eta: f64,
    spacing: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LatticePoint(pub Vec<i64>);

impl LatticePoint {
    pub fn keys(&self) -> &[i64] {
        &self.0
    }
}

impl Lattice {
    pub fn new(n: usize, eta: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidInput("lattice dimension must be >= 1".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidInput(format!("eta must be > 0, got {eta}")));
        }
        Ok(Self {
            n,
            eta,
            spacing: 2.0 * eta / (n as f64).sqrt(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn embed(&self, q: &LatticePoint) -> Vec<f64> {
        q.0.iter().map(|&k| k as f64 * self.spacing).collect()
    }

    /// Nearest key along one axis; exact half-way ties go to the smaller key.
    fn nearest_key(&self, x: f64) -> i64 {
        (x / self.spacing - 0.5).ceil() as i64
    }

    pub fn quantize(&self, x: &[f64]) -> LatticePoint {
        debug_assert_eq!(x.len(), self.n);
        LatticePoint(x.iter().map(|&xi| self.nearest_key(xi)).collect())
    }

    /// Half-width of the integer window that contains every point of the
    /// ball of radius `radius` around a point quantized to the window center.
    fn window(&self, radius: f64) -> i64 {
        (radius / self.spacing).ceil() as i64
    }

    /// Calls `f` for every key within Euclidean distance `radius` of `y`, in
    /// lexicographic key order.
    pub fn for_each_ball_key(&self, y: &[f64], radius: f64, key: &mut Vec<i64>, mut f: impl FnMut(&[i64])) {
        let n = self.n;
        let w = self.window(radius);
        let limit = radius * radius * (1.0 + BALL_REL_TOL);
        let center: Vec<i64> = y.iter().map(|&yi| self.nearest_key(yi)).collect();
        key.clear();
        key.extend(center.iter().map(|c| c - w));
        loop {
            let mut d2 = 0.0;
            for i in 0..n {
                let d = key[i] as f64 * self.spacing - y[i];
                d2 += d * d;
            }
            if d2 <= limit {
                f(key);
            }
            // odometer, last axis fastest
            let mut axis = n;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if key[axis] < center[axis] + w {
                    key[axis] += 1;
                    break;
                }
                key[axis] = center[axis] - w;
            }
        }
    }

    /// All lattice points within `η` of `y`, sorted by key. Never empty.
    pub fn ball_points(&self, y: &[f64]) -> Vec<LatticePoint> {
        self.ball_points_with_radius(y, self.eta)
    }

    /// Ball query with an inflated radius, e.g. `η + e` for inexact flows.
    pub fn ball_points_with_radius(&self, y: &[f64], radius: f64) -> Vec<LatticePoint> {
        let mut out = Vec::new();
        let mut key = Vec::with_capacity(self.n);
        self.for_each_ball_key(y, radius, &mut key, |k| out.push(LatticePoint(k.to_vec())));
        out
    }
}

/// Axis-aligned box `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl Region {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidInput("box bounds must be nonempty and of equal length".into()));
        }
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("box bounds must be finite".into()));
        }
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return Err(Error::InvalidInput(format!("box lower corner {lo:?} exceeds upper corner {hi:?}")));
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    /// Closed-box membership with absolute slack `tol`.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&l, &h))| v >= l - tol && v <= h + tol)
    }

    /// Open-box membership, shrunk by `tol`.
    pub fn interior_contains(&self, x: &[f64], tol: f64) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&l, &h))| v > l + tol && v < h - tol)
    }

    pub fn inflate(&self, by: f64) -> Region {
        Region {
            lo: self.lo.iter().map(|v| v - by).collect(),
            hi: self.hi.iter().map(|v| v + by).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Region) -> bool {
        self.lo.iter().zip(&other.lo).all(|(a, b)| a >= b) && self.hi.iter().zip(&other.hi).all(|(a, b)| a <= b)
    }
}

/// Lattice points inside a region, numbered in lexicographic key order.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionGrid {
    lattice: Lattice,
    region: Region,
    kmin: Vec<i64>,
    counts: Vec<usize>,
    strides: Vec<usize>,
    len: usize,
}

impl RegionGrid {
    pub fn new(lattice: Lattice, region: Region) -> Result<Self> {
        if region.dim() != lattice.dim() {
            return Err(Error::Dimension {
                expected: lattice.dim(),
                got: region.dim(),
            });
        }
        let s = lattice.spacing();
        let mut kmin = Vec::with_capacity(lattice.dim());
        let mut counts = Vec::with_capacity(lattice.dim());
        for (&l, &h) in region.lo().iter().zip(region.hi()) {
            let lo = (l / s - BOUNDARY_TOL).ceil() as i64;
            let hi = (h / s + BOUNDARY_TOL).floor() as i64;
            kmin.push(lo);
            counts.push(if hi >= lo { (hi - lo + 1) as usize } else { 0 });
        }
        let mut strides = vec![1usize; counts.len()];
        for i in (0..counts.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1]
                .checked_mul(counts[i + 1])
                .ok_or_else(|| Error::InvalidInput("lattice region too large".into()))?;
        }
        let len = counts
            .iter()
            .try_fold(1usize, |acc, &c| acc.checked_mul(c))
            .ok_or_else(|| Error::InvalidInput("lattice region too large".into()))?;
        if len > u32::MAX as usize {
            return Err(Error::InvalidInput(format!("{len} lattice points exceed the supported maximum")));
        }
        Ok(Self {
            lattice,
            region,
            kmin,
            counts,
            strides,
            len,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Number of lattice points per axis.
    pub fn shape(&self) -> &[usize] {
        &self.counts
    }

    pub fn kmin(&self) -> &[i64] {
        &self.kmin
    }

    pub fn cell_of(&self, key: &[i64]) -> Option<usize> {
        let mut id = 0usize;
        for i in 0..key.len() {
            let off = key[i] - self.kmin[i];
            if off < 0 || off as usize >= self.counts[i] {
                return None;
            }
            id += off as usize * self.strides[i];
        }
        Some(id)
    }

    pub fn key_into(&self, cell: usize, key: &mut [i64]) {
        let mut rest = cell;
        for i in 0..self.counts.len() {
            key[i] = self.kmin[i] + (rest / self.strides[i]) as i64;
            rest %= self.strides[i];
        }
    }

    pub fn point(&self, cell: usize) -> LatticePoint {
        let mut key = vec![0; self.lattice.dim()];
        self.key_into(cell, &mut key);
        LatticePoint(key)
    }

    pub fn embed_into(&self, cell: usize, out: &mut [f64]) {
        let mut rest = cell;
        for i in 0..self.counts.len() {
            let k = self.kmin[i] + (rest / self.strides[i]) as i64;
            rest %= self.strides[i];
            out[i] = k as f64 * self.lattice.spacing();
        }
    }

    pub fn embed(&self, cell: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.lattice.dim()];
        self.embed_into(cell, &mut out);
        out
    }

    /// Region membership with the lattice boundary tolerance.
    pub fn region_contains(&self, x: &[f64]) -> bool {
        self.region.contains(x, BOUNDARY_TOL * self.lattice.spacing())
    }

    pub fn quantize_cell(&self, x: &[f64]) -> Option<usize> {
        self.cell_of(self.lattice.quantize(x).keys())
    }
}
