//! Switched affine systems and their sampled flows.
//!
//! Each mode is an affine vector field `ẋ = A x + b`. The flow over a
//! duration `τ` is evaluated in closed form through the exponential of the
//! augmented matrix
//!
//! ```text
//! exp(τ [A b; 0 0]) = [Φ(τ) c(τ); 0 1],    x(τ) = Φ(τ) x0 + c(τ)
//! ```
//!
//! so no integrator error enters the abstraction budget. A classical RK4
//! integrator is kept alongside as a cross-check and as the entry point for
//! non-affine fields.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One-based mode index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeId(usize);

impl ModeId {
    pub fn new(index: usize) -> Option<Self> {
        (index >= 1).then_some(Self(index))
    }

    pub fn from_zero_based(index: usize) -> Self {
        Self(index + 1)
    }

    pub fn index(self) -> usize {
        self.0
    }

    pub fn zero_based(self) -> usize {
        self.0 - 1
    }
}

impl std::fmt::Display for ModeId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Affine dynamics `ẋ = A x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineMode {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl AffineMode {
    pub fn new(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::InvalidInput(format!(
                "mode matrix must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if a.nrows() == 0 {
            return Err(Error::InvalidInput("mode matrix is empty".into()));
        }
        if b.len() != a.nrows() {
            return Err(Error::Dimension {
                expected: a.nrows(),
                got: b.len(),
            });
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("mode entries must be finite".into()));
        }
        Ok(Self { a, b })
    }

    pub fn from_rows(rows: &[Vec<f64>], b: &[f64]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidInput("mode matrix rows must have equal length n".into()));
        }
        let a = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(a, DVector::from_column_slice(b))
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn field(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b
    }

    /// Equilibrium `-A⁻¹ b`, if `A` is invertible.
    pub fn equilibrium(&self) -> Option<DVector<f64>> {
        self.a.clone().lu().solve(&(-&self.b))
    }

    /// Precomputed exact flow map over the duration `tau`.
    pub fn step_map(&self, tau: f64) -> Result<AffineStepMap> {
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::InvalidInput(format!("duration must be finite and >= 0, got {tau}")));
        }
        let n = self.dim();
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&(&self.a * tau));
        aug.view_mut((0, n), (n, 1)).copy_from(&(&self.b * tau));
        let e = aug.exp();
        Ok(AffineStepMap {
            phi: e.view((0, 0), (n, n)).into_owned(),
            offset: e.view((0, n), (n, 1)).column(0).into_owned(),
        })
    }
}

/// The affine map `x ↦ Φ x + c` realizing one mode's flow over a fixed duration.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineStepMap {
    pub phi: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl AffineStepMap {
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.phi * x + &self.offset
    }

    /// Allocation-free application on slices; `out` must have length n.
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let n = self.offset.len();
        for i in 0..n {
            let mut acc = self.offset[i];
            for j in 0..n {
                acc += self.phi[(i, j)] * x[j];
            }
            out[i] = acc;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwitchedSystem {
    n: usize,
    modes: Vec<AffineMode>,
}

impl SwitchedSystem {
    /// Mode sets are stored as 32-bit masks downstream, hence the cap.
    pub const MAX_MODES: usize = 32;

    pub fn new(modes: Vec<AffineMode>) -> Result<Self> {
        let Some(first) = modes.first() else {
            return Err(Error::InvalidInput("a switched system needs at least one mode".into()));
        };
        if modes.len() > Self::MAX_MODES {
            return Err(Error::InvalidInput(format!(
                "at most {} modes are supported, got {}",
                Self::MAX_MODES,
                modes.len()
            )));
        }
        let n = first.dim();
        if let Some(bad) = modes.iter().find(|m| m.dim() != n) {
            return Err(Error::Dimension {
                expected: n,
                got: bad.dim(),
            });
        }
        Ok(Self { n, modes })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn modes(&self) -> &[AffineMode] {
        &self.modes
    }

    pub fn mode(&self, id: ModeId) -> Result<&AffineMode> {
        self.modes
            .get(id.zero_based())
            .ok_or(Error::UnknownMode(id.index()))
    }

    pub fn mode_ids(&self) -> impl Iterator<Item = ModeId> {
        (0..self.modes.len()).map(ModeId::from_zero_based)
    }

    /// Exact step maps for every mode over one sampling period.
    pub fn step_maps(&self, tau_s: f64) -> Result<Vec<AffineStepMap>> {
        self.modes.iter().map(|m| m.step_map(tau_s)).collect()
    }
}

/// Sample-aligned switching signal: one mode per sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledSwitchingSignal {
    pub sequence: Vec<ModeId>,
    pub tau_s: f64,
}

impl SampledSwitchingSignal {
    pub fn new(sequence: Vec<ModeId>, tau_s: f64) -> Result<Self> {
        if !(tau_s > 0.0 && tau_s.is_finite()) {
            return Err(Error::InvalidInput(format!("sampling period must be > 0, got {tau_s}")));
        }
        Ok(Self { sequence, tau_s })
    }

    pub fn constant(mode: ModeId, periods: usize, tau_s: f64) -> Result<Self> {
        Self::new(vec![mode; periods], tau_s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub signal: SampledSwitchingSignal,
}

fn check_state(x: &DVector<f64>, n: usize) -> Result<()> {
    if x.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: x.len(),
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("state must be finite".into()));
    }
    Ok(())
}

/// Closed-form solution of `ẋ = A x + b` at time `tau`.
pub fn exact_affine_flow(mode: &AffineMode, x0: &DVector<f64>, tau: f64) -> Result<DVector<f64>> {
    check_state(x0, mode.dim())?;
    Ok(mode.step_map(tau)?.apply(x0))
}

/// Fixed-step classical Runge-Kutta integration.
pub fn rk4_flow(mode: &AffineMode, x0: &DVector<f64>, tau: f64, substeps: usize) -> Result<DVector<f64>> {
    check_state(x0, mode.dim())?;
    if !(tau >= 0.0 && tau.is_finite()) {
        return Err(Error::InvalidInput(format!("duration must be finite and >= 0, got {tau}")));
    }
    if substeps == 0 {
        return Err(Error::InvalidInput("substeps must be >= 1".into()));
    }
    let h = tau / substeps as f64;
    let mut x = x0.clone();
    for _ in 0..substeps {
        let k1 = mode.field(&x);
        let k2 = mode.field(&(&x + &k1 * (h / 2.0)));
        let k3 = mode.field(&(&x + &k2 * (h / 2.0)));
        let k4 = mode.field(&(&x + &k3 * h));
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(x)
}

/// Trajectory sampled at `k·τ_s` under a sample-aligned signal.
pub fn simulate_switched(
    system: &SwitchedSystem,
    x0: &DVector<f64>,
    signal: &SampledSwitchingSignal,
) -> Result<Trajectory> {
    check_state(x0, system.dim())?;
    let maps = system.step_maps(signal.tau_s)?;
    let mut states = Vec::with_capacity(signal.sequence.len() + 1);
    states.push(x0.clone());
    for &p in &signal.sequence {
        system.mode(p)?;
        let next = maps[p.zero_based()].apply(states.last().expect("nonempty"));
        states.push(next);
    }
    let times = (0..states.len()).map(|k| k as f64 * signal.tau_s).collect();
    Ok(Trajectory {
        times,
        states,
        signal: signal.clone(),
    })
}
