//! Finite symbolic models over the lattice restricted to a box `C`.
//!
//! Both the plain model and the dwell-time model share one spatial table:
//! for every lattice cell `q` and flow mode `p`, the cells of `C` within `η`
//! of the sampled flow endpoint `x(τ_s, q, p)`, plus a flag recording whether
//! that endpoint left `C`. The dwell-time model layers the mode/counter
//! bookkeeping on top of this table without duplicating it.
//!
//! Transition labels are *control actions*. In the plain model the action is
//! the mode applied during the step. In the dwell-time model the flow always
//! uses the state's current mode `p`; the action is the mode `p'` of the
//! successor state, i.e. whether to keep `p` or switch once the counter has
//! reached `N−1`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ModeId, SwitchedSystem};
use crate::error::{Error, Result};
use crate::lattice::{Lattice, LatticePoint, Region, RegionGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Common,
    /// Dwell time of `steps` sampling periods.
    Dwell { steps: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SymbolicState {
    Lattice(LatticePoint),
    Dwell {
        point: LatticePoint,
        mode: ModeId,
        counter: usize,
    },
}

impl SymbolicState {
    pub fn point(&self) -> &LatticePoint {
        match self {
            Self::Lattice(p) | Self::Dwell { point: p, .. } => p,
        }
    }
}

/// Decoded state id: lattice cell, zero-based mode, dwell counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateParts {
    pub cell: usize,
    pub mode: usize,
    pub counter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    /// Enabled (state, action) pairs that were counted.
    pub pairs: usize,
    /// Enabled pairs whose flow endpoint left the region.
    pub exit_pairs: usize,
}

/// How a flow endpoint leaving the region affects the pair `(q, p)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExitPolicy {
    /// The pair is flagged and never usable.
    #[default]
    Disqualify,
    /// Only the in-region ball points are kept; the pair stays usable when
    /// any remain. This drops the guarantee near the region boundary.
    Clip,
}

#[derive(Debug, Clone)]
pub struct SymbolicModel {
    kind: ModelKind,
    policy: ExitPolicy,
    grid: RegionGrid,
    modes: usize,
    tau_s: f64,
    /// CSR over `cell * modes + flow_mode`.
    succ_offsets: Vec<usize>,
    succ_cells: Vec<u32>,
    exits: Vec<bool>,
    /// Reverse CSR over `target_cell * modes + flow_mode`.
    pred_offsets: Vec<usize>,
    pred_cells: Vec<u32>,
}

struct CellRow {
    exits: Vec<bool>,
    lens: Vec<u32>,
    cells: Vec<u32>,
}

fn spatial_table(
    system: &SwitchedSystem,
    tau_s: f64,
    grid: &RegionGrid,
) -> Result<(Vec<usize>, Vec<u32>, Vec<bool>)> {
    let maps = system.step_maps(tau_s)?;
    let n = system.dim();
    let m = system.mode_count();
    let lattice = *grid.lattice();
    let rows: Vec<CellRow> = (0..grid.len())
        .into_par_iter()
        .map_init(
            || (vec![0.0; n], vec![0.0; n], Vec::with_capacity(n)),
            |(x, y, key), cell| {
                grid.embed_into(cell, x);
                let mut row = CellRow {
                    exits: Vec::with_capacity(m),
                    lens: Vec::with_capacity(m),
                    cells: Vec::new(),
                };
                for map in &maps {
                    map.apply_into(x, y);
                    row.exits.push(!grid.region_contains(y));
                    let before = row.cells.len();
                    lattice.for_each_ball_key(y, lattice.eta(), key, |k| {
                        if let Some(c) = grid.cell_of(k) {
                            row.cells.push(c as u32);
                        }
                    });
                    row.lens.push((row.cells.len() - before) as u32);
                }
                row
            },
        )
        .collect();
    let total: usize = rows.iter().map(|r| r.cells.len()).sum();
    let mut offsets = Vec::with_capacity(grid.len() * m + 1);
    let mut cells = Vec::with_capacity(total);
    let mut exits = Vec::with_capacity(grid.len() * m);
    offsets.push(0);
    for row in rows {
        let mut start = 0;
        for (len, exit) in row.lens.iter().zip(row.exits) {
            let len = *len as usize;
            cells.extend_from_slice(&row.cells[start..start + len]);
            start += len;
            offsets.push(cells.len());
            exits.push(exit);
        }
    }
    Ok((offsets, cells, exits))
}

fn reverse_table(cells: usize, modes: usize, offsets: &[usize], targets: &[u32]) -> (Vec<usize>, Vec<u32>) {
    let mut counts = vec![0usize; cells * modes + 1];
    for src in 0..cells {
        for p in 0..modes {
            let row = src * modes + p;
            for &t in &targets[offsets[row]..offsets[row + 1]] {
                counts[t as usize * modes + p + 1] += 1;
            }
        }
    }
    for i in 1..counts.len() {
        counts[i] += counts[i - 1];
    }
    let mut fill = counts.clone();
    let mut sources = vec![0u32; targets.len()];
    for src in 0..cells {
        for p in 0..modes {
            let row = src * modes + p;
            for &t in &targets[offsets[row]..offsets[row + 1]] {
                let slot = t as usize * modes + p;
                sources[fill[slot]] = src as u32;
                fill[slot] += 1;
            }
        }
    }
    (counts, sources)
}

fn validate(system: &SwitchedSystem, tau_s: f64, region: &Region) -> Result<()> {
    if !(tau_s > 0.0 && tau_s.is_finite()) {
        return Err(Error::InvalidInput(format!("sampling period must be > 0, got {tau_s}")));
    }
    if region.dim() != system.dim() {
        return Err(Error::Dimension {
            expected: system.dim(),
            got: region.dim(),
        });
    }
    Ok(())
}

fn build(system: &SwitchedSystem, tau_s: f64, eta: f64, region: &Region, kind: ModelKind) -> Result<SymbolicModel> {
    validate(system, tau_s, region)?;
    let grid = RegionGrid::new(Lattice::new(system.dim(), eta)?, region.clone())?;
    let m = system.mode_count();
    if let ModelKind::Dwell { steps } = kind {
        if steps == 0 {
            return Err(Error::InvalidInput("dwell steps must be >= 1".into()));
        }
        grid.len()
            .checked_mul(m * steps)
            .filter(|&s| s <= u32::MAX as usize)
            .ok_or_else(|| Error::InvalidInput("dwell model has too many states".into()))?;
    }
    let (succ_offsets, succ_cells, exits) = spatial_table(system, tau_s, &grid)?;
    let (pred_offsets, pred_cells) = reverse_table(grid.len(), m, &succ_offsets, &succ_cells);
    Ok(SymbolicModel {
        kind,
        policy: ExitPolicy::Disqualify,
        grid,
        modes: m,
        tau_s,
        succ_offsets,
        succ_cells,
        exits,
        pred_offsets,
        pred_cells,
    })
}

/// Symbolic model of the sampled switched system on `[Rⁿ]_η ∩ C`.
pub fn build_common_abstraction(
    system: &SwitchedSystem,
    tau_s: f64,
    eta: f64,
    region: &Region,
) -> Result<SymbolicModel> {
    build(system, tau_s, eta, region, ModelKind::Common)
}

/// Symbolic model of the switched system under a dwell time of `steps·τ_s`.
pub fn build_dwell_abstraction(
    system: &SwitchedSystem,
    tau_s: f64,
    steps: usize,
    eta: f64,
    region: &Region,
) -> Result<SymbolicModel> {
    build(system, tau_s, eta, region, ModelKind::Dwell { steps })
}

impl SymbolicModel {
    pub fn with_exit_policy(mut self, policy: ExitPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn exit_policy(&self) -> ExitPolicy {
        self.policy
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn grid(&self) -> &RegionGrid {
        &self.grid
    }

    pub fn lattice(&self) -> &Lattice {
        self.grid.lattice()
    }

    pub fn dim(&self) -> usize {
        self.grid.lattice().dim()
    }

    pub fn tau_s(&self) -> f64 {
        self.tau_s
    }

    pub fn mode_count(&self) -> usize {
        self.modes
    }

    pub fn labels(&self) -> Vec<ModeId> {
        (0..self.modes).map(ModeId::from_zero_based).collect()
    }

    /// Dwell counter range `N`; 1 for the plain model.
    pub fn dwell_steps(&self) -> usize {
        match self.kind {
            ModelKind::Common => 1,
            ModelKind::Dwell { steps } => steps,
        }
    }

    fn per_cell(&self) -> usize {
        match self.kind {
            ModelKind::Common => 1,
            ModelKind::Dwell { steps } => self.modes * steps,
        }
    }

    pub fn state_count(&self) -> usize {
        self.grid.len() * self.per_cell()
    }

    pub fn decode(&self, id: usize) -> StateParts {
        match self.kind {
            ModelKind::Common => StateParts {
                cell: id,
                mode: 0,
                counter: 0,
            },
            ModelKind::Dwell { steps } => StateParts {
                cell: id / (self.modes * steps),
                mode: (id / steps) % self.modes,
                counter: id % steps,
            },
        }
    }

    pub fn encode(&self, parts: StateParts) -> usize {
        match self.kind {
            ModelKind::Common => parts.cell,
            ModelKind::Dwell { steps } => (parts.cell * self.modes + parts.mode) * steps + parts.counter,
        }
    }

    pub fn symbolic_state(&self, id: usize) -> SymbolicState {
        let parts = self.decode(id);
        let point = self.grid.point(parts.cell);
        match self.kind {
            ModelKind::Common => SymbolicState::Lattice(point),
            ModelKind::Dwell { .. } => SymbolicState::Dwell {
                point,
                mode: ModeId::from_zero_based(parts.mode),
                counter: parts.counter,
            },
        }
    }

    pub fn state_id(&self, state: &SymbolicState) -> Option<usize> {
        let cell = self.grid.cell_of(state.point().keys())?;
        match (self.kind, state) {
            (ModelKind::Common, SymbolicState::Lattice(_)) => Some(cell),
            (ModelKind::Dwell { steps }, SymbolicState::Dwell { mode, counter, .. })
                if mode.zero_based() < self.modes && *counter < steps =>
            {
                Some(self.encode(StateParts {
                    cell,
                    mode: mode.zero_based(),
                    counter: *counter,
                }))
            }
            _ => None,
        }
    }

    pub fn output(&self, id: usize) -> Vec<f64> {
        self.grid.embed(self.decode(id).cell)
    }

    pub fn write_output(&self, id: usize, out: &mut [f64]) {
        self.grid.embed_into(self.decode(id).cell, out);
    }

    /// Initial states: every lattice state, with counter 0 in the dwell model.
    pub fn is_initial(&self, id: usize) -> bool {
        self.decode(id).counter == 0
    }

    pub fn initial_states(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.state_count()).filter(move |&s| self.is_initial(s))
    }

    /// Zero-based mode driving the flow when `action` is taken at `id`.
    pub fn flow_mode(&self, id: usize, action: usize) -> usize {
        match self.kind {
            ModelKind::Common => action,
            ModelKind::Dwell { .. } => self.decode(id).mode,
        }
    }

    /// Whether `action` is available at `id` (before the dwell time elapses
    /// only the current mode may be kept).
    pub fn enabled(&self, id: usize, action: usize) -> bool {
        if action >= self.modes {
            return false;
        }
        match self.kind {
            ModelKind::Common => true,
            ModelKind::Dwell { steps } => {
                let parts = self.decode(id);
                parts.counter == steps - 1 || action == parts.mode
            }
        }
    }

    /// The flow endpoint for this pair lies outside the region.
    pub fn endpoint_exits(&self, id: usize, action: usize) -> bool {
        let cell = self.decode(id).cell;
        self.exits[cell * self.modes + self.flow_mode(id, action)]
    }

    /// The pair is disqualified because its flow endpoint left the region.
    pub fn exit_flag(&self, id: usize, action: usize) -> bool {
        self.policy == ExitPolicy::Disqualify && self.endpoint_exits(id, action)
    }

    fn spatial(&self, cell: usize, flow_mode: usize) -> &[u32] {
        let row = cell * self.modes + flow_mode;
        &self.succ_cells[self.succ_offsets[row]..self.succ_offsets[row + 1]]
    }

    fn spatial_preds(&self, cell: usize, flow_mode: usize) -> &[u32] {
        let row = cell * self.modes + flow_mode;
        &self.pred_cells[self.pred_offsets[row]..self.pred_offsets[row + 1]]
    }

    /// Successor state ids of `(id, action)`, in increasing order. Empty when
    /// the action is disabled.
    pub fn successors(&self, id: usize, action: usize) -> impl Iterator<Item = usize> + '_ {
        let parts = self.decode(id);
        let enabled = self.enabled(id, action);
        let cells: &[u32] = if enabled {
            self.spatial(parts.cell, self.flow_mode(id, action))
        } else {
            &[]
        };
        let (mode, counter) = match self.kind {
            ModelKind::Common => (0, 0),
            ModelKind::Dwell { steps } => {
                if action != parts.mode {
                    (action, 0)
                } else {
                    (action, (parts.counter + 1).min(steps - 1))
                }
            }
        };
        cells.iter().map(move |&c| {
            self.encode(StateParts {
                cell: c as usize,
                mode,
                counter,
            })
        })
    }

    pub fn successor_count(&self, id: usize, action: usize) -> usize {
        if !self.enabled(id, action) {
            return 0;
        }
        self.spatial(self.decode(id).cell, self.flow_mode(id, action)).len()
    }

    /// Enabled, not exiting, with at least one successor.
    pub fn usable(&self, id: usize, action: usize) -> bool {
        self.enabled(id, action) && !self.exit_flag(id, action) && self.successor_count(id, action) > 0
    }

    /// Calls `f(pred, action)` for every transition `pred --action--> id`.
    pub fn for_each_predecessor(&self, id: usize, mut f: impl FnMut(usize, usize)) {
        let t = self.decode(id);
        match self.kind {
            ModelKind::Common => {
                for a in 0..self.modes {
                    for &c in self.spatial_preds(t.cell, a) {
                        f(c as usize, a);
                    }
                }
            }
            ModelKind::Dwell { steps } => {
                let last = steps - 1;
                let mut from = |mode: usize, counter: usize, flow: usize| {
                    for &c in self.spatial_preds(t.cell, flow) {
                        f(
                            self.encode(StateParts {
                                cell: c as usize,
                                mode,
                                counter,
                            }),
                            t.mode,
                        );
                    }
                };
                if t.counter >= 1 {
                    from(t.mode, t.counter - 1, t.mode);
                }
                if t.counter == last {
                    from(t.mode, last, t.mode);
                }
                if t.counter == 0 {
                    for p in (0..self.modes).filter(|&p| p != t.mode) {
                        from(p, last, p);
                    }
                }
            }
        }
    }

    pub fn transition_count(&self) -> usize {
        (0..self.state_count())
            .map(|s| (0..self.modes).map(|a| self.successor_count(s, a)).sum::<usize>())
            .sum()
    }

    /// Successor-count statistics over enabled, non-exiting pairs.
    pub fn degree_stats(&self) -> DegreeStats {
        let mut stats = DegreeStats {
            min: usize::MAX,
            max: 0,
            mean: 0.0,
            pairs: 0,
            exit_pairs: 0,
        };
        let mut total = 0usize;
        for s in 0..self.state_count() {
            for a in 0..self.modes {
                if !self.enabled(s, a) {
                    continue;
                }
                if self.exit_flag(s, a) {
                    stats.exit_pairs += 1;
                    continue;
                }
                let d = self.successor_count(s, a);
                stats.min = stats.min.min(d);
                stats.max = stats.max.max(d);
                stats.pairs += 1;
                total += d;
            }
        }
        if stats.pairs == 0 {
            stats.min = 0;
        } else {
            stats.mean = total as f64 / stats.pairs as f64;
        }
        stats
    }
}

pub fn state_count(model: &SymbolicModel) -> usize {
    model.state_count()
}

pub fn degree_stats(model: &SymbolicModel) -> DegreeStats {
    model.degree_stats()
}
