//! Maximal safety controllers and lazy mode selection.

use std::collections::VecDeque;
use std::fmt;
use std::io::Write;

use crate::abstraction::{ModelKind, StateParts, SymbolicModel};
use crate::dynamics::ModeId;
use crate::error::{Error, Result};
use crate::lattice::{Region, BOUNDARY_TOL};
use crate::transys::FiniteTS;

/// State/action structure needed by the fixed-point solver.
pub trait TransitionGraph {
    fn state_count(&self) -> usize;
    fn action_count(&self) -> usize;
    fn write_output(&self, state: usize, out: &mut [f64]);
    fn output_dim(&self) -> usize;
    /// The action can be taken and all of its successors exist in the model.
    fn usable(&self, state: usize, action: usize) -> bool;
    fn for_each_successor(&self, state: usize, action: usize, f: &mut dyn FnMut(usize));
    fn for_each_predecessor(&self, state: usize, f: &mut dyn FnMut(usize, usize));
}

impl TransitionGraph for SymbolicModel {
    fn state_count(&self) -> usize {
        SymbolicModel::state_count(self)
    }

    fn action_count(&self) -> usize {
        self.mode_count()
    }

    fn write_output(&self, state: usize, out: &mut [f64]) {
        SymbolicModel::write_output(self, state, out)
    }

    fn output_dim(&self) -> usize {
        self.dim()
    }

    fn usable(&self, state: usize, action: usize) -> bool {
        SymbolicModel::usable(self, state, action)
    }

    fn for_each_successor(&self, state: usize, action: usize, f: &mut dyn FnMut(usize)) {
        self.successors(state, action).for_each(f)
    }

    fn for_each_predecessor(&self, state: usize, f: &mut dyn FnMut(usize, usize)) {
        SymbolicModel::for_each_predecessor(self, state, f)
    }
}

impl TransitionGraph for FiniteTS {
    fn state_count(&self) -> usize {
        FiniteTS::state_count(self)
    }

    fn action_count(&self) -> usize {
        self.label_count()
    }

    fn write_output(&self, state: usize, out: &mut [f64]) {
        out.copy_from_slice(self.output(state))
    }

    fn output_dim(&self) -> usize {
        FiniteTS::output_dim(self)
    }

    /// Blocked labels (no successors) are unusable.
    fn usable(&self, state: usize, action: usize) -> bool {
        !self.successors(state, action).is_empty()
    }

    fn for_each_successor(&self, state: usize, action: usize, f: &mut dyn FnMut(usize)) {
        self.successors(state, action).iter().copied().for_each(f)
    }

    fn for_each_predecessor(&self, state: usize, f: &mut dyn FnMut(usize, usize)) {
        for l in 0..self.label_count() {
            for &p in self.predecessors(state, l) {
                f(p, l);
            }
        }
    }
}

/// Stay in the closed box `keep`, out of the open box `avoid`.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetySpec {
    pub keep: Region,
    pub avoid: Option<Region>,
}

impl SafetySpec {
    pub fn new(keep: Region, avoid: Option<Region>) -> Result<Self> {
        if let Some(avoid) = &avoid {
            if avoid.dim() != keep.dim() {
                return Err(Error::Dimension {
                    expected: keep.dim(),
                    got: avoid.dim(),
                });
            }
            if !avoid.is_subset_of(&keep) {
                return Err(Error::InvalidInput("avoid box must lie inside the keep box".into()));
            }
        }
        Ok(Self { keep, avoid })
    }

    pub fn is_safe(&self, y: &[f64]) -> bool {
        self.keep.contains(y, BOUNDARY_TOL) && !self.avoid.as_ref().is_some_and(|a| a.interior_contains(y, BOUNDARY_TOL))
    }
}

/// Set of zero-based mode indices.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct ModeSet(u32);

impl ModeSet {
    pub const EMPTY: ModeSet = ModeSet(0);

    pub fn from_bits(bits: u32) -> Self {
        Self(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn insert(&mut self, mode: usize) {
        self.0 |= 1 << mode;
    }

    pub fn remove(&mut self, mode: usize) {
        self.0 &= !(1 << mode);
    }

    pub fn contains(self, mode: usize) -> bool {
        mode < 32 && self.0 & (1 << mode) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&m| self.contains(m))
    }

    pub fn mode_ids(self) -> Vec<ModeId> {
        self.iter().map(ModeId::from_zero_based).collect()
    }
}

impl FromIterator<usize> for ModeSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = ModeSet::EMPTY;
        for m in iter {
            s.insert(m);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyController {
    admissible: Vec<ModeSet>,
    modes: usize,
}

impl SafetyController {
    pub fn from_sets(admissible: Vec<ModeSet>, modes: usize) -> Self {
        Self { admissible, modes }
    }

    pub fn state_count(&self) -> usize {
        self.admissible.len()
    }

    pub fn mode_count(&self) -> usize {
        self.modes
    }

    pub fn admissible(&self, state: usize) -> ModeSet {
        self.admissible[state]
    }

    pub fn is_controllable(&self, state: usize) -> bool {
        !self.admissible[state].is_empty()
    }

    pub fn domain(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.admissible.len()).filter(move |&s| self.is_controllable(s))
    }

    pub fn domain_size(&self) -> usize {
        self.admissible.iter().filter(|s| !s.is_empty()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.domain_size() == 0
    }

    pub fn lazy(&self) -> LazyController<'_> {
        LazyController { ctrl: self }
    }

    /// `{"state_id": [modes]}` over the controllable states, one-based modes.
    pub fn write_json(&self, w: impl Write) -> Result<()> {
        let mut w = std::io::BufWriter::new(w);
        write!(w, "{{")?;
        let mut first = true;
        for s in self.domain() {
            let modes: Vec<String> = self.admissible[s].iter().map(|m| (m + 1).to_string()).collect();
            let sep = if first { "" } else { "," };
            write!(w, "{sep}\n  \"{s}\": [{}]", modes.join(", "))?;
            first = false;
        }
        writeln!(w, "\n}}")?;
        w.flush()?;
        Ok(())
    }

    pub fn read_json(r: impl std::io::Read, states: usize, modes: usize) -> Result<Self> {
        let map: std::collections::BTreeMap<String, Vec<usize>> = serde_json::from_reader(std::io::BufReader::new(r))?;
        let mut admissible = vec![ModeSet::EMPTY; states];
        for (k, v) in map {
            let s: usize = k
                .parse()
                .map_err(|_| Error::InvalidInput(format!("controller key {k:?} is not a state id")))?;
            if s >= states {
                return Err(Error::InvalidInput(format!("controller state {s} out of range")));
            }
            for m in v {
                if m == 0 || m > modes {
                    return Err(Error::UnknownMode(m));
                }
                admissible[s].insert(m - 1);
            }
        }
        Ok(Self { admissible, modes })
    }
}

/// Greatest controlled invariant subset of the safe states.
pub fn maximal_safety_controller<G: TransitionGraph + ?Sized>(model: &G, spec: &SafetySpec) -> SafetyController {
    let n = model.state_count();
    let m = model.action_count();
    let mut y = vec![0.0; model.output_dim()];
    let mut alive = vec![false; n * m];
    let mut count = vec![0u32; n];
    let mut removed = vec![false; n];
    let mut queue = VecDeque::new();
    for s in 0..n {
        model.write_output(s, &mut y);
        if !spec.is_safe(&y) {
            removed[s] = true;
            queue.push_back(s);
            continue;
        }
        for a in 0..m {
            if model.usable(s, a) {
                alive[s * m + a] = true;
                count[s] += 1;
            }
        }
        if count[s] == 0 {
            removed[s] = true;
            queue.push_back(s);
        }
    }
    while let Some(t) = queue.pop_front() {
        model.for_each_predecessor(t, &mut |p, a| {
            let idx = p * m + a;
            if removed[p] || !alive[idx] {
                return;
            }
            alive[idx] = false;
            count[p] -= 1;
            if count[p] == 0 {
                removed[p] = true;
                queue.push_back(p);
            }
        });
    }
    let admissible = (0..n)
        .map(|s| {
            if removed[s] {
                ModeSet::EMPTY
            } else {
                (0..m).filter(|&a| alive[s * m + a]).collect()
            }
        })
        .collect();
    SafetyController { admissible, modes: m }
}

/// Keeps the current mode while it stays admissible.
#[derive(Debug, Clone, Copy)]
pub struct LazyController<'a> {
    ctrl: &'a SafetyController,
}

impl LazyController<'_> {
    pub fn choice(&self, state: usize, current: ModeId) -> Result<ModeId> {
        let set = self.ctrl.admissible(state);
        if set.contains(current.zero_based()) {
            return Ok(current);
        }
        set.first().map(ModeId::from_zero_based).ok_or(Error::Uncontrollable(state))
    }
}

pub fn lazy_controller(ctrl: &SafetyController) -> LazyController<'_> {
    ctrl.lazy()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellClass {
    Only(ModeId),
    /// More than one mode is admissible.
    Both,
    /// The lazy controller keeps the current mode.
    KeepCurrent,
    Uncontrollable,
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CellClass::Only(m) => write!(f, "mode{m}"),
            CellClass::Both => f.write_str("both"),
            CellClass::KeepCurrent => f.write_str("keep-current"),
            CellClass::Uncontrollable => f.write_str("uncontrollable"),
        }
    }
}

impl std::str::FromStr for CellClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "both" => Ok(CellClass::Both),
            "keep-current" => Ok(CellClass::KeepCurrent),
            "uncontrollable" => Ok(CellClass::Uncontrollable),
            _ => s
                .strip_prefix("mode")
                .and_then(|m| m.parse().ok())
                .and_then(ModeId::new)
                .map(CellClass::Only)
                .ok_or_else(|| Error::InvalidInput(format!("unknown cell class {s:?}"))),
        }
    }
}

fn class_of(set: ModeSet) -> CellClass {
    match set.len() {
        0 => CellClass::Uncontrollable,
        1 => CellClass::Only(ModeId::from_zero_based(set.first().expect("nonempty"))),
        _ => CellClass::Both,
    }
}

/// One class per lattice cell of a model's region.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGrid {
    pub shape: Vec<usize>,
    pub kmin: Vec<i64>,
    pub classes: Vec<CellClass>,
}

impl ClassGrid {
    fn build(model: &SymbolicModel, f: impl Fn(usize) -> CellClass) -> Self {
        let grid = model.grid();
        Self {
            shape: grid.shape().to_vec(),
            kmin: grid.kmin().to_vec(),
            classes: (0..grid.len()).map(f).collect(),
        }
    }

    pub fn count(&self, class: CellClass) -> usize {
        self.classes.iter().filter(|&&c| c == class).count()
    }

    /// Classes present, in first-occurrence order.
    pub fn distinct(&self) -> Vec<CellClass> {
        let mut out = Vec::new();
        for &c in &self.classes {
            if !out.contains(&c) {
                out.push(c);
            }
        }
        out
    }

    fn key(&self, cell: usize) -> Vec<i64> {
        let mut key = vec![0i64; self.shape.len()];
        let mut rest = cell;
        for d in (0..self.shape.len()).rev() {
            key[d] = self.kmin[d] + (rest % self.shape[d]) as i64;
            rest /= self.shape[d];
        }
        key
    }

    /// CSV with header `k1,…,kn,class`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.shape.len()).map(|d| format!("k{d}")).collect();
        header.push("class".into());
        out.write_record(&header)?;
        for (cell, class) in self.classes.iter().enumerate() {
            let mut rec: Vec<String> = self.key(cell).iter().map(i64::to_string).collect();
            rec.push(class.to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let n = rdr.headers()?.len().saturating_sub(1);
        let mut keys = Vec::new();
        let mut classes = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let key = (0..n)
                .map(|d| rec[d].parse::<i64>().map_err(|e| Error::InvalidInput(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            keys.push(key);
            classes.push(rec[n].parse()?);
        }
        let kmin: Vec<i64> = (0..n).map(|d| keys.iter().map(|k| k[d]).min().unwrap_or(0)).collect();
        let shape: Vec<usize> = (0..n)
            .map(|d| keys.iter().map(|k| (k[d] - kmin[d] + 1) as usize).max().unwrap_or(0))
            .collect();
        let grid = Self { shape, kmin, classes };
        if keys.iter().enumerate().any(|(cell, k)| &grid.key(cell) != k) {
            return Err(Error::InvalidInput("class grid rows are not in lattice order".into()));
        }
        Ok(grid)
    }
}

/// Admissible-set classes of a common-kind model.
pub fn classification_map(model: &SymbolicModel, ctrl: &SafetyController) -> ClassGrid {
    match model.kind() {
        ModelKind::Common => ClassGrid::build(model, |cell| class_of(ctrl.admissible(cell))),
        ModelKind::Dwell { steps } => dwell_projection_map(model, ctrl, ModeId::from_zero_based(0), steps - 1),
    }
}

/// Admissible-set classes of the dwell states with mode `mode` and `counter`.
pub fn dwell_projection_map(model: &SymbolicModel, ctrl: &SafetyController, mode: ModeId, counter: usize) -> ClassGrid {
    let mode = mode.zero_based();
    ClassGrid::build(model, |cell| {
        let id = match model.kind() {
            ModelKind::Common => cell,
            ModelKind::Dwell { .. } => model.encode(StateParts { cell, mode, counter }),
        };
        class_of(ctrl.admissible(id))
    })
}

/// What the lazy controller does at each cell when `current` is active.
pub fn lazy_map(model: &SymbolicModel, ctrl: &SafetyController, current: ModeId, counter: usize) -> ClassGrid {
    let lazy = ctrl.lazy();
    ClassGrid::build(model, |cell| {
        let id = match model.kind() {
            ModelKind::Common => cell,
            ModelKind::Dwell { .. } => model.encode(StateParts {
                cell,
                mode: current.zero_based(),
                counter,
            }),
        };
        match lazy.choice(id, current) {
            Ok(m) if m == current => CellClass::KeepCurrent,
            Ok(m) => CellClass::Only(m),
            Err(_) => CellClass::Uncontrollable,
        }
    })
}

/// Sanity checks on a synthesized controller, returning the first failure.
pub fn check_controller<G: TransitionGraph + ?Sized>(model: &G, spec: &SafetySpec, ctrl: &SafetyController) -> Option<String> {
    let m = model.action_count();
    let mut y = vec![0.0; model.output_dim()];
    for s in 0..model.state_count() {
        let set = ctrl.admissible(s);
        model.write_output(s, &mut y);
        let safe = spec.is_safe(&y);
        if !set.is_empty() && !safe {
            return Some(format!("controllable state {s} is unsafe"));
        }
        for a in 0..m {
            let closed = model.usable(s, a) && {
                let mut ok = true;
                model.for_each_successor(s, a, &mut |t| ok &= ctrl.is_controllable(t));
                ok
            };
            if set.contains(a) && !closed {
                return Some(format!("state {s} admits mode {} with a successor outside the domain", a + 1));
            }
            if safe && closed && !set.contains(a) {
                return Some(format!("state {s} omits mode {}, which keeps it in the domain", a + 1));
            }
        }
    }
    None
}
