//! Closed-loop execution of a symbolic controller on the concrete system.

use std::io::Write;

use crate::abstraction::{ModelKind, StateParts, SymbolicModel};
use crate::dynamics::{ModeId, SwitchedSystem};
use crate::error::{Error, Result};
use crate::lattice::{Region, BOUNDARY_TOL};
use crate::synthesis::{SafetyController, SafetySpec};
use crate::transys::{RelationCertificate, LEVEL_REL_TOL};

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopTrace {
    pub tau_s: f64,
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// Companion symbolic state ids.
    pub abstract_states: Vec<usize>,
    /// Mode driving the flow from each sample to the next; the last entry is
    /// the choice the controller would make next.
    pub modes: Vec<ModeId>,
    /// Controller action at each sample (the next mode for dwell models).
    pub actions: Vec<ModeId>,
    /// `V(x_k, s_k)`.
    pub values: Vec<f64>,
    /// Relation level the value must respect.
    pub levels: Vec<f64>,
}

impl ClosedLoopTrace {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Sample indices at which the applied mode changes.
    pub fn switch_times(&self) -> Vec<usize> {
        (1..self.modes.len()).filter(|&k| self.modes[k] != self.modes[k - 1]).collect()
    }

    /// Samples between consecutive switches.
    pub fn switch_gaps(&self) -> Vec<usize> {
        self.switch_times().windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// CSV with header `t,x1..xn,mode,state,v,level`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let n = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend(["mode", "state", "v", "level"].map(String::from));
        out.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![self.times[k].to_string()];
            rec.extend(self.states[k].iter().map(f64::to_string));
            rec.push(self.modes[k].to_string());
            rec.push(self.abstract_states[k].to_string());
            rec.push(self.values[k].to_string());
            rec.push(self.levels[k].to_string());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Initial companion state: the quantized point, with counter 0 and the
/// preferred (else smallest controllable) mode for dwell models.
pub fn initial_state(
    model: &SymbolicModel,
    ctrl: &SafetyController,
    x0: &[f64],
    preferred: Option<ModeId>,
) -> Result<usize> {
    let cell = model
        .grid()
        .quantize_cell(x0)
        .ok_or_else(|| Error::InvalidInput(format!("initial state {x0:?} is outside the abstraction region")))?;
    match model.kind() {
        ModelKind::Common => {
            if ctrl.is_controllable(cell) {
                Ok(cell)
            } else {
                Err(Error::Uncontrollable(cell))
            }
        }
        ModelKind::Dwell { .. } => {
            let id = |mode: usize| model.encode(StateParts { cell, mode, counter: 0 });
            let order = preferred
                .map(ModeId::zero_based)
                .into_iter()
                .chain(0..model.mode_count());
            order
                .filter(|&m| m < model.mode_count())
                .map(id)
                .find(|&s| ctrl.is_controllable(s))
                .ok_or(Error::Uncontrollable(id(0)))
        }
    }
}

/// Runs the lazy refinement of `ctrl` from `x0` for `horizon` sampling
/// periods, tracking the companion symbolic state that minimizes `V`.
pub fn refine_and_run(
    system: &SwitchedSystem,
    model: &SymbolicModel,
    ctrl: &SafetyController,
    cert: &RelationCertificate,
    x0: &[f64],
    horizon: usize,
    initial_mode: Option<ModeId>,
) -> Result<ClosedLoopTrace> {
    if x0.len() != model.dim() {
        return Err(Error::Dimension {
            expected: model.dim(),
            got: x0.len(),
        });
    }
    let maps = system.step_maps(model.tau_s())?;
    let lazy = ctrl.lazy();
    let mut s = initial_state(model, ctrl, x0, initial_mode)?;
    let mut current = match model.kind() {
        ModelKind::Common => initial_mode.unwrap_or_else(|| ModeId::from_zero_based(ctrl.admissible(s).first().expect("controllable"))),
        ModelKind::Dwell { .. } => ModeId::from_zero_based(model.decode(s).mode),
    };
    let mut trace = ClosedLoopTrace {
        tau_s: model.tau_s(),
        times: Vec::with_capacity(horizon + 1),
        states: Vec::with_capacity(horizon + 1),
        abstract_states: Vec::with_capacity(horizon + 1),
        modes: Vec::with_capacity(horizon + 1),
        actions: Vec::with_capacity(horizon + 1),
        values: Vec::with_capacity(horizon + 1),
        levels: Vec::with_capacity(horizon + 1),
    };
    let mut x = x0.to_vec();
    let mut next = vec![0.0; x.len()];
    for k in 0..=horizon {
        let (v, level) = cert.evaluate(model, &x, s);
        if v > level * (1.0 + LEVEL_REL_TOL) {
            return Err(Error::RelationViolation { step: k, value: v, level });
        }
        let action = lazy.choice(s, current)?;
        let flow = ModeId::from_zero_based(model.flow_mode(s, action.zero_based()));
        trace.times.push(k as f64 * model.tau_s());
        trace.states.push(x.clone());
        trace.abstract_states.push(s);
        trace.modes.push(flow);
        trace.actions.push(action);
        trace.values.push(v);
        trace.levels.push(level);
        if k == horizon {
            break;
        }
        maps[flow.zero_based()].apply_into(&x, &mut next);
        let mut best: Option<(f64, usize)> = None;
        for t in model.successors(s, action.zero_based()) {
            let (vt, _) = cert.evaluate(model, &next, t);
            if best.is_none_or(|(b, _)| vt < b) {
                best = Some((vt, t));
            }
        }
        let (_, t) = best.ok_or(Error::Uncontrollable(s))?;
        std::mem::swap(&mut x, &mut next);
        s = t;
        current = match model.kind() {
            ModelKind::Common => action,
            ModelKind::Dwell { .. } => ModeId::from_zero_based(model.decode(s).mode),
        };
    }
    Ok(trace)
}

#[derive(Debug, Clone, PartialEq)]
pub enum MonitorViolation {
    LeftKeep { step: usize, x: Vec<f64> },
    EnteredAvoid { step: usize, x: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonitorReport {
    pub samples: usize,
    pub violation: Option<MonitorViolation>,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.violation.is_none()
    }
}

/// Concrete sets implied by a symbolic safety spec at precision `epsilon`:
/// keep inflated by `ε`, avoid deflated by `ε` (as an open box).
pub fn concrete_sets(spec: &SafetySpec, epsilon: f64) -> (Region, Option<Region>) {
    (spec.keep.inflate(epsilon), spec.avoid.as_ref().map(|a| a.inflate(-epsilon)))
}

pub fn monitor_states<'a>(states: impl IntoIterator<Item = &'a [f64]>, spec: &SafetySpec, epsilon: f64) -> MonitorReport {
    let (keep, avoid) = concrete_sets(spec, epsilon);
    let mut samples = 0;
    for (step, x) in states.into_iter().enumerate() {
        samples += 1;
        if !keep.contains(x, BOUNDARY_TOL) {
            return MonitorReport {
                samples,
                violation: Some(MonitorViolation::LeftKeep { step, x: x.to_vec() }),
            };
        }
        if avoid.as_ref().is_some_and(|a| a.interior_contains(x, BOUNDARY_TOL)) {
            return MonitorReport {
                samples,
                violation: Some(MonitorViolation::EnteredAvoid { step, x: x.to_vec() }),
            };
        }
    }
    MonitorReport { samples, violation: None }
}

/// Checks every sampled state against the concrete keep/avoid sets.
pub fn safety_monitor(trace: &ClosedLoopTrace, spec: &SafetySpec, epsilon: f64) -> MonitorReport {
    monitor_states(trace.states.iter().map(Vec::as_slice), spec, epsilon)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Excursion {
    /// Largest per-axis distance outside the inflated keep box.
    pub max_keep_excess: f64,
    /// Dense points strictly inside the deflated avoid box.
    pub avoid_hits: usize,
    pub points: usize,
}

/// Dense inter-sample check of a trace, `substeps` points per period. Purely
/// informative: the guarantees hold at sampling instants only.
pub fn inter_sample_excursion(
    system: &SwitchedSystem,
    trace: &ClosedLoopTrace,
    spec: &SafetySpec,
    epsilon: f64,
    substeps: usize,
) -> Result<Excursion> {
    let substeps = substeps.max(1);
    let maps = system.step_maps(trace.tau_s / substeps as f64)?;
    let (keep, avoid) = concrete_sets(spec, epsilon);
    let mut out = Excursion::default();
    let mut y = vec![0.0; keep.dim()];
    for k in 0..trace.len().saturating_sub(1) {
        let mut x = trace.states[k].clone();
        for _ in 0..substeps {
            maps[trace.modes[k].zero_based()].apply_into(&x, &mut y);
            std::mem::swap(&mut x, &mut y);
            out.points += 1;
            for (i, &v) in x.iter().enumerate() {
                let excess = (keep.lo()[i] - v).max(v - keep.hi()[i]);
                out.max_keep_excess = out.max_keep_excess.max(excess);
            }
            if avoid.as_ref().is_some_and(|a| a.interior_contains(&x, BOUNDARY_TOL)) {
                out.avoid_hits += 1;
            }
        }
    }
    Ok(out)
}
