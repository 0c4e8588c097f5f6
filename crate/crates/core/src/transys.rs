//! Finite metric transition systems and approximate bisimulation.
//!
//! The relation between a concrete trajectory and a symbolic model is level
//! set based: `(x, s)` are related when `V_p(x, q) ≤ δ_i` for the state's
//! lattice point `q`, mode `p` and counter `i`. [`RelationCertificate`]
//! carries those levels and [`check_relation_closure`] samples the
//! one-step closure of that relation.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::abstraction::{ModelKind, SymbolicModel, SymbolicState};
use crate::dynamics::SwitchedSystem;
use crate::error::{Error, Result};
use crate::lyapunov::{CertCharacteristics, QuadraticCertificateSet};

/// Relative slack on level comparisons absorbing floating-point rounding.
pub const LEVEL_REL_TOL: f64 = 1e-9;

/// Finite transition system with vector outputs and integer labels `0..labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteTS {
    output_dim: usize,
    outputs: Vec<f64>,
    labels: usize,
    /// CSR over `state * labels + label`.
    succ_offsets: Vec<usize>,
    succ: Vec<usize>,
    pred_offsets: Vec<usize>,
    pred: Vec<usize>,
    initial: Vec<bool>,
}

/// Serialized form of a [`FiniteTS`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteTsFile {
    pub labels: usize,
    pub outputs: Vec<Vec<f64>>,
    pub transitions: Vec<[usize; 3]>,
    pub initials: Vec<usize>,
}

fn csr(rows: usize, edges: impl Iterator<Item = (usize, usize)> + Clone) -> (Vec<usize>, Vec<usize>) {
    let mut offsets = vec![0usize; rows + 1];
    for (r, _) in edges.clone() {
        offsets[r + 1] += 1;
    }
    for i in 1..=rows {
        offsets[i] += offsets[i - 1];
    }
    let mut fill = offsets.clone();
    let mut data = vec![0usize; offsets[rows]];
    for (r, v) in edges {
        data[fill[r]] = v;
        fill[r] += 1;
    }
    for r in 0..rows {
        let row = &mut data[offsets[r]..offsets[r + 1]];
        row.sort_unstable();
    }
    (offsets, data)
}

impl FiniteTS {
    pub fn new(outputs: Vec<Vec<f64>>, labels: usize, transitions: &[(usize, usize, usize)], initials: &[usize]) -> Result<Self> {
        let states = outputs.len();
        let output_dim = outputs.first().map_or(0, Vec::len);
        if outputs.iter().any(|o| o.len() != output_dim) {
            return Err(Error::InvalidInput("all outputs must share one dimension".into()));
        }
        for &(s, l, t) in transitions {
            if s >= states || t >= states || l >= labels {
                return Err(Error::InvalidInput(format!("transition ({s}, {l}, {t}) out of range")));
            }
        }
        let mut initial = vec![false; states];
        for &i in initials {
            *initial
                .get_mut(i)
                .ok_or_else(|| Error::InvalidInput(format!("initial state {i} out of range")))? = true;
        }
        let mut dedup: Vec<(usize, usize, usize)> = transitions.to_vec();
        dedup.sort_unstable();
        dedup.dedup();
        let (succ_offsets, succ) = csr(states * labels, dedup.iter().map(|&(s, l, t)| (s * labels + l, t)));
        let (pred_offsets, pred) = csr(states * labels, dedup.iter().map(|&(s, l, t)| (t * labels + l, s)));
        Ok(Self {
            output_dim,
            outputs: outputs.into_iter().flatten().collect(),
            labels,
            succ_offsets,
            succ,
            pred_offsets,
            pred,
            initial,
        })
    }

    /// Restricted symbolic model as a finite system; pairs whose flow leaves
    /// the region contribute no transitions.
    pub fn from_model(model: &SymbolicModel) -> Result<Self> {
        let outputs = (0..model.state_count()).map(|s| model.output(s)).collect();
        let mut transitions = Vec::new();
        for s in 0..model.state_count() {
            for a in 0..model.mode_count() {
                if model.usable(s, a) {
                    transitions.extend(model.successors(s, a).map(|t| (s, a, t)));
                }
            }
        }
        let initials: Vec<usize> = model.initial_states().collect();
        Self::new(outputs, model.mode_count(), &transitions, &initials)
    }

    pub fn from_file(file: FiniteTsFile) -> Result<Self> {
        let transitions: Vec<(usize, usize, usize)> = file.transitions.iter().map(|t| (t[0], t[1], t[2])).collect();
        Self::new(file.outputs, file.labels, &transitions, &file.initials)
    }

    pub fn to_file(&self) -> FiniteTsFile {
        let mut transitions = Vec::new();
        for s in 0..self.state_count() {
            for l in 0..self.labels {
                transitions.extend(self.successors(s, l).iter().map(|&t| [s, l, t]));
            }
        }
        FiniteTsFile {
            labels: self.labels,
            outputs: (0..self.state_count()).map(|s| self.output(s).to_vec()).collect(),
            transitions,
            initials: self.initials().collect(),
        }
    }

    pub fn state_count(&self) -> usize {
        self.initial.len()
    }

    pub fn label_count(&self) -> usize {
        self.labels
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn output(&self, s: usize) -> &[f64] {
        &self.outputs[s * self.output_dim..(s + 1) * self.output_dim]
    }

    pub fn successors(&self, s: usize, label: usize) -> &[usize] {
        let row = s * self.labels + label;
        &self.succ[self.succ_offsets[row]..self.succ_offsets[row + 1]]
    }

    pub fn predecessors(&self, s: usize, label: usize) -> &[usize] {
        let row = s * self.labels + label;
        &self.pred[self.pred_offsets[row]..self.pred_offsets[row + 1]]
    }

    pub fn is_initial(&self, s: usize) -> bool {
        self.initial[s]
    }

    pub fn initials(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.state_count()).filter(move |&s| self.initial[s])
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PairRelation {
    pairs: HashSet<(usize, usize)>,
}

impl PairRelation {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn identity(states: usize) -> Self {
        (0..states).map(|s| (s, s)).collect()
    }

    pub fn insert(&mut self, a: usize, b: usize) -> bool {
        self.pairs.insert((a, b))
    }

    pub fn remove(&mut self, a: usize, b: usize) -> bool {
        self.pairs.remove(&(a, b))
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.pairs.contains(&(a, b))
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_subset(&self, other: &PairRelation) -> bool {
        self.pairs.is_subset(&other.pairs)
    }

    /// Pairs in lexicographic order.
    pub fn sorted(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<_> = self.pairs.iter().copied().collect();
        v.sort_unstable();
        v
    }
}

impl FromIterator<(usize, usize)> for PairRelation {
    fn from_iter<I: IntoIterator<Item = (usize, usize)>>(iter: I) -> Self {
        Self {
            pairs: iter.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BisimViolation {
    /// Related outputs are farther apart than `ε`.
    Output { pair: (usize, usize), distance: f64 },
    /// A transition of the first system has no related match in the second.
    Forth { pair: (usize, usize), label: usize, successor: usize },
    /// A transition of the second system has no related match in the first.
    Back { pair: (usize, usize), label: usize, successor: usize },
}

impl std::fmt::Display for BisimViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Output { pair, distance } => write!(f, "pair {pair:?}: output distance {distance}"),
            Self::Forth { pair, label, successor } => {
                write!(f, "pair {pair:?}: first system move {label} -> {successor} is unmatched")
            }
            Self::Back { pair, label, successor } => {
                write!(f, "pair {pair:?}: second system move {label} -> {successor} is unmatched")
            }
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_alphabets(t1: &FiniteTS, t2: &FiniteTS) -> Result<()> {
    if t1.label_count() != t2.label_count() {
        return Err(Error::LabelMismatch(t1.label_count(), t2.label_count()));
    }
    if t1.state_count() > 0 && t2.state_count() > 0 && t1.output_dim() != t2.output_dim() {
        return Err(Error::Dimension {
            expected: t1.output_dim(),
            got: t2.output_dim(),
        });
    }
    Ok(())
}

/// Fixed-size bit set over `0..len`.
struct BitSet(Vec<u64>);

impl BitSet {
    fn new(len: usize) -> Self {
        Self(vec![0; len.div_ceil(64)])
    }

    fn contains(&self, i: usize) -> bool {
        self.0[i / 64] >> (i % 64) & 1 == 1
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn remove(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }
}

fn pair_violation(
    t1: &FiniteTS,
    t2: &FiniteTS,
    epsilon: f64,
    a: usize,
    b: usize,
    related: impl Fn(usize, usize) -> bool,
) -> Option<BisimViolation> {
    let d = distance(t1.output(a), t2.output(b));
    if d > epsilon {
        return Some(BisimViolation::Output { pair: (a, b), distance: d });
    }
    for l in 0..t1.label_count() {
        let (s1, s2) = (t1.successors(a, l), t2.successors(b, l));
        if let Some(&u) = s1.iter().find(|&&u| !s2.iter().any(|&v| related(u, v))) {
            return Some(BisimViolation::Forth {
                pair: (a, b),
                label: l,
                successor: u,
            });
        }
        if let Some(&v) = s2.iter().find(|&&v| !s1.iter().any(|&u| related(u, v))) {
            return Some(BisimViolation::Back {
                pair: (a, b),
                label: l,
                successor: v,
            });
        }
    }
    None
}

/// Checks that `relation` is an `ε`-approximate bisimulation; returns the
/// first violation in pair order, `None` when it holds.
pub fn is_approx_bisim(
    t1: &FiniteTS,
    t2: &FiniteTS,
    epsilon: f64,
    relation: &PairRelation,
) -> Result<Option<BisimViolation>> {
    check_alphabets(t1, t2)?;
    for (a, b) in relation.sorted() {
        if a >= t1.state_count() || b >= t2.state_count() {
            return Err(Error::InvalidInput(format!("pair ({a}, {b}) out of range")));
        }
        if let Some(v) = pair_violation(t1, t2, epsilon, a, b, |u, v| relation.contains(u, v)) {
            return Ok(Some(v));
        }
    }
    Ok(None)
}

/// Largest `ε`-approximate bisimulation relation, by worklist pruning from
/// all output-close pairs.
pub fn max_approx_bisim(t1: &FiniteTS, t2: &FiniteTS, epsilon: f64) -> Result<PairRelation> {
    check_alphabets(t1, t2)?;
    let (n1, n2) = (t1.state_count(), t2.state_count());
    let size = n1
        .checked_mul(n2)
        .filter(|&s| s <= 1 << 32)
        .ok_or_else(|| Error::InvalidInput(format!("{n1} x {n2} state pairs are too many to enumerate")))?;
    let mut rel = BitSet::new(size);
    for a in 0..n1 {
        for b in 0..n2 {
            if distance(t1.output(a), t2.output(b)) <= epsilon {
                rel.insert(a * n2 + b);
            }
        }
    }
    let mut queued = BitSet::new(size);
    let mut work = Vec::new();
    let prune = |idx: usize, rel: &mut BitSet, queued: &mut BitSet, work: &mut Vec<usize>| {
        let (a, b) = (idx / n2, idx % n2);
        if pair_violation(t1, t2, epsilon, a, b, |u, v| rel.contains(u * n2 + v)).is_none() {
            return;
        }
        rel.remove(idx);
        for l in 0..t1.label_count() {
            for &pa in t1.predecessors(a, l) {
                for &pb in t2.predecessors(b, l) {
                    let j = pa * n2 + pb;
                    if rel.contains(j) && !queued.contains(j) {
                        queued.insert(j);
                        work.push(j);
                    }
                }
            }
        }
    };
    for idx in 0..size {
        if rel.contains(idx) {
            prune(idx, &mut rel, &mut queued, &mut work);
        }
    }
    while let Some(idx) = work.pop() {
        queued.remove(idx);
        if rel.contains(idx) {
            prune(idx, &mut rel, &mut queued, &mut work);
        }
    }
    Ok((0..size).filter(|&i| rel.contains(i)).map(|i| (i / n2, i % n2)).collect())
}

/// `T1 ∼_ε T2`: the maximal relation covers the initial states of both sides.
pub fn are_bisimilar(t1: &FiniteTS, t2: &FiniteTS, epsilon: f64) -> Result<bool> {
    let rel = max_approx_bisim(t1, t2, epsilon)?;
    Ok(relates_initials(t1, t2, &rel))
}

/// Every initial state on either side has an initial partner in `rel`.
pub fn relates_initials(t1: &FiniteTS, t2: &FiniteTS, rel: &PairRelation) -> bool {
    let left = t1.initials().all(|a| t2.initials().any(|b| rel.contains(a, b)));
    let right = t2.initials().all(|b| t1.initials().any(|a| rel.contains(a, b)));
    left && right
}

/// Relation levels `δ` for a symbolic model.
#[derive(Debug, Clone, PartialEq)]
pub enum LevelSchedule {
    Common { level: f64 },
    /// `δ_0, …, δ_N` with `δ_0 = α̲(ε)` and `δ_{i+1} = e^{−κτ_s} δ_i + γ(η)`.
    Dwell { levels: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationCertificate {
    pub cert: QuadraticCertificateSet,
    pub chars: CertCharacteristics,
    pub epsilon: f64,
    pub schedule: LevelSchedule,
}

impl RelationCertificate {
    pub fn common(cert: QuadraticCertificateSet, epsilon: f64) -> Self {
        let chars = cert.characteristics();
        Self {
            schedule: LevelSchedule::Common {
                level: chars.a_lower * epsilon,
            },
            cert,
            chars,
            epsilon,
        }
    }

    pub fn dwell(cert: QuadraticCertificateSet, epsilon: f64, eta: f64, tau_s: f64, steps: usize) -> Self {
        let chars = cert.characteristics();
        let decay = (-cert.kappa() * tau_s).exp();
        let mut levels = Vec::with_capacity(steps + 1);
        levels.push(chars.a_lower * epsilon);
        for i in 0..steps {
            levels.push(decay * levels[i] + chars.g * eta);
        }
        Self {
            schedule: LevelSchedule::Dwell { levels },
            cert,
            chars,
            epsilon,
        }
    }

    /// Certificate matching the model kind.
    pub fn for_model(cert: QuadraticCertificateSet, model: &SymbolicModel, epsilon: f64) -> Self {
        match model.kind() {
            ModelKind::Common => Self::common(cert, epsilon),
            ModelKind::Dwell { steps } => Self::dwell(cert, epsilon, model.lattice().eta(), model.tau_s(), steps),
        }
    }

    pub fn level(&self, counter: usize) -> f64 {
        match &self.schedule {
            LevelSchedule::Common { level } => *level,
            LevelSchedule::Dwell { levels } => levels[counter],
        }
    }

    /// `δ_0 ≥ δ_1 ≥ … ≥ δ_N` (trivially true for the common kind).
    pub fn is_monotone(&self) -> bool {
        match &self.schedule {
            LevelSchedule::Common { .. } => true,
            LevelSchedule::Dwell { levels } => levels.windows(2).all(|w| w[1] <= w[0] * (1.0 + LEVEL_REL_TOL)),
        }
    }

    /// `δ_N ≤ δ_0 / μ`, which makes a switch land inside the counter-0 level.
    pub fn satisfies_switch_bound(&self) -> bool {
        match &self.schedule {
            LevelSchedule::Common { .. } => true,
            LevelSchedule::Dwell { levels } => {
                let last = *levels.last().expect("nonempty");
                last <= levels[0] / self.cert.mu() * (1.0 + LEVEL_REL_TOL)
            }
        }
    }

    /// Level `V_p(x, q)` of a concrete point against a model state, with the
    /// bound it must respect.
    pub fn evaluate(&self, model: &SymbolicModel, x: &[f64], state: usize) -> (f64, f64) {
        let parts = model.decode(state);
        let q = model.output(state);
        (self.cert.v(parts.mode, x, &q), self.level(parts.counter))
    }

    pub fn is_member(&self, model: &SymbolicModel, x: &[f64], state: usize) -> bool {
        let (v, level) = self.evaluate(model, x, state);
        v <= level * (1.0 + LEVEL_REL_TOL)
    }
}

/// Membership of `(x, s)` in the level-set relation.
pub fn relation_member(cert: &RelationCertificate, model: &SymbolicModel, x: &[f64], state: &SymbolicState) -> Result<bool> {
    let id = model
        .state_id(state)
        .ok_or_else(|| Error::InvalidInput("symbolic state is not part of the model".into()))?;
    Ok(cert.is_member(model, x, id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosureViolation {
    pub state: usize,
    pub action: usize,
    pub x: Vec<f64>,
    /// `None` for a forth failure (no related successor exists).
    pub successor: Option<usize>,
    pub value: f64,
    pub level: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClosureReport {
    pub pairs_checked: usize,
    pub transitions_checked: usize,
    pub violations: Vec<ClosureViolation>,
}

impl ClosureReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Draws a point uniformly from the level set `{x : V_p(x, q) ≤ level}`.
fn sample_in_level_set(rng: &mut ChaCha8Rng, m: &nalgebra::DMatrix<f64>, q: &[f64], level: f64) -> Vec<f64> {
    let n = q.len();
    // uniform direction on the sphere times radius^(1/n)
    let mut w: Vec<f64> = loop {
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r2: f64 = w.iter().map(|v| v * v).sum();
        if r2 > 1e-12 && r2 <= 1.0 {
            break w;
        }
    };
    let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let radius = level * rng.gen::<f64>().powf(1.0 / n as f64);
    for v in &mut w {
        *v *= radius / norm;
    }
    // x − q = L⁻ᵀ w gives (x−q)ᵀ M (x−q) = |w|²
    let l = m.clone().cholesky().expect("certificate is positive definite").l();
    let d = l
        .transpose()
        .solve_upper_triangular(&nalgebra::DVector::from_vec(w))
        .expect("nonsingular factor");
    q.iter().zip(d.iter()).map(|(a, b)| a + b).collect()
}

/// Samples related pairs `(x, s)` and checks both directions of the one-step
/// relation closure for every usable action.
pub fn check_relation_closure(
    system: &SwitchedSystem,
    model: &SymbolicModel,
    cert: &RelationCertificate,
    samples: usize,
    seed: u64,
) -> Result<ClosureReport> {
    let mut report = ClosureReport::default();
    if model.state_count() == 0 {
        return Ok(report);
    }
    let maps = system.step_maps(model.tau_s())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut next = vec![0.0; model.dim()];
    for _ in 0..samples {
        let s = rng.gen_range(0..model.state_count());
        let parts = model.decode(s);
        let q = model.output(s);
        let x = sample_in_level_set(&mut rng, cert.cert.matrix_for(parts.mode), &q, cert.level(parts.counter));
        report.pairs_checked += 1;
        for a in 0..model.mode_count() {
            if !model.usable(s, a) {
                continue;
            }
            maps[model.flow_mode(s, a)].apply_into(&x, &mut next);
            let mut forth = false;
            let mut best = (f64::INFINITY, 0.0);
            for t in model.successors(s, a) {
                report.transitions_checked += 1;
                let (v, level) = cert.evaluate(model, &next, t);
                if v <= level * (1.0 + LEVEL_REL_TOL) {
                    forth = true;
                } else {
                    report.violations.push(ClosureViolation {
                        state: s,
                        action: a,
                        x: x.clone(),
                        successor: Some(t),
                        value: v,
                        level,
                    });
                }
                if v < best.0 {
                    best = (v, level);
                }
            }
            if !forth {
                report.violations.push(ClosureViolation {
                    state: s,
                    action: a,
                    x: x.clone(),
                    successor: None,
                    value: best.0,
                    level: best.1,
                });
            }
        }
    }
    Ok(report)
}
