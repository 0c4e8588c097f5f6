//! File formats for symbolic models, controllers and relations.
//!
//! An abstraction directory holds `states.csv`, `transitions.csv` and
//! `meta.json`. Modes and actions are written one-based.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstraction::{ModelKind, SymbolicModel};
use crate::error::{Error, Result};
use crate::transys::{FiniteTS, FiniteTsFile, PairRelation};

/// Models above this size get no DOT rendering.
pub const DOT_STATE_LIMIT: usize = 20_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: String,
    pub dim: usize,
    pub labels: usize,
    pub states: usize,
    pub eta: f64,
    pub spacing: f64,
    pub tau_s: f64,
    pub dwell_steps: usize,
    pub shape: Vec<usize>,
    pub transitions: usize,
    pub exit_pairs: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub mean_degree: f64,
}

impl ModelMeta {
    pub fn of(model: &SymbolicModel) -> Self {
        let stats = model.degree_stats();
        Self {
            kind: match model.kind() {
                ModelKind::Common => "common".into(),
                ModelKind::Dwell { .. } => "dwell".into(),
            },
            dim: model.dim(),
            labels: model.mode_count(),
            states: model.state_count(),
            eta: model.lattice().eta(),
            spacing: model.lattice().spacing(),
            tau_s: model.tau_s(),
            dwell_steps: model.dwell_steps(),
            shape: model.grid().shape().to_vec(),
            transitions: usable_transition_count(model),
            exit_pairs: stats.exit_pairs,
            min_degree: stats.min,
            max_degree: stats.max,
            mean_degree: stats.mean,
        }
    }
}

fn usable_transition_count(model: &SymbolicModel) -> usize {
    (0..model.state_count())
        .map(|s| {
            (0..model.mode_count())
                .filter(|&a| model.usable(s, a))
                .map(|a| model.successor_count(s, a))
                .sum::<usize>()
        })
        .sum()
}

/// `id,k1..kn,x1..xn,mode,counter,initial`; `mode` is empty for common models.
pub fn write_states_csv(model: &SymbolicModel, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(w));
    let n = model.dim();
    let mut header = vec!["id".to_string()];
    header.extend((1..=n).map(|i| format!("k{i}")));
    header.extend((1..=n).map(|i| format!("x{i}")));
    header.extend(["mode", "counter", "initial"].map(String::from));
    out.write_record(&header)?;
    let mut key = vec![0i64; n];
    let mut x = vec![0.0; n];
    let dwell = matches!(model.kind(), ModelKind::Dwell { .. });
    for s in 0..model.state_count() {
        let parts = model.decode(s);
        model.grid().key_into(parts.cell, &mut key);
        model.write_output(s, &mut x);
        let mut rec = Vec::with_capacity(2 * n + 4);
        rec.push(s.to_string());
        rec.extend(key.iter().map(i64::to_string));
        rec.extend(x.iter().map(f64::to_string));
        rec.push(if dwell { (parts.mode + 1).to_string() } else { String::new() });
        rec.push(parts.counter.to_string());
        rec.push(u8::from(model.is_initial(s)).to_string());
        out.write_record(&rec)?;
    }
    out.flush()?;
    Ok(())
}

/// `src,action,dst` over the usable pairs; disqualified pairs are omitted.
pub fn write_transitions_csv(model: &SymbolicModel, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(w));
    out.write_record(["src", "action", "dst"])?;
    for s in 0..model.state_count() {
        for a in 0..model.mode_count() {
            if !model.usable(s, a) {
                continue;
            }
            for t in model.successors(s, a) {
                out.write_record([s.to_string(), (a + 1).to_string(), t.to_string()])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_dot(model: &SymbolicModel, w: impl Write) -> Result<()> {
    if model.state_count() > DOT_STATE_LIMIT {
        return Err(Error::InvalidInput(format!(
            "{} states exceed the DOT limit of {DOT_STATE_LIMIT}",
            model.state_count()
        )));
    }
    let mut w = BufWriter::new(w);
    writeln!(w, "digraph symbolic {{")?;
    for s in 0..model.state_count() {
        let x = model.output(s);
        let coords: Vec<String> = x.iter().map(|v| format!("{v:.6}")).collect();
        writeln!(w, "  {s} [label=\"{s}\\n({})\"];", coords.join(", "))?;
    }
    for s in 0..model.state_count() {
        for a in 0..model.mode_count() {
            if model.usable(s, a) {
                for t in model.successors(s, a) {
                    writeln!(w, "  {s} -> {t} [label=\"{}\"];", a + 1)?;
                }
            }
        }
    }
    writeln!(w, "}}")?;
    w.flush()?;
    Ok(())
}

/// Writes the abstraction directory; DOT only for small models. Returns the
/// metadata written to `meta.json`.
pub fn write_abstraction_dir(model: &SymbolicModel, dir: &Path) -> Result<ModelMeta> {
    std::fs::create_dir_all(dir)?;
    write_states_csv(model, File::create(dir.join("states.csv"))?)?;
    write_transitions_csv(model, File::create(dir.join("transitions.csv"))?)?;
    if model.state_count() <= DOT_STATE_LIMIT {
        write_dot(model, File::create(dir.join("model.dot"))?)?;
    }
    let meta = ModelMeta::of(model);
    write_json(&meta, &dir.join("meta.json"))?;
    Ok(meta)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Reads an abstraction directory back as a finite transition system.
pub fn load_abstraction_dir(dir: &Path) -> Result<FiniteTS> {
    let meta: ModelMeta = serde_json::from_reader(File::open(dir.join("meta.json"))?)?;
    let mut rdr = csv::Reader::from_path(dir.join("states.csv"))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("states.csv lacks column {name}")))
    };
    let xcols = (1..=meta.dim).map(|i| col(&format!("x{i}"))).collect::<Result<Vec<_>>>()?;
    let (idcol, initcol) = (col("id")?, col("initial")?);
    let parse_err = |e: std::num::ParseFloatError| Error::InvalidInput(e.to_string());
    let mut outputs = Vec::with_capacity(meta.states);
    let mut initials = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec[idcol].parse::<usize>().ok() != Some(row) {
            return Err(Error::InvalidInput(format!("states.csv row {row} has id {}", &rec[idcol])));
        }
        outputs.push(xcols.iter().map(|&c| rec[c].parse::<f64>().map_err(parse_err)).collect::<Result<Vec<_>>>()?);
        if &rec[initcol] == "1" {
            initials.push(row);
        }
    }
    let mut rdr = csv::Reader::from_path(dir.join("transitions.csv"))?;
    let mut transitions = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let field = |i: usize| {
            rec[i]
                .parse::<usize>()
                .map_err(|e| Error::InvalidInput(format!("transitions.csv: {e}")))
        };
        let action = field(1)?;
        if action == 0 {
            return Err(Error::UnknownMode(0));
        }
        transitions.push((field(0)?, action - 1, field(2)?));
    }
    FiniteTS::new(outputs, meta.labels, &transitions, &initials)
}

/// A directory is read as an abstraction; a file as a JSON [`FiniteTsFile`].
pub fn load_transition_system(path: &Path) -> Result<FiniteTS> {
    if path.is_dir() {
        load_abstraction_dir(path)
    } else {
        let file: FiniteTsFile = serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?;
        FiniteTS::from_file(file)
    }
}

/// `first,second` pair ids in ascending order.
pub fn write_relation_csv(rel: &PairRelation, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(BufWriter::new(w));
    out.write_record(["first", "second"])?;
    for (a, b) in rel.sorted() {
        out.write_record([a.to_string(), b.to_string()])?;
    }
    out.flush()?;
    Ok(())
}
