use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use symswitch::abstraction::{ModelKind, StateParts, SymbolicModel};
use symswitch::closedloop::{refine_and_run, safety_monitor};
use symswitch::config::{Precision, ProblemConfig};
use symswitch::dynamics::{simulate_switched, ModeId, SampledSwitchingSignal, SwitchedSystem};
use symswitch::lattice::Lattice;
use symswitch::lyapunov::{
    eta_budget_common, eta_budget_dwell, min_dwell_time, CertCharacteristics, KLBound, CERT_TOL,
};
use symswitch::models;
use symswitch::synthesis::{classification_map, maximal_safety_controller, CellClass, SafetyController, SafetySpec};
use symswitch::transys::{
    check_relation_closure, is_approx_bisim, max_approx_bisim, FiniteTS, LevelSchedule, RelationCertificate,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

struct Pipeline {
    system: SwitchedSystem,
    model: SymbolicModel,
    spec: SafetySpec,
    ctrl: SafetyController,
    rc: RelationCertificate,
    precision: Precision,
    cfg: ProblemConfig,
    build_s: f64,
    synth_s: f64,
}

fn pipeline(name: &str) -> Result<Pipeline, String> {
    let cfg = ProblemConfig::load(&configs().join(name)).map_err(err)?;
    let precision = cfg.resolve_precision(None, None).map_err(err)?;
    let system = cfg.system().map_err(err)?;
    let spec = cfg.safety_spec().map_err(err)?;
    let start = Instant::now();
    let model = cfg.build_model(precision.eta).map_err(err)?;
    let build_s = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let ctrl = maximal_safety_controller(&model, &spec);
    let synth_s = start.elapsed().as_secs_f64();
    let rc = cfg.relation_certificate(&model, &precision).map_err(err)?;
    Ok(Pipeline {
        system,
        model,
        spec,
        ctrl,
        rc,
        precision,
        cfg,
        build_s,
        synth_s,
    })
}

fn certificates() -> Outcome {
    let start = Instant::now();
    let mut margins = Vec::new();
    for (name, sys, cert, kappa) in [
        ("boost", models::boost_converter(), models::boost_certificate(), 0.014),
        ("dwell", models::dwell_example(), models::dwell_certificate(), 0.25),
    ] {
        ensure(cert.kappa() == kappa, format!("{name}: kappa {}", cert.kappa()))?;
        for (i, c) in cert.verify(&sys).map_err(err)?.iter().enumerate() {
            ensure(c.passed && c.margin <= CERT_TOL, format!("{name} mode {}: margin {:e}", i + 1, c.margin))?;
            margins.push(format!("{name}/{} {:.2e}", i + 1, c.margin));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, format!("took {secs:.3}s"))?;
    Ok(format!("margins {} in {secs:.3}s", margins.join(", ")))
}

fn characteristics() -> Outcome {
    let boost = models::boost_certificate().characteristics();
    ensure((boost.a_upper - 1.0127).abs() <= 5e-4, format!("boost a_upper {}", boost.a_upper))?;
    let cert = models::dwell_certificate();
    let dwell = cert.characteristics();
    ensure(dwell.a_upper == std::f64::consts::SQRT_2, format!("dwell a_upper {:.17}", dwell.a_upper))?;
    ensure((cert.mu() - std::f64::consts::SQRT_2).abs() <= 1e-12, format!("mu {:.17}", cert.mu()))?;
    Ok(format!(
        "boost a_upper {:.6}, dwell a_upper {:.16}, mu {:.16}",
        boost.a_upper,
        dwell.a_upper,
        cert.mu()
    ))
}

fn budgets() -> Outcome {
    let start = Instant::now();
    let cert = models::boost_certificate();
    let eps = 0.026;
    let boost = eps / eta_budget_common(eps, 0.5, &cert.characteristics(), cert.kappa());
    ensure((144.7..=145.7).contains(&boost), format!("boost divisor {boost}"))?;
    let cert = models::dwell_certificate();
    let eps = 0.34;
    let eta = eta_budget_dwell(eps, 0.5, 2.0, cert.mu(), &cert.characteristics(), cert.kappa()).map_err(err)?;
    let dwell = eps / eta;
    ensure((47.0..=48.0).contains(&dwell), format!("dwell divisor {dwell}"))?;
    let bound = min_dwell_time(cert.mu(), cert.kappa());
    ensure((bound - 1.3863).abs() <= 1e-4 && bound < 2.0, format!("min dwell {bound}"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 1.0, format!("took {secs:.3}s"))?;
    Ok(format!("divisors {boost:.4} and {dwell:.4}, min dwell {bound:.6}, {secs:.4}s"))
}

fn state_counts(boost: &Pipeline, dwell: &Pipeline) -> Outcome {
    ensure(boost.model.state_count() == 642_001, format!("boost {} states", boost.model.state_count()))?;
    ensure(
        dwell.model.state_count() == 7_696_008,
        format!("dwell {} states", dwell.model.state_count()),
    )?;
    ensure(dwell.model.grid().shape() == [1201, 801], format!("dwell grid {:?}", dwell.model.grid().shape()))?;
    let fine = boost.build_s + boost.synth_s;
    let full = dwell.build_s + dwell.synth_s;
    ensure(fine <= 120.0, format!("boost pipeline {fine:.1}s"))?;
    ensure(full <= 300.0, format!("dwell pipeline {full:.1}s"))?;
    Ok(format!("642001 in {fine:.2}s, 7696008 in {full:.2}s"))
}

fn boost_controller(boost: &Pipeline) -> Outcome {
    ensure(!boost.ctrl.is_empty(), "empty controller")?;
    let grid = classification_map(&boost.model, &boost.ctrl);
    let classes = [
        CellClass::Only(ModeId::from_zero_based(0)),
        CellClass::Only(ModeId::from_zero_based(1)),
        CellClass::Both,
        CellClass::Uncontrollable,
    ];
    for c in classes {
        ensure(grid.count(c) > 0, format!("class {c} missing"))?;
    }
    let x0 = [1.5, 5.75];
    ensure(
        boost.cfg.simulation.as_ref().is_some_and(|s| s.x0 == x0 && s.horizon == 200),
        "config simulation section is not x0 = (1.5, 5.75), horizon 200",
    )?;
    ensure(boost.precision.epsilon == 0.026, format!("epsilon {}", boost.precision.epsilon))?;
    let trace = refine_and_run(&boost.system, &boost.model, &boost.ctrl, &boost.rc, &x0, 200, None).map_err(err)?;
    ensure(trace.len() == 201, format!("{} samples", trace.len()))?;
    let monitor = safety_monitor(&trace, &boost.spec, boost.precision.epsilon);
    ensure(monitor.passed(), format!("{:?}", monitor.violation))?;
    let over = trace.values.iter().zip(&trace.levels).filter(|(v, l)| v > l).count();
    ensure(over == 0, format!("{over} relation-level violations"))?;
    for (k, (&s, &p)) in trace.abstract_states.iter().zip(&trace.actions).enumerate() {
        ensure(boost.ctrl.admissible(s).contains(p.zero_based()), format!("inadmissible mode at step {k}"))?;
    }
    Ok(format!(
        "{} of {} controllable, {} switches, all 201 samples inside the inflated box",
        boost.ctrl.domain_size(),
        boost.model.state_count(),
        trace.switch_times().len()
    ))
}

/// Closed loops from every controllable integer point of the region.
fn dwell_runs(p: &Pipeline) -> Result<(usize, usize, usize), String> {
    let n = p.model.dwell_steps();
    let sim = p.cfg.simulation.as_ref().ok_or("no simulation section")?;
    let mut starts = vec![sim.x0.clone()];
    for a in -6..=6 {
        for b in -4..=4 {
            starts.push(vec![a as f64, b as f64]);
        }
    }
    let (mut runs, mut switches, mut min_gap) = (0, 0, usize::MAX);
    for x0 in &starts {
        let trace = match refine_and_run(&p.system, &p.model, &p.ctrl, &p.rc, x0, sim.horizon, None) {
            Ok(t) => t,
            Err(symswitch::Error::Uncontrollable(_)) if x0 != &sim.x0 => continue,
            Err(e) => return Err(format!("x0 {x0:?}: {e}")),
        };
        runs += 1;
        let gaps = trace.switch_gaps();
        if let Some(&g) = gaps.iter().min() {
            min_gap = min_gap.min(g);
            ensure(g >= n, format!("x0 {x0:?}: switch gap {g}"))?;
        }
        let times = trace.switch_times();
        if let Some(&first) = times.first() {
            ensure(first >= n, format!("x0 {x0:?}: first switch after {first} samples"))?;
        }
        switches += times.len();
        let monitor = safety_monitor(&trace, &p.spec, p.precision.epsilon);
        ensure(monitor.passed(), format!("x0 {x0:?}: {:?}", monitor.violation))?;
        let mut since = 0;
        for k in 0..trace.len() {
            if k > 0 {
                since = if trace.modes[k] == trace.modes[k - 1] { since + 1 } else { 0 };
            }
            let parts = p.model.decode(trace.abstract_states[k]);
            ensure(
                parts.counter == since.min(n - 1) && parts.mode == trace.modes[k].zero_based(),
                format!("x0 {x0:?}: counter {} at step {k}, expected {}", parts.counter, since.min(n - 1)),
            )?;
        }
    }
    Ok((runs, switches, min_gap))
}

fn dwell_compliance(desk: &Pipeline, full: &Pipeline) -> Outcome {
    let n = full.model.dwell_steps();
    ensure(n == 4, format!("N = {n}"))?;
    let (r1, s1, g1) = dwell_runs(desk)?;
    let (r2, s2, g2) = dwell_runs(full)?;
    ensure(s1 > 0 && s2 > 0, "no run switched")?;
    Ok(format!(
        "desk {r1} runs / {s1} switches, full {r2} runs / {s2} switches, shortest gap {} samples",
        g1.min(g2)
    ))
}

fn closure(pipes: &[&Pipeline]) -> Result<String, String> {
    let mut parts = Vec::new();
    for (i, p) in pipes.iter().enumerate() {
        let report = check_relation_closure(&p.system, &p.model, &p.rc, 1000, 7 + i as u64).map_err(err)?;
        ensure(report.pairs_checked == 1000, format!("{} pairs", report.pairs_checked))?;
        if let Some(first) = report.violations.first() {
            return Err(format!("{} violations, first {first:?}", report.violations.len()));
        }
        parts.push(report.transitions_checked.to_string());
    }
    Ok(format!("closure 0 violations ({} transitions)", parts.join("/")))
}

fn schedules(pipes: &[&Pipeline]) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cert = models::dwell_certificate();
    let chars = cert.characteristics();
    let (kappa, tau_s, n) = (cert.kappa(), 0.5, 4);
    let mut cases: Vec<(f64, f64)> = pipes
        .iter()
        .filter(|p| matches!(p.model.kind(), ModelKind::Dwell { .. }))
        .map(|p| (p.precision.epsilon, p.precision.eta))
        .collect();
    for _ in 0..200 {
        let eps = rng.gen_range(0.01..5.0);
        let eta_max = eta_budget_dwell(eps, tau_s, 2.0, cert.mu(), &chars, kappa).map_err(err)?;
        cases.push((eps, eta_max * rng.gen_range(0.0..1.0f64)));
        cases.push((eps, eta_max));
    }
    let decay = (-kappa * tau_s).exp();
    let mut worst = 0.0f64;
    for &(eps, eta) in &cases {
        let rc = RelationCertificate::dwell(cert.clone(), eps, eta, tau_s, n);
        let LevelSchedule::Dwell { levels } = &rc.schedule else {
            return Err("not a dwell schedule".into());
        };
        ensure(levels.len() == n + 1, format!("{} levels", levels.len()))?;
        for (i, &d) in levels.iter().enumerate() {
            let di = decay.powi(i as i32);
            let closed = di * chars.a_lower * eps + chars.g * eta * (1.0 - di) / (1.0 - decay);
            let rel = (d - closed).abs() / closed.max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
            ensure(rel <= 1e-12, format!("level {i} at eps {eps}, eta {eta}: {d} vs {closed}"))?;
        }
        ensure(rc.is_monotone(), format!("not monotone at eps {eps}, eta {eta}"))?;
        ensure(rc.satisfies_switch_bound(), format!("delta_N > delta_0/mu at eps {eps}, eta {eta}"))?;
    }
    Ok(format!("{} schedules, worst relative error {worst:.1e}", cases.len()))
}

fn random_signal(rng: &mut ChaCha8Rng, periods: usize, dwell: usize) -> Vec<ModeId> {
    let mut seq = Vec::with_capacity(periods);
    let mut mode = rng.gen_range(0..2usize);
    while seq.len() < periods {
        let len = if dwell <= 1 { 1 } else { dwell + rng.gen_range(0..dwell) };
        seq.extend(std::iter::repeat_n(ModeId::from_zero_based(mode), len));
        if dwell <= 1 {
            mode = rng.gen_range(0..2);
        } else {
            mode = 1 - mode;
        }
    }
    seq.truncate(periods);
    seq
}

fn kl_domination() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let boost = models::boost_certificate();
    let dwell = models::dwell_certificate();
    let cases: [(SwitchedSystem, CertCharacteristics, KLBound, usize, [f64; 4]); 2] = [
        (
            models::boost_converter(),
            boost.characteristics(),
            KLBound::common(&boost.characteristics(), boost.kappa()),
            1,
            [0.0, 3.0, 0.0, 8.0],
        ),
        (
            models::dwell_example(),
            dwell.characteristics(),
            KLBound::dwell(&dwell.characteristics(), dwell.kappa(), dwell.mu(), 2.0).map_err(err)?,
            4,
            [-6.0, 6.0, -4.0, 4.0],
        ),
    ];
    let mut tightest = 0.0f64;
    let mut checked = 0usize;
    for (sys, _, bound, dwell_steps, b) in &cases {
        for _ in 0..1000 {
            let draw = |rng: &mut ChaCha8Rng| DVector::from_vec(vec![rng.gen_range(b[0]..b[1]), rng.gen_range(b[2]..b[3])]);
            let (x0, y0) = (draw(&mut rng), draw(&mut rng));
            let signal = SampledSwitchingSignal::new(random_signal(&mut rng, 100, *dwell_steps), 0.5).map_err(err)?;
            let tx = simulate_switched(sys, &x0, &signal).map_err(err)?;
            let ty = simulate_switched(sys, &y0, &signal).map_err(err)?;
            let r = (&x0 - &y0).norm();
            for k in 0..tx.states.len() {
                let d = (&tx.states[k] - &ty.states[k]).norm();
                let beta = bound.eval(r, tx.times[k]);
                ensure(d <= beta * (1.0 + 1e-9), format!("distance {d} exceeds bound {beta} at t = {}", tx.times[k]))?;
                if beta > 0.0 {
                    tightest = tightest.max(d / beta);
                }
                checked += 1;
            }
        }
    }
    Ok(format!("{checked} instants, max distance/bound {tightest:.3}"))
}

fn random_ts(rng: &mut ChaCha8Rng, labels: usize) -> FiniteTS {
    let n = rng.gen_range(1..=6usize);
    let outputs: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen_range(0.0..1.0)]).collect();
    let mut transitions = Vec::new();
    for s in 0..n {
        for l in 0..labels {
            for t in 0..n {
                if rng.gen_bool(0.3) {
                    transitions.push((s, l, t));
                }
            }
        }
    }
    let initials: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
    FiniteTS::new(outputs, labels, &transitions, &initials).expect("valid random system")
}

fn bisim_suite() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (mut pairs, mut excluded) = (0, 0);
    for _ in 0..1000 {
        let labels = rng.gen_range(1..=2);
        let t1 = random_ts(&mut rng, labels);
        let t2 = random_ts(&mut rng, labels);
        let eps = rng.gen_range(0.0..0.6);
        let rel = max_approx_bisim(&t1, &t2, eps).map_err(err)?;
        ensure(is_approx_bisim(&t1, &t2, eps, &rel).map_err(err)?.is_none(), "maximal relation is not a bisimulation")?;
        pairs += rel.len();
        for a in 0..t1.state_count() {
            for b in 0..t2.state_count() {
                if rel.contains(a, b) {
                    continue;
                }
                let mut bigger = rel.clone();
                bigger.insert(a, b);
                ensure(
                    is_approx_bisim(&t1, &t2, eps, &bigger).map_err(err)?.is_some(),
                    format!("pair ({a}, {b}) could be added"),
                )?;
                excluded += 1;
            }
        }
    }
    Ok(format!("1000 systems, {pairs} related pairs, {excluded} exclusions confirmed"))
}

fn lattice_suite(pipes: &[&Pipeline]) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    for n in 1..=4 {
        let eta = rng.gen_range(0.001..1.0);
        let lattice = Lattice::new(n, eta).map_err(err)?;
        for _ in 0..2000 {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-100.0..100.0)).collect();
            let q = lattice.embed(&lattice.quantize(&x));
            let d = x.iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            ensure(d <= eta * (1.0 + 1e-12), format!("n = {n}: quantization distance {d} > {eta}"))?;
        }
    }
    let mut samples = 0;
    for p in pipes {
        let maps = p.system.step_maps(p.model.tau_s()).map_err(err)?;
        let grid = p.model.grid();
        let (eta, s) = (grid.lattice().eta(), grid.lattice().spacing());
        let last = p.model.dwell_steps().saturating_sub(1);
        let mut y = vec![0.0; 2];
        for _ in 0..1000 {
            let cell = rng.gen_range(0..grid.len());
            let mode = rng.gen_range(0..p.model.mode_count());
            let id = match p.model.kind() {
                ModelKind::Common => cell,
                ModelKind::Dwell { .. } => p.model.encode(StateParts { cell, mode, counter: last }),
            };
            maps[mode].apply_into(&grid.embed(cell), &mut y);
            let listed: Vec<usize> = p.model.successors(id, mode).map(|t| p.model.decode(t).cell).collect();
            let dist = |c: usize| {
                let q = grid.embed(c);
                ((q[0] - y[0]).powi(2) + (q[1] - y[1]).powi(2)).sqrt()
            };
            for &c in &listed {
                ensure(dist(c) <= eta + 1e-12, format!("successor {c} at distance {} > {eta}", dist(c)))?;
            }
            let exits = !grid.region_contains(&y);
            ensure(p.model.endpoint_exits(id, mode) == exits, format!("exit flag of ({id}, {mode})"))?;
            ensure(exits || !listed.is_empty(), format!("({id}, {mode}) has no successor"))?;
            let lo: Vec<i64> = y.iter().map(|v| ((v - eta) / s).floor() as i64 - 1).collect();
            let hi: Vec<i64> = y.iter().map(|v| ((v + eta) / s).ceil() as i64 + 1).collect();
            for k1 in lo[0]..=hi[0] {
                for k2 in lo[1]..=hi[1] {
                    if let Some(c) = grid.cell_of(&[k1, k2]) {
                        if dist(c) < eta * (1.0 - 1e-12) {
                            ensure(listed.contains(&c), format!("lattice point {c} within eta is missing"))?;
                        }
                    }
                }
            }
            samples += 1;
        }
    }
    Ok(format!("quantization 8000 points, {samples} successor lists sound and complete"))
}

fn property_suites(boost: &Pipeline, desk: &Pipeline, full: &Pipeline) -> Outcome {
    let pipes = [boost, desk, full];
    let parts = [
        ("a", closure(&pipes)),
        ("b", schedules(&pipes)),
        ("c", kl_domination()),
        ("d", bisim_suite()),
        ("e", lattice_suite(&pipes)),
    ];
    let mut failed = Vec::new();
    let mut passed = Vec::new();
    for (tag, r) in parts {
        match r {
            Ok(m) => passed.push(format!("({tag}) {m}")),
            Err(m) => failed.push(format!("({tag}) {m}")),
        }
    }
    if failed.is_empty() {
        Ok(passed.join("; "))
    } else {
        Err(failed.join("; "))
    }
}

fn instability() -> Outcome {
    let sys = models::dwell_example();
    let x0 = DVector::from_vec(vec![1.0, 0.0]);
    let seq: Vec<ModeId> = (0..16).map(|k| ModeId::from_zero_based((k / 2) % 2)).collect();
    let tr = simulate_switched(&sys, &x0, &SampledSwitchingSignal::new(seq, 0.5).map_err(err)?).map_err(err)?;
    let end = tr.states.last().expect("nonempty").norm();
    ensure((tr.times[16] - 8.0).abs() < 1e-12, "horizon is not t = 8")?;
    ensure(end > x0.norm(), format!("|x(8)| = {end}"))?;
    let period = (sys.modes()[1].a() * 1.0).exp() * (sys.modes()[0].a() * 1.0).exp();
    let rho = period.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    ensure(rho > 1.0, format!("spectral radius {rho}"))?;
    Ok(format!("|x(8)| = {end:.3} > |x(0)| = 1, period spectral radius {rho:.3}"))
}

fn main() -> ExitCode {
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "certificate verification", certificates()),
        (2, "certificate characteristics", characteristics()),
        (3, "precision budgets", budgets()),
    ];
    let start = Instant::now();
    let pipes = (
        pipeline("boost_fine.json"),
        pipeline("dwell_desk.json"),
        pipeline("dwell_full.json"),
    );
    eprintln!("pipelines built in {:.2}s", start.elapsed().as_secs_f64());
    match pipes {
        (Ok(boost), Ok(desk), Ok(full)) => {
            results.push((4, "exact state counts", state_counts(&boost, &full)));
            results.push((5, "controller synthesis", boost_controller(&boost)));
            results.push((6, "dwell compliance", dwell_compliance(&desk, &full)));
            results.push((7, "property suites", property_suites(&boost, &desk, &full)));
        }
        (b, d, f) => {
            let msg = [b.err(), d.err(), f.err()].into_iter().flatten().collect::<Vec<_>>().join("; ");
            for (i, name) in [
                (4, "exact state counts"),
                (5, "controller synthesis"),
                (6, "dwell compliance"),
                (7, "property suites"),
            ] {
                results.push((i, name, Err(msg.clone())));
            }
        }
    }
    results.push((8, "instability witness", instability()));
    let mut ok = true;
    for (i, name, r) in &results {
        match r {
            Ok(m) => println!("PASS {i} {name}: {m}"),
            Err(m) => {
                ok = false;
                println!("FAIL {i} {name}: {m}");
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
