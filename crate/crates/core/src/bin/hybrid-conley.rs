use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use hybrid_conley::builtins::{instantiate, oracle_report, verify_lyapunov, BuiltinId, LyapunovCandidate, RecurrentOracle};
use hybrid_conley::chain::{
    build_box_lyapunov, build_transition_graph, chain_recurrent_boxes, conley_pairs, default_probes,
    lyapunov_obstruction, GraphParams, ObstructionOptions, DEFAULT_COMPONENT_CAP,
};
use hybrid_conley::guard::{verify_guard, GuardVerdict, GuardVerifyOptions};
use hybrid_conley::integrate::{simulate_execution, SimBudget};
use hybrid_conley::io;
use hybrid_conley::suspension::{
    build_suspension_graph, classical_suspension_check, conjugacy_check, continuity_check, embed, relax,
    relaxed_simulate, sample_states, semigroup_check, suspension_compatibility_check, suspension_trace,
    CompatibilityOptions, ContinuityOptions,
};
use hybrid_conley::{HybridError, HybridSystemDef, State, VERSION};

const EXIT_ERROR: u8 = 1;
const EXIT_VIOLATION: u8 = 2;
const EXIT_INCONCLUSIVE: u8 = 3;

#[derive(Parser)]
#[command(name = "hybrid-conley", version, about = "Simulation and Conley-theoretic analysis of hybrid systems")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate one execution and classify it.
    Simulate(SimulateArgs),
    /// Box-graph analysis: recurrent boxes, attractor-repeller pairs, box Lyapunov function.
    Analyze(AnalyzeArgs),
    /// Check the trapping-guard condition.
    VerifyGuard(VerifyGuardArgs),
    /// Check a Lyapunov candidate by sampling.
    VerifyLyapunov(VerifyLyapunovArgs),
    /// Suspension semiflow: traces and checks.
    Suspend(SuspendArgs),
    /// Closed-form quantities of a builtin system.
    Oracle(OracleArgs),
}

#[derive(Args, Clone)]
struct SystemArgs {
    /// Builtin system: ball, spring, counterexample, pathology, rotation, gradientflow.
    #[arg(long, conflicts_with = "system")]
    builtin: Option<String>,
    /// System definition JSON file.
    #[arg(long)]
    system: Option<PathBuf>,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    d: Option<f64>,
    /// Energy bound for the ball and spring state spaces.
    #[arg(long)]
    e0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args, Clone)]
struct CommonArgs {
    #[command(flatten)]
    sys: SystemArgs,
    /// Seed for every random sample; echoed into the output.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for JSON and CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long = "budget-time", default_value_t = 100.0)]
    budget_time: f64,
    #[arg(long = "budget-jumps", default_value_t = 100)]
    budget_jumps: usize,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Initial point, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: String,
    #[arg(long, default_value_t = 0)]
    mode: usize,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, default_value_t = 0.1)]
    h: f64,
    /// Flow time per graph edge (`--T` is accepted as a synonym).
    #[arg(long = "Tstep")]
    t_step: Option<f64>,
    #[arg(long = "T")]
    t: Option<f64>,
    /// Bloat radius for edge targets; defaults to `h`.
    #[arg(long)]
    pad: Option<f64>,
    /// Also search for an obstruction to a complete Lyapunov function.
    #[arg(long)]
    obstruction: bool,
}

#[derive(Args)]
struct VerifyGuardArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long = "m-max", default_value_t = 8)]
    m_max: usize,
    #[arg(long, default_value_t = 2000)]
    pairs: usize,
}

#[derive(Args)]
struct VerifyLyapunovArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// `reference` (alias `paper`), `ball:A,B`, `spring:A,B` or `constant:C`.
    #[arg(long, default_value = "reference")]
    candidate: String,
    #[arg(long, default_value_t = 1000)]
    samples: usize,
}

#[derive(Args)]
struct SuspendArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// semigroup, conjugacy, classical, continuity, relaxed, compat; without it a trace is written.
    #[arg(long)]
    check: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long, default_value_t = 0)]
    mode: usize,
    /// Trace length, or the chain time for `compat`.
    #[arg(long = "T", default_value_t = 10.0)]
    t: f64,
    #[arg(long = "Tstep", default_value_t = 5.0)]
    t_step: f64,
    #[arg(long, default_value_t = 0.25)]
    h: f64,
    #[arg(long, default_value_t = 0.8)]
    eps: f64,
    #[arg(long, default_value_t = 100)]
    samples: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    builtin: String,
    #[arg(long)]
    g: Option<f64>,
    #[arg(long)]
    d: Option<f64>,
    #[arg(long)]
    e0: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
}

type CliResult = Result<(Value, u8), HybridError>;

struct Loaded {
    sys: HybridSystemDef,
    id: Option<BuiltinId>,
    desc: Value,
}

fn load(a: &SystemArgs) -> Result<Loaded, HybridError> {
    match (&a.builtin, &a.system) {
        (Some(name), None) => {
            let id = BuiltinId::from_name(name, a.g, a.d, a.e0, a.alpha)?;
            Ok(Loaded { sys: instantiate(&id)?, desc: json!({ "builtin": &id }), id: Some(id) })
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path).map_err(|e| HybridError::Io(format!("{}: {e}", path.display())))?;
            let sys = HybridSystemDef::from_json_str(&text)?;
            Ok(Loaded { desc: json!({ "file": path.display().to_string(), "definition": sys.to_json() }), sys, id: None })
        }
        _ => Err(HybridError::BadParameter("give exactly one of --builtin or --system".into())),
    }
}

fn budget(c: &CommonArgs) -> Result<SimBudget, HybridError> {
    let b = SimBudget { max_time: c.budget_time, max_jumps: c.budget_jumps, ..Default::default() };
    b.validate()?;
    Ok(b)
}

fn parse_point(s: &str) -> Result<Vec<f64>, HybridError> {
    s.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| HybridError::BadParameter(format!("bad coordinate '{t}' in '{s}'"))))
        .collect()
}

fn envelope(command: &str, loaded: &Loaded, c: &CommonArgs, b: &SimBudget, extra: Value) -> Value {
    let mut params = json!({
        "system": loaded.desc,
        "seed": c.seed,
        "budget": b,
    });
    if let (Value::Object(p), Value::Object(e)) = (&mut params, extra) {
        p.extend(e);
    }
    json!({ "tool_version": VERSION, "command": command, "parameters": params })
}

fn with(mut base: Value, key: &str, v: Value) -> Value {
    base.as_object_mut().expect("object").insert(key.into(), v);
    base
}

fn out_dir(c: &CommonArgs) -> Result<Option<&Path>, HybridError> {
    if let Some(d) = &c.out {
        std::fs::create_dir_all(d).map_err(|e| HybridError::Io(format!("{}: {e}", d.display())))?;
    }
    Ok(c.out.as_deref())
}

fn simulate(a: &SimulateArgs) -> CliResult {
    let loaded = load(&a.common.sys)?;
    let b = budget(&a.common)?;
    let x0 = State::new(a.mode, parse_point(&a.x0)?);
    let tr = simulate_execution(&loaded.sys, &x0, &b)?;
    let mut out = envelope("simulate", &loaded, &a.common, &b, json!({ "x0": &x0 }));
    out = with(out, "class", serde_json::to_value(&tr.class).expect("json"));
    out = with(out, "n_jumps", json!(tr.n_jumps));
    out = with(out, "jump_times", json!(tr.jump_times()));
    out = with(out, "final_state", serde_json::to_value(tr.final_state()).expect("json"));
    if let Some(dir) = out_dir(&a.common)? {
        io::write_trace_csv(&tr, io::create_file(&dir.join("trace.csv"))?)?;
        io::write_json(&out, &dir.join("simulate.json"))?;
    }
    Ok((out, 0))
}

fn analyze(a: &AnalyzeArgs) -> CliResult {
    let loaded = load(&a.common.sys)?;
    let b = budget(&a.common)?;
    let t_step = a.t_step.or(a.t).unwrap_or(1.0);
    let mut params = GraphParams::new(a.h, t_step);
    params.seed = a.common.seed;
    if let Some(p) = a.pad {
        params.bloat_pad = p;
    }
    let g = build_transition_graph(&loaded.sys, &params, &b)?;
    let classes = chain_recurrent_boxes(&g);
    let lyap = build_box_lyapunov(&g.succ, &classes);
    let pairs = match conley_pairs(&g.succ, &classes, DEFAULT_COMPONENT_CAP) {
        Ok(p) => json!(p),
        Err(e) => json!({ "error": e.to_string() }),
    };
    let recurrent: Vec<Value> = classes
        .recurrent_boxes
        .iter()
        .map(|&bx| json!({ "box": bx, "mode": g.grid.boxes[bx].mode, "bounds": g.grid.bounds(bx) }))
        .collect();
    let sccs: Vec<&Vec<usize>> = classes.recurrent_sccs.iter().map(|&c| &classes.sccs[c]).collect();
    let values: Vec<f64> = (0..g.len()).map(|bx| lyap.value(bx)).collect();
    let mut out = envelope("analyze", &loaded, &a.common, &b, json!({ "graph": &params }));
    out = with(out, "n_boxes", json!(g.len()));
    out = with(out, "n_edges", json!(g.edges.len()));
    out = with(out, "failed_samples", json!(g.failed_samples));
    out = with(out, "recurrent_boxes", json!(recurrent));
    out = with(out, "sccs", json!(sccs));
    out = with(out, "pairs", pairs);
    out = with(out, "lyapunov_values", json!(values));
    if a.obstruction {
        let probes = default_probes(&loaded.sys, &g, &classes);
        let w = lyapunov_obstruction(&loaded.sys, &g, &classes, &probes, &ObstructionOptions::for_grid(a.h), &b)?;
        out = with(out, "obstruction", json!(w));
    }
    if let Some(dir) = out_dir(&a.common)? {
        io::write_edges_csv(&g, io::create_file(&dir.join("edges.csv"))?)?;
        io::write_boxes_csv(&g, &classes, &lyap, io::create_file(&dir.join("boxes.csv"))?)?;
        io::write_json(&out, &dir.join("analysis.json"))?;
    }
    Ok((out, 0))
}

fn verify_guard_cmd(a: &VerifyGuardArgs) -> CliResult {
    let loaded = load(&a.common.sys)?;
    let b = budget(&a.common)?;
    let opts = GuardVerifyOptions { m_max: a.m_max, n_pairs: a.pairs, seed: a.common.seed, ..Default::default() };
    let rep = verify_guard(&loaded.sys, &opts)?;
    let code = match rep.verdict {
        GuardVerdict::LikelyTrapping => 0,
        GuardVerdict::ViolationFound { .. } => EXIT_VIOLATION,
        GuardVerdict::Inconclusive => EXIT_INCONCLUSIVE,
    };
    let out = envelope("verify-guard", &loaded, &a.common, &b, json!({ "options": &opts }));
    let out = with(out, "report", serde_json::to_value(&rep).expect("json"));
    if let Some(dir) = out_dir(&a.common)? {
        io::write_json(&out, &dir.join("verify-guard.json"))?;
    }
    Ok((out, code))
}

fn parse_candidate(text: &str, id: Option<&BuiltinId>) -> Result<LyapunovCandidate, HybridError> {
    let bad = || HybridError::BadParameter(format!("bad candidate '{text}'"));
    if text == "reference" || text == "paper" {
        return id.and_then(LyapunovCandidate::for_builtin).ok_or_else(|| {
            HybridError::BadParameter("no reference candidate for this system".into())
        });
    }
    let (kind, rest) = text.split_once(':').ok_or_else(bad)?;
    let v = parse_point(rest)?;
    match (kind, v.as_slice(), id) {
        ("ball", [a, b], _) => {
            let g = match id {
                Some(BuiltinId::BouncingBall { g, .. }) => *g,
                _ => 1.0,
            };
            Ok(LyapunovCandidate::Ball { a: *a, b: *b, g })
        }
        ("spring", [a, b], _) => Ok(LyapunovCandidate::Spring { a: *a, b: *b }),
        ("constant", [c], _) => Ok(LyapunovCandidate::Constant { c: *c }),
        _ => Err(bad()),
    }
}

fn verify_lyapunov_cmd(a: &VerifyLyapunovArgs) -> CliResult {
    let loaded = load(&a.common.sys)?;
    let b = budget(&a.common)?;
    let cand = parse_candidate(&a.candidate, loaded.id.as_ref())?;
    let out = envelope(
        "verify-lyapunov",
        &loaded,
        &a.common,
        &b,
        json!({ "candidate": &cand, "samples": a.samples }),
    );
    let Some(oracle) = loaded.id.as_ref().and_then(RecurrentOracle::for_builtin) else {
        let out = with(out, "report", json!({ "inconclusive": "no closed-form recurrent set for this system" }));
        return Ok((out, EXIT_INCONCLUSIVE));
    };
    let rep = verify_lyapunov(&loaded.sys, &cand, &oracle, a.samples, a.common.seed)?;
    let code = if rep.pass { 0 } else { EXIT_VIOLATION };
    let out = with(out, "report", serde_json::to_value(&rep).expect("json"));
    if let Some(dir) = out_dir(&a.common)? {
        io::write_json(&out, &dir.join("verify-lyapunov.json"))?;
    }
    Ok((out, code))
}

fn suspend(a: &SuspendArgs) -> CliResult {
    let loaded = load(&a.common.sys)?;
    let sys = &loaded.sys;
    let b = budget(&a.common)?;
    let seed = a.common.seed;
    let extra = json!({ "check": &a.check, "T": a.t, "samples": a.samples, "h": a.h, "Tstep": a.t_step, "eps": a.eps });
    let out = envelope("suspend", &loaded, &a.common, &b, extra);
    let x0 = || -> Result<State, HybridError> {
        let s = a.x0.as_deref().ok_or_else(|| HybridError::BadParameter("--x0 is required".into()))?;
        Ok(State::new(a.mode, parse_point(s)?))
    };
    let (report, code) = match a.check.as_deref() {
        None => {
            let x = x0()?;
            let tr = suspension_trace(sys, &embed(&x), a.t, 0.05, &b)?;
            if let Some(dir) = out_dir(&a.common)? {
                io::write_suspension_csv(&tr, io::create_file(&dir.join("suspension.csv"))?)?;
            }
            (json!({ "samples": tr.len(), "endpoint": tr.last().map(|p| &p.1) }), 0)
        }
        Some("semigroup") => {
            let r = semigroup_check(sys, a.samples, 20.0, seed, &b)?;
            let c = if r.ok() { 0 } else { EXIT_VIOLATION };
            (json!(r), c)
        }
        Some("conjugacy") => {
            let r = conjugacy_check(sys, a.samples, seed, &b)?;
            let c = if r.ok() { 0 } else { EXIT_VIOLATION };
            (json!(r), c)
        }
        Some("classical") => {
            let r = classical_suspension_check(sys, a.samples, a.t, seed, &b)?;
            let c = if r.mismatches.is_empty() { 0 } else { EXIT_VIOLATION };
            (json!(r), c)
        }
        Some("continuity") => {
            let opts = ContinuityOptions { n_pairs: a.samples.max(1) * 100, seed, ..Default::default() };
            let r = continuity_check(sys, &opts, &b)?;
            let c = if r.witnesses.is_empty() { 0 } else { EXIT_VIOLATION };
            (json!({ "options": opts, "report": r }), c)
        }
        Some("relaxed") => {
            let tr = relaxed_simulate(&relax(sys), &embed(&x0()?), &b)?;
            if let Some(dir) = out_dir(&a.common)? {
                io::write_trace_csv(&tr, io::create_file(&dir.join("relaxed-trace.csv"))?)?;
            }
            (json!({ "class": tr.class, "n_jumps": tr.n_jumps, "jump_times": tr.jump_times() }), 0)
        }
        Some("compat") => {
            let g = build_transition_graph(sys, &GraphParams::new(a.h, a.t_step), &b)?;
            let sg = build_suspension_graph(sys, a.h, a.t_step, a.h, &b)?;
            let xs = sample_states(sys, a.samples, seed);
            let ys = sample_states(sys, a.samples, seed.wrapping_add(1));
            let pairs: Vec<(State, State)> = xs.iter().cloned().zip(ys).collect();
            let opts = CompatibilityOptions { h: a.h, t_transient: 60.0, t_window: 10.0, eps: a.eps, t_chain: a.t, seed };
            let r = suspension_compatibility_check(sys, &g, &sg, &xs, &pairs, &opts, &b)?;
            let c = if r.disagreements.is_empty() { 0 } else { EXIT_VIOLATION };
            (json!(r), c)
        }
        Some(other) => return Err(HybridError::BadParameter(format!("unknown check '{other}'"))),
    };
    let out = with(out, "report", report);
    if let Some(dir) = out_dir(&a.common)? {
        io::write_json(&out, &dir.join("suspend.json"))?;
    }
    Ok((out, code))
}

fn oracle(a: &OracleArgs) -> CliResult {
    let id = BuiltinId::from_name(&a.builtin, a.g, a.d, a.e0, a.alpha)?;
    Ok((oracle_report(&id)?, 0))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    let res = match &cli.cmd {
        Cmd::Simulate(a) => simulate(a),
        Cmd::Analyze(a) => analyze(a),
        Cmd::VerifyGuard(a) => verify_guard_cmd(a),
        Cmd::VerifyLyapunov(a) => verify_lyapunov_cmd(a),
        Cmd::Suspend(a) => suspend(a),
        Cmd::Oracle(a) => oracle(a),
    };
    match res {
        Ok((v, code)) => {
            use std::io::Write;
            let _ = writeln!(std::io::stdout().lock(), "{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
