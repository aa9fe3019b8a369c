//! Property checks shared by the `properties` and `acceptance` test targets.
//!
//! Each check returns `Ok(summary)` or `Err(description of the first failure)`.

#![allow(dead_code)]

use std::collections::VecDeque;

use hybrid_conley::builtins::{instantiate, BuiltinId};
use hybrid_conley::chain::{
    build_box_lyapunov, build_transition_graph, chain_recurrent_boxes, conley_pairs, find_chain, scc_classes,
    ChainSearchOptions, GraphParams, TransitionGraph,
};
use hybrid_conley::guard::{check_lie_criterion, check_mu_continuity, lie_tower, LieOutcome, RatPoly};
use hybrid_conley::integrate::{flow_for, max_flow_time, simulate_execution, FlowTime, SimBudget};
use hybrid_conley::poly::{Poly, PolyMap};
use hybrid_conley::sampling;
use hybrid_conley::suspension::{
    conjugacy_check, continuity_check, phi, relax, relaxed_simulate, semigroup_check, ContinuityOptions,
    SuspensionPoint,
};
use hybrid_conley::{HybridSystemDef, State};
use num_bigint::BigInt;
use num_rational::BigRational;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestCaseError, TestRng, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    let cfg = Config { cases, failure_persistence: None, ..Config::default() };
    TestRunner::new_with_rng(cfg, TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn run<S: Strategy>(cases: u32, s: S, f: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    runner(cases).run(&s, f).map_err(|e| e.to_string())
}

pub fn registry() -> Vec<(&'static str, HybridSystemDef)> {
    [
        ("ball 0.8", BuiltinId::ball(1.0, 0.8)),
        ("ball 1", BuiltinId::ball(1.0, 1.0)),
        ("spring", BuiltinId::spring(0.8)),
        ("counterexample", BuiltinId::Counterexample),
        ("pathology", BuiltinId::OmegaPathology),
        ("gradientflow", BuiltinId::GradientFlow),
    ]
    .into_iter()
    .map(|(n, id)| (n, instantiate(&id).unwrap()))
    .collect()
}

fn with_guards() -> Vec<(&'static str, HybridSystemDef)> {
    registry().into_iter().filter(|(_, s)| s.has_guards()).collect()
}

fn state_from_seed(sys: &HybridSystemDef, seed: u64) -> State {
    sampling::sample_state(sys, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn sim_budget() -> SimBudget {
    SimBudget { max_time: 40.0, max_jumps: 60, ..Default::default() }
}

pub fn jump_time_monotonicity() -> Check {
    let systems = registry();
    let n = systems.len();
    run(120, (0..n, any::<u64>()), |(k, seed)| {
        let sys = &systems[k].1;
        let x = state_from_seed(sys, seed);
        let tr = simulate_execution(sys, &x, &sim_budget()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(tr.arcs[0][0].0, 0.0);
        let times = tr.jump_times();
        prop_assert!(times.windows(2).all(|w| w[1] >= w[0]), "{:?}", times);
        prop_assert!(times.first().is_none_or(|&t| t >= 0.0));
        for (j, arc) in tr.arcs.iter().enumerate().skip(1) {
            prop_assert_eq!(arc[0].0, times[j - 1]);
        }
        for arc in &tr.arcs {
            prop_assert!(arc.windows(2).all(|w| w[1].0 >= w[0].0));
        }
        Ok(())
    })?;
    Ok("120 executions over the registry".into())
}

pub fn mu_cocycle() -> Check {
    let systems = [instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap(), instantiate(&BuiltinId::spring(0.8)).unwrap()];
    let b = SimBudget::default();
    run(200, (0..2usize, any::<u64>(), 0.01f64..0.99), |(k, seed, frac)| {
        let sys = &systems[k];
        let s = state_from_seed(sys, seed);
        let FlowTime::Finite(mu) = max_flow_time(sys, &s, 50.0, &b).unwrap() else { return Ok(()) };
        if mu <= 0.0 {
            return Ok(());
        }
        let t = frac * mu;
        let st = flow_for(sys, &s, t, &b).unwrap();
        let FlowTime::Finite(mu2) = max_flow_time(sys, &st, 50.0, &b).unwrap() else {
            return Err(TestCaseError::fail("flow time lost after partial flow"));
        };
        let err = (mu - t - mu2).abs();
        prop_assert!(err < 10.0 * b.integrator_tol * (1.0 + mu), "mu {} t {} mu' {} err {:e}", mu, t, mu2, err);
        Ok(())
    })?;
    Ok("200 samples on ball and spring".into())
}

pub fn flow_guard_exclusive() -> Check {
    let systems = registry();
    let n = systems.len();
    run(400, (0..n, any::<u64>(), any::<bool>()), |(k, seed, on_guard)| {
        let sys = &systems[k].1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = sampling::all_guard_points(sys, 16);
        let s = if on_guard && !pts.is_empty() {
            let (m, p) = &pts[(seed % pts.len() as u64) as usize];
            State::new(*m, p.clone())
        } else {
            sampling::sample_state(sys, &mut rng)
        };
        prop_assert!(sys.in_guard(&s, 1e-9) != sys.in_flow_set(&s, 1e-9), "{:?}", s);
        Ok(())
    })?;
    Ok("400 states over the registry".into())
}

pub fn ball_energy_along_arcs() -> Check {
    let sys = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
    let b = sim_budget();
    run(60, any::<u64>(), |seed| {
        let x = state_from_seed(&sys, seed);
        let tr = simulate_execution(&sys, &x, &b).unwrap();
        for arc in &tr.arcs {
            let e0 = 0.5 * arc[0].1.x[1].powi(2) + arc[0].1.x[0];
            for (_, s) in arc {
                let e = 0.5 * s.x[1].powi(2) + s.x[0];
                prop_assert!((e - e0).abs() < 10.0 * b.integrator_tol, "drift {:e}", e - e0);
            }
        }
        Ok(())
    })?;
    Ok("60 ball executions".into())
}

pub fn reset_consistency() -> Check {
    let systems = with_guards();
    let n = systems.len();
    let b = sim_budget();
    run(120, (0..n, any::<u64>()), |(k, seed)| {
        let sys = &systems[k].1;
        let x = state_from_seed(sys, seed);
        let tr = simulate_execution(sys, &x, &b).unwrap();
        for j in &tr.jumps {
            let g = &sys.mode(j.pre.mode).guards[j.guard];
            prop_assert!(g.psi.eval(&j.pre.x).abs() < b.event_tol, "psi {:e}", g.psi.eval(&j.pre.x));
            prop_assert_eq!(&j.post, &sys.reset_raw(&j.pre, j.guard));
        }
        Ok(())
    })?;
    Ok("120 executions over systems with guards".into())
}

// ---- graph-level ----

fn digraph() -> impl Strategy<Value = Vec<Vec<usize>>> {
    (2usize..14).prop_flat_map(|n| {
        proptest::collection::vec(proptest::collection::vec(0..n, 1..3), n).prop_map(|mut succ| {
            for s in &mut succ {
                s.sort_unstable();
                s.dedup();
            }
            succ
        })
    })
}

fn bfs(succ: &[Vec<usize>], start: &[usize], strict: bool) -> Vec<bool> {
    let mut seen = vec![false; succ.len()];
    let mut q: VecDeque<usize> = VecDeque::new();
    for &s in start {
        if strict {
            for &v in &succ[s] {
                q.push_back(v);
            }
        } else {
            q.push_back(s);
        }
    }
    while let Some(u) = q.pop_front() {
        if !seen[u] {
            seen[u] = true;
            q.extend(succ[u].iter().copied());
        }
    }
    seen
}

pub fn small_graphs() -> Vec<(&'static str, HybridSystemDef, GraphParams)> {
    vec![
        ("counterexample", instantiate(&BuiltinId::Counterexample).unwrap(), GraphParams::new(0.05, 0.25)),
        ("pathology", instantiate(&BuiltinId::OmegaPathology).unwrap(), GraphParams::new(0.02, 0.1)),
        ("gradientflow", instantiate(&BuiltinId::GradientFlow).unwrap(), GraphParams::new(0.1, 1.0)),
        ("ball 0.8", instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap(), GraphParams::new(0.1, 5.0)),
        ("ball 1", instantiate(&BuiltinId::ball(1.0, 1.0)).unwrap(), GraphParams::new(0.1, 5.0)),
    ]
}

fn builtin_graphs() -> Vec<(&'static str, HybridSystemDef, TransitionGraph)> {
    small_graphs()
        .into_iter()
        .map(|(n, s, p)| {
            let g = build_transition_graph(&s, &p, &SimBudget::default()).unwrap();
            (n, s, g)
        })
        .collect()
}

fn scc_sound(succ: &[Vec<usize>]) -> Result<(), String> {
    let c = scc_classes(succ);
    for &k in &c.recurrent_sccs {
        for &u in &c.sccs[k] {
            let r = bfs(succ, &[u], true);
            if let Some(&v) = c.sccs[k].iter().find(|&&v| !r[v]) {
                return Err(format!("{v} not reachable from {u} inside a recurrent class"));
            }
        }
    }
    for (k, comp) in c.sccs.iter().enumerate() {
        if !c.is_recurrent_scc[k] && comp.len() == 1 && succ[comp[0]].contains(&comp[0]) {
            return Err(format!("self loop at {} not recurrent", comp[0]));
        }
    }
    Ok(())
}

pub fn scc_soundness() -> Check {
    run(300, digraph(), |succ| scc_sound(&succ).map_err(TestCaseError::fail))?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (_, sys, _) = &small_graphs()[0];
    let g = build_transition_graph(sys, &GraphParams::new(0.1, 0.3), &SimBudget::default()).map_err(|e| e.to_string())?;
    scc_sound(&g.succ)?;
    let _ = &mut rng;
    Ok("300 random digraphs and a counterexample graph".into())
}

fn lyapunov_edges(succ: &[Vec<usize>]) -> Result<(), String> {
    let c = scc_classes(succ);
    let l = build_box_lyapunov(succ, &c);
    for (u, vs) in succ.iter().enumerate() {
        for &v in vs {
            let (a, b) = (l.value(u), l.value(v));
            let ok = if c.scc_of[u] == c.scc_of[v] { a == b } else { a > b && l.exact_value(u) > l.exact_value(v) };
            if !ok {
                return Err(format!("edge {u}->{v}: values {a} {b}"));
            }
        }
    }
    let mut vals: Vec<u32> = c.recurrent_sccs.iter().map(|&k| l.level[k]).collect();
    vals.sort_unstable();
    if vals.windows(2).any(|w| w[0] == w[1]) {
        return Err("two recurrent classes share a level".into());
    }
    Ok(())
}

pub fn box_lyapunov_edge_property() -> Check {
    run(300, digraph(), |succ| lyapunov_edges(&succ).map_err(TestCaseError::fail))?;
    for (name, _, g) in builtin_graphs() {
        lyapunov_edges(&g.succ).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok("300 random digraphs and the builtin graphs".into())
}

fn duality(succ: &[Vec<usize>]) -> Result<usize, String> {
    let c = scc_classes(succ);
    let pairs = match conley_pairs(succ, &c, 20) {
        Ok(p) => p,
        Err(_) => return Ok(0),
    };
    for p in &pairs {
        let r = bfs(succ, &p.repeller, false);
        if let Some(&a) = p.attractor.iter().find(|&&a| r[a]) {
            return Err(format!("attractor node {a} reachable from the repeller"));
        }
        let fwd = bfs(succ, &p.attractor, false);
        if (0..succ.len()).any(|v| fwd[v] && !p.attractor.contains(&v)) {
            return Err("attractor not forward invariant".into());
        }
    }
    Ok(pairs.len())
}

pub fn pair_duality() -> Check {
    run(300, digraph(), |succ| duality(&succ).map(|_| ()).map_err(TestCaseError::fail))?;
    for (name, _, g) in builtin_graphs() {
        duality(&g.succ).map_err(|e| format!("{name}: {e}"))?;
    }
    Ok("300 random digraphs and the builtin graphs".into())
}

/// Fine recurrent boxes must sit inside the coarse recurrent set grown by one coarse layer.
pub fn refinement_sandwich() -> Check {
    let b = SimBudget::default();
    let mut report = Vec::new();
    for (name, sys, p) in small_graphs() {
        let coarse = build_transition_graph(&sys, &p, &b).map_err(|e| e.to_string())?;
        let fine_p = GraphParams::new(p.h / 2.0, p.t_step);
        let fine = build_transition_graph(&sys, &fine_p, &b).map_err(|e| e.to_string())?;
        let rc = chain_recurrent_boxes(&coarse).recurrent_boxes;
        let grown = coarse.grid.dilate(&rc, 1);
        let rf = chain_recurrent_boxes(&fine).recurrent_boxes;
        let outside: Vec<usize> = rf
            .iter()
            .copied()
            .filter(|&bx| {
                let c = fine.grid.center(bx);
                coarse.grid.locate(&c).is_none_or(|cb| grown.binary_search(&cb).is_err())
            })
            .collect();
        if !outside.is_empty() {
            return Err(format!("{name}: {} fine recurrent boxes outside, e.g. {:?}", outside.len(), fine.grid.bounds(outside[0])));
        }
        report.push(format!("{name} {}->{}", rc.len(), rf.len()));
    }
    Ok(report.join(", "))
}

pub struct DecompositionOutcome {
    pub name: &'static str,
    pub pairs: usize,
    /// Recurrent boxes farther than one layer from the pair intersection.
    pub missing: Vec<usize>,
    /// Intersection boxes farther than one layer from the recurrent set.
    pub extra: Vec<usize>,
    /// Recurrent boxes whose class has a path into some emitted attractor it is not part of.
    pub linked: Vec<usize>,
}

pub fn decomposition_outcomes() -> Result<Vec<DecompositionOutcome>, String> {
    let mut out = Vec::new();
    for (name, _, g) in builtin_graphs() {
        let c = chain_recurrent_boxes(&g);
        let pairs = conley_pairs(&g.succ, &c, 20).map_err(|e| format!("{name}: {e}"))?;
        let n = g.len();
        let mut inter = vec![true; n];
        let mut linked = vec![false; n];
        for p in &pairs {
            let mut in_p = vec![false; n];
            for &v in p.attractor.iter().chain(&p.repeller) {
                in_p[v] = true;
            }
            let reaches_a = {
                let mut pred = vec![Vec::new(); n];
                for (u, vs) in g.succ.iter().enumerate() {
                    for &v in vs {
                        pred[v].push(u);
                    }
                }
                bfs(&pred, &p.attractor, false)
            };
            for v in 0..n {
                inter[v] &= in_p[v];
                linked[v] |= reaches_a[v] && !p.attractor.contains(&v);
            }
        }
        let inter: Vec<usize> = (0..n).filter(|&v| inter[v]).collect();
        let rec = &c.recurrent_boxes;
        let grown_rec = g.grid.dilate(rec, 1);
        let grown_int = g.grid.dilate(&inter, 1);
        out.push(DecompositionOutcome {
            name,
            pairs: pairs.len(),
            missing: rec.iter().copied().filter(|v| grown_int.binary_search(v).is_err()).collect(),
            extra: inter.iter().copied().filter(|v| grown_rec.binary_search(v).is_err()).collect(),
            linked: rec.iter().copied().filter(|&v| linked[v]).collect(),
        });
    }
    Ok(out)
}

/// The intersection of `A ∪ A*` over all pairs against the recurrent boxes, up to one layer.
///
/// With `A*` taken as the nodes that cannot reach `A`, a recurrent class with a path into a
/// lower attractor belongs to neither side; such classes are reported, never hidden. The
/// check passes when every discrepancy is of that kind and fails otherwise.
pub fn decomposition() -> Check {
    let mut report = Vec::new();
    for o in decomposition_outcomes()? {
        if !o.extra.is_empty() {
            return Err(format!("{}: {} intersection boxes off the recurrent set", o.name, o.extra.len()));
        }
        if let Some(v) = o.missing.iter().find(|v| o.linked.binary_search(v).is_err()) {
            return Err(format!("{}: recurrent box {v} outside the intersection without a path into an attractor", o.name));
        }
        if o.missing.is_empty() {
            report.push(format!("{} exact ({} pairs)", o.name, o.pairs));
        } else {
            report.push(format!("{} misses {} linked boxes ({} pairs)", o.name, o.missing.len(), o.pairs));
        }
    }
    Ok(report.join(", "))
}

/// Executions from recurrent boxes stay within two layers of the recurrent set.
///
/// Boxes are an outer approximation, so a sampled point may lie off the true recurrent set and
/// make a large excursion (a ball bounce, a departure along a saddle's unstable manifold).
/// Escapes are tolerated only from such points; on the pathology system every start may
/// escape since its recurrent set is not forward invariant (`r(r(-2)) = -1`), and at least one
/// must.
pub fn forward_invariance_proxy() -> Check {
    let b = sim_budget();
    let mut report = Vec::new();
    for (name, sys, g) in builtin_graphs() {
        let rec = chain_recurrent_boxes(&g).recurrent_boxes;
        let grown = g.grid.dilate(&rec, 2);
        // Start points off the known recurrent set.
        let allowed: fn(&State) -> bool = match name {
            "pathology" => |_| true,
            "gradientflow" => |s| [-1.0, 0.0, 1.0].iter().all(|e| (s.x[0] - e).hypot(s.x[1]) > 1e-9),
            "ball 0.8" => |s| s.x[0].hypot(s.x[1]) > 1e-9,
            _ => |_| false,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (mut checked, mut escaped) = (0, 0);
        for i in 0..100 {
            let bx = rec[(i * 7919) % rec.len()];
            let x: Vec<f64> = g.grid.bounds(bx).iter().map(|(lo, hi)| rand::Rng::gen_range(&mut rng, *lo..=*hi)).collect();
            let s = State::new(g.grid.boxes[bx].mode, x);
            if !sys.in_state_space(&s, 0.0) {
                continue;
            }
            let tr = simulate_execution(&sys, &s, &b).map_err(|e| format!("{name}: {e}"))?;
            let leaves = tr.arcs.iter().flatten().find(|(_, st)| g.grid.locate(st).is_none_or(|c| grown.binary_search(&c).is_err()));
            if let Some((t, st)) = leaves {
                if !allowed(&s) {
                    return Err(format!("{name}: execution from {:?} leaves at t={t}: {:?}", s, st));
                }
                escaped += 1;
            }
            checked += 1;
        }
        if name == "pathology" && escaped == 0 {
            return Err("pathology: no execution left the recurrent set".into());
        }
        report.push(format!("{name} {checked} ({escaped} escapes from off the recurrent set)"));
    }
    Ok(report.join(", "))
}

/// `find_chain` with and without the nice-only restriction agree on 50 pairs per system.
///
/// At a fixed `(eps, T)` a target within flow time `T` downstream of a reset image is reachable
/// only by a chain that jumps before `T` has elapsed, so `T` is kept short enough that the flow
/// after any reset stays within `eps`.
pub fn nice_chain_equivalence() -> Check {
    let b = SimBudget::default();
    let cases = [
        ("counterexample", BuiltinId::Counterexample, 0.05, 0.1, 0.15),
        ("pathology", BuiltinId::OmegaPathology, 0.02, 0.05, 0.06),
        ("gradientflow", BuiltinId::GradientFlow, 0.1, 0.1, 0.3),
    ];
    let mut report = Vec::new();
    for (name, id, h, t, eps) in cases {
        let sys = instantiate(&id).unwrap();
        let g = build_transition_graph(&sys, &GraphParams::new(h, t), &b).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let nice_opts = ChainSearchOptions { nice_only: true, ..Default::default() };
        let mut found = 0;
        for _ in 0..50 {
            let x = sampling::sample_state(&sys, &mut rng);
            let y = sampling::sample_state(&sys, &mut rng);
            let plain = find_chain(&sys, &g, &x, &y, eps, t, &ChainSearchOptions::default(), &b).is_ok();
            let nice = find_chain(&sys, &g, &x, &y, eps, t, &nice_opts, &b).is_ok();
            if plain != nice {
                return Err(format!("{name}: {:?} -> {:?}: plain {plain}, nice {nice}", x, y));
            }
            found += plain as usize;
        }
        report.push(format!("{name} {found}/50 connected"));
    }
    Ok(report.join(", "))
}

// ---- suspension ----

pub fn semigroup_law() -> Check {
    let sys = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
    let r = semigroup_check(&sys, 100, 20.0, 21, &SimBudget::default()).map_err(|e| e.to_string())?;
    if !r.ok() {
        return Err(format!("{} failures, first {:?}", r.failures.len(), r.failures[0]));
    }
    Ok(format!("100 samples, max error {:.2e}", r.max_error))
}

pub fn cylinder_exactness() -> Check {
    let sys = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
    let b = SimBudget::default();
    run(300, (-3.1f64..0.0, 0.0f64..1.0, 0.0f64..1.0), |(y, s, frac)| {
        let z = State::new(0, vec![0.0, y]);
        let t = frac * (1.0 - s);
        if s + t >= 1.0 {
            return Ok(());
        }
        let p = SuspensionPoint::Cyl { z: z.clone(), guard: 0, s };
        let r = phi(&sys, t, &p, &b).unwrap();
        prop_assert_eq!(r.endpoint, SuspensionPoint::Cyl { z, guard: 0, s: s + t });
        Ok(())
    })?;
    Ok("300 rides".into())
}

pub fn conjugacy() -> Check {
    let sys = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
    let r = conjugacy_check(&sys, 100, 22, &SimBudget::default()).map_err(|e| e.to_string())?;
    if !r.ok() {
        return Err(format!("{} failures, first {:?}", r.failures.len(), r.failures.first()));
    }
    Ok(format!("100 samples, max error {:.2e}", r.max_error))
}

pub fn relaxation_gap() -> Check {
    let systems = with_guards();
    let n = systems.len();
    let b = sim_budget();
    run(80, (0..n, any::<u64>()), |(k, seed)| {
        let sys = &systems[k].1;
        let x = state_from_seed(sys, seed);
        let tr = relaxed_simulate(&relax(sys), &hybrid_conley::suspension::embed(&x), &b).unwrap();
        let times = tr.jump_times();
        prop_assert!(times.windows(2).all(|w| w[1] - w[0] >= 1.0 - b.event_tol), "{:?}", times);
        Ok(())
    })?;
    Ok("80 relaxed executions".into())
}

pub fn continuity_direction() -> Check {
    let b = SimBudget::default();
    let opts = ContinuityOptions::default();
    let spring = instantiate(&BuiltinId::spring(0.8)).unwrap();
    let rs = continuity_check(&spring, &opts, &b).map_err(|e| e.to_string())?;
    let near_origin = rs.witnesses.iter().any(|w| w.p.x.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.1);
    if !near_origin {
        return Err(format!("no spring witness near the origin (worst gap {})", rs.worst_gap));
    }
    let ball = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
    let rb = continuity_check(&ball, &opts, &b).map_err(|e| e.to_string())?;
    if !rb.witnesses.is_empty() {
        return Err(format!("ball witness: {:?}", rb.witnesses[0]));
    }
    Ok(format!("spring gap {:.3}, ball worst gap {:.3} over {} pairs", rs.worst_gap, rb.worst_gap, rb.pairs))
}

// ---- guard ----

fn small_poly(nvars: usize, coeffs: &[i32]) -> Poly {
    let mut p = Poly::zero(nvars);
    let mut k = 0;
    for i in 0..=2u32 {
        for j in 0..=(2 - i) {
            let c = coeffs[k % coeffs.len()];
            k += 1;
            if c != 0 {
                p = p.add(&Poly::monomial(nvars, c as f64 / 4.0, &[i, j]));
            }
        }
    }
    p
}

fn coeffs() -> impl Strategy<Value = Vec<i32>> {
    proptest::collection::vec(-4i32..=4, 6)
}

/// Nested central differences of psi along X against the symbolic tower, orders 1 to 3.
pub fn symbolic_numeric_agreement() -> Check {
    run(100, (coeffs(), coeffs(), coeffs(), -1.0f64..1.0, -1.0f64..1.0), |(cx, cy, cp, x, y)| {
        let field = PolyMap::new(vec![small_poly(2, &cx), small_poly(2, &cy)]);
        let psi = small_poly(2, &cp);
        let tower = lie_tower(&field, &psi, 3, 64).unwrap();
        fn along(f: &dyn Fn(&[f64]) -> f64, field: &PolyMap, p: &[f64], d: f64) -> f64 {
            let v = field.eval(p);
            let a: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi + d * vi).collect();
            let b: Vec<f64> = p.iter().zip(&v).map(|(pi, vi)| pi - d * vi).collect();
            (f(&a) - f(&b)) / (2.0 * d)
        }
        let d = 1e-3;
        let f0 = |p: &[f64]| psi.eval(p);
        let f1 = |p: &[f64]| along(&f0, &field, p, d);
        let f2 = |p: &[f64]| along(&f1, &field, p, d);
        let f3 = |p: &[f64]| along(&f2, &field, p, d);
        let pt = [x, y];
        let numeric = [f1(&pt), f2(&pt), f3(&pt)];
        for (k, num) in numeric.iter().enumerate() {
            let sym = tower.eval(k + 1, &pt);
            prop_assert!((sym - num).abs() <= 1e-4 * sym.abs().max(1.0), "order {}: {} vs {}", k + 1, sym, num);
        }
        Ok(())
    })?;
    Ok("100 random fields, orders 1-3".into())
}

pub fn tower_linearity() -> Check {
    run(100, (coeffs(), coeffs(), coeffs(), coeffs(), -3i32..=3, -3i32..=3), |(cx, cy, c1, c2, a, b)| {
        let field = PolyMap::new(vec![small_poly(2, &cx), small_poly(2, &cy)]);
        let (p1, p2) = (small_poly(2, &c1), small_poly(2, &c2));
        let combo = p1.scale(a as f64).add(&p2.scale(b as f64));
        let t = lie_tower(&field, &combo, 4, 64).unwrap();
        let t1 = lie_tower(&field, &p1, 4, 64).unwrap();
        let t2 = lie_tower(&field, &p2, 4, 64).unwrap();
        let (ra, rb) = (BigRational::from_integer(BigInt::from(a)), BigRational::from_integer(BigInt::from(b)));
        for k in 0..4 {
            let lhs: &RatPoly = &t.derivatives[k];
            let rhs = t1.derivatives[k].scale(&ra).add(&t2.derivatives[k].scale(&rb));
            prop_assert_eq!(lhs, &rhs);
        }
        Ok(())
    })?;
    Ok("100 random triples, 4 orders, exact".into())
}

/// Ball passes both the Lie criterion and mu continuity; spring fails both.
pub fn criterion_continuity_coherence() -> Check {
    let b = SimBudget::default();
    for (name, id, trapping) in [("ball", BuiltinId::ball(1.0, 0.8), true), ("spring", BuiltinId::spring(0.8), false)] {
        let sys = instantiate(&id).unwrap();
        let samples = sampling::guard_points(&sys, 0, 0, 24);
        let lie = check_lie_criterion(&sys, 0, 0, 8, &samples, b.event_tol).map_err(|e| e.to_string())?;
        let lie_ok = lie.iter().all(|r| matches!(r.outcome, LieOutcome::Transversal { .. } | LieOutcome::Pass { .. }));
        let mu = check_mu_continuity(&sys, 0.2, 2000, 1e-3, 1.0, 0).map_err(|e| e.to_string())?;
        if lie_ok != trapping || mu.is_empty() != trapping {
            return Err(format!("{name}: lie ok {lie_ok}, mu violations {}", mu.len()));
        }
    }
    Ok("ball passes both, spring fails both".into())
}

pub fn all() -> Vec<(&'static str, fn() -> Check)> {
    vec![
        ("jump-time monotonicity", jump_time_monotonicity as fn() -> Check),
        ("mu cocycle", mu_cocycle),
        ("flow set and guard exclusive", flow_guard_exclusive),
        ("ball energy along arcs", ball_energy_along_arcs),
        ("reset consistency", reset_consistency),
        ("SCC soundness", scc_soundness),
        ("box Lyapunov edge property", box_lyapunov_edge_property),
        ("pair duality", pair_duality),
        ("refinement sandwich", refinement_sandwich),
        ("decomposition", decomposition),
        ("forward invariance proxy", forward_invariance_proxy),
        ("nice chain equivalence", nice_chain_equivalence),
        ("semigroup law", semigroup_law),
        ("cylinder exactness", cylinder_exactness),
        ("conjugacy", conjugacy),
        ("relaxation gap", relaxation_gap),
        ("continuity direction", continuity_direction),
        ("symbolic-numeric agreement", symbolic_numeric_agreement),
        ("tower linearity", tower_linearity),
        ("criterion/continuity coherence", criterion_continuity_coherence),
    ]
}
