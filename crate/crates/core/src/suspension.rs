//! The relaxed hybrid system (a unit cylinder over the guard between impact and reset)
//! and the suspension semiflow obtained by gluing cylinder tops to reset images.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::chain::{find_chain, omega_limit_estimate, BoxGrid, ChainSearchOptions, TransitionGraph};
use crate::error::{HybridError, Result};
use crate::integrate::{integrate_arc, ArcEnd, ExecutionClass, ExecutionTrace, Jump, SimBudget};
use crate::sampling;
use crate::system::{distance, HybridSystemDef, State};

/// The relaxed system: the base system plus a unit cylinder over every guard component.
#[derive(Clone, Debug)]
pub struct RelaxedSystem {
    pub base: HybridSystemDef,
}

pub fn relax(sys: &HybridSystemDef) -> RelaxedSystem {
    RelaxedSystem { base: sys.clone() }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "variant")]
pub enum SuspensionPoint {
    Base { state: State },
    /// A point `(z, s)` on the cylinder over guard component `guard` of `z.mode`.
    Cyl { z: State, guard: usize, s: f64 },
}

impl SuspensionPoint {
    pub fn base(state: State) -> Self {
        SuspensionPoint::Base { state }
    }

    pub fn cyl(sys: &HybridSystemDef, z: State, s: f64, tol: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&s) {
            return Err(HybridError::BadParameter(format!("cylinder coordinate {s} outside [0, 1]")));
        }
        let guard = sys.guard_at(&z, tol).ok_or(HybridError::NotOnGuard)?;
        SuspensionPoint::Cyl { z, guard, s }.canonical(sys, tol)
    }

    /// Rewrites the cylinder top to the reset image; `s = 0` stays on the cylinder.
    pub fn canonical(self, sys: &HybridSystemDef, tol: f64) -> Result<Self> {
        match self {
            SuspensionPoint::Cyl { z, guard, s } if s >= 1.0 => {
                Ok(SuspensionPoint::Base { state: sys.apply_reset_with(&z, guard, tol.max(1e-6))? })
            }
            SuspensionPoint::Cyl { ref z, guard, .. } => {
                let g = sys.mode(z.mode).guards.get(guard).ok_or(HybridError::NotOnGuard)?;
                if g.contains(&z.x, tol.max(1e-9)) {
                    Ok(self)
                } else {
                    Err(HybridError::NotOnGuard)
                }
            }
            p => Ok(p),
        }
    }

    /// Base point of the embedding, or the guard point under a cylinder point.
    pub fn footpoint(&self) -> &State {
        match self {
            SuspensionPoint::Base { state } => state,
            SuspensionPoint::Cyl { z, .. } => z,
        }
    }
}

pub fn embed(x: &State) -> SuspensionPoint {
    SuspensionPoint::Base { state: x.clone() }
}

/// Glue-aware distance: inside a variant the natural one, across the seams the shorter way round.
pub fn suspension_distance(sys: &HybridSystemDef, p: &SuspensionPoint, q: &SuspensionPoint) -> f64 {
    use SuspensionPoint::*;
    match (p, q) {
        (Base { state: a }, Base { state: b }) => distance(a, b),
        (Cyl { z: z1, guard: g1, s: s1 }, Cyl { z: z2, guard: g2, s: s2 }) => {
            let (r1, r2) = (sys.reset_raw(z1, *g1), sys.reset_raw(z2, *g2));
            let side = if g1 == g2 { (s1 - s2).abs() + distance(z1, z2) } else { f64::INFINITY };
            side.min((1.0 - s1) + (1.0 - s2) + distance(&r1, &r2)).min(s1 + s2 + distance(z1, z2))
        }
        (Cyl { z, guard, s }, Base { state: x }) | (Base { state: x }, Cyl { z, guard, s }) => {
            let r = sys.reset_raw(z, *guard);
            (s + distance(z, x)).min((1.0 - s) + distance(&r, x))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SegmentKind {
    BaseArc,
    CylinderRide,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuspensionFlowResult {
    pub endpoint: SuspensionPoint,
    pub segments: Vec<(SegmentKind, f64)>,
}

pub const MAX_SEGMENTS: usize = 100_000;

/// The suspension semiflow at time `t` from `p`.
pub fn phi(sys: &HybridSystemDef, t: f64, p: &SuspensionPoint, budget: &SimBudget) -> Result<SuspensionFlowResult> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(HybridError::BadParameter("t must be finite and non-negative".into()));
    }
    let etol = budget.event_tol;
    let mut cur = p.clone().canonical(sys, etol)?;
    let mut remaining = t;
    let mut segments = Vec::new();
    loop {
        if segments.len() > MAX_SEGMENTS {
            return Err(HybridError::BudgetExceeded);
        }
        if remaining <= 0.0 {
            return Ok(SuspensionFlowResult { endpoint: cur, segments });
        }
        cur = match cur {
            SuspensionPoint::Cyl { z, guard, s } => {
                if s + remaining < 1.0 {
                    segments.push((SegmentKind::CylinderRide, remaining));
                    return Ok(SuspensionFlowResult { endpoint: SuspensionPoint::Cyl { z, guard, s: s + remaining }, segments });
                }
                segments.push((SegmentKind::CylinderRide, 1.0 - s));
                remaining -= 1.0 - s;
                SuspensionPoint::Base { state: sys.apply_reset_with(&z, guard, 1e-6)? }
            }
            SuspensionPoint::Base { state } => {
                if let Some(guard) = sys.guard_at(&state, etol) {
                    SuspensionPoint::Cyl { z: state, guard, s: 0.0 }
                } else {
                    let arc = integrate_arc(sys, &state, remaining, budget)?;
                    match arc.end {
                        ArcEnd::TimeOut(e) => {
                            segments.push((SegmentKind::BaseArc, remaining));
                            return Ok(SuspensionFlowResult { endpoint: SuspensionPoint::Base { state: e }, segments });
                        }
                        ArcEnd::GuardHit { state: z, time, guard } => {
                            segments.push((SegmentKind::BaseArc, time));
                            remaining = (remaining - time).max(0.0);
                            SuspensionPoint::Cyl { z, guard, s: 0.0 }
                        }
                        ArcEnd::DomainExit { state, .. } => {
                            return Err(HybridError::Blocked(format!("flow leaves the domain at {:?}", state.x)))
                        }
                    }
                }
            }
        };
    }
}

/// Samples `phi` every `dt` up to `t_total`.
pub fn suspension_trace(
    sys: &HybridSystemDef,
    p: &SuspensionPoint,
    t_total: f64,
    dt: f64,
    budget: &SimBudget,
) -> Result<Vec<(f64, SuspensionPoint)>> {
    if !(dt > 0.0) {
        return Err(HybridError::BadParameter("dt must be positive".into()));
    }
    let mut out = vec![(0.0, p.clone().canonical(sys, budget.event_tol)?)];
    let n = (t_total / dt).ceil() as usize;
    for k in 1..=n {
        let t = (k as f64 * dt).min(t_total);
        let prev = &out.last().expect("sample").1;
        let next = phi(sys, t - out.last().expect("sample").0, prev, budget)?.endpoint;
        out.push((t, next));
    }
    Ok(out)
}

/// An execution of the relaxed system: unit cylinder rides between guard impacts and resets.
pub fn relaxed_simulate(rsys: &RelaxedSystem, s0: &SuspensionPoint, budget: &SimBudget) -> Result<ExecutionTrace> {
    budget.validate()?;
    let sys = &rsys.base;
    let etol = budget.event_tol;
    let mut cur = s0.clone().canonical(sys, etol)?;
    let mut t = 0.0;
    let mut jumps: Vec<Jump> = Vec::new();
    let start = cur.footpoint().clone();
    let mut arcs: Vec<Vec<(f64, State)>> = vec![vec![(0.0, start)]];
    let class = loop {
        if t >= budget.max_time {
            break ExecutionClass::Infinite { horizon_reached: t };
        }
        cur = match cur {
            SuspensionPoint::Cyl { z, guard, s } => {
                if jumps.len() >= budget.max_jumps {
                    break ExecutionClass::BudgetTruncated;
                }
                let ride = 1.0 - s;
                if t + ride > budget.max_time {
                    arcs.last_mut().expect("arc").push((budget.max_time, z.clone()));
                    break ExecutionClass::Infinite { horizon_reached: budget.max_time };
                }
                t += ride;
                arcs.last_mut().expect("arc").push((t, z.clone()));
                let post = sys.apply_reset_with(&z, guard, 1e-6)?;
                jumps.push(Jump { time: t, pre: z, post: post.clone(), guard });
                arcs.push(vec![(t, post.clone())]);
                SuspensionPoint::Base { state: post }
            }
            SuspensionPoint::Base { state } => {
                if let Some(guard) = sys.guard_at(&state, etol) {
                    SuspensionPoint::Cyl { z: state, guard, s: 0.0 }
                } else {
                    let arc = integrate_arc(sys, &state, budget.max_time - t, budget)?;
                    let last = arcs.last_mut().expect("arc");
                    last.extend(arc.samples.iter().skip(1).map(|(dt, s)| (t + dt, s.clone())));
                    match arc.end {
                        ArcEnd::TimeOut(_) => break ExecutionClass::Infinite { horizon_reached: budget.max_time },
                        ArcEnd::GuardHit { state: z, time, guard } => {
                            t += time;
                            SuspensionPoint::Cyl { z, guard, s: 0.0 }
                        }
                        ArcEnd::DomainExit { state, .. } => break ExecutionClass::Blocked { final_state: state },
                    }
                }
            }
        };
    };
    Ok(ExecutionTrace { n_jumps: jumps.len(), jumps, arcs, class })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassicalMismatch {
    pub x: f64,
    pub t: f64,
    pub expected: (f64, f64),
    pub got: SuspensionPoint,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassicalReport {
    pub samples: usize,
    pub max_base_error: f64,
    pub mismatches: Vec<ClassicalMismatch>,
}

/// Compares the suspension of a pure map system (every point on the guard) with the mapping torus
/// of ceiling one: `phi(t, x) = (f^floor(t)(x), frac(t))`.
pub fn classical_suspension_check(
    map_sys: &HybridSystemDef,
    n_samples: usize,
    t_max: f64,
    seed: u64,
    budget: &SimBudget,
) -> Result<ClassicalReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = ClassicalReport { samples: 0, max_base_error: 0.0, mismatches: Vec::new() };
    for i in 0..n_samples {
        let x = sampling::sample_state(map_sys, &mut rng);
        if map_sys.guard_at(&x, budget.event_tol).is_none() {
            return Err(HybridError::InvalidSystem("the map system must have an empty flow set".into()));
        }
        // Include integer and zero times among the samples.
        let t = match i % 10 {
            0 => 0.0,
            1 => (rng.gen_range(0.0..t_max) as f64).floor().max(1.0),
            _ => rng.gen_range(0.0..t_max),
        };
        let got = phi(map_sys, t, &SuspensionPoint::base(x.clone()), budget)?.endpoint;
        let k = t.floor() as usize;
        let frac = t - t.floor();
        let mut fx = x.clone();
        for _ in 0..k {
            let g = map_sys.guard_at(&fx, budget.event_tol).ok_or(HybridError::NotOnGuard)?;
            fx = map_sys.reset_raw(&fx, g);
        }
        rep.samples += 1;
        let (base, s) = match &got {
            SuspensionPoint::Base { state } => (state.clone(), 0.0),
            SuspensionPoint::Cyl { z, s, .. } => (z.clone(), *s),
        };
        let err = distance(&base, &fx);
        rep.max_base_error = rep.max_base_error.max(err);
        if s != frac || !(err <= 1e-12) {
            rep.mismatches.push(ClassicalMismatch { x: x.x[0], t, expected: (fx.x[0], frac), got });
        }
    }
    Ok(rep)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuityWitness {
    pub p: State,
    pub q: State,
    pub endpoint_p: SuspensionPoint,
    pub endpoint_q: SuspensionPoint,
    pub gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuityReport {
    pub pairs: usize,
    pub worst_gap: f64,
    pub witnesses: Vec<ContinuityWitness>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ContinuityOptions {
    pub n_pairs: usize,
    pub delta: f64,
    pub t: f64,
    pub threshold: f64,
    pub r_min: f64,
    pub r_max: f64,
    pub seed: u64,
    pub max_witnesses: usize,
}

impl Default for ContinuityOptions {
    fn default() -> Self {
        ContinuityOptions {
            n_pairs: 10_000,
            delta: 1e-4,
            t: std::f64::consts::PI,
            threshold: 0.1,
            r_min: 1e-6,
            r_max: 0.5,
            seed: 0,
            max_witnesses: 20,
        }
    }
}

/// Sampled search for a discontinuity of `phi(t, .)` between nearby base points close to the guard.
pub fn continuity_check(sys: &HybridSystemDef, opts: &ContinuityOptions, budget: &SimBudget) -> Result<ContinuityReport> {
    let guard_pts = sampling::all_guard_points(sys, 24);
    let mut rep = ContinuityReport { pairs: 0, worst_gap: 0.0, witnesses: Vec::new() };
    if guard_pts.is_empty() {
        return Ok(rep);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut pairs = Vec::with_capacity(opts.n_pairs);
    for _ in 0..opts.n_pairs {
        let Some(p) = sampling::sample_near_guard(sys, &guard_pts, opts.r_min, opts.r_max, &mut rng) else { continue };
        let Some(q) = crate::guard::perturb(sys, &p, opts.delta, &mut rng) else { continue };
        pairs.push((p, q));
    }
    let results: Vec<Option<ContinuityWitness>> = crate::chain::thread_pool().install(|| {
        pairs
            .par_iter()
            .map(|(p, q)| {
                let a = phi(sys, opts.t, &embed(p), budget).ok()?.endpoint;
                let b = phi(sys, opts.t, &embed(q), budget).ok()?.endpoint;
                let gap = suspension_distance(sys, &a, &b);
                Some(ContinuityWitness { p: p.clone(), q: q.clone(), endpoint_p: a, endpoint_q: b, gap })
            })
            .collect()
    });
    for w in results.into_iter().flatten() {
        rep.pairs += 1;
        rep.worst_gap = rep.worst_gap.max(w.gap);
        if w.gap > opts.threshold && rep.witnesses.len() < opts.max_witnesses {
            rep.witnesses.push(w);
        }
    }
    Ok(rep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum SuspensionNode {
    Base(usize),
    Cyl { base_box: usize, cell: u32 },
}

/// Box graph of the suspension: base boxes plus cylinder boxes over guard boxes, side `h` in `s` too.
#[derive(Clone, Debug)]
pub struct SuspensionGraph {
    pub grid: BoxGrid,
    pub cells: u32,
    pub nodes: Vec<SuspensionNode>,
    index: HashMap<SuspensionNode, usize>,
    pub succ: Vec<Vec<usize>>,
    guard_pts: HashMap<usize, Vec<(Vec<f64>, usize)>>,
}

impl SuspensionGraph {
    pub fn node(&self, n: &SuspensionNode) -> Option<usize> {
        self.index.get(n).copied()
    }

    /// Nodes meeting the `pad`-neighborhood of `p`, across the seams as well.
    pub fn nodes_near(&self, sys: &HybridSystemDef, p: &SuspensionPoint, pad: f64) -> Vec<usize> {
        let h = self.grid.h;
        let mut out = BTreeSet::new();
        let add_base = |x: &State, slack: f64, out: &mut BTreeSet<usize>| {
            if slack >= 0.0 {
                for b in self.grid.boxes_near(x, slack) {
                    if let Some(n) = self.node(&SuspensionNode::Base(b)) {
                        out.insert(n);
                    }
                }
            }
        };
        match p {
            SuspensionPoint::Base { state } => {
                add_base(state, pad, &mut out);
                if let Some(g) = sys.guard_at(state, 1e-9) {
                    let c = SuspensionPoint::Cyl { z: state.clone(), guard: g, s: 0.0 };
                    out.extend(self.nodes_near(sys, &c, pad));
                }
            }
            SuspensionPoint::Cyl { z, guard, s } => {
                let lo = ((s - pad) / h).floor().max(0.0) as u32;
                let hi = (((s + pad) / h).floor() as u32).min(self.cells - 1);
                for b in self.grid.boxes_near(z, pad) {
                    for cell in lo..=hi {
                        let cl = cell as f64 * h;
                        let d = (cl - s).max(s - (cl + h)).max(0.0);
                        if d < pad || (*s >= cl && *s < cl + h) {
                            if let Some(n) = self.node(&SuspensionNode::Cyl { base_box: b, cell }) {
                                out.insert(n);
                            }
                        }
                    }
                }
                add_base(z, pad - s, &mut out);
                add_base(&sys.reset_raw(z, *guard), pad - (1.0 - s), &mut out);
            }
        }
        out.into_iter().collect()
    }
}

fn sample_points(sys: &HybridSystemDef, g: &SuspensionGraph, n: &SuspensionNode) -> Vec<SuspensionPoint> {
    match *n {
        SuspensionNode::Base(b) => {
            g.grid.representatives(sys, b).into_iter().map(|x| embed(&State::new(g.grid.boxes[b].mode, x))).collect()
        }
        SuspensionNode::Cyl { base_box, cell } => {
            let h = g.grid.h;
            let lo = cell as f64 * h;
            let hi = (lo + h).min(1.0 - 1e-12);
            let mode = g.grid.boxes[base_box].mode;
            let mut out = Vec::new();
            for (z, guard) in g.guard_pts.get(&base_box).map(|v| v.as_slice()).unwrap_or(&[]) {
                for s in [lo, 0.5 * (lo + hi), hi] {
                    out.push(SuspensionPoint::Cyl { z: State::new(mode, z.clone()), guard: *guard, s });
                }
            }
            out
        }
    }
}

/// Builds the suspension box graph with flow step `t_step` and bloat `pad`.
pub fn build_suspension_graph(
    sys: &HybridSystemDef,
    h: f64,
    t_step: f64,
    pad: f64,
    budget: &SimBudget,
) -> Result<SuspensionGraph> {
    if !(t_step > 0.0) {
        return Err(HybridError::BadParameter("T_step must be positive".into()));
    }
    let grid = BoxGrid::new(sys, h, crate::chain::DEFAULT_NODE_CAP)?;
    let cells = ((1.0 / h).ceil() as u32).max(1);
    let mut guard_pts: HashMap<usize, Vec<(Vec<f64>, usize)>> = HashMap::new();
    let n = grid.modes.iter().flat_map(|m| m.counts.iter()).copied().max().unwrap_or(1).clamp(8, 256) + 1;
    for m in &sys.modes {
        for gi in 0..m.guards.len() {
            for p in sampling::guard_points(sys, m.id, gi, n) {
                for b in grid.boxes_containing(&State::new(m.id, p.clone())) {
                    guard_pts.entry(b).or_default().push((p.clone(), gi));
                }
            }
        }
    }
    let mut nodes: Vec<SuspensionNode> = (0..grid.len()).map(SuspensionNode::Base).collect();
    let mut gboxes: Vec<usize> = guard_pts.keys().copied().collect();
    gboxes.sort_unstable();
    for &b in &gboxes {
        for cell in 0..cells {
            nodes.push(SuspensionNode::Cyl { base_box: b, cell });
        }
    }
    let index = nodes.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let mut g = SuspensionGraph { grid, cells, nodes, index, succ: Vec::new(), guard_pts };
    let succ: Vec<Vec<usize>> = crate::chain::thread_pool().install(|| {
        g.nodes
            .par_iter()
            .map(|n| {
                let mut out = BTreeSet::new();
                for p in sample_points(sys, &g, n) {
                    if let Ok(r) = phi(sys, t_step, &p, budget) {
                        out.extend(g.nodes_near(sys, &r.endpoint, pad));
                    }
                }
                out.into_iter().collect()
            })
            .collect()
    });
    g.succ = succ;
    Ok(g)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Disagreement {
    /// `"omega"` or `"chain"`.
    pub kind: String,
    pub x: State,
    pub y: Option<State>,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatibilityReport {
    pub omega_checked: usize,
    pub chain_checked: usize,
    pub disagreements: Vec<Disagreement>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompatibilityOptions {
    pub h: f64,
    pub t_transient: f64,
    pub t_window: f64,
    pub eps: f64,
    pub t_chain: f64,
    pub seed: u64,
}

/// Base boxes met by the suspension tail on `[t0, t0 + tw]`, including glue neighbors of cylinder points.
fn suspension_tail_boxes(
    sys: &HybridSystemDef,
    grid: &BoxGrid,
    x: &State,
    t0: f64,
    tw: f64,
    budget: &SimBudget,
) -> Result<Vec<usize>> {
    let h = grid.h;
    let start = phi(sys, t0, &embed(x), budget)?.endpoint;
    let tr = suspension_trace(sys, &start, tw, 0.5 * h, budget)?;
    let mut set = BTreeSet::new();
    for (_, p) in tr {
        match p {
            SuspensionPoint::Base { state } => set.extend(grid.locate(&state)),
            SuspensionPoint::Cyl { z, guard, s } => {
                if s <= h {
                    set.extend(grid.locate(&z));
                }
                if s >= 1.0 - h {
                    set.extend(grid.locate(&sys.reset_raw(&z, guard)));
                }
            }
        }
    }
    Ok(set.into_iter().collect())
}

/// Compares omega-limit boxes and chain reachability between the system and its suspension.
pub fn suspension_compatibility_check(
    sys: &HybridSystemDef,
    graph: &TransitionGraph,
    sgraph: &SuspensionGraph,
    omega_samples: &[State],
    chain_pairs: &[(State, State)],
    opts: &CompatibilityOptions,
    budget: &SimBudget,
) -> Result<CompatibilityReport> {
    let grid = &sgraph.grid;
    let mut rep = CompatibilityReport { omega_checked: 0, chain_checked: 0, disagreements: Vec::new() };
    for x in omega_samples {
        let om = match omega_limit_estimate(sys, grid, x, opts.t_transient, opts.t_window, budget) {
            Ok(o) => o.boxes,
            Err(e) => {
                rep.disagreements.push(Disagreement {
                    kind: "omega".into(),
                    x: x.clone(),
                    y: None,
                    detail: format!("omega estimate failed: {e}"),
                });
                continue;
            }
        };
        let tail = suspension_tail_boxes(sys, grid, x, opts.t_transient, opts.t_window, budget)?;
        rep.omega_checked += 1;
        let (da, db) = (grid.dilate(&om, 1), grid.dilate(&tail, 1));
        let bad_a = tail.iter().filter(|b| da.binary_search(b).is_err()).count();
        let bad_b = om.iter().filter(|b| db.binary_search(b).is_err()).count();
        if bad_a + bad_b > 0 {
            rep.disagreements.push(Disagreement {
                kind: "omega".into(),
                x: x.clone(),
                y: None,
                detail: format!("{bad_b} omega boxes off the suspension tail, {bad_a} tail boxes off omega"),
            });
        }
    }
    for (x, y) in chain_pairs {
        let h_verdict =
            find_chain(sys, graph, x, y, opts.eps, opts.t_chain, &ChainSearchOptions::default(), budget).is_ok();
        let from = sgraph.nodes_near(sys, &embed(x), 0.0);
        let to = sgraph.nodes_near(sys, &embed(y), sgraph.grid.h);
        let start: Vec<usize> = from.iter().flat_map(|&n| sgraph.succ[n].iter().copied()).collect();
        let reach = crate::chain::reach(&sgraph.succ, &start);
        let s_verdict = to.iter().any(|&n| reach[n]);
        rep.chain_checked += 1;
        if h_verdict != s_verdict {
            rep.disagreements.push(Disagreement {
                kind: "chain".into(),
                x: x.clone(),
                y: Some(y.clone()),
                detail: format!("system chain {h_verdict}, suspension reachability {s_verdict}"),
            });
        }
    }
    Ok(rep)
}

/// Uniform samples from the state space for the compatibility check.
pub fn sample_states(sys: &HybridSystemDef, n: usize, seed: u64) -> Vec<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sampling::sample_state(sys, &mut rng)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LawSample {
    pub point: SuspensionPoint,
    pub t: f64,
    pub s: f64,
    pub error: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LawReport {
    pub law: String,
    pub samples: usize,
    pub max_error: f64,
    pub failures: Vec<LawSample>,
}

impl LawReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.samples > 0
    }
}

/// A random suspension point: a base state, or a guard point at a random height on its cylinder.
pub fn sample_suspension_point<R: Rng>(sys: &HybridSystemDef, guard_pts: &[(usize, Vec<f64>)], rng: &mut R) -> SuspensionPoint {
    if !guard_pts.is_empty() && rng.gen_bool(0.3) {
        let (mode, z) = &guard_pts[rng.gen_range(0..guard_pts.len())];
        let st = State::new(*mode, z.clone());
        if let Some(guard) = sys.guard_at(&st, 1e-9) {
            return SuspensionPoint::Cyl { z: st, guard, s: rng.gen_range(0.0..1.0) };
        }
    }
    embed(&sampling::sample_state(sys, rng))
}

/// `phi(t + s, p)` against `phi(t, phi(s, p))` for random `p` and `t + s <= t_max`.
pub fn semigroup_check(sys: &HybridSystemDef, n: usize, t_max: f64, seed: u64, budget: &SimBudget) -> Result<LawReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let guard_pts = sampling::all_guard_points(sys, 32);
    let mut rep = LawReport { law: "semigroup".into(), samples: 0, max_error: 0.0, failures: Vec::new() };
    for _ in 0..n {
        let p = sample_suspension_point(sys, &guard_pts, &mut rng);
        let total = rng.gen_range(0.0..t_max);
        let s = rng.gen_range(0.0..total.max(f64::MIN_POSITIVE));
        let t = total - s;
        let whole = phi(sys, t + s, &p, budget)?.endpoint;
        let mid = phi(sys, s, &p, budget)?.endpoint;
        let split = phi(sys, t, &mid, budget)?.endpoint;
        let error = suspension_distance(sys, &whole, &split);
        let tolerance = 10.0 * budget.integrator_tol * (1.0 + t + s);
        rep.samples += 1;
        rep.max_error = rep.max_error.max(error);
        if !(error < tolerance) {
            rep.failures.push(LawSample { point: p, t, s, error, tolerance });
        }
    }
    Ok(rep)
}

/// `phi(t, embed(x))` against the base flow for `t` below the maximum flow time of `x`.
pub fn conjugacy_check(sys: &HybridSystemDef, n: usize, seed: u64, budget: &SimBudget) -> Result<LawReport> {
    use crate::integrate::{flow_for, max_flow_time, FlowTime};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = LawReport { law: "conjugacy".into(), samples: 0, max_error: 0.0, failures: Vec::new() };
    let mut attempts = 0;
    while rep.samples < n && attempts < 100 * n.max(1) {
        attempts += 1;
        let x = sampling::sample_state(sys, &mut rng);
        let mu = match max_flow_time(sys, &x, 50.0, budget)? {
            FlowTime::Finite(m) => m,
            FlowTime::ExceedsHorizon => 50.0,
        };
        if !(mu > 1e-6) {
            continue;
        }
        let t = rng.gen_range(0.0..mu) * 0.999;
        let got = phi(sys, t, &embed(&x), budget)?.endpoint;
        let want = embed(&flow_for(sys, &x, t, budget)?);
        let error = suspension_distance(sys, &got, &want);
        let tolerance = 10.0 * budget.integrator_tol * (1.0 + t);
        rep.samples += 1;
        rep.max_error = rep.max_error.max(error);
        if !(error < tolerance) || !matches!(got, SuspensionPoint::Base { .. }) {
            rep.failures.push(LawSample { point: embed(&x), t, s: 0.0, error, tolerance });
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{ball_mu, instantiate, BuiltinId};

    fn ball() -> HybridSystemDef {
        instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap()
    }

    #[test]
    fn unit_speed_ride() {
        let sys = ball();
        let b = SimBudget::default();
        let p = SuspensionPoint::cyl(&sys, State::new(0, vec![0.0, -2.0]), 0.25, 1e-9).unwrap();
        let r = phi(&sys, 0.5, &p, &b).unwrap();
        assert_eq!(r.endpoint, SuspensionPoint::Cyl { z: State::new(0, vec![0.0, -2.0]), guard: 0, s: 0.75 });
        assert_eq!(r.segments, vec![(SegmentKind::CylinderRide, 0.5)]);
    }

    #[test]
    fn base_flow_lands_on_cylinder_bottom() {
        let sys = ball();
        let b = SimBudget::default();
        let t = 3.0 + 10f64.sqrt();
        let r = phi(&sys, t, &embed(&State::new(0, vec![0.5, 3.0])), &b).unwrap();
        match r.endpoint {
            SuspensionPoint::Cyl { z, s, .. } => {
                assert!(s < 1e-8);
                assert!(z.x[0].abs() < 1e-9 && (z.x[1] + 10f64.sqrt()).abs() < 1e-7);
            }
            e => panic!("{e:?}"),
        }
        let total: f64 = r.segments.iter().map(|s| s.1).sum();
        assert!((total - t).abs() < 1e-12);
    }

    #[test]
    fn cylinder_top_glues_to_reset() {
        let sys = ball();
        let b = SimBudget::default();
        for delta in [1e-3, 1e-6, 1e-9] {
            let p = SuspensionPoint::cyl(&sys, State::new(0, vec![0.0, -2.0]), 1.0 - delta, 1e-9).unwrap();
            let r = phi(&sys, delta, &p, &b).unwrap();
            let target = SuspensionPoint::base(State::new(0, vec![0.0, 1.6]));
            assert!(suspension_distance(&sys, &r.endpoint, &target) < 1e-9, "{:?}", r.endpoint);
        }
        let top = SuspensionPoint::cyl(&sys, State::new(0, vec![0.0, -2.0]), 1.0, 1e-9).unwrap();
        assert_eq!(top, SuspensionPoint::base(State::new(0, vec![0.0, 1.6])));
    }

    #[test]
    fn off_guard_cylinder_is_rejected() {
        let sys = ball();
        assert!(matches!(
            SuspensionPoint::cyl(&sys, State::new(0, vec![0.5, -2.0]), 0.0, 1e-9),
            Err(HybridError::NotOnGuard)
        ));
    }

    #[test]
    fn embedding_commutes_with_flow() {
        let sys = ball();
        let b = SimBudget::default();
        let x = State::new(0, vec![1.0, 0.5]);
        assert_eq!(embed(&x), SuspensionPoint::base(x.clone()));
        let mu = ball_mu(1.0, 1.0, 0.5);
        let r = phi(&sys, 0.5 * mu, &embed(&x), &b).unwrap();
        let direct = crate::integrate::flow_for(&sys, &x, 0.5 * mu, &b).unwrap();
        assert_eq!(r.endpoint, SuspensionPoint::base(direct));
    }

    #[test]
    fn ball_semigroup_and_conjugacy() {
        let sys = ball();
        let b = SimBudget::default();
        let rep = semigroup_check(&sys, 100, 20.0, 11, &b).unwrap();
        assert!(rep.ok(), "{:?}", rep.failures);
        let rep = conjugacy_check(&sys, 100, 12, &b).unwrap();
        assert!(rep.ok(), "{:?}", rep.failures);
    }

    #[test]
    fn continuity_dichotomy() {
        let b = SimBudget::default();
        let spring = instantiate(&BuiltinId::spring(0.8)).unwrap();
        let rep = continuity_check(&spring, &ContinuityOptions { n_pairs: 2000, ..Default::default() }, &b).unwrap();
        assert!(!rep.witnesses.is_empty());
        assert!(rep.witnesses.iter().all(|w| w.p.x.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.6));
        let rep = continuity_check(&ball(), &ContinuityOptions { n_pairs: 2000, ..Default::default() }, &b).unwrap();
        assert!(rep.witnesses.is_empty(), "worst {}", rep.worst_gap);
    }

    #[test]
    fn ball_compatibility() {
        let sys = ball();
        let b = SimBudget::default();
        let h = 0.25;
        let g = crate::chain::build_transition_graph(&sys, &crate::chain::GraphParams::new(h, 5.0), &b).unwrap();
        let sg = build_suspension_graph(&sys, h, 5.0, h, &b).unwrap();
        let xs = sample_states(&sys, 20, 4);
        let opts = CompatibilityOptions { h, t_transient: 60.0, t_window: 10.0, eps: 0.8, t_chain: 5.0, seed: 4 };
        let rep = suspension_compatibility_check(&sys, &g, &sg, &xs, &[], &opts, &b).unwrap();
        assert_eq!(rep.omega_checked, 20);
        assert!(rep.disagreements.is_empty(), "{:?}", rep.disagreements);
    }

    #[test]
    fn elastic_ball_equal_energy_chains_agree() {
        let sys = instantiate(&BuiltinId::ball(1.0, 1.0)).unwrap();
        let b = SimBudget::default();
        let h = 0.25;
        let g = crate::chain::build_transition_graph(&sys, &crate::chain::GraphParams::new(h, 5.0), &b).unwrap();
        let sg = build_suspension_graph(&sys, h, 5.0, h, &b).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pairs: Vec<(State, State)> = (0..6)
            .map(|_| {
                let e: f64 = rng.gen_range(0.5..4.0);
                let mut on_level = || {
                    let v: f64 = rng.gen_range(-1.0..1.0) * (2.0 * e).sqrt();
                    State::new(0, vec![e - 0.5 * v * v, v])
                };
                (on_level(), on_level())
            })
            .collect();
        let opts = CompatibilityOptions { h, t_transient: 0.0, t_window: 0.0, eps: 0.8, t_chain: 5.0, seed: 9 };
        let rep = suspension_compatibility_check(&sys, &g, &sg, &[], &pairs, &opts, &b).unwrap();
        assert_eq!(rep.chain_checked, 6);
        assert!(rep.disagreements.is_empty(), "{:?}", rep.disagreements);
    }

    #[test]
    fn seam_distances() {
        let sys = ball();
        let z = State::new(0, vec![0.0, -2.0]);
        let near_top = SuspensionPoint::Cyl { z: z.clone(), guard: 0, s: 0.999 };
        let reset = SuspensionPoint::base(State::new(0, vec![0.0, 1.6]));
        assert!((suspension_distance(&sys, &near_top, &reset) - 0.001).abs() < 1e-12);
        let bottom = SuspensionPoint::Cyl { z: z.clone(), guard: 0, s: 0.0 };
        assert_eq!(suspension_distance(&sys, &bottom, &SuspensionPoint::base(z)), 0.0);
    }

    #[test]
    fn relaxed_ball_shifts_jump_times() {
        let sys = ball();
        let tr = relaxed_simulate(&relax(&sys), &embed(&State::new(0, vec![0.5, 3.0])), &SimBudget::default()).unwrap();
        let mu0 = 3.0 + 10f64.sqrt();
        let v = 10f64.sqrt();
        let expect = [mu0 + 1.0, mu0 + 2.0 * 0.8 * v + 2.0, mu0 + 2.0 * (0.8 + 0.64) * v + 3.0];
        for (j, e) in tr.jumps.iter().zip(expect) {
            assert!((j.time - e).abs() < 1e-6, "{} vs {}", j.time, e);
        }
        assert!(matches!(tr.class, ExecutionClass::Infinite { .. }));
        assert!(tr.jumps.windows(2).all(|w| w[1].time - w[0].time >= 1.0 - 1e-9));
    }

    #[test]
    fn relaxed_start_on_cylinder_and_without_guard_hits() {
        let sys = ball();
        let p = SuspensionPoint::cyl(&sys, State::new(0, vec![0.0, -2.0]), 0.5, 1e-9).unwrap();
        let tr = relaxed_simulate(&relax(&sys), &p, &SimBudget::default()).unwrap();
        assert_eq!(tr.jumps[0].time, 0.5);
        let ce = instantiate(&BuiltinId::Counterexample).unwrap();
        let tr = relaxed_simulate(&relax(&ce), &embed(&State::new(0, vec![-1.0])), &SimBudget::default()).unwrap();
        assert_eq!(tr.n_jumps, 0);
        assert!(matches!(tr.class, ExecutionClass::Infinite { .. }));
    }

    #[test]
    fn rotation_mapping_torus() {
        let sys = instantiate(&BuiltinId::Rotation { alpha: 0.377 }).unwrap();
        let b = SimBudget::default();
        let r = phi(&sys, 2.25, &embed(&State::new(0, vec![0.0])), &b).unwrap();
        match r.endpoint {
            SuspensionPoint::Cyl { z, s, .. } => {
                assert_eq!(s, 0.25);
                assert!((z.x[0] - 0.754).abs() < 1e-12);
            }
            e => panic!("{e:?}"),
        }
        let x = State::new(0, vec![0.1]);
        assert_eq!(phi(&sys, 0.0, &embed(&x), &b).unwrap().endpoint, embed(&x));
        let one = phi(&sys, 1.0, &embed(&x), &b).unwrap().endpoint;
        assert!(suspension_distance(&sys, &one, &embed(&State::new(0, vec![0.477]))) < 1e-12);
        let rep = classical_suspension_check(&sys, 100, 10.0, 3, &b).unwrap();
        assert!(rep.mismatches.is_empty(), "{:?}", rep.mismatches);
    }

    #[test]
    fn empty_guard_compatibility_is_trivial() {
        let sys = instantiate(&BuiltinId::GradientFlow).unwrap();
        let b = SimBudget::default();
        let g = crate::chain::build_transition_graph(&sys, &crate::chain::GraphParams::new(0.25, 1.0), &b).unwrap();
        let sg = build_suspension_graph(&sys, 0.25, 1.0, 0.25, &b).unwrap();
        assert_eq!(sg.nodes.len(), g.len());
        let xs = sample_states(&sys, 5, 1);
        let opts = CompatibilityOptions { h: 0.25, t_transient: 20.0, t_window: 5.0, eps: 0.8, t_chain: 1.0, seed: 1 };
        let rep = suspension_compatibility_check(&sys, &g, &sg, &xs, &[], &opts, &b).unwrap();
        assert_eq!(rep.omega_checked, 5);
        assert!(rep.disagreements.is_empty(), "{:?}", rep.disagreements);
    }
}
