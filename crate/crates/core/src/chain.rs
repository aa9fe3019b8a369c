//! Box transition graphs and the combinatorial Conley machinery built on them:
//! recurrent classes, attractor-repeller pairs, box Lyapunov functions,
//! explicit (eps, T)-chains, Lyapunov obstructions and omega-limit estimates.

use std::collections::{HashMap, VecDeque};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{HybridError, Result};
use crate::integrate::{integrate_arc, max_flow_time, simulate_execution, ArcEnd, ExecutionClass, FlowTime, SimBudget};
use crate::sampling;
use crate::system::{distance, HybridSystemDef, State};

pub const DEFAULT_NODE_CAP: usize = 5_000_000;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct BoxKey {
    pub mode: usize,
    pub idx: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModeGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Uniform grid of side `h` over every mode's domain box, keeping boxes that meet the state space.
#[derive(Clone, Debug)]
pub struct BoxGrid {
    pub h: f64,
    pub modes: Vec<ModeGrid>,
    pub boxes: Vec<BoxKey>,
    index: HashMap<BoxKey, usize>,
}

impl BoxGrid {
    pub fn new(sys: &HybridSystemDef, h: f64, node_cap: usize) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(HybridError::BadParameter("h must be positive".into()));
        }
        let mut modes = Vec::new();
        let mut total = 0usize;
        for m in &sys.modes {
            let counts: Vec<usize> =
                m.domain.iter().map(|&(lo, hi)| (((hi - lo) / h - 1e-9).ceil() as usize).max(1)).collect();
            let n = counts.iter().try_fold(1usize, |a, &c| a.checked_mul(c)).unwrap_or(usize::MAX);
            total = total.saturating_add(n);
            if total > node_cap {
                return Err(HybridError::GridTooFine { nodes: total as u64, cap: node_cap as u64 });
            }
            modes.push(ModeGrid {
                lo: m.domain.iter().map(|d| d.0).collect(),
                hi: m.domain.iter().map(|d| d.1).collect(),
                counts,
            });
        }
        let mut grid = BoxGrid { h, modes, boxes: Vec::new(), index: HashMap::new() };
        for (mi, m) in sys.modes.iter().enumerate() {
            let counts = grid.modes[mi].counts.clone();
            let mut idx = vec![0u32; counts.len()];
            loop {
                let key = BoxKey { mode: mi, idx: idx.clone() };
                let b = grid.key_bounds(&key);
                if box_meets_region(m, &b) {
                    grid.index.insert(key.clone(), grid.boxes.len());
                    grid.boxes.push(key);
                }
                if !advance(&mut idx, &counts) {
                    break;
                }
            }
        }
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn id_of(&self, key: &BoxKey) -> Option<usize> {
        self.index.get(key).copied()
    }

    fn key_bounds(&self, key: &BoxKey) -> Vec<(f64, f64)> {
        let mg = &self.modes[key.mode];
        key.idx
            .iter()
            .enumerate()
            .map(|(i, &k)| {
                let lo = mg.lo[i] + k as f64 * self.h;
                let hi = if k as usize + 1 == mg.counts[i] { mg.hi[i] } else { lo + self.h };
                (lo, hi.min(mg.hi[i]))
            })
            .collect()
    }

    pub fn bounds(&self, b: usize) -> Vec<(f64, f64)> {
        self.key_bounds(&self.boxes[b])
    }

    pub fn center(&self, b: usize) -> State {
        let x = self.bounds(b).iter().map(|(l, h)| 0.5 * (l + h)).collect();
        State::new(self.boxes[b].mode, x)
    }

    pub fn dist_to_box(&self, b: usize, x: &[f64]) -> f64 {
        self.bounds(b)
            .iter()
            .zip(x)
            .map(|(&(lo, hi), &v)| {
                let d = if v < lo {
                    lo - v
                } else if v > hi {
                    v - hi
                } else {
                    0.0
                };
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// The box whose half-open cell holds `s` (the last cell is closed).
    pub fn locate(&self, s: &State) -> Option<usize> {
        let mg = self.modes.get(s.mode)?;
        let idx: Vec<u32> = s
            .x
            .iter()
            .enumerate()
            .map(|(i, &v)| (((v - mg.lo[i]) / self.h).floor().max(0.0) as usize).min(mg.counts[i] - 1) as u32)
            .collect();
        self.id_of(&BoxKey { mode: s.mode, idx })
    }

    /// Closed boxes containing `s`.
    pub fn boxes_containing(&self, s: &State) -> Vec<usize> {
        self.scan(s, 0.0, |d| d <= 1e-12)
    }

    /// The cell holding `s` plus every box at distance below `pad`.
    pub fn boxes_near(&self, s: &State, pad: f64) -> Vec<usize> {
        self.boxes_near_from(None, s, pad)
    }

    /// Like `boxes_near`, but a point still inside the closed box `from` is held by `from`.
    pub fn boxes_near_from(&self, from: Option<usize>, s: &State, pad: f64) -> Vec<usize> {
        let mut out = self.scan(s, pad, |d| d < pad);
        let home = match from {
            Some(b) if self.boxes[b].mode == s.mode && self.dist_to_box(b, &s.x) <= 1e-12 => Some(b),
            _ => self.locate(s),
        };
        if let Some(b) = home {
            if let Err(i) = out.binary_search(&b) {
                out.insert(i, b);
            }
        }
        out
    }

    fn scan(&self, s: &State, pad: f64, keep: impl Fn(f64) -> bool) -> Vec<usize> {
        let Some(mg) = self.modes.get(s.mode) else { return Vec::new() };
        let ranges: Vec<(u32, u32)> = s
            .x
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = mg.counts[i] as i64;
                let a = (((v - pad - mg.lo[i]) / self.h).floor() as i64 - 1).clamp(0, c - 1);
                let b = (((v + pad - mg.lo[i]) / self.h).floor() as i64 + 1).clamp(0, c - 1);
                (a as u32, b as u32)
            })
            .collect();
        let mut out = Vec::new();
        let mut idx: Vec<u32> = ranges.iter().map(|r| r.0).collect();
        loop {
            if let Some(b) = self.id_of(&BoxKey { mode: s.mode, idx: idx.clone() }) {
                if keep(self.dist_to_box(b, &s.x)) {
                    out.push(b);
                }
            }
            let mut k = 0;
            loop {
                if k == idx.len() {
                    out.sort_unstable();
                    return out;
                }
                if idx[k] < ranges[k].1 {
                    idx[k] += 1;
                    break;
                }
                idx[k] = ranges[k].0;
                k += 1;
            }
        }
    }

    /// Boxes within `layers` index steps of the set, same mode.
    pub fn dilate(&self, set: &[usize], layers: u32) -> Vec<usize> {
        let mut out = vec![false; self.len()];
        for &b in set {
            let key = &self.boxes[b];
            let counts = &self.modes[key.mode].counts;
            let lo: Vec<u32> = key.idx.iter().map(|&k| k.saturating_sub(layers)).collect();
            let hi: Vec<u32> =
                key.idx.iter().zip(counts).map(|(&k, &c)| (k + layers).min(c as u32 - 1)).collect();
            let mut idx = lo.clone();
            loop {
                if let Some(n) = self.id_of(&BoxKey { mode: key.mode, idx: idx.clone() }) {
                    out[n] = true;
                }
                let mut k = 0;
                while k < idx.len() {
                    if idx[k] < hi[k] {
                        idx[k] += 1;
                        break;
                    }
                    idx[k] = lo[k];
                    k += 1;
                }
                if k == idx.len() {
                    break;
                }
            }
        }
        (0..self.len()).filter(|&i| out[i]).collect()
    }

    /// Corners, center and face midpoints of the box that lie in the state space.
    pub fn representatives(&self, sys: &HybridSystemDef, b: usize) -> Vec<Vec<f64>> {
        let bounds = self.bounds(b);
        let m = sys.mode(self.boxes[b].mode);
        let d = bounds.len();
        let mut pts: Vec<Vec<f64>> = Vec::new();
        for mask in 0..(1usize << d) {
            pts.push((0..d).map(|i| if mask >> i & 1 == 1 { bounds[i].1 } else { bounds[i].0 }).collect());
        }
        let c: Vec<f64> = bounds.iter().map(|(l, h)| 0.5 * (l + h)).collect();
        pts.push(c.clone());
        for i in 0..d {
            for v in [bounds[i].0, bounds[i].1] {
                let mut p = c.clone();
                p[i] = v;
                pts.push(p);
            }
        }
        let mut out: Vec<Vec<f64>> = Vec::new();
        for p in pts {
            if m.contains(&p, 1e-12) && !out.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

fn advance(idx: &mut [u32], counts: &[usize]) -> bool {
    for k in 0..idx.len() {
        if (idx[k] as usize) + 1 < counts[k] {
            idx[k] += 1;
            return true;
        }
        idx[k] = 0;
    }
    false
}

fn box_meets_region(m: &crate::system::ModeSpec, bounds: &[(f64, f64)]) -> bool {
    if m.region.is_empty() {
        return true;
    }
    let k = 5usize;
    let d = bounds.len();
    let mut idx = vec![0u32; d];
    let counts = vec![k; d];
    loop {
        let p: Vec<f64> = bounds
            .iter()
            .zip(&idx)
            .map(|(&(lo, hi), &i)| lo + (hi - lo) * i as f64 / (k - 1) as f64)
            .collect();
        if m.in_region(&p, 1e-12) {
            return true;
        }
        if !advance(&mut idx, &counts) {
            return false;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum EdgeKind {
    Flow,
    Reset,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphParams {
    pub h: f64,
    pub t_step: f64,
    pub samples_per_box: usize,
    pub bloat_pad: f64,
    pub seed: u64,
    pub node_cap: usize,
}

impl GraphParams {
    /// Defaults: no extra jitter samples beyond 4, pad of one box.
    pub fn new(h: f64, t_step: f64) -> Self {
        GraphParams { h, t_step, samples_per_box: 4, bloat_pad: h, seed: 0, node_cap: DEFAULT_NODE_CAP }
    }
}

#[derive(Clone, Debug)]
pub struct TransitionGraph {
    pub grid: BoxGrid,
    pub params: GraphParams,
    /// Sorted, deduplicated `(src, dst, kind)` triples.
    pub edges: Vec<(usize, usize, EdgeKind)>,
    pub succ: Vec<Vec<usize>>,
    pub guard_boxes: Vec<usize>,
    pub reset_undefined: Vec<usize>,
    /// Samples whose integration or reset failed.
    pub failed_samples: usize,
}

impl TransitionGraph {
    pub fn len(&self) -> usize {
        self.succ.len()
    }

    pub fn is_empty(&self) -> bool {
        self.succ.is_empty()
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.succ[a].binary_search(&b).is_ok()
    }

    pub fn reachable_from(&self, start: &[usize]) -> Vec<bool> {
        reach(&self.succ, start)
    }
}

pub(crate) fn reach(succ: &[Vec<usize>], start: &[usize]) -> Vec<bool> {
    let mut seen = vec![false; succ.len()];
    let mut stack: Vec<usize> = start.to_vec();
    for &s in start {
        seen[s] = true;
    }
    while let Some(u) = stack.pop() {
        for &v in &succ[u] {
            if !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

/// Thread pool honoring `HC_THREADS`.
pub fn thread_pool() -> rayon::ThreadPool {
    let n = std::env::var("HC_THREADS").ok().and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
    rayon::ThreadPoolBuilder::new().num_threads(n).build().expect("thread pool")
}

const MAX_RESETS_PER_STEP: usize = 64;

struct BoxResult {
    edges: Vec<(usize, EdgeKind)>,
    meets_guard: bool,
    failed: usize,
}

fn box_seed(seed: u64, b: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (b as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

fn process_box(sys: &HybridSystemDef, grid: &BoxGrid, p: &GraphParams, budget: &SimBudget, b: usize) -> BoxResult {
    let etol = budget.event_tol;
    let mode = grid.boxes[b].mode;
    let m = sys.mode(mode);
    let bounds = grid.bounds(b);
    let mut pts = grid.representatives(sys, b);
    let mut rng = ChaCha8Rng::seed_from_u64(box_seed(p.seed, b));
    for _ in 0..p.samples_per_box {
        let x: Vec<f64> = bounds.iter().map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo }).collect();
        if m.contains(&x, 1e-12) {
            pts.push(x);
        }
    }
    let mut res = BoxResult { edges: Vec::new(), meets_guard: false, failed: 0 };
    let mut signs = vec![(false, false); m.guards.len()];
    for x in &pts {
        for (gi, g) in m.guards.iter().enumerate() {
            if g.ineqs_hold(x, etol) {
                let v = g.psi.eval(x);
                signs[gi].0 |= v >= -etol;
                signs[gi].1 |= v <= etol;
            }
        }
        let mut cur = State::new(mode, x.clone());
        let mut left = p.t_step;
        let mut resets = 0;
        // Flow edges follow the time-T_step map of the execution, resets included; reset edges
        // leave only from samples that start on the guard.
        loop {
            if let Some(gi) = sys.guard_at(&cur, etol) {
                res.meets_guard |= resets == 0 && left == p.t_step;
                resets += 1;
                if resets > MAX_RESETS_PER_STEP {
                    // Zeno before T_step: the accumulation point stands in for the image.
                    res.edges.extend(grid.boxes_near(&cur, p.bloat_pad).into_iter().map(|d| (d, EdgeKind::Flow)));
                    break;
                }
                match sys.apply_reset_with(&cur, gi, 1e-6) {
                    Ok(r) => {
                        if resets == 1 && left == p.t_step {
                            res.edges.extend(grid.boxes_near(&r, p.bloat_pad).into_iter().map(|d| (d, EdgeKind::Reset)));
                        }
                        cur = r;
                    }
                    Err(_) => {
                        res.failed += 1;
                        break;
                    }
                }
                continue;
            }
            if left <= 0.0 {
                if resets > 0 {
                    res.edges.extend(grid.boxes_near(&cur, p.bloat_pad).into_iter().map(|d| (d, EdgeKind::Flow)));
                }
                break;
            }
            match integrate_arc(sys, &cur, left, budget) {
                Ok(arc) => match arc.end {
                    ArcEnd::TimeOut(e) => {
                        res.edges.extend(grid.boxes_near_from(Some(b), &e, p.bloat_pad).into_iter().map(|d| (d, EdgeKind::Flow)));
                        break;
                    }
                    ArcEnd::GuardHit { state, time, .. } => {
                        left = (left - time).max(0.0);
                        cur = state;
                    }
                    ArcEnd::DomainExit { .. } => break,
                },
                Err(_) => {
                    res.failed += 1;
                    break;
                }
            }
        }
    }
    res.meets_guard |= signs.iter().any(|&(a, b)| a && b);
    res.edges.sort();
    res.edges.dedup();
    res
}

/// Builds the box transition graph: flow edges for time `t_step` and reset edges at guard hits.
pub fn build_transition_graph(sys: &HybridSystemDef, params: &GraphParams, budget: &SimBudget) -> Result<TransitionGraph> {
    if !(params.t_step > 0.0) || params.bloat_pad < 0.0 {
        return Err(HybridError::BadParameter("T_step must be positive and bloat_pad non-negative".into()));
    }
    budget.validate()?;
    let grid = BoxGrid::new(sys, params.h, params.node_cap)?;
    let results: Vec<BoxResult> = thread_pool().install(|| {
        (0..grid.len()).into_par_iter().map(|b| process_box(sys, &grid, params, budget, b)).collect()
    });
    let mut edges = Vec::new();
    let mut succ = vec![Vec::new(); grid.len()];
    let mut guard_boxes = Vec::new();
    let mut reset_undefined = Vec::new();
    let mut failed = 0;
    for (b, r) in results.into_iter().enumerate() {
        failed += r.failed;
        let has_reset = r.edges.iter().any(|e| e.1 == EdgeKind::Reset);
        if r.meets_guard {
            guard_boxes.push(b);
            if !has_reset {
                reset_undefined.push(b);
            }
        }
        for (d, k) in r.edges {
            edges.push((b, d, k));
            succ[b].push(d);
        }
    }
    for s in &mut succ {
        s.sort_unstable();
        s.dedup();
    }
    Ok(TransitionGraph { grid, params: params.clone(), edges, succ, guard_boxes, reset_undefined, failed_samples: failed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainClassSet {
    /// SCCs in reverse topological order: every edge between SCCs goes from a later to an earlier index.
    pub sccs: Vec<Vec<usize>>,
    pub scc_of: Vec<usize>,
    pub recurrent_sccs: Vec<usize>,
    pub is_recurrent_scc: Vec<bool>,
    pub recurrent_boxes: Vec<usize>,
}

impl ChainClassSet {
    pub fn is_recurrent(&self, node: usize) -> bool {
        self.is_recurrent_scc[self.scc_of[node]]
    }
}

/// Strongly connected components of a digraph given by successor lists.
pub fn scc_classes(succ: &[Vec<usize>]) -> ChainClassSet {
    let mut g = DiGraph::<(), ()>::with_capacity(succ.len(), 0);
    let nodes: Vec<_> = (0..succ.len()).map(|_| g.add_node(())).collect();
    for (u, vs) in succ.iter().enumerate() {
        for &v in vs {
            g.add_edge(nodes[u], nodes[v], ());
        }
    }
    let mut sccs: Vec<Vec<usize>> =
        tarjan_scc(&g).into_iter().map(|c| {
            let mut c: Vec<usize> = c.into_iter().map(|n| n.index()).collect();
            c.sort_unstable();
            c
        }).collect();
    // tarjan_scc already yields reverse topological order; keep it.
    let mut scc_of = vec![0; succ.len()];
    for (i, c) in sccs.iter().enumerate() {
        for &n in c {
            scc_of[n] = i;
        }
    }
    let is_recurrent_scc: Vec<bool> = sccs
        .iter()
        .map(|c| c.len() >= 2 || succ[c[0]].binary_search(&c[0]).is_ok())
        .collect();
    let recurrent_sccs: Vec<usize> = (0..sccs.len()).filter(|&i| is_recurrent_scc[i]).collect();
    let mut recurrent_boxes: Vec<usize> = recurrent_sccs.iter().flat_map(|&i| sccs[i].iter().copied()).collect();
    recurrent_boxes.sort_unstable();
    sccs.shrink_to_fit();
    ChainClassSet { sccs, scc_of, recurrent_sccs, is_recurrent_scc, recurrent_boxes }
}

pub fn chain_recurrent_boxes(g: &TransitionGraph) -> ChainClassSet {
    scc_classes(&g.succ)
}

fn condensation(succ: &[Vec<usize>], classes: &ChainClassSet) -> Vec<Vec<usize>> {
    let mut cs = vec![Vec::new(); classes.sccs.len()];
    for (u, vs) in succ.iter().enumerate() {
        for &v in vs {
            let (a, b) = (classes.scc_of[u], classes.scc_of[v]);
            if a != b {
                cs[a].push(b);
            }
        }
    }
    for c in &mut cs {
        c.sort_unstable();
        c.dedup();
    }
    cs
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttractorRepellerPair {
    pub attractor: Vec<usize>,
    pub repeller: Vec<usize>,
    pub trapping: Vec<usize>,
    pub trivial: bool,
}

pub const DEFAULT_COMPONENT_CAP: usize = 20;

/// Attractor-repeller pairs from down-closed sets of recurrent classes.
pub fn conley_pairs(succ: &[Vec<usize>], classes: &ChainClassSet, cap: usize) -> Result<Vec<AttractorRepellerPair>> {
    let k = classes.recurrent_sccs.len();
    if k > cap || k > 30 {
        return Err(HybridError::TooManyComponents { count: k, cap });
    }
    let n = succ.len();
    let cond = condensation(succ, classes);
    let bit_of: HashMap<usize, usize> = classes.recurrent_sccs.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    // Recurrent classes reachable from each SCC; SCC order is reverse topological.
    let mut reach_mask = vec![0u64; cond.len()];
    for c in 0..cond.len() {
        let mut m = bit_of.get(&c).map_or(0, |&i| 1u64 << i);
        for &d in &cond[c] {
            m |= reach_mask[d];
        }
        reach_mask[c] = m;
    }
    let all_nodes: Vec<usize> = (0..n).collect();
    let mut pairs = vec![
        AttractorRepellerPair { attractor: all_nodes.clone(), repeller: vec![], trapping: all_nodes.clone(), trivial: true },
        AttractorRepellerPair { attractor: vec![], repeller: all_nodes.clone(), trapping: vec![], trivial: true },
    ];
    for mask in 0u64..(1u64 << k) {
        let closed = (0..k).all(|i| mask >> i & 1 == 0 || reach_mask[classes.recurrent_sccs[i]] & !mask == 0);
        if !closed {
            continue;
        }
        let seeds: Vec<usize> = (0..k)
            .filter(|i| mask >> i & 1 == 1)
            .flat_map(|i| classes.sccs[classes.recurrent_sccs[i]].iter().copied())
            .collect();
        let in_a = reach(succ, &seeds);
        let attractor: Vec<usize> = (0..n).filter(|&v| in_a[v]).collect();
        let trapping: Vec<usize> = (0..n).filter(|&v| reach_mask[classes.scc_of[v]] & !mask == 0).collect();
        // Nodes that can reach A: reverse reachability.
        let mut pred = vec![Vec::new(); n];
        for (u, vs) in succ.iter().enumerate() {
            for &v in vs {
                pred[v].push(u);
            }
        }
        let to_a = reach(&pred, &attractor);
        let repeller: Vec<usize> = (0..n).filter(|&v| !to_a[v]).collect();
        let trivial = attractor.is_empty() || attractor.len() == n;
        let p = AttractorRepellerPair { attractor, repeller, trapping, trivial };
        if !pairs.iter().any(|q| q.attractor == p.attractor && q.repeller == p.repeller) {
            pairs.push(p);
        }
    }
    Ok(pairs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoxLyapunov {
    /// Level per SCC; the value of level `l` is `sum_{i=1..l} 3^-i`.
    pub level: Vec<u32>,
    pub scc_of: Vec<usize>,
}

impl BoxLyapunov {
    pub fn node_level(&self, node: usize) -> u32 {
        self.level[self.scc_of[node]]
    }

    pub fn value(&self, node: usize) -> f64 {
        level_value(self.node_level(node))
    }

    pub fn exact_value(&self, node: usize) -> BigRational {
        let l = self.node_level(node);
        let three = BigInt::from(3u32);
        let den = num_traits::pow(three, l as usize);
        (BigRational::one() - BigRational::new(BigInt::one(), den)) / BigRational::from_integer(BigInt::from(2u32))
    }
}

pub fn level_value(l: u32) -> f64 {
    0.5 * (1.0 - 3f64.powi(-(l as i32)))
}

/// Longest-path levels on the condensation, bumped so distinct recurrent classes get distinct levels.
pub fn build_box_lyapunov(succ: &[Vec<usize>], classes: &ChainClassSet) -> BoxLyapunov {
    let cond = condensation(succ, classes);
    let mut level = vec![0u32; cond.len()];
    let mut used = std::collections::HashSet::new();
    for c in 0..cond.len() {
        let mut l = cond[c].iter().map(|&d| level[d] + 1).max().unwrap_or(0);
        if classes.is_recurrent_scc[c] {
            while used.contains(&l) {
                l += 1;
            }
            used.insert(l);
        }
        level[c] = l;
    }
    BoxLyapunov { level, scc_of: classes.scc_of.clone() }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum JumpKind {
    Reset { guard: usize },
    Continuous,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainJump {
    pub time: f64,
    pub kind: JumpKind,
    pub pre: State,
    pub post: State,
}

/// An (eps, T)-chain: `arcs.len() == jumps.len() + 1`, jump `j` joins arc `j` to arc `j + 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsTChain {
    pub arcs: Vec<Vec<(f64, State)>>,
    pub jumps: Vec<ChainJump>,
    pub eps: f64,
    pub t_min: f64,
}

impl EpsTChain {
    /// Number of jumps.
    pub fn n(&self) -> usize {
        self.jumps.len()
    }

    /// Jump times with a leading zero.
    pub fn tau(&self) -> Vec<f64> {
        std::iter::once(0.0).chain(self.jumps.iter().map(|j| j.time)).collect()
    }

    /// Indices into `tau` of continuous jumps, with a leading zero.
    pub fn eta(&self) -> Vec<usize> {
        std::iter::once(0)
            .chain(self.jumps.iter().enumerate().filter(|(_, j)| j.kind == JumpKind::Continuous).map(|(i, _)| i + 1))
            .collect()
    }

    pub fn start(&self) -> &State {
        &self.arcs[0][0].1
    }

    pub fn end(&self) -> &State {
        &self.arcs.last().expect("arc").last().expect("sample").1
    }
}

#[derive(Clone, Debug)]
pub struct ChainSearchOptions {
    pub nice_only: bool,
    pub max_nodes: usize,
    pub max_resets_per_step: usize,
}

impl Default for ChainSearchOptions {
    fn default() -> Self {
        ChainSearchOptions { nice_only: false, max_nodes: 200_000, max_resets_per_step: 200 }
    }
}

struct Segment {
    arcs: Vec<Vec<(f64, State)>>,
    resets: Vec<ChainJump>,
    end: State,
    end_time: f64,
}

/// Flows for `dur` from `p` starting at absolute time `t0`, taking every reset exactly.
fn flow_segment(
    sys: &HybridSystemDef,
    p: &State,
    t0: f64,
    dur: f64,
    nice: bool,
    max_resets: usize,
    budget: &SimBudget,
) -> Option<Segment> {
    let etol = budget.event_tol;
    let mut seg = Segment { arcs: vec![vec![(t0, p.clone())]], resets: Vec::new(), end: p.clone(), end_time: t0 };
    let mut t = t0;
    let mut remaining = dur;
    let mut cur = p.clone();
    loop {
        if let Some(gi) = sys.guard_at(&cur, etol) {
            if seg.resets.len() >= max_resets {
                return None;
            }
            let post = sys.apply_reset_with(&cur, gi, 1e-6).ok()?;
            seg.resets.push(ChainJump { time: t, kind: JumpKind::Reset { guard: gi }, pre: cur.clone(), post: post.clone() });
            seg.arcs.push(vec![(t, post.clone())]);
            cur = post;
            if nice {
                remaining = dur;
            }
            continue;
        }
        if remaining <= 0.0 {
            seg.end = cur;
            seg.end_time = t;
            return Some(seg);
        }
        let arc = integrate_arc(sys, &cur, remaining, budget).ok()?;
        let last = seg.arcs.last_mut().expect("arc");
        last.extend(arc.samples.iter().skip(1).map(|(dt, s)| (t + dt, s.clone())));
        match arc.end {
            ArcEnd::TimeOut(e) => {
                seg.end = e;
                seg.end_time = t + remaining;
                if let Some(l) = last.last_mut() {
                    l.0 = seg.end_time;
                }
                return Some(seg);
            }
            ArcEnd::GuardHit { state, time, .. } => {
                t += time;
                remaining -= time;
                cur = state;
                if remaining <= 0.0 {
                    remaining = 0.0;
                }
            }
            ArcEnd::DomainExit { .. } => return None,
        }
    }
}

struct SearchNode {
    parent: Option<usize>,
    jump_in: Option<ChainJump>,
    segment: Option<Segment>,
}

/// Searches the grid for an (eps, T)-chain from `x` to `y` and lifts it to explicit arcs and jumps.
pub fn find_chain(
    sys: &HybridSystemDef,
    g: &TransitionGraph,
    x: &State,
    y: &State,
    eps: f64,
    t_min: f64,
    opts: &ChainSearchOptions,
    budget: &SimBudget,
) -> Result<EpsTChain> {
    if !(eps > 0.0 && t_min > 0.0) {
        return Err(HybridError::BadParameter("eps and T must be positive".into()));
    }
    let etol = budget.event_tol;
    if !sys.in_state_space(x, 1e-9) || !sys.in_state_space(y, 1e-9) {
        return Err(HybridError::BadParameter("chain endpoints must lie in the state space".into()));
    }
    let bx = g.grid.boxes_containing(x);
    let by = g.grid.boxes_near(y, eps);
    if bx.is_empty() || by.is_empty() {
        return Err(HybridError::NoChain);
    }
    let start: Vec<usize> = bx.iter().flat_map(|&b| g.succ[b].iter().copied()).collect();
    let reachable = g.reachable_from(&start);
    if !by.iter().any(|&b| reachable[b]) {
        return Err(HybridError::NoChain);
    }

    let guard_pts = guard_points_by_box(sys, g);
    let mut visited = vec![[false; 2]; g.len()];
    let mut nodes = vec![SearchNode { parent: None, jump_in: None, segment: None }];
    let mut start_points = vec![(x.clone(), 0.0)];
    let mut queue = VecDeque::from([0usize]);
    while let Some(ni) = queue.pop_front() {
        let (p, t0) = start_points[ni].clone();
        let Some(seg) = flow_segment(sys, &p, t0, t_min, opts.nice_only, opts.max_resets_per_step, budget) else {
            continue;
        };
        let e = seg.end.clone();
        let t_end = seg.end_time;
        nodes[ni].segment = Some(seg);
        if distance(&e, y) <= eps {
            return Ok(assemble(&nodes, ni, y, eps, t_min));
        }
        if nodes.len() >= opts.max_nodes {
            continue;
        }
        for b in g.grid.boxes_near(&e, eps) {
            let mut cands = g.grid.representatives(sys, b);
            if let Some(gp) = guard_pts.get(&b) {
                cands.extend(gp.iter().cloned());
            }
            for q in cands {
                let qs = State::new(e.mode, q);
                if distance(&e, &qs) > eps || !sys.in_state_space(&qs, etol) {
                    continue;
                }
                let Some(qb) = g.grid.locate(&qs) else { continue };
                let on_guard = sys.in_guard(&qs, etol) as usize;
                if visited[qb][on_guard] {
                    continue;
                }
                visited[qb][on_guard] = true;
                nodes.push(SearchNode {
                    parent: Some(ni),
                    jump_in: Some(ChainJump { time: t_end, kind: JumpKind::Continuous, pre: e.clone(), post: qs.clone() }),
                    segment: None,
                });
                start_points.push((qs, t_end));
                queue.push_back(nodes.len() - 1);
            }
        }
    }
    Err(HybridError::NoChain)
}

fn guard_points_by_box(sys: &HybridSystemDef, g: &TransitionGraph) -> HashMap<usize, Vec<Vec<f64>>> {
    let n = g.grid.modes.iter().flat_map(|m| m.counts.iter()).copied().max().unwrap_or(1).clamp(8, 512) + 1;
    let mut out: HashMap<usize, Vec<Vec<f64>>> = HashMap::new();
    for (mode, p) in sampling::all_guard_points(sys, n) {
        for b in g.grid.boxes_containing(&State::new(mode, p.clone())) {
            out.entry(b).or_default().push(p.clone());
        }
    }
    out
}

fn assemble(nodes: &[SearchNode], last: usize, y: &State, eps: f64, t_min: f64) -> EpsTChain {
    let mut path = Vec::new();
    let mut cur = Some(last);
    while let Some(i) = cur {
        path.push(i);
        cur = nodes[i].parent;
    }
    path.reverse();
    let mut arcs: Vec<Vec<(f64, State)>> = Vec::new();
    let mut jumps = Vec::new();
    for &i in &path {
        let n = &nodes[i];
        let seg = n.segment.as_ref().expect("expanded");
        if let Some(j) = &n.jump_in {
            jumps.push(j.clone());
        }
        for (k, a) in seg.arcs.iter().enumerate() {
            arcs.push(a.clone());
            if k < seg.resets.len() {
                jumps.push(seg.resets[k].clone());
            }
        }
    }
    let seg = nodes[last].segment.as_ref().expect("expanded");
    jumps.push(ChainJump { time: seg.end_time, kind: JumpKind::Continuous, pre: seg.end.clone(), post: y.clone() });
    arcs.push(vec![(seg.end_time, y.clone())]);
    EpsTChain { arcs, jumps, eps, t_min }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChainReport {
    pub violations: Vec<String>,
}

impl ChainReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Re-checks every clause of the chain definition independently of how the chain was built.
pub fn validate_chain(sys: &HybridSystemDef, chain: &EpsTChain, budget: &SimBudget) -> ChainReport {
    let mut v = Vec::new();
    let etol = budget.event_tol;
    let slack = 1e-9;
    if chain.jumps.is_empty() {
        v.push("chain needs at least one jump".to_string());
    }
    if chain.arcs.len() != chain.jumps.len() + 1 {
        v.push(format!("{} arcs for {} jumps", chain.arcs.len(), chain.jumps.len()));
        return ChainReport { violations: v };
    }
    if chain.arcs.iter().any(|a| a.is_empty()) {
        v.push("empty arc".to_string());
        return ChainReport { violations: v };
    }
    if chain.arcs[0][0].0 != 0.0 {
        v.push("chain must start at time 0".to_string());
    }
    for (i, arc) in chain.arcs.iter().enumerate() {
        let (t0, s0) = &arc[0];
        let (t1, s1) = arc.last().expect("sample");
        if arc.windows(2).any(|w| w[1].0 < w[0].0) || arc.iter().any(|(_, s)| s.mode != s0.mode) {
            v.push(format!("arc {i}: times decrease or mode changes"));
        }
        if i > 0 && (chain.jumps[i - 1].time != *t0 || chain.jumps[i - 1].post != *s0) {
            v.push(format!("arc {i}: does not start at the preceding jump"));
        }
        if i < chain.jumps.len() && (chain.jumps[i].time != *t1 || chain.jumps[i].pre != *s1) {
            v.push(format!("arc {i}: does not end at the following jump"));
        }
        let dur = t1 - t0;
        if dur > 0.0 {
            let ends_on_reset = matches!(chain.jumps.get(i).map(|j| j.kind), Some(JumpKind::Reset { .. }));
            match integrate_arc(sys, s0, dur, budget) {
                Ok(re) => {
                    let (end, reached) = match &re.end {
                        ArcEnd::TimeOut(e) => (e.clone(), dur),
                        ArcEnd::GuardHit { state, time, .. } => (state.clone(), *time),
                        ArcEnd::DomainExit { state, time } => (state.clone(), *time),
                    };
                    let tol = 1e-6 * (1.0 + dur);
                    let early = dur - reached > tol;
                    if early || distance(&end, s1) > tol {
                        v.push(format!("arc {i}: re-integration ends at {:?}, recorded {:?}", end.x, s1.x));
                    }
                    if matches!(re.end, ArcEnd::GuardHit { .. }) && !ends_on_reset && !early {
                        // Arc stops at the guard but the chain continues by a continuous jump: allowed.
                    }
                }
                Err(e) => v.push(format!("arc {i}: integration failed: {e}")),
            }
        }
    }
    for (j, jump) in chain.jumps.iter().enumerate() {
        match jump.kind {
            JumpKind::Continuous => {
                let d = distance(&jump.pre, &jump.post);
                if d > chain.eps + slack {
                    v.push(format!("jump {}: continuous jump of size {d} exceeds eps", j + 1));
                }
            }
            JumpKind::Reset { guard } => {
                let m = sys.mode(jump.pre.mode);
                match m.guards.get(guard) {
                    Some(g) if g.contains(&jump.pre.x, 1e-6) => {
                        let r = sys.reset_raw(&jump.pre, guard);
                        let d = distance(&r, &jump.post);
                        if d > chain.eps + slack {
                            v.push(format!("jump {}: reset lands {d} from r(pre)", j + 1));
                        }
                    }
                    _ => v.push(format!("jump {}: reset from a point off the guard", j + 1)),
                }
            }
        }
    }
    let tau = chain.tau();
    let eta = chain.eta();
    for w in eta.windows(2) {
        let gap = tau[w[1]] - tau[w[0]];
        if gap < chain.t_min - slack {
            v.push(format!("continuous jumps {} and {} only {gap} apart", w[0], w[1]));
        }
    }
    let _ = etol;
    ChainReport { violations: v }
}

/// True iff every continuous jump follows an arc of duration at least `t_min`.
pub fn is_nice_chain(chain: &EpsTChain, t_min: f64) -> bool {
    chain.jumps.iter().enumerate().all(|(j, jump)| {
        if jump.kind != JumpKind::Continuous {
            return true;
        }
        let arc = &chain.arcs[j];
        arc.last().expect("sample").0 - arc[0].0 >= t_min - 1e-9
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ConstraintKind {
    StrictFlow,
    StrictReset,
    ChainEq,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObstructionWitness {
    /// Each point with the kind of the constraint edge leaving it; the last edge returns to the first point.
    pub cycle: Vec<(State, ConstraintKind)>,
    pub contains_strict: bool,
}

#[derive(Clone, Debug)]
pub struct ObstructionOptions {
    pub deltas: Vec<f64>,
    pub horizon: f64,
}

impl ObstructionOptions {
    pub fn for_grid(h: f64) -> Self {
        ObstructionOptions { deltas: vec![0.5 * h, 1.5 * h, 2.5 * h], horizon: 50.0 }
    }
}

/// Guard points, their reset images, and one center per recurrent class.
pub fn default_probes(sys: &HybridSystemDef, g: &TransitionGraph, classes: &ChainClassSet) -> Vec<State> {
    let mut out: Vec<State> = Vec::new();
    for (mode, p) in sampling::all_guard_points(sys, 24) {
        let s = State::new(mode, p);
        if let Some(gi) = sys.guard_at(&s, 1e-9) {
            if let Ok(r) = sys.apply_reset_with(&s, gi, 1e-6) {
                out.push(r);
            }
        }
        out.push(s);
    }
    for &c in &classes.recurrent_sccs {
        out.push(g.grid.center(classes.sccs[c][0]));
    }
    out
}

/// Looks for a cycle of Lyapunov constraints containing a strict inequality.
pub fn lyapunov_obstruction(
    sys: &HybridSystemDef,
    g: &TransitionGraph,
    classes: &ChainClassSet,
    probes: &[State],
    opts: &ObstructionOptions,
    budget: &SimBudget,
) -> Result<Option<ObstructionWitness>> {
    let etol = budget.event_tol;
    let mut pts: Vec<State> = Vec::new();
    let node = |pts: &mut Vec<State>, s: &State| -> usize {
        if let Some(i) = pts.iter().position(|p| distance(p, s) < 1e-6) {
            return i;
        }
        pts.push(s.clone());
        pts.len() - 1
    };
    for p in probes {
        node(&mut pts, p);
    }
    let rec_classes = |s: &State| -> Vec<usize> {
        let mut c: Vec<usize> = g
            .grid
            .boxes_containing(s)
            .into_iter()
            .filter(|&b| classes.is_recurrent(b))
            .map(|b| classes.scc_of[b])
            .collect();
        c.sort_unstable();
        c.dedup();
        c
    };
    let mut edges: Vec<(usize, usize, ConstraintKind)> = Vec::new();
    let n_probes = pts.len();
    for i in 0..n_probes {
        let a = pts[i].clone();
        let rec = rec_classes(&a);
        if rec.is_empty() {
            if let Some(gi) = sys.guard_at(&a, etol) {
                if let Ok(r) = sys.apply_reset_with(&a, gi, 1e-6) {
                    let j = node(&mut pts, &r);
                    edges.push((i, j, ConstraintKind::StrictReset));
                }
            }
            continue;
        }
        for j in 0..n_probes {
            if j != i && rec_classes(&pts[j]).iter().any(|c| rec.contains(c)) {
                edges.push((i, j, ConstraintKind::ChainEq));
            }
        }
        let m = sys.mode(a.mode);
        for &delta in &opts.deltas {
            for axis in 0..m.dim {
                for sign in [-1.0, 1.0] {
                    let mut x = a.x.clone();
                    x[axis] += sign * delta;
                    let p = State::new(a.mode, x);
                    if !sys.in_flow_set(&p, etol) || !rec_classes(&p).is_empty() || g.grid.boxes_containing(&p).is_empty() {
                        continue;
                    }
                    let Ok(FlowTime::Finite(mu)) = max_flow_time(sys, &p, opts.horizon, budget) else { continue };
                    let Ok(arc) = integrate_arc(sys, &p, mu + 1e-9, budget) else { continue };
                    let ArcEnd::GuardHit { state: b, .. } = arc.end else { continue };
                    let n = arc.samples.len();
                    let through_transient = arc.samples[..n.saturating_sub(1)].iter().all(|(_, s)| rec_classes(s).is_empty());
                    if through_transient {
                        let j = node(&mut pts, &b);
                        edges.push((i, j, ConstraintKind::StrictFlow));
                        // The flow end may itself be a transient guard point.
                        if rec_classes(&b).is_empty() {
                            if let Some(gi) = sys.guard_at(&b, etol) {
                                if let Ok(r) = sys.apply_reset_with(&b, gi, 1e-6) {
                                    let k = node(&mut pts, &r);
                                    edges.push((j, k, ConstraintKind::StrictReset));
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    // Reset images added above may be recurrent probes: connect them by chain equivalence.
    for i in n_probes..pts.len() {
        let rec = rec_classes(&pts[i]);
        if rec.is_empty() {
            continue;
        }
        for j in 0..pts.len() {
            if j != i && rec_classes(&pts[j]).iter().any(|c| rec.contains(c)) {
                edges.push((i, j, ConstraintKind::ChainEq));
                edges.push((j, i, ConstraintKind::ChainEq));
            }
        }
    }
    edges.sort_by_key(|e| (e.0, e.1, e.2 as u8));
    edges.dedup();
    let mut succ = vec![Vec::new(); pts.len()];
    for &(a, b, _) in &edges {
        succ[a].push(b);
    }
    for s in &mut succ {
        s.sort_unstable();
        s.dedup();
    }
    let cl = scc_classes(&succ);
    for &(a, b, k) in &edges {
        if k == ConstraintKind::ChainEq || cl.scc_of[a] != cl.scc_of[b] {
            continue;
        }
        // Close the strict edge a -> b by a shortest path b -> a.
        let mut prev: Vec<Option<usize>> = vec![None; pts.len()];
        let mut q = VecDeque::from([b]);
        let mut seen = vec![false; pts.len()];
        seen[b] = true;
        while let Some(u) = q.pop_front() {
            if u == a {
                break;
            }
            for &v in &succ[u] {
                if !seen[v] {
                    seen[v] = true;
                    prev[v] = Some(u);
                    q.push_back(v);
                }
            }
        }
        let mut path = vec![a];
        let mut cur = a;
        while cur != b {
            cur = prev[cur].expect("path inside an SCC");
            path.push(cur);
        }
        path.reverse(); // b ... a
        let mut cycle = vec![(pts[a].clone(), k)];
        for w in path.windows(2) {
            let kind = edges
                .iter()
                .filter(|e| e.0 == w[0] && e.1 == w[1])
                .map(|e| e.2)
                .min_by_key(|k| if *k == ConstraintKind::ChainEq { 1 } else { 0 })
                .expect("edge");
            cycle.push((pts[w[0]].clone(), kind));
        }
        return Ok(Some(ObstructionWitness { cycle, contains_strict: true }));
    }
    Ok(None)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OmegaEstimate {
    pub boxes: Vec<usize>,
    pub class: ExecutionClass,
}

fn boxes_along(grid: &BoxGrid, arcs: &[Vec<(f64, State)>], t0: f64, t1: f64) -> Vec<usize> {
    let mut set = std::collections::BTreeSet::new();
    for arc in arcs {
        for w in arc.windows(2) {
            let ((ta, sa), (tb, sb)) = (&w[0], &w[1]);
            if *tb < t0 || *ta > t1 || sa.mode != sb.mode {
                continue;
            }
            let len = crate::system::euclid(&sa.x, &sb.x);
            let k = ((len / (0.5 * grid.h)).ceil() as usize).max(1);
            for i in 0..=k {
                let f = i as f64 / k as f64;
                let t = ta + f * (tb - ta);
                if t < t0 || t > t1 {
                    continue;
                }
                let x: Vec<f64> = sa.x.iter().zip(&sb.x).map(|(a, b)| a + f * (b - a)).collect();
                if let Some(b) = grid.locate(&State::new(sa.mode, x)) {
                    set.insert(b);
                }
            }
        }
        if let [(t, s)] = arc.as_slice() {
            if *t >= t0 && *t <= t1 {
                if let Some(b) = grid.locate(s) {
                    set.insert(b);
                }
            }
        }
    }
    set.into_iter().collect()
}

/// Boxes visited by the tail of the execution from `x0`; accumulation states for Zeno executions.
pub fn omega_limit_estimate(
    sys: &HybridSystemDef,
    grid: &BoxGrid,
    x0: &State,
    t_transient: f64,
    t_window: f64,
    budget: &SimBudget,
) -> Result<OmegaEstimate> {
    if !(t_transient >= 0.0 && t_window > 0.0) {
        return Err(HybridError::BadParameter("t_transient must be non-negative and t_window positive".into()));
    }
    let b = SimBudget { max_time: t_transient + 2.0 * t_window, ..budget.clone() };
    let tr = simulate_execution(sys, x0, &b)?;
    match &tr.class {
        ExecutionClass::Zeno { .. } => {
            let w = budget.zeno_ratio_window.min(tr.jumps.len());
            let mut set: Vec<usize> = tr.jumps[tr.jumps.len() - w..]
                .iter()
                .flat_map(|j| [grid.locate(&j.pre), grid.locate(&j.post)])
                .flatten()
                .collect();
            set.sort_unstable();
            set.dedup();
            Ok(OmegaEstimate { boxes: set, class: tr.class })
        }
        ExecutionClass::Infinite { .. } => {
            let w1 = boxes_along(grid, &tr.arcs, t_transient, t_transient + t_window);
            let w2 = boxes_along(grid, &tr.arcs, t_transient + t_window, t_transient + 2.0 * t_window);
            let d2 = grid.dilate(&w2, 1);
            if w1.iter().any(|b| d2.binary_search(b).is_err()) {
                return Err(HybridError::TransientTooShort);
            }
            Ok(OmegaEstimate { boxes: w1, class: tr.class })
        }
        ExecutionClass::Blocked { final_state } => {
            Err(HybridError::Blocked(format!("execution blocked at {:?}", final_state.x)))
        }
        ExecutionClass::BudgetTruncated => Err(HybridError::BudgetExceeded),
    }
}

/// Exact value `sum_{i=1..l} 3^-i` of a level, for reports.
pub fn exact_level_value(l: u32) -> BigRational {
    let mut acc = BigRational::zero();
    let mut p = BigRational::one();
    let third = BigRational::new(BigInt::one(), BigInt::from(3u32));
    for _ in 0..l {
        p *= &third;
        acc += &p;
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{instantiate, BuiltinId};
    use crate::poly::{Poly, PolyMap};
    use crate::system::ModeSpec;

    fn stationary() -> HybridSystemDef {
        HybridSystemDef {
            modes: vec![ModeSpec {
                id: 0,
                dim: 1,
                field: PolyMap::new(vec![Poly::zero(1)]),
                domain: vec![(0.0, 1.0)],
                region: vec![],
                guards: vec![],
            }],
        }
    }

    #[test]
    fn grid_locate_and_neighbors() {
        let sys = instantiate(&BuiltinId::Counterexample).unwrap();
        let grid = BoxGrid::new(&sys, 0.01, 1000).unwrap();
        assert_eq!(grid.len(), 100 + 200);
        let b = grid.locate(&State::new(1, vec![2.005])).unwrap();
        assert_eq!(grid.boxes[b].idx, vec![100]);
        let at2 = grid.boxes_containing(&State::new(1, vec![2.0]));
        assert_eq!(at2.len(), 2);
        assert_eq!(grid.boxes_near(&State::new(1, vec![2.005]), 0.01).len(), 3);
        assert!(matches!(BoxGrid::new(&sys, 0.01, 10), Err(HybridError::GridTooFine { .. })));
    }

    #[test]
    fn ball_grid_is_culled_by_energy() {
        let sys = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
        let grid = BoxGrid::new(&sys, 0.25, DEFAULT_NODE_CAP).unwrap();
        let full: usize = grid.modes[0].counts.iter().product();
        assert!(grid.len() < full);
        assert!(grid.locate(&State::new(0, vec![4.9, 3.0])).is_none());
    }

    #[test]
    fn stationary_flow_has_only_self_edges() {
        let sys = stationary();
        let p = GraphParams { bloat_pad: 0.0, ..GraphParams::new(0.1, 0.5) };
        let g = build_transition_graph(&sys, &p, &SimBudget::default()).unwrap();
        assert_eq!(g.len(), 10);
        for (b, s) in g.succ.iter().enumerate() {
            assert_eq!(s, &vec![b]);
        }
    }

    #[test]
    fn counterexample_reset_edge_from_zero() {
        let sys = instantiate(&BuiltinId::Counterexample).unwrap();
        let g = build_transition_graph(&sys, &GraphParams::new(0.01, 0.05), &SimBudget::default()).unwrap();
        let b0 = g.grid.locate(&State::new(0, vec![-0.001])).unwrap();
        let b1 = g.grid.locate(&State::new(1, vec![1.001])).unwrap();
        assert!(g.edges.contains(&(b0, b1, EdgeKind::Reset)));
        assert!(g.reset_undefined.is_empty());
    }

    #[test]
    fn sccs_and_levels_on_a_hand_graph() {
        // 0 <-> 1 -> 2 -> 3 (self loop), 4 isolated
        let succ = vec![vec![1], vec![0, 2], vec![3], vec![3], vec![]];
        let cl = scc_classes(&succ);
        assert_eq!(cl.recurrent_boxes, vec![0, 1, 3]);
        let lyap = build_box_lyapunov(&succ, &cl);
        assert!(lyap.node_level(0) > lyap.node_level(2));
        assert!(lyap.node_level(2) > lyap.node_level(3));
        assert_eq!(lyap.node_level(0), lyap.node_level(1));
        assert_eq!(lyap.value(3), 0.0);
        assert_eq!(lyap.exact_value(0), exact_level_value(lyap.node_level(0)));
        let pairs = conley_pairs(&succ, &cl, 20).unwrap();
        let nontrivial: Vec<_> = pairs.iter().filter(|p| !p.trivial).collect();
        // Down-closed sets: {} , {3}, {3, 01}; the last yields A = {0,1,2,3}, not everything because of 4.
        assert!(nontrivial.iter().any(|p| p.attractor == vec![3] && p.repeller == vec![4]));
    }

    #[test]
    fn distinct_recurrent_classes_get_distinct_levels() {
        // Two sinks with self loops.
        let succ = vec![vec![0], vec![1], vec![0, 1]];
        let cl = scc_classes(&succ);
        let l = build_box_lyapunov(&succ, &cl);
        assert_ne!(l.node_level(0), l.node_level(1));
        assert!(l.node_level(2) > l.node_level(0).max(l.node_level(1)));
    }

    #[test]
    fn too_many_components() {
        let succ: Vec<Vec<usize>> = (0..25).map(|i| vec![i]).collect();
        let cl = scc_classes(&succ);
        assert!(matches!(conley_pairs(&succ, &cl, 20), Err(HybridError::TooManyComponents { count: 25, .. })));
    }

    fn hand_chain(t_gap: f64) -> EpsTChain {
        let s = |x: f64| State::new(0, vec![x]);
        EpsTChain {
            arcs: vec![vec![(0.0, s(0.5))], vec![(t_gap, s(0.5))], vec![(t_gap, s(0.5))]],
            jumps: vec![
                ChainJump { time: t_gap, kind: JumpKind::Continuous, pre: s(0.5), post: s(0.5) },
                ChainJump { time: t_gap, kind: JumpKind::Continuous, pre: s(0.5), post: s(0.5) },
            ],
            eps: 0.1,
            t_min: 1.0,
        }
    }

    #[test]
    fn validator_flags_short_gaps_and_cross_mode_jumps() {
        let sys = stationary();
        let b = SimBudget::default();
        let mut c = hand_chain(0.5);
        c.arcs[0].push((0.5, State::new(0, vec![0.5])));
        let rep = validate_chain(&sys, &c, &b);
        assert!(rep.violations.iter().any(|v| v.contains("apart")));
        let cross = EpsTChain {
            jumps: vec![ChainJump {
                time: 1.0,
                kind: JumpKind::Continuous,
                pre: State::new(0, vec![0.5]),
                post: State::new(1, vec![0.5]),
            }],
            arcs: vec![
                vec![(0.0, State::new(0, vec![0.5])), (1.0, State::new(0, vec![0.5]))],
                vec![(1.0, State::new(1, vec![0.5]))],
            ],
            eps: 0.1,
            t_min: 1.0,
        };
        let rep = validate_chain(&sys, &cross, &b);
        assert!(rep.violations.iter().any(|v| v.contains("exceeds eps")));
    }

    #[test]
    fn niceness() {
        let mut c = hand_chain(1.0);
        c.arcs[0].push((1.0, State::new(0, vec![0.5])));
        // Second continuous jump follows a zero-length arc: a double jump.
        assert!(!is_nice_chain(&c, 1.0));
        let single = EpsTChain {
            arcs: vec![
                vec![(0.0, State::new(0, vec![0.5])), (2.0, State::new(0, vec![0.5]))],
                vec![(2.0, State::new(0, vec![0.55]))],
            ],
            jumps: vec![ChainJump {
                time: 2.0,
                kind: JumpKind::Continuous,
                pre: State::new(0, vec![0.5]),
                post: State::new(0, vec![0.55]),
            }],
            eps: 0.1,
            t_min: 1.0,
        };
        assert!(is_nice_chain(&single, 1.0));
        assert!(validate_chain(&stationary(), &single, &SimBudget::default()).ok());
    }

    #[test]
    fn periodic_orbit_chain() {
        let sys = instantiate(&BuiltinId::spring(1.0)).unwrap();
        let b = SimBudget::default();
        let g = build_transition_graph(&sys, &GraphParams::new(0.25, 0.5), &b).unwrap();
        let x = State::new(0, vec![1.0, 0.5]);
        let c = find_chain(&sys, &g, &x, &x, 0.3, 0.5, &ChainSearchOptions::default(), &b).unwrap();
        let rep = validate_chain(&sys, &c, &b);
        assert!(rep.ok(), "{:?}", rep.violations);
        assert_eq!(c.start(), &x);
        assert_eq!(c.end(), &x);
    }

    #[test]
    fn counterexample_chains() {
        let sys = instantiate(&BuiltinId::Counterexample).unwrap();
        let b = SimBudget::default();
        let g = build_transition_graph(&sys, &GraphParams::new(0.01, 0.05), &b).unwrap();
        let x = State::new(1, vec![2.5]);
        let y = State::new(1, vec![2.4]);
        // Small T: the chain hops over the guard point 2 after the ride 0 -> 1 -> 2.
        let c = find_chain(&sys, &g, &x, &y, 0.05, 0.1, &ChainSearchOptions::default(), &b).unwrap();
        assert!(validate_chain(&sys, &c, &b).ok());
        assert!(c.jumps.iter().any(|j| j.kind == JumpKind::Continuous && j.pre.x[0] < 2.0 && j.post.x[0] > 2.0));
        // T above the ride time from 1 to 2 forbids the hop.
        let r = find_chain(&sys, &g, &x, &y, 0.05, 1.5, &ChainSearchOptions::default(), &b);
        assert!(matches!(r, Err(HybridError::NoChain)));
    }

    #[test]
    fn omega_of_equilibrium_start() {
        let sys = instantiate(&BuiltinId::GradientFlow).unwrap();
        let grid = BoxGrid::new(&sys, 0.05, DEFAULT_NODE_CAP).unwrap();
        let eq = State::new(0, vec![1.0, 0.0]);
        let om = omega_limit_estimate(&sys, &grid, &eq, 5.0, 5.0, &SimBudget::default()).unwrap();
        assert_eq!(om.boxes, vec![grid.locate(&eq).unwrap()]);
        let slow = State::new(0, vec![0.1, 0.0]);
        let r = omega_limit_estimate(&sys, &grid, &slow, 0.0, 2.0, &SimBudget::default());
        assert!(matches!(r, Err(HybridError::TransientTooShort)));
    }
}
