//! Adaptive Dormand-Prince integration with guard event location, and hybrid executions.

use serde::Serialize;

use crate::error::{HybridError, Result};
use crate::system::{dot, HybridSystemDef, ModeSpec, State};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimBudget {
    pub max_time: f64,
    pub max_jumps: usize,
    pub zeno_ratio_window: usize,
    pub integrator_tol: f64,
    pub event_tol: f64,
}

impl Default for SimBudget {
    fn default() -> Self {
        SimBudget { max_time: 100.0, max_jumps: 100, zeno_ratio_window: 10, integrator_tol: 1e-9, event_tol: 1e-9 }
    }
}

impl SimBudget {
    pub fn validate(&self) -> Result<()> {
        let ok = self.max_time > 0.0
            && self.max_jumps > 0
            && self.zeno_ratio_window > 0
            && self.integrator_tol > 0.0
            && self.event_tol > 0.0;
        if ok {
            Ok(())
        } else {
            Err(HybridError::BadParameter("budget fields must be positive".into()))
        }
    }
}

/// Largest step the integrator takes; keeps sign-change event detection from skipping a double crossing.
pub const MAX_STEP: f64 = 0.25;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ArcEnd {
    GuardHit { state: State, time: f64, guard: usize },
    TimeOut(State),
    DomainExit { state: State, time: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Arc {
    /// Time-stamped samples relative to the arc start; first sample is the initial state.
    pub samples: Vec<(f64, State)>,
    pub end: ArcEnd,
}

impl Arc {
    pub fn duration(&self) -> f64 {
        self.samples.last().map(|s| s.0).unwrap_or(0.0)
    }

    pub fn end_state(&self) -> &State {
        match &self.end {
            ArcEnd::GuardHit { state, .. } | ArcEnd::TimeOut(state) | ArcEnd::DomainExit { state, .. } => state,
        }
    }
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// One Dormand-Prince step; returns the 5th-order solution and the embedded error vector.
fn dp_step(m: &ModeSpec, y: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = y.len();
    let _ = C;
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    for s in 0..7 {
        for i in 0..n {
            let mut acc = y[i];
            for j in 0..s {
                acc += h * A[s][j] * k[j][i];
            }
            tmp[i] = acc;
        }
        m.field.eval_into(&tmp, &mut k[s]);
    }
    let mut y5 = vec![0.0; n];
    let mut err = vec![0.0; n];
    for i in 0..n {
        let mut a5 = 0.0;
        let mut a4 = 0.0;
        for s in 0..7 {
            a5 += B5[s] * k[s][i];
            a4 += B4[s] * k[s][i];
        }
        y5[i] = y[i] + h * a5;
        err[i] = h * (a5 - a4);
    }
    (y5, err)
}

fn lie1(m: &ModeSpec, g: usize, x: &[f64]) -> f64 {
    dot(&m.guards[g].psi.gradient(x), &m.field.eval(x))
}

/// Distance-like exit measure: positive when `x` is outside the mode's domain box or region.
fn exit_measure(m: &ModeSpec, x: &[f64]) -> f64 {
    let mut f = f64::NEG_INFINITY;
    for (v, (lo, hi)) in x.iter().zip(&m.domain) {
        f = f.max(lo - v).max(v - hi);
    }
    for g in &m.region {
        f = f.max(g.eval(x));
    }
    f
}

/// Bisection for the first time in `(0, h]` where `sign_fn` turns non-positive, evaluating states by
/// re-stepping from `y0`. `sign_fn(0)` is assumed positive. Returns `(t, state)`.
fn bisect<F: Fn(&[f64]) -> f64>(m: &ModeSpec, y0: &[f64], h: f64, f: F, accept_tol: f64) -> Result<(f64, Vec<f64>)> {
    let mut a = 0.0;
    let mut b = h;
    let mut yb = dp_step(m, y0, h).0;
    for _ in 0..128 {
        if b - a <= 4.0 * f64::EPSILON * b.max(1e-300) {
            break;
        }
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let ym = dp_step(m, y0, mid).0;
        if f(&ym) > 0.0 {
            a = mid;
        } else {
            b = mid;
            yb = ym;
        }
    }
    if f(&yb).abs() < accept_tol {
        Ok((b, yb))
    } else {
        Err(HybridError::StepUnderflow)
    }
}

/// Integrates the flow of `s0`'s mode for at most `t_max`, stopping at the first guard hit or domain exit.
pub fn integrate_arc(sys: &HybridSystemDef, s0: &State, t_max: f64, budget: &SimBudget) -> Result<Arc> {
    let m = sys.mode(s0.mode);
    let etol = budget.event_tol;
    let tol = 0.1 * budget.integrator_tol;
    let mut t = 0.0;
    let mut y = s0.x.clone();
    let mut samples = vec![(0.0, s0.clone())];
    if !(t_max > 0.0) {
        return Ok(Arc { samples, end: ArcEnd::TimeOut(s0.clone()) });
    }
    // Guards the start point sits on (but is not a member of) count as departed only once psi < 0 is seen.
    let mut h = (t_max).min(MAX_STEP).min(0.01);
    let mut steps = 0usize;
    loop {
        steps += 1;
        if steps > 50_000_000 {
            return Err(HybridError::NonFiniteState { t });
        }
        let h_try = h.min(t_max - t).min(MAX_STEP);
        let (y1, err) = dp_step(m, &y, h_try);
        if !y1.iter().all(|v| v.is_finite()) {
            if h_try < 1e-12 {
                return Err(HybridError::NonFiniteState { t });
            }
            h = h_try * 0.25;
            continue;
        }
        let en = (err
            .iter()
            .zip(y.iter().zip(&y1))
            .map(|(e, (a, b))| {
                let sc = tol + tol * a.abs().max(b.abs());
                (e / sc) * (e / sc)
            })
            .sum::<f64>()
            / y.len() as f64)
            .sqrt();
        if en > 1.0 && h_try > 1e-13 * (1.0 + t) {
            h = h_try * (0.9 * en.powf(-0.2)).max(0.2);
            continue;
        }

        // Guard events within [t, t + h_try].
        let mut best: Option<(f64, Vec<f64>, usize)> = None;
        for (gi, g) in m.guards.iter().enumerate() {
            if g.psi.is_zero() {
                continue;
            }
            let p0 = g.psi.eval(&y);
            let p1 = g.psi.eval(&y1);
            let departing = p0.abs() <= etol && lie1(m, gi, &y) > 0.0;
            let hit = if p0 > etol || departing {
                if p1 <= 0.0 {
                    let psi = &g.psi;
                    let r = bisect(m, &y, h_try, |x| psi.eval(x), etol)?;
                    Some(r)
                } else if p1 < etol && !departing && lie1(m, gi, &y1) <= 0.0 && p1 <= -lie1(m, gi, &y1) * h_try {
                    Some((h_try, y1.clone()))
                } else {
                    None
                }
            } else {
                None
            };
            if let Some((dt, yz)) = hit {
                let valid = g.ineqs_hold(&yz, etol) && lie1(m, gi, &yz) <= 1e-7;
                if valid && best.as_ref().is_none_or(|b| dt < b.0) {
                    best = Some((dt, yz, gi));
                }
            }
        }

        // Domain exit within the step.
        let exit = if exit_measure(m, &y1) > 1e-6 {
            let r = bisect(m, &y, h_try, |x| 1e-6 - exit_measure(m, x), 1e-5)?;
            Some(r)
        } else {
            None
        };

        match (best, exit) {
            (Some((dt, yz, gi)), ex) if ex.as_ref().is_none_or(|e| dt <= e.0) => {
                let st = State::new(s0.mode, yz);
                samples.push((t + dt, st.clone()));
                return Ok(Arc { samples, end: ArcEnd::GuardHit { state: st, time: t + dt, guard: gi } });
            }
            (_, Some((dt, yz))) => {
                let st = State::new(s0.mode, yz);
                samples.push((t + dt, st.clone()));
                return Ok(Arc { samples, end: ArcEnd::DomainExit { state: st, time: t + dt } });
            }
            _ => {}
        }

        t += h_try;
        y = y1;
        let done = t_max - t <= 1e-15 * t_max.max(1.0);
        if done {
            t = t_max;
        }
        samples.push((t, State::new(s0.mode, y.clone())));
        if done {
            return Ok(Arc { samples, end: ArcEnd::TimeOut(State::new(s0.mode, y)) });
        }
        let fac = if en <= 1e-300 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
        h = h_try * fac;
    }
}

/// Flows for exactly `t` without events; errors if a guard or the boundary interrupts.
pub fn flow_for(sys: &HybridSystemDef, s: &State, t: f64, budget: &SimBudget) -> Result<State> {
    match integrate_arc(sys, s, t, budget)?.end {
        ArcEnd::TimeOut(e) => Ok(e),
        ArcEnd::GuardHit { .. } => Err(HybridError::Blocked("guard reached before the requested time".into())),
        ArcEnd::DomainExit { state, .. } => Err(HybridError::Blocked(format!("domain exit at {:?}", state.x))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum FlowTime {
    Finite(f64),
    ExceedsHorizon,
}

impl FlowTime {
    pub fn value(&self) -> Option<f64> {
        match self {
            FlowTime::Finite(t) => Some(*t),
            FlowTime::ExceedsHorizon => None,
        }
    }
}

/// Maximal flow time: zero on the guard, otherwise the first guard hit (or boundary exit).
pub fn max_flow_time(sys: &HybridSystemDef, s: &State, horizon: f64, budget: &SimBudget) -> Result<FlowTime> {
    if !sys.in_state_space(s, budget.event_tol) {
        return Err(HybridError::BadParameter(format!("state {:?} not in the state space", s.x)));
    }
    if sys.in_guard(s, budget.event_tol) {
        return Ok(FlowTime::Finite(0.0));
    }
    let arc = integrate_arc(sys, s, horizon, budget)?;
    Ok(match arc.end {
        ArcEnd::GuardHit { time, .. } | ArcEnd::DomainExit { time, .. } => FlowTime::Finite(time),
        ArcEnd::TimeOut(_) => FlowTime::ExceedsHorizon,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Jump {
    pub time: f64,
    pub pre: State,
    pub post: State,
    pub guard: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "class")]
pub enum ExecutionClass {
    Infinite { horizon_reached: f64 },
    Zeno { stop_time_estimate: f64 },
    Blocked { final_state: State },
    BudgetTruncated,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExecutionTrace {
    pub jumps: Vec<Jump>,
    /// `arcs[j]` follows jump `j` (arc 0 starts at the initial state); samples carry absolute times.
    pub arcs: Vec<Vec<(f64, State)>>,
    pub n_jumps: usize,
    pub class: ExecutionClass,
}

impl ExecutionTrace {
    pub fn final_state(&self) -> &State {
        &self.arcs.last().and_then(|a| a.last()).expect("trace has a state").1
    }

    pub fn jump_times(&self) -> Vec<f64> {
        self.jumps.iter().map(|j| j.time).collect()
    }
}

/// Geometric-decay test on the last `window` inter-jump gaps; returns the extrapolated stop time.
pub fn zeno_stop_estimate(jump_times: &[f64], window: usize) -> Option<f64> {
    let n = jump_times.len();
    if n < 2 {
        return None;
    }
    let t_n = jump_times[n - 1];
    let gaps: Vec<f64> = jump_times.windows(2).map(|w| w[1] - w[0]).collect();
    let last = *gaps.last().unwrap();
    if last <= 1e-12 * t_n.abs().max(1.0) {
        return Some(t_n);
    }
    let w = window.min(gaps.len());
    if w < 2 {
        return None;
    }
    let tail = &gaps[gaps.len() - w..];
    if tail.iter().any(|g| *g <= 0.0) {
        return None;
    }
    // Least-squares slope of log(gap) against index.
    let ks: Vec<f64> = (0..w).map(|k| k as f64).collect();
    let ls: Vec<f64> = tail.iter().map(|g| g.ln()).collect();
    let km = ks.iter().sum::<f64>() / w as f64;
    let lm = ls.iter().sum::<f64>() / w as f64;
    let num: f64 = ks.iter().zip(&ls).map(|(k, l)| (k - km) * (l - lm)).sum();
    let den: f64 = ks.iter().map(|k| (k - km) * (k - km)).sum();
    let slope = num / den;
    let resid = ks.iter().zip(&ls).map(|(k, l)| (l - (lm + slope * (k - km))).abs()).fold(0.0, f64::max);
    let rho = slope.exp();
    if rho < 0.999 && resid < 0.5 {
        Some(t_n + last * rho / (1.0 - rho))
    } else {
        None
    }
}

/// Runs the execution from `s0`, alternating flow arcs and resets.
pub fn simulate_execution(sys: &HybridSystemDef, s0: &State, budget: &SimBudget) -> Result<ExecutionTrace> {
    budget.validate()?;
    if !sys.in_state_space(s0, budget.event_tol) {
        return Err(HybridError::BadParameter(format!("initial state {:?} not in the state space", s0.x)));
    }
    let mut t = 0.0;
    let mut state = s0.clone();
    let mut jumps: Vec<Jump> = Vec::new();
    let mut arcs: Vec<Vec<(f64, State)>> = vec![vec![(0.0, s0.clone())]];
    let mut pending_guard: Option<usize> = None;
    let class = loop {
        let guard = pending_guard.take().or_else(|| sys.guard_at(&state, budget.event_tol));
        if let Some(gi) = guard {
            if jumps.len() >= budget.max_jumps {
                break match zeno_stop_estimate(&jumps.iter().map(|j| j.time).collect::<Vec<_>>(), budget.zeno_ratio_window) {
                    Some(stop) => ExecutionClass::Zeno { stop_time_estimate: stop },
                    None => ExecutionClass::BudgetTruncated,
                };
            }
            let post = sys.apply_reset_with(&state, gi, budget.event_tol)?;
            jumps.push(Jump { time: t, pre: state.clone(), post: post.clone(), guard: gi });
            arcs.push(vec![(t, post.clone())]);
            state = post;
            continue;
        }
        if t >= budget.max_time {
            break ExecutionClass::Infinite { horizon_reached: t };
        }
        let arc = integrate_arc(sys, &state, budget.max_time - t, budget)?;
        let cur = arcs.last_mut().expect("arc");
        cur.extend(arc.samples.iter().skip(1).map(|(dt, s)| (t + dt, s.clone())));
        match arc.end {
            ArcEnd::TimeOut(_) => {
                break ExecutionClass::Infinite { horizon_reached: budget.max_time };
            }
            ArcEnd::GuardHit { state: z, time, guard } => {
                t += time;
                state = z;
                pending_guard = Some(guard);
            }
            ArcEnd::DomainExit { state: z, .. } => {
                break ExecutionClass::Blocked { final_state: z };
            }
        }
    };
    Ok(ExecutionTrace { n_jumps: jumps.len(), jumps, arcs, class })
}
