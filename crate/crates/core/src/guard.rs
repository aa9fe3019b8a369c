//! Trapping-guard surrogates: exact Lie towers, the first-nonzero-order criterion, sampled
//! continuity of the maximal flow time, and exit-boundary sign checks.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{HybridError, Result};
use crate::integrate::{max_flow_time, FlowTime, SimBudget};
use crate::poly::{Poly, PolyMap};
use crate::sampling;
use crate::system::{dot, HybridSystemDef, ModeSpec, State};

/// Polynomial with exact rational coefficients, keyed by exponent vector.
#[derive(Clone, Debug, PartialEq)]
pub struct RatPoly {
    pub nvars: usize,
    pub terms: BTreeMap<Vec<u32>, BigRational>,
}

impl RatPoly {
    pub fn zero(nvars: usize) -> Self {
        RatPoly { nvars, terms: BTreeMap::new() }
    }

    /// Exact conversion: every finite `f64` is a dyadic rational.
    pub fn from_poly(p: &Poly) -> Self {
        let mut out = RatPoly::zero(p.nvars);
        for (c, e) in &p.terms {
            let q = BigRational::from_float(*c).expect("finite coefficient");
            out.add_term(e.clone(), q);
        }
        out
    }

    fn add_term(&mut self, e: Vec<u32>, c: BigRational) {
        if c.is_zero() {
            return;
        }
        let slot = self.terms.entry(e.clone()).or_insert_with(BigRational::zero);
        *slot += c;
        if slot.is_zero() {
            self.terms.remove(&e);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum()).max().unwrap_or(0)
    }

    pub fn add(&self, other: &RatPoly) -> RatPoly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }

    pub fn scale(&self, k: &BigRational) -> RatPoly {
        let mut out = RatPoly::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), c * k);
        }
        out
    }

    pub fn mul(&self, other: &RatPoly) -> RatPoly {
        let mut out = RatPoly::zero(self.nvars);
        for (ea, a) in &self.terms {
            for (eb, b) in &other.terms {
                let e = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                out.add_term(e, a * b);
            }
        }
        out
    }

    pub fn derivative(&self, i: usize) -> RatPoly {
        let mut out = RatPoly::zero(self.nvars);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut e2 = e.clone();
                e2[i] -= 1;
                out.add_term(e2, c * BigRational::from_integer(BigInt::from(e[i])));
            }
        }
        out
    }

    pub fn lie(&self, field: &[RatPoly]) -> RatPoly {
        let mut acc = RatPoly::zero(self.nvars);
        for (i, fi) in field.iter().enumerate() {
            let d = self.derivative(i);
            if !d.is_zero() {
                acc = acc.add(&d.mul(fi));
            }
        }
        acc
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.to_poly().eval(x)
    }

    pub fn to_poly(&self) -> Poly {
        Poly {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(e, c)| (c.to_f64().unwrap_or(f64::NAN), e.clone())).collect(),
        }
    }

    pub fn coeff(&self, exps: &[u32]) -> BigRational {
        self.terms.get(exps).cloned().unwrap_or_else(BigRational::zero)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LieTower {
    /// `derivatives[k]` is `L_X^{k+1} psi`.
    pub derivatives: Vec<RatPoly>,
}

impl LieTower {
    pub fn eval(&self, order: usize, x: &[f64]) -> f64 {
        self.derivatives[order - 1].eval(x)
    }
}

pub const DEFAULT_DEGREE_CAP: u32 = 64;

/// Exact iterated Lie derivatives `L_X^1 psi, ..., L_X^{m_max} psi`.
pub fn lie_tower(field: &PolyMap, psi: &Poly, m_max: usize, degree_cap: u32) -> Result<LieTower> {
    if m_max == 0 {
        return Err(HybridError::BadParameter("m_max must be at least 1".into()));
    }
    let x: Vec<RatPoly> = field.comps.iter().map(RatPoly::from_poly).collect();
    let mut cur = RatPoly::from_poly(psi);
    let mut derivatives = Vec::with_capacity(m_max);
    for _ in 0..m_max {
        cur = cur.lie(&x);
        let deg = cur.degree();
        if deg > degree_cap {
            return Err(HybridError::DegreeOverflow { degree: deg, cap: degree_cap });
        }
        derivatives.push(cur.clone());
    }
    Ok(LieTower { derivatives })
}

/// Floating-point Lie derivative values at `x`, orders 1..=m_max.
pub fn lie_values(m: &ModeSpec, guard: usize, x: &[f64], m_max: usize) -> Vec<f64> {
    let mut cur = m.guards[guard].psi.clone();
    let mut out = Vec::with_capacity(m_max);
    for _ in 0..m_max {
        cur = cur.lie(&m.field);
        out.push(cur.eval(x));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "outcome")]
pub enum LieOutcome {
    /// `L^1 psi != 0`: a transversal impact, the criterion does not apply.
    Transversal { l1: f64 },
    Pass { m: usize, value: f64 },
    Fail { m: usize, value: f64 },
    /// Every order up to `m_max` vanishes.
    Inconclusive { m_max: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LiePointResult {
    pub mode: usize,
    pub guard: usize,
    pub point: Vec<f64>,
    pub outcome: LieOutcome,
}

/// Applies the first-nonzero-order criterion at each guard sample.
pub fn check_lie_criterion(
    sys: &HybridSystemDef,
    mode: usize,
    guard: usize,
    m_max: usize,
    samples: &[Vec<f64>],
    event_tol: f64,
) -> Result<Vec<LiePointResult>> {
    let m = sys.mode(mode);
    let tower = lie_tower(&m.field, &m.guards[guard].psi, m_max.max(1), DEFAULT_DEGREE_CAP)?;
    let polys: Vec<Poly> = tower.derivatives.iter().map(RatPoly::to_poly).collect();
    let mut out = Vec::with_capacity(samples.len());
    for x in samples {
        let l1 = polys[0].eval(x);
        let outcome = if l1.abs() > event_tol {
            LieOutcome::Transversal { l1 }
        } else {
            match polys.iter().enumerate().skip(1).find(|(_, p)| p.eval(x).abs() > event_tol) {
                Some((k, p)) => {
                    let v = p.eval(x);
                    if v < 0.0 {
                        LieOutcome::Pass { m: k + 1, value: v }
                    } else {
                        LieOutcome::Fail { m: k + 1, value: v }
                    }
                }
                None => LieOutcome::Inconclusive { m_max },
            }
        };
        out.push(LiePointResult { mode, guard, point: x.clone(), outcome });
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MuViolation {
    pub p: State,
    pub q: State,
    pub mu_p: f64,
    pub mu_q: f64,
}

fn mu_value(sys: &HybridSystemDef, s: &State, budget: &SimBudget) -> Result<f64> {
    Ok(match max_flow_time(sys, s, budget.max_time, budget)? {
        FlowTime::Finite(t) => t,
        FlowTime::ExceedsHorizon => f64::INFINITY,
    })
}

/// Samples point pairs near the guard at mutual distance below `delta`; reports jumps in `mu` above `gap`.
pub fn check_mu_continuity(
    sys: &HybridSystemDef,
    radius: f64,
    n_pairs: usize,
    delta: f64,
    gap: f64,
    seed: u64,
) -> Result<Vec<MuViolation>> {
    if !(delta > 0.0 && gap > 0.0 && radius > 0.0) {
        return Err(HybridError::BadParameter("radius, delta and gap must be positive".into()));
    }
    let guard_pts = sampling::all_guard_points(sys, 24);
    if guard_pts.is_empty() {
        return Ok(Vec::new());
    }
    let budget = SimBudget { max_time: 50.0, ..SimBudget::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for _ in 0..n_pairs {
        let p = if rng.gen_bool(0.1) {
            let (mode, z) = &guard_pts[rng.gen_range(0..guard_pts.len())];
            State::new(*mode, z.clone())
        } else {
            match sampling::sample_near_guard(sys, &guard_pts, (delta * 0.1).min(radius), radius, &mut rng) {
                Some(p) => p,
                None => continue,
            }
        };
        let Some(q) = perturb(sys, &p, delta, &mut rng) else { continue };
        let (mp, mq) = (mu_value(sys, &p, &budget)?, mu_value(sys, &q, &budget)?);
        if (mp - mq).abs() > gap {
            out.push(MuViolation { p, q, mu_p: mp, mu_q: mq });
        }
    }
    Ok(out)
}

/// A point of the same mode within distance `delta` of `p`, inside the state space.
pub fn perturb<R: Rng>(sys: &HybridSystemDef, p: &State, delta: f64, rng: &mut R) -> Option<State> {
    let m = sys.mode(p.mode);
    for _ in 0..200 {
        let dir = sampling::random_unit(m.dim, rng);
        let r = delta * rng.gen_range(0.05..0.999);
        let x: Vec<f64> = p.x.iter().zip(&dir).map(|(a, b)| a + r * b).collect();
        if m.contains(&x, 0.0) {
            return Some(State::new(p.mode, x));
        }
    }
    None
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitViolation {
    pub mode: usize,
    /// `"guard"`, `"face"` or `"region"`.
    pub kind: String,
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExitReport {
    pub guard_checked: usize,
    pub boundary_checked: usize,
    pub violations: Vec<ExitViolation>,
}

/// Sign checks: `d psi . X <= 0` on guard samples, and the field non-strictly inward on the rest of the boundary.
pub fn check_exit_boundary(sys: &HybridSystemDef, samples_per_face: usize) -> ExitReport {
    let tol = 1e-9;
    let mut rep = ExitReport { guard_checked: 0, boundary_checked: 0, violations: Vec::new() };
    for m in &sys.modes {
        for (gi, g) in m.guards.iter().enumerate() {
            for p in sampling::guard_points(sys, m.id, gi, samples_per_face) {
                let v = dot(&g.psi.gradient(&p), &m.field.eval(&p));
                rep.guard_checked += 1;
                if v > tol {
                    rep.violations.push(ExitViolation { mode: m.id, kind: "guard".into(), point: p, value: v });
                }
            }
        }
        let on_guard = |x: &[f64]| sys.in_guard(&State::new(m.id, x.to_vec()), tol);
        let grid = sampling::box_grid_points(m, samples_per_face);
        for axis in 0..m.dim {
            let (lo, hi) = m.domain[axis];
            for (side, val, sign) in [(0, lo, -1.0), (1, hi, 1.0)] {
                if side == 1 && hi == lo {
                    continue;
                }
                let mut seen: Vec<Vec<f64>> = Vec::new();
                for p in &grid {
                    let mut x = p.clone();
                    x[axis] = val;
                    if seen.iter().any(|q| q == &x) || !m.in_region(&x, tol) || on_guard(&x) {
                        continue;
                    }
                    seen.push(x.clone());
                    rep.boundary_checked += 1;
                    let v = sign * m.field.eval(&x)[axis];
                    if v > tol && lo != hi {
                        rep.violations.push(ExitViolation { mode: m.id, kind: "face".into(), point: x, value: v });
                    }
                }
            }
        }
        for g in &m.region {
            for p in &grid {
                let Some(x) = sampling::project_to_surface(m, g, p) else { continue };
                if !m.contains(&x, tol) || on_guard(&x) {
                    continue;
                }
                rep.boundary_checked += 1;
                let v = dot(&g.gradient(&x), &m.field.eval(&x));
                let scale = 1.0 + g.gradient(&x).iter().map(|a| a.abs()).sum::<f64>();
                if v > tol * scale {
                    rep.violations.push(ExitViolation { mode: m.id, kind: "region".into(), point: x, value: v });
                }
            }
        }
    }
    rep
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "verdict")]
pub enum GuardVerdict {
    LikelyTrapping,
    ViolationFound { witness: String },
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuardVerifyOptions {
    pub m_max: usize,
    pub guard_samples: usize,
    pub radius: f64,
    pub n_pairs: usize,
    pub delta: f64,
    pub gap: f64,
    pub seed: u64,
    pub event_tol: f64,
}

impl Default for GuardVerifyOptions {
    fn default() -> Self {
        GuardVerifyOptions {
            m_max: 8,
            guard_samples: 24,
            radius: 0.2,
            n_pairs: 2000,
            delta: 1e-3,
            gap: 1.0,
            seed: 0,
            event_tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GuardReport {
    pub criterion_results: Vec<LiePointResult>,
    pub mu_continuity_violations: Vec<MuViolation>,
    pub exit_boundary: ExitReport,
    pub verdict: GuardVerdict,
}

/// Runs every surrogate check and combines them into a verdict.
pub fn verify_guard(sys: &HybridSystemDef, opts: &GuardVerifyOptions) -> Result<GuardReport> {
    let mut criterion_results = Vec::new();
    for m in &sys.modes {
        for gi in 0..m.guards.len() {
            let pts: Vec<Vec<f64>> = sampling::guard_points(sys, m.id, gi, opts.guard_samples)
                .into_iter()
                .filter(|p| lie_values(m, gi, p, 1)[0] <= opts.event_tol)
                .collect();
            criterion_results.extend(check_lie_criterion(sys, m.id, gi, opts.m_max, &pts, opts.event_tol)?);
        }
    }
    let mu = check_mu_continuity(sys, opts.radius, opts.n_pairs, opts.delta, opts.gap, opts.seed)?;
    let exit = check_exit_boundary(sys, opts.guard_samples);

    let fail = criterion_results.iter().find(|r| matches!(r.outcome, LieOutcome::Fail { .. }));
    let verdict = if let Some(v) = mu.first() {
        GuardVerdict::ViolationFound {
            witness: format!(
                "mu jumps from {:.6} at {:?} to {:.6} at {:?}",
                v.mu_p, v.p.x, v.mu_q, v.q.x
            ),
        }
    } else if let Some(f) = fail {
        GuardVerdict::ViolationFound { witness: format!("positive first nonzero Lie derivative at {:?}", f.point) }
    } else if let Some(e) = exit.violations.first() {
        GuardVerdict::ViolationFound { witness: format!("{} sign violation {:e} at {:?}", e.kind, e.value, e.point) }
    } else if criterion_results.iter().any(|r| matches!(r.outcome, LieOutcome::Inconclusive { .. })) {
        GuardVerdict::Inconclusive
    } else {
        GuardVerdict::LikelyTrapping
    };
    Ok(GuardReport { criterion_results, mu_continuity_violations: mu, exit_boundary: exit, verdict })
}
