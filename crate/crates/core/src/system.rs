//! Hybrid system definitions: modes, guards, resets and the extended metric.

use serde::{Deserialize, Serialize};

use crate::error::{HybridError, Result};
use crate::poly::{Poly, PolyMap, Term};

pub type ModeId = usize;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub mode: ModeId,
    pub x: Vec<f64>,
}

impl State {
    pub fn new(mode: ModeId, x: Vec<f64>) -> Self {
        State { mode, x }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite())
    }
}

/// Distance in the disjoint-union metric: Euclidean inside a mode, infinite across modes.
pub fn distance(a: &State, b: &State) -> f64 {
    if a.mode != b.mode || a.x.len() != b.x.len() {
        return f64::INFINITY;
    }
    euclid(&a.x, &b.x)
}

pub fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub enum ResetMap {
    Poly(PolyMap),
    /// `x -> frac(x + alpha)` on the unit interval read as a circle.
    Rotation { alpha: f64 },
}

impl ResetMap {
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ResetMap::Poly(m) => m.eval(x),
            ResetMap::Rotation { alpha } => x.iter().map(|v| (v + alpha).rem_euclid(1.0)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GuardComponent {
    pub psi: Poly,
    /// Active part of the surface: every `g(x) <= 0`.
    pub ineqs: Vec<Poly>,
    pub target: ModeId,
    pub reset: ResetMap,
}

impl GuardComponent {
    pub fn ineqs_hold(&self, x: &[f64], tol: f64) -> bool {
        self.ineqs.iter().all(|g| g.eval(x) <= tol)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.psi.eval(x).abs() < tol && self.ineqs_hold(x, tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModeSpec {
    pub id: ModeId,
    pub dim: usize,
    pub field: PolyMap,
    pub domain: Vec<(f64, f64)>,
    /// Extra constraints `g(x) <= 0` cutting the mode out of its domain box.
    pub region: Vec<Poly>,
    pub guards: Vec<GuardComponent>,
}

impl ModeSpec {
    pub fn in_box(&self, x: &[f64], tol: f64) -> bool {
        x.iter().zip(&self.domain).all(|(v, (lo, hi))| *v >= lo - tol && *v <= hi + tol)
    }

    pub fn in_region(&self, x: &[f64], tol: f64) -> bool {
        self.region.iter().all(|g| g.eval(x) <= tol)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.in_box(x, tol) && self.in_region(x, tol)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridSystemDef {
    pub modes: Vec<ModeSpec>,
}

/// Tolerance used for guard membership of a point.
pub const DEFAULT_EVENT_TOL: f64 = 1e-9;

impl HybridSystemDef {
    pub fn mode(&self, id: ModeId) -> &ModeSpec {
        &self.modes[id]
    }

    pub fn field(&self, s: &State) -> Vec<f64> {
        self.modes[s.mode].field.eval(&s.x)
    }

    /// Index of the first guard component containing `s`, if any.
    pub fn guard_at(&self, s: &State, tol: f64) -> Option<usize> {
        self.modes[s.mode].guards.iter().position(|g| g.contains(&s.x, tol))
    }

    pub fn in_guard(&self, s: &State, tol: f64) -> bool {
        self.guard_at(s, tol).is_some()
    }

    /// Flow set membership: `F = I \ Z`.
    pub fn in_flow_set(&self, s: &State, tol: f64) -> bool {
        self.in_state_space(s, tol) && !self.in_guard(s, tol)
    }

    pub fn in_state_space(&self, s: &State, tol: f64) -> bool {
        s.mode < self.modes.len()
            && s.x.len() == self.modes[s.mode].dim
            && self.modes[s.mode].contains(&s.x, tol)
    }

    pub fn has_guards(&self) -> bool {
        self.modes.iter().any(|m| !m.guards.is_empty())
    }

    /// Applies the reset of guard component `guard` without checking membership.
    pub fn reset_raw(&self, s: &State, guard: usize) -> State {
        let g = &self.modes[s.mode].guards[guard];
        State::new(g.target, g.reset.apply(&s.x))
    }

    /// Applies the reset at `s`, clamping images that sit within `tol` of the target box.
    pub fn apply_reset(&self, s: &State, tol: f64) -> Result<State> {
        let gi = self.guard_at(s, tol).ok_or(HybridError::NotOnGuard)?;
        self.apply_reset_with(s, gi, tol)
    }

    pub fn apply_reset_with(&self, s: &State, guard: usize, tol: f64) -> Result<State> {
        let mut out = self.reset_raw(s, guard);
        let target = &self.modes[out.mode];
        if out.x.len() != target.dim {
            return Err(HybridError::InvalidSystem(format!(
                "reset of guard {guard} in mode {} has dimension {}",
                s.mode,
                out.x.len()
            )));
        }
        for (v, (lo, hi)) in out.x.iter_mut().zip(&target.domain) {
            if *v < *lo {
                if *v < lo - tol {
                    return Err(HybridError::ResetOutOfDomain { mode: target.id, image: out.x.clone() });
                }
                *v = *lo;
            } else if *v > *hi {
                if *v > hi + tol {
                    return Err(HybridError::ResetOutOfDomain { mode: target.id, image: out.x.clone() });
                }
                *v = *hi;
            }
        }
        Ok(out)
    }
}

/// Structural and sampled diagnostics for a system definition.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Diagnostic {
    ModeIdMismatch { index: usize, id: ModeId },
    EmptyDomain { mode: ModeId },
    BadArity { mode: ModeId, what: String },
    UnknownTarget { mode: ModeId, guard: usize, target: ModeId },
    ResetOutOfDomain { mode: ModeId, guard: usize, point: Vec<f64>, image: Vec<f64> },
    InwardGuard { mode: ModeId, guard: usize, point: Vec<f64>, lie: f64 },
    DegenerateGuardPoint { mode: ModeId, guard: usize, point: Vec<f64> },
}

/// Checks structural invariants and samples guard points for inward crossings and bad resets.
pub fn validate_system(sys: &HybridSystemDef) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n = sys.modes.len();
    for (i, m) in sys.modes.iter().enumerate() {
        if m.id != i {
            out.push(Diagnostic::ModeIdMismatch { index: i, id: m.id });
        }
        if m.dim == 0 || m.domain.len() != m.dim || m.domain.iter().any(|(lo, hi)| !(lo <= hi)) {
            out.push(Diagnostic::EmptyDomain { mode: m.id });
        }
        let arity_ok = |p: &Poly| p.nvars == m.dim && p.well_formed();
        if m.field.comps.len() != m.dim || !m.field.comps.iter().all(arity_ok) {
            out.push(Diagnostic::BadArity { mode: m.id, what: "vector field".into() });
        }
        if !m.region.iter().all(arity_ok) {
            out.push(Diagnostic::BadArity { mode: m.id, what: "region".into() });
        }
        for (gi, g) in m.guards.iter().enumerate() {
            if !arity_ok(&g.psi) || !g.ineqs.iter().all(arity_ok) {
                out.push(Diagnostic::BadArity { mode: m.id, what: format!("guard {gi}") });
            }
            if g.target >= n {
                out.push(Diagnostic::UnknownTarget { mode: m.id, guard: gi, target: g.target });
                continue;
            }
            if let ResetMap::Poly(r) = &g.reset {
                if r.nvars != m.dim || r.out_dim() != sys.modes[g.target].dim {
                    out.push(Diagnostic::BadArity { mode: m.id, what: format!("reset {gi}") });
                    continue;
                }
            }
        }
    }
    if !out.is_empty() {
        return out;
    }
    for m in &sys.modes {
        for (gi, g) in m.guards.iter().enumerate() {
            let pts = crate::sampling::guard_points(sys, m.id, gi, 24);
            let mut all_zero = Vec::new();
            for p in &pts {
                let s = State::new(m.id, p.clone());
                let img = sys.reset_raw(&s, gi);
                let target = &sys.modes[g.target];
                if !target.contains(&img.x, 1e-6) {
                    out.push(Diagnostic::ResetOutOfDomain {
                        mode: m.id,
                        guard: gi,
                        point: p.clone(),
                        image: img.x.clone(),
                    });
                }
                let lie = dot(&g.psi.gradient(p), &m.field.eval(p));
                if lie > 1e-9 {
                    out.push(Diagnostic::InwardGuard { mode: m.id, guard: gi, point: p.clone(), lie });
                }
                let grad_zero = g.psi.gradient(p).iter().all(|v| v.abs() < 1e-12);
                if !grad_zero && lie.abs() <= 1e-9 && crate::guard::lie_values(m, gi, p, 8).iter().all(|v| v.abs() <= 1e-9) {
                    all_zero.push(p.clone());
                }
            }
            for p in all_zero {
                out.push(Diagnostic::DegenerateGuardPoint { mode: m.id, guard: gi, point: p });
            }
        }
    }
    out
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---- file format ----

#[derive(Serialize, Deserialize)]
struct ModeFile {
    id: usize,
    dim: usize,
    domain: Vec<[f64; 2]>,
    field: Vec<Term>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    region: Vec<Vec<Term>>,
    #[serde(default)]
    guards: Vec<GuardFile>,
}

#[derive(Serialize, Deserialize)]
struct GuardFile {
    psi: Vec<Term>,
    #[serde(default)]
    ineqs: Vec<Vec<Term>>,
    target: usize,
    reset: ResetFile,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ResetFile {
    Poly(Vec<Term>),
    Rotation { rotation: f64 },
}

#[derive(Serialize, Deserialize)]
struct SystemFile {
    modes: Vec<ModeFile>,
}

impl HybridSystemDef {
    pub fn to_json(&self) -> serde_json::Value {
        let modes = self
            .modes
            .iter()
            .map(|m| ModeFile {
                id: m.id,
                dim: m.dim,
                domain: m.domain.iter().map(|(a, b)| [*a, *b]).collect(),
                field: m.field.to_terms(),
                region: m.region.iter().map(Poly::to_terms).collect(),
                guards: m
                    .guards
                    .iter()
                    .map(|g| GuardFile {
                        psi: g.psi.to_terms(),
                        ineqs: g.ineqs.iter().map(Poly::to_terms).collect(),
                        target: g.target,
                        reset: match &g.reset {
                            ResetMap::Poly(r) => ResetFile::Poly(r.to_terms()),
                            ResetMap::Rotation { alpha } => ResetFile::Rotation { rotation: *alpha },
                        },
                    })
                    .collect(),
            })
            .collect();
        serde_json::to_value(SystemFile { modes }).expect("system serializes")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: SystemFile =
            serde_json::from_str(s).map_err(|e| HybridError::InvalidSystem(format!("malformed system JSON: {e}")))?;
        let dims: Vec<usize> = file.modes.iter().map(|m| m.dim).collect();
        let bad = |e: String| HybridError::InvalidSystem(e);
        let mut modes = Vec::new();
        for m in file.modes {
            let d = m.dim;
            let mut guards = Vec::new();
            for g in m.guards {
                let target_dim = *dims.get(g.target).ok_or_else(|| bad(format!("unknown target mode {}", g.target)))?;
                guards.push(GuardComponent {
                    psi: Poly::from_terms(d, &g.psi).map_err(bad)?,
                    ineqs: g.ineqs.iter().map(|t| Poly::from_terms(d, t)).collect::<std::result::Result<_, _>>().map_err(bad)?,
                    target: g.target,
                    reset: match g.reset {
                        ResetFile::Poly(t) => ResetMap::Poly(PolyMap::from_terms(d, target_dim, &t).map_err(bad)?),
                        ResetFile::Rotation { rotation } => ResetMap::Rotation { alpha: rotation },
                    },
                });
            }
            modes.push(ModeSpec {
                id: m.id,
                dim: d,
                field: PolyMap::from_terms(d, d, &m.field).map_err(bad)?,
                domain: m.domain.iter().map(|[a, b]| (*a, *b)).collect(),
                region: m.region.iter().map(|t| Poly::from_terms(d, t)).collect::<std::result::Result<_, _>>().map_err(bad)?,
                guards,
            });
        }
        Ok(HybridSystemDef { modes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{instantiate, BuiltinId};

    #[test]
    fn ball_reset_matches_restitution() {
        let sys = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
        let r = sys.apply_reset(&State::new(0, vec![0.0, -2.0]), 1e-9).unwrap();
        assert_eq!(r.mode, 0);
        assert!((r.x[0]).abs() < 1e-15 && (r.x[1] - 1.6).abs() < 1e-12);
        assert_eq!(sys.apply_reset(&State::new(0, vec![0.5, -2.0]), 1e-9), Err(HybridError::NotOnGuard));
    }

    #[test]
    fn counterexample_resets() {
        let sys = instantiate(&BuiltinId::Counterexample).unwrap();
        let one = sys.apply_reset(&State::new(0, vec![0.0]), 1e-9).unwrap();
        assert_eq!(one, State::new(1, vec![1.0]));
        let back = sys.apply_reset(&State::new(1, vec![3.0]), 1e-9).unwrap();
        assert_eq!(back, State::new(0, vec![-1.0]));
        let back2 = sys.apply_reset(&State::new(1, vec![2.0]), 1e-9).unwrap();
        assert_eq!(back2, State::new(0, vec![-1.0]));
    }

    #[test]
    fn flow_set_and_guard_are_disjoint() {
        let sys = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
        for s in [State::new(0, vec![0.0, -1.0]), State::new(0, vec![0.0, 1.0]), State::new(0, vec![1.0, 0.0])] {
            assert_ne!(sys.in_guard(&s, 1e-9), sys.in_flow_set(&s, 1e-9));
        }
    }

    #[test]
    fn extended_metric_is_infinite_across_modes() {
        assert_eq!(distance(&State::new(0, vec![0.0]), &State::new(1, vec![0.0])), f64::INFINITY);
        assert_eq!(distance(&State::new(0, vec![0.0, 3.0]), &State::new(0, vec![4.0, 0.0])), 5.0);
    }

    #[test]
    fn validation_of_builtins() {
        let ball = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
        assert!(validate_system(&ball).is_empty(), "{:?}", validate_system(&ball));

        let mut broken = ball.clone();
        broken.modes[0].guards[0].reset = ResetMap::Poly(PolyMap::new(vec![
            Poly::constant(2, -1.0),
            Poly::var(2, 1),
        ]));
        assert!(validate_system(&broken).iter().any(|d| matches!(d, Diagnostic::ResetOutOfDomain { .. })));

        let spring = instantiate(&BuiltinId::spring(0.8)).unwrap();
        let diags = validate_system(&spring);
        assert!(diags.iter().any(|d| matches!(d, Diagnostic::DegenerateGuardPoint { point, .. } if point.iter().all(|v| v.abs() < 1e-9))));
    }

    #[test]
    fn json_round_trip() {
        for id in [BuiltinId::ball(1.0, 0.8), BuiltinId::Counterexample, BuiltinId::Rotation { alpha: 0.377 }] {
            let sys = instantiate(&id).unwrap();
            let text = sys.to_json().to_string();
            let back = HybridSystemDef::from_json_str(&text).unwrap();
            assert_eq!(back, sys);
        }
    }
}
