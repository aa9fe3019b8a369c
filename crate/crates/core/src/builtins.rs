//! Built-in example systems with closed-form oracles and Lyapunov candidates.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use crate::error::{HybridError, Result};
use crate::integrate::{integrate_arc, ArcEnd, SimBudget};
use crate::poly::{Poly, PolyMap};
use crate::sampling;
use crate::system::{GuardComponent, HybridSystemDef, ModeSpec, ResetMap, State};

pub const DEFAULT_E0: f64 = 5.0;
pub const DEFAULT_ALPHA: f64 = 0.377;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "id", rename_all = "snake_case")]
pub enum BuiltinId {
    BouncingBall { g: f64, d: f64, e0: f64 },
    SpringBall { d: f64, e0: f64 },
    Counterexample,
    OmegaPathology,
    Rotation { alpha: f64 },
    GradientFlow,
}

impl BuiltinId {
    pub fn ball(g: f64, d: f64) -> Self {
        BuiltinId::BouncingBall { g, d, e0: DEFAULT_E0 }
    }

    pub fn spring(d: f64) -> Self {
        BuiltinId::SpringBall { d, e0: DEFAULT_E0 }
    }

    /// Parses a registry name; `g`, `d`, `e0`, `alpha` fill in the parameters that apply.
    pub fn from_name(name: &str, g: Option<f64>, d: Option<f64>, e0: Option<f64>, alpha: Option<f64>) -> Result<Self> {
        let e0 = e0.unwrap_or(DEFAULT_E0);
        Ok(match name.to_ascii_lowercase().as_str() {
            "ball" | "bouncingball" | "bouncing-ball" => {
                BuiltinId::BouncingBall { g: g.unwrap_or(1.0), d: d.unwrap_or(0.8), e0 }
            }
            "spring" | "springball" | "spring-ball" => BuiltinId::SpringBall { d: d.unwrap_or(0.8), e0 },
            "counterexample" => BuiltinId::Counterexample,
            "pathology" | "omega" | "omegapathology" | "omega-pathology" => BuiltinId::OmegaPathology,
            "rotation" | "circlerotation" | "circle-rotation" => {
                BuiltinId::Rotation { alpha: alpha.unwrap_or(DEFAULT_ALPHA) }
            }
            "gradientflow" | "gradient" | "gradient-flow" => BuiltinId::GradientFlow,
            other => return Err(HybridError::BadParameter(format!("unknown builtin '{other}'"))),
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            BuiltinId::BouncingBall { .. } => "ball",
            BuiltinId::SpringBall { .. } => "spring",
            BuiltinId::Counterexample => "counterexample",
            BuiltinId::OmegaPathology => "pathology",
            BuiltinId::Rotation { .. } => "rotation",
            BuiltinId::GradientFlow => "gradientflow",
        }
    }
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(HybridError::BadParameter(msg.to_string()))
    }
}

fn p1(c: f64, e: u32) -> Poly {
    Poly::monomial(1, c, &[e])
}

fn const_reset(v: f64) -> ResetMap {
    ResetMap::Poly(PolyMap::new(vec![Poly::constant(1, v)]))
}

/// Half-plane impact guard `x = 0, y <= 0` with reset `(0, y) -> (0, -d y)`.
fn impact_guard(d: f64) -> GuardComponent {
    GuardComponent {
        psi: Poly::var(2, 0),
        ineqs: vec![Poly::var(2, 1)],
        target: 0,
        reset: ResetMap::Poly(PolyMap::new(vec![Poly::zero(2), Poly::var(2, 1).scale(-d)])),
    }
}

pub fn instantiate(id: &BuiltinId) -> Result<HybridSystemDef> {
    match *id {
        BuiltinId::BouncingBall { g, d, e0 } => {
            check(g > 0.0 && g.is_finite(), "g must be positive")?;
            check((0.0..=1.0).contains(&d), "d must lie in [0, 1]")?;
            check(e0 > 0.0 && e0.is_finite(), "E0 must be positive")?;
            let vmax = (2.0 * e0).sqrt();
            // 0.5 y^2 + g x - E0 <= 0
            let energy = Poly::monomial(2, 0.5, &[0, 2])
                .add(&Poly::var(2, 0).scale(g))
                .add(&Poly::constant(2, -e0));
            Ok(HybridSystemDef {
                modes: vec![ModeSpec {
                    id: 0,
                    dim: 2,
                    field: PolyMap::new(vec![Poly::var(2, 1), Poly::constant(2, -g)]),
                    domain: vec![(0.0, e0 / g), (-vmax, vmax)],
                    region: vec![energy],
                    guards: vec![impact_guard(d)],
                }],
            })
        }
        BuiltinId::SpringBall { d, e0 } => {
            check((0.0..=1.0).contains(&d), "d must lie in [0, 1]")?;
            check(e0 > 0.0 && e0.is_finite(), "E0 must be positive")?;
            let rmax = (2.0 * e0).sqrt();
            let energy = Poly::monomial(2, 0.5, &[2, 0])
                .add(&Poly::monomial(2, 0.5, &[0, 2]))
                .add(&Poly::constant(2, -e0));
            Ok(HybridSystemDef {
                modes: vec![ModeSpec {
                    id: 0,
                    dim: 2,
                    field: PolyMap::new(vec![Poly::var(2, 1), Poly::var(2, 0).scale(-1.0)]),
                    domain: vec![(0.0, rmax), (-rmax, rmax)],
                    region: vec![energy],
                    guards: vec![impact_guard(d)],
                }],
            })
        }
        BuiltinId::Counterexample => Ok(HybridSystemDef {
            modes: vec![
                ModeSpec {
                    id: 0,
                    dim: 1,
                    field: PolyMap::new(vec![p1(-1.0, 1)]),
                    domain: vec![(-1.0, 0.0)],
                    region: vec![],
                    guards: vec![GuardComponent { psi: p1(-1.0, 1), ineqs: vec![], target: 1, reset: const_reset(1.0) }],
                },
                ModeSpec {
                    id: 1,
                    dim: 1,
                    field: PolyMap::new(vec![Poly::constant(1, 1.0)]),
                    domain: vec![(1.0, 3.0)],
                    region: vec![],
                    guards: vec![
                        GuardComponent {
                            psi: Poly::constant(1, 2.0).add(&p1(-1.0, 1)),
                            ineqs: vec![],
                            target: 0,
                            reset: const_reset(-1.0),
                        },
                        GuardComponent {
                            psi: Poly::constant(1, 3.0).add(&p1(-1.0, 1)),
                            ineqs: vec![],
                            target: 0,
                            reset: const_reset(-1.0),
                        },
                    ],
                },
            ],
        }),
        BuiltinId::OmegaPathology => Ok(HybridSystemDef {
            modes: vec![
                ModeSpec {
                    id: 0,
                    dim: 1,
                    field: PolyMap::new(vec![Poly::constant(1, 1.0)]),
                    domain: vec![(-3.0, -2.0)],
                    region: vec![],
                    guards: vec![
                        GuardComponent {
                            psi: Poly::constant(1, -2.0).add(&p1(-1.0, 1)),
                            ineqs: vec![],
                            target: 0,
                            reset: const_reset(-3.0),
                        },
                        GuardComponent {
                            psi: Poly::constant(1, 3.0).add(&p1(1.0, 1)),
                            ineqs: vec![],
                            target: 1,
                            reset: const_reset(-1.0),
                        },
                    ],
                },
                ModeSpec {
                    id: 1,
                    dim: 1,
                    field: PolyMap::new(vec![p1(-1.0, 1)]),
                    domain: vec![(-1.0, 0.0)],
                    region: vec![],
                    guards: vec![GuardComponent { psi: p1(-1.0, 1), ineqs: vec![], target: 2, reset: const_reset(1.0) }],
                },
                ModeSpec {
                    id: 2,
                    dim: 1,
                    field: PolyMap::new(vec![Poly::zero(1)]),
                    domain: vec![(1.0, 1.0)],
                    region: vec![],
                    guards: vec![],
                },
            ],
        }),
        BuiltinId::Rotation { alpha } => {
            check(alpha.is_finite(), "alpha must be finite")?;
            Ok(HybridSystemDef {
                modes: vec![ModeSpec {
                    id: 0,
                    dim: 1,
                    field: PolyMap::new(vec![Poly::zero(1)]),
                    domain: vec![(0.0, 1.0)],
                    region: vec![],
                    guards: vec![GuardComponent {
                        psi: Poly::zero(1),
                        ineqs: vec![],
                        target: 0,
                        reset: ResetMap::Rotation { alpha: alpha.rem_euclid(1.0) },
                    }],
                }],
            })
        }
        BuiltinId::GradientFlow => Ok(HybridSystemDef {
            modes: vec![ModeSpec {
                id: 0,
                dim: 2,
                // x' = x - x^3, y' = -y
                field: PolyMap::new(vec![
                    Poly::var(2, 0).add(&Poly::monomial(2, -1.0, &[3, 0])),
                    Poly::var(2, 1).scale(-1.0),
                ]),
                domain: vec![(-1.5, 1.5), (-1.0, 1.0)],
                region: vec![],
                guards: vec![],
            }],
        }),
    }
}

// ---- closed-form oracles ----

/// Time to first impact for the ball.
pub fn ball_mu(g: f64, x: f64, y: f64) -> f64 {
    (y + (y * y + 2.0 * x * g).max(0.0).sqrt()) / g
}

/// Impact speed `sqrt(y^2 + 2 g x)`.
pub fn ball_impact_speed(g: f64, x: f64, y: f64) -> f64 {
    (y * y + 2.0 * x * g).max(0.0).sqrt()
}

/// Zeno stop time of the ball execution: first flight plus the geometric tail of bounces.
pub fn ball_stop_time(g: f64, d: f64, x: f64, y: f64) -> f64 {
    let v = ball_impact_speed(g, x, y);
    if d >= 1.0 {
        return f64::INFINITY;
    }
    ball_mu(g, x, y) + 2.0 * v * d / (g * (1.0 - d))
}

/// `(rho, theta)` with `theta` in `[-pi/2, pi/2]` on the half-plane `x >= 0`.
pub fn polar(x: f64, y: f64) -> (f64, f64) {
    (x.hypot(y), y.atan2(x))
}

/// Time to first impact for the spring: `theta + pi/2`; zero at the origin.
pub fn spring_mu(x: f64, y: f64) -> f64 {
    if x == 0.0 && y == 0.0 {
        return 0.0;
    }
    let (_, th) = polar(x, y);
    if x == 0.0 && y < 0.0 {
        return 0.0;
    }
    th + PI / 2.0
}

// ---- Lyapunov candidates ----

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LyapunovCandidate {
    /// `a mu + b sqrt(0.5 y^2 + g x)`
    Ball { a: f64, b: f64, g: f64 },
    /// `a rho mu + b rho`
    Spring { a: f64, b: f64 },
    Constant { c: f64 },
}

impl LyapunovCandidate {
    pub fn ball_default(g: f64, d: f64) -> Self {
        let b = 7.0 / 5.0;
        let a = 0.999 * (1.0 - d) * g / (2.0 * 2f64.sqrt() * d) * b;
        LyapunovCandidate::Ball { a, b, g }
    }

    pub fn spring_default(d: f64) -> Self {
        let b = 1.0;
        LyapunovCandidate::Spring { a: 0.9 * (1.0 - d) * b / (d * PI), b }
    }

    /// The reference candidate for a registry entry, if there is one.
    pub fn for_builtin(id: &BuiltinId) -> Option<Self> {
        match *id {
            BuiltinId::BouncingBall { d, .. } if d >= 1.0 => Some(LyapunovCandidate::Constant { c: 1.0 }),
            BuiltinId::BouncingBall { g, d, .. } if d > 0.0 => Some(Self::ball_default(g, d)),
            BuiltinId::SpringBall { d, .. } if d > 0.0 && d < 1.0 => Some(Self::spring_default(d)),
            _ => None,
        }
    }

    pub fn eval(&self, s: &State) -> f64 {
        let (x, y) = (s.x[0], s.x.get(1).copied().unwrap_or(0.0));
        match *self {
            LyapunovCandidate::Ball { a, b, g } => {
                a * ball_mu(g, x, y) + b * (0.5 * y * y + g * x).max(0.0).sqrt()
            }
            LyapunovCandidate::Spring { a, b } => {
                let rho = x.hypot(y);
                a * rho * spring_mu(x, y) + b * rho
            }
            LyapunovCandidate::Constant { c } => c,
        }
    }
}

/// Closed-form description of the chain recurrent set used by the Lyapunov verifier.
#[derive(Clone, Debug)]
pub enum RecurrentOracle {
    /// Finitely many isolated recurrent points, each its own class.
    Points(Vec<State>),
    /// Every state is recurrent; one class per mode.
    Everything,
}

impl RecurrentOracle {
    pub fn for_builtin(id: &BuiltinId) -> Option<Self> {
        match *id {
            BuiltinId::BouncingBall { d, .. } if d >= 1.0 => Some(RecurrentOracle::Everything),
            BuiltinId::BouncingBall { .. } | BuiltinId::SpringBall { .. } => {
                Some(RecurrentOracle::Points(vec![State::new(0, vec![0.0, 0.0])]))
            }
            _ => None,
        }
    }

    pub fn class_of(&self, s: &State) -> Option<usize> {
        match self {
            RecurrentOracle::Points(p) => p.iter().position(|q| crate::system::distance(q, s) < 1e-9),
            RecurrentOracle::Everything => Some(s.mode),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ResetSample {
    pub point: State,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LyapunovReport {
    pub flow_checks: usize,
    pub reset_checks: usize,
    pub constancy_checks: usize,
    /// Largest observed `L(phi^t x) - L(x)` off the recurrent set; must be negative.
    pub worst_flow_margin: f64,
    /// Largest observed `L(r(z)) - L(z)` off the recurrent set; must be negative.
    pub worst_reset_margin: f64,
    pub worst_constancy_gap: f64,
    pub reset_samples: Vec<ResetSample>,
    pub violations: Vec<String>,
    pub pass: bool,
}

/// Samples the state space and guard and checks the complete Lyapunov conditions for `cand`.
pub fn verify_lyapunov(
    sys: &HybridSystemDef,
    cand: &LyapunovCandidate,
    recurrent: &RecurrentOracle,
    n_samples: usize,
    seed: u64,
) -> Result<LyapunovReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let budget = SimBudget::default();
    let tol = budget.event_tol;
    let dt = 0.05;
    let mut rep = LyapunovReport {
        flow_checks: 0,
        reset_checks: 0,
        constancy_checks: 0,
        worst_flow_margin: f64::NEG_INFINITY,
        worst_reset_margin: f64::NEG_INFINITY,
        worst_constancy_gap: 0.0,
        reset_samples: Vec::new(),
        violations: Vec::new(),
        pass: true,
    };

    for _ in 0..n_samples {
        let s = sampling::sample_state(sys, &mut rng);
        if recurrent.class_of(&s).is_some() || sys.in_guard(&s, tol) {
            continue;
        }
        let arc = integrate_arc(sys, &s, dt, &budget)?;
        let end = match &arc.end {
            ArcEnd::TimeOut(e) => e.clone(),
            ArcEnd::GuardHit { state, .. } => state.clone(),
            ArcEnd::DomainExit { .. } => continue,
        };
        let m = cand.eval(&end) - cand.eval(&s);
        rep.flow_checks += 1;
        rep.worst_flow_margin = rep.worst_flow_margin.max(m);
        if !(m < 0.0) {
            rep.violations.push(format!("flow does not decrease L from {:?}: margin {m:e}", s.x));
        }
    }

    let guard_pts: Vec<(usize, usize)> = sys
        .modes
        .iter()
        .flat_map(|m| (0..m.guards.len()).map(move |g| (m.id, g)))
        .collect();
    if !guard_pts.is_empty() {
        let mut attempts = 0;
        while rep.reset_checks < n_samples && attempts < 50 * n_samples {
            attempts += 1;
            let (mode, gi) = guard_pts[attempts % guard_pts.len()];
            let Some(s) = sampling::sample_mode(sys, mode, &mut rng) else { continue };
            let g = &sys.mode(mode).guards[gi];
            let Some(z) = sampling::project_to_surface(sys.mode(mode), &g.psi, &s.x).or_else(|| g.psi.is_zero().then(|| s.x.clone())) else {
                continue;
            };
            let z = State::new(mode, z);
            if !g.ineqs_hold(&z.x, 0.0) || !sys.mode(mode).contains(&z.x, 0.0) || recurrent.class_of(&z).is_some() {
                continue;
            }
            let img = sys.apply_reset_with(&z, gi, tol)?;
            let m = cand.eval(&img) - cand.eval(&z);
            rep.reset_checks += 1;
            rep.worst_reset_margin = rep.worst_reset_margin.max(m);
            if !(m < 0.0) {
                rep.violations.push(format!("reset does not decrease L at {:?}: margin {m:e}", z.x));
            }
            rep.reset_samples.push(ResetSample { point: z, margin: m });
        }
    }

    // Constancy on recurrent classes.
    match recurrent {
        RecurrentOracle::Points(_) => {}
        RecurrentOracle::Everything => {
            for mode in 0..sys.modes.len() {
                let mut vals = Vec::new();
                for _ in 0..n_samples.clamp(2, 200) {
                    if let Some(s) = sampling::sample_mode(sys, mode, &mut rng) {
                        vals.push(cand.eval(&s));
                    }
                }
                let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                rep.constancy_checks += vals.len();
                rep.worst_constancy_gap = rep.worst_constancy_gap.max(hi - lo);
                if hi - lo > 1e-9 {
                    rep.violations.push(format!("L varies by {:e} on the recurrent class of mode {mode}", hi - lo));
                }
            }
        }
    }
    rep.pass = rep.violations.is_empty();
    Ok(rep)
}

/// Closed-form quantities for a registry entry, as JSON.
pub fn oracle_report(id: &BuiltinId) -> Result<serde_json::Value> {
    let _ = instantiate(id)?;
    let mut out = json!({
        "schema": 1,
        "tool_version": crate::VERSION,
        "system": id,
    });
    let obj = out.as_object_mut().expect("object");
    match *id {
        BuiltinId::BouncingBall { g, d, e0 } => {
            let pts = [(0.5, 3.0), (0.0, -2.0), (1.0, 0.0), (2.0, -1.0), (0.0, 2.0)];
            let table: Vec<_> = pts.iter().map(|&(x, y)| json!({"x": x, "y": y, "mu": ball_mu(g, x, y)})).collect();
            obj.insert("mu".into(), json!({"formula": "(y + sqrt(y^2 + 2 g x)) / g", "table": table}));
            obj.insert(
                "stop_time".into(),
                json!({
                    "x0": [0.5, 3.0],
                    "value": ball_stop_time(g, d, 0.5, 3.0),
                    "formula": "mu(x, y) + 2 d sqrt(y^2 + 2 g x) / (g (1 - d))",
                }),
            );
            obj.insert("energy".into(), json!(format!("0.5 y^2 + {g} x <= {e0}")));
            obj.insert("recurrent_set".into(), json!(if d >= 1.0 { "I_E0" } else { "{0}" }));
            if let Some(c) = LyapunovCandidate::for_builtin(id) {
                obj.insert("lyapunov".into(), json!(c));
            }
        }
        BuiltinId::SpringBall { d, e0 } => {
            let th: Vec<f64> = (0..7).map(|k| -PI / 2.0 + k as f64 * PI / 6.0).collect();
            let table: Vec<_> = th
                .iter()
                .map(|&t| json!({"rho": 1.0, "theta": t, "x": t.cos(), "y": t.sin(), "mu": spring_mu(t.cos().max(0.0), t.sin())}))
                .collect();
            obj.insert("mu".into(), json!({"formula": "theta + pi/2", "table": table}));
            obj.insert("energy".into(), json!(format!("0.5 (x^2 + y^2) <= {e0}")));
            obj.insert("recurrent_set".into(), json!(if d >= 1.0 { "I_E0" } else { "{0}" }));
            obj.insert("mu_discontinuity".into(), json!([0.0, 0.0]));
            if let Some(c) = LyapunovCandidate::for_builtin(id) {
                obj.insert("lyapunov".into(), json!(c));
            }
        }
        BuiltinId::Counterexample => {
            obj.insert("recurrent_set".into(), json!("[-1,0] U [1,2]"));
            obj.insert("guard".into(), json!([0.0, 2.0, 3.0]));
            obj.insert("resets".into(), json!({"0": 1.0, "2": -1.0, "3": -1.0}));
            obj.insert("omega_limit".into(), json!([0.0]));
        }
        BuiltinId::OmegaPathology => {
            obj.insert("recurrent_set".into(), json!("(-3,-2] U {1}"));
            obj.insert("resets".into(), json!({"-3": -1.0, "-2": -3.0, "0": 1.0}));
            obj.insert("omega_limit_of_minus_one".into(), json!([0.0]));
        }
        BuiltinId::Rotation { alpha } => {
            obj.insert("map".into(), json!(format!("x -> frac(x + {alpha})")));
            obj.insert("suspension".into(), json!("phi(t, x) = (f^floor(t)(x), frac(t))"));
        }
        BuiltinId::GradientFlow => {
            obj.insert("equilibria".into(), json!([[-1.0, 0.0], [0.0, 0.0], [1.0, 0.0]]));
            obj.insert("recurrent_set".into(), json!("equilibria"));
        }
    }
    Ok(out)
}
