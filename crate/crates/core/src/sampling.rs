//! Point samplers over modes and guard surfaces.

use rand::Rng;

use crate::system::{HybridSystemDef, ModeSpec, State};

/// Tensor grid of `n` points per axis over the mode's domain box (capped at 4096 points).
pub fn box_grid_points(m: &ModeSpec, n: usize) -> Vec<Vec<f64>> {
    let n = n.max(1);
    let per_axis = if m.dim <= 2 { n } else { ((4096f64).powf(1.0 / m.dim as f64) as usize).max(2) };
    let mut pts = vec![Vec::new()];
    for &(lo, hi) in &m.domain {
        let mut next = Vec::with_capacity(pts.len() * per_axis);
        for p in &pts {
            for k in 0..per_axis {
                let t = if per_axis == 1 { 0.5 } else { k as f64 / (per_axis - 1) as f64 };
                let mut q: Vec<f64> = p.clone();
                q.push(lo + t * (hi - lo));
                next.push(q);
            }
        }
        pts = next;
    }
    pts
}

/// Newton projection onto the zero set of `psi`; `None` if it fails or leaves the box.
pub fn project_to_surface(m: &ModeSpec, psi: &crate::poly::Poly, x0: &[f64]) -> Option<Vec<f64>> {
    let mut x = x0.to_vec();
    for _ in 0..60 {
        let v = psi.eval(&x);
        if v.abs() < 1e-13 {
            return m.in_box(&x, 1e-12).then_some(x);
        }
        let g = psi.gradient(&x);
        let n2: f64 = g.iter().map(|a| a * a).sum();
        if n2 < 1e-24 {
            return None;
        }
        for (xi, gi) in x.iter_mut().zip(&g) {
            *xi -= v * gi / n2;
        }
    }
    (psi.eval(&x).abs() < 1e-10 && m.in_box(&x, 1e-12)).then_some(x)
}

/// Gauss-Newton on `(psi, L_X psi) = 0`, locating tangency points of the flow with the guard.
fn refine_tangency(m: &ModeSpec, psi: &crate::poly::Poly, l1: &crate::poly::Poly, x0: &[f64]) -> Option<Vec<f64>> {
    let mut x = x0.to_vec();
    for _ in 0..60 {
        let f = [psi.eval(&x), l1.eval(&x)];
        if f[0].abs() < 1e-13 && f[1].abs() < 1e-13 {
            return m.in_box(&x, 1e-12).then_some(x);
        }
        let j = [psi.gradient(&x), l1.gradient(&x)];
        let a = crate::system::dot(&j[0], &j[0]);
        let b = crate::system::dot(&j[0], &j[1]);
        let c = crate::system::dot(&j[1], &j[1]);
        let det = a * c - b * b;
        if det.abs() < 1e-20 {
            return None;
        }
        // Minimum-norm step: dx = -J^T (J J^T)^{-1} f
        let w0 = (c * f[0] - b * f[1]) / det;
        let w1 = (-b * f[0] + a * f[1]) / det;
        for k in 0..x.len() {
            x[k] -= j[0][k] * w0 + j[1][k] * w1;
        }
        if !x.iter().all(|v| v.is_finite()) {
            return None;
        }
    }
    None
}

/// Deterministic sample of points on guard component `guard` of `mode`, including tangency points.
pub fn guard_points(sys: &HybridSystemDef, mode: usize, guard: usize, n: usize) -> Vec<Vec<f64>> {
    let m = sys.mode(mode);
    let g = &m.guards[guard];
    let grid = box_grid_points(m, n);
    let accept = |p: &Vec<f64>| m.contains(p, 1e-9) && g.ineqs_hold(p, 1e-12);
    let mut out: Vec<Vec<f64>> = Vec::new();
    let push = |out: &mut Vec<Vec<f64>>, p: Vec<f64>| {
        if !out.iter().any(|q| crate::system::euclid(q, &p) < 1e-9) {
            out.push(p);
        }
    };
    if g.psi.is_zero() {
        for p in grid {
            if accept(&p) {
                push(&mut out, p);
            }
        }
        return out;
    }
    let l1 = g.psi.lie(&m.field);
    let mut projected = Vec::new();
    for p in &grid {
        if let Some(q) = project_to_surface(m, &g.psi, p) {
            projected.push(q);
        }
    }
    if m.dim >= 2 && !l1.is_zero() {
        let mut cands: Vec<&Vec<f64>> = projected.iter().collect();
        cands.sort_by(|a, b| l1.eval(a).abs().total_cmp(&l1.eval(b).abs()));
        for c in cands.into_iter().take(8) {
            if let Some(t) = refine_tangency(m, &g.psi, &l1, c) {
                if accept(&t) {
                    push(&mut out, t);
                }
            }
        }
    }
    for q in projected {
        if accept(&q) {
            push(&mut out, q);
        }
    }
    out
}

/// Uniform rejection sample from the state space of `mode`.
pub fn sample_mode<R: Rng>(sys: &HybridSystemDef, mode: usize, rng: &mut R) -> Option<State> {
    let m = sys.mode(mode);
    for _ in 0..10_000 {
        let x: Vec<f64> = m
            .domain
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.gen_range(lo..=hi) } else { lo })
            .collect();
        if m.in_region(&x, 0.0) {
            return Some(State::new(mode, x));
        }
    }
    None
}

/// Uniform sample from the whole state space, modes weighted by box volume.
pub fn sample_state<R: Rng>(sys: &HybridSystemDef, rng: &mut R) -> State {
    let vols: Vec<f64> = sys
        .modes
        .iter()
        .map(|m| m.domain.iter().map(|(lo, hi)| (hi - lo).max(1e-3)).product())
        .collect();
    let total: f64 = vols.iter().sum();
    loop {
        let mut u = rng.gen_range(0.0..total);
        let mut mode = 0;
        for (i, v) in vols.iter().enumerate() {
            if u < *v {
                mode = i;
                break;
            }
            u -= v;
        }
        if let Some(s) = sample_mode(sys, mode, rng) {
            return s;
        }
    }
}

/// A base point near a guard: a sampled guard point pushed off by a log-uniform radius in `[r_min, r_max]`.
pub fn sample_near_guard<R: Rng>(
    sys: &HybridSystemDef,
    guard_pts: &[(usize, Vec<f64>)],
    r_min: f64,
    r_max: f64,
    rng: &mut R,
) -> Option<State> {
    if guard_pts.is_empty() {
        return None;
    }
    for _ in 0..1000 {
        let (mode, z) = &guard_pts[rng.gen_range(0..guard_pts.len())];
        let m = sys.mode(*mode);
        let r = (r_min.ln() + rng.gen::<f64>() * (r_max.ln() - r_min.ln())).exp();
        let dir = random_unit(m.dim, rng);
        let x: Vec<f64> = z.iter().zip(&dir).map(|(a, b)| a + r * b).collect();
        if m.contains(&x, 0.0) {
            return Some(State::new(*mode, x));
        }
    }
    None
}

pub fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-3 && n <= 1.0 {
            return v.into_iter().map(|a| a / n).collect();
        }
    }
}

/// Guard points of every component in the system, tagged with their mode.
pub fn all_guard_points(sys: &HybridSystemDef, n: usize) -> Vec<(usize, Vec<f64>)> {
    let mut out = Vec::new();
    for m in &sys.modes {
        for gi in 0..m.guards.len() {
            for p in guard_points(sys, m.id, gi, n) {
                out.push((m.id, p));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins::{instantiate, BuiltinId};

    #[test]
    fn ball_guard_points_include_origin_and_lie_on_guard() {
        let sys = instantiate(&BuiltinId::ball(1.0, 0.8)).unwrap();
        let pts = guard_points(&sys, 0, 0, 16);
        assert!(pts.iter().any(|p| p[0].abs() < 1e-12 && p[1].abs() < 1e-12));
        for p in &pts {
            assert!(p[0].abs() < 1e-12 && p[1] <= 1e-12);
        }
    }

    #[test]
    fn counterexample_guard_points() {
        let sys = instantiate(&BuiltinId::Counterexample).unwrap();
        let pts = all_guard_points(&sys, 8);
        let mut xs: Vec<f64> = pts.iter().map(|(_, p)| p[0]).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs.len(), 3);
        for (a, b) in xs.iter().zip([0.0, 2.0, 3.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
