//! Sparse multivariate polynomials with `f64` coefficients.

use serde::{Deserialize, Serialize};

/// One monomial `coeff * prod x_i^exps[i]` contributing to output component `out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub coeff: f64,
    pub exps: Vec<u32>,
    #[serde(default)]
    pub out: usize,
}

/// Scalar polynomial in `nvars` variables.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    pub nvars: usize,
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Poly {
    pub fn zero(nvars: usize) -> Self {
        Poly { nvars, terms: Vec::new() }
    }

    pub fn constant(nvars: usize, c: f64) -> Self {
        let mut p = Poly::zero(nvars);
        if c != 0.0 {
            p.terms.push((c, vec![0; nvars]));
        }
        p
    }

    /// The coordinate function `x_i`.
    pub fn var(nvars: usize, i: usize) -> Self {
        let mut e = vec![0; nvars];
        e[i] = 1;
        Poly { nvars, terms: vec![(1.0, e)] }
    }

    pub fn monomial(nvars: usize, coeff: f64, exps: &[u32]) -> Self {
        assert_eq!(exps.len(), nvars);
        Poly { nvars, terms: vec![(coeff, exps.to_vec())] }.normalized()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.iter().all(|(c, _)| *c == 0.0)
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(_, e)| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    /// Merges equal monomials and drops zeros. Terms come out sorted by exponent.
    pub fn normalized(mut self) -> Self {
        self.terms.sort_by(|a, b| a.1.cmp(&b.1));
        let mut out: Vec<(f64, Vec<u32>)> = Vec::with_capacity(self.terms.len());
        for (c, e) in self.terms {
            match out.last_mut() {
                Some(last) if last.1 == e => last.0 += c,
                _ => out.push((c, e)),
            }
        }
        out.retain(|(c, _)| *c != 0.0);
        Poly { nvars: self.nvars, terms: out }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (c, e) in &self.terms {
            let mut m = *c;
            for (xi, &k) in x.iter().zip(e) {
                if k > 0 {
                    m *= xi.powi(k as i32);
                }
            }
            acc += m;
        }
        acc
    }

    pub fn derivative(&self, i: usize) -> Poly {
        let mut terms = Vec::new();
        for (c, e) in &self.terms {
            if e[i] > 0 {
                let mut e2 = e.clone();
                e2[i] -= 1;
                terms.push((c * e[i] as f64, e2));
            }
        }
        Poly { nvars: self.nvars, terms }.normalized()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.nvars).map(|i| self.derivative(i).eval(x)).collect()
    }

    pub fn add(&self, other: &Poly) -> Poly {
        assert_eq!(self.nvars, other.nvars);
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        Poly { nvars: self.nvars, terms }.normalized()
    }

    pub fn scale(&self, k: f64) -> Poly {
        Poly {
            nvars: self.nvars,
            terms: self.terms.iter().map(|(c, e)| (c * k, e.clone())).collect(),
        }
        .normalized()
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        assert_eq!(self.nvars, other.nvars);
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for (a, ea) in &self.terms {
            for (b, eb) in &other.terms {
                let e = ea.iter().zip(eb).map(|(x, y)| x + y).collect();
                terms.push((a * b, e));
            }
        }
        Poly { nvars: self.nvars, terms }.normalized()
    }

    /// Lie derivative `grad(self) . field`.
    pub fn lie(&self, field: &PolyMap) -> Poly {
        let mut acc = Poly::zero(self.nvars);
        for (i, fi) in field.comps.iter().enumerate() {
            let d = self.derivative(i);
            if !d.is_zero() {
                acc = acc.add(&d.mul(fi));
            }
        }
        acc
    }

    /// True when every monomial only uses variables `< nvars` and has the right arity.
    pub fn well_formed(&self) -> bool {
        self.terms.iter().all(|(c, e)| e.len() == self.nvars && c.is_finite())
    }

    pub fn to_terms(&self) -> Vec<Term> {
        self.terms
            .iter()
            .map(|(c, e)| Term { coeff: *c, exps: e.clone(), out: 0 })
            .collect()
    }

    pub fn from_terms(nvars: usize, terms: &[Term]) -> Result<Poly, String> {
        let mut p = Poly::zero(nvars);
        for t in terms {
            if t.exps.len() != nvars {
                return Err(format!("monomial has {} exponents, expected {nvars}", t.exps.len()));
            }
            if t.out != 0 {
                return Err("scalar polynomial term with out != 0".into());
            }
            p.terms.push((t.coeff, t.exps.clone()));
        }
        Ok(p.normalized())
    }
}

/// Polynomial map `R^nvars -> R^comps.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolyMap {
    pub nvars: usize,
    pub comps: Vec<Poly>,
}

impl PolyMap {
    pub fn new(comps: Vec<Poly>) -> Self {
        let nvars = comps.first().map(|p| p.nvars).unwrap_or(0);
        assert!(comps.iter().all(|p| p.nvars == nvars), "mixed arity in polynomial map");
        PolyMap { nvars, comps }
    }

    pub fn identity(n: usize) -> Self {
        PolyMap::new((0..n).map(|i| Poly::var(n, i)).collect())
    }

    pub fn zero(nvars: usize, nout: usize) -> Self {
        PolyMap { nvars, comps: vec![Poly::zero(nvars); nout] }
    }

    /// Linear map `x -> A x` with `A` given row-major.
    pub fn linear(a: &[Vec<f64>]) -> Self {
        let n = a.first().map(|r| r.len()).unwrap_or(0);
        let comps = a
            .iter()
            .map(|row| {
                let mut p = Poly::zero(n);
                for (j, &c) in row.iter().enumerate() {
                    if c != 0.0 {
                        p = p.add(&Poly::var(n, j).scale(c));
                    }
                }
                p
            })
            .collect();
        PolyMap { nvars: n, comps }
    }

    pub fn out_dim(&self) -> usize {
        self.comps.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.comps.iter().map(|p| p.eval(x)).collect()
    }

    pub fn eval_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.comps) {
            *o = p.eval(x);
        }
    }

    pub fn to_terms(&self) -> Vec<Term> {
        let mut out = Vec::new();
        for (k, p) in self.comps.iter().enumerate() {
            for (c, e) in &p.terms {
                out.push(Term { coeff: *c, exps: e.clone(), out: k });
            }
        }
        out
    }

    pub fn from_terms(nvars: usize, nout: usize, terms: &[Term]) -> Result<PolyMap, String> {
        let mut comps = vec![Poly::zero(nvars); nout];
        for t in terms {
            if t.exps.len() != nvars {
                return Err(format!("monomial has {} exponents, expected {nvars}", t.exps.len()));
            }
            if t.out >= nout {
                return Err(format!("term targets output {} of a {nout}-dimensional map", t.out));
            }
            comps[t.out].terms.push((t.coeff, t.exps.clone()));
        }
        Ok(PolyMap { nvars, comps: comps.into_iter().map(Poly::normalized).collect() })
    }
}
