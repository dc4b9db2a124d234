//! Multivariate polynomials with exact differentiation, used as test functions.

use std::collections::BTreeMap;

use crate::linalg::Mat;

/// Polynomial in `n` variables, stored as exponent vector → coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly {
    n: usize,
    terms: BTreeMap<Vec<u32>, f64>,
}

impl Poly {
    pub fn zero(n: usize) -> Self {
        Poly {
            n,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(n: usize, c: f64) -> Self {
        let mut p = Poly::zero(n);
        p.add_term(vec![0; n], c);
        p
    }

    /// The coordinate function `x_i`.
    pub fn var(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        let mut p = Poly::zero(n);
        p.add_term(e, 1.0);
        p
    }

    /// `c + a·x`.
    pub fn affine(c: f64, a: &[f64]) -> Self {
        let n = a.len();
        let mut p = Poly::constant(n, c);
        for (i, ai) in a.iter().enumerate() {
            p = p.add(&Poly::var(n, i).scale(*ai));
        }
        p
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Vec<u32>, &f64)> {
        self.terms.iter()
    }

    fn add_term(&mut self, e: Vec<u32>, c: f64) {
        if c == 0.0 {
            return;
        }
        let slot = self.terms.entry(e).or_insert(0.0);
        *slot += c;
    }

    pub fn degree(&self) -> usize {
        self.terms
            .keys()
            .map(|e| e.iter().sum::<u32>() as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn add(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (e, c) in &other.terms {
            out.add_term(e.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Poly) -> Poly {
        self.add(&other.scale(-1.0))
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly {
            n: self.n,
            terms: self.terms.iter().map(|(e, c)| (e.clone(), c * s)).collect(),
        }
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero(self.n);
        for (e1, c1) in &self.terms {
            for (e2, c2) in &other.terms {
                let e: Vec<u32> = e1.iter().zip(e2).map(|(a, b)| a + b).collect();
                out.add_term(e, c1 * c2);
            }
        }
        out
    }

    pub fn powi(&self, k: u32) -> Poly {
        let mut out = Poly::constant(self.n, 1.0);
        for _ in 0..k {
            out = out.mul(self);
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let deg = self.terms.keys().flat_map(|e| e.iter().copied()).max().unwrap_or(0) as usize;
        let mut pows = vec![vec![1.0; deg + 1]; self.n];
        for i in 0..self.n {
            for k in 1..=deg {
                pows[i][k] = pows[i][k - 1] * x[i];
            }
        }
        self.terms
            .iter()
            .map(|(e, c)| c * e.iter().enumerate().map(|(i, &k)| pows[i][k as usize]).product::<f64>())
            .sum()
    }

    pub fn partial(&self, i: usize) -> Poly {
        let mut out = Poly::zero(self.n);
        for (e, c) in &self.terms {
            if e[i] > 0 {
                let mut e2 = e.clone();
                e2[i] -= 1;
                out.add_term(e2, c * e[i] as f64);
            }
        }
        out
    }

    pub fn grad(&self) -> Vec<Poly> {
        (0..self.n).map(|i| self.partial(i)).collect()
    }

    /// Substitutes `x = c + M y`, returning a polynomial in `y` (`M` is
    /// `n × k`).
    pub fn compose_affine(&self, c: &[f64], m: &Mat) -> Poly {
        let k = m.cols();
        let coords: Vec<Poly> = (0..self.n)
            .map(|i| {
                let row: Vec<f64> = (0..k).map(|j| m.get(i, j)).collect();
                Poly::affine(c[i], &row)
            })
            .collect();
        let mut out = Poly::zero(k);
        for (e, coef) in &self.terms {
            let mut t = Poly::constant(k, *coef);
            for (i, &p) in e.iter().enumerate() {
                if p > 0 {
                    t = t.mul(&coords[i].powi(p));
                }
            }
            out = out.add(&t);
        }
        out
    }

    /// Sum of absolute coefficients of the terms of total degree `d`.
    pub fn coefficient_mass(&self, d: usize) -> f64 {
        self.terms
            .iter()
            .filter(|(e, _)| e.iter().sum::<u32>() as usize == d)
            .map(|(_, c)| c.abs())
            .sum()
    }

    /// `Π_i (x_i − lo_i)(hi_i − x_i)`, which vanishes on the faces of the box.
    pub fn box_bubble(lo: &[f64], hi: &[f64]) -> Poly {
        let n = lo.len();
        let mut p = Poly::constant(n, 1.0);
        for i in 0..n {
            let mut a = vec![0.0; n];
            a[i] = 1.0;
            let left = Poly::affine(-lo[i], &a);
            a[i] = -1.0;
            let right = Poly::affine(hi[i], &a);
            p = p.mul(&left).mul(&right);
        }
        p
    }

    /// `Π_f (b_f − a_f·x)` over the half-spaces `a_f·x ≤ b_f`; vanishes on the
    /// boundary and is positive inside.
    pub fn barrier(normals: &[Vec<f64>], offsets: &[f64]) -> Poly {
        let n = normals[0].len();
        let mut p = Poly::constant(n, 1.0);
        for (a, b) in normals.iter().zip(offsets) {
            let neg: Vec<f64> = a.iter().map(|v| -v).collect();
            p = p.mul(&Poly::affine(*b, &neg));
        }
        p
    }
}
