//! Dense bivariate and univariate polynomials in the monomial basis.

use std::ops::{Add, Mul, Neg, Sub};

use crate::geometry::Point2;

/// Bivariate polynomial Σ c_ij x^i y^j with i + j ≤ degree.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly2 {
    degree: usize,
    c: Vec<f64>,
}

impl Poly2 {
    pub fn zero() -> Self {
        Poly2 { degree: 0, c: vec![0.0] }
    }

    pub fn constant(v: f64) -> Self {
        Poly2 { degree: 0, c: vec![v] }
    }

    pub fn with_degree(degree: usize) -> Self {
        Poly2 { degree, c: vec![0.0; (degree + 1) * (degree + 1)] }
    }

    pub fn monomial(i: usize, j: usize, v: f64) -> Self {
        let mut p = Self::with_degree(i + j);
        p.set(i, j, v);
        p
    }

    pub fn x() -> Self {
        Self::monomial(1, 0, 1.0)
    }

    pub fn y() -> Self {
        Self::monomial(0, 1, 1.0)
    }

    /// a + b·x + c·y
    pub fn linear(a: f64, b: f64, c: f64) -> Self {
        let mut p = Self::with_degree(1);
        p.set(0, 0, a);
        p.set(1, 0, b);
        p.set(0, 1, c);
        p
    }

    /// Build from a list of (i, j, coefficient).
    pub fn from_terms(terms: &[(usize, usize, f64)]) -> Self {
        let d = terms.iter().map(|t| t.0 + t.1).max().unwrap_or(0);
        let mut p = Self::with_degree(d);
        for &(i, j, v) in terms {
            p.add_to(i, j, v);
        }
        p
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (self.degree + 1) + j
    }

    /// Nominal degree (an upper bound on the true degree).
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        if i + j > self.degree {
            0.0
        } else {
            self.c[self.idx(i, j)]
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(i + j <= self.degree);
        let k = self.idx(i, j);
        self.c[k] = v;
    }

    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        assert!(i + j <= self.degree);
        let k = self.idx(i, j);
        self.c[k] += v;
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..=self.degree).flat_map(move |i| (0..=self.degree - i).map(move |j| (i, j, self.coeff(i, j))))
    }

    fn raised(&self, degree: usize) -> Self {
        let mut p = Self::with_degree(degree.max(self.degree));
        for (i, j, v) in self.terms() {
            p.set(i, j, v);
        }
        p
    }

    pub fn eval(&self, p: Point2) -> f64 {
        // Horner in y for each power of x, then in x.
        let mut acc = 0.0;
        for i in (0..=self.degree).rev() {
            let mut inner = 0.0;
            for j in (0..=self.degree - i).rev() {
                inner = inner * p.y + self.c[self.idx(i, j)];
            }
            acc = acc * p.x + inner;
        }
        acc
    }

    pub fn dx(&self) -> Self {
        let mut p = Self::with_degree(self.degree.saturating_sub(1));
        for (i, j, v) in self.terms() {
            if i > 0 {
                p.set(i - 1, j, v * i as f64);
            }
        }
        p
    }

    pub fn dy(&self) -> Self {
        let mut p = Self::with_degree(self.degree.saturating_sub(1));
        for (i, j, v) in self.terms() {
            if j > 0 {
                p.set(i, j - 1, v * j as f64);
            }
        }
        p
    }

    pub fn grad(&self, p: Point2) -> [f64; 2] {
        [self.dx().eval(p), self.dy().eval(p)]
    }

    /// b·∇p for a constant vector b.
    pub fn directional(&self, b: Point2) -> Self {
        &(&self.dx() * b.x) + &(&self.dy() * b.y)
    }

    /// q(ζ) = p(Aζ + c) with A given row-wise.
    pub fn compose_affine(&self, a: [[f64; 2]; 2], c: Point2) -> Self {
        let xs = Poly2::linear(c.x, a[0][0], a[0][1]);
        let ys = Poly2::linear(c.y, a[1][0], a[1][1]);
        let mut xp = vec![Poly2::constant(1.0)];
        let mut yp = vec![Poly2::constant(1.0)];
        for k in 1..=self.degree {
            xp.push(&xp[k - 1] * &xs);
            yp.push(&yp[k - 1] * &ys);
        }
        let mut out = Poly2::with_degree(self.degree);
        for (i, j, v) in self.terms() {
            if v != 0.0 {
                out = &out + &(&(&xp[i] * &yp[j]) * v);
            }
        }
        out.raised(self.degree)
    }

    /// The univariate polynomial x ↦ p(x, y).
    pub fn restrict_y(&self, y: f64) -> Poly1 {
        let mut c = vec![0.0; self.degree + 1];
        for (i, j, v) in self.terms() {
            c[i] += v * y.powi(j as i32);
        }
        Poly1(c)
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.c.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl Add for &Poly2 {
    type Output = Poly2;
    fn add(self, o: &Poly2) -> Poly2 {
        let mut p = self.raised(o.degree);
        for (i, j, v) in o.terms() {
            p.add_to(i, j, v);
        }
        p
    }
}

impl Sub for &Poly2 {
    type Output = Poly2;
    fn sub(self, o: &Poly2) -> Poly2 {
        let mut p = self.raised(o.degree);
        for (i, j, v) in o.terms() {
            p.add_to(i, j, -v);
        }
        p
    }
}

impl Mul for &Poly2 {
    type Output = Poly2;
    fn mul(self, o: &Poly2) -> Poly2 {
        let mut p = Poly2::with_degree(self.degree + o.degree);
        for (i, j, v) in self.terms() {
            if v == 0.0 {
                continue;
            }
            for (k, l, w) in o.terms() {
                p.add_to(i + k, j + l, v * w);
            }
        }
        p
    }
}

impl Mul<f64> for &Poly2 {
    type Output = Poly2;
    fn mul(self, s: f64) -> Poly2 {
        Poly2 { degree: self.degree, c: self.c.iter().map(|v| v * s).collect() }
    }
}

impl Neg for &Poly2 {
    type Output = Poly2;
    fn neg(self) -> Poly2 {
        self * -1.0
    }
}

/// Univariate polynomial Σ c_k t^k.
#[derive(Clone, Debug, PartialEq)]
pub struct Poly1(pub Vec<f64>);

impl Poly1 {
    pub fn eval(&self, t: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * t + c)
    }

    pub fn derivative(&self) -> Poly1 {
        Poly1(self.0.iter().enumerate().skip(1).map(|(k, c)| c * k as f64).collect())
    }

    /// Antiderivative vanishing at zero.
    pub fn antiderivative(&self) -> Poly1 {
        let mut c = vec![0.0];
        c.extend(self.0.iter().enumerate().map(|(k, v)| v / (k + 1) as f64));
        Poly1(c)
    }

    pub fn integral(&self, a: f64, b: f64) -> f64 {
        let p = self.antiderivative();
        p.eval(b) - p.eval(a)
    }
}
