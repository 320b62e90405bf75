//! Truncated power series in three variables `(x1, x2, x3)`.
//!
//! A [`Jet`] of degree `K` stores the coefficients of all monomials of total
//! degree `<= K`. Over [`Rational`](crate::scalar::Rational) every operation
//! is exact; over `f64` the same code gives a float mode. Mixing modes is a
//! type error.
//!
//! The checked operations ([`Jet::try_add`], [`Jet::try_mul`]) reject
//! operands of different degree. The operator impls instead truncate to the
//! smaller degree, which is the degree to which the result is known.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Mat;
use crate::scalar::Field;

/// Exponent triple `(a, b, c)` of the monomial `x1^a x2^b x3^c`.
pub type Exp = [u32; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JetError {
    #[error("degree mismatch: {left} vs {right}")]
    DegreeMismatch { left: u32, right: u32 },
    #[error("constant term is not invertible")]
    NotInvertible,
    #[error("square root needs a positive constant term")]
    NonPositiveConstant,
    #[error("constant term has no square root in this field")]
    IrrationalRoot,
    #[error("constant-term matrix is singular")]
    SingularMatrix,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed jet serialization: {0}")]
    Parse(String),
}

#[derive(Clone, PartialEq)]
pub struct Jet<T> {
    degree: u32,
    terms: BTreeMap<Exp, T>,
}

fn total(e: &Exp) -> u32 {
    e[0] + e[1] + e[2]
}

impl<T: Field> Jet<T> {
    pub fn zero(degree: u32) -> Self {
        Jet {
            degree,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(c: T, degree: u32) -> Self {
        Self::monomial([0, 0, 0], c, degree)
    }

    pub fn one(degree: u32) -> Self {
        Self::constant(T::one(), degree)
    }

    /// The coordinate function `x_{axis+1}` (axis is 0-based).
    pub fn var(axis: usize, degree: u32) -> Self {
        let mut e = [0; 3];
        e[axis] = 1;
        Self::monomial(e, T::one(), degree)
    }

    pub fn monomial(exp: Exp, c: T, degree: u32) -> Self {
        let mut j = Self::zero(degree);
        j.add_term(exp, c);
        j
    }

    /// Build from `(exponent, coefficient)` pairs; terms above `degree` are
    /// dropped and repeated exponents accumulate.
    pub fn from_terms(degree: u32, terms: impl IntoIterator<Item = (Exp, T)>) -> Self {
        let mut j = Self::zero(degree);
        for (e, c) in terms {
            j.add_term(e, c);
        }
        j
    }

    fn add_term(&mut self, exp: Exp, c: T) {
        if total(&exp) > self.degree || c.is_zero() {
            return;
        }
        let slot = self.terms.entry(exp).or_insert_with(T::zero);
        *slot = slot.clone() + c;
        if slot.is_zero() {
            self.terms.remove(&exp);
        }
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn coeff(&self, exp: Exp) -> T {
        self.terms.get(&exp).cloned().unwrap_or_else(T::zero)
    }

    pub fn constant_term(&self) -> T {
        self.coeff([0, 0, 0])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exp, &T)> {
        self.terms.iter()
    }

    pub fn num_terms(&self) -> usize {
        self.terms.len()
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Drop every term of total degree above `k` and lower the degree to `k`.
    pub fn truncate(&self, k: u32) -> Self {
        let k = k.min(self.degree);
        Jet {
            degree: k,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| total(e) <= k)
                .map(|(e, c)| (*e, c.clone()))
                .collect(),
        }
    }

    /// Terms of total degree exactly `d`.
    pub fn homogeneous_part(&self, d: u32) -> Self {
        Jet {
            degree: self.degree,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| total(e) == d)
                .map(|(e, c)| (*e, c.clone()))
                .collect(),
        }
    }

    /// Lowest total degree carrying a nonzero coefficient.
    pub fn order(&self) -> Option<u32> {
        self.terms.keys().map(total).min()
    }

    pub fn try_add(&self, other: &Self) -> Result<Self, JetError> {
        self.check_degree(other)?;
        Ok(self + other)
    }

    pub fn try_sub(&self, other: &Self) -> Result<Self, JetError> {
        self.check_degree(other)?;
        Ok(self - other)
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, JetError> {
        self.check_degree(other)?;
        Ok(self * other)
    }

    fn check_degree(&self, other: &Self) -> Result<(), JetError> {
        if self.degree != other.degree {
            return Err(JetError::DegreeMismatch {
                left: self.degree,
                right: other.degree,
            });
        }
        Ok(())
    }

    pub fn scale(&self, s: &T) -> Self {
        if s.is_zero() {
            return Self::zero(self.degree);
        }
        Jet {
            degree: self.degree,
            terms: self
                .terms
                .iter()
                .map(|(e, c)| (*e, c.clone() * s.clone()))
                .filter(|(_, c)| !c.is_zero())
                .collect(),
        }
    }

    /// Formal partial derivative; the result has degree `K - 1` (or stays 0).
    pub fn partial(&self, axis: usize) -> Self {
        let degree = self.degree.saturating_sub(1);
        let mut out = Self::zero(degree);
        for (e, c) in &self.terms {
            if e[axis] == 0 {
                continue;
            }
            let mut f = *e;
            f[axis] -= 1;
            out.add_term(f, c.clone() * T::from_i64(e[axis] as i64));
        }
        out
    }

    /// Antiderivative along `axis` vanishing on `{x_axis = 0}`; degree `K + 1`.
    pub fn integrate(&self, axis: usize) -> Self {
        let mut out = Self::zero(self.degree + 1);
        for (e, c) in &self.terms {
            let mut f = *e;
            f[axis] += 1;
            out.add_term(f, c.clone() / T::from_i64(f[axis] as i64));
        }
        out
    }

    /// Restriction to the hyperplane `{x_axis = 0}`.
    pub fn restrict_zero(&self, axis: usize) -> Self {
        Jet {
            degree: self.degree,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e[axis] == 0)
                .map(|(e, c)| (*e, c.clone()))
                .collect(),
        }
    }

    /// Terms whose exponent of `x_axis` is at most `k`.
    pub fn low_order_in(&self, axis: usize, k: u32) -> Self {
        Jet {
            degree: self.degree,
            terms: self
                .terms
                .iter()
                .filter(|(e, _)| e[axis] <= k)
                .map(|(e, c)| (*e, c.clone()))
                .collect(),
        }
    }

    /// Same coefficients, stored at a higher degree (the added range is
    /// unknown, not zero, so use only when the caller knows it vanishes).
    pub fn with_degree(&self, degree: u32) -> Self {
        if degree <= self.degree {
            return self.truncate(degree);
        }
        Jet {
            degree,
            terms: self.terms.clone(),
        }
    }

    /// Multiplicative inverse by Newton iteration `r <- r (2 - a r)`.
    pub fn recip(&self) -> Result<Self, JetError> {
        let c0 = self.constant_term();
        if c0.is_zero() {
            return Err(JetError::NotInvertible);
        }
        let k = self.degree;
        let two = Self::constant(T::from_i64(2), k);
        let mut r = Self::constant(T::one() / c0, k);
        for _ in 0..newton_steps(k) {
            r = &r * &(&two - &(self * &r));
        }
        Ok(r)
    }

    pub fn try_div(&self, other: &Self) -> Result<Self, JetError> {
        Ok(self * &other.recip()?)
    }

    /// Square root by Newton iteration `y <- (y + a/y) / 2`.
    pub fn sqrt(&self) -> Result<Self, JetError> {
        let c0 = self.constant_term();
        if !c0.is_positive() {
            return Err(JetError::NonPositiveConstant);
        }
        let r0 = c0.sqrt_exact().ok_or(JetError::IrrationalRoot)?;
        let k = self.degree;
        let half = T::one() / T::from_i64(2);
        let mut y = Self::constant(r0, k);
        for _ in 0..newton_steps(k) {
            y = (&y + &self.try_div(&y)?).scale(&half);
        }
        Ok(y)
    }

    /// Nested Horner evaluation in `x1`, then `x2`, then `x3`.
    pub fn eval(&self, x: &[T; 3]) -> T {
        let mut by_a: BTreeMap<u32, BTreeMap<u32, BTreeMap<u32, T>>> = BTreeMap::new();
        for (e, c) in &self.terms {
            by_a.entry(e[0])
                .or_default()
                .entry(e[1])
                .or_default()
                .insert(e[2], c.clone());
        }
        horner(&by_a, &x[0], |inner| {
            horner(inner, &x[1], |row| horner(row, &x[2], |c| c.clone()))
        })
    }

    /// Value and gradient at a point.
    pub fn eval_with_gradient(&self, x: &[T; 3]) -> (T, [T; 3]) {
        let g = [
            self.partial(0).eval(x),
            self.partial(1).eval(x),
            self.partial(2).eval(x),
        ];
        (self.eval(x), g)
    }

    pub fn map<U: Field>(&self, f: impl Fn(&T) -> U) -> Jet<U> {
        Jet::from_terms(self.degree, self.terms.iter().map(|(e, c)| (*e, f(c))))
    }

    pub fn to_f64(&self) -> Jet<f64> {
        self.map(|c| c.to_f64())
    }

    pub fn to_json(&self) -> JetJson {
        JetJson {
            degree: self.degree,
            mode: if T::EXACT { "exact" } else { "float" }.to_string(),
            terms: self
                .terms
                .iter()
                .map(|(e, c)| {
                    let (num, den) = c.to_num_den();
                    TermJson {
                        exp: *e,
                        num,
                        den,
                        value: c.to_f64(),
                    }
                })
                .collect(),
        }
    }

    pub fn from_json(j: &JetJson) -> Result<Self, JetError> {
        let expected = if T::EXACT { "exact" } else { "float" };
        if j.mode != expected {
            return Err(JetError::Parse(format!("mode {} does not match {expected}", j.mode)));
        }
        let mut out = Self::zero(j.degree);
        for t in &j.terms {
            if total(&t.exp) > j.degree {
                return Err(JetError::Parse(format!("exponent {:?} above degree", t.exp)));
            }
            let c = T::from_num_den(&t.num, &t.den)
                .ok_or_else(|| JetError::Parse(format!("bad coefficient {}/{}", t.num, t.den)))?;
            out.add_term(t.exp, c);
        }
        Ok(out)
    }
}

fn horner<V, T: Field>(map: &BTreeMap<u32, V>, x: &T, inner: impl Fn(&V) -> T) -> T {
    let Some((&top, _)) = map.iter().next_back() else {
        return T::zero();
    };
    let mut acc = T::zero();
    for p in (0..=top).rev() {
        acc = acc * x.clone();
        if let Some(v) = map.get(&p) {
            acc = acc + inner(v);
        }
    }
    acc
}

fn newton_steps(k: u32) -> u32 {
    // correct order doubles each step: 2^s - 1 >= k
    let mut s = 0;
    while (1u64 << s) - 1 < k as u64 {
        s += 1;
    }
    s + 1
}

/// A float jet flattened for repeated pointwise evaluation.
#[derive(Clone, Debug, Default)]
pub struct CompiledJet {
    degree: usize,
    terms: Vec<([usize; 3], f64)>,
}

impl CompiledJet {
    pub fn eval(&self, x: &[f64; 3]) -> f64 {
        let mut pw = [[1.0; 3]; 32];
        let d = self.degree.min(31);
        for k in 1..=d {
            for a in 0..3 {
                pw[k][a] = pw[k - 1][a] * x[a];
            }
        }
        self.terms
            .iter()
            .map(|(e, c)| c * pw[e[0]][0] * pw[e[1]][1] * pw[e[2]][2])
            .sum()
    }
}

impl Jet<f64> {
    pub fn compile(&self) -> CompiledJet {
        assert!(self.degree < 32, "degree too large to compile");
        CompiledJet {
            degree: self.degree as usize,
            terms: self.terms.iter().map(|(e, c)| (e.map(|k| k as usize), *c)).collect(),
        }
    }
}

impl<T: fmt::Debug> fmt::Debug for Jet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0 + O({})", self.degree + 1);
        }
        let parts: Vec<String> = self
            .terms
            .iter()
            .map(|(e, c)| format!("{c:?}*x1^{}x2^{}x3^{}", e[0], e[1], e[2]))
            .collect();
        write!(f, "{} + O({})", parts.join(" + "), self.degree + 1)
    }
}

impl<'a, T: Field> Add<&'a Jet<T>> for &'a Jet<T> {
    type Output = Jet<T>;
    fn add(self, rhs: &'a Jet<T>) -> Jet<T> {
        let k = self.degree.min(rhs.degree);
        let mut out = self.truncate(k);
        for (e, c) in &rhs.terms {
            out.add_term(*e, c.clone());
        }
        out
    }
}

impl<'a, T: Field> Sub<&'a Jet<T>> for &'a Jet<T> {
    type Output = Jet<T>;
    fn sub(self, rhs: &'a Jet<T>) -> Jet<T> {
        let k = self.degree.min(rhs.degree);
        let mut out = self.truncate(k);
        for (e, c) in &rhs.terms {
            out.add_term(*e, -c.clone());
        }
        out
    }
}

impl<'a, T: Field> Mul<&'a Jet<T>> for &'a Jet<T> {
    type Output = Jet<T>;
    fn mul(self, rhs: &'a Jet<T>) -> Jet<T> {
        let k = self.degree.min(rhs.degree);
        let mut out = Jet::zero(k);
        for (ea, ca) in &self.terms {
            let da = total(ea);
            if da > k {
                continue;
            }
            for (eb, cb) in &rhs.terms {
                if da + total(eb) > k {
                    continue;
                }
                let e = [ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]];
                out.add_term(e, ca.clone() * cb.clone());
            }
        }
        out
    }
}

impl<T: Field> Neg for &Jet<T> {
    type Output = Jet<T>;
    fn neg(self) -> Jet<T> {
        self.scale(&-T::one())
    }
}

macro_rules! by_value {
    ($tr:ident, $m:ident) => {
        impl<T: Field> $tr<Jet<T>> for Jet<T> {
            type Output = Jet<T>;
            fn $m(self, rhs: Jet<T>) -> Jet<T> {
                (&self).$m(&rhs)
            }
        }
    };
}
by_value!(Add, add);
by_value!(Sub, sub);
by_value!(Mul, mul);

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TermJson {
    pub exp: Exp,
    pub num: String,
    pub den: String,
    /// Decimal rendering of `num/den` for readers that ignore exactness.
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct JetJson {
    pub degree: u32,
    pub mode: String,
    pub terms: Vec<TermJson>,
}

/// `m` jets sharing degree and mode: a map `R^3 -> R^m` as series.
#[derive(Clone, PartialEq)]
pub struct MapJet<T> {
    components: Vec<Jet<T>>,
}

impl<T: fmt::Debug> fmt::Debug for MapJet<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(&self.components).finish()
    }
}

impl<T: fmt::Debug> fmt::Debug for JetMatrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JetMatrix")
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("entries", &self.entries)
            .finish()
    }
}

impl<T: Field> MapJet<T> {
    pub fn new(components: Vec<Jet<T>>) -> Result<Self, JetError> {
        if let Some(first) = components.first() {
            if let Some(bad) = components.iter().find(|c| c.degree != first.degree) {
                return Err(JetError::DegreeMismatch {
                    left: first.degree,
                    right: bad.degree,
                });
            }
        }
        Ok(MapJet { components })
    }

    pub fn zero(m: usize, degree: u32) -> Self {
        MapJet {
            components: vec![Jet::zero(degree); m],
        }
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn degree(&self) -> u32 {
        self.components.first().map_or(0, |c| c.degree)
    }

    pub fn component(&self, alpha: usize) -> &Jet<T> {
        &self.components[alpha]
    }

    pub fn components(&self) -> &[Jet<T>] {
        &self.components
    }

    pub fn into_components(self) -> Vec<Jet<T>> {
        self.components
    }

    /// The `m x 3` gradient `D u` as a jet matrix of degree `K - 1`.
    pub fn gradient(&self) -> JetMatrix<T> {
        JetMatrix::from_fn(self.dim(), 3, |a, i| self.components[a].partial(i))
    }

    pub fn eval(&self, x: &[T; 3]) -> Vec<T> {
        self.components.iter().map(|c| c.eval(x)).collect()
    }

    pub fn to_f64(&self) -> MapJet<f64> {
        MapJet {
            components: self.components.iter().map(Jet::to_f64).collect(),
        }
    }

    pub fn truncate(&self, k: u32) -> Self {
        MapJet {
            components: self.components.iter().map(|c| c.truncate(k)).collect(),
        }
    }

    pub fn to_json(&self) -> Vec<JetJson> {
        self.components.iter().map(Jet::to_json).collect()
    }
}

/// A rectangular grid of jets (metrics, their inverses, Hessians).
#[derive(Clone, PartialEq)]
pub struct JetMatrix<T> {
    rows: usize,
    cols: usize,
    entries: Vec<Jet<T>>,
}

impl<T: Field> JetMatrix<T> {
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Jet<T>) -> Self {
        let mut entries = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                entries.push(f(i, j));
            }
        }
        JetMatrix { rows, cols, entries }
    }

    pub fn identity(n: usize, degree: u32) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { Jet::one(degree) } else { Jet::zero(degree) })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn degree(&self) -> u32 {
        self.entries.iter().map(Jet::degree).min().unwrap_or(0)
    }

    pub fn get(&self, i: usize, j: usize) -> &Jet<T> {
        &self.entries[i * self.cols + j]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).clone())
    }

    pub fn try_mul(&self, other: &Self) -> Result<Self, JetError> {
        if self.cols != other.rows {
            return Err(JetError::Shape(format!(
                "{}x{} times {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(self.mul(other))
    }

    fn mul(&self, other: &Self) -> Self {
        let k = self.degree().min(other.degree());
        Self::from_fn(self.rows, other.cols, |i, j| {
            let mut acc = Jet::zero(k);
            for l in 0..self.cols {
                acc = &acc + &(self.get(i, l) * other.get(l, j));
            }
            acc
        })
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j) + other.get(i, j))
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self.get(i, j) - other.get(i, j))
    }

    pub fn map_entries(&self, f: impl Fn(&Jet<T>) -> Jet<T>) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| f(self.get(i, j)))
    }

    pub fn constant_part(&self) -> Mat<T> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j).constant_term())
    }

    /// Metric `I + AᵀA` of a gradient matrix.
    pub fn metric(&self) -> Self {
        let k = self.degree();
        Self::identity(self.cols, k).add(&self.transpose().mul(self))
    }

    /// Two-sided inverse. Small matrices use the adjugate over the
    /// determinant; larger ones Newton iteration `X <- X (2I - G X)` seeded
    /// with the inverse of the constant-term matrix.
    pub fn inverse(&self) -> Result<Self, JetError> {
        if self.rows != self.cols {
            return Err(JetError::Shape("inverse of non-square jet matrix".into()));
        }
        let n = self.rows;
        if n <= 4 {
            let all: Vec<usize> = (0..n).collect();
            let det = cofactor_det(self, &all, &all);
            let inv_det = det.recip().map_err(|_| JetError::SingularMatrix)?;
            return Ok(Self::from_fn(n, n, |i, j| {
                // entry (i, j) is the (j, i) cofactor
                let rows: Vec<usize> = all.iter().copied().filter(|&r| r != j).collect();
                let cols: Vec<usize> = all.iter().copied().filter(|&c| c != i).collect();
                let minor = cofactor_det(self, &rows, &cols);
                let c = &minor * &inv_det;
                if (i + j) % 2 == 0 {
                    c
                } else {
                    -&c
                }
            }));
        }
        let k = self.degree();
        let c0 = self.constant_part().inverse().ok_or(JetError::SingularMatrix)?;
        let mut x = Self::from_fn(n, n, |i, j| Jet::constant(c0[(i, j)].clone(), k));
        let two = Self::identity(n, k).map_entries(|e| e.scale(&T::from_i64(2)));
        for _ in 0..newton_steps(k) {
            x = x.mul(&two.sub(&self.mul(&x)));
        }
        Ok(x)
    }

    /// Determinant by cofactor expansion (sizes here are at most 4).
    pub fn det(&self) -> Result<Jet<T>, JetError> {
        if self.rows != self.cols {
            return Err(JetError::Shape("determinant of non-square jet matrix".into()));
        }
        Ok(cofactor_det(
            self,
            &(0..self.rows).collect::<Vec<_>>(),
            &(0..self.cols).collect::<Vec<_>>(),
        ))
    }

    pub fn eval(&self, x: &[T; 3]) -> Mat<T> {
        Mat::from_fn(self.rows, self.cols, |i, j| self.get(i, j).eval(x))
    }

    pub fn to_f64(&self) -> JetMatrix<f64> {
        JetMatrix::from_fn(self.rows, self.cols, |i, j| self.get(i, j).to_f64())
    }
}

fn cofactor_det<T: Field>(m: &JetMatrix<T>, rows: &[usize], cols: &[usize]) -> Jet<T> {
    let k = m.degree();
    match rows.len() {
        0 => Jet::one(k),
        1 => m.get(rows[0], cols[0]).clone(),
        _ => {
            let mut acc = Jet::zero(k);
            let r0 = rows[0];
            for (idx, &c) in cols.iter().enumerate() {
                let sub_cols: Vec<usize> = cols.iter().copied().filter(|&cc| cc != c).collect();
                let minor = cofactor_det(m, &rows[1..], &sub_cols);
                let term = m.get(r0, c) * &minor;
                acc = if idx % 2 == 0 { &acc + &term } else { &acc - &term };
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, Rational};
    use proptest::prelude::*;

    type Q = Rational;

    fn x(i: usize) -> Jet<Q> {
        Jet::var(i, 6)
    }

    /// Naive double loop over all stored terms, truncated at the end.
    fn convolution_oracle(a: &Jet<Q>, b: &Jet<Q>) -> Jet<Q> {
        let k = a.degree();
        let mut buf: Vec<(Exp, Q)> = Vec::new();
        for (ea, ca) in a.terms() {
            for (eb, cb) in b.terms() {
                buf.push(([ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2]], ca * cb));
            }
        }
        Jet::from_terms(k, buf)
    }

    fn naive_eval(a: &Jet<Q>, p: &[Q; 3]) -> Q {
        let mut s = Q::from_i64(0);
        for (e, c) in a.terms() {
            let mut t = c.clone();
            for i in 0..3 {
                for _ in 0..e[i] {
                    t = t * p[i].clone();
                }
            }
            s = s + t;
        }
        s
    }

    fn arb_jet(k: u32) -> impl Strategy<Value = Jet<Q>> {
        prop::collection::vec(((0u32..=k, 0u32..=k, 0u32..=k), -9i64..=9, 1i64..=5), 0..24)
            .prop_map(move |t| Jet::from_terms(k, t.into_iter().map(|((a, b, c), n, d)| ([a, b, c], rat(n, d)))))
    }

    fn arb_unit_jet(k: u32, c0: Q) -> impl Strategy<Value = Jet<Q>> {
        arb_jet(k).prop_map(move |j| {
            let shift = c0.clone() - j.constant_term();
            &j + &Jet::constant(shift, k)
        })
    }

    #[test]
    fn monomial_product() {
        let p = &x(1) * &x(2);
        assert_eq!(&p * &p, Jet::monomial([0, 2, 2], rat(1, 1), 6));
        let a = &p + &Jet::constant(rat(3, 2), 6);
        assert_eq!(&Jet::one(6) * &a, a);
    }

    #[test]
    fn truncation_drops_high_terms() {
        let p = &x(0) * &x(0);
        let p3 = &(&p * &p) * &p;
        assert_eq!(p3.num_terms(), 1);
        let p4 = &p3 * &p;
        assert!(p4.is_zero());
    }

    #[test]
    fn checked_ops_reject_degree_mismatch() {
        let a = Jet::<Q>::one(6);
        let b = Jet::<Q>::one(5);
        assert_eq!(a.try_mul(&b), Err(JetError::DegreeMismatch { left: 6, right: 5 }));
        assert!(a.try_add(&b).is_err());
        assert_eq!((&a + &b).degree(), 5);
    }

    #[test]
    fn partials() {
        let c = &(&x(0) * &x(0)) * &x(0);
        assert_eq!(c.partial(0), Jet::monomial([2, 0, 0], rat(3, 1), 5));
        assert_eq!((&x(1) * &x(2)).partial(2), Jet::var(1, 5));
        assert_eq!(c.partial(0).degree(), 5);
    }

    #[test]
    fn sqrt_of_one_and_of_square_constant() {
        assert_eq!(Jet::<Q>::one(6).sqrt().unwrap(), Jet::one(6));
        let a = &Jet::constant(rat(25, 16), 6) + &(&x(0) * &x(1));
        let r = a.sqrt().unwrap();
        assert_eq!(r.constant_term(), rat(5, 4));
        assert_eq!(&r * &r, a);
    }

    #[test]
    fn sqrt_errors() {
        let neg = Jet::constant(rat(-1, 1), 4);
        assert_eq!(neg.sqrt(), Err(JetError::NonPositiveConstant));
        let two = &Jet::constant(rat(2, 1), 4) + &Jet::var(0, 4);
        assert_eq!(two.sqrt(), Err(JetError::IrrationalRoot));
        let f = Jet::<f64>::constant(2.0, 4);
        assert!((f.sqrt().unwrap().constant_term() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn recip_requires_unit() {
        assert_eq!(Jet::<Q>::var(0, 3).recip(), Err(JetError::NotInvertible));
    }

    #[test]
    fn eval_examples() {
        let p = &x(1) * &x(2);
        assert_eq!(p.eval(&[rat(0, 1), rat(2, 1), rat(3, 1)]), rat(6, 1));
        assert_eq!(Jet::<Q>::zero(6).eval(&[rat(7, 1), rat(1, 1), rat(-2, 1)]), rat(0, 1));
    }

    #[test]
    fn identity_matrix_inverse() {
        let id = JetMatrix::<Q>::identity(3, 6);
        assert_eq!(id.inverse().unwrap(), id);
    }

    #[test]
    fn large_matrix_uses_newton_inverse() {
        let m = JetMatrix::from_fn(5, 5, |i, j| {
            let base = Jet::<Q>::monomial([(i % 3) as u32, (j % 2) as u32, 0], rat(1, (1 + i + j) as i64), 4);
            if i == j {
                &base + &Jet::constant(rat(7, 1), 4)
            } else {
                base
            }
        });
        let inv = m.inverse().unwrap();
        assert_eq!(m.try_mul(&inv).unwrap(), JetMatrix::identity(5, 4));
    }

    #[test]
    fn singular_matrix_inverse_errors() {
        let m = JetMatrix::from_fn(2, 2, |_, _| Jet::<Q>::one(3));
        assert_eq!(m.inverse(), Err(JetError::SingularMatrix));
    }

    #[test]
    fn json_roundtrip_exact() {
        let a = &Jet::constant(rat(29, 3), 6) + &(&x(0) * &x(2)).scale(&rat(-6, 5));
        let j = a.to_json();
        assert_eq!(j.mode, "exact");
        let s = serde_json::to_string(&j).unwrap();
        let back: JetJson = serde_json::from_str(&s).unwrap();
        assert_eq!(Jet::<Q>::from_json(&back).unwrap(), a);
        assert!(Jet::<f64>::from_json(&back).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn product_matches_convolution(a in arb_jet(4), b in arb_jet(4)) {
            prop_assert_eq!(&a * &b, convolution_oracle(&a, &b));
        }

        #[test]
        fn ring_axioms(a in arb_jet(4), b in arb_jet(4), c in arb_jet(4)) {
            prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
            prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
            prop_assert_eq!(&a * &b, &b * &a);
        }

        #[test]
        fn leibniz_rule(a in arb_jet(5), b in arb_jet(5), axis in 0usize..3) {
            let lhs = (&a * &b).partial(axis);
            let rhs = &(&a.partial(axis) * &b) + &(&a * &b.partial(axis));
            prop_assert_eq!(lhs, rhs.truncate(4));
        }

        #[test]
        fn partials_commute(a in arb_jet(5)) {
            prop_assert_eq!(a.partial(0).partial(1), a.partial(1).partial(0));
        }

        #[test]
        fn sqrt_squares_back(a in arb_unit_jet(5, rat(9, 4))) {
            let r = a.sqrt().unwrap();
            prop_assert_eq!(r.constant_term(), rat(3, 2));
            prop_assert!((&(&r * &r) - &a).is_zero());
        }

        #[test]
        fn recip_is_inverse(a in arb_unit_jet(5, rat(-7, 3))) {
            let r = a.recip().unwrap();
            prop_assert_eq!(&a * &r, Jet::one(5));
        }

        #[test]
        fn horner_matches_naive(a in arb_jet(5), p in prop::array::uniform3((-5i64..=5, 1i64..=4))) {
            let pt = [rat(p[0].0, p[0].1), rat(p[1].0, p[1].1), rat(p[2].0, p[2].1)];
            prop_assert_eq!(a.eval(&pt), naive_eval(&a, &pt));
        }

        #[test]
        fn integrate_then_differentiate(a in arb_jet(4), axis in 0usize..3) {
            prop_assert_eq!(a.integrate(axis).partial(axis), a);
        }

        #[test]
        fn matrix_inverse_two_sided(entries in prop::collection::vec(arb_jet(4), 9)) {
            // diagonal dominance in the constant term keeps it invertible
            let m = JetMatrix::from_fn(3, 3, |i, j| {
                let e = &entries[3 * i + j];
                if i == j { e + &Jet::constant(rat(40, 1), 4) } else { e.clone() }
            });
            let inv = m.inverse().unwrap();
            let id = JetMatrix::identity(3, 4);
            prop_assert_eq!(m.try_mul(&inv).unwrap(), id.clone());
            prop_assert_eq!(inv.try_mul(&m).unwrap(), id);
        }
    }
}
