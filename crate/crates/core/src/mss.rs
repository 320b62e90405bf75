//! Residuals of the minimal surface system in its outer (divergence), inner
//! (domain variation), non-divergence and once-differentiated forms.
//!
//! Jet residuals are exact series; an operator consuming two derivatives of
//! a degree-`K` map returns jets of degree `K - 2`, so no coefficient beyond
//! what is actually determined is ever compared. Grid residuals use
//! second-order finite differences and are reported on interior nodes only.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{GridError, GridMap};
use crate::jets::{Jet, JetError, JetMatrix, MapJet};
use crate::linalg::Mat;
use crate::scalar::{Field, Real};

#[derive(Debug, Error)]
pub enum MssError {
    #[error("map jet of degree {have} is too short: need at least {need}")]
    DegreeTooLow { have: u32, need: u32 },
    #[error("forcing has {have} components, map has {want}")]
    ForcingShape { have: usize, want: usize },
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Form {
    Outer,
    Inner,
    Nondiv,
    Differentiated,
}

/// `g = I + MᵀM`, its inverse and `sqrt(det g)` for a numeric gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricData<T> {
    pub g: Mat<T>,
    pub g_inv: Mat<T>,
    pub sqrt_det: T,
}

pub fn metric_from_gradient<T: Real>(m: &Mat<T>) -> MetricData<T> {
    let g = m.metric();
    let g_inv = g.inverse().expect("I + MᵀM is positive definite");
    let sqrt_det = g.det().sqrt();
    MetricData { g, g_inv, sqrt_det }
}

/// Jet version of [`MetricData`], together with the gradient it came from.
#[derive(Clone, Debug)]
pub struct JetMetric<T> {
    pub du: JetMatrix<T>,
    pub g: JetMatrix<T>,
    pub g_inv: JetMatrix<T>,
    pub sqrt_det: Jet<T>,
}

impl<T: Field> JetMetric<T> {
    pub fn of(u: &MapJet<T>) -> Result<Self, MssError> {
        Self::from_gradient(u.gradient())
    }

    pub fn from_gradient(du: JetMatrix<T>) -> Result<Self, MssError> {
        let g = du.metric();
        let g_inv = g.inverse()?;
        let sqrt_det = g.det()?.sqrt()?;
        Ok(JetMetric { du, g, g_inv, sqrt_det })
    }

    /// Metric and inverse only, for callers that never need `sqrt(det g)`
    /// (its constant term may be irrational).
    pub fn without_volume(u: &MapJet<T>) -> Result<(JetMatrix<T>, JetMatrix<T>), MssError> {
        let g = u.gradient().metric();
        let g_inv = g.inverse()?;
        Ok((g, g_inv))
    }
}

/// Per-component residual jets of one form.
#[derive(Clone, Debug)]
pub struct JetResidual<T> {
    pub form: Form,
    pub components: Vec<Jet<T>>,
}

impl<T: Field> JetResidual<T> {
    /// Degree to which the residual is determined.
    pub fn degree(&self) -> u32 {
        self.components.iter().map(Jet::degree).min().unwrap_or(0)
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(Jet::is_zero)
    }

    /// Total number of nonzero coefficients across components.
    pub fn nonzero_terms(&self) -> usize {
        self.components.iter().map(Jet::num_terms).sum()
    }
}

fn check(u: &MapJet<impl Field>, need: u32) -> Result<(), MssError> {
    if u.degree() < need {
        return Err(MssError::DegreeTooLow { have: u.degree(), need });
    }
    Ok(())
}

fn forcing<T: Field>(u: &MapJet<T>, f: Option<&MapJet<T>>) -> Result<Vec<Jet<T>>, MssError> {
    match f {
        None => Ok(vec![Jet::zero(u.degree()); u.dim()]),
        Some(f) if f.dim() != u.dim() => Err(MssError::ForcingShape {
            have: f.dim(),
            want: u.dim(),
        }),
        Some(f) => Ok(f.components().to_vec()),
    }
}

fn second_partials<T: Field>(u: &Jet<T>) -> [[Jet<T>; 3]; 3] {
    let d = [u.partial(0), u.partial(1), u.partial(2)];
    std::array::from_fn(|i| std::array::from_fn(|j| d[i].partial(j)))
}

/// `sum_ij a^{ij} h_ij`.
fn contract<T: Field>(a: &JetMatrix<T>, h: &[[Jet<T>; 3]; 3]) -> Jet<T> {
    let k = a.degree().min(h[0][0].degree());
    let mut acc = Jet::zero(k);
    for (i, row) in h.iter().enumerate() {
        for (j, hij) in row.iter().enumerate() {
            acc = &acc + &(a.get(i, j) * hij);
        }
    }
    acc
}

/// `∂_i(sqrt(det g) g^{ij} ∂_j u^α) - f^α`.
pub fn outer_residual<T: Field>(u: &MapJet<T>, f: Option<&MapJet<T>>) -> Result<JetResidual<T>, MssError> {
    check(u, 2)?;
    let f = forcing(u, f)?;
    let met = JetMetric::of(u)?;
    let mut comps = Vec::with_capacity(u.dim());
    for (alpha, f_alpha) in f.iter().enumerate() {
        let mut div = Jet::zero(u.degree() - 2);
        for i in 0..3 {
            let mut flux = Jet::zero(u.degree() - 1);
            for j in 0..3 {
                flux = &flux + &(met.g_inv.get(i, j) * met.du.get(alpha, j));
            }
            div = &div + &(&met.sqrt_det * &flux).partial(i);
        }
        comps.push(&div - f_alpha);
    }
    Ok(JetResidual {
        form: Form::Outer,
        components: comps,
    })
}

/// `∂_i(sqrt(det g) g^{ij}) + ∂_j u · f`, one component per `j`.
pub fn inner_residual<T: Field>(u: &MapJet<T>, f: Option<&MapJet<T>>) -> Result<JetResidual<T>, MssError> {
    check(u, 2)?;
    let f = forcing(u, f)?;
    let met = JetMetric::of(u)?;
    let mut comps = Vec::with_capacity(3);
    for j in 0..3 {
        let mut acc = Jet::zero(u.degree() - 2);
        for i in 0..3 {
            acc = &acc + &(&met.sqrt_det * met.g_inv.get(i, j)).partial(i);
        }
        for (alpha, fa) in f.iter().enumerate() {
            acc = &acc + &(met.du.get(alpha, j) * fa);
        }
        comps.push(acc);
    }
    Ok(JetResidual {
        form: Form::Inner,
        components: comps,
    })
}

/// `sqrt(det g) g^{ij} u^α_ij - f^α - (f·∂_j u) ∂_j u^α`.
pub fn nondiv_residual<T: Field>(u: &MapJet<T>, f: Option<&MapJet<T>>) -> Result<JetResidual<T>, MssError> {
    check(u, 2)?;
    let f = forcing(u, f)?;
    let met = JetMetric::of(u)?;
    let k = u.degree() - 2;
    // (f · ∂_j u) for each j
    let fdu: Vec<Jet<T>> = (0..3)
        .map(|j| {
            let mut acc = Jet::zero(k);
            for (alpha, fa) in f.iter().enumerate() {
                acc = &acc + &(fa * met.du.get(alpha, j));
            }
            acc
        })
        .collect();
    let mut comps = Vec::with_capacity(u.dim());
    for (alpha, fa) in f.iter().enumerate() {
        let hess = second_partials(u.component(alpha));
        let mut r = &(&met.sqrt_det * &contract(&met.g_inv, &hess)) - fa;
        for (j, fj) in fdu.iter().enumerate() {
            r = &r - &(fj * met.du.get(alpha, j));
        }
        comps.push(r);
    }
    Ok(JetResidual {
        form: Form::Nondiv,
        components: comps,
    })
}

/// The two pieces of `∂_1(g^{ij} u^α_ij)`.
#[derive(Clone, Debug)]
pub struct DifferentiatedTerms<T> {
    /// `g^{ij} u^α_{1ij}`.
    pub third_order: Jet<T>,
    /// `∂_1 g^{ij} u^α_{ij}`.
    pub metric_term: Jet<T>,
}

impl<T: Field> DifferentiatedTerms<T> {
    pub fn sum(&self) -> Jet<T> {
        &self.third_order + &self.metric_term
    }
}

/// `g^{ij} u^α_{1ij} + ∂_1 g^{ij} u^α_{ij}` for an unforced solution.
pub fn differentiated_terms<T: Field>(u: &MapJet<T>, alpha: usize) -> Result<DifferentiatedTerms<T>, MssError> {
    check(u, 3)?;
    let (_, g_inv) = JetMetric::without_volume(u)?;
    let hess = second_partials(u.component(alpha));
    let hess1: [[Jet<T>; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| hess[i][j].partial(0)));
    let dg_inv = g_inv.map_entries(|e| e.partial(0));
    Ok(DifferentiatedTerms {
        third_order: contract(&g_inv, &hess1),
        metric_term: contract(&dg_inv, &hess),
    })
}

pub fn differentiated_residual<T: Field>(u: &MapJet<T>) -> Result<JetResidual<T>, MssError> {
    let comps = (0..u.dim())
        .map(|a| differentiated_terms(u, a).map(|t| t.sum()))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(JetResidual {
        form: Form::Differentiated,
        components: comps,
    })
}

/// Residual values on interior nodes of a grid.
#[derive(Clone, Debug, Serialize)]
pub struct GridResidual {
    pub form: Form,
    pub nodes: Vec<usize>,
    pub coords: Vec<[f64; 3]>,
    pub values: Vec<Vec<f64>>,
}

impl GridResidual {
    pub fn max_abs(&self) -> f64 {
        self.values
            .iter()
            .flat_map(|v| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Largest residual over nodes whose coordinates satisfy `keep`.
    pub fn max_abs_where(&self, keep: impl Fn([f64; 3]) -> bool) -> f64 {
        self.values
            .iter()
            .zip(&self.coords)
            .filter(|(_, x)| keep(**x))
            .flat_map(|(v, _)| v.iter())
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// CSV with node coordinates and one column per residual component.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let ncomp = self.values.first().map_or(0, Vec::len);
        let mut header = vec!["x1".to_string(), "x2".into(), "x3".into()];
        header.extend((1..=ncomp).map(|c| format!("r{c}")));
        writeln!(w, "{}", header.join(","))?;
        for (x, v) in self.coords.iter().zip(&self.values) {
            let mut row: Vec<String> = x.iter().map(|c| format!("{c:.10e}")).collect();
            row.extend(v.iter().map(|r| format!("{r:.10e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

type Forcing<'a> = &'a (dyn Fn([f64; 3]) -> [f64; 2] + Sync);

fn node_metric(u: &GridMap, n: [usize; 3]) -> (Mat<f64>, MetricData<f64>) {
    let d = u.nodal_gradient(n);
    let m = Mat::from_fn(2, 3, |a, i| d[a][i]);
    let md = metric_from_gradient(&m);
    (m, md)
}

fn interior_nodes(u: &GridMap) -> Vec<usize> {
    (0..u.len()).filter(|&i| u.is_interior(u.node(i))).collect()
}

fn centered<T>(u: &GridMap, n: [usize; 3], axis: usize, field: &[T], pick: impl Fn(&T) -> f64) -> f64 {
    let mut p = n;
    p[axis] += 1;
    let mut m = n;
    m[axis] -= 1;
    (pick(&field[u.idx(p)]) - pick(&field[u.idx(m)])) / (2.0 * u.h[axis])
}

/// Grid outer residual: nodal fluxes, then centered divergence.
pub fn outer_residual_grid(u: &GridMap, f: Forcing<'_>) -> GridResidual {
    let flux: Vec<[[f64; 3]; 2]> = (0..u.len())
        .map(|i| {
            let (m, md) = node_metric(u, u.node(i));
            let p = m.matmul(&md.g_inv).scale(&md.sqrt_det);
            [[p[(0, 0)], p[(0, 1)], p[(0, 2)]], [p[(1, 0)], p[(1, 1)], p[(1, 2)]]]
        })
        .collect();
    let nodes = interior_nodes(u);
    let mut coords = Vec::with_capacity(nodes.len());
    let mut values = Vec::with_capacity(nodes.len());
    for &i in &nodes {
        let n = u.node(i);
        let x = u.coords(n);
        let fx = f(x);
        let v: Vec<f64> = (0..2)
            .map(|a| (0..3).map(|ax| centered(u, n, ax, &flux, |p| p[a][ax])).sum::<f64>() - fx[a])
            .collect();
        coords.push(x);
        values.push(v);
    }
    GridResidual {
        form: Form::Outer,
        nodes,
        coords,
        values,
    }
}

/// Grid inner residual `∂_i(sqrt(det g) g^{ij}) + ∂_j u · f`.
pub fn inner_residual_grid(u: &GridMap, f: Forcing<'_>) -> GridResidual {
    let q: Vec<[[f64; 3]; 3]> = (0..u.len())
        .map(|i| {
            let (_, md) = node_metric(u, u.node(i));
            std::array::from_fn(|a| std::array::from_fn(|b| md.sqrt_det * md.g_inv[(a, b)]))
        })
        .collect();
    let nodes = interior_nodes(u);
    let mut coords = Vec::with_capacity(nodes.len());
    let mut values = Vec::with_capacity(nodes.len());
    for &i in &nodes {
        let n = u.node(i);
        let x = u.coords(n);
        let fx = f(x);
        let d = u.nodal_gradient(n);
        let v: Vec<f64> = (0..3)
            .map(|j| {
                (0..3).map(|ax| centered(u, n, ax, &q, |m| m[ax][j])).sum::<f64>() + d[0][j] * fx[0] + d[1][j] * fx[1]
            })
            .collect();
        coords.push(x);
        values.push(v);
    }
    GridResidual {
        form: Form::Inner,
        nodes,
        coords,
        values,
    }
}

/// Grid non-divergence residual from centered Hessians.
pub fn nondiv_residual_grid(u: &GridMap, f: Forcing<'_>) -> GridResidual {
    let nodes = interior_nodes(u);
    let mut coords = Vec::with_capacity(nodes.len());
    let mut values = Vec::with_capacity(nodes.len());
    for &i in &nodes {
        let n = u.node(i);
        let x = u.coords(n);
        let (m, md) = node_metric(u, n);
        let fx = f(x);
        let v: Vec<f64> = (0..2)
            .map(|a| {
                let h = u.nodal_hessian(n, a);
                let mut s = 0.0;
                for ii in 0..3 {
                    for jj in 0..3 {
                        s += md.g_inv[(ii, jj)] * h[ii][jj];
                    }
                }
                let mut r = md.sqrt_det * s - fx[a];
                for j in 0..3 {
                    let fdu = fx[0] * m[(0, j)] + fx[1] * m[(1, j)];
                    r -= fdu * m[(a, j)];
                }
                r
            })
            .collect();
        coords.push(x);
        values.push(v);
    }
    GridResidual {
        form: Form::Nondiv,
        nodes,
        coords,
        values,
    }
}

/// Non-divergence residual of an analytic map given its value derivatives
/// at a point: gradient `du` (m x n) and Hessians `hess[α]`.
pub fn nondiv_residual_pointwise<T: Real>(du: &Mat<T>, hess: &[Mat<T>], f: &[T]) -> Vec<T> {
    let md = metric_from_gradient(du);
    let n = du.cols();
    (0..du.rows())
        .map(|a| {
            let mut r = md.sqrt_det * md.g_inv.dot(&hess[a]) - f[a];
            for j in 0..n {
                let mut fdu = T::zero();
                for (b, fb) in f.iter().enumerate() {
                    fdu = fdu + *fb * du[(b, j)];
                }
                r = r - fdu * du[(a, j)];
            }
            r
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::{rat, Rational};
    use proptest::prelude::*;

    type Q = Rational;
    const K: u32 = 5;

    fn xv(i: usize) -> Jet<Q> {
        Jet::var(i, K)
    }

    fn affine() -> MapJet<Q> {
        // det g = (25/16)(25/9), a rational square
        let a = &xv(1).scale(&rat(-3, 4)) + &Jet::constant(rat(2, 1), K);
        let b = xv(2).scale(&rat(4, 3));
        MapJet::new(vec![a, b]).unwrap()
    }

    /// `(Re z², Im z²)` with `z = x1 + i x2`: a holomorphic, hence minimal, graph.
    fn holomorphic() -> MapJet<Q> {
        let re = &(&xv(0) * &xv(0)) - &(&xv(1) * &xv(1));
        let im = (&xv(0) * &xv(1)).scale(&rat(2, 1));
        MapJet::new(vec![re, im]).unwrap()
    }

    fn arb_map() -> impl Strategy<Value = MapJet<Q>> {
        // no linear part, so det g has constant term 1
        let term = ((0u32..=3, 0u32..=3, 0u32..=3), -4i64..=4, 1i64..=3);
        let comp = prop::collection::vec(term, 1..8).prop_map(|t| {
            Jet::from_terms(
                K,
                t.into_iter()
                    .filter(|((a, b, c), _, _)| a + b + c >= 2)
                    .map(|((a, b, c), n, d)| ([a, b, c], rat(n, d))),
            )
        });
        (comp.clone(), comp).prop_map(|(a, b)| MapJet::new(vec![a, b]).unwrap())
    }

    #[test]
    fn metric_of_zero_gradient() {
        let md = metric_from_gradient(&Mat::<f64>::zeros(2, 3));
        assert_eq!(md.g, Mat::identity(3));
        assert_eq!(md.sqrt_det, 1.0);
    }

    #[test]
    fn all_forms_vanish_on_affine() {
        let u = affine();
        for r in [
            outer_residual(&u, None).unwrap(),
            inner_residual(&u, None).unwrap(),
            nondiv_residual(&u, None).unwrap(),
            differentiated_residual(&u).unwrap(),
        ] {
            assert!(r.is_zero(), "{:?}", r.form);
        }
    }

    #[test]
    fn holomorphic_graph_is_minimal() {
        let u = holomorphic();
        assert!(outer_residual(&u, None).unwrap().is_zero());
        assert!(inner_residual(&u, None).unwrap().is_zero());
        assert!(nondiv_residual(&u, None).unwrap().is_zero());
        assert!(differentiated_residual(&u).unwrap().is_zero());
        assert_eq!(outer_residual(&u, None).unwrap().degree(), K - 2);
    }

    #[test]
    fn degree_guard() {
        let u = MapJet::new(vec![Jet::<Q>::var(0, 1), Jet::zero(1)]).unwrap();
        assert!(matches!(outer_residual(&u, None), Err(MssError::DegreeTooLow { .. })));
        let u2 = u.truncate(1);
        let u2 = MapJet::new(u2.components().iter().map(|c| c.with_degree(2)).collect()).unwrap();
        assert!(matches!(
            differentiated_residual(&u2),
            Err(MssError::DegreeTooLow { .. })
        ));
    }

    #[test]
    fn grid_affine_residuals_vanish() {
        let g = GridMap::from_fn([5, 5, 5], [0.0; 3], [1.0; 3], |x| {
            [0.1 * x[0] + 0.2 * x[2], -0.3 * x[1]]
        })
        .unwrap();
        let zero = |_: [f64; 3]| [0.0, 0.0];
        assert!(outer_residual_grid(&g, &zero).max_abs() < 1e-12);
        assert!(inner_residual_grid(&g, &zero).max_abs() < 1e-12);
        assert!(nondiv_residual_grid(&g, &zero).max_abs() < 1e-12);
    }

    fn exp_map(x: [f64; 3]) -> [f64; 2] {
        // holomorphic 0.3·e^z in (x1, x2), constant in x3
        let e = 0.3 * x[0].exp();
        [e * x[1].cos(), e * x[1].sin()]
    }

    #[test]
    fn grid_residuals_second_order() {
        let zero = |_: [f64; 3]| [0.0, 0.0];
        let run = |n: usize| {
            let g = GridMap::from_fn([n, n, n], [-0.5; 3], [0.5; 3], exp_map).unwrap();
            let keep = |x: [f64; 3]| x.iter().all(|c| c.abs() <= 0.25 + 1e-12);
            [
                outer_residual_grid(&g, &zero).max_abs_where(keep),
                inner_residual_grid(&g, &zero).max_abs_where(keep),
                nondiv_residual_grid(&g, &zero).max_abs_where(keep),
            ]
        };
        let coarse = run(9);
        let fine = run(17);
        for (c, f) in coarse.iter().zip(&fine) {
            let ratio = c / f;
            assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
        }
    }

    #[test]
    fn residual_csv_has_header() {
        let g = GridMap::from_fn([5, 5, 5], [0.0; 3], [1.0; 3], exp_map).unwrap();
        let r = nondiv_residual_grid(&g, &|_| [0.0, 0.0]);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("x1,x2,x3,r1,r2\n"));
        assert_eq!(s.lines().count(), 1 + 27);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        /// With `f` defined as the divergence of the flux, the outer form
        /// holds by construction and the other two forms must follow.
        #[test]
        fn outer_implies_inner_and_nondiv(u in arb_map()) {
            let div = outer_residual(&u, None).unwrap();
            let f = MapJet::new(div.components.clone()).unwrap();
            prop_assert!(outer_residual(&u, Some(&f)).unwrap().is_zero());
            prop_assert!(inner_residual(&u, Some(&f)).unwrap().is_zero());
            prop_assert!(nondiv_residual(&u, Some(&f)).unwrap().is_zero());
        }

        /// For arbitrary `u, f`: inner_k = -outer · ∂_k u and
        /// outer = nondiv + inner_j ∂_j u, as exact jets.
        #[test]
        fn residual_identities(u in arb_map(), c in -3i64..=3) {
            let f = MapJet::new(vec![
                &xv(0).scale(&rat(c, 1)) + &Jet::constant(rat(1, 2), K),
                &xv(1) * &xv(2),
            ]).unwrap();
            let o = outer_residual(&u, Some(&f)).unwrap();
            let i = inner_residual(&u, Some(&f)).unwrap();
            let n = nondiv_residual(&u, Some(&f)).unwrap();
            let du = u.gradient();
            for k in 0..3 {
                let mut s = i.components[k].clone();
                for a in 0..2 {
                    s = &s + &(&o.components[a] * du.get(a, k));
                }
                prop_assert!(s.is_zero());
            }
            for a in 0..2 {
                let mut s = &n.components[a] - &o.components[a];
                for j in 0..3 {
                    s = &s + &(&i.components[j] * du.get(a, j));
                }
                prop_assert!(s.is_zero());
            }
        }
    }
}
