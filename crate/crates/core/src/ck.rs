//! Cauchy-Kovalevskaya series solutions of the minimal surface system with
//! data on `{x1 = 0}`, and the forced free-boundary construction built on
//! top of them (forcing `f`, potential `H`, region `{H > 0}`, and the jets of
//! the exterior continuation along its boundary).
//!
//! The solver works with the rescaled forcing `f̂ = f / sqrt(det g)`, for
//! which the non-divergence system reads
//! `S^α = f̂^α + Σ_γ f̂^γ (∇u^γ · ∇u^α)` with `S^α = g^{ij} u^α_ij`.
//! Frozen components are given in full; their forcing is whatever makes this
//! identity hold, found by solving `(I + G_FF) f̂_F = S_F - G_FN f̂_N`.
//! Every other component is advanced by solving for `u^α_11`.

use serde::Serialize;
use thiserror::Error;

use crate::jets::{CompiledJet, Jet, JetError, JetMatrix, MapJet};
use crate::mss::MssError;
use crate::parallel;
use crate::scalar::{rat, Field, Rational};

/// Largest truncation degree accepted by [`ck_solve`].
pub const MAX_DEGREE: u32 = 14;

#[derive(Debug, Error)]
pub enum CkError {
    #[error("Cauchy data for component {0} depends on x1")]
    DataDependsOnX1(usize),
    #[error("frozen component {0} disagrees with its Cauchy data")]
    InconsistentFrozen(usize),
    #[error("frozen component {0} is given to degree {1}, below the requested {2}")]
    FrozenTooShort(usize, u32, u32),
    #[error("coefficient of u_11 is not invertible (characteristic data)")]
    Characteristic,
    #[error("requested degree {0} exceeds the supported maximum {MAX_DEGREE}")]
    DegreeOverflow(u32),
    #[error("series iteration did not settle")]
    NoFixedPoint,
    #[error("first component is not the prescribed x2*x3")]
    NotPrescribed,
    #[error("delta must be positive for a nondegenerate region")]
    DegenerateRegion,
    #[error("no sign change of H along direction {0:?}; delta is too large for the truncation")]
    NoRoot([f64; 3]),
    #[error("data has {0} components, forcing has {1}")]
    Shape(usize, usize),
    #[error(transparent)]
    Jet(#[from] JetError),
    #[error(transparent)]
    Mss(#[from] MssError),
}

/// Data on `{x1 = 0}`. A frozen component is supplied in full and is not
/// solved for.
#[derive(Clone, Debug)]
pub struct CauchyData<T> {
    pub value_jets: Vec<Jet<T>>,
    pub slope_jets: Vec<Jet<T>>,
    pub frozen: Vec<Option<Jet<T>>>,
}

impl<T: Field> CauchyData<T> {
    pub fn new(value_jets: Vec<Jet<T>>, slope_jets: Vec<Jet<T>>) -> Result<Self, CkError> {
        if value_jets.len() != slope_jets.len() {
            return Err(CkError::Shape(value_jets.len(), slope_jets.len()));
        }
        for (a, (v, s)) in value_jets.iter().zip(&slope_jets).enumerate() {
            if v.terms().any(|(e, _)| e[0] > 0) || s.terms().any(|(e, _)| e[0] > 0) {
                return Err(CkError::DataDependsOnX1(a));
            }
        }
        let m = value_jets.len();
        Ok(CauchyData {
            value_jets,
            slope_jets,
            frozen: vec![None; m],
        })
    }

    /// Mark component `alpha` as given by `full`, which must restrict to the
    /// stored data.
    pub fn freeze(mut self, alpha: usize, full: Jet<T>) -> Result<Self, CkError> {
        let v = full.restrict_zero(0);
        let s = full.partial(0).restrict_zero(0);
        let k = v.degree().min(self.value_jets[alpha].degree());
        let ks = s.degree().min(self.slope_jets[alpha].degree());
        if v.truncate(k) != self.value_jets[alpha].truncate(k) || s.truncate(ks) != self.slope_jets[alpha].truncate(ks)
        {
            return Err(CkError::InconsistentFrozen(alpha));
        }
        self.frozen[alpha] = Some(full);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.value_jets.len()
    }
}

/// A series solution together with the rescaled forcing it satisfies.
#[derive(Clone, Debug)]
pub struct CkSolution<T> {
    pub map: MapJet<T>,
    /// `f̂ = f / sqrt(det g)`, degree `K - 2`; entries for frozen components
    /// are the implied ones.
    pub hat_forcing: Vec<Jet<T>>,
    /// Number of sweeps until the series stopped changing.
    pub sweeps: u32,
}

fn hessian<T: Field>(u: &Jet<T>) -> [[Jet<T>; 3]; 3] {
    let d = [u.partial(0), u.partial(1), u.partial(2)];
    std::array::from_fn(|i| std::array::from_fn(|j| d[i].partial(j)))
}

fn gram<T: Field>(du: &JetMatrix<T>, a: usize, b: usize) -> Jet<T> {
    let mut acc = Jet::zero(du.degree());
    for j in 0..3 {
        acc = &acc + &(du.get(a, j) * du.get(b, j));
    }
    acc
}

/// Solve the minimal surface system (with optional forcing `f` on the
/// non-frozen components) to degree `k`.
pub fn ck_solve<T: Field>(data: &CauchyData<T>, forcing: Option<&MapJet<T>>, k: u32) -> Result<CkSolution<T>, CkError> {
    if k > MAX_DEGREE {
        return Err(CkError::DegreeOverflow(k));
    }
    let m = data.dim();
    if let Some(f) = forcing {
        if f.dim() != m {
            return Err(CkError::Shape(m, f.dim()));
        }
    }
    let free: Vec<usize> = (0..m).filter(|&a| data.frozen[a].is_none()).collect();
    let fixed: Vec<usize> = (0..m).filter(|&a| data.frozen[a].is_some()).collect();
    for &a in &fixed {
        let d = data.frozen[a].as_ref().expect("frozen").degree();
        if d < k {
            return Err(CkError::FrozenTooShort(a, d, k));
        }
    }
    let base: Vec<Jet<T>> = (0..m)
        .map(|a| match &data.frozen[a] {
            Some(full) => full.truncate(k),
            None => {
                let v = data.value_jets[a].with_degree(k);
                let s = data.slope_jets[a].with_degree(k.saturating_sub(1));
                &v + &s.integrate(0)
            }
        })
        .collect();
    if k < 2 {
        return Ok(CkSolution {
            map: MapJet::new(base)?,
            hat_forcing: vec![Jet::zero(0); m],
            sweeps: 0,
        });
    }
    let given_forcing = forcing.filter(|f| f.components().iter().any(|c| !c.is_zero()));

    let mut u = base.clone();
    let mut hat = vec![Jet::zero(k - 2); m];
    for sweep in 1..=k + 2 {
        let map = MapJet::new(u.clone())?;
        let du = map.gradient();
        let g_inv = du.metric().inverse()?;
        let inv_g11 = g_inv.get(0, 0).recip().map_err(|_| CkError::Characteristic)?;
        let hess: Vec<[[Jet<T>; 3]; 3]> = u.iter().map(hessian).collect();
        let s_of = |a: usize| {
            let mut acc = Jet::zero(k - 2);
            for i in 0..3 {
                for j in 0..3 {
                    acc = &acc + &(g_inv.get(i, j) * &hess[a][i][j]);
                }
            }
            acc
        };

        // f̂ on the free components from the supplied forcing
        for &a in &free {
            hat[a] = match given_forcing {
                None => Jet::zero(k - 2),
                Some(f) => {
                    let sd = du.metric().det()?.sqrt()?;
                    f.component(a).truncate(k - 2).try_div(&sd.truncate(k - 2))?
                }
            };
        }
        // implied f̂ on the frozen components
        if !fixed.is_empty() {
            let nf = fixed.len();
            let lhs = JetMatrix::from_fn(nf, nf, |p, q| {
                let g = gram(&du, fixed[p], fixed[q]).truncate(k - 2);
                if p == q {
                    &g + &Jet::one(k - 2)
                } else {
                    g
                }
            });
            let rhs: Vec<Jet<T>> = fixed
                .iter()
                .map(|&b| {
                    let mut r = s_of(b);
                    for &c in &free {
                        r = &r - &(&gram(&du, b, c) * &hat[c]);
                    }
                    r
                })
                .collect();
            let inv = lhs.inverse()?;
            for (p, &b) in fixed.iter().enumerate() {
                let mut acc = Jet::zero(k - 2);
                for (q, r) in rhs.iter().enumerate() {
                    acc = &acc + &(inv.get(p, q) * r);
                }
                hat[b] = acc;
            }
        }

        let mut next = u.clone();
        for &a in &free {
            // target T^α = f̂^α + Σ_γ f̂^γ (∇u^γ·∇u^α)
            let mut target = hat[a].clone();
            for (c, hc) in hat.iter().enumerate() {
                if !hc.is_zero() {
                    target = &target + &(hc * &gram(&du, c, a));
                }
            }
            let mut rest = Jet::zero(k - 2);
            for i in 0..3 {
                for j in 0..3 {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    rest = &rest + &(g_inv.get(i, j) * &hess[a][i][j]);
                }
            }
            let u11 = &(&target - &rest) * &inv_g11;
            let data_part = u[a].low_order_in(0, 1);
            next[a] = &data_part + &u11.integrate(0).integrate(0);
        }
        if next == u {
            return Ok(CkSolution {
                map: MapJet::new(u)?,
                hat_forcing: hat,
                sweeps: sweep,
            });
        }
        u = next;
    }
    Err(CkError::NoFixedPoint)
}

/// `A_ε = (5 + 4ε²)/ε`.
pub fn a_epsilon(eps: &Rational) -> Rational {
    (rat(5, 1) + rat(4, 1) * eps * eps) / eps
}

/// Data of the point-singularity example:
/// `w|_{x1=0} = (x2 x3, ε x2)`, `∂_1 w|_{x1=0} = (x2² + x3², A_ε x3)`.
pub fn point_data<T: Field>(eps: &T, a_eps: &T, k: u32) -> CauchyData<T> {
    let x2 = Jet::var(1, k);
    let x3 = Jet::var(2, k);
    let values = vec![&x2 * &x3, x2.scale(eps)];
    let slopes = vec![&(&x2 * &x2) + &(&x3 * &x3), x3.scale(a_eps)];
    CauchyData::new(values, slopes).expect("data is independent of x1")
}

/// Data of the free-boundary example: `v¹ = x2 x3` frozen, `v²` with
/// `v²|_{x1=0} = ε x2`, `∂_1 v²|_{x1=0} = x3`.
pub fn fbp_data<T: Field>(eps: &T, k: u32) -> CauchyData<T> {
    let x2 = Jet::var(1, k);
    let x3 = Jet::var(2, k);
    let v1 = &x2 * &x3;
    let data = CauchyData::new(vec![v1.clone(), x2.scale(eps)], vec![Jet::zero(k), x3.clone()])
        .expect("data is independent of x1");
    data.freeze(0, v1).expect("consistent by construction")
}

pub fn solve_point<T: Field>(eps: &T, a_eps: &T, k: u32) -> Result<MapJet<T>, CkError> {
    Ok(ck_solve(&point_data(eps, a_eps, k), None, k)?.map)
}

pub fn solve_fbp<T: Field>(eps: &T, k: u32) -> Result<MapJet<T>, CkError> {
    Ok(ck_solve(&fbp_data(eps, k), None, k)?.map)
}

/// `f = 2 sqrt(det g_v) g_v^{23} / (1 + x2² + x3²)` for a map whose first
/// component is exactly `x2 x3`.
pub fn compute_forcing<T: Field>(v: &MapJet<T>) -> Result<Jet<T>, CkError> {
    let k = v.degree();
    let x2 = Jet::<T>::var(1, k);
    let x3 = Jet::<T>::var(2, k);
    if *v.component(0) != &x2 * &x3 {
        return Err(CkError::NotPrescribed);
    }
    let g = v.gradient().metric();
    let g_inv = g.inverse()?;
    let sd = g.det()?.sqrt()?;
    let denom = &(&Jet::one(k) + &(&x2 * &x2)) + &(&x3 * &x3);
    let num = (&sd * g_inv.get(1, 2)).scale(&T::from_i64(2));
    Ok(num.try_div(&denom.truncate(num.degree()))?)
}

/// `C_ε = 2ε / sqrt(1 + ε²)` read off as minus the `x1` coefficient of `f`.
pub fn c_from_forcing<T: Field>(f: &Jet<T>) -> T {
    -f.coeff([1, 0, 0])
}

/// `H = δ - C|x|²/2 + ∫_0^{x1} (f + C x1) dt`, so that `∂_1 H = f`.
pub fn build_potential<T: Field>(f: &Jet<T>, delta: &T) -> Jet<T> {
    let k = f.degree() + 1;
    let c = c_from_forcing(f);
    let x = |i| Jet::<T>::var(i, k);
    let r2 = &(&(&x(0) * &x(0)) + &(&x(1) * &x(1))) + &(&x(2) * &x(2));
    let h = &f.with_degree(k) + &x(0).scale(&c);
    let half_c = c / T::from_i64(2);
    let quad = &Jet::constant(delta.clone(), k) - &r2.scale(&half_c);
    &quad + &h.truncate(k - 1).integrate(0)
}

/// A boundary point of `{H > 0}` with unit normal `-∇H/|∇H|`.
#[derive(Clone, Debug, Serialize)]
pub struct BoundarySample {
    pub point: [f64; 3],
    pub normal: [f64; 3],
    pub h_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSetRegion {
    pub samples: Vec<BoundarySample>,
    pub contains_origin: bool,
    /// Largest tangential second derivative of `H` over the samples
    /// (negative iff the sampled boundary is uniformly convex).
    pub max_tangential_curvature: f64,
    /// Largest eigenvalue of `D²H` sampled on the working ball.
    pub max_hessian_eigenvalue: f64,
    /// Radius of the sphere `{δ - C|x|²/2 = 0}`.
    pub model_radius: f64,
}

impl LevelSetRegion {
    pub fn is_convex(&self) -> bool {
        self.max_tangential_curvature < 0.0
    }
}

fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Quasi-uniform unit directions (Fibonacci lattice).
pub fn sphere_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            // first coordinate plays the role of the polar axis
            [z, r * t.cos(), r * t.sin()]
        })
        .collect()
}

/// Float view of `H` with cached derivative jets.
#[derive(Clone, Debug)]
pub struct Potential {
    pub h: Jet<f64>,
    fast: CompiledJet,
    grad: [CompiledJet; 3],
    hess: [[CompiledJet; 3]; 3],
    pub delta: f64,
    pub c: f64,
}

impl Potential {
    pub fn new(h: Jet<f64>) -> Self {
        let g = [h.partial(0), h.partial(1), h.partial(2)];
        let hess = std::array::from_fn(|i| std::array::from_fn(|j| g[i].partial(j).compile()));
        let grad = g.map(|j| j.compile());
        let fast = h.compile();
        let delta = h.constant_term();
        let c = -h.coeff([2, 0, 0]) * 2.0;
        Potential {
            h,
            fast,
            grad,
            hess,
            delta,
            c,
        }
    }

    pub fn value(&self, x: [f64; 3]) -> f64 {
        self.fast.eval(&x)
    }

    pub fn gradient(&self, x: [f64; 3]) -> [f64; 3] {
        [0, 1, 2].map(|i| self.grad[i].eval(&x))
    }

    pub fn hessian(&self, x: [f64; 3]) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.hess[i][j].eval(&x)))
    }

    /// Radius of the model sphere `δ = C r²/2`.
    pub fn model_radius(&self) -> f64 {
        (2.0 * self.delta / self.c).sqrt()
    }

    /// Root of `H` along the ray `t d` by marching and bisection.
    pub fn boundary_along(&self, d: [f64; 3]) -> Result<f64, CkError> {
        let r_max = 3.0 * self.model_radius();
        let steps = 64;
        let mut lo = 0.0;
        let mut hi = None;
        for s in 1..=steps {
            let t = r_max * s as f64 / steps as f64;
            if self.value([t * d[0], t * d[1], t * d[2]]) <= 0.0 {
                hi = Some(t);
                break;
            }
            lo = t;
        }
        let mut hi = hi.ok_or(CkError::NoRoot(d))?;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.value([mid * d[0], mid * d[1], mid * d[2]]) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    pub fn sample(&self, d: [f64; 3]) -> Result<BoundarySample, CkError> {
        let r = self.boundary_along(d)?;
        let p = [r * d[0], r * d[1], r * d[2]];
        let g = self.gradient(p);
        let gn = norm3(g);
        Ok(BoundarySample {
            point: p,
            normal: [-g[0] / gn, -g[1] / gn, -g[2] / gn],
            h_value: self.value(p),
        })
    }
}

/// Ray-marched boundary of the component of `{H > 0}` containing 0.
pub fn extract_region(pot: &Potential, directions: &[[f64; 3]]) -> Result<LevelSetRegion, CkError> {
    if pot.delta <= 0.0 || pot.c <= 0.0 {
        return Err(CkError::DegenerateRegion);
    }
    let samples = parallel::par_map(directions.len(), |i| pot.sample(directions[i]))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let mut max_tan = f64::NEG_INFINITY;
    for s in &samples {
        let hs = pot.hessian(s.point);
        let n = s.normal;
        // orthonormal tangent frame
        let a = if n[0].abs() < 0.9 {
            [1.0, 0.0, 0.0]
        } else {
            [0.0, 1.0, 0.0]
        };
        let mut t1 = [
            a[0] - dot3(a, n) * n[0],
            a[1] - dot3(a, n) * n[1],
            a[2] - dot3(a, n) * n[2],
        ];
        let l = norm3(t1);
        t1 = t1.map(|c| c / l);
        let t2 = [
            n[1] * t1[2] - n[2] * t1[1],
            n[2] * t1[0] - n[0] * t1[2],
            n[0] * t1[1] - n[1] * t1[0],
        ];
        let q = |u: [f64; 3], v: [f64; 3]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += u[i] * hs[i][j] * v[j];
                }
            }
            s
        };
        let (a11, a12, a22) = (q(t1, t1), q(t1, t2), q(t2, t2));
        let top = 0.5 * (a11 + a22) + (0.25 * (a11 - a22).powi(2) + a12 * a12).sqrt();
        max_tan = max_tan.max(top);
    }
    // concavity of H on the working ball
    let r_ball = 3.0 * pot.model_radius();
    let mut max_eig = f64::NEG_INFINITY;
    for (i, d) in sphere_directions(128).iter().enumerate() {
        let t = r_ball * ((i % 8) as f64 + 0.5) / 8.0;
        let hs = pot.hessian([t * d[0], t * d[1], t * d[2]]);
        let m = crate::linalg::Mat::from_fn(3, 3, |a, b| hs[a][b]);
        let top = *m.symmetric_eigenvalues().last().expect("3x3");
        max_eig = max_eig.max(top);
    }
    Ok(LevelSetRegion {
        samples,
        contains_origin: pot.value([0.0; 3]) > 0.0,
        max_tangential_curvature: max_tan,
        max_hessian_eigenvalue: max_eig,
        model_radius: pot.model_radius(),
    })
}

/// Result of the jet identities at one boundary point.
#[derive(Clone, Debug, Serialize)]
pub struct TransitionSample {
    pub point: [f64; 3],
    pub d1h: f64,
    /// `1/ν_1`, the coefficient of `e_1` in `ν = A e_1 + B τ`.
    pub a: f64,
    /// `(1 + x2² + x3²) / (sqrt(det g) g^{νν})`.
    pub coefficient: f64,
    /// `ṽ¹_{1ν}` from the closed formula.
    pub d1_nu: f64,
    /// `ṽ¹_{1ν}` from the reconstructed exterior Hessian.
    pub d1_nu_hessian: f64,
    /// Size of the normal jump `v¹_νν - ṽ¹_νν`.
    pub jump: f64,
    /// `ṽ¹_{1νν}` on the characteristic curve.
    pub d1_nu_nu: Option<f64>,
    pub on_gamma: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TransitionReport {
    pub off_gamma: Vec<TransitionSample>,
    pub gamma: Vec<TransitionSample>,
    pub min_off_gamma_margin: f64,
    pub min_gamma_margin: f64,
    /// Off-Γ samples where `A` had the sign of `-∂_1 H`.
    pub sign_agreements: usize,
    pub max_gamma_jump: f64,
}

impl TransitionReport {
    pub fn all_positive(&self) -> bool {
        self.min_off_gamma_margin > 0.0 && self.min_gamma_margin > 0.0 && self.sign_agreements == self.off_gamma.len()
    }
}

/// Float jets of `v` and its derivatives for pointwise evaluation.
struct MapEval {
    grad: Vec<[Jet<f64>; 3]>,
    hess: Vec<[[Jet<f64>; 3]; 3]>,
}

impl MapEval {
    fn new(v: &MapJet<f64>) -> Self {
        let grad: Vec<[Jet<f64>; 3]> = v
            .components()
            .iter()
            .map(|c| [c.partial(0), c.partial(1), c.partial(2)])
            .collect();
        let hess = grad
            .iter()
            .map(|g| std::array::from_fn(|i| std::array::from_fn(|j| g[i].partial(j))))
            .collect();
        MapEval { grad, hess }
    }

    fn gradient(&self, x: [f64; 3]) -> crate::linalg::Mat<f64> {
        crate::linalg::Mat::from_fn(self.grad.len(), 3, |a, i| self.grad[a][i].eval(&x))
    }

    fn hessian(&self, alpha: usize, x: [f64; 3]) -> [[f64; 3]; 3] {
        std::array::from_fn(|i| std::array::from_fn(|j| self.hess[alpha][i][j].eval(&x)))
    }
}

fn transition_at(ev: &MapEval, pot: &Potential, s: &BoundarySample, on_gamma: bool) -> TransitionSample {
    let x = s.point;
    let nu = s.normal;
    let du = ev.gradient(x);
    let md = crate::mss::metric_from_gradient(&du);
    let mut gnn = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            gnn += nu[i] * md.g_inv[(i, j)] * nu[j];
        }
    }
    let w = 1.0 + x[1] * x[1] + x[2] * x[2];
    let coefficient = w / (md.sqrt_det * gnn);
    let d1h = pot.gradient(x)[0];
    let jump = coefficient * d1h;
    let a = 1.0 / nu[0];
    let d1_nu = -coefficient * d1h / a;
    // exterior Hessian: same as v¹ except in the normal-normal slot
    let hv = ev.hessian(0, x);
    let mut d1_nu_hessian = 0.0;
    for j in 0..3 {
        let ht = hv[0][j] - jump * nu[0] * nu[j];
        d1_nu_hessian += ht * nu[j];
    }
    let d1_nu_nu = on_gamma.then(|| {
        let h11 = pot.hessian(x)[0][0];
        -w * h11 / (md.sqrt_det * gnn)
    });
    TransitionSample {
        point: x,
        d1h,
        a,
        coefficient,
        d1_nu,
        d1_nu_hessian,
        jump: jump.abs(),
        d1_nu_nu,
        on_gamma,
    }
}

/// Locate the characteristic curve `Γ = {∂_1 H = 0} ∩ ∂Ω₀` on `meridians`
/// meridians around the `x1` axis by bisection in the polar angle.
pub fn locate_gamma(pot: &Potential, meridians: usize) -> Result<Vec<BoundarySample>, CkError> {
    let dir = |theta: f64, phi: f64| [theta.cos(), theta.sin() * phi.cos(), theta.sin() * phi.sin()];
    let d1h_at = |theta: f64, phi: f64| -> Result<(f64, BoundarySample), CkError> {
        let s = pot.sample(dir(theta, phi))?;
        Ok((pot.gradient(s.point)[0], s))
    };
    (0..meridians)
        .map(|m| {
            let phi = 2.0 * std::f64::consts::PI * m as f64 / meridians as f64;
            let (mut lo, mut hi) = (0.25 * std::f64::consts::PI, 0.75 * std::f64::consts::PI);
            let (flo, _) = d1h_at(lo, phi)?;
            let (fhi, _) = d1h_at(hi, phi)?;
            if flo.signum() == fhi.signum() {
                return Err(CkError::NoRoot(dir(0.5 * std::f64::consts::PI, phi)));
            }
            let mut best = d1h_at(0.5 * (lo + hi), phi)?.1;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let (fm, s) = d1h_at(mid, phi)?;
                best = s;
                if fm.signum() == flo.signum() {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(best)
        })
        .collect()
}

/// Positivity of the exterior jets along `∂Ω₀`. Samples with
/// `|ν_1| < gamma_tol` are routed to the Γ branch.
pub fn boundary_transition_checks(
    v: &MapJet<f64>,
    pot: &Potential,
    region: &LevelSetRegion,
    gamma_samples: &[BoundarySample],
    gamma_tol: f64,
) -> TransitionReport {
    let ev = MapEval::new(v);
    let mut off = Vec::new();
    let mut gamma = Vec::new();
    for s in &region.samples {
        if s.normal[0].abs() < gamma_tol {
            gamma.push(transition_at(&ev, pot, s, true));
        } else {
            off.push(transition_at(&ev, pot, s, false));
        }
    }
    for s in gamma_samples {
        gamma.push(transition_at(&ev, pot, s, true));
    }
    let min_off = off
        .iter()
        .map(|t| t.d1_nu.min(t.d1_nu_hessian))
        .fold(f64::INFINITY, f64::min);
    let min_gamma = gamma.iter().filter_map(|t| t.d1_nu_nu).fold(f64::INFINITY, f64::min);
    let sign_agreements = off.iter().filter(|t| t.a.signum() == (-t.d1h).signum()).count();
    let max_gamma_jump = gamma_samples
        .iter()
        .map(|s| transition_at(&ev, pot, s, true).jump)
        .fold(0.0, f64::max);
    TransitionReport {
        off_gamma: off,
        gamma,
        min_off_gamma_margin: min_off,
        min_gamma_margin: min_gamma,
        sign_agreements,
        max_gamma_jump,
    }
}

/// Everything the free-boundary experiment produces, in exact arithmetic.
#[derive(Clone, Debug)]
pub struct FbpPipeline {
    pub v: MapJet<Rational>,
    pub forcing: Jet<Rational>,
    pub potential: Jet<Rational>,
}

pub fn fbp_pipeline(eps: &Rational, delta: &Rational, k: u32) -> Result<FbpPipeline, CkError> {
    let v = solve_fbp(eps, k)?;
    let forcing = compute_forcing(&v)?;
    let potential = build_potential(&forcing, delta);
    Ok(FbpPipeline { v, forcing, potential })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mss::{inner_residual, nondiv_residual, outer_residual, JetMetric};
    use crate::scalar::rat;

    const K: u32 = 6;

    fn eps() -> Rational {
        rat(3, 4)
    }

    fn point() -> MapJet<Rational> {
        let e = eps();
        solve_point(&e, &a_epsilon(&e), K).unwrap()
    }

    #[test]
    fn a_epsilon_value() {
        assert_eq!(a_epsilon(&eps()), rat(29, 3));
    }

    #[test]
    fn zero_data_gives_zero() {
        let z = Jet::<Rational>::zero(K);
        let d = CauchyData::new(vec![z.clone(), z.clone()], vec![z.clone(), z]).unwrap();
        let s = ck_solve(&d, None, K).unwrap();
        assert!(s.map.components().iter().all(Jet::is_zero));
    }

    #[test]
    fn data_must_not_depend_on_x1() {
        let x1 = Jet::<Rational>::var(0, K);
        assert!(matches!(
            CauchyData::new(vec![x1.clone()], vec![Jet::zero(K)]),
            Err(CkError::DataDependsOnX1(0))
        ));
    }

    #[test]
    fn degree_overflow() {
        let e = eps();
        let d = point_data(&e, &a_epsilon(&e), MAX_DEGREE + 1);
        assert!(matches!(
            ck_solve(&d, None, MAX_DEGREE + 1),
            Err(CkError::DegreeOverflow(_))
        ));
    }

    #[test]
    fn point_coefficients() {
        let w = point();
        let w1 = w.component(0);
        let w2 = w.component(1);
        assert_eq!(w1.coeff([3, 0, 0]), rat(1, 1));
        assert_eq!(w2.coeff([1, 0, 1]), rat(29, 3));
        let d1 = w1.partial(0).truncate(2);
        let want = Jet::from_terms(
            2,
            [([2, 0, 0], rat(3, 1)), ([0, 2, 0], rat(1, 1)), ([0, 0, 2], rat(1, 1))],
        );
        assert_eq!(d1, want.with_degree(2));
        // w¹ = x2x3 + x1(x1² + x2² + x3²) + O(|x|⁴)
        let w1_3 = w1.truncate(3);
        let want1 = Jet::from_terms(
            3,
            [
                ([0, 1, 1], rat(1, 1)),
                ([3, 0, 0], rat(1, 1)),
                ([1, 2, 0], rat(1, 1)),
                ([1, 0, 2], rat(1, 1)),
            ],
        );
        assert_eq!(w1_3, want1);
        // w² = εx2 + A x1x3 + O(|x|³)
        let want2 = Jet::from_terms(2, [([0, 1, 0], rat(3, 4)), ([1, 0, 1], rat(29, 3))]);
        assert_eq!(w2.truncate(2), want2);
    }

    #[test]
    fn point_solution_residuals_vanish() {
        let w = point();
        assert!(nondiv_residual(&w, None).unwrap().is_zero());
        assert!(outer_residual(&w, None).unwrap().is_zero());
        assert!(inner_residual(&w, None).unwrap().is_zero());
    }

    #[test]
    fn inverse_metric_on_initial_surface() {
        let e = eps();
        let a = a_epsilon(&e);
        let w = point();
        let (_, g_inv) = JetMetric::without_volume(&w).unwrap();
        let one_e2 = rat(1, 1) + &e * &e;
        let off = -(&e * &a) / &one_e2;
        for i in 0..3 {
            for j in 0..3 {
                let got = g_inv.get(i, j).restrict_zero(0).truncate(1);
                let want = match (i, j) {
                    (0, 0) | (2, 2) => Jet::one(1),
                    (1, 1) => Jet::constant(rat(1, 1) / &one_e2, 1),
                    (0, 1) | (1, 0) => Jet::monomial([0, 0, 1], off.clone(), 1),
                    _ => Jet::zero(1),
                };
                assert_eq!(got, want, "entry ({i},{j})");
            }
        }
    }

    #[test]
    fn fbp_forcing_and_potential() {
        let e = eps();
        let p = fbp_pipeline(&e, &rat(1, 100), K).unwrap();
        assert_eq!(p.forcing.coeff([1, 0, 0]), rat(-6, 5));
        assert_eq!(p.forcing.constant_term(), rat(0, 1));
        assert_eq!(&p.potential.partial(0) - &p.forcing, Jet::zero(K - 1));
        assert_eq!(p.potential.constant_term(), rat(1, 100));
        // quadratic part of H is -C|x|²/2
        let q = p.potential.homogeneous_part(2);
        let want = Jet::from_terms(
            K,
            [
                ([2, 0, 0], rat(-3, 5)),
                ([0, 2, 0], rat(-3, 5)),
                ([0, 0, 2], rat(-3, 5)),
            ],
        );
        assert_eq!(q, want);
        assert!(p.potential.homogeneous_part(1).is_zero());
    }

    #[test]
    fn fbp_metric_derivative() {
        let e = eps();
        let v = solve_fbp(&e, K).unwrap();
        let (_, g_inv) = JetMetric::without_volume(&v).unwrap();
        assert_eq!(g_inv.get(1, 2).coeff([1, 0, 0]), -e.clone() / (rat(1, 1) + &e * &e));
        assert!(g_inv.get(1, 2).restrict_zero(0).truncate(1).is_zero());
    }

    #[test]
    fn fbp_outer_system_with_forcing() {
        let e = eps();
        let p = fbp_pipeline(&e, &rat(1, 100), K).unwrap();
        let f = MapJet::new(vec![p.potential.partial(0), Jet::zero(K - 1)]).unwrap();
        assert!(outer_residual(&p.v, Some(&f)).unwrap().is_zero());
        assert!(nondiv_residual(&p.v, Some(&f)).unwrap().is_zero());
        assert!(inner_residual(&p.v, Some(&f)).unwrap().is_zero());
    }

    #[test]
    fn forced_solution_satisfies_forced_system() {
        let e = eps();
        let data = point_data(&e, &a_epsilon(&e), 5);
        let f = MapJet::new(vec![
            &Jet::var(1, 5) + &Jet::constant(rat(1, 2), 5),
            (&Jet::var(0, 5) * &Jet::var(2, 5)).scale(&rat(-2, 3)),
        ])
        .unwrap();
        let sol = ck_solve(&data, Some(&f), 5).unwrap();
        assert!(nondiv_residual(&sol.map, Some(&f)).unwrap().is_zero());
        assert!(outer_residual(&sol.map, Some(&f)).unwrap().is_zero());
    }

    #[test]
    fn frozen_component_must_match() {
        let x2 = Jet::<Rational>::var(1, K);
        let d = CauchyData::new(vec![x2.clone()], vec![Jet::zero(K)]).unwrap();
        assert!(matches!(
            d.freeze(0, x2.scale(&rat(2, 1))),
            Err(CkError::InconsistentFrozen(0))
        ));
    }

    #[test]
    fn not_prescribed_first_component() {
        let w = point();
        assert!(matches!(compute_forcing(&w), Err(CkError::NotPrescribed)));
    }

    #[test]
    fn float_mode_agrees() {
        let w = solve_point(&0.75f64, &(29.0 / 3.0), K).unwrap();
        let exact = point();
        for (a, b) in w.components().iter().zip(exact.components()) {
            for (e, c) in b.terms() {
                assert!((a.coeff(*e) - c.to_f64()).abs() < 1e-12 * (1.0 + c.to_f64().abs()));
            }
        }
    }

    #[test]
    fn quadratic_potential_region_is_sphere() {
        let delta = 0.01;
        let c = 1.2;
        let h = Jet::from_terms(
            2,
            [
                ([0, 0, 0], delta),
                ([2, 0, 0], -c / 2.0),
                ([0, 2, 0], -c / 2.0),
                ([0, 0, 2], -c / 2.0),
            ],
        );
        let pot = Potential::new(h);
        let reg = extract_region(&pot, &sphere_directions(64)).unwrap();
        let r = (2.0 * delta / c).sqrt();
        for s in &reg.samples {
            assert!((norm3(s.point) - r).abs() < 1e-12);
        }
        assert!(reg.is_convex() && reg.contains_origin);
    }

    #[test]
    fn zero_delta_is_degenerate() {
        let h = Jet::from_terms(2, [([2, 0, 0], -0.5), ([0, 2, 0], -0.5), ([0, 0, 2], -0.5)]);
        assert!(matches!(
            extract_region(&Potential::new(h), &sphere_directions(8)),
            Err(CkError::DegenerateRegion)
        ));
    }

    #[test]
    fn fbp_boundary_positivity() {
        let e = eps();
        let p = fbp_pipeline(&e, &rat(1, 100), K).unwrap();
        let pot = Potential::new(p.potential.to_f64());
        let reg = extract_region(&pot, &sphere_directions(256)).unwrap();
        assert!(reg.is_convex());
        for s in &reg.samples {
            assert!(s.h_value.abs() <= 1e-12);
        }
        let gamma = locate_gamma(&pot, 16).unwrap();
        let rep = boundary_transition_checks(&p.v.to_f64(), &pot, &reg, &gamma, 1e-3);
        assert!(
            rep.all_positive(),
            "{} {}",
            rep.min_off_gamma_margin,
            rep.min_gamma_margin
        );
        assert!(rep.max_gamma_jump < 1e-10);
        for t in &rep.off_gamma {
            assert!((t.d1_nu - t.d1_nu_hessian).abs() < 1e-12);
        }
    }
}
