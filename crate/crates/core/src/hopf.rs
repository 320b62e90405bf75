//! The Hopf map, the cone `a |x| H(x/|x|)` with `a = √5/2`, and radial
//! profiles `u(x) = f(|x|) H(x/|x|)` over the annulus `ρ <= |x| <= 1` in R^4.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::area::area_integrand;
use crate::linalg::Mat;
use crate::mss::nondiv_residual_pointwise;
use crate::parallel::{chunked, pairwise_sum};
use crate::report::Check;

/// Slope of the cone profile.
pub fn cone_slope() -> f64 {
    5f64.sqrt() / 2.0
}

#[derive(Debug, Error, PartialEq)]
pub enum HopfError {
    #[error("point too close to the origin: |x| = {0:e}")]
    Origin(f64),
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("profile descent did not converge in {iterations} iterations (gradient {gradient:e})")]
    Budget { iterations: usize, gradient: f64 },
}

/// `H(z1, z2) = (|z1|^2 - |z2|^2, 2 z1 z̄2)` with `z1 = x1 + i x2`,
/// `z2 = x3 + i x4`.
pub fn hopf_map(x: [f64; 4]) -> [f64; 3] {
    [
        x[0] * x[0] + x[1] * x[1] - x[2] * x[2] - x[3] * x[3],
        2.0 * (x[0] * x[2] + x[1] * x[3]),
        2.0 * (x[1] * x[2] - x[0] * x[3]),
    ]
}

/// `H^α(x) = xᵀ Q_α x`.
fn hopf_forms() -> [[[f64; 4]; 4]; 3] {
    let mut q = [[[0.0; 4]; 4]; 3];
    q[0][0][0] = 1.0;
    q[0][1][1] = 1.0;
    q[0][2][2] = -1.0;
    q[0][3][3] = -1.0;
    q[1][0][2] = 1.0;
    q[1][2][0] = 1.0;
    q[1][1][3] = 1.0;
    q[1][3][1] = 1.0;
    q[2][1][2] = 1.0;
    q[2][2][1] = 1.0;
    q[2][0][3] = -1.0;
    q[2][3][0] = -1.0;
    q
}

fn norm4(x: &[f64; 4]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gradient (3x4) and Hessians of `u = a H(x)/|x|`, in closed form.
pub fn cone_derivatives(x: [f64; 4], a: f64) -> Result<(Mat<f64>, Vec<Mat<f64>>), HopfError> {
    let r = norm4(&x);
    if r < 1e-12 {
        return Err(HopfError::Origin(r));
    }
    let q = hopf_forms();
    let h = hopf_map(x);
    let (r3, r5) = (r * r * r, r.powi(5));
    let mut du = Mat::zeros(3, 4);
    let mut hess = Vec::with_capacity(3);
    for al in 0..3 {
        let qx: [f64; 4] = std::array::from_fn(|i| 2.0 * (0..4).map(|j| q[al][i][j] * x[j]).sum::<f64>());
        for i in 0..4 {
            du[(al, i)] = a * (qx[i] / r - h[al] * x[i] / r3);
        }
        hess.push(Mat::from_fn(4, 4, |i, j| {
            let d = if i == j { 1.0 } else { 0.0 };
            a * (2.0 * q[al][i][j] / r - (qx[i] * x[j] + qx[j] * x[i]) / r3 - h[al] * d / r3
                + 3.0 * h[al] * x[i] * x[j] / r5)
        }));
    }
    Ok((du, hess))
}

/// Max over components of the non-divergence residual
/// `√det g g^{ij} ∂_ij u` of the cone at `x`.
pub fn cone_residual_at(x: [f64; 4], a: f64) -> Result<f64, HopfError> {
    let (du, hess) = cone_derivatives(x, a)?;
    Ok(nondiv_residual_pointwise(&du, &hess, &[0.0; 3])
        .into_iter()
        .fold(0.0, |m, v| m.max(v.abs())))
}

pub const CONE_TOL: f64 = 1e-10;

/// The cone residual over the given points, gated at `CONE_TOL`.
pub fn lo_cone_residual(points: &[[f64; 4]]) -> Result<Check, HopfError> {
    let mut worst: f64 = 0.0;
    for p in points {
        worst = worst.max(cone_residual_at(*p, cone_slope())?);
    }
    Ok(Check::at_most("cone nondivergence residual", worst, CONE_TOL)
        .published("u(x) = (√5/2)|x|H(x/|x|) is a critical point of area"))
}

/// Uniform points in the shell `r0 <= |x| <= r1` of R^4.
pub fn shell_points<R: Rng>(rng: &mut R, n: usize, r0: f64, r1: f64) -> Vec<[f64; 4]> {
    (0..n)
        .map(|_| {
            let g: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            let s = norm4(&g);
            let u: f64 = rng.gen();
            let r = (r0.powi(4) + u * (r1.powi(4) - r0.powi(4))).powf(0.25);
            g.map(|v| v * r / s)
        })
        .collect()
}

/// Gradient of `u = f(|x|) H(x)/|x|^2` from `f` and `f'`.
pub fn radial_gradient(x: [f64; 4], f: f64, df: f64) -> Mat<f64> {
    let r = norm4(&x);
    let q = hopf_forms();
    let h = hopf_map(x);
    Mat::from_fn(3, 4, |al, i| {
        let qx = 2.0 * (0..4).map(|j| q[al][i][j] * x[j]).sum::<f64>();
        df * x[i] / r * h[al] / (r * r) + f * qx / (r * r) - 2.0 * f * h[al] * x[i] / r.powi(4)
    })
}

/// Reduced area density `2π² r³ √(1 + f'²) (1 + 4 f²/r²)`: on the unit
/// sphere `dH` has singular values 2, 2, 0 with image orthogonal to `H`.
pub fn reduced_density(r: f64, f: f64, df: f64) -> f64 {
    2.0 * std::f64::consts::PI.powi(2) * r.powi(3) * (1.0 + df * df).sqrt() * (1.0 + 4.0 * f * f / (r * r))
}

const GL3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Reduced area of a smooth profile by composite 3-point Gauss on `n`
/// geometric panels.
pub fn reduced_area_fn(f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64, rho: f64, n: usize) -> f64 {
    let nodes = geometric_nodes(rho, n);
    let per: Vec<f64> = nodes
        .windows(2)
        .map(|w| {
            let (c, hw) = (0.5 * (w[0] + w[1]), 0.5 * (w[1] - w[0]));
            GL3.iter()
                .map(|(t, wt)| {
                    let r = c + hw * t;
                    wt * hw * reduced_density(r, f(r), df(r))
                })
                .sum()
        })
        .collect();
    pairwise_sum(&per)
}

/// `ρ (1/ρ)^{i/n}`, `i = 0..=n`.
pub fn geometric_nodes(rho: f64, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..=n).map(|i| rho * (1.0 / rho).powf(i as f64 / n as f64)).collect();
    v[n] = 1.0;
    v
}

/// Piecewise-linear profile on `[ρ, 1]` with `f(1) = R`.
#[derive(Clone, Debug, Serialize)]
pub struct RadialProfile {
    pub nodes: Vec<f64>,
    pub values: Vec<f64>,
}

impl RadialProfile {
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<Self, HopfError> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(HopfError::Profile(
                "need matching node and value lists of length >= 2".into(),
            ));
        }
        if nodes[0] <= 0.0 || (nodes[nodes.len() - 1] - 1.0).abs() > 1e-15 {
            return Err(HopfError::Profile("nodes must run from ρ > 0 to 1".into()));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(HopfError::Profile("nodes must increase".into()));
        }
        if values.iter().any(|v| *v < 0.0 || !v.is_finite()) {
            return Err(HopfError::Profile("values must be finite and nonnegative".into()));
        }
        Ok(RadialProfile { nodes, values })
    }

    pub fn from_fn(rho: f64, n: usize, f: impl Fn(f64) -> f64) -> Result<Self, HopfError> {
        let nodes = geometric_nodes(rho, n);
        let values = nodes.iter().map(|r| f(*r)).collect();
        Self::new(nodes, values)
    }

    pub fn rho(&self) -> f64 {
        self.nodes[0]
    }

    pub fn boundary_value(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    pub fn inner_value(&self) -> f64 {
        self.values[0]
    }

    /// `(f, f')` at `r`, with the right slope at nodes.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        let e = match self.nodes.partition_point(|n| *n <= r) {
            0 => 0,
            k => (k - 1).min(self.nodes.len() - 2),
        };
        let (a, b) = (self.nodes[e], self.nodes[e + 1]);
        let s = (self.values[e + 1] - self.values[e]) / (b - a);
        (self.values[e] + s * (r - a), s)
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "r,f")?;
        for (r, f) in self.nodes.iter().zip(&self.values) {
            writeln!(w, "{r:.17e},{f:.17e}")?;
        }
        Ok(())
    }
}

/// Element energy and its derivatives in `(f_a, f_b)`.
fn element(a: f64, b: f64, fa: f64, fb: f64) -> (f64, [f64; 2], [[f64; 2]; 2]) {
    let c = 2.0 * std::f64::consts::PI.powi(2);
    let len = b - a;
    let s = (fb - fa) / len;
    let q = (1.0 + s * s).sqrt();
    let (dq, ddq) = (s / q, 1.0 / (q * q * q));
    let ds = [-1.0 / len, 1.0 / len];
    // I = ∫ r³ + 4 r f² dr, exact for the 3-point rule
    let (mut i0, mut ia, mut iab) = (0.0, [0.0; 2], [[0.0; 2]; 2]);
    let (mid, hw) = (0.5 * (a + b), 0.5 * len);
    for (t, wt) in GL3 {
        let r = mid + hw * t;
        let phi = [(b - r) / len, (r - a) / len];
        let f = fa * phi[0] + fb * phi[1];
        let w = wt * hw;
        i0 += w * (r.powi(3) + 4.0 * r * f * f);
        for k in 0..2 {
            ia[k] += w * 8.0 * r * f * phi[k];
            for l in 0..2 {
                iab[k][l] += w * 8.0 * r * phi[k] * phi[l];
            }
        }
    }
    let e = c * q * i0;
    let g = [0, 1].map(|k| c * (dq * ds[k] * i0 + q * ia[k]));
    let h = [0, 1]
        .map(|k| [0, 1].map(|l| c * (ddq * ds[k] * ds[l] * i0 + dq * (ds[k] * ia[l] + ds[l] * ia[k]) + q * iab[k][l])));
    (e, g, h)
}

/// Reduced area of a piecewise-linear profile (exact on each element up
/// to the square-root factor, which is constant there).
pub fn reduced_area(p: &RadialProfile) -> f64 {
    let per: Vec<f64> = (0..p.nodes.len() - 1)
        .map(|e| element(p.nodes[e], p.nodes[e + 1], p.values[e], p.values[e + 1]).0)
        .collect();
    pairwise_sum(&per)
}

/// Gradient of `reduced_area` in the nodal values (last entry unused).
pub fn reduced_gradient(p: &RadialProfile) -> Vec<f64> {
    let mut g = vec![0.0; p.nodes.len()];
    for e in 0..p.nodes.len() - 1 {
        let (_, ge, _) = element(p.nodes[e], p.nodes[e + 1], p.values[e], p.values[e + 1]);
        g[e] += ge[0];
        g[e + 1] += ge[1];
    }
    g
}

/// Euclidean norm of the projected gradient over the free nodes
/// `0..n-1` under `f >= 0`.
pub fn projected_gradient_norm(p: &RadialProfile) -> f64 {
    let g = reduced_gradient(p);
    let n = g.len() - 1;
    (0..n)
        .map(|i| if p.values[i] <= 0.0 { g[i].min(0.0) } else { g[i] })
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloArea {
    pub mean: f64,
    pub std_err: f64,
    pub samples: usize,
}

/// 4-D Monte-Carlo of `∫ F(Du)` over the annulus, `F` evaluated on the
/// full 3x4 gradient.
pub fn monte_carlo_area(f: impl Fn(f64) -> (f64, f64) + Sync, rho: f64, samples: usize, seed: u64) -> MonteCarloArea {
    let vol = std::f64::consts::PI.powi(2) / 2.0 * (1.0 - rho.powi(4));
    let parts = chunked(samples, seed, |rng, count| {
        let pts = shell_points(rng, count, rho, 1.0);
        let vals: Vec<f64> = pts
            .iter()
            .map(|x| {
                let (fv, dfv) = f(norm4(x));
                area_integrand(&radial_gradient(*x, fv, dfv)).expect("finite gradient")
            })
            .collect();
        let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
        (pairwise_sum(&vals), pairwise_sum(&sq))
    });
    let s: f64 = parts.iter().map(|p| p.0).sum();
    let s2: f64 = parts.iter().map(|p| p.1).sum();
    let n = samples as f64;
    let m = s / n;
    let var = (s2 / n - m * m).max(0.0) * n / (n - 1.0);
    MonteCarloArea {
        mean: vol * m,
        std_err: vol * (var / n).sqrt(),
        samples,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GateResult {
    pub reduced: f64,
    pub monte_carlo: MonteCarloArea,
    pub sigmas: f64,
}

impl GateResult {
    /// Within 3 standard errors, with a roundoff floor for integrands
    /// that are constant on the annulus.
    pub fn passed(&self) -> bool {
        (self.reduced - self.monte_carlo.mean).abs() <= 3.0 * self.monte_carlo.std_err + 1e-12 * self.reduced.abs()
    }
}

/// Compare the reduced functional with the Monte-Carlo oracle on a
/// profile.
pub fn validate_reduction(p: &RadialProfile, samples: usize, seed: u64) -> GateResult {
    let reduced = reduced_area(p);
    let mc = monte_carlo_area(|r| p.eval(r), p.rho(), samples, seed);
    GateResult {
        reduced,
        sigmas: (reduced - mc.mean).abs() / mc.std_err,
        monte_carlo: mc,
    }
}

/// Solve the SPD tridiagonal system `(diag, off)` in place; `None` if not
/// positive definite.
fn tridiagonal_cholesky(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let (mut l, mut m) = (vec![0.0; n], vec![0.0; n]);
    for i in 0..n {
        let d = diag[i] - if i > 0 { m[i - 1] * m[i - 1] } else { 0.0 };
        if d <= 0.0 || !d.is_finite() {
            return None;
        }
        l[i] = d.sqrt();
        if i + 1 < n {
            m[i] = off[i] / l[i];
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (rhs[i] - if i > 0 { m[i - 1] * y[i - 1] } else { 0.0 }) / l[i];
    }
    for i in (0..n).rev() {
        y[i] = (y[i] - if i + 1 < n { m[i] * y[i + 1] } else { 0.0 }) / l[i];
    }
    Some(y)
}

/// Symmetric 2x2 matrix with negative eigenvalues clamped to zero.
fn psd_part(h: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let (a, b, d) = (h[0][0], h[0][1], h[1][1]);
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    let (l1, l2) = (mean + rad, mean - rad);
    if l2 >= 0.0 {
        return h;
    }
    if l1 <= 0.0 {
        return [[0.0; 2]; 2];
    }
    // projector onto the eigenvector of l1
    let v = if b.abs() > 1e-300 {
        [l1 - d, b]
    } else if a >= d {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    let n2 = v[0] * v[0] + v[1] * v[1];
    [
        [l1 * v[0] * v[0] / n2, l1 * v[0] * v[1] / n2],
        [l1 * v[1] * v[0] / n2, l1 * v[1] * v[1] / n2],
    ]
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileSolution {
    pub profile: RadialProfile,
    pub energy: f64,
    pub iterations: usize,
    pub gradient: f64,
}

/// Free-node gradient and tridiagonal Hessian of the reduced area; nodes
/// held at zero by the bound are decoupled. With `psd` each element
/// Hessian is replaced by its positive part.
fn assemble(p: &RadialProfile, psd: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = p.nodes.len() - 1;
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut g = vec![0.0; n];
    for el in 0..n {
        let (_, ge, he) = element(p.nodes[el], p.nodes[el + 1], p.values[el], p.values[el + 1]);
        let he = if psd { psd_part(he) } else { he };
        g[el] += ge[0];
        diag[el] += he[0][0];
        if el + 1 < n {
            g[el + 1] += ge[1];
            diag[el + 1] += he[1][1];
            off[el] += he[0][1];
        }
    }
    for i in 0..n {
        if p.values[i] <= 0.0 && g[i] > 0.0 {
            g[i] = 0.0;
            diag[i] = 1.0;
            if i > 0 {
                off[i - 1] = 0.0;
            }
            if i < n - 1 {
                off[i] = 0.0;
            }
        }
    }
    (g, diag, off)
}

/// Backtracking along `-step` with projection onto `f >= 0`.
fn try_step(p: &RadialProfile, e: f64, step: &[f64], halvings: usize) -> Option<(RadialProfile, f64)> {
    let mut t = 1.0;
    for _ in 0..halvings {
        let mut cand = p.values.clone();
        for (c, s) in cand.iter_mut().zip(step) {
            *c = (*c - t * s).max(0.0);
        }
        let q = RadialProfile {
            nodes: p.nodes.clone(),
            values: cand,
        };
        let eq = reduced_area(&q);
        if eq < e {
            return Some((q, eq));
        }
        t *= 0.5;
    }
    None
}

/// Minimize the reduced area over nodal profiles with `f(1) = R`,
/// `f >= 0`, by projected Newton on the tridiagonal Hessian, falling back
/// to Levenberg-Marquardt on the positive part where the Hessian is
/// indefinite.
pub fn solve_profile(r_bound: f64, rho: f64, nodes: usize, tol: f64) -> Result<ProfileSolution, HopfError> {
    if !(rho > 0.0 && rho <= 0.01) {
        return Err(HopfError::Profile(format!("ρ = {rho} outside (0, 0.01]")));
    }
    let mut p = RadialProfile::from_fn(rho, nodes, |r| r_bound * r)?;
    let mut e = reduced_area(&p);
    let max_iter = 2000;
    for it in 0..max_iter {
        let pg = projected_gradient_norm(&p);
        if pg <= tol {
            return Ok(ProfileSolution {
                energy: e,
                iterations: it,
                gradient: pg,
                profile: p,
            });
        }
        let (g, diag, off) = assemble(&p, false);
        let newton = tridiagonal_cholesky(&diag, &off, &g).and_then(|s| try_step(&p, e, &s, 30));
        let next = newton.or_else(|| {
            let (g, diag, off) = assemble(&p, true);
            let scale = diag.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            let mut mu = 1e-10 * scale;
            while mu <= 1e12 * scale {
                let d: Vec<f64> = diag.iter().map(|x| x + mu).collect();
                if let Some(found) = tridiagonal_cholesky(&d, &off, &g).and_then(|s| try_step(&p, e, &s, 4)) {
                    return Some(found);
                }
                mu *= 10.0;
            }
            None
        });
        match next {
            Some((q, eq)) => {
                p = q;
                e = eq;
            }
            None => {
                let pg = projected_gradient_norm(&p);
                if pg <= tol {
                    return Ok(ProfileSolution {
                        energy: e,
                        iterations: it,
                        gradient: pg,
                        profile: p,
                    });
                }
                return Err(HopfError::Budget {
                    iterations: it,
                    gradient: pg,
                });
            }
        }
    }
    Err(HopfError::Budget {
        iterations: max_iter,
        gradient: projected_gradient_norm(&p),
    })
}

/// Area of the graph over `B_ε` of the cutoff `f_ε(r) = (r/ε) c`, which
/// interpolates linearly from 0 to the value `c` at `r = ε`.
pub fn cutoff_area(c: f64, eps: f64) -> f64 {
    let s = c / eps;
    // ∫_0^ε 2π² r³ √(1+s²)(1 + 4 s²) dr
    2.0 * std::f64::consts::PI.powi(2) * (1.0 + s * s).sqrt() * (1.0 + 4.0 * s * s) * eps.powi(4) / 4.0
}
