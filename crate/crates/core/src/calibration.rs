//! The calibration form
//! `ω = (F(Dw) - F_{p^α_i} w^α_i) dx1∧dx2∧dx3 + F_{p^α_i} ω^α_i`
//! of a map `w: R^3 -> R^2`, its comass, its exterior derivative, and the
//! Stokes comparison between `u` and graphical competitors over the swapped
//! domain.
//!
//! Coordinates on `R^5` are ordered `(x1, x2, x3, z1, z2)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::area::value_and_gradient;
use crate::ck::Potential;
use crate::grid::GridMap;
use crate::hodograph::MapSource;
use crate::jets::{Jet, MapJet};
use crate::linalg::Mat;
use crate::mss::{outer_residual, outer_residual_grid, GridResidual, MssError};
use crate::parallel::{chunked, pairwise_sum, par_map};
use crate::scalar::Field;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("plane is degenerate (gram volume {0:e})")]
    Degenerate(f64),
    #[error("frame must be 5x3, got {0}x{1}")]
    Shape(usize, usize),
    #[error("competitor differs from u on the boundary by {0:e}")]
    BoundaryMismatch(f64),
    #[error("competitor and u live on different grids")]
    GridMismatch,
    #[error("no samples requested")]
    EmptyBudget,
    #[error(transparent)]
    Mss(#[from] MssError),
}

/// An oriented 3-plane in `R^5` spanned by the columns of a 5x3 matrix.
#[derive(Clone, Debug)]
pub struct SimplePlane {
    pub vectors: Mat<f64>,
}

impl SimplePlane {
    pub fn new(vectors: Mat<f64>) -> Result<Self, CalibrationError> {
        if vectors.rows() != 5 || vectors.cols() != 3 {
            return Err(CalibrationError::Shape(vectors.rows(), vectors.cols()));
        }
        Ok(SimplePlane { vectors })
    }

    /// `sqrt(det(VᵀV))`.
    pub fn gram_volume(&self) -> f64 {
        self.vectors.transpose().matmul(&self.vectors).det().max(0.0).sqrt()
    }

    /// Gram-Schmidt, keeping the orientation.
    pub fn normalized(&self) -> Result<Self, CalibrationError> {
        let vol = self.gram_volume();
        if !(vol > 1e-12) {
            return Err(CalibrationError::Degenerate(vol));
        }
        let mut q = self.vectors.clone();
        for j in 0..3 {
            for k in 0..j {
                let d: f64 = (0..5).map(|r| q[(r, j)] * q[(r, k)]).sum();
                for r in 0..5 {
                    q[(r, j)] -= d * q[(r, k)];
                }
            }
            let n: f64 = (0..5).map(|r| q[(r, j)] * q[(r, j)]).sum::<f64>().sqrt();
            if !(n > 1e-14) {
                return Err(CalibrationError::Degenerate(vol));
            }
            for r in 0..5 {
                q[(r, j)] /= n;
            }
        }
        Ok(SimplePlane { vectors: q })
    }

    /// The graphical plane spanned by `e_i + M e_i`, unnormalized.
    pub fn graphical(m: &Mat<f64>) -> Self {
        SimplePlane {
            vectors: Mat::from_fn(5, 3, |r, c| if r < 3 { f64::from(r == c) } else { m[(r - 3, c)] }),
        }
    }

    /// Minor of the rows `rows` (in order).
    pub fn minor(&self, rows: [usize; 3]) -> f64 {
        let v = &self.vectors;
        let a = |i: usize, j: usize| v[(rows[i], j)];
        a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1)) - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
            + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0))
    }
}

/// Coefficients of `ω` at one point: `a0` on `dx1∧dx2∧dx3`, `a[α][i]` on
/// `ω^α_i` (the `i`-th `dx` replaced by `dz_α`).
#[derive(Clone, Debug)]
pub struct FormCoefficients {
    pub a0: f64,
    pub a: Mat<f64>,
}

impl FormCoefficients {
    pub fn from_gradient(dw: &Mat<f64>) -> Self {
        let (f, p) = value_and_gradient(dw);
        FormCoefficients {
            a0: f - p.dot(dw),
            a: p,
        }
    }

    /// `ω(T)` for the polyvector of the columns of `t`.
    pub fn apply(&self, t: &SimplePlane) -> f64 {
        let mut s = self.a0 * t.minor([0, 1, 2]);
        for alpha in 0..2 {
            for i in 0..3 {
                let mut rows = [0, 1, 2];
                rows[i] = 3 + alpha;
                s += self.a[(alpha, i)] * t.minor(rows);
            }
        }
        s
    }
}

/// `ω` built from a pointwise map source.
#[derive(Clone, Copy)]
pub struct CalibrationForm<'a> {
    pub source: &'a dyn MapSource,
}

impl<'a> CalibrationForm<'a> {
    pub fn new(source: &'a dyn MapSource) -> Self {
        CalibrationForm { source }
    }

    pub fn gradient(&self, x: [f64; 3]) -> Mat<f64> {
        let d = self.source.gradient(x);
        Mat::from_fn(2, 3, |a, i| d[a][i])
    }

    pub fn coefficients(&self, x: [f64; 3]) -> FormCoefficients {
        FormCoefficients::from_gradient(&self.gradient(x))
    }

    /// Unit tangent plane of the graph of `w` at `x`.
    pub fn tangent_plane(&self, x: [f64; 3]) -> SimplePlane {
        SimplePlane::graphical(&self.gradient(x))
            .normalized()
            .expect("graphical planes are nondegenerate")
    }
}

/// `ω(T)` at `x`; `T` must have unit volume.
pub fn evaluate_form(form: &CalibrationForm<'_>, x: [f64; 3], t: &SimplePlane) -> Result<f64, CalibrationError> {
    let vol = t.gram_volume();
    if (vol - 1.0).abs() > 1e-9 {
        return Err(CalibrationError::Degenerate(vol));
    }
    Ok(form.coefficients(x).apply(t))
}

/// The closed form for graphical planes,
/// `F(M)^{-1} [F(Dw) + DF(Dw)·(M - Dw)]`.
pub fn graphical_value(dw: &Mat<f64>, m: &Mat<f64>) -> f64 {
    let (f, p) = value_and_gradient(dw);
    let (fm, _) = value_and_gradient(m);
    (f + p.dot(&m.sub(dw))) / fm
}

#[derive(Clone, Debug, Serialize)]
pub struct ComassReport {
    pub samples: usize,
    pub max_abs: f64,
    pub argmax: [f64; 3],
    /// Largest `|ω(T)|` over planes containing a vertical direction.
    pub max_vertical: f64,
    /// `max |ω(T_x) - 1|` over tangent planes at the sampled points.
    pub tangent_error: f64,
    /// Largest `|F_{p^α_i}(Dw)| / |Dw|` seen.
    pub coefficient_ratio: f64,
    /// Largest `|Dw|` seen.
    pub max_gradient: f64,
}

impl ComassReport {
    pub fn passed(&self) -> bool {
        self.max_abs <= 1.0 + 1e-12 && self.tangent_error <= 1e-12
    }
}

fn gaussian_plane<R: Rng>(rng: &mut R) -> Mat<f64> {
    Mat::from_fn(5, 3, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random unit planes at random points of the box `[lo, hi]` (restricted to
/// `keep`). One third of the planes are Gaussian frames, one third are
/// graphical planes near the tangent plane (where `|ω|` is closest to 1), and
/// one third contain a vertical direction.
pub fn comass_sample(
    form: &CalibrationForm<'_>,
    lo: [f64; 3],
    hi: [f64; 3],
    keep: &(dyn Fn([f64; 3]) -> bool + Sync),
    samples: usize,
    seed: u64,
) -> Result<ComassReport, CalibrationError> {
    if samples == 0 {
        return Err(CalibrationError::EmptyBudget);
    }
    let parts = chunked(samples, seed, |rng, count| {
        let mut rep = ComassReport {
            samples: 0,
            max_abs: 0.0,
            argmax: [0.0; 3],
            max_vertical: 0.0,
            tangent_error: 0.0,
            coefficient_ratio: 0.0,
            max_gradient: 0.0,
        };
        let mut drawn = 0;
        while drawn < count {
            let x = [0, 1, 2].map(|a| rng.gen_range(lo[a]..=hi[a]));
            if !keep(x) {
                continue;
            }
            drawn += 1;
            let dw = form.gradient(x);
            let coef = FormCoefficients::from_gradient(&dw);
            let gn = dw.norm();
            rep.max_gradient = rep.max_gradient.max(gn);
            if gn > 0.0 {
                rep.coefficient_ratio = rep.coefficient_ratio.max(coef.a.max_abs() / gn);
            }
            let tan = SimplePlane::graphical(&dw).normalized().expect("graphical");
            rep.tangent_error = rep.tangent_error.max((coef.apply(&tan) - 1.0).abs());
            let kind = drawn % 3;
            let raw = match kind {
                0 => gaussian_plane(rng),
                1 => {
                    let s = 10f64.powf(rng.gen_range(-6.0..0.0));
                    let e = Mat::from_fn(2, 3, |_, _| rng.sample::<f64, _>(StandardNormal));
                    let en = e.norm().max(1e-300);
                    SimplePlane::graphical(&dw.add(&e.scale(&(s / en)))).vectors
                }
                _ => {
                    let mut v = gaussian_plane(rng);
                    for r in 0..3 {
                        v[(r, 0)] = 0.0;
                    }
                    v
                }
            };
            let Ok(t) = SimplePlane { vectors: raw }.normalized() else {
                continue;
            };
            let val = coef.apply(&t).abs();
            if kind == 2 {
                rep.max_vertical = rep.max_vertical.max(val);
            }
            if val > rep.max_abs {
                rep.max_abs = val;
                rep.argmax = x;
            }
            rep.samples += 1;
        }
        rep
    });
    // chunk order is fixed, so the reduction is deterministic
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        out.samples += p.samples;
        if p.max_abs > out.max_abs {
            out.max_abs = p.max_abs;
            out.argmax = p.argmax;
        }
        out.max_vertical = out.max_vertical.max(p.max_vertical);
        out.tangent_error = out.tangent_error.max(p.tangent_error);
        out.coefficient_ratio = out.coefficient_ratio.max(p.coefficient_ratio);
        out.max_gradient = out.max_gradient.max(p.max_gradient);
    }
    Ok(out)
}

/// Coefficients of `dω` on `dz_α∧dx1∧dx2∧dx3`, namely `-∂_i F_{p^α_i}(Dw)`.
pub fn exterior_derivative<T: Field>(w: &MapJet<T>) -> Result<Vec<Jet<T>>, CalibrationError> {
    let r = outer_residual(w, None)?;
    Ok(r.components.iter().map(|c| -c).collect())
}

/// Grid version of [`exterior_derivative`] by finite differences.
pub fn exterior_derivative_grid(w: &GridMap) -> GridResidual {
    let mut r = outer_residual_grid(w, &|_| [0.0; 2]);
    for v in &mut r.values {
        v.iter_mut().for_each(|c| *c = -*c);
    }
    r
}

/// The terms of the comparison chain
/// `vol(Γψ) - vol(Γu) >= ∫_{Γψ} ω - ∫_{Γu} ω = ∫_{Γψ} ω̃ - ∫_{Γu} ω̃ (+ bulk)`
/// with `ω̃ = H χ_{H>0} dz1∧dx2∧dx3`.
#[derive(Clone, Debug, Serialize)]
pub struct StokesChain {
    pub vol_psi: f64,
    pub vol_u: f64,
    pub omega_psi: f64,
    pub omega_u: f64,
    pub h_psi: f64,
    pub h_u: f64,
    /// `∫ d(ω - ω̃)` over the straight homotopy from `Γu` to `Γψ`: zero when
    /// `w` solves the forced system exactly.
    pub bulk: f64,
    /// `(Δω - Δω̃ - bulk) / vol(Γu)`.
    pub stokes_defect: f64,
    /// `(Δω - Δω̃) / vol(Γu)`, the defect if the bulk term is dropped.
    pub closed_defect: f64,
}

impl StokesChain {
    pub fn area_excess(&self) -> f64 {
        self.vol_psi - self.vol_u
    }

    pub fn omega_gap(&self) -> f64 {
        self.omega_psi - self.omega_u
    }

    pub fn h_term(&self) -> f64 {
        self.h_psi - self.h_u
    }
}

fn check_pair(u: &GridMap, psi: &GridMap) -> Result<(), CalibrationError> {
    if u.dims != psi.dims || u.lo != psi.lo || u.h != psi.h {
        return Err(CalibrationError::GridMismatch);
    }
    let mut worst: f64 = 0.0;
    for i in 0..u.len() {
        if u.on_face(u.node(i)) {
            for a in 0..2 {
                worst = worst.max((u.values[i][a] - psi.values[i][a]).abs());
            }
        }
    }
    if worst > 1e-12 {
        return Err(CalibrationError::BoundaryMismatch(worst));
    }
    Ok(())
}

/// Cell-center value and cell gradient of a grid map.
fn cell_state(g: &GridMap, c: [usize; 3]) -> ([f64; 2], [[f64; 3]; 2]) {
    let corners = g.cell_corners(c);
    let mut v = [0.0; 2];
    for &k in &corners {
        v[0] += g.values[k][0] / 8.0;
        v[1] += g.values[k][1] / 8.0;
    }
    (v, g.cell_gradient(c))
}

/// Tangent frame of the graph `{(ψ¹(y), y2, y3, y1, ψ²(y))}` from the
/// gradient of `ψ` in `y`.
fn swapped_frame(d: &[[f64; 3]; 2]) -> SimplePlane {
    let mut v = Mat::zeros(5, 3);
    for j in 0..3 {
        v[(0, j)] = d[0][j];
        v[(4, j)] = d[1][j];
    }
    v[(3, 0)] = 1.0;
    v[(1, 1)] = 1.0;
    v[(2, 2)] = 1.0;
    SimplePlane { vectors: v }
}

struct GraphIntegrals {
    vol: f64,
    omega: f64,
    h: f64,
}

fn graph_integrals(form: &CalibrationForm<'_>, h: Option<&Potential>, g: &GridMap, sub: usize) -> GraphIntegrals {
    let cells = g.num_cells();
    let per: Vec<[f64; 3]> = par_map(cells, |ci| {
        let c = g.cell(ci);
        let (v, d) = cell_state(g, c);
        let y = g.cell_center(c);
        let m = Mat::from_fn(2, 3, |a, i| d[a][i]);
        let (f, _) = value_and_gradient(&m);
        let x = [v[0], y[1], y[2]];
        let omega = form.coefficients(x).apply(&swapped_frame(&d));
        let hterm = h.map_or(0.0, |pot| h_in_cell(pot, g, c, sub));
        [f, omega, hterm]
    });
    let vol = g.cell_volume();
    let col = |k: usize| pairwise_sum(&per.iter().map(|p| p[k]).collect::<Vec<_>>()) * vol;
    GraphIntegrals {
        vol: col(0),
        omega: col(1),
        h: col(2),
    }
}

/// Mean of `H χ_{H>0}` over a cell on an `sub³` sub-grid, with `ψ¹`
/// interpolated trilinearly.
fn h_in_cell(pot: &Potential, g: &GridMap, c: [usize; 3], sub: usize) -> f64 {
    let corners = g.cell_corners(c);
    let lo = g.coords(c);
    let mut acc = 0.0;
    for a in 0..sub {
        for b in 0..sub {
            for e in 0..sub {
                let t = [a, b, e].map(|q| (q as f64 + 0.5) / sub as f64);
                let mut x1 = 0.0;
                for (bit, &k) in corners.iter().enumerate() {
                    let w = [bit >> 2 & 1, bit >> 1 & 1, bit & 1]
                        .iter()
                        .zip(&t)
                        .map(|(&s, &ti)| if s == 1 { ti } else { 1.0 - ti })
                        .product::<f64>();
                    x1 += w * g.values[k][0];
                }
                let x = [x1, lo[1] + t[1] * g.h[1], lo[2] + t[2] * g.h[2]];
                let hv = pot.value(x);
                if hv > 0.0 {
                    acc += hv;
                }
            }
        }
    }
    acc / (sub * sub * sub) as f64
}

/// `∫_0^1 ∫_U d(ω - ω̃)(∂t, ∂y1, ∂y2, ∂y3)` along `ψ_t = u + t(ψ - u)`,
/// Gauss-Legendre in `t`.
fn bulk_term(form: &CalibrationForm<'_>, h: Option<&Potential>, u: &GridMap, psi: &GridMap) -> f64 {
    const NODES: [(f64, f64); 4] = [
        (0.069_431_844_202_973_71, 0.173_927_422_568_726_93),
        (0.330_009_478_207_571_9, 0.326_072_577_431_273_1),
        (0.669_990_521_792_428_1, 0.326_072_577_431_273_1),
        (0.930_568_155_797_026_3, 0.173_927_422_568_726_93),
    ];
    let per: Vec<f64> = par_map(u.num_cells(), |ci| {
        let c = u.cell(ci);
        let (vu, du) = cell_state(u, c);
        let (vp, dp) = cell_state(psi, c);
        let phi = [vp[0] - vu[0], vp[1] - vu[1]];
        if phi == [0.0, 0.0] && du == dp {
            return 0.0;
        }
        let y = u.cell_center(c);
        let mut acc = 0.0;
        for (t, wt) in NODES {
            let x = [vu[0] + t * phi[0], y[1], y[2]];
            let d1 = [
                du[0][0] + t * (dp[0][0] - du[0][0]),
                du[1][0] + t * (dp[1][0] - du[1][0]),
            ];
            let r = form.source.outer_operator(x);
            let mut rho1 = -r[0];
            if let Some(pot) = h {
                if pot.value(x) > 0.0 {
                    rho1 += pot.gradient(x)[0];
                }
            }
            let rho2 = -r[1];
            acc += wt * (rho1 * (-phi[0]) + rho2 * (phi[1] * d1[0] - phi[0] * d1[1]));
        }
        acc
    });
    pairwise_sum(&per) * u.cell_volume()
}

/// Evaluate every term of the comparison chain on the grid of `u`.
/// `h = None` means the unforced case (`ω̃ = 0`). `sub` is the sub-grid
/// factor for the `χ_{H>0}` quadrature.
pub fn area_comparison(
    form: &CalibrationForm<'_>,
    h: Option<&Potential>,
    u: &GridMap,
    psi: &GridMap,
    sub: usize,
) -> Result<StokesChain, CalibrationError> {
    check_pair(u, psi)?;
    let gu = graph_integrals(form, h, u, sub);
    let gp = graph_integrals(form, h, psi, sub);
    let bulk = bulk_term(form, h, u, psi);
    let d_omega = gp.omega - gu.omega;
    let d_h = gp.h - gu.h;
    Ok(StokesChain {
        vol_psi: gp.vol,
        vol_u: gu.vol,
        omega_psi: gp.omega,
        omega_u: gu.omega,
        h_psi: gp.h,
        h_u: gu.h,
        bulk,
        stokes_defect: (d_omega - d_h - bulk) / gu.vol,
        closed_defect: (d_omega - d_h) / gu.vol,
    })
}

/// `ψ = u + φ` with `φ` a random combination of sine modes vanishing on the
/// faces; `amp[α]` bounds the size of `φ^α`.
pub fn random_competitor<R: Rng>(u: &GridMap, rng: &mut R, amp: [f64; 2], modes: usize) -> GridMap {
    let lo = u.lo;
    let len = [0, 1, 2].map(|a| u.h[a] * (u.dims[a] - 1) as f64);
    let terms: Vec<(usize, [u32; 3], f64)> = (0..modes)
        .map(|_| {
            let alpha = rng.gen_range(0..2);
            let k = [0; 3].map(|_: u32| rng.gen_range(1..=3));
            let c = rng.gen_range(-1.0..1.0) * amp[alpha] / modes as f64;
            (alpha, k, c)
        })
        .collect();
    let mut psi = u.clone();
    for i in 0..psi.len() {
        let n = psi.node(i);
        if psi.on_face(n) {
            continue;
        }
        let y = psi.coords(n);
        for &(alpha, k, c) in &terms {
            let s: f64 = (0..3)
                .map(|a| (k[a] as f64 * std::f64::consts::PI * (y[a] - lo[a]) / len[a]).sin())
                .product();
            psi.values[i][alpha] += c * s;
        }
    }
    psi
}

/// Competitor that replaces the vertical patch of `u¹` near `Σ` by the
/// graph `x1 = slope (y1 - y2 y3)`, blended in with a polynomial bump that
/// vanishes on the faces. Its graph crosses `{H > 0}` transversally.
pub fn slab_competitor(u: &GridMap, slope: f64) -> GridMap {
    let hi = [0, 1, 2].map(|a| u.lo[a] + u.h[a] * (u.dims[a] - 1) as f64);
    let bump = |t: f64, lo: f64, hi: f64| {
        let c = 0.5 * (lo + hi);
        let r = 0.5 * (hi - lo);
        let s = (t - c) / r;
        if s.abs() < 1.0 {
            (1.0 - s * s).powi(2)
        } else {
            0.0
        }
    };
    let mut psi = u.clone();
    for i in 0..psi.len() {
        let n = psi.node(i);
        if psi.on_face(n) {
            continue;
        }
        let y = psi.coords(n);
        let beta: f64 = (0..3).map(|a| bump(y[a], u.lo[a], hi[a])).product();
        let target = slope * (y[0] - y[1] * y[2]);
        psi.values[i][0] = (1.0 - beta) * psi.values[i][0] + beta * target;
    }
    psi
}
