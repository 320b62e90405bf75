//! The axis swap `y(x) = (w¹(x), x2, x3)` that turns a map `w` with
//! `∂_1 w¹ >= 0` into the map `u` with `u¹(y(x)) = x1`, `u²(y(x)) = w²(x)`.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

use crate::area::value_and_gradient;
use crate::ck::{locate_gamma, CkError, Potential};
use crate::grid::{GridError, GridMap};
use crate::jets::{CompiledJet, MapJet};
use crate::linalg::Mat;
use crate::mss::metric_from_gradient;
use crate::parallel::par_map;

#[derive(Debug, Error)]
pub enum HodographError {
    #[error("point {0:?} lies outside the domain box")]
    OutOfDomain([f64; 3]),
    #[error("y1 = {y1} is outside the range [{lo}, {hi}] of the fiber")]
    OutOfRange { y1: f64, lo: f64, hi: f64 },
    #[error("slice is not monotone: ∂_1 w¹ = {0} at {1:?}")]
    NotMonotone(f64, [f64; 3]),
    #[error(transparent)]
    Ck(#[from] CkError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A map `w: R^3 -> R^2` that can be evaluated pointwise.
pub trait MapSource: Sync {
    fn value(&self, x: [f64; 3]) -> [f64; 2];
    /// `w¹` alone.
    fn first(&self, x: [f64; 3]) -> f64 {
        self.value(x)[0]
    }
    /// `∂_1 w¹`.
    fn d1_first(&self, x: [f64; 3]) -> f64;

    /// `Dw`, rows indexed by component. Central differences by default.
    fn gradient(&self, x: [f64; 3]) -> [[f64; 3]; 2] {
        let mut d = [[0.0; 3]; 2];
        for i in 0..3 {
            let h = 1e-6 * (1.0 + x[i].abs());
            let (mut p, mut m) = (x, x);
            p[i] += h;
            m[i] -= h;
            let (vp, vm) = (self.value(p), self.value(m));
            for a in 0..2 {
                d[a][i] = (vp[a] - vm[a]) / (2.0 * h);
            }
        }
        d
    }

    /// `∂_i(F_{p^α_i}(Dw))`, the unforced outer operator. Central differences
    /// of the flux by default.
    fn outer_operator(&self, x: [f64; 3]) -> [f64; 2] {
        let mut r = [0.0; 2];
        for i in 0..3 {
            let h = 1e-4 * (1.0 + x[i].abs());
            let (mut p, mut m) = (x, x);
            p[i] += h;
            m[i] -= h;
            let (fp, fm) = (flux(&self.gradient(p)), flux(&self.gradient(m)));
            for a in 0..2 {
                r[a] += (fp[(a, i)] - fm[(a, i)]) / (2.0 * h);
            }
        }
        r
    }
}

/// `sqrt(g) Δ_g w^α = sqrt(g) g^{kl} (w^α_kl - g^{mp} w^β_p w^β_kl w^α_m)`
/// for the graph metric `g = I + DwᵀDw`; equal to `∂_i(F_{p^α_i}(Dw))`.
pub fn laplace_beltrami(d: &[[f64; 3]; 2], h: &[[[f64; 3]; 3]; 2]) -> [f64; 2] {
    let m = Mat::from_fn(2, 3, |a, i| d[a][i]);
    let md = metric_from_gradient(&m);
    let gi = &md.g_inv;
    let mut out = [0.0; 2];
    for (alpha, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for k in 0..3 {
            for l in 0..3 {
                let mut christ = 0.0;
                for mm in 0..3 {
                    for p in 0..3 {
                        let s: f64 = (0..2).map(|b| d[b][p] * h[b][k][l]).sum();
                        christ += gi[(mm, p)] * s * d[alpha][mm];
                    }
                }
                acc += gi[(k, l)] * (h[alpha][k][l] - christ);
            }
        }
        *o = md.sqrt_det * acc;
    }
    out
}

/// `F_p(Dw) = sqrt(det g) Dw g⁻¹`.
pub fn flux(d: &[[f64; 3]; 2]) -> Mat<f64> {
    let m = Mat::from_fn(2, 3, |a, i| d[a][i]);
    value_and_gradient(&m).1
}

/// Pointwise evaluation of a float map jet.
#[derive(Clone, Debug)]
pub struct JetSource {
    pub map: MapJet<f64>,
    comps: [CompiledJet; 2],
    d1: CompiledJet,
    grad: [[CompiledJet; 3]; 2],
    /// Upper triangle of each Hessian, row-major.
    hess: [[CompiledJet; 6]; 2],
}

const UPPER: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

impl JetSource {
    pub fn new(map: MapJet<f64>) -> Self {
        assert_eq!(map.dim(), 2, "maps into R^2 only");
        let comps = [map.component(0).compile(), map.component(1).compile()];
        let d1 = map.component(0).partial(0).compile();
        let g = map.gradient();
        let grad = std::array::from_fn(|a| std::array::from_fn(|i| g.get(a, i).compile()));
        let hess = std::array::from_fn(|a| std::array::from_fn(|k| g.get(a, UPPER[k].0).partial(UPPER[k].1).compile()));
        JetSource {
            map,
            comps,
            d1,
            grad,
            hess,
        }
    }
}

impl MapSource for JetSource {
    fn value(&self, x: [f64; 3]) -> [f64; 2] {
        [self.comps[0].eval(&x), self.comps[1].eval(&x)]
    }

    fn first(&self, x: [f64; 3]) -> f64 {
        self.comps[0].eval(&x)
    }

    fn d1_first(&self, x: [f64; 3]) -> f64 {
        self.d1.eval(&x)
    }

    fn gradient(&self, x: [f64; 3]) -> [[f64; 3]; 2] {
        std::array::from_fn(|a| std::array::from_fn(|i| self.grad[a][i].eval(&x)))
    }

    /// Pointwise, from `Dw` and `D²w` of the polynomial itself (not its
    /// truncated class): `sqrt(g) Δ_g w^α`.
    fn outer_operator(&self, x: [f64; 3]) -> [f64; 2] {
        let d = self.gradient(x);
        let mut h = [[[0.0; 3]; 3]; 2];
        for (a, ha) in h.iter_mut().enumerate() {
            for (k, &(i, j)) in UPPER.iter().enumerate() {
                let v = self.hess[a][k].eval(&x);
                ha[i][j] = v;
                ha[j][i] = v;
            }
        }
        laplace_beltrami(&d, &h)
    }
}

impl<F, G> MapSource for (F, G)
where
    F: Fn([f64; 3]) -> [f64; 2] + Sync,
    G: Fn([f64; 3]) -> f64 + Sync,
{
    fn value(&self, x: [f64; 3]) -> [f64; 2] {
        (self.0)(x)
    }

    fn d1_first(&self, x: [f64; 3]) -> f64 {
        (self.1)(x)
    }
}

/// Monotone stand-in for the glued free-boundary map: `w = v` on the closure
/// of `{H > 0}`, and
/// `w¹ = x2 x3 + κ ∫_0^{x1} (H⁻)² dt`, `w² = v²` elsewhere, where
/// `H⁻ = max(-H, 0)`. It is not minimal outside `Ω₀`; it only reproduces the
/// coincidence structure `{∂_1 w¹ = 0} = {H >= 0}` near `Ω₀`.
#[derive(Clone, Debug)]
pub struct SurrogateExterior {
    pub v: JetSource,
    pub potential: Potential,
    pub kappa: f64,
}

impl SurrogateExterior {
    pub fn new(v: MapJet<f64>, potential: Potential, kappa: f64) -> Self {
        SurrogateExterior {
            v: JetSource::new(v),
            potential,
            kappa,
        }
    }

    /// Coefficients in `t` of `H(t, x2, x3)`.
    fn line_poly(&self, x2: f64, x3: f64) -> Vec<f64> {
        let h = &self.potential.h;
        let mut p = vec![0.0; h.degree() as usize + 1];
        for (e, c) in h.terms() {
            p[e[0] as usize] += c * x2.powi(e[1] as i32) * x3.powi(e[2] as i32);
        }
        p
    }

    /// `∫_{t0}^{x1} (H⁻)² dt`, exact on each sign interval of the
    /// polynomial, where `t0` maximizes `H` along the line. On a line that
    /// meets the region, `t0` lies in the chord, so the integral vanishes on
    /// the whole chord.
    pub fn monotone_part(&self, x: [f64; 3]) -> f64 {
        let p = self.line_poly(x[1], x[2]);
        let t0 = line_argmax(&p, 3.0 * self.potential.model_radius());
        signed_negative_square_integral(&p, t0, x[0])
    }
}

fn poly_eval(p: &[f64], t: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn line_argmax(p: &[f64], r: f64) -> f64 {
    let n = 64;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for i in 0..=n {
        let t = -r + 2.0 * r * i as f64 / n as f64;
        let v = poly_eval(p, t);
        if v > best.0 {
            best = (v, t);
        }
    }
    let d: Vec<f64> = p.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect();
    let dd: Vec<f64> = d.iter().enumerate().skip(1).map(|(i, c)| i as f64 * c).collect();
    let mut t = best.1;
    for _ in 0..30 {
        let h = poly_eval(&dd, t);
        if h >= 0.0 {
            break;
        }
        let step = poly_eval(&d, t) / h;
        t -= step;
        if step.abs() < 1e-16 {
            break;
        }
    }
    if poly_eval(p, t) >= best.0 {
        t
    } else {
        best.1
    }
}

/// `∫_a^b (min(p, 0))² dt` with orientation.
fn signed_negative_square_integral(p: &[f64], a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let (lo, hi, sign) = if b > a { (a, b, 1.0) } else { (b, a, -1.0) };
    let n = 64;
    let mut cuts = vec![lo];
    let mut prev = poly_eval(p, lo);
    for i in 1..=n {
        let t = lo + (hi - lo) * i as f64 / n as f64;
        let cur = poly_eval(p, t);
        if prev != 0.0 && prev.signum() != cur.signum() {
            let (mut l, mut h) = (lo + (hi - lo) * (i - 1) as f64 / n as f64, t);
            for _ in 0..80 {
                let mid = 0.5 * (l + h);
                if poly_eval(p, mid).signum() == prev.signum() {
                    l = mid;
                } else {
                    h = mid;
                }
            }
            cuts.push(0.5 * (l + h));
        }
        prev = cur;
    }
    cuts.push(hi);
    let mut sq = vec![0.0; 2 * p.len() - 1];
    for (i, ci) in p.iter().enumerate() {
        for (j, cj) in p.iter().enumerate() {
            sq[i + j] += ci * cj;
        }
    }
    let anti = |t: f64| {
        sq.iter()
            .enumerate()
            .rev()
            .fold(0.0, |acc, (i, c)| acc * t + c / (i + 1) as f64)
            * t
    };
    let mut total = 0.0;
    for w in cuts.windows(2) {
        if poly_eval(p, 0.5 * (w[0] + w[1])) < 0.0 {
            total += anti(w[1]) - anti(w[0]);
        }
    }
    sign * total
}

impl MapSource for SurrogateExterior {
    fn value(&self, x: [f64; 3]) -> [f64; 2] {
        let v = self.v.value(x);
        [x[1] * x[2] + self.kappa * self.monotone_part(x), v[1]]
    }

    fn d1_first(&self, x: [f64; 3]) -> f64 {
        let hm = (-self.potential.value(x)).max(0.0);
        self.kappa * hm * hm
    }
}

/// Where the inverse of `y` lands.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Fiber {
    Point([f64; 3]),
    /// A vertical fiber: every `x1` in `[lo, hi]` maps to the same `y`.
    Interval {
        lo: f64,
        hi: f64,
        x2: f64,
        x3: f64,
    },
}

impl Fiber {
    pub fn midpoint(&self) -> [f64; 3] {
        match *self {
            Fiber::Point(x) => x,
            Fiber::Interval { lo, hi, x2, x3 } => [0.5 * (lo + hi), x2, x3],
        }
    }

    pub fn length(&self) -> f64 {
        match *self {
            Fiber::Point(_) => 0.0,
            Fiber::Interval { lo, hi, .. } => hi - lo,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotonicityCertificate {
    pub samples: usize,
    pub min_d1: f64,
    pub holds: bool,
}

/// `w` on a box, with the swap `x -> y(x)`.
pub struct SwappedMap<'a, S: MapSource> {
    pub source: &'a S,
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl<'a, S: MapSource> SwappedMap<'a, S> {
    pub fn new(source: &'a S, lo: [f64; 3], hi: [f64; 3]) -> Self {
        SwappedMap { source, lo, hi }
    }

    fn in_box(&self, x: [f64; 3]) -> bool {
        (0..3).all(|a| x[a] >= self.lo[a] - 1e-15 && x[a] <= self.hi[a] + 1e-15)
    }

    /// `∂_1 w¹ >= -1e-12` on an `n³` lattice of the box.
    pub fn certify(&self, n: usize) -> MonotonicityCertificate {
        let mut min_d1 = f64::INFINITY;
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let x = [i, j, k].map(|c| c as f64 / (n - 1).max(1) as f64);
                    let x = [0, 1, 2].map(|a| self.lo[a] + x[a] * (self.hi[a] - self.lo[a]));
                    min_d1 = min_d1.min(self.source.d1_first(x));
                }
            }
        }
        MonotonicityCertificate {
            samples: n * n * n,
            min_d1,
            holds: min_d1 >= -1e-12,
        }
    }

    /// `y(x)` and `u(y(x)) = (x1, w²(x))`.
    pub fn forward(&self, x: [f64; 3]) -> Result<([f64; 3], [f64; 2]), HodographError> {
        if !self.in_box(x) {
            return Err(HodographError::OutOfDomain(x));
        }
        let w = self.source.value(x);
        Ok(([w[0], x[1], x[2]], [x[0], w[1]]))
    }

    /// Solve `w¹(x1, y2, y3) = y1` by bisection. A flat stretch of the slice
    /// at level `y1` comes back as an interval.
    pub fn invert(&self, y: [f64; 3], tol: f64) -> Result<Fiber, HodographError> {
        let probe = [self.lo[0], y[1], y[2]];
        if !self.in_box(probe) {
            return Err(HodographError::OutOfDomain(y));
        }
        let w1 = |t: f64| self.source.first([t, y[1], y[2]]);
        let (a, b) = (self.lo[0], self.hi[0]);
        let (wa, wb) = (w1(a), w1(b));
        if y[0] < wa - tol || y[0] > wb + tol {
            return Err(HodographError::OutOfRange {
                y1: y[0],
                lo: wa,
                hi: wb,
            });
        }
        // first t with w¹ >= y1 - tol, last t with w¹ <= y1 + tol
        let search = |target: f64, strict_below: bool| {
            let (mut lo, mut hi) = (a, b);
            let below = |t: f64| if strict_below { w1(t) < target } else { w1(t) <= target };
            if !below(lo) {
                return lo;
            }
            if below(hi) {
                return hi;
            }
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                if below(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let x1 = search(y[0], true);
        let probe = (x1 + 1e-6 * (b - a)).min(b);
        if (w1(probe) - y[0]).abs() > tol.max(f64::MIN_POSITIVE) {
            return Ok(Fiber::Point([x1, y[1], y[2]]));
        }
        let left = search(y[0] - tol, true);
        let right = search(y[0] + tol, false);
        if right - left > 1e-9 * (b - a) {
            Ok(Fiber::Interval {
                lo: left,
                hi: right,
                x2: y[1],
                x3: y[2],
            })
        } else {
            Ok(Fiber::Point([x1, y[1], y[2]]))
        }
    }

    /// Sample `u` on a lattice of the `y` box `[lo, hi]`; faces are frozen.
    pub fn u_grid(&self, dims: [usize; 3], lo: [f64; 3], hi: [f64; 3], tol: f64) -> Result<GridMap, HodographError> {
        let mut g = GridMap::from_fn(dims, lo, hi, |_| [0.0; 2])?;
        let vals = par_map(g.len(), |i| self.u_at(g.coords(g.node(i)), tol));
        for (slot, v) in g.values.iter_mut().zip(vals) {
            *slot = v?;
        }
        Ok(g)
    }

    /// `u(y)`, taking fiber midpoints on vertical fibers.
    pub fn u_at(&self, y: [f64; 3], tol: f64) -> Result<[f64; 2], HodographError> {
        let x = self.invert(y, tol)?.midpoint();
        Ok([x[0], self.source.value(x)[1]])
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HolderProbe {
    pub exponent: f64,
    pub ts: Vec<f64>,
    pub u1: Vec<f64>,
    /// `u¹(t, 0, 0) / t` at the smallest `t`.
    pub final_quotient: f64,
    /// Whether `u¹(t, 0, 0) / t` increases as `t` decreases.
    pub quotients_monotone: bool,
}

/// Least-squares slope of `log u¹(t, 0, 0)` against `log t` for
/// `t ∈ [1e-6, 1e-3]`.
pub fn holder_probe<S: MapSource>(swap: &SwappedMap<'_, S>, points: usize) -> Result<HolderProbe, HodographError> {
    let ts: Vec<f64> = (0..points)
        .map(|i| 10f64.powf(-6.0 + 3.0 * i as f64 / (points - 1) as f64))
        .collect();
    let mut u1 = Vec::with_capacity(points);
    for &t in &ts {
        let x = swap.invert([t, 0.0, 0.0], 0.0)?.midpoint();
        let d = swap.source.d1_first(x);
        if d < -1e-12 {
            return Err(HodographError::NotMonotone(d, x));
        }
        u1.push(x[0]);
    }
    let lx: Vec<f64> = ts.iter().map(|t| t.ln()).collect();
    let ly: Vec<f64> = u1.iter().map(|u| u.ln()).collect();
    let n = points as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    let q: Vec<f64> = ts.iter().zip(&u1).map(|(t, u)| u / t).collect();
    let quotients_monotone = q.windows(2).all(|w| w[0] > w[1]);
    Ok(HolderProbe {
        exponent: sxy / sxx,
        final_quotient: q[0],
        quotients_monotone,
        ts,
        u1,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SigmaSurface {
    /// Points `y(x)` for `x` in the closure of `Ω₀`.
    pub points: Vec<[f64; 3]>,
    /// The preimages `x`.
    pub preimages: Vec<[f64; 3]>,
    /// `y(Γ)`, ordered by angle around the `x1` axis.
    pub boundary: Vec<[f64; 3]>,
    /// Largest distance from a sample to `{(x2 x3, x2, x3)}`.
    pub max_surface_error: f64,
    /// Largest gap between consecutive boundary points (cyclically).
    pub max_boundary_gap: f64,
}

/// Sample `Σ = y(closure Ω₀)` on an `n³` lattice of the box `[-r, r]³` and
/// trace its boundary `y(Γ)` on `meridians` meridians.
pub fn sigma_surface<S: MapSource>(
    source: &S,
    pot: &Potential,
    r: f64,
    n: usize,
    meridians: usize,
) -> Result<SigmaSurface, HodographError> {
    let mut points = Vec::new();
    let mut preimages = Vec::new();
    let mut max_err: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let x = [i, j, k].map(|c| -r + 2.0 * r * c as f64 / (n - 1) as f64);
                if pot.value(x) < 0.0 {
                    continue;
                }
                let w = source.value(x);
                let y = [w[0], x[1], x[2]];
                max_err = max_err.max((y[0] - y[1] * y[2]).abs());
                points.push(y);
                preimages.push(x);
            }
        }
    }
    let gamma = locate_gamma(pot, meridians)?;
    let boundary: Vec<[f64; 3]> = gamma
        .iter()
        .map(|s| {
            let w = source.value(s.point);
            [w[0], s.point[1], s.point[2]]
        })
        .collect();
    for b in &boundary {
        max_err = max_err.max((b[0] - b[1] * b[2]).abs());
    }
    let mut gap: f64 = 0.0;
    for i in 0..boundary.len() {
        let a = boundary[i];
        let b = boundary[(i + 1) % boundary.len()];
        let d = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
        gap = gap.max(d);
    }
    Ok(SigmaSurface {
        points,
        preimages,
        boundary,
        max_surface_error: max_err,
        max_boundary_gap: gap,
    })
}

impl SigmaSurface {
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "y1,y2,y3,boundary")?;
        for p in &self.points {
            writeln!(w, "{:.12e},{:.12e},{:.12e},0", p[0], p[1], p[2])?;
        }
        for p in &self.boundary {
            writeln!(w, "{:.12e},{:.12e},{:.12e},1", p[0], p[1], p[2])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ck::{a_epsilon, fbp_pipeline, solve_point};
    use crate::scalar::rat;

    fn point_source() -> JetSource {
        let e = rat(3, 4);
        JetSource::new(solve_point(&e, &a_epsilon(&e), 6).unwrap().to_f64())
    }

    fn regular() -> impl MapSource {
        (|x: [f64; 3]| [x[0], x[1] - x[2]], |_x: [f64; 3]| 1.0)
    }

    #[test]
    fn pointwise_operator_matches_jet_residual() {
        use crate::jets::Jet;
        use crate::mss::outer_residual;
        let w = MapJet::new(vec![
            Jet::from_terms(6, [([1, 1, 0], 0.3), ([0, 2, 1], -0.7), ([3, 0, 0], 0.2)]),
            Jet::from_terms(6, [([0, 1, 0], 0.5), ([1, 0, 1], 1.1), ([0, 0, 2], 0.4)]),
        ])
        .unwrap();
        let src = JetSource::new(w.clone());
        let r = outer_residual(&w.clone().truncate(6), None).unwrap();
        let x = [0.01, -0.02, 0.015];
        let a = src.outer_operator(x);
        // the jet residual drops terms of degree > 4
        for k in 0..2 {
            assert!((a[k] - r.components[k].eval(&x)).abs() < 1e-7, "{a:?}");
        }
        // and the generic flux differences agree at a larger point
        let fd = (|x: [f64; 3]| src.value(x), |x: [f64; 3]| src.d1_first(x));
        let y = [0.2, -0.1, 0.3];
        let exact = src.outer_operator(y);
        let approx = MapSource::outer_operator(&fd, y);
        for k in 0..2 {
            assert!(
                (exact[k] - approx[k]).abs() < 1e-5 * (1.0 + exact[k].abs()),
                "{exact:?} {approx:?}"
            );
        }
    }

    #[test]
    fn identity_swap() {
        let src = regular();
        let s = SwappedMap::new(&src, [-1.0; 3], [1.0; 3]);
        let (y, u) = s.forward([0.3, -0.2, 0.5]).unwrap();
        assert_eq!(y, [0.3, -0.2, 0.5]);
        assert_eq!(u[0], y[0]);
        assert!(matches!(
            s.forward([2.0, 0.0, 0.0]),
            Err(HodographError::OutOfDomain(_))
        ));
    }

    #[test]
    fn cubic_behavior_on_axis() {
        let src = point_source();
        let s = SwappedMap::new(&src, [-0.1; 3], [0.1; 3]);
        for t in [1e-3, 1e-2, 5e-2] {
            let (y, _) = s.forward([t, 0.0, 0.0]).unwrap();
            assert!((y[0] / (t * t * t) - 1.0).abs() < 20.0 * t, "t = {t}");
            assert_eq!([y[1], y[2]], [0.0, 0.0]);
        }
    }

    #[test]
    fn round_trip_off_sigma() {
        let src = point_source();
        let s = SwappedMap::new(&src, [-0.1; 3], [0.1; 3]);
        assert!(s.certify(9).holds);
        for x in [[0.05, 0.02, -0.03], [-0.07, 0.0, 0.01], [0.001, -0.04, 0.04]] {
            let (y, _) = s.forward(x).unwrap();
            match s.invert(y, 1e-14).unwrap() {
                Fiber::Point(p) => {
                    assert!((p[0] - x[0]).abs() < 1e-9, "{p:?} vs {x:?}");
                    assert!((src.value(p)[0] - y[0]).abs() <= 1e-14);
                }
                f => panic!("unexpected {f:?}"),
            }
        }
        assert!(matches!(
            s.invert([1.0, 0.0, 0.0], 1e-12),
            Err(HodographError::OutOfRange { .. })
        ));
    }

    #[test]
    fn holder_exponent() {
        let src = point_source();
        let s = SwappedMap::new(&src, [-0.2; 3], [0.2; 3]);
        let p = holder_probe(&s, 31).unwrap();
        assert!((p.exponent - 1.0 / 3.0).abs() <= 0.02, "{}", p.exponent);
        assert!(p.quotients_monotone && p.final_quotient > 1e3);
        let reg = regular();
        let s = SwappedMap::new(&reg, [-0.2; 3], [0.2; 3]);
        assert!((holder_probe(&s, 31).unwrap().exponent - 1.0).abs() < 1e-9);
    }

    fn fbp_surrogate(kappa: f64) -> SurrogateExterior {
        let p = fbp_pipeline(&rat(3, 4), &rat(1, 100), 6).unwrap();
        SurrogateExterior::new(p.v.to_f64(), Potential::new(p.potential.to_f64()), kappa)
    }

    #[test]
    fn surrogate_is_monotone_and_flat_inside() {
        let s = fbp_surrogate(1.0);
        let sw = SwappedMap::new(&s, [-0.3; 3], [0.3; 3]);
        assert!(sw.certify(7).holds);
        // inside the region the first component is x2 x3
        let x = [0.05, 0.02, -0.03];
        assert!(s.potential.value(x) > 0.0);
        assert_eq!(s.value(x)[0], x[1] * x[2]);
        // derivative of the monotone part matches (H⁻)²
        let x = [0.2, 0.05, 0.1];
        let h = 1e-5;
        let fd = (s.monotone_part([x[0] + h, x[1], x[2]]) - s.monotone_part([x[0] - h, x[1], x[2]])) / (2.0 * h);
        assert!((fd - s.d1_first(x)).abs() < 1e-9 * (1.0 + fd.abs()));
    }

    #[test]
    fn vertical_fiber_over_sigma() {
        let s = fbp_surrogate(1.0);
        let sw = SwappedMap::new(&s, [-0.3; 3], [0.3; 3]);
        let x = [0.0, 0.03, 0.04];
        let (y, _) = sw.forward(x).unwrap();
        let f = sw.invert(y, 1e-13).unwrap();
        assert!(f.length() > 0.1, "{f:?}");
        // the interval is the chord of the region through x
        if let Fiber::Interval { lo, hi, .. } = f {
            // widened only by the tolerance window, where w¹ is cubic
            assert!(s.potential.value([lo + 1e-3, x[1], x[2]]) > 0.0);
            assert!(s.potential.value([hi - 1e-3, x[1], x[2]]) > 0.0);
            assert!(s.potential.value([lo - 1e-3, x[1], x[2]]) < 0.0);
            assert!(s.potential.value([hi + 1e-3, x[1], x[2]]) < 0.0);
        }
    }

    #[test]
    fn sigma_lies_on_saddle() {
        let s = fbp_surrogate(1.0);
        let sig = sigma_surface(&s, &s.potential, 0.15, 21, 24).unwrap();
        assert!(!sig.points.is_empty());
        assert!(sig.max_surface_error <= 1e-12);
        for (y, x) in sig.points.iter().zip(&sig.preimages) {
            assert_eq!([y[1], y[2]], [x[1], x[2]]);
        }
        let r = s.potential.model_radius();
        assert!(sig.max_boundary_gap < 2.0 * std::f64::consts::PI * r / 24.0 * 1.5);
        let mut buf = Vec::new();
        sig.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("y1,y2,y3"));
    }
}
