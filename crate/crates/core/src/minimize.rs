//! Grid minimization of `E(v) = Σ_cells F(Dv) |cell|` for `v: Ω -> R^2`,
//! unconstrained and under the constraint that `v¹` is nondecreasing along
//! every `x1` grid line.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::area::value_and_gradient;
use crate::ck::{a_epsilon, fbp_pipeline, solve_point, CkError, Potential};
use crate::grid::{GridError, GridMap};
use crate::hodograph::{JetSource, MapSource, SurrogateExterior};
use crate::linalg::Mat;
use crate::parallel::{chunk_rng, pairwise_sum, par_map};
use crate::scalar::Rational;

pub const ARMIJO: f64 = 1e-4;
/// Default stopping tolerance on the scaled gradient (unconstrained).
pub const GRADIENT_TOL: f64 = 1e-8;
/// Default stopping tolerance on the KKT residual (constrained).
pub const KKT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MinimizeError {
    #[error("boundary data violate the constraint on the x1-line (j, k) = {line:?}: drop {drop:e}")]
    Infeasible { line: [usize; 2], drop: f64 },
    #[error("grid has no free nodes")]
    NoFreeNodes,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Ck(#[from] CkError),
}

#[derive(Clone, Copy, Debug)]
pub struct Options {
    pub tol: f64,
    pub max_iter: usize,
}

impl Options {
    pub fn unconstrained() -> Self {
        Options {
            tol: GRADIENT_TOL,
            max_iter: 20_000,
        }
    }

    pub fn constrained() -> Self {
        Options {
            tol: KKT_TOL,
            max_iter: 50_000,
        }
    }
}

/// A maximal run of equal `v¹` values (two or more nodes) on one `x1` line.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Segment {
    /// `(j, k)` of the line.
    pub line: [usize; 2],
    /// First and last `i` of the run, inclusive.
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub map: GridMap,
    pub energy_history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub constrained: bool,
    /// Scaled gradient norm (unconstrained) or KKT residual (constrained).
    pub residual: f64,
    pub active_set: Vec<Segment>,
}

impl OptimizeResult {
    pub fn energy(&self) -> f64 {
        *self
            .energy_history
            .last()
            .expect("history starts with the initial energy")
    }

    pub fn history_monotone(&self) -> bool {
        self.energy_history.windows(2).all(|w| w[1] <= w[0])
    }

    /// Fraction of `x1` lines carrying at least one pooled segment.
    pub fn active_line_fraction(&self) -> f64 {
        let mut lines: Vec<[usize; 2]> = self.active_set.iter().map(|s| s.line).collect();
        lines.dedup();
        lines.len() as f64 / (self.map.dims[1] * self.map.dims[2]) as f64
    }
}

fn cell_mat(d: &[[f64; 3]; 2]) -> Mat<f64> {
    Mat::from_fn(2, 3, |a, i| d[a][i])
}

/// `Σ_cells F(cell gradient) h1 h2 h3` over active cells.
pub fn discrete_area(v: &GridMap) -> f64 {
    let per = par_map(v.num_cells(), |ci| {
        let c = v.cell(ci);
        if !v.cell_active(c) {
            return 0.0;
        }
        value_and_gradient(&cell_mat(&v.cell_gradient(c))).0
    });
    pairwise_sum(&per) * v.cell_volume()
}

/// Adjoint of the cell-gradient operator applied to `DF`; zero on frozen
/// nodes.
pub fn discrete_area_gradient(v: &GridMap) -> Vec<[f64; 2]> {
    let vol = v.cell_volume();
    let flux: Vec<Option<Mat<f64>>> = par_map(v.num_cells(), |ci| {
        let c = v.cell(ci);
        v.cell_active(c)
            .then(|| value_and_gradient(&cell_mat(&v.cell_gradient(c))).1)
    });
    let [n1, n2, n3] = v.dims;
    par_map(v.len(), |i| {
        if v.boundary[i] {
            return [0.0; 2];
        }
        let n = v.node(i);
        let mut g = [0.0; 2];
        for b in 0..8usize {
            // the cell whose corner `b` is this node
            let off = [b >> 2 & 1, b >> 1 & 1, b & 1];
            if (0..3).any(|a| n[a] < off[a]) {
                continue;
            }
            let c = [n[0] - off[0], n[1] - off[1], n[2] - off[2]];
            if c[0] >= n1 - 1 || c[1] >= n2 - 1 || c[2] >= n3 - 1 {
                continue;
            }
            let ci = (c[0] * (n2 - 1) + c[1]) * (n3 - 1) + c[2];
            if let Some(p) = &flux[ci] {
                for axis in 0..3 {
                    let w = v.corner_weight(b, axis) * vol;
                    g[0] += p[(0, axis)] * w;
                    g[1] += p[(1, axis)] * w;
                }
            }
        }
        g
    })
}

fn free_nodes(v: &GridMap) -> usize {
    v.boundary.iter().filter(|b| !**b).count()
}

fn dot(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let per: Vec<f64> = a.iter().zip(b).map(|(x, y)| x[0] * y[0] + x[1] * y[1]).collect();
    pairwise_sum(&per)
}

fn axpy(v: &GridMap, t: f64, d: &[[f64; 2]]) -> GridMap {
    let mut out = v.clone();
    for (i, val) in out.values.iter_mut().enumerate() {
        if !v.boundary[i] {
            val[0] += t * d[i][0];
            val[1] += t * d[i][1];
        }
    }
    out
}

fn max_scaled(g: &[[f64; 2]], vol: f64) -> f64 {
    g.iter().fold(0.0f64, |m, x| m.max(x[0].abs()).max(x[1].abs())) / vol
}

/// Energy change of the step `v -> cand = v + t d`. Once it drops
/// below the float resolution of `E` it is measured instead by Simpson's
/// rule on the directional derivative, which stays accurate there.
fn decrease(v: &GridMap, d: &[[f64; 2]], e: f64, cand: &GridMap, t: f64, slope: f64) -> f64 {
    let ec = discrete_area(cand);
    if (ec - e).abs() > 1e-10 * e.abs() {
        return ec - e;
    }
    let mid = dot(&discrete_area_gradient(&axpy(v, 0.5 * t, d)), d);
    let end = dot(&discrete_area_gradient(cand), d);
    t * (slope + 4.0 * mid + end) / 6.0
}

/// Nonlinear conjugate gradient (Polak-Ribière+, Armijo backtracking by
/// halving) until `max |∂E/∂v| / |cell| <= tol`.
pub fn minimize_unconstrained(init: &GridMap, opts: &Options) -> Result<OptimizeResult, MinimizeError> {
    if free_nodes(init) == 0 {
        return Err(MinimizeError::NoFreeNodes);
    }
    let vol = init.cell_volume();
    let hmin = init.h.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut v = init.clone();
    let mut e = discrete_area(&v);
    let mut g = discrete_area_gradient(&v);
    let mut d: Vec<[f64; 2]> = g.iter().map(|x| [-x[0], -x[1]]).collect();
    let mut history = vec![e];
    let mut tau = hmin * hmin / (12.0 * vol);
    let mut res = max_scaled(&g, vol);
    let mut it = 0;
    while res > opts.tol && it < opts.max_iter {
        it += 1;
        let mut slope = dot(&g, &d);
        if slope >= 0.0 {
            d = g.iter().map(|x| [-x[0], -x[1]]).collect();
            slope = dot(&g, &d);
        }
        // secant step on the directional derivative, then backtrack
        let ddir = |t: f64| dot(&discrete_area_gradient(&axpy(&v, t, &d)), &d);
        let p1 = ddir(tau);
        let mut t = if p1 > slope {
            tau * slope / (slope - p1)
        } else {
            2.0 * tau
        };
        let mut accepted = None;
        for _ in 0..60 {
            let cand = axpy(&v, t, &d);
            let de = decrease(&v, &d, e, &cand, t, slope);
            if de <= ARMIJO * t * slope {
                accepted = Some((cand, e + de));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, ec)) = accepted else {
            if d.iter().zip(&g).all(|(a, b)| a[0] == -b[0] && a[1] == -b[1]) {
                break;
            }
            d = g.iter().map(|x| [-x[0], -x[1]]).collect();
            continue;
        };
        tau = t;
        v = cand;
        e = ec;
        history.push(e);
        let g_new = discrete_area_gradient(&v);
        let num: f64 = dot(&g_new, &g_new) - dot(&g_new, &g);
        let den = dot(&g, &g);
        let beta = if den > 0.0 { (num / den).max(0.0) } else { 0.0 };
        for (di, gi) in d.iter_mut().zip(&g_new) {
            di[0] = -gi[0] + beta * di[0];
            di[1] = -gi[1] + beta * di[1];
        }
        g = g_new;
        res = max_scaled(&g, vol);
    }
    Ok(OptimizeResult {
        active_set: Vec::new(),
        map: v,
        energy_history: history,
        iterations: it,
        converged: res <= opts.tol,
        constrained: false,
        residual: res,
    })
}

/// Pool adjacent violators: the closest nondecreasing sequence in the
/// Euclidean norm.
pub fn pava(y: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(y.len());
    for &x in y {
        blocks.push((x, 1));
        while blocks.len() > 1 {
            let (m2, n2) = blocks[blocks.len() - 1];
            let (m1, n1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let n = n1 + n2;
            *blocks.last_mut().expect("nonempty") = ((m1 * n1 as f64 + m2 * n2 as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, n)| std::iter::repeat_n(m, n))
        .collect()
}

/// Closest nondecreasing sequence with values in `[lo, hi]`.
pub fn project_monotone(y: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    pava(y).into_iter().map(|x| x.clamp(lo, hi)).collect()
}

fn line_nodes(v: &GridMap, j: usize, k: usize) -> Vec<usize> {
    (0..v.dims[0]).map(|i| v.idx([i, j, k])).collect()
}

/// Check the frozen nodes allow a monotone `v¹` on every line.
pub fn check_feasible(v: &GridMap) -> Result<(), MinimizeError> {
    for j in 0..v.dims[1] {
        for k in 0..v.dims[2] {
            let nodes = line_nodes(v, j, k);
            let frozen: Vec<f64> = nodes
                .iter()
                .filter(|&&i| v.boundary[i])
                .map(|&i| v.values[i][0])
                .collect();
            for w in frozen.windows(2) {
                if w[1] < w[0] {
                    return Err(MinimizeError::Infeasible {
                        line: [j, k],
                        drop: w[0] - w[1],
                    });
                }
            }
        }
    }
    Ok(())
}

/// Project `v¹` onto the constraint set, line by line. Assumes the frozen
/// nodes of each line are its two endpoints or the whole line.
pub fn project_lines(v: &mut GridMap) {
    let n1 = v.dims[0];
    let updates: Vec<(usize, usize, Vec<f64>)> = par_map(v.dims[1] * v.dims[2], |l| {
        let (j, k) = (l / v.dims[2], l % v.dims[2]);
        let nodes = line_nodes(v, j, k);
        if nodes[1..n1 - 1].iter().all(|&i| v.boundary[i]) {
            return (j, k, Vec::new());
        }
        let inner: Vec<f64> = nodes[1..n1 - 1].iter().map(|&i| v.values[i][0]).collect();
        (
            j,
            k,
            project_monotone(&inner, v.values[nodes[0]][0], v.values[nodes[n1 - 1]][0]),
        )
    });
    for (j, k, vals) in updates {
        for (off, x) in vals.into_iter().enumerate() {
            let i = v.idx([off + 1, j, k]);
            v.values[i][0] = x;
        }
    }
}

/// Pooled runs (two or more equal consecutive values) of `v¹`.
pub fn active_segments(v: &GridMap) -> Vec<Segment> {
    let mut out = Vec::new();
    for j in 0..v.dims[1] {
        for k in 0..v.dims[2] {
            let nodes = line_nodes(v, j, k);
            if nodes.iter().all(|&i| v.boundary[i]) {
                continue;
            }
            let mut start = 0;
            for i in 1..=nodes.len() {
                let same = i < nodes.len() && v.values[nodes[i]][0] == v.values[nodes[start]][0];
                if !same {
                    if i - start >= 2 {
                        out.push(Segment {
                            line: [j, k],
                            start,
                            end: i - 1,
                        });
                    }
                    start = i;
                }
            }
        }
    }
    out
}

/// Multipliers on the edges of one line from the cumulative sums of the
/// free-node gradient, fitted so that they vanish on inactive edges.
/// Returns `(λ_e, active_e)` for the edges `e = (i, i+1)`.
fn line_multipliers(v: &GridMap, g: &[[f64; 2]], j: usize, k: usize) -> (Vec<f64>, Vec<bool>) {
    let nodes = line_nodes(v, j, k);
    let n = nodes.len();
    let active: Vec<bool> = (0..n - 1)
        .map(|e| v.values[nodes[e]][0] == v.values[nodes[e + 1]][0])
        .collect();
    // λ_e = λ_0 - S_e with S_e = Σ_{1 <= i <= e} g_i
    let mut s = vec![0.0; n - 1];
    for e in 1..n - 1 {
        s[e] = s[e - 1] + g[nodes[e]][0];
    }
    let inactive: Vec<f64> = (0..n - 1).filter(|&e| !active[e]).map(|e| s[e]).collect();
    let lambda0 = if inactive.is_empty() {
        s.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    } else {
        let lo = inactive.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = inactive.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    (s.iter().map(|se| lambda0 - se).collect(), active)
}

#[derive(Clone, Debug, Serialize)]
pub struct KktReport {
    /// Max scaled `|∂E/∂v²|` over free nodes.
    pub second_component: f64,
    /// Max scaled `|∂E/∂v¹|` at free nodes not touching an active edge.
    pub off_active: f64,
    /// Max scaled `|λ_e|` on inactive edges (complementarity).
    pub complementarity: f64,
    /// Max scaled `-λ_e` on active edges (dual feasibility).
    pub dual_infeasibility: f64,
    pub residual: f64,
    pub active_segments: usize,
}

pub fn kkt_of(v: &GridMap) -> KktReport {
    let vol = v.cell_volume();
    let g = discrete_area_gradient(v);
    let mut rep = KktReport {
        second_component: 0.0,
        off_active: 0.0,
        complementarity: 0.0,
        dual_infeasibility: 0.0,
        residual: 0.0,
        active_segments: active_segments(v).len(),
    };
    for (i, gi) in g.iter().enumerate() {
        if !v.boundary[i] {
            rep.second_component = rep.second_component.max(gi[1].abs() / vol);
        }
    }
    for j in 0..v.dims[1] {
        for k in 0..v.dims[2] {
            let nodes = line_nodes(v, j, k);
            if nodes.iter().all(|&i| v.boundary[i]) {
                continue;
            }
            let (lam, active) = line_multipliers(v, &g, j, k);
            for e in 0..lam.len() {
                if active[e] {
                    rep.dual_infeasibility = rep.dual_infeasibility.max(-lam[e] / vol);
                } else {
                    rep.complementarity = rep.complementarity.max(lam[e].abs() / vol);
                }
            }
            for i in 1..nodes.len() - 1 {
                if !active[i - 1] && !active[i] {
                    rep.off_active = rep.off_active.max(g[nodes[i]][0].abs() / vol);
                }
            }
        }
    }
    rep.residual = rep
        .second_component
        .max(rep.complementarity)
        .max(rep.dual_infeasibility)
        .max(rep.off_active);
    rep
}

pub fn kkt_report(result: &OptimizeResult) -> KktReport {
    kkt_of(&result.map)
}

/// Spectral projected gradient with Armijo backtracking (halving) along the
/// projected direction; stops when the KKT residual is below `tol`.
pub fn minimize_constrained(init: &GridMap, opts: &Options) -> Result<OptimizeResult, MinimizeError> {
    if free_nodes(init) == 0 {
        return Err(MinimizeError::NoFreeNodes);
    }
    check_feasible(init)?;
    let vol = init.cell_volume();
    let hmin = init.h.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut v = init.clone();
    project_lines(&mut v);
    let mut e = discrete_area(&v);
    let mut g = discrete_area_gradient(&v);
    let mut history = vec![e];
    let mut sigma = hmin * hmin / (12.0 * vol);
    let mut res = kkt_of(&v).residual;
    let mut it = 0;
    let (smin, smax) = (1e-6 * sigma, 1e6 * sigma);
    while res > opts.tol && it < opts.max_iter {
        it += 1;
        let mut target = axpy(&v, -sigma, &g);
        project_lines(&mut target);
        let d: Vec<[f64; 2]> = target
            .values
            .iter()
            .zip(&v.values)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
            .collect();
        let slope = dot(&g, &d);
        if slope >= 0.0 {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let cand = if t == 1.0 { target.clone() } else { axpy(&v, t, &d) };
            let de = decrease(&v, &d, e, &cand, t, slope);
            if de <= ARMIJO * t * slope {
                accepted = Some((cand, e + de));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, ec)) = accepted else { break };
        let g_new = discrete_area_gradient(&cand);
        // Barzilai-Borwein step for the next projection
        let s: Vec<[f64; 2]> = cand
            .values
            .iter()
            .zip(&v.values)
            .map(|(a, b)| [a[0] - b[0], a[1] - b[1]])
            .collect();
        let y: Vec<[f64; 2]> = g_new.iter().zip(&g).map(|(a, b)| [a[0] - b[0], a[1] - b[1]]).collect();
        let sy = dot(&s, &y);
        sigma = if sy > 0.0 {
            (dot(&s, &s) / sy).clamp(smin, smax)
        } else {
            smax
        };
        v = cand;
        e = ec;
        g = g_new;
        history.push(e);
        res = kkt_of(&v).residual;
    }
    Ok(OptimizeResult {
        active_set: active_segments(&v),
        map: v,
        energy_history: history,
        iterations: it,
        converged: res <= opts.tol,
        constrained: true,
        residual: res,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct VariationReport {
    pub samples: usize,
    /// Smallest first-order change `∇E·φ` over the feasible directions,
    /// each normalized to `max |φ| = 1`.
    pub min_change: f64,
}

/// Random directions `φ` with `φ = 0` on frozen nodes and `φ¹`
/// nondecreasing across every active edge.
pub fn feasible_variations(result: &OptimizeResult, samples: usize, seed: u64) -> VariationReport {
    let v = &result.map;
    let g = discrete_area_gradient(v);
    let mut min_change = f64::INFINITY;
    for s in 0..samples {
        let mut rng = chunk_rng(seed, s as u64);
        let mut phi: Vec<[f64; 2]> = (0..v.len())
            .map(|i| {
                if v.boundary[i] {
                    [0.0; 2]
                } else {
                    [rng.sample(StandardNormal), rng.sample(StandardNormal)]
                }
            })
            .collect();
        for seg in &result.active_set {
            let [j, k] = seg.line;
            let idx: Vec<usize> = (seg.start..=seg.end).map(|i| v.idx([i, j, k])).collect();
            let vals: Vec<f64> = idx.iter().map(|&i| phi[i][0]).collect();
            let lo = if v.boundary[idx[0]] { 0.0 } else { f64::NEG_INFINITY };
            let hi = if v.boundary[idx[idx.len() - 1]] {
                0.0
            } else {
                f64::INFINITY
            };
            for (slot, x) in idx.iter().zip(project_monotone(&vals, lo, hi)) {
                phi[*slot][0] = x;
            }
        }
        let m = phi.iter().fold(0.0f64, |m, p| m.max(p[0].abs()).max(p[1].abs()));
        if m > 0.0 {
            min_change = min_change.min(dot(&g, &phi) / m);
        }
    }
    VariationReport { samples, min_change }
}

/// Energy change `E(v + tφ) - E(v)` along a direction that lowers `v¹`
/// across the active edge with the largest multiplier. `None` without an
/// active edge.
pub fn infeasible_direction_change(result: &OptimizeResult, t: f64) -> Option<(f64, f64)> {
    let v = &result.map;
    let g = discrete_area_gradient(v);
    let mut best: Option<(f64, usize, usize, usize)> = None;
    for j in 0..v.dims[1] {
        for k in 0..v.dims[2] {
            let nodes = line_nodes(v, j, k);
            if nodes.iter().all(|&i| v.boundary[i]) {
                continue;
            }
            let (lam, active) = line_multipliers(v, &g, j, k);
            for e in 0..lam.len() {
                if active[e] && best.is_none_or(|b| lam[e] > b.0) {
                    best = Some((lam[e], j, k, e));
                }
            }
        }
    }
    let (_, j, k, e) = best?;
    let nodes = line_nodes(v, j, k);
    let (_, active) = line_multipliers(v, &g, j, k);
    // drop v¹ on the nodes after e up to the first inactive edge
    let mut phi = vec![[0.0; 2]; v.len()];
    let mut i = e + 1;
    while i < nodes.len() - 1 {
        phi[nodes[i]][0] = -1.0;
        if !active[i] {
            break;
        }
        i += 1;
    }
    let first = dot(&g, &phi);
    let moved = axpy(v, t, &phi);
    Some((first, discrete_area(&moved) - discrete_area(v)))
}

/// Box `[-l, l]³` with `n` nodes per axis.
fn cube(n: usize, l: f64) -> ([usize; 3], [f64; 3], [f64; 3]) {
    ([n; 3], [-l; 3], [l; 3])
}

/// The point-singularity map rotated by `-θ` in the `(x1, z1)` plane,
/// resampled as a graph over `[-l, l]³`. Where `∂_1 w¹ < tan θ` the rotated
/// first component decreases in `x1`.
pub fn tilted_point_boundary(n: usize, l: f64, theta: f64, eps: &Rational, k: u32) -> Result<GridMap, MinimizeError> {
    let w = JetSource::new(solve_point(eps, &a_epsilon(eps), k)?.to_f64());
    let (c, s) = (theta.cos(), theta.sin());
    let (dims, lo, hi) = cube(n, l);
    let f = |x: [f64; 3]| {
        // solve X1 = x1 cos θ + w¹(x1, X2, X3) sin θ for x1
        let fwd = |t: f64| t * c + w.first([t, x[1], x[2]]) * s;
        let (mut a, mut b) = (-4.0 * l, 4.0 * l);
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            if fwd(m) < x[0] {
                a = m;
            } else {
                b = m;
            }
        }
        let t = 0.5 * (a + b);
        let val = w.value([t, x[1], x[2]]);
        [-t * s + val[0] * c, val[1]]
    };
    Ok(GridMap::from_fn(dims, lo, hi, f)?)
}

/// Boundary data from the free-boundary map with the monotone surrogate
/// exterior, on `[-l, l]³`.
pub fn fbp_boundary(
    n: usize,
    l: f64,
    eps: &Rational,
    delta: &Rational,
    kappa: f64,
    k: u32,
) -> Result<GridMap, MinimizeError> {
    let p = fbp_pipeline(eps, delta, k)?;
    let s = SurrogateExterior::new(p.v.to_f64(), Potential::new(p.potential.to_f64()), kappa);
    let (dims, lo, hi) = cube(n, l);
    Ok(GridMap::from_fn(dims, lo, hi, |x| s.value(x))?)
}

/// Smallest cell-centered `∂_1 v¹` and where it occurs.
pub fn min_d1_first(v: &GridMap) -> (f64, [f64; 3]) {
    let mut best = (f64::INFINITY, [0.0; 3]);
    for ci in 0..v.num_cells() {
        let c = v.cell(ci);
        let d = v.cell_gradient(c)[0][0];
        if d < best.0 {
            best = (d, v.cell_center(c));
        }
    }
    best
}

/// Brute-force oracle: cyclic coordinate descent with a safeguarded 1-D
/// Newton solve per coordinate on the local cell energy.
pub fn coordinate_descent(init: &GridMap, tol: f64, max_sweeps: usize) -> (GridMap, f64) {
    let mut v = init.clone();
    let vol = v.cell_volume();
    let cells_of = |v: &GridMap, n: [usize; 3]| -> Vec<[usize; 3]> {
        let mut out = Vec::new();
        for b in 0..8usize {
            let off = [b >> 2 & 1, b >> 1 & 1, b & 1];
            if (0..3).any(|a| n[a] < off[a] || n[a] - off[a] >= v.dims[a] - 1) {
                continue;
            }
            out.push([n[0] - off[0], n[1] - off[1], n[2] - off[2]]);
        }
        out
    };
    let local = |v: &GridMap, cells: &[[usize; 3]]| -> f64 {
        cells
            .iter()
            .filter(|c| v.cell_active(**c))
            .map(|&c| value_and_gradient(&cell_mat(&v.cell_gradient(c))).0)
            .sum::<f64>()
            * vol
    };
    for _ in 0..max_sweeps {
        let mut biggest: f64 = 0.0;
        for i in 0..v.len() {
            if v.boundary[i] {
                continue;
            }
            let cells = cells_of(&v, v.node(i));
            for a in 0..2 {
                for _ in 0..2 {
                    let x0 = v.values[i][a];
                    let h = 1e-4 * (1.0 + x0.abs());
                    let at = |x: f64, v: &mut GridMap| {
                        v.values[i][a] = x;
                        local(v, &cells)
                    };
                    let (fm, f0, fp) = (at(x0 - h, &mut v), at(x0, &mut v), at(x0 + h, &mut v));
                    let d1 = (fp - fm) / (2.0 * h);
                    let d2 = (fp - 2.0 * f0 + fm) / (h * h);
                    let mut step = if d2 > 0.0 { -d1 / d2 } else { -d1.signum() * h };
                    let mut x = x0 + step;
                    while at(x, &mut v) > f0 && step.abs() > 1e-18 {
                        step *= 0.5;
                        x = x0 + step;
                    }
                    if at(x, &mut v) > f0 {
                        x = x0;
                    }
                    v.values[i][a] = x;
                    biggest = biggest.max((x - x0).abs());
                    if (x - x0).abs() < 1e-14 {
                        break;
                    }
                }
            }
        }
        if biggest < tol {
            break;
        }
    }
    let e = discrete_area(&v);
    (v, e)
}

/// Brute-force oracle for the constrained problem: each free coordinate in
/// turn takes the best value on the lattice `x + k·step`, `|k| <= 4`, among
/// those keeping its `x1` line monotone; the step is halved when no move
/// helps, down to `min_step`.
pub fn lattice_search(init: &GridMap, step0: f64, min_step: f64) -> (GridMap, f64) {
    let mut v = init.clone();
    project_lines(&mut v);
    let mut e = discrete_area(&v);
    let mut step = step0;
    while step >= min_step {
        let mut improved = true;
        while improved {
            improved = false;
            for i in 0..v.len() {
                if v.boundary[i] {
                    continue;
                }
                let n = v.node(i);
                for a in 0..2 {
                    let x0 = v.values[i][a];
                    let (lo, hi) = if a == 0 {
                        (
                            v.values[v.idx([n[0] - 1, n[1], n[2]])][0],
                            v.values[v.idx([n[0] + 1, n[1], n[2]])][0],
                        )
                    } else {
                        (f64::NEG_INFINITY, f64::INFINITY)
                    };
                    let mut best = (e, x0);
                    for k in -4i32..=4 {
                        let x = x0 + k as f64 * step;
                        if k == 0 || x < lo || x > hi {
                            continue;
                        }
                        v.values[i][a] = x;
                        let ek = discrete_area(&v);
                        if ek < best.0 {
                            best = (ek, x);
                        }
                    }
                    v.values[i][a] = best.1;
                    if best.0 < e {
                        e = best.0;
                        improved = true;
                    }
                }
            }
        }
        step *= 0.5;
    }
    (v, e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::rat;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn affine(n: usize, m: [[f64; 3]; 2]) -> GridMap {
        GridMap::from_fn([n; 3], [0.0; 3], [1.0; 3], |x| {
            [0, 1].map(|a| (0..3).map(|i| m[a][i] * x[i]).sum())
        })
        .unwrap()
    }

    fn random_map(n: usize, seed: u64, amp: f64) -> GridMap {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = GridMap::from_fn([n; 3], [-0.5; 3], [0.5; 3], |x| [0.1 * x[0] * x[1], 0.2 * x[2]]).unwrap();
        for (i, v) in g.values.iter_mut().enumerate() {
            if !g.boundary[i] {
                v[0] += amp * rng.gen_range(-1.0..1.0);
                v[1] += amp * rng.gen_range(-1.0..1.0);
            }
        }
        g
    }

    #[test]
    fn area_of_affine_maps() {
        let flat = affine(5, [[0.0; 3]; 2]);
        assert!((discrete_area(&flat) - 1.0).abs() < 1e-14);
        let m = [[0.1, -0.2, 0.3], [0.05, 0.0, -0.4]];
        let g = affine(6, m);
        let (f, _) = value_and_gradient(&cell_mat(&m));
        assert!((discrete_area(&g) - f).abs() < 1e-12);
        assert!(discrete_area_gradient(&flat).iter().all(|x| x == &[0.0, 0.0]));
    }

    /// Independent quadrature: nodal gradients with trapezoid weights.
    fn nodal_area(v: &GridMap) -> f64 {
        let mut s = 0.0;
        for i in 0..v.len() {
            let n = v.node(i);
            let w: f64 = (0..3)
                .map(|a| if n[a] == 0 || n[a] == v.dims[a] - 1 { 0.5 } else { 1.0 })
                .product();
            s += w * value_and_gradient(&cell_mat(&v.nodal_gradient(n))).0;
        }
        s * v.cell_volume()
    }

    #[test]
    fn area_matches_nodal_quadrature() {
        let f = |x: [f64; 3]| [0.3 * (x[0] * x[1]).sin(), 0.2 * x[2] * x[2] + 0.1 * x[0]];
        let mut errs = Vec::new();
        for n in [9, 17, 33] {
            let g = GridMap::from_fn([n; 3], [-0.5; 3], [0.5; 3], f).unwrap();
            errs.push((discrete_area(&g) - nodal_area(&g)).abs());
        }
        // O(h) or better
        assert!(errs[1] < 0.6 * errs[0] && errs[2] < 0.6 * errs[1], "{errs:?}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let g = random_map(6, 4, 0.05);
        let grad = discrete_area_gradient(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let i = loop {
                let i = rng.gen_range(0..g.len());
                if !g.boundary[i] {
                    break i;
                }
            };
            for a in 0..2 {
                let h = 1e-6;
                let mut p = g.clone();
                p.values[i][a] += h;
                let mut m = g.clone();
                m.values[i][a] -= h;
                let fd = (discrete_area(&p) - discrete_area(&m)) / (2.0 * h);
                assert!(
                    (fd - grad[i][a]).abs() <= 1e-6 * grad[i][a].abs().max(1e-3),
                    "{fd} {}",
                    grad[i][a]
                );
            }
        }
        for (i, gi) in grad.iter().enumerate() {
            if g.boundary[i] {
                assert_eq!(gi, &[0.0, 0.0]);
            }
        }
    }

    #[test]
    fn affine_data_give_affine_minimizer() {
        let m = [[0.02, -0.01, 0.03], [0.0, 0.04, -0.02]];
        let exact = affine(7, m);
        let mut init = exact.clone();
        init.set_interior(|_| [0.0, 0.0]);
        let r = minimize_unconstrained(&init, &Options::unconstrained()).unwrap();
        assert!(r.converged && r.history_monotone());
        let (f, _) = value_and_gradient(&cell_mat(&m));
        assert!((r.energy() - f).abs() < 1e-12);
        assert!(r.map.max_diff(&exact) < 1e-8);
    }

    #[test]
    fn ncg_matches_coordinate_descent() {
        let init = random_map(9, 11, 0.05);
        let r = minimize_unconstrained(&init, &Options::unconstrained()).unwrap();
        assert!(
            r.converged,
            "{} after {} ({} accepted)",
            r.residual,
            r.iterations,
            r.energy_history.len()
        );
        let (_, e_cd) = coordinate_descent(&init, 1e-9, 5000);
        assert!((r.energy() - e_cd).abs() < 1e-8, "{} vs {e_cd}", r.energy());
    }

    fn exhaustive_monotone(y: &[f64], levels: &[f64]) -> f64 {
        // best nondecreasing sequence with entries from `levels`
        fn rec(y: &[f64], levels: &[f64], start: usize, acc: f64, best: &mut f64) {
            if y.is_empty() {
                *best = best.min(acc);
                return;
            }
            for li in start..levels.len() {
                let d = y[0] - levels[li];
                rec(&y[1..], levels, li, acc + d * d, best);
            }
        }
        let mut best = f64::INFINITY;
        rec(y, levels, 0, 0.0, &mut best);
        best
    }

    proptest! {
        #[test]
        fn pava_is_the_projection(y in proptest::collection::vec(-2.0f64..2.0, 1..=6)) {
            let p = pava(&y);
            prop_assert!(p.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(pava(&p), p.clone());
            let dist: f64 = y.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
            // the optimum takes values among block means, which include
            // the PAVA values themselves
            let mut levels: Vec<f64> = p.clone();
            levels.extend(y.iter().cloned());
            levels.sort_by(|a, b| a.partial_cmp(b).unwrap());
            levels.dedup();
            prop_assert!(dist <= exhaustive_monotone(&y, &levels) + 1e-12);
            // and beats random monotone competitors
            let mut q = y.clone();
            q.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let dq: f64 = y.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum();
            prop_assert!(dist <= dq + 1e-12);
        }
    }

    #[test]
    fn feasible_data_reduce_to_unconstrained() {
        let m = [[0.05, 0.01, 0.0], [0.0, 0.02, 0.01]];
        let exact = affine(7, m);
        let mut init = exact.clone();
        init.set_interior(|x| [0.05 * x[0], 0.0]);
        let c = minimize_constrained(&init, &Options::constrained()).unwrap();
        let u = minimize_unconstrained(&init, &Options::unconstrained()).unwrap();
        assert!(c.active_set.is_empty());
        assert!((c.energy() - u.energy()).abs() < 1e-10);
        assert!(c.converged && c.history_monotone());
    }

    #[test]
    fn infeasible_boundary_rejected() {
        let g = affine(5, [[-0.1, 0.0, 0.0], [0.0; 3]]);
        assert!(matches!(
            minimize_constrained(&g, &Options::constrained()),
            Err(MinimizeError::Infeasible { .. })
        ));
    }

    #[test]
    fn small_constrained_instance_vs_lattice() {
        let init = tilted_point_boundary(5, 0.12, 0.3 * 0.0144, &rat(3, 4), 8).unwrap();
        let r = minimize_constrained(&init, &Options::constrained()).unwrap();
        assert!(r.converged, "{}", r.residual);
        let (_, e_lat) = lattice_search(&init, 1e-2, 1e-5);
        assert!(e_lat >= r.energy() - 1e-12, "{e_lat} < {}", r.energy());
        assert!(e_lat - r.energy() < 1e-6, "{e_lat} vs {}", r.energy());
    }

    #[test]
    fn tilted_point_data_pool() {
        let init = tilted_point_boundary(9, 0.12, 0.3 * 0.0144, &rat(3, 4), 8).unwrap();
        let r = minimize_constrained(&init, &Options::constrained()).unwrap();
        assert!(r.converged && r.history_monotone());
        assert!(!r.active_set.is_empty());
        let k = kkt_report(&r);
        assert!(k.residual < KKT_TOL, "{k:?}");
        let fv = feasible_variations(&r, 20, 1);
        assert!(fv.min_change >= -1e-8, "{fv:?}");
        let (first, change) = infeasible_direction_change(&r, 1e-7).unwrap();
        assert!(first < 0.0 && change < 0.0, "{first:e} {change:e} {:?}", r.active_set);
    }
}
