//! Box lattices carrying maps `R^3 -> R^2`, with finite-difference stencils.

use std::io::Write;

use serde::Serialize;
use thiserror::Error;

/// Fewer nodes than this along an axis leave no room for the interior
/// stencils used by the residual and refinement checks.
pub const MIN_NODES: usize = 5;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid {dims:?} too small for the stencil (need at least {MIN_NODES} nodes per axis)")]
    Stencil { dims: [usize; 3] },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("malformed grid file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Node values of `v: [lo, hi] ⊂ R^3 -> R^2`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridMap {
    pub dims: [usize; 3],
    pub lo: [f64; 3],
    pub h: [f64; 3],
    pub values: Vec<[f64; 2]>,
    /// Frozen (Dirichlet) nodes.
    pub boundary: Vec<bool>,
    /// Nodes of the working domain; cells with a corner outside carry no
    /// energy. `None` means the whole box.
    pub domain: Option<Vec<bool>>,
}

impl GridMap {
    /// Sample `f` on a uniform lattice; the outer faces are frozen.
    pub fn from_fn(
        dims: [usize; 3],
        lo: [f64; 3],
        hi: [f64; 3],
        f: impl Fn([f64; 3]) -> [f64; 2],
    ) -> Result<Self, GridError> {
        if dims.iter().any(|&n| n < MIN_NODES) {
            return Err(GridError::Stencil { dims });
        }
        let h = [0, 1, 2].map(|a| (hi[a] - lo[a]) / (dims[a] - 1) as f64);
        let mut g = GridMap {
            dims,
            lo,
            h,
            values: Vec::with_capacity(dims.iter().product()),
            boundary: Vec::with_capacity(dims.iter().product()),
            domain: None,
        };
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    let x = g.coords([i, j, k]);
                    g.values.push(f(x));
                    g.boundary.push(g.on_face([i, j, k]));
                }
            }
        }
        Ok(g)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn idx(&self, n: [usize; 3]) -> usize {
        (n[0] * self.dims[1] + n[1]) * self.dims[2] + n[2]
    }

    #[inline]
    pub fn node(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let r = idx / self.dims[2];
        [r / self.dims[1], r % self.dims[1], k]
    }

    #[inline]
    pub fn coords(&self, n: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.lo[a] + n[a] as f64 * self.h[a])
    }

    pub fn on_face(&self, n: [usize; 3]) -> bool {
        (0..3).any(|a| n[a] == 0 || n[a] + 1 == self.dims[a])
    }

    pub fn is_interior(&self, n: [usize; 3]) -> bool {
        !self.on_face(n)
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    pub fn num_cells(&self) -> usize {
        (self.dims[0] - 1) * (self.dims[1] - 1) * (self.dims[2] - 1)
    }

    pub fn cell(&self, c: usize) -> [usize; 3] {
        let (n2, n3) = (self.dims[1] - 1, self.dims[2] - 1);
        [c / (n2 * n3), (c / n3) % n2, c % n3]
    }

    pub fn cell_center(&self, c: [usize; 3]) -> [f64; 3] {
        [0, 1, 2].map(|a| self.lo[a] + (c[a] as f64 + 0.5) * self.h[a])
    }

    /// Corner node indices of cell `c`, ordered by the bits `(di, dj, dk)`.
    pub fn cell_corners(&self, c: [usize; 3]) -> [usize; 8] {
        let mut out = [0; 8];
        for (b, slot) in out.iter_mut().enumerate() {
            *slot = self.idx([c[0] + (b >> 2 & 1), c[1] + (b >> 1 & 1), c[2] + (b & 1)]);
        }
        out
    }

    pub fn cell_active(&self, c: [usize; 3]) -> bool {
        match &self.domain {
            None => true,
            Some(d) => self.cell_corners(c).iter().all(|&i| d[i]),
        }
    }

    /// Cell-centered gradient: each partial is the average of the four edge
    /// differences of the cell along that axis. Row `alpha`, column axis.
    pub fn cell_gradient(&self, c: [usize; 3]) -> [[f64; 3]; 2] {
        let corners = self.cell_corners(c);
        let mut d = [[0.0; 3]; 2];
        for (b, &node) in corners.iter().enumerate() {
            for (a, bit) in [(0usize, 4usize), (1, 2), (2, 1)] {
                let s = if b & bit != 0 { 0.25 } else { -0.25 } / self.h[a];
                for al in 0..2 {
                    d[al][a] += s * self.values[node][al];
                }
            }
        }
        d
    }

    /// Weight of corner `b` in the cell-centered partial along `axis`.
    #[inline]
    pub fn corner_weight(&self, b: usize, axis: usize) -> f64 {
        let bit = 4 >> axis;
        if b & bit != 0 {
            0.25 / self.h[axis]
        } else {
            -0.25 / self.h[axis]
        }
    }

    fn shifted(&self, n: [usize; 3], axis: usize, by: isize) -> usize {
        let mut m = n;
        m[axis] = (n[axis] as isize + by) as usize;
        self.idx(m)
    }

    /// Nodal first derivative, centered in the interior and second-order
    /// one-sided on faces.
    pub fn nodal_partial(&self, n: [usize; 3], axis: usize, alpha: usize) -> f64 {
        let h = self.h[axis];
        let v = |by: isize| self.values[self.shifted(n, axis, by)][alpha];
        if n[axis] == 0 {
            (-3.0 * v(0) + 4.0 * v(1) - v(2)) / (2.0 * h)
        } else if n[axis] + 1 == self.dims[axis] {
            (3.0 * v(0) - 4.0 * v(-1) + v(-2)) / (2.0 * h)
        } else {
            (v(1) - v(-1)) / (2.0 * h)
        }
    }

    pub fn nodal_gradient(&self, n: [usize; 3]) -> [[f64; 3]; 2] {
        let mut d = [[0.0; 3]; 2];
        for (al, row) in d.iter_mut().enumerate() {
            for (a, e) in row.iter_mut().enumerate() {
                *e = self.nodal_partial(n, a, al);
            }
        }
        d
    }

    /// Centered second derivatives at an interior node.
    pub fn nodal_hessian(&self, n: [usize; 3], alpha: usize) -> [[f64; 3]; 3] {
        debug_assert!(self.is_interior(n));
        let get = |off: [isize; 3]| {
            let m = [0, 1, 2].map(|a| (n[a] as isize + off[a]) as usize);
            self.values[self.idx(m)][alpha]
        };
        let mut hs = [[0.0; 3]; 3];
        for a in 0..3 {
            let mut e = [0isize; 3];
            e[a] = 1;
            let neg = e.map(|x| -x);
            hs[a][a] = (get(e) - 2.0 * get([0, 0, 0]) + get(neg)) / (self.h[a] * self.h[a]);
            for b in a + 1..3 {
                let mut pp = [0isize; 3];
                pp[a] = 1;
                pp[b] = 1;
                let mut pm = pp;
                pm[b] = -1;
                let mm = pp.map(|x| -x);
                let mp = pm.map(|x| -x);
                let v = (get(pp) - get(pm) - get(mp) + get(mm)) / (4.0 * self.h[a] * self.h[b]);
                hs[a][b] = v;
                hs[b][a] = v;
            }
        }
        hs
    }

    /// Replace interior values by `f`, keeping frozen nodes.
    pub fn set_interior(&mut self, f: impl Fn([f64; 3]) -> [f64; 2]) {
        for i in 0..self.len() {
            if !self.boundary[i] {
                self.values[i] = f(self.coords(self.node(i)));
            }
        }
    }

    /// Largest nodal difference against another grid of the same shape.
    pub fn max_diff(&self, other: &GridMap) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
            .fold(0.0, f64::max)
    }

    /// CSV with columns `x1,x2,x3,v1,v2` followed by the extra columns.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        extra_header: &[&str],
        extra: impl Fn(usize) -> Vec<String>,
    ) -> Result<(), GridError> {
        let mut header = vec!["x1", "x2", "x3", "v1", "v2"];
        header.extend_from_slice(extra_header);
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            let x = self.coords(self.node(i));
            let v = self.values[i];
            let mut row = vec![
                format!("{:.12e}", x[0]),
                format!("{:.12e}", x[1]),
                format!("{:.12e}", x[2]),
                format!("{:.15e}", v[0]),
                format!("{:.15e}", v[1]),
            ];
            row.extend(extra(i));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Read a grid written by [`GridMap::write_csv`] (extra columns ignored).
    /// Nodes must appear in lattice order; the faces become frozen.
    pub fn read_csv(text: &str) -> Result<Self, GridError> {
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Result<Vec<f64>, _> = line.split(',').take(5).map(|s| s.trim().parse::<f64>()).collect();
            let f = f.map_err(|e| GridError::Parse(format!("line {}: {e}", ln + 1)))?;
            if f.len() < 5 {
                return Err(GridError::Parse(format!("line {}: expected 5 columns", ln + 1)));
            }
            rows.push(f);
        }
        let axis_values = |a: usize| {
            let mut v: Vec<f64> = rows.iter().map(|r| r[a]).collect();
            v.sort_by(|x, y| x.partial_cmp(y).expect("finite"));
            v.dedup_by(|x, y| (*x - *y).abs() < 1e-9);
            v
        };
        let ax = [axis_values(0), axis_values(1), axis_values(2)];
        let dims = [ax[0].len(), ax[1].len(), ax[2].len()];
        if dims.iter().product::<usize>() != rows.len() {
            return Err(GridError::Parse(format!(
                "{} rows do not form a {:?} lattice",
                rows.len(),
                dims
            )));
        }
        if dims.iter().any(|&n| n < MIN_NODES) {
            return Err(GridError::Stencil { dims });
        }
        let lo = [ax[0][0], ax[1][0], ax[2][0]];
        let hi = [ax[0][dims[0] - 1], ax[1][dims[1] - 1], ax[2][dims[2] - 1]];
        let mut g = GridMap::from_fn(dims, lo, hi, |_| [0.0, 0.0])?;
        for (i, r) in rows.iter().enumerate() {
            let x = g.coords(g.node(i));
            if (0..3).any(|a| (x[a] - r[a]).abs() > 1e-6 * (1.0 + x[a].abs())) {
                return Err(GridError::Parse(format!("row {} out of lattice order", i + 2)));
            }
            g.values[i] = [r[3], r[4]];
        }
        Ok(g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn affine(x: [f64; 3]) -> [f64; 2] {
        [0.3 * x[0] - 0.2 * x[1] + 0.7 * x[2] + 1.0, -x[0] + 0.5 * x[2]]
    }

    #[test]
    fn too_small_is_stencil_error() {
        let e = GridMap::from_fn([3, 3, 3], [0.0; 3], [1.0; 3], affine);
        assert!(matches!(e, Err(GridError::Stencil { .. })));
    }

    #[test]
    fn index_roundtrip() {
        let g = GridMap::from_fn([5, 6, 7], [0.0; 3], [1.0; 3], affine).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.idx(g.node(i)), i);
        }
        for c in 0..g.num_cells() {
            let cc = g.cell(c);
            assert!(cc[0] < 4 && cc[1] < 5 && cc[2] < 6);
        }
    }

    #[test]
    fn gradients_exact_on_affine() {
        let g = GridMap::from_fn([5, 6, 7], [-1.0, 0.0, 0.5], [1.0, 2.0, 1.5], affine).unwrap();
        let want = [[0.3, -0.2, 0.7], [-1.0, 0.0, 0.5]];
        for c in [[0, 0, 0], [3, 4, 5], [1, 2, 3]] {
            let d = g.cell_gradient(c);
            for al in 0..2 {
                for a in 0..3 {
                    assert!((d[al][a] - want[al][a]).abs() < 1e-12);
                }
            }
        }
        for n in [[0, 0, 0], [4, 5, 6], [2, 3, 1]] {
            let d = g.nodal_gradient(n);
            for al in 0..2 {
                for a in 0..3 {
                    assert!((d[al][a] - want[al][a]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn hessian_exact_on_quadratic() {
        let g = GridMap::from_fn([5, 5, 5], [0.0; 3], [1.0; 3], |x| {
            [x[0] * x[1] + 2.0 * x[2] * x[2], x[0] * x[0] - x[1] * x[2]]
        })
        .unwrap();
        let h = g.nodal_hessian([2, 2, 2], 0);
        assert!((h[0][1] - 1.0).abs() < 1e-12 && (h[2][2] - 4.0).abs() < 1e-12);
        let h = g.nodal_hessian([1, 3, 2], 1);
        assert!((h[0][0] - 2.0).abs() < 1e-12 && (h[1][2] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_roundtrip() {
        let g = GridMap::from_fn([5, 5, 6], [0.0; 3], [1.0, 1.0, 2.0], affine).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf, &[], |_| vec![]).unwrap();
        let back = GridMap::read_csv(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.dims, g.dims);
        assert!(back.max_diff(&g) < 1e-12);
    }
}
