//! The area integrand `F(M) = sqrt(det(I + MᵀM))`, its gradient, and the
//! local convexity inequality `F(M) >= |F(N) + DF(N)(M - N)|` for small `N`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use thiserror::Error;

use crate::linalg::Mat;
use crate::scalar::{Field, Real};

/// An `m x n` gradient matrix of a map `R^n -> R^m`.
pub type GradientMatrix<T = f64> = Mat<T>;

/// Radii tried by [`estimate_delta`], largest first.
pub const DELTA_GRID: [f64; 4] = [0.2, 0.1, 0.05, 0.02];

/// Working convexity radius for `(m, n) = (2, 3)`.
pub const WORKING_DELTA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AreaError {
    #[error("gradient matrix has non-finite entries")]
    NonFinite,
    #[error("|N| = {norm} is not below delta = {delta}")]
    OutsideBall { norm: f64, delta: f64 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty sampling budget")]
    EmptyBudget,
}

fn check_finite<T: Real>(m: &Mat<T>) -> Result<(), AreaError> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(AreaError::NonFinite)
    }
}

/// `F(M) = sqrt(det(I + MᵀM))`.
pub fn area_integrand<T: Real>(m: &GradientMatrix<T>) -> Result<T, AreaError> {
    check_finite(m)?;
    Ok(m.metric().det().sqrt())
}

/// The same value via singular values, `prod (1 + sigma_i^2)^(1/2)`.
pub fn area_from_singular_values<T: Real>(m: &GradientMatrix<T>) -> Result<T, AreaError> {
    check_finite(m)?;
    let mut p = T::one();
    for s in m.singular_values() {
        p = p * (T::one() + s * s).sqrt();
    }
    Ok(p)
}

/// `DF(M) = sqrt(det g) M g⁻¹` with `g = I + MᵀM`.
pub fn area_gradient<T: Real>(m: &GradientMatrix<T>) -> Result<GradientMatrix<T>, AreaError> {
    check_finite(m)?;
    Ok(value_and_gradient(m).1)
}

/// `F(M)` and `DF(M)` together (one factorization of `g`).
pub fn value_and_gradient<T: Real>(m: &Mat<T>) -> (T, Mat<T>) {
    let g = m.metric();
    let sd = g.det().sqrt();
    let ginv = g.inverse().expect("I + MᵀM is positive definite");
    (sd, m.matmul(&ginv).scale(&sd))
}

/// `F(M) - |F(N) + DF(N)·(M - N)|`; the pairing is the Frobenius one.
pub fn convexity_margin<T: Real>(n: &GradientMatrix<T>, m: &GradientMatrix<T>, delta: T) -> Result<T, AreaError> {
    check_finite(n)?;
    check_finite(m)?;
    if n.rows() != m.rows() || n.cols() != m.cols() {
        return Err(AreaError::Shape(format!(
            "{}x{} vs {}x{}",
            n.rows(),
            n.cols(),
            m.rows(),
            m.cols()
        )));
    }
    let norm = n.norm();
    if norm >= delta {
        return Err(AreaError::OutsideBall {
            norm: Field::to_f64(&norm),
            delta: Field::to_f64(&delta),
        });
    }
    Ok(margin_unchecked(n, m))
}

fn margin_unchecked<T: Real>(n: &Mat<T>, m: &Mat<T>) -> T {
    if n == m {
        return T::zero();
    }
    let (fn_, dfn) = value_and_gradient(n);
    let fm = m.metric().det().sqrt();
    fm - (fn_ + dfn.dot(&m.sub(n))).abs()
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ConvexityCertificate {
    pub m: usize,
    pub n: usize,
    pub delta: f64,
    pub samples: usize,
    pub min_margin: f64,
    /// Smallest margin among pairs with `|M - N| >= 1e-3`.
    pub min_separated_margin: f64,
    pub violations: usize,
    /// Pairs with `|M - N| >= 1e-3` but margin below `1e-10`.
    pub weak: usize,
}

impl ConvexityCertificate {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.weak == 0
    }
}

/// Sampling parameters for a convexity sweep.
#[derive(Clone, Debug)]
pub struct ConvexitySweep {
    pub shapes: Vec<(usize, usize)>,
    pub samples: usize,
    pub delta: f64,
    pub m_bound: f64,
    pub seed: u64,
}

/// Uniform sample from the Frobenius ball of radius `r` in `R^{m x n}`.
pub fn sample_ball<R: Rng>(rng: &mut R, m: usize, n: usize, r: f64) -> Mat<f64> {
    let d = m * n;
    let g = Mat::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = g.norm().max(1e-300);
    let rad = r * rng.gen::<f64>().powf(1.0 / d as f64);
    g.scale(&(rad / norm))
}

/// Random competitor `M` for a given `N`: half of the draws are spread over
/// the whole ball `|M| <= m_bound`, the rest are log-uniform perturbations of
/// `N` down to `|M - N| ~ 1e-4`, where the margin is smallest.
fn sample_competitor<R: Rng>(rng: &mut R, n: &Mat<f64>, m_bound: f64) -> Mat<f64> {
    let (rows, cols) = (n.rows(), n.cols());
    if rng.gen_bool(0.5) {
        sample_ball(rng, rows, cols, m_bound)
    } else {
        let s = 10f64.powf(rng.gen_range(-4.0..1.0));
        let dir = Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dn = dir.norm().max(1e-300);
        n.add(&dir.scale(&(s / dn)))
    }
}

/// Randomized certification of the convexity inequality. Work is split into
/// fixed chunks, each with its own ChaCha stream derived from `seed`, so the
/// result does not depend on the thread count.
pub fn certify(sweep: &ConvexitySweep) -> Result<Vec<ConvexityCertificate>, AreaError> {
    if sweep.samples == 0 {
        return Err(AreaError::EmptyBudget);
    }
    let mut out = Vec::new();
    for (si, &(m, n)) in sweep.shapes.iter().enumerate() {
        let stats = crate::parallel::chunked(sweep.samples, sweep.seed ^ ((si as u64) << 32), |rng, count| {
            let mut st = SweepStats::default();
            for _ in 0..count {
                // strictly inside the ball
                let nm = sample_ball(rng, m, n, sweep.delta * (1.0 - 1e-9));
                let mm = sample_competitor(rng, &nm, sweep.m_bound);
                st.push(margin_unchecked(&nm, &mm), mm.sub(&nm).norm());
            }
            // include the equality case once per chunk
            let nm = sample_ball(rng, m, n, sweep.delta * (1.0 - 1e-9));
            st.push_equal(margin_unchecked(&nm, &nm));
            st
        })
        .into_iter()
        .fold(SweepStats::default(), SweepStats::merge);
        out.push(ConvexityCertificate {
            m,
            n,
            delta: sweep.delta,
            samples: sweep.samples,
            min_margin: stats.min_margin,
            min_separated_margin: stats.min_separated,
            violations: stats.violations,
            weak: stats.weak,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug)]
struct SweepStats {
    min_margin: f64,
    min_separated: f64,
    violations: usize,
    weak: usize,
}

impl Default for SweepStats {
    fn default() -> Self {
        SweepStats {
            min_margin: f64::INFINITY,
            min_separated: f64::INFINITY,
            violations: 0,
            weak: 0,
        }
    }
}

impl SweepStats {
    fn push(&mut self, margin: f64, dist: f64) {
        self.min_margin = self.min_margin.min(margin);
        if margin < 0.0 || !margin.is_finite() {
            self.violations += 1;
        }
        if dist >= 1e-3 {
            self.min_separated = self.min_separated.min(margin);
            if margin < 1e-10 {
                self.weak += 1;
            }
        }
    }

    fn push_equal(&mut self, margin: f64) {
        if margin != 0.0 {
            self.violations += 1;
        }
        self.min_margin = self.min_margin.min(margin);
    }

    fn merge(a: Self, b: Self) -> Self {
        SweepStats {
            min_margin: a.min_margin.min(b.min_margin),
            min_separated: a.min_separated.min(b.min_separated),
            violations: a.violations + b.violations,
            weak: a.weak + b.weak,
        }
    }
}

/// Largest radius in [`DELTA_GRID`] whose sweep has no violations. When even
/// the smallest radius fails, its certificate is returned as is.
pub fn estimate_delta(m: usize, n: usize, budget: usize, seed: u64) -> Result<ConvexityCertificate, AreaError> {
    if budget == 0 {
        return Err(AreaError::EmptyBudget);
    }
    let mut last = None;
    for &delta in &DELTA_GRID {
        let cert = certify(&ConvexitySweep {
            shapes: vec![(m, n)],
            samples: budget,
            delta,
            m_bound: 10.0,
            seed,
        })?
        .remove(0);
        if cert.passed() {
            return Ok(cert);
        }
        last = Some(cert);
    }
    Ok(last.expect("grid is non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn mat(rows: &[&[f64]]) -> Mat<f64> {
        Mat::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    fn arb_mat() -> impl Strategy<Value = Mat<f64>> {
        (1usize..=3, 1usize..=4).prop_flat_map(|(m, n)| {
            prop::collection::vec(-3.0f64..3.0, m * n).prop_map(move |v| Mat::from_fn(m, n, |i, j| v[i * n + j]))
        })
    }

    #[test]
    fn zero_matrix_has_unit_area() {
        for (m, n) in [(1, 1), (2, 3), (3, 4)] {
            assert_eq!(area_integrand(&Mat::<f64>::zeros(m, n)).unwrap(), 1.0);
            assert_eq!(area_gradient(&Mat::<f64>::zeros(m, n)).unwrap(), Mat::zeros(m, n));
        }
    }

    #[test]
    fn diagonal_example() {
        let m = mat(&[&[1.0, 0.0, 0.0], &[0.0, 2.0, 0.0]]);
        assert!((area_integrand(&m).unwrap() - 10f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn scalar_gradient() {
        for t in [-2.0, -0.3, 0.0, 0.7, 5.0] {
            let g = area_gradient(&mat(&[&[t]])).unwrap();
            assert!((g[(0, 0)] - t / (1.0 + t * t).sqrt()).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let m = mat(&[&[f64::NAN, 0.0]]);
        assert_eq!(area_integrand(&m), Err(AreaError::NonFinite));
    }

    #[test]
    fn margin_at_zero_and_diagonal() {
        let z = Mat::<f64>::zeros(2, 3);
        let m = mat(&[&[0.4, -1.0, 2.0], &[0.0, 3.0, 0.1]]);
        let margin = convexity_margin(&z, &m, 0.05).unwrap();
        assert!((margin - (area_integrand(&m).unwrap() - 1.0)).abs() < 1e-12);
        let n = m.scale(&0.01);
        assert_eq!(convexity_margin(&n, &n, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn margin_outside_ball_is_error() {
        let n = mat(&[&[0.1, 0.0]]);
        assert!(matches!(
            convexity_margin(&n, &n, 0.05),
            Err(AreaError::OutsideBall { .. })
        ));
    }

    #[test]
    fn empty_budget() {
        assert_eq!(estimate_delta(2, 3, 0, 1), Err(AreaError::EmptyBudget));
    }

    #[test]
    fn certificate_two_by_three() {
        let c = estimate_delta(2, 3, 10_000, 7).unwrap();
        assert_eq!(c.violations, 0);
        assert!(c.delta >= 0.05);
    }

    #[test]
    fn scalar_passes_at_largest_radius() {
        let c = estimate_delta(1, 1, 10_000, 3).unwrap();
        assert!(c.passed());
        assert_eq!(c.delta, 0.2);
    }

    #[test]
    fn fourth_order_remainder() {
        // F(M) - (1 + |M|²/2) = O(|M|⁴)
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst: f64 = 0.0;
        for _ in 0..2000 {
            let m = sample_ball(&mut rng, 2, 3, 0.1);
            let r = m.norm();
            if r < 1e-3 {
                continue;
            }
            let rem = area_integrand(&m).unwrap() - (1.0 + 0.5 * r * r);
            worst = worst.max(rem.abs() / r.powi(4));
        }
        assert!(worst < 1.0, "ratio {worst}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn singular_value_oracle(m in arb_mat()) {
            let a = area_integrand(&m).unwrap();
            let b = area_from_singular_values(&m).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a);
        }

        #[test]
        fn lower_bound(m in arb_mat()) {
            let a = area_integrand(&m).unwrap();
            let r = m.norm();
            prop_assert!(a >= (1.0 + r * r).sqrt() * (1.0 - 1e-14));
        }

        #[test]
        fn gradient_matches_finite_differences(m in arb_mat()) {
            let g = area_gradient(&m).unwrap();
            let h = 1e-6;
            for i in 0..m.rows() {
                for j in 0..m.cols() {
                    let mut p = m.clone();
                    p[(i, j)] += h;
                    let mut q = m.clone();
                    q[(i, j)] -= h;
                    let fd = (area_integrand(&p).unwrap() - area_integrand(&q).unwrap()) / (2.0 * h);
                    prop_assert!((fd - g[(i, j)]).abs() <= 1e-6 * (1.0 + g[(i, j)].abs()));
                }
            }
        }

        #[test]
        fn f32_agrees_with_f64(m in arb_mat()) {
            let a = area_integrand(&m).unwrap();
            let b = area_integrand(&m.map(|v| *v as f32)).unwrap() as f64;
            prop_assert!((a - b).abs() <= 1e-4 * a);
        }
    }
}
