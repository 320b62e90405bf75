//! The experiments behind each CLI subcommand, as lists of checks. The
//! acceptance suite calls the same functions.

use num_traits::{Signed, Zero};
use serde::Serialize;
use thiserror::Error;

use crate::area::{certify, AreaError, ConvexitySweep, WORKING_DELTA};
use crate::calibration::{
    area_comparison, comass_sample, exterior_derivative, random_competitor, slab_competitor, CalibrationError,
    CalibrationForm, ComassReport, StokesChain,
};
use crate::ck::{
    a_epsilon, boundary_transition_checks, extract_region, fbp_pipeline, locate_gamma, solve_fbp, solve_point,
    sphere_directions, CkError, Potential, TransitionReport,
};
use crate::grid::{GridError, GridMap};
use crate::hodograph::{holder_probe, HodographError, HolderProbe, JetSource, SurrogateExterior, SwappedMap};
use crate::hopf::{
    cone_residual_at, cone_slope, lo_cone_residual, projected_gradient_norm, shell_points, solve_profile,
    validate_reduction, HopfError, RadialProfile,
};
use crate::jets::{Jet, JetError, MapJet};
use crate::minimize::{
    check_feasible, fbp_boundary, feasible_variations, min_d1_first, minimize_constrained, minimize_unconstrained,
    tilted_point_boundary, MinimizeError, OptimizeResult, Options, GRADIENT_TOL, KKT_TOL,
};
use crate::mss::{
    differentiated_residual, inner_residual, nondiv_residual, outer_residual, JetMetric, JetResidual, MssError,
};
use crate::parallel::chunk_rng;
use crate::report::Check;
use crate::scalar::{rat, Field, Rational};
use crate::slag::{
    ball_moment, det_check, det_perturbation, empirical_t_max, first_variation, first_variation_scale,
    mean_curvature_check, theta_expansion_check, SlagConfig, SlagError, SlagRegion,
};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Ck(#[from] CkError),
    #[error(transparent)]
    Mss(#[from] MssError),
    #[error(transparent)]
    Area(#[from] AreaError),
    #[error(transparent)]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Hodograph(#[from] HodographError),
    #[error(transparent)]
    Minimize(#[from] MinimizeError),
    #[error(transparent)]
    Hopf(#[from] HopfError),
    #[error(transparent)]
    Slag(#[from] SlagError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

type Result<T> = std::result::Result<T, ExperimentError>;

/// Readable form of an exact jet, terms ordered by degree then exponent.
pub fn jet_text(j: &Jet<Rational>) -> String {
    let mut terms: Vec<_> = j.terms().filter(|(_, c)| !c.is_zero()).collect();
    terms.sort_by_key(|(e, _)| {
        (
            e.iter().sum::<u32>(),
            [u32::MAX - e[0], u32::MAX - e[1], u32::MAX - e[2]],
        )
    });
    if terms.is_empty() {
        return "0".to_string();
    }
    let mut out = String::new();
    for (k, (e, c)) in terms.iter().enumerate() {
        let mono: Vec<String> = (0..3)
            .filter(|&a| e[a] > 0)
            .map(|a| {
                if e[a] == 1 {
                    format!("x{}", a + 1)
                } else {
                    format!("x{}^{}", a + 1, e[a])
                }
            })
            .collect();
        let mag = c.abs();
        let sign = if c.is_negative() { "-" } else { "+" };
        if k == 0 {
            if c.is_negative() {
                out.push('-');
            }
        } else {
            out.push_str(&format!(" {sign} "));
        }
        let one = rat(1, 1);
        match (mono.is_empty(), mag == one) {
            (true, _) => out.push_str(&mag.to_string()),
            (false, true) => out.push_str(&mono.join("*")),
            (false, false) => out.push_str(&format!("{}*{}", mag, mono.join("*"))),
        }
    }
    out
}

/// Exact coefficient identities of the point-singularity map and the
/// free-boundary forcing.
pub fn coefficient_suite(eps: &Rational, k: u32) -> Result<Vec<Check>> {
    let one = rat(1, 1);
    let a = a_epsilon(eps);
    let w = solve_point(eps, &a, k)?;
    let (w1, w2) = (w.component(0), w.component(1));
    let a_formula = (rat(5, 1) + rat(4, 1) * eps * eps) / eps;
    let mut out = vec![
        Check::exact("x1^3 coefficient of w1", w1.coeff([3, 0, 0]), &one).published("w^1_{111}(0) = 6"),
        Check::exact("x1*x3 coefficient of w2", w2.coeff([1, 0, 1]), &a_formula).published("A_ε := (5+4ε²)/ε"),
    ];
    let d1_want = Jet::from_terms(
        2,
        [
            ([2, 0, 0], rat(3, 1)),
            ([0, 2, 0], one.clone()),
            ([0, 0, 2], one.clone()),
        ],
    );
    out.push(
        Check::exact(
            "degree-2 jet of d1 w1",
            jet_text(&w1.partial(0).truncate(2)),
            jet_text(&d1_want),
        )
        .published("w^1_1 = 3x_1^2 + x_2^2 + x_3^2 + O(|x|^3)"),
    );
    let w1_want = Jet::from_terms(
        3,
        [
            ([0, 1, 1], one.clone()),
            ([3, 0, 0], one.clone()),
            ([1, 2, 0], one.clone()),
            ([1, 0, 2], one.clone()),
        ],
    );
    out.push(
        Check::exact("cubic jet of w1", jet_text(&w1.truncate(3)), jet_text(&w1_want))
            .published("w^1 = x_2x_3 + x_1(x_1^2+x_2^2+x_3^2) + O(|x|^4)"),
    );
    let w2_want = Jet::from_terms(2, [([0, 1, 0], eps.clone()), ([1, 0, 1], a_formula.clone())]);
    out.push(
        Check::exact("quadratic jet of w2", jet_text(&w2.truncate(2)), jet_text(&w2_want))
            .published("w^2 = εx_2 + A_ε x_1x_3 + O(|x|^3)"),
    );

    // inverse metric on {x1 = 0} to first order
    let (_, g_inv) = JetMetric::without_volume(&w)?;
    let one_e2 = &one + eps * eps;
    let off = -(eps * &a_formula) / &one_e2;
    for i in 0..3 {
        for j in i..3 {
            let want = match (i, j) {
                (0, 0) | (2, 2) => Jet::one(1),
                (1, 1) => Jet::constant(&one / &one_e2, 1),
                (0, 1) => Jet::monomial([0, 0, 1], off.clone(), 1),
                _ => Jet::zero(1),
            };
            let got = g_inv.get(i, j).restrict_zero(0).truncate(1);
            out.push(
                Check::exact(&format!("inverse metric entry ({},{}) on x1 = 0", i + 1, j + 1), jet_text(&got), jet_text(&want))
                    .published("g^{-1}|_{x_1=0} = [[1, -εA_ε x_3/(1+ε²), 0], [-εA_ε x_3/(1+ε²), 1/(1+ε²), 0], [0, 0, 1]] + O(|x|^2)"),
            );
        }
    }

    // the free-boundary map
    let v = solve_fbp(eps, k)?;
    let (_, gv_inv) = JetMetric::without_volume(&v)?;
    out.push(
        Check::exact(
            "d1 g_v^{23}(0)",
            gv_inv.get(1, 2).coeff([1, 0, 0]),
            -eps.clone() / &one_e2,
        )
        .published("∂_1 g_v^{23}(0) = -ε/(1+ε²)"),
    );
    let f = crate::ck::compute_forcing(&v)?;
    // the exact solve above already needs √(1+ε²) rational
    let root = one_e2.sqrt_exact().ok_or(CkError::Jet(JetError::IrrationalRoot))?;
    let c = rat(2, 1) * eps / root;
    out.push(
        Check::exact("x1 coefficient of the forcing f", f.coeff([1, 0, 0]), -c)
            .published("C_ε := 2ε/√(1+ε²), f = -C_ε x_1 + O(|x|^2)"),
    );
    out.push(Check::exact("constant term of the forcing f", f.constant_term(), rat(0, 1)).elementary());
    Ok(out)
}

/// `inner_k + outer·∂_k u` and `nondiv - outer + inner_j ∂_j u` summed
/// over components: the number of nonzero coefficients left.
fn identity_defects(u: &MapJet<Rational>, f: Option<&MapJet<Rational>>) -> Result<(usize, ResidualTriple)> {
    let o = outer_residual(u, f)?;
    let i = inner_residual(u, f)?;
    let n = nondiv_residual(u, f)?;
    let du = u.gradient();
    let mut defects = 0;
    for k in 0..3 {
        let mut s = i.components[k].clone();
        for a in 0..u.dim() {
            s = &s + &(&o.components[a] * du.get(a, k));
        }
        defects += s.num_terms();
    }
    for a in 0..u.dim() {
        let mut s = &n.components[a] - &o.components[a];
        for j in 0..3 {
            s = &s + &(&i.components[j] * du.get(a, j));
        }
        defects += s.num_terms();
    }
    Ok((
        defects,
        ResidualTriple {
            outer: o,
            inner: i,
            nondiv: n,
        },
    ))
}

struct ResidualTriple {
    outer: JetResidual<Rational>,
    inner: JetResidual<Rational>,
    nondiv: JetResidual<Rational>,
}

/// Residual orders of the CK solutions and the coefficient-wise relations
/// between the three forms of the system.
pub fn residual_suite(eps: &Rational, delta: &Rational, k: u32) -> Result<Vec<Check>> {
    let w = solve_point(eps, &a_epsilon(eps), k)?;
    let p = fbp_pipeline(eps, delta, k)?;
    let forcing = MapJet::new(vec![p.potential.partial(0), Jet::zero(k - 1)]).map_err(CkError::from)?;
    let mut out = Vec::new();
    let cases: [(&str, &MapJet<Rational>, Option<&MapJet<Rational>>); 2] =
        [("point map", &w, None), ("free-boundary map", &p.v, Some(&forcing))];
    for (label, u, f) in cases {
        let (defects, r) = identity_defects(u, f)?;
        for (form, res) in [("nondiv", &r.nondiv), ("outer", &r.outer), ("inner", &r.inner)] {
            out.push(
                Check::exact(
                    &format!("{label}: {form} residual nonzero coefficients"),
                    res.nonzero_terms(),
                    0,
                )
                .published("the system holds near the origin"),
            );
            out.push(Check::exact(&format!("{label}: {form} residual degree"), res.degree(), k - 2).elementary());
        }
        out.push(Check::exact(&format!("{label}: form identity defects"), defects, 0).oracle());
    }
    out.push(
        Check::exact(
            "point map: differentiated equation nonzero coefficients",
            differentiated_residual(&w)?.nonzero_terms(),
            0,
        )
        .published("g^{ij}w^1_{1ij} + ∂_1g^{ij}w^1_{ij} = 0"),
    );

    // non-solutions: the identities still hold and the forms fail together
    let bumps: [(usize, [u32; 3]); 3] = [(0, [4, 1, 0]), (1, [2, 2, 0]), (0, [0, 3, 1])];
    let mut defects = 0;
    let mut together = true;
    let mut implies = true;
    for (base, f) in [(&w, None), (&p.v, Some(&forcing))] {
        for &(alpha, e) in &bumps {
            let mut comps = base.components().to_vec();
            comps[alpha] = &comps[alpha] + &Jet::monomial(e, rat(1, 7), k);
            let u = MapJet::new(comps).map_err(CkError::from)?;
            let (d, r) = identity_defects(&u, f)?;
            defects += d;
            together &= r.outer.is_zero() == r.nondiv.is_zero();
            implies &= !r.outer.is_zero() || r.inner.is_zero();
        }
    }
    out.push(Check::exact("perturbed maps: form identity defects", defects, 0).oracle());
    out.push(Check::holds("outer and nondiv residuals vanish together", together).published("(Outer) ⇔ (MSS)"));
    out.push(Check::holds("outer residual zero implies inner residual zero", implies).published("(Outer) ⇒ (Inner)"));
    Ok(out)
}

/// All gradient shapes up to 3x4.
pub fn convexity_shapes() -> Vec<(usize, usize)> {
    (1..=3).flat_map(|m| (1..=4).map(move |n| (m, n))).collect()
}

/// Randomized certification of the convexity inequality on `|N| <= 0.05`.
pub fn convexity_suite(samples: usize, seed: u64) -> Result<Vec<Check>> {
    let certs = certify(&ConvexitySweep {
        shapes: convexity_shapes(),
        samples,
        delta: WORKING_DELTA,
        m_bound: 10.0,
        seed,
    })?;
    let mut out = Vec::new();
    for c in certs {
        let shape = format!("{}x{}", c.m, c.n);
        out.push(
            Check::exact(&format!("convexity violations {shape}"), c.violations, 0)
                .published("F(M) ≥ F(N) + DF(N)·(M − N) for |N| < δ"),
        );
        out.push(Check::exact(&format!("weak margins at |M-N| >= 1e-3, {shape}"), c.weak, 0).oracle());
        out.push(Check::info(&format!("min margin {shape}"), c.min_margin));
        out.push(Check::info(
            &format!("min separated margin {shape}"),
            c.min_separated_margin,
        ));
    }
    Ok(out)
}

/// Which map supplies the calibration form.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationMap {
    Point,
    Fbp,
}

pub struct CalibrationOutcome {
    pub checks: Vec<Check>,
    pub comass: ComassReport,
}

/// Comass of the form built from the chosen map, and exactness of `dω`.
pub fn calibration_suite(
    map: CalibrationMap,
    eps: &Rational,
    delta: &Rational,
    k: u32,
    samples: usize,
    seed: u64,
) -> Result<CalibrationOutcome> {
    let mut out = Vec::new();
    let comass = match map {
        CalibrationMap::Point => {
            let w = solve_point(eps, &a_epsilon(eps), k)?;
            let src = JetSource::new(w.to_f64());
            let form = CalibrationForm::new(&src);
            comass_sample(&form, [-0.05; 3], [0.05; 3], &|_| true, samples, seed)?
        }
        CalibrationMap::Fbp => {
            let p = fbp_pipeline(eps, delta, k)?;
            let pot = Potential::new(p.potential.to_f64());
            let src = JetSource::new(p.v.to_f64());
            let form = CalibrationForm::new(&src);
            let r = 1.3 * pot.model_radius();
            comass_sample(&form, [-r; 3], [r; 3], &|x| pot.value(x) >= 0.0, samples, seed)?
        }
    };
    out.push(
        Check::at_most("max |ω(T)| over unit planes", comass.max_abs, 1.0 + 1e-12).published("ω(T) ≤ 1 for unit T"),
    );
    out.push(
        Check::at_most("max |ω(tangent plane) - 1|", comass.tangent_error, 1e-12)
            .published("ω = 1 on the tangent planes"),
    );
    out.push(Check::info("max |Dw| sampled", comass.max_gradient));
    out.push(Check::info(
        "max |ω(T)| on planes with a vertical direction",
        comass.max_vertical,
    ));

    // unforced: dω vanishes through the truncation order
    let w = solve_point(eps, &a_epsilon(eps), k)?;
    let d = exterior_derivative(&w)?;
    let terms: usize = d.iter().map(Jet::num_terms).sum();
    out.push(Check::exact("dω coefficients of the point map", terms, 0).published("dω = 0 when w solves the system"));
    // forced: the dz1 coefficient is -∂1 H
    let p = fbp_pipeline(eps, delta, k)?;
    let d = exterior_derivative(&p.v)?;
    let dh = p.potential.partial(0).truncate(d[0].degree());
    out.push(
        Check::exact(
            "dω dz1 coefficient of the free-boundary map",
            jet_text(&d[0]),
            jet_text(&-&dh),
        )
        .published("dω = -∂_1H dz_1∧dx"),
    );
    out.push(Check::exact("dω dz2 coefficient of the free-boundary map", jet_text(&d[1]), "0").elementary());
    Ok(CalibrationOutcome { checks: out, comass })
}

#[derive(Clone, Debug, Serialize)]
pub struct StokesSummary {
    pub nodes: usize,
    /// Normalized mesh size `1/(n-1)`.
    pub h: f64,
    /// Largest `max(0, vol(Γu) - vol(Γψ)) / vol(Γu)`.
    pub max_violation: f64,
    pub max_defect: f64,
    pub min_h_term: f64,
    pub chains: Vec<StokesChain>,
}

/// The swapped point map on an `n³` grid of its y-box.
fn point_swap_grid(n: usize, eps: &Rational, k: u32) -> Result<(JetSource, GridMap)> {
    let src = JetSource::new(solve_point(eps, &a_epsilon(eps), k)?.to_f64());
    let sw = SwappedMap::new(&src, [-0.16, -0.03, -0.03], [0.16, 0.03, 0.03]);
    let u = sw.u_grid([n; 3], [-0.002, -0.03, -0.03], [0.002, 0.03, 0.03], 0.0)?;
    Ok((src, u))
}

/// Comparison chain for `competitors` random fixed-boundary competitors
/// of the swapped point map.
pub fn stokes_chain(n: usize, competitors: usize, seed: u64) -> Result<StokesSummary> {
    let (src, u) = point_swap_grid(n, &rat(3, 4), 8)?;
    let form = CalibrationForm::new(&src);
    let mut rng = chunk_rng(seed, 0);
    let mut s = StokesSummary {
        nodes: n,
        h: 1.0 / (n - 1) as f64,
        max_violation: 0.0,
        max_defect: 0.0,
        min_h_term: f64::INFINITY,
        chains: Vec::with_capacity(competitors),
    };
    for _ in 0..competitors {
        let psi = random_competitor(&u, &mut rng, [0.02, 0.005], 4);
        let ch = area_comparison(&form, None, &u, &psi, 1)?;
        s.max_violation = s.max_violation.max((-ch.area_excess() / ch.vol_u).max(0.0));
        s.max_defect = s.max_defect.max(ch.stokes_defect.abs());
        s.min_h_term = s.min_h_term.min(ch.h_term());
        s.chains.push(ch);
    }
    Ok(s)
}

pub fn stokes_checks(s: &StokesSummary) -> Vec<Check> {
    let n = s.nodes;
    vec![
        Check::at_most(
            &format!("area inequality violation at {n}^3"),
            s.max_violation,
            s.h * s.h,
        )
        .published("vol(Γψ) − vol(Γu) ≥ ∫_{Γψ} ω − ∫_{Γu} ω"),
        Check::at_most(&format!("Stokes defect at {n}^3"), s.max_defect, 1e-3)
            .published("∫_{Γψ} ω − ∫_{Γu} ω = ∫_{Γψ} ω̃ − ∫_{Γu} ω̃"),
        Check::at_least(&format!("H-term at {n}^3"), s.min_h_term, 0.0).published("∫ H χ_{H>0} term ≥ 0"),
    ]
}

/// Violations and Stokes defects do not grow from `coarse` to `fine`.
pub fn refinement_checks(coarse: &StokesSummary, fine: &StokesSummary) -> Vec<Check> {
    vec![
        Check::holds(
            "area violations shrink under refinement",
            fine.max_violation <= fine.h * fine.h && fine.max_violation <= coarse.max_violation.max(fine.h * fine.h),
        )
        .oracle(),
        Check::at_most("Stokes defect under refinement", fine.max_defect, coarse.max_defect).oracle(),
    ]
}

/// The slab competitor on the free-boundary surrogate: the H-term sees
/// `{H > 0}`; its area excess is recorded.
pub fn slab_checks() -> Result<Vec<Check>> {
    let p = fbp_pipeline(&rat(3, 4), &rat(1, 100), 6)?;
    let pot = Potential::new(p.potential.to_f64());
    let s = SurrogateExterior::new(p.v.to_f64(), pot.clone(), 300.0);
    let sw = SwappedMap::new(&s, [-0.35, -0.15, -0.15], [0.35, 0.15, 0.15]);
    let u = sw.u_grid([13; 3], [-0.03, -0.15, -0.15], [0.03, 0.15, 0.15], 1e-13)?;
    let psi = slab_competitor(&u, 8.0);
    let form = CalibrationForm::new(&s);
    let ch = area_comparison(&form, Some(&pot), &u, &psi, 4)?;
    Ok(vec![
        Check::at_least("slab competitor H-term", ch.h_term(), 0.0).published("∫ H χ_{H>0} term ≥ 0"),
        Check::info("slab competitor area excess", ch.area_excess()),
    ])
}

pub struct FbpOutcome {
    pub checks: Vec<Check>,
    pub transitions: TransitionReport,
}

/// Positivity of the exterior continuation across `∂Ω0`.
pub fn fbp_suite(eps: &Rational, delta: &Rational, k: u32, samples: usize) -> Result<FbpOutcome> {
    let p = fbp_pipeline(eps, delta, k)?;
    let pot = Potential::new(p.potential.to_f64());
    let reg = extract_region(&pot, &sphere_directions(samples))?;
    let gamma = locate_gamma(&pot, 16)?;
    let rep = boundary_transition_checks(&p.v.to_f64(), &pot, &reg, &gamma, 1e-3);
    let h_err = reg.samples.iter().map(|s| s.h_value.abs()).fold(0.0, f64::max);
    let agree = rep
        .off_gamma
        .iter()
        .map(|t| (t.d1_nu - t.d1_nu_hessian).abs())
        .fold(0.0, f64::max);
    let checks = vec![
        Check::at_most("|H| on boundary samples", h_err, 1e-12).elementary(),
        Check::holds(
            "region is convex and contains 0",
            reg.is_convex() && reg.contains_origin,
        )
        .published("Ω0 is analytic and uniformly convex"),
        Check::at_least("boundary samples", reg.samples.len() as f64, samples as f64).elementary(),
        Check::holds(
            "d_ν ṽ¹_1 > 0 off Γ",
            rep.min_off_gamma_margin > 0.0 && rep.sign_agreements == rep.off_gamma.len(),
        )
        .published("∂_ν ṽ¹_1 > 0 on ∂Ω0 \\ Γ"),
        Check::holds("d_ν² ṽ¹_1 > 0 on Γ", rep.min_gamma_margin > 0.0).published("∂_ν² ṽ¹_1 > 0 on Γ"),
        Check::info("min margin off Γ", rep.min_off_gamma_margin),
        Check::info("min margin on Γ", rep.min_gamma_margin),
        Check::at_most("closed formula vs exterior Hessian", agree, 1e-12).oracle(),
        Check::at_most("Hessian jump on Γ", rep.max_gamma_jump, 1e-10).published("D²v¹ = D²ṽ¹ on Γ"),
    ];
    Ok(FbpOutcome {
        checks,
        transitions: rep,
    })
}

/// Criticality of the Lawson-Osserman cone at random points of the shell
/// `0.1 <= |x| <= 1`, against the non-critical slope 1.
pub fn lo_cone_suite(points: usize, seed: u64) -> Result<Vec<Check>> {
    let mut rng = chunk_rng(seed, 0);
    let pts = shell_points(&mut rng, points, 0.1, 1.0);
    let mut out = vec![lo_cone_residual(&pts)?];
    let mut off: f64 = 0.0;
    for p in &pts {
        off = off.max(cone_residual_at(*p, 1.0)?);
    }
    out.push(Check::at_least("residual at slope 1 (control)", off, 1e-3).oracle());
    Ok(out)
}

pub struct HopfOutcome {
    pub checks: Vec<Check>,
    pub profile: RadialProfile,
}

/// Minimize the reduced area with `f(1) = R`, gated by the Monte-Carlo
/// check of the reduction on the minimizer.
pub fn hopf_run(r_bound: f64, rho: f64, nodes: usize, samples: usize, seed: u64) -> Result<HopfOutcome> {
    let sol = solve_profile(r_bound, rho, nodes, 1e-6)?;
    let gate = validate_reduction(&sol.profile, samples, seed);
    let checks = vec![
        Check::holds("reduced area within 3σ of the Monte-Carlo area", gate.passed()).oracle(),
        Check::info("Monte-Carlo deviation in σ", gate.sigmas),
        Check::at_most(
            "projected gradient at the minimizer",
            projected_gradient_norm(&sol.profile),
            1e-6,
        )
        .elementary(),
        Check::info("f(ρ)", sol.profile.inner_value()),
        Check::info("reduced area", sol.energy),
        Check::info("iterations", sol.iterations as f64),
    ];
    Ok(HopfOutcome {
        checks,
        profile: sol.profile,
    })
}

/// Small boundary values give a smooth profile, large ones a singular
/// one, and the cone is stationary at `R = √5/2`; at two node counts.
pub fn hopf_suite(samples: usize, seed: u64) -> Result<Vec<Check>> {
    let rho = 1e-3;
    let mut out = Vec::new();
    let cone = RadialProfile::from_fn(rho, 100, |r| cone_slope() * r)?;
    let gate = validate_reduction(&cone, samples, seed);
    out.push(Check::holds("cone: reduced area within 3σ of Monte-Carlo", gate.passed()).oracle());
    let mut inner = Vec::new();
    for (i, n) in [100usize, 200].into_iter().enumerate() {
        let small = solve_profile(0.5, rho, n, 1e-6)?;
        let large = solve_profile(2.0, rho, n, 1e-6)?;
        if i == 0 {
            let g = validate_reduction(&large.profile, samples, seed ^ 1);
            out.push(Check::holds("R = 2 minimizer: reduced area within 3σ of Monte-Carlo", g.passed()).oracle());
        }
        out.push(
            Check::at_most(
                &format!("f(ρ) at R = 0.5, {n} nodes"),
                small.profile.inner_value(),
                0.05,
            )
            .published("smooth minimizer for small R"),
        );
        out.push(
            Check::at_least(&format!("f(ρ) at R = 2, {n} nodes"), large.profile.inner_value(), 0.5)
                .published("singular minimizer for large R"),
        );
        let c = RadialProfile::from_fn(rho, n, |r| cone_slope() * r)?;
        out.push(
            Check::at_most(
                &format!("cone projected gradient, {n} nodes"),
                projected_gradient_norm(&c),
                1e-6,
            )
            .published("u = (√5/2) H(x)/|x| is a critical point of area"),
        );
        inner.push((small.profile.inner_value(), large.profile.inner_value()));
    }
    let (a, b) = (inner[0], inner[1]);
    out.push(
        Check::at_most(
            "R = 2 f(ρ) change under node doubling (relative)",
            (a.1 - b.1).abs() / b.1,
            1e-2,
        )
        .oracle(),
    );
    out.push(Check::at_most("R = 0.5 f(ρ) change under node doubling", (a.0 - b.0).abs(), 1e-2).oracle());
    Ok(out)
}

pub struct MinimizeOutcome {
    pub checks: Vec<Check>,
    pub result: OptimizeResult,
}

/// Run the (constrained) minimizer from `init` and check its optimality
/// conditions.
pub fn minimize_run(init: &GridMap, constrained: bool, variations: usize, seed: u64) -> Result<MinimizeOutcome> {
    let mut checks = Vec::new();
    let result = if constrained {
        check_feasible(init)?;
        minimize_constrained(init, &Options::constrained())?
    } else {
        minimize_unconstrained(init, &Options::unconstrained())?
    };
    checks.push(Check::holds("energy history is monotone", result.history_monotone()).elementary());
    if constrained {
        checks.push(Check::at_most("KKT residual", result.residual, KKT_TOL).elementary());
        let var = feasible_variations(&result, variations, seed);
        checks.push(
            Check::at_least("min first-order change over feasible variations", var.min_change, -1e-8).elementary(),
        );
        checks.push(Check::info(
            "lines with pooled segments (fraction)",
            result.active_line_fraction(),
        ));
        checks.push(Check::info("pooled segments", result.active_set.len() as f64));
    } else {
        checks.push(Check::at_most("scaled gradient norm", result.residual, GRADIENT_TOL).elementary());
        checks.push(Check::info("min d1 v1", min_d1_first(&result.map).0));
    }
    checks.push(Check::info("iterations", result.iterations as f64));
    checks.push(Check::info("energy", result.energy()));
    Ok(MinimizeOutcome { checks, result })
}

/// Tilted point data on `[-0.12, 0.12]³`.
pub fn tilted_boundary(n: usize) -> Result<GridMap> {
    Ok(tilted_point_boundary(n, 0.12, 0.3 * 0.12 * 0.12, &rat(3, 4), 8)?)
}

/// Free-boundary data with the monotone surrogate exterior on
/// `[-0.2, 0.2]³`.
pub fn free_boundary_data(n: usize) -> Result<GridMap> {
    Ok(fbp_boundary(n, 0.2, &rat(3, 4), &rat(1, 100), 1.0, 6)?)
}

/// The constrained run on tilted data and the unconstrained run on
/// free-boundary data, both on `n³`.
pub fn minimize_suite(n: usize, seed: u64) -> Result<Vec<Check>> {
    let tilted = minimize_run(&tilted_boundary(n)?, true, 100, seed)?;
    let mut out: Vec<Check> = tilted.checks.into_iter().map(|c| prefixed("tilted", c)).collect();
    out.push(
        Check::at_least(
            "tilted: lines with pooled segments (fraction)",
            tilted.result.active_line_fraction(),
            0.01,
        )
        .elementary(),
    );
    let data = free_boundary_data(n)?;
    let free = minimize_run(&data, false, 0, seed)?;
    out.extend(free.checks.into_iter().map(|c| prefixed("free-boundary data", c)));
    let (m, _) = min_d1_first(&free.result.map);
    out.push(Check::holds("free-boundary data: d1 v1 < 0 somewhere", m < 0.0).published("∂_1 w̃¹ < 0 somewhere"));
    out.push(Check::info(
        "free-boundary data: min d1 w1 of the data",
        min_d1_first(&data).0,
    ));
    Ok(out)
}

/// The five gradient-graph checks at `cfg`, plus the normalization of the
/// first variation at `λ = 0.02`.
pub fn slag_suite(cfg: &SlagConfig, seed: u64) -> Result<Vec<Check>> {
    let region = SlagRegion::new(cfg.lambda, cfg.epsilon);
    let b = region.bounding_box()?;
    let r = b.iter().cloned().fold(0.0, f64::max);
    let mut rng = chunk_rng(seed, 0);
    let mut out = vec![
        det_check(&mut rng, cfg.lambda, 1000, r)?,
        theta_expansion_check(cfg.lambda)?,
    ];
    out.extend(mean_curvature_check(cfg, 200, seed ^ 2)?.checks());
    let pert = det_perturbation(cfg, 1e-4, cfg.resolution.min(32))?;
    out.push(
        Check::holds("det D²(Φ + tφ) < 0 off the axis at t = 1e-4", pert.passed())
            .published("det D²(w + tφ) < 0 for t > 0 small"),
    );
    let wrong = det_perturbation(cfg, -1e-4, cfg.resolution.min(32))?;
    out.push(Check::holds("sign inversion at t = -1e-4", !wrong.passed()).oracle());
    if let Some(t) = empirical_t_max(cfg, cfg.resolution.min(32))? {
        out.push(Check::info("empirical t_max", t));
    }
    let fv = first_variation(cfg)?;
    out.push(
        Check::at_least("first variation", fv, f64::MIN_POSITIVE).published("∫_{Ω0} ∂_i(√det g g^{ij} w_kj) φ_k > 0"),
    );
    let small = SlagConfig::new(0.02, cfg.epsilon, cfg.resolution)?;
    let norm = first_variation(&small)? / first_variation_scale(&small);
    out.push(
        Check::near(
            "normalized first variation at λ = 0.02",
            norm,
            ball_moment(),
            0.25 * ball_moment(),
        )
        .oracle(),
    );
    out.push(Check::info(
        "normalized first variation at the configured λ",
        fv / first_variation_scale(cfg),
    ));
    Ok(out)
}

pub struct HolderOutcome {
    pub checks: Vec<Check>,
    pub probe: HolderProbe,
}

/// Fitted exponent of `u¹(t, 0, 0)` for the swapped point map; the regular
/// map `(x1, x2 - x3)` is the control.
pub fn holder_suite(eps: &Rational, k: u32, points: usize) -> Result<HolderOutcome> {
    let src = JetSource::new(solve_point(eps, &a_epsilon(eps), k)?.to_f64());
    let sw = SwappedMap::new(&src, [-0.2; 3], [0.2; 3]);
    let probe = holder_probe(&sw, points)?;
    let reg = (|x: [f64; 3]| [x[0], x[1] - x[2]], |_x: [f64; 3]| 1.0);
    let control = holder_probe(&SwappedMap::new(&reg, [-0.2; 3], [0.2; 3]), points)?;
    let checks = vec![
        Check::near("fitted exponent of u1 along y1", probe.exponent, 1.0 / 3.0, 0.02)
            .published("u is no better than C^{1/3}"),
        Check::holds("u1(t)/t increases as t decreases", probe.quotients_monotone)
            .published("u^1_1 tends to infinity near the origin"),
        Check::near(
            "fitted exponent for a regular map (control)",
            control.exponent,
            1.0,
            1e-9,
        )
        .oracle(),
    ];
    Ok(HolderOutcome { checks, probe })
}

/// Prefix a check name with its experiment.
pub fn prefixed(prefix: &str, mut c: Check) -> Check {
    c.name = format!("{prefix}: {}", c.name);
    c
}

/// Every experiment at its default configuration, seeds derived from
/// `seed`.
pub fn all(seed: u64) -> Result<Vec<Check>> {
    let eps = rat(3, 4);
    let delta = rat(1, 100);
    let mut out = Vec::new();
    let mut add = |name: &str, cs: Vec<Check>| out.extend(cs.into_iter().map(|c| prefixed(name, c)));
    add("verify-coefficients", coefficient_suite(&eps, 6)?);
    add("ck-solve", residual_suite(&eps, &delta, 6)?);
    add("convexity", convexity_suite(100_000, seed)?);
    add(
        "calibrate point",
        calibration_suite(CalibrationMap::Point, &eps, &delta, 6, 100_000, seed ^ 0x10)?.checks,
    );
    add(
        "calibrate fbp",
        calibration_suite(CalibrationMap::Fbp, &eps, &delta, 6, 100_000, seed ^ 0x11)?.checks,
    );
    let coarse = stokes_chain(33, 20, seed ^ 0x20)?;
    let fine = stokes_chain(65, 20, seed ^ 0x20)?;
    let mut stokes = stokes_checks(&coarse);
    stokes.extend(stokes_checks(&fine));
    stokes.extend(refinement_checks(&coarse, &fine));
    stokes.extend(slab_checks()?);
    add("stokes", stokes);
    add("fbp", fbp_suite(&eps, &delta, 6, 256)?.checks);
    add("cone", lo_cone_suite(100, seed ^ 0x30)?);
    add("hopf", hopf_suite(200_000, seed ^ 0x40)?);
    add("minimize", minimize_suite(17, seed ^ 0x50)?);
    add("slag", slag_suite(&SlagConfig::new(0.05, 0.04, 64)?, seed ^ 0x60)?);
    add("hodograph", holder_suite(&eps, 6, 31)?.checks);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_text_orders_and_signs() {
        let j = Jet::from_terms(
            3,
            [([0, 0, 2], rat(-1, 2)), ([1, 0, 0], rat(1, 1)), ([0, 0, 0], rat(2, 3))],
        );
        assert_eq!(jet_text(&j), "2/3 + x1 - 1/2*x3^2");
        assert_eq!(jet_text(&Jet::zero(2)), "0");
        assert_eq!(jet_text(&Jet::monomial([0, 1, 0], rat(-1, 1), 1)), "-x2");
    }

    #[test]
    fn forcing_coefficient_exact_when_square() {
        // 1 + (3/4)² = (5/4)², so the forcing coefficient is compared exactly
        let cs = coefficient_suite(&rat(3, 4), 6).unwrap();
        let c = cs.iter().find(|c| c.name == "x1 coefficient of the forcing f").unwrap();
        assert_eq!(c.tolerance, Some(0.0));
        assert!(cs.iter().all(Check::passed));
    }

    #[test]
    fn coefficient_suite_needs_rational_root() {
        let cs = coefficient_suite(&rat(5, 12), 6).unwrap();
        assert!(cs.iter().all(Check::passed));
        // 1 + (1/2)² is not a square
        assert!(matches!(
            coefficient_suite(&rat(1, 2), 6),
            Err(ExperimentError::Ck(CkError::Jet(JetError::IrrationalRoot)))
        ));
    }

    #[test]
    fn prefixed_names() {
        assert_eq!(prefixed("a", Check::info("b", 1.0)).name, "a: b");
    }
}
