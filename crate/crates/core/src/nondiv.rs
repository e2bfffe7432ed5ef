//! Quantitative nondivergence statistics: the (2,1)-good property of
//! saddle-connection length functions along the horocycle, Minsky–Weiss
//! style sublevel fractions for the injectivity radius along the flow, and
//! a Monte-Carlo estimate for the measure of a polynomial sublevel set.
//!
//! Fractions that feed pass/fail decisions are measured on deterministic
//! uniform grids (midpoint rule); only the polynomial sublevel set uses
//! seeded Monte Carlo. All sampled comparisons carry the statistical bar
//! 3·sqrt(p(1-p)/n).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::saddle::{self, length_function, SaddleConnection};
use crate::sl2::Mat2;
use crate::surface::TranslationSurface;
use crate::tri::Tri;

/// Statistical tolerance for a sampled proportion.
pub fn stat_tolerance(p: f64, n: usize) -> f64 {
    if n == 0 {
        return f64::INFINITY;
    }
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Midpoint grid over an interval.
fn midpoints(interval: (f64, f64), n: usize) -> impl Iterator<Item = f64> {
    let (lo, hi) = interval;
    let step = (hi - lo) / n as f64;
    (0..n).map(move |k| lo + (k as f64 + 0.5) * step)
}

/// Fraction of the interval where `f` stays below `eps`, together with the
/// sup of `f` over the same grid.
pub fn good_ratio(
    f: impl Fn(f64) -> f64,
    interval: (f64, f64),
    eps: f64,
    grid_n: usize,
) -> (f64, f64) {
    let mut below = 0usize;
    let mut sup = f64::NEG_INFINITY;
    for s in midpoints(interval, grid_n) {
        let v = f(s);
        sup = sup.max(v);
        if v < eps {
            below += 1;
        }
    }
    (below as f64 / grid_n as f64, sup)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodViolation {
    pub interval: (f64, f64),
    pub epsilon: f64,
    pub observed_ratio: f64,
    /// Full comparison threshold kappa·(eps/sup)^alpha plus the
    /// statistical bar; a violation means observed_ratio exceeds this.
    pub bound: f64,
}

/// Result of exercising the (kappa, alpha)-good inequality on sampled
/// sublevel sets. `rho` records the smallest sup encountered: the scale
/// ceiling beneath which the inequality was actually tested.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GoodCheckReport {
    pub kappa: f64,
    pub alpha: f64,
    pub rho: f64,
    pub trials: usize,
    pub violations: Vec<GoodViolation>,
}

impl GoodCheckReport {
    fn new(kappa: f64, alpha: f64) -> Self {
        GoodCheckReport {
            kappa,
            alpha,
            rho: f64::INFINITY,
            trials: 0,
            violations: Vec::new(),
        }
    }

    fn record(
        &mut self,
        f: impl Fn(f64) -> f64,
        interval: (f64, f64),
        eps: f64,
        grid_n: usize,
    ) {
        let (ratio, sup) = good_ratio(f, interval, eps, grid_n);
        self.trials += 1;
        self.rho = self.rho.min(sup);
        let bound = self.kappa * (eps / sup).powf(self.alpha) + stat_tolerance(ratio, grid_n);
        if ratio > bound {
            self.violations.push(GoodViolation {
                interval,
                epsilon: eps,
                observed_ratio: ratio,
                bound,
            });
        }
    }
}

/// Check the (2,1)-good inequality for one connection's sheared length
/// function s ↦ |u_s · hol| over an interval, at each requested sublevel:
/// the fraction where the length dips below ε may not exceed 2·(ε/sup).
pub fn good_property_check(
    sc: &SaddleConnection,
    interval: (f64, f64),
    eps_list: &[f64],
    grid_n: usize,
) -> Result<GoodCheckReport> {
    if grid_n < 1_000 {
        return Err(Error::invalid_parameter(format!(
            "sublevel measurement needs at least 1000 grid points, got {grid_n}"
        )));
    }
    if !(interval.0 < interval.1) {
        return Err(Error::invalid_parameter(
            "interval must have positive length",
        ));
    }
    let mut report = GoodCheckReport::new(2.0, 1.0);
    for &eps in eps_list {
        if !(eps > 0.0) {
            return Err(Error::invalid_parameter("sublevels must be positive"));
        }
        report.record(|s| length_function(sc, s), interval, eps, grid_n);
    }
    Ok(report)
}

/// Exercise the (2,1)-good inequality over randomly drawn connections,
/// intervals, and sublevels of a triangulated surface.
pub fn good_sweep(
    t: &Tri,
    l_cut: f64,
    trials: usize,
    grid_n: usize,
    seed: u64,
    cfg: &Config,
) -> Result<GoodCheckReport> {
    if grid_n < 1_000 {
        return Err(Error::invalid_parameter(format!(
            "sublevel measurement needs at least 1000 grid points, got {grid_n}"
        )));
    }
    let connections = saddle::enumerate(t, l_cut, cfg)?;
    if connections.is_empty() {
        return Err(Error::invalid_parameter(format!(
            "no saddle connections of length at most {l_cut} to sample"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GoodCheckReport::new(2.0, 1.0);
    for _ in 0..trials {
        let sc = &connections[rng.gen_range(0..connections.len())];
        let lo = rng.gen_range(-2.0..1.5);
        let hi = lo + rng.gen_range(0.1..2.0);
        // Sublevels only make sense below the sup; draw relative depth.
        let (_, sup) = good_ratio(|s| length_function(sc, s), (lo, hi), f64::MIN_POSITIVE, 64);
        let eps = sup * rng.gen_range(0.01..0.99);
        report.record(|s| length_function(sc, s), (lo, hi), eps, grid_n);
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MWConstants {
    pub c3: f64,
    pub c4: f64,
    pub alpha: f64,
    pub kappa1: f64,
    pub kappa2: f64,
}

/// Sublevel fraction of the injectivity radius along a_t·u_s over a grid
/// of shear times.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MWFractionReport {
    pub t: f64,
    pub epsilon: f64,
    pub interval: (f64, f64),
    pub grid_n: usize,
    /// Fraction of grid points with inj(a_t u_s X) < epsilon, over the
    /// full grid; samples whose certification ran out of budget are not
    /// counted below epsilon but are tallied in `flagged`.
    pub fraction: f64,
    /// The configured comparison bound C4·epsilon^alpha.
    pub bound: f64,
    pub flagged: usize,
    pub constants_used: MWConstants,
}

fn mw_constants(cfg: &Config) -> MWConstants {
    let k = &cfg.constants;
    MWConstants {
        c3: k.c3(),
        c4: k.c4(),
        alpha: k.alpha,
        kappa1: k.kappa1,
        kappa2: k.kappa2,
    }
}

/// Measure the fraction of shear times s in `interval` for which the
/// injectivity radius of a_t·u_s·S drops below `epsilon`. Deterministic
/// midpoint grid; each sample is certified independently (in parallel,
/// reduced in index order). A sample whose enumeration exceeds its budget
/// is flagged rather than failing the sweep.
pub fn mw_fraction(
    s: &TranslationSurface,
    t: f64,
    epsilon: f64,
    interval: (f64, f64),
    grid_n: usize,
    cfg: &Config,
) -> Result<MWFractionReport> {
    if grid_n < 1_000 {
        return Err(Error::invalid_parameter(format!(
            "sublevel measurement needs at least 1000 grid points, got {grid_n}"
        )));
    }
    if !(interval.0 < interval.1) {
        return Err(Error::invalid_parameter(
            "interval must have positive length",
        ));
    }
    if !(epsilon >= 0.0) || !epsilon.is_finite() {
        return Err(Error::invalid_parameter(format!(
            "sublevel must be a finite nonnegative number, got {epsilon}"
        )));
    }
    let shears: Vec<f64> = midpoints(interval, grid_n).collect();
    let samples: Vec<Option<bool>> = shears
        .par_iter()
        .map(|&shear| {
            let m = Mat2::diag_flow(t).mul(&Mat2::upper(shear));
            match saddle::injectivity_radius_along(s, &m, cfg) {
                Ok(inj) => Ok(Some(inj < epsilon)),
                Err(Error::BudgetExceeded { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let below = samples.iter().filter(|b| **b == Some(true)).count();
    let flagged = samples.iter().filter(|b| b.is_none()).count();
    let k = &cfg.constants;
    Ok(MWFractionReport {
        t,
        epsilon,
        interval,
        grid_n,
        fraction: below as f64 / grid_n as f64,
        bound: k.c4() * epsilon.powf(k.alpha),
        flagged,
        constants_used: mw_constants(cfg),
    })
}

/// Outcome of the main nondivergence check at one (t, epsilon, beta).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NondivOutcome {
    /// Fraction within the configured bound.
    Holds,
    /// Fraction above the configured bound.
    Exceeds,
    /// t is below the admissible threshold; nothing was measured.
    BelowThreshold,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MainNondivReport {
    pub outcome: NondivOutcome,
    /// Minimal admissible flow time |log(beta·inj)| + C3.
    pub threshold: f64,
    pub t: f64,
    pub beta: f64,
    pub report: Option<MWFractionReport>,
}

/// Verify the main nondivergence statement on the window [0,1]: for flow
/// times past the threshold |log(beta·inj(S))| + C3, the sublevel fraction
/// at `epsilon` must stay within C4·epsilon^alpha. Below the threshold the
/// statement is silent, which is reported rather than treated as an error.
pub fn verify_main_nondiv(
    s: &TranslationSurface,
    t: f64,
    epsilon: f64,
    beta: f64,
    grid_n: usize,
    cfg: &Config,
) -> Result<MainNondivReport> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::invalid_parameter(format!(
            "window scale beta must be positive and finite, got {beta}"
        )));
    }
    let inj = saddle::injectivity_radius(s, cfg)?;
    let threshold = (beta * inj).ln().abs() + cfg.constants.c3();
    if t < threshold {
        return Ok(MainNondivReport {
            outcome: NondivOutcome::BelowThreshold,
            threshold,
            t,
            beta,
            report: None,
        });
    }
    let report = mw_fraction(s, t, epsilon, (0.0, 1.0), grid_n, cfg)?;
    let outcome = if report.fraction <= report.bound {
        NondivOutcome::Holds
    } else {
        NondivOutcome::Exceeds
    };
    Ok(MainNondivReport {
        outcome,
        threshold,
        t,
        beta,
        report: Some(report),
    })
}

/// Monte-Carlo estimate of a polynomial sublevel measure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolyBoundEstimate {
    pub measure: f64,
    /// One binomial standard deviation of the estimate.
    pub sigma: f64,
    pub samples: u64,
    /// The sublevel threshold C·e^{(-D+1)t}.
    pub threshold: f64,
}

/// Estimate the measure of {x in [0,1] : |a1·e^{-Dt} + a2(x-c) -
/// a3·e^{Dt}(x-c)^2| <= C·e^{(-D+1)t}} by seeded Monte Carlo.
///
/// The coefficients must clear the scale floor max|a_i| >= 10·eta^2 for
/// the estimate to be meaningful at window parameter eta.
pub fn polynomial_bound_mc(
    a: [f64; 3],
    c: f64,
    big_c: f64,
    d: f64,
    t: f64,
    eta: f64,
    samples: u64,
    seed: u64,
) -> Result<PolyBoundEstimate> {
    if samples < 100_000 {
        return Err(Error::invalid_parameter(format!(
            "measure estimate needs at least 1e5 samples, got {samples}"
        )));
    }
    let max_a = a.iter().map(|x| x.abs()).fold(0.0f64, f64::max);
    if max_a < 10.0 * eta * eta {
        return Err(Error::invalid_parameter(format!(
            "coefficients too small: max|a_i| = {max_a} < 10·eta^2 = {}",
            10.0 * eta * eta
        )));
    }
    if !(big_c > 0.0) || !t.is_finite() || !d.is_finite() {
        return Err(Error::invalid_parameter(
            "threshold constant must be positive and exponents finite",
        ));
    }
    let threshold = big_c * ((-d + 1.0) * t).exp();
    let grow = (d * t).exp();
    let decay = (-d * t).exp();
    // Terms with zero coefficient are dropped before multiplying so an
    // overflowing e^{Dt} cannot poison them with 0·inf.
    let term = |x: f64| -> f64 {
        let mut v = 0.0;
        if a[0] != 0.0 {
            v += a[0] * decay;
        }
        if a[1] != 0.0 {
            v += a[1] * (x - c);
        }
        if a[2] != 0.0 {
            v -= a[2] * grow * (x - c) * (x - c);
        }
        v
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0u64;
    for _ in 0..samples {
        let x: f64 = rng.gen_range(0.0..1.0);
        if term(x).abs() <= threshold {
            hits += 1;
        }
    }
    let p = hits as f64 / samples as f64;
    Ok(PolyBoundEstimate {
        measure: p,
        sigma: (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{build_lshape, build_regular_octagon};
    use crate::tri;

    fn cfg() -> Config {
        Config::default()
    }

    #[test]
    fn synthetic_sublevel_ratios_match_the_linear_bound() {
        // f >= 1 everywhere, so the 0.5-sublevel is empty.
        let (ratio, sup) = good_ratio(|s| (1.0 + s * s).sqrt(), (0.0, 1.0), 0.5, 1_000);
        assert_eq!(ratio, 0.0);
        assert!(ratio <= 2.0 * (0.5 / sup));
        // |s| on [0,1]: the sublevel measure is exactly eps, and the
        // midpoint grid recovers it without discretization error.
        let (ratio, sup) = good_ratio(|s| s.abs(), (0.0, 1.0), 0.1, 1_000);
        assert!((ratio - 0.1).abs() < 1e-12);
        assert!((sup - 0.9995).abs() < 1e-12);
        assert!(ratio <= 2.0 * (0.1 / sup));
    }

    #[test]
    fn sheared_length_functions_are_two_one_good() {
        let c = cfg();
        let t = tri::delaunay(&build_regular_octagon(), &c).unwrap();
        let report = good_sweep(&t, 3.0, 50, 2_000, 42, &c).unwrap();
        assert_eq!(report.trials, 50);
        assert_eq!(report.kappa, 2.0);
        assert_eq!(report.alpha, 1.0);
        assert!(report.rho.is_finite() && report.rho > 0.0);
        assert!(
            report.violations.is_empty(),
            "violations: {:?}",
            report.violations
        );
    }

    #[test]
    fn single_connection_check_validates_its_inputs() {
        let c = cfg();
        let t = tri::delaunay(&build_regular_octagon(), &c).unwrap();
        let sc = &saddle::enumerate(&t, 1.5, &c).unwrap()[0];
        assert!(good_property_check(sc, (0.0, 1.0), &[0.5], 100).is_err());
        assert!(good_property_check(sc, (1.0, 1.0), &[0.5], 1_000).is_err());
        assert!(good_property_check(sc, (0.0, 1.0), &[0.0], 1_000).is_err());
        let report = good_property_check(sc, (-1.0, 1.0), &[0.1, 0.4], 1_000).unwrap();
        assert_eq!(report.trials, 2);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn extreme_sublevels_give_trivial_fractions() {
        let c = cfg();
        let s = build_lshape(2.0, 2.0).unwrap();
        let all = mw_fraction(&s, 1.0, 1e9, (0.0, 1.0), 1_000, &c).unwrap();
        assert_eq!(all.fraction, 1.0);
        assert_eq!(all.flagged, 0);
        let none = mw_fraction(&s, 1.0, 0.0, (0.0, 1.0), 1_000, &c).unwrap();
        assert_eq!(none.fraction, 0.0);
    }

    #[test]
    fn octagon_sublevel_fraction_is_antitone_in_epsilon() {
        let c = cfg();
        let s = build_regular_octagon();
        let mut last = f64::INFINITY;
        for eps in [0.2, 0.1, 0.05] {
            let rep = mw_fraction(&s, 2.0, eps, (0.0, 1.0), 1_000, &c).unwrap();
            assert!(rep.fraction <= last, "fraction must shrink with epsilon");
            assert!(rep.flagged == 0);
            assert!((0.0..=1.0).contains(&rep.fraction));
            last = rep.fraction;
        }
    }

    #[test]
    fn main_nondivergence_threshold_gates_the_measurement() {
        let c = cfg();
        let s = build_regular_octagon();
        let below = verify_main_nondiv(&s, 0.01, 0.05, 0.1, 1_000, &c).unwrap();
        assert_eq!(below.outcome, NondivOutcome::BelowThreshold);
        assert!(below.report.is_none());
        // inj = 1, so the threshold is |log 0.1| + C3 ≈ 4.95.
        assert!((below.threshold - (0.1f64.ln().abs() + c.constants.c3())).abs() < 1e-12);

        let at = verify_main_nondiv(&s, below.threshold + 0.1, 0.05, 0.1, 1_000, &c).unwrap();
        assert_eq!(at.outcome, NondivOutcome::Holds);
        let rep = at.report.unwrap();
        assert!(rep.fraction <= rep.bound);
    }

    #[test]
    fn polynomial_measure_matches_the_interior_linear_case() {
        // |x - 1/2| <= T on [0,1] has measure exactly min(1, 2T).
        let (big_c, d, t) = (0.5, 4.0, 1.0);
        let est = polynomial_bound_mc([0.0, 1.0, 0.0], 0.5, big_c, d, t, 0.1, 200_000, 9).unwrap();
        let exact = (2.0 * big_c * ((-d + 1.0) * t).exp()).min(1.0);
        assert!(
            (est.measure - exact).abs() <= 3.0 * est.sigma + 1e-4,
            "{} vs {}",
            est.measure,
            exact
        );
        // Same coefficients anchored at the endpoint: one-sided interval.
        let end = polynomial_bound_mc([0.0, 1.0, 0.0], 0.0, big_c, d, t, 0.1, 200_000, 9).unwrap();
        let exact_end = (big_c * ((-d + 1.0) * t).exp()).min(1.0);
        assert!((end.measure - exact_end).abs() <= 3.0 * end.sigma + 1e-4);
        // Saturation: a huge threshold covers the whole interval.
        let full = polynomial_bound_mc([0.0, 1.0, 0.0], 0.5, 3.0, 4.0, 0.0, 0.1, 100_000, 9).unwrap();
        assert_eq!(full.measure, 1.0);
    }

    #[test]
    fn polynomial_measure_matches_the_quadratic_case() {
        // |e^{Dt}(x-1/2)^2| <= C·e^{(-D+1)t} gives |x-1/2| <= sqrt(C)·
        // e^{(-2D+1)t/2}, of measure min(1, 2·sqrt(C)·e^{(-2D+1)t/2}).
        let (big_c, d, t) = (0.5, 4.0, 1.0);
        let est = polynomial_bound_mc([0.0, 0.0, 1.0], 0.5, big_c, d, t, 0.1, 400_000, 17).unwrap();
        let exact = (2.0 * big_c.sqrt() * ((-2.0 * d + 1.0) * t / 2.0).exp()).min(1.0);
        assert!(
            (est.measure - exact).abs() <= 3.0 * est.sigma + 1e-4,
            "{} vs {}",
            est.measure,
            exact
        );
    }

    #[test]
    fn polynomial_estimate_is_deterministic_and_guarded() {
        let a = polynomial_bound_mc([0.0, 1.0, 0.5], 0.3, 1.0, 4.0, 2.0, 0.1, 100_000, 5).unwrap();
        let b = polynomial_bound_mc([0.0, 1.0, 0.5], 0.3, 1.0, 4.0, 2.0, 0.1, 100_000, 5).unwrap();
        assert_eq!(a.measure, b.measure);
        // Zero cubic coefficient with a large exponent must not produce NaN.
        let huge_t = polynomial_bound_mc([0.0, 1.0, 0.0], 0.5, 1.0, 4.0, 400.0, 0.1, 100_000, 5)
            .unwrap();
        assert!(huge_t.measure.is_finite());
        assert!(polynomial_bound_mc([0.0, 1.0, 0.0], 0.5, 1.0, 4.0, 1.0, 0.1, 10_000, 5).is_err());
        assert!(polynomial_bound_mc([1e-9, 0.0, 0.0], 0.5, 1.0, 4.0, 1.0, 1.0, 100_000, 5).is_err());
    }
}
