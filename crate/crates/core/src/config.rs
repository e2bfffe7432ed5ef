use serde::{Deserialize, Serialize};

/// Fixed numerical tolerances used across the geometry kernel.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Tolerances {
    /// Base geometric tolerance: coordinate comparisons, point snapping,
    /// canonical-form quantization (scaled to the triangulation, see
    /// `canon`).
    pub geom: f64,
    /// Allowed defect of |det - 1| for group elements.
    pub det: f64,
    /// Allowed reconstruction error in KAK / polar decompositions.
    pub kak: f64,
    /// Relative tolerance for treating an in-circle test as cocircular.
    pub cocircular: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            geom: 1e-9,
            det: 1e-12,
            kak: 1e-10,
            cocircular: 1e-9,
        }
    }
}

/// Work budgets for the unbounded searches. Exceeding one yields
/// [`crate::Error::BudgetExceeded`] (or `NumericalDegeneracy` /
/// `NonPeriodicDirection` where the failure has a geometric reading).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Budgets {
    /// Sector records popped during saddle-connection enumeration.
    pub enumeration: u64,
    /// Edge flips during a single Delaunay reduction.
    pub flips: u64,
    /// Triangle crossings while marching one separatrix.
    pub separatrix: u64,
    /// Cocircular flip variants explored per canonical form.
    pub degenerate_variants: u64,
    /// Group words tested when searching for a hyperbolic element.
    pub hyperbolic_words: u64,
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets {
            enumeration: 10_000_000,
            flips: 200_000,
            separatrix: 200_000,
            degenerate_variants: 512,
            hyperbolic_words: 10_000,
        }
    }
}

/// Constants of the quantitative theory. The recursion/extraction pipeline
/// reads every exponent and threshold from here so experiments can vary them
/// coherently; `Default` pins the values used throughout the test suite.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Constants {
    /// Chart-comparison constant: period charts are trusted on balls of
    /// radius 1/c1 and the exponential map requires |v| < 1/c1.
    pub c1: f64,
    /// Distortion constant between overlapping charts, (c1+1)^2 * c1.
    pub c2: f64,
    /// Lower sublevel constant kappa1 and upper constant kappa2 for the
    /// injectivity-radius proxy, with Hoelder exponent alpha.
    pub kappa1: f64,
    pub kappa2: f64,
    pub alpha: f64,
    /// Sheet-count exponent kappa4: transversal sheets grow at most like
    /// exp(6 kappa4 t).
    pub kappa4: f64,
    /// Margulis-function exponent nu in sum over sheets of |w|^(-nu).
    pub nu: f64,
    /// Balanced-splitting tolerance: residual of a near-return decomposition
    /// must be below tau_bal * |w|.
    pub tau_bal: f64,
    /// Multiplier in the sheet-count certificate.
    pub k_sheet: f64,
    /// Fraction of the window that must fail the pointwise checks before the
    /// driver switches to symmetry extraction.
    pub k_bad: f64,
    /// Contraction factor available to the averaging operator.
    pub c0: f64,
}

impl Default for Constants {
    fn default() -> Self {
        let c1 = 2.0;
        Constants {
            c1,
            c2: (c1 + 1.0) * (c1 + 1.0) * c1,
            kappa1: 0.1,
            kappa2: 10.0,
            alpha: 0.5,
            kappa4: 4.0,
            nu: 0.5,
            tau_bal: 0.1,
            k_sheet: 1.0,
            k_bad: 0.5,
            c0: 0.5,
        }
    }
}

impl Constants {
    /// Threshold offset for the nondivergence window, log(1/kappa1) +
    /// log(sqrt 2).
    pub fn c3(&self) -> f64 {
        (1.0 / self.kappa1).ln() + 2.0f64.sqrt().ln()
    }

    /// Comparison constant kappa2 / kappa1^alpha between the proxy and the
    /// true injectivity radius.
    pub fn c4(&self) -> f64 {
        self.kappa2 / self.kappa1.powf(self.alpha)
    }

    /// Degree bound for the recursion's polynomial window: 6 kappa4 + 100.
    pub fn degree(&self) -> f64 {
        6.0 * self.kappa4 + 100.0
    }

    /// Minimal admissible degree minus one; the driver requires
    /// `degree >= degree_floor() + 1`.
    pub fn degree_floor(&self) -> f64 {
        6.0 * self.kappa4 + 99.0
    }

    /// Window scale beta = exp(-t / degree()).
    pub fn beta(&self, t: f64) -> f64 {
        (-t / self.degree()).exp()
    }

    /// Hard cap on the radius proxy, 1 / (2 c1).
    pub fn r_max(&self) -> f64 {
        1.0 / (2.0 * self.c1)
    }

    /// Radius proxy: min(c0 * inj, r_max). Monotone nondecreasing in `inj`
    /// and bounded by both the injectivity radius and the chart radius.
    pub fn r_proxy(&self, inj: f64) -> f64 {
        (self.c0 * inj).min(self.r_max())
    }
}

/// Bundle of all tunables, passed to the high-level drivers.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Config {
    pub tol: Tolerances,
    pub budgets: Budgets,
    pub constants: Constants,
}
