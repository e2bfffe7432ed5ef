//! The SL(2,R) side of the story: 2x2 matrices, the diagonal and horocycle
//! flows, closed-form KAK (singular value) decomposition, conjugacy
//! classification, and sampling of the expanding boxes E_t used by the
//! recursion experiments.

use crate::error::{Error, Result};
use crate::geom::V2;
use serde::{Deserialize, Serialize};

/// Row-major 2x2 real matrix. All the group elements handled by the library
/// have determinant one; operations that require it check with a tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2(pub [[f64; 2]; 2]);

pub const IDENTITY: Mat2 = Mat2([[1.0, 0.0], [0.0, 1.0]]);

impl Mat2 {
    pub fn new(a: f64, b: f64, c: f64, d: f64) -> Self {
        Mat2([[a, b], [c, d]])
    }

    /// Diagonal flow a_t = diag(e^t, e^-t).
    pub fn diag_flow(t: f64) -> Self {
        Mat2::new(t.exp(), 0.0, 0.0, (-t).exp())
    }

    /// Upper horocycle u_s = [[1, s], [0, 1]].
    pub fn upper(s: f64) -> Self {
        Mat2::new(1.0, s, 0.0, 1.0)
    }

    /// Lower (opposite) horocycle [[1, 0], [s, 1]].
    pub fn lower(s: f64) -> Self {
        Mat2::new(1.0, 0.0, s, 1.0)
    }

    /// Counterclockwise rotation by `theta`.
    pub fn rotation(theta: f64) -> Self {
        let (sin, cos) = theta.sin_cos();
        Mat2::new(cos, -sin, sin, cos)
    }

    pub fn det(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn transpose(&self) -> Mat2 {
        Mat2::new(self.0[0][0], self.0[1][0], self.0[0][1], self.0[1][1])
    }

    pub fn mul(&self, rhs: &Mat2) -> Mat2 {
        let a = &self.0;
        let b = &rhs.0;
        Mat2::new(
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        )
    }

    pub fn apply(&self, v: V2) -> V2 {
        [
            self.0[0][0] * v[0] + self.0[0][1] * v[1],
            self.0[1][0] * v[0] + self.0[1][1] * v[1],
        ]
    }

    /// Inverse via the adjugate. Callers hold determinant-one matrices; the
    /// division keeps it correct for any invertible input.
    pub fn inverse(&self) -> Mat2 {
        let d = self.det();
        debug_assert!(d.abs() > 1e-300, "inverting a singular matrix");
        Mat2::new(
            self.0[1][1] / d,
            -self.0[0][1] / d,
            -self.0[1][0] / d,
            self.0[0][0] / d,
        )
    }

    pub fn frobenius(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn sub(&self, rhs: &Mat2) -> Mat2 {
        Mat2::new(
            self.0[0][0] - rhs.0[0][0],
            self.0[0][1] - rhs.0[0][1],
            self.0[1][0] - rhs.0[1][0],
            self.0[1][1] - rhs.0[1][1],
        )
    }

    pub fn neg(&self) -> Mat2 {
        Mat2::new(-self.0[0][0], -self.0[0][1], -self.0[1][0], -self.0[1][1])
    }

    pub fn is_close(&self, rhs: &Mat2, tol: f64) -> bool {
        self.sub(rhs).frobenius() <= tol
    }

    /// Largest singular value, from the closed-form eigenvalues of M^T M.
    pub fn sigma_max(&self) -> f64 {
        self.gram_eigs().0.sqrt()
    }

    /// Smallest singular value.
    pub fn sigma_min(&self) -> f64 {
        self.gram_eigs().1.sqrt()
    }

    /// Eigenvalues (large, small) of M^T M. The small one is computed as
    /// det(M^T M) / large to avoid the cancellation in trace/2 - disc.
    fn gram_eigs(&self) -> (f64, f64) {
        let m = &self.0;
        let p = m[0][0] * m[0][0] + m[1][0] * m[1][0];
        let q = m[0][0] * m[0][1] + m[1][0] * m[1][1];
        let r = m[0][1] * m[0][1] + m[1][1] * m[1][1];
        let half_tr = 0.5 * (p + r);
        let disc = (0.25 * (p - r) * (p - r) + q * q).sqrt();
        let large = half_tr + disc;
        let det = self.det();
        let small = if large > 0.0 { det * det / large } else { 0.0 };
        (large, small)
    }

    /// KAK decomposition M = R(k1) a_t R(k2) with t = log sigma_max >= 0.
    /// Requires |det M - 1| within `det_tol`.
    pub fn kak(&self, det_tol: f64) -> Result<(f64, f64, f64)> {
        if (self.det() - 1.0).abs() > det_tol {
            return Err(Error::InvalidMatrix(format!(
                "kak needs determinant 1, got {}",
                self.det()
            )));
        }
        let m = &self.0;
        let p = m[0][0] * m[0][0] + m[1][0] * m[1][0];
        let q = m[0][0] * m[0][1] + m[1][0] * m[1][1];
        let r = m[0][1] * m[0][1] + m[1][1] * m[1][1];
        let (large, _) = self.gram_eigs();
        // Unit eigenvector of M^T M for the large eigenvalue.
        let v1 = if q.abs() > 1e-300 * (p.abs() + r.abs()) {
            let raw = [large - r, q];
            let n = (raw[0] * raw[0] + raw[1] * raw[1]).sqrt();
            [raw[0] / n, raw[1] / n]
        } else if p >= r {
            [1.0, 0.0]
        } else {
            [0.0, 1.0]
        };
        // Determinant one forces sigma >= 1; the clamp absorbs roundoff for
        // near-rotations so the reported stretch is never negative.
        let sigma = large.sqrt().max(1.0);
        // First column of the left rotation; the second is its quarter turn,
        // which keeps the factor exactly orthogonal even when sigma_min
        // underflows the working precision.
        let img = self.apply(v1);
        let u1 = [img[0] / sigma, img[1] / sigma];
        let k1 = u1[1].atan2(u1[0]);
        // Right factor is V^T where V = [v1, rot90(v1)].
        let k2 = v1[1].atan2(v1[0]);
        Ok((k1, sigma.ln(), -k2))
    }
}

/// Conjugacy type of a determinant-one matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Class {
    Identity,
    Elliptic,
    Parabolic,
    Hyperbolic,
}

/// Classify up to sign: +-I count as `Identity`, |trace| within `tol` of 2
/// (but not +-I) is `Parabolic`, below is `Elliptic`, above `Hyperbolic`.
pub fn classify(m: &Mat2, tol: f64) -> Result<Class> {
    if (m.det() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMatrix(format!(
            "classification needs determinant 1, got {}",
            m.det()
        )));
    }
    if m.is_close(&IDENTITY, tol) || m.is_close(&IDENTITY.neg(), tol) {
        return Ok(Class::Identity);
    }
    let t = m.trace().abs();
    if t > 2.0 + tol {
        Ok(Class::Hyperbolic)
    } else if t < 2.0 - tol {
        Ok(Class::Elliptic)
    } else {
        Ok(Class::Parabolic)
    }
}

/// Translation length of a hyperbolic element: 2 arccosh(|trace| / 2).
pub fn translation_length(m: &Mat2) -> Result<f64> {
    let half = m.trace().abs() / 2.0;
    if half <= 1.0 {
        return Err(Error::Classification(format!(
            "translation length needs |trace| > 2, got {}",
            m.trace()
        )));
    }
    Ok(2.0 * (half + (half * half - 1.0).sqrt()).ln())
}

/// Upper bound for how far applying `m` can move any unit-area surface in
/// Teichmueller distance: log of the largest singular value. Needs det 1.
pub fn teich_distance_upper_bound(m: &Mat2) -> Result<f64> {
    if (m.det() - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMatrix(format!(
            "distance bound needs determinant 1, got {}",
            m.det()
        )));
    }
    Ok(m.sigma_max().ln())
}

/// One sample of the box E_t, remembering its coordinates in the
/// parametrization g = lower(s) a_tau a_t upper(r).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EtPoint {
    pub s: f64,
    pub tau: f64,
    pub r: f64,
    pub mat: Mat2,
}

/// Deterministic grid on an interval: a single point sits at the midpoint,
/// two or more are an inclusive linspace.
pub fn grid_points(lo: f64, hi: f64, n: usize) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::invalid_parameter("grid needs at least one point"));
    }
    if n == 1 {
        return Ok(vec![0.5 * (lo + hi)]);
    }
    let step = (hi - lo) / (n - 1) as f64;
    Ok((0..n).map(|i| lo + step * i as f64).collect())
}

/// Sample the expanding box E_t = B_beta a_t {u_r : r in [0,1]} on a tensor
/// grid: the beta-ball factor is parametrized by a lower horocycle and a
/// diagonal correction, g(s, tau, r) = lower(s) a_(tau + t) upper(r), with
/// s, tau in [-beta, beta] and r in [0, 1].
pub fn sample_e_t(t: f64, beta: f64, n: (usize, usize, usize)) -> Result<Vec<EtPoint>> {
    // The standing assumption on the window is e^{-0.01 t} < beta < 1; the
    // lower bound is vacuous at t = 0 (where the canonical example uses
    // beta = 0.5), so only beta in (0, 1) is enforced unconditionally and
    // the lower bound when t is genuinely positive.
    if !(beta > 0.0 && beta < 1.0) || !t.is_finite() {
        return Err(Error::invalid_parameter(format!(
            "sample_e_t needs 0 < beta < 1 and finite t, got beta={beta}, t={t}"
        )));
    }
    if t > 0.0 && beta <= (-0.01 * t).exp() {
        return Err(Error::invalid_parameter(format!(
            "window too narrow: beta={beta} must exceed e^(-0.01 t) = {}",
            (-0.01 * t).exp()
        )));
    }
    let ss = grid_points(-beta, beta, n.0)?;
    let taus = grid_points(-beta, beta, n.1)?;
    let rs = grid_points(0.0, 1.0, n.2)?;
    let mut out = Vec::with_capacity(n.0 * n.1 * n.2);
    for &s in &ss {
        for &tau in &taus {
            let left = Mat2::lower(s).mul(&Mat2::diag_flow(tau + t));
            for &r in &rs {
                out.push(EtPoint {
                    s,
                    tau,
                    r,
                    mat: left.mul(&Mat2::upper(r)),
                });
            }
        }
    }
    Ok(out)
}

/// Default grid resolution for E_t: the r-direction is stretched by e^{2t},
/// so it gets at least one point per unit of stretched length.
pub fn default_e_t_grid(t: f64) -> (usize, usize, usize) {
    (9, 9, (t.exp().ceil() as usize).max(64))
}

/// Haar volume of the box E_t in the (s, tau, r) parametrization, where the
/// invariant density is e^{2(tau + t)} ds dtau dr: closed form
/// 2 beta sinh(2 beta) e^{2t}.
pub fn e_t_haar_volume(t: f64, beta: f64) -> f64 {
    2.0 * beta * (2.0 * beta).sinh() * (2.0 * t).exp()
}

/// Monte Carlo estimate of the same volume from uniform box samples; used to
/// cross-check the density. Deterministic for a fixed seed.
pub fn e_t_haar_mc(t: f64, beta: f64, samples: u64, seed: u64) -> Result<f64> {
    use rand::{Rng, SeedableRng};
    if samples == 0 || !(beta > 0.0) {
        return Err(Error::invalid_parameter(
            "haar estimate needs beta > 0 and at least one sample",
        ));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut acc = 0.0;
    for _ in 0..samples {
        let tau = rng.gen_range(-beta..=beta);
        let _s: f64 = rng.gen_range(-beta..=beta);
        let _r: f64 = rng.gen_range(0.0..=1.0);
        acc += (2.0 * (tau + t)).exp();
    }
    let box_volume = 2.0 * beta * 2.0 * beta * 1.0;
    Ok(acc / samples as f64 * box_volume)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn reconstruct(k1: f64, t: f64, k2: f64) -> Mat2 {
        Mat2::rotation(k1)
            .mul(&Mat2::diag_flow(t))
            .mul(&Mat2::rotation(k2))
    }

    #[test]
    fn golden_ratio_is_the_horocycle_norm() {
        // Largest singular value of [[1,1],[0,1]] is the golden ratio.
        let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
        assert_abs_diff_eq!(Mat2::upper(1.0).sigma_max(), phi, epsilon = 1e-14);
        assert_abs_diff_eq!(Mat2::upper(1.0).sigma_min(), 1.0 / phi, epsilon = 1e-14);
    }

    #[test]
    fn kak_reconstructs_fixed_cases() {
        let cases = vec![
            IDENTITY,
            Mat2::upper(1.0),
            Mat2::lower(-2.5),
            Mat2::diag_flow(3.0),
            Mat2::rotation(0.7),
            Mat2::new(5.0, 2.0, 2.0, 1.0),
            Mat2::upper(0.3).mul(&Mat2::diag_flow(-2.0)).mul(&Mat2::rotation(1.1)),
        ];
        for m in cases {
            let (k1, t, k2) = m.kak(1e-9).unwrap();
            assert!(t >= 0.0, "kak stretch must be nonnegative, got {t}");
            let back = reconstruct(k1, t, k2);
            assert!(
                m.is_close(&back, 1e-10),
                "kak reconstruction off by {} for {m:?}",
                m.sub(&back).frobenius()
            );
        }
    }

    #[test]
    fn kak_rejects_wrong_determinant() {
        assert!(Mat2::new(2.0, 0.0, 0.0, 2.0).kak(1e-9).is_err());
    }

    #[test]
    fn diagonal_flow_renormalizes_horocycle() {
        // a_t u_s a_{-t} = u_{s e^{2t}}.
        for &t in &[0.1, 1.0, 2.5, 5.0] {
            for &s in &[-1.0, 0.25, 3.0] {
                let lhs = Mat2::diag_flow(t)
                    .mul(&Mat2::upper(s))
                    .mul(&Mat2::diag_flow(-t));
                let rhs = Mat2::upper(s * (2.0 * t).exp());
                let scale = rhs.frobenius();
                assert!(
                    lhs.sub(&rhs).frobenius() <= 1e-10 * scale.max(1.0),
                    "commutation failed at t={t}, s={s}"
                );
            }
        }
    }

    #[test]
    fn classification_cases() {
        let tol = 1e-9;
        assert_eq!(classify(&IDENTITY, tol).unwrap(), Class::Identity);
        assert_eq!(classify(&IDENTITY.neg(), tol).unwrap(), Class::Identity);
        // Within tolerance of the identity counts as identity.
        assert_eq!(
            classify(&Mat2::upper(1e-13), tol).unwrap(),
            Class::Identity
        );
        assert_eq!(classify(&Mat2::upper(1e-6), tol).unwrap(), Class::Parabolic);
        assert_eq!(classify(&Mat2::upper(2.0), tol).unwrap(), Class::Parabolic);
        assert_eq!(classify(&Mat2::lower(2.0), tol).unwrap(), Class::Parabolic);
        assert_eq!(
            classify(&Mat2::rotation(1.0), tol).unwrap(),
            Class::Elliptic
        );
        assert_eq!(
            classify(&Mat2::new(5.0, 2.0, 2.0, 1.0), tol).unwrap(),
            Class::Hyperbolic
        );
        // Trace can sit below -2 as well.
        assert_eq!(
            classify(&Mat2::new(-5.0, -2.0, -2.0, -1.0), tol).unwrap(),
            Class::Hyperbolic
        );
    }

    #[test]
    fn translation_length_of_trace_six() {
        let m = Mat2::new(5.0, 2.0, 2.0, 1.0);
        let expected = 2.0 * (3.0f64 + 8.0f64.sqrt()).ln();
        assert_abs_diff_eq!(translation_length(&m).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(translation_length(&m).unwrap(), 3.525494348078172, epsilon = 1e-12);
        assert!(translation_length(&Mat2::upper(1.0)).is_err());
    }

    #[test]
    fn grid_rule_midpoint_then_inclusive() {
        assert_eq!(grid_points(0.0, 1.0, 1).unwrap(), vec![0.5]);
        assert_eq!(grid_points(0.0, 1.0, 2).unwrap(), vec![0.0, 1.0]);
        let g5 = grid_points(-1.0, 1.0, 5).unwrap();
        assert_eq!(g5, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert!(grid_points(0.0, 1.0, 0).is_err());
    }

    #[test]
    fn minimal_e_t_grid_contains_identity_and_unit_horocycle() {
        // At t = 0 the (1,1,2) grid degenerates to {I, u_1}.
        let pts = sample_e_t(0.0, 0.5, (1, 1, 2)).unwrap();
        assert_eq!(pts.len(), 2);
        assert!(pts[0].mat.is_close(&IDENTITY, 1e-15));
        assert!(pts[1].mat.is_close(&Mat2::upper(1.0), 1e-15));
    }

    #[test]
    fn e_t_points_decompose_as_claimed() {
        let t = 1.3;
        let beta = (-t / 124.0f64).exp(); // driver-scale window, inside (e^{-0.01 t}, 1)
        let pts = sample_e_t(t, beta, (3, 3, 4)).unwrap();
        assert_eq!(pts.len(), 36);
        for p in &pts {
            let expect = Mat2::lower(p.s)
                .mul(&Mat2::diag_flow(p.tau + t))
                .mul(&Mat2::upper(p.r));
            assert!(p.mat.is_close(&expect, 1e-12));
            assert_abs_diff_eq!(p.mat.det(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn e_t_window_bounds_are_enforced() {
        assert!(sample_e_t(0.0, 1.0, (1, 1, 2)).is_err());
        assert!(sample_e_t(0.0, 0.0, (1, 1, 2)).is_err());
        assert!(sample_e_t(2.0, 0.5, (1, 1, 2)).is_err()); // below e^{-0.02}
        assert!(sample_e_t(2.0, 0.99, (1, 1, 2)).is_ok());
        assert!(sample_e_t(0.0, 0.5, (1, 1, 2)).is_ok()); // lower bound vacuous at t = 0
    }

    #[test]
    fn distance_bound_on_horocycles_has_closed_form() {
        // For u_s the largest singular value is (|s| + sqrt(s^2 + 4)) / 2.
        for &s in &[0.0f64, 0.5, -1.0, 2.0, -3.7, 10.0] {
            let expect = ((s.abs() + (s * s + 4.0).sqrt()) / 2.0).ln();
            for m in [Mat2::upper(s), Mat2::lower(s)] {
                assert_abs_diff_eq!(
                    teich_distance_upper_bound(&m).unwrap(),
                    expect,
                    epsilon = 1e-12
                );
            }
        }
        // a_t moves at most t, rotations not at all.
        assert_abs_diff_eq!(
            teich_distance_upper_bound(&Mat2::diag_flow(1.3)).unwrap(),
            1.3,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            teich_distance_upper_bound(&Mat2::rotation(0.9)).unwrap(),
            0.0,
            epsilon = 1e-9
        );
        assert!(teich_distance_upper_bound(&Mat2::new(2.0, 0.0, 0.0, 2.0)).is_err());
    }

    #[test]
    fn conjugating_by_the_horocycle_matches_the_entrywise_formula() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let tau: f64 = rng.gen_range(-3.0..3.0);
            let a1: f64 = rng.gen_range(-2.0..2.0);
            let a2: f64 = rng.gen_range(-2.0..2.0);
            let a3: f64 = rng.gen_range(-2.0..2.0);
            let a4: f64 = rng.gen_range(-2.0..2.0);
            let m = Mat2::new(a1, a2, a3, a4);
            let conj = Mat2::upper(tau).mul(&m).mul(&Mat2::upper(-tau));
            let expect = Mat2::new(
                a1 + a3 * tau,
                a2 + (a4 - a1) * tau - a3 * tau * tau,
                a3,
                a4 - a3 * tau,
            );
            for i in 0..2 {
                for j in 0..2 {
                    assert!(
                        (conj.0[i][j] - expect.0[i][j]).abs() <= 1e-12,
                        "entry ({i},{j}): {} vs {}",
                        conj.0[i][j],
                        expect.0[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn frobenius_norm_facts_for_unimodular_matrices() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                Mat2::lower(rng.gen_range(-2.0..2.0))
                    .mul(&Mat2::diag_flow(rng.gen_range(-1.5..1.5)))
                    .mul(&Mat2::upper(rng.gen_range(-2.0..2.0)))
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            // det +-1 implies the inverse has the same Frobenius norm.
            let rel = (a.frobenius() - a.inverse().frobenius()).abs();
            assert!(rel <= 1e-9 * a.frobenius());
            // Submultiplicative above, bounded below by sigma_min(A) ||B||.
            let ab = a.mul(&b);
            assert!(ab.frobenius() <= a.frobenius() * b.frobenius() * (1.0 + 1e-12));
            assert!(ab.frobenius() >= a.sigma_min() * b.frobenius() * (1.0 - 1e-12));
        }
    }

    #[test]
    fn haar_volume_matches_monte_carlo() {
        for &t in &[0.0, 1.0, 3.0] {
            let beta = 0.3;
            let exact = e_t_haar_volume(t, beta);
            let mc = e_t_haar_mc(t, beta, 200_000, 7).unwrap();
            assert!(
                (mc - exact).abs() / exact < 0.01,
                "mc {mc} vs exact {exact} at t={t}"
            );
            // Normalized by e^{2t} the volume is independent of t.
            assert_abs_diff_eq!(
                exact / (2.0 * t).exp(),
                2.0 * beta * (2.0 * beta).sinh(),
                epsilon = 1e-12
            );
        }
    }

    proptest! {
        #[test]
        fn kak_reconstructs_random_products(
            s in -3.0f64..3.0,
            t in -2.0f64..2.0,
            r in -3.0f64..3.0,
            theta in 0.0f64..std::f64::consts::TAU,
        ) {
            let m = Mat2::lower(s)
                .mul(&Mat2::diag_flow(t))
                .mul(&Mat2::upper(r))
                .mul(&Mat2::rotation(theta));
            let (k1, tt, k2) = m.kak(1e-6).unwrap();
            let back = reconstruct(k1, tt, k2);
            prop_assert!(m.is_close(&back, 1e-9 * m.frobenius().max(1.0)));
            prop_assert!(tt >= 0.0);
        }

        #[test]
        fn singular_values_multiply_to_det(
            a in -4.0f64..4.0, b in -4.0f64..4.0,
            c in -4.0f64..4.0, d in -4.0f64..4.0,
        ) {
            let m = Mat2::new(a, b, c, d);
            prop_assume!(m.det().abs() > 1e-3);
            let prod = m.sigma_max() * m.sigma_min();
            prop_assert!((prod - m.det().abs()).abs() < 1e-9 * prod.max(1.0));
        }
    }
}
