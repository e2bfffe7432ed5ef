//! Saddle-connection enumeration by wedge search on a Delaunay
//! triangulation, the injectivity radius (shortest connection / 2-systole
//! proxy), and its certified computation along a linear deformation.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geom::{self, V2};
use crate::sl2::Mat2;
use crate::surface::TranslationSurface;
use crate::tri::{self, next, prev, Tri};
use serde::{Deserialize, Serialize};

/// One oriented saddle connection: holonomy vector, endpoint vertex
/// classes, the directed triangulation edges its interior crosses (in
/// order), the half-edge at whose corner it starts, and — when the
/// triangulation carries a homology basis — its integer coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SaddleConnection {
    pub hol: V2,
    pub length: f64,
    pub start_class: u32,
    pub end_class: u32,
    pub start_half_edge: u32,
    pub crossings: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub class: Vec<i64>,
}

/// |u_s · hol|: the connection's length after the horocycle shear u_s.
pub fn length_function(sc: &SaddleConnection, s: f64) -> f64 {
    let (x, y) = (sc.hol[0], sc.hol[1]);
    ((x + s * y) * (x + s * y) + y * y).sqrt()
}

struct Record {
    crossed: u32,
    a: V2,
    b: V2,
    lo: V2,
    hi: V2,
    tail_class: Vec<i64>,
    path: Vec<u32>,
}

fn marked_state(tri: &Tri) -> Result<()> {
    if tri.mark_regular {
        return Ok(());
    }
    let any_singular = tri.vert_angle.iter().any(|&a| a != 2);
    let any_regular = tri.vert_angle.iter().any(|&a| a == 2);
    if !any_singular {
        return Err(Error::NoSingularity);
    }
    if any_regular {
        return Err(Error::invalid_parameter(
            "surfaces mixing unmarked regular vertices with singularities are not supported; \
             enable regular-vertex marking",
        ));
    }
    Ok(())
}

/// All oriented saddle connections of length at most `l`, sorted by
/// (length, holonomy, endpoints, crossing sequence). Geodesics are blocked
/// by every marked vertex, so holonomies are never proper multiples of a
/// shorter connection in the same direction.
pub fn enumerate(t: &Tri, l: f64, cfg: &Config) -> Result<Vec<SaddleConnection>> {
    marked_state(t)?;
    if !(l >= 0.0) || !l.is_finite() {
        return Err(Error::invalid_parameter(format!(
            "enumeration cutoff must be a finite nonnegative length, got {l}"
        )));
    }
    let has_class = !t.class.is_empty();
    let empty: Vec<i64> = Vec::new();
    let cls = |h: u32| -> &Vec<i64> {
        if has_class {
            &t.class[h as usize]
        } else {
            &empty
        }
    };
    let add = |a: &[i64], b: &[i64]| -> Vec<i64> {
        a.iter().zip(b.iter()).map(|(x, y)| x + y).collect()
    };

    let mut out: Vec<SaddleConnection> = Vec::new();
    let mut pops: u64 = 0;
    let mut stack: Vec<Record> = Vec::new();

    for h in 0..t.vecs.len() as u32 {
        // One corner per half-edge: the corner at its tail.
        let vh = t.vecs[h as usize];
        let len = geom::norm(vh);
        if len <= l {
            out.push(SaddleConnection {
                hol: vh,
                length: len,
                start_class: t.vert[h as usize],
                end_class: t.vert[next(h) as usize],
                start_half_edge: h,
                crossings: Vec::new(),
                class: cls(h).clone(),
            });
        }
        let a0 = vh;
        let b0 = geom::neg(t.vecs[prev(h) as usize]);
        stack.push(Record {
            crossed: next(h),
            a: a0,
            b: b0,
            lo: a0,
            hi: b0,
            tail_class: cls(h).clone(),
            path: Vec::new(),
        });

        while let Some(rec) = stack.pop() {
            // Long crossing sequences (sliver regimes) are charged against
            // the budget in proportion to the memory they copy, so the
            // budget trips before the record stack does damage.
            pops += 1 + rec.path.len() as u64 / 8;
            if pops > cfg.budgets.enumeration {
                return Err(Error::budget("saddle-enumeration", pops));
            }
            if geom::dist_origin_segment(rec.a, rec.b) > l {
                continue;
            }
            if geom::cross(rec.lo, rec.hi) <= 0.0 {
                continue; // empty angular sector
            }
            let g2 = t.opp[rec.crossed as usize];
            let apex = geom::add(rec.a, t.vecs[next(g2) as usize]);
            let apex_class = if has_class {
                add(&rec.tail_class, cls(next(g2)))
            } else {
                Vec::new()
            };
            let mut path = rec.path.clone();
            path.push(rec.crossed);
            // Sector membership needs a relative margin: a geodesic that
            // continues straight through an already-hit vertex lands exactly
            // on a sub-sector boundary in exact arithmetic, but rounding on
            // deformed surfaces can push its cross product to either side of
            // zero. Distinct holonomy directions are separated by far more
            // than the margin at any admissible cutoff.
            let tol2 = cfg.tol.geom * cfg.tol.geom;
            let inside = |c: f64, u: V2, w: V2| -> bool {
                c > 0.0 && c * c > tol2 * geom::norm_sq(u) * geom::norm_sq(w)
            };
            let below = geom::cross(rec.lo, apex);
            let above = geom::cross(apex, rec.hi);
            if inside(below, rec.lo, apex) && inside(above, apex, rec.hi) {
                let apex_len = geom::norm(apex);
                if apex_len <= l {
                    out.push(SaddleConnection {
                        hol: apex,
                        length: apex_len,
                        start_class: t.vert[h as usize],
                        end_class: t.vert[prev(g2) as usize],
                        start_half_edge: h,
                        crossings: path.clone(),
                        class: apex_class.clone(),
                    });
                }
                stack.push(Record {
                    crossed: next(g2),
                    a: rec.a,
                    b: apex,
                    lo: rec.lo,
                    hi: apex,
                    tail_class: rec.tail_class.clone(),
                    path: path.clone(),
                });
                stack.push(Record {
                    crossed: prev(g2),
                    a: apex,
                    b: rec.b,
                    lo: apex,
                    hi: rec.hi,
                    tail_class: apex_class,
                    path,
                });
            } else if !inside(below, rec.lo, apex) {
                // Apex at or below the lower boundary: geodesics in the
                // sector all pass the apex on its upper side.
                stack.push(Record {
                    crossed: prev(g2),
                    a: apex,
                    b: rec.b,
                    lo: rec.lo,
                    hi: rec.hi,
                    tail_class: apex_class,
                    path,
                });
            } else {
                stack.push(Record {
                    crossed: next(g2),
                    a: rec.a,
                    b: apex,
                    lo: rec.lo,
                    hi: rec.hi,
                    tail_class: rec.tail_class.clone(),
                    path,
                });
            }
        }
    }

    out.sort_by(|p, q| {
        p.length
            .total_cmp(&q.length)
            .then(p.hol[0].total_cmp(&q.hol[0]))
            .then(p.hol[1].total_cmp(&q.hol[1]))
            .then(p.start_class.cmp(&q.start_class))
            .then(p.end_class.cmp(&q.end_class))
            .then(p.crossings.len().cmp(&q.crossings.len()))
            .then(p.crossings.cmp(&q.crossings))
    });
    Ok(out)
}

/// Enumerate on a surface (triangulating internally).
pub fn enumerate_surface(
    s: &TranslationSurface,
    l: f64,
    cfg: &Config,
) -> Result<Vec<SaddleConnection>> {
    let t = tri::delaunay(s, cfg)?;
    enumerate(&t, l, cfg)
}

/// Redevelop a connection along its stored crossing sequence and return the
/// recomputed holonomy (consistency check for stored results).
pub fn redevelop(t: &Tri, sc: &SaddleConnection) -> Result<V2> {
    let h = sc.start_half_edge;
    if sc.crossings.is_empty() {
        return Ok(t.vecs[h as usize]);
    }
    if sc.crossings[0] != next(h) {
        return Err(Error::invalid_parameter(
            "crossing sequence does not start at the corner's opposite edge",
        ));
    }
    // Invariant: `a` is the developed position of the tail vertex of the
    // edge about to be crossed; the far triangle's apex is then a + the
    // vector of the far edge leaving that tail.
    let mut a = t.vecs[h as usize];
    for k in 0..sc.crossings.len() {
        let g2 = t.opp[sc.crossings[k] as usize];
        let apex = geom::add(a, t.vecs[next(g2) as usize]);
        if k + 1 == sc.crossings.len() {
            return Ok(apex);
        }
        let e = sc.crossings[k + 1];
        if e == next(g2) {
            // Tail of next(g2) is the same vertex; nothing moves.
        } else if e == prev(g2) {
            a = apex;
        } else {
            return Err(Error::invalid_parameter(format!(
                "crossing {k} is not an edge of the developed triangle"
            )));
        }
    }
    unreachable!()
}

/// Past this edge-length ratio the confirmation sweep in
/// `injectivity_radius_tri` is skipped: its cost grows with the squared
/// aspect, while the Delaunay property already pins the answer.
const SWEEP_ASPECT_CAP: f64 = 64.0;

/// Injectivity radius of a triangulated surface: half the shortest closed
/// geodesic through a marked point equals half the shortest saddle
/// connection; this library uses the shortest-connection convention
/// directly. On a Delaunay triangulation the shortest connection is the
/// shortest edge; a sweep up to that length re-confirms this against
/// numerical slack in the flip predicate whenever the triangulation's
/// aspect keeps the sweep affordable.
pub fn injectivity_radius_tri(t: &Tri, cfg: &Config) -> Result<f64> {
    marked_state(t)?;
    let (mut min_edge, mut max_edge) = (f64::INFINITY, 0.0f64);
    for v in &t.vecs {
        let len = geom::norm(*v);
        min_edge = min_edge.min(len);
        max_edge = max_edge.max(len);
    }
    if max_edge > SWEEP_ASPECT_CAP * min_edge {
        return Ok(min_edge);
    }
    let all = enumerate(t, min_edge, cfg)?;
    Ok(all
        .iter()
        .map(|sc| sc.length)
        .fold(f64::INFINITY, f64::min))
}

pub fn injectivity_radius(s: &TranslationSurface, cfg: &Config) -> Result<f64> {
    let t = tri::delaunay(s, cfg)?;
    injectivity_radius_tri(&t, cfg)
}

/// Injectivity radius of `a · S`, certified.
///
/// For moderate stretches (log σ_max ≤ 3) candidates are pulled back: every
/// connection of a·S with |a·Hol| ≤ ε has |Hol| ≤ σ_max(a)·ε, so
/// enumerating S up to σ_max·ε and minimizing |a·Hol| is exhaustive as soon
/// as a witness below ε appears; ε doubles from σ_min·inj(S) until then.
/// Beyond that the stretch is decomposed as rotation · diag-flow · rotation
/// and the diagonal part applied in unit half-steps with re-Delaunay after
/// each, keeping every enumeration at bounded aspect.
pub fn injectivity_radius_along(
    s: &TranslationSurface,
    a: &Mat2,
    cfg: &Config,
) -> Result<f64> {
    if (a.det() - 1.0).abs() > cfg.tol.geom {
        return Err(Error::InvalidMatrix(format!(
            "deformation must have determinant 1, got {}",
            a.det()
        )));
    }
    let sigma = a.sigma_max();
    if sigma.ln() <= 3.0 {
        let t = tri::delaunay(s, cfg)?;
        let inj = injectivity_radius_tri(&t, cfg)?;
        let ceiling = sigma * inj; // |a·v_min| never exceeds this
        let mut eps = a.sigma_min() * inj;
        loop {
            let cand = enumerate(&t, sigma * eps, cfg)?;
            let m = cand
                .iter()
                .map(|sc| geom::norm(a.apply(sc.hol)))
                .fold(f64::INFINITY, f64::min);
            if m <= eps {
                return Ok(m);
            }
            if eps >= ceiling {
                // Unreachable: the image of the shortest connection is a
                // witness at eps = ceiling.
                return Err(Error::NumericalDegeneracy(
                    "certified pullback failed to find a witness".into(),
                ));
            }
            eps = (2.0 * eps).min(ceiling);
        }
    } else {
        let (k1, t_len, k2) = a.kak(cfg.tol.det)?;
        let _ = k1; // lengths are rotation-invariant
        let mut y = tri::delaunay(&crate::surface::apply_matrix(&Mat2::rotation(k2), s)?, cfg)?;
        let steps = (t_len / 0.5).ceil() as usize;
        let dt = t_len / steps as f64;
        for _ in 0..steps {
            y.apply_matrix(&Mat2::diag_flow(dt));
            tri::delaunayize(&mut y, cfg)?;
        }
        injectivity_radius_tri(&y, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface;
    use approx::assert_abs_diff_eq;

    fn cfg() -> Config {
        Config::default()
    }

    fn hol_multiset(scs: &[SaddleConnection]) -> Vec<(i64, i64)> {
        let mut v: Vec<(i64, i64)> = scs
            .iter()
            .map(|sc| {
                (
                    (sc.hol[0] * 1e9).round() as i64,
                    (sc.hol[1] * 1e9).round() as i64,
                )
            })
            .collect();
        v.sort();
        v
    }

    /// Brute-force oracle for the marked square torus: oriented saddle
    /// connections are exactly the primitive integer vectors.
    fn torus_primitive_oracle(l: f64) -> Vec<(i64, i64)> {
        let mut v = Vec::new();
        let n = l.ceil() as i64 + 1;
        for x in -n..=n {
            for y in -n..=n {
                if (x, y) == (0, 0) {
                    continue;
                }
                let g = gcd(x.abs(), y.abs());
                if g != 1 {
                    continue;
                }
                if ((x * x + y * y) as f64).sqrt() <= l {
                    v.push((x * 1_000_000_000, y * 1_000_000_000));
                }
            }
        }
        v.sort();
        v
    }

    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }

    #[test]
    fn torus_connections_up_to_two_are_the_eight_primitive_vectors() {
        let s = surface::build_square_torus(true);
        let scs = enumerate_surface(&s, 2.0, &cfg()).unwrap();
        assert_eq!(scs.len(), 8);
        assert_eq!(hol_multiset(&scs), torus_primitive_oracle(2.0));
    }

    #[test]
    fn torus_connections_match_primitive_oracle_at_larger_cutoffs() {
        let s = surface::build_square_torus(true);
        for l in [1.0, 2.5, 4.0, 6.0] {
            let scs = enumerate_surface(&s, l, &cfg()).unwrap();
            assert_eq!(hol_multiset(&scs), torus_primitive_oracle(l), "L={l}");
        }
    }

    #[test]
    fn origami_connections_at_one_are_the_twelve_unit_edges() {
        // Three squares, one 6π vertex: each of the six unit edge classes
        // of the square tiling yields two oriented connections.
        let s = surface::build_origami(&[1, 0, 2], &[2, 1, 0]).unwrap();
        let scs = enumerate_surface(&s, 1.0, &cfg()).unwrap();
        assert_eq!(scs.len(), 12);
        let ms = hol_multiset(&scs);
        let unit = 1_000_000_000i64;
        let mut expect = Vec::new();
        for _ in 0..3 {
            expect.push((unit, 0));
            expect.push((-unit, 0));
            expect.push((0, unit));
            expect.push((0, -unit));
        }
        expect.sort();
        assert_eq!(ms, expect);
    }

    #[test]
    fn enumeration_is_monotone_in_cutoff() {
        let s = surface::build_lshape(2.0, 2.0).unwrap();
        let mut prev_count = 0;
        for l in [0.5, 1.0, 1.5, 2.0, 3.0] {
            let n = enumerate_surface(&s, l, &cfg()).unwrap().len();
            assert!(n >= prev_count, "count dropped at L={l}");
            prev_count = n;
        }
        assert!(prev_count > 0);
    }

    #[test]
    fn enumeration_is_stable_under_retriangulation() {
        // The octagon's Delaunay triangulation is maximally ambiguous (all
        // vertices cocircular); enumeration must not depend on the variant.
        let s = surface::build_regular_octagon();
        let t1 = tri::delaunay(&s, &cfg()).unwrap();
        let mut t2 = t1.clone();
        // Flip a degenerate edge to get a different valid triangulation.
        let flippable = (0..t2.vecs.len() as u32)
            .find(|&h| {
                h < t2.opp[h as usize]
                    && t2.opp[h as usize] / 3 != h / 3
                    && tri::delaunay_margin(&t2, h).abs() <= cfg().tol.cocircular
                    && tri::flip(&mut t2.clone(), h).is_ok()
            })
            .expect("octagon should have a flippable cocircular edge");
        tri::flip(&mut t2, flippable).unwrap();
        t2.rebuild_vertices();
        let e1 = enumerate(&t1, 3.0, &cfg()).unwrap();
        let e2 = enumerate(&t2, 3.0, &cfg()).unwrap();
        assert_eq!(hol_multiset(&e1), hol_multiset(&e2));
        assert!(!e1.is_empty());
    }

    #[test]
    fn below_injectivity_radius_enumeration_is_empty() {
        for s in [
            surface::build_square_torus(true),
            surface::build_lshape(2.0, 2.0).unwrap(),
            surface::build_regular_octagon(),
        ] {
            let scs = enumerate_surface(&s, 0.5, &cfg()).unwrap();
            assert!(scs.is_empty(), "{:?}", s.label);
        }
    }

    #[test]
    fn injectivity_radius_oracles() {
        let cfg = cfg();
        assert_abs_diff_eq!(
            injectivity_radius(&surface::build_square_torus(true), &cfg).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            injectivity_radius(&surface::build_lshape(2.0, 2.0).unwrap(), &cfg).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            injectivity_radius(&surface::build_regular_octagon(), &cfg).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // L(1.5, 3.5): shortest edge is the horizontal stub of length 0.5.
        assert_abs_diff_eq!(
            injectivity_radius(&surface::build_lshape(1.5, 3.5).unwrap(), &cfg).unwrap(),
            0.5,
            epsilon = 1e-12
        );
    }

    #[test]
    fn unmarked_torus_has_no_singularity() {
        let s = surface::build_square_torus(false);
        assert!(matches!(
            injectivity_radius(&s, &cfg()),
            Err(Error::NoSingularity)
        ));
        assert!(matches!(
            enumerate_surface(&s, 1.0, &cfg()),
            Err(Error::NoSingularity)
        ));
    }

    #[test]
    fn tiny_budget_reports_exhaustion() {
        let s = surface::build_regular_octagon();
        let mut small = cfg();
        small.budgets.enumeration = 10;
        assert!(matches!(
            enumerate_surface(&s, 4.0, &small),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn crossing_sequences_redevelop_to_the_stored_holonomy() {
        let s = surface::build_lshape(2.0, 2.5).unwrap();
        let t = tri::delaunay(&s, &cfg()).unwrap();
        let scs = enumerate(&t, 4.0, &cfg()).unwrap();
        assert!(scs.len() > 20);
        for sc in &scs {
            let re = redevelop(&t, sc).unwrap();
            assert!(
                geom::approx_eq(re, sc.hol, 1e-9),
                "redevelopment drifted: {:?} vs {:?}",
                re,
                sc.hol
            );
        }
    }

    #[test]
    fn length_function_matches_sheared_holonomy() {
        let sc = SaddleConnection {
            hol: [3.0, 4.0],
            length: 5.0,
            start_class: 0,
            end_class: 0,
            start_half_edge: 0,
            crossings: vec![],
            class: vec![],
        };
        assert_abs_diff_eq!(length_function(&sc, 0.0), 5.0, epsilon = 1e-15);
        // u_1 · (3,4) = (7,4)
        assert_abs_diff_eq!(length_function(&sc, 1.0), (49.0f64 + 16.0).sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn injectivity_along_identity_and_diagonal_oracles() {
        let cfg = cfg();
        let s = surface::build_square_torus(true);
        assert_abs_diff_eq!(
            injectivity_radius_along(&s, &crate::sl2::IDENTITY, &cfg).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        // diag(e, 1/e) shrinks the vertical unit connection to 1/e.
        let a = Mat2::diag_flow(1.0);
        assert_abs_diff_eq!(
            injectivity_radius_along(&s, &a, &cfg).unwrap(),
            (-1.0f64).exp(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn injectivity_along_agrees_with_direct_computation() {
        let cfg = cfg();
        let s = surface::build_lshape(2.0, 2.5).unwrap();
        for t in [0.5, 1.5, 2.5] {
            let a = Mat2::diag_flow(t).mul(&Mat2::upper(0.3));
            let fast = injectivity_radius_along(&s, &a, &cfg).unwrap();
            let direct =
                injectivity_radius(&surface::apply_matrix(&a, &s).unwrap(), &cfg).unwrap();
            assert_abs_diff_eq!(fast, direct, epsilon = 1e-9);
        }
    }

    #[test]
    fn flow_conditioned_branch_matches_the_torus_formula() {
        let cfg = cfg();
        let s = surface::build_square_torus(true);
        // log sigma = 3.5 > 3 forces the incremental branch.
        let a = Mat2::diag_flow(3.5);
        assert_abs_diff_eq!(
            injectivity_radius_along(&s, &a, &cfg).unwrap(),
            (-3.5f64).exp(),
            epsilon = 1e-10
        );
        // A composite with rotations on both sides: compare against the
        // brute-force minimum of |M v| over primitive lattice vectors.
        let m = Mat2::rotation(0.7).mul(&Mat2::diag_flow(4.0)).mul(&Mat2::rotation(-0.3));
        let mut best = f64::INFINITY;
        for x in -200i64..=200 {
            for y in -200i64..=200 {
                if (x, y) == (0, 0) || gcd(x.abs(), y.abs()) != 1 {
                    continue;
                }
                best = best.min(geom::norm(m.apply([x as f64, y as f64])));
            }
        }
        assert_abs_diff_eq!(
            injectivity_radius_along(&s, &m, &cfg).unwrap(),
            best,
            epsilon = 1e-9
        );
    }

    #[test]
    fn pullback_and_flow_branches_agree_near_the_crossover() {
        let cfg = cfg();
        let s = surface::build_origami(&[1, 0, 2], &[2, 1, 0]).unwrap();
        let below = Mat2::diag_flow(2.9);
        let above = Mat2::diag_flow(3.1);
        let r_below = injectivity_radius_along(&s, &below, &cfg).unwrap();
        let r_above = injectivity_radius_along(&s, &above, &cfg).unwrap();
        assert_abs_diff_eq!(r_below, (-2.9f64).exp(), epsilon = 1e-9);
        assert_abs_diff_eq!(r_above, (-3.1f64).exp(), epsilon = 1e-9);
    }
}
