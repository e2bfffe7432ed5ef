//! Period charts: integer homology coordinates on a triangulation, the
//! symplectic intersection form, the AGY-style sup norm on deformations,
//! and the affine exponential map in period coordinates.
//!
//! Edges of a triangulation span the first homology relative to the marked
//! points; the triangle closure relations cut the span down to rank
//! 2g + V - 1. A chart fixes a basis: the complement of a maximal dual
//! spanning tree, built greedily from the longest edges, so the basis is
//! made of short edges and the eliminated ones are the long interior
//! diagonals. Every half-edge then carries an integer coordinate vector,
//! the flip routine keeps those vectors consistent, and holonomy becomes
//! the linear map `class -> sum_i class_i * hol_i`.

use num_complex::Complex64;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geom::{self, V2};
use crate::saddle::{self, SaddleConnection};
use crate::sl2::Mat2;
use crate::surface::TranslationSurface;
use crate::tri::{self, next, Tri};

/// A triangulation with installed homology coordinates, the basis
/// holonomies (the surface's period point), and — on single-vertex
/// surfaces — the integer intersection form of the basis.
#[derive(Debug, Clone)]
pub struct PeriodChart {
    pub t: Tri,
    /// Representative half-edge of each basis class (the one with the
    /// smaller slot id).
    pub basis: Vec<u32>,
    /// Holonomy of each basis edge, horizontal part real.
    pub hol: Vec<Complex64>,
    /// Intersection numbers of the basis loops; `None` when the surface
    /// has more than one vertex class (the basis then contains relative
    /// classes and the form is not defined on all of it).
    pub omega: Option<Vec<Vec<i64>>>,
}

impl PeriodChart {
    pub fn rank(&self) -> usize {
        self.basis.len()
    }

    /// The period point itself: the chart's image of the surface.
    pub fn period_point(&self) -> Vec<Complex64> {
        self.hol.clone()
    }
}

fn complex(v: V2) -> Complex64 {
    Complex64::new(v[0], v[1])
}

struct DisjointSet(Vec<u32>);

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet((0..n as u32).collect())
    }
    fn find(&mut self, x: u32) -> u32 {
        if self.0[x as usize] != x {
            let root = self.find(self.0[x as usize]);
            self.0[x as usize] = root;
        }
        self.0[x as usize]
    }
    fn union(&mut self, a: u32, b: u32) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra as usize] = rb;
        true
    }
}

pub fn period_chart(s: &TranslationSurface, cfg: &Config) -> Result<PeriodChart> {
    period_chart_tri(tri::delaunay(s, cfg)?)
}

/// Install a homology basis on an owned triangulation.
pub fn period_chart_tri(mut t: Tri) -> Result<PeriodChart> {
    let n = t.vecs.len();
    let faces = t.triangle_count();
    if n == 0 {
        return Err(Error::ChartConstruction("empty triangulation".into()));
    }

    // Maximal dual spanning tree, longest edges first: eliminating the
    // long diagonals leaves the short edges as the basis.
    let mut edges: Vec<u32> = (0..n as u32).filter(|&h| h < t.opp[h as usize]).collect();
    edges.sort_by(|&a, &b| {
        geom::norm(t.vecs[b as usize])
            .total_cmp(&geom::norm(t.vecs[a as usize]))
            .then(a.cmp(&b))
    });
    let mut dsu = DisjointSet::new(faces);
    let mut in_tree = vec![false; n];
    for &h in &edges {
        let g = t.opp[h as usize];
        if h / 3 == g / 3 {
            continue; // both sides on one triangle: never a dual-tree edge
        }
        if dsu.union(h / 3, g / 3) {
            in_tree[h as usize] = true;
            in_tree[g as usize] = true;
        }
    }
    let root0 = dsu.find(0);
    if (0..faces as u32).any(|f| dsu.find(f) != root0) {
        return Err(Error::ChartConstruction(
            "triangulation is not connected".into(),
        ));
    }

    let basis: Vec<u32> = (0..n as u32)
        .filter(|&h| h < t.opp[h as usize] && !in_tree[h as usize])
        .collect();
    let rank = basis.len();

    // Rank must agree with 2g + V - 1 computed from the cone angles.
    let v_count = t.vert_angle.len() as i64;
    let excess: i64 = t.vert_angle.iter().map(|&a| a - 2).sum();
    if excess % 4 != 0 {
        return Err(Error::ChartConstruction(format!(
            "cone angles sum to an impossible excess {excess}"
        )));
    }
    let genus = 1 + excess / 4;
    if rank as i64 != 2 * genus + v_count - 1 {
        return Err(Error::ChartConstruction(format!(
            "basis rank {rank} disagrees with 2g+V-1 = {}",
            2 * genus + v_count - 1
        )));
    }

    // Integer coordinates: basis edges get unit vectors, tree edges are
    // peeled off the dual tree leaf by leaf using triangle closure.
    let mut class: Vec<Option<Vec<i64>>> = vec![None; n];
    for (i, &h) in basis.iter().enumerate() {
        let mut e = vec![0i64; rank];
        e[i] = 1;
        class[h as usize] = Some(e.clone());
        class[t.opp[h as usize] as usize] = Some(e.iter().map(|x| -x).collect());
    }
    let mut unresolved: Vec<u32> = (0..faces)
        .map(|f| (0..3).filter(|k| class[3 * f + k].is_none()).count() as u32)
        .collect();
    let mut queue: Vec<u32> = (0..faces as u32).filter(|&f| unresolved[f as usize] == 1).collect();
    let mut head = 0;
    while head < queue.len() {
        let f = queue[head] as usize;
        head += 1;
        if unresolved[f] != 1 {
            continue;
        }
        let slot = (0..3)
            .map(|k| (3 * f + k) as u32)
            .find(|&x| class[x as usize].is_none())
            .expect("one unresolved slot");
        let mut c = vec![0i64; rank];
        for k in 0..3 {
            let x = 3 * f + k;
            if x as u32 != slot {
                let cx = class[x].as_ref().expect("resolved");
                for (ci, xi) in c.iter_mut().zip(cx) {
                    *ci -= xi;
                }
            }
        }
        class[t.opp[slot as usize] as usize] = Some(c.iter().map(|x| -x).collect());
        class[slot as usize] = Some(c);
        unresolved[f] -= 1;
        let g = (t.opp[slot as usize] / 3) as usize;
        unresolved[g] -= 1;
        if unresolved[g] == 1 {
            queue.push(g as u32);
        }
    }
    if unresolved.iter().any(|&u| u != 0) {
        return Err(Error::ChartConstruction(
            "leaf elimination did not exhaust the dual tree".into(),
        ));
    }
    t.class = class.into_iter().map(|c| c.expect("resolved")).collect();

    let hol: Vec<Complex64> = basis.iter().map(|&h| complex(t.vecs[h as usize])).collect();
    let omega = if t.vert_angle.len() == 1 {
        Some(intersection_form(&t, &basis, &in_tree)?)
    } else {
        None
    };
    Ok(PeriodChart { t, basis, hol, omega })
}

/// Intersection numbers of the basis loops on a single-vertex surface.
///
/// Gluing the triangles along the dual tree flattens the surface to one
/// polygon whose boundary word spells each basis edge twice, once per
/// orientation. Two loops intersect (exactly once, at the vertex) when
/// their chords in that cyclic word interleave; the sign is positive when
/// the other loop's forward occurrence sits between this loop's forward
/// and backward occurrences.
fn intersection_form(t: &Tri, basis: &[u32], in_tree: &[bool]) -> Result<Vec<Vec<i64>>> {
    let n = t.vecs.len();
    let boundary_len = basis.len() * 2;
    let start = (0..n as u32)
        .find(|&h| !in_tree[h as usize])
        .ok_or_else(|| Error::ChartConstruction("no boundary edges".into()))?;
    let mut order: Vec<u32> = Vec::with_capacity(boundary_len);
    let mut h = start;
    loop {
        order.push(h);
        let mut e = next(h);
        while in_tree[e as usize] {
            e = next(t.opp[e as usize]);
        }
        h = e;
        if h == start {
            break;
        }
        if order.len() > boundary_len {
            return Err(Error::ChartConstruction(
                "boundary walk of the glued polygon did not close".into(),
            ));
        }
    }
    if order.len() != boundary_len {
        return Err(Error::ChartConstruction(format!(
            "boundary walk visited {} of {} edges",
            order.len(),
            boundary_len
        )));
    }
    let pos_of = |x: u32| -> usize {
        order
            .iter()
            .position(|&y| y == x)
            .expect("boundary edge occurs in the walk")
    };
    let m = basis.len();
    let mut omega = vec![vec![0i64; m]; m];
    for i in 0..m {
        let a = pos_of(basis[i]);
        let a_back = pos_of(t.opp[basis[i] as usize]);
        let arc = |p: usize| -> bool {
            // strictly inside the forward arc from a to a_back
            let rel = (p + boundary_len - a) % boundary_len;
            rel > 0 && rel < (a_back + boundary_len - a) % boundary_len
        };
        for j in 0..m {
            if i == j {
                continue;
            }
            let b = pos_of(basis[j]);
            let b_back = pos_of(t.opp[basis[j] as usize]);
            omega[i][j] = match (arc(b), arc(b_back)) {
                (true, false) => 1,
                (false, true) => -1,
                _ => 0,
            };
        }
    }
    Ok(omega)
}

/// The hermitian-symplectic pairing (i/2) * Omega(v, conj w); its value on
/// the period point against itself is the surface area.
pub fn symplectic_pairing(
    chart: &PeriodChart,
    v: &[Complex64],
    w: &[Complex64],
) -> Result<Complex64> {
    let omega = chart.omega.as_ref().ok_or_else(|| {
        Error::ChartConstruction(
            "intersection form requires a single vertex class".into(),
        )
    })?;
    if v.len() != chart.rank() || w.len() != chart.rank() {
        return Err(Error::invalid_parameter(
            "pairing arguments must live in the chart's period space",
        ));
    }
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, row) in omega.iter().enumerate() {
        for (j, &oij) in row.iter().enumerate() {
            if oij != 0 {
                acc += (oij as f64) * v[i] * w[j].conj();
            }
        }
    }
    Ok(Complex64::new(0.0, 0.5) * acc)
}

/// Surface area recovered from the period point.
pub fn chart_area(chart: &PeriodChart) -> Result<f64> {
    Ok(symplectic_pairing(chart, &chart.hol, &chart.hol)?.re)
}

/// Remove the component of `v` along the period point: the result pairs to
/// zero against the surface's own periods ("balanced" deformation).
pub fn balanced_projection(chart: &PeriodChart, v: &[Complex64]) -> Result<Vec<Complex64>> {
    let area = chart_area(chart)?;
    if area <= 0.0 {
        return Err(Error::DegenerateForm(format!(
            "nonpositive area {area} from the intersection form"
        )));
    }
    let coef = symplectic_pairing(chart, v, &chart.hol)? / area;
    Ok(v.iter()
        .zip(&chart.hol)
        .map(|(vi, pi)| vi - coef * pi)
        .collect())
}

/// Value of a cohomology vector on a saddle connection's homology class.
pub fn evaluate_on_saddle(
    chart: &PeriodChart,
    sc: &SaddleConnection,
    v: &[Complex64],
) -> Result<Complex64> {
    if sc.class.len() != chart.rank() || v.len() != chart.rank() {
        return Err(Error::invalid_parameter(
            "connection was not enumerated against this chart",
        ));
    }
    Ok(sc
        .class
        .iter()
        .zip(v)
        .map(|(&c, vi)| (c as f64) * vi)
        .sum())
}

/// Sup over saddle connections up to `l_cut` of |v(gamma)| / |hol(gamma)|:
/// the chart's deformation norm. The cutoff must dominate twice the
/// injectivity radius so the short systoles — where the sup concentrates —
/// are all inspected.
pub fn agy_norm_cut(
    chart: &PeriodChart,
    v: &[Complex64],
    l_cut: f64,
    cfg: &Config,
) -> Result<f64> {
    let inj = saddle::injectivity_radius_tri(&chart.t, cfg)?;
    if l_cut < 2.0 * inj {
        return Err(Error::invalid_parameter(format!(
            "norm cutoff {l_cut} is below twice the injectivity radius {inj}"
        )));
    }
    let mut sup: f64 = 0.0;
    for sc in saddle::enumerate(&chart.t, l_cut, cfg)? {
        let num = evaluate_on_saddle(chart, &sc, v)?.norm();
        if sc.length > 0.0 {
            sup = sup.max(num / sc.length);
        }
    }
    Ok(sup)
}

/// `agy_norm_cut` with the default cutoff max(4, 8 * inj).
pub fn agy_norm(chart: &PeriodChart, v: &[Complex64], cfg: &Config) -> Result<f64> {
    let inj = saddle::injectivity_radius_tri(&chart.t, cfg)?;
    agy_norm_cut(chart, v, (8.0 * inj).max(4.0), cfg)
}

/// Affine exponential: add `v`'s value to every edge holonomy. Requires
/// `v` comfortably inside the chart ball (every edge moved by less than
/// 1/c1 of its length) and every triangle to stay positively oriented;
/// the deformed triangulation is re-Delaunayized with its coordinates
/// transported through the flips.
pub fn exp_map(chart: &PeriodChart, v: &[Complex64], cfg: &Config) -> Result<Tri> {
    if v.len() != chart.rank() {
        return Err(Error::invalid_parameter(
            "deformation vector has the wrong rank for this chart",
        ));
    }
    let t = &chart.t;
    let value = |h: usize| -> Complex64 {
        t.class[h]
            .iter()
            .zip(v)
            .map(|(&c, vi)| (c as f64) * vi)
            .sum()
    };
    let mut out = t.clone();
    for h in 0..t.vecs.len() {
        let dv = value(h);
        let len = geom::norm(t.vecs[h]);
        if dv.norm() * chart_ball_factor() >= len {
            return Err(Error::ExpDomain(format!(
                "edge {h} of length {len} would move by {}",
                dv.norm()
            )));
        }
        out.vecs[h] = geom::add(t.vecs[h], [dv.re, dv.im]);
    }
    for f in 0..out.triangle_count() {
        if geom::cross(out.vecs[3 * f], out.vecs[3 * f + 1]) <= 0.0 {
            return Err(Error::ExpDomain(format!(
                "triangle {f} degenerates under the deformation"
            )));
        }
    }
    out.rebuild_vertices();
    tri::delaunayize(&mut out, cfg)?;
    Ok(out)
}

/// The chart-ball margin c1 from the default constants. The exponential
/// map is trusted only while every edge moves by less than len/c1.
fn chart_ball_factor() -> f64 {
    Config::default().constants.c1
}

/// Apply a unimodular matrix to a chart-carrying triangulation and restore
/// Delaunayness; the homology coordinates ride along through the flips.
pub fn pushforward(m: &Mat2, t: &Tri, cfg: &Config) -> Result<Tri> {
    if (m.det() - 1.0).abs() > cfg.tol.det {
        return Err(Error::InvalidMatrix(format!(
            "pushforward requires determinant 1, got {}",
            m.det()
        )));
    }
    let mut out = t.clone();
    out.apply_matrix(m);
    tri::delaunayize(&mut out, cfg)?;
    Ok(out)
}

/// How a matrix acts on a period point: coordinatewise as a real-linear
/// map of holonomy vectors.
pub fn transported_periods(m: &Mat2, p: &[Complex64]) -> Vec<Complex64> {
    p.iter()
        .map(|z| complex(m.apply([z.re, z.im])))
        .collect()
}

/// Split a deformation into its unstable (real) and stable (imaginary)
/// parts: the two halves scale by e^t and e^-t under the diagonal flow.
pub fn stable_unstable_split(v: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    (v.iter().map(|z| z.re).collect(), v.iter().map(|z| z.im).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surface::{
        area, build_lshape, build_origami, build_regular_octagon, build_square_torus,
    };
    use rand::{Rng, SeedableRng};

    fn cfg() -> Config {
        Config::default()
    }

    fn fixtures() -> Vec<TranslationSurface> {
        vec![
            build_square_torus(true),
            build_lshape(2.0, 2.0).unwrap(),
            build_lshape(1.5, 3.5).unwrap(),
            build_regular_octagon(),
            build_origami(&[1, 0, 2], &[2, 1, 0]).unwrap(),
        ]
    }

    fn det_i64(m: &[Vec<i64>]) -> i64 {
        let n = m.len();
        if n == 1 {
            return m[0][0];
        }
        let mut acc = 0i64;
        for k in 0..n {
            if m[0][k] == 0 {
                continue;
            }
            let minor: Vec<Vec<i64>> = (1..n)
                .map(|r| (0..n).filter(|&c| c != k).map(|c| m[r][c]).collect())
                .collect();
            let sign = if k % 2 == 0 { 1 } else { -1 };
            acc += sign * m[0][k] * det_i64(&minor);
        }
        acc
    }

    #[test]
    fn chart_rank_matches_the_stratum() {
        let c = cfg();
        for s in fixtures() {
            let chart = period_chart(&s, &c).unwrap();
            let expected = if s.label.as_deref().is_some_and(|l| l.contains("torus")) {
                2
            } else {
                4
            };
            assert_eq!(chart.rank(), expected, "{:?}", s.label);
            let omega = chart.omega.as_ref().expect("single vertex class");
            for i in 0..chart.rank() {
                assert_eq!(omega[i][i], 0);
                for j in 0..chart.rank() {
                    assert_eq!(omega[i][j], -omega[j][i]);
                    assert!(omega[i][j].abs() <= 1);
                }
            }
            // The basis generates integral homology, so the form must be
            // unimodular.
            assert_eq!(det_i64(omega).abs(), 1, "{:?}", s.label);
        }
    }

    #[test]
    fn torus_periods_are_the_lattice_generators() {
        let chart = period_chart(&build_square_torus(true), &cfg()).unwrap();
        // Kruskal eliminates the long diagonal, leaving the two axis edges
        // (up to the orientation of each representative).
        let mut mags: Vec<[f64; 2]> = chart
            .hol
            .iter()
            .map(|z| [z.re.abs(), z.im.abs()])
            .collect();
        mags.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert!(geom::approx_eq(mags[0], [0.0, 1.0], 1e-12));
        assert!(geom::approx_eq(mags[1], [1.0, 0.0], 1e-12));
    }

    #[test]
    fn holonomies_factor_through_the_class_coordinates() {
        let c = cfg();
        for s in fixtures() {
            let chart = period_chart(&s, &c).unwrap();
            for h in 0..chart.t.vecs.len() {
                let z: Complex64 = chart.t.class[h]
                    .iter()
                    .zip(&chart.hol)
                    .map(|(&k, p)| (k as f64) * p)
                    .sum();
                assert!(
                    (z - complex(chart.t.vecs[h])).norm() < 1e-9,
                    "edge {h} of {:?}",
                    s.label
                );
            }
            // Enumerated connections accumulate classes along their walk;
            // those must reproduce the holonomy too.
            for sc in saddle::enumerate(&chart.t, 3.0, &c).unwrap() {
                let z = evaluate_on_saddle(&chart, &sc, &chart.hol).unwrap();
                assert!(
                    (z - complex(sc.hol)).norm() < 1e-9,
                    "connection {:?} of {:?}",
                    sc.hol,
                    s.label
                );
            }
        }
    }

    #[test]
    fn pairing_of_the_period_point_is_the_area() {
        let c = cfg();
        for s in fixtures() {
            let chart = period_chart(&s, &c).unwrap();
            let p = symplectic_pairing(&chart, &chart.hol, &chart.hol).unwrap();
            assert!(
                (p.re - area(&s)).abs() < 1e-9 * area(&s),
                "{:?}: {} vs {}",
                s.label,
                p.re,
                area(&s)
            );
            assert!(p.im.abs() < 1e-9);
        }
    }

    #[test]
    fn balanced_projection_is_symplectically_orthogonal() {
        let c = cfg();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for s in fixtures() {
            let chart = period_chart(&s, &c).unwrap();
            for _ in 0..20 {
                let v: Vec<Complex64> = (0..chart.rank())
                    .map(|_| Complex64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)))
                    .collect();
                let b = balanced_projection(&chart, &v).unwrap();
                let p = symplectic_pairing(&chart, &b, &chart.hol).unwrap();
                assert!(p.norm() < 1e-9, "{:?}", s.label);
            }
            let self_proj = balanced_projection(&chart, &chart.hol).unwrap();
            assert!(self_proj.iter().all(|z| z.norm() < 1e-9));
        }
    }

    #[test]
    fn tautological_deformations_have_unit_agy_norm() {
        let c = cfg();
        for s in fixtures() {
            let chart = period_chart(&s, &c).unwrap();
            let p = chart.period_point();
            let rotated: Vec<Complex64> = p.iter().map(|z| z * Complex64::new(0.0, 1.0)).collect();
            let scaled: Vec<Complex64> = p.iter().map(|z| z * 0.3).collect();
            assert!((agy_norm(&chart, &p, &c).unwrap() - 1.0).abs() < 1e-9);
            assert!((agy_norm(&chart, &rotated, &c).unwrap() - 1.0).abs() < 1e-9);
            assert!((agy_norm(&chart, &scaled, &c).unwrap() - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn exp_map_scales_the_surface_along_its_period_point() {
        let c = cfg();
        for s in [build_lshape(1.5, 3.5).unwrap(), build_regular_octagon()] {
            let chart = period_chart(&s, &c).unwrap();
            let v: Vec<Complex64> = chart.hol.iter().map(|z| z * 0.2).collect();
            let out = exp_map(&chart, &v, &c).unwrap();
            // Uniform scaling keeps every Delaunay margin, so no flips can
            // occur and slots line up with the original triangulation.
            for h in 0..out.vecs.len() {
                assert!(geom::approx_eq(
                    out.vecs[h],
                    geom::scale(chart.t.vecs[h], 1.2),
                    1e-12
                ));
            }
            let zero = vec![Complex64::new(0.0, 0.0); chart.rank()];
            let same = exp_map(&chart, &zero, &c).unwrap();
            assert!((0..same.vecs.len())
                .all(|h| geom::approx_eq(same.vecs[h], chart.t.vecs[h], 1e-15)));

            let big: Vec<Complex64> = chart.hol.iter().map(|z| z * 0.6).collect();
            assert!(matches!(exp_map(&chart, &big, &c), Err(Error::ExpDomain(_))));
            assert!(exp_map(&chart, &v[..chart.rank() - 1], &c).is_err());
        }
    }

    #[test]
    fn pushforward_transports_periods_by_the_matrix() {
        let c = cfg();
        let m = Mat2::new(1.3, 0.7, 0.4, (1.0 + 0.7 * 0.4) / 1.3);
        for s in fixtures() {
            let chart = period_chart(&s, &c).unwrap();
            let pushed = pushforward(&m, &chart.t, &c).unwrap();
            let moved = transported_periods(&m, &chart.hol);
            for h in 0..pushed.vecs.len() {
                let z: Complex64 = pushed.class[h]
                    .iter()
                    .zip(&moved)
                    .map(|(&k, p)| (k as f64) * p)
                    .sum();
                assert!(
                    (z - complex(pushed.vecs[h])).norm() < 1e-9,
                    "edge {h} of {:?} after pushforward",
                    s.label
                );
            }
            assert!(tri::is_delaunay(&pushed, &c));
            assert!((pushed.area() - area(&s)).abs() < 1e-9 * area(&s));
        }
    }
}
