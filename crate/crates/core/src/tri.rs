//! Half-edge triangulations of translation surfaces.
//!
//! Half-edges are numbered so that triangle `t` owns slots `3t`, `3t+1`,
//! `3t+2` in counterclockwise order; `vecs[h]` is the edge vector of
//! half-edge `h`, `opp[h]` its oppositely-oriented twin on the neighbouring
//! triangle. Each half-edge optionally carries integer coordinates of its
//! relative-homology class (`class[opp[h]] = -class[h]`, and the three
//! classes of a triangle sum to zero), which Delaunay flips preserve.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geom::{self, V2};
use crate::sl2::Mat2;
use crate::surface::{validate, TranslationSurface};

#[derive(Debug, Clone)]
pub struct Tri {
    pub vecs: Vec<V2>,
    pub opp: Vec<u32>,
    /// Integer homology coordinates per half-edge; empty until a period
    /// chart installs them.
    pub class: Vec<Vec<i64>>,
    /// Vertex class id at the tail of each half-edge.
    pub vert: Vec<u32>,
    /// Cone angle (multiple of π) per vertex class.
    pub vert_angle: Vec<i64>,
    /// Whether regular (2π) vertices count as marked points.
    pub mark_regular: bool,
}

pub fn next(h: u32) -> u32 {
    h - h % 3 + (h + 1) % 3
}

pub fn prev(h: u32) -> u32 {
    h - h % 3 + (h + 2) % 3
}

impl Tri {
    pub fn triangle_count(&self) -> usize {
        self.vecs.len() / 3
    }

    /// Counterclockwise step around the vertex at the tail of `h`.
    pub fn around_vertex(&self, h: u32) -> u32 {
        self.opp[prev(h) as usize]
    }

    pub fn apply_matrix(&mut self, m: &Mat2) {
        for v in &mut self.vecs {
            *v = m.apply(*v);
        }
    }

    /// Recompute `vert` and `vert_angle` from the current combinatorics.
    pub fn rebuild_vertices(&mut self) {
        let n = self.vecs.len();
        self.vert = vec![u32::MAX; n];
        self.vert_angle.clear();
        for start in 0..n as u32 {
            if self.vert[start as usize] != u32::MAX {
                continue;
            }
            let id = self.vert_angle.len() as u32;
            let mut angle = 0.0;
            let mut h = start;
            loop {
                self.vert[h as usize] = id;
                let out = self.vecs[h as usize];
                let inc = self.vecs[prev(h) as usize];
                angle += geom::angle_ccw(out, geom::neg(inc));
                h = self.around_vertex(h);
                if h == start {
                    break;
                }
            }
            self.vert_angle.push((angle / std::f64::consts::PI).round() as i64);
        }
    }

    /// True when the tail vertex of `h` is a marked point (singular, or
    /// regular with regular marking enabled).
    pub fn is_marked(&self, h: u32) -> bool {
        self.mark_regular || self.vert_angle[self.vert[h as usize] as usize] != 2
    }

    pub fn any_marked(&self) -> bool {
        (0..self.vecs.len() as u32).any(|h| self.is_marked(h))
    }

    /// Structural invariants: involution, opposite vectors, closure,
    /// positive orientation. Intended for tests and debug checks.
    pub fn check_invariants(&self, tol: f64) -> Result<()> {
        let n = self.vecs.len();
        if n % 3 != 0 || self.opp.len() != n {
            return Err(Error::MalformedSurface("ragged triangulation".into()));
        }
        for h in 0..n {
            let o = self.opp[h] as usize;
            if o >= n || o == h || self.opp[o] as usize != h {
                return Err(Error::MalformedSurface(format!(
                    "opp is not a fixed-point-free involution at {h}"
                )));
            }
            if !geom::approx_eq(self.vecs[h], geom::neg(self.vecs[o]), tol) {
                return Err(Error::MalformedSurface(format!(
                    "glued half-edges {h},{o} are not opposite"
                )));
            }
        }
        for t in 0..n / 3 {
            let (a, b, c) = (self.vecs[3 * t], self.vecs[3 * t + 1], self.vecs[3 * t + 2]);
            let sum = geom::add(geom::add(a, b), c);
            if geom::norm(sum) > tol {
                return Err(Error::MalformedSurface(format!(
                    "triangle {t} does not close (defect {:.3e})",
                    geom::norm(sum)
                )));
            }
            if geom::cross(a, b) <= 0.0 {
                return Err(Error::MalformedSurface(format!(
                    "triangle {t} is not positively oriented"
                )));
            }
        }
        if !self.class.is_empty() {
            for h in 0..n {
                let o = self.opp[h] as usize;
                let neg: Vec<i64> = self.class[o].iter().map(|x| -x).collect();
                if self.class[h] != neg {
                    return Err(Error::MalformedSurface(format!(
                        "homology classes of {h} and its twin do not negate"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        (0..self.triangle_count())
            .map(|t| 0.5 * geom::cross(self.vecs[3 * t], self.vecs[3 * t + 1]))
            .sum()
    }

    /// Present the triangulation as a translation surface (one triangle per
    /// polygon, gluings from `opp`).
    pub fn to_surface(&self) -> TranslationSurface {
        let polygons = (0..self.triangle_count())
            .map(|t| vec![self.vecs[3 * t], self.vecs[3 * t + 1], self.vecs[3 * t + 2]])
            .collect();
        let mut gluings = Vec::new();
        for h in 0..self.vecs.len() as u32 {
            let o = self.opp[h as usize];
            if h < o {
                gluings.push([
                    [(h / 3) as usize, (h % 3) as usize],
                    [(o / 3) as usize, (o % 3) as usize],
                ]);
            }
        }
        let mut s = TranslationSurface::new(polygons, gluings);
        s.mark_regular_vertices = self.mark_regular;
        s
    }
}

/// Ear-clipping triangulation of one simple, positively oriented polygon.
/// Returns triangles as index triples into the polygon's vertex list.
fn ear_clip(verts: &[V2]) -> Result<Vec<[usize; 3]>> {
    let n = verts.len();
    let mut ring: Vec<usize> = (0..n).collect();
    let mut tris = Vec::with_capacity(n - 2);
    let mut guard = 0usize;
    while ring.len() > 3 {
        let m = ring.len();
        let mut clipped = false;
        for i in 0..m {
            let ia = ring[(i + m - 1) % m];
            let ib = ring[i];
            let ic = ring[(i + 1) % m];
            let (a, b, c) = (verts[ia], verts[ib], verts[ic]);
            // Convex corner?
            if geom::cross(geom::sub(b, a), geom::sub(c, b)) <= 1e-14 {
                continue;
            }
            // No remaining vertex strictly inside the candidate ear.
            let mut blocked = false;
            for &j in &ring {
                if j == ia || j == ib || j == ic {
                    continue;
                }
                let p = verts[j];
                let s1 = geom::cross(geom::sub(b, a), geom::sub(p, a));
                let s2 = geom::cross(geom::sub(c, b), geom::sub(p, b));
                let s3 = geom::cross(geom::sub(a, c), geom::sub(p, c));
                if s1 >= -1e-14 && s2 >= -1e-14 && s3 >= -1e-14 {
                    blocked = true;
                    break;
                }
            }
            if blocked {
                continue;
            }
            tris.push([ia, ib, ic]);
            ring.remove(i);
            clipped = true;
            break;
        }
        if !clipped {
            return Err(Error::NumericalDegeneracy(
                "ear clipping found no ear in a simple polygon".into(),
            ));
        }
        guard += 1;
        if guard > 4 * n {
            return Err(Error::NumericalDegeneracy("ear clipping did not terminate".into()));
        }
    }
    tris.push([ring[0], ring[1], ring[2]]);
    Ok(tris)
}

/// Triangulate a validated translation surface. The result satisfies the
/// half-edge invariants but is not yet Delaunay.
pub fn from_surface(s: &TranslationSurface) -> Result<Tri> {
    let report = validate(s)?;
    let mut vecs: Vec<V2> = Vec::new();
    let mut opp_pending: Vec<(usize, usize)> = Vec::new(); // (poly, edge) of boundary half-edges
    let mut boundary_slot: Vec<Vec<u32>> = s.polygons.iter().map(|p| vec![u32::MAX; p.len()]).collect();
    let mut diagonal_twin: Vec<(u32, u32)> = Vec::new();

    for (p, poly) in s.polygons.iter().enumerate() {
        let verts = s.polygon_vertices(p);
        let tris = ear_clip(&verts)?;
        // Map each directed diagonal (i -> j) to its half-edge slot so the
        // reverse diagonal can be wired to it.
        let mut diag_slots: std::collections::HashMap<(usize, usize), u32> =
            std::collections::HashMap::new();
        for tri in tris {
            let base = vecs.len() as u32;
            for k in 0..3 {
                let i = tri[k];
                let j = tri[(k + 1) % 3];
                vecs.push(geom::sub(verts[j], verts[i]));
                let slot = base + k as u32;
                // Boundary edge of the polygon iff j follows i cyclically.
                let n = poly.len();
                if (i + 1) % n == j {
                    boundary_slot[p][i] = slot;
                    opp_pending.push((p, i));
                } else if let Some(&twin) = diag_slots.get(&(j, i)) {
                    diagonal_twin.push((slot, twin));
                } else {
                    diag_slots.insert((i, j), slot);
                }
            }
        }
    }

    let n = vecs.len();
    let mut opp = vec![u32::MAX; n];
    for (a, b) in diagonal_twin {
        opp[a as usize] = b;
        opp[b as usize] = a;
    }
    for g in &s.gluings {
        let (pa, ea) = (g[0][0], g[0][1]);
        let (pb, eb) = (g[1][0], g[1][1]);
        let (sa, sb) = (boundary_slot[pa][ea], boundary_slot[pb][eb]);
        opp[sa as usize] = sb;
        opp[sb as usize] = sa;
    }
    if opp.iter().any(|&x| x == u32::MAX) {
        return Err(Error::MalformedSurface(
            "triangulation left an unglued half-edge".into(),
        ));
    }

    let mut tri = Tri {
        vecs,
        opp,
        class: Vec::new(),
        vert: Vec::new(),
        vert_angle: Vec::new(),
        mark_regular: s.mark_regular_vertices,
    };
    tri.rebuild_vertices();
    // Cross-check the corner walk against polygon-level validation.
    if tri.vert_angle.len() != report.vertex_classes.len() {
        return Err(Error::MalformedSurface(
            "triangulated vertex classes disagree with polygon walk".into(),
        ));
    }
    tri.check_invariants(1e-9)?;
    Ok(tri)
}

/// Developed quad around interior edge `h`: returns (p0, p1, p2, p3) where
/// the edge runs p0 -> p1, p2 is the apex of h's triangle and p3 the apex of
/// the twin triangle.
fn quad(tri: &Tri, h: u32) -> (V2, V2, V2, V2) {
    let g = tri.opp[h as usize];
    let p0 = [0.0, 0.0];
    let p1 = tri.vecs[h as usize];
    let p2 = geom::add(p1, tri.vecs[next(h) as usize]);
    let p3 = tri.vecs[next(g) as usize];
    (p0, p1, p2, p3)
}

fn quad_scale(p0: V2, p1: V2, p2: V2, p3: V2) -> f64 {
    let mut s: f64 = 0.0;
    for v in [p1, p2, p3, geom::sub(p2, p1), geom::sub(p3, p1), p0] {
        s = s.max(geom::norm(v));
    }
    s
}

/// Signed Delaunay margin of edge `h`: positive when the twin apex lies
/// strictly inside the circumcircle of h's triangle (edge must be flipped),
/// normalized by the fourth power of the quad scale.
pub fn delaunay_margin(tri: &Tri, h: u32) -> f64 {
    let (p0, p1, p2, p3) = quad(tri, h);
    let s = quad_scale(p0, p1, p2, p3);
    if s == 0.0 {
        return 0.0;
    }
    geom::incircle(p0, p1, p2, p3) / (s * s * s * s)
}

/// Flip interior edge `h`, replacing the diagonal p0p1 of the developed
/// quad with p3p2. Returns the new diagonal's half-edge id. The caller must
/// ensure the flip is geometrically admissible (both new triangles strictly
/// positive).
pub fn flip(tri: &mut Tri, h: u32) -> Result<u32> {
    let g = tri.opp[h as usize];
    if g / 3 == h / 3 {
        return Err(Error::NumericalDegeneracy(
            "cannot flip an edge whose sides lie on one triangle".into(),
        ));
    }
    let (nh, ph, ng, pg) = (next(h), prev(h), next(g), prev(g));
    let (p0, p1, p2, p3) = quad(tri, h);
    let d = geom::sub(p2, p3); // new diagonal, tail p3, head p2
    if geom::cross(d, geom::sub(p0, p2)) <= 0.0 || geom::cross(geom::neg(d), geom::sub(p1, p3)) <= 0.0 {
        return Err(Error::NumericalDegeneracy(
            "flip would create a nonpositive triangle".into(),
        ));
    }
    let (ta, tb) = (h - h % 3, g - g % 3);
    // New layout: triangle A = [d, vec(ph), vec(ng)], B = [-d, vec(pg), vec(nh)].
    let new_slot = |old: u32| -> u32 {
        if old == h {
            ta
        } else if old == ph {
            ta + 1
        } else if old == ng {
            ta + 2
        } else if old == g {
            tb
        } else if old == pg {
            tb + 1
        } else if old == nh {
            tb + 2
        } else {
            old
        }
    };
    let old_vec = |x: u32| tri.vecs[x as usize];
    let new_vecs = [
        (ta, d),
        (ta + 1, old_vec(ph)),
        (ta + 2, old_vec(ng)),
        (tb, geom::neg(d)),
        (tb + 1, old_vec(pg)),
        (tb + 2, old_vec(nh)),
    ];
    let moved = [h, ph, ng, g, pg, nh];
    let old_opp: Vec<u32> = moved.iter().map(|&x| tri.opp[x as usize]).collect();
    let old_class: Vec<Vec<i64>> = if tri.class.is_empty() {
        Vec::new()
    } else {
        moved.iter().map(|&x| tri.class[x as usize].clone()).collect()
    };

    for (slot, v) in new_vecs {
        tri.vecs[slot as usize] = v;
    }
    // Rewire opp: the new diagonal pair, then the four moved edges.
    tri.opp[ta as usize] = tb;
    tri.opp[tb as usize] = ta;
    for (k, &old) in moved.iter().enumerate() {
        if old == h || old == g {
            continue;
        }
        let ns = new_slot(old);
        let partner = old_opp[k];
        let partner_ns = new_slot(partner);
        tri.opp[ns as usize] = partner_ns;
        tri.opp[partner_ns as usize] = ns;
    }
    if !tri.class.is_empty() {
        let cls = |k: usize| old_class[k].clone();
        // moved = [h, ph, ng, g, pg, nh] -> indices 1, 2, 4, 5 are kept edges.
        let d_class: Vec<i64> = cls(1)
            .iter()
            .zip(cls(2).iter())
            .map(|(a, b)| -(a + b))
            .collect();
        tri.class[ta as usize] = d_class.clone();
        tri.class[(ta + 1) as usize] = cls(1);
        tri.class[(ta + 2) as usize] = cls(2);
        tri.class[tb as usize] = d_class.iter().map(|x| -x).collect();
        tri.class[(tb + 1) as usize] = cls(4);
        tri.class[(tb + 2) as usize] = cls(5);
    }
    Ok(ta)
}

/// Lawson flipping to the Delaunay triangulation. Edges whose incircle
/// margin is within the cocircular tolerance are left alone (degenerate
/// cells; canonicalization handles their triangulation ambiguity).
pub fn delaunayize(tri: &mut Tri, cfg: &Config) -> Result<u64> {
    let n = tri.vecs.len() as u32;
    let mut queue: std::collections::VecDeque<u32> = (0..n).filter(|&h| h < tri.opp[h as usize]).collect();
    let mut queued: Vec<bool> = vec![true; n as usize];
    for h in 0..n {
        if h > tri.opp[h as usize] {
            queued[h as usize] = false;
        }
    }
    let mut flips = 0u64;
    while let Some(h) = queue.pop_front() {
        queued[h as usize] = false;
        let g = tri.opp[h as usize];
        if g / 3 == h / 3 {
            continue;
        }
        let margin = delaunay_margin(tri, h);
        if margin <= cfg.tol.cocircular {
            continue;
        }
        let ta = match flip(tri, h) {
            Ok(t) => t,
            Err(_) => continue, // inadmissible under fp stress; leave the edge
        };
        flips += 1;
        if flips > cfg.budgets.flips {
            return Err(Error::budget("delaunay-flips", flips));
        }
        // Re-examine the quad's four outer edges.
        let tb = tri.opp[ta as usize];
        for e in [next(ta), prev(ta), next(tb), prev(tb)] {
            let canonical = e.min(tri.opp[e as usize]);
            if !queued[canonical as usize] {
                queued[canonical as usize] = true;
                queue.push_back(canonical);
            }
        }
    }
    tri.rebuild_vertices();
    Ok(flips)
}

/// True when every interior edge satisfies the (tolerant) Delaunay test.
pub fn is_delaunay(tri: &Tri, cfg: &Config) -> bool {
    (0..tri.vecs.len() as u32)
        .filter(|&h| h < tri.opp[h as usize] && tri.opp[h as usize] / 3 != h / 3)
        .all(|h| delaunay_margin(tri, h) <= cfg.tol.cocircular)
}

/// Delaunay triangulation of a surface, as a triangulated surface.
pub fn delaunay(s: &TranslationSurface, cfg: &Config) -> Result<Tri> {
    let mut tri = from_surface(s)?;
    delaunayize(&mut tri, cfg)?;
    Ok(tri)
}
