//! Cylinder decompositions of periodic directions.
//!
//! Every separatrix of the chosen direction is marched through the
//! triangulation. If each one closes up on a marked point, the direction is
//! completely periodic: cutting along the resulting connections leaves a
//! finite union of flat cylinders. Boundary circles are recovered by
//! chaining connection sides around the vertex fans (the side just above a
//! connection continues along the outgoing prong one half-turn earlier in
//! the fan, the side below along the prong one half-turn later), and the
//! two circles of each cylinder are paired by a transverse march that also
//! measures the height.

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geom::{self, V2};
use crate::surface::TranslationSurface;
use crate::tri::{self, next, prev, Tri};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// One maximal flat cylinder.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cylinder {
    /// Unit vector along the core curves.
    pub direction: V2,
    pub circumference: f64,
    pub height: f64,
}

impl Cylinder {
    pub fn modulus(&self) -> f64 {
        self.height / self.circumference
    }
}

/// Decompose the surface in direction `dir` (any nonzero vector). Errors
/// with `NonPeriodicDirection` when a separatrix fails to close within the
/// marching budget, `NoSingularity` when the surface has no marked points
/// to anchor the boundaries.
pub fn cylinder_decomposition(
    s: &TranslationSurface,
    dir: V2,
    cfg: &Config,
) -> Result<Vec<Cylinder>> {
    let t = tri::delaunay(s, cfg)?;
    cylinder_decomposition_tri(&t, dir, cfg)
}

/// Same, starting from a triangulation.
pub fn cylinder_decomposition_tri(t: &Tri, dir: V2, cfg: &Config) -> Result<Vec<Cylinder>> {
    let n = geom::norm(dir);
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::invalid_parameter(
            "direction must be a nonzero finite vector",
        ));
    }
    if !t.any_marked() {
        return Err(Error::NoSingularity);
    }
    Decomposer::new(t, geom::scale(dir, 1.0 / n), cfg).run()
}

/// Local development of the triangle owning slot `h`: slot `3t` sits at the
/// origin and positions follow the edge vectors counterclockwise.
fn corner_pos(t: &Tri, h: u32) -> V2 {
    match h % 3 {
        0 => [0.0, 0.0],
        1 => t.vecs[(h - 1) as usize],
        _ => geom::neg(t.vecs[h as usize]),
    }
}

/// How the corner at the tail of `h` relates to a unit direction.
enum Owns {
    /// The direction runs along the corner's first edge.
    Along,
    /// Strictly interior to the sector, at this angle past the first edge.
    Into(f64),
    No,
}

fn corner_owns(t: &Tri, h: u32, d: V2, tol: f64) -> Owns {
    let a = t.vecs[h as usize];
    let ca = geom::cross(a, d);
    if ca.abs() <= tol * geom::norm(a) && geom::dot(a, d) > 0.0 {
        return Owns::Along;
    }
    let b = geom::neg(t.vecs[prev(h) as usize]);
    if ca > 0.0 && geom::cross(d, b) > tol * geom::norm(b) {
        return Owns::Into(geom::angle_ccw(a, d));
    }
    Owns::No
}

/// The unique corner around the tail vertex of `h0` owning direction `d`.
/// Sectors are half-open (first edge included, second excluded), so
/// ownership is unambiguous.
fn claim_direction(t: &Tri, h0: u32, d: V2, tol: f64) -> Result<(u32, Owns)> {
    let mut h = h0;
    loop {
        match corner_owns(t, h, d, tol) {
            Owns::No => {}
            owned => return Ok((h, owned)),
        }
        h = t.around_vertex(h);
        if h == h0 {
            return Err(Error::NumericalDegeneracy(
                "no corner of the vertex fan claims the marching direction".into(),
            ));
        }
    }
}

/// Angular layout of the corners around one vertex class.
struct Fan {
    corners: Vec<u32>,
    cum: Vec<f64>,
    total: f64,
}

fn build_fans(t: &Tri) -> (Vec<Fan>, Vec<(u32, u32)>) {
    let nv = t.vert_angle.len();
    let mut fans = Vec::with_capacity(nv);
    // corner half-edge -> (class, index within the fan)
    let mut slot = vec![(u32::MAX, u32::MAX); t.vecs.len()];
    let mut starts = vec![u32::MAX; nv];
    for h in 0..t.vecs.len() as u32 {
        let v = t.vert[h as usize] as usize;
        if starts[v] == u32::MAX {
            starts[v] = h;
        }
    }
    for (v, &start) in starts.iter().enumerate() {
        let mut corners = Vec::new();
        let mut cum = Vec::new();
        let mut acc = 0.0;
        let mut h = start;
        loop {
            slot[h as usize] = (v as u32, corners.len() as u32);
            corners.push(h);
            cum.push(acc);
            acc += geom::angle_ccw(
                t.vecs[h as usize],
                geom::neg(t.vecs[prev(h) as usize]),
            );
            h = t.around_vertex(h);
            if h == start {
                break;
            }
        }
        fans.push(Fan {
            corners,
            cum,
            total: acc,
        });
    }
    (fans, slot)
}

/// First straight piece of a connection, the anchor for the height march.
enum FirstSeg {
    Chord { tri: usize, a: V2, b: V2 },
    Edge(u32),
}

struct Connection {
    length: f64,
    first: FirstSeg,
    end_corner: u32,
    /// Angle from the end corner's first edge to the reversed direction.
    end_offset: f64,
}

struct ChordRec {
    conn: usize,
    a: V2,
    b: V2,
    a_vertex: bool,
    b_vertex: bool,
}

/// Marching state: running along an edge, leaving a corner, or crossing
/// into the triangle of `e` through `e` at parameter `lam`.
enum MState {
    Along(u32),
    FromCorner(u32),
    Crossing { e: u32, lam: f64 },
}

struct Decomposer<'a> {
    t: &'a Tri,
    d: V2,
    tol: f64,
    budget: u64,
    chords: Vec<Vec<ChordRec>>,
    edge_conn: Vec<Option<usize>>,
}

/// Transverse-march outcome that asks for a different anchor parameter.
enum VErr {
    Retry,
    Hard(Error),
}

impl<'a> Decomposer<'a> {
    fn new(t: &'a Tri, d: V2, cfg: &Config) -> Self {
        Decomposer {
            t,
            d,
            tol: cfg.tol.geom,
            budget: cfg.budgets.separatrix,
            chords: (0..t.triangle_count()).map(|_| Vec::new()).collect(),
            edge_conn: vec![None; t.vecs.len()],
        }
    }

    fn run(mut self) -> Result<Vec<Cylinder>> {
        let (fans, slot) = build_fans(self.t);

        // Launch one march per outgoing prong of a marked vertex.
        let mut launches = Vec::new();
        for fan in &fans {
            for (idx, &h) in fan.corners.iter().enumerate() {
                if !self.t.is_marked(h) {
                    break; // markedness is a per-class property
                }
                match corner_owns(self.t, h, self.d, self.tol) {
                    Owns::Along => launches.push((MState::Along(h), h, fan.cum[idx])),
                    Owns::Into(off) => {
                        launches.push((MState::FromCorner(h), h, fan.cum[idx] + off))
                    }
                    Owns::No => {}
                }
            }
        }

        let mut conns = Vec::with_capacity(launches.len());
        let mut starts = Vec::with_capacity(launches.len());
        for (state, corner, coord) in launches {
            let id = conns.len();
            conns.push(self.march(state, id)?);
            starts.push((self.t.vert[corner as usize], coord));
        }

        // Assemble the prong tables: outgoing and incoming horizontal rays
        // around each vertex, by angular coordinate.
        let mut prongs: Vec<Vec<(f64, bool, usize)>> = vec![Vec::new(); fans.len()];
        for (c, (v, coord)) in starts.iter().enumerate() {
            prongs[*v as usize].push((*coord, true, c));
        }
        for (c, conn) in conns.iter().enumerate() {
            let (v, idx) = slot[conn.end_corner as usize];
            let coord = fans[v as usize].cum[idx as usize] + conn.end_offset;
            prongs[v as usize].push((coord, false, c));
        }
        for (v, list) in prongs.iter_mut().enumerate() {
            list.sort_by(|x, y| x.0.total_cmp(&y.0));
            let k = list.len();
            if k == 0 {
                continue;
            }
            // Prongs of the two orientations alternate, one half-turn apart.
            for i in 0..k {
                let gap = if i + 1 < k {
                    list[i + 1].0 - list[i].0
                } else {
                    fans[v].total - list[i].0 + list[0].0
                };
                if (gap - PI).abs() > 1e-6 || list[i].1 == list[(i + 1) % k].1 {
                    return Err(Error::NumericalDegeneracy(format!(
                        "inconsistent horizontal prong fan at vertex {v}"
                    )));
                }
            }
        }

        // Chain the sides: the side above a connection continues through
        // the outgoing prong one half-turn before its arrival prong, the
        // side below through the one half-turn after.
        let m = conns.len();
        let mut succ_above = vec![usize::MAX; m];
        let mut succ_below = vec![usize::MAX; m];
        for (c, conn) in conns.iter().enumerate() {
            let (v, idx) = slot[conn.end_corner as usize];
            let fan = &fans[v as usize];
            let beta = fan.cum[idx as usize] + conn.end_offset;
            succ_above[c] = self.find_out_prong(&prongs[v as usize], fan.total, beta - PI)?;
            succ_below[c] = self.find_out_prong(&prongs[v as usize], fan.total, beta + PI)?;
        }

        let cycles_above = permutation_cycles(&succ_above);
        let cycles_below = permutation_cycles(&succ_below);
        let mut below_of = vec![usize::MAX; m];
        for (i, cyc) in cycles_below.iter().enumerate() {
            for &c in cyc {
                below_of[c] = i;
            }
        }
        let circ = |cyc: &[usize]| cyc.iter().map(|&c| conns[c].length).sum::<f64>();

        // Pair each floor circle with its ceiling by marching transversely
        // from just above a representative connection.
        let params = [
            0.618_033_988_75,
            0.5,
            0.381_966_011_25,
            0.25,
            0.75,
            0.15,
            0.85,
            0.05,
        ];
        let mut claimed = vec![false; cycles_below.len()];
        let mut out = Vec::with_capacity(cycles_above.len());
        for cyc in &cycles_above {
            let rep = &conns[cyc[0]];
            let mut found = None;
            for &tp in &params {
                match self.transverse_march(&rep.first, tp) {
                    Ok(hit) => {
                        found = Some(hit);
                        break;
                    }
                    Err(VErr::Retry) => continue,
                    Err(VErr::Hard(e)) => return Err(e),
                }
            }
            let (hit_conn, height) = found.ok_or_else(|| {
                Error::NumericalDegeneracy(
                    "height march kept grazing vertices for every anchor".into(),
                )
            })?;
            let floor = circ(cyc);
            let partner = below_of[hit_conn];
            let ceiling = circ(&cycles_below[partner]);
            if (floor - ceiling).abs() > 1e-6 * floor.max(ceiling) || claimed[partner] {
                return Err(Error::NumericalDegeneracy(
                    "cylinder boundary circles do not pair up consistently".into(),
                ));
            }
            claimed[partner] = true;
            out.push(Cylinder {
                direction: self.d,
                circumference: floor,
                height,
            });
        }

        let total: f64 = out.iter().map(|c| c.circumference * c.height).sum();
        let area = self.t.area();
        if (total - area).abs() > 1e-6 * area {
            return Err(Error::NumericalDegeneracy(format!(
                "cylinder areas sum to {total}, surface area is {area}"
            )));
        }
        out.sort_by(|x, y| {
            y.circumference
                .total_cmp(&x.circumference)
                .then(y.height.total_cmp(&x.height))
        });
        Ok(out)
    }

    fn find_out_prong(
        &self,
        prongs: &[(f64, bool, usize)],
        total: f64,
        target: f64,
    ) -> Result<usize> {
        let want = target.rem_euclid(total);
        let mut best: Option<(f64, usize)> = None;
        for &(coord, is_out, conn) in prongs {
            if !is_out {
                continue;
            }
            let mut dist = (coord - want).abs();
            dist = dist.min(total - dist);
            if best.map_or(true, |(bd, _)| dist < bd) {
                best = Some((dist, conn));
            }
        }
        match best {
            Some((dist, conn)) if dist <= 1e-6 => Ok(conn),
            _ => Err(Error::NumericalDegeneracy(
                "no outgoing prong one half-turn from an arrival".into(),
            )),
        }
    }

    /// March one separatrix until it reaches a marked vertex, recording its
    /// chords and edge runs.
    fn march(&mut self, start: MState, conn: usize) -> Result<Connection> {
        let t = self.t;
        let d = self.d;
        let mut state = start;
        let mut length = 0.0;
        let mut first: Option<FirstSeg> = None;
        let mut steps = 0u64;
        loop {
            steps += 1;
            if steps > self.budget {
                return Err(Error::NonPeriodicDirection(format!(
                    "separatrix did not close after {} crossings",
                    self.budget
                )));
            }
            match state {
                MState::Along(g) => {
                    self.edge_conn[g as usize] = Some(conn);
                    self.edge_conn[t.opp[g as usize] as usize] = Some(conn);
                    first.get_or_insert(FirstSeg::Edge(g));
                    length += geom::dot(d, t.vecs[g as usize]);
                    let head = next(g);
                    if t.is_marked(head) {
                        return Ok(Connection {
                            length,
                            first: first.unwrap(),
                            end_corner: t.opp[g as usize],
                            end_offset: 0.0,
                        });
                    }
                    state = Self::reclaim(t, head, d, self.tol)?;
                }
                MState::FromCorner(h) => {
                    let p = corner_pos(t, h);
                    match self.step(conn, p, next(h), true, &mut first, &mut length)? {
                        Step::Cross(e, lam) => state = MState::Crossing { e, lam },
                        Step::Vertex(c) => match self.arrive(c, &mut state, length, &first)? {
                            Some(done) => return Ok(done),
                            None => {}
                        },
                    }
                }
                MState::Crossing { e, lam } => {
                    let p = geom::add(corner_pos(t, e), geom::scale(t.vecs[e as usize], lam));
                    // The apex either absorbs the ray or decides the side.
                    let w = corner_pos(t, prev(e));
                    let to_w = geom::sub(w, p);
                    let cw = geom::cross(d, to_w);
                    if cw.abs() <= self.tol * geom::norm(to_w) && geom::dot(d, to_w) > 0.0 {
                        self.chords[(e / 3) as usize].push(ChordRec {
                            conn,
                            a: p,
                            b: w,
                            a_vertex: false,
                            b_vertex: true,
                        });
                        first.get_or_insert(FirstSeg::Chord {
                            tri: (e / 3) as usize,
                            a: p,
                            b: w,
                        });
                        length += geom::dot(d, to_w);
                        match self.arrive(prev(e), &mut state, length, &first)? {
                            Some(done) => return Ok(done),
                            None => {}
                        }
                        continue;
                    }
                    let f = if cw > 0.0 { next(e) } else { prev(e) };
                    match self.step(conn, p, f, false, &mut first, &mut length)? {
                        Step::Cross(e2, lam2) => state = MState::Crossing { e: e2, lam: lam2 },
                        Step::Vertex(c) => match self.arrive(c, &mut state, length, &first)? {
                            Some(done) => return Ok(done),
                            None => {}
                        },
                    }
                }
            }
        }
    }

    /// Extend the ray from `p` across edge `f` of the current triangle.
    fn step(
        &mut self,
        conn: usize,
        p: V2,
        f: u32,
        from_vertex: bool,
        first: &mut Option<FirstSeg>,
        length: &mut f64,
    ) -> Result<Step> {
        let t = self.t;
        let q = corner_pos(t, f);
        let v = t.vecs[f as usize];
        let denom = geom::cross(self.d, v);
        if denom.abs() <= 1e-14 * geom::norm(v) {
            return Err(Error::NumericalDegeneracy(
                "marching ray is parallel to the exit edge".into(),
            ));
        }
        let mu = geom::cross(geom::sub(q, p), self.d) / denom;
        let hit = if mu <= 1e-9 {
            Some(f)
        } else if mu >= 1.0 - 1e-9 {
            Some(next(f))
        } else {
            None
        };
        let (x, x_vertex, out) = match hit {
            Some(c) => (corner_pos(t, c), true, Step::Vertex(c)),
            None => (
                geom::add(q, geom::scale(v, mu)),
                false,
                Step::Cross(t.opp[f as usize], 1.0 - mu),
            ),
        };
        self.chords[(f / 3) as usize].push(ChordRec {
            conn,
            a: p,
            b: x,
            a_vertex: from_vertex,
            b_vertex: x_vertex,
        });
        first.get_or_insert(FirstSeg::Chord {
            tri: (f / 3) as usize,
            a: p,
            b: x,
        });
        *length += geom::dot(self.d, geom::sub(x, p));
        Ok(out)
    }

    /// Hit the vertex at corner `c`: finish if it is marked, otherwise pass
    /// straight through.
    fn arrive(
        &self,
        c: u32,
        state: &mut MState,
        length: f64,
        first: &Option<FirstSeg>,
    ) -> Result<Option<Connection>> {
        let t = self.t;
        if t.is_marked(c) {
            let back = geom::neg(self.d);
            let (corner, owns) = claim_direction(t, c, back, self.tol)?;
            let end_offset = match owns {
                Owns::Along => 0.0,
                Owns::Into(off) => off,
                Owns::No => unreachable!(),
            };
            return Ok(Some(Connection {
                length,
                first: match first {
                    Some(FirstSeg::Chord { tri, a, b }) => FirstSeg::Chord {
                        tri: *tri,
                        a: *a,
                        b: *b,
                    },
                    Some(FirstSeg::Edge(g)) => FirstSeg::Edge(*g),
                    None => unreachable!("a finished march has at least one segment"),
                },
                end_corner: corner,
                end_offset,
            }));
        }
        *state = Self::reclaim(t, c, self.d, self.tol)?;
        Ok(None)
    }

    fn reclaim(t: &Tri, c: u32, d: V2, tol: f64) -> Result<MState> {
        let (corner, owns) = claim_direction(t, c, d, tol)?;
        Ok(match owns {
            Owns::Along => MState::Along(corner),
            Owns::Into(_) => MState::FromCorner(corner),
            Owns::No => unreachable!(),
        })
    }

    /// March perpendicular to the connections, from a point just above the
    /// anchor segment, until the ray runs into the next connection: returns
    /// the connection hit and the transverse distance, i.e. the height of
    /// the cylinder the ray crossed.
    fn transverse_march(
        &self,
        anchor: &FirstSeg,
        tp: f64,
    ) -> std::result::Result<(usize, f64), VErr> {
        let t = self.t;
        let d = self.d;
        let u = [-d[1], d[0]];
        let (mut tri_id, mut p) = match anchor {
            FirstSeg::Chord { tri, a, b } => {
                (*tri, geom::add(*a, geom::scale(geom::sub(*b, *a), tp)))
            }
            FirstSeg::Edge(g) => (
                (g / 3) as usize,
                geom::add(corner_pos(t, *g), geom::scale(t.vecs[*g as usize], tp)),
            ),
        };
        let mut rise = 0.0;
        for _ in 0..self.budget {
            let scale = (0..3)
                .map(|k| geom::norm(t.vecs[3 * tri_id + k]))
                .fold(0.0, f64::max);
            let s_tol = 1e-9 * scale;
            let graze = 1e-7 * scale;

            let mut best_chord: Option<(f64, usize)> = None;
            for rec in &self.chords[tri_id] {
                let mid = geom::scale(geom::add(rec.a, rec.b), 0.5);
                let s = geom::cross(d, geom::sub(mid, p));
                if s <= s_tol {
                    continue;
                }
                let xi = geom::dot(d, p);
                let (xa, xb) = (geom::dot(d, rec.a), geom::dot(d, rec.b));
                let (lo, hi) = (xa.min(xb), xa.max(xb));
                if xi < lo - s_tol || xi > hi + s_tol {
                    continue;
                }
                if ((xi - xa).abs() <= graze && rec.a_vertex)
                    || ((xi - xb).abs() <= graze && rec.b_vertex)
                {
                    return Err(VErr::Retry);
                }
                if best_chord.map_or(true, |(bs, _)| s < bs) {
                    best_chord = Some((s, rec.conn));
                }
            }

            let mut best_edge: Option<(f64, u32, f64)> = None;
            let mut graze: Option<f64> = None;
            for k in 0..3 {
                let f = (3 * tri_id + k) as u32;
                let q = corner_pos(t, f);
                let v = t.vecs[f as usize];
                let denom = geom::cross(u, v);
                if denom.abs() <= 1e-14 * geom::norm(v) {
                    continue;
                }
                let mu = geom::cross(geom::sub(q, p), u) / denom;
                let s = geom::cross(geom::sub(q, p), v) / denom;
                if s <= s_tol || !(-1e-7..=1.0 + 1e-7).contains(&mu) {
                    continue;
                }
                if !(1e-7..=1.0 - 1e-7).contains(&mu) {
                    graze = Some(graze.map_or(s, |g: f64| g.min(s)));
                    continue;
                }
                if best_edge.map_or(true, |(bs, _, _)| s < bs) {
                    best_edge = Some((s, f, mu));
                }
            }
            // A graze matters only when the ray meets the vertex before any
            // clean event; picking a new anchor shifts the ray off it.
            if let Some(g) = graze {
                let first = best_chord
                    .map(|(s, _)| s)
                    .into_iter()
                    .chain(best_edge.map(|(s, _, _)| s))
                    .fold(f64::INFINITY, f64::min);
                if g < first - s_tol {
                    return Err(VErr::Retry);
                }
            }

            match (best_chord, best_edge) {
                (Some((sc, conn)), Some((se, _, _))) if sc <= se + s_tol => {
                    return Ok((conn, rise + sc))
                }
                (Some((sc, conn)), None) => return Ok((conn, rise + sc)),
                (_, Some((se, f, mu))) => {
                    if let Some(conn) =
                        self.edge_conn[f as usize].or(self.edge_conn[t.opp[f as usize] as usize])
                    {
                        return Ok((conn, rise + se));
                    }
                    rise += se;
                    let e2 = t.opp[f as usize];
                    tri_id = (e2 / 3) as usize;
                    p = geom::add(
                        corner_pos(t, e2),
                        geom::scale(t.vecs[e2 as usize], 1.0 - mu),
                    );
                }
                (None, None) => {
                    return Err(VErr::Hard(Error::NumericalDegeneracy(
                        "height march lost its triangle".into(),
                    )))
                }
            }
        }
        Err(VErr::Hard(Error::budget("height march", self.budget)))
    }
}

enum Step {
    Cross(u32, f64),
    Vertex(u32),
}

fn permutation_cycles(succ: &[usize]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; succ.len()];
    let mut cycles = Vec::new();
    for start in 0..succ.len() {
        if seen[start] {
            continue;
        }
        let mut cyc = Vec::new();
        let mut c = start;
        while !seen[c] {
            seen[c] = true;
            cyc.push(c);
            c = succ[c];
        }
        cycles.push(cyc);
    }
    cycles
}
