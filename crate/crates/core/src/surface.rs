//! Translation surfaces presented as planar polygons with translation
//! edge-identifications: builders for the standard fixtures, structural
//! validation (stratum, genus, cone angles), area normalization, and the
//! linear SL(2,R) action.

use crate::error::{Error, Result};
use crate::geom::{self, V2};
use crate::sl2::Mat2;
use serde::{Deserialize, Serialize};

fn default_true() -> bool {
    true
}

/// A translation surface: polygons given by cyclic sequences of edge
/// vectors, plus a perfect matching of directed edges by translations.
/// `gluings[k] = [[p, e], [q, f]]` identifies edge `e` of polygon `p` with
/// edge `f` of polygon `q` (which must carry the opposite vector).
///
/// Every polygon corner is a distinguished point of the flat metric. When
/// `mark_regular_vertices` is false, corners whose total angle is 2π are
/// treated as ordinary points instead — the surface may then have no
/// distinguished points at all (an unmarked torus), which the
/// saddle-connection machinery reports as a no-singularity error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TranslationSurface {
    pub polygons: Vec<Vec<V2>>,
    pub gluings: Vec<[[usize; 2]; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default = "default_true")]
    pub mark_regular_vertices: bool,
}

/// One identified vertex class: its corners `(polygon, vertex)` and the cone
/// angle as an integer multiple of π (always even for translation gluings).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VertexClass {
    pub id: usize,
    pub angle_over_pi: i64,
    pub corners: Vec<(usize, usize)>,
}

/// Result of structural validation: topology and stratum data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumReport {
    pub genus: i64,
    pub vertex_classes: Vec<VertexClass>,
    pub area: f64,
    pub in_h2: bool,
    /// Number of regular (2π) vertex classes — marked points of the metric.
    pub marked_points: usize,
}

impl TranslationSurface {
    pub fn new(polygons: Vec<Vec<V2>>, gluings: Vec<[[usize; 2]; 2]>) -> Self {
        TranslationSurface {
            polygons,
            gluings,
            label: None,
            mark_regular_vertices: true,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    /// Vertex positions of one polygon (partial sums of its edge vectors,
    /// anchored at the origin).
    pub fn polygon_vertices(&self, p: usize) -> Vec<V2> {
        let mut pos = [0.0, 0.0];
        let mut out = Vec::with_capacity(self.polygons[p].len());
        for v in &self.polygons[p] {
            out.push(pos);
            pos = geom::add(pos, *v);
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.polygons.iter().map(|p| p.len()).sum()
    }
}

/// Unit square with all four corners at one marked point: the standard
/// torus fixture. With `marked = false` the single 2π class is unmarked and
/// the surface has no distinguished point.
pub fn build_square_torus(marked: bool) -> TranslationSurface {
    let polygons = vec![vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]];
    let gluings = vec![[[0, 0], [0, 2]], [[0, 1], [0, 3]]];
    let mut s = TranslationSurface::new(polygons, gluings)
        .with_label(if marked { "torus" } else { "torus-unmarked" });
    s.mark_regular_vertices = marked;
    s
}

/// L-shaped surface L(a, b): a horizontal arm of length `a` and height 1
/// and a vertical arm of width 1 and height `b`, opposite sides glued. The
/// boundary is subdivided at (1,0) and (0,1) so every identification pairs
/// whole edges. All eight corners join into one cone point of angle 6π.
pub fn build_lshape(a: f64, b: f64) -> Result<TranslationSurface> {
    if !(a > 1.0) || !(b > 1.0) {
        return Err(Error::invalid_parameter(format!(
            "lshape needs a > 1 and b > 1, got a={a}, b={b}"
        )));
    }
    let polygons = vec![vec![
        [1.0, 0.0],       // (0,0) -> (1,0)
        [a - 1.0, 0.0],   // (1,0) -> (a,0)
        [0.0, 1.0],       // (a,0) -> (a,1)
        [1.0 - a, 0.0],   // (a,1) -> (1,1)
        [0.0, b - 1.0],   // (1,1) -> (1,b)
        [-1.0, 0.0],      // (1,b) -> (0,b)
        [0.0, 1.0 - b],   // (0,b) -> (0,1)
        [0.0, -1.0],      // (0,1) -> (0,0)
    ]];
    let gluings = vec![
        [[0, 0], [0, 5]],
        [[0, 1], [0, 3]],
        [[0, 2], [0, 7]],
        [[0, 4], [0, 6]],
    ];
    Ok(TranslationSurface::new(polygons, gluings).with_label(format!("lshape({a},{b})")))
}

/// Regular octagon with unit sides, opposite sides identified: a genus-2
/// surface with one 6π cone point and area 2(1+√2).
pub fn build_regular_octagon() -> TranslationSurface {
    let mut edges = Vec::with_capacity(8);
    for k in 0..8 {
        let ang = std::f64::consts::FRAC_PI_4 * k as f64;
        edges.push([ang.cos(), ang.sin()]);
    }
    let gluings = (0..4).map(|k| [[0, k], [0, k + 4]]).collect();
    TranslationSurface::new(vec![edges], gluings).with_label("octagon")
}

/// Square-tiled surface from two permutations of {0, .., n-1}: square i's
/// right edge glues to square h[i]'s left edge and its top edge to square
/// v[i]'s bottom edge. The pair must act transitively, else the would-be
/// surface is disconnected.
pub fn build_origami(h: &[usize], v: &[usize]) -> Result<TranslationSurface> {
    let n = h.len();
    if n == 0 || v.len() != n {
        return Err(Error::invalid_parameter(
            "origami permutations must be nonempty and equally sized",
        ));
    }
    for perm in [h, v] {
        let mut seen = vec![false; n];
        for &img in perm {
            if img >= n || seen[img] {
                return Err(Error::invalid_parameter(format!(
                    "not a permutation of 0..{n}: {perm:?}"
                )));
            }
            seen[img] = true;
        }
    }
    // Transitivity via union of orbits.
    let mut comp: Vec<usize> = (0..n).collect();
    fn find(comp: &mut Vec<usize>, i: usize) -> usize {
        if comp[i] != i {
            let r = find(comp, comp[i]);
            comp[i] = r;
        }
        comp[i]
    }
    for i in 0..n {
        for img in [h[i], v[i]] {
            let (a, b) = (find(&mut comp, i), find(&mut comp, img));
            comp[a] = b;
        }
    }
    let root = find(&mut comp, 0);
    if (0..n).any(|i| find(&mut comp, i) != root) {
        return Err(Error::DisconnectedSurface(format!(
            "permutations {h:?}, {v:?} do not act transitively on {n} squares"
        )));
    }
    // Each square: bottom, right, top, left in ccw order.
    let square = vec![[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]];
    let polygons = vec![square; n];
    let mut gluings = Vec::with_capacity(2 * n);
    for i in 0..n {
        gluings.push([[i, 1], [h[i], 3]]);
        gluings.push([[i, 2], [v[i], 0]]);
    }
    Ok(TranslationSurface::new(polygons, gluings).with_label(format!("origami(h={h:?},v={v:?})")))
}

const TAU_GEOM: f64 = 1e-9;

struct EdgeTable {
    /// partner[(p,e)] as flat index -> flat index of the glued edge
    partner: Vec<usize>,
    /// offsets[p] = flat index of polygon p's edge 0
    offsets: Vec<usize>,
}

impl EdgeTable {
    fn flat(&self, p: usize, e: usize) -> usize {
        self.offsets[p] + e
    }
}

fn edge_table(s: &TranslationSurface) -> Result<EdgeTable> {
    let mut offsets = Vec::with_capacity(s.polygons.len());
    let mut total = 0;
    for poly in &s.polygons {
        offsets.push(total);
        total += poly.len();
    }
    let mut partner = vec![usize::MAX; total];
    for (k, g) in s.gluings.iter().enumerate() {
        let mut flats = [0usize; 2];
        for (side, &[p, e]) in g.iter().enumerate() {
            if p >= s.polygons.len() || e >= s.polygons[p].len() {
                return Err(Error::MalformedSurface(format!(
                    "gluing {k} references edge ({p},{e}) which does not exist"
                )));
            }
            flats[side] = offsets[p] + e;
        }
        if flats[0] == flats[1] {
            return Err(Error::MalformedSurface(format!(
                "gluing {k} pairs edge ({},{}) with itself",
                g[0][0], g[0][1]
            )));
        }
        for &f in &flats {
            if partner[f] != usize::MAX {
                return Err(Error::MalformedSurface(format!(
                    "edge appears in more than one gluing (gluing {k})"
                )));
            }
        }
        partner[flats[0]] = flats[1];
        partner[flats[1]] = flats[0];
    }
    if let Some(unglued) = partner.iter().position(|&x| x == usize::MAX) {
        return Err(Error::MalformedSurface(format!(
            "directed edge {unglued} is not glued to any partner"
        )));
    }
    Ok(EdgeTable { partner, offsets })
}

/// True when segments (a1,a2) and (b1,b2) intersect in a point interior to
/// at least one of them (used to reject non-simple polygons).
fn segments_cross(a1: V2, a2: V2, b1: V2, b2: V2) -> bool {
    let d1 = geom::cross(geom::sub(a2, a1), geom::sub(b1, a1));
    let d2 = geom::cross(geom::sub(a2, a1), geom::sub(b2, a1));
    let d3 = geom::cross(geom::sub(b2, b1), geom::sub(a1, b1));
    let d4 = geom::cross(geom::sub(b2, b1), geom::sub(a2, b1));
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    // Collinear overlap: project on the longer axis and test interval overlap.
    let collinear = |p: V2, q: V2, r: V2| geom::cross(geom::sub(q, p), geom::sub(r, p)).abs() < 1e-15;
    if collinear(a1, a2, b1) && collinear(a1, a2, b2) {
        let axis = if (a2[0] - a1[0]).abs() >= (a2[1] - a1[1]).abs() { 0 } else { 1 };
        let (lo_a, hi_a) = (a1[axis].min(a2[axis]), a1[axis].max(a2[axis]));
        let (lo_b, hi_b) = (b1[axis].min(b2[axis]), b1[axis].max(b2[axis]));
        return lo_a.max(lo_b) < hi_a.min(hi_b) - 1e-15;
    }
    false
}

/// Structural validation: polygon closure, simplicity and orientation,
/// gluing consistency, connectivity, vertex-class walk, stratum report.
pub fn validate(s: &TranslationSurface) -> Result<StratumReport> {
    if s.polygons.is_empty() {
        return Err(Error::MalformedSurface("no polygons".into()));
    }
    for (p, poly) in s.polygons.iter().enumerate() {
        if poly.len() < 3 {
            return Err(Error::MalformedSurface(format!(
                "polygon {p} has fewer than 3 edges"
            )));
        }
        let mut sum = [0.0, 0.0];
        for (e, v) in poly.iter().enumerate() {
            if geom::norm(*v) <= TAU_GEOM {
                return Err(Error::MalformedSurface(format!(
                    "polygon {p} edge {e} has zero length"
                )));
            }
            sum = geom::add(sum, *v);
        }
        if geom::norm(sum) > TAU_GEOM {
            return Err(Error::MalformedSurface(format!(
                "polygon {p} does not close up (defect {:.3e})",
                geom::norm(sum)
            )));
        }
        let verts = s.polygon_vertices(p);
        let n = verts.len();
        let mut area2 = 0.0;
        for i in 0..n {
            area2 += geom::cross(verts[i], verts[(i + 1) % n]);
        }
        if area2 <= 0.0 {
            return Err(Error::MalformedSurface(format!(
                "polygon {p} is not positively oriented (doubled area {area2})"
            )));
        }
        // Simplicity: no two non-adjacent edges may cross.
        for i in 0..n {
            for j in (i + 1)..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (a1, a2) = (verts[i], verts[(i + 1) % n]);
                let (b1, b2) = (verts[j], verts[(j + 1) % n]);
                if segments_cross(a1, a2, b1, b2) {
                    return Err(Error::MalformedSurface(format!(
                        "polygon {p} is not simple: edges {i} and {j} cross"
                    )));
                }
            }
        }
    }

    let table = edge_table(s)?;
    // Glued edges carry opposite vectors.
    for (k, g) in s.gluings.iter().enumerate() {
        let va = s.polygons[g[0][0]][g[0][1]];
        let vb = s.polygons[g[1][0]][g[1][1]];
        if !geom::approx_eq(va, geom::neg(vb), TAU_GEOM) {
            return Err(Error::MalformedSurface(format!(
                "gluing {k} pairs non-opposite vectors {va:?} and {vb:?}"
            )));
        }
    }

    // Connectivity of the polygon adjacency graph.
    let np = s.polygons.len();
    let mut seen = vec![false; np];
    let mut stack = vec![0usize];
    seen[0] = true;
    while let Some(p) = stack.pop() {
        for e in 0..s.polygons[p].len() {
            let f = table.partner[table.flat(p, e)];
            let q = match table.offsets.binary_search(&f) {
                Ok(i) => i,
                Err(i) => i - 1,
            };
            if !seen[q] {
                seen[q] = true;
                stack.push(q);
            }
        }
    }
    if seen.iter().any(|&x| !x) {
        return Err(Error::DisconnectedSurface(
            "polygons do not form a single glued component".into(),
        ));
    }

    // Vertex classes by the corner walk: the corner before edge (p,e)
    // [between incoming edge e-1 and outgoing edge e] steps counterclockwise
    // around its vertex to the corner at the start of partner(p, e-1).
    let total_edges = s.edge_count();
    let mut class_of = vec![usize::MAX; total_edges];
    let mut classes: Vec<VertexClass> = Vec::new();
    for (p, poly) in s.polygons.iter().enumerate() {
        for e in 0..poly.len() {
            let start = table.flat(p, e);
            if class_of[start] != usize::MAX {
                continue;
            }
            let id = classes.len();
            let mut corners = Vec::new();
            let mut angle = 0.0;
            let mut cur = start;
            loop {
                class_of[cur] = id;
                // Decode the flat corner index.
                let cp = match table.offsets.binary_search(&cur) {
                    Ok(i) => i,
                    Err(i) => i - 1,
                };
                let ce = cur - table.offsets[cp];
                corners.push((cp, ce));
                let n = s.polygons[cp].len();
                let outgoing = s.polygons[cp][ce];
                let incoming = s.polygons[cp][(ce + n - 1) % n];
                angle += geom::angle_ccw(outgoing, geom::neg(incoming));
                let prev_edge = table.flat(cp, (ce + n - 1) % n);
                cur = table.partner[prev_edge];
                if cur == start {
                    break;
                }
                if class_of[cur] != usize::MAX {
                    return Err(Error::MalformedSurface(
                        "corner walk re-entered a finished class".into(),
                    ));
                }
            }
            let per_pi = angle / std::f64::consts::PI;
            let rounded = per_pi.round() as i64;
            if (per_pi - rounded as f64).abs() > 1e-7 || rounded <= 0 || rounded % 2 != 0 {
                return Err(Error::MalformedSurface(format!(
                    "vertex class {id} has cone angle {per_pi}π, not a positive multiple of 2π"
                )));
            }
            classes.push(VertexClass {
                id,
                angle_over_pi: rounded,
                corners,
            });
        }
    }

    let v = classes.len() as i64;
    let e = (total_edges / 2) as i64;
    let f = np as i64;
    let chi = v - e + f;
    if chi % 2 != 0 {
        return Err(Error::MalformedSurface(format!(
            "odd Euler characteristic {chi}"
        )));
    }
    let genus = (2 - chi) / 2;
    // Gauss–Bonnet cross-check: total excess angle = 2π(2g − 2).
    let excess: i64 = classes.iter().map(|c| c.angle_over_pi - 2).sum();
    if excess != 4 * genus - 4 {
        return Err(Error::MalformedSurface(format!(
            "angle excess {excess}π inconsistent with genus {genus}"
        )));
    }

    let area = area(s);
    if area <= 0.0 {
        return Err(Error::MalformedSurface("nonpositive total area".into()));
    }
    let six_pi = classes.iter().filter(|c| c.angle_over_pi == 6).count();
    let marked = classes.iter().filter(|c| c.angle_over_pi == 2).count();
    let in_h2 = genus == 2 && six_pi == 1 && six_pi + marked == classes.len();
    Ok(StratumReport {
        genus,
        vertex_classes: classes,
        area,
        in_h2,
        marked_points: marked,
    })
}

/// Total area: sum of polygon shoelace areas.
pub fn area(s: &TranslationSurface) -> f64 {
    let mut total = 0.0;
    for p in 0..s.polygons.len() {
        let verts = s.polygon_vertices(p);
        let n = verts.len();
        let mut a2 = 0.0;
        for i in 0..n {
            a2 += geom::cross(verts[i], verts[(i + 1) % n]);
        }
        total += 0.5 * a2;
    }
    total
}

/// Scale all edge vectors by area^{-1/2}, making the area 1.
pub fn normalize_area(s: &TranslationSurface) -> Result<TranslationSurface> {
    let a = area(s);
    if !(a > 0.0) {
        return Err(Error::MalformedSurface(format!(
            "cannot normalize area {a}"
        )));
    }
    let k = 1.0 / a.sqrt();
    let mut out = s.clone();
    for poly in &mut out.polygons {
        for v in poly.iter_mut() {
            *v = geom::scale(*v, k);
        }
    }
    Ok(out)
}

/// Apply a determinant-one matrix to every edge vector. Gluings are
/// untouched; the area is preserved.
pub fn apply_matrix(m: &Mat2, s: &TranslationSurface) -> Result<TranslationSurface> {
    if (m.det() - 1.0).abs() > TAU_GEOM {
        return Err(Error::InvalidMatrix(format!(
            "linear action needs determinant 1 within {TAU_GEOM}, got {}",
            m.det()
        )));
    }
    let mut out = s.clone();
    for poly in &mut out.polygons {
        for v in poly.iter_mut() {
            *v = m.apply(*v);
        }
    }
    Ok(out)
}

/// Surface-file parser: either the explicit polygon format or one of the
/// builder shorthands {"lshape": {"a":..,"b":..}}, {"octagon": {}},
/// {"origami": {"h": [...], "v": [...]}} (permutations as 0-based images).
pub fn from_json(text: &str) -> Result<TranslationSurface> {
    #[derive(Deserialize)]
    struct LShapeParams {
        a: f64,
        b: f64,
    }
    #[derive(Deserialize)]
    struct OrigamiParams {
        h: Vec<usize>,
        v: Vec<usize>,
    }
    #[derive(Deserialize)]
    #[serde(deny_unknown_fields)]
    struct Shorthands {
        #[serde(default)]
        lshape: Option<LShapeParams>,
        #[serde(default)]
        octagon: Option<serde_json::Value>,
        #[serde(default)]
        origami: Option<OrigamiParams>,
    }
    if let Ok(sh) = serde_json::from_str::<Shorthands>(text) {
        if let Some(p) = sh.lshape {
            return build_lshape(p.a, p.b);
        }
        if sh.octagon.is_some() {
            return Ok(build_regular_octagon());
        }
        if let Some(p) = sh.origami {
            return build_origami(&p.h, &p.v);
        }
        return Err(Error::invalid_parameter(
            "surface file matches no builder shorthand and no explicit format",
        ));
    }
    Ok(serde_json::from_str::<TranslationSurface>(text)?)
}

pub fn to_json(s: &TranslationSurface) -> Result<String> {
    Ok(serde_json::to_string_pretty(s)?)
}
