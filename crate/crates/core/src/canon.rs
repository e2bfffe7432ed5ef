//! Canonical forms and translation equivalence.
//!
//! A translation surface has no preferred triangle labeling, and when a
//! Delaunay cell is cocircular (a square, the regular octagon) it has no
//! preferred triangulation either. Canonicalization quotients both choices
//! out: enumerate every Delaunay-realizable triangulation reachable by
//! flipping degenerate edges, serialize each one from every possible root
//! half-edge, and keep the lexicographically smallest token stream. Two
//! surfaces are translation-equivalent exactly when their triangulations
//! admit a vector-preserving relabeling, which `match_charts` searches for
//! directly; the serialized form feeds a stable 64-bit chart id.

use std::collections::{HashSet, VecDeque};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::geom;
use crate::surface::TranslationSurface;
use crate::tri::{self, next, prev, Tri};

/// Largest edge length; the reference scale for quantization and matching.
pub fn tri_scale(t: &Tri) -> f64 {
    t.vecs
        .iter()
        .map(|v| geom::norm(*v))
        .fold(0.0f64, f64::max)
}

/// Quantization step for coordinates living at the given scale. Snapping
/// the scale to a power of two keeps the quantum stable under small
/// perturbations of the surface (it only moves when the scale roughly
/// doubles or halves, not continuously).
pub fn quantum(tol: f64, scale: f64) -> f64 {
    if scale <= 0.0 || !scale.is_finite() {
        return tol;
    }
    tol * scale.log2().round().exp2()
}

/// Breadth-first serialization of a triangulation rooted at `root`.
///
/// Triangles are labeled in discovery order, slots aligned so the entry
/// half-edge of each triangle comes first. The stream holds, per canonical
/// slot, the canonical index of its twin and the quantized edge vector.
/// For a fixed quantum the stream is a complete invariant of the rooted
/// labeled triangulation, so the minimum over roots is root-free.
pub fn serialize_rooted(t: &Tri, root: u32, q: f64) -> Vec<i64> {
    let n = t.vecs.len();
    let mut canon = vec![u32::MAX; n]; // original slot -> canonical slot
    let mut orig = vec![u32::MAX; n]; // canonical slot -> original slot
    let mut assigned = 0u32;
    let assign = |e: u32, canon: &mut [u32], orig: &mut [u32], assigned: &mut u32| {
        for (k, h) in [e, next(e), prev(e)].into_iter().enumerate() {
            canon[h as usize] = *assigned + k as u32;
            orig[(*assigned + k as u32) as usize] = h;
        }
        *assigned += 3;
    };
    assign(root, &mut canon, &mut orig, &mut assigned);
    let mut cursor = 0u32;
    while cursor < assigned {
        let h = orig[cursor as usize];
        let o = t.opp[h as usize];
        if canon[o as usize] == u32::MAX {
            assign(o, &mut canon, &mut orig, &mut assigned);
        }
        cursor += 1;
    }
    debug_assert_eq!(assigned as usize, n, "triangulation must be connected");
    let mut out = Vec::with_capacity(3 * n);
    for slot in 0..n {
        let h = orig[slot] as usize;
        out.push(canon[t.opp[h] as usize] as i64);
        out.push((t.vecs[h][0] / q).round() as i64);
        out.push((t.vecs[h][1] / q).round() as i64);
    }
    out
}

/// Smallest serialization over all roots: invariant under relabeling.
pub fn min_serialization(t: &Tri, q: f64) -> Vec<i64> {
    (0..t.vecs.len() as u32)
        .map(|root| serialize_rooted(t, root, q))
        .min()
        .expect("triangulation has at least one half-edge")
}

/// All triangulations reachable from `t` by flipping edges whose incircle
/// margin is within `slack` (degenerate or nearly so). For an exactly
/// cocircular Delaunay cell this enumerates every triangulation of the
/// cell; with a looser slack it also reaches triangulations that become
/// Delaunay after a perturbation of that order. Breadth-first, deduplicated
/// by canonical serialization, capped by `budgets.degenerate_variants`.
pub fn delaunay_variants(t: &Tri, slack: f64, cfg: &Config) -> Result<Vec<Tri>> {
    let q = quantum(cfg.tol.geom, tri_scale(t));
    let mut seen: HashSet<Vec<i64>> = HashSet::new();
    let mut queue: VecDeque<Tri> = VecDeque::new();
    let mut out: Vec<Tri> = Vec::new();
    seen.insert(min_serialization(t, q));
    queue.push_back(t.clone());
    while let Some(cur) = queue.pop_front() {
        out.push(cur.clone());
        for h in 0..cur.vecs.len() as u32 {
            let g = cur.opp[h as usize];
            if h > g || g / 3 == h / 3 {
                continue;
            }
            if tri::delaunay_margin(&cur, h).abs() > slack {
                continue;
            }
            let mut flipped = cur.clone();
            if tri::flip(&mut flipped, h).is_err() {
                continue; // quad not strictly convex; flip inadmissible
            }
            flipped.rebuild_vertices();
            let key = min_serialization(&flipped, q);
            if seen.insert(key) {
                if seen.len() as u64 > cfg.budgets.degenerate_variants {
                    return Err(Error::budget("degenerate-variants", seen.len() as u64));
                }
                queue.push_back(flipped);
            }
        }
    }
    Ok(out)
}

/// Canonical form of a triangulated surface: the smallest serialization
/// over every degenerate-flip variant and every root.
pub fn canonical_form_tri(t: &Tri, cfg: &Config) -> Result<Vec<i64>> {
    canonical_form_tri_q(t, quantum(cfg.tol.geom, tri_scale(t)), cfg)
}

/// Same, at a caller-chosen quantum. Forms of different surfaces are only
/// comparable when computed at the same quantum, so batch comparisons
/// should derive one quantum from the largest scale in the batch and pass
/// it here.
pub fn canonical_form_tri_q(t: &Tri, q: f64, cfg: &Config) -> Result<Vec<i64>> {
    delaunay_variants(t, cfg.tol.cocircular, cfg)?
        .iter()
        .map(|v| min_serialization(v, q))
        .min()
        .ok_or_else(|| Error::NumericalDegeneracy("no triangulation variants".into()))
}

pub fn canonical_form(s: &TranslationSurface, cfg: &Config) -> Result<Vec<i64>> {
    canonical_form_tri(&tri::delaunay(s, cfg)?, cfg)
}

/// Stable 64-bit identifier of the canonical form (FNV-1a over the token
/// stream). Equal for translation-equivalent surfaces of equal scale;
/// collisions between distinct surfaces are possible in principle but not
/// a correctness concern for reporting and deduplication.
pub fn chart_id_tri(t: &Tri, cfg: &Config) -> Result<u64> {
    Ok(fnv1a(&canonical_form_tri(t, cfg)?))
}

pub fn chart_id(s: &TranslationSurface, cfg: &Config) -> Result<u64> {
    Ok(fnv1a(&canonical_form(s, cfg)?))
}

fn fnv1a(tokens: &[i64]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &x in tokens {
        for b in x.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// A vector-preserving relabeling between two triangulations.
#[derive(Debug, Clone)]
pub struct ChartMatch {
    /// Half-edge map: slot `h` of the first triangulation corresponds to
    /// slot `map[h]` of `b`.
    pub map: Vec<u32>,
    /// The flip variant of the second triangulation that realized the
    /// match (its slots are what `map` points into).
    pub b: Tri,
}

/// Search for a relabeling of `b` (allowing flips of edges within `slack`
/// of degenerate) carrying each half-edge of `a` to one of `b` with the
/// same combinatorics and an edge vector within `vec_tol`. Returns the
/// first match in deterministic order, or `None`.
///
/// `a` is matched as given: when the two surfaces differ by at most
/// `vec_tol`, any triangulation that is Delaunay for `a` is within-`slack`
/// Delaunay for `b` (margins are scale-free and move by the order of the
/// relative perturbation), so flip variants on the `b` side alone suffice
/// as long as `slack` dominates the perturbation.
pub fn match_charts(
    a: &Tri,
    b: &Tri,
    vec_tol: f64,
    slack: f64,
    cfg: &Config,
) -> Result<Option<ChartMatch>> {
    if a.vecs.len() != b.vecs.len() || a.mark_regular != b.mark_regular {
        return Ok(None);
    }
    // The shortest edge of a Delaunay triangulation is the surface's
    // shortest saddle connection, so it is flip-invariant and must agree.
    let min_len = |t: &Tri| {
        t.vecs
            .iter()
            .map(|v| geom::norm(*v))
            .fold(f64::INFINITY, f64::min)
    };
    if (min_len(a) - min_len(b)).abs() > 4.0 * vec_tol {
        return Ok(None);
    }
    for vb in delaunay_variants(b, slack, cfg)? {
        for root in 0..vb.vecs.len() as u32 {
            if let Some(map) = aligned_map(a, &vb, root, vec_tol) {
                return Ok(Some(ChartMatch { map, b: vb }));
            }
        }
    }
    Ok(None)
}

/// Lockstep breadth-first walk pairing slot 0 of `a` with `root_b` of `b`.
/// Succeeds when the pairing extends to a bijection with every paired edge
/// vector agreeing within `vec_tol`.
fn aligned_map(a: &Tri, b: &Tri, root_b: u32, vec_tol: f64) -> Option<Vec<u32>> {
    let n = a.vecs.len();
    let mut map = vec![u32::MAX; n];
    let mut rmap = vec![u32::MAX; n];
    let mut queue: VecDeque<u32> = VecDeque::new();
    let pair_triangle = |x: u32,
                             y: u32,
                             map: &mut [u32],
                             rmap: &mut [u32],
                             queue: &mut VecDeque<u32>|
     -> bool {
        for (sa, sb) in [(x, y), (next(x), next(y)), (prev(x), prev(y))] {
            if geom::norm(geom::sub(a.vecs[sa as usize], b.vecs[sb as usize])) > vec_tol {
                return false;
            }
            map[sa as usize] = sb;
            rmap[sb as usize] = sa;
            queue.push_back(sa);
        }
        true
    };
    if !pair_triangle(0, root_b, &mut map, &mut rmap, &mut queue) {
        return None;
    }
    while let Some(h) = queue.pop_front() {
        let oa = a.opp[h as usize];
        let ob = b.opp[map[h as usize] as usize];
        match (map[oa as usize], rmap[ob as usize]) {
            (u32::MAX, u32::MAX) => {
                if !pair_triangle(oa, ob, &mut map, &mut rmap, &mut queue) {
                    return None;
                }
            }
            (m, r) => {
                if m != ob || r != oa {
                    return None;
                }
            }
        }
    }
    if map.iter().any(|&m| m == u32::MAX) {
        return None; // disconnected input; nothing sensible to report
    }
    Some(map)
}

/// Whether two surfaces differ by a relabeling of cut polygons alone, i.e.
/// are the same point of the moduli space of translation surfaces.
pub fn translation_equivalent(
    a: &TranslationSurface,
    b: &TranslationSurface,
    cfg: &Config,
) -> Result<bool> {
    translation_equivalent_tri(&tri::delaunay(a, cfg)?, &tri::delaunay(b, cfg)?, cfg)
}

/// Same test starting from Delaunay triangulations (as produced by
/// `tri::delaunay` or the period-chart flows).
pub fn translation_equivalent_tri(ta: &Tri, tb: &Tri, cfg: &Config) -> Result<bool> {
    let scale = tri_scale(ta).max(tri_scale(tb));
    let vec_tol = cfg.tol.geom * scale.max(1.0);
    Ok(match_charts(ta, tb, vec_tol, cfg.tol.cocircular, cfg)?.is_some())
}
