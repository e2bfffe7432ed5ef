//! Small planar-geometry kernel: everything downstream works on `[f64; 2]`
//! edge vectors, so the primitives live here as free functions.

pub type V2 = [f64; 2];

pub fn add(a: V2, b: V2) -> V2 {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn sub(a: V2, b: V2) -> V2 {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn neg(a: V2) -> V2 {
    [-a[0], -a[1]]
}

pub fn scale(a: V2, k: f64) -> V2 {
    [k * a[0], k * a[1]]
}

pub fn dot(a: V2, b: V2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// z-component of the 3D cross product; positive when `b` lies
/// counterclockwise of `a`.
pub fn cross(a: V2, b: V2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm_sq(a: V2) -> f64 {
    dot(a, a)
}

pub fn norm(a: V2) -> f64 {
    norm_sq(a).sqrt()
}

pub fn approx_eq(a: V2, b: V2, tol: f64) -> bool {
    (a[0] - b[0]).abs() <= tol && (a[1] - b[1]).abs() <= tol
}

/// Counterclockwise angle from `a` to `b` in [0, 2pi).
pub fn angle_ccw(a: V2, b: V2) -> f64 {
    let ang = cross(a, b).atan2(dot(a, b));
    if ang < 0.0 {
        ang + std::f64::consts::TAU
    } else {
        ang
    }
}

/// Distance from the origin to the closed segment [a, b].
pub fn dist_origin_segment(a: V2, b: V2) -> f64 {
    let ab = sub(b, a);
    let len_sq = norm_sq(ab);
    if len_sq == 0.0 {
        return norm(a);
    }
    let t = (-dot(a, ab) / len_sq).clamp(0.0, 1.0);
    norm(add(a, scale(ab, t)))
}

/// In-circle predicate: strictly positive when `s` lies inside the
/// circumcircle of the counterclockwise triangle (p, q, r), negative when
/// outside, near zero when the four points are cocircular.
pub fn incircle(p: V2, q: V2, r: V2, s: V2) -> f64 {
    let ax = p[0] - s[0];
    let ay = p[1] - s[1];
    let bx = q[0] - s[0];
    let by = q[1] - s[1];
    let cx = r[0] - s[0];
    let cy = r[1] - s[1];
    let a2 = ax * ax + ay * ay;
    let b2 = bx * bx + by * by;
    let c2 = cx * cx + cy * cy;
    ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx)
}

/// Lexicographic comparison with total order on floats, used wherever
/// geometric output must be deterministically sorted.
pub fn cmp_v2(a: V2, b: V2) -> std::cmp::Ordering {
    a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1]))
}
