//! Planar polyline helpers shared by contour validation and meshing.

use nalgebra::Vector2;

pub type Vec2 = Vector2<f64>;

/// Signed shoelace area of a closed polyline (positive when counterclockwise).
pub fn signed_area(poly: &[Vec2]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        acc += a.x * b.y - b.x * a.y;
    }
    0.5 * acc
}

/// Area centroid of a closed, non-degenerate polyline.
pub fn centroid(poly: &[Vec2]) -> Vec2 {
    let n = poly.len();
    let area = signed_area(poly);
    if area.abs() < f64::EPSILON {
        let sum: Vec2 = poly.iter().sum();
        return sum / n as f64;
    }
    let mut cx = 0.0;
    let mut cy = 0.0;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let cross = a.x * b.y - b.x * a.y;
        cx += (a.x + b.x) * cross;
        cy += (a.y + b.y) * cross;
    }
    Vec2::new(cx / (6.0 * area), cy / (6.0 * area))
}

fn orient(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).perp(&(c - a))
}

/// Proper or touching intersection of closed segments `ab` and `cd`.
pub fn segments_intersect(a: Vec2, b: Vec2, c: Vec2, d: Vec2) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |p: Vec2, q: Vec2, r: Vec2| {
        r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
    };
    (d1 == 0.0 && on(c, d, a))
        || (d2 == 0.0 && on(c, d, b))
        || (d3 == 0.0 && on(a, b, c))
        || (d4 == 0.0 && on(a, b, d))
}

/// True when no two non-adjacent edges of the closed polyline touch.
pub fn is_simple(poly: &[Vec2]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if a == b {
            return false;
        }
        for j in (i + 1)..n {
            // adjacent edges share a vertex
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let c = poly[j];
            let d = poly[(j + 1) % n];
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

/// Even-odd point-in-polygon test. Points on the boundary may go either way.
pub fn contains_point(poly: &[Vec2], p: Vec2) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = poly[i];
        let b = poly[j];
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) / (b.y - a.y) * (b.x - a.x);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// `inner` lies strictly inside `outer`: every vertex inside, no edges touching.
pub fn strictly_inside(inner: &[Vec2], outer: &[Vec2]) -> bool {
    if !inner.iter().all(|&p| contains_point(outer, p)) {
        return false;
    }
    let (n, m) = (inner.len(), outer.len());
    for i in 0..n {
        for j in 0..m {
            if segments_intersect(inner[i], inner[(i + 1) % n], outer[j], outer[(j + 1) % m]) {
                return false;
            }
        }
    }
    true
}

/// Distance along the ray `origin + t * dir` to its nearest crossing of the
/// closed polyline, if any.
pub fn ray_hit(poly: &[Vec2], origin: Vec2, dir: Vec2) -> Option<f64> {
    let n = poly.len();
    let mut best: Option<f64> = None;
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        let e = b - a;
        let denom = dir.perp(&e);
        if denom.abs() < 1e-300 {
            continue;
        }
        let w = a - origin;
        let t = w.perp(&e) / denom;
        let s = w.perp(&dir) / denom;
        if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&s) {
            best = Some(best.map_or(t, |bt: f64| bt.min(t)));
        }
    }
    best
}

/// Regular `n`-gon of radius `r` around `center`, first vertex at angle `phase`.
pub fn circle(center: Vec2, r: f64, n: usize, phase: f64) -> Vec<Vec2> {
    (0..n)
        .map(|k| {
            let th = phase + std::f64::consts::TAU * k as f64 / n as f64;
            center + Vec2::new(r * th.cos(), r * th.sin())
        })
        .collect()
}
