//! Planar geometry helpers for lane polylines and footprints.
//!
//! Everything here works in the x/y plane; z is carried along on polylines
//! but ignored for areas, containment and projections.

pub type Point3 = [f64; 3];
pub type Point2 = [f64; 2];

#[inline]
pub fn xy(p: &Point3) -> Point2 {
    [p[0], p[1]]
}

pub fn polyline_length(points: &[Point3]) -> f64 {
    points
        .windows(2)
        .map(|w| {
            let d = [w[1][0] - w[0][0], w[1][1] - w[0][1], w[1][2] - w[0][2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
        })
        .sum()
}

/// Closest point of a polyline to a query point, in arc-length terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the foot point from the first vertex.
    pub s: f64,
    /// Unsigned planar distance from the query to the foot point.
    pub lateral: f64,
    /// Heading of the segment carrying the foot point, radians.
    pub heading: f64,
    pub foot: Point3,
}

pub fn project_onto_polyline(points: &[Point3], query: Point2) -> Option<Projection> {
    let mut best: Option<Projection> = None;
    let mut acc = 0.0;
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let seg_len = (seg[0] * seg[0] + seg[1] * seg[1] + seg[2] * seg[2]).sqrt();
        let planar2 = seg[0] * seg[0] + seg[1] * seg[1];
        let t = if planar2 > 0.0 {
            (((query[0] - a[0]) * seg[0] + (query[1] - a[1]) * seg[1]) / planar2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let foot = [a[0] + t * seg[0], a[1] + t * seg[1], a[2] + t * seg[2]];
        let lateral = ((query[0] - foot[0]).powi(2) + (query[1] - foot[1]).powi(2)).sqrt();
        let candidate = Projection {
            s: acc + t * seg_len,
            lateral,
            heading: seg[1].atan2(seg[0]),
            foot,
        };
        // strict comparison keeps the earliest segment on ties
        if best.map_or(true, |b| candidate.lateral < b.lateral) {
            best = Some(candidate);
        }
        acc += seg_len;
    }
    best
}

/// Point and heading at arc length `s` along a polyline (clamped to its ends).
pub fn point_at(points: &[Point3], s: f64) -> (Point3, f64) {
    let mut remaining = s.max(0.0);
    let mut last = (points[0], 0.0);
    for w in points.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
        let seg_len = (seg[0] * seg[0] + seg[1] * seg[1] + seg[2] * seg[2]).sqrt();
        let heading = seg[1].atan2(seg[0]);
        if remaining <= seg_len && seg_len > 0.0 {
            let t = remaining / seg_len;
            return (
                [a[0] + t * seg[0], a[1] + t * seg[1], a[2] + t * seg[2]],
                heading,
            );
        }
        remaining -= seg_len;
        last = (b, heading);
    }
    last
}

/// Smallest absolute difference between two headings, in [0, pi].
pub fn heading_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}

/// Closed ring formed by the left boundary followed by the reversed right boundary.
pub fn lane_footprint(left: &[Point3], right: &[Point3]) -> Vec<Point2> {
    left.iter()
        .map(xy)
        .chain(right.iter().rev().map(xy))
        .collect()
}

/// Signed shoelace area; positive for counter-clockwise rings.
pub fn signed_area(ring: &[Point2]) -> f64 {
    let n = ring.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let p = ring[i];
        let q = ring[(i + 1) % n];
        acc += p[0] * q[1] - q[0] * p[1];
    }
    0.5 * acc
}

/// Even-odd ray casting containment test. Points on the boundary may go either way.
pub fn point_in_polygon(ring: &[Point2], p: Point2) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n.wrapping_sub(1);
    for i in 0..n {
        let (a, b) = (ring[i], ring[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland-Hodgman clip of `subject` by a counter-clockwise convex `clip` polygon.
fn clip_convex(subject: &[Point2], clip: &[Point2]) -> Vec<Point2> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for k in 0..input.len() {
            let cur = input[k];
            let prev = input[(k + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in != prev_in {
                let d1 = cross(a, b, prev);
                let d2 = cross(a, b, cur);
                let t = d1 / (d1 - d2);
                output.push([
                    prev[0] + t * (cur[0] - prev[0]),
                    prev[1] + t * (cur[1] - prev[1]),
                ]);
            }
            if cur_in {
                output.push(cur);
            }
        }
    }
    output
}

/// Fan triangles of a ring around its first vertex, each with the sign of its orientation.
fn signed_fan(ring: &[Point2]) -> Vec<([Point2; 3], f64)> {
    let apex = ring[0];
    ring.windows(2)
        .skip(1)
        .filter_map(|w| {
            let area = 0.5 * cross(apex, w[0], w[1]);
            if area.abs() < 1e-15 {
                None
            } else if area > 0.0 {
                Some(([apex, w[0], w[1]], 1.0))
            } else {
                Some(([apex, w[1], w[0]], -1.0))
            }
        })
        .collect()
}

/// Area of the intersection of two simple polygons (either orientation).
///
/// The indicator of a simple polygon equals the signed sum of the indicators of
/// its fan triangles almost everywhere, so the overlap integral reduces to
/// pairwise convex triangle clips.
pub fn intersection_area(a: &[Point2], b: &[Point2]) -> f64 {
    if a.len() < 3 || b.len() < 3 {
        return 0.0;
    }
    let fa = signed_fan(a);
    let fb = signed_fan(b);
    let orient = signed_area(a).signum() * signed_area(b).signum();
    let mut total = 0.0;
    for (ta, sa) in &fa {
        for (tb, sb) in &fb {
            let clipped = clip_convex(ta, tb);
            if clipped.len() >= 3 {
                total += sa * sb * signed_area(&clipped).abs();
            }
        }
    }
    (total * orient).max(0.0)
}
