//! Exact overlap of yaw-rotated boxes: ground-plane polygon clipping times
//! vertical-extent overlap.

use std::cmp::Ordering;

use super::OrientedBox3;

type P2 = [f64; 2];

fn cross(o: P2, a: P2, b: P2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn polygon_area(poly: &[P2]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut twice = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        twice += a[0] * b[1] - b[0] * a[1];
    }
    twice.abs() / 2.0
}

fn segment_line_intersection(p: P2, q: P2, a: P2, b: P2) -> P2 {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Sutherland–Hodgman: clips `subject` against the convex counter-clockwise
/// polygon `clip`.
fn clip_convex(subject: &[P2], clip: &[P2]) -> Vec<P2> {
    let mut output: Vec<P2> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= 0.0;
            let prev_in = cross(a, b, prev) >= 0.0;
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn ordered<'a>(a: &'a OrientedBox3, b: &'a OrientedBox3) -> (&'a OrientedBox3, &'a OrientedBox3) {
    let ka = a.to_array();
    let kb = b.to_array();
    let ord = ka
        .iter()
        .zip(kb.iter())
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal);
    if ord == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    }
}

/// Area of the ground-plane overlap of two boxes.
pub fn bev_intersection_area(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    // Quick reject on circumscribed circles.
    let ra = 0.5 * a.size().l.hypot(a.size().w);
    let rb = 0.5 * b.size().l.hypot(b.size().w);
    let dc = (a.center().x - b.center().x).hypot(a.center().y - b.center().y);
    if dc > ra + rb {
        return 0.0;
    }
    // Clip in a fixed pair order so the result is exactly symmetric.
    let (first, second) = ordered(a, b);
    polygon_area(&clip_convex(&first.bev_corners(), &second.bev_corners()))
}

/// Volumetric intersection over union, in `[0, 1]`.
pub fn iou_3d(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    if a == b {
        return 1.0;
    }
    let (a0, a1) = a.z_range();
    let (b0, b1) = b.z_range();
    let dz = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Ground-plane intersection over union, ignoring heights.
pub fn iou_bev(a: &OrientedBox3, b: &OrientedBox3) -> f64 {
    if a == b {
        return 1.0;
    }
    let inter = bev_intersection_area(a, b);
    let area_a = a.size().l * a.size().w;
    let area_b = b.size().l * b.size().w;
    let union = area_a + area_b - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BoxSize, Point3};
    use std::f64::consts::{FRAC_PI_4, PI};

    fn boxed(c: [f64; 3], s: [f64; 3], h: f64) -> OrientedBox3 {
        OrientedBox3::new(Point3::from_array(c), BoxSize::new(s[0], s[1], s[2]), h).unwrap()
    }

    #[test]
    fn identical_is_one() {
        let a = boxed([1.0, 2.0, 0.5], [1.6, 1.5, 3.9], 0.3);
        assert_eq!(iou_3d(&a, &a), 1.0);
    }

    #[test]
    fn far_apart_is_zero() {
        let a = boxed([0.0; 3], [1.0; 3], 0.0);
        let b = boxed([100.0, 0.0, 0.0], [1.0; 3], 0.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
    }

    #[test]
    fn half_offset_unit_cubes() {
        // Overlap 0.5, union 1.5.
        let a = boxed([0.0; 3], [1.0; 3], 0.0);
        let b = boxed([0.5, 0.0, 0.0], [1.0; 3], 0.0);
        assert!((iou_3d(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn rotated_square_inside_square() {
        // Unit square rotated 45 degrees inside a 2x2 square: fully contained.
        let a = boxed([0.0; 3], [2.0, 1.0, 2.0], 0.0);
        let b = boxed([0.0; 3], [1.0, 1.0, 1.0], FRAC_PI_4);
        assert!((bev_intersection_area(&a, &b) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn octagon_overlap() {
        // Two unit squares, one rotated 45 degrees: overlap is a regular
        // octagon of area 2 (sqrt 2 - 1).
        let a = boxed([0.0; 3], [1.0; 3], 0.0);
        let b = boxed([0.0; 3], [1.0; 3], FRAC_PI_4);
        let expected = 2.0 * (2f64.sqrt() - 1.0);
        assert!((bev_intersection_area(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn half_turn_is_same_box() {
        let a = boxed([0.0; 3], [1.0, 1.0, 2.0], 0.0);
        let b = boxed([0.0; 3], [1.0, 1.0, 2.0], PI);
        assert!((iou_3d(&a, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_vertical_overlap() {
        let a = boxed([0.0; 3], [1.0; 3], 0.0);
        let b = boxed([0.0, 0.0, 1.5], [1.0; 3], 0.0);
        assert_eq!(iou_3d(&a, &b), 0.0);
    }
}
