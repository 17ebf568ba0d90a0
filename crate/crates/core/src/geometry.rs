//! Rectangle footprints and the heading-aware safety margins between them.
//!
//! [`mtv_margin`] is the exact (non-differentiable) MTV-based margin built on
//! separating-axis projections. [`c2c_margin`] is the enclosing-circle
//! baseline, and [`exact_intersect`] is an independent intersection test that
//! does not rely on projections at all.

use nalgebra::Vector2;

use crate::error::{Error, Result};
use crate::wrap_angle;

pub type Point = Vector2<f64>;

/// Pose and footprint of a rectangular robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedRectangle {
    center_x: f64,
    center_y: f64,
    heading: f64,
    length: f64,
    width: f64,
}

impl OrientedRectangle {
    pub fn new(center_x: f64, center_y: f64, heading: f64, length: f64, width: f64) -> Result<Self> {
        // NaN fails both comparisons.
        if !(length > 0.0 && width > 0.0) {
            return Err(Error::InvalidRectangle { length, width });
        }
        Ok(Self {
            center_x,
            center_y,
            heading: wrap_angle(heading),
            length,
            width,
        })
    }

    pub fn center(&self) -> Point {
        Point::new(self.center_x, self.center_y)
    }

    pub fn heading(&self) -> f64 {
        self.heading
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    /// Unit vectors along the body x (longitudinal) and y (lateral) axes.
    pub fn axes(&self) -> [Point; 2] {
        let (s, c) = self.heading.sin_cos();
        [Point::new(c, s), Point::new(-s, c)]
    }

    /// Same footprint moved by a rigid motion: rotate by `angle` about the
    /// origin, then translate.
    pub fn transformed(&self, angle: f64, translation: Point) -> Self {
        let (s, c) = angle.sin_cos();
        let p = self.center();
        Self {
            center_x: c * p.x - s * p.y + translation.x,
            center_y: s * p.x + c * p.y + translation.y,
            heading: wrap_angle(self.heading + angle),
            ..*self
        }
    }

    pub fn translated(&self, offset: Point) -> Self {
        Self {
            center_x: self.center_x + offset.x,
            center_y: self.center_y + offset.y,
            ..*self
        }
    }
}

/// Signed margin between two rectangles together with the body axis that
/// realized it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginResult {
    pub value: f64,
    pub achieving_axis: Point,
    pub separated: bool,
}

/// Corners in counter-clockwise order, starting at the front-left corner.
pub fn rectangle_vertices(rect: &OrientedRectangle) -> [Point; 4] {
    let [ex, ey] = rect.axes();
    let hx = ex * (0.5 * rect.length);
    let hy = ey * (0.5 * rect.width);
    let c = rect.center();
    [c + hx + hy, c - hx + hy, c - hx - hy, c + hx - hy]
}

fn projection_interval(vertices: &[Point; 4], axis: &Point) -> (f64, f64) {
    vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        let p = v.dot(axis);
        (lo.min(p), hi.max(p))
    })
}

fn interval_gap(a: (f64, f64), b: (f64, f64)) -> f64 {
    // Positive distance when disjoint, minus the overlapping length otherwise.
    a.0.max(b.0) - a.1.min(b.1)
}

/// Gap between the projections of both rectangles onto `axis`.
pub fn project_gap(rect_a: &OrientedRectangle, rect_b: &OrientedRectangle, axis: &Point) -> f64 {
    let va = rectangle_vertices(rect_a);
    let vb = rectangle_vertices(rect_b);
    interval_gap(projection_interval(&va, axis), projection_interval(&vb, axis))
}

/// Folds the two per-axis gaps of one rectangle into its distance metric.
/// Returns the metric and the index (0 = x, 1 = y) of the deciding axis.
fn fold_axis_gaps(gx: f64, gy: f64) -> (f64, usize) {
    if gx > 0.0 && gy > 0.0 {
        let axis = if gy > gx { 1 } else { 0 };
        ((gx * gx + gy * gy).sqrt(), axis)
    } else if gx < 0.0 && gy < 0.0 {
        if gy.abs() < gx.abs() {
            (-gy.abs(), 1)
        } else {
            (-gx.abs(), 0)
        }
    } else if gy > gx {
        (gy, 1)
    } else {
        (gx, 0)
    }
}

/// Folds the per-rectangle metrics. Returns the margin and whether rectangle
/// `j` was the deciding one.
fn fold_rectangle_metrics(di: f64, dj: f64) -> (f64, bool) {
    if di > 0.0 && dj > 0.0 {
        if dj < di {
            (dj, true)
        } else {
            (di, false)
        }
    } else if di < 0.0 && dj < 0.0 {
        if dj.abs() < di.abs() {
            (-dj.abs(), true)
        } else {
            (-di.abs(), false)
        }
    } else if dj > di {
        (dj, true)
    } else {
        (di, false)
    }
}

/// MTV-based safety margin. Positive values are separation distances,
/// negative values are penetration depths.
///
/// Ties between axes resolve to the x axis and ties between rectangles
/// resolve to `rect_i`.
pub fn mtv_margin(rect_i: &OrientedRectangle, rect_j: &OrientedRectangle) -> MarginResult {
    let vi = rectangle_vertices(rect_i);
    let vj = rectangle_vertices(rect_j);

    let per_rect = |rect: &OrientedRectangle| {
        let axes = rect.axes();
        let gaps = axes.map(|a| interval_gap(projection_interval(&vi, &a), projection_interval(&vj, &a)));
        let (d, k) = fold_axis_gaps(gaps[0], gaps[1]);
        (d, axes[k])
    };

    let (di, axis_i) = per_rect(rect_i);
    let (dj, axis_j) = per_rect(rect_j);
    let (value, from_j) = fold_rectangle_metrics(di, dj);
    MarginResult {
        value,
        achieving_axis: if from_j { axis_j } else { axis_i },
        separated: value > 0.0,
    }
}

fn cross(o: &Point, a: &Point, b: &Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(p: &Point, q: &Point, r: &Point) -> bool {
    r.x >= p.x.min(q.x) && r.x <= p.x.max(q.x) && r.y >= p.y.min(q.y) && r.y <= p.y.max(q.y)
}

fn segments_intersect(p1: &Point, p2: &Point, q1: &Point, q2: &Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// Closed containment test for a convex CCW polygon.
fn contains_point(polygon: &[Point; 4], p: &Point) -> bool {
    (0..4).all(|k| cross(&polygon[k], &polygon[(k + 1) % 4], p) >= 0.0)
}

/// True iff the closed rectangles share at least one point. Built from
/// segment crossings and point containment only, so it can serve as an
/// independent check on [`mtv_margin`].
pub fn exact_intersect(rect_i: &OrientedRectangle, rect_j: &OrientedRectangle) -> bool {
    let vi = rectangle_vertices(rect_i);
    let vj = rectangle_vertices(rect_j);
    for a in 0..4 {
        for b in 0..4 {
            if segments_intersect(&vi[a], &vi[(a + 1) % 4], &vj[b], &vj[(b + 1) % 4]) {
                return true;
            }
        }
    }
    contains_point(&vi, &vj[0]) || contains_point(&vj, &vi[0])
}

/// Radius of the smallest circle enclosing a `length` x `width` rectangle.
pub fn enclosing_radius(length: f64, width: f64) -> f64 {
    0.5 * length.hypot(width)
}

/// Center-to-center margin: center distance minus two enclosing radii.
pub fn c2c_margin(rel_x: f64, rel_y: f64, length: f64, width: f64) -> f64 {
    rel_x.hypot(rel_y) - 2.0 * enclosing_radius(length, width)
}
