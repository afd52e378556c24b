use nalgebra::{Point2, Vector2};

use super::GeometryError;
use crate::model::{Curve, CurveKind, GridCoord, Loop};

/// Largest angular step used by automatic arc sampling, in radians.
pub const MAX_ARC_STEP: f64 = 0.1;
pub const MIN_ARC_SEGMENTS: usize = 8;

/// How many segments to sample arcs and circles with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Segments {
    /// `max(8, ceil(angle / 0.1))`.
    #[default]
    Auto,
    Fixed(usize),
}

impl Segments {
    fn for_angle(self, angle: f64) -> Result<usize, GeometryError> {
        match self {
            Segments::Auto => Ok(((angle / MAX_ARC_STEP).ceil() as usize).max(MIN_ARC_SEGMENTS)),
            Segments::Fixed(n) if n >= MIN_ARC_SEGMENTS => Ok(n),
            Segments::Fixed(n) => Err(GeometryError::TooFewSegments(n)),
        }
    }
}

/// Ordered 2D points in grid units.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyline2D {
    pub points: Vec<Point2<f64>>,
}

impl Polyline2D {
    pub fn is_closed(&self) -> bool {
        self.points.len() > 1 && self.points.first() == self.points.last()
    }
}

pub fn grid_point(c: GridCoord) -> Point2<f64> {
    Point2::new(f64::from(c.x), f64::from(c.y))
}

/// Center of the circle through three points, or `None` when they are
/// (nearly) collinear.
pub fn circumcenter(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> Option<Point2<f64>> {
    let ab = b - a;
    let ac = c - a;
    let d = 2.0 * (ab.x * ac.y - ab.y * ac.x);
    let scale = ab.norm_squared().max(ac.norm_squared());
    if scale == 0.0 || d.abs() <= 1e-12 * scale {
        return None;
    }
    let ux = (ac.y * ab.norm_squared() - ab.y * ac.norm_squared()) / d;
    let uy = (ab.x * ac.norm_squared() - ac.x * ab.norm_squared()) / d;
    Some(a + Vector2::new(ux, uy))
}

fn angle_of(center: Point2<f64>, p: Point2<f64>) -> f64 {
    (p.y - center.y).atan2(p.x - center.x)
}

fn ccw_delta(from: f64, to: f64) -> f64 {
    (to - from).rem_euclid(std::f64::consts::TAU)
}

fn sample(center: Point2<f64>, radius: f64, start: f64, sweep: f64, n: usize) -> Vec<Point2<f64>> {
    (0..=n)
        .map(|i| {
            let t = start + sweep * (i as f64) / (n as f64);
            center + Vector2::new(t.cos(), t.sin()) * radius
        })
        .collect()
}

/// Circle fitted to four points: centroid and mean distance to it.
pub fn fit_circle(points: &[GridCoord]) -> (Point2<f64>, f64) {
    let pts: Vec<Point2<f64>> = points.iter().map(|&p| grid_point(p)).collect();
    let n = pts.len() as f64;
    let center = Point2::from(pts.iter().map(|p| p.coords).sum::<Vector2<f64>>() / n);
    let radius = pts.iter().map(|p| (p - center).norm()).sum::<f64>() / n;
    (center, radius)
}

/// Samples one curve. Lines and arcs end at `next_start`; circles ignore it.
pub fn tessellate_curve(
    c: &Curve,
    next_start: GridCoord,
    segments: Segments,
) -> Result<Polyline2D, GeometryError> {
    if c.points.len() != c.kind.point_count() {
        return Err(GeometryError::PointCount);
    }
    let end = grid_point(next_start);
    let points = match c.kind {
        CurveKind::Line => vec![grid_point(c.points[0]), end],
        CurveKind::Arc => {
            let start = grid_point(c.points[0]);
            let mid = grid_point(c.points[1]);
            let center = circumcenter(start, mid, end).ok_or(GeometryError::DegenerateArc)?;
            let radius = (start - center).norm();
            let a0 = angle_of(center, start);
            let ccw_sweep = ccw_delta(a0, angle_of(center, end));
            let sweep = if ccw_delta(a0, angle_of(center, mid)) < ccw_sweep {
                ccw_sweep
            } else {
                ccw_sweep - std::f64::consts::TAU
            };
            let n = segments.for_angle(sweep.abs())?;
            let mut pts = sample(center, radius, a0, sweep, n);
            // Pin the endpoints to the stored grid points.
            pts[0] = start;
            pts[n] = end;
            pts
        }
        CurveKind::Circle => {
            let (center, radius) = fit_circle(&c.points);
            if radius <= 0.0 {
                return Err(GeometryError::DegenerateCircle);
            }
            let n = segments.for_angle(std::f64::consts::TAU)?;
            let a0 = angle_of(center, grid_point(c.points[0]));
            let mut pts = sample(center, radius, a0, std::f64::consts::TAU, n);
            pts[n] = pts[0];
            pts
        }
    };
    Ok(Polyline2D { points })
}

/// Closed polyline for a whole loop; each curve ends where the next begins.
pub fn tessellate_loop(l: &Loop, segments: Segments) -> Result<Polyline2D, GeometryError> {
    let n = l.curves.len();
    if n == 0 {
        return Err(GeometryError::EmptyLoop);
    }
    let mut points: Vec<Point2<f64>> = Vec::new();
    for (i, c) in l.curves.iter().enumerate() {
        let next = l.curves[(i + 1) % n].start().ok_or(GeometryError::PointCount)?;
        let piece = tessellate_curve(c, next, segments)?;
        let skip = usize::from(!points.is_empty());
        points.extend(piece.points.into_iter().skip(skip));
    }
    if points.first() != points.last() {
        let first = points[0];
        points.push(first);
    }
    Ok(Polyline2D { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Circumcenter from the intersection of two perpendicular bisectors,
    /// solved as a 2x2 linear system.
    fn bisector_center(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> Point2<f64> {
        // (b - a) . x = (|b|^2 - |a|^2) / 2, same for (c - a).
        let m = nalgebra::Matrix2::new(b.x - a.x, b.y - a.y, c.x - a.x, c.y - a.y);
        let rhs = Vector2::new(
            (b.coords.norm_squared() - a.coords.norm_squared()) / 2.0,
            (c.coords.norm_squared() - a.coords.norm_squared()) / 2.0,
        );
        Point2::from(m.lu().solve(&rhs).unwrap())
    }

    #[test]
    fn line_goes_to_next_start() {
        let pl = tessellate_curve(&Curve::line((0, 0)), GridCoord { x: 10, y: 0 }, Segments::Auto).unwrap();
        assert_eq!(pl.points, vec![Point2::new(0.0, 0.0), Point2::new(10.0, 0.0)]);
    }

    #[test]
    fn arc_points_are_equidistant_from_circumcenter() {
        let c = Curve::arc((0, 0), (31, 31));
        let pl = tessellate_curve(&c, GridCoord { x: 63, y: 0 }, Segments::Auto).unwrap();
        let center = bisector_center(Point2::new(0.0, 0.0), Point2::new(31.0, 31.0), Point2::new(63.0, 0.0));
        let r = (Point2::new(0.0, 0.0) - center).norm();
        for p in &pl.points {
            assert!(((p - center).norm() - r).abs() <= 1e-9 * r);
        }
        // Passes near the stored midpoint and keeps to the upper side.
        assert!(pl.points.iter().all(|p| p.y >= -1e-9));
        assert_eq!(*pl.points.last().unwrap(), Point2::new(63.0, 0.0));
    }

    #[test]
    fn arc_direction_follows_midpoint() {
        // Same endpoints, midpoint below: the arc bulges downward.
        let pl = tessellate_curve(&Curve::arc((0, 40), (31, 20)), GridCoord { x: 62, y: 40 }, Segments::Fixed(16)).unwrap();
        assert_eq!(pl.points.len(), 17);
        assert!(pl.points.iter().all(|p| p.y <= 40.0 + 1e-9));
        let min_y = pl.points.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        assert!((min_y - 20.0).abs() < 0.5);
    }

    #[test]
    fn auto_segments_scale_with_angle() {
        // Semicircle: pi / 0.1 rounds up to 32 segments.
        let pl = tessellate_curve(&Curve::arc((10, 30), (30, 50)), GridCoord { x: 50, y: 30 }, Segments::Auto).unwrap();
        assert_eq!(pl.points.len(), 33);
        let small = tessellate_curve(&Curve::arc((0, 0), (31, 1)), GridCoord { x: 62, y: 0 }, Segments::Auto).unwrap();
        assert_eq!(small.points.len(), 9);
    }

    #[test]
    fn collinear_arc_is_degenerate() {
        let c = Curve::arc((0, 0), (5, 5));
        assert_eq!(tessellate_curve(&c, GridCoord { x: 10, y: 10 }, Segments::Auto), Err(GeometryError::DegenerateArc));
        assert_eq!(
            tessellate_curve(&Curve::arc((0, 0), (5, 5)), GridCoord { x: 0, y: 0 }, Segments::Auto),
            Err(GeometryError::DegenerateArc)
        );
        assert_eq!(tessellate_curve(&Curve::arc((0, 0), (5, 9)), GridCoord { x: 10, y: 0 }, Segments::Fixed(4)), Err(GeometryError::TooFewSegments(4)));
    }

    #[test]
    fn four_point_circle_fit() {
        let c = Curve::circle([(31, 15), (47, 31), (31, 47), (15, 31)]);
        let (center, r) = fit_circle(&c.points);
        assert_eq!(center, Point2::new(31.0, 31.0));
        assert_eq!(r, 16.0);
        let pl = tessellate_curve(&c, GridCoord { x: 0, y: 0 }, Segments::Fixed(32)).unwrap();
        assert!(pl.is_closed());
        assert_eq!(pl.points.len(), 33);
        for p in &pl.points {
            assert!(((p - center).norm() - 16.0).abs() < 1e-9);
        }
    }

    #[test]
    fn loop_closes_via_wraparound() {
        let l = Loop::polygon(&[(0, 0), (10, 0), (10, 10), (0, 10)]);
        let pl = tessellate_loop(&l, Segments::Auto).unwrap();
        assert!(pl.is_closed());
        assert_eq!(pl.points.len(), 5);
    }
}
