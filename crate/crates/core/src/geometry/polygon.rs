use nalgebra::Point2;

use super::tessellate::{tessellate_loop, Segments};
use super::GeometryError;
use crate::model::Face;

/// Twice the signed area of a ring (positive when counterclockwise).
fn doubled_signed_area(ring: &[Point2<f64>]) -> f64 {
    let n = ring.len();
    (0..n)
        .map(|i| {
            let a = ring[i];
            let b = ring[(i + 1) % n];
            a.x * b.y - b.x * a.y
        })
        .sum()
}

pub fn signed_area(ring: &[Point2<f64>]) -> f64 {
    doubled_signed_area(ring) / 2.0
}

fn orient(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: Point2<f64>, b: Point2<f64>, p: Point2<f64>) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Closed-segment intersection test, including touching and collinear overlap.
pub fn segments_intersect(a: Point2<f64>, b: Point2<f64>, c: Point2<f64>, d: Point2<f64>) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

/// Even-odd point-in-ring test; points on the boundary count as outside.
pub fn point_in_ring(p: Point2<f64>, ring: &[Point2<f64>]) -> bool {
    let n = ring.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let a = ring[i];
        let b = ring[j];
        if orient(a, b, p) == 0.0 && on_segment(a, b, p) {
            return false;
        }
        if (a.y > p.y) != (b.y > p.y) {
            let x = (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x;
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

fn ring_self_intersects(ring: &[Point2<f64>]) -> bool {
    let n = ring.len();
    for i in 0..n {
        let (a, b) = (ring[i], ring[(i + 1) % n]);
        for j in i + 1..n {
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            if segments_intersect(a, b, ring[j], ring[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

fn rings_intersect(r: &[Point2<f64>], s: &[Point2<f64>]) -> bool {
    let (n, m) = (r.len(), s.len());
    (0..n).any(|i| {
        (0..m).any(|j| segments_intersect(r[i], r[(i + 1) % n], s[j], s[(j + 1) % m]))
    })
}

/// Drops the closing duplicate and any repeated consecutive points.
fn open_ring(points: &[Point2<f64>]) -> Vec<Point2<f64>> {
    let mut out: Vec<Point2<f64>> = Vec::with_capacity(points.len());
    for &p in points {
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    while out.len() > 1 && out.first() == out.last() {
        out.pop();
    }
    out
}

/// A simple polygon with holes. Rings are open (no repeated closing point);
/// the outer ring is counterclockwise and holes are clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonWithHoles {
    pub outer: Vec<Point2<f64>>,
    pub holes: Vec<Vec<Point2<f64>>>,
}

impl PolygonWithHoles {
    /// Orients and checks the rings: each ring must be simple with non-zero
    /// area, holes must lie strictly inside the outer ring and not touch each
    /// other.
    pub fn new(outer: Vec<Point2<f64>>, holes: Vec<Vec<Point2<f64>>>) -> Result<Self, GeometryError> {
        let mut outer = open_ring(&outer);
        check_ring(&outer)?;
        if signed_area(&outer) < 0.0 {
            outer.reverse();
        }
        let mut oriented = Vec::with_capacity(holes.len());
        for (i, hole) in holes.iter().enumerate() {
            let mut h = open_ring(hole);
            check_ring(&h)?;
            if signed_area(&h) > 0.0 {
                h.reverse();
            }
            if !h.iter().all(|&p| point_in_ring(p, &outer)) || rings_intersect(&h, &outer) {
                return Err(GeometryError::HoleOutside(i));
            }
            for (j, other) in oriented.iter().enumerate() {
                let other: &Vec<Point2<f64>> = other;
                if rings_intersect(&h, other)
                    || h.iter().any(|&p| point_in_ring(p, other))
                    || other.iter().any(|&p| point_in_ring(p, &h))
                {
                    return Err(GeometryError::HolesOverlap(j, i));
                }
            }
            oriented.push(h);
        }
        Ok(Self { outer, holes: oriented })
    }

    pub fn area(&self) -> f64 {
        signed_area(&self.outer) + self.holes.iter().map(|h| signed_area(h)).sum::<f64>()
    }

    /// All ring vertices: outer first, then each hole.
    pub fn vertices(&self) -> Vec<Point2<f64>> {
        let mut v = self.outer.clone();
        for h in &self.holes {
            v.extend_from_slice(h);
        }
        v
    }

    /// Ring boundaries as (start, len) ranges into [`Self::vertices`].
    pub fn rings(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(0, self.outer.len())];
        let mut start = self.outer.len();
        for h in &self.holes {
            out.push((start, h.len()));
            start += h.len();
        }
        out
    }

    /// Counterclockwise triangles indexing [`Self::vertices`].
    pub fn triangulate(&self) -> Vec<[usize; 3]> {
        let verts = self.vertices();
        let hole_starts: Vec<usize> = self.rings().iter().skip(1).map(|r| r.0).collect();
        let mut idx: Vec<usize> = Vec::new();
        earcut::Earcut::new().earcut(verts.iter().map(|p| [p.x, p.y]), &hole_starts, &mut idx);
        idx.chunks_exact(3)
            .map(|t| {
                let tri = [t[0], t[1], t[2]];
                if orient(verts[tri[0]], verts[tri[1]], verts[tri[2]]) < 0.0 {
                    [tri[0], tri[2], tri[1]]
                } else {
                    tri
                }
            })
            .collect()
    }

    pub fn contains(&self, p: Point2<f64>) -> bool {
        point_in_ring(p, &self.outer) && !self.holes.iter().any(|h| point_in_ring(p, h))
    }

    pub fn map(&self, f: impl Fn(Point2<f64>) -> Point2<f64>) -> Self {
        Self {
            outer: self.outer.iter().map(|&p| f(p)).collect(),
            holes: self.holes.iter().map(|h| h.iter().map(|&p| f(p)).collect()).collect(),
        }
    }
}

fn check_ring(ring: &[Point2<f64>]) -> Result<(), GeometryError> {
    if ring.len() < 3 || signed_area(ring).abs() < 1e-12 {
        return Err(GeometryError::DegenerateLoop);
    }
    if ring_self_intersects(ring) {
        return Err(GeometryError::SelfIntersection);
    }
    Ok(())
}

/// Tessellates a face into a polygon with holes, in grid units.
pub fn face_to_polygons(f: &Face, segments: Segments) -> Result<PolygonWithHoles, GeometryError> {
    let (outer, holes) = f.loops.split_first().ok_or(GeometryError::EmptyFace)?;
    let outer = tessellate_loop(outer, segments)?.points;
    let holes = holes
        .iter()
        .map(|l| tessellate_loop(l, segments).map(|p| p.points))
        .collect::<Result<Vec<_>, _>>()?;
    PolygonWithHoles::new(outer, holes)
}

/// Sum of triangle areas.
pub fn triangulated_area(poly: &PolygonWithHoles) -> f64 {
    let v = poly.vertices();
    poly.triangulate()
        .iter()
        .map(|t| orient(v[t[0]], v[t[1]], v[t[2]]) / 2.0)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::model::Loop;

    #[test]
    fn square_is_two_triangles() {
        let f = Face::new(vec![fixtures::square_loop(0, 10)]);
        let poly = face_to_polygons(&f, Segments::Auto).unwrap();
        assert_eq!(poly.triangulate().len(), 2);
        assert_eq!(triangulated_area(&poly), 100.0);
    }

    #[test]
    fn orientation_is_normalized() {
        // Clockwise outer loop gets flipped.
        let f = Face::new(vec![Loop::polygon(&[(0, 0), (0, 10), (10, 10), (10, 0)]), fixtures::square_loop(3, 6)]);
        let poly = face_to_polygons(&f, Segments::Auto).unwrap();
        assert!(signed_area(&poly.outer) > 0.0);
        assert!(signed_area(&poly.holes[0]) < 0.0);
        assert_eq!(poly.area(), 91.0);
    }

    #[test]
    fn square_with_circular_hole_area() {
        let f = Face::new(vec![fixtures::square_loop(0, 62), fixtures::circle_loop(31, 31, 16)]);
        let poly = face_to_polygons(&f, Segments::Fixed(32)).unwrap();
        let analytic = 62.0 * 62.0 - std::f64::consts::PI * 16.0 * 16.0;
        let area = triangulated_area(&poly);
        assert!((area - analytic).abs() / analytic < 0.02, "{area} vs {analytic}");
        assert!((area - poly.area()).abs() < 1e-9);
    }

    #[test]
    fn hole_outside_is_invalid() {
        let f = Face::new(vec![fixtures::square_loop(0, 10), fixtures::square_loop(20, 30)]);
        assert_eq!(face_to_polygons(&f, Segments::Auto), Err(GeometryError::HoleOutside(0)));
        let touching = Face::new(vec![fixtures::square_loop(0, 10), fixtures::square_loop(0, 5)]);
        assert_eq!(face_to_polygons(&touching, Segments::Auto), Err(GeometryError::HoleOutside(0)));
    }

    #[test]
    fn overlapping_holes_are_invalid() {
        let f = Face::new(vec![
            fixtures::square_loop(0, 40),
            fixtures::square_loop(5, 20),
            fixtures::square_loop(10, 30),
        ]);
        assert_eq!(face_to_polygons(&f, Segments::Auto), Err(GeometryError::HolesOverlap(0, 1)));
    }

    #[test]
    fn bow_tie_self_intersects() {
        let f = Face::new(vec![Loop::polygon(&[(0, 0), (10, 10), (10, 0), (0, 20)])]);
        assert_eq!(face_to_polygons(&f, Segments::Auto), Err(GeometryError::SelfIntersection));
    }

    #[test]
    fn degenerate_rings() {
        let f = Face::new(vec![Loop::polygon(&[(0, 0), (10, 10)])]);
        assert_eq!(face_to_polygons(&f, Segments::Auto), Err(GeometryError::DegenerateLoop));
        let f = Face::new(vec![Loop::polygon(&[(0, 0), (5, 5), (10, 10)])]);
        assert_eq!(face_to_polygons(&f, Segments::Auto), Err(GeometryError::DegenerateLoop));
    }

    #[test]
    fn slot_face() {
        let f = Face::new(vec![fixtures::slot_loop()]);
        let poly = face_to_polygons(&f, Segments::Auto).unwrap();
        let analytic = 32.0 * 16.0 + std::f64::consts::PI * 64.0;
        assert!((poly.area() - analytic).abs() / analytic < 0.01);
        assert!(poly.contains(Point2::new(31.0, 31.0)));
        assert!(!poly.contains(Point2::new(31.0, 50.0)));
    }
}
