//! Small 3-D vector and planar-polygon toolkit used by the tracer.

use core::ops::{Add, Mul, Neg, Sub};
#[cfg(not(feature = "std"))]
use num_traits::Float;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Point3) -> Point3 {
        Point3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn lerp(self, o: Point3, s: f64) -> Point3 {
        self + (o - self) * s
    }

    /// Azimuth of this vector in the horizontal plane, in (-pi, pi].
    pub fn azimuth(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, s: f64) -> Point3 {
        Point3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    fn neg(self) -> Point3 {
        Point3::new(-self.x, -self.y, -self.z)
    }
}

/// Plane through `origin` with unit `normal`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub origin: Point3,
    pub normal: Point3,
}

impl Plane {
    /// Signed distance of `p` from the plane.
    pub fn signed_distance(&self, p: Point3) -> f64 {
        (p - self.origin).dot(self.normal)
    }

    pub fn mirror(&self, p: Point3) -> Point3 {
        p - self.normal * (2.0 * self.signed_distance(p))
    }

    /// Parameter `s` at which the segment `a + s (b - a)` meets the plane, if it
    /// is not parallel to it.
    pub fn segment_parameter(&self, a: Point3, b: Point3) -> Option<f64> {
        let da = self.signed_distance(a);
        let db = self.signed_distance(b);
        let denom = da - db;
        if denom.abs() < 1e-15 {
            None
        } else {
            Some(da / denom)
        }
    }
}

/// Newell normal of a polygon; its length is twice the polygon area.
pub fn newell_normal(vertices: &[Point3]) -> Point3 {
    let mut n = Point3::default();
    for i in 0..vertices.len() {
        let a = vertices[i];
        let b = vertices[(i + 1) % vertices.len()];
        n.x += (a.y - b.y) * (a.z + b.z);
        n.y += (a.z - b.z) * (a.x + b.x);
        n.z += (a.x - b.x) * (a.y + b.y);
    }
    n
}

/// Point-in-polygon test for a point lying in the polygon's plane. The
/// polygon is projected onto the coordinate plane where its normal is largest.
pub fn point_in_polygon(vertices: &[Point3], normal: Point3, p: Point3) -> bool {
    let (ax, ay, az) = (normal.x.abs(), normal.y.abs(), normal.z.abs());
    let project = |q: Point3| -> (f64, f64) {
        if az >= ax && az >= ay {
            (q.x, q.y)
        } else if ax >= ay {
            (q.y, q.z)
        } else {
            (q.z, q.x)
        }
    };
    let (px, py) = project(p);
    let tol = 1e-9;
    let mut inside = false;
    let n = vertices.len();
    let mut j = n - 1;
    for i in 0..n {
        let (xi, yi) = project(vertices[i]);
        let (xj, yj) = project(vertices[j]);
        // Points on an edge count as inside.
        let ex = xj - xi;
        let ey = yj - yi;
        let len2 = ex * ex + ey * ey;
        if len2 > 0.0 {
            let s = ((px - xi) * ex + (py - yi) * ey) / len2;
            if (-tol..=1.0 + tol).contains(&s) {
                let cx = xi + s * ex - px;
                let cy = yi + s * ey - py;
                if cx * cx + cy * cy <= tol * tol {
                    return true;
                }
            }
        }
        if (yi > py) != (yj > py) {
            let x_cross = xi + (py - yi) * (xj - xi) / (yj - yi);
            if px < x_cross {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}
