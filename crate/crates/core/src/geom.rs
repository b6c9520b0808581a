//! Points, exact-sign predicates and elementary metrics.
//!
//! Orientation and insphere signs come from adaptive-precision evaluation: a
//! floating point filter with a forward error bound, refined with exact
//! expansion arithmetic when the filter cannot decide. The sign convention is
//! `orient3d(a, b, c, d) = sign(det[b - a, c - a, d - a])`, so the unit corner
//! tetrahedron is positive.

use std::fmt;
use std::ops::{Add, AddAssign, Div, Index, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by geometric routines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum GeomError {
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("degenerate element")]
    Degenerate,
}

/// A point or vector in 3-space.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

/// Shorthand constructor.
#[inline]
pub const fn p3(x: f64, y: f64, z: f64) -> Point3 {
    Point3 { x, y, z }
}

impl Point3 {
    pub const ZERO: Point3 = p3(0.0, 0.0, 0.0);

    #[inline]
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    #[inline]
    pub fn dot(self, o: Point3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    #[inline]
    pub fn cross(self, o: Point3) -> Point3 {
        p3(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.dot(self)
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn dist(self, o: Point3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction; the zero vector is returned unchanged.
    pub fn normalized(self) -> Point3 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            self
        }
    }

    #[inline]
    pub fn lerp(self, o: Point3, t: f64) -> Point3 {
        self + (o - self) * t
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Point3 {
        p3(a[0], a[1], a[2])
    }

    #[inline]
    fn coord(self) -> robust::Coord3D<f64> {
        robust::Coord3D {
            x: self.x,
            y: self.y,
            z: self.z,
        }
    }
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

impl Add for Point3 {
    type Output = Point3;
    #[inline]
    fn add(self, o: Point3) -> Point3 {
        p3(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Point3 {
    #[inline]
    fn add_assign(&mut self, o: Point3) {
        *self = *self + o;
    }
}

impl Sub for Point3 {
    type Output = Point3;
    #[inline]
    fn sub(self, o: Point3) -> Point3 {
        p3(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl SubAssign for Point3 {
    #[inline]
    fn sub_assign(&mut self, o: Point3) {
        *self = *self - o;
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn mul(self, s: f64) -> Point3 {
        p3(self.x * s, self.y * s, self.z * s)
    }
}

impl Div<f64> for Point3 {
    type Output = Point3;
    #[inline]
    fn div(self, s: f64) -> Point3 {
        p3(self.x / s, self.y / s, self.z / s)
    }
}

impl Neg for Point3 {
    type Output = Point3;
    #[inline]
    fn neg(self) -> Point3 {
        p3(-self.x, -self.y, -self.z)
    }
}

impl Index<usize> for Point3 {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Point3 index {i} out of range"),
        }
    }
}

/// A sphere given by center and radius.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Point3,
    pub radius: f64,
}

impl Sphere {
    pub fn contains(&self, p: Point3) -> bool {
        (p - self.center).norm2() < self.radius * self.radius
    }
}

/// Sign of a predicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sign {
    Negative = -1,
    Zero = 0,
    Positive = 1,
}

impl Sign {
    #[inline]
    pub fn of(v: f64) -> Sign {
        if v > 0.0 {
            Sign::Positive
        } else if v < 0.0 {
            Sign::Negative
        } else {
            Sign::Zero
        }
    }

    #[inline]
    pub fn as_i32(self) -> i32 {
        self as i32
    }

    #[inline]
    pub fn is_positive(self) -> bool {
        self == Sign::Positive
    }
}

fn check(points: &[Point3]) -> Result<(), GeomError> {
    if points.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(GeomError::NonFinite)
    }
}

/// Exact orientation sign of `d` relative to the plane through `a, b, c`.
pub fn orient3d(a: Point3, b: Point3, c: Point3, d: Point3) -> Result<Sign, GeomError> {
    check(&[a, b, c, d])?;
    Ok(orient3d_sign(a, b, c, d))
}

/// [`orient3d`] without the finiteness check, for validated mesh coordinates.
#[inline]
pub fn orient3d_sign(a: Point3, b: Point3, c: Point3, d: Point3) -> Sign {
    // `robust` uses the opposite handedness.
    Sign::of(-robust::orient3d(
        a.coord(),
        b.coord(),
        c.coord(),
        d.coord(),
    ))
}

/// Exact insphere sign: positive when `p` is strictly inside the circumsphere
/// of `a, b, c, d`, independent of the orientation of the four points.
pub fn insphere(a: Point3, b: Point3, c: Point3, d: Point3, p: Point3) -> Result<Sign, GeomError> {
    check(&[a, b, c, d, p])?;
    let o = robust::orient3d(a.coord(), b.coord(), c.coord(), d.coord());
    if o == 0.0 {
        return Err(GeomError::Degenerate);
    }
    let s = robust::insphere(a.coord(), b.coord(), c.coord(), d.coord(), p.coord());
    Ok(Sign::of(s * o.signum()))
}

/// Insphere sign for a tetrahedron known to be positive under [`orient3d`].
#[inline]
pub fn insphere_positive(a: Point3, b: Point3, c: Point3, d: Point3, p: Point3) -> Sign {
    Sign::of(-robust::insphere(
        a.coord(),
        b.coord(),
        c.coord(),
        d.coord(),
        p.coord(),
    ))
}

/// Exact 2D orientation: positive when `a, b, c` turn counterclockwise.
pub fn orient2d(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> Sign {
    let k = |p: [f64; 2]| robust::Coord { x: p[0], y: p[1] };
    Sign::of(robust::orient2d(k(a), k(b), k(c)))
}

/// Exact incircle: positive when `d` is strictly inside the circle through
/// `a, b, c`, independent of their orientation.
pub fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> Sign {
    let k = |p: [f64; 2]| robust::Coord { x: p[0], y: p[1] };
    let o = robust::orient2d(k(a), k(b), k(c));
    let s = robust::incircle(k(a), k(b), k(c), k(d));
    Sign::of(s * o.signum())
}

/// Signed volume, positive for positively oriented tetrahedra.
#[inline]
pub fn signed_volume(a: Point3, b: Point3, c: Point3, d: Point3) -> f64 {
    (b - a).dot((c - a).cross(d - a)) / 6.0
}

fn longest_edge(p: &[Point3; 4]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..4 {
        for j in i + 1..4 {
            m = m.max(p[i].dist(p[j]));
        }
    }
    m
}

/// Circumscribed sphere of a tetrahedron.
///
/// Tetrahedra with `|det| < 1e-13 * l_max^3` are rejected as degenerate.
pub fn circumsphere(a: Point3, b: Point3, c: Point3, d: Point3) -> Result<Sphere, GeomError> {
    check(&[a, b, c, d])?;
    let u = b - a;
    let v = c - a;
    let w = d - a;
    let vw = v.cross(w);
    let det = u.dot(vw);
    let l = longest_edge(&[a, b, c, d]);
    if !(det.abs() >= 1e-13 * l * l * l) || l == 0.0 {
        return Err(GeomError::Degenerate);
    }
    let off = (vw * u.norm2() + w.cross(u) * v.norm2() + u.cross(v) * w.norm2()) / (2.0 * det);
    let center = a + off;
    Ok(Sphere {
        center,
        radius: off.norm(),
    })
}

/// Interior dihedral angles (radians) in edge order
/// `(0,1), (0,2), (0,3), (1,2), (1,3), (2,3)`.
pub fn dihedral_angles(a: Point3, b: Point3, c: Point3, d: Point3) -> Result<[f64; 6], GeomError> {
    check(&[a, b, c, d])?;
    let p = [a, b, c, d];
    let l = longest_edge(&p);
    let vol6 = (b - a).dot((c - a).cross(d - a));
    if l == 0.0 || vol6.abs() < 1e-300 {
        return Err(GeomError::Degenerate);
    }
    // Outward normal of the face opposite vertex k.
    let normal = |k: usize| -> Point3 {
        let f: Vec<Point3> = (0..4).filter(|&i| i != k).map(|i| p[i]).collect();
        let n = (f[1] - f[0]).cross(f[2] - f[0]);
        let n = if n.dot(p[k] - f[0]) > 0.0 { -n } else { n };
        n.normalized()
    };
    let n = [normal(0), normal(1), normal(2), normal(3)];
    let mut out = [0.0; 6];
    for (slot, (i, j)) in EDGES.iter().enumerate() {
        let (k, m) = other_two(*i, *j);
        let c = (-n[k].dot(n[m])).clamp(-1.0, 1.0);
        out[slot] = c.acos();
    }
    Ok(out)
}

/// Local vertex pairs of the six tetrahedron edges.
pub const EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

/// The two local vertices not on edge `(i, j)`.
#[inline]
pub fn other_two(i: usize, j: usize) -> (usize, usize) {
    let mut r = [0usize; 2];
    let mut n = 0;
    for k in 0..4 {
        if k != i && k != j {
            r[n] = k;
            n += 1;
        }
    }
    (r[0], r[1])
}

/// Minimum and maximum dihedral angle in degrees; degenerate tets give `(0, 180)`.
pub fn dihedral_range_deg(p: &[Point3; 4]) -> (f64, f64) {
    match dihedral_angles(p[0], p[1], p[2], p[3]) {
        Ok(a) => {
            let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo.to_degrees(), hi.to_degrees())
        }
        Err(_) => (0.0, 180.0),
    }
}

/// Circumcenter of a triangle in 3-space.
pub fn triangle_circumcenter(a: Point3, b: Point3, c: Point3) -> Result<Point3, GeomError> {
    let u = b - a;
    let v = c - a;
    let n = u.cross(v);
    let n2 = n.norm2();
    let l2 = u.norm2().max(v.norm2()).max((c - b).norm2());
    if !(n2 > 1e-26 * l2 * l2) {
        return Err(GeomError::Degenerate);
    }
    let off = (n.cross(u) * v.norm2() + v.cross(n) * u.norm2()) / (2.0 * n2);
    Ok(a + off)
}

/// Triangle area.
pub fn triangle_area(a: Point3, b: Point3, c: Point3) -> f64 {
    0.5 * (b - a).cross(c - a).norm()
}

/// Interior angles (radians) at `a`, `b`, `c`.
pub fn triangle_angles(a: Point3, b: Point3, c: Point3) -> [f64; 3] {
    let ang = |p: Point3, q: Point3, r: Point3| {
        let u = q - p;
        let v = r - p;
        let cr = u.cross(v).norm();
        cr.atan2(u.dot(v))
    };
    [ang(a, b, c), ang(b, c, a), ang(c, a, b)]
}

/// Closest point on segment `[a, b]` to `p`.
pub fn closest_on_segment(p: Point3, a: Point3, b: Point3) -> Point3 {
    let d = b - a;
    let l2 = d.norm2();
    if l2 == 0.0 {
        return a;
    }
    let t = ((p - a).dot(d) / l2).clamp(0.0, 1.0);
    a + d * t
}

/// Distance from `p` to segment `[a, b]`.
pub fn dist_point_segment(p: Point3, a: Point3, b: Point3) -> f64 {
    p.dist(closest_on_segment(p, a, b))
}

/// Closest point on triangle `abc` to `p` (Voronoi-region walk).
pub fn closest_on_triangle(p: Point3, a: Point3, b: Point3, c: Point3) -> Point3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(ap);
    let d2 = ac.dot(ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return a;
    }
    let bp = p - b;
    let d3 = ab.dot(bp);
    let d4 = ac.dot(bp);
    if d3 >= 0.0 && d4 <= d3 {
        return b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(cp);
    let d6 = ac.dot(cp);
    if d6 >= 0.0 && d5 <= d6 {
        return c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

/// Distance from `p` to the closed triangle `abc`.
pub fn dist_point_triangle(p: Point3, a: Point3, b: Point3, c: Point3) -> f64 {
    p.dist(closest_on_triangle(p, a, b, c))
}

/// Axis-aligned bounding box diagonal length of a point set.
pub fn bbox_diagonal(points: &[Point3]) -> f64 {
    let (lo, hi) = bbox(points);
    (hi - lo).norm()
}

/// Axis-aligned bounding box `(min, max)`; empty input gives zeros.
pub fn bbox(points: &[Point3]) -> (Point3, Point3) {
    if points.is_empty() {
        return (Point3::ZERO, Point3::ZERO);
    }
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = p3(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
        hi = p3(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
    }
    (lo, hi)
}

/// Rotation matrix about a unit axis.
pub fn rotation(axis: Point3, angle: f64) -> [[f64; 3]; 3] {
    let k = axis.normalized();
    let (s, c) = angle.sin_cos();
    let t = 1.0 - c;
    [
        [
            t * k.x * k.x + c,
            t * k.x * k.y - s * k.z,
            t * k.x * k.z + s * k.y,
        ],
        [
            t * k.x * k.y + s * k.z,
            t * k.y * k.y + c,
            t * k.y * k.z - s * k.x,
        ],
        [
            t * k.x * k.z - s * k.y,
            t * k.y * k.z + s * k.x,
            t * k.z * k.z + c,
        ],
    ]
}

/// Apply a 3x3 matrix to a point.
pub fn apply(m: &[[f64; 3]; 3], p: Point3) -> Point3 {
    p3(
        m[0][0] * p.x + m[0][1] * p.y + m[0][2] * p.z,
        m[1][0] * p.x + m[1][1] * p.y + m[1][2] * p.z,
        m[2][0] * p.x + m[2][1] * p.y + m[2][2] * p.z,
    )
}
