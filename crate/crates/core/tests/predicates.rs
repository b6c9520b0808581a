//! Exact-arithmetic oracle for the geometric predicates, on inputs built to
//! sit on or within a few ulps of the degenerate configuration.

use num_rational::BigRational;
use num_traits::{Signed, Zero};
use proptest::prelude::*;
use tetamr::geom::{insphere, orient3d, p3, Point3, Sign};

fn q(x: f64) -> BigRational {
    BigRational::from_float(x).unwrap()
}

fn sign(x: &BigRational) -> Sign {
    if x.is_zero() {
        Sign::Zero
    } else if x.is_positive() {
        Sign::Positive
    } else {
        Sign::Negative
    }
}

fn det3(m: [[BigRational; 3]; 3]) -> BigRational {
    &m[0][0] * (&m[1][1] * &m[2][2] - &m[1][2] * &m[2][1]) - &m[0][1] * (&m[1][0] * &m[2][2] - &m[1][2] * &m[2][0])
        + &m[0][2] * (&m[1][0] * &m[2][1] - &m[1][1] * &m[2][0])
}

fn diff(a: Point3, b: Point3) -> [BigRational; 3] {
    [q(a.x) - q(b.x), q(a.y) - q(b.y), q(a.z) - q(b.z)]
}

/// `det[b - a, c - a, d - a]`: positive when `d` is on the side of `abc`
/// that its counterclockwise normal points to.
fn exact_orient(a: Point3, b: Point3, c: Point3, d: Point3) -> BigRational {
    det3([diff(b, a), diff(c, a), diff(d, a)])
}

/// Lifted 4x4 determinant, expanded along the lifted column.
fn exact_lifted(pts: [Point3; 4], p: Point3) -> BigRational {
    let rows: Vec<[BigRational; 4]> = pts
        .iter()
        .map(|&a| {
            let d = diff(a, p);
            let l = &d[0] * &d[0] + &d[1] * &d[1] + &d[2] * &d[2];
            let [x, y, z] = d;
            [x, y, z, l]
        })
        .collect();
    let mut acc = BigRational::zero();
    for i in 0..4 {
        let m: Vec<[BigRational; 3]> = (0..4)
            .filter(|&r| r != i)
            .map(|r| [rows[r][0].clone(), rows[r][1].clone(), rows[r][2].clone()])
            .collect();
        let minor = det3([m[0].clone(), m[1].clone(), m[2].clone()]);
        // Cofactor sign for entry (i, 3).
        let term = &rows[i][3] * minor;
        if (i + 3) % 2 == 0 {
            acc += term;
        } else {
            acc -= term;
        }
    }
    acc
}

fn exact_insphere(a: Point3, b: Point3, c: Point3, d: Point3, p: Point3) -> Sign {
    let o = exact_orient(a, b, c, d);
    // Inside when the lifted determinant and the orientation disagree.
    sign(&-(exact_lifted([a, b, c, d], p) * o))
}

fn nudge(x: f64, ulps: i64) -> f64 {
    let mut y = x;
    for _ in 0..ulps.abs() {
        y = if ulps > 0 { y.next_up() } else { y.next_down() };
    }
    y
}

fn coord() -> impl Strategy<Value = f64> {
    -1.0e3..1.0e3
}

fn point() -> impl Strategy<Value = Point3> {
    (coord(), coord(), coord()).prop_map(|(x, y, z)| p3(x, y, z))
}

proptest! {
    #[test]
    fn orient_matches_exact_on_near_coplanar_points(
        a in point(), b in point(), c in point(),
        s in 0.0..1.0f64, t in 0.0..1.0f64, ulps in -3i64..=3,
    ) {
        // Affine combination of a, b, c, rounded, then nudged off the plane.
        let d = a + (b - a) * s + (c - a) * t;
        let d = p3(d.x, d.y, nudge(d.z, ulps));
        prop_assert_eq!(orient3d(a, b, c, d).unwrap(), sign(&exact_orient(a, b, c, d)));
    }

    #[test]
    fn insphere_matches_exact_on_near_cospherical_points(
        angles in proptest::collection::vec((0.0..std::f64::consts::TAU, -1.0..1.0f64), 5),
        r in 0.5..50.0f64, ulps in -4i64..=4,
    ) {
        let on_sphere: Vec<Point3> = angles
            .iter()
            .map(|&(phi, z)| {
                let s = (1.0 - z * z).sqrt();
                p3(r * s * phi.cos(), r * s * phi.sin(), r * z)
            })
            .collect();
        let [a, b, c, d, p]: [Point3; 5] = on_sphere.try_into().unwrap();
        let p = p3(nudge(p.x, ulps), p.y, p.z);
        prop_assume!(!exact_orient(a, b, c, d).is_zero());
        prop_assert_eq!(insphere(a, b, c, d, p).unwrap(), exact_insphere(a, b, c, d, p));
    }
}

#[test]
fn exact_oracle_sign_conventions() {
    let (a, b, c, d) = (p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.0, 1.0, 0.0), p3(0.0, 0.0, 1.0));
    assert!(exact_orient(a, b, c, d).is_positive());
    assert_eq!(orient3d(a, b, c, d).unwrap(), Sign::Positive);
    assert_eq!(exact_insphere(a, b, c, d, p3(0.2, 0.2, 0.2)), Sign::Positive);
    assert_eq!(exact_insphere(b, a, c, d, p3(0.2, 0.2, 0.2)), Sign::Positive);
    assert_eq!(exact_insphere(a, b, c, d, p3(1.0, 1.0, 1.0)), Sign::Zero);
    assert_eq!(exact_insphere(a, b, c, d, p3(2.0, 0.0, 0.0)), Sign::Negative);
}
