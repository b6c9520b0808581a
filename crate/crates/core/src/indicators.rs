//! Residual-based, goal-oriented element error indicators computed from a
//! field oracle, and the ranking ratio used to judge them.

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::Point3;
use crate::mesh::{TetMesh, NO_TET};

pub type C = Complex64;
/// Complex 3-vector.
pub type C3 = [C; 3];

pub const EPS0: f64 = 8.854_187_812_8e-12;
pub const MU0: f64 = 1.256_637_062_12e-6;

const J: C = C::new(0.0, 1.0);
const ZERO3: C3 = [C::new(0.0, 0.0); 3];

fn c3(x: f64, y: f64, z: f64) -> C3 {
    [C::new(x, 0.0), C::new(y, 0.0), C::new(z, 0.0)]
}

fn add(a: C3, b: C3) -> C3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn sub(a: C3, b: C3) -> C3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn scale(a: C3, s: C) -> C3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Non-conjugated dot product.
fn dot(a: C3, b: C3) -> C {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn dot_real(a: C3, n: Point3) -> C {
    a[0] * n.x + a[1] * n.y + a[2] * n.z
}

fn cross(a: C3, b: C3) -> C3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn real3(p: Point3) -> C3 {
    c3(p.x, p.y, p.z)
}

pub fn norm3(a: C3) -> f64 {
    (a[0].norm_sqr() + a[1].norm_sqr() + a[2].norm_sqr()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IndicatorError {
    #[error("tet {tet} has material {material} with no parameters")]
    UnknownMaterial { tet: u32, material: u32 },
    #[error("empty input")]
    Empty,
    #[error("arrays differ in length ({0} vs {1})")]
    Length(usize, usize),
    #[error("invalid physical parameters: {0}")]
    Params(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Material {
    pub eps_r: C,
    pub mu_r: f64,
}

impl Default for Material {
    fn default() -> Self {
        Material {
            eps_r: C::new(1.0, 0.0),
            mu_r: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalParams {
    pub omega: f64,
    pub eps0: f64,
    pub mu0: f64,
    /// Indexed by tet material id.
    pub materials: Vec<Material>,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            omega: 2.0 * PI * 1e9,
            eps0: EPS0,
            mu0: MU0,
            materials: vec![Material::default()],
        }
    }
}

impl PhysicalParams {
    pub fn k0(&self) -> f64 {
        self.omega * (self.mu0 * self.eps0).sqrt()
    }

    /// Absolute permittivity.
    pub fn eps(&self, m: &Material) -> C {
        m.eps_r * self.eps0
    }

    /// Absolute permeability.
    pub fn mu(&self, m: &Material) -> f64 {
        m.mu_r * self.mu0
    }

    pub fn validate(&self) -> Result<(), IndicatorError> {
        if !(self.omega > 0.0 && self.eps0 > 0.0 && self.mu0 > 0.0) {
            return Err(IndicatorError::Params("omega, eps0 and mu0 must be positive"));
        }
        for m in &self.materials {
            if !(m.eps_r.re.is_finite() && m.eps_r.im.is_finite() && m.mu_r.is_finite()) || m.mu_r == 0.0 {
                return Err(IndicatorError::Params("material values must be finite with mu_r != 0"));
            }
        }
        Ok(())
    }

    fn material(&self, mesh: &TetMesh, t: u32) -> Result<&Material, IndicatorError> {
        let material = mesh.tet(t).material;
        self.materials
            .get(material as usize)
            .ok_or(IndicatorError::UnknownMaterial { tet: t, material })
    }
}

/// Discrete field `E_h` given element by element. Evaluations take the
/// element so that one-sided traces on faces are well defined.
pub trait FieldOracle {
    /// Polynomial degree, `None` for non-polynomial fields.
    fn degree(&self) -> Option<usize>;
    fn e(&self, tet: u32, x: Point3) -> C3;
    fn curl(&self, tet: u32, x: Point3) -> C3;
    fn curl_curl(&self, tet: u32, x: Point3) -> C3;
    fn div(&self, tet: u32, x: Point3) -> C;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstantField(pub C3);

impl FieldOracle for ConstantField {
    fn degree(&self) -> Option<usize> {
        Some(0)
    }
    fn e(&self, _: u32, _: Point3) -> C3 {
        self.0
    }
    fn curl(&self, _: u32, _: Point3) -> C3 {
        ZERO3
    }
    fn curl_curl(&self, _: u32, _: Point3) -> C3 {
        ZERO3
    }
    fn div(&self, _: u32, _: Point3) -> C {
        C::new(0.0, 0.0)
    }
}

/// `E(x) = e0 + A x`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearField {
    pub e0: C3,
    pub a: [C3; 3],
}

impl FieldOracle for LinearField {
    fn degree(&self) -> Option<usize> {
        Some(1)
    }
    fn e(&self, _: u32, x: Point3) -> C3 {
        let p = real3(x);
        [
            self.e0[0] + dot(self.a[0], p),
            self.e0[1] + dot(self.a[1], p),
            self.e0[2] + dot(self.a[2], p),
        ]
    }
    fn curl(&self, _: u32, _: Point3) -> C3 {
        let a = &self.a;
        [a[2][1] - a[1][2], a[0][2] - a[2][0], a[1][0] - a[0][1]]
    }
    fn curl_curl(&self, _: u32, _: Point3) -> C3 {
        ZERO3
    }
    fn div(&self, _: u32, _: Point3) -> C {
        self.a[0][0] + self.a[1][1] + self.a[2][2]
    }
}

/// `E(x) = p exp(-j k·x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlaneWave {
    pub p: C3,
    pub k: Point3,
}

impl PlaneWave {
    fn phase(&self, x: Point3) -> C {
        (-J * self.k.dot(x)).exp()
    }
}

impl FieldOracle for PlaneWave {
    fn degree(&self) -> Option<usize> {
        None
    }
    fn e(&self, _: u32, x: Point3) -> C3 {
        scale(self.p, self.phase(x))
    }
    fn curl(&self, _: u32, x: Point3) -> C3 {
        scale(cross(real3(self.k), self.p), -J * self.phase(x))
    }
    fn curl_curl(&self, _: u32, x: Point3) -> C3 {
        // |k|² E - k (k·E)
        let k = real3(self.k);
        let e = self.e(0, x);
        sub(scale(e, C::new(self.k.norm2(), 0.0)), scale(k, dot(k, e)))
    }
    fn div(&self, _: u32, x: Point3) -> C {
        -J * dot(real3(self.k), self.p) * self.phase(x)
    }
}

/// A constant value per element, so every interior face carries a jump.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseConstant {
    pub values: Vec<C3>,
}

impl PiecewiseConstant {
    /// Components uniform in `[-1, 1]` (real and imaginary parts), indexed
    /// by tet id.
    pub fn random(mesh: &TetMesh, seed: u64) -> PiecewiseConstant {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = || C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let values = (0..mesh.tet_capacity()).map(|_| [r(), r(), r()]).collect();
        PiecewiseConstant { values }
    }
}

impl FieldOracle for PiecewiseConstant {
    fn degree(&self) -> Option<usize> {
        Some(0)
    }
    fn e(&self, tet: u32, _: Point3) -> C3 {
        self.values[tet as usize]
    }
    fn curl(&self, _: u32, _: Point3) -> C3 {
        ZERO3
    }
    fn curl_curl(&self, _: u32, _: Point3) -> C3 {
        ZERO3
    }
    fn div(&self, _: u32, _: Point3) -> C {
        C::new(0.0, 0.0)
    }
}

// ---- quadrature ----

/// Degree-2 rule on a tet: points and weights summing to the volume.
pub fn tet_rule(p: &[Point3; 4]) -> [(Point3, f64); 4] {
    let a = 0.585_410_196_624_968_5;
    let b = 0.138_196_601_125_010_5;
    let v = crate::geom::signed_volume(p[0], p[1], p[2], p[3]).abs();
    let mut out = [(Point3::ZERO, 0.0); 4];
    for (i, o) in out.iter_mut().enumerate() {
        let mut x = Point3::ZERO;
        for (k, &q) in p.iter().enumerate() {
            x += q * if k == i { a } else { b };
        }
        *o = (x, v / 4.0);
    }
    out
}

/// Degree-2 rule on a triangle.
pub fn face_rule(p: &[Point3; 3]) -> [(Point3, f64); 3] {
    let area = crate::geom::triangle_area(p[0], p[1], p[2]);
    let mut out = [(Point3::ZERO, 0.0); 3];
    for (i, o) in out.iter_mut().enumerate() {
        let mut x = Point3::ZERO;
        for (k, &q) in p.iter().enumerate() {
            x += q * if k == i { 2.0 / 3.0 } else { 1.0 / 6.0 };
        }
        *o = (x, area / 3.0);
    }
    out
}

fn diameter<const N: usize>(p: &[Point3; N]) -> f64 {
    let mut d: f64 = 0.0;
    for i in 0..N {
        for j in i + 1..N {
            d = d.max(p[i].dist(p[j]));
        }
    }
    d
}

// ---- residuals ----

/// `Q_T = ∫ ∇·(εE)` and `J_T = -∫ (∇×μr⁻¹∇×E - k0² εr E) / (jωμ0)` with
/// material values constant on the tet.
pub fn element_residuals(
    mesh: &TetMesh,
    t: u32,
    oracle: &dyn FieldOracle,
    params: &PhysicalParams,
) -> Result<(C, C3), IndicatorError> {
    let m = params.material(mesh, t)?;
    let eps = params.eps(m);
    let k0 = params.k0();
    let mut q = C::new(0.0, 0.0);
    let mut jt = ZERO3;
    for (x, w) in tet_rule(&mesh.tet_points(t)) {
        q += eps * oracle.div(t, x) * w;
        let r = sub(
            scale(oracle.curl_curl(t, x), C::new(1.0 / m.mu_r, 0.0)),
            scale(oracle.e(t, x), m.eps_r * (k0 * k0)),
        );
        jt = add(jt, scale(r, C::new(w, 0.0)));
    }
    let f = -1.0 / (J * params.omega * params.mu0);
    Ok((q, scale(jt, f)))
}

/// Jump residuals across the face shared by `t1` (side 1) and `t2`, with
/// the normal pointing from `t1` into `t2`.
pub fn face_residuals(
    mesh: &TetMesh,
    t1: u32,
    t2: u32,
    oracle: &dyn FieldOracle,
    params: &PhysicalParams,
) -> Result<(C, C3), IndicatorError> {
    let (m1, m2) = (params.material(mesh, t1)?, params.material(mesh, t2)?);
    let (e1, e2) = (params.eps(m1), params.eps(m2));
    let a = mesh.tet(t1);
    let i = (0..4).find(|&i| a.nbr[i] == t2).expect("tets are not face neighbors");
    let f = a.face(i).map(|v| mesh.vertex(v));
    let mut n = (f[1] - f[0]).cross(f[2] - f[0]).normalized();
    if n.dot(mesh.vertex(a.v[i]) - f[0]) > 0.0 {
        n = -n;
    }
    let mut q = C::new(0.0, 0.0);
    let mut jf = ZERO3;
    for (x, w) in face_rule(&f) {
        let jump_e = sub(scale(oracle.e(t1, x), e1), scale(oracle.e(t2, x), e2));
        q += dot_real(jump_e, n) * w;
        let jump_c = sub(
            scale(oracle.curl(t1, x), C::new(1.0 / m1.mu_r, 0.0)),
            scale(oracle.curl(t2, x), C::new(1.0 / m2.mu_r, 0.0)),
        );
        jf = add(jf, scale(cross(jump_c, real3(n)), C::new(w, 0.0)));
    }
    let s = -1.0 / (J * params.omega * params.mu0);
    Ok((q, scale(jf, s)))
}

/// `α = -jω e^{-jk0 R} Q² / (4π ε R) - jωμ e^{-jk0 R} J·J / (4π R)`.
pub fn alpha(q: C, j: C3, r: f64, eps: C, mu: f64, params: &PhysicalParams) -> C {
    let ph = (-J * params.k0() * r).exp();
    let jw = J * params.omega;
    -jw * ph / (4.0 * PI * eps * r) * q * q - jw * mu * ph / (4.0 * PI * r) * dot(j, j)
}

/// Face weight `α_T / (α_T + α_N)`: real part clamped into `[0, 1]`, and
/// `1/2` when the denominator vanishes.
pub fn face_weight(a_t: C, a_n: C) -> f64 {
    let d = a_t + a_n;
    if d == C::new(0.0, 0.0) {
        0.5
    } else {
        (a_t / d).re.clamp(0.0, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementIndicator {
    pub tet: u32,
    pub eta: C,
    pub alpha: C,
    pub q: C,
    pub j: C3,
    pub diameter: f64,
}

impl ElementIndicator {
    pub fn magnitude(&self) -> f64 {
        self.eta.norm()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FaceIndicator {
    /// Side 1 and side 2; the normal points from the first into the second.
    pub tets: (u32, u32),
    pub alpha: C,
    pub q: C,
    pub j: C3,
    pub diameter: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Indicators {
    /// In ascending tet id order.
    pub elements: Vec<ElementIndicator>,
    /// Interior faces, side 1 being the lower tet id.
    pub faces: Vec<FaceIndicator>,
}

impl Indicators {
    pub fn magnitudes(&self) -> Vec<f64> {
        self.elements.iter().map(|e| e.magnitude()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tet,eta_abs,q_t,j_t_abs\n");
        for e in &self.elements {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", e.tet, e.magnitude(), e.q.norm(), norm3(e.j));
        }
        s
    }
}

/// Indicators for every tet. Face terms use the mean of the two sides'
/// permittivity and permeability; boundary faces contribute nothing.
pub fn compute_indicators(
    mesh: &TetMesh,
    oracle: &dyn FieldOracle,
    params: &PhysicalParams,
) -> Result<Indicators, IndicatorError> {
    params.validate()?;
    let mut elements = Vec::with_capacity(mesh.num_tets());
    let mut slot = vec![usize::MAX; mesh.tet_capacity()];
    for (t, _) in mesh.tets() {
        let (q, j) = element_residuals(mesh, t, oracle, params)?;
        let m = params.material(mesh, t)?;
        let r = diameter(&mesh.tet_points(t));
        let a = alpha(q, j, r, params.eps(m), params.mu(m), params);
        slot[t as usize] = elements.len();
        elements.push(ElementIndicator {
            tet: t,
            eta: a,
            alpha: a,
            q,
            j,
            diameter: r,
        });
    }
    let mut faces = Vec::new();
    let mut seen = BTreeSet::new();
    for (t, tet) in mesh.tets() {
        for i in 0..4 {
            let n = tet.nbr[i];
            if n == NO_TET || !seen.insert((t.min(n), t.max(n))) {
                continue;
            }
            let (t1, t2) = (t.min(n), t.max(n));
            let (q, j) = face_residuals(mesh, t1, t2, oracle, params)?;
            let (m1, m2) = (params.material(mesh, t1)?, params.material(mesh, t2)?);
            let eps = (params.eps(m1) + params.eps(m2)) * 0.5;
            let mu = 0.5 * (params.mu(m1) + params.mu(m2));
            let f = tet.face(i).map(|v| mesh.vertex(v));
            let r = diameter(&f);
            faces.push(FaceIndicator {
                tets: (t1, t2),
                alpha: alpha(q, j, r, eps, mu, params),
                q,
                j,
                diameter: r,
            });
        }
    }
    for f in &faces {
        let (i1, i2) = (slot[f.tets.0 as usize], slot[f.tets.1 as usize]);
        let (a1, a2) = (elements[i1].alpha, elements[i2].alpha);
        elements[i1].eta += f.alpha * face_weight(a1, a2);
        elements[i2].eta += f.alpha * face_weight(a2, a1);
    }
    Ok(Indicators { elements, faces })
}

// ---- ranking ----

/// Indices of the `n` largest values; ties go to the lower index.
fn top(values: &[f64], n: usize) -> BTreeSet<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.into_iter().take(n).collect()
}

/// `r(N)` in percent for each fraction, with `N = ceil(fraction · count)`.
pub fn ranking_ratio(
    exact: &[f64],
    estimated: &[f64],
    fractions: &[f64],
) -> Result<Vec<f64>, IndicatorError> {
    if exact.is_empty() {
        return Err(IndicatorError::Empty);
    }
    if exact.len() != estimated.len() {
        return Err(IndicatorError::Length(exact.len(), estimated.len()));
    }
    Ok(fractions
        .iter()
        .map(|&q| {
            let n = ((q * exact.len() as f64).ceil() as usize).clamp(1, exact.len());
            let a = top(exact, n);
            let b = top(estimated, n);
            100.0 * a.intersection(&b).count() as f64 / n as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaunay::delaunay_from_points;
    use crate::gen::random_points;

    fn unit_params() -> PhysicalParams {
        PhysicalParams {
            omega: 2.0,
            eps0: 1.0,
            mu0: 1.0,
            materials: vec![Material::default()],
        }
    }

    #[test]
    fn constant_field_element_residuals() {
        let m = delaunay_from_points(&random_points(40, 1)).unwrap();
        let p = PhysicalParams::default();
        let oracle = ConstantField(c3(1.0, 0.0, 0.0));
        for (t, _) in m.tets() {
            let (q, j) = element_residuals(&m, t, &oracle, &p).unwrap();
            let v = m.volume(t);
            let want = p.k0().powi(2) * v / (J * p.omega * p.mu0);
            assert_eq!(q, C::new(0.0, 0.0));
            assert!((j[0] - want).norm() <= 1e-10 * want.norm());
            assert_eq!(j[1], C::new(0.0, 0.0));
        }
    }

    #[test]
    fn single_tet_alpha_closed_form() {
        let p = unit_params();
        let a = alpha(C::new(1.0, 0.0), ZERO3, 1.0, C::new(1.0, 0.0), 1.0, &p);
        let want = -J * p.omega * (-J * p.k0()).exp() / (4.0 * PI);
        assert!((a - want).norm() < 1e-15);
    }

    #[test]
    fn face_jump_of_unit_field() {
        // Two tets sharing the face in x = 0; side 1 on the negative side.
        let pts = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(-1.0, 0.2, 0.2),
            Point3::new(1.0, 0.3, 0.1),
        ];
        let m = delaunay_from_points(&pts).unwrap();
        assert_eq!(m.num_tets(), 2);
        let ids = m.tet_ids();
        let neg = *ids.iter().find(|&&t| m.tet(t).v.contains(&3)).unwrap();
        let pos = *ids.iter().find(|&&t| m.tet(t).v.contains(&4)).unwrap();
        let mut values = vec![ZERO3; m.tet_capacity()];
        values[neg as usize] = c3(1.0, 0.0, 0.0);
        let oracle = PiecewiseConstant { values };
        let p = unit_params();
        let (q, j) = face_residuals(&m, neg, pos, &oracle, &p).unwrap();
        assert!((q - C::new(0.5, 0.0)).norm() < 1e-14);
        assert_eq!(norm3(j), 0.0);
        // Swapping sides keeps the residuals.
        let (q2, _) = face_residuals(&m, pos, neg, &oracle, &p).unwrap();
        assert!((q - q2).norm() < 1e-14);
    }

    #[test]
    fn smooth_field_has_no_face_residuals() {
        let m = delaunay_from_points(&random_points(60, 3)).unwrap();
        let oracle = PlaneWave {
            p: c3(0.0, 1.0, 0.0),
            k: Point3::new(3.0, 0.0, 0.0),
        };
        let ind = compute_indicators(&m, &oracle, &unit_params()).unwrap();
        for f in &ind.faces {
            assert!(f.q.norm() < 1e-12 && norm3(f.j) < 1e-12);
        }
    }

    #[test]
    fn symmetric_pair_weights_are_half() {
        assert_eq!(face_weight(C::new(2.0, 1.0), C::new(2.0, 1.0)), 0.5);
        assert_eq!(face_weight(C::new(0.0, 0.0), C::new(0.0, 0.0)), 0.5);
        assert_eq!(face_weight(C::new(1.0, 0.0), C::new(-3.0, 0.0)), 0.0);
    }

    #[test]
    fn zero_field_gives_zero_indicators() {
        let m = delaunay_from_points(&random_points(30, 5)).unwrap();
        let ind = compute_indicators(&m, &ConstantField(ZERO3), &unit_params()).unwrap();
        assert!(ind.elements.iter().all(|e| e.eta == C::new(0.0, 0.0)));
    }

    #[test]
    fn unknown_material_is_an_error() {
        let m = delaunay_from_points(&random_points(10, 5)).unwrap();
        let p = PhysicalParams {
            materials: vec![],
            ..unit_params()
        };
        assert!(matches!(
            compute_indicators(&m, &ConstantField(ZERO3), &p),
            Err(IndicatorError::UnknownMaterial { .. })
        ));
    }

    #[test]
    fn ranking_edge_cases() {
        let v: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let rev: Vec<f64> = v.iter().map(|x| -x).collect();
        assert_eq!(ranking_ratio(&v, &v, &[0.1, 0.5, 1.0]).unwrap(), vec![100.0; 3]);
        assert_eq!(ranking_ratio(&v, &rev, &[0.1, 0.3, 0.49]).unwrap(), vec![0.0; 3]);
        assert_eq!(ranking_ratio(&[], &[], &[0.1]), Err(IndicatorError::Empty));
        assert!(ranking_ratio(&v, &v[..3], &[0.1]).is_err());
    }
}
