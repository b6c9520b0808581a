//! Variational vertex smoothing on the polyconvex stored energy
//!
//! `W(C) = (1-θ) tr(CᵀC)/3 / det(C)^(2/3) + θ/2 (1/det C + det C)`,
//!
//! where `C` maps an equilateral reference cell onto the element, and
//! boundary feature recovery assigning each boundary vertex a sliding mode.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;

use crate::geom::{self, orient3d_sign, Point3, Sign};
use crate::mesh::{edge_key, BoundaryModel, EdgeKey, Line, Mobility, Plane, TetMesh};

pub type M3 = [[f64; 3]; 3];

fn mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    c
}

fn transpose(a: &M3) -> M3 {
    let mut t = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            t[i][j] = a[j][i];
        }
    }
    t
}

pub fn det3(a: &M3) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
        - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn inverse(a: &M3) -> Option<M3> {
    let d = det3(a);
    if d == 0.0 || !d.is_finite() {
        return None;
    }
    let c = cofactor(a);
    let mut inv = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            inv[i][j] = c[j][i] / d;
        }
    }
    Some(inv)
}

/// Cofactor matrix, the derivative of the determinant.
fn cofactor(a: &M3) -> M3 {
    let col = |j: usize| Point3::new(a[0][j], a[1][j], a[2][j]);
    let (e1, e2, e3) = (col(0), col(1), col(2));
    let c = [e2.cross(e3), e3.cross(e1), e1.cross(e2)];
    let mut m = [[0.0; 3]; 3];
    for (j, v) in c.iter().enumerate() {
        m[0][j] = v.x;
        m[1][j] = v.y;
        m[2][j] = v.z;
    }
    m
}

fn frob2(a: &M3) -> f64 {
    a.iter().flatten().map(|x| x * x).sum()
}

/// Smooth positive extension of the determinant used in untangling mode.
pub fn chi(d: f64, delta: f64) -> f64 {
    0.5 * (d + (d * d + delta * delta).sqrt())
}

fn chi_prime(d: f64, delta: f64) -> f64 {
    0.5 * (1.0 + d / (d * d + delta * delta).sqrt())
}

/// The potential `W(C)`. With `delta = None` a non-positive determinant
/// gives `+inf`; otherwise denominators use `chi(det C, delta)`.
pub fn potential_w(c: &M3, theta: f64, delta: Option<f64>) -> f64 {
    let d = det3(c);
    let x = match delta {
        None if d <= 0.0 => return f64::INFINITY,
        None => d,
        Some(dl) => chi(d, dl),
    };
    (1.0 - theta) * frob2(c) / 3.0 / x.powf(2.0 / 3.0) + 0.5 * theta * (1.0 / x + d)
}

/// Edge matrix with columns `p[k] - p[0]`.
fn edge_matrix(p: &[Point3; 4]) -> M3 {
    let mut e = [[0.0; 3]; 3];
    for k in 0..3 {
        let v = p[k + 1] - p[0];
        e[0][k] = v.x;
        e[1][k] = v.y;
        e[2][k] = v.z;
    }
    e
}

/// Inverse edge matrix of the unit-edge equilateral tet.
fn unit_reference_inverse() -> (M3, f64) {
    let s3 = 3f64.sqrt();
    let e0 = edge_matrix(&[
        Point3::new(0.0, 0.0, 0.0),
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(0.5, s3 / 2.0, 0.0),
        Point3::new(0.5, s3 / 6.0, (2.0f64 / 3.0).sqrt()),
    ]);
    (inverse(&e0).unwrap(), det3(&e0) / 6.0)
}

/// Per-tet energy and vertex gradients given the reference inverse `r`
/// and reference volume `vr`.
fn tet_energy_grad(
    p: &[Point3; 4],
    r: &M3,
    vr: f64,
    theta: f64,
    delta: Option<f64>,
    want_grad: bool,
) -> (f64, [Point3; 4]) {
    let e = edge_matrix(p);
    let c = mul(&e, r);
    let detr = det3(r);
    let d = det3(&e) * detr;
    let (x, xp) = match delta {
        None if d <= 0.0 => return (f64::INFINITY, [Point3::ZERO; 4]),
        None => (d, 1.0),
        Some(dl) => (chi(d, dl), chi_prime(d, dl)),
    };
    let f1 = frob2(&c);
    let xm = x.powf(-2.0 / 3.0);
    let w = (1.0 - theta) * f1 / 3.0 * xm + 0.5 * theta * (1.0 / x + d);
    if !want_grad {
        return (w * vr, [Point3::ZERO; 4]);
    }
    let dw_dx = (1.0 - theta) * f1 / 3.0 * (-2.0 / 3.0) * xm / x - 0.5 * theta / (x * x);
    let dw_dd = dw_dx * xp + 0.5 * theta;
    let crt = mul(&c, &transpose(r));
    let cof = cofactor(&e);
    let a = (1.0 - theta) / 3.0 * xm * 2.0;
    let b = dw_dd * detr;
    let mut g = [Point3::ZERO; 4];
    for k in 0..3 {
        let col = Point3::new(
            a * crt[0][k] + b * cof[0][k],
            a * crt[1][k] + b * cof[1][k],
            a * crt[2][k] + b * cof[2][k],
        ) * vr;
        g[k + 1] = col;
        g[0] -= col;
    }
    (w * vr, g)
}

// ---- configuration and model ----

/// Volume of the reference cell of each tet.
#[derive(Clone, Debug, PartialEq, Default)]
pub enum Reference {
    /// Volume of the tet itself at construction.
    Current,
    /// Mean volume of the tets sharing a vertex with the tet.
    #[default]
    LocalMean,
    /// One volume for every tet.
    Uniform(f64),
    /// Per-tet volumes by tet id; missing ids use the local mean.
    PerTet(BTreeMap<u32, f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElasticConfig {
    pub theta: f64,
    pub reference: Reference,
    /// Gauss-Seidel sweeps.
    pub max_iters: usize,
    /// Stop when no vertex moves more than this fraction of its shortest edge.
    pub step_tol: f64,
    /// Untangling regularization on the determinant; `None` picks it
    /// automatically when the mesh has non-positive tets.
    pub delta: Option<f64>,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        ElasticConfig {
            theta: 0.8,
            reference: Reference::LocalMean,
            max_iters: 40,
            step_tol: 1e-6,
            delta: None,
        }
    }
}

/// Reference cells bound to a mesh.
#[derive(Clone, Debug)]
pub struct ElasticModel {
    pub theta: f64,
    pub delta: Option<f64>,
    r: Vec<M3>,
    vr: Vec<f64>,
}

impl ElasticModel {
    pub fn new(mesh: &TetMesh, config: &ElasticConfig) -> ElasticModel {
        let cap = mesh.tet_capacity();
        let vol: Vec<f64> = (0..cap as u32)
            .map(|t| if mesh.is_alive(t) { mesh.volume(t).abs() } else { 0.0 })
            .collect();
        let live = mesh.num_tets().max(1) as f64;
        let mean = vol.iter().sum::<f64>() / live;
        let local_mean = |t: u32| -> f64 {
            let mut set = BTreeSet::new();
            for &v in &mesh.tet(t).v {
                set.extend(mesh.vertex_star(v));
            }
            let s: f64 = set.iter().map(|&x| vol[x as usize]).sum();
            let m = s / set.len() as f64;
            if m > 1e-12 * mean {
                m
            } else {
                mean
            }
        };
        let (r0, v0) = unit_reference_inverse();
        let mut r = vec![[[0.0; 3]; 3]; cap];
        let mut vr = vec![0.0; cap];
        for (t, _) in mesh.tets() {
            let v = match &config.reference {
                Reference::Current if vol[t as usize] > 0.0 => vol[t as usize],
                Reference::Current | Reference::LocalMean => local_mean(t),
                Reference::Uniform(u) => *u,
                Reference::PerTet(m) => m.get(&t).copied().unwrap_or_else(|| local_mean(t)),
            };
            let s = (v / v0).cbrt();
            let mut m = r0;
            for row in &mut m {
                for x in row.iter_mut() {
                    *x /= s;
                }
            }
            r[t as usize] = m;
            vr[t as usize] = v;
        }
        let inverted = mesh.tets().any(|(t, _)| vol_sign(mesh, t) != Sign::Positive || vol[t as usize] == 0.0 || mesh.volume(t) < 0.0);
        let delta = config.delta.or(if inverted { Some(1e-3) } else { None });
        ElasticModel {
            theta: config.theta,
            delta,
            r,
            vr,
        }
    }

    pub fn reference_volume(&self, t: u32) -> f64 {
        self.vr[t as usize]
    }

    pub fn tet_energy(&self, p: &[Point3; 4], t: u32) -> f64 {
        tet_energy_grad(p, &self.r[t as usize], self.vr[t as usize], self.theta, self.delta, false).0
    }

    /// `F = Σ W(C_k) vol(U_k)`.
    pub fn energy(&self, mesh: &TetMesh) -> f64 {
        mesh.tets().map(|(t, _)| self.tet_energy(&mesh.tet_points(t), t)).sum()
    }

    fn star_points(mesh: &TetMesh, t: u32, v: u32, p: Point3) -> ([Point3; 4], usize) {
        let tet = mesh.tet(t);
        let mut q = mesh.tet_points(t);
        let l = tet.local(v).unwrap();
        q[l] = p;
        (q, l)
    }

    /// Energy of the tets in `star` with vertex `v` placed at `p`.
    pub fn local_energy(&self, mesh: &TetMesh, star: &[u32], v: u32, p: Point3) -> f64 {
        star.iter()
            .map(|&t| self.tet_energy(&Self::star_points(mesh, t, v, p).0, t))
            .sum()
    }

    /// Unprojected gradient of `F` with respect to vertex `v` at `p`.
    pub fn local_grad(&self, mesh: &TetMesh, star: &[u32], v: u32, p: Point3) -> Point3 {
        let mut g = Point3::ZERO;
        for &t in star {
            let (q, l) = Self::star_points(mesh, t, v, p);
            let (_, gr) =
                tet_energy_grad(&q, &self.r[t as usize], self.vr[t as usize], self.theta, self.delta, true);
            g += gr[l];
        }
        g
    }

    /// Gradient of `F` at vertex `v`, projected onto its mobility.
    pub fn grad(&self, mesh: &TetMesh, v: u32) -> Point3 {
        let star = mesh.vertex_star(v);
        let g = self.local_grad(mesh, &star, v, mesh.vertex(v));
        project_dir(mesh, v, g)
    }
}

fn vol_sign(mesh: &TetMesh, t: u32) -> Sign {
    let p = mesh.tet_points(t);
    orient3d_sign(p[0], p[1], p[2], p[3])
}

pub fn energy(mesh: &TetMesh, config: &ElasticConfig) -> f64 {
    ElasticModel::new(mesh, config).energy(mesh)
}

/// Projected gradient at `v` with reference cells built from `config`.
pub fn grad_energy(mesh: &TetMesh, v: u32, config: &ElasticConfig) -> Point3 {
    ElasticModel::new(mesh, config).grad(mesh, v)
}

/// Remove the components of `d` that the vertex may not move along.
pub fn project_dir(mesh: &TetMesh, v: u32, d: Point3) -> Point3 {
    match mesh.mobility(v) {
        Mobility::Free => d,
        Mobility::Fixed => Point3::ZERO,
        Mobility::SlideOnFace(k) => match mesh.boundary_model.planes.get(k as usize) {
            Some(pl) => d - pl.normal * d.dot(pl.normal),
            None => Point3::ZERO,
        },
        Mobility::SlideAlongEdge(k) => match mesh.boundary_model.lines.get(k as usize) {
            Some(l) => l.dir * d.dot(l.dir),
            None => Point3::ZERO,
        },
    }
}

fn project_point(mesh: &TetMesh, v: u32, p: Point3) -> Point3 {
    match mesh.mobility(v) {
        Mobility::SlideOnFace(k) => mesh.boundary_model.planes[k as usize].project(p),
        Mobility::SlideAlongEdge(k) => mesh.boundary_model.lines[k as usize].project(p),
        _ => p,
    }
}

// ---- optimization ----

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SmoothReport {
    pub sweeps: usize,
    pub moves: usize,
    pub energy_before: f64,
    pub energy_after: f64,
    pub max_move: f64,
    pub inverted_before: usize,
    pub inverted_after: usize,
}

fn solve3(h: &M3, b: Point3) -> Option<Point3> {
    let inv = inverse(h)?;
    let v = [b.x, b.y, b.z];
    let r: Vec<f64> = (0..3).map(|i| (0..3).map(|j| inv[i][j] * v[j]).sum()).collect();
    let p = Point3::new(r[0], r[1], r[2]);
    p.is_finite().then_some(p)
}

fn non_positive(mesh: &TetMesh, star: &[u32], v: u32, p: Point3) -> usize {
    star.iter()
        .filter(|&&t| {
            let (q, _) = ElasticModel::star_points(mesh, t, v, p);
            orient3d_sign(q[0], q[1], q[2], q[3]) != Sign::Positive
        })
        .count()
}

/// One damped Newton step on vertex `v`; returns the distance moved.
fn relax_vertex(mesh: &mut TetMesh, model: &ElasticModel, v: u32) -> f64 {
    let star = mesh.vertex_star(v);
    if star.is_empty() {
        return 0.0;
    }
    let p0 = mesh.vertex(v);
    let h = star
        .iter()
        .flat_map(|&t| mesh.tet(t).v)
        .filter(|&x| x != v)
        .map(|x| p0.dist(mesh.vertex(x)))
        .fold(f64::INFINITY, f64::min);
    let e0 = model.local_energy(mesh, &star, v, p0);
    let g = project_dir(mesh, v, model.local_grad(mesh, &star, v, p0));
    if !(g.norm() > 0.0) || !e0.is_finite() {
        return 0.0;
    }
    // Hessian by central differences of the analytic gradient.
    let fd = 1e-5 * h;
    let mut hess = [[0.0; 3]; 3];
    let axes = [Point3::new(1.0, 0.0, 0.0), Point3::new(0.0, 1.0, 0.0), Point3::new(0.0, 0.0, 1.0)];
    for (j, ax) in axes.iter().enumerate() {
        let gp = model.local_grad(mesh, &star, v, p0 + *ax * fd);
        let gm = model.local_grad(mesh, &star, v, p0 - *ax * fd);
        let col = (gp - gm) / (2.0 * fd);
        hess[0][j] = col.x;
        hess[1][j] = col.y;
        hess[2][j] = col.z;
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let m = 0.5 * (hess[i][j] + hess[j][i]);
            hess[i][j] = m;
            hess[j][i] = m;
        }
    }
    let tr = (hess[0][0] + hess[1][1] + hess[2][2]).abs() / 3.0;
    let mut lambda = 0.0;
    let mut step = None;
    for _ in 0..8 {
        let mut hd = hess;
        for (i, row) in hd.iter_mut().enumerate() {
            row[i] += lambda;
        }
        if let Some(s) = solve3(&hd, -g) {
            let s = project_dir(mesh, v, s);
            if s.dot(g) < 0.0 {
                step = Some(s);
                break;
            }
        }
        lambda = if lambda == 0.0 { 1e-3 * tr.max(1e-300) } else { lambda * 10.0 };
    }
    let mut s = step.unwrap_or_else(|| -g * (h / g.norm() * 0.1));
    let cap = 0.5 * h;
    if s.norm() > cap {
        s = s * (cap / s.norm());
    }
    let guard = model.delta.is_some();
    let bad0 = if guard { non_positive(mesh, &star, v, p0) } else { 0 };
    let mut alpha = 1.0;
    for _ in 0..30 {
        let p = project_point(mesh, v, p0 + s * alpha);
        let e = model.local_energy(mesh, &star, v, p);
        if e < e0 {
            let ok = if guard {
                non_positive(mesh, &star, v, p) <= bad0
            } else {
                non_positive(mesh, &star, v, p) == 0
            };
            if ok {
                mesh.set_vertex(v, p);
                return p.dist(p0) / h;
            }
        }
        alpha *= 0.5;
    }
    0.0
}

/// Gauss-Seidel sweeps over `vertices` (ascending id order).
pub fn smooth_vertices(
    mesh: &mut TetMesh,
    config: &ElasticConfig,
    vertices: &[u32],
) -> SmoothReport {
    let mut model = ElasticModel::new(mesh, config);
    let inverted = |m: &TetMesh| m.tets().filter(|(t, _)| vol_sign(m, *t) != Sign::Positive).count();
    let mut report = SmoothReport {
        energy_before: model.energy(mesh),
        inverted_before: inverted(mesh),
        ..SmoothReport::default()
    };
    let mut verts: Vec<u32> = vertices
        .iter()
        .copied()
        .filter(|&v| mesh.mobility(v) != Mobility::Fixed)
        .collect();
    verts.sort_unstable();
    verts.dedup();
    for sweep in 0..config.max_iters {
        report.sweeps = sweep + 1;
        let mut worst: f64 = 0.0;
        for &v in &verts {
            let d = relax_vertex(mesh, &model, v);
            if d > 0.0 {
                report.moves += 1;
            }
            worst = worst.max(d);
        }
        report.max_move = report.max_move.max(worst);
        // Anneal the untangling barrier once everything is positive.
        if let Some(dl) = model.delta {
            if config.delta.is_none() && inverted(mesh) == 0 {
                model.delta = if dl > 1e-9 { Some(dl * 0.1) } else { None };
                continue;
            }
        }
        if worst < config.step_tol {
            break;
        }
    }
    report.energy_after = model.energy(mesh);
    report.inverted_after = inverted(mesh);
    report
}

/// Smooth every movable vertex.
pub fn smooth(mesh: &mut TetMesh, config: &ElasticConfig) -> SmoothReport {
    let all: Vec<u32> = (0..mesh.num_vertices() as u32)
        .filter(|&v| mesh.vertex_hint(v).is_some())
        .collect();
    smooth_vertices(mesh, config, &all)
}

/// Smooth the vertices of the worst `fraction` of tets by minimum dihedral
/// angle together with their one-ring neighbors.
pub fn smooth_worst(mesh: &mut TetMesh, config: &ElasticConfig, fraction: f64) -> SmoothReport {
    let mut by_angle: Vec<(f64, u32)> = mesh
        .tets()
        .map(|(t, _)| (geom::dihedral_range_deg(&mesh.tet_points(t)).0, t))
        .collect();
    by_angle.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let n = ((fraction * by_angle.len() as f64).ceil() as usize).min(by_angle.len());
    let mut verts = BTreeSet::new();
    for &(_, t) in &by_angle[..n] {
        for &v in &mesh.tet(t).v {
            for s in mesh.vertex_star(v) {
                verts.extend(mesh.tet(s).v);
            }
        }
    }
    let verts: Vec<u32> = verts.into_iter().collect();
    smooth_vertices(mesh, config, &verts)
}

fn star_min_dihedral(mesh: &TetMesh, star: &[u32], v: u32, p: Point3) -> f64 {
    let mut worst = f64::INFINITY;
    for &t in star {
        let (q, _) = ElasticModel::star_points(mesh, t, v, p);
        if orient3d_sign(q[0], q[1], q[2], q[3]) != Sign::Positive {
            return f64::NEG_INFINITY;
        }
        worst = worst.min(geom::dihedral_range_deg(&q).0);
    }
    worst
}

/// Compass search on the vertices of tets below `theta`, maximizing the
/// smallest dihedral angle of each vertex star. Returns the number of moves.
pub fn polish(mesh: &mut TetMesh, theta: f64, passes: usize) -> usize {
    let mut dirs = Vec::new();
    for x in -1..=1 {
        for y in -1..=1 {
            for z in -1..=1 {
                if (x, y, z) != (0, 0, 0) {
                    dirs.push(Point3::new(x as f64, y as f64, z as f64).normalized());
                }
            }
        }
    }
    let mut moves = 0;
    for _ in 0..passes {
        let mut verts = BTreeSet::new();
        for (t, tet) in mesh.tets() {
            if geom::dihedral_range_deg(&mesh.tet_points(t)).0 < theta {
                verts.extend(tet.v.iter().copied().filter(|&v| mesh.mobility(v) != Mobility::Fixed));
            }
        }
        let mut moved = false;
        for v in verts {
            let star = mesh.vertex_star(v);
            let p0 = mesh.vertex(v);
            let h = star
                .iter()
                .flat_map(|&t| mesh.tet(t).v)
                .filter(|&x| x != v)
                .map(|x| p0.dist(mesh.vertex(x)))
                .fold(f64::INFINITY, f64::min);
            let mut best = star_min_dihedral(mesh, &star, v, p0);
            let mut p = p0;
            let mut step = 0.1 * h;
            while step > 1e-3 * h {
                let mut improved = false;
                for d in &dirs {
                    let d = project_dir(mesh, v, *d);
                    if d.norm() < 1e-9 {
                        continue;
                    }
                    let q = project_point(mesh, v, p + d.normalized() * step);
                    let s = star_min_dihedral(mesh, &star, v, q);
                    if s > best + 1e-9 {
                        best = s;
                        p = q;
                        improved = true;
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            if p != p0 {
                mesh.set_vertex(v, p);
                moves += 1;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    moves
}

/// Mesh optimization: full smoothing, then rounds of max-min flips and
/// dihedral polishing on tets below `theta` until neither changes anything.
pub fn optimize(mesh: &mut TetMesh, config: &ElasticConfig, theta: f64, rounds: usize) -> OptimizeReport {
    let mut report = OptimizeReport::default();
    report.moves += smooth(mesh, config).moves;
    for _ in 0..rounds {
        report.rounds += 1;
        let f = crate::sliver::flip_improve(mesh, theta, 4);
        let p = polish(mesh, theta, 4);
        report.flips += f;
        report.polished += p;
        if f == 0 && p == 0 {
            break;
        }
    }
    report
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct OptimizeReport {
    pub rounds: usize,
    pub flips: usize,
    pub moves: usize,
    pub polished: usize,
}

// ---- boundary features ----

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct FeatureReport {
    pub patches: usize,
    pub curves: usize,
    pub fixed: usize,
    pub on_curve: usize,
    pub on_face: usize,
}

fn unit_normal(p: [Point3; 3]) -> Point3 {
    (p[1] - p[0]).cross(p[2] - p[0]).normalized()
}

/// Angle between two lines in degrees, ignoring direction.
fn line_angle(a: Point3, b: Point3) -> f64 {
    a.dot(b).abs().min(1.0).acos().to_degrees()
}

/// Group facets into flat patches, chain patch borders into straight
/// curves, and assign each boundary vertex its sliding mode.
///
/// Facets are merged across manifold edges when their normal is within
/// `angle_tol` degrees of the seed facet and they share the input patch id.
/// Facet patch ids and segment curve ids are rewritten to the aggregated
/// numbering and the mesh's boundary model is replaced.
pub fn classify_boundary_vertices(mesh: &mut TetMesh, angle_tol: f64) -> FeatureReport {
    let facets: Vec<(u32, [u32; 3], u32)> = mesh.facets().map(|(i, f)| (i, f.v, f.patch)).collect();
    let normals: Vec<Point3> = facets.iter().map(|&(i, _, _)| unit_normal(mesh.facet_points(i))).collect();
    let mut on_edge: BTreeMap<EdgeKey, Vec<usize>> = BTreeMap::new();
    for (k, (_, v, _)) in facets.iter().enumerate() {
        for j in 0..3 {
            on_edge.entry(edge_key(v[j], v[(j + 1) % 3])).or_default().push(k);
        }
    }
    let seg_edges: BTreeSet<EdgeKey> = mesh.segments().map(|(_, s)| edge_key(s.v[0], s.v[1])).collect();

    // Region growing.
    let mut patch = vec![usize::MAX; facets.len()];
    let mut planes = Vec::new();
    for seed in 0..facets.len() {
        if patch[seed] != usize::MAX {
            continue;
        }
        let id = planes.len();
        let n0 = normals[seed];
        patch[seed] = id;
        let mut queue = VecDeque::from([seed]);
        let mut members = Vec::new();
        while let Some(k) = queue.pop_front() {
            members.push(k);
            let v = facets[k].1;
            for j in 0..3 {
                let e = edge_key(v[j], v[(j + 1) % 3]);
                let list = &on_edge[&e];
                if list.len() != 2 || seg_edges.contains(&e) {
                    continue;
                }
                for &o in list {
                    if patch[o] == usize::MAX
                        && facets[o].2 == facets[seed].2
                        && line_angle(normals[o], n0) < angle_tol
                    {
                        patch[o] = id;
                        queue.push_back(o);
                    }
                }
            }
        }
        let mut n = Point3::ZERO;
        let mut c = Point3::ZERO;
        let mut area = 0.0;
        for &k in &members {
            let p = mesh.facet_points(facets[k].0);
            let a = geom::triangle_area(p[0], p[1], p[2]);
            let nk = if normals[k].dot(n0) < 0.0 { -normals[k] } else { normals[k] };
            n += nk * a;
            c += (p[0] + p[1] + p[2]) / 3.0 * a;
            area += a;
        }
        planes.push(Plane {
            point: c / area,
            normal: n.normalized(),
        });
    }
    for (k, &(i, _, _)) in facets.iter().enumerate() {
        mesh.set_facet_patch(i, patch[k] as u32);
    }

    // Curve edges and their incident patch sets.
    let mut curve_edges: BTreeMap<EdgeKey, Vec<usize>> = BTreeMap::new();
    for (e, list) in &on_edge {
        let mut ps: Vec<usize> = list.iter().map(|&k| patch[k]).collect();
        ps.sort_unstable();
        ps.dedup();
        if list.len() != 2 || ps.len() > 1 || seg_edges.contains(e) {
            curve_edges.insert(*e, ps);
        }
    }
    let mut adj: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for e in curve_edges.keys() {
        adj.entry(e[0]).or_default().push(e[1]);
        adj.entry(e[1]).or_default().push(e[0]);
    }
    let mut fixed: BTreeSet<u32> = adj
        .iter()
        .filter(|(_, n)| n.len() != 2)
        .map(|(&v, _)| v)
        .collect();

    // Walk chains from fixed vertices first, then leftover loops.
    let mut piece_of: BTreeMap<EdgeKey, usize> = BTreeMap::new();
    let mut lines: Vec<Line> = Vec::new();
    let mut starts: Vec<u32> = fixed.iter().copied().collect();
    starts.extend(adj.keys().copied().filter(|v| !fixed.contains(v)));
    let pos = |v: u32| mesh.vertex(v);
    for &s in &starts {
        for &first in &adj[&s] {
            if piece_of.contains_key(&edge_key(s, first)) {
                continue;
            }
            if !fixed.contains(&s) {
                // Closed loop: pin its start.
                fixed.insert(s);
            }
            let mut prev = s;
            let mut cur = first;
            let mut start = s;
            let mut dir = (pos(cur) - pos(prev)).normalized();
            let mut pset = &curve_edges[&edge_key(prev, cur)];
            let mut id = lines.len();
            lines.push(Line { point: pos(start), dir });
            piece_of.insert(edge_key(prev, cur), id);
            while !fixed.contains(&cur) {
                let nbrs = &adj[&cur];
                let next = if nbrs[0] == prev { nbrs[1] } else { nbrs[0] };
                let e = edge_key(cur, next);
                if piece_of.contains_key(&e) {
                    break;
                }
                let d = (pos(next) - pos(cur)).normalized();
                let ps = &curve_edges[&e];
                if line_angle(d, dir) >= angle_tol || ps != pset {
                    fixed.insert(cur);
                    start = cur;
                    dir = d;
                    pset = ps;
                    id = lines.len();
                    lines.push(Line { point: pos(start), dir });
                }
                piece_of.insert(e, id);
                prev = cur;
                cur = next;
            }
        }
    }

    // Segments follow the curve pieces.
    let existing: Vec<(u32, EdgeKey)> = mesh.segments().map(|(i, s)| (i, edge_key(s.v[0], s.v[1]))).collect();
    for (i, e) in existing {
        if let Some(&id) = piece_of.get(&e) {
            mesh.set_segment_curve(i, id as u32);
        }
    }
    for (e, &id) in &piece_of {
        if mesh.segment_id(e[0], e[1]).is_none() {
            mesh.add_segment(*e, id as u32);
        }
    }

    let mut report = FeatureReport {
        patches: planes.len(),
        curves: lines.len(),
        ..FeatureReport::default()
    };
    let mut vpatches: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (k, (_, v, _)) in facets.iter().enumerate() {
        for &x in v {
            vpatches.entry(x).or_default().insert(patch[k]);
        }
    }
    let mut vcurve: BTreeMap<u32, usize> = BTreeMap::new();
    for (e, &id) in &piece_of {
        vcurve.insert(e[0], id);
        vcurve.insert(e[1], id);
    }
    for v in 0..mesh.num_vertices() as u32 {
        let m = if let Some(ps) = vpatches.get(&v) {
            if fixed.contains(&v) {
                Mobility::Fixed
            } else if let Some(&c) = vcurve.get(&v) {
                Mobility::SlideAlongEdge(c as u32)
            } else if ps.len() == 1 {
                Mobility::SlideOnFace(*ps.iter().next().unwrap() as u32)
            } else {
                Mobility::Fixed
            }
        } else {
            Mobility::Free
        };
        match m {
            Mobility::Fixed => report.fixed += 1,
            Mobility::SlideAlongEdge(_) => report.on_curve += 1,
            Mobility::SlideOnFace(_) => report.on_face += 1,
            Mobility::Free => {}
        }
        mesh.set_mobility(v, m);
    }
    mesh.boundary_model = BoundaryModel { planes, lines };
    report
}
