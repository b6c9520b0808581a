//! Sliver detection, classification, removal, and prismatic padding of
//! slivers locked against the boundary.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::aed::AedIndex;
use crate::delaunay::{apply_flip, insert_point, locate, plan_flip, FlipTarget, Locate};
use crate::geom::{self, dihedral_angles, orient3d_sign, other_two, Point3, Sign, EDGES};
use crate::mesh::{edge_key, EdgeKey, Mobility, TetMesh, NO_TET};

pub const THETA_LOW: f64 = 10.0;
pub const THETA_HIGH: f64 = 170.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SliverError {
    #[error("no live tets given")]
    Empty,
    #[error("vertex {0} lies on an interior interface and cannot be padded")]
    Interface(u32),
    #[error("padding around vertex {0} has no inward direction")]
    NoNormal(u32),
    #[error("padding would invert tets even after {0} halvings of the offset")]
    LockedPadding(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SliverClass {
    Isolated,
    Blocked,
    ChainMember,
}

impl SliverClass {
    pub fn as_str(self) -> &'static str {
        match self {
            SliverClass::Isolated => "isolated",
            SliverClass::Blocked => "blocked",
            SliverClass::ChainMember => "chain-member",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Coupling {
    Weak,
    Strong,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sliver {
    pub tet: u32,
    /// Edges with near-zero dihedral angle.
    pub side: [EdgeKey; 4],
    /// Edges with near-straight dihedral angle.
    pub diagonal: [EdgeKey; 2],
    /// Has a boundary facet or only fixed vertices.
    pub blocked: bool,
    pub class: SliverClass,
    pub min_dihedral: f64,
    pub max_dihedral: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SliverGraph {
    pub slivers: Vec<Sliver>,
    /// Pairs of indices into `slivers` sharing an edge.
    pub couplings: Vec<(usize, usize, Coupling)>,
}

impl SliverGraph {
    pub fn len(&self) -> usize {
        self.slivers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slivers.is_empty()
    }

    pub fn count(&self, class: SliverClass) -> usize {
        self.slivers.iter().filter(|s| s.class == class).count()
    }

    /// Components of two or more slivers under strong coupling, as tet ids.
    pub fn chains(&self) -> Vec<Vec<u32>> {
        let n = self.slivers.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(i, j, c) in &self.couplings {
            if c == Coupling::Strong {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut groups: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for i in 0..n {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(self.slivers[i].tet);
        }
        groups.into_values().filter(|g| g.len() > 1).collect()
    }

    /// Components of blocked slivers under any coupling, as tet ids.
    pub fn blocked_groups(&self) -> Vec<Vec<u32>> {
        let n = self.slivers.len();
        let mut group: Vec<usize> = (0..n).collect();
        let mut changed = true;
        while changed {
            changed = false;
            for &(i, j, _) in &self.couplings {
                if self.slivers[i].blocked && self.slivers[j].blocked {
                    let m = group[i].min(group[j]);
                    if group[i] != m || group[j] != m {
                        group[i] = m;
                        group[j] = m;
                        changed = true;
                    }
                }
            }
        }
        let mut out: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
        for i in 0..n {
            if self.slivers[i].blocked {
                out.entry(group[i]).or_default().push(self.slivers[i].tet);
            }
        }
        out.into_values().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tet,class,min_dihedral,max_dihedral\n");
        for v in &self.slivers {
            let _ = writeln!(
                s,
                "{},{},{:.6},{:.6}",
                v.tet,
                v.class.as_str(),
                v.min_dihedral,
                v.max_dihedral
            );
        }
        s
    }
}

/// The dihedral angles in degrees if the tet has the sliver pattern: four
/// edges below `lo` and two above `hi`.
pub fn sliver_pattern(p: &[Point3; 4], lo: f64, hi: f64) -> Option<[f64; 6]> {
    let a = dihedral_angles(p[0], p[1], p[2], p[3]).ok()?.map(f64::to_degrees);
    let side = a.iter().filter(|&&x| x < lo).count();
    let diag = a.iter().filter(|&&x| x > hi).count();
    (side == 4 && diag == 2).then_some(a)
}

/// Smallest dihedral angle of a tet in degrees; 0 when degenerate.
pub fn min_dihedral(p: &[Point3; 4]) -> f64 {
    geom::dihedral_range_deg(p).0
}

/// Number of live tets whose smallest dihedral angle is below `theta`.
pub fn count_below(mesh: &TetMesh, theta: f64) -> usize {
    mesh.tets()
        .filter(|(t, _)| min_dihedral(&mesh.tet_points(*t)) < theta)
        .count()
}

fn is_blocked(mesh: &TetMesh, t: u32) -> bool {
    let tet = mesh.tet(t);
    (0..4).any(|i| mesh.is_protected(tet.face(i)))
        || tet.v.iter().all(|&v| mesh.mobility(v) == Mobility::Fixed)
}

pub fn detect_slivers(mesh: &TetMesh, theta_low: f64, theta_high: f64) -> SliverGraph {
    let mut slivers = Vec::new();
    for (t, tet) in mesh.tets() {
        let Some(a) = sliver_pattern(&mesh.tet_points(t), theta_low, theta_high) else {
            continue;
        };
        let mut side = Vec::with_capacity(4);
        let mut diagonal = Vec::with_capacity(2);
        for (slot, &(i, j)) in EDGES.iter().enumerate() {
            let e = edge_key(tet.v[i], tet.v[j]);
            if a[slot] < theta_low {
                side.push(e);
            } else if a[slot] > theta_high {
                diagonal.push(e);
            }
        }
        side.sort_unstable();
        diagonal.sort_unstable();
        let lo = a.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = a.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        slivers.push(Sliver {
            tet: t,
            side: side.try_into().unwrap(),
            diagonal: diagonal.try_into().unwrap(),
            blocked: is_blocked(mesh, t),
            class: SliverClass::Isolated,
            min_dihedral: lo,
            max_dihedral: hi,
        });
    }

    // Edge -> (sliver, edge is diagonal).
    let mut on_edge: BTreeMap<EdgeKey, Vec<(usize, bool)>> = BTreeMap::new();
    for (i, s) in slivers.iter().enumerate() {
        for e in s.side {
            on_edge.entry(e).or_default().push((i, false));
        }
        for e in s.diagonal {
            on_edge.entry(e).or_default().push((i, true));
        }
    }
    let mut pairs: BTreeMap<(usize, usize), Coupling> = BTreeMap::new();
    for list in on_edge.values() {
        for x in 0..list.len() {
            for y in x + 1..list.len() {
                let (i, di) = list[x];
                let (j, dj) = list[y];
                let c = if di && dj { Coupling::Strong } else { Coupling::Weak };
                let e = pairs.entry((i.min(j), i.max(j))).or_insert(c);
                if c == Coupling::Strong {
                    *e = c;
                }
            }
        }
    }
    let couplings: Vec<(usize, usize, Coupling)> =
        pairs.into_iter().map(|((i, j), c)| (i, j, c)).collect();
    let mut strong = vec![false; slivers.len()];
    for &(i, j, c) in &couplings {
        if c == Coupling::Strong {
            strong[i] = true;
            strong[j] = true;
        }
    }
    for (s, st) in slivers.iter_mut().zip(strong) {
        s.class = if s.blocked {
            SliverClass::Blocked
        } else if st {
            SliverClass::ChainMember
        } else {
            SliverClass::Isolated
        };
    }
    SliverGraph { slivers, couplings }
}

// ---- cospherical clusters ----

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CosphericalCluster {
    pub tets: Vec<u32>,
    pub center: Point3,
    pub radius: f64,
    pub tolerance: f64,
}

/// Face-connected groups of two or more tets whose circumspheres agree to
/// `rel_tol` times the radius.
pub fn detect_cospherical_clusters(mesh: &TetMesh, rel_tol: f64) -> Vec<CosphericalCluster> {
    let cap = mesh.tet_capacity();
    let mut sphere: Vec<Option<geom::Sphere>> = vec![None; cap];
    for (t, _) in mesh.tets() {
        let p = mesh.tet_points(t);
        sphere[t as usize] = geom::circumsphere(p[0], p[1], p[2], p[3]).ok();
    }
    let mut parent: Vec<u32> = (0..cap as u32).collect();
    fn find(p: &mut [u32], mut x: u32) -> u32 {
        while p[x as usize] != x {
            p[x as usize] = p[p[x as usize] as usize];
            x = p[x as usize];
        }
        x
    }
    for (t, tet) in mesh.tets() {
        let Some(s) = sphere[t as usize] else { continue };
        for &n in &tet.nbr {
            if n == NO_TET || n < t {
                continue;
            }
            let Some(o) = sphere[n as usize] else { continue };
            let tol = rel_tol * s.radius.max(o.radius);
            if s.center.dist(o.center) <= tol && (s.radius - o.radius).abs() <= tol {
                let (a, b) = (find(&mut parent, t), find(&mut parent, n));
                parent[a.max(b) as usize] = a.min(b);
            }
        }
    }
    let mut groups: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (t, _) in mesh.tets() {
        if sphere[t as usize].is_some() {
            let r = find(&mut parent, t);
            groups.entry(r).or_default().push(t);
        }
    }
    groups
        .into_values()
        .filter(|g| g.len() > 1)
        .map(|tets| {
            let n = tets.len() as f64;
            let mut c = Point3::ZERO;
            let mut r = 0.0;
            for &t in &tets {
                let s = sphere[t as usize].unwrap();
                c += s.center;
                r += s.radius;
            }
            let radius = r / n;
            CosphericalCluster {
                tets,
                center: c / n,
                radius,
                tolerance: rel_tol * radius,
            }
        })
        .collect()
}

// ---- removal ----

#[derive(Clone, Debug, PartialEq)]
pub struct RemovalParams {
    pub theta_low: f64,
    pub theta_high: f64,
    /// Anisotropy of the boundary encroachment domains that veto
    /// circumcenter insertion.
    pub anisotropy: f64,
    pub max_passes: usize,
}

impl Default for RemovalParams {
    fn default() -> Self {
        RemovalParams {
            theta_low: THETA_LOW,
            theta_high: THETA_HIGH,
            anisotropy: 10.0,
            max_passes: 4,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RemovalReport {
    pub flips23: usize,
    pub flips32: usize,
    pub insertions: usize,
    pub residual: SliverGraph,
}

fn bad(points: impl Iterator<Item = [Point3; 4]>, theta: f64) -> usize {
    points.filter(|p| min_dihedral(p) < theta).count()
}

fn old_bad(mesh: &TetMesh, tets: &[u32], theta: f64) -> usize {
    bad(tets.iter().map(|&t| mesh.tet_points(t)), theta)
}

fn try_flip(mesh: &mut TetMesh, target: FlipTarget, theta: f64) -> bool {
    let Some(plan) = plan_flip(mesh, target) else {
        return false;
    };
    let before = old_bad(mesh, &plan.old, theta);
    let after = bad(plan.new_points(mesh).into_iter(), theta);
    if after < before {
        apply_flip(mesh, &plan);
        true
    } else {
        false
    }
}

fn try_circumcenter(mesh: &mut TetMesh, index: &AedIndex, t: u32, theta: f64) -> bool {
    let p = mesh.tet_points(t);
    let Ok(s) = geom::circumsphere(p[0], p[1], p[2], p[3]) else {
        return false;
    };
    if !matches!(locate(mesh, s.center, t, true), Locate::Inside(_)) {
        return false;
    }
    let (segs, facets) = index.encroached(mesh, s.center);
    if !segs.is_empty() || !facets.is_empty() {
        return false;
    }
    let mut trial = mesh.clone();
    let Ok(ins) = insert_point(&mut trial, s.center, None) else {
        return false;
    };
    let before = old_bad(mesh, &ins.removed_tets, theta);
    let after = old_bad(&trial, &ins.new_tets, theta);
    if after < before {
        *mesh = trial;
        true
    } else {
        false
    }
}

/// Try, per sliver: a 2-3 flip on a face holding a diagonal edge, a 3-2 flip
/// on a side edge and then on a diagonal edge, then insertion of its
/// circumcenter. A move is kept only
/// if it lowers the number of affected tets below `theta_low`, so the
/// global count never grows.
pub fn remove_slivers(
    mesh: &mut TetMesh,
    graph: &SliverGraph,
    params: &RemovalParams,
) -> RemovalReport {
    let (lo, hi) = (params.theta_low, params.theta_high);
    let index = AedIndex::build(mesh, params.anisotropy);
    let mut report = RemovalReport::default();
    let mut current = graph.clone();
    for pass in 0..params.max_passes {
        if pass > 0 {
            current = detect_slivers(mesh, lo, hi);
        }
        let mut changed = false;
        for s in &current.slivers {
            let t = s.tet;
            if !mesh.is_alive(t) || sliver_pattern(&mesh.tet_points(t), lo, hi).is_none() {
                continue;
            }
            let tet = mesh.tet(t).clone();
            let local = |e: EdgeKey| {
                (
                    tet.local(e[0]).unwrap(),
                    tet.local(e[1]).unwrap(),
                )
            };
            let mut done = false;
            'flip23: for e in s.diagonal {
                let (i, j) = local(e);
                let (k, m) = other_two(i, j);
                for face in [k, m] {
                    if try_flip(mesh, FlipTarget::Face { tet: t, face }, lo) {
                        report.flips23 += 1;
                        done = true;
                        break 'flip23;
                    }
                }
            }
            if !done {
                for e in s.side.iter().chain(&s.diagonal).copied() {
                    if try_flip(mesh, FlipTarget::Edge { a: e[0], b: e[1] }, lo) {
                        report.flips32 += 1;
                        done = true;
                        break;
                    }
                }
            }
            if !done && try_circumcenter(mesh, &index, t, lo) {
                report.insertions += 1;
                done = true;
            }
            changed |= done;
        }
        if !changed {
            break;
        }
    }
    report.residual = detect_slivers(mesh, lo, hi);
    report
}

/// Worst minimum dihedral over a set of tets.
fn worst(points: impl Iterator<Item = [Point3; 4]>) -> f64 {
    points.map(|p| min_dihedral(&p)).fold(f64::INFINITY, f64::min)
}

fn try_maxmin(mesh: &mut TetMesh, target: FlipTarget) -> bool {
    let Some(plan) = plan_flip(mesh, target) else {
        return false;
    };
    let before = worst(plan.old.iter().map(|&t| mesh.tet_points(t)));
    let after = worst(plan.new_points(mesh).into_iter());
    if after > before + 1e-9 {
        apply_flip(mesh, &plan);
        true
    } else {
        false
    }
}

/// Flip around tets whose minimum dihedral angle is below `theta` while
/// that raises the worst angle of the affected tets. Returns the number of
/// flips. Every accepted flip removes a tet at the local minimum without
/// adding one at or below it, so the sweep terminates.
pub fn flip_improve(mesh: &mut TetMesh, theta: f64, max_passes: usize) -> usize {
    let mut flips = 0;
    for _ in 0..max_passes {
        let mut bad: Vec<(f64, u32)> = mesh
            .tets()
            .map(|(t, _)| (min_dihedral(&mesh.tet_points(t)), t))
            .filter(|&(d, _)| d < theta)
            .collect();
        bad.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut changed = false;
        for (_, t) in bad {
            if !mesh.is_alive(t) {
                continue;
            }
            let tet = mesh.tet(t).clone();
            let faces = (0..4).map(|face| FlipTarget::Face { tet: t, face });
            let edges = EDGES.iter().map(|&(i, j)| FlipTarget::Edge {
                a: tet.v[i],
                b: tet.v[j],
            });
            for target in faces.chain(edges) {
                if try_maxmin(mesh, target) {
                    flips += 1;
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            break;
        }
    }
    flips
}

// ---- padding ----

#[derive(Clone, Debug, PartialEq)]
pub struct PadParams {
    /// Offset as a fraction of the shortest edge at each padded vertex.
    pub pad_fraction: f64,
    pub max_halvings: usize,
}

impl Default for PadParams {
    fn default() -> Self {
        PadParams {
            pad_fraction: 0.05,
            max_halvings: 10,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct PadReport {
    /// `(boundary vertex, free duplicate)` pairs.
    pub duplicated: Vec<(u32, u32)>,
    /// New ids of the padded tets, in input order.
    pub chain: Vec<u32>,
    pub prism_tets: usize,
    /// Offset scale that succeeded, `0.5^k`.
    pub scale: f64,
}

/// Insert thin prisms between the boundary and the given tets.
///
/// Every vertex of `tets` on a hull face is duplicated and offset inward;
/// all tets around it switch to the duplicate and each hull face touching
/// a duplicated vertex becomes the base of a prism split into up to three
/// tets. Quad sides are cut from the lower-id base vertex to the top of
/// the other, so neighboring prisms agree.
pub fn pad_locked(
    mesh: &mut TetMesh,
    tets: &[u32],
    params: &PadParams,
) -> Result<PadReport, SliverError> {
    let tets: Vec<u32> = tets.iter().copied().filter(|&t| mesh.is_alive(t)).collect();
    if tets.is_empty() {
        return Err(SliverError::Empty);
    }
    let on_hull: BTreeSet<u32> = mesh
        .hull_faces()
        .iter()
        .flat_map(|&(t, i)| mesh.tet(t).face(i))
        .collect();
    let dup: BTreeSet<u32> = tets
        .iter()
        .flat_map(|&t| mesh.tet(t).v)
        .filter(|v| on_hull.contains(v))
        .collect();
    if dup.is_empty() {
        return Ok(PadReport {
            chain: tets,
            scale: 1.0,
            ..PadReport::default()
        });
    }

    let unit_normal = |t: u32, i: usize| -> Point3 {
        let tet = mesh.tet(t);
        let f = tet.face(i).map(|v| mesh.vertex(v));
        let n = (f[1] - f[0]).cross(f[2] - f[0]).normalized();
        if n.dot(mesh.vertex(tet.v[i]) - f[0]) < 0.0 {
            -n
        } else {
            n
        }
    };

    // Star union, hull faces to pad, and per-vertex offsets.
    let mut star: BTreeSet<u32> = BTreeSet::new();
    let mut offset: BTreeMap<u32, Point3> = BTreeMap::new();
    for &v in &dup {
        let s = mesh.vertex_star(v);
        let mut n = Point3::ZERO;
        let mut h = f64::INFINITY;
        let pv = mesh.vertex(v);
        for &t in &s {
            let tet = mesh.tet(t);
            for i in 0..4 {
                let f = tet.face(i);
                if !f.contains(&v) {
                    continue;
                }
                if tet.nbr[i] == NO_TET {
                    n += unit_normal(t, i);
                } else if mesh.is_protected(f) {
                    return Err(SliverError::Interface(v));
                }
            }
            for &x in &tet.v {
                if x != v {
                    h = h.min(pv.dist(mesh.vertex(x)));
                }
            }
        }
        if n.norm() < 1e-12 {
            return Err(SliverError::NoNormal(v));
        }
        offset.insert(v, n.normalized() * (params.pad_fraction * h));
        star.extend(s);
    }
    let star: Vec<u32> = {
        // Padded tets first so their new ids can be read off the front.
        let mut s: Vec<u32> = tets.clone();
        let set: BTreeSet<u32> = tets.iter().copied().collect();
        s.extend(star.into_iter().filter(|t| !set.contains(t)));
        s
    };
    let mut hull: Vec<(u32, usize)> = Vec::new();
    for &t in &star {
        let tet = mesh.tet(t);
        for i in 0..4 {
            if tet.nbr[i] == NO_TET && tet.face(i).iter().any(|v| dup.contains(v)) {
                hull.push((t, i));
            }
        }
    }

    let base = mesh.num_vertices() as u32;
    let dup_id: BTreeMap<u32, u32> = dup
        .iter()
        .enumerate()
        .map(|(k, &v)| (v, base + k as u32))
        .collect();
    let sub = |v: u32| dup_id.get(&v).copied().unwrap_or(v);

    // Combinatorial prism split; orientation fixed on a tall reference prism.
    let mut new: Vec<([u32; 4], u32)> = star
        .iter()
        .map(|&t| {
            let tet = mesh.tet(t);
            (tet.v.map(sub), tet.material)
        })
        .collect();
    let n_star = new.len();
    for &(t, i) in &hull {
        let tet = mesh.tet(t);
        let f = tet.face(i);
        let up = unit_normal(t, i);
        let scale = geom::bbox_diagonal(&f.map(|v| mesh.vertex(v)));
        let reference = |v: u32| -> Point3 {
            match dup_id.iter().find(|(_, &d)| d == v) {
                Some((&o, _)) => mesh.vertex(o) + up * scale,
                None => mesh.vertex(v),
            }
        };
        let mut s = f;
        s.sort_unstable();
        let [a, b, c] = s;
        let cand = [
            [a, b, c, sub(c)],
            [a, b, sub(b), sub(c)],
            [a, sub(a), sub(b), sub(c)],
        ];
        for mut q in cand {
            let mut u = q.to_vec();
            u.sort_unstable();
            u.dedup();
            if u.len() < 4 {
                continue;
            }
            if orient3d_sign(reference(q[0]), reference(q[1]), reference(q[2]), reference(q[3]))
                != Sign::Positive
            {
                q.swap(0, 1);
            }
            new.push((q, tet.material));
        }
    }

    let mut scale = 1.0;
    for _ in 0..=params.max_halvings {
        let pos = |v: u32| -> Point3 {
            if v >= base {
                let o = *dup.iter().nth((v - base) as usize).unwrap();
                mesh.vertex(o) + offset[&o] * scale
            } else {
                mesh.vertex(v)
            }
        };
        let ok = new
            .iter()
            .all(|(q, _)| orient3d_sign(pos(q[0]), pos(q[1]), pos(q[2]), pos(q[3])) == Sign::Positive);
        if ok {
            let mut duplicated = Vec::with_capacity(dup.len());
            for &v in &dup {
                let p = mesh.vertex(v) + offset[&v] * scale;
                let d = mesh.add_vertex(p, Mobility::Free);
                debug_assert_eq!(d, dup_id[&v]);
                duplicated.push((v, d));
            }
            let ids = mesh.replace_tets(&star, &new);
            return Ok(PadReport {
                duplicated,
                chain: ids[..tets.len()].to_vec(),
                prism_tets: new.len() - n_star,
                scale,
            });
        }
        scale *= 0.5;
    }
    Err(SliverError::LockedPadding(params.max_halvings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::delaunay::delaunay_from_points;
    use crate::geom::p3;
    use crate::mesh::{hull_facets, validate};

    const SQUARE: [Point3; 4] = [
        p3(0.0, 0.0, 0.0),
        p3(1.0, 1.0, 0.0),
        p3(1.0, 0.0, 0.01),
        p3(0.0, 1.0, 0.01),
    ];

    fn oriented(mut t: [u32; 4], pts: &[Point3]) -> [u32; 4] {
        let p = t.map(|v| pts[v as usize]);
        if orient3d_sign(p[0], p[1], p[2], p[3]) != Sign::Positive {
            t.swap(0, 1);
        }
        t
    }

    /// Sliver `0123` capped above by vertex 4 and, optionally, below by 5.
    fn bipyramid(below: bool) -> TetMesh {
        let mut pts = SQUARE.to_vec();
        pts.push(p3(0.5, 0.5, 1.0));
        pts.push(p3(0.5, 0.5, -1.0));
        let mut tets = vec![[0, 1, 2, 3], [2, 3, 0, 4], [2, 3, 1, 4]];
        if below {
            tets.push([0, 1, 2, 5]);
            tets.push([0, 1, 3, 5]);
        } else {
            pts.pop();
        }
        let tets: Vec<[u32; 4]> = tets.into_iter().map(|t| oriented(t, &pts)).collect();
        let facets = hull_facets(&tets, 0);
        let with_mat: Vec<([u32; 4], u32)> = tets.iter().map(|&t| (t, 0)).collect();
        let mut m = TetMesh::from_parts(pts, &with_mat, &facets, &[]).unwrap();
        m.assign_default_mobility();
        m
    }

    #[test]
    fn single_sliver_is_isolated() {
        let t = oriented([0, 1, 2, 3], &SQUARE);
        let m = TetMesh::from_parts(SQUARE.to_vec(), &[(t, 0)], &[], &[]).unwrap();
        let g = detect_slivers(&m, THETA_LOW, THETA_HIGH);
        assert_eq!(g.len(), 1);
        assert_eq!(g.slivers[0].class, SliverClass::Isolated);
        assert_eq!(g.slivers[0].diagonal, [[0, 1], [2, 3]]);
    }

    #[test]
    fn regular_tet_has_no_slivers() {
        let m = crate::gen::regular_tet(1.0).build().unwrap();
        assert!(detect_slivers(&m, THETA_LOW, THETA_HIGH).is_empty());
    }

    #[test]
    fn interior_sliver_flips_away() {
        let mut pts = SQUARE.to_vec();
        pts.push(p3(0.5, 0.5, 1.0));
        pts.push(p3(0.5, 0.5, -1.0));
        for i in 0..8 {
            let c = |b: usize| if i >> b & 1 == 1 { 3.0 } else { -2.0 };
            let j = 0.1 * ((i * i) % 7) as f64;
            pts.push(p3(c(0) + j, c(1) - 0.7 * j, c(2) + 0.3 * j));
        }
        let mut m = delaunay_from_points(&pts).unwrap();
        let v0 = m.total_volume();
        let quad = |m: &TetMesh, t: u32| {
            let mut v = m.tet(t).v;
            v.sort_unstable();
            v == [0, 1, 2, 3]
        };
        let g = detect_slivers(&m, THETA_LOW, THETA_HIGH);
        let s = g.slivers.iter().find(|s| quad(&m, s.tet)).unwrap();
        assert_eq!(s.class, SliverClass::Isolated);
        let before = count_below(&m, THETA_LOW);
        let r = remove_slivers(&mut m, &g, &RemovalParams::default());
        assert!(r.flips23 + r.flips32 >= 1, "{r:?}");
        assert!(!r.residual.slivers.iter().any(|s| quad(&m, s.tet)));
        assert!(count_below(&m, THETA_LOW) < before);
        assert!((m.total_volume() - v0).abs() < 1e-12);
        let v = validate(&m);
        assert!(v.is_valid(), "{:?}", v.violations);
    }

    #[test]
    fn blocked_sliver_survives() {
        let t = oriented([0, 1, 2, 3], &SQUARE);
        let facets = hull_facets(&[t], 0);
        let mut m = TetMesh::from_parts(SQUARE.to_vec(), &[(t, 0)], &facets, &[]).unwrap();
        m.assign_default_mobility();
        let g = detect_slivers(&m, THETA_LOW, THETA_HIGH);
        assert_eq!(g.slivers[0].class, SliverClass::Blocked);
        let r = remove_slivers(&mut m, &g, &RemovalParams::default());
        assert_eq!(r.residual.len(), 1);
        assert_eq!(m.num_tets(), 1);
    }

    #[test]
    fn padding_unblocks_a_wall_sliver() {
        let mut m = bipyramid(false);
        let g = detect_slivers(&m, THETA_LOW, THETA_HIGH);
        assert_eq!(g.len(), 1);
        assert_eq!(g.slivers[0].class, SliverClass::Blocked);

        let v0 = m.total_volume();
        let fixed: Vec<Point3> = (0..m.num_vertices() as u32).map(|v| m.vertex(v)).collect();
        let facets_before: Vec<[u32; 3]> = m.facets().map(|(_, f)| f.v).collect();
        let pad = pad_locked(&mut m, &[g.slivers[0].tet], &PadParams::default()).unwrap();
        assert_eq!(pad.duplicated.len(), 4);
        assert!(validate(&m).is_valid(), "{:?}", validate(&m).violations);
        assert!((m.total_volume() - v0).abs() < 1e-12 * v0);
        for (i, p) in fixed.iter().enumerate() {
            assert_eq!(m.vertex(i as u32), *p);
        }
        let facets_after: Vec<[u32; 3]> = m.facets().map(|(_, f)| f.v).collect();
        assert_eq!(facets_before, facets_after);
        let g = detect_slivers(&m, THETA_LOW, THETA_HIGH);
        let t = pad.chain[0];
        let s = g.slivers.iter().find(|s| s.tet == t).expect("still flat");
        assert_eq!(s.class, SliverClass::Isolated);
    }

    fn pentagon_prism() -> TetMesh {
        let mut pts = Vec::new();
        for z in [0.0, 1.0] {
            for k in 0..5 {
                let a = 2.0 * std::f64::consts::PI * k as f64 / 5.0;
                pts.push(p3(a.cos(), a.sin(), z));
            }
        }
        delaunay_from_points(&pts).unwrap()
    }

    #[test]
    fn pentagon_prism_is_one_cluster() {
        let m = pentagon_prism();
        let c = detect_cospherical_clusters(&m, 1e-9);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].tets.len(), m.num_tets());
    }

    #[test]
    fn strongly_coupled_pair_is_a_chain() {
        // Two slivers sharing the diagonal 0-1 of a flattened quad pair.
        let pts = vec![
            p3(0.0, 0.0, 0.0),
            p3(1.0, 1.0, 0.0),
            p3(1.0, 0.0, 0.01),
            p3(0.0, 1.0, 0.01),
            p3(1.0, 0.0, -0.01),
            p3(0.0, 1.0, -0.01),
        ];
        let tets = [oriented([0, 1, 2, 3], &pts), oriented([0, 1, 4, 5], &pts)];
        let with_mat: Vec<([u32; 4], u32)> = tets.iter().map(|&t| (t, 0)).collect();
        let m = TetMesh::from_parts(pts, &with_mat, &[], &[]).unwrap();
        let g = detect_slivers(&m, THETA_LOW, THETA_HIGH);
        assert_eq!(g.len(), 2);
        assert_eq!(g.couplings, vec![(0, 1, Coupling::Strong)]);
        assert!(g.slivers.iter().all(|s| s.class == SliverClass::ChainMember));
        assert_eq!(g.chains(), vec![vec![0, 1]]);
    }

    #[test]
    fn cube_corners_form_one_cluster() {
        let mut pts = Vec::new();
        for i in 0..8 {
            pts.push(p3((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64));
        }
        let m = delaunay_from_points(&pts).unwrap();
        let c = detect_cospherical_clusters(&m, 1e-9);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].tets.len(), m.num_tets());
        assert!(c[0].center.dist(p3(0.5, 0.5, 0.5)) < 1e-12);
    }

    #[test]
    fn random_points_have_no_clusters() {
        let m = delaunay_from_points(&crate::gen::random_points(300, 7)).unwrap();
        assert!(detect_cospherical_clusters(&m, 1e-9).is_empty());
    }

    #[test]
    fn twisted_floor_is_a_locked_ring() {
        let mut m = crate::tetra::tetrahedralize_points(&crate::gen::twisted_floor_box(2, 1.0 / 64.0)).unwrap();
        m.assign_default_mobility();
        let g = detect_slivers(&m, THETA_LOW, THETA_HIGH);
        assert_eq!(g.count(SliverClass::Blocked), 4);
        assert_eq!(g.couplings.len(), 4);
        assert!(g.couplings.iter().all(|c| c.2 == Coupling::Weak));
        assert_eq!(g.blocked_groups().len(), 1);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let t = oriented([0, 1, 2, 3], &SQUARE);
        let m = TetMesh::from_parts(SQUARE.to_vec(), &[(t, 0)], &[], &[]).unwrap();
        let csv = detect_slivers(&m, THETA_LOW, THETA_HIGH).to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "tet,class,min_dihedral,max_dihedral");
        assert!(lines[1].starts_with("0,isolated,"));
    }
}
