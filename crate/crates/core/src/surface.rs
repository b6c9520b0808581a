//! Obtuse-triangle elimination on manifold surface triangulations.
//!
//! From the obtuse corner of each bad triangle a polyline is traced straight
//! across the opposite edge and onward through neighboring triangles
//! (unfolded across each edge), collecting new points on the edges it
//! crosses, until joining the last point to an existing vertex is good
//! enough or a stop rule fires. Nothing is split while tracing. Afterwards every triangle that
//! received edge points is re-triangulated on its own with a planar
//! Delaunay triangulation, so neighbors agree on shared edges.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::geom::{self, Point3};
use crate::mesh::{edge_key, EdgeKey};
use crate::refine2d::{triangulate2d, Pslg};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurfaceError {
    #[error("triangle {0} references a missing vertex or repeats one")]
    BadTriangle(usize),
    #[error("edge {edge:?} is shared by more than two triangles")]
    NonManifold { edge: EdgeKey },
    #[error("triangles on edge {edge:?} of patch {patch} have inconsistent orientation")]
    Orientation { edge: EdgeKey, patch: u32 },
    #[error("re-triangulation of triangle {0} failed")]
    Retriangulation(usize),
}

/// Triangulated surface with a patch id per triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceMesh {
    pub vertices: Vec<Point3>,
    pub triangles: Vec<[u32; 3]>,
    pub patches: Vec<u32>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Point3>, triangles: Vec<[u32; 3]>, patches: Vec<u32>) -> Result<Self, SurfaceError> {
        let s = SurfaceMesh { vertices, triangles, patches };
        s.check()?;
        Ok(s)
    }

    /// Index range, manifold edges and consistent orientation within patches.
    pub fn check(&self) -> Result<(), SurfaceError> {
        let n = self.vertices.len() as u32;
        for (i, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&v| v >= n) || t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
                return Err(SurfaceError::BadTriangle(i));
            }
        }
        for (e, ts) in self.edge_map() {
            if ts.len() > 2 {
                return Err(SurfaceError::NonManifold { edge: e });
            }
            if ts.len() == 2 && self.patches[ts[0]] == self.patches[ts[1]] {
                // Consistent orientation: the edge runs in opposite directions.
                let dir = |t: usize| {
                    let v = self.triangles[t];
                    (0..3).any(|k| v[k] == e[0] && v[(k + 1) % 3] == e[1])
                };
                if dir(ts[0]) == dir(ts[1]) {
                    return Err(SurfaceError::Orientation { edge: e, patch: self.patches[ts[0]] });
                }
            }
        }
        Ok(())
    }

    /// Triangles on each edge, sorted by edge.
    pub fn edge_map(&self) -> BTreeMap<EdgeKey, Vec<usize>> {
        let mut m: BTreeMap<EdgeKey, Vec<usize>> = BTreeMap::new();
        for (i, t) in self.triangles.iter().enumerate() {
            for k in 0..3 {
                m.entry(edge_key(t[k], t[(k + 1) % 3])).or_default().push(i);
            }
        }
        m
    }

    pub fn points(&self, t: usize) -> [Point3; 3] {
        self.triangles[t].map(|v| self.vertices[v as usize])
    }

    /// Largest interior angle of triangle `t`, in degrees.
    pub fn max_angle(&self, t: usize) -> f64 {
        let [a, b, c] = self.points(t);
        let ang = geom::triangle_angles(a, b, c);
        ang.iter().fold(0.0f64, |m, &x| m.max(x)).to_degrees()
    }

    pub fn max_angle_overall(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.max_angle(t)).fold(0.0, f64::max)
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.points(t);
                geom::triangle_area(a, b, c)
            })
            .sum()
    }
}

/// Triangles whose largest angle exceeds `threshold_deg`, worst first.
pub fn find_obtuse(s: &SurfaceMesh, threshold_deg: f64) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = (0..s.triangles.len())
        .map(|t| (t, s.max_angle(t)))
        .filter(|&(_, a)| a > threshold_deg)
        .collect();
    out.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.cmp(&y.0)));
    out
}

/// Polyline tracing limits.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceParams {
    /// Snap to a vertex or existing edge point closer than this fraction of
    /// the crossed edge.
    pub snap_fraction: f64,
    /// Maximum triangles a polyline may cross.
    pub max_triangles: usize,
}

impl Default for TraceParams {
    fn default() -> Self {
        TraceParams { snap_fraction: 0.3, max_triangles: 20 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, serde::Serialize)]
pub struct ObtuseReport {
    pub passes: usize,
    pub polylines: usize,
    pub added_vertices: usize,
    /// Triangles still above the threshold on exit.
    pub residual: Vec<(usize, f64)>,
}

/// Points recorded on edges: parameter along `key[0] -> key[1]` and vertex id.
type EdgePoints = BTreeMap<EdgeKey, Vec<(f64, u32)>>;

struct Tracer<'a> {
    s: &'a SurfaceMesh,
    edges: BTreeMap<EdgeKey, Vec<usize>>,
    points: EdgePoints,
    new_vertices: Vec<Point3>,
    params: TraceParams,
    threshold_deg: f64,
}

impl Tracer<'_> {
    fn vertex(&self, v: u32) -> Point3 {
        let n = self.s.vertices.len();
        if (v as usize) < n {
            self.s.vertices[v as usize]
        } else {
            self.new_vertices[v as usize - n]
        }
    }

    /// Add a point at parameter `t` on edge `e`, or reuse one within the
    /// snap distance (flagged `false`); `None` if an endpoint is that close.
    fn add_point(&mut self, e: EdgeKey, t: f64, snap_ends: bool) -> Option<(u32, bool)> {
        let tol = self.params.snap_fraction;
        if snap_ends && (t < tol || t > 1.0 - tol) {
            return None;
        }
        let list = self.points.entry(e).or_default();
        if let Some(&(_, v)) = list.iter().find(|&&(u, _)| (u - t).abs() < tol) {
            return Some((v, false));
        }
        let (a, b) = (self.s.vertices[e[0] as usize], self.s.vertices[e[1] as usize]);
        let id = (self.s.vertices.len() + self.new_vertices.len()) as u32;
        self.new_vertices.push(a + (b - a) * t);
        list.push((t, id));
        Some((id, true))
    }

    fn other_triangle(&self, e: EdgeKey, t: usize) -> Option<usize> {
        self.edges.get(&e)?.iter().copied().find(|&x| x != t)
    }

    /// Trace from the obtuse corner `k` of triangle `t`.
    fn trace(&mut self, t: usize, k: usize) -> bool {
        let tv = self.s.triangles[t];
        let (o, a, b) = (tv[k], tv[(k + 1) % 3], tv[(k + 2) % 3]);
        let po = self.s.vertices[o as usize];
        let e = edge_key(a, b);
        let (p0, p1) = (self.s.vertices[e[0] as usize], self.s.vertices[e[1] as usize]);
        let d = p1 - p0;
        let tpar = ((po - p0).dot(d) / d.norm2()).clamp(0.0, 1.0);
        let Some(_) = self.add_point(e, tpar, false) else { return false };
        let mut x = p0 + d * tpar;
        let mut dir = (x - po).normalized();
        let mut from = t;
        let mut edge = e;
        for _ in 0..self.params.max_triangles {
            let Some(n) = self.other_triangle(edge, from) else { break };
            let nv = self.s.triangles[n];
            let c = *nv.iter().find(|&&v| v != edge[0] && v != edge[1]).unwrap();
            let (q0, q1, pc) = (self.vertex(edge[0]), self.vertex(edge[1]), self.s.vertices[c as usize]);
            // Connecting `x` to the opposite vertex is enough if both halves
            // stay under the threshold.
            let max_deg = |p: Point3, q: Point3, r: Point3| {
                geom::triangle_angles(p, q, r).iter().fold(0.0f64, |m, &x| m.max(x)).to_degrees()
            };
            if max_deg(q0, x, pc) < self.threshold_deg && max_deg(x, q1, pc) < self.threshold_deg {
                break;
            }
            // Unfold the direction into the plane of `n`.
            let u = (q1 - q0).normalized();
            let w = {
                let r = pc - q0;
                (r - u * r.dot(u)).normalized()
            };
            let along = dir.dot(u);
            let across = (1.0 - along * along).max(0.0).sqrt();
            dir = u * along + w * across;
            // 2D frame (u, w) with origin q0.
            let to2 = |p: Point3| [(p - q0).dot(u), (p - q0).dot(w)];
            let x2 = to2(x);
            let d2 = [dir.dot(u), dir.dot(w)];
            let mut hit: Option<(f64, EdgeKey, f64)> = None;
            for (s0, s1) in [(edge[0], c), (edge[1], c)] {
                let (a2, b2) = (to2(self.vertex(s0)), to2(self.vertex(s1)));
                let m = [b2[0] - a2[0], b2[1] - a2[1]];
                let den = d2[0] * m[1] - d2[1] * m[0];
                if den.abs() < 1e-300 {
                    continue;
                }
                let r = [a2[0] - x2[0], a2[1] - x2[1]];
                let sray = (r[0] * m[1] - r[1] * m[0]) / den;
                let tseg = (r[0] * d2[1] - r[1] * d2[0]) / den;
                if sray > 0.0 && (0.0..=1.0).contains(&tseg) && hit.is_none_or(|h| sray < h.0) {
                    let key = edge_key(s0, s1);
                    let tk = if key[0] == s0 { tseg } else { 1.0 - tseg };
                    hit = Some((sray, key, tk));
                }
            }
            let Some((_, key, tk)) = hit else { break };
            let Some((id, fresh)) = self.add_point(key, tk, true) else { break };
            if !fresh {
                break;
            }
            x = self.vertex(id);
            from = n;
            edge = key;
        }
        true
    }
}

/// Re-triangulate one triangle with the points recorded on its edges.
fn retriangulate(
    t: usize,
    tv: [u32; 3],
    pos: &dyn Fn(u32) -> Point3,
    points: &EdgePoints,
) -> Result<Vec<[u32; 3]>, SurfaceError> {
    let mut ring: Vec<u32> = Vec::new();
    for k in 0..3 {
        let (a, b) = (tv[k], tv[(k + 1) % 3]);
        ring.push(a);
        let key = edge_key(a, b);
        if let Some(list) = points.get(&key) {
            let mut l: Vec<(f64, u32)> = list.iter().map(|&(u, v)| (if key[0] == a { u } else { 1.0 - u }, v)).collect();
            l.sort_by(|x, y| x.0.total_cmp(&y.0));
            ring.extend(l.into_iter().map(|(_, v)| v));
        }
    }
    if ring.len() == 3 {
        return Ok(vec![tv]);
    }
    let (a, b, c) = (pos(tv[0]), pos(tv[1]), pos(tv[2]));
    let u = (b - a).normalized();
    let w = {
        let r = c - a;
        (r - u * r.dot(u)).normalized()
    };
    let pts: Vec<[f64; 2]> = ring.iter().map(|&v| [(pos(v) - a).dot(u), (pos(v) - a).dot(w)]).collect();
    let n = ring.len() as u32;
    let pslg = Pslg { points: pts, segments: (0..n).map(|i| [i, (i + 1) % n]).collect(), holes: vec![] };
    let m = triangulate2d(&pslg).map_err(|_| SurfaceError::Retriangulation(t))?;
    if m.points.len() != ring.len() {
        return Err(SurfaceError::Retriangulation(t));
    }
    // Output points keep input order when no splits were needed.
    Ok(m.triangles.iter().map(|tri| tri.map(|i| ring[i as usize])).collect())
}

/// One tracing and re-triangulation pass.
fn pass(s: &SurfaceMesh, threshold_deg: f64, params: TraceParams, report: &mut ObtuseReport) -> Result<SurfaceMesh, SurfaceError> {
    let bad = find_obtuse(s, threshold_deg);
    let mut tr = Tracer {
        s,
        edges: s.edge_map(),
        points: BTreeMap::new(),
        new_vertices: Vec::new(),
        params,
        threshold_deg,
    };
    for &(t, _) in &bad {
        let [a, b, c] = s.points(t);
        let ang = geom::triangle_angles(a, b, c);
        let k = (0..3).max_by(|&i, &j| ang[i].total_cmp(&ang[j])).unwrap();
        if tr.trace(t, k) {
            report.polylines += 1;
        }
    }
    report.added_vertices += tr.new_vertices.len();
    let mut vertices = s.vertices.clone();
    vertices.extend(tr.new_vertices.iter().copied());
    let mut triangles = Vec::with_capacity(s.triangles.len());
    let mut patches = Vec::with_capacity(s.triangles.len());
    let pos = |v: u32| vertices[v as usize];
    for (t, &tv) in s.triangles.iter().enumerate() {
        for child in retriangulate(t, tv, &pos, &tr.points)? {
            triangles.push(child);
            patches.push(s.patches[t]);
        }
    }
    Ok(SurfaceMesh { vertices, triangles, patches })
}

/// Remove triangles with an angle above `threshold_deg`, in at most
/// `max_passes` passes.
pub fn eliminate_obtuse(
    s: &SurfaceMesh,
    threshold_deg: f64,
    max_passes: usize,
) -> Result<(SurfaceMesh, ObtuseReport), SurfaceError> {
    eliminate_obtuse_with(s, threshold_deg, max_passes, TraceParams::default())
}

pub fn eliminate_obtuse_with(
    s: &SurfaceMesh,
    threshold_deg: f64,
    max_passes: usize,
    params: TraceParams,
) -> Result<(SurfaceMesh, ObtuseReport), SurfaceError> {
    s.check()?;
    let mut report = ObtuseReport::default();
    let mut cur = s.clone();
    while report.passes < max_passes && !find_obtuse(&cur, threshold_deg).is_empty() {
        cur = pass(&cur, threshold_deg, params, &mut report)?;
        report.passes += 1;
    }
    report.residual = find_obtuse(&cur, threshold_deg);
    Ok((cur, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::p3;

    fn strip(apex_height: f64) -> SurfaceMesh {
        // Two triangles sharing edge (0,1); triangle 0 is very obtuse at 2.
        let v = vec![p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.5, apex_height, 0.0), p3(0.5, -0.8, 0.0)];
        SurfaceMesh::new(v, vec![[0, 1, 2], [1, 0, 3]], vec![0, 0]).unwrap()
    }

    #[test]
    fn equilateral_is_clean() {
        let h = 3f64.sqrt() / 2.0;
        let s = SurfaceMesh::new(vec![p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.5, h, 0.0)], vec![[0, 1, 2]], vec![0])
            .unwrap();
        assert!(find_obtuse(&s, 150.0).is_empty());
        let (out, r) = eliminate_obtuse(&s, 150.0, 4).unwrap();
        assert_eq!(out, s);
        assert_eq!(r.passes, 0);
    }

    #[test]
    fn obtuse_listed_and_threshold() {
        // Apex angle 160 deg: half-angle 80, height 0.5 / tan(80).
        let s = strip(0.5 / 80f64.to_radians().tan());
        let l = find_obtuse(&s, 150.0);
        assert_eq!(l.len(), 1);
        assert!((l[0].1 - 160.0).abs() < 1e-9);
        let s = strip(0.5 / 89.95f64.to_radians().tan());
        assert!(find_obtuse(&s, 179.95).is_empty());
        assert_eq!(find_obtuse(&s, 150.0).len(), 1);
    }

    #[test]
    fn split_removes_obtuse_and_keeps_area() {
        let s = strip(0.02);
        let (out, r) = eliminate_obtuse(&s, 150.0, 4).unwrap();
        assert!(r.residual.is_empty(), "{r:?}");
        assert!(out.max_angle_overall() < 150.0);
        assert!((out.area() - s.area()).abs() < 1e-14);
        for v in &out.vertices {
            assert!(v.z == 0.0);
        }
    }

    #[test]
    fn non_manifold_rejected() {
        let v = vec![p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.0, 1.0, 0.0), p3(0.0, -1.0, 0.0), p3(0.0, 0.0, 1.0)];
        let r = SurfaceMesh::new(v, vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]], vec![0, 0, 1]);
        assert!(matches!(r, Err(SurfaceError::NonManifold { .. })));
    }

    #[test]
    fn inconsistent_orientation_rejected() {
        let v = vec![p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.0, 1.0, 0.0), p3(0.0, -1.0, 0.0)];
        let r = SurfaceMesh::new(v, vec![[0, 1, 2], [0, 1, 3]], vec![0, 0]);
        assert!(matches!(r, Err(SurfaceError::Orientation { .. })));
    }
}
