//! Tetrahedral mesh storage, adjacency and quality metrics.
//!
//! Tets, facets and segments are append-only arrays with tombstones; ids stay
//! valid until [`TetMesh::compact`] is called at a stage boundary. Vertex ids
//! never change.

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, orient3d_sign, Point3, Sign};

/// Neighbor sentinel for faces on the mesh boundary.
pub const NO_TET: u32 = u32::MAX;

/// Local vertex indices of the face opposite each vertex, ordered so that
/// `orient3d(face, opposite) > 0` for a positive tet.
pub const FACE_IDX: [[usize; 3]; 4] = [[1, 3, 2], [0, 2, 3], [0, 3, 1], [0, 1, 2]];

/// Sorted vertex triple identifying a face.
pub type FaceKey = [u32; 3];
/// Sorted vertex pair identifying an edge.
pub type EdgeKey = [u32; 2];

#[inline]
pub fn face_key(a: u32, b: u32, c: u32) -> FaceKey {
    let mut k = [a, b, c];
    k.sort_unstable();
    k
}

#[inline]
pub fn edge_key(a: u32, b: u32) -> EdgeKey {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

/// How a vertex may move during smoothing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mobility {
    Fixed,
    SlideAlongEdge(u32),
    SlideOnFace(u32),
    Free,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tet {
    pub v: [u32; 4],
    pub nbr: [u32; 4],
    pub material: u32,
    pub alive: bool,
}

impl Tet {
    /// Vertices of local face `i`, inward oriented.
    #[inline]
    pub fn face(&self, i: usize) -> [u32; 3] {
        let f = FACE_IDX[i];
        [self.v[f[0]], self.v[f[1]], self.v[f[2]]]
    }

    #[inline]
    pub fn local(&self, v: u32) -> Option<usize> {
        self.v.iter().position(|&x| x == v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Facet {
    pub v: [u32; 3],
    pub patch: u32,
    pub alive: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub v: [u32; 2],
    pub curve: u32,
    pub alive: bool,
}

/// Fitted plane of an aggregated boundary patch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    pub point: Point3,
    pub normal: Point3,
}

impl Plane {
    pub fn project(&self, p: Point3) -> Point3 {
        p - self.normal * (p - self.point).dot(self.normal)
    }
}

/// Fitted line of an aggregated straight boundary curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub point: Point3,
    pub dir: Point3,
}

impl Line {
    pub fn project(&self, p: Point3) -> Point3 {
        self.point + self.dir * (p - self.point).dot(self.dir)
    }
}

/// Geometry referenced by the ids in [`Mobility`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundaryModel {
    pub planes: Vec<Plane>,
    pub lines: Vec<Line>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MeshError {
    #[error("tet {tet} references a missing vertex")]
    BadVertex { tet: usize },
    #[error("face {face:?} is shared by more than two tets")]
    NonManifoldVolume { face: FaceKey },
    #[error("tet {tet} is not positively oriented")]
    Inverted { tet: usize },
    #[error("non-finite vertex {vertex}")]
    NonFinite { vertex: usize },
}

/// The mesh. See the module docs for the id lifetime rules.
#[derive(Clone, Debug, Default)]
pub struct TetMesh {
    vertices: Vec<Point3>,
    mobility: Vec<Mobility>,
    tets: Vec<Tet>,
    facets: Vec<Facet>,
    facet_index: FxHashMap<FaceKey, u32>,
    segments: Vec<Segment>,
    segment_index: FxHashMap<EdgeKey, u32>,
    vertex_tet: Vec<u32>,
    live: usize,
    pub boundary_model: BoundaryModel,
}

impl TetMesh {
    /// Build a mesh from raw arrays and link adjacency.
    ///
    /// Vertices touching a facet start `Fixed`; all others `Free`.
    pub fn from_parts(
        vertices: Vec<Point3>,
        tets: &[([u32; 4], u32)],
        facets: &[([u32; 3], u32)],
        segments: &[([u32; 2], u32)],
    ) -> Result<TetMesh, MeshError> {
        let n = vertices.len();
        let mut m = TetMesh {
            mobility: vec![Mobility::Free; n],
            vertex_tet: vec![NO_TET; n],
            vertices,
            ..Default::default()
        };
        for (i, p) in m.vertices.iter().enumerate() {
            if !p.is_finite() {
                return Err(MeshError::NonFinite { vertex: i });
            }
        }
        for (i, (v, mat)) in tets.iter().enumerate() {
            if v.iter().any(|&x| x as usize >= n) {
                return Err(MeshError::BadVertex { tet: i });
            }
            m.tets.push(Tet {
                v: *v,
                nbr: [NO_TET; 4],
                material: *mat,
                alive: true,
            });
        }
        m.live = m.tets.len();
        for (v, patch) in facets {
            m.add_facet(*v, *patch);
        }
        for (v, curve) in segments {
            m.add_segment(*v, *curve);
        }
        m.build_adjacency()?;
        m.assign_default_mobility();
        Ok(m)
    }

    /// Recompute all face adjacency from scratch.
    pub fn build_adjacency(&mut self) -> Result<(), MeshError> {
        let mut faces: FxHashMap<FaceKey, (u32, usize)> = FxHashMap::default();
        let mut seen: FxHashSet<[u32; 4]> = FxHashSet::default();
        for t in self.tets.iter_mut() {
            t.nbr = [NO_TET; 4];
            let mut k = t.v;
            k.sort_unstable();
            if t.alive && !seen.insert(k) {
                return Err(MeshError::NonManifoldVolume {
                    face: [k[0], k[1], k[2]],
                });
            }
        }
        for ti in 0..self.tets.len() {
            if !self.tets[ti].alive {
                continue;
            }
            let p = self.tet_points(ti as u32);
            if orient3d_sign(p[0], p[1], p[2], p[3]) != Sign::Positive {
                return Err(MeshError::Inverted { tet: ti });
            }
            for i in 0..4 {
                let f = self.tets[ti].face(i);
                let k = face_key(f[0], f[1], f[2]);
                match faces.get(&k).copied() {
                    None => {
                        faces.insert(k, (ti as u32, i));
                    }
                    Some((tj, j)) => {
                        if self.tets[tj as usize].nbr[j] != NO_TET || tj as usize == ti {
                            return Err(MeshError::NonManifoldVolume { face: k });
                        }
                        self.tets[tj as usize].nbr[j] = ti as u32;
                        self.tets[ti].nbr[i] = tj;
                    }
                }
            }
            for &v in &self.tets[ti].v {
                self.vertex_tet[v as usize] = ti as u32;
            }
        }
        Ok(())
    }

    /// Facet vertices `Fixed`, everything else `Free`.
    pub fn assign_default_mobility(&mut self) {
        let on = self.facet_vertex_set();
        for (i, m) in self.mobility.iter_mut().enumerate() {
            *m = if on.contains(&(i as u32)) {
                Mobility::Fixed
            } else {
                Mobility::Free
            };
        }
    }

    // ---- vertices ----

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    #[inline]
    pub fn vertex(&self, v: u32) -> Point3 {
        self.vertices[v as usize]
    }

    pub fn vertices(&self) -> &[Point3] {
        &self.vertices
    }

    /// Move a vertex. Callers are responsible for keeping tets positive.
    #[inline]
    pub fn set_vertex(&mut self, v: u32, p: Point3) {
        self.vertices[v as usize] = p;
    }

    pub fn add_vertex(&mut self, p: Point3, mobility: Mobility) -> u32 {
        self.vertices.push(p);
        self.mobility.push(mobility);
        self.vertex_tet.push(NO_TET);
        (self.vertices.len() - 1) as u32
    }

    /// Drop trailing vertices (used to roll back a failed insertion).
    pub fn truncate_vertices(&mut self, n: usize) {
        self.vertices.truncate(n);
        self.mobility.truncate(n);
        self.vertex_tet.truncate(n);
    }

    #[inline]
    pub fn mobility(&self, v: u32) -> Mobility {
        self.mobility[v as usize]
    }

    pub fn mobilities(&self) -> &[Mobility] {
        &self.mobility
    }

    pub fn set_mobility(&mut self, v: u32, m: Mobility) {
        self.mobility[v as usize] = m;
    }

    // ---- tets ----

    /// Number of live tets.
    pub fn num_tets(&self) -> usize {
        self.live
    }

    /// Size of the tet id space, tombstones included.
    pub fn tet_capacity(&self) -> usize {
        self.tets.len()
    }

    #[inline]
    pub fn tet(&self, t: u32) -> &Tet {
        &self.tets[t as usize]
    }

    #[inline]
    pub fn is_alive(&self, t: u32) -> bool {
        (t as usize) < self.tets.len() && self.tets[t as usize].alive
    }

    pub fn set_material(&mut self, t: u32, material: u32) {
        self.tets[t as usize].material = material;
    }

    /// Iterate live tets as `(id, tet)`.
    pub fn tets(&self) -> impl Iterator<Item = (u32, &Tet)> + '_ {
        self.tets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.alive)
            .map(|(i, t)| (i as u32, t))
    }

    pub fn tet_ids(&self) -> Vec<u32> {
        self.tets().map(|(i, _)| i).collect()
    }

    #[inline]
    pub fn tet_points(&self, t: u32) -> [Point3; 4] {
        let v = self.tets[t as usize].v;
        [
            self.vertex(v[0]),
            self.vertex(v[1]),
            self.vertex(v[2]),
            self.vertex(v[3]),
        ]
    }

    pub fn centroid(&self, t: u32) -> Point3 {
        let p = self.tet_points(t);
        (p[0] + p[1] + p[2] + p[3]) * 0.25
    }

    pub fn volume(&self, t: u32) -> f64 {
        let p = self.tet_points(t);
        geom::signed_volume(p[0], p[1], p[2], p[3])
    }

    pub fn total_volume(&self) -> f64 {
        self.tets().map(|(i, _)| self.volume(i)).sum()
    }

    /// Remove `old` tets and insert `new` ones, relinking adjacency across the
    /// cavity boundary. Returns the new ids.
    pub fn replace_tets(&mut self, old: &[u32], new: &[([u32; 4], u32)]) -> Vec<u32> {
        let old_set: FxHashSet<u32> = old.iter().copied().collect();
        let mut outer: FxHashMap<FaceKey, u32> = FxHashMap::default();
        for &t in old {
            let tet = &self.tets[t as usize];
            debug_assert!(tet.alive);
            for i in 0..4 {
                let nb = tet.nbr[i];
                if nb == NO_TET || !old_set.contains(&nb) {
                    let f = tet.face(i);
                    outer.insert(face_key(f[0], f[1], f[2]), nb);
                }
            }
        }
        for &t in old {
            self.tets[t as usize].alive = false;
        }
        self.live -= old.len();
        let base = self.tets.len() as u32;
        let mut inner: FxHashMap<FaceKey, (u32, usize)> = FxHashMap::default();
        let mut ids = Vec::with_capacity(new.len());
        for (k, (v, mat)) in new.iter().enumerate() {
            let id = base + k as u32;
            self.tets.push(Tet {
                v: *v,
                nbr: [NO_TET; 4],
                material: *mat,
                alive: true,
            });
            ids.push(id);
            for &x in v {
                self.vertex_tet[x as usize] = id;
            }
        }
        self.live += new.len();
        for &id in &ids {
            for i in 0..4 {
                let f = self.tets[id as usize].face(i);
                let key = face_key(f[0], f[1], f[2]);
                if let Some(&nb) = outer.get(&key) {
                    self.tets[id as usize].nbr[i] = nb;
                    if nb != NO_TET {
                        let j = self.local_face(nb, &key);
                        self.tets[nb as usize].nbr[j] = id;
                    }
                } else if let Some((o, j)) = inner.remove(&key) {
                    self.tets[id as usize].nbr[i] = o;
                    self.tets[o as usize].nbr[j] = id;
                } else {
                    inner.insert(key, (id, i));
                }
            }
        }
        ids
    }

    fn local_face(&self, t: u32, key: &FaceKey) -> usize {
        let tet = &self.tets[t as usize];
        (0..4)
            .find(|&j| {
                let g = tet.face(j);
                face_key(g[0], g[1], g[2]) == *key
            })
            .expect("face not found in neighbor")
    }

    /// A live tet incident to `v`, if any.
    pub fn vertex_hint(&self, v: u32) -> Option<u32> {
        let h = self.vertex_tet[v as usize];
        if h != NO_TET && self.tets[h as usize].alive && self.tets[h as usize].local(v).is_some() {
            return Some(h);
        }
        self.tets()
            .find(|(_, t)| t.local(v).is_some())
            .map(|(i, _)| i)
    }

    /// All live tets incident to `v`, in ascending id order.
    pub fn vertex_star(&self, v: u32) -> Vec<u32> {
        let Some(start) = self.vertex_hint(v) else {
            return Vec::new();
        };
        let mut seen = vec![start];
        let mut stack = vec![start];
        while let Some(t) = stack.pop() {
            let tet = &self.tets[t as usize];
            let lv = tet.local(v).unwrap();
            for i in 0..4 {
                if i == lv {
                    continue;
                }
                let nb = tet.nbr[i];
                if nb != NO_TET && !seen.contains(&nb) {
                    seen.push(nb);
                    stack.push(nb);
                }
            }
        }
        seen.sort_unstable();
        seen
    }

    /// Tets around edge `(a, b)` in rotational order; `closed` is false when
    /// the ring touches the mesh boundary.
    pub fn edge_ring(&self, a: u32, b: u32) -> Option<EdgeRing> {
        let star = self.vertex_star(a);
        let start = *star
            .iter()
            .find(|&&t| self.tets[t as usize].local(b).is_some())?;
        // Walk in one direction, then the other if the ring is open.
        let step = |t: u32, from: u32| -> u32 {
            let tet = &self.tets[t as usize];
            let (la, lb) = (tet.local(a).unwrap(), tet.local(b).unwrap());
            let (k, m) = geom::other_two(la, lb);
            let n1 = tet.nbr[k];
            let n2 = tet.nbr[m];
            if n1 != from {
                n1
            } else {
                n2
            }
        };
        let first_dir = {
            let tet = &self.tets[start as usize];
            let (la, lb) = (tet.local(a).unwrap(), tet.local(b).unwrap());
            let (k, _) = geom::other_two(la, lb);
            tet.nbr[k]
        };
        let mut ring = vec![start];
        let mut prev = start;
        let mut cur = first_dir;
        while cur != NO_TET && cur != start {
            ring.push(cur);
            let nxt = step(cur, prev);
            prev = cur;
            cur = nxt;
            if ring.len() > star.len() {
                return None;
            }
        }
        if cur == start {
            return Some(EdgeRing {
                tets: ring,
                closed: true,
            });
        }
        let tet = &self.tets[start as usize];
        let (la, lb) = (tet.local(a).unwrap(), tet.local(b).unwrap());
        let (_, m) = geom::other_two(la, lb);
        let mut back = Vec::new();
        let mut prev = start;
        let mut cur = tet.nbr[m];
        while cur != NO_TET {
            back.push(cur);
            let nxt = step(cur, prev);
            prev = cur;
            cur = nxt;
            if back.len() > star.len() {
                return None;
            }
        }
        back.reverse();
        back.extend(ring);
        Some(EdgeRing {
            tets: back,
            closed: false,
        })
    }

    /// Unique edges of live tets, sorted.
    pub fn edges(&self) -> Vec<EdgeKey> {
        let mut set: FxHashSet<EdgeKey> = FxHashSet::default();
        for (_, t) in self.tets() {
            for (i, j) in geom::EDGES {
                set.insert(edge_key(t.v[i], t.v[j]));
            }
        }
        let mut v: Vec<_> = set.into_iter().collect();
        v.sort_unstable();
        v
    }

    /// Faces without a neighbor as `(tet, local face)`.
    pub fn hull_faces(&self) -> Vec<(u32, usize)> {
        let mut out = Vec::new();
        for (i, t) in self.tets() {
            for f in 0..4 {
                if t.nbr[f] == NO_TET {
                    out.push((i, f));
                }
            }
        }
        out
    }

    /// Renumber live tets, facets and segments densely. Returns the old→new
    /// tet map (`NO_TET` for dead ids).
    pub fn compact(&mut self) -> Vec<u32> {
        let mut map = vec![NO_TET; self.tets.len()];
        let mut next = 0u32;
        for (i, t) in self.tets.iter().enumerate() {
            if t.alive {
                map[i] = next;
                next += 1;
            }
        }
        let old = std::mem::take(&mut self.tets);
        self.tets = old
            .into_iter()
            .filter(|t| t.alive)
            .map(|mut t| {
                for n in t.nbr.iter_mut() {
                    if *n != NO_TET {
                        *n = map[*n as usize];
                    }
                }
                t
            })
            .collect();
        for h in self.vertex_tet.iter_mut() {
            if *h != NO_TET {
                *h = map[*h as usize];
            }
        }
        let facets = std::mem::take(&mut self.facets);
        self.facet_index.clear();
        for f in facets.into_iter().filter(|f| f.alive) {
            self.add_facet(f.v, f.patch);
        }
        let segs = std::mem::take(&mut self.segments);
        self.segment_index.clear();
        for s in segs.into_iter().filter(|s| s.alive) {
            self.add_segment(s.v, s.curve);
        }
        map
    }

    // ---- facets and segments ----

    pub fn add_facet(&mut self, v: [u32; 3], patch: u32) -> u32 {
        let id = self.facets.len() as u32;
        self.facets.push(Facet {
            v,
            patch,
            alive: true,
        });
        self.facet_index.insert(face_key(v[0], v[1], v[2]), id);
        id
    }

    pub fn kill_facet(&mut self, id: u32) {
        let f = &mut self.facets[id as usize];
        if f.alive {
            f.alive = false;
            let k = face_key(f.v[0], f.v[1], f.v[2]);
            self.facet_index.remove(&k);
        }
    }

    pub fn set_facet_patch(&mut self, id: u32, patch: u32) {
        self.facets[id as usize].patch = patch;
    }

    pub fn set_segment_curve(&mut self, id: u32, curve: u32) {
        self.segments[id as usize].curve = curve;
    }

    #[inline]
    pub fn facet(&self, id: u32) -> &Facet {
        &self.facets[id as usize]
    }

    pub fn facets(&self) -> impl Iterator<Item = (u32, &Facet)> + '_ {
        self.facets
            .iter()
            .enumerate()
            .filter(|(_, f)| f.alive)
            .map(|(i, f)| (i as u32, f))
    }

    pub fn num_facets(&self) -> usize {
        self.facet_index.len()
    }

    #[inline]
    pub fn facet_id(&self, key: &FaceKey) -> Option<u32> {
        self.facet_index.get(key).copied()
    }

    /// Whether a face is a protected boundary facet.
    #[inline]
    pub fn is_protected(&self, f: [u32; 3]) -> bool {
        self.facet_index.contains_key(&face_key(f[0], f[1], f[2]))
    }

    pub fn facet_points(&self, id: u32) -> [Point3; 3] {
        let v = self.facets[id as usize].v;
        [self.vertex(v[0]), self.vertex(v[1]), self.vertex(v[2])]
    }

    pub fn add_segment(&mut self, v: [u32; 2], curve: u32) -> u32 {
        let id = self.segments.len() as u32;
        self.segments.push(Segment {
            v,
            curve,
            alive: true,
        });
        self.segment_index.insert(edge_key(v[0], v[1]), id);
        id
    }

    pub fn kill_segment(&mut self, id: u32) {
        let s = &mut self.segments[id as usize];
        if s.alive {
            s.alive = false;
            let k = edge_key(s.v[0], s.v[1]);
            self.segment_index.remove(&k);
        }
    }

    #[inline]
    pub fn segment(&self, id: u32) -> &Segment {
        &self.segments[id as usize]
    }

    pub fn segments(&self) -> impl Iterator<Item = (u32, &Segment)> + '_ {
        self.segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.alive)
            .map(|(i, s)| (i as u32, s))
    }

    pub fn num_segments(&self) -> usize {
        self.segment_index.len()
    }

    #[inline]
    pub fn segment_id(&self, a: u32, b: u32) -> Option<u32> {
        self.segment_index.get(&edge_key(a, b)).copied()
    }

    /// Vertices referenced by live facets.
    pub fn facet_vertex_set(&self) -> FxHashSet<u32> {
        self.facets().flat_map(|(_, f)| f.v).collect()
    }

    /// Live facets containing edge `(a, b)`.
    pub fn facets_on_edge(&self, a: u32, b: u32) -> Vec<u32> {
        let mut out = Vec::new();
        if let Some(ring) = self.edge_ring(a, b) {
            for &t in &ring.tets {
                let tet = &self.tets[t as usize];
                let (la, lb) = (tet.local(a).unwrap(), tet.local(b).unwrap());
                let (k, m) = geom::other_two(la, lb);
                for f in [k, m] {
                    let fv = tet.face(f);
                    if let Some(id) = self.facet_id(&face_key(fv[0], fv[1], fv[2])) {
                        if !out.contains(&id) {
                            out.push(id);
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out
    }
}

/// Tets around an edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeRing {
    pub tets: Vec<u32>,
    pub closed: bool,
}

// ---- quality metrics ----

/// Radius-edge ratio with a degeneracy flag.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Quality {
    pub value: f64,
    pub degenerate: bool,
}

/// `Q(T) = R_circ / l_min`; degenerate tets give `+inf` and the flag.
pub fn quality(p: &[Point3; 4]) -> Quality {
    match geom::circumsphere(p[0], p[1], p[2], p[3]) {
        Ok(s) => Quality {
            value: s.radius / min_edge(p),
            degenerate: false,
        },
        Err(_) => Quality {
            value: f64::INFINITY,
            degenerate: true,
        },
    }
}

pub fn min_edge(p: &[Point3; 4]) -> f64 {
    geom::EDGES
        .iter()
        .map(|&(i, j)| p[i].dist(p[j]))
        .fold(f64::INFINITY, f64::min)
}

pub fn max_edge(p: &[Point3; 4]) -> f64 {
    geom::EDGES
        .iter()
        .map(|&(i, j)| p[i].dist(p[j]))
        .fold(0.0, f64::max)
}

/// How a tet's 1D size is measured.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SizeMeasure {
    /// Edge of the regular tet with the same volume.
    #[default]
    RegularVolume,
    MaxEdge,
}

/// Edge length of the regular tetrahedron with the same volume.
pub fn tet_size(p: &[Point3; 4]) -> f64 {
    tet_size_with(p, SizeMeasure::RegularVolume)
}

pub fn tet_size_with(p: &[Point3; 4], m: SizeMeasure) -> f64 {
    match m {
        SizeMeasure::RegularVolume => {
            let v = geom::signed_volume(p[0], p[1], p[2], p[3]);
            if v > 0.0 {
                (6.0 * std::f64::consts::SQRT_2 * v).cbrt()
            } else {
                0.0
            }
        }
        SizeMeasure::MaxEdge => max_edge(p),
    }
}

/// Normalized aspect ratio `l_max / (2 sqrt(6) r_in)`; 1 for the regular tet.
pub fn aspect_ratio(p: &[Point3; 4]) -> f64 {
    let v = geom::signed_volume(p[0], p[1], p[2], p[3]).abs();
    let area: f64 = FACE_IDX
        .iter()
        .map(|f| geom::triangle_area(p[f[0]], p[f[1]], p[f[2]]))
        .sum();
    if v <= 0.0 {
        return f64::INFINITY;
    }
    let r_in = 3.0 * v / area;
    max_edge(p) / (2.0 * 6f64.sqrt() * r_in)
}

/// Tet diameter (longest edge).
pub fn diameter(p: &[Point3; 4]) -> f64 {
    max_edge(p)
}

// ---- histograms and validation ----

/// Histogram over explicit bin edges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn uniform(lo: f64, hi: f64, bins: usize) -> Histogram {
        let edges = (0..=bins)
            .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
            .collect();
        Histogram {
            edges,
            counts: vec![0; bins],
        }
    }

    /// Logarithmically spaced bins over `[lo, hi]`, `lo > 0`.
    pub fn log(lo: f64, hi: f64, bins: usize) -> Histogram {
        let (a, b) = (lo.ln(), hi.ln());
        let edges = (0..=bins)
            .map(|i| (a + (b - a) * i as f64 / bins as f64).exp())
            .collect();
        Histogram {
            edges,
            counts: vec![0; bins],
        }
    }

    /// Add a value; out-of-range values land in the end bins.
    pub fn add(&mut self, v: f64) {
        let n = self.counts.len();
        let i = self.edges[1..n].partition_point(|&e| e <= v);
        self.counts[i.min(n - 1)] += 1;
    }

    /// Index of the bin containing `v`.
    pub fn bin_of(&self, v: f64) -> usize {
        let n = self.counts.len();
        self.edges[1..n].partition_point(|&e| e <= v).min(n - 1)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_low,bin_high,count` lines with a header.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_low,bin_high,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            s.push_str(&format!("{},{},{}\n", self.edges[i], self.edges[i + 1], c));
        }
        s
    }
}

/// Dihedral-angle histogram in degrees, 36 bins over `[0, 180]`.
pub fn dihedral_histogram(mesh: &TetMesh) -> Histogram {
    let mut h = Histogram::uniform(0.0, 180.0, 36);
    for (t, _) in mesh.tets() {
        let p = mesh.tet_points(t);
        match geom::dihedral_angles(p[0], p[1], p[2], p[3]) {
            Ok(a) => a.iter().for_each(|v| h.add(v.to_degrees())),
            Err(_) => {
                for v in [0.0, 0.0, 0.0, 0.0, 180.0, 180.0] {
                    h.add(v);
                }
            }
        }
    }
    h
}

/// Quality histogram on log bins over `[sqrt(6)/4, 1e3]`.
pub fn quality_histogram(mesh: &TetMesh) -> Histogram {
    let mut h = Histogram::log(6f64.sqrt() / 4.0, 1e3, 30);
    for (t, _) in mesh.tets() {
        h.add(quality(&mesh.tet_points(t)).value);
    }
    h
}

/// A violated mesh invariant.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Inverted { tet: u32 },
    NonManifoldFace { face: FaceKey },
    AsymmetricAdjacency { tet: u32, face: usize },
    UnlabeledBoundaryFace { face: FaceKey },
    FacetNotInMesh { facet: u32 },
    FacetMaterialConflict { facet: u32 },
    SegmentNotInMesh { segment: u32 },
    FreeBoundaryVertex { vertex: u32 },
    ConstrainedInteriorVertex { vertex: u32 },
}

/// Output of [`validate`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub dihedral: Histogram,
    pub quality: Histogram,
    pub tets: usize,
    pub vertices: usize,
    pub facets: usize,
    pub min_dihedral_deg: f64,
    pub max_dihedral_deg: f64,
    pub max_quality: f64,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check every mesh invariant and collect histograms.
pub fn validate(mesh: &TetMesh) -> ValidationReport {
    let mut violations = Vec::new();
    let mut faces: FxHashMap<FaceKey, Vec<(u32, usize)>> = FxHashMap::default();
    let (mut dmin, mut dmax, mut qmax) = (f64::INFINITY, 0.0f64, 0.0f64);
    for (t, tet) in mesh.tets() {
        let p = mesh.tet_points(t);
        if orient3d_sign(p[0], p[1], p[2], p[3]) != Sign::Positive {
            violations.push(Violation::Inverted { tet: t });
        }
        let (lo, hi) = geom::dihedral_range_deg(&p);
        dmin = dmin.min(lo);
        dmax = dmax.max(hi);
        qmax = qmax.max(quality(&p).value);
        for i in 0..4 {
            let f = tet.face(i);
            faces
                .entry(face_key(f[0], f[1], f[2]))
                .or_default()
                .push((t, i));
            let nb = tet.nbr[i];
            let ok = if nb == NO_TET {
                true
            } else if !mesh.is_alive(nb) {
                false
            } else {
                let g = mesh.tet(nb);
                let back = g.nbr.iter().position(|&x| x == t);
                back.is_some_and(|j| {
                    let h = g.face(j);
                    face_key(h[0], h[1], h[2]) == face_key(f[0], f[1], f[2])
                })
            };
            if !ok {
                violations.push(Violation::AsymmetricAdjacency { tet: t, face: i });
            }
        }
    }
    let mut keys: Vec<_> = faces.keys().copied().collect();
    keys.sort_unstable();
    for k in &keys {
        let owners = &faces[k];
        if owners.len() > 2 {
            violations.push(Violation::NonManifoldFace { face: *k });
        } else if owners.len() == 1 && mesh.facet_id(k).is_none() {
            violations.push(Violation::UnlabeledBoundaryFace { face: *k });
        } else if owners.len() == 1 {
            let (t, i) = owners[0];
            if mesh.tet(t).nbr[i] != NO_TET {
                violations.push(Violation::AsymmetricAdjacency { tet: t, face: i });
            }
        }
    }
    for (id, f) in mesh.facets() {
        match faces.get(&face_key(f.v[0], f.v[1], f.v[2])) {
            None => violations.push(Violation::FacetNotInMesh { facet: id }),
            Some(o) if o.len() == 2
                && mesh.tet(o[0].0).material == mesh.tet(o[1].0).material => {
                    violations.push(Violation::FacetMaterialConflict { facet: id });
                }
            _ => {}
        }
    }
    if mesh.num_segments() > 0 {
        let edges: FxHashSet<EdgeKey> = mesh.edges().into_iter().collect();
        for (id, s) in mesh.segments() {
            if !edges.contains(&edge_key(s.v[0], s.v[1])) {
                violations.push(Violation::SegmentNotInMesh { segment: id });
            }
        }
    }
    let on_boundary = mesh.facet_vertex_set();
    let mut used = vec![false; mesh.num_vertices()];
    for (_, t) in mesh.tets() {
        for &v in &t.v {
            used[v as usize] = true;
        }
    }
    for v in 0..mesh.num_vertices() as u32 {
        if !used[v as usize] {
            continue;
        }
        let m = mesh.mobility(v);
        if on_boundary.contains(&v) {
            if m == Mobility::Free {
                violations.push(Violation::FreeBoundaryVertex { vertex: v });
            }
        } else if m != Mobility::Free {
            violations.push(Violation::ConstrainedInteriorVertex { vertex: v });
        }
    }
    ValidationReport {
        violations,
        dihedral: dihedral_histogram(mesh),
        quality: quality_histogram(mesh),
        tets: mesh.num_tets(),
        vertices: mesh.num_vertices(),
        facets: mesh.num_facets(),
        min_dihedral_deg: if mesh.num_tets() == 0 { 0.0 } else { dmin },
        max_dihedral_deg: dmax,
        max_quality: qmax,
    }
}

/// Hull faces of a tet set as facets, all with `patch`.
pub fn hull_facets(tets: &[[u32; 4]], patch: u32) -> Vec<([u32; 3], u32)> {
    let mut count: FxHashMap<FaceKey, ([u32; 3], u32)> = FxHashMap::default();
    for t in tets {
        for f in FACE_IDX {
            let fv = [t[f[0]], t[f[1]], t[f[2]]];
            let e = count
                .entry(face_key(fv[0], fv[1], fv[2]))
                .or_insert((fv, 0));
            e.1 += 1;
        }
    }
    let mut out: Vec<_> = count
        .into_values()
        .filter(|(_, c)| *c == 1)
        .map(|(f, _)| (f, patch))
        .collect();
    out.sort_unstable();
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::p3;

    fn two_tets() -> TetMesh {
        let v = vec![
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(0.0, 0.0, 1.0),
            p3(1.0, 1.0, 1.0),
        ];
        let tets = [[0, 1, 2, 3], [1, 2, 3, 4]];
        // Second tet must be positive: check and flip if needed.
        let mut t2 = tets[1];
        let p: Vec<_> = t2.iter().map(|&i| v[i as usize]).collect();
        if orient3d_sign(p[0], p[1], p[2], p[3]) != Sign::Positive {
            t2.swap(0, 1);
        }
        let all = [tets[0], t2];
        let facets = hull_facets(&all, 0);
        TetMesh::from_parts(v, &[(all[0], 0), (all[1], 0)], &facets, &[]).unwrap()
    }

    #[test]
    fn face_table_is_inward() {
        let p = [
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(0.0, 0.0, 1.0),
        ];
        for (k, f) in FACE_IDX.iter().enumerate() {
            assert_eq!(
                orient3d_sign(p[f[0]], p[f[1]], p[f[2]], p[k]),
                Sign::Positive
            );
        }
    }

    #[test]
    fn adjacency_examples() {
        let m = two_tets();
        let a = m.tet(0);
        let b = m.tet(1);
        assert_eq!(a.nbr.iter().filter(|&&n| n == 1).count(), 1);
        assert_eq!(b.nbr.iter().filter(|&&n| n == 0).count(), 1);
        assert!(validate(&m).is_valid());

        let v = vec![
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(0.0, 0.0, 1.0),
        ];
        let single = TetMesh::from_parts(v.clone(), &[([0, 1, 2, 3], 0)], &[], &[]).unwrap();
        assert_eq!(single.tet(0).nbr, [NO_TET; 4]);

        let dup = TetMesh::from_parts(v.clone(), &[([0, 1, 2, 3], 0), ([0, 1, 2, 3], 0)], &[], &[]);
        assert!(matches!(dup, Err(MeshError::NonManifoldVolume { .. })));

        let inv = TetMesh::from_parts(v, &[([1, 0, 2, 3], 0)], &[], &[]);
        assert_eq!(inv.unwrap_err(), MeshError::Inverted { tet: 0 });
    }

    #[test]
    fn validate_flags_inverted_tet() {
        let mut m = two_tets();
        m.set_vertex(4, p3(-1.0, -1.0, -1.0));
        let r = validate(&m);
        let inverted = r
            .violations
            .iter()
            .filter(|v| matches!(v, Violation::Inverted { .. }));
        assert_eq!(inverted.count(), 1);
    }

    #[test]
    fn quality_and_size_examples() {
        let s3 = 3f64.sqrt();
        let reg = [
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.5, s3 / 2.0, 0.0),
            p3(0.5, s3 / 6.0, (2.0f64 / 3.0).sqrt()),
        ];
        assert!((quality(&reg).value - 6f64.sqrt() / 4.0).abs() < 1e-14);
        assert!((tet_size(&reg) - 1.0).abs() < 1e-14);
        let reg2 = reg.map(|p| p * 2.0);
        assert!((tet_size(&reg2) - 2.0).abs() < 1e-14);
        assert!((aspect_ratio(&reg) - 1.0).abs() < 1e-12);
        let corner = [
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(0.0, 0.0, 1.0),
        ];
        assert!((quality(&corner).value - s3 / 2.0).abs() < 1e-14);
        // (6 sqrt2 / 6)^(1/3) = 2^(1/6)
        assert!((tet_size(&corner) - 1.122_462_048_309_373).abs() < 1e-14);
        let sliver = [
            p3(0.0, 0.0, 0.0),
            p3(1.0, 1.0, 0.0),
            p3(1.0, 0.0, 0.01),
            p3(0.0, 1.0, 0.01),
        ];
        let q = quality(&sliver);
        assert!(!q.degenerate && q.value < 2.0);
        let flat = [
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(1.0, 1.0, 0.0),
        ];
        let q = quality(&flat);
        assert!(q.degenerate && q.value.is_infinite());
        assert_eq!(tet_size(&flat), 0.0);
        assert_eq!(tet_size_with(&corner, SizeMeasure::MaxEdge), 2f64.sqrt());
    }

    #[test]
    fn histogram_bins() {
        let mut h = Histogram::uniform(0.0, 180.0, 36);
        h.add(70.53);
        h.add(180.0);
        h.add(0.0);
        assert_eq!(h.counts[14], 1);
        assert_eq!(h.counts[35], 1);
        assert_eq!(h.counts[0], 1);
        assert!(h.to_csv().starts_with("bin_low,bin_high,count\n0,5,1\n"));
    }

    #[test]
    fn replace_and_compact() {
        let mut m = two_tets();
        let c = m.centroid(0);
        let v = m.add_vertex(c, Mobility::Free);
        let t = m.tet(0).clone();
        let new: Vec<_> = (0..4)
            .map(|i| {
                let f = t.face(i);
                ([f[0], f[1], f[2], v], t.material)
            })
            .collect();
        let ids = m.replace_tets(&[0], &new);
        assert_eq!(ids.len(), 4);
        assert_eq!(m.num_tets(), 5);
        assert!(validate(&m).is_valid());
        m.compact();
        assert_eq!(m.tet_capacity(), 5);
        assert!(validate(&m).is_valid());
        let ring = m.edge_ring(0, 1).unwrap();
        assert!(!ring.closed);
        assert_eq!(m.vertex_star(v).len(), 4);
    }
}
