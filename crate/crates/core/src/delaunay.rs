//! Incremental Delaunay construction, constrained point insertion and flips.
//!
//! [`delaunay_from_points`] runs Bowyer-Watson with a vertex at infinity so the
//! convex hull comes out exactly. [`insert_point`] works on a [`TetMesh`] whose
//! boundary facets are protected: cavities never cross them, and a point
//! inserted on a facet or segment splits that entity.

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use crate::geom::{self, insphere, insphere_positive, orient3d_sign, Point3, Sign};
use crate::mesh::{
    edge_key, face_key, hull_facets, EdgeKey, FaceKey, MeshError, Mobility, TetMesh, FACE_IDX,
    NO_TET,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DelaunayError {
    #[error("need at least four points")]
    TooFewPoints,
    #[error("all points are coplanar")]
    Coplanar,
    #[error("point {0} is not finite")]
    NonFinite(usize),
    #[error("point {0} duplicates an earlier point")]
    DuplicatePoint(usize),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

const GHOST: u32 = u32::MAX - 1;

/// Bootstrap triangulation with ghost tets; a ghost tet keeps the infinite
/// vertex in slot 3.
struct Bootstrap<'a> {
    pts: &'a [Point3],
    v: Vec<[u32; 4]>,
    nbr: Vec<[u32; 4]>,
    alive: Vec<bool>,
    free: Vec<u32>,
    last: u32,
    snap2: f64,
    walk_seed: u32,
}

impl<'a> Bootstrap<'a> {
    fn p(&self, i: u32) -> Point3 {
        self.pts[i as usize]
    }

    fn is_ghost(&self, t: u32) -> bool {
        self.v[t as usize][3] == GHOST
    }

    fn conflict(&self, t: u32, q: Point3) -> bool {
        let v = self.v[t as usize];
        if v[3] == GHOST {
            let (a, b, c) = (self.p(v[0]), self.p(v[1]), self.p(v[2]));
            match orient3d_sign(a, b, c, q) {
                Sign::Positive => true,
                Sign::Negative => false,
                Sign::Zero => {
                    let off = a + (b - a).cross(c - a);
                    insphere(a, b, c, off, q) == Ok(Sign::Positive)
                }
            }
        } else {
            insphere_positive(self.p(v[0]), self.p(v[1]), self.p(v[2]), self.p(v[3]), q)
                == Sign::Positive
        }
    }

    fn alloc(&mut self, v: [u32; 4]) -> u32 {
        if let Some(t) = self.free.pop() {
            self.v[t as usize] = v;
            self.nbr[t as usize] = [NO_TET; 4];
            self.alive[t as usize] = true;
            t
        } else {
            self.v.push(v);
            self.nbr.push([NO_TET; 4]);
            self.alive.push(true);
            (self.v.len() - 1) as u32
        }
    }

    fn locate(&mut self, q: Point3) -> u32 {
        let mut t = self.last;
        if !self.alive[t as usize] {
            t = self.alive.iter().position(|&a| a).unwrap() as u32;
        }
        if self.is_ghost(t) {
            t = self.nbr[t as usize][3];
        }
        loop {
            self.walk_seed = self
                .walk_seed
                .wrapping_mul(1_103_515_245)
                .wrapping_add(12_345);
            let start = (self.walk_seed >> 16) as usize % 4;
            let v = self.v[t as usize];
            let mut moved = false;
            for k in 0..4 {
                let i = (start + k) % 4;
                let f = FACE_IDX[i];
                let s = orient3d_sign(self.p(v[f[0]]), self.p(v[f[1]]), self.p(v[f[2]]), q);
                if s == Sign::Negative {
                    t = self.nbr[t as usize][i];
                    moved = true;
                    break;
                }
            }
            if !moved || self.is_ghost(t) {
                return t;
            }
        }
    }

    fn insert(&mut self, idx: u32) -> Result<(), DelaunayError> {
        let q = self.p(idx);
        let start = self.locate(q);
        let mut cavity = vec![start];
        let mut in_cav: FxHashSet<u32> = FxHashSet::default();
        in_cav.insert(start);
        let mut k = 0;
        while k < cavity.len() {
            let t = cavity[k];
            k += 1;
            for i in 0..4 {
                let n = self.nbr[t as usize][i];
                if !in_cav.contains(&n) && self.conflict(n, q) {
                    in_cav.insert(n);
                    cavity.push(n);
                }
            }
        }
        for &t in &cavity {
            for &x in &self.v[t as usize] {
                if x != GHOST && (self.p(x) - q).norm2() <= self.snap2 {
                    return Err(DelaunayError::DuplicatePoint(idx as usize));
                }
            }
        }
        // Boundary faces: (face, outside neighbor).
        let mut boundary = Vec::new();
        for &t in &cavity {
            let v = self.v[t as usize];
            for i in 0..4 {
                let n = self.nbr[t as usize][i];
                if !in_cav.contains(&n) {
                    let f = FACE_IDX[i];
                    boundary.push(([v[f[0]], v[f[1]], v[f[2]]], n));
                }
            }
        }
        for &t in &cavity {
            self.alive[t as usize] = false;
            self.free.push(t);
        }
        let mut edges: FxHashMap<EdgeKey, (u32, usize)> = FxHashMap::default();
        let mut first = NO_TET;
        for (f, outside) in boundary {
            let mut nv = [f[0], f[1], f[2], idx];
            if let Some(g) = nv.iter().position(|&x| x == GHOST) {
                nv.swap(g, 3);
                let others: Vec<usize> = (0..3).filter(|&j| j != g).collect();
                nv.swap(others[0], others[1]);
            }
            let t = self.alloc(nv);
            if first == NO_TET {
                first = t;
            }
            let fk = face_key(f[0], f[1], f[2]);
            let j = (0..4)
                .find(|&j| {
                    let g = FACE_IDX[j];
                    let w = self.v[outside as usize];
                    face_key(w[g[0]], w[g[1]], w[g[2]]) == fk
                })
                .unwrap();
            self.nbr[outside as usize][j] = t;
            for i in 0..4 {
                let g = FACE_IDX[i];
                let fv = [nv[g[0]], nv[g[1]], nv[g[2]]];
                if face_key(fv[0], fv[1], fv[2]) == fk {
                    self.nbr[t as usize][i] = outside;
                    continue;
                }
                // Faces through the new vertex are keyed by their other edge.
                let mut e = fv.iter().copied().filter(|&x| x != idx);
                let key = edge_key(e.next().unwrap(), e.next().unwrap());
                match edges.remove(&key) {
                    Some((o, oi)) => {
                        self.nbr[t as usize][i] = o;
                        self.nbr[o as usize][oi] = t;
                    }
                    None => {
                        edges.insert(key, (t, i));
                    }
                }
            }
        }
        debug_assert!(edges.is_empty());
        self.last = first;
        Ok(())
    }
}

fn collinear(a: Point3, b: Point3, c: Point3) -> bool {
    let xy = geom::orient2d([a.x, a.y], [b.x, b.y], [c.x, c.y]);
    let yz = geom::orient2d([a.y, a.z], [b.y, b.z], [c.y, c.z]);
    let zx = geom::orient2d([a.z, a.x], [b.z, b.x], [c.z, c.x]);
    xy == Sign::Zero && yz == Sign::Zero && zx == Sign::Zero
}

/// Delaunay tetrahedralization of a point set, inserted in input order.
///
/// Vertex `i` of the result is `points[i]`; hull faces become facets of patch 0.
pub fn delaunay_from_points(points: &[Point3]) -> Result<TetMesh, DelaunayError> {
    if points.len() < 4 {
        return Err(DelaunayError::TooFewPoints);
    }
    if let Some(i) = points.iter().position(|p| !p.is_finite()) {
        return Err(DelaunayError::NonFinite(i));
    }
    let snap = 1e-10 * geom::bbox_diagonal(points);
    let i0 = 0usize;
    let i1 = (1..points.len())
        .find(|&i| points[i].dist(points[i0]) > snap)
        .ok_or(DelaunayError::Coplanar)?;
    let i2 = (1..points.len())
        .find(|&i| !collinear(points[i0], points[i1], points[i]))
        .ok_or(DelaunayError::Coplanar)?;
    let i3 = (1..points.len())
        .find(|&i| orient3d_sign(points[i0], points[i1], points[i2], points[i]) != Sign::Zero)
        .ok_or(DelaunayError::Coplanar)?;
    let mut s = [i0 as u32, i1 as u32, i2 as u32, i3 as u32];
    if orient3d_sign(points[i0], points[i1], points[i2], points[i3]) == Sign::Negative {
        s.swap(0, 1);
    }
    let mut bw = Bootstrap {
        pts: points,
        v: Vec::new(),
        nbr: Vec::new(),
        alive: Vec::new(),
        free: Vec::new(),
        last: 0,
        snap2: snap * snap,
        walk_seed: 0x9e37_79b9,
    };
    let solid = bw.alloc(s);
    for i in 0..4 {
        let f = FACE_IDX[i];
        // Reverse the inward face so the ghost sees it from outside.
        let g = bw.alloc([s[f[0]], s[f[2]], s[f[1]], GHOST]);
        bw.nbr[solid as usize][i] = g;
        bw.nbr[g as usize][3] = solid;
    }
    // Link ghost-ghost faces.
    let ghosts: Vec<u32> = (1..5).collect();
    for &a in &ghosts {
        for i in 0..3 {
            let f = FACE_IDX[i];
            let va = bw.v[a as usize];
            let ka = face_key(va[f[0]], va[f[1]], va[f[2]]);
            for &b in &ghosts {
                if a == b {
                    continue;
                }
                for j in 0..3 {
                    let g = FACE_IDX[j];
                    let vb = bw.v[b as usize];
                    if face_key(vb[g[0]], vb[g[1]], vb[g[2]]) == ka {
                        bw.nbr[a as usize][i] = b;
                    }
                }
            }
        }
    }
    for i in 0..points.len() {
        if s.contains(&(i as u32)) {
            continue;
        }
        bw.insert(i as u32)?;
    }
    let tets: Vec<[u32; 4]> = (0..bw.v.len())
        .filter(|&t| bw.alive[t] && bw.v[t][3] != GHOST)
        .map(|t| bw.v[t])
        .collect();
    let facets = hull_facets(&tets, 0);
    let tets: Vec<([u32; 4], u32)> = tets.into_iter().map(|t| (t, 0)).collect();
    Ok(TetMesh::from_parts(points.to_vec(), &tets, &facets, &[])?)
}

// ---- point location on a TetMesh ----

/// Result of walking toward a point.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Locate {
    /// Point is in the closed tet.
    Inside(u32),
    /// The walk had to cross a protected facet (`face` local to `tet`).
    Blocked { tet: u32, face: usize },
    /// The walk left the mesh through a boundary face.
    Outside { tet: u32, face: usize },
}

/// Visibility walk from `start` toward `q`. With `stop_at_facets` the walk
/// reports the first protected facet it would cross. Falls back to a scan if
/// the walk does not settle.
pub fn locate(mesh: &TetMesh, q: Point3, start: u32, stop_at_facets: bool) -> Locate {
    let mut t = start;
    if !mesh.is_alive(t) {
        match mesh.tets().next() {
            Some((i, _)) => t = i,
            None => {
                return Locate::Outside {
                    tet: NO_TET,
                    face: 0,
                }
            }
        }
    }
    let cap = 64 + 4 * (mesh.num_tets() as f64).sqrt() as usize * 16;
    let mut seed: u32 = 0x2545_f491 ^ t;
    for _ in 0..cap {
        seed ^= seed << 13;
        seed ^= seed >> 17;
        seed ^= seed << 5;
        let s0 = seed as usize % 4;
        let tet = mesh.tet(t);
        let mut moved = false;
        for k in 0..4 {
            let i = (s0 + k) % 4;
            let f = tet.face(i);
            let s = orient3d_sign(mesh.vertex(f[0]), mesh.vertex(f[1]), mesh.vertex(f[2]), q);
            if s == Sign::Negative {
                if stop_at_facets && mesh.is_protected(f) {
                    return Locate::Blocked { tet: t, face: i };
                }
                let n = tet.nbr[i];
                if n == NO_TET {
                    return Locate::Outside { tet: t, face: i };
                }
                t = n;
                moved = true;
                break;
            }
        }
        if !moved {
            return Locate::Inside(t);
        }
    }
    match scan_containing(mesh, q) {
        Some(t) => Locate::Inside(t),
        None => Locate::Outside {
            tet: NO_TET,
            face: 0,
        },
    }
}

/// Brute-force search for a live tet whose closure contains `q`.
pub fn scan_containing(mesh: &TetMesh, q: Point3) -> Option<u32> {
    mesh.tets().map(|(i, _)| i).find(|&t| {
        let tet = mesh.tet(t);
        (0..4).all(|i| {
            let f = tet.face(i);
            orient3d_sign(mesh.vertex(f[0]), mesh.vertex(f[1]), mesh.vertex(f[2]), q)
                != Sign::Negative
        })
    })
}

// ---- constrained insertion ----

/// Boundary entity a point is inserted on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Constraint {
    Segment(u32),
    Facet(u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InsertError {
    #[error("point is not finite")]
    NonFinite,
    #[error("point lies outside the mesh domain")]
    Outside,
    #[error("point duplicates vertex {0}")]
    Duplicate(u32),
    #[error("point lies on a protected face; insert it with a constraint")]
    OnProtectedBoundary,
    #[error("point does not lie on the named boundary entity")]
    BadConstraint,
    #[error("cavity could not be made star-shaped")]
    CavityFailure,
}

/// Bookkeeping of one insertion.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Insertion {
    pub vertex: u32,
    pub removed_tets: Vec<u32>,
    pub new_tets: Vec<u32>,
    pub removed_facets: Vec<u32>,
    pub new_facets: Vec<u32>,
    pub removed_segments: Vec<u32>,
    pub new_segments: Vec<u32>,
}

/// Insert `p` using the last-touched region as the walk hint.
pub fn insert_point(
    mesh: &mut TetMesh,
    p: Point3,
    constraint: Option<Constraint>,
) -> Result<Insertion, InsertError> {
    insert_point_with_hint(mesh, p, constraint, None)
}

fn snap_tolerance(mesh: &TetMesh) -> f64 {
    1e-10 * geom::bbox_diagonal(mesh.vertices())
}

/// `p` lies in the plane of facet `f` and strictly inside its circumcircle.
fn in_circumcircle(mesh: &TetMesh, f: u32, p: Point3) -> bool {
    let [a, b, c] = mesh.facet_points(f);
    let n = (b - a).cross(c - a).normalized();
    let l = (b - a).norm().max((c - a).norm()).max((c - b).norm());
    if (p - a).dot(n).abs() > 1e-9 * l {
        return false;
    }
    match geom::triangle_circumcenter(a, b, c) {
        Ok(cc) => {
            let r2 = (a - cc).norm2();
            (p - cc).norm2() < r2 * (1.0 - 1e-12)
        }
        Err(_) => false,
    }
}

/// Insert `p`, optionally on a boundary facet or segment, starting the point
/// location at `hint`.
pub fn insert_point_with_hint(
    mesh: &mut TetMesh,
    p: Point3,
    constraint: Option<Constraint>,
    hint: Option<u32>,
) -> Result<Insertion, InsertError> {
    if !p.is_finite() {
        return Err(InsertError::NonFinite);
    }
    let snap = snap_tolerance(mesh);
    let mut mandatory: Vec<u32> = Vec::new();
    let mut removed_facets: Vec<u32> = Vec::new();
    let mut split_segment = None;

    match constraint {
        None => {
            let start = hint
                .or_else(|| mesh.tets().next().map(|(i, _)| i))
                .unwrap_or(NO_TET);
            match locate(mesh, p, start, false) {
                Locate::Inside(t) => mandatory.push(t),
                _ => return Err(InsertError::Outside),
            }
        }
        Some(Constraint::Segment(s)) => {
            let seg = mesh.segment(s);
            if !seg.alive {
                return Err(InsertError::BadConstraint);
            }
            let [a, b] = seg.v;
            let (pa, pb) = (mesh.vertex(a), mesh.vertex(b));
            let d = pb - pa;
            let t = (p - pa).dot(d) / d.norm2();
            if !(t > 0.0 && t < 1.0)
                || geom::dist_point_segment(p, pa, pb) > snap.max(1e-12 * d.norm())
            {
                return Err(InsertError::BadConstraint);
            }
            let ring = mesh.edge_ring(a, b).ok_or(InsertError::BadConstraint)?;
            mandatory.extend(ring.tets.iter().copied());
            removed_facets.extend(mesh.facets_on_edge(a, b));
            split_segment = Some(s);
        }
        Some(Constraint::Facet(f)) => {
            let fa = mesh.facet(f);
            if !fa.alive {
                return Err(InsertError::BadConstraint);
            }
            let [a, b, c] = mesh.facet_points(f);
            let n = (b - a).cross(c - a);
            let area2 = n.norm();
            let bary = |x: Point3, y: Point3| (x - p).cross(y - p).dot(n) / (area2 * area2);
            let (l0, l1, l2) = (bary(b, c), bary(c, a), bary(a, b));
            let tol = -1e-12;
            let off = (p - a).dot(n) / area2;
            if l0 < tol || l1 < tol || l2 < tol || off.abs() > snap.max(1e-12 * area2.sqrt()) {
                return Err(InsertError::BadConstraint);
            }
            removed_facets.push(f);
        }
    }

    // Grow the removed surface region across non-segment edges of the same patch.
    if !removed_facets.is_empty() {
        let mut k = 0;
        while k < removed_facets.len() {
            let f = removed_facets[k];
            k += 1;
            let fv = mesh.facet(f).v;
            let patch = mesh.facet(f).patch;
            for e in 0..3 {
                let (a, b) = (fv[e], fv[(e + 1) % 3]);
                if mesh.segment_id(a, b).is_some() {
                    continue;
                }
                for g in mesh.facets_on_edge(a, b) {
                    if !removed_facets.contains(&g)
                        && mesh.facet(g).patch == patch
                        && in_circumcircle(mesh, g, p)
                    {
                        removed_facets.push(g);
                    }
                }
            }
        }
    }
    let removed_keys: FxHashSet<FaceKey> = removed_facets
        .iter()
        .map(|&f| {
            let v = mesh.facet(f).v;
            face_key(v[0], v[1], v[2])
        })
        .collect();
    for &f in &removed_facets {
        let v = mesh.facet(f).v;
        for t in facet_tets(mesh, v) {
            if !mandatory.contains(&t) {
                mandatory.push(t);
            }
        }
    }
    if mandatory.is_empty() {
        return Err(InsertError::BadConstraint);
    }

    // Conflict region, never crossing protected faces other than removed ones.
    let mut cavity: Vec<u32> = mandatory.clone();
    let mut in_cav: FxHashSet<u32> = cavity.iter().copied().collect();
    let mut k = 0;
    while k < cavity.len() {
        let t = cavity[k];
        k += 1;
        let tet = mesh.tet(t).clone();
        for i in 0..4 {
            let n = tet.nbr[i];
            if n == NO_TET || in_cav.contains(&n) {
                continue;
            }
            let f = tet.face(i);
            let fk = face_key(f[0], f[1], f[2]);
            if mesh.facet_id(&fk).is_some() && !removed_keys.contains(&fk) {
                continue;
            }
            let q = mesh.tet_points(n);
            if insphere_positive(q[0], q[1], q[2], q[3], p) == Sign::Positive {
                in_cav.insert(n);
                cavity.push(n);
            }
        }
    }

    // Make the cavity star-shaped.
    let mut banned: FxHashSet<u32> = FxHashSet::default();
    let mut must: FxHashSet<u32> = mandatory.iter().copied().collect();
    let mut rounds = 0;
    loop {
        rounds += 1;
        if rounds > 10_000 {
            return Err(InsertError::CavityFailure);
        }
        let mut change = None;
        'scan: for &t in &cavity {
            let tet = mesh.tet(t);
            for i in 0..4 {
                let f = tet.face(i);
                let fk = face_key(f[0], f[1], f[2]);
                if removed_keys.contains(&fk) {
                    continue;
                }
                let n = tet.nbr[i];
                let protected = mesh.facet_id(&fk).is_some();
                if n != NO_TET && in_cav.contains(&n) && !protected {
                    continue;
                }
                let s = orient3d_sign(mesh.vertex(f[0]), mesh.vertex(f[1]), mesh.vertex(f[2]), p);
                if s != Sign::Positive {
                    change = Some((t, n, protected));
                    break 'scan;
                }
            }
        }
        let Some((t, n, protected)) = change else {
            break;
        };
        if !must.contains(&t) {
            cavity.retain(|&x| x != t);
            in_cav.remove(&t);
            banned.insert(t);
        } else if n != NO_TET && !protected && !in_cav.contains(&n) && !banned.contains(&n) {
            cavity.push(n);
            in_cav.insert(n);
            must.insert(n);
        } else {
            return Err(InsertError::CavityFailure);
        }
    }

    for &t in &cavity {
        for &x in &mesh.tet(t).v {
            if mesh.vertex(x).dist(p) <= snap {
                return Err(InsertError::Duplicate(x));
            }
        }
    }

    // Boundary faces and the new surface triangles.
    let mut faces = Vec::new();
    for &t in &cavity {
        let tet = mesh.tet(t);
        for i in 0..4 {
            let f = tet.face(i);
            let fk = face_key(f[0], f[1], f[2]);
            if removed_keys.contains(&fk) {
                continue;
            }
            let n = tet.nbr[i];
            if n != NO_TET && in_cav.contains(&n) && mesh.facet_id(&fk).is_none() {
                continue;
            }
            faces.push((f, tet.material));
        }
    }
    let mut edge_count: FxHashMap<EdgeKey, ([u32; 2], u32, u32)> = FxHashMap::default();
    for &f in &removed_facets {
        let fa = mesh.facet(f);
        for e in 0..3 {
            let (a, b) = (fa.v[e], fa.v[(e + 1) % 3]);
            let entry = edge_count
                .entry(edge_key(a, b))
                .or_insert(([a, b], fa.patch, 0));
            entry.2 += 1;
        }
    }
    let seg_edge = split_segment.map(|s| {
        let v = mesh.segment(s).v;
        edge_key(v[0], v[1])
    });

    let vertex = mesh.add_vertex(
        p,
        if constraint.is_some() {
            Mobility::Fixed
        } else {
            Mobility::Free
        },
    );
    let new: Vec<([u32; 4], u32)> = faces
        .iter()
        .map(|(f, m)| ([f[0], f[1], f[2], vertex], *m))
        .collect();
    let mut cavity_sorted = cavity.clone();
    cavity_sorted.sort_unstable();
    let new_tets = mesh.replace_tets(&cavity_sorted, &new);

    let mut out = Insertion {
        vertex,
        removed_tets: cavity_sorted,
        new_tets,
        ..Default::default()
    };
    let mut new_facet_list: Vec<([u32; 3], u32)> = Vec::new();
    let mut keys: Vec<_> = edge_count.keys().copied().collect();
    keys.sort_unstable();
    for k in keys {
        let (ab, patch, count) = edge_count[&k];
        if count != 1 || Some(k) == seg_edge {
            continue;
        }
        new_facet_list.push(([ab[0], ab[1], vertex], patch));
    }
    removed_facets.sort_unstable();
    for &f in &removed_facets {
        mesh.kill_facet(f);
    }
    out.removed_facets = removed_facets;
    for (v, patch) in new_facet_list {
        out.new_facets.push(mesh.add_facet(v, patch));
    }
    if let Some(s) = split_segment {
        let seg = mesh.segment(s).clone();
        mesh.kill_segment(s);
        out.removed_segments.push(s);
        out.new_segments
            .push(mesh.add_segment([seg.v[0], vertex], seg.curve));
        out.new_segments
            .push(mesh.add_segment([vertex, seg.v[1]], seg.curve));
    }
    Ok(out)
}

/// Live tets having `f` as a face (one or two).
pub fn facet_tets(mesh: &TetMesh, f: [u32; 3]) -> Vec<u32> {
    let key = face_key(f[0], f[1], f[2]);
    let mut out = Vec::new();
    for t in mesh.vertex_star(f[0]) {
        let tet = mesh.tet(t);
        if (0..4).any(|i| {
            let g = tet.face(i);
            face_key(g[0], g[1], g[2]) == key
        }) {
            out.push(t);
        }
    }
    out
}

// ---- flips ----

/// What to flip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FlipTarget {
    /// Interior face `face` of `tet` (2-3 flip).
    Face { tet: u32, face: usize },
    /// Interior edge with exactly three incident tets (3-2 flip).
    Edge { a: u32, b: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FlipOutcome {
    Flipped23(Vec<u32>),
    Flipped32(Vec<u32>),
    Blocked,
}

/// A flip computed but not yet applied.
#[derive(Clone, Debug, PartialEq)]
pub struct FlipPlan {
    pub old: Vec<u32>,
    pub new: Vec<([u32; 4], u32)>,
}

impl FlipPlan {
    /// Geometry of the tets the flip would create.
    pub fn new_points(&self, mesh: &TetMesh) -> Vec<[Point3; 4]> {
        self.new
            .iter()
            .map(|(v, _)| v.map(|x| mesh.vertex(x)))
            .collect()
    }
}

fn positive(mesh: &TetMesh, v: &[u32; 4]) -> bool {
    orient3d_sign(
        mesh.vertex(v[0]),
        mesh.vertex(v[1]),
        mesh.vertex(v[2]),
        mesh.vertex(v[3]),
    ) == Sign::Positive
}

/// Compute a flip; `None` when the target is constrained or the result would
/// not be positively oriented.
pub fn plan_flip(mesh: &TetMesh, target: FlipTarget) -> Option<FlipPlan> {
    match target {
        FlipTarget::Face { tet, face } => {
            if !mesh.is_alive(tet) {
                return None;
            }
            let t = mesh.tet(tet);
            let f = t.face(face);
            let n = t.nbr[face];
            if n == NO_TET || mesh.is_protected(f) || mesh.tet(n).material != t.material {
                return None;
            }
            let d = t.v[face];
            let e = *mesh.tet(n).v.iter().find(|x| !f.contains(x))?;
            let new: Vec<([u32; 4], u32)> = (0..3)
                .map(|k| ([f[k], f[(k + 1) % 3], e, d], t.material))
                .collect();
            if new.iter().all(|(v, _)| positive(mesh, v)) {
                Some(FlipPlan {
                    old: vec![tet, n],
                    new,
                })
            } else {
                None
            }
        }
        FlipTarget::Edge { a, b } => {
            let ring = mesh.edge_ring(a, b)?;
            if !ring.closed || ring.tets.len() != 3 {
                return None;
            }
            let mat = mesh.tet(ring.tets[0]).material;
            let mut others: Vec<u32> = Vec::new();
            for &t in &ring.tets {
                let tet = mesh.tet(t);
                if tet.material != mat {
                    return None;
                }
                for &x in &tet.v {
                    if x != a && x != b && !others.contains(&x) {
                        others.push(x);
                    }
                }
                let (la, lb) = (tet.local(a).unwrap(), tet.local(b).unwrap());
                let (k, m) = geom::other_two(la, lb);
                if mesh.is_protected(tet.face(k)) || mesh.is_protected(tet.face(m)) {
                    return None;
                }
            }
            if others.len() != 3 {
                return None;
            }
            let mut top = [others[0], others[1], others[2], a];
            if !positive(mesh, &top) {
                top.swap(0, 1);
            }
            let bottom = [top[1], top[0], top[2], b];
            if positive(mesh, &top) && positive(mesh, &bottom) {
                let mut old = ring.tets.clone();
                old.sort_unstable();
                Some(FlipPlan {
                    old,
                    new: vec![(top, mat), (bottom, mat)],
                })
            } else {
                None
            }
        }
    }
}

/// Apply a plan; returns the new tet ids.
pub fn apply_flip(mesh: &mut TetMesh, plan: &FlipPlan) -> Vec<u32> {
    mesh.replace_tets(&plan.old, &plan.new)
}

/// Perform a 2-3 or 3-2 flip if it is legal.
pub fn flip(mesh: &mut TetMesh, target: FlipTarget) -> FlipOutcome {
    match plan_flip(mesh, target) {
        None => FlipOutcome::Blocked,
        Some(plan) => {
            let ids = apply_flip(mesh, &plan);
            match target {
                FlipTarget::Face { .. } => FlipOutcome::Flipped23(ids),
                FlipTarget::Edge { .. } => FlipOutcome::Flipped32(ids),
            }
        }
    }
}

/// Brute-force empty-circumsphere check: returns the first `(tet, vertex)`
/// pair with the vertex strictly inside the tet's circumsphere.
pub fn find_delaunay_violation(mesh: &TetMesh) -> Option<(u32, u32)> {
    let used: Vec<u32> = {
        let mut s: FxHashSet<u32> = FxHashSet::default();
        for (_, t) in mesh.tets() {
            s.extend(t.v);
        }
        let mut v: Vec<u32> = s.into_iter().collect();
        v.sort_unstable();
        v
    };
    for (t, _) in mesh.tets() {
        let q = mesh.tet_points(t);
        for &v in &used {
            if insphere_positive(q[0], q[1], q[2], q[3], mesh.vertex(v)) == Sign::Positive {
                return Some((t, v));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::p3;
    use crate::mesh::validate;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube() -> Vec<Point3> {
        let mut v = Vec::new();
        for i in 0..8 {
            v.push(p3(
                (i & 1) as f64,
                ((i >> 1) & 1) as f64,
                ((i >> 2) & 1) as f64,
            ));
        }
        v
    }

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| p3(rng.gen(), rng.gen(), rng.gen()))
            .collect()
    }

    #[test]
    fn four_points_one_tet() {
        let pts = [
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(0.0, 0.0, 1.0),
        ];
        let m = delaunay_from_points(&pts).unwrap();
        assert_eq!(m.num_tets(), 1);
        assert_eq!(m.num_facets(), 4);
    }

    #[test]
    fn cube_corners() {
        let m = delaunay_from_points(&cube()).unwrap();
        assert!(m.num_tets() == 5 || m.num_tets() == 6, "{}", m.num_tets());
        assert!(find_delaunay_violation(&m).is_none());
        assert!(validate(&m).is_valid());
        assert!((m.total_volume() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn coplanar_rejected() {
        let pts = [
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(1.0, 1.0, 0.0),
        ];
        assert_eq!(
            delaunay_from_points(&pts).unwrap_err(),
            DelaunayError::Coplanar
        );
        let dup = [
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(0.0, 0.0, 1.0),
            p3(1.0, 0.0, 0.0),
        ];
        assert_eq!(
            delaunay_from_points(&dup).unwrap_err(),
            DelaunayError::DuplicatePoint(4)
        );
    }

    #[test]
    fn random_hundred_then_insert() {
        let pts = random_points(100, 7);
        let mut m = delaunay_from_points(&pts).unwrap();
        assert!(find_delaunay_violation(&m).is_none());
        assert!(validate(&m).is_valid());
        let ins = insert_point(&mut m, p3(0.5, 0.5, 0.5), None).unwrap();
        assert!(!ins.new_tets.is_empty());
        assert!(find_delaunay_violation(&m).is_none());
        assert!(validate(&m).is_valid());
    }

    #[test]
    fn centroid_insertion_gives_four() {
        let v = vec![
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(0.0, 0.0, 1.0),
        ];
        let facets = hull_facets(&[[0, 1, 2, 3]], 0);
        let mut m = TetMesh::from_parts(v, &[([0, 1, 2, 3], 0)], &facets, &[]).unwrap();
        let ins = insert_point(&mut m, p3(0.25, 0.25, 0.25), None).unwrap();
        assert_eq!(ins.new_tets.len(), 4);
        assert!(validate(&m).is_valid());
        assert_eq!(
            insert_point(&mut m, p3(2.0, 2.0, 2.0), None),
            Err(InsertError::Outside)
        );
        assert!(matches!(
            insert_point(&mut m, p3(0.25, 0.25, 0.25 + 1e-13), None),
            Err(InsertError::Duplicate(4))
        ));
    }

    #[test]
    fn segment_split_splits_facets() {
        let v = vec![
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(0.0, 0.0, 1.0),
        ];
        let facets: Vec<_> = hull_facets(&[[0, 1, 2, 3]], 0)
            .into_iter()
            .enumerate()
            .map(|(i, (f, _))| (f, i as u32))
            .collect();
        let mut m = TetMesh::from_parts(v, &[([0, 1, 2, 3], 0)], &facets, &[([0, 1], 7)]).unwrap();
        let ins = insert_point(&mut m, p3(0.5, 0.0, 0.0), Some(Constraint::Segment(0))).unwrap();
        assert_eq!(ins.new_tets.len(), 2);
        assert_eq!(ins.removed_facets.len(), 2);
        assert_eq!(ins.new_facets.len(), 4);
        assert_eq!(ins.new_segments.len(), 2);
        assert!(m.segments().all(|(_, s)| s.curve == 7));
        assert_eq!(m.num_facets(), 6);
        assert!(validate(&m).is_valid(), "{:?}", validate(&m).violations);
    }

    #[test]
    fn facet_split() {
        let pts = cube();
        let mut m = delaunay_from_points(&pts).unwrap();
        let (f, _) = m.facets().next().unwrap();
        let [a, b, c] = m.facet_points(f);
        let ins = insert_point(&mut m, (a + b + c) / 3.0, Some(Constraint::Facet(f))).unwrap();
        assert!(ins.new_facets.len() >= 3);
        assert!(validate(&m).is_valid(), "{:?}", validate(&m).violations);
        assert!((m.total_volume() - 1.0).abs() < 1e-14);
    }

    fn bipyramid() -> TetMesh {
        let v = vec![
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(0.3, 0.3, 1.0),
            p3(0.3, 0.3, -1.0),
        ];
        let tets = [([0, 1, 2, 3], 0), ([1, 0, 2, 4], 0)];
        let facets = hull_facets(&[tets[0].0, tets[1].0], 0);
        TetMesh::from_parts(v, &tets, &facets, &[]).unwrap()
    }

    #[test]
    fn flips_round_trip() {
        let mut m = bipyramid();
        let vol = m.total_volume();
        let face = (0..4).find(|&i| m.tet(0).nbr[i] == 1).unwrap();
        let out = flip(&mut m, FlipTarget::Face { tet: 0, face });
        assert!(matches!(out, FlipOutcome::Flipped23(ref v) if v.len() == 3));
        assert!(validate(&m).is_valid());
        assert!((m.total_volume() - vol).abs() <= 1e-12 * vol);
        let out = flip(&mut m, FlipTarget::Edge { a: 3, b: 4 });
        assert!(matches!(out, FlipOutcome::Flipped32(ref v) if v.len() == 2));
        assert!(validate(&m).is_valid());
        assert!((m.total_volume() - vol).abs() <= 1e-12 * vol);
    }

    #[test]
    fn nonconvex_flip_blocked() {
        let v = vec![
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.0, 1.0, 0.0),
            p3(2.0, 2.0, 1.0),
            p3(2.0, 2.0, -1.0),
        ];
        let tets = [([0, 1, 2, 3], 0), ([1, 0, 2, 4], 0)];
        let facets = hull_facets(&[tets[0].0, tets[1].0], 0);
        let mut m = TetMesh::from_parts(v, &tets, &facets, &[]).unwrap();
        let face = (0..4).find(|&i| m.tet(0).nbr[i] == 1).unwrap();
        assert_eq!(
            flip(&mut m, FlipTarget::Face { tet: 0, face }),
            FlipOutcome::Blocked
        );
        assert_eq!(m.num_tets(), 2);
    }

    #[test]
    fn lattice_points() {
        let mut pts = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    pts.push(p3(i as f64, j as f64, k as f64));
                }
            }
        }
        let m = delaunay_from_points(&pts).unwrap();
        assert!(validate(&m).is_valid());
        assert!((m.total_volume() - 27.0).abs() < 1e-12);
        assert!(find_delaunay_violation(&m).is_none());
    }

    #[test]
    fn insertion_sequence_stays_delaunay() {
        let pts = random_points(60, 3);
        let mut m = delaunay_from_points(&pts).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..40 {
            let p = p3(
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
                rng.gen_range(0.2..0.8),
            );
            let _ = insert_point(&mut m, p, None);
        }
        assert!(find_delaunay_violation(&m).is_none());
        assert!(validate(&m).is_valid());
    }
}
