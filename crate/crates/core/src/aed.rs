//! Anisotropic encroachment domains and quality refinement.
//!
//! The encroachment domain of a boundary segment `e` is its diametral ball
//! intersected with a tube of radius `R_e / A` around it; for a facet it is the
//! equatorial ball intersected with a slab-like neighborhood of thickness
//! `2 R_f / A`. `A -> 1` recovers the classical diametral-ball rule.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rstar::primitives::{GeomWithData, Rectangle};
use rstar::RTree;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::delaunay::{insert_point_with_hint, locate, Constraint, InsertError, Insertion, Locate};
use crate::geom::{self, GeomError, Point3};
use crate::mesh::{face_key, quality, tet_size_with, Mobility, SizeMeasure, TetMesh};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AedError {
    #[error("anisotropy parameter must exceed 1, got {0}")]
    BadAnisotropy(f64),
    #[error("quality bound must be at least sqrt(6)/4, got {0}")]
    BadQualityBound(f64),
    #[error("size bound must be positive")]
    BadSizeBound,
    #[error(transparent)]
    Geom(#[from] GeomError),
}

/// Encroachment-domain parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AedParams {
    pub a: f64,
}

impl AedParams {
    pub fn new(a: f64) -> Result<Self, AedError> {
        if a > 1.0 && a.is_finite() {
            Ok(AedParams { a })
        } else {
            Err(AedError::BadAnisotropy(a))
        }
    }
}

/// Membership in the encroachment domain of segment `[e0, e1]`.
pub fn in_edge_aed(p: Point3, e0: Point3, e1: Point3, a: f64) -> Result<bool, AedError> {
    let r = e0.dist(e1) / 2.0;
    if !(r > 0.0) {
        return Err(GeomError::Degenerate.into());
    }
    let m = (e0 + e1) * 0.5;
    Ok(p.dist(m) < r && geom::dist_point_segment(p, e0, e1) < r / a)
}

/// Membership in the encroachment domain of triangle `t`.
pub fn in_face_aed(p: Point3, t: [Point3; 3], a: f64) -> Result<bool, AedError> {
    let c = geom::triangle_circumcenter(t[0], t[1], t[2])?;
    let r = c.dist(t[0]);
    Ok(p.dist(c) < r && geom::dist_point_triangle(p, t[0], t[1], t[2]) < r / a)
}

/// Insertion point for a facet: its circumcenter when that lies inside the
/// triangle, else the midpoint of the longest edge. The second value is the
/// local index of that edge's first vertex when the midpoint is used.
pub fn facet_center(t: [Point3; 3]) -> (Point3, Option<usize>) {
    if let Ok(c) = geom::triangle_circumcenter(t[0], t[1], t[2]) {
        let n = (t[1] - t[0]).cross(t[2] - t[0]);
        let inside = (0..3).all(|k| {
            let (u, v) = (t[(k + 1) % 3], t[(k + 2) % 3]);
            (u - c).cross(v - c).dot(n) >= 0.0
        });
        if inside {
            return (c, None);
        }
    }
    let mut best = 0;
    let mut len = -1.0;
    for k in 0..3 {
        let l = t[k].dist(t[(k + 1) % 3]);
        if l > len {
            len = l;
            best = k;
        }
    }
    ((t[best] + t[(best + 1) % 3]) * 0.5, Some(best))
}

/// A protected boundary entity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Entity {
    Segment(u32),
    Facet(u32),
}

type Entry = GeomWithData<Rectangle<[f64; 3]>, Entity>;

/// Spatial index over the encroachment domains of all live facets and segments.
pub struct AedIndex {
    tree: RTree<Entry>,
    boxes: FxHashMap<Entity, Rectangle<[f64; 3]>>,
    /// Anisotropy for mesh vertices.
    pub a: f64,
    /// Anisotropy for candidate points; defaults to `a`.
    pub candidate_a: f64,
}

fn ball_box(c: Point3, r: f64) -> Rectangle<[f64; 3]> {
    Rectangle::from_corners([c.x - r, c.y - r, c.z - r], [c.x + r, c.y + r, c.z + r])
}

impl AedIndex {
    pub fn build(mesh: &TetMesh, a: f64) -> AedIndex {
        let mut idx = AedIndex {
            tree: RTree::new(),
            boxes: FxHashMap::default(),
            a,
            candidate_a: a,
        };
        let mut entries = Vec::new();
        for (s, _) in mesh.segments() {
            if let Some(b) = entity_box(mesh, Entity::Segment(s)) {
                idx.boxes.insert(Entity::Segment(s), b);
                entries.push(Entry::new(b, Entity::Segment(s)));
            }
        }
        for (f, _) in mesh.facets() {
            if let Some(b) = entity_box(mesh, Entity::Facet(f)) {
                idx.boxes.insert(Entity::Facet(f), b);
                entries.push(Entry::new(b, Entity::Facet(f)));
            }
        }
        idx.tree = RTree::bulk_load(entries);
        idx
    }

    fn add(&mut self, mesh: &TetMesh, e: Entity) {
        if let Some(b) = entity_box(mesh, e) {
            self.boxes.insert(e, b);
            self.tree.insert(Entry::new(b, e));
        }
    }

    fn remove(&mut self, e: Entity) {
        if let Some(b) = self.boxes.remove(&e) {
            self.tree.remove(&Entry::new(b, e));
        }
    }

    /// Apply the boundary changes of one insertion.
    pub fn update(&mut self, mesh: &TetMesh, ins: &Insertion) {
        for &f in &ins.removed_facets {
            self.remove(Entity::Facet(f));
        }
        for &s in &ins.removed_segments {
            self.remove(Entity::Segment(s));
        }
        for &f in &ins.new_facets {
            self.add(mesh, Entity::Facet(f));
        }
        for &s in &ins.new_segments {
            self.add(mesh, Entity::Segment(s));
        }
    }

    /// Segments and facets whose candidate encroachment domain contains
    /// `p`, sorted.
    pub fn encroached(&self, mesh: &TetMesh, p: Point3) -> (Vec<u32>, Vec<u32>) {
        self.encroached_with(mesh, p, self.candidate_a, None)
    }

    /// Entities encroached by mesh vertex `v`, excluding those it bounds.
    pub fn encroached_by_vertex(&self, mesh: &TetMesh, v: u32) -> (Vec<u32>, Vec<u32>) {
        self.encroached_with(mesh, mesh.vertex(v), self.a, Some(v))
    }

    fn encroached_with(
        &self,
        mesh: &TetMesh,
        p: Point3,
        a: f64,
        skip: Option<u32>,
    ) -> (Vec<u32>, Vec<u32>) {
        let mut segs = Vec::new();
        let mut facets = Vec::new();
        for e in self.tree.locate_all_at_point([p.x, p.y, p.z]) {
            match e.data {
                Entity::Segment(s) => {
                    let v = mesh.segment(s).v;
                    if skip.is_some_and(|x| v.contains(&x)) {
                        continue;
                    }
                    if in_edge_aed(p, mesh.vertex(v[0]), mesh.vertex(v[1]), a) == Ok(true) {
                        segs.push(s);
                    }
                }
                Entity::Facet(f) => {
                    if skip.is_some_and(|x| mesh.facet(f).v.contains(&x)) {
                        continue;
                    }
                    if in_face_aed(p, mesh.facet_points(f), a) == Ok(true) {
                        facets.push(f);
                    }
                }
            }
        }
        segs.sort_unstable();
        facets.sort_unstable();
        (segs, facets)
    }

    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }
}

fn entity_box(mesh: &TetMesh, e: Entity) -> Option<Rectangle<[f64; 3]>> {
    match e {
        Entity::Segment(s) => {
            let v = mesh.segment(s).v;
            let (a, b) = (mesh.vertex(v[0]), mesh.vertex(v[1]));
            Some(ball_box((a + b) * 0.5, a.dist(b) / 2.0))
        }
        Entity::Facet(f) => {
            let t = mesh.facet_points(f);
            let c = geom::triangle_circumcenter(t[0], t[1], t[2]).ok()?;
            Some(ball_box(c, c.dist(t[0])))
        }
    }
}

/// Where a refinement point should go.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Interior { point: Point3, hint: u32 },
    Facet { facet: u32, point: Point3 },
    Segment { segment: u32, point: Point3 },
}

impl Target {
    pub fn point(&self) -> Point3 {
        match *self {
            Target::Interior { point, .. } => point,
            Target::Facet { point, .. } => point,
            Target::Segment { point, .. } => point,
        }
    }
}

fn nearest_segment(mesh: &TetMesh, segs: &[u32], p: Point3) -> u32 {
    *segs
        .iter()
        .min_by(|&&x, &&y| {
            let d = |s: u32| {
                let v = mesh.segment(s).v;
                geom::dist_point_segment(p, mesh.vertex(v[0]), mesh.vertex(v[1]))
            };
            d(x).total_cmp(&d(y)).then(x.cmp(&y))
        })
        .unwrap()
}

fn segment_target(mesh: &TetMesh, s: u32) -> Target {
    let v = mesh.segment(s).v;
    Target::Segment {
        segment: s,
        point: (mesh.vertex(v[0]) + mesh.vertex(v[1])) * 0.5,
    }
}

/// Redirect to the center of facet `f`, re-testing once against segments.
fn facet_target(mesh: &TetMesh, index: &AedIndex, f: u32) -> Target {
    let t = mesh.facet_points(f);
    let (c, edge) = facet_center(t);
    let (segs, _) = index.encroached(mesh, c);
    if !segs.is_empty() {
        return segment_target(mesh, nearest_segment(mesh, &segs, c));
    }
    if let Some(k) = edge {
        let v = mesh.facet(f).v;
        if let Some(s) = mesh.segment_id(v[k], v[(k + 1) % 3]) {
            return segment_target(mesh, s);
        }
    }
    Target::Facet { facet: f, point: c }
}

/// Apply the encroachment rules to candidate `c` proposed by tet `tet`.
///
/// Segment domains take precedence over facet domains. A candidate hidden
/// behind a protected facet (as seen from `tet`) splits that facet only if
/// it lies in the facet's domain, which for `A -> 1` is the equatorial ball;
/// `hidden_splits` makes the split unconditional.
pub fn resolve_candidate(
    mesh: &TetMesh,
    index: &AedIndex,
    c: Point3,
    tet: u32,
    hidden_splits: bool,
) -> Option<Target> {
    let (segs, facets) = index.encroached(mesh, c);
    if !segs.is_empty() {
        return Some(segment_target(mesh, nearest_segment(mesh, &segs, c)));
    }
    if !facets.is_empty() {
        let f = *facets
            .iter()
            .min_by(|&&x, &&y| {
                let d = |f: u32| {
                    let t = mesh.facet_points(f);
                    geom::dist_point_triangle(c, t[0], t[1], t[2])
                };
                d(x).total_cmp(&d(y)).then(x.cmp(&y))
            })
            .unwrap();
        return Some(facet_target(mesh, index, f));
    }
    match locate(mesh, c, tet, true) {
        Locate::Inside(t) => Some(Target::Interior { point: c, hint: t }),
        Locate::Blocked { tet, face } => {
            let fv = mesh.tet(tet).face(face);
            let f = mesh.facet_id(&face_key(fv[0], fv[1], fv[2]))?;
            if hidden_splits || in_face_aed(c, mesh.facet_points(f), index.candidate_a) == Ok(true)
            {
                Some(facet_target(mesh, index, f))
            } else {
                None
            }
        }
        Locate::Outside { .. } => None,
    }
}

/// Insert a resolved target.
pub fn insert_target(mesh: &mut TetMesh, target: Target) -> Result<Insertion, InsertError> {
    match target {
        Target::Interior { point, hint } => insert_point_with_hint(mesh, point, None, Some(hint)),
        Target::Facet { facet, point } => {
            insert_point_with_hint(mesh, point, Some(Constraint::Facet(facet)), None)
        }
        Target::Segment { segment, point } => {
            insert_point_with_hint(mesh, point, Some(Constraint::Segment(segment)), None)
        }
    }
}

/// Refinement control parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RefineParams {
    /// Stored for reporting; there is no exact surface to measure against.
    pub chordal_error: f64,
    /// Degrees; stored for reporting.
    pub angular_resolution: f64,
    /// Default size bound.
    pub size_bound: f64,
    /// Per-material overrides of `size_bound`.
    pub material_size: BTreeMap<u32, f64>,
    /// `Q*`: tets need `Q(T) < Q*`.
    pub quality_bound: f64,
    /// Anisotropy parameter `A > 1`.
    pub anisotropy: f64,
    pub size_measure: SizeMeasure,
    /// Split the blocking facet whenever a circumcenter lies behind it.
    /// Off by default: with large `A` the unconditional rule cascades toward
    /// the boundary, and the tets it would fix are the anisotropic boundary
    /// cells the domain is meant to admit. Tets over the size bound always
    /// split.
    pub hidden_splits: bool,
    /// Limit the anisotropy used for candidate points to what `Q*` allows;
    /// mesh vertices are always tested with the full `A`.
    pub cap_candidates: bool,
    /// Rounds of vertex relocation on tets still bad when the queue runs
    /// dry, each followed by another refinement pass.
    pub optimize_rounds: usize,
    /// Stop once the tet count reaches this multiple of the input count.
    pub max_growth: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        RefineParams {
            chordal_error: 0.0,
            angular_resolution: 30.0,
            size_bound: f64::INFINITY,
            material_size: BTreeMap::new(),
            quality_bound: 2.0,
            anisotropy: 10.0,
            size_measure: SizeMeasure::RegularVolume,
            hidden_splits: false,
            cap_candidates: true,
            optimize_rounds: 8,
            max_growth: 50.0,
        }
    }
}

impl RefineParams {
    pub fn validate(&self) -> Result<(), AedError> {
        AedParams::new(self.anisotropy)?;
        if !(self.quality_bound >= 6f64.sqrt() / 4.0) {
            return Err(AedError::BadQualityBound(self.quality_bound));
        }
        if !(self.size_bound > 0.0) || self.material_size.values().any(|&s| !(s > 0.0)) {
            return Err(AedError::BadSizeBound);
        }
        Ok(())
    }

    /// Anisotropy applied to candidate points. With `cap_candidates`, an
    /// apex at height `R/A` over a facet of circumradius `R` forms a tet with
    /// `Q` about `sqrt(A^2 + 1) / 2`, so `A` is limited to `sqrt(4 Q*^2 - 1)`.
    pub fn candidate_anisotropy(&self) -> f64 {
        if self.cap_candidates {
            self.anisotropy
                .min((4.0 * self.quality_bound * self.quality_bound - 1.0).sqrt())
                .max(1.0 + 1e-9)
        } else {
            self.anisotropy
        }
    }

    pub fn size_for(&self, material: u32) -> f64 {
        self.material_size
            .get(&material)
            .copied()
            .unwrap_or(self.size_bound)
    }
}

/// Summary of a refinement run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RefineReport {
    pub interior_insertions: usize,
    pub facet_splits: usize,
    pub segment_splits: usize,
    /// Candidates outside the domain and behind a facet whose domain they
    /// miss; the proposing tet is kept as an admissible anisotropic cell.
    pub rejected_candidates: usize,
    pub failed_insertions: usize,
    /// Free vertices moved by the local optimization rounds.
    pub relocations: usize,
    pub budget_exhausted: bool,
    pub remaining_bad: usize,
}

impl RefineReport {
    pub fn insertions(&self) -> usize {
        self.interior_insertions + self.facet_splits + self.segment_splits
    }
}

#[derive(Clone, Copy, Debug)]
struct Bad {
    q: f64,
    size: f64,
    seq: u64,
    tet: u32,
}

impl PartialEq for Bad {
    fn eq(&self, o: &Self) -> bool {
        self.cmp(o) == Ordering::Equal
    }
}
impl Eq for Bad {}
impl PartialOrd for Bad {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Bad {
    fn cmp(&self, o: &Self) -> Ordering {
        self.q
            .total_cmp(&o.q)
            .then(self.size.total_cmp(&o.size))
            .then(o.seq.cmp(&self.seq))
    }
}

/// `(quality, size / bound)` when the tet violates a bound.
fn badness(mesh: &TetMesh, t: u32, params: &RefineParams) -> Option<(f64, f64)> {
    let p = mesh.tet_points(t);
    let q = quality(&p).value;
    let ratio = tet_size_with(&p, params.size_measure) / params.size_for(mesh.tet(t).material);
    if q >= params.quality_bound || ratio > 1.0 {
        Some((q, ratio))
    } else {
        None
    }
}

/// Vertex positions for encroachment queries against existing vertices.
struct VertexIndex {
    tree: RTree<GeomWithData<[f64; 3], u32>>,
}

impl VertexIndex {
    fn build(mesh: &TetMesh) -> Self {
        let mut used = vec![false; mesh.num_vertices()];
        for (_, t) in mesh.tets() {
            for &v in &t.v {
                used[v as usize] = true;
            }
        }
        let pts = (0..mesh.num_vertices() as u32)
            .filter(|&v| used[v as usize])
            .map(|v| GeomWithData::new(mesh.vertex(v).to_array(), v))
            .collect();
        VertexIndex {
            tree: RTree::bulk_load(pts),
        }
    }

    fn insert(&mut self, mesh: &TetMesh, v: u32) {
        self.tree
            .insert(GeomWithData::new(mesh.vertex(v).to_array(), v));
    }

    fn moved(&mut self, v: u32, old: Point3, new: Point3) {
        self.tree.remove(&GeomWithData::new(old.to_array(), v));
        self.tree.insert(GeomWithData::new(new.to_array(), v));
    }

    /// Is some vertex not incident to `e` inside its encroachment domain?
    fn encroaches(&self, mesh: &TetMesh, e: Entity, a: f64) -> bool {
        let Some(b) = entity_box(mesh, e) else {
            return false;
        };
        let env = rstar::AABB::from_corners(b.lower(), b.upper());
        match e {
            Entity::Segment(s) => {
                let v = mesh.segment(s).v;
                let (p, q) = (mesh.vertex(v[0]), mesh.vertex(v[1]));
                self.tree.locate_in_envelope(env).any(|x| {
                    !v.contains(&x.data) && in_edge_aed(mesh.vertex(x.data), p, q, a) == Ok(true)
                })
            }
            Entity::Facet(f) => {
                let v = mesh.facet(f).v;
                let t = mesh.facet_points(f);
                self.tree.locate_in_envelope(env).any(|x| {
                    !v.contains(&x.data) && in_face_aed(mesh.vertex(x.data), t, a) == Ok(true)
                })
            }
        }
    }
}

fn entity_alive(mesh: &TetMesh, e: Entity) -> bool {
    match e {
        Entity::Segment(s) => mesh.segment(s).alive,
        Entity::Facet(f) => mesh.facet(f).alive,
    }
}

/// Worst quality over the tets around `v` with `v` placed at `p`; infinite
/// if any of them would not be positively oriented.
fn star_quality(mesh: &TetMesh, v: u32, star: &[u32], p: Point3) -> f64 {
    let mut worst = 0.0f64;
    for &t in star {
        let tv = mesh.tet(t).v;
        let pts = tv.map(|x| if x == v { p } else { mesh.vertex(x) });
        if geom::orient3d_sign(pts[0], pts[1], pts[2], pts[3]) != geom::Sign::Positive {
            return f64::INFINITY;
        }
        worst = worst.max(quality(&pts).value);
    }
    worst
}

/// Compass search moving free vertex `v` to lower the worst quality of its
/// star. Returns the new position if it improved.
fn relocate(mesh: &TetMesh, v: u32) -> Option<Point3> {
    let star = mesh.vertex_star(v);
    let p0 = mesh.vertex(v);
    let mut best = star_quality(mesh, v, &star, p0);
    let mut h = f64::INFINITY;
    for &t in &star {
        for x in mesh.tet(t).v {
            if x != v {
                h = h.min(mesh.vertex(x).dist(p0));
            }
        }
    }
    h *= 0.25;
    let stop = h * 1e-3;
    let mut p = p0;
    let dirs = [
        Point3::new(1.0, 0.0, 0.0),
        Point3::new(-1.0, 0.0, 0.0),
        Point3::new(0.0, 1.0, 0.0),
        Point3::new(0.0, -1.0, 0.0),
        Point3::new(0.0, 0.0, 1.0),
        Point3::new(0.0, 0.0, -1.0),
    ];
    while h > stop {
        let mut improved = false;
        for d in dirs {
            let q = p + d * h;
            let s = star_quality(mesh, v, &star, q);
            if s < best {
                best = s;
                p = q;
                improved = true;
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (p != p0).then_some(p)
}

/// Delaunay refinement with encroachment-domain insertion rules.
///
/// Boundary entities whose domain contains an existing vertex are split
/// first, then bad tets are processed worst first. On exit every tet
/// satisfies `Q < Q*` and its material size bound unless the growth cap was
/// hit or insertions failed; see the report.
pub fn refine(mesh: &mut TetMesh, params: &RefineParams) -> Result<RefineReport, AedError> {
    params.validate()?;
    let mut report = RefineReport::default();
    let cap = (params.max_growth * mesh.num_tets().max(1) as f64).ceil() as usize;
    let a = params.anisotropy;
    let mut index = AedIndex::build(mesh, a);
    index.candidate_a = params.candidate_anisotropy();
    let mut verts = VertexIndex::build(mesh);
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Bad>, mesh: &TetMesh, t: u32| {
        if let Some((q, size)) = badness(mesh, t, params) {
            heap.push(Bad {
                q,
                size,
                seq,
                tet: t,
            });
            seq += 1;
        }
    };
    for t in mesh.tet_ids() {
        push(&mut heap, mesh, t);
    }
    let mut boundary: BTreeSet<Entity> = index
        .boxes
        .keys()
        .copied()
        .filter(|&e| verts.encroaches(mesh, e, a))
        .collect();
    let mut given_up: FxHashSet<u32> = FxHashSet::default();
    let mut given_up_entities: FxHashSet<Entity> = FxHashSet::default();
    let mut round = 0;
    'rounds: loop {
        loop {
            if mesh.num_tets() >= cap {
                report.budget_exhausted = true;
                break;
            }
            let (target, source) = if let Some(e) = boundary.pop_first() {
                if !entity_alive(mesh, e)
                    || given_up_entities.contains(&e)
                    || !verts.encroaches(mesh, e, a)
                {
                    continue;
                }
                let target = match e {
                    Entity::Segment(s) => segment_target(mesh, s),
                    Entity::Facet(f) => facet_target(mesh, &index, f),
                };
                (target, Err(e))
            } else if let Some(bad) = heap.pop() {
                let t = bad.tet;
                if !mesh.is_alive(t) || given_up.contains(&t) {
                    continue;
                }
                let Some((_, ratio)) = badness(mesh, t, params) else {
                    continue;
                };
                let p = mesh.tet_points(t);
                let c = match geom::circumsphere(p[0], p[1], p[2], p[3]) {
                    Ok(s) => s.center,
                    Err(_) => mesh.centroid(t),
                };
                match resolve_candidate(
                    mesh,
                    &index,
                    c,
                    t,
                    params.hidden_splits
                        || ratio > 1.0
                        || !mesh
                            .tet(t)
                            .v
                            .iter()
                            .any(|&v| mesh.mobility(v) == Mobility::Free),
                ) {
                    Some(target) => (target, Ok(t)),
                    None => {
                        given_up.insert(t);
                        report.rejected_candidates += 1;
                        continue;
                    }
                }
            } else {
                break;
            };
            match insert_target(mesh, target) {
                Ok(ins) => {
                    match target {
                        Target::Interior { .. } => report.interior_insertions += 1,
                        Target::Facet { .. } => report.facet_splits += 1,
                        Target::Segment { .. } => report.segment_splits += 1,
                    }
                    index.update(mesh, &ins);
                    verts.insert(mesh, ins.vertex);
                    let (segs, facets) = index.encroached_by_vertex(mesh, ins.vertex);
                    boundary.extend(segs.into_iter().map(Entity::Segment));
                    boundary.extend(facets.into_iter().map(Entity::Facet));
                    for &s in &ins.new_segments {
                        if verts.encroaches(mesh, Entity::Segment(s), a) {
                            boundary.insert(Entity::Segment(s));
                        }
                    }
                    for &f in &ins.new_facets {
                        if verts.encroaches(mesh, Entity::Facet(f), a) {
                            boundary.insert(Entity::Facet(f));
                        }
                    }
                    for &n in &ins.new_tets {
                        push(&mut heap, mesh, n);
                    }
                    if let Ok(t) = source {
                        if mesh.is_alive(t) {
                            push(&mut heap, mesh, t);
                        }
                    }
                }
                Err(_) => {
                    match source {
                        Ok(t) => {
                            given_up.insert(t);
                        }
                        Err(e) => {
                            given_up_entities.insert(e);
                        }
                    }
                    report.failed_insertions += 1;
                }
            }
        }
        // Local optimization: relocate free vertices of the remaining bad tets,
        // then give their neighborhoods another refinement pass.
        round += 1;
        if report.budget_exhausted || round > params.optimize_rounds {
            break 'rounds;
        }
        let bad: Vec<u32> = mesh
            .tet_ids()
            .into_iter()
            .filter(|&t| badness(mesh, t, params).is_some())
            .collect();
        if bad.is_empty() {
            break 'rounds;
        }
        let mut moved = 0;
        let mut touched: BTreeSet<u32> = BTreeSet::new();
        for &t in &bad {
            if !mesh.is_alive(t) || badness(mesh, t, params).is_none() {
                continue;
            }
            for v in mesh.tet(t).v {
                if mesh.mobility(v) != Mobility::Free {
                    continue;
                }
                if let Some(p) = relocate(mesh, v) {
                    let old = mesh.vertex(v);
                    mesh.set_vertex(v, p);
                    verts.moved(v, old, p);
                    moved += 1;
                    touched.extend(mesh.vertex_star(v));
                    let (segs, facets) = index.encroached_by_vertex(mesh, v);
                    boundary.extend(segs.into_iter().map(Entity::Segment));
                    boundary.extend(facets.into_iter().map(Entity::Facet));
                }
            }
        }
        report.relocations += moved;
        if moved == 0 {
            break 'rounds;
        }
        given_up.clear();
        for t in mesh.tet_ids() {
            push(&mut heap, mesh, t);
        }
    }
    report.remaining_bad = mesh
        .tet_ids()
        .into_iter()
        .filter(|&t| badness(mesh, t, params).is_some())
        .count();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::p3;
    use crate::mesh::{hull_facets, tet_size, validate};

    #[test]
    fn edge_aed_examples() {
        let (a, b) = (p3(0.0, 0.0, 0.0), p3(2.0, 0.0, 0.0));
        assert!(!in_edge_aed(p3(1.0, 0.5, 0.0), a, b, 5.0).unwrap());
        assert!(in_edge_aed(p3(1.0, 0.1, 0.0), a, b, 5.0).unwrap());
        assert!(in_edge_aed(p3(1.0, 0.5, 0.0), a, b, 1.0 + 1e-9).unwrap());
        assert!(in_edge_aed(p3(1.0, 0.0, 0.0), a, a, 5.0).is_err());
    }

    #[test]
    fn face_aed_examples() {
        let t = [p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.0, 1.0, 0.0)];
        assert!(in_face_aed(p3(0.5, 0.25, 0.05), t, 5.0).unwrap());
        assert!(!in_face_aed(p3(0.5, 0.25, 0.3), t, 5.0).unwrap());
        // In-plane, inside the ball, outside the triangle: distance to the
        // closed triangle is what counts.
        let q = p3(0.7, 0.7, 0.0);
        let d = geom::dist_point_triangle(q, t[0], t[1], t[2]);
        assert!((d - 0.4 / 2f64.sqrt()).abs() < 1e-15);
        assert!(in_face_aed(q, t, 1.5).unwrap());
        assert!(!in_face_aed(q, t, 5.0).unwrap());
        let flat = [p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(2.0, 0.0, 0.0)];
        assert!(in_face_aed(q, flat, 5.0).is_err());
    }

    #[test]
    fn facet_center_rule() {
        let acute = [p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.5, 0.8, 0.0)];
        let (c, e) = facet_center(acute);
        assert!(e.is_none());
        assert!((c.dist(acute[0]) - c.dist(acute[2])).abs() < 1e-14);
        let obtuse = [p3(0.0, 0.0, 0.0), p3(1.0, 0.0, 0.0), p3(0.5, 0.1, 0.0)];
        let (c, e) = facet_center(obtuse);
        assert_eq!(e, Some(0));
        assert_eq!(c, p3(0.5, 0.0, 0.0));
    }

    fn regular_mesh() -> TetMesh {
        let s3 = 3f64.sqrt();
        let v = vec![
            p3(0.0, 0.0, 0.0),
            p3(1.0, 0.0, 0.0),
            p3(0.5, s3 / 2.0, 0.0),
            p3(0.5, s3 / 6.0, (2.0f64 / 3.0).sqrt()),
        ];
        let facets: Vec<_> = hull_facets(&[[0, 1, 2, 3]], 0)
            .into_iter()
            .enumerate()
            .map(|(i, (f, _))| (f, i as u32))
            .collect();
        let segs: Vec<_> = crate::geom::EDGES
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| ([a as u32, b as u32], i as u32))
            .collect();
        TetMesh::from_parts(v, &[([0, 1, 2, 3], 0)], &facets, &segs).unwrap()
    }

    #[test]
    fn refine_regular_tet_to_size() {
        let mut m = regular_mesh();
        let params = RefineParams {
            size_bound: 0.5,
            ..Default::default()
        };
        let r = refine(&mut m, &params).unwrap();
        assert!(!r.budget_exhausted);
        assert_eq!(r.remaining_bad, 0, "{r:?}");
        for (t, _) in m.tets() {
            assert!(tet_size(&m.tet_points(t)) <= 0.5);
            assert!(quality(&m.tet_points(t)).value < 2.0);
        }
        assert!(validate(&m).is_valid(), "{:?}", validate(&m).violations);
        assert!((m.total_volume() - 2f64.sqrt() / 12.0).abs() < 1e-14);
    }

    #[test]
    fn refine_fixpoint() {
        let mut m = regular_mesh();
        let params = RefineParams {
            size_bound: 2.0,
            ..Default::default()
        };
        let r = refine(&mut m, &params).unwrap();
        assert_eq!(r.insertions(), 0);
        assert_eq!(m.num_tets(), 1);
    }

    #[test]
    fn params_validation() {
        let p = RefineParams {
            anisotropy: 1.0,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let p = RefineParams {
            quality_bound: 0.5,
            ..Default::default()
        };
        assert!(p.validate().is_err());
        assert!(RefineParams::default().validate().is_ok());
    }
}
