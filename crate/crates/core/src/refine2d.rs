//! Planar Ruppert refinement with encroachment domains, used to check the
//! anisotropic rule on small 2D inputs.
//!
//! A segment's domain is its diametral disc intersected with the strip of
//! half-width `R_e / A` around it. Any vertex inside that domain encroaches
//! the segment, which is then split at its midpoint.

use std::collections::BinaryHeap;

use rustc_hash::{FxHashMap, FxHashSet};
use thiserror::Error;

use crate::geom::{incircle, orient2d, Sign};

pub type P2 = [f64; 2];

const NONE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Refine2dError {
    #[error("segments {0} and {1} intersect")]
    Intersecting(usize, usize),
    #[error("segment {0} is degenerate or references a missing point")]
    BadSegment(usize),
    #[error("need at least three non-collinear points")]
    Degenerate,
    #[error("anisotropy must exceed 1")]
    BadAnisotropy,
}

/// Planar straight-line graph with optional hole seeds.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pslg {
    pub points: Vec<P2>,
    pub segments: Vec<[u32; 2]>,
    pub holes: Vec<P2>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refine2dParams {
    pub quality_bound: f64,
    pub anisotropy: f64,
    pub max_points: usize,
}

impl Default for Refine2dParams {
    fn default() -> Self {
        Refine2dParams {
            quality_bound: 1.0,
            anisotropy: 1.0 + 1e-9,
            max_points: 200_000,
        }
    }
}

/// Output triangulation.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh2 {
    pub points: Vec<P2>,
    pub triangles: Vec<[u32; 3]>,
    pub segments: Vec<[u32; 2]>,
    /// True when `max_points` stopped the refinement.
    pub truncated: bool,
}

impl TriMesh2 {
    pub fn max_quality(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                tri_quality(
                    self.points[t[0] as usize],
                    self.points[t[1] as usize],
                    self.points[t[2] as usize],
                )
            })
            .fold(0.0, f64::max)
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                area2(
                    self.points[t[0] as usize],
                    self.points[t[1] as usize],
                    self.points[t[2] as usize],
                ) / 2.0
            })
            .sum()
    }
}

fn sub(a: P2, b: P2) -> P2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dist(a: P2, b: P2) -> f64 {
    let d = sub(a, b);
    d[0].hypot(d[1])
}

fn area2(a: P2, b: P2, c: P2) -> f64 {
    let (u, v) = (sub(b, a), sub(c, a));
    u[0] * v[1] - u[1] * v[0]
}

fn circumcenter(a: P2, b: P2, c: P2) -> Option<P2> {
    let (u, v) = (sub(b, a), sub(c, a));
    let d = 2.0 * (u[0] * v[1] - u[1] * v[0]);
    if d == 0.0 {
        return None;
    }
    let (uu, vv) = (u[0] * u[0] + u[1] * u[1], v[0] * v[0] + v[1] * v[1]);
    Some([
        a[0] + (v[1] * uu - u[1] * vv) / d,
        a[1] + (u[0] * vv - v[0] * uu) / d,
    ])
}

/// Circumradius over shortest edge.
pub fn tri_quality(a: P2, b: P2, c: P2) -> f64 {
    match circumcenter(a, b, c) {
        Some(cc) => dist(cc, a) / dist(a, b).min(dist(b, c)).min(dist(c, a)),
        None => f64::INFINITY,
    }
}

/// Encroachment-domain membership for segment `[a, b]`.
pub fn in_segment_aed(p: P2, a: P2, b: P2, aniso: f64) -> bool {
    let r = dist(a, b) / 2.0;
    let m = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
    if dist(p, m) >= r {
        return false;
    }
    let d = sub(b, a);
    let t = ((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / (d[0] * d[0] + d[1] * d[1]);
    let t = t.clamp(0.0, 1.0);
    let q = [a[0] + d[0] * t, a[1] + d[1] * t];
    dist(p, q) < r / aniso
}

struct Tri {
    pts: Vec<P2>,
    v: Vec<[u32; 3]>,
    nbr: Vec<[u32; 3]>,
    alive: Vec<bool>,
    constrained: FxHashSet<[u32; 2]>,
    vtri: Vec<u32>,
}

fn ek(a: u32, b: u32) -> [u32; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

impl Tri {
    fn edge(&self, t: u32, i: usize) -> (u32, u32) {
        let v = self.v[t as usize];
        (v[(i + 1) % 3], v[(i + 2) % 3])
    }

    fn p(&self, i: u32) -> P2 {
        self.pts[i as usize]
    }

    fn in_circle(&self, t: u32, q: P2) -> bool {
        let v = self.v[t as usize];
        incircle(self.p(v[0]), self.p(v[1]), self.p(v[2]), q) == Sign::Positive
    }

    fn locate(&self, q: P2, start: u32, stop_at_constraints: bool) -> Result<u32, (u32, usize)> {
        let mut t = start;
        let mut guard = 0;
        let mut seed = 0x1234_5678u32 ^ start;
        loop {
            guard += 1;
            if guard > 4 * self.v.len() + 64 {
                return self.scan(q).ok_or((NONE, 0));
            }
            seed ^= seed << 13;
            seed ^= seed >> 17;
            seed ^= seed << 5;
            let s0 = seed as usize % 3;
            let mut moved = false;
            for k in 0..3 {
                let i = (s0 + k) % 3;
                let (a, b) = self.edge(t, i);
                if orient2d(self.p(a), self.p(b), q) == Sign::Negative {
                    let n = self.nbr[t as usize][i];
                    if n == NONE || (stop_at_constraints && self.constrained.contains(&ek(a, b))) {
                        return Err((t, i));
                    }
                    t = n;
                    moved = true;
                    break;
                }
            }
            if !moved {
                return Ok(t);
            }
        }
    }

    fn scan(&self, q: P2) -> Option<u32> {
        (0..self.v.len() as u32).find(|&t| {
            self.alive[t as usize]
                && (0..3).all(|i| {
                    let (a, b) = self.edge(t, i);
                    orient2d(self.p(a), self.p(b), q) != Sign::Negative
                })
        })
    }

    fn any_alive(&self) -> u32 {
        let h = *self.vtri.last().unwrap();
        if h != NONE && self.alive[h as usize] {
            return h;
        }
        self.alive.iter().position(|&a| a).unwrap() as u32
    }

    /// Insert `q`; `split` names a constrained edge that `q` lies on.
    fn insert(&mut self, q: P2, seeds: &[u32], split: Option<[u32; 2]>) -> Option<u32> {
        let mut cavity: Vec<u32> = seeds.to_vec();
        let mut inc: FxHashSet<u32> = cavity.iter().copied().collect();
        let must: FxHashSet<u32> = inc.clone();
        let mut k = 0;
        while k < cavity.len() {
            let t = cavity[k];
            k += 1;
            for i in 0..3 {
                let n = self.nbr[t as usize][i];
                let (a, b) = self.edge(t, i);
                let e = ek(a, b);
                if n == NONE
                    || inc.contains(&n)
                    || (self.constrained.contains(&e) && Some(e) != split)
                {
                    continue;
                }
                if self.in_circle(n, q) {
                    inc.insert(n);
                    cavity.push(n);
                }
            }
        }
        loop {
            let mut bad = None;
            'outer: for &t in &cavity {
                for i in 0..3 {
                    let n = self.nbr[t as usize][i];
                    let (a, b) = self.edge(t, i);
                    if Some(ek(a, b)) == split {
                        continue;
                    }
                    if n != NONE && inc.contains(&n) {
                        continue;
                    }
                    if orient2d(self.p(a), self.p(b), q) != Sign::Positive {
                        bad = Some(t);
                        break 'outer;
                    }
                }
            }
            match bad {
                None => break,
                Some(t) if must.contains(&t) => return None,
                Some(t) => {
                    cavity.retain(|&x| x != t);
                    inc.remove(&t);
                }
            }
        }
        let id = self.pts.len() as u32;
        self.pts.push(q);
        self.vtri.push(NONE);
        let mut outer: FxHashMap<[u32; 2], u32> = FxHashMap::default();
        let mut bfaces = Vec::new();
        for &t in &cavity {
            for i in 0..3 {
                let n = self.nbr[t as usize][i];
                let (a, b) = self.edge(t, i);
                if Some(ek(a, b)) == split {
                    continue;
                }
                if n == NONE || !inc.contains(&n) {
                    bfaces.push((a, b));
                    outer.insert(ek(a, b), n);
                }
            }
        }
        for &t in &cavity {
            self.alive[t as usize] = false;
        }
        let mut spokes: FxHashMap<u32, (u32, usize)> = FxHashMap::default();
        for (a, b) in bfaces {
            let t = self.v.len() as u32;
            self.v.push([a, b, id]);
            self.nbr.push([NONE; 3]);
            self.alive.push(true);
            for x in [a, b, id] {
                self.vtri[x as usize] = t;
            }
            // Edge opposite `id` is (a, b).
            let n = outer[&ek(a, b)];
            self.nbr[t as usize][2] = n;
            if n != NONE {
                let j = (0..3)
                    .find(|&j| {
                        let (x, y) = self.edge(n, j);
                        ek(x, y) == ek(a, b)
                    })
                    .unwrap();
                self.nbr[n as usize][j] = t;
            }
            // Edge opposite a is (b, id); opposite b is (id, a).
            for (slot, w) in [(0usize, b), (1usize, a)] {
                match spokes.remove(&w) {
                    Some((o, oi)) => {
                        self.nbr[t as usize][slot] = o;
                        self.nbr[o as usize][oi] = t;
                    }
                    None => {
                        spokes.insert(w, (t, slot));
                    }
                }
            }
        }
        if let Some(e) = split {
            self.constrained.remove(&e);
            self.constrained.insert(ek(e[0], id));
            self.constrained.insert(ek(id, e[1]));
        }
        Some(id)
    }

    fn edge_tris(&self, a: u32, b: u32) -> Vec<u32> {
        let mut out = Vec::new();
        for t in self.star(a) {
            if self.v[t as usize].contains(&b) {
                out.push(t);
            }
        }
        out
    }

    fn star(&self, a: u32) -> Vec<u32> {
        let h = self.vtri[a as usize];
        if h == NONE || !self.alive[h as usize] || !self.v[h as usize].contains(&a) {
            return (0..self.v.len() as u32)
                .filter(|&t| self.alive[t as usize] && self.v[t as usize].contains(&a))
                .collect();
        }
        let mut seen = vec![h];
        let mut k = 0;
        while k < seen.len() {
            let t = seen[k];
            k += 1;
            for i in 0..3 {
                let n = self.nbr[t as usize][i];
                if n != NONE && self.v[n as usize].contains(&a) && !seen.contains(&n) {
                    seen.push(n);
                }
            }
        }
        seen
    }
}

fn segments_cross(a: P2, b: P2, c: P2, d: P2) -> bool {
    let o1 = orient2d(a, b, c);
    let o2 = orient2d(a, b, d);
    let o3 = orient2d(c, d, a);
    let o4 = orient2d(c, d, b);
    if o1 != Sign::Zero && o2 != Sign::Zero && o3 != Sign::Zero && o4 != Sign::Zero {
        return o1 != o2 && o3 != o4;
    }
    // Collinear overlap or touching in the interior.
    let on = |p: P2, q: P2, r: P2| {
        orient2d(p, q, r) == Sign::Zero
            && r[0] >= p[0].min(q[0])
            && r[0] <= p[0].max(q[0])
            && r[1] >= p[1].min(q[1])
            && r[1] <= p[1].max(q[1])
    };
    let shared = a == c || a == d || b == c || b == d;
    if shared {
        // Touching at an endpoint is fine unless collinear and overlapping.
        let (x, y, z) = if a == c {
            (a, b, d)
        } else if a == d {
            (a, b, c)
        } else if b == c {
            (b, a, d)
        } else {
            (b, a, c)
        };
        return orient2d(x, y, z) == Sign::Zero
            && (y[0] - x[0]) * (z[0] - x[0]) + (y[1] - x[1]) * (z[1] - x[1]) > 0.0;
    }
    on(a, b, c) || on(a, b, d) || on(c, d, a) || on(c, d, b)
}

/// Refine a planar straight-line graph to the quality bound.
pub fn refine2d(pslg: &Pslg, params: &Refine2dParams) -> Result<TriMesh2, Refine2dError> {
    run(pslg, params, true)
}

/// Constrained Delaunay triangulation of `pslg`, without refinement.
/// Segments missing from the triangulation are recovered by midpoint
/// splits.
pub fn triangulate2d(pslg: &Pslg) -> Result<TriMesh2, Refine2dError> {
    run(pslg, &Refine2dParams::default(), false)
}

fn run(pslg: &Pslg, params: &Refine2dParams, refine: bool) -> Result<TriMesh2, Refine2dError> {
    if !(params.anisotropy > 1.0) {
        return Err(Refine2dError::BadAnisotropy);
    }
    let n = pslg.points.len();
    for (i, s) in pslg.segments.iter().enumerate() {
        if s[0] as usize >= n
            || s[1] as usize >= n
            || pslg.points[s[0] as usize] == pslg.points[s[1] as usize]
        {
            return Err(Refine2dError::BadSegment(i));
        }
    }
    for i in 0..pslg.segments.len() {
        for j in i + 1..pslg.segments.len() {
            let (s, t) = (pslg.segments[i], pslg.segments[j]);
            let p = |k: u32| pslg.points[k as usize];
            if segments_cross(p(s[0]), p(s[1]), p(t[0]), p(t[1])) {
                return Err(Refine2dError::Intersecting(i, j));
            }
        }
    }
    if n < 3 {
        return Err(Refine2dError::Degenerate);
    }
    let (mut lo, mut hi) = (pslg.points[0], pslg.points[0]);
    for p in &pslg.points {
        lo = [lo[0].min(p[0]), lo[1].min(p[1])];
        hi = [hi[0].max(p[0]), hi[1].max(p[1])];
    }
    let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(1e-300);
    let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
    let big = 64.0 * span;
    let mut tri = Tri {
        pts: vec![
            [c[0] - big, c[1] - big],
            [c[0] + big, c[1] - big],
            [c[0], c[1] + big],
        ],
        v: vec![[0, 1, 2]],
        nbr: vec![[NONE; 3]],
        alive: vec![true],
        constrained: FxHashSet::default(),
        vtri: vec![0, 0, 0],
    };
    // Map input ids to internal ids (offset by the three super vertices).
    let mut ids = Vec::with_capacity(n);
    for &p in &pslg.points {
        let start = tri.any_alive();
        let t = tri
            .locate(p, start, false)
            .map_err(|_| Refine2dError::Degenerate)?;
        let existing = tri.v[t as usize].iter().copied().find(|&x| tri.p(x) == p);
        match existing {
            Some(x) => ids.push(x),
            None => ids.push(tri.insert(p, &[t], None).ok_or(Refine2dError::Degenerate)?),
        }
    }
    // Recover segments by midpoint splitting.
    let mut pending: Vec<[u32; 2]> = pslg
        .segments
        .iter()
        .map(|s| [ids[s[0] as usize], ids[s[1] as usize]])
        .collect();
    let mut guard = 0;
    while let Some(s) = pending.pop() {
        guard += 1;
        if guard > params.max_points {
            break;
        }
        if !tri.edge_tris(s[0], s[1]).is_empty() {
            tri.constrained.insert(ek(s[0], s[1]));
            continue;
        }
        let (a, b) = (tri.p(s[0]), tri.p(s[1]));
        let m = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let start = tri.any_alive();
        let t = tri
            .locate(m, start, false)
            .map_err(|_| Refine2dError::Degenerate)?;
        let id = tri.insert(m, &[t], None).ok_or(Refine2dError::Degenerate)?;
        pending.push([s[0], id]);
        pending.push([id, s[1]]);
    }
    // Remove triangles outside the domain or in holes.
    let mut dead: FxHashSet<u32> = FxHashSet::default();
    let mut stack: Vec<u32> = (0..tri.v.len() as u32)
        .filter(|&t| tri.alive[t as usize] && tri.v[t as usize].iter().any(|&x| x < 3))
        .collect();
    for &h in &pslg.holes {
        let start = tri.any_alive();
        if let Ok(t) = tri.locate(h, start, false) {
            stack.push(t);
        }
    }
    while let Some(t) = stack.pop() {
        if !dead.insert(t) {
            continue;
        }
        for i in 0..3 {
            let n = tri.nbr[t as usize][i];
            let (a, b) = tri.edge(t, i);
            if n != NONE && !tri.constrained.contains(&ek(a, b)) && !dead.contains(&n) {
                stack.push(n);
            }
        }
    }
    for &t in &dead {
        tri.alive[t as usize] = false;
        for i in 0..3 {
            let n = tri.nbr[t as usize][i];
            if n != NONE {
                for j in 0..3 {
                    if tri.nbr[n as usize][j] == t {
                        tri.nbr[n as usize][j] = NONE;
                    }
                }
            }
        }
    }
    for t in 0..tri.v.len() {
        if tri.alive[t] {
            for x in tri.v[t] {
                tri.vtri[x as usize] = t as u32;
            }
        }
    }

    let live_vertices = |tri: &Tri| -> Vec<u32> {
        let mut used = FxHashSet::default();
        for t in 0..tri.v.len() {
            if tri.alive[t] {
                used.extend(tri.v[t]);
            }
        }
        let mut v: Vec<u32> = used.into_iter().collect();
        v.sort_unstable();
        v
    };

    let mut truncated = false;
    if refine {
        let aniso = params.anisotropy;
        let encroached_by = |tri: &Tri, s: [u32; 2], p: P2| -> bool {
            in_segment_aed(p, tri.p(s[0]), tri.p(s[1]), aniso)
        };
        let split_segment = |tri: &mut Tri, s: [u32; 2]| -> Option<u32> {
            let (a, b) = (tri.p(s[0]), tri.p(s[1]));
            let m = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
            let seeds = tri.edge_tris(s[0], s[1]);
            if seeds.is_empty() {
                return None;
            }
            tri.insert(m, &seeds, Some(ek(s[0], s[1])))
        };
        // Split every segment encroached by an existing vertex.
        let mut queue: Vec<[u32; 2]> = {
            let mut v: Vec<[u32; 2]> = tri.constrained.iter().copied().collect();
            v.sort_unstable();
            v
        };
        let verts = live_vertices(&tri);
        let mut seg_queue: Vec<[u32; 2]> = Vec::new();
        for s in queue.drain(..) {
            if verts
                .iter()
                .any(|&x| x != s[0] && x != s[1] && encroached_by(&tri, s, tri.p(x)))
            {
                seg_queue.push(s);
            }
        }

        let mut heap: BinaryHeap<(u64, std::cmp::Reverse<u32>)> = BinaryHeap::new();
        let qkey = |q: f64| (q.min(1e300) * 1e6) as u64;
        let push_bad = |tri: &Tri, heap: &mut BinaryHeap<(u64, std::cmp::Reverse<u32>)>, t: u32| {
            let v = tri.v[t as usize];
            let q = tri_quality(tri.p(v[0]), tri.p(v[1]), tri.p(v[2]));
            if q >= params.quality_bound {
                heap.push((qkey(q), std::cmp::Reverse(t)));
            }
        };
        for t in 0..tri.v.len() as u32 {
            if tri.alive[t as usize] {
                push_bad(&tri, &mut heap, t);
            }
        }
        let mut retries: FxHashMap<u32, u32> = FxHashMap::default();
        loop {
            if tri.pts.len() > params.max_points {
                truncated = true;
                break;
            }
            if let Some(s) = seg_queue.pop() {
                if !tri.constrained.contains(&ek(s[0], s[1])) {
                    continue;
                }
                let before = tri.v.len();
                if let Some(id) = split_segment(&mut tri, s) {
                    for t in before..tri.v.len() {
                        push_bad(&tri, &mut heap, t as u32);
                    }
                    let verts = live_vertices(&tri);
                    for half in [ek(s[0], id), ek(id, s[1])] {
                        if verts.iter().any(|&x| {
                            x != half[0] && x != half[1] && encroached_by(&tri, half, tri.p(x))
                        }) {
                            seg_queue.push(half);
                        }
                    }
                    let p = tri.p(id);
                    let mut others: Vec<[u32; 2]> = tri
                        .constrained
                        .iter()
                        .copied()
                        .filter(|e| !e.contains(&id))
                        .collect();
                    others.sort_unstable();
                    for e in others {
                        if encroached_by(&tri, e, p) {
                            seg_queue.push(e);
                        }
                    }
                }
                continue;
            }
            let Some((_, std::cmp::Reverse(t))) = heap.pop() else {
                break;
            };
            if !tri.alive[t as usize] {
                continue;
            }
            let v = tri.v[t as usize];
            let (a, b, c) = (tri.p(v[0]), tri.p(v[1]), tri.p(v[2]));
            if tri_quality(a, b, c) < params.quality_bound {
                continue;
            }
            let Some(cc) = circumcenter(a, b, c) else {
                continue;
            };
            // A triangle is retried after a segment split; give up if the split
            // keeps failing to remove it.
            let mut retry = |heap: &mut BinaryHeap<(u64, std::cmp::Reverse<u32>)>,
                             t: u32,
                             a: P2,
                             b: P2,
                             c: P2| {
                let n = retries.entry(t).or_insert(0);
                *n += 1;
                if *n <= 8 {
                    heap.push((qkey(tri_quality(a, b, c)), std::cmp::Reverse(t)));
                }
            };
            let mut segs: Vec<[u32; 2]> = tri
                .constrained
                .iter()
                .copied()
                .filter(|&s| encroached_by(&tri, s, cc))
                .collect();
            if !segs.is_empty() {
                segs.sort_unstable();
                seg_queue.extend(segs);
                retry(&mut heap, t, a, b, c);
                continue;
            }
            match tri.locate(cc, t, true) {
                Ok(h) => {
                    let before = tri.v.len();
                    if tri.insert(cc, &[h], None).is_some() {
                        for k in before..tri.v.len() {
                            push_bad(&tri, &mut heap, k as u32);
                        }
                    }
                }
                Err((bt, _)) if bt == NONE => {}
                Err((bt, bi)) => {
                    // Hidden behind a segment: split it only if the candidate is
                    // in its domain. Otherwise the triangle is left anisotropic.
                    let (x, y) = tri.edge(bt, bi);
                    let (px, py) = (tri.p(x), tri.p(y));
                    if tri.constrained.contains(&ek(x, y)) && in_segment_aed(cc, px, py, aniso) {
                        seg_queue.push(ek(x, y));
                        retry(&mut heap, t, a, b, c);
                    }
                }
            }
        }
    }

    // Export without the super vertices.
    let verts = live_vertices(&tri);
    let mut map = vec![NONE; tri.pts.len()];
    let mut points = Vec::new();
    for &x in &verts {
        map[x as usize] = points.len() as u32;
        points.push(tri.p(x));
    }
    let triangles = (0..tri.v.len())
        .filter(|&t| tri.alive[t])
        .map(|t| tri.v[t].map(|x| map[x as usize]))
        .collect();
    let mut segments: Vec<[u32; 2]> = tri
        .constrained
        .iter()
        .filter(|e| map[e[0] as usize] != NONE && map[e[1] as usize] != NONE)
        .map(|e| [map[e[0] as usize], map[e[1] as usize]])
        .collect();
    segments.sort_unstable();
    Ok(TriMesh2 {
        points,
        triangles,
        segments,
        truncated,
    })
}

/// Unit square containing a thin layer of width `d` bounded by two parallel
/// segments of length `len`, closed at both ends.
pub fn layer_square(d: f64, len: f64) -> Pslg {
    let (x0, x1) = (0.5 - len / 2.0, 0.5 + len / 2.0);
    let (y0, y1) = (0.5 - d / 2.0, 0.5 + d / 2.0);
    let points = vec![
        [0.0, 0.0],
        [1.0, 0.0],
        [1.0, 1.0],
        [0.0, 1.0],
        [x0, y0],
        [x1, y0],
        [x1, y1],
        [x0, y1],
    ];
    let segments = vec![
        [0, 1],
        [1, 2],
        [2, 3],
        [3, 0],
        [4, 5],
        [5, 6],
        [6, 7],
        [7, 4],
    ];
    Pslg {
        points,
        segments,
        holes: vec![],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Pslg {
        Pslg {
            points: vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            segments: vec![[0, 1], [1, 2], [2, 3], [3, 0]],
            holes: vec![],
        }
    }

    #[test]
    fn empty_square_is_two_triangles() {
        let m = refine2d(
            &square(),
            &Refine2dParams {
                quality_bound: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(m.triangles.len(), 2);
        assert!((m.area() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn square_with_interior_point_meets_bound() {
        let mut p = square();
        p.points.push([0.3, 0.21]);
        let m = refine2d(
            &p,
            &Refine2dParams {
                quality_bound: 1.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.max_quality() < 1.0, "{}", m.max_quality());
        assert!((m.area() - 1.0).abs() < 1e-12);
        for t in &m.triangles {
            let (a, b, c) = (
                m.points[t[0] as usize],
                m.points[t[1] as usize],
                m.points[t[2] as usize],
            );
            assert!(area2(a, b, c) > 0.0);
        }
    }

    #[test]
    fn crossing_segments_rejected() {
        let p = Pslg {
            points: vec![[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]],
            segments: vec![[0, 1], [2, 3]],
            holes: vec![],
        };
        assert_eq!(
            refine2d(&p, &Refine2dParams::default()),
            Err(Refine2dError::Intersecting(0, 1))
        );
    }

    #[test]
    fn strip_membership() {
        let (a, b) = ([0.0, 0.0], [2.0, 0.0]);
        assert!(!in_segment_aed([1.0, 0.5], a, b, 5.0));
        assert!(in_segment_aed([1.0, 0.1], a, b, 5.0));
        assert!(in_segment_aed([1.0, 0.5], a, b, 1.0 + 1e-9));
    }
}
