//! Synthetic geometries used by tests, examples and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHashMap;

use crate::geom::{self, orient3d_sign, p3, Point3, Sign};
use crate::mesh::{edge_key, hull_facets, EdgeKey, MeshError, TetMesh};
use crate::surface::SurfaceMesh;

/// Raw mesh arrays, convenient for assembling several pieces.
#[derive(Clone, Debug, Default)]
pub struct MeshParts {
    pub vertices: Vec<Point3>,
    pub tets: Vec<([u32; 4], u32)>,
    pub facets: Vec<([u32; 3], u32)>,
    pub segments: Vec<([u32; 2], u32)>,
}

impl MeshParts {
    pub fn build(self) -> Result<TetMesh, MeshError> {
        TetMesh::from_parts(self.vertices, &self.tets, &self.facets, &self.segments)
    }

    /// Append `other`, offsetting its vertex ids.
    pub fn append(&mut self, other: MeshParts) {
        let off = self.vertices.len() as u32;
        self.vertices.extend(other.vertices);
        self.tets
            .extend(other.tets.into_iter().map(|(v, m)| (v.map(|x| x + off), m)));
        self.facets.extend(
            other
                .facets
                .into_iter()
                .map(|(v, p)| (v.map(|x| x + off), p)),
        );
        self.segments.extend(
            other
                .segments
                .into_iter()
                .map(|(v, c)| (v.map(|x| x + off), c)),
        );
    }
}

fn positive(v: &[Point3], mut t: [u32; 4]) -> [u32; 4] {
    let s = orient3d_sign(
        v[t[0] as usize],
        v[t[1] as usize],
        v[t[2] as usize],
        v[t[3] as usize],
    );
    if s == Sign::Negative {
        t.swap(0, 1);
    }
    t
}

/// Axis-aligned box `[lo, hi]` split into `n` cells per axis, each cut into
/// six tets around its main diagonal. Boundary facets get patch ids
/// `patch_base + {0..6}` (-x, +x, -y, +y, -z, +z); box edges become segments
/// with curve ids `curve_base + {0..12}`.
pub fn structured_box(
    lo: Point3,
    hi: Point3,
    n: [usize; 3],
    material: u32,
    patch_base: u32,
    curve_base: u32,
) -> MeshParts {
    let idx = |i: usize, j: usize, k: usize| ((k * (n[1] + 1) + j) * (n[0] + 1) + i) as u32;
    let mut vertices = Vec::new();
    for k in 0..=n[2] {
        for j in 0..=n[1] {
            for i in 0..=n[0] {
                let coord = |lo: f64, hi: f64, i: usize, n: usize| {
                    if i == n {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / n as f64
                    }
                };
                vertices.push(p3(
                    coord(lo.x, hi.x, i, n[0]),
                    coord(lo.y, hi.y, j, n[1]),
                    coord(lo.z, hi.z, k, n[2]),
                ));
            }
        }
    }
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut tets = Vec::new();
    for k in 0..n[2] {
        for j in 0..n[1] {
            for i in 0..n[0] {
                for perm in PERMS {
                    let mut c = [i, j, k];
                    let mut t = [idx(c[0], c[1], c[2]); 4];
                    for (s, &axis) in perm.iter().enumerate() {
                        c[axis] += 1;
                        t[s + 1] = idx(c[0], c[1], c[2]);
                    }
                    tets.push((positive(&vertices, t), material));
                }
            }
        }
    }
    let mut parts = MeshParts {
        vertices,
        tets,
        ..Default::default()
    };
    label_box_boundary(&mut parts, lo, hi, patch_base, curve_base);
    parts
}

/// Label hull faces of `parts` by box side and add segments along box edges.
pub fn label_box_boundary(
    parts: &mut MeshParts,
    lo: Point3,
    hi: Point3,
    patch_base: u32,
    curve_base: u32,
) {
    let tets: Vec<[u32; 4]> = parts.tets.iter().map(|(t, _)| *t).collect();
    let side = |p: Point3| -> [bool; 6] {
        [
            p.x == lo.x,
            p.x == hi.x,
            p.y == lo.y,
            p.y == hi.y,
            p.z == lo.z,
            p.z == hi.z,
        ]
    };
    let v = &parts.vertices;
    parts.facets = hull_facets(&tets, 0)
        .into_iter()
        .map(|(f, _)| {
            let s: Vec<[bool; 6]> = f.iter().map(|&x| side(v[x as usize])).collect();
            let k = (0..6)
                .find(|&k| s.iter().all(|a| a[k]))
                .expect("hull face off the box");
            (f, patch_base + k as u32)
        })
        .collect();
    let mut edge_patches: FxHashMap<EdgeKey, Vec<u32>> = FxHashMap::default();
    for (f, p) in &parts.facets {
        for e in 0..3 {
            edge_patches
                .entry(edge_key(f[e], f[(e + 1) % 3]))
                .or_default()
                .push(*p);
        }
    }
    // Box edges indexed by the pair of sides they join.
    let pairs: Vec<(u32, u32)> = (0..6u32)
        .flat_map(|a| (a + 1..6).map(move |b| (a, b)))
        .filter(|&(a, b)| a / 2 != b / 2)
        .collect();
    let mut segs: Vec<([u32; 2], u32)> = edge_patches
        .into_iter()
        .filter_map(|(e, ps)| {
            if ps.len() == 2 && ps[0] != ps[1] {
                let (a, b) = (ps[0].min(ps[1]) - patch_base, ps[0].max(ps[1]) - patch_base);
                let c = pairs.iter().position(|&q| q == (a, b)).unwrap() as u32;
                Some((e, curve_base + c))
            } else {
                None
            }
        })
        .collect();
    segs.sort_unstable();
    parts.segments = segs;
}

/// Two boxes `[0,1]^2 x [0, (1-gap)/2]` and `[0,1]^2 x [(1+gap)/2, 1]`
/// separated by an empty slot of thickness `gap`, each a single cube-like
/// cell of six tets.
pub fn slotted_boxes(gap: f64, cells: usize) -> MeshParts {
    let h = (1.0 - gap) / 2.0;
    let mut parts = structured_box(
        p3(0.0, 0.0, 0.0),
        p3(1.0, 1.0, h),
        [cells, cells, cells],
        0,
        0,
        0,
    );
    parts.append(structured_box(
        p3(0.0, 0.0, 1.0 - h),
        p3(1.0, 1.0, 1.0),
        [cells, cells, cells],
        1,
        6,
        12,
    ));
    parts
}

/// Regular tetrahedron with the given edge, one facet and segment per entity.
pub fn regular_tet(edge: f64) -> MeshParts {
    let s3 = 3f64.sqrt();
    let vertices = vec![
        p3(0.0, 0.0, 0.0),
        p3(edge, 0.0, 0.0),
        p3(edge / 2.0, edge * s3 / 2.0, 0.0),
        p3(edge / 2.0, edge * s3 / 6.0, edge * (2.0f64 / 3.0).sqrt()),
    ];
    let facets = hull_facets(&[[0, 1, 2, 3]], 0)
        .into_iter()
        .enumerate()
        .map(|(i, (f, _))| (f, i as u32))
        .collect();
    let segments = geom::EDGES
        .iter()
        .enumerate()
        .map(|(i, &(a, b))| ([a as u32, b as u32], i as u32))
        .collect();
    MeshParts {
        vertices,
        tets: vec![([0, 1, 2, 3], 0)],
        facets,
        segments,
    }
}

/// `(n+1)^3` lattice points of spacing `1/n`, rotated rigidly about `axis`.
pub fn rotated_lattice(n: usize, axis: Point3, angle: f64) -> Vec<Point3> {
    let r = geom::rotation(axis, angle);
    let mut pts = Vec::with_capacity((n + 1).pow(3));
    for k in 0..=n {
        for j in 0..=n {
            for i in 0..=n {
                let p = p3(i as f64, j as f64, k as f64) / n as f64;
                pts.push(geom::apply(&r, p));
            }
        }
    }
    pts
}

/// Grid points of the unit box, `n` cells per side, whose floor is lifted
/// to `t (x + y - 1)^2`. The floor is convex but every floor cell is
/// twisted, so the Delaunay mesh puts a flat tet with two floor facets on
/// each cell: a ring of slivers locked against the boundary.
pub fn twisted_floor_box(n: usize, t: f64) -> Vec<Point3> {
    let h = 1.0 / n as f64;
    let mut pts = Vec::with_capacity((n + 1).pow(3));
    for i in 0..=n {
        for j in 0..=n {
            let (x, y) = (i as f64 * h, j as f64 * h);
            pts.push(p3(x, y, t * (x + y - 1.0).powi(2)));
            for k in 1..=n {
                pts.push(p3(x, y, k as f64 * h));
            }
        }
    }
    pts
}

/// Uniform random points in the unit cube.
pub fn random_points(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| p3(rng.gen(), rng.gen(), rng.gen()))
        .collect()
}

/// Boundary surface of the unit box with `n` cells per side, with up to
/// `count` face-interior vertices pushed almost onto the far edge of one of
/// their triangles (leaving apex angles of roughly 176 to 179.5 degrees).
/// Picked vertices are never adjacent, so stars stay convex and valid.
pub fn perturbed_box_surface(n: usize, count: usize, seed: u64) -> SurfaceMesh {
    let parts = structured_box(p3(0.0, 0.0, 0.0), p3(1.0, 1.0, 1.0), [n; 3], 0, 0, 0);
    let mut used: Vec<u32> = parts.facets.iter().flat_map(|(f, _)| *f).collect();
    used.sort_unstable();
    used.dedup();
    let mut map = vec![u32::MAX; parts.vertices.len()];
    for (i, &v) in used.iter().enumerate() {
        map[v as usize] = i as u32;
    }
    let mut vertices: Vec<Point3> = used.iter().map(|&v| parts.vertices[v as usize]).collect();
    let triangles: Vec<[u32; 3]> = parts.facets.iter().map(|(f, _)| f.map(|v| map[v as usize])).collect();
    let patches: Vec<u32> = parts.facets.iter().map(|(_, p)| *p).collect();
    let on_sides = |p: Point3| {
        [p.x, p.y, p.z].iter().filter(|&&c| c == 0.0 || c == 1.0).count()
    };
    let mut star: Vec<Vec<usize>> = vec![Vec::new(); vertices.len()];
    for (t, tv) in triangles.iter().enumerate() {
        for &v in tv {
            star[v as usize].push(t);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut candidates: Vec<u32> = (0..vertices.len() as u32).filter(|&v| on_sides(vertices[v as usize]) == 1).collect();
    let mut blocked = vec![false; vertices.len()];
    let mut picked = 0;
    while picked < count && !candidates.is_empty() {
        let v = candidates.swap_remove(rng.gen_range(0..candidates.len()));
        if blocked[v as usize] {
            continue;
        }
        let t = star[v as usize][rng.gen_range(0..star[v as usize].len())];
        let [a, b] = {
            let tv = triangles[t];
            let k = tv.iter().position(|&x| x == v).unwrap();
            [tv[(k + 1) % 3], tv[(k + 2) % 3]]
        };
        let (pa, pb, pv) = (vertices[a as usize], vertices[b as usize], vertices[v as usize]);
        let m = (pa + pb) * 0.5;
        let eps = rng.gen_range(0.003..0.02);
        vertices[v as usize] = m + (pv - m) * eps;
        for &u in star[v as usize].iter().flat_map(|&t| triangles[t].iter()) {
            blocked[u as usize] = true;
        }
        picked += 1;
    }
    SurfaceMesh::new(vertices, triangles, patches).expect("box surface is manifold")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::validate;

    #[test]
    fn box_labels() {
        let m = structured_box(p3(0.0, 0.0, 0.0), p3(1.0, 2.0, 3.0), [2, 2, 3], 0, 0, 0)
            .build()
            .unwrap();
        assert_eq!(m.num_tets(), 6 * 12);
        assert!(validate(&m).is_valid(), "{:?}", validate(&m).violations);
        assert!((m.total_volume() - 6.0).abs() < 1e-12);
        let patches: std::collections::BTreeSet<u32> = m.facets().map(|(_, f)| f.patch).collect();
        assert_eq!(patches.len(), 6);
        let curves: std::collections::BTreeSet<u32> = m.segments().map(|(_, s)| s.curve).collect();
        assert_eq!(curves.len(), 12);
    }

    #[test]
    fn perturbed_surface_is_very_obtuse() {
        let s = perturbed_box_surface(8, 20, 1);
        assert!(s.max_angle_overall() >= 175.0, "{}", s.max_angle_overall());
        assert!((s.area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn slot_geometry() {
        let m = slotted_boxes(0.01, 1).build().unwrap();
        assert_eq!(m.num_tets(), 12);
        assert!(validate(&m).is_valid());
        assert!((m.total_volume() - 0.99).abs() < 1e-12);
    }
}
