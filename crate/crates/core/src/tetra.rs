//! Initial volume meshes from a closed surface or a point cloud.

use std::collections::BTreeMap;

use rustc_hash::FxHashMap;
use thiserror::Error;

use crate::delaunay::{delaunay_from_points, DelaunayError};
use crate::geom::{self, orient3d_sign, Point3, Sign};
use crate::mesh::{edge_key, face_key, EdgeKey, FaceKey, MeshError, TetMesh, FACE_IDX};
use crate::surface::SurfaceMesh;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TetraError {
    #[error(transparent)]
    Delaunay(#[from] DelaunayError),
    #[error("surface patch {0} is not covered by Delaunay faces")]
    NotRecovered(u32),
    #[error("surface encloses no volume")]
    Empty,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

/// Delaunay mesh of the points with hull facets in patch 0 and no
/// segments; run feature labeling afterwards to split the hull into patches.
///
/// Points meant to be coplanar rarely are after rounding, which leaves
/// near-zero-volume tets on the hull. Those are peeled repeatedly, so the
/// domain is the hull minus slabs of relative thickness below `1e-9`.
pub fn tetrahedralize_points(points: &[Point3]) -> Result<TetMesh, TetraError> {
    let dt = delaunay_from_points(points)?;
    let flat = |p: &[Point3; 4]| {
        let l = crate::mesh::max_edge(p);
        6.0 * geom::signed_volume(p[0], p[1], p[2], p[3]) < 1e-9 * l * l * l
    };
    let mut alive: Vec<bool> = vec![false; dt.tet_capacity()];
    for (t, _) in dt.tets() {
        alive[t as usize] = true;
    }
    let mut frontier: Vec<u32> = dt.hull_faces().iter().map(|&(t, _)| t).collect();
    let mut peeled = false;
    while let Some(t) = frontier.pop() {
        if !alive[t as usize] || !flat(&dt.tet_points(t)) {
            continue;
        }
        alive[t as usize] = false;
        peeled = true;
        frontier.extend(dt.tet(t).nbr.iter().copied().filter(|&n| n != crate::mesh::NO_TET));
    }
    if !peeled {
        return Ok(dt);
    }
    let kept: Vec<[u32; 4]> = dt.tets().filter(|(t, _)| alive[*t as usize]).map(|(_, t)| t.v).collect();
    if kept.is_empty() {
        return Err(TetraError::Empty);
    }
    let mut map = vec![u32::MAX; dt.num_vertices()];
    let mut vertices = Vec::new();
    for t in &kept {
        for &v in t {
            if map[v as usize] == u32::MAX {
                map[v as usize] = vertices.len() as u32;
                vertices.push(dt.vertex(v));
            }
        }
    }
    let tets: Vec<[u32; 4]> = kept.iter().map(|t| t.map(|v| map[v as usize])).collect();
    let facets = crate::mesh::hull_facets(&tets, 0);
    let with_mat: Vec<([u32; 4], u32)> = tets.into_iter().map(|t| (t, 0)).collect();
    Ok(TetMesh::from_parts(vertices, &with_mat, &facets, &[])?)
}

fn inside_triangle(p: Point3, t: [Point3; 3]) -> bool {
    let n = (t[1] - t[0]).cross(t[2] - t[0]);
    let scale = n.norm() * 1e-12;
    (0..3).all(|k| {
        let (a, b) = (t[k], t[(k + 1) % 3]);
        (b - a).cross(p - a).dot(n) >= -scale * (b - a).norm()
    })
}

/// Tetrahedralize the region bounded by `surface`.
///
/// The surface vertices are Delaunay-tetrahedralized and Delaunay faces
/// lying on input triangles become facets with their patch id; no Steiner
/// points are added, so every patch must be covered by Delaunay faces.
pub fn tetrahedralize_surface(surface: &SurfaceMesh) -> Result<TetMesh, TetraError> {
    let dt = delaunay_from_points(&surface.vertices)?;
    let tets: Vec<[u32; 4]> = dt.tets().map(|(_, t)| t.v).collect();
    let mut faces: FxHashMap<FaceKey, Vec<(usize, usize)>> = FxHashMap::default();
    for (i, t) in tets.iter().enumerate() {
        for (k, f) in FACE_IDX.iter().enumerate() {
            faces.entry(face_key(t[f[0]], t[f[1]], t[f[2]])).or_default().push((i, k));
        }
    }
    let mut by_vertex: Vec<Vec<FaceKey>> = vec![Vec::new(); surface.vertices.len()];
    for &k in faces.keys() {
        for v in k {
            by_vertex[v as usize].push(k);
        }
    }
    for l in &mut by_vertex {
        l.sort_unstable();
    }
    let pos = |v: u32| surface.vertices[v as usize];

    // Assign Delaunay faces to input triangles.
    let mut patch_of: BTreeMap<FaceKey, u32> = BTreeMap::new();
    for (ti, tv) in surface.triangles.iter().enumerate() {
        let tp = tv.map(pos);
        for &v in tv {
            for &k in &by_vertex[v as usize] {
                if patch_of.contains_key(&k) {
                    continue;
                }
                let coplanar = k.iter().all(|&x| orient3d_sign(tp[0], tp[1], tp[2], pos(x)) == Sign::Zero);
                let c = (pos(k[0]) + pos(k[1]) + pos(k[2])) / 3.0;
                if coplanar && inside_triangle(c, tp) {
                    patch_of.insert(k, surface.patches[ti]);
                }
            }
        }
    }
    let mut want: BTreeMap<u32, f64> = BTreeMap::new();
    for t in 0..surface.triangles.len() {
        let [a, b, c] = surface.points(t);
        *want.entry(surface.patches[t]).or_default() += geom::triangle_area(a, b, c);
    }
    let mut got: BTreeMap<u32, f64> = BTreeMap::new();
    for (k, &p) in &patch_of {
        *got.entry(p).or_default() += geom::triangle_area(pos(k[0]), pos(k[1]), pos(k[2]));
    }
    for (&p, &w) in &want {
        let g = got.get(&p).copied().unwrap_or(0.0);
        if (g - w).abs() > 1e-9 * w {
            return Err(TetraError::NotRecovered(p));
        }
    }

    // Flood fill across unprotected faces; components touching the hull are
    // exterior.
    let n = tets.len();
    let mut comp = vec![usize::MAX; n];
    let mut exterior = Vec::new();
    let mut ncomp = 0;
    for s in 0..n {
        if comp[s] != usize::MAX {
            continue;
        }
        let mut stack = vec![s];
        comp[s] = ncomp;
        let mut outside = false;
        while let Some(t) = stack.pop() {
            for f in FACE_IDX {
                let k = face_key(tets[t][f[0]], tets[t][f[1]], tets[t][f[2]]);
                if patch_of.contains_key(&k) {
                    continue;
                }
                let sides = &faces[&k];
                if sides.len() == 1 {
                    outside = true;
                }
                for &(o, _) in sides {
                    if comp[o] == usize::MAX {
                        comp[o] = ncomp;
                        stack.push(o);
                    }
                }
            }
        }
        exterior.push(outside);
        ncomp += 1;
    }
    // Materials numbered in order of first tet.
    let mut material: Vec<Option<u32>> = vec![None; ncomp];
    let mut next = 0;
    let mut kept: Vec<([u32; 4], u32)> = Vec::new();
    for t in 0..n {
        let c = comp[t];
        if exterior[c] {
            continue;
        }
        let m = *material[c].get_or_insert_with(|| {
            next += 1;
            next - 1
        });
        kept.push((tets[t], m));
    }
    if kept.is_empty() {
        return Err(TetraError::Empty);
    }

    // Compact vertices.
    let mut map = vec![u32::MAX; surface.vertices.len()];
    let mut vertices = Vec::new();
    for (t, _) in &kept {
        for &v in t {
            if map[v as usize] == u32::MAX {
                map[v as usize] = vertices.len() as u32;
                vertices.push(pos(v));
            }
        }
    }
    let tets: Vec<([u32; 4], u32)> = kept.into_iter().map(|(t, m)| (t.map(|v| map[v as usize]), m)).collect();
    let facets: Vec<([u32; 3], u32)> = patch_of
        .iter()
        .filter(|(k, _)| k.iter().all(|&v| map[v as usize] != u32::MAX))
        .map(|(k, &p)| (k.map(|v| map[v as usize]), p))
        .collect();
    let segments = patch_segments(&facets);
    Ok(TetMesh::from_parts(vertices, &tets, &facets, &segments)?)
}

/// Edges where facets of different patches meet, with curve ids numbered by
/// the sorted set of patches on the edge.
pub fn patch_segments(facets: &[([u32; 3], u32)]) -> Vec<([u32; 2], u32)> {
    let mut on_edge: BTreeMap<EdgeKey, Vec<u32>> = BTreeMap::new();
    for (f, p) in facets {
        for k in 0..3 {
            on_edge.entry(edge_key(f[k], f[(k + 1) % 3])).or_default().push(*p);
        }
    }
    let mut curves: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
    let mut out = Vec::new();
    for (e, mut ps) in on_edge {
        ps.sort_unstable();
        ps.dedup();
        if ps.len() < 2 {
            continue;
        }
        out.push((e, ps));
    }
    let mut keys: Vec<Vec<u32>> = out.iter().map(|(_, p)| p.clone()).collect();
    keys.sort();
    keys.dedup();
    for (i, k) in keys.into_iter().enumerate() {
        curves.insert(k, i as u32);
    }
    out.into_iter().map(|(e, p)| (e, curves[&p])).collect()
}
