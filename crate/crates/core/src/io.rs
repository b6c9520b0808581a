//! TetGen-style ASCII mesh files: `.node`, `.ele`, `.face` and, for
//! boundary curves, `.edge`. Ids are 1-based; `#` starts a comment.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::geom::Point3;
use crate::mesh::{MeshError, TetMesh};
use crate::surface::SurfaceMesh;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{file}:{line}: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

impl IoError {
    /// Unreadable or malformed input, as opposed to a failed write or a
    /// well-formed file describing an invalid mesh.
    pub fn is_input(&self) -> bool {
        matches!(self, IoError::Read { .. } | IoError::Parse { .. })
    }
}

pub fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn read(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, text: &str) -> Result<(), IoError> {
    fs::write(path, text).map_err(|source| IoError::Write {
        path: path.to_owned(),
        source,
    })
}

/// Non-empty lines with comments removed, tokenized, with line numbers.
fn records<'a>(text: &'a str) -> impl Iterator<Item = (usize, Vec<&'a str>)> + 'a {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("");
        let tok: Vec<&str> = l.split_whitespace().collect();
        (!tok.is_empty()).then_some((i + 1, tok))
    })
}

struct Table {
    rows: Vec<(usize, Vec<f64>, Vec<i64>)>,
}

/// Parse a header `count dim ...` table whose rows are `id` followed by
/// `nf` floats and `ni` integers.
fn parse_table(file: &str, text: &str, nf: usize, ni: usize) -> Result<Table, IoError> {
    let err = |line: usize, msg: String| IoError::Parse {
        file: file.to_owned(),
        line,
        msg,
    };
    let mut it = records(text);
    let (hl, header) = it.next().ok_or_else(|| err(0, "missing header".into()))?;
    let count: usize = header[0]
        .parse()
        .map_err(|_| err(hl, format!("bad count {:?}", header[0])))?;
    let mut rows = Vec::with_capacity(count);
    for (line, tok) in it {
        if tok.len() < 1 + nf + ni {
            return Err(err(line, format!("expected {} fields, got {}", 1 + nf + ni, tok.len())));
        }
        let id: usize = tok[0].parse().map_err(|_| err(line, format!("bad id {:?}", tok[0])))?;
        if id != rows.len() + 1 {
            return Err(err(line, format!("id {id} out of sequence")));
        }
        let mut fs = Vec::with_capacity(nf);
        for t in &tok[1..1 + nf] {
            let x: f64 = t.parse().map_err(|_| err(line, format!("bad number {t:?}")))?;
            if !x.is_finite() {
                return Err(err(line, format!("non-finite number {t:?}")));
            }
            fs.push(x);
        }
        let mut is = Vec::with_capacity(ni);
        for t in &tok[1 + nf..1 + nf + ni] {
            is.push(t.parse().map_err(|_| err(line, format!("bad integer {t:?}")))?);
        }
        rows.push((line, fs, is));
    }
    if rows.len() != count {
        return Err(err(hl, format!("header says {count} rows, found {}", rows.len())));
    }
    Ok(Table { rows })
}

/// Convert 1-based vertex references.
fn vertex_refs<const N: usize>(
    file: &str,
    line: usize,
    raw: &[i64],
    n: usize,
) -> Result<[u32; N], IoError> {
    let mut out = [0u32; N];
    for (o, &r) in out.iter_mut().zip(raw) {
        if r < 1 || r as usize > n {
            return Err(IoError::Parse {
                file: file.to_owned(),
                line,
                msg: format!("vertex {r} out of range 1..={n}"),
            });
        }
        *o = (r - 1) as u32;
    }
    Ok(out)
}

fn label(file: &str, line: usize, x: i64) -> Result<u32, IoError> {
    u32::try_from(x).map_err(|_| IoError::Parse {
        file: file.to_owned(),
        line,
        msg: format!("label {x} must be a non-negative 32-bit integer"),
    })
}

pub fn parse_nodes(text: &str) -> Result<Vec<Point3>, IoError> {
    let t = parse_table(".node", text, 3, 0)?;
    Ok(t.rows.into_iter().map(|(_, f, _)| Point3::new(f[0], f[1], f[2])).collect())
}

pub fn parse_eles(text: &str, n: usize) -> Result<Vec<([u32; 4], u32)>, IoError> {
    let t = parse_table(".ele", text, 0, 5)?;
    t.rows
        .into_iter()
        .map(|(l, _, i)| Ok((vertex_refs::<4>(".ele", l, &i[..4], n)?, label(".ele", l, i[4])?)))
        .collect()
}

pub fn parse_faces(text: &str, n: usize) -> Result<Vec<([u32; 3], u32)>, IoError> {
    let t = parse_table(".face", text, 0, 4)?;
    t.rows
        .into_iter()
        .map(|(l, _, i)| Ok((vertex_refs::<3>(".face", l, &i[..3], n)?, label(".face", l, i[3])?)))
        .collect()
}

pub fn parse_edges(text: &str, n: usize) -> Result<Vec<([u32; 2], u32)>, IoError> {
    let t = parse_table(".edge", text, 0, 3)?;
    t.rows
        .into_iter()
        .map(|(l, _, i)| Ok((vertex_refs::<2>(".edge", l, &i[..2], n)?, label(".edge", l, i[2])?)))
        .collect()
}

/// 17 significant digits, enough to read back the same bits.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// `.node` text; the marker is 1 on facet vertices.
pub fn node_text(mesh: &TetMesh) -> String {
    let on = mesh.facet_vertex_set();
    let mut s = format!("{} 3 0 1\n", mesh.num_vertices());
    for (i, p) in mesh.vertices().iter().enumerate() {
        let marker = u8::from(on.contains(&(i as u32)));
        let _ = writeln!(s, "{} {} {} {} {}", i + 1, num(p.x), num(p.y), num(p.z), marker);
    }
    s
}

/// `.ele` text with live tets renumbered densely in id order.
pub fn ele_text(mesh: &TetMesh) -> String {
    let mut s = format!("{} 4 1\n", mesh.num_tets());
    for (i, (_, t)) in mesh.tets().enumerate() {
        let v = t.v;
        let _ = writeln!(s, "{} {} {} {} {} {}", i + 1, v[0] + 1, v[1] + 1, v[2] + 1, v[3] + 1, t.material);
    }
    s
}

pub fn face_text(mesh: &TetMesh) -> String {
    let mut s = format!("{} 1\n", mesh.num_facets());
    for (i, (_, f)) in mesh.facets().enumerate() {
        let v = f.v;
        let _ = writeln!(s, "{} {} {} {} {}", i + 1, v[0] + 1, v[1] + 1, v[2] + 1, f.patch);
    }
    s
}

pub fn edge_text(mesh: &TetMesh) -> String {
    let mut s = format!("{} 1\n", mesh.num_segments());
    for (i, (_, e)) in mesh.segments().enumerate() {
        let _ = writeln!(s, "{} {} {} {}", i + 1, e.v[0] + 1, e.v[1] + 1, e.curve);
    }
    s
}

/// Write `<base>.node`, `.ele`, `.face` and `.edge`.
pub fn write_mesh(mesh: &TetMesh, base: &Path) -> Result<(), IoError> {
    write(&with_ext(base, "node"), &node_text(mesh))?;
    write(&with_ext(base, "ele"), &ele_text(mesh))?;
    write(&with_ext(base, "face"), &face_text(mesh))?;
    write(&with_ext(base, "edge"), &edge_text(mesh))
}

/// Read a volume mesh. `.face` and `.edge` are optional; without `.face`
/// the hull becomes patch 0.
pub fn read_mesh(base: &Path) -> Result<TetMesh, IoError> {
    let vertices = parse_nodes(&read(&with_ext(base, "node"))?)?;
    let n = vertices.len();
    let tets = parse_eles(&read(&with_ext(base, "ele"))?, n)?;
    let face_path = with_ext(base, "face");
    let facets = if face_path.exists() {
        parse_faces(&read(&face_path)?, n)?
    } else {
        let raw: Vec<[u32; 4]> = tets.iter().map(|(t, _)| *t).collect();
        crate::mesh::hull_facets(&raw, 0)
    };
    let edge_path = with_ext(base, "edge");
    let segments = if edge_path.exists() {
        parse_edges(&read(&edge_path)?, n)?
    } else {
        Vec::new()
    };
    Ok(TetMesh::from_parts(vertices, &tets, &facets, &segments)?)
}

/// Read a triangulated surface from `<base>.node` and `<base>.face`.
pub fn read_surface(base: &Path) -> Result<SurfaceMesh, IoError> {
    let vertices = parse_nodes(&read(&with_ext(base, "node"))?)?;
    let faces = parse_faces(&read(&with_ext(base, "face"))?, vertices.len())?;
    Ok(SurfaceMesh {
        vertices,
        triangles: faces.iter().map(|(f, _)| *f).collect(),
        patches: faces.iter().map(|(_, p)| *p).collect(),
    })
}

pub fn write_surface(surface: &SurfaceMesh, base: &Path) -> Result<(), IoError> {
    let mut s = format!("{} 3 0 0\n", surface.vertices.len());
    for (i, p) in surface.vertices.iter().enumerate() {
        let _ = writeln!(s, "{} {} {} {}", i + 1, num(p.x), num(p.y), num(p.z));
    }
    write(&with_ext(base, "node"), &s)?;
    let mut s = format!("{} 1\n", surface.triangles.len());
    for (i, (t, p)) in surface.triangles.iter().zip(&surface.patches).enumerate() {
        let _ = writeln!(s, "{} {} {} {} {}", i + 1, t[0] + 1, t[1] + 1, t[2] + 1, p);
    }
    write(&with_ext(base, "face"), &s)
}

/// Read a point cloud from `<base>.node`.
pub fn read_points(base: &Path) -> Result<Vec<Point3>, IoError> {
    parse_nodes(&read(&with_ext(base, "node"))?)
}
