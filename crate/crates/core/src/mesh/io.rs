//! Mesh file I/O: PLY (ascii and binary little-endian) and OBJ.
//!
//! PLY is the canonical format: vertices as `float x, y, z` with an optional
//! `float quality` scalar per vertex, faces as `uchar` count plus `int`
//! indices. OBJ covers `v`/`f` records with 1-based indices and triangulated
//! faces only.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use super::TriangleMesh;
use crate::error::{Error, Result};

/// On-disk mesh encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    PlyAscii,
    PlyBinaryLe,
    Obj,
}

impl MeshFormat {
    /// Guess a format from a file extension (`.ply` defaults to binary).
    pub fn from_path(path: &Path) -> Result<MeshFormat> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("ply") => Ok(MeshFormat::PlyBinaryLe),
            Some("obj") => Ok(MeshFormat::Obj),
            other => Err(Error::validation(format!(
                "cannot infer mesh format from extension {other:?}; expected .ply or .obj"
            ))),
        }
    }
}

/// A mesh together with its optional per-vertex scalar field.
#[derive(Debug, Clone)]
pub struct LoadedMesh {
    pub mesh: TriangleMesh,
    pub quality: Option<Vec<f64>>,
}

/// Load a mesh from `path`. For the PLY formats the header decides between
/// ascii and binary regardless of the hint; for OBJ the hint must be `Obj`.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<LoadedMesh> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let result = match format {
        MeshFormat::Obj => parse_obj(&bytes),
        MeshFormat::PlyAscii | MeshFormat::PlyBinaryLe => parse_ply(&bytes),
    };
    result.map_err(|e| e.with_path(path))
}

/// Save `mesh` (and an optional scalar field, one value per vertex) to `path`.
pub fn save_mesh(
    mesh: &TriangleMesh,
    path: &Path,
    format: MeshFormat,
    quality: Option<&[f64]>,
) -> Result<()> {
    if let Some(q) = quality {
        if q.len() != mesh.vertex_count() {
            return Err(Error::validation(format!(
                "scalar field has {} values for {} vertices",
                q.len(),
                mesh.vertex_count()
            )));
        }
        if format == MeshFormat::Obj {
            return Err(Error::validation(
                "OBJ cannot store a per-vertex scalar field; use PLY",
            ));
        }
    }
    let bytes = match format {
        MeshFormat::PlyAscii => encode_ply_ascii(mesh, quality),
        MeshFormat::PlyBinaryLe => encode_ply_binary(mesh, quality),
        MeshFormat::Obj => encode_obj(mesh),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// OBJ
// ---------------------------------------------------------------------------

fn parse_obj(bytes: &[u8]) -> Result<LoadedMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut offset = 0usize;
    for line in bytes.split(|&b| b == b'\n') {
        let line_offset = offset;
        offset += line.len() + 1;
        let text = std::str::from_utf8(line)
            .map_err(|_| Error::format(line_offset, "invalid UTF-8 in OBJ file"))?
            .trim();
        let mut tokens = text.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = tokens.next().ok_or_else(|| {
                        Error::format(line_offset, "vertex record with fewer than 3 coordinates")
                    })?;
                    *c = tok.parse().map_err(|_| {
                        Error::format(line_offset, format!("invalid vertex coordinate {tok:?}"))
                    })?;
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(Error::format(
                        line_offset,
                        format!("face with {} vertices; only triangles are supported", refs.len()),
                    ));
                }
                let mut tri = [0u32; 3];
                for (k, r) in refs.iter().enumerate() {
                    let first = r.split('/').next().unwrap_or("");
                    let idx: i64 = first.parse().map_err(|_| {
                        Error::format(line_offset, format!("invalid face index {first:?}"))
                    })?;
                    if idx < 1 {
                        return Err(Error::format(
                            line_offset,
                            format!("face index {idx} is not 1-based"),
                        ));
                    }
                    tri[k] = (idx - 1) as u32;
                }
                triangles.push(tri);
            }
            // vn/vt/comments/group records carry nothing we need.
            _ => {}
        }
    }
    Ok(LoadedMesh {
        mesh: TriangleMesh::new(vertices, triangles)?,
        quality: None,
    })
}

fn encode_obj(mesh: &TriangleMesh) -> Vec<u8> {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1);
    }
    out.into_bytes()
}

// ---------------------------------------------------------------------------
// PLY
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(name: &str) -> Option<ScalarType> {
        Some(match name {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum PlyProperty {
    Scalar { name: String, ty: ScalarType },
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct PlyElement {
    name: String,
    count: usize,
    properties: Vec<PlyProperty>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<(usize, &'a str)> {
        let start = self.pos;
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| self.pos + i)
            .unwrap_or(self.bytes.len());
        let raw = &self.bytes[start..end];
        self.pos = (end + 1).min(self.bytes.len());
        let text = std::str::from_utf8(raw)
            .map_err(|_| Error::format(start, "invalid UTF-8 in PLY header"))?;
        Ok((start, text.trim_end_matches('\r')))
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.bytes.len(),
                format!("unexpected end of file while reading {what}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn parse_ply(bytes: &[u8]) -> Result<LoadedMesh> {
    let mut cur = Cursor { bytes, pos: 0 };

    let (off, magic) = cur.line()?;
    if magic.trim() != "ply" {
        return Err(Error::format(off, "missing 'ply' magic line"));
    }

    let mut binary = None;
    let mut elements: Vec<PlyElement> = Vec::new();
    loop {
        let (off, line) = cur.line()?;
        let line = line.trim();
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => match tok.next() {
                Some("ascii") => binary = Some(false),
                Some("binary_little_endian") => binary = Some(true),
                other => {
                    return Err(Error::format(
                        off,
                        format!("unsupported PLY format {other:?}"),
                    ))
                }
            },
            Some("element") => {
                let name = tok
                    .next()
                    .ok_or_else(|| Error::format(off, "element without a name"))?;
                let count: usize = tok
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| Error::format(off, "element without a valid count"))?;
                elements.push(PlyElement {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| Error::format(off, "property before any element"))?;
                let first = tok
                    .next()
                    .ok_or_else(|| Error::format(off, "property without a type"))?;
                if first == "list" {
                    let count = tok.next().and_then(ScalarType::parse).ok_or_else(|| {
                        Error::format(off, "list property with unsupported count type")
                    })?;
                    let item = tok.next().and_then(ScalarType::parse).ok_or_else(|| {
                        Error::format(off, "list property with unsupported item type")
                    })?;
                    let name = tok
                        .next()
                        .ok_or_else(|| Error::format(off, "list property without a name"))?;
                    let _ = name;
                    element.properties.push(PlyProperty::List { count, item });
                } else {
                    let ty = ScalarType::parse(first).ok_or_else(|| {
                        Error::format(off, format!("unsupported property type {first:?}"))
                    })?;
                    let name = tok
                        .next()
                        .ok_or_else(|| Error::format(off, "property without a name"))?;
                    element.properties.push(PlyProperty::Scalar {
                        name: name.to_string(),
                        ty,
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(Error::format(
                    off,
                    format!("unrecognized header keyword {other:?}"),
                ))
            }
        }
    }
    let binary =
        binary.ok_or_else(|| Error::format(cur.pos, "PLY header missing a format line"))?;

    let mut vertices = Vec::new();
    let mut quality: Option<Vec<f64>> = None;
    let mut triangles = Vec::new();

    for element in &elements {
        match element.name.as_str() {
            "vertex" => {
                read_vertices(&mut cur, element, binary, &mut vertices, &mut quality)?
            }
            "face" => read_faces(&mut cur, element, binary, &mut triangles)?,
            other => {
                if element.count > 0 {
                    return Err(Error::format(
                        cur.pos,
                        format!("unsupported PLY element {other:?} with nonzero count"),
                    ));
                }
            }
        }
    }

    Ok(LoadedMesh {
        mesh: TriangleMesh::new(vertices, triangles)?,
        quality,
    })
}

fn read_vertices(
    cur: &mut Cursor,
    element: &PlyElement,
    binary: bool,
    vertices: &mut Vec<Point3<f64>>,
    quality: &mut Option<Vec<f64>>,
) -> Result<()> {
    let mut x_slot = None;
    let mut y_slot = None;
    let mut z_slot = None;
    let mut q_slot = None;
    for (k, p) in element.properties.iter().enumerate() {
        if let PlyProperty::Scalar { name, .. } = p {
            match name.as_str() {
                "x" => x_slot = Some(k),
                "y" => y_slot = Some(k),
                "z" => z_slot = Some(k),
                "quality" => q_slot = Some(k),
                _ => {}
            }
        }
    }
    let (xs, ys, zs) = match (x_slot, y_slot, z_slot) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => {
            return Err(Error::format(
                cur.pos,
                "vertex element is missing x/y/z properties",
            ))
        }
    };
    if q_slot.is_some() {
        *quality = Some(Vec::with_capacity(element.count));
    }

    let mut values = vec![0.0f64; element.properties.len()];
    for _ in 0..element.count {
        if binary {
            for (k, p) in element.properties.iter().enumerate() {
                match p {
                    PlyProperty::Scalar { ty, .. } => {
                        values[k] = read_scalar(cur, *ty, "vertex data")?;
                    }
                    PlyProperty::List { count, item, .. } => {
                        let n = read_scalar(cur, *count, "vertex list count")? as usize;
                        cur.take(n * item.size(), "vertex list data")?;
                    }
                }
            }
        } else {
            let (off, line) = cur.line()?;
            let mut tok = line.split_whitespace();
            for (k, p) in element.properties.iter().enumerate() {
                match p {
                    PlyProperty::Scalar { .. } => {
                        let t = tok.next().ok_or_else(|| {
                            Error::format(off, "vertex line with too few values")
                        })?;
                        values[k] = t.parse().map_err(|_| {
                            Error::format(off, format!("invalid vertex value {t:?}"))
                        })?;
                    }
                    PlyProperty::List { .. } => {
                        let n: usize = tok
                            .next()
                            .and_then(|t| t.parse().ok())
                            .ok_or_else(|| Error::format(off, "invalid list count"))?;
                        for _ in 0..n {
                            tok.next();
                        }
                    }
                }
            }
        }
        vertices.push(Point3::new(values[xs], values[ys], values[zs]));
        if let (Some(qs), Some(q)) = (q_slot, quality.as_mut()) {
            q.push(values[qs]);
        }
    }
    Ok(())
}

fn read_faces(
    cur: &mut Cursor,
    element: &PlyElement,
    binary: bool,
    triangles: &mut Vec<[u32; 3]>,
) -> Result<()> {
    for _ in 0..element.count {
        if binary {
            for p in &element.properties {
                match p {
                    PlyProperty::List { count, item, .. } => {
                        let start = cur.pos;
                        let n = read_scalar(cur, *count, "face list count")? as usize;
                        if n != 3 {
                            return Err(Error::format(
                                start,
                                format!("face with {n} vertices; only triangles are supported"),
                            ));
                        }
                        let mut tri = [0u32; 3];
                        for t in &mut tri {
                            let v = read_scalar(cur, *item, "face index")?;
                            if v < 0.0 {
                                return Err(Error::format(start, "negative face index"));
                            }
                            *t = v as u32;
                        }
                        triangles.push(tri);
                    }
                    PlyProperty::Scalar { ty, .. } => {
                        read_scalar(cur, *ty, "face scalar")?;
                    }
                }
            }
        } else {
            let (off, line) = cur.line()?;
            let mut tok = line.split_whitespace();
            let n: usize = tok
                .next()
                .and_then(|t| t.parse().ok())
                .ok_or_else(|| Error::format(off, "invalid face list count"))?;
            if n != 3 {
                return Err(Error::format(
                    off,
                    format!("face with {n} vertices; only triangles are supported"),
                ));
            }
            let mut tri = [0u32; 3];
            for t in &mut tri {
                let tk = tok
                    .next()
                    .ok_or_else(|| Error::format(off, "face line with too few indices"))?;
                let v: i64 = tk
                    .parse()
                    .map_err(|_| Error::format(off, format!("invalid face index {tk:?}")))?;
                if v < 0 {
                    return Err(Error::format(off, "negative face index"));
                }
                *t = v as u32;
            }
            triangles.push(tri);
        }
    }
    Ok(())
}

fn read_scalar(cur: &mut Cursor, ty: ScalarType, what: &str) -> Result<f64> {
    let raw = cur.take(ty.size(), what)?;
    Ok(match ty {
        ScalarType::I8 => raw[0] as i8 as f64,
        ScalarType::U8 => raw[0] as f64,
        ScalarType::I16 => i16::from_le_bytes([raw[0], raw[1]]) as f64,
        ScalarType::U16 => u16::from_le_bytes([raw[0], raw[1]]) as f64,
        ScalarType::I32 => i32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as f64,
        ScalarType::U32 => u32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as f64,
        ScalarType::F32 => f32::from_le_bytes([raw[0], raw[1], raw[2], raw[3]]) as f64,
        ScalarType::F64 => f64::from_le_bytes([
            raw[0], raw[1], raw[2], raw[3], raw[4], raw[5], raw[6], raw[7],
        ]),
    })
}

fn ply_header(mesh: &TriangleMesh, quality: Option<&[f64]>, binary: bool) -> String {
    let mut h = String::from("ply\n");
    h.push_str(if binary {
        "format binary_little_endian 1.0\n"
    } else {
        "format ascii 1.0\n"
    });
    let _ = writeln!(h, "element vertex {}", mesh.vertex_count());
    h.push_str("property float x\nproperty float y\nproperty float z\n");
    if quality.is_some() {
        h.push_str("property float quality\n");
    }
    let _ = writeln!(h, "element face {}", mesh.triangle_count());
    h.push_str("property list uchar int vertex_indices\nend_header\n");
    h
}

fn encode_ply_ascii(mesh: &TriangleMesh, quality: Option<&[f64]>) -> Vec<u8> {
    let mut out = ply_header(mesh, quality, false);
    for (i, v) in mesh.vertices().iter().enumerate() {
        let _ = write!(out, "{} {} {}", v.x as f32, v.y as f32, v.z as f32);
        if let Some(q) = quality {
            let _ = write!(out, " {}", q[i] as f32);
        }
        out.push('\n');
    }
    for t in mesh.triangles() {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    out.into_bytes()
}

fn encode_ply_binary(mesh: &TriangleMesh, quality: Option<&[f64]>) -> Vec<u8> {
    let mut out = ply_header(mesh, quality, true).into_bytes();
    for (i, v) in mesh.vertices().iter().enumerate() {
        out.extend_from_slice(&(v.x as f32).to_le_bytes());
        out.extend_from_slice(&(v.y as f32).to_le_bytes());
        out.extend_from_slice(&(v.z as f32).to_le_bytes());
        if let Some(q) = quality {
            out.extend_from_slice(&(q[i] as f32).to_le_bytes());
        }
    }
    for t in mesh.triangles() {
        out.push(3u8);
        for &i in t {
            out.extend_from_slice(&(i as i32).to_le_bytes());
        }
    }
    out
}
