//! Triangle meshes, differential quantities, and closest-point queries.
//!
//! All coordinates are in millimetres. A [`TriangleMesh`] is immutable after
//! construction; its spatial index and boundary set are built lazily and
//! cached, so read-only queries are safe to share across threads.

mod bvh;
pub mod io;

use std::collections::HashSet;
use std::sync::OnceLock;

use nalgebra::{Point3, Unit, Vector3};

use crate::error::{Error, Result};

pub use bvh::{closest_point_on_triangle, Bvh};

/// An indexed triangle surface.
#[derive(Debug, Default)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
    index: OnceLock<Bvh>,
    boundary: OnceLock<HashSet<u32>>,
}

impl Clone for TriangleMesh {
    fn clone(&self) -> Self {
        // Caches are rebuilt on demand in the clone.
        TriangleMesh {
            vertices: self.vertices.clone(),
            triangles: self.triangles.clone(),
            index: OnceLock::new(),
            boundary: OnceLock::new(),
        }
    }
}

impl PartialEq for TriangleMesh {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.triangles == other.triangles
    }
}

impl TriangleMesh {
    /// Build a mesh, checking the structural invariants: indices in range,
    /// no repeated index within a triangle, finite vertex positions.
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let n = vertices.len() as u32;
        for (i, v) in vertices.iter().enumerate() {
            if !(v.x.is_finite() && v.y.is_finite() && v.z.is_finite()) {
                return Err(Error::validation(format!(
                    "vertex {i} has non-finite coordinates"
                )));
            }
        }
        for (t, tri) in triangles.iter().enumerate() {
            for &i in tri {
                if i >= n {
                    return Err(Error::validation(format!(
                        "triangle {t} references vertex {i}, but the mesh has {n} vertices"
                    )));
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::validation(format!(
                    "triangle {t} repeats a vertex index: {tri:?}"
                )));
            }
        }
        Ok(TriangleMesh {
            vertices,
            triangles,
            index: OnceLock::new(),
            boundary: OnceLock::new(),
        })
    }

    /// Construct without validation. Callers must guarantee the invariants
    /// hold, e.g. when deforming the vertices of an already-valid mesh.
    pub(crate) fn from_parts_unchecked(
        vertices: Vec<Point3<f64>>,
        triangles: Vec<[u32; 3]>,
    ) -> Self {
        debug_assert!(triangles
            .iter()
            .all(|t| t.iter().all(|&i| (i as usize) < vertices.len())));
        TriangleMesh {
            vertices,
            triangles,
            index: OnceLock::new(),
            boundary: OnceLock::new(),
        }
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    /// Corner positions of triangle `t`.
    pub fn triangle_vertices(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }

    /// The spatial index over this mesh's triangles, built on first use.
    pub fn index(&self) -> &Bvh {
        self.index.get_or_init(|| Bvh::build(self))
    }

    /// Closest point on the surface to `query`, accelerated by the cached
    /// index. Ties between triangles are broken by the lowest triangle index.
    pub fn closest_point(&self, query: &Point3<f64>) -> Result<SurfacePoint> {
        if self.is_empty() {
            return Err(Error::validation(
                "closest_point requires a mesh with at least one triangle",
            ));
        }
        Ok(self.index().closest_point(query))
    }

    /// Vertices that touch an edge used by exactly one triangle.
    pub fn boundary_vertices(&self) -> &HashSet<u32> {
        self.boundary.get_or_init(|| {
            let mut edge_use: std::collections::HashMap<(u32, u32), u32> =
                std::collections::HashMap::new();
            for tri in &self.triangles {
                for (a, b) in [(tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])] {
                    let key = if a < b { (a, b) } else { (b, a) };
                    *edge_use.entry(key).or_insert(0) += 1;
                }
            }
            let mut set = HashSet::new();
            for ((a, b), uses) in edge_use {
                if uses == 1 {
                    set.insert(a);
                    set.insert(b);
                }
            }
            set
        })
    }

    /// Area-weighted vertex normals. Zero-area triangles contribute nothing;
    /// vertices with no usable triangle are reported as an error.
    pub fn vertex_normals(&self) -> Result<VertexNormalField> {
        let sums = self.normal_sums();
        let mut bad = Vec::new();
        let mut normals = Vec::with_capacity(self.vertices.len());
        for (i, s) in sums.iter().enumerate() {
            let norm = s.norm();
            if norm <= 1e-300 {
                bad.push(i);
                normals.push(Vector3::z()); // placeholder, discarded on error
            } else {
                normals.push(s / norm);
            }
        }
        if !bad.is_empty() {
            return Err(Error::validation(format!(
                "vertices without a usable incident triangle (isolated or degenerate-only): {bad:?}"
            )));
        }
        Ok(VertexNormalField { normals })
    }

    /// Like [`vertex_normals`](Self::vertex_normals) but yields `None` for
    /// vertices whose incident triangles are all missing or degenerate.
    pub fn vertex_normals_lenient(&self) -> Vec<Option<Unit<Vector3<f64>>>> {
        self.normal_sums()
            .into_iter()
            .map(|s| {
                let norm = s.norm();
                if norm <= 1e-300 {
                    None
                } else {
                    Some(Unit::new_unchecked(s / norm))
                }
            })
            .collect()
    }

    /// Unnormalized per-vertex normal sums. The cross product of two triangle
    /// edges has magnitude twice the triangle area, so summing it per corner
    /// is exactly area weighting.
    fn normal_sums(&self) -> Vec<Vector3<f64>> {
        let mut sums = vec![Vector3::zeros(); self.vertices.len()];
        for tri in &self.triangles {
            let [a, b, c] = *tri;
            let pa = self.vertices[a as usize];
            let pb = self.vertices[b as usize];
            let pc = self.vertices[c as usize];
            let cross = (pb - pa).cross(&(pc - pa));
            sums[a as usize] += cross;
            sums[b as usize] += cross;
            sums[c as usize] += cross;
        }
        sums
    }

    /// Average triangle-normal agreement with `other` (same topology).
    /// Counts triangles whose normal flipped sign relative to this mesh.
    pub fn count_flipped_triangles(&self, other: &TriangleMesh) -> Result<usize> {
        if self.triangles != other.triangles {
            return Err(Error::validation(
                "count_flipped_triangles requires identical triangle lists",
            ));
        }
        let mut flipped = 0;
        for t in 0..self.triangles.len() {
            let [a0, b0, c0] = self.triangle_vertices(t);
            let [a1, b1, c1] = other.triangle_vertices(t);
            let n0 = (b0 - a0).cross(&(c0 - a0));
            let n1 = (b1 - a1).cross(&(c1 - a1));
            if n0.dot(&n1) < 0.0 {
                flipped += 1;
            }
        }
        Ok(flipped)
    }

    /// Mesh with the same topology and vertices displaced by `field`.
    pub fn displaced(&self, field: &[Vector3<f64>]) -> Result<TriangleMesh> {
        if field.len() != self.vertices.len() {
            return Err(Error::validation(format!(
                "displacement field has {} entries for {} vertices",
                field.len(),
                self.vertices.len()
            )));
        }
        let vertices = self
            .vertices
            .iter()
            .zip(field)
            .map(|(v, d)| v + d)
            .collect();
        TriangleMesh::new(vertices, self.triangles.clone())
    }
}

/// A point on a mesh surface: position, supporting triangle, barycentric
/// coordinates, and the distance from the original query.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfacePoint {
    pub position: Point3<f64>,
    pub triangle: usize,
    pub barycentric: [f64; 3],
    pub distance: f64,
}

impl SurfacePoint {
    /// Index of the supporting vertex with the largest barycentric weight.
    pub fn nearest_vertex(&self, mesh: &TriangleMesh) -> u32 {
        let tri = mesh.triangles()[self.triangle];
        let mut best = 0;
        for k in 1..3 {
            if self.barycentric[k] > self.barycentric[best] {
                best = k;
            }
        }
        tri[best]
    }

    /// Whether this point lies at a boundary vertex or on an edge incident to
    /// one. Points interior to a triangle never touch the boundary.
    pub fn touches_boundary(&self, mesh: &TriangleMesh) -> bool {
        const SUPPORT_EPS: f64 = 1e-7;
        let boundary = mesh.boundary_vertices();
        if boundary.is_empty() {
            return false;
        }
        let tri = mesh.triangles()[self.triangle];
        let support: Vec<u32> = (0..3)
            .filter(|&k| self.barycentric[k] > SUPPORT_EPS)
            .map(|k| tri[k])
            .collect();
        support.len() <= 2 && support.iter().any(|v| boundary.contains(v))
    }
}

/// One unit normal per mesh vertex.
#[derive(Debug, Clone)]
pub struct VertexNormalField {
    normals: Vec<Vector3<f64>>,
}

impl VertexNormalField {
    pub fn normals(&self) -> &[Vector3<f64>] {
        &self.normals
    }

    pub fn normal(&self, vertex: usize) -> Vector3<f64> {
        self.normals[vertex]
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }
}

/// Right-handed orthonormal frame completion: returns `(v1, v2)` with
/// `{n, v1, v2}` orthonormal and `v1 × v2 = n`.
///
/// Uses the branchless frame of Duff et al.; `n` need not be exactly unit
/// but must be nonzero.
pub fn tangent_frame(normal: &Vector3<f64>) -> Result<(Vector3<f64>, Vector3<f64>)> {
    let norm = normal.norm();
    if norm < 1e-12 {
        return Err(Error::validation(
            "tangent_frame requires a nonzero normal",
        ));
    }
    let n = normal / norm;
    let sign = 1.0_f64.copysign(n.z);
    let a = -1.0 / (sign + n.z);
    let b = n.x * n.y * a;
    let v1 = Vector3::new(1.0 + sign * n.x * n.x * a, sign * b, -sign * n.x);
    let v2 = Vector3::new(b, sign + n.y * n.y * a, -n.y);
    Ok((v1, v2))
}

#[cfg(test)]
mod tests;
