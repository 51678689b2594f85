//! Deterministic synthetic benchmark shapes.
//!
//! Stand-ins for scanned anatomy at desk scale: smooth closed ellipsoids,
//! thin capped cylinders (elongated structures prone to closest-point
//! failure), and open plates with a central bump (partial-data
//! reconstruction). All generators are pure functions of their arguments.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

/// Watertight ellipsoid with the given semi-axes (mm). `resolution` is the
/// number of latitude bands; longitude uses twice that.
pub fn ellipsoid(resolution: u32, radii: [f64; 3]) -> Result<TriangleMesh> {
    if resolution < 4 {
        return Err(Error::validation("ellipsoid resolution must be >= 4"));
    }
    let stacks = resolution as usize;
    let slices = 2 * stacks;
    let [a, b, c] = radii;

    let mut vertices = Vec::with_capacity(2 + (stacks - 1) * slices);
    vertices.push(Point3::new(0.0, 0.0, c));
    for i in 1..stacks {
        let theta = std::f64::consts::PI * i as f64 / stacks as f64;
        let (sin_t, cos_t) = theta.sin_cos();
        for j in 0..slices {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / slices as f64;
            vertices.push(Point3::new(
                a * sin_t * phi.cos(),
                b * sin_t * phi.sin(),
                c * cos_t,
            ));
        }
    }
    vertices.push(Point3::new(0.0, 0.0, -c));
    let south = (vertices.len() - 1) as u32;

    let ring = |i: usize, j: usize| -> u32 { (1 + (i - 1) * slices + (j % slices)) as u32 };

    let mut triangles = Vec::with_capacity(2 * slices * (stacks - 1));
    for j in 0..slices {
        triangles.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..stacks - 1 {
        for j in 0..slices {
            let (u0, u1) = (ring(i, j), ring(i, j + 1));
            let (l0, l1) = (ring(i + 1, j), ring(i + 1, j + 1));
            triangles.push([u0, l0, l1]);
            triangles.push([u0, l1, u1]);
        }
    }
    for j in 0..slices {
        triangles.push([south, ring(stacks - 1, j + 1), ring(stacks - 1, j)]);
    }

    TriangleMesh::new(vertices, triangles)
}

/// Watertight capped cylinder along the z axis, centred at the origin.
/// `resolution` sets the number of rings along the axis; the circumference
/// uses twice that many segments.
pub fn thin_cylinder(resolution: u32, radius: f64, length: f64) -> Result<TriangleMesh> {
    if resolution < 4 {
        return Err(Error::validation("cylinder resolution must be >= 4"));
    }
    let rings = resolution as usize;
    let segments = 2 * rings;

    let mut vertices = Vec::with_capacity(2 + (rings + 1) * segments);
    vertices.push(Point3::new(0.0, 0.0, -length / 2.0)); // bottom centre
    for i in 0..=rings {
        let z = -length / 2.0 + length * i as f64 / rings as f64;
        for j in 0..segments {
            let phi = 2.0 * std::f64::consts::PI * j as f64 / segments as f64;
            vertices.push(Point3::new(radius * phi.cos(), radius * phi.sin(), z));
        }
    }
    vertices.push(Point3::new(0.0, 0.0, length / 2.0)); // top centre
    let top = (vertices.len() - 1) as u32;

    let ring = |i: usize, j: usize| -> u32 { (1 + i * segments + (j % segments)) as u32 };

    let mut triangles = Vec::new();
    for j in 0..segments {
        // Bottom cap faces -z.
        triangles.push([0, ring(0, j + 1), ring(0, j)]);
    }
    for i in 0..rings {
        for j in 0..segments {
            let (b0, b1) = (ring(i, j), ring(i, j + 1));
            let (t0, t1) = (ring(i + 1, j), ring(i + 1, j + 1));
            triangles.push([b0, b1, t1]);
            triangles.push([b0, t1, t0]);
        }
    }
    for j in 0..segments {
        triangles.push([top, ring(rings, j), ring(rings, j + 1)]);
    }

    TriangleMesh::new(vertices, triangles)
}

/// Open square plate in the xy plane with a central Gaussian bump:
/// `z = bump_height * exp(-(x^2 + y^2) / bump_radius^2)`. `resolution` is
/// the number of vertices per side.
pub fn plate_with_bump(
    resolution: u32,
    size: f64,
    bump_height: f64,
    bump_radius: f64,
) -> Result<TriangleMesh> {
    if resolution < 4 {
        return Err(Error::validation("plate resolution must be >= 4"));
    }
    if bump_radius <= 0.0 {
        return Err(Error::validation("bump radius must be positive"));
    }
    let n = resolution as usize;
    let mut vertices = Vec::with_capacity(n * n);
    for iy in 0..n {
        for ix in 0..n {
            let x = size * (ix as f64 / (n - 1) as f64 - 0.5);
            let y = size * (iy as f64 / (n - 1) as f64 - 0.5);
            let z = bump_height * (-(x * x + y * y) / (bump_radius * bump_radius)).exp();
            vertices.push(Point3::new(x, y, z));
        }
    }
    let at = |ix: usize, iy: usize| -> u32 { (iy * n + ix) as u32 };
    let mut triangles = Vec::with_capacity(2 * (n - 1) * (n - 1));
    for iy in 0..n - 1 {
        for ix in 0..n - 1 {
            let v00 = at(ix, iy);
            let v10 = at(ix + 1, iy);
            let v01 = at(ix, iy + 1);
            let v11 = at(ix + 1, iy + 1);
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// Remove every triangle whose centroid lies within `radius` of `center`,
/// dropping vertices that become unreferenced. Errors if nothing remains.
pub fn excise(mesh: &TriangleMesh, center: &Point3<f64>, radius: f64) -> Result<TriangleMesh> {
    let kept: Vec<[u32; 3]> = mesh
        .triangles()
        .iter()
        .filter(|tri| {
            let [a, b, c] = **tri;
            let centroid = (mesh.vertices()[a as usize].coords
                + mesh.vertices()[b as usize].coords
                + mesh.vertices()[c as usize].coords)
                / 3.0;
            (centroid - center.coords).norm() > radius
        })
        .copied()
        .collect();
    if kept.is_empty() {
        return Err(Error::validation(
            "excision removed every triangle of the mesh",
        ));
    }

    let mut remap = vec![u32::MAX; mesh.vertex_count()];
    let mut vertices = Vec::new();
    let mut triangles = Vec::with_capacity(kept.len());
    for tri in kept {
        let mut out = [0u32; 3];
        for (k, &old) in tri.iter().enumerate() {
            if remap[old as usize] == u32::MAX {
                remap[old as usize] = vertices.len() as u32;
                vertices.push(mesh.vertices()[old as usize]);
            }
            out[k] = remap[old as usize];
        }
        triangles.push(out);
    }
    TriangleMesh::new(vertices, triangles)
}

/// Deformation field pushing vertices along their normals with a Gaussian
/// falloff from `center`. Useful for creating targets that a smooth prior
/// cannot represent exactly.
pub fn bump_deformation(
    mesh: &TriangleMesh,
    center: &Point3<f64>,
    falloff_radius: f64,
    height: f64,
) -> Vec<Vector3<f64>> {
    let normals = mesh.vertex_normals_lenient();
    mesh.vertices()
        .iter()
        .zip(&normals)
        .map(|(p, n)| match n {
            Some(n) => {
                let w = (-(p - center).norm_squared() / (falloff_radius * falloff_radius)).exp();
                n.into_inner() * (height * w)
            }
            None => Vector3::zeros(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ellipsoid_is_watertight() {
        let mesh = ellipsoid(16, [10.0, 8.0, 6.0]).unwrap();
        assert!(mesh.boundary_vertices().is_empty());
        assert!(mesh.vertex_count() > 100);
    }

    #[test]
    fn cylinder_is_watertight() {
        let mesh = thin_cylinder(8, 2.0, 40.0).unwrap();
        assert!(mesh.boundary_vertices().is_empty());
    }

    #[test]
    fn plate_has_boundary() {
        let mesh = plate_with_bump(10, 40.0, 8.0, 6.0).unwrap();
        assert!(!mesh.boundary_vertices().is_empty());
    }

    #[test]
    fn excised_plate_gains_boundary() {
        let plate = plate_with_bump(12, 40.0, 8.0, 6.0).unwrap();
        let before = plate.boundary_vertices().len();
        let cut = excise(&plate, &Point3::new(0.0, 0.0, 4.0), 8.0).unwrap();
        assert!(cut.triangle_count() < plate.triangle_count());
        assert!(cut.boundary_vertices().len() > before);
        // All remaining vertices are referenced.
        let used: std::collections::HashSet<u32> =
            cut.triangles().iter().flatten().copied().collect();
        assert_eq!(used.len(), cut.vertex_count());
    }

    #[test]
    fn excising_everything_is_an_error() {
        let plate = plate_with_bump(6, 10.0, 0.0, 1.0).unwrap();
        assert!(excise(&plate, &Point3::origin(), 1e6).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let a = ellipsoid(12, [10.0, 9.0, 8.0]).unwrap();
        let b = ellipsoid(12, [10.0, 9.0, 8.0]).unwrap();
        assert_eq!(a, b);
    }
}
