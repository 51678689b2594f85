use std::collections::HashSet;

use nalgebra::{Matrix3, Point3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{load_mesh, save_mesh, MeshFormat};
use super::*;
use crate::synth;

fn unit_triangle() -> TriangleMesh {
    TriangleMesh::new(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2]],
    )
    .unwrap()
}

fn flat_square() -> TriangleMesh {
    TriangleMesh::new(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3]],
    )
    .unwrap()
}

/// Brute-force closest point: scan every triangle, ties to the lowest index.
fn brute_force_closest(mesh: &TriangleMesh, q: &Point3<f64>) -> SurfacePoint {
    let mut best_d2 = f64::INFINITY;
    let mut best = None;
    for t in 0..mesh.triangle_count() {
        let [a, b, c] = mesh.triangle_vertices(t);
        let (point, bary) = closest_point_on_triangle(q, &a, &b, &c);
        let d2 = (q - point).norm_squared();
        if d2 < best_d2 {
            best_d2 = d2;
            best = Some(SurfacePoint {
                position: point,
                triangle: t,
                barycentric: bary,
                distance: d2.sqrt(),
            });
        }
    }
    best.expect("non-empty mesh")
}

// --- construction -----------------------------------------------------------

#[test]
fn rejects_out_of_range_index() {
    let err = TriangleMesh::new(vec![Point3::origin()], vec![[0, 0, 5]]).unwrap_err();
    assert!(matches!(err, crate::Error::Validation(_)));
}

#[test]
fn rejects_repeated_index() {
    let vs = vec![Point3::origin(), Point3::new(1.0, 0.0, 0.0)];
    assert!(TriangleMesh::new(vs, vec![[0, 1, 0]]).is_err());
}

#[test]
fn rejects_non_finite_vertex() {
    let vs = vec![Point3::new(f64::NAN, 0.0, 0.0)];
    assert!(TriangleMesh::new(vs, vec![]).is_err());
}

// --- closest point ----------------------------------------------------------

#[test]
fn closest_point_orthogonal_projection() {
    let mesh = unit_triangle();
    let sp = mesh.closest_point(&Point3::new(0.25, 0.25, 2.0)).unwrap();
    assert!((sp.position - Point3::new(0.25, 0.25, 0.0)).norm() < 1e-12);
    assert!((sp.distance - 2.0).abs() < 1e-12);
}

#[test]
fn closest_point_at_vertex_has_unit_barycentric() {
    let mesh = unit_triangle();
    let sp = mesh.closest_point(&Point3::new(1.0, 0.0, 0.0)).unwrap();
    assert!(sp.distance < 1e-12);
    let max = sp.barycentric.iter().cloned().fold(f64::MIN, f64::max);
    assert!((max - 1.0).abs() < 1e-12);
}

#[test]
fn closest_point_on_empty_mesh_is_error() {
    let mesh = TriangleMesh::new(vec![], vec![]).unwrap();
    assert!(mesh.closest_point(&Point3::origin()).is_err());
}

#[test]
fn bvh_matches_brute_force_on_three_meshes() {
    let meshes = vec![
        synth::ellipsoid(10, [10.0, 8.0, 6.0]).unwrap(),
        synth::plate_with_bump(9, 30.0, 6.0, 5.0).unwrap(),
        synth::thin_cylinder(6, 2.0, 30.0).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    for mesh in &meshes {
        for _ in 0..120 {
            let q = Point3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-25.0..25.0),
            );
            let fast = mesh.closest_point(&q).unwrap();
            let brute = brute_force_closest(mesh, &q);
            assert!(
                (fast.distance - brute.distance).abs() < 1e-9,
                "distance mismatch: {} vs {}",
                fast.distance,
                brute.distance
            );
            assert_eq!(fast.triangle, brute.triangle);
        }
    }
}

#[test]
fn closest_point_distance_bounded_by_vertices() {
    let mesh = synth::ellipsoid(8, [10.0, 10.0, 10.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let q = Point3::new(
            rng.random_range(-15.0..15.0),
            rng.random_range(-15.0..15.0),
            rng.random_range(-15.0..15.0),
        );
        let sp = mesh.closest_point(&q).unwrap();
        for v in mesh.vertices() {
            assert!(sp.distance <= (q - v).norm() + 1e-12);
        }
    }
}

#[test]
fn closest_point_is_idempotent() {
    let mesh = synth::ellipsoid(8, [10.0, 7.0, 5.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let q = Point3::new(
            rng.random_range(-12.0..12.0),
            rng.random_range(-12.0..12.0),
            rng.random_range(-12.0..12.0),
        );
        let sp = mesh.closest_point(&q).unwrap();
        let again = mesh.closest_point(&sp.position).unwrap();
        assert!(again.distance <= 1e-9, "distance {}", again.distance);
    }
}

#[test]
fn surface_point_position_is_barycentric_combination() {
    let mesh = synth::ellipsoid(8, [9.0, 8.0, 7.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let q = Point3::new(
            rng.random_range(-12.0..12.0),
            rng.random_range(-12.0..12.0),
            rng.random_range(-12.0..12.0),
        );
        let sp = mesh.closest_point(&q).unwrap();
        let [a, b, c] = mesh.triangle_vertices(sp.triangle);
        let combo = a.coords * sp.barycentric[0]
            + b.coords * sp.barycentric[1]
            + c.coords * sp.barycentric[2];
        assert!((combo - sp.position.coords).norm() < 1e-9);
        let sum: f64 = sp.barycentric.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        assert!(sp.barycentric.iter().all(|&w| (-1e-9..=1.0 + 1e-9).contains(&w)));
    }
}

#[test]
fn degenerate_triangles_participate_as_segments() {
    // Second triangle is a sliver collapsed onto a segment at z = 1.
    let mesh = TriangleMesh::new(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 1.0),
            Point3::new(1.0, 0.0, 1.0),
            Point3::new(0.5, 0.0, 1.0),
        ],
        vec![[0, 1, 2], [3, 4, 5]],
    )
    .unwrap();
    let sp = mesh.closest_point(&Point3::new(0.5, 0.0, 1.1)).unwrap();
    assert_eq!(sp.triangle, 1);
    assert!((sp.distance - 0.1).abs() < 1e-12);
}

// --- normals ----------------------------------------------------------------

#[test]
fn flat_square_normals_point_up() {
    let normals = flat_square().vertex_normals().unwrap();
    for n in normals.normals() {
        assert!((n - Vector3::z()).norm() < 1e-12);
    }
}

#[test]
fn sphere_normals_are_radial() {
    let mesh = synth::ellipsoid(16, [10.0, 10.0, 10.0]).unwrap();
    let normals = mesh.vertex_normals().unwrap();
    let max_angle = 5.0_f64.to_radians();
    for (v, n) in mesh.vertices().iter().zip(normals.normals()) {
        let radial = v.coords.normalize();
        let angle = n.dot(&radial).clamp(-1.0, 1.0).acos();
        assert!(angle < max_angle, "normal deviates by {angle} rad");
    }
}

#[test]
fn isolated_vertex_is_reported() {
    let mesh = TriangleMesh::new(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(5.0, 5.0, 5.0),
        ],
        vec![[0, 1, 2]],
    )
    .unwrap();
    let err = mesh.vertex_normals().unwrap_err();
    assert!(err.to_string().contains('3'), "error should list vertex 3: {err}");
}

#[test]
fn degenerate_triangles_do_not_pollute_normals() {
    // Sliver triangle (0, 1, 4) has zero area; vertex 4 also belongs to a
    // proper triangle so normals stay well defined.
    let mesh = TriangleMesh::new(
        vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(1.0, 1.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
            Point3::new(0.5, 0.0, 0.0),
        ],
        vec![[0, 1, 2], [0, 2, 3], [0, 1, 4], [0, 4, 3]],
    )
    .unwrap();
    let normals = mesh.vertex_normals().unwrap();
    for n in normals.normals() {
        assert!((n.norm() - 1.0).abs() < 1e-9);
        assert!((n - Vector3::z()).norm() < 1e-9);
    }
}

// --- boundary ---------------------------------------------------------------

#[test]
fn watertight_mesh_has_no_boundary() {
    let mesh = synth::ellipsoid(12, [10.0, 9.0, 8.0]).unwrap();
    assert!(mesh.boundary_vertices().is_empty());
}

#[test]
fn single_triangle_boundary_is_all_vertices() {
    let mesh = unit_triangle();
    let boundary = mesh.boundary_vertices();
    assert_eq!(boundary.len(), 3);
}

#[test]
fn grid_boundary_is_the_perimeter() {
    // 5x5 vertex grid: 16 perimeter vertices.
    let mesh = synth::plate_with_bump(5, 4.0, 0.0, 1.0).unwrap();
    let boundary = mesh.boundary_vertices();
    assert_eq!(boundary.len(), 16);
    let expected: HashSet<u32> = (0..25u32)
        .filter(|i| {
            let (x, y) = (i % 5, i / 5);
            x == 0 || x == 4 || y == 0 || y == 4
        })
        .collect();
    assert_eq!(*boundary, expected);
}

#[test]
fn boundary_touch_classification() {
    let mesh = unit_triangle();
    // Everything on a lone triangle is boundary except strict interior points.
    let edge = mesh.closest_point(&Point3::new(0.5, -1.0, 0.0)).unwrap();
    assert!(edge.touches_boundary(&mesh));
    let interior = mesh.closest_point(&Point3::new(0.25, 0.25, 1.0)).unwrap();
    assert!(!interior.touches_boundary(&mesh));

    let closed = synth::ellipsoid(8, [5.0, 5.0, 5.0]).unwrap();
    let sp = closed.closest_point(&Point3::new(10.0, 0.0, 0.0)).unwrap();
    assert!(!sp.touches_boundary(&closed));
}

// --- tangent frames ---------------------------------------------------------

#[test]
fn tangent_frame_of_z_axis() {
    let n = Vector3::z();
    let (v1, v2) = tangent_frame(&n).unwrap();
    assert!(v1.dot(&n).abs() < 1e-12);
    assert!(v2.dot(&n).abs() < 1e-12);
    assert!(v1.dot(&v2).abs() < 1e-12);
    assert!((v1.norm() - 1.0).abs() < 1e-12);
    assert!((v2.norm() - 1.0).abs() < 1e-12);
}

#[test]
fn tangent_frame_rejects_zero_normal() {
    assert!(tangent_frame(&Vector3::zeros()).is_err());
}

#[test]
fn tangent_frame_valid_for_opposite_normals() {
    for n in [Vector3::new(0.3, -0.5, 0.81), Vector3::new(-0.3, 0.5, -0.81)] {
        let n = n.normalize();
        let (v1, v2) = tangent_frame(&n).unwrap();
        let gram = Matrix3::from_columns(&[n, v1, v2]);
        let identity_err = (gram.transpose() * gram - Matrix3::identity()).norm();
        assert!(identity_err < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tangent_frame_is_orthonormal_and_right_handed(
        x in -1.0f64..1.0, y in -1.0f64..1.0, z in -1.0f64..1.0
    ) {
        let v = Vector3::new(x, y, z);
        prop_assume!(v.norm() > 1e-3);
        let n = v.normalize();
        let (v1, v2) = tangent_frame(&n).unwrap();
        let gram = Matrix3::from_columns(&[n, v1, v2]);
        prop_assert!((gram.transpose() * gram - Matrix3::identity()).norm() < 1e-12);
        prop_assert!((v1.cross(&v2) - n).norm() < 1e-9);
    }

    #[test]
    fn closest_point_barycentrics_always_valid(
        x in -3.0f64..3.0, y in -3.0f64..3.0, z in -3.0f64..3.0
    ) {
        let mesh = flat_square();
        let sp = mesh.closest_point(&Point3::new(x, y, z)).unwrap();
        let sum: f64 = sp.barycentric.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(sp.barycentric.iter().all(|&w| (-1e-9..=1.0 + 1e-9).contains(&w)));
        let brute = brute_force_closest(&mesh, &Point3::new(x, y, z));
        prop_assert!((sp.distance - brute.distance).abs() < 1e-9);
    }
}

// --- I/O --------------------------------------------------------------------

#[test]
fn parses_minimal_ascii_ply() {
    let dir = std::env::temp_dir().join("morphfit-io-min");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("tri.ply");
    std::fs::write(
        &path,
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n\
         property float z\nelement face 1\nproperty list uchar int vertex_indices\n\
         end_header\n0 0 0\n1 0 0\n0 1 0\n3 0 1 2\n",
    )
    .unwrap();
    let loaded = load_mesh(&path, MeshFormat::PlyAscii).unwrap();
    assert_eq!(loaded.mesh.vertex_count(), 3);
    assert_eq!(loaded.mesh.triangle_count(), 1);
    assert!(loaded.quality.is_none());
}

#[test]
fn obj_with_out_of_range_index_is_validation_error() {
    let dir = std::env::temp_dir().join("morphfit-io-oob");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("bad.obj");
    std::fs::write(&path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 6\n").unwrap();
    let err = load_mesh(&path, MeshFormat::Obj).unwrap_err();
    assert!(matches!(err, crate::Error::Validation(_)), "{err}");
}

#[test]
fn ply_parse_error_names_byte_offset() {
    let dir = std::env::temp_dir().join("morphfit-io-offset");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("broken.ply");
    let content = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\n\
                   property float y\nproperty float z\nend_header\n0 0 oops\n";
    std::fs::write(&path, content).unwrap();
    let err = load_mesh(&path, MeshFormat::PlyAscii).unwrap_err();
    match err {
        crate::Error::Format { offset, .. } => {
            assert_eq!(offset, content.find("0 0 oops").unwrap());
        }
        other => panic!("expected format error, got {other}"),
    }
}

#[test]
fn round_trips_preserve_geometry() {
    let dir = std::env::temp_dir().join("morphfit-io-rt");
    std::fs::create_dir_all(&dir).unwrap();
    let mesh = synth::ellipsoid(8, [2.0, 1.5, 1.0]).unwrap();

    for (name, format) in [
        ("m.ply", MeshFormat::PlyAscii),
        ("m2.ply", MeshFormat::PlyBinaryLe),
        ("m.obj", MeshFormat::Obj),
    ] {
        let path = dir.join(name);
        save_mesh(&mesh, &path, format, None).unwrap();
        let loaded = load_mesh(&path, format).unwrap();
        assert_eq!(loaded.mesh.triangles(), mesh.triangles());
        for (a, b) in loaded.mesh.vertices().iter().zip(mesh.vertices()) {
            assert!((a - b).norm() < 1e-6, "round-trip moved a vertex");
        }
    }
}

#[test]
fn quality_field_round_trips_losslessly() {
    let dir = std::env::temp_dir().join("morphfit-io-quality");
    std::fs::create_dir_all(&dir).unwrap();
    let mesh = synth::plate_with_bump(19, 4.0, 1.0, 1.0).unwrap();
    assert!(mesh.vertex_count() >= 300);
    // f32-representable values survive the float32 property exactly.
    let field: Vec<f64> = (0..mesh.vertex_count()).map(|i| (i as f32 * 0.25) as f64).collect();

    for (name, format) in [
        ("q.ply", MeshFormat::PlyAscii),
        ("qb.ply", MeshFormat::PlyBinaryLe),
    ] {
        let path = dir.join(name);
        save_mesh(&mesh, &path, format, Some(&field)).unwrap();
        let loaded = load_mesh(&path, format).unwrap();
        let restored = loaded.quality.expect("quality present");
        assert_eq!(restored, field);
    }

    // Zero field reads back as zeros; omitting it yields no property.
    let zero = vec![0.0; mesh.vertex_count()];
    let path = dir.join("zero.ply");
    save_mesh(&mesh, &path, MeshFormat::PlyAscii, Some(&zero)).unwrap();
    assert_eq!(load_mesh(&path, MeshFormat::PlyAscii).unwrap().quality.unwrap(), zero);
    let path = dir.join("nofield.ply");
    save_mesh(&mesh, &path, MeshFormat::PlyAscii, None).unwrap();
    assert!(load_mesh(&path, MeshFormat::PlyAscii).unwrap().quality.is_none());
}

#[test]
fn save_rejects_mismatched_field() {
    let dir = std::env::temp_dir().join("morphfit-io-badfield");
    std::fs::create_dir_all(&dir).unwrap();
    let mesh = unit_triangle();
    let err = save_mesh(&mesh, &dir.join("x.ply"), MeshFormat::PlyAscii, Some(&[1.0])).unwrap_err();
    assert!(matches!(err, crate::Error::Validation(_)));
}

#[test]
fn unwritable_path_is_io_error() {
    let mesh = unit_triangle();
    let err = save_mesh(
        &mesh,
        std::path::Path::new("/nonexistent-dir/x.ply"),
        MeshFormat::PlyAscii,
        None,
    )
    .unwrap_err();
    assert!(matches!(err, crate::Error::Io { .. }));
}
