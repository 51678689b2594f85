pub mod build_model;
pub mod evaluate;
pub mod register;
pub mod synth;

use std::path::Path;

use morphfit::mesh::io::{load_mesh, MeshFormat};
use morphfit::{Result, TriangleMesh};

pub fn load_mesh_auto(path: &Path) -> Result<TriangleMesh> {
    let format = MeshFormat::from_path(path)?;
    Ok(load_mesh(path, format)?.mesh)
}

pub fn parse_point(text: &str) -> Result<nalgebra::Point3<f64>> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        return Err(morphfit::Error::Validation(format!(
            "expected x,y,z coordinates, got {text:?}"
        )));
    }
    let mut coords = [0.0; 3];
    for (c, p) in coords.iter_mut().zip(&parts) {
        *c = p.trim().parse().map_err(|_| {
            morphfit::Error::Validation(format!("invalid coordinate {p:?} in {text:?}"))
        })?;
    }
    Ok(nalgebra::Point3::new(coords[0], coords[1], coords[2]))
}
