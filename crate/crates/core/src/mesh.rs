//! Indexed triangle meshes and the file readers that produce them.
//!
//! A [`TriangleMesh`] caches the per-triangle unit normal and area and flags
//! every vertex that lies on an edge used by exactly one triangle. Triangles
//! whose area falls below [`DEGENERATE_AREA`] are flagged as degenerate: they
//! still occlude rays but carry no reliable normal, so curvature and
//! diffraction sampling skip them.

use std::collections::HashMap;
use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use nalgebra::Vector3;
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Triangles with an area below this (m²) are treated as degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("parse error in {path}: {reason}")]
    Parse { path: String, reason: String },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("triangle {triangle} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        count: usize,
    },
    #[error("triangle {triangle} repeats vertex {index}")]
    RepeatedVertex { triangle: usize, index: u32 },
    #[error("vertex {0} is not finite")]
    NonFinite(usize),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Supported mesh file formats.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    BinaryStl,
}

impl MeshFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "obj" => Some(Self::Obj),
            "stl" => Some(Self::BinaryStl),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    normals: Vec<Vec3>,
    areas: Vec<f64>,
    boundary: Vec<bool>,
}

impl TriangleMesh {
    /// Build a mesh from raw vertex and index buffers, validating indices and
    /// deriving normals (counter-clockwise winding), areas and boundary flags.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        if triangles.is_empty() {
            return Err(MeshError::EmptyMesh);
        }
        if let Some(i) = vertices.iter().position(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(MeshError::NonFinite(i));
        }
        let count = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            for &index in tri {
                if index as usize >= count {
                    return Err(MeshError::IndexOutOfRange {
                        triangle: t,
                        index,
                        count,
                    });
                }
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                let index = if tri[0] == tri[1] || tri[0] == tri[2] {
                    tri[0]
                } else {
                    tri[1]
                };
                return Err(MeshError::RepeatedVertex { triangle: t, index });
            }
        }

        let mut mesh = TriangleMesh {
            vertices,
            triangles,
            normals: Vec::new(),
            areas: Vec::new(),
            boundary: Vec::new(),
        };
        mesh.recompute_normals_and_areas();
        mesh.boundary = boundary_flags(mesh.vertices.len(), &mesh.triangles);
        Ok(mesh)
    }

    fn recompute_normals_and_areas(&mut self) {
        let (normals, areas) = self
            .triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| self.vertices[i as usize]);
                normal_and_area(&a, &b, &c)
            })
            .unzip();
        self.normals = normals;
        self.areas = areas;
    }

    /// A copy of this mesh with every vertex mapped through `f`. Connectivity
    /// (and therefore boundary flags) is shared; normals and areas are
    /// recomputed in the new space.
    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> TriangleMesh {
        let mut out = TriangleMesh {
            vertices: self.vertices.iter().map(f).collect(),
            triangles: self.triangles.clone(),
            normals: Vec::new(),
            areas: Vec::new(),
            boundary: self.boundary.clone(),
        };
        out.recompute_normals_and_areas();
        out
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Vec3] {
        &self.normals
    }

    pub fn areas(&self) -> &[f64] {
        &self.areas
    }

    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_degenerate(&self, triangle: usize) -> bool {
        self.areas[triangle] < DEGENERATE_AREA
    }

    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }

    /// Corner positions of triangle `t`.
    pub fn corners(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn centroid(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.corners(t);
        (a + b + c) / 3.0
    }

    /// Axis-aligned bounds `(min, max)` of all vertices.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }
}

/// Unit normal (from winding order) and area of a triangle. Degenerate
/// triangles get `+Z` so the unit-norm invariant holds everywhere.
pub fn normal_and_area(a: &Vec3, b: &Vec3, c: &Vec3) -> (Vec3, f64) {
    let cross = (b - a).cross(&(c - a));
    let norm = cross.norm();
    let area = 0.5 * norm;
    if norm > 0.0 && area >= DEGENERATE_AREA {
        (cross / norm, area)
    } else {
        (Vec3::z(), area)
    }
}

fn boundary_flags(vertex_count: usize, triangles: &[[u32; 3]]) -> Vec<bool> {
    let mut edges: HashMap<(u32, u32), u32> = HashMap::with_capacity(triangles.len() * 3);
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    let mut flags = vec![false; vertex_count];
    for (&(a, b), &n) in &edges {
        if n == 1 {
            flags[a as usize] = true;
            flags[b as usize] = true;
        }
    }
    flags
}

/// Read a mesh file in the given format.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh, MeshError> {
    match format {
        MeshFormat::Obj => load_obj(path),
        MeshFormat::BinaryStl => load_stl(path),
    }
}

fn parse_err(path: &Path, reason: impl ToString) -> MeshError {
    MeshError::Parse {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

fn load_obj(path: &Path) -> Result<TriangleMesh, MeshError> {
    let options = tobj::LoadOptions {
        triangulate: true,
        single_index: false,
        ignore_points: true,
        ignore_lines: true,
    };
    let (models, _) = tobj::load_obj(path, &options).map_err(|e| match e {
        tobj::LoadError::OpenFileFailed => MeshError::Io {
            path: path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "cannot open file"),
        },
        other => parse_err(path, other),
    })?;

    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for model in models {
        let m = model.mesh;
        if m.positions.len() % 3 != 0 || m.indices.len() % 3 != 0 {
            return Err(parse_err(path, "ragged position or index buffer"));
        }
        let base = vertices.len() as u32;
        vertices.extend(
            m.positions
                .chunks_exact(3)
                .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64)),
        );
        triangles.extend(
            m.indices
                .chunks_exact(3)
                .map(|t| [t[0] + base, t[1] + base, t[2] + base]),
        );
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| match e {
        MeshError::EmptyMesh => MeshError::EmptyMesh,
        other => parse_err(path, other),
    })
}

fn load_stl(path: &Path) -> Result<TriangleMesh, MeshError> {
    let file = File::open(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let indexed = stl_io::read_stl(&mut BufReader::new(file)).map_err(|e| parse_err(path, e))?;
    let vertices = indexed
        .vertices
        .iter()
        .map(|v| Vec3::new(v[0] as f64, v[1] as f64, v[2] as f64))
        .collect();
    let triangles = indexed
        .faces
        .iter()
        .map(|f| f.vertices.map(|i| i as u32))
        .collect();
    TriangleMesh::new(vertices, triangles).map_err(|e| match e {
        MeshError::EmptyMesh => MeshError::EmptyMesh,
        other => parse_err(path, other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shapes;
    use std::io::Write;

    #[test]
    fn right_triangle_area_and_normal() {
        let mesh = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert_eq!(mesh.areas()[0], 0.5);
        assert_eq!(mesh.normals()[0], Vec3::z());
        assert!(mesh.boundary().iter().all(|&b| b));
    }

    #[test]
    fn unit_cube_is_closed() {
        let cube = shapes::cuboid(Vec3::repeat(1.0));
        assert_eq!(cube.triangle_count(), 12);
        assert!(cube.boundary().iter().all(|&b| !b));
        assert!((cube.total_area() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn icosphere_area_close_to_sphere() {
        let sphere = shapes::icosphere(1.0, 3);
        assert_eq!(sphere.triangle_count(), 1280);
        let exact = 4.0 * std::f64::consts::PI;
        assert!((sphere.total_area() - exact).abs() / exact < 0.01);
    }

    #[test]
    fn rejects_bad_indices() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 3]]),
            Err(MeshError::IndexOutOfRange { .. })
        ));
        assert!(matches!(
            TriangleMesh::new(v.clone(), vec![[0, 1, 1]]),
            Err(MeshError::RepeatedVertex { .. })
        ));
        assert!(matches!(
            TriangleMesh::new(v, vec![]),
            Err(MeshError::EmptyMesh)
        ));
    }

    #[test]
    fn degenerate_triangle_flagged_with_unit_normal() {
        let mesh = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0],
            vec![[0, 1, 2]],
        )
        .unwrap();
        assert!(mesh.is_degenerate(0));
        assert!((mesh.normals()[0].norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn reads_obj_with_quads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("quad.obj");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4").unwrap();
        drop(f);
        let mesh = load_mesh(&path, MeshFormat::Obj).unwrap();
        assert_eq!(mesh.triangle_count(), 2);
        assert!((mesh.total_area() - 1.0).abs() < 1e-12);
        assert!(mesh.normals().iter().all(|n| (n - Vec3::z()).norm() < 1e-12));
    }

    #[test]
    fn obj_without_faces_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("points.obj");
        std::fs::write(&path, "v 0 0 0\nv 1 0 0\n").unwrap();
        assert!(matches!(
            load_mesh(&path, MeshFormat::Obj),
            Err(MeshError::EmptyMesh)
        ));
    }

    #[test]
    fn reads_binary_stl_and_welds_vertices() {
        let cube = shapes::cuboid(Vec3::repeat(2.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.stl");
        let mut bytes = vec![0u8; 80];
        bytes.extend_from_slice(&(cube.triangle_count() as u32).to_le_bytes());
        for t in 0..cube.triangle_count() {
            for c in cube.normals()[t].iter() {
                bytes.extend_from_slice(&(*c as f32).to_le_bytes());
            }
            for v in cube.corners(t) {
                for c in v.iter() {
                    bytes.extend_from_slice(&(*c as f32).to_le_bytes());
                }
            }
            bytes.extend_from_slice(&[0, 0]);
        }
        std::fs::write(&path, bytes).unwrap();
        let mesh = load_mesh(&path, MeshFormat::BinaryStl).unwrap();
        assert_eq!(mesh.triangle_count(), 12);
        assert_eq!(mesh.vertex_count(), 8);
        assert!(mesh.boundary().iter().all(|&b| !b));
        assert!((mesh.total_area() - 24.0).abs() < 1e-9);
    }

    #[test]
    fn truncated_stl_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.stl");
        let mut bytes = vec![0u8; 80];
        bytes.extend_from_slice(&5u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_mesh(&path, MeshFormat::BinaryStl),
            Err(MeshError::Parse { .. })
        ));
    }
}
