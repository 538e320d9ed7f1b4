//! Procedural meshes: plates, boxes, icospheres and domes.
//!
//! All generators produce welded meshes with counter-clockwise winding, so
//! normals of closed shapes point outward and plates face `+Z`.

use std::collections::HashMap;

use crate::mesh::{TriangleMesh, Vec3};

/// A `size_x` × `size_y` plate in the `z = 0` plane, centred on the origin,
/// split into `nx` × `ny` cells of two triangles each. Faces `+Z`.
pub fn plate(size_x: f64, size_y: f64, nx: usize, ny: usize) -> TriangleMesh {
    let (nx, ny) = (nx.max(1), ny.max(1));
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push(Vec3::new(
                size_x * (i as f64 / nx as f64 - 0.5),
                size_y * (j as f64 / ny as f64 - 0.5),
                0.0,
            ));
        }
    }
    let idx = |i: usize, j: usize| (j * (nx + 1) + i) as u32;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            triangles.push([idx(i, j), idx(i + 1, j), idx(i + 1, j + 1)]);
            triangles.push([idx(i, j), idx(i + 1, j + 1), idx(i, j + 1)]);
        }
    }
    TriangleMesh::new(vertices, triangles).expect("plate generator produced invalid mesh")
}

/// Triangle count of [`plate`] without building it.
pub fn plate_triangle_count(nx: usize, ny: usize) -> u64 {
    2 * nx.max(1) as u64 * ny.max(1) as u64
}

/// Axis-aligned box centred on the origin, two triangles per face.
pub fn cuboid(size: Vec3) -> TriangleMesh {
    tessellated_cuboid(size, 1)
}

/// Axis-aligned box centred on the origin with every face split into an
/// `n` × `n` grid. Vertices along the edges are shared between faces.
pub fn tessellated_cuboid(size: Vec3, n: usize) -> TriangleMesh {
    let n = n.max(1);
    let half = size / 2.0;
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut lookup: HashMap<[i64; 3], u32> = HashMap::new();
    let mut triangles = Vec::with_capacity(12 * n * n);

    // (fixed axis, sign): the face's (u, v) axes are chosen so u × v = outward.
    let faces: [(usize, f64); 6] = [(0, 1.0), (0, -1.0), (1, 1.0), (1, -1.0), (2, 1.0), (2, -1.0)];
    for (axis, sign) in faces {
        let (mut u, mut v) = ((axis + 1) % 3, (axis + 2) % 3);
        if sign < 0.0 {
            std::mem::swap(&mut u, &mut v);
        }
        let mut vertex = |i: usize, j: usize| -> u32 {
            // integer lattice key: coordinates in units of 1/n of the half-extent
            let mut key = [0i64; 3];
            key[axis] = if sign > 0.0 { n as i64 } else { -(n as i64) };
            key[u] = 2 * i as i64 - n as i64;
            key[v] = 2 * j as i64 - n as i64;
            *lookup.entry(key).or_insert_with(|| {
                let p = Vec3::new(
                    half.x * key[0] as f64 / n as f64,
                    half.y * key[1] as f64 / n as f64,
                    half.z * key[2] as f64 / n as f64,
                );
                vertices.push(p);
                (vertices.len() - 1) as u32
            })
        };
        // lattice step is 2 in key units, so remap 0..=n grid
        for j in 0..n {
            for i in 0..n {
                let a = vertex(i, j);
                let b = vertex(i + 1, j);
                let c = vertex(i + 1, j + 1);
                let d = vertex(i, j + 1);
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            }
        }
    }
    TriangleMesh::new(vertices, triangles).expect("cuboid generator produced invalid mesh")
}

/// Geodesic sphere: an icosahedron subdivided `subdivisions` times and
/// projected onto a sphere of the given radius. `20 · 4^s` triangles.
pub fn icosphere(radius: f64, subdivisions: u32) -> TriangleMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|p| Vec3::new(p[0], p[1], p[2]).normalize())
    .collect();
    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(u32, u32), u32> = HashMap::new();
        let mut mid = |a: u32, b: u32, vertices: &mut Vec<Vec3>| -> u32 {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let m = (vertices[a as usize] + vertices[b as usize]).normalize();
                vertices.push(m);
                (vertices.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for [a, b, c] in triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        triangles = next;
    }
    for v in &mut vertices {
        *v *= radius;
    }
    TriangleMesh::new(vertices, triangles).expect("icosphere generator produced invalid mesh")
}

/// Open hemispherical dome of the given radius resting on `z = 0` with its
/// apex at `+Z`. `rings` latitude bands, `segments` longitude slices.
pub fn dome(radius: f64, rings: usize, segments: usize) -> TriangleMesh {
    let (rings, segments) = (rings.max(1), segments.max(3));
    let mut vertices = vec![Vec3::new(0.0, 0.0, radius)];
    for r in 1..=rings {
        let colat = std::f64::consts::FRAC_PI_2 * r as f64 / rings as f64;
        for s in 0..segments {
            let lon = std::f64::consts::TAU * s as f64 / segments as f64;
            vertices.push(radius * Vec3::new(colat.sin() * lon.cos(), colat.sin() * lon.sin(), colat.cos()));
        }
    }
    let ring = |r: usize, s: usize| (1 + (r - 1) * segments + s % segments) as u32;
    let mut triangles = Vec::new();
    for s in 0..segments {
        triangles.push([0, ring(1, s), ring(1, s + 1)]);
    }
    for r in 1..rings {
        for s in 0..segments {
            let (a, b) = (ring(r, s), ring(r, s + 1));
            let (c, d) = (ring(r + 1, s), ring(r + 1, s + 1));
            triangles.push([a, c, d]);
            triangles.push([a, d, b]);
        }
    }
    TriangleMesh::new(vertices, triangles).expect("dome generator produced invalid mesh")
}
