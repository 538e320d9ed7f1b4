//! Offline geometric analysis: discrete mean curvature, the per-triangle
//! curvature metric and the per-bin BRDF parameters derived from it.
//!
//! Mean curvature uses the cotangent discretisation of the Laplace–Beltrami
//! operator with mixed Voronoi areas: for a vertex `v` with one-ring
//! neighbours `u`,
//!
//! ```text
//! K_v = 1 / (2·A_mixed) · Σ (cot α_vu + cot β_vu) (x_v − x_u)
//! G_v = ½ ‖K_v‖
//! ```
//!
//! where `α`, `β` are the angles opposite edge `vu`. Obtuse triangles
//! contribute `area/2` (obtuse at `v`) or `area/4` (obtuse elsewhere) to
//! `A_mixed` instead of their Voronoi share. Vertices on an open boundary use
//! whatever partial ring they have.
//!
//! The curvature metric of triangle `i` is the range of `G_v` over its
//! corners, weighted by `w(A) = min(A / A_ref, 1)` and a material scale `η`.
//! It vanishes on planes and on smoothly curved regions and responds to
//! creases and boundaries.

use std::io::{self, Read, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::mesh::{TriangleMesh, Vec3};
use crate::scene::{MaterialSpec, Scene};

/// Magic prefix of the curvature cache file.
pub const CACHE_MAGIC: [u8; 4] = *b"STCV";
pub const CACHE_VERSION: u32 = 1;
pub const CACHE_HEADER_BYTES: usize = 128;
/// Number of f64 slots before the per-bin (β, k) pairs in a cache record.
pub const CACHE_RECORD_SCALARS: usize = 12;

#[derive(Debug, Error)]
pub enum PreprocError {
    #[error("footprint of {triangles} triangles × {bins} bins overflows u64")]
    FootprintOverflow { triangles: u64, bins: u64 },
    #[error("footprint needs at least one frequency bin")]
    NoBins,
    #[error("curvature cache: {0}")]
    BadCache(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Per-vertex mean curvature magnitude of one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexCurvature {
    /// `G_v` in 1/m.
    pub values: Vec<f64>,
    /// Vertices that belong to no usable triangle; their value is 0.
    pub isolated: Vec<u32>,
}

fn cot(a: &Vec3, b: &Vec3) -> f64 {
    a.dot(b) / a.cross(b).norm()
}

/// Vertex → incident triangles, in triangle order (CSR layout).
fn vertex_triangles(mesh: &TriangleMesh) -> (Vec<usize>, Vec<u32>) {
    let n = mesh.vertex_count();
    let mut offsets = vec![0usize; n + 1];
    for t in mesh.triangles() {
        for &v in t {
            offsets[v as usize + 1] += 1;
        }
    }
    for i in 0..n {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut incident = vec![0u32; offsets[n]];
    for (ti, t) in mesh.triangles().iter().enumerate() {
        for &v in t {
            incident[cursor[v as usize]] = ti as u32;
            cursor[v as usize] += 1;
        }
    }
    (offsets, incident)
}

/// `G_v = ½‖K_v‖` for every vertex. Degenerate triangles are ignored.
pub fn vertex_mean_curvature(mesh: &TriangleMesh) -> VertexCurvature {
    let (offsets, incident) = vertex_triangles(mesh);
    let verts = mesh.vertices();
    let tris = mesh.triangles();

    let values: Vec<Option<f64>> = (0..mesh.vertex_count())
        .into_par_iter()
        .map(|v| {
            let mut sum = Vec3::zeros();
            let mut area = 0.0;
            for &t in &incident[offsets[v]..offsets[v + 1]] {
                let t = t as usize;
                if mesh.is_degenerate(t) {
                    continue;
                }
                let tri = tris[t];
                let corner = tri.iter().position(|&x| x as usize == v).unwrap();
                let p = verts[v];
                let q = verts[tri[(corner + 1) % 3] as usize];
                let r = verts[tri[(corner + 2) % 3] as usize];
                // cotangents of the angles at q and r
                let cot_q = cot(&(p - q), &(r - q));
                let cot_r = cot(&(p - r), &(q - r));
                sum += cot_r * (p - q) + cot_q * (p - r);

                let tri_area = mesh.areas()[t];
                let obtuse_p = (q - p).dot(&(r - p)) < 0.0;
                let obtuse_other = (p - q).dot(&(r - q)) < 0.0 || (p - r).dot(&(q - r)) < 0.0;
                area += if obtuse_p {
                    tri_area / 2.0
                } else if obtuse_other {
                    tri_area / 4.0
                } else {
                    ((p - q).norm_squared() * cot_r + (p - r).norm_squared() * cot_q) / 8.0
                };
            }
            if area > 0.0 {
                Some(0.5 * (sum / (2.0 * area)).norm())
            } else {
                None
            }
        })
        .collect();

    let isolated: Vec<u32> = values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(i, _)| i as u32)
        .collect();
    if !isolated.is_empty() {
        log::warn!("{} vertices belong to no usable triangle; curvature set to 0", isolated.len());
    }
    VertexCurvature {
        values: values.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        isolated,
    }
}

/// Median area of the non-degenerate triangles, or 0 when there are none.
pub fn median_area(mesh: &TriangleMesh) -> f64 {
    let mut a: Vec<f64> = (0..mesh.triangle_count())
        .filter(|&t| !mesh.is_degenerate(t))
        .map(|t| mesh.areas()[t])
        .collect();
    if a.is_empty() {
        return 0.0;
    }
    a.sort_by(f64::total_cmp);
    let n = a.len();
    if n % 2 == 1 {
        a[n / 2]
    } else {
        0.5 * (a[n / 2 - 1] + a[n / 2])
    }
}

/// Piecewise-linear area weight `min(A / A_ref, 1)`.
pub fn area_weight(area: f64, area_ref: f64) -> f64 {
    if area_ref <= 0.0 {
        return 1.0;
    }
    (area / area_ref).min(1.0)
}

/// Per-triangle curvature variation and metric for one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleMetric {
    /// `max G_v − min G_v` over the corners, 1/m.
    pub variation: Vec<f64>,
    /// `η · w(A) · variation`.
    pub metric: Vec<f64>,
    /// The `A_ref` that was used.
    pub area_ref: f64,
}

pub fn triangle_curvature_metric(mesh: &TriangleMesh, curvature: &[f64], material: &MaterialSpec) -> TriangleMetric {
    let area_ref = material.area_ref.unwrap_or_else(|| median_area(mesh));
    let (variation, metric) = (0..mesh.triangle_count())
        .into_par_iter()
        .map(|t| {
            if mesh.is_degenerate(t) {
                return (0.0, 0.0);
            }
            let g = mesh.triangles()[t].map(|v| curvature[v as usize]);
            let hi = g[0].max(g[1]).max(g[2]);
            let lo = g[0].min(g[1]).min(g[2]);
            let range = hi - lo;
            (range, material.eta * area_weight(mesh.areas()[t], area_ref) * range)
        })
        .unzip();
    TriangleMetric {
        variation,
        metric,
        area_ref,
    }
}

/// `(β, k)` for one bin: a linear blend from the smooth to the edge
/// endpoints, saturating at `C = c_sat`.
pub fn map_brdf(metric: f64, material: &MaterialSpec, bin: usize) -> (f64, f64) {
    let t = (metric / material.c_sat).clamp(0.0, 1.0);
    if t == 0.0 {
        return (material.beta_smooth[bin], material.k_smooth[bin]);
    }
    if t == 1.0 {
        return (material.beta_edge[bin], material.k_edge[bin]);
    }
    let beta = (1.0 - t) * material.beta_smooth[bin] + t * material.beta_edge[bin];
    let k = (1.0 - t) * material.k_smooth[bin] + t * material.k_edge[bin];
    (beta, k)
}

/// Bytes needed to hold the preprocessing output: `128 + 8·T·(12 + F)`.
pub fn estimate_footprint(triangles: u64, bins: u64) -> Result<u64, PreprocError> {
    if bins == 0 {
        return Err(PreprocError::NoBins);
    }
    let overflow = || PreprocError::FootprintOverflow { triangles, bins };
    bins.checked_add(12)
        .and_then(|x| x.checked_mul(triangles))
        .and_then(|x| x.checked_mul(8))
        .and_then(|x| x.checked_add(128))
        .ok_or_else(overflow)
}

/// Curvature, metric and BRDF parameters for every world triangle of a
/// scene, indexed by global triangle id.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureTable {
    bins: usize,
    /// `G_v` per instance, indexed by the instance's vertex ids.
    pub vertex_curvature: Vec<Vec<f64>>,
    pub variation: Vec<f64>,
    pub metric: Vec<f64>,
    /// Row-major `[triangle][bin]`.
    beta: Vec<f64>,
    k: Vec<f64>,
}

impl CurvatureTable {
    pub fn compute(scene: &Scene) -> CurvatureTable {
        let bins = scene.bins();
        let mut table = CurvatureTable {
            bins,
            vertex_curvature: Vec::with_capacity(scene.instances().len()),
            variation: Vec::with_capacity(scene.triangle_count()),
            metric: Vec::with_capacity(scene.triangle_count()),
            beta: Vec::with_capacity(scene.triangle_count() * bins),
            k: Vec::with_capacity(scene.triangle_count() * bins),
        };
        for inst in scene.instances() {
            let material = &scene.materials()[inst.material];
            let g = vertex_mean_curvature(&inst.world);
            let m = triangle_curvature_metric(&inst.world, &g.values, material);
            let brdf: Vec<(f64, f64)> = m
                .metric
                .par_iter()
                .flat_map_iter(|&c| (0..bins).map(move |b| map_brdf(c, material, b)))
                .collect();
            table.vertex_curvature.push(g.values);
            table.variation.extend_from_slice(&m.variation);
            table.metric.extend_from_slice(&m.metric);
            for (b, k) in brdf {
                table.beta.push(b);
                table.k.push(k);
            }
        }
        table
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn triangle_count(&self) -> usize {
        self.metric.len()
    }

    /// Whether this table was computed for a scene with the same geometry
    /// layout (pose changes keep it valid; curvature is rigid-invariant).
    pub fn matches(&self, scene: &Scene) -> bool {
        self.triangle_count() == scene.triangle_count() && self.bins == scene.bins()
    }

    pub fn beta(&self, triangle: u32, bin: usize) -> f64 {
        self.beta[triangle as usize * self.bins + bin]
    }

    pub fn k(&self, triangle: u32, bin: usize) -> f64 {
        self.k[triangle as usize * self.bins + bin]
    }

    pub fn betas(&self, triangle: u32) -> &[f64] {
        let s = triangle as usize * self.bins;
        &self.beta[s..s + self.bins]
    }

    pub fn ks(&self, triangle: u32) -> &[f64] {
        let s = triangle as usize * self.bins;
        &self.k[s..s + self.bins]
    }

    /// Cache records for one instance of the scene the table came from.
    pub fn cache_records(&self, scene: &Scene, instance: usize) -> Vec<CacheRecord> {
        let inst = &scene.instances()[instance];
        let g = &self.vertex_curvature[instance];
        inst.triangle_range()
            .enumerate()
            .map(|(local, global)| {
                let tri = inst.world.triangles()[local];
                let id = global as u32;
                CacheRecord {
                    metric: self.metric[global],
                    variation: self.variation[global],
                    area: inst.world.areas()[local],
                    vertex_curvature: tri.map(|v| g[v as usize]),
                    centroid: inst.world.centroid(local).into(),
                    normal: inst.world.normals()[local].into(),
                    brdf: self
                        .betas(id)
                        .iter()
                        .zip(self.ks(id))
                        .map(|(&b, &k)| (b as f32, k as f32))
                        .collect(),
                }
            })
            .collect()
    }
}

/// One triangle of the curvature cache file.
#[derive(Debug, Clone, PartialEq)]
pub struct CacheRecord {
    pub metric: f64,
    pub variation: f64,
    pub area: f64,
    pub vertex_curvature: [f64; 3],
    pub centroid: [f64; 3],
    pub normal: [f64; 3],
    /// `(β, k)` per bin.
    pub brdf: Vec<(f32, f32)>,
}

/// Write a curvature cache: 128-byte header then `8·(12 + F)` bytes per
/// triangle, all little-endian. Total size equals [`estimate_footprint`].
pub fn write_cache<W: Write>(mut w: W, bins: usize, records: &[CacheRecord]) -> Result<(), PreprocError> {
    let mut header = [0u8; CACHE_HEADER_BYTES];
    header[0..4].copy_from_slice(&CACHE_MAGIC);
    header[4..8].copy_from_slice(&CACHE_VERSION.to_le_bytes());
    header[8..16].copy_from_slice(&(records.len() as u64).to_le_bytes());
    header[16..24].copy_from_slice(&(bins as u64).to_le_bytes());
    w.write_all(&header)?;
    let mut buf = Vec::with_capacity(8 * (CACHE_RECORD_SCALARS + bins));
    for r in records {
        if r.brdf.len() != bins {
            return Err(PreprocError::BadCache(format!(
                "record has {} bins, header says {bins}",
                r.brdf.len()
            )));
        }
        buf.clear();
        let scalars = [r.metric, r.variation, r.area]
            .into_iter()
            .chain(r.vertex_curvature)
            .chain(r.centroid)
            .chain(r.normal);
        for x in scalars {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        for &(b, k) in &r.brdf {
            buf.extend_from_slice(&b.to_le_bytes());
            buf.extend_from_slice(&k.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Read a curvature cache written by [`write_cache`]; returns the bin count
/// and the records.
pub fn read_cache<R: Read>(mut r: R) -> Result<(usize, Vec<CacheRecord>), PreprocError> {
    let mut header = [0u8; CACHE_HEADER_BYTES];
    r.read_exact(&mut header)?;
    if header[0..4] != CACHE_MAGIC {
        return Err(PreprocError::BadCache("bad magic".into()));
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != CACHE_VERSION {
        return Err(PreprocError::BadCache(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let bins = u64::from_le_bytes(header[16..24].try_into().unwrap()) as usize;
    let mut rec = vec![0u8; 8 * (CACHE_RECORD_SCALARS + bins)];
    let mut out = Vec::new();
    for _ in 0..count {
        r.read_exact(&mut rec)?;
        let f = |i: usize| f64::from_le_bytes(rec[8 * i..8 * i + 8].try_into().unwrap());
        let g = |off: usize| f32::from_le_bytes(rec[off..off + 4].try_into().unwrap());
        let base = 8 * CACHE_RECORD_SCALARS;
        out.push(CacheRecord {
            metric: f(0),
            variation: f(1),
            area: f(2),
            vertex_curvature: [f(3), f(4), f(5)],
            centroid: [f(6), f(7), f(8)],
            normal: [f(9), f(10), f(11)],
            brdf: (0..bins).map(|b| (g(base + 8 * b), g(base + 8 * b + 4))).collect(),
        });
    }
    Ok((bins, out))
}
