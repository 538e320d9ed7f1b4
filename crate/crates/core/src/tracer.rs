//! Specular ray tracing.
//!
//! Rays leave each emitter along the representative points of a recursive
//! zonal equal-area partition of the sphere, expressed in the emitter frame
//! (boresight `+Z`) and rotated into the world. Each ray is followed through
//! mirror reflections until it misses, exhausts its bounce budget, or its
//! cumulative path length reaches the emitter's maximum distance.

use std::f64::consts::PI;
use std::io::{self, Write};

use rayon::prelude::*;

use crate::mesh::Vec3;
use crate::scene::{Emitter, Scene};

/// One band of the equal-area partition: regions between two colatitudes.
/// The polar caps are bands holding a single region.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Zone {
    pub colat_top: f64,
    pub colat_bottom: f64,
    pub regions: usize,
}

impl Zone {
    /// Area of one region of this zone on the unit sphere.
    pub fn region_area(&self) -> f64 {
        2.0 * PI * (self.colat_top.cos() - self.colat_bottom.cos()) / self.regions as f64
    }
}

/// Colatitude of a polar cap with the given area on the unit sphere.
fn cap_colatitude(area: f64) -> f64 {
    2.0 * (area / (4.0 * PI)).sqrt().min(1.0).asin()
}

fn cap_area(colat: f64) -> f64 {
    2.0 * PI * (1.0 - colat.cos())
}

/// Zones of the recursive zonal equal-area partition of S² into `n` regions.
pub fn equal_area_zones(n: usize) -> Vec<Zone> {
    match n {
        0 => return Vec::new(),
        1 => {
            return vec![Zone {
                colat_top: 0.0,
                colat_bottom: PI,
                regions: 1,
            }]
        }
        _ => {}
    }
    let region_area = 4.0 * PI / n as f64;
    let polar = cap_colatitude(region_area);
    let mut counts = vec![1usize];
    if n > 2 {
        let ideal_angle = region_area.sqrt();
        let collars = (((PI - 2.0 * polar) / ideal_angle).round() as usize).max(1);
        let fitting = (PI - 2.0 * polar) / collars as f64;
        let mut discrepancy = 0.0;
        for i in 0..collars {
            let top = polar + i as f64 * fitting;
            let ideal = (cap_area(top + fitting) - cap_area(top)) / region_area;
            let rounded = (ideal + discrepancy).round();
            discrepancy += ideal - rounded;
            counts.push(rounded as usize);
        }
    }
    counts.push(1);

    let mut zones = Vec::with_capacity(counts.len());
    let mut cumulative = 0usize;
    let mut top = 0.0;
    for (i, &c) in counts.iter().enumerate() {
        cumulative += c;
        let bottom = if i + 1 == counts.len() {
            PI
        } else {
            cap_colatitude(cumulative as f64 * region_area)
        };
        if c > 0 {
            zones.push(Zone {
                colat_top: top,
                colat_bottom: bottom,
                regions: c,
            });
        }
        top = bottom;
    }
    zones
}

/// One unit direction per region of the equal-area partition, in the
/// emitter frame. `n = 1` gives `+Z`; caps map to `±Z`. Collar points sit at
/// the mid-colatitude of their band, evenly spaced in longitude, with each
/// band rotated by half the difference of neighbouring spacings.
pub fn equal_area_directions(n: usize) -> Vec<Vec3> {
    let zones = equal_area_zones(n);
    let mut out = Vec::with_capacity(n);
    let mut offset = 0.0f64;
    for (i, z) in zones.iter().enumerate() {
        if z.colat_top == 0.0 {
            out.push(Vec3::z());
            continue;
        }
        if z.colat_bottom == PI && z.regions == 1 {
            out.push(-Vec3::z());
            continue;
        }
        let colat = 0.5 * (z.colat_top + z.colat_bottom);
        let (s, c) = colat.sin_cos();
        for k in 0..z.regions {
            let lon = 2.0 * PI * (((k as f64 + 0.5) / z.regions as f64 + offset).fract());
            out.push(Vec3::new(s * lon.cos(), s * lon.sin(), c));
        }
        let next = zones.get(i + 1).map_or(1, |z| z.regions);
        offset += 0.5 * (1.0 / next as f64 - 1.0 / z.regions as f64);
        offset -= offset.floor();
    }
    out
}

/// Mirror `d` about the plane with normal `n`: `d − 2(d·n)n`.
#[inline]
pub fn reflect(d: &Vec3, n: &Vec3) -> Vec3 {
    d - 2.0 * d.dot(n) * n
}

/// Normal `n` flipped to face against the incoming direction `d`.
#[inline]
pub fn facing(n: &Vec3, d: &Vec3) -> Vec3 {
    if d.dot(n) > 0.0 {
        -n
    } else {
        *n
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitRecord {
    pub ray: u32,
    /// 0 for the first surface the ray meets.
    pub bounce: u32,
    pub position: Vec3,
    pub triangle: u32,
    pub instance: u32,
    /// Cumulative path length from the emitter to this hit, meters.
    pub path_length: f64,
    /// Unit direction of the specularly reflected ray.
    pub reflection: Vec3,
    /// Unit surface normal on the side the ray arrived from.
    pub normal: Vec3,
    /// Whether the emitter is hidden from this hit point.
    pub occluded_to_origin: bool,
}

/// All hits of one emitter's rays, ordered by (ray, bounce).
#[derive(Debug, Clone, PartialEq)]
pub struct HitBuffer {
    pub emitter: u32,
    pub revision: u64,
    /// World-space launch direction of every ray.
    pub directions: Vec<Vec3>,
    pub records: Vec<HitRecord>,
}

impl HitBuffer {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records grouped per ray (rays without hits are skipped).
    pub fn rays(&self) -> impl Iterator<Item = &[HitRecord]> {
        self.records.chunk_by(|a, b| a.ray == b.ray)
    }

    /// Debug dump: `"STHB"`, version u32, emitter u32, revision u64,
    /// ray count u64, record count u64, then per record
    /// `ray u32, bounce u32, triangle u32, instance u32, position 3×f64,
    /// path_length f64, reflection 3×f64, normal 3×f64, occluded u8`.
    /// Little-endian throughout.
    pub fn write_dump<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(b"STHB")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&self.emitter.to_le_bytes())?;
        w.write_all(&self.revision.to_le_bytes())?;
        w.write_all(&(self.directions.len() as u64).to_le_bytes())?;
        w.write_all(&(self.records.len() as u64).to_le_bytes())?;
        for r in &self.records {
            for x in [r.ray, r.bounce, r.triangle, r.instance] {
                w.write_all(&x.to_le_bytes())?;
            }
            let floats = r
                .position
                .iter()
                .chain(std::iter::once(&r.path_length))
                .chain(r.reflection.iter())
                .chain(r.normal.iter());
            for x in floats {
                w.write_all(&x.to_le_bytes())?;
            }
            w.write_all(&[r.occluded_to_origin as u8])?;
        }
        Ok(())
    }
}

/// Trace one ray through the scene; hits are appended in bounce order.
pub fn trace_ray(scene: &Scene, emitter: &Emitter, ray: u32, direction: Vec3) -> Vec<HitRecord> {
    let source = emitter.pose.position;
    let eps = scene.epsilon();
    let mut out = Vec::new();
    let mut origin = source;
    let mut dir = direction;
    let mut last = source;
    let mut path = 0.0;
    for bounce in 0..=emitter.max_bounces {
        let remaining = emitter.max_distance - path;
        if remaining <= 0.0 {
            break;
        }
        let Some(hit) = scene.intersect(&origin, &dir, remaining) else {
            break;
        };
        let position = origin + dir * hit.t;
        let next_path = path + (position - last).norm();
        if next_path > emitter.max_distance || next_path <= path {
            break;
        }
        path = next_path;
        let (inst, local) = scene.locate(hit.triangle);
        let normal = facing(&inst.world.normals()[local], &dir);
        let reflection = reflect(&dir, &normal).normalize();
        let lifted = position + normal * eps;
        out.push(HitRecord {
            ray,
            bounce: bounce as u32,
            position,
            triangle: hit.triangle,
            instance: scene.instance_of(hit.triangle),
            path_length: path,
            reflection,
            normal,
            occluded_to_origin: !scene.line_of_sight(&lifted, &source),
        });
        last = position;
        origin = lifted;
        dir = reflection;
        if path >= emitter.max_distance {
            break;
        }
    }
    out
}

/// World-space launch directions of an emitter's rays.
pub fn launch_directions(emitter: &Emitter) -> Vec<Vec3> {
    equal_area_directions(emitter.rays)
        .into_iter()
        .map(|d| emitter.pose.orientation * d)
        .collect()
}

/// Trace every ray of emitter `index`. Rays run in parallel; the output
/// order is (ray, bounce) regardless of worker count.
pub fn trace_specular(scene: &Scene, index: usize) -> HitBuffer {
    let emitter = &scene.emitters()[index];
    let directions = launch_directions(emitter);
    let per_ray: Vec<Vec<HitRecord>> = directions
        .par_iter()
        .enumerate()
        .map(|(i, d)| trace_ray(scene, emitter, i as u32, *d))
        .collect();
    HitBuffer {
        emitter: index as u32,
        revision: scene.revision(),
        directions,
        records: per_ray.into_iter().flatten().collect(),
    }
}
