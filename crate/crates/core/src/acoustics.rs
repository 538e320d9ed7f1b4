//! Acoustic magnitudes for specular reflections, curvature-driven
//! diffraction points and direct (passive) source-receiver paths.
//!
//! Every contribution carries one magnitude per frequency bin,
//! `M(f) = L_geo(r) · L_atm(f, r) · I(f)`, where `I` is the specular lobe,
//! the material diffraction coefficient, or the emitter source level.
//! Magnitudes are evaluated in `f64` and stored as `f32`, the precision of
//! the point-cloud export, so decoded files reproduce them exactly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::directivity::departure_angles;
use crate::mesh::Vec3;
use crate::preproc::CurvatureTable;
use crate::scene::{Emitter, Scene};
use crate::tracer::{facing, trace_specular, HitBuffer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AcousticsError {
    #[error("path length must be > 0, got {0}")]
    Domain(f64),
    #[error("hit buffer is from scene revision {got}, scene is at revision {expected}")]
    RevisionMismatch { expected: u64, got: u64 },
    #[error("curvature table does not match the scene ({table} triangles, scene has {scene})")]
    TableMismatch { table: usize, scene: usize },
}

/// Inverse-square spreading, `1/r²`.
pub fn geometric_loss(r: f64) -> Result<f64, AcousticsError> {
    if r > 0.0 {
        Ok(1.0 / (r * r))
    } else {
        Err(AcousticsError::Domain(r))
    }
}

/// Amplitude factor of a medium losing `alpha_db_per_m` dB per meter over
/// `r` meters: `10^(−α·r/20)`.
pub fn atmospheric_loss(r: f64, alpha_db_per_m: f64) -> f64 {
    10f64.powf(-alpha_db_per_m * r / 20.0)
}

/// Gaussian specular lobe `k · exp(−γ²/(2β²))` for a receiver `gamma`
/// radians off the mirror direction.
pub fn specular_intensity(gamma: f64, beta: f64, k: f64) -> f64 {
    (-(gamma * gamma) / (2.0 * beta * beta)).exp() * k
}

/// Angle between two non-zero vectors, accurate near 0 and π.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Which contribution families to compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Components(pub u16);

impl Components {
    pub const NONE: Components = Components(0);
    pub const SPECULAR: Components = Components(1);
    pub const DIFFRACTION: Components = Components(2);
    pub const PASSIVE: Components = Components(4);
    pub const ALL: Components = Components(7);

    pub fn contains(self, other: Components) -> bool {
        self.0 & other.0 == other.0 && other.0 != 0
    }

    pub fn bits(self) -> u16 {
        self.0
    }
}

impl std::ops::BitOr for Components {
    type Output = Components;
    fn bitor(self, rhs: Components) -> Components {
        Components(self.0 | rhs.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum ContributionKind {
    Specular = 0,
    Diffraction = 1,
    Passive = 2,
}

impl TryFrom<u8> for ContributionKind {
    type Error = u8;
    fn try_from(v: u8) -> Result<Self, u8> {
        match v {
            0 => Ok(ContributionKind::Specular),
            1 => Ok(ContributionKind::Diffraction),
            2 => Ok(ContributionKind::Passive),
            other => Err(other),
        }
    }
}

/// One point of the point cloud, seen by one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub kind: ContributionKind,
    pub source: u32,
    pub receiver: u32,
    /// Reflection or diffraction point; the emitter position for passive paths.
    pub position: Vec3,
    /// Total emitter-to-receiver path length, meters.
    pub path_length: f64,
    /// Hit ordinal within the emitter's hit buffer (specular), surviving
    /// candidate ordinal (diffraction), or 0 (passive).
    pub index: u32,
    pub magnitudes: Vec<f32>,
}

impl Contribution {
    fn key(&self) -> (ContributionKind, u32, u32, u32) {
        (self.kind, self.source, self.receiver, self.index)
    }
}

/// Everything one simulation run produced, in deterministic order
/// `(kind, source, receiver, index)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionSet {
    pub revision: u64,
    pub seed: u64,
    pub components: Components,
    /// Specular points (hit records) over all emitters.
    pub specular_points: u64,
    /// Surviving diffraction points over all emitters.
    pub diffraction_points: u64,
    pub sources: u32,
    pub receivers: u32,
    pub frequencies: Vec<f64>,
    pub speed_of_sound: f64,
    pub contributions: Vec<Contribution>,
}

impl ContributionSet {
    /// Contributions of one (source, receiver) pair.
    pub fn pair(&self, source: u32, receiver: u32) -> impl Iterator<Item = &Contribution> {
        self.contributions
            .iter()
            .filter(move |c| c.source == source && c.receiver == receiver)
    }

    pub fn max_path_length(&self) -> f64 {
        self.contributions.iter().map(|c| c.path_length).fold(0.0, f64::max)
    }
}

fn check_table(scene: &Scene, table: &CurvatureTable) -> Result<(), AcousticsError> {
    if table.matches(scene) {
        Ok(())
    } else {
        Err(AcousticsError::TableMismatch {
            table: table.triangle_count(),
            scene: scene.triangle_count(),
        })
    }
}

fn apply_directivity(emitter: &Emitter, departure: &Vec3, m: &mut [f32]) {
    if let Some(table) = &emitter.directivity {
        let (az, el) = departure_angles(&emitter.pose, departure);
        table.apply(az, el, m);
    }
}

/// Specular contributions of one emitter's hit buffer for every receiver
/// with line of sight to the hit, on the reflecting side of the surface.
pub fn specular_magnitudes(
    scene: &Scene,
    hits: &HitBuffer,
    table: &CurvatureTable,
) -> Result<Vec<Contribution>, AcousticsError> {
    if hits.revision != scene.revision() {
        return Err(AcousticsError::RevisionMismatch {
            expected: scene.revision(),
            got: hits.revision,
        });
    }
    check_table(scene, table)?;
    let emitter = &scene.emitters()[hits.emitter as usize];
    let alpha = scene.attenuation();
    let eps = scene.epsilon();
    let per_receiver: Vec<Vec<Contribution>> = scene
        .receivers()
        .par_iter()
        .enumerate()
        .map(|(m, rx)| {
            let target = rx.pose.position;
            hits.records
                .par_iter()
                .enumerate()
                .filter_map(|(n, h)| {
                    let to_rx = target - h.position;
                    let leg = to_rx.norm();
                    if leg == 0.0 || to_rx.dot(&h.normal) <= 0.0 {
                        return None;
                    }
                    if !scene.line_of_sight(&(h.position + h.normal * eps), &target) {
                        return None;
                    }
                    let r = h.path_length + leg;
                    let gamma = angle_between(&h.reflection, &to_rx);
                    let l_geo = geometric_loss(r).ok()?;
                    let betas = table.betas(h.triangle);
                    let ks = table.ks(h.triangle);
                    let mut mags: Vec<f32> = (0..betas.len())
                        .map(|b| (l_geo * atmospheric_loss(r, alpha[b]) * specular_intensity(gamma, betas[b], ks[b])) as f32)
                        .collect();
                    apply_directivity(emitter, &hits.directions[h.ray as usize], &mut mags);
                    Some(Contribution {
                        kind: ContributionKind::Specular,
                        source: hits.emitter,
                        receiver: m as u32,
                        position: h.position,
                        path_length: r,
                        index: n as u32,
                        magnitudes: mags,
                    })
                })
                .collect()
        })
        .collect();
    Ok(per_receiver.into_iter().flatten().collect())
}

/// A sampled point on a triangle, acting as a secondary omnidirectional source.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffractionCandidate {
    pub triangle: u32,
    pub instance: u32,
    pub barycentric: [f64; 3],
    pub position: Vec3,
}

/// Cumulative weights `C_i + ε_i`, `ε_i ~ U[0, 10⁻³·mean(C)]`.
/// `None` when every weight is zero.
pub fn dithered_cdf(metric: &[f64], rng: &mut impl Rng) -> Option<Vec<f64>> {
    if metric.is_empty() {
        return None;
    }
    let mean = metric.iter().sum::<f64>() / metric.len() as f64;
    let spread = 1e-3 * mean;
    let mut total = 0.0;
    let cdf: Vec<f64> = metric
        .iter()
        .map(|&c| {
            let eps = if spread > 0.0 { rng.random::<f64>() * spread } else { 0.0 };
            total += c + eps;
            total
        })
        .collect();
    (total > 0.0).then_some(cdf)
}

/// Inverse-CDF draw of an index.
pub fn draw_index(cdf: &[f64], rng: &mut impl Rng) -> usize {
    let total = cdf[cdf.len() - 1];
    let u = rng.random::<f64>() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// Uniform barycentric coordinates inside a triangle.
pub fn uniform_barycentric(rng: &mut impl Rng) -> [f64; 3] {
    let s = rng.random::<f64>().sqrt();
    let t = rng.random::<f64>();
    [1.0 - s, s * (1.0 - t), s * t]
}

/// Whether an instance's bounding sphere meets the emitter's view cone.
pub fn in_frustum(emitter: &Emitter, center: &Vec3, radius: f64) -> bool {
    if emitter.frustum_half_angle >= std::f64::consts::PI {
        return true;
    }
    let v = center - emitter.pose.position;
    let d = v.norm();
    if d <= radius {
        return true;
    }
    let off_axis = angle_between(&emitter.pose.boresight(), &v);
    off_axis <= emitter.frustum_half_angle + (radius / d).asin()
}

fn candidate_rng(seed: u64, emitter: usize, instance: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((emitter as u64) << 32) | instance as u64);
    rng
}

/// Draw `count` candidates on every instance inside the emitter frustum,
/// picking triangles with probability proportional to their curvature
/// metric. Each (seed, emitter, instance) has its own random stream.
pub fn sample_diffraction_candidates(
    scene: &Scene,
    table: &CurvatureTable,
    emitter: usize,
    count: usize,
    seed: u64,
) -> Result<Vec<DiffractionCandidate>, AcousticsError> {
    check_table(scene, table)?;
    let e = &scene.emitters()[emitter];
    let per_instance: Vec<Vec<DiffractionCandidate>> = scene
        .instances()
        .par_iter()
        .enumerate()
        .map(|(i, inst)| {
            let (center, radius) = inst.bounding_sphere();
            if count == 0 || !in_frustum(e, &center, radius) {
                return Vec::new();
            }
            let range = inst.triangle_range();
            let mut rng = candidate_rng(seed, emitter, i);
            let Some(cdf) = dithered_cdf(&table.metric[range.clone()], &mut rng) else {
                log::warn!("instance '{}' has zero curvature everywhere; no diffraction candidates", inst.name);
                return Vec::new();
            };
            (0..count)
                .map(|_| {
                    let local = draw_index(&cdf, &mut rng);
                    let bary = uniform_barycentric(&mut rng);
                    let [a, b, c] = inst.world.corners(local);
                    DiffractionCandidate {
                        triangle: (range.start + local) as u32,
                        instance: i as u32,
                        barycentric: bary,
                        position: a * bary[0] + b * bary[1] + c * bary[2],
                    }
                })
                .collect()
        })
        .collect();
    Ok(per_instance.into_iter().flatten().collect())
}

/// Keep candidates that see the emitter within `max_incidence` of their
/// triangle normal.
pub fn filter_diffraction_candidates(
    scene: &Scene,
    candidates: &[DiffractionCandidate],
    emitter: usize,
    max_incidence: f64,
) -> Vec<DiffractionCandidate> {
    let source = scene.emitters()[emitter].pose.position;
    let eps = scene.epsilon();
    candidates
        .par_iter()
        .filter(|c| {
            let n = scene.triangle_normal(c.triangle);
            let to_source = source - c.position;
            if to_source.norm() == 0.0 || angle_between(&n, &to_source) > max_incidence {
                return false;
            }
            let lifted = c.position + facing(&n, &-to_source) * eps;
            scene.line_of_sight(&lifted, &source)
        })
        .copied()
        .collect()
}

/// Diffraction contributions of filtered candidates for every receiver
/// with line of sight to the candidate point.
pub fn diffraction_magnitudes(
    scene: &Scene,
    emitter: usize,
    candidates: &[DiffractionCandidate],
) -> Vec<Contribution> {
    let e = &scene.emitters()[emitter];
    let source = e.pose.position;
    let alpha = scene.attenuation();
    let eps = scene.epsilon();
    let per_receiver: Vec<Vec<Contribution>> = scene
        .receivers()
        .par_iter()
        .enumerate()
        .map(|(m, rx)| {
            let target = rx.pose.position;
            candidates
                .par_iter()
                .enumerate()
                .filter_map(|(o, c)| {
                    let n = scene.triangle_normal(c.triangle);
                    let incoming = c.position - source;
                    let lifted = c.position + facing(&n, &incoming) * eps;
                    if !scene.line_of_sight(&lifted, &target) {
                        return None;
                    }
                    let r = incoming.norm() + (target - c.position).norm();
                    let l_geo = geometric_loss(r).ok()?;
                    let coeff = &scene.material_of(c.triangle).diffraction;
                    let mut mags: Vec<f32> = (0..alpha.len())
                        .map(|b| (l_geo * atmospheric_loss(r, alpha[b]) * coeff[b]) as f32)
                        .collect();
                    apply_directivity(e, &incoming, &mut mags);
                    Some(Contribution {
                        kind: ContributionKind::Diffraction,
                        source: emitter as u32,
                        receiver: m as u32,
                        position: c.position,
                        path_length: r,
                        index: o as u32,
                        magnitudes: mags,
                    })
                })
                .collect()
        })
        .collect();
    per_receiver.into_iter().flatten().collect()
}

/// Direct-path contributions for every unoccluded emitter-receiver pair.
/// Co-located pairs have no defined direct path and are skipped.
pub fn passive_magnitudes(scene: &Scene) -> Vec<Contribution> {
    let alpha = scene.attenuation();
    let eps = scene.epsilon();
    let mut out = Vec::new();
    for (s, e) in scene.emitters().iter().enumerate() {
        let source = e.pose.position;
        for (m, rx) in scene.receivers().iter().enumerate() {
            let target = rx.pose.position;
            let delta = target - source;
            let r = delta.norm();
            if r <= eps || !scene.line_of_sight(&source, &target) {
                continue;
            }
            let Ok(l_geo) = geometric_loss(r) else { continue };
            let mut mags: Vec<f32> = (0..alpha.len())
                .map(|b| (l_geo * atmospheric_loss(r, alpha[b]) * e.source_level[b]) as f32)
                .collect();
            apply_directivity(e, &delta, &mut mags);
            out.push(Contribution {
                kind: ContributionKind::Passive,
                source: s as u32,
                receiver: m as u32,
                position: source,
                path_length: r,
                index: 0,
                magnitudes: mags,
            });
        }
    }
    out
}

/// Run the selected components for every emitter of the scene.
pub fn simulate(
    scene: &Scene,
    table: &CurvatureTable,
    components: Components,
    seed: u64,
) -> Result<ContributionSet, AcousticsError> {
    check_table(scene, table)?;
    let mut contributions = Vec::new();
    let mut specular_points = 0u64;
    let mut diffraction_points = 0u64;
    for s in 0..scene.emitters().len() {
        if components.contains(Components::SPECULAR) {
            let hits = trace_specular(scene, s);
            specular_points += hits.len() as u64;
            contributions.extend(specular_magnitudes(scene, &hits, table)?);
        }
        if components.contains(Components::DIFFRACTION) {
            let e = &scene.emitters()[s];
            let sampled = sample_diffraction_candidates(scene, table, s, e.diffraction_candidates, seed)?;
            let kept = filter_diffraction_candidates(scene, &sampled, s, e.max_incidence);
            diffraction_points += kept.len() as u64;
            contributions.extend(diffraction_magnitudes(scene, s, &kept));
        }
    }
    if components.contains(Components::PASSIVE) {
        contributions.extend(passive_magnitudes(scene));
    }
    contributions.sort_by_key(Contribution::key);
    Ok(ContributionSet {
        revision: scene.revision(),
        seed,
        components,
        specular_points,
        diffraction_points,
        sources: scene.emitters().len() as u32,
        receivers: scene.receivers().len() as u32,
        frequencies: scene.frequencies().to_vec(),
        speed_of_sound: scene.speed_of_sound(),
        contributions,
    })
}
