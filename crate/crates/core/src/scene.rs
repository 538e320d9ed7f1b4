//! Scene description, validation and world-space geometry.
//!
//! A [`Scene`] is built from a [`SceneConfig`] (a JSON document, see the
//! guide's scene-format chapter) and is immutable afterwards. Moving an
//! entity with [`Scene::with_pose`] produces a new scene revision: instance
//! transforms are re-applied and the BVH is refit rather than rebuilt.
//!
//! Units are SI throughout: meters, seconds, Hz, radians.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Quaternion, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bvh::{Bvh, RayHit};
use crate::directivity::GainTable;
use crate::mesh::{load_mesh, MeshError, MeshFormat, TriangleMesh, Vec3};
use crate::shapes;

pub const DEFAULT_SPEED_OF_SOUND: f64 = 343.0;
pub const DEFAULT_DIFFRACTION_CANDIDATES: usize = 256;

/// Self-intersection offsets are this fraction of the scene diameter.
pub const RELATIVE_EPSILON: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("unknown material '{material}' referenced by instance '{instance}'")]
    UnknownMaterial { instance: String, material: String },
    #[error("missing mesh file {0}")]
    MissingMesh(PathBuf),
    #[error("invalid frequency grid: {0}")]
    InvalidFrequencyGrid(String),
    #[error("invalid scene: {0}")]
    Invalid(String),
    #[error("unknown entity '{0}'")]
    UnknownEntity(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("scene config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(msg: impl Into<String>) -> SceneError {
    SceneError::Invalid(msg.into())
}

/// Rigid placement: position plus unit-quaternion orientation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    pub position: Vec3,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoseRepr {
    #[serde(default)]
    position: [f64; 3],
    /// `[w, x, y, z]`
    #[serde(default, skip_serializing_if = "Option::is_none")]
    orientation: Option<[f64; 4]>,
    /// Alternative to `orientation`: point the local `+Z` axis along this
    /// world direction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    look_along: Option<[f64; 3]>,
}

impl TryFrom<PoseRepr> for Pose {
    type Error = String;
    fn try_from(r: PoseRepr) -> Result<Self, String> {
        let position = Vec3::from(r.position);
        match (r.orientation, r.look_along) {
            (Some(_), Some(_)) => Err("pose has both orientation and look_along".into()),
            (Some(q), None) => Pose::new(position, q),
            (None, Some(d)) => {
                let d = Vec3::from(d);
                if !(d.norm() > 0.0) {
                    return Err("look_along must be non-zero".into());
                }
                Ok(Pose::looking_along(position, d))
            }
            (None, None) => Ok(Pose::at(position)),
        }
    }
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let q = p.orientation.quaternion();
        PoseRepr {
            position: [p.position.x, p.position.y, p.position.z],
            orientation: Some([q.w, q.i, q.j, q.k]),
            look_along: None,
        }
    }
}

impl Default for Pose {
    fn default() -> Self {
        Pose::at(Vec3::zeros())
    }
}

impl Pose {
    /// Pose from a position and a `[w, x, y, z]` quaternion. A quaternion
    /// already unit-norm within 1e-9 is stored bit-for-bit; others are
    /// normalized. The zero quaternion is rejected.
    pub fn new(position: Vec3, wxyz: [f64; 4]) -> Result<Self, String> {
        if !position.iter().chain(wxyz.iter()).all(|c| c.is_finite()) {
            return Err("pose components must be finite".into());
        }
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let n = q.norm();
        let orientation = if (n - 1.0).abs() <= 1e-9 {
            UnitQuaternion::new_unchecked(q)
        } else if n > 0.0 {
            UnitQuaternion::from_quaternion(q)
        } else {
            return Err("orientation quaternion is zero".into());
        };
        Ok(Pose {
            position,
            orientation,
        })
    }

    pub fn at(position: Vec3) -> Self {
        Pose {
            position,
            orientation: UnitQuaternion::identity(),
        }
    }

    /// Pose whose local `+Z` axis points along `direction`.
    pub fn looking_along(position: Vec3, direction: Vec3) -> Self {
        let d = direction.normalize();
        let orientation = UnitQuaternion::rotation_between(&Vec3::z(), &d).unwrap_or_else(|| {
            // antiparallel: half turn about X
            UnitQuaternion::from_axis_angle(&Vec3::x_axis(), std::f64::consts::PI)
        });
        Pose {
            position,
            orientation,
        }
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation * p + self.position
    }

    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        self.orientation.inverse_transform_vector(&(p - self.position))
    }

    /// World-space direction of the local `+Z` axis.
    pub fn boresight(&self) -> Vec3 {
        self.orientation * Vec3::z()
    }

    /// Composition `self ∘ other` (apply `other` first).
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            position: self.transform_point(&other.position),
            orientation: self.orientation * other.orientation,
        }
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

/// A value given either once for every frequency bin or per bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerBin {
    Scalar(f64),
    List(Vec<f64>),
}

impl PerBin {
    fn resolve(&self, bins: usize, what: &str) -> Result<Vec<f64>, SceneError> {
        match self {
            PerBin::Scalar(v) => Ok(vec![*v; bins]),
            PerBin::List(v) if v.len() == bins => Ok(v.clone()),
            PerBin::List(v) => Err(invalid(format!("{what} has {} values, expected {bins}", v.len()))),
        }
    }
}

fn zero_bins() -> PerBin {
    PerBin::Scalar(0.0)
}

fn one_bin() -> PerBin {
    PerBin::Scalar(1.0)
}

/// Frequency bin centers: an explicit list or an inclusive linear range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FrequencySpec {
    List(Vec<f64>),
    Range { start: f64, stop: f64, bins: usize },
}

impl FrequencySpec {
    pub fn resolve(&self) -> Result<Vec<f64>, SceneError> {
        let bins = match self {
            FrequencySpec::List(v) => v.clone(),
            FrequencySpec::Range { start, stop, bins } => match *bins {
                0 => Vec::new(),
                1 => vec![*start],
                n => (0..n)
                    .map(|i| start + (stop - start) * i as f64 / (n - 1) as f64)
                    .collect(),
            },
        };
        if bins.is_empty() {
            return Err(SceneError::InvalidFrequencyGrid("no frequency bins".into()));
        }
        if bins.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(SceneError::InvalidFrequencyGrid("bin centers must be positive".into()));
        }
        if bins.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SceneError::InvalidFrequencyGrid(
                "bin centers must be strictly increasing".into(),
            ));
        }
        Ok(bins)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub id: String,
    /// Global curvature scaling factor.
    #[serde(default = "default_eta")]
    pub eta: f64,
    /// Area at which the area weight saturates; defaults to the median
    /// triangle area of each instance.
    #[serde(default)]
    pub area_ref: Option<f64>,
    /// Curvature metric at which the BRDF reaches its edge endpoints.
    #[serde(default = "default_c_sat")]
    pub c_sat: f64,
    pub beta_smooth: PerBin,
    pub beta_edge: PerBin,
    pub k_smooth: PerBin,
    pub k_edge: PerBin,
    #[serde(default = "zero_bins")]
    pub diffraction: PerBin,
}

fn default_eta() -> f64 {
    1.0
}

fn default_c_sat() -> f64 {
    1.0
}

/// Procedural mesh generators usable from a scene file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "primitive", rename_all = "snake_case", deny_unknown_fields)]
pub enum Primitive {
    Plate { size: [f64; 2], divisions: [usize; 2] },
    Box { size: [f64; 3], #[serde(default = "one")] divisions: usize },
    Icosphere { radius: f64, subdivisions: u32 },
    Dome { radius: f64, rings: usize, segments: usize },
}

fn one() -> usize {
    1
}

impl Primitive {
    pub fn build(&self) -> Result<TriangleMesh, SceneError> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        Ok(match *self {
            Primitive::Plate { size, divisions } => {
                if !size.iter().all(|&s| positive(s)) {
                    return Err(invalid("plate size must be positive"));
                }
                shapes::plate(size[0], size[1], divisions[0], divisions[1])
            }
            Primitive::Box { size, divisions } => {
                if !size.iter().all(|&s| positive(s)) {
                    return Err(invalid("box size must be positive"));
                }
                shapes::tessellated_cuboid(Vec3::from(size), divisions)
            }
            Primitive::Icosphere { radius, subdivisions } => {
                if !positive(radius) || subdivisions > 8 {
                    return Err(invalid("icosphere needs radius > 0 and at most 8 subdivisions"));
                }
                shapes::icosphere(radius, subdivisions)
            }
            Primitive::Dome { radius, rings, segments } => {
                if !positive(radius) {
                    return Err(invalid("dome radius must be positive"));
                }
                shapes::dome(radius, rings, segments)
            }
        })
    }

    pub fn triangle_count(&self) -> u64 {
        match *self {
            Primitive::Plate { divisions, .. } => shapes::plate_triangle_count(divisions[0], divisions[1]),
            Primitive::Box { divisions, .. } => 12 * (divisions.max(1) as u64).pow(2),
            Primitive::Icosphere { subdivisions, .. } => 20 * 4u64.pow(subdivisions),
            Primitive::Dome { rings, segments, .. } => {
                let (r, s) = (rings.max(1) as u64, segments.max(3) as u64);
                s + 2 * s * (r - 1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MeshSource {
    /// Path to an `.obj` or binary `.stl` file, relative to the scene file.
    File(String),
    Primitive(Primitive),
}

impl MeshSource {
    fn key(&self) -> String {
        match self {
            MeshSource::File(p) => format!("file:{p}"),
            MeshSource::Primitive(p) => format!("prim:{}", serde_json::to_string(p).unwrap_or_default()),
        }
    }

    fn load(&self, base_dir: &Path) -> Result<TriangleMesh, SceneError> {
        match self {
            MeshSource::Primitive(p) => p.build(),
            MeshSource::File(rel) => {
                let path = base_dir.join(rel);
                if !path.exists() {
                    return Err(SceneError::MissingMesh(path));
                }
                let format = MeshFormat::from_path(&path)
                    .ok_or_else(|| invalid(format!("unsupported mesh extension: {}", path.display())))?;
                Ok(load_mesh(&path, format)?)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub name: String,
    pub mesh: MeshSource,
    pub material: String,
    #[serde(default)]
    pub pose: Pose,
    /// Uniform scale applied before the pose.
    #[serde(default = "unit_scale")]
    pub scale: f64,
}

fn unit_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterConfig {
    pub id: String,
    #[serde(default)]
    pub pose: Pose,
    pub rays: usize,
    /// Reflections allowed after the first hit.
    #[serde(default)]
    pub max_bounces: usize,
    pub max_distance: f64,
    #[serde(default = "default_frustum")]
    pub frustum_half_angle: f64,
    /// Source magnitude scaler per bin for direct (passive) paths.
    #[serde(default = "one_bin")]
    pub source_level: PerBin,
    #[serde(default = "default_candidates")]
    pub diffraction_candidates: usize,
    #[serde(default = "default_incidence")]
    pub max_incidence: f64,
    #[serde(default)]
    pub directivity: Option<GainTable>,
}

fn default_frustum() -> f64 {
    std::f64::consts::FRAC_PI_2
}

fn default_incidence() -> f64 {
    std::f64::consts::FRAC_PI_2
}

fn default_candidates() -> usize {
    DEFAULT_DIFFRACTION_CANDIDATES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverConfig {
    pub id: String,
    #[serde(default)]
    pub pose: Pose,
}

fn default_c() -> f64 {
    DEFAULT_SPEED_OF_SOUND
}

/// The on-disk scene document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    #[serde(default = "default_c")]
    pub speed_of_sound: f64,
    pub frequencies: FrequencySpec,
    /// Atmospheric absorption per bin, dB/m.
    #[serde(default = "zero_bins")]
    pub atmospheric_attenuation: PerBin,
    #[serde(default)]
    pub materials: Vec<MaterialConfig>,
    #[serde(default)]
    pub instances: Vec<InstanceConfig>,
    #[serde(default)]
    pub emitters: Vec<EmitterConfig>,
    #[serde(default)]
    pub receivers: Vec<ReceiverConfig>,
}

impl SceneConfig {
    pub fn from_json(text: &str) -> Result<Self, SceneError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self, SceneError> {
        let text = std::fs::read_to_string(path).map_err(|source| SceneError::Io {
            path: path.to_owned(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Triangle count per instance without building the scene. Procedural
    /// meshes are counted analytically; files are parsed.
    pub fn triangle_counts(&self, base_dir: &Path) -> Result<Vec<(String, u64)>, SceneError> {
        let mut cache: HashMap<String, u64> = HashMap::new();
        let mut out = Vec::with_capacity(self.instances.len());
        for inst in &self.instances {
            let key = inst.mesh.key();
            let n = match cache.get(&key) {
                Some(&n) => n,
                None => {
                    let n = match &inst.mesh {
                        MeshSource::Primitive(p) => p.triangle_count(),
                        src => src.load(base_dir)?.triangle_count() as u64,
                    };
                    cache.insert(key, n);
                    n
                }
            };
            out.push((inst.name.clone(), n));
        }
        Ok(out)
    }
}

/// Acoustic surface profile with every per-bin quantity resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialSpec {
    pub id: String,
    pub eta: f64,
    pub area_ref: Option<f64>,
    pub c_sat: f64,
    pub beta_smooth: Vec<f64>,
    pub beta_edge: Vec<f64>,
    pub k_smooth: Vec<f64>,
    pub k_edge: Vec<f64>,
    /// Diffraction coefficient per bin.
    pub diffraction: Vec<f64>,
}

impl MaterialSpec {
    pub fn from_config(c: &MaterialConfig, bins: usize) -> Result<Self, SceneError> {
        let m = MaterialSpec {
            id: c.id.clone(),
            eta: c.eta,
            area_ref: c.area_ref,
            c_sat: c.c_sat,
            beta_smooth: c.beta_smooth.resolve(bins, "beta_smooth")?,
            beta_edge: c.beta_edge.resolve(bins, "beta_edge")?,
            k_smooth: c.k_smooth.resolve(bins, "k_smooth")?,
            k_edge: c.k_edge.resolve(bins, "k_edge")?,
            diffraction: c.diffraction.resolve(bins, "diffraction")?,
        };
        m.validate()?;
        Ok(m)
    }

    /// A material with the same endpoints in every bin.
    #[allow(clippy::too_many_arguments)]
    pub fn uniform(id: &str, bins: usize, beta: (f64, f64), k: (f64, f64), diffraction: f64, c_sat: f64) -> Self {
        MaterialSpec {
            id: id.to_string(),
            eta: 1.0,
            area_ref: None,
            c_sat,
            beta_smooth: vec![beta.0; bins],
            beta_edge: vec![beta.1; bins],
            k_smooth: vec![k.0; bins],
            k_edge: vec![k.1; bins],
            diffraction: vec![diffraction; bins],
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let id = &self.id;
        let beta_ok = |b: &f64| *b > 0.0 && *b <= std::f64::consts::PI;
        if !self.beta_smooth.iter().chain(&self.beta_edge).all(beta_ok) {
            return Err(invalid(format!("material '{id}': beta must lie in (0, pi]")));
        }
        if !self.k_smooth.iter().chain(&self.k_edge).all(|k| (0.0..=1.0).contains(k)) {
            return Err(invalid(format!("material '{id}': k must lie in [0, 1]")));
        }
        if !self.diffraction.iter().all(|d| d.is_finite() && *d >= 0.0) {
            return Err(invalid(format!("material '{id}': diffraction coefficient must be >= 0")));
        }
        if !(self.eta.is_finite() && self.eta > 0.0) || !(self.c_sat.is_finite() && self.c_sat > 0.0) {
            return Err(invalid(format!("material '{id}': eta and c_sat must be > 0")));
        }
        if let Some(a) = self.area_ref {
            if !(a.is_finite() && a > 0.0) {
                return Err(invalid(format!("material '{id}': area_ref must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub id: String,
    pub pose: Pose,
    pub rays: usize,
    pub max_bounces: usize,
    pub max_distance: f64,
    pub frustum_half_angle: f64,
    pub source_level: Vec<f64>,
    pub diffraction_candidates: usize,
    pub max_incidence: f64,
    pub directivity: Option<GainTable>,
}

impl Emitter {
    pub fn from_config(c: &EmitterConfig, bins: usize) -> Result<Self, SceneError> {
        let e = Emitter {
            id: c.id.clone(),
            pose: c.pose,
            rays: c.rays,
            max_bounces: c.max_bounces,
            max_distance: c.max_distance,
            frustum_half_angle: c.frustum_half_angle,
            source_level: c.source_level.resolve(bins, "source_level")?,
            diffraction_candidates: c.diffraction_candidates,
            max_incidence: c.max_incidence,
            directivity: c.directivity.clone(),
        };
        e.validate()?;
        Ok(e)
    }

    /// An emitter with defaults for everything but the pose and ray budget.
    pub fn new(id: &str, pose: Pose, rays: usize, max_bounces: usize, max_distance: f64, bins: usize) -> Self {
        Emitter {
            id: id.to_string(),
            pose,
            rays,
            max_bounces,
            max_distance,
            frustum_half_angle: default_frustum(),
            source_level: vec![1.0; bins],
            diffraction_candidates: DEFAULT_DIFFRACTION_CANDIDATES,
            max_incidence: default_incidence(),
            directivity: None,
        }
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        let id = &self.id;
        if self.rays == 0 {
            return Err(invalid(format!("emitter '{id}': rays must be >= 1")));
        }
        if !(self.max_distance.is_finite() && self.max_distance > 0.0) {
            return Err(invalid(format!("emitter '{id}': max_distance must be > 0")));
        }
        if !(self.frustum_half_angle > 0.0 && self.frustum_half_angle <= std::f64::consts::PI) {
            return Err(invalid(format!("emitter '{id}': frustum_half_angle must lie in (0, pi]")));
        }
        if !(self.max_incidence >= 0.0 && self.max_incidence <= std::f64::consts::PI) {
            return Err(invalid(format!("emitter '{id}': max_incidence must lie in [0, pi]")));
        }
        if !self.source_level.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(invalid(format!("emitter '{id}': source_level must be >= 0")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Receiver {
    pub id: String,
    pub pose: Pose,
}

/// One placed copy of a mesh.
#[derive(Debug, Clone)]
pub struct Instance {
    pub name: String,
    pub source: Arc<TriangleMesh>,
    pub pose: Pose,
    pub scale: f64,
    pub material: usize,
    /// World-space copy of `source` under `scale` then `pose`.
    pub world: TriangleMesh,
    /// Global id of this instance's first triangle.
    pub first_triangle: u32,
}

impl Instance {
    fn place(source: &TriangleMesh, pose: &Pose, scale: f64) -> TriangleMesh {
        source.transformed(|v| pose.transform_point(&(v * scale)))
    }

    pub fn triangle_range(&self) -> std::ops::Range<usize> {
        let s = self.first_triangle as usize;
        s..s + self.world.triangle_count()
    }

    /// Bounding sphere `(center, radius)` of the world-space mesh.
    pub fn bounding_sphere(&self) -> (Vec3, f64) {
        let (lo, hi) = self.world.bounds();
        let c = (lo + hi) / 2.0;
        (c, (hi - lo).norm() / 2.0)
    }
}

/// Something that can be moved with [`Scene::with_pose`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Entity {
    Instance(usize),
    Emitter(usize),
    Receiver(usize),
}

/// A validated, immutable scene revision.
#[derive(Debug, Clone)]
pub struct Scene {
    revision: u64,
    speed_of_sound: f64,
    frequencies: Vec<f64>,
    attenuation: Vec<f64>,
    materials: Vec<MaterialSpec>,
    instances: Vec<Instance>,
    emitters: Vec<Emitter>,
    receivers: Vec<Receiver>,
    triangles: Vec<[Vec3; 3]>,
    triangle_instance: Vec<u32>,
    bvh: Bvh,
    diameter: f64,
}

/// Builder used by tests and programmatic callers that do not go through a
/// scene file.
#[derive(Debug, Clone)]
pub struct SceneBuilder {
    speed_of_sound: f64,
    frequencies: Vec<f64>,
    attenuation: Vec<f64>,
    materials: Vec<MaterialSpec>,
    instances: Vec<(String, Arc<TriangleMesh>, Pose, f64, String)>,
    emitters: Vec<Emitter>,
    receivers: Vec<Receiver>,
}

impl SceneBuilder {
    pub fn new(frequencies: Vec<f64>) -> Self {
        let bins = frequencies.len();
        SceneBuilder {
            speed_of_sound: DEFAULT_SPEED_OF_SOUND,
            frequencies,
            attenuation: vec![0.0; bins],
            materials: Vec::new(),
            instances: Vec::new(),
            emitters: Vec::new(),
            receivers: Vec::new(),
        }
    }

    pub fn speed_of_sound(mut self, c: f64) -> Self {
        self.speed_of_sound = c;
        self
    }

    pub fn attenuation(mut self, db_per_m: Vec<f64>) -> Self {
        self.attenuation = db_per_m;
        self
    }

    pub fn material(mut self, m: MaterialSpec) -> Self {
        self.materials.push(m);
        self
    }

    pub fn instance(self, name: &str, mesh: TriangleMesh, pose: Pose, material: &str) -> Self {
        self.shared_instance(name, Arc::new(mesh), pose, 1.0, material)
    }

    pub fn shared_instance(mut self, name: &str, mesh: Arc<TriangleMesh>, pose: Pose, scale: f64, material: &str) -> Self {
        self.instances.push((name.to_string(), mesh, pose, scale, material.to_string()));
        self
    }

    pub fn emitter(mut self, e: Emitter) -> Self {
        self.emitters.push(e);
        self
    }

    pub fn receiver(mut self, id: &str, pose: Pose) -> Self {
        self.receivers.push(Receiver { id: id.to_string(), pose });
        self
    }

    pub fn build(self) -> Result<Scene, SceneError> {
        let frequencies = FrequencySpec::List(self.frequencies).resolve()?;
        let bins = frequencies.len();
        if !(self.speed_of_sound.is_finite() && self.speed_of_sound > 0.0) {
            return Err(invalid("speed_of_sound must be > 0"));
        }
        if self.attenuation.len() != bins || !self.attenuation.iter().all(|a| a.is_finite() && *a >= 0.0) {
            return Err(invalid("atmospheric attenuation needs one value >= 0 per bin"));
        }
        for m in &self.materials {
            m.validate()?;
            if m.beta_smooth.len() != bins
                || m.beta_edge.len() != bins
                || m.k_smooth.len() != bins
                || m.k_edge.len() != bins
                || m.diffraction.len() != bins
            {
                return Err(invalid(format!("material '{}' does not cover {bins} bins", m.id)));
            }
        }
        for e in &self.emitters {
            e.validate()?;
            if e.source_level.len() != bins {
                return Err(invalid(format!("emitter '{}' source_level does not cover {bins} bins", e.id)));
            }
            if let Some(t) = &e.directivity {
                if t.bins() != 1 && t.bins() != bins {
                    return Err(invalid(format!("emitter '{}' directivity must have 1 or {bins} bins", e.id)));
                }
            }
        }

        for (i, m) in self.materials.iter().enumerate() {
            if self.materials[..i].iter().any(|other| other.id == m.id) {
                return Err(invalid(format!("duplicate material id '{}'", m.id)));
            }
        }
        let mut names: HashMap<&str, &str> = HashMap::new();
        let entities = self
            .instances
            .iter()
            .map(|i| (i.0.as_str(), "instance"))
            .chain(self.emitters.iter().map(|e| (e.id.as_str(), "emitter")))
            .chain(self.receivers.iter().map(|r| (r.id.as_str(), "receiver")));
        for (name, kind) in entities {
            if let Some(prev) = names.insert(name, kind) {
                return Err(invalid(format!("id '{name}' used by both a {prev} and a {kind}")));
            }
        }

        let mut instances = Vec::with_capacity(self.instances.len());
        let mut first = 0u64;
        for (name, source, pose, scale, material) in self.instances {
            if !(scale.is_finite() && scale > 0.0) {
                return Err(invalid(format!("instance '{name}': scale must be > 0")));
            }
            let material = self
                .materials
                .iter()
                .position(|m| m.id == material)
                .ok_or_else(|| SceneError::UnknownMaterial {
                    instance: name.clone(),
                    material: material.clone(),
                })?;
            let world = Instance::place(&source, &pose, scale);
            let count = world.triangle_count() as u64;
            if first + count > u32::MAX as u64 {
                return Err(invalid("scene exceeds 2^32 triangles"));
            }
            instances.push(Instance {
                name,
                source,
                pose,
                scale,
                material,
                world,
                first_triangle: first as u32,
            });
            first += count;
        }

        let mut scene = Scene {
            revision: 0,
            speed_of_sound: self.speed_of_sound,
            frequencies,
            attenuation: self.attenuation,
            materials: self.materials,
            instances,
            emitters: self.emitters,
            receivers: self.receivers,
            triangles: Vec::new(),
            triangle_instance: Vec::new(),
            bvh: Bvh::build(&[]),
            diameter: 0.0,
        };
        scene.gather_triangles();
        scene.bvh = Bvh::build(&scene.triangles);
        scene.diameter = scene.compute_diameter();
        Ok(scene)
    }
}

impl Scene {
    /// Load and build a scene from a JSON file; mesh paths resolve relative
    /// to the file's directory.
    pub fn load(path: &Path) -> Result<Scene, SceneError> {
        let config = SceneConfig::read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Scene::from_config(&config, base)
    }

    pub fn from_config(config: &SceneConfig, base_dir: &Path) -> Result<Scene, SceneError> {
        let frequencies = config.frequencies.resolve()?;
        let bins = frequencies.len();
        let mut builder = SceneBuilder::new(frequencies)
            .speed_of_sound(config.speed_of_sound)
            .attenuation(config.atmospheric_attenuation.resolve(bins, "atmospheric_attenuation")?);
        for m in &config.materials {
            builder = builder.material(MaterialSpec::from_config(m, bins)?);
        }
        let mut cache: HashMap<String, Arc<TriangleMesh>> = HashMap::new();
        for inst in &config.instances {
            if !config.materials.iter().any(|m| m.id == inst.material) {
                return Err(SceneError::UnknownMaterial {
                    instance: inst.name.clone(),
                    material: inst.material.clone(),
                });
            }
            let key = inst.mesh.key();
            let mesh = match cache.get(&key) {
                Some(m) => m.clone(),
                None => {
                    let m = Arc::new(inst.mesh.load(base_dir)?);
                    cache.insert(key, m.clone());
                    m
                }
            };
            builder = builder.shared_instance(&inst.name, mesh, inst.pose, inst.scale, &inst.material);
        }
        for e in &config.emitters {
            builder = builder.emitter(Emitter::from_config(e, bins)?);
        }
        for r in &config.receivers {
            builder = builder.receiver(&r.id, r.pose);
        }
        builder.build()
    }

    fn gather_triangles(&mut self) {
        let total: usize = self.instances.iter().map(|i| i.world.triangle_count()).sum();
        self.triangles.clear();
        self.triangles.reserve(total);
        self.triangle_instance.clear();
        self.triangle_instance.reserve(total);
        for (k, inst) in self.instances.iter().enumerate() {
            for t in 0..inst.world.triangle_count() {
                self.triangles.push(inst.world.corners(t));
                self.triangle_instance.push(k as u32);
            }
        }
    }

    /// Twice the largest distance from the centroid of all geometry and
    /// transducers. Unlike a bounding-box diagonal this does not change when
    /// the whole scene is rotated.
    fn compute_diameter(&self) -> f64 {
        let points: Vec<Vec3> = self
            .triangles
            .iter()
            .flat_map(|t| t.iter().copied())
            .chain(self.emitters.iter().map(|e| e.pose.position))
            .chain(self.receivers.iter().map(|r| r.pose.position))
            .collect();
        if points.is_empty() {
            return 0.0;
        }
        let centroid = points.iter().sum::<Vec3>() / points.len() as f64;
        let d = 2.0 * points.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max);
        if d.is_finite() {
            d
        } else {
            0.0
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn speed_of_sound(&self) -> f64 {
        self.speed_of_sound
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn bins(&self) -> usize {
        self.frequencies.len()
    }

    /// Atmospheric absorption per bin, dB/m.
    pub fn attenuation(&self) -> &[f64] {
        &self.attenuation
    }

    pub fn materials(&self) -> &[MaterialSpec] {
        &self.materials
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn emitters(&self) -> &[Emitter] {
        &self.emitters
    }

    pub fn receivers(&self) -> &[Receiver] {
        &self.receivers
    }

    /// World-space triangle soup indexed by global triangle id.
    pub fn triangles(&self) -> &[[Vec3; 3]] {
        &self.triangles
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn instance_of(&self, triangle: u32) -> u32 {
        self.triangle_instance[triangle as usize]
    }

    /// Instance and local triangle index of a global triangle id.
    pub fn locate(&self, triangle: u32) -> (&Instance, usize) {
        let inst = &self.instances[self.triangle_instance[triangle as usize] as usize];
        (inst, (triangle - inst.first_triangle) as usize)
    }

    pub fn triangle_normal(&self, triangle: u32) -> Vec3 {
        let (inst, local) = self.locate(triangle);
        inst.world.normals()[local]
    }

    pub fn material_of(&self, triangle: u32) -> &MaterialSpec {
        let (inst, _) = self.locate(triangle);
        &self.materials[inst.material]
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Offset used to lift ray origins off surfaces.
    pub fn epsilon(&self) -> f64 {
        let d = if self.diameter > 0.0 { self.diameter } else { 1.0 };
        RELATIVE_EPSILON * d
    }

    /// Nearest hit along `origin + t·dir` for `0 < t <= t_max`.
    pub fn intersect(&self, origin: &Vec3, dir: &Vec3, t_max: f64) -> Option<RayHit> {
        self.bvh.nearest(&self.triangles, origin, dir, t_max)
    }

    /// True when the open segment `(a, b)`, shortened by [`Scene::epsilon`]
    /// at both ends, crosses no triangle.
    pub fn line_of_sight(&self, a: &Vec3, b: &Vec3) -> bool {
        let delta = b - a;
        let len = delta.norm();
        let eps = self.epsilon();
        if len <= 2.0 * eps {
            return true;
        }
        let dir = delta / len;
        let start = a + dir * eps;
        !self.bvh.any_hit(&self.triangles, &start, &dir, len - 2.0 * eps)
    }

    pub fn entity(&self, id: &str) -> Option<Entity> {
        if let Some(i) = self.instances.iter().position(|x| x.name == id) {
            return Some(Entity::Instance(i));
        }
        if let Some(i) = self.emitters.iter().position(|x| x.id == id) {
            return Some(Entity::Emitter(i));
        }
        self.receivers.iter().position(|x| x.id == id).map(Entity::Receiver)
    }

    pub fn pose_of(&self, entity: Entity) -> Pose {
        match entity {
            Entity::Instance(i) => self.instances[i].pose,
            Entity::Emitter(i) => self.emitters[i].pose,
            Entity::Receiver(i) => self.receivers[i].pose,
        }
    }

    /// A new revision with one entity moved. Geometry changes refit the BVH.
    pub fn with_pose(&self, id: &str, pose: Pose) -> Result<Scene, SceneError> {
        let entity = self.entity(id).ok_or_else(|| SceneError::UnknownEntity(id.to_string()))?;
        let mut next = self.clone();
        next.revision = self.revision + 1;
        match entity {
            Entity::Instance(i) => {
                let inst = &mut next.instances[i];
                inst.pose = pose;
                inst.world = Instance::place(&inst.source, &pose, inst.scale);
                let range = inst.triangle_range();
                for (t, slot) in range.clone().zip(next.triangles[range].iter_mut()) {
                    *slot = next.instances[i].world.corners(t - next.instances[i].first_triangle as usize);
                }
                next.bvh.refit(&next.triangles);
            }
            Entity::Emitter(i) => next.emitters[i].pose = pose,
            Entity::Receiver(i) => next.receivers[i].pose = pose,
        }
        next.diameter = next.compute_diameter();
        Ok(next)
    }

    pub fn summary(&self) -> SceneSummary {
        SceneSummary {
            revision: self.revision,
            speed_of_sound: self.speed_of_sound,
            frequencies: self.frequencies.clone(),
            atmospheric_attenuation: self.attenuation.clone(),
            materials: self.materials.clone(),
            instances: self
                .instances
                .iter()
                .map(|i| InstanceSummary {
                    name: i.name.clone(),
                    material: self.materials[i.material].id.clone(),
                    triangles: i.world.triangle_count() as u64,
                    pose: i.pose,
                    scale: i.scale,
                })
                .collect(),
            emitters: self.emitters.clone(),
            receivers: self.receivers.clone(),
        }
    }
}

/// The scene summary returned by `GET_CONFIG`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSummary {
    pub revision: u64,
    pub speed_of_sound: f64,
    pub frequencies: Vec<f64>,
    pub atmospheric_attenuation: Vec<f64>,
    pub materials: Vec<MaterialSpec>,
    pub instances: Vec<InstanceSummary>,
    pub emitters: Vec<Emitter>,
    pub receivers: Vec<Receiver>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub name: String,
    pub material: String,
    pub triangles: u64,
    pub pose: Pose,
    pub scale: f64,
}
