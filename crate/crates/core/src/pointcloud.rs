//! Binary point-cloud format for a [`ContributionSet`].
//!
//! Little-endian throughout. A 72-byte header
//!
//! | offset | type | field |
//! |---|---|---|
//! | 0 | `[u8; 4]` | magic `"STPC"` |
//! | 4 | `u16` | format version (1) |
//! | 6 | `u16` | component flags (1 specular, 2 diffraction, 4 passive) |
//! | 8 | `u64` | scene revision |
//! | 16 | `u64` | seed |
//! | 24 | `u64` | N, specular points |
//! | 32 | `u64` | O, diffraction points |
//! | 40 | `u32` | S, sources |
//! | 44 | `u32` | R, receivers |
//! | 48 | `u32` | F, frequency bins |
//! | 52 | `u32` | reserved (0) |
//! | 56 | `f64` | speed of sound, m/s |
//! | 64 | `u64` | record count |
//!
//! is followed by `F` bin frequencies as `f64`, then `record count` records
//! of `45 + 4·F` bytes: `kind: u8, s: u32, m: u32, position: 3×f64,
//! r: f64, index: u32, M: F×f32`.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::acoustics::{Components, Contribution, ContributionKind, ContributionSet};
use crate::mesh::Vec3;

pub const MAGIC: [u8; 4] = *b"STPC";
pub const VERSION: u16 = 1;
pub const HEADER_BYTES: usize = 72;

pub fn record_bytes(bins: usize) -> usize {
    45 + 4 * bins
}

#[derive(Debug, thiserror::Error)]
pub enum PointCloudError {
    #[error("not a point cloud (bad magic)")]
    BadMagic,
    #[error("unsupported point cloud version {0}")]
    Version(u16),
    #[error("unknown contribution kind {0}")]
    BadKind(u8),
    #[error("point cloud is truncated or unreadable: {0}")]
    Io(#[from] io::Error),
}

/// Encode a contribution set.
pub fn write_point_cloud<W: Write>(set: &ContributionSet, w: W) -> io::Result<()> {
    let mut w = io::BufWriter::new(w);
    let f = set.frequencies.len();
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&set.components.bits().to_le_bytes())?;
    w.write_all(&set.revision.to_le_bytes())?;
    w.write_all(&set.seed.to_le_bytes())?;
    w.write_all(&set.specular_points.to_le_bytes())?;
    w.write_all(&set.diffraction_points.to_le_bytes())?;
    w.write_all(&set.sources.to_le_bytes())?;
    w.write_all(&set.receivers.to_le_bytes())?;
    w.write_all(&(f as u32).to_le_bytes())?;
    w.write_all(&0u32.to_le_bytes())?;
    w.write_all(&set.speed_of_sound.to_le_bytes())?;
    w.write_all(&(set.contributions.len() as u64).to_le_bytes())?;
    for x in &set.frequencies {
        w.write_all(&x.to_le_bytes())?;
    }
    for c in &set.contributions {
        debug_assert_eq!(c.magnitudes.len(), f);
        w.write_all(&[c.kind as u8])?;
        w.write_all(&c.source.to_le_bytes())?;
        w.write_all(&c.receiver.to_le_bytes())?;
        for x in c.position.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&c.path_length.to_le_bytes())?;
        w.write_all(&c.index.to_le_bytes())?;
        for m in &c.magnitudes {
            w.write_all(&m.to_le_bytes())?;
        }
    }
    w.flush()
}

/// Encode into a byte vector.
pub fn to_bytes(set: &ContributionSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(
        HEADER_BYTES + 8 * set.frequencies.len() + set.contributions.len() * record_bytes(set.frequencies.len()),
    );
    write_point_cloud(set, &mut out).expect("writing to memory cannot fail");
    out
}

struct Le<R>(R);

impl<R: Read> Le<R> {
    fn bytes<const N: usize>(&mut self) -> io::Result<[u8; N]> {
        let mut b = [0u8; N];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn u8(&mut self) -> io::Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u16(&mut self) -> io::Result<u16> {
        self.bytes().map(u16::from_le_bytes)
    }
    fn u32(&mut self) -> io::Result<u32> {
        self.bytes().map(u32::from_le_bytes)
    }
    fn u64(&mut self) -> io::Result<u64> {
        self.bytes().map(u64::from_le_bytes)
    }
    fn f32(&mut self) -> io::Result<f32> {
        self.bytes().map(f32::from_le_bytes)
    }
    fn f64(&mut self) -> io::Result<f64> {
        self.bytes().map(f64::from_le_bytes)
    }
}

/// Decode a contribution set.
pub fn read_point_cloud<R: Read>(r: R) -> Result<ContributionSet, PointCloudError> {
    let mut r = Le(io::BufReader::new(r));
    if r.bytes::<4>()? != MAGIC {
        return Err(PointCloudError::BadMagic);
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(PointCloudError::Version(version));
    }
    let components = Components(r.u16()?);
    let revision = r.u64()?;
    let seed = r.u64()?;
    let specular_points = r.u64()?;
    let diffraction_points = r.u64()?;
    let sources = r.u32()?;
    let receivers = r.u32()?;
    let bins = r.u32()? as usize;
    let _reserved = r.u32()?;
    let speed_of_sound = r.f64()?;
    let count = r.u64()?;
    let frequencies = (0..bins).map(|_| r.f64()).collect::<io::Result<Vec<_>>>()?;
    let mut contributions = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let raw = r.u8()?;
        let kind = ContributionKind::try_from(raw).map_err(PointCloudError::BadKind)?;
        let source = r.u32()?;
        let receiver = r.u32()?;
        let position = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
        let path_length = r.f64()?;
        let index = r.u32()?;
        let magnitudes = (0..bins).map(|_| r.f32()).collect::<io::Result<Vec<_>>>()?;
        contributions.push(Contribution {
            kind,
            source,
            receiver,
            position,
            path_length,
            index,
            magnitudes,
        });
    }
    Ok(ContributionSet {
        revision,
        seed,
        components,
        specular_points,
        diffraction_points,
        sources,
        receivers,
        frequencies,
        speed_of_sound,
        contributions,
    })
}

/// Sidecar description written next to every point-cloud file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloudMeta {
    pub format: String,
    pub version: u16,
    pub seed: u64,
    pub revision: u64,
    pub specular: bool,
    pub diffraction: bool,
    pub passive: bool,
    pub specular_points: u64,
    pub diffraction_points: u64,
    pub sources: u32,
    pub receivers: u32,
    pub frequencies: Vec<f64>,
    pub speed_of_sound: f64,
    pub records: u64,
    pub record_bytes: usize,
}

impl PointCloudMeta {
    pub fn describe(set: &ContributionSet) -> Self {
        PointCloudMeta {
            format: "echotrace-pointcloud".into(),
            version: VERSION,
            seed: set.seed,
            revision: set.revision,
            specular: set.components.contains(Components::SPECULAR),
            diffraction: set.components.contains(Components::DIFFRACTION),
            passive: set.components.contains(Components::PASSIVE),
            specular_points: set.specular_points,
            diffraction_points: set.diffraction_points,
            sources: set.sources,
            receivers: set.receivers,
            frequencies: set.frequencies.clone(),
            speed_of_sound: set.speed_of_sound,
            records: set.contributions.len() as u64,
            record_bytes: record_bytes(set.frequencies.len()),
        }
    }
}
