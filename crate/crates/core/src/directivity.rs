//! Per-direction, per-bin gain tables for emitter directivity.
//!
//! Directions are expressed in the emitter frame, whose boresight is `+Z`:
//! azimuth is `atan2(x, z)` in `[-π, π]` and elevation is `asin(y)` in
//! `[-π/2, π/2]`. Gains are bilinearly interpolated between grid nodes and
//! clamped at the grid edges.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::mesh::Vec3;
use crate::scene::Pose;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GainTableError {
    #[error("gain table axis must be non-empty and strictly increasing")]
    BadAxis,
    #[error("gain table has {got} values, expected {expected}")]
    Shape { got: usize, expected: usize },
    #[error("gains must be finite and non-negative")]
    NegativeGain,
}

/// Gain on an (azimuth, elevation) grid, one value per frequency bin.
/// A table with a single bin applies the same gain to every bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GainTableRepr", into = "GainTableRepr")]
pub struct GainTable {
    azimuths: Vec<f64>,
    elevations: Vec<f64>,
    bins: usize,
    /// Indexed `[az][el][bin]`.
    gains: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum GainTableRepr {
    Unity,
    Cosine,
    Table {
        azimuths: Vec<f64>,
        elevations: Vec<f64>,
        bins: usize,
        gains: Vec<f64>,
    },
}

impl TryFrom<GainTableRepr> for GainTable {
    type Error = GainTableError;
    fn try_from(r: GainTableRepr) -> Result<Self, Self::Error> {
        match r {
            GainTableRepr::Unity => Ok(GainTable::unity()),
            GainTableRepr::Cosine => Ok(GainTable::cosine_lobe()),
            GainTableRepr::Table {
                azimuths,
                elevations,
                bins,
                gains,
            } => GainTable::new(azimuths, elevations, bins, gains),
        }
    }
}

impl From<GainTable> for GainTableRepr {
    fn from(t: GainTable) -> Self {
        GainTableRepr::Table {
            azimuths: t.azimuths,
            elevations: t.elevations,
            bins: t.bins,
            gains: t.gains,
        }
    }
}

fn strictly_increasing(v: &[f64]) -> bool {
    !v.is_empty() && v.iter().all(|x| x.is_finite()) && v.windows(2).all(|w| w[0] < w[1])
}

impl GainTable {
    pub fn new(azimuths: Vec<f64>, elevations: Vec<f64>, bins: usize, gains: Vec<f64>) -> Result<Self, GainTableError> {
        if !strictly_increasing(&azimuths) || !strictly_increasing(&elevations) || bins == 0 {
            return Err(GainTableError::BadAxis);
        }
        let expected = azimuths.len() * elevations.len() * bins;
        if gains.len() != expected {
            return Err(GainTableError::Shape {
                got: gains.len(),
                expected,
            });
        }
        if gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(GainTableError::NegativeGain);
        }
        Ok(GainTable {
            azimuths,
            elevations,
            bins,
            gains,
        })
    }

    /// Sample `f(azimuth, elevation, bin)` on a regular grid with the given
    /// number of azimuth and elevation steps covering the full sphere.
    pub fn from_fn(az_steps: usize, el_steps: usize, bins: usize, f: impl Fn(f64, f64, usize) -> f64) -> Self {
        let azimuths: Vec<f64> = (0..=az_steps).map(|i| -PI + 2.0 * PI * i as f64 / az_steps as f64).collect();
        let elevations: Vec<f64> = (0..=el_steps)
            .map(|i| -FRAC_PI_2 + PI * i as f64 / el_steps as f64)
            .collect();
        let mut gains = Vec::with_capacity(azimuths.len() * elevations.len() * bins);
        for &az in &azimuths {
            for &el in &elevations {
                gains.extend((0..bins).map(|b| f(az, el, b)));
            }
        }
        GainTable::new(azimuths, elevations, bins, gains).expect("generated gain table is valid")
    }

    pub fn unity() -> Self {
        GainTable::from_fn(1, 1, 1, |_, _, _| 1.0)
    }

    /// `max(0, cos(az)·cos(el))` on a 15° grid: the cosine of the off-axis
    /// angle, zero behind the emitter.
    pub fn cosine_lobe() -> Self {
        GainTable::from_fn(24, 12, 1, |az, el, _| (az.cos() * el.cos()).max(0.0))
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    fn at(&self, a: usize, e: usize, bin: usize) -> f64 {
        let b = if self.bins == 1 { 0 } else { bin.min(self.bins - 1) };
        self.gains[(a * self.elevations.len() + e) * self.bins + b]
    }

    /// Interpolated gain at `(azimuth, elevation)` for frequency bin `bin`.
    pub fn gain(&self, azimuth: f64, elevation: f64, bin: usize) -> f64 {
        let (a0, a1, ta) = bracket(&self.azimuths, azimuth);
        let (e0, e1, te) = bracket(&self.elevations, elevation);
        let g00 = self.at(a0, e0, bin);
        let g01 = self.at(a0, e1, bin);
        let g10 = self.at(a1, e0, bin);
        let g11 = self.at(a1, e1, bin);
        let lo = g00 + (g01 - g00) * te;
        let hi = g10 + (g11 - g10) * te;
        lo + (hi - lo) * ta
    }

    /// Multiply `magnitudes` by the interpolated gain for the given
    /// emitter-frame direction.
    pub fn apply(&self, azimuth: f64, elevation: f64, magnitudes: &mut [f32]) {
        for (bin, m) in magnitudes.iter_mut().enumerate() {
            *m = (*m as f64 * self.gain(azimuth, elevation, bin)) as f32;
        }
    }
}

fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    if axis.len() == 1 || x <= axis[0] {
        return (0, 0, 0.0);
    }
    let last = axis.len() - 1;
    if x >= axis[last] {
        return (last, last, 0.0);
    }
    let hi = axis.partition_point(|&a| a <= x).min(last);
    let lo = hi - 1;
    let t = (x - axis[lo]) / (axis[hi] - axis[lo]);
    (lo, hi, t)
}

/// Emitter-frame `(azimuth, elevation)` of a world-space departure direction.
pub fn departure_angles(frame: &Pose, direction: &Vec3) -> (f64, f64) {
    let local = frame.orientation.inverse_transform_vector(direction);
    let n = local.norm();
    if n == 0.0 {
        return (0.0, 0.0);
    }
    let local = local / n;
    (local.x.atan2(local.z), local.y.clamp(-1.0, 1.0).asin())
}
