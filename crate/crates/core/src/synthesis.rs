//! From per-bin magnitudes to time signals.
//!
//! Each contribution becomes a spectrum on a dense FFT grid: its coarse-bin
//! magnitudes are linearly interpolated (flat outside the coarse range) and
//! multiplied by the delay phase `e^{−jωr/c}`. Spectra of one
//! source-receiver pair are summed, made Hermitian, and inverted into a real
//! impulse response, which is then convolved with the emitted waveform.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::acoustics::{Contribution, ContributionSet};
use crate::directivity::GainTable;
use crate::scene::Scene;

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("FFT length must be a power of two >= 2, got {0}")]
    FftLength(usize),
    #[error("sample rate must be finite and > 0, got {0}")]
    SampleRate(f64),
    #[error("sample rate {fs} Hz does not exceed twice the highest bin {max_bin} Hz")]
    Undersampled { fs: f64, max_bin: f64 },
    #[error("delay {delay_s} s does not fit in the {span_s} s grid span")]
    AliasRisk { delay_s: f64, span_s: f64 },
    #[error("spectra are on different grids")]
    GridMismatch,
    #[error("sample rates differ: {0} Hz vs {1} Hz")]
    RateMismatch(f64, f64),
    #[error("{got} magnitudes for {expected} frequency bins")]
    BinCount { got: usize, expected: usize },
    #[error("signals to sum have different lengths")]
    LengthMismatch,
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Dense transform grid: `fft_len` bins spaced `fs / fft_len` apart.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralGrid {
    pub fs: f64,
    pub fft_len: usize,
}

impl SpectralGrid {
    pub fn new(fs: f64, fft_len: usize) -> Result<Self, SynthesisError> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(SynthesisError::SampleRate(fs));
        }
        if fft_len < 2 || !fft_len.is_power_of_two() {
            return Err(SynthesisError::FftLength(fft_len));
        }
        Ok(SpectralGrid { fs, fft_len })
    }

    /// Smallest power-of-two grid at `fs` whose span holds `max_delay`
    /// seconds of propagation plus `signal_len` samples of emitted waveform.
    pub fn covering(fs: f64, max_delay: f64, signal_len: usize) -> Result<Self, SynthesisError> {
        if !(fs.is_finite() && fs > 0.0) {
            return Err(SynthesisError::SampleRate(fs));
        }
        let needed = (max_delay * fs).floor() as usize + 1 + signal_len;
        SpectralGrid::new(fs, needed.max(2).next_power_of_two())
    }

    /// Grid for a simulation result: the delay budget is the larger of the
    /// round trip over the longest emitter range and the longest path found.
    pub fn for_scene(scene: &Scene, set: &ContributionSet, fs: f64, signal_len: usize) -> Result<Self, SynthesisError> {
        let range = scene.emitters().iter().map(|e| e.max_distance).fold(0.0, f64::max);
        let longest = (2.0 * range).max(set.max_path_length());
        let grid = SpectralGrid::covering(fs, longest / scene.speed_of_sound(), signal_len)?;
        grid.check_bins(scene.frequencies())?;
        Ok(grid)
    }

    /// Sample rate used when none is given: four times the highest bin.
    pub fn default_rate(frequencies: &[f64]) -> f64 {
        4.0 * frequencies.iter().copied().fold(0.0, f64::max)
    }

    /// Check that the grid resolves the highest coarse bin.
    pub fn check_bins(&self, frequencies: &[f64]) -> Result<(), SynthesisError> {
        let max_bin = frequencies.iter().copied().fold(0.0, f64::max);
        if self.fs > 2.0 * max_bin {
            Ok(())
        } else {
            Err(SynthesisError::Undersampled { fs: self.fs, max_bin })
        }
    }

    pub fn span(&self) -> f64 {
        self.fft_len as f64 / self.fs
    }

    pub fn frequency(&self, j: usize) -> f64 {
        j as f64 * self.fs / self.fft_len as f64
    }

    /// Bins `0..=N/2`; the rest follow by conjugate symmetry.
    pub fn half_len(&self) -> usize {
        self.fft_len / 2 + 1
    }
}

/// Linear interpolation of `values` given at increasing `freqs`, held flat
/// outside the covered range.
pub fn interpolate(freqs: &[f64], values: &[f64], f: f64) -> f64 {
    let last = freqs.len() - 1;
    if f <= freqs[0] {
        return values[0];
    }
    if f >= freqs[last] {
        return values[last];
    }
    let hi = freqs.partition_point(|&x| x <= f);
    let lo = hi - 1;
    let t = (f - freqs[lo]) / (freqs[hi] - freqs[lo]);
    values[lo] + (values[hi] - values[lo]) * t
}

/// Non-negative-frequency half of a real signal's spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub grid: SpectralGrid,
    /// Bins `0..=N/2`; DC and Nyquist are real.
    pub half: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: SpectralGrid) -> Self {
        Spectrum {
            grid,
            half: vec![Complex64::new(0.0, 0.0); grid.half_len()],
        }
    }

    /// All `N` bins, with `H[N−j] = conj(H[j])`.
    pub fn full(&self) -> Vec<Complex64> {
        let n = self.grid.fft_len;
        let mut out = Vec::with_capacity(n);
        out.extend_from_slice(&self.half);
        out.extend((1..n / 2).rev().map(|j| self.half[j].conj()));
        out
    }

    pub fn add(&mut self, other: &Spectrum) -> Result<(), SynthesisError> {
        if other.grid != self.grid {
            return Err(SynthesisError::GridMismatch);
        }
        for (a, b) in self.half.iter_mut().zip(&other.half) {
            *a += b;
        }
        Ok(())
    }
}

/// Add the spectrum of one delayed, band-shaped contribution to `acc`.
fn accumulate(
    acc: &mut [Complex64],
    magnitudes: &[f32],
    path_length: f64,
    frequencies: &[f64],
    grid: &SpectralGrid,
    speed_of_sound: f64,
) -> Result<(), SynthesisError> {
    if magnitudes.len() != frequencies.len() {
        return Err(SynthesisError::BinCount {
            got: magnitudes.len(),
            expected: frequencies.len(),
        });
    }
    let delay = path_length / speed_of_sound;
    if delay * grid.fs >= grid.fft_len as f64 {
        return Err(SynthesisError::AliasRisk {
            delay_s: delay,
            span_s: grid.span(),
        });
    }
    let m: Vec<f64> = magnitudes.iter().map(|&x| x as f64).collect();
    let nyquist = grid.fft_len / 2;
    for (j, slot) in acc.iter_mut().enumerate() {
        let f = grid.frequency(j);
        let a = interpolate(frequencies, &m, f);
        let (s, c) = (-2.0 * PI * f * delay).sin_cos();
        *slot += if j == 0 || j == nyquist {
            Complex64::new(a * c, 0.0)
        } else {
            Complex64::new(a * c, a * s)
        };
    }
    Ok(())
}

/// Transfer function `H(f) = M(f)·e^{−j2πf·r/c}` of one contribution.
pub fn transfer_function(
    contribution: &Contribution,
    frequencies: &[f64],
    grid: &SpectralGrid,
    speed_of_sound: f64,
) -> Result<Spectrum, SynthesisError> {
    let mut s = Spectrum::zeros(*grid);
    accumulate(
        &mut s.half,
        &contribution.magnitudes,
        contribution.path_length,
        frequencies,
        grid,
        speed_of_sound,
    )?;
    Ok(s)
}

fn inverse_planner(n: usize) -> Arc<dyn Fft<f64>> {
    FftPlanner::new().plan_fft_inverse(n)
}

/// Real inverse transform with `1/N` normalization.
pub fn inverse_real(spectrum: &Spectrum) -> Vec<f64> {
    let n = spectrum.grid.fft_len;
    let mut buf = spectrum.full();
    inverse_planner(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter().map(|c| c.re * scale).collect()
}

/// Forward transform of a real signal, zero-padded or cut to the grid length.
pub fn forward_real(samples: &[f64], grid: SpectralGrid) -> Spectrum {
    let n = grid.fft_len;
    let mut buf: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(samples.get(i).copied().unwrap_or(0.0), 0.0))
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    buf.truncate(grid.half_len());
    Spectrum { grid, half: buf }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpulseResponse {
    pub source: u32,
    pub receiver: u32,
    pub fs: f64,
    pub samples: Vec<f64>,
}

/// Impulse response from the sum of already-computed spectra.
pub fn impulse_response(source: u32, receiver: u32, spectra: &[Spectrum], grid: SpectralGrid) -> Result<ImpulseResponse, SynthesisError> {
    let mut total = Spectrum::zeros(grid);
    for s in spectra {
        total.add(s)?;
    }
    Ok(ImpulseResponse {
        source,
        receiver,
        fs: grid.fs,
        samples: inverse_real(&total),
    })
}

/// Impulse response of one pair from its contributions: specular,
/// diffraction and passive alike are summed in the frequency domain.
pub fn pair_impulse_response(
    set: &ContributionSet,
    source: u32,
    receiver: u32,
    grid: SpectralGrid,
) -> Result<ImpulseResponse, SynthesisError> {
    let mut total = Spectrum::zeros(grid);
    for c in set.pair(source, receiver) {
        accumulate(&mut total.half, &c.magnitudes, c.path_length, &set.frequencies, &grid, set.speed_of_sound)?;
    }
    Ok(ImpulseResponse {
        source,
        receiver,
        fs: grid.fs,
        samples: inverse_real(&total),
    })
}

/// Impulse responses of every (source, receiver) pair, source-major.
pub fn all_impulse_responses(set: &ContributionSet, grid: SpectralGrid) -> Result<Vec<ImpulseResponse>, SynthesisError> {
    let pairs: Vec<(u32, u32)> = (0..set.sources)
        .flat_map(|s| (0..set.receivers).map(move |m| (s, m)))
        .collect();
    pairs
        .par_iter()
        .map(|&(s, m)| pair_impulse_response(set, s, m, grid))
        .collect()
}

/// A copy of `contribution` scaled by the gain table at the given
/// emitter-frame departure angles.
pub fn directional_gain(contribution: &Contribution, angles: (f64, f64), table: &GainTable) -> Contribution {
    let mut out = contribution.clone();
    table.apply(angles.0, angles.1, &mut out.magnitudes);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub fs: f64,
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedSignal {
    pub receiver: u32,
    pub fs: f64,
    pub samples: Vec<f64>,
}

/// Full linear convolution, computed with one FFT of adequate length.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two().max(2);
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let pad = |x: &[f64]| -> Vec<Complex64> { (0..n).map(|i| Complex64::new(x.get(i).copied().unwrap_or(0.0), 0.0)).collect() };
    let mut fa = pad(a);
    let mut fb = pad(b);
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    for (x, y) in fa.iter_mut().zip(&fb) {
        *x *= y;
    }
    inv.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Received signal `h * s_e`, length `len(h) + len(s_e) − 1`.
pub fn render_signal(h: &ImpulseResponse, emitted: &Signal) -> Result<RenderedSignal, SynthesisError> {
    if h.fs != emitted.fs {
        return Err(SynthesisError::RateMismatch(h.fs, emitted.fs));
    }
    Ok(RenderedSignal {
        receiver: h.receiver,
        fs: h.fs,
        samples: convolve(&h.samples, &emitted.samples),
    })
}

/// Sum of the renders of several sources' responses at one receiver, each
/// with its own emitted waveform.
pub fn render_receiver(responses: &[(&ImpulseResponse, &Signal)]) -> Result<RenderedSignal, SynthesisError> {
    let mut out: Option<RenderedSignal> = None;
    for (h, s) in responses {
        let r = render_signal(h, s)?;
        out = Some(match out {
            None => r,
            Some(mut acc) => {
                if acc.fs != r.fs {
                    return Err(SynthesisError::RateMismatch(acc.fs, r.fs));
                }
                if acc.samples.len() < r.samples.len() {
                    acc.samples.resize(r.samples.len(), 0.0);
                }
                for (a, b) in acc.samples.iter_mut().zip(&r.samples) {
                    *a += b;
                }
                acc
            }
        });
    }
    out.ok_or(SynthesisError::LengthMismatch)
}

/// `sin(2π(f0·t + (f1−f0)·t²/(2T)))` sampled at `fs` for `duration` seconds.
pub fn linear_chirp(f0: f64, f1: f64, duration: f64, fs: f64) -> Signal {
    let n = (duration * fs).round() as usize;
    let rate = (f1 - f0) / duration;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            (2.0 * PI * (f0 * t + 0.5 * rate * t * t)).sin()
        })
        .collect();
    Signal { fs, samples }
}

/// Periodic-free Hann window of length `n`.
pub fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Cross-correlation `y[k] = Σ x[n+k]·template[n]` for lags
/// `k = 0..x.len()`.
pub fn matched_filter(x: &[f64], template: &[f64]) -> Vec<f64> {
    if x.is_empty() || template.is_empty() {
        return vec![0.0; x.len()];
    }
    let reversed: Vec<f64> = template.iter().rev().copied().collect();
    let full = convolve(x, &reversed);
    full[template.len() - 1..template.len() - 1 + x.len()].to_vec()
}

/// Index of the largest absolute value.
pub fn peak_index(x: &[f64]) -> usize {
    x.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
        .0
}

/// Energy-weighted standard deviation of arrival time, seconds.
pub fn rms_spread(samples: &[f64], fs: f64) -> f64 {
    let energy: f64 = samples.iter().map(|x| x * x).sum();
    if energy == 0.0 {
        return 0.0;
    }
    let mean = samples.iter().enumerate().map(|(i, x)| i as f64 * x * x).sum::<f64>() / energy;
    let var = samples
        .iter()
        .enumerate()
        .map(|(i, x)| (i as f64 - mean).powi(2) * x * x)
        .sum::<f64>()
        / energy;
    var.sqrt() / fs
}

/// Short-time magnitude spectra with a Hann window.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// Frame centers, seconds.
    pub times: Vec<f64>,
    /// Bin frequencies `0..=window/2`, Hz.
    pub frequencies: Vec<f64>,
    /// `[frame][bin]` linear magnitude.
    pub magnitude: Vec<Vec<f64>>,
}

pub fn spectrogram(samples: &[f64], fs: f64, window: usize, hop: usize) -> Spectrogram {
    assert!(window >= 2 && hop >= 1, "window must be >= 2 samples and hop >= 1");
    let w = hann(window);
    let fft = FftPlanner::new().plan_fft_forward(window);
    let half = window / 2 + 1;
    let frames = if samples.len() >= window { (samples.len() - window) / hop + 1 } else { 1 };
    let mut magnitude = Vec::with_capacity(frames);
    let mut times = Vec::with_capacity(frames);
    for f in 0..frames {
        let start = f * hop;
        let mut buf: Vec<Complex64> = (0..window)
            .map(|i| Complex64::new(samples.get(start + i).copied().unwrap_or(0.0) * w[i], 0.0))
            .collect();
        fft.process(&mut buf);
        magnitude.push(buf[..half].iter().map(|c| c.norm()).collect());
        times.push((start as f64 + window as f64 / 2.0) / fs);
    }
    Spectrogram {
        times,
        frequencies: (0..half).map(|j| j as f64 * fs / window as f64).collect(),
        magnitude,
    }
}

/// `20·log10` ratio of two spectrograms of equal shape, with `floor`
/// added to both magnitudes to keep silent cells finite.
pub fn difference_db(target: &Spectrogram, baseline: &Spectrogram, floor: f64) -> Result<Vec<Vec<f64>>, SynthesisError> {
    if target.magnitude.len() != baseline.magnitude.len() || target.frequencies != baseline.frequencies {
        return Err(SynthesisError::LengthMismatch);
    }
    Ok(target
        .magnitude
        .iter()
        .zip(&baseline.magnitude)
        .map(|(t, b)| t.iter().zip(b).map(|(x, y)| 20.0 * ((x + floor) / (y + floor)).log10()).collect())
        .collect())
}

/// Write samples as a mono 32-bit float WAV.
pub fn write_wav(path: &Path, samples: &[f64], fs: f64) -> Result<(), SynthesisError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: fs.round() as u32,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &x in samples {
        w.write_sample(x as f32)?;
    }
    w.finalize()?;
    Ok(())
}

/// Read a mono WAV (float or integer PCM) as samples in `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<Signal, SynthesisError> {
    let mut r = hound::WavReader::open(path)?;
    let spec = r.spec();
    let channels = spec.channels.max(1) as usize;
    let all: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => r.samples::<f32>().map(|s| s.map(f64::from)).collect::<Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let full = (1i64 << (spec.bits_per_sample - 1)) as f64;
            r.samples::<i32>().map(|s| s.map(|v| v as f64 / full)).collect::<Result<_, _>>()?
        }
    };
    Ok(Signal {
        fs: spec.sample_rate as f64,
        samples: all.into_iter().step_by(channels).collect(),
    })
}

/// Sidecar for raw sample dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMeta {
    pub dtype: String,
    pub fs: f64,
    pub samples: usize,
    pub source: Option<u32>,
    pub receiver: u32,
    pub seed: u64,
}

/// Write samples as little-endian `f64` plus a `.json` sidecar.
pub fn write_raw(path: &Path, samples: &[f64], meta: &RawMeta) -> Result<(), SynthesisError> {
    let bytes: Vec<u8> = samples.iter().flat_map(|x| x.to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    let side = path.with_extension("json");
    std::fs::write(side, serde_json::to_vec_pretty(meta).expect("metadata serializes"))?;
    Ok(())
}
