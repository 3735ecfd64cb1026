//! Shoebox room acoustics: image-method impulse responses, convolution of a
//! dry source into per-node observations, and the early/late split used to
//! build the dereverberation target.

use std::f64::consts::PI;

use rayon::prelude::*;
use realfft::RealFftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SPEED_OF_SOUND: f64 = 343.0;
const CALIBRATION_STEPS: usize = 8;
const CALIBRATION_TOLERANCE: f64 = 0.01;

/// Geometry and acoustics of a simulated recording. Every microphone is an
/// independent network node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomScenario {
    pub id: String,
    /// Room size in meters.
    pub room_dims: [f64; 3],
    pub source_pos: [f64; 3],
    pub mic_positions: Vec<[f64; 3]>,
    /// Reverberation time in seconds.
    pub t60_target: f64,
    pub sample_rate: u32,
    /// Impulse response length in samples.
    pub rir_length: usize,
    /// Uniform wall absorption. Derived from `t60_target` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub absorption: Option<f64>,
}

impl RoomScenario {
    /// Twelve single-microphone nodes arranged as four three-element linear
    /// arrays around a talker, T60 of 0.83 s.
    ///
    /// The geometry approximates the drawing of the reference setup; exact
    /// coordinates were never published.
    pub fn default_simulated() -> Self {
        let spacing = 0.1;
        let mut mics = Vec::with_capacity(12);
        // Array 1, along x near the front-left corner.
        for i in -1..=1 {
            mics.push([1.5 + spacing * i as f64, 1.2, 1.2]);
        }
        // Array 2, along y near the right wall.
        for i in -1..=1 {
            mics.push([5.8, 1.6 + spacing * i as f64, 1.2]);
        }
        // Array 3, along x near the back-right corner.
        for i in -1..=1 {
            mics.push([5.2 + spacing * i as f64, 4.9, 1.2]);
        }
        // Array 4, along y near the left wall.
        for i in -1..=1 {
            mics.push([1.1, 4.4 + spacing * i as f64, 1.2]);
        }
        Self {
            id: "sim12-approx".to_string(),
            room_dims: [7.0, 6.0, 3.0],
            source_pos: [3.6, 2.9, 1.6],
            mic_positions: mics,
            t60_target: 0.83,
            sample_rate: 16_000,
            rir_length: 13_280,
            absorption: None,
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Self =
            toml::from_str(text).map_err(|e| Error::Config(format!("scenario file: {e}")))?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn n_mics(&self) -> usize {
        self.mic_positions.len()
    }

    /// Keeps only the listed microphones, in the given order.
    pub fn subset(&self, mics: &[usize]) -> Result<Self> {
        let mut out = self.clone();
        out.mic_positions = mics
            .iter()
            .map(|&m| {
                self.mic_positions.get(m).copied().ok_or_else(|| {
                    Error::InvalidInput(format!(
                        "microphone {m} out of range for {} mics",
                        self.n_mics()
                    ))
                })
            })
            .collect::<Result<_>>()?;
        out.id = format!("{}-sub{}", self.id, mics.len());
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.room_dims.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(Error::Config(format!(
                "room dimensions must be positive, got {:?}",
                self.room_dims
            )));
        }
        let inside = |p: &[f64; 3]| {
            p.iter()
                .zip(self.room_dims.iter())
                .all(|(&x, &d)| x > 0.0 && x < d)
        };
        if !inside(&self.source_pos) {
            return Err(Error::Config(format!(
                "source {:?} is not strictly inside the room",
                self.source_pos
            )));
        }
        if self.mic_positions.is_empty() {
            return Err(Error::Config("scenario needs at least one microphone".into()));
        }
        for (i, p) in self.mic_positions.iter().enumerate() {
            if !inside(p) {
                return Err(Error::Config(format!(
                    "microphone {i} at {p:?} is not strictly inside the room"
                )));
            }
            if distance(p, &self.source_pos) == 0.0 {
                return Err(Error::Config(format!("microphone {i} coincides with the source")));
            }
        }
        if !(self.t60_target.is_finite() && self.t60_target > 0.0) {
            return Err(Error::Config(format!(
                "t60_target must be positive, got {}",
                self.t60_target
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        let min_len = (self.sample_rate as f64 * self.t60_target / 2.0).ceil() as usize;
        if self.rir_length < min_len {
            return Err(Error::Config(format!(
                "rir_length {} is shorter than half the reverberation time ({min_len} samples)",
                self.rir_length
            )));
        }
        if let Some(a) = self.absorption {
            if !(0.0..=1.0).contains(&a) {
                return Err(Error::Config(format!("absorption must lie in [0, 1], got {a}")));
            }
        }
        Ok(())
    }

    /// Uniform wall absorption from Sabine's formula for `t60_target`.
    pub fn sabine_absorption(&self) -> Result<f64> {
        let [lx, ly, lz] = self.room_dims;
        let volume = lx * ly * lz;
        let surface = 2.0 * (lx * ly + lx * lz + ly * lz);
        let alpha = 24.0 * 10f64.ln() * volume / (SPEED_OF_SOUND * surface * self.t60_target);
        if alpha > 1.0 {
            return Err(Error::Config(format!(
                "T60 of {} s is unreachable in a {lx}x{ly}x{lz} m room (absorption {alpha:.3} > 1)",
                self.t60_target
            )));
        }
        Ok(alpha)
    }

    /// Wall absorption used for synthesis: the explicit override if set,
    /// otherwise the Sabine value refined until the Schroeder T60 of the
    /// first microphone's response matches `t60_target`.
    ///
    /// Image-method responses in a shoebox decay more slowly than the
    /// diffuse-field formula predicts, so the Sabine value alone overshoots
    /// the target reverberation time.
    pub fn absorption(&self) -> Result<f64> {
        if let Some(a) = self.absorption {
            return Ok(a);
        }
        let mut alpha = self.sabine_absorption()?;
        let mut probe = self.clone();
        for _ in 0..CALIBRATION_STEPS {
            probe.absorption = Some(alpha);
            let Some(t60) = estimate_t60(&image_method_rir(&probe, 0)?) else {
                break;
            };
            let ratio = t60 / self.t60_target;
            if (ratio - 1.0).abs() <= CALIBRATION_TOLERANCE {
                break;
            }
            // Energy decay rate scales with -ln(1 - alpha).
            alpha = (1.0 - (1.0 - alpha).powf(ratio)).clamp(f64::MIN_POSITIVE, 1.0);
        }
        Ok(alpha)
    }

    /// The scenario with its synthesis absorption resolved and stored.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        out.absorption = Some(self.absorption()?);
        Ok(out)
    }

    /// Pressure reflection coefficient shared by all six walls.
    pub fn reflection_coefficient(&self) -> Result<f64> {
        Ok((1.0 - self.absorption()?).sqrt())
    }

    /// Direct-path delay to a microphone, rounded to whole samples.
    pub fn direct_delay(&self, mic_index: usize) -> Result<usize> {
        let mic = self.mic(mic_index)?;
        let d = distance(mic, &self.source_pos);
        Ok((d / SPEED_OF_SOUND * self.sample_rate as f64).round() as usize)
    }

    fn mic(&self, mic_index: usize) -> Result<&[f64; 3]> {
        self.mic_positions.get(mic_index).ok_or_else(|| {
            Error::InvalidInput(format!(
                "microphone {mic_index} out of range for {} mics",
                self.n_mics()
            ))
        })
    }

    /// Impulse responses for all microphones, computed concurrently.
    pub fn all_rirs(&self) -> Result<Vec<ImpulseResponse>> {
        let resolved = self.resolved()?;
        (0..self.n_mics())
            .into_par_iter()
            .map(|m| image_method_rir(&resolved, m))
            .collect()
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A room impulse response. `taps[0]` sits at sample `offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
    pub offset: usize,
}

impl ImpulseResponse {
    pub fn new(taps: Vec<f64>, sample_rate: u32) -> Self {
        Self {
            taps,
            sample_rate,
            offset: 0,
        }
    }

    /// Total span in samples, including the leading offset.
    pub fn len(&self) -> usize {
        self.offset + self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|h| h * h).sum()
    }
}

/// Per-axis image offsets: (source image minus mic coordinate, reflection count).
fn axis_images(src: f64, mic: f64, size: f64, max_dist: f64) -> Vec<(f64, i32)> {
    let n_max = (max_dist / (2.0 * size)).ceil() as i32 + 1;
    let mut out = Vec::new();
    for m in -n_max..=n_max {
        for q in 0..2 {
            let delta = (1 - 2 * q) as f64 * src + 2.0 * m as f64 * size - mic;
            if delta.abs() <= max_dist {
                out.push((delta, (m - q).abs() + m.abs()));
            }
        }
    }
    out
}

/// Image-method impulse response from the source to microphone `mic_index`.
///
/// Every image contributes `beta^reflections / (4 pi r)` at the nearest
/// sample of its propagation delay.
pub fn image_method_rir(scenario: &RoomScenario, mic_index: usize) -> Result<ImpulseResponse> {
    scenario.validate()?;
    let mic = *scenario.mic(mic_index)?;
    let beta = scenario.reflection_coefficient()?;
    let fs = scenario.sample_rate as f64;
    let len = scenario.rir_length;
    let max_dist = len as f64 / fs * SPEED_OF_SOUND;

    let xs = axis_images(scenario.source_pos[0], mic[0], scenario.room_dims[0], max_dist);
    let ys = axis_images(scenario.source_pos[1], mic[1], scenario.room_dims[1], max_dist);
    let zs = axis_images(scenario.source_pos[2], mic[2], scenario.room_dims[2], max_dist);

    let max_order = xs
        .iter()
        .chain(ys.iter())
        .chain(zs.iter())
        .map(|&(_, r)| r)
        .max()
        .unwrap_or(0) as usize
        * 3;
    let gains: Vec<f64> = (0..=max_order).map(|r| beta.powi(r as i32)).collect();

    let mut taps = vec![0.0; len];
    for &(dx, rx) in &xs {
        for &(dy, ry) in &ys {
            let dxy = dx * dx + dy * dy;
            if dxy > max_dist * max_dist {
                continue;
            }
            for &(dz, rz) in &zs {
                let r = (dxy + dz * dz).sqrt();
                let delay = (r / SPEED_OF_SOUND * fs).round() as usize;
                if delay >= len {
                    continue;
                }
                let gain = gains[(rx + ry + rz) as usize];
                if gain == 0.0 {
                    continue;
                }
                taps[delay] += gain / (4.0 * PI * r);
            }
        }
    }
    Ok(ImpulseResponse::new(taps, scenario.sample_rate))
}

/// Reverberation time from the Schroeder energy-decay curve, extrapolated
/// from the -5 dB to -25 dB range.
pub fn estimate_t60(rir: &ImpulseResponse) -> Option<f64> {
    let energy: Vec<f64> = rir.taps.iter().map(|h| h * h).collect();
    let mut edc = vec![0.0; energy.len()];
    let mut acc = 0.0;
    for i in (0..energy.len()).rev() {
        acc += energy[i];
        edc[i] = acc;
    }
    let total = *edc.first()?;
    if total <= 0.0 {
        return None;
    }
    let fs = rir.sample_rate as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut reached = false;
    for (i, e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if db <= -25.0 {
            reached = true;
            break;
        }
        if db <= -5.0 {
            let t = i as f64 / fs;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
            n += 1.0;
        }
    }
    if !reached || n < 2.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if slope >= 0.0 {
        return None;
    }
    Some(-60.0 / slope)
}

/// Splits a response into the taps before `boundary` and the rest.
pub fn split_early_late(
    rir: &ImpulseResponse,
    boundary: usize,
) -> Result<(ImpulseResponse, ImpulseResponse)> {
    if rir.offset != 0 {
        return Err(Error::InvalidInput("can only split a response starting at sample 0".into()));
    }
    if boundary == 0 || boundary >= rir.taps.len() {
        return Err(Error::InvalidInput(format!(
            "split boundary {boundary} outside (0, {})",
            rir.taps.len()
        )));
    }
    let early = ImpulseResponse::new(rir.taps[..boundary].to_vec(), rir.sample_rate);
    let late = ImpulseResponse {
        taps: rir.taps[boundary..].to_vec(),
        sample_rate: rir.sample_rate,
        offset: boundary,
    };
    Ok((early, late))
}

/// Convolves a dry signal with an impulse response, keeping the first
/// `clean.len()` output samples so the observation stays time-aligned with
/// the source.
pub fn render_observation(
    clean: &[f64],
    clean_rate: u32,
    rir: &ImpulseResponse,
) -> Result<Vec<f64>> {
    if clean.is_empty() || rir.is_empty() {
        return Err(Error::InvalidInput("convolution inputs must be non-empty".into()));
    }
    if clean_rate != rir.sample_rate {
        return Err(Error::InvalidInput(format!(
            "signal at {clean_rate} Hz cannot be convolved with a {} Hz response",
            rir.sample_rate
        )));
    }
    let out_len = clean.len();
    let mut out = vec![0.0; out_len];
    if rir.offset >= out_len {
        return Ok(out);
    }
    let taps = &rir.taps[..rir.taps.len().min(out_len - rir.offset)];
    let conv = fft_convolve(clean, taps)?;
    for (o, c) in out[rir.offset..].iter_mut().zip(conv.iter()) {
        *o = *c;
    }
    Ok(out)
}

/// Full linear convolution through a zero-padded real FFT.
fn fft_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let full = a.len() + b.len() - 1;
    let size = full.next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);

    let mut pa = vec![0.0; size];
    pa[..a.len()].copy_from_slice(a);
    let mut pb = vec![0.0; size];
    pb[..b.len()].copy_from_slice(b);
    let mut fa = fwd.make_output_vec();
    let mut fb = fwd.make_output_vec();
    let fft_err = |e: realfft::FftError| Error::Numerical(format!("convolution FFT failed: {e}"));
    fwd.process(&mut pa, &mut fa).map_err(fft_err)?;
    fwd.process(&mut pb, &mut fb).map_err(fft_err)?;
    for (x, y) in fa.iter_mut().zip(fb.iter()) {
        *x *= y;
    }
    let last = fa.len() - 1;
    fa[0].im = 0.0;
    fa[last].im = 0.0;
    let mut out = inv.make_output_vec();
    inv.process(&mut fa, &mut out).map_err(fft_err)?;
    let scale = 1.0 / size as f64;
    out.truncate(full);
    out.iter_mut().for_each(|x| *x *= scale);
    Ok(out)
}
