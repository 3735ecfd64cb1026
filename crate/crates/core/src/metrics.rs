//! Objective dereverberation measures and the convergence error used for
//! round-by-round traces.
//!
//! Both quality measures work on 25 ms frames with a 10 ms hop and average
//! over frames whose reference energy is within 40 dB of the loudest frame.

use std::f64::consts::PI;

use num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

pub const LPC_ORDER: usize = 12;
pub const CD_CLAMP_DB: f64 = 10.0;
pub const FSNR_MIN_DB: f64 = -10.0;
pub const FSNR_MAX_DB: f64 = 35.0;
const FRAME_MS: f64 = 25.0;
const HOP_MS: f64 = 10.0;
const ACTIVE_RANGE_DB: f64 = 40.0;
const MEL_BANDS: usize = 25;
const BAND_WEIGHT_EXPONENT: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    /// Cepstral distance in dB, lower is better.
    pub cd: f64,
    /// Frequency-weighted segmental SNR in dB, higher is better.
    pub fsnr: f64,
}

/// Both measures of `estimate` against `reference`.
pub fn evaluate(reference: &[f64], estimate: &[f64], sample_rate: u32) -> Result<MetricReport> {
    Ok(MetricReport {
        cd: cepstral_distance(reference, estimate, sample_rate)?,
        fsnr: fw_segmental_snr(reference, estimate, sample_rate)?,
    })
}

struct Framing {
    len: usize,
    hop: usize,
}

impl Framing {
    fn new(sample_rate: u32) -> Self {
        let fs = sample_rate as f64;
        Self {
            len: (fs * FRAME_MS / 1000.0).round() as usize,
            hop: (fs * HOP_MS / 1000.0).round() as usize,
        }
    }

    fn starts(&self, total: usize) -> impl Iterator<Item = usize> {
        let hop = self.hop;
        let count = if total < self.len {
            0
        } else {
            (total - self.len) / hop + 1
        };
        (0..count).map(move |i| i * hop)
    }
}

fn check_pair(reference: &[f64], estimate: &[f64], framing: &Framing) -> Result<()> {
    if reference.len() != estimate.len() {
        return Err(Error::InvalidInput(format!(
            "reference has {} samples, estimate {}",
            reference.len(),
            estimate.len()
        )));
    }
    if reference.len() < framing.len {
        return Err(Error::UndefinedMetric(format!(
            "signals shorter than one {} sample frame",
            framing.len
        )));
    }
    Ok(())
}

/// Frame starts whose reference energy lies within the active range of the peak.
fn active_frames(reference: &[f64], framing: &Framing) -> Result<Vec<usize>> {
    let energies: Vec<(usize, f64)> = framing
        .starts(reference.len())
        .map(|s| (s, reference[s..s + framing.len].iter().map(|x| x * x).sum()))
        .collect();
    let peak = energies.iter().map(|&(_, e)| e).fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::UndefinedMetric("reference is silent".into()));
    }
    let threshold = peak * 10f64.powf(-ACTIVE_RANGE_DB / 10.0);
    Ok(energies
        .into_iter()
        .filter(|&(_, e)| e >= threshold)
        .map(|(s, _)| s)
        .collect())
}

fn hamming(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos())
        .collect()
}

/// Prediction-error filter `1 + a_1 z^-1 + ... + a_p z^-p` by Levinson-Durbin.
fn lpc(frame: &[f64], order: usize) -> Vec<f64> {
    let r: Vec<f64> = (0..=order)
        .map(|lag| frame.iter().zip(frame[lag..].iter()).map(|(a, b)| a * b).sum())
        .collect();
    let mut a = vec![0.0; order + 1];
    a[0] = 1.0;
    let mut err = r[0];
    if err <= 0.0 {
        return a;
    }
    for i in 1..=order {
        let mut acc = r[i];
        for j in 1..i {
            acc += a[j] * r[i - j];
        }
        let k = -acc / err;
        let prev = a.clone();
        for j in 1..i {
            a[j] = prev[j] + k * prev[i - j];
        }
        a[i] = k;
        err *= 1.0 - k * k;
        if err <= r[0] * 1e-12 {
            break;
        }
    }
    a
}

/// Cepstrum `c_1..c_p` of the all-pole model `1 / A(z)`.
fn lpc_cepstrum(a: &[f64]) -> Vec<f64> {
    let p = a.len() - 1;
    let mut c = vec![0.0; p + 1];
    for n in 1..=p {
        let mut acc = -a[n];
        for k in 1..n {
            acc -= (k as f64 / n as f64) * c[k] * a[n - k];
        }
        c[n] = acc;
    }
    c[1..].to_vec()
}

/// Mean LPC-cepstral distance over active frames, each frame clamped to
/// `[0, CD_CLAMP_DB]`. The gain term `c_0` is excluded.
pub fn cepstral_distance(reference: &[f64], estimate: &[f64], sample_rate: u32) -> Result<f64> {
    let framing = Framing::new(sample_rate);
    check_pair(reference, estimate, &framing)?;
    let frames = active_frames(reference, &framing)?;
    let window = hamming(framing.len);
    let scale = 10.0 / 10f64.ln() * 2f64.sqrt();
    let windowed = |x: &[f64]| -> Vec<f64> { x.iter().zip(window.iter()).map(|(a, w)| a * w).collect() };
    let total: f64 = frames
        .iter()
        .map(|&s| {
            let cr = lpc_cepstrum(&lpc(&windowed(&reference[s..s + framing.len]), LPC_ORDER));
            let ce = lpc_cepstrum(&lpc(&windowed(&estimate[s..s + framing.len]), LPC_ORDER));
            let dist = cr
                .iter()
                .zip(ce.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            (scale * dist).clamp(0.0, CD_CLAMP_DB)
        })
        .sum();
    Ok(total / frames.len() as f64)
}

/// Triangular mel filters over `n_bins` one-sided bins.
fn mel_filterbank(n_bands: usize, fft_len: usize, sample_rate: u32) -> Vec<Vec<f64>> {
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let n_bins = fft_len / 2 + 1;
    let top = mel(sample_rate as f64 / 2.0);
    let edges: Vec<f64> = (0..n_bands + 2)
        .map(|i| inv(top * i as f64 / (n_bands + 1) as f64))
        .collect();
    let bin_hz = sample_rate as f64 / fft_len as f64;
    (0..n_bands)
        .map(|b| {
            let (lo, mid, hi) = (edges[b], edges[b + 1], edges[b + 2]);
            (0..n_bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f <= lo || f >= hi {
                        0.0
                    } else if f <= mid {
                        (f - lo) / (mid - lo)
                    } else {
                        (hi - f) / (hi - mid)
                    }
                })
                .collect()
        })
        .collect()
}

/// Frequency-weighted segmental SNR.
///
/// Per frame and mel band, the SNR compares reference power with the power
/// of the complex spectral error and is clamped to
/// `[FSNR_MIN_DB, FSNR_MAX_DB]`; bands are weighted by reference magnitude
/// raised to 0.2 and the frame values averaged over active frames.
pub fn fw_segmental_snr(reference: &[f64], estimate: &[f64], sample_rate: u32) -> Result<f64> {
    let framing = Framing::new(sample_rate);
    check_pair(reference, estimate, &framing)?;
    let frames = active_frames(reference, &framing)?;
    let fft_len = framing.len.next_power_of_two();
    let bank = mel_filterbank(MEL_BANDS, fft_len, sample_rate);
    let window: Vec<f64> = (0..framing.len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / framing.len as f64).cos())
        .collect();

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(fft_len);
    let mut buf = fft.make_input_vec();
    let mut ref_spec = fft.make_output_vec();
    let mut est_spec = fft.make_output_vec();
    let mut analyse = |x: &[f64], out: &mut Vec<Complex64>| -> Result<()> {
        buf.iter_mut().for_each(|v| *v = 0.0);
        for (i, (v, w)) in x.iter().zip(window.iter()).enumerate() {
            buf[i] = v * w;
        }
        fft.process(&mut buf, out)
            .map_err(|e| Error::Numerical(format!("metric FFT failed: {e}")))
    };

    let mut total = 0.0;
    let mut counted = 0usize;
    for &s in &frames {
        analyse(&reference[s..s + framing.len], &mut ref_spec)?;
        analyse(&estimate[s..s + framing.len], &mut est_spec)?;
        let (mut num, mut den) = (0.0, 0.0);
        for filter in &bank {
            let (mut p_ref, mut p_err) = (0.0, 0.0);
            for (k, &h) in filter.iter().enumerate() {
                if h > 0.0 {
                    p_ref += h * ref_spec[k].norm_sqr();
                    p_err += h * (est_spec[k] - ref_spec[k]).norm_sqr();
                }
            }
            if p_ref <= 0.0 {
                continue;
            }
            let snr = if p_err > 0.0 {
                (10.0 * (p_ref / p_err).log10()).clamp(FSNR_MIN_DB, FSNR_MAX_DB)
            } else {
                FSNR_MAX_DB
            };
            let weight = p_ref.powf(BAND_WEIGHT_EXPONENT / 2.0);
            num += weight * snr;
            den += weight;
        }
        if den > 0.0 {
            total += num / den;
            counted += 1;
        }
    }
    if counted == 0 {
        return Err(Error::UndefinedMetric("no frame carries reference energy".into()));
    }
    Ok(total / counted as f64)
}

/// `||current - previous||_F / ||previous||_F`
pub fn convergence_error(current: &Spectrogram, previous: &Spectrogram) -> Result<f64> {
    if !current.same_shape(previous) {
        return Err(Error::InvalidInput("spectrogram shapes differ".into()));
    }
    let den = previous.frobenius_norm();
    if den == 0.0 {
        return Err(Error::UndefinedMetric("previous estimate is all zeros".into()));
    }
    let num = current
        .as_bin_major()
        .iter()
        .zip(previous.as_bin_major())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum::<f64>()
        .sqrt();
    Ok(num / den)
}

/// Per-round, per-node convergence errors of a distributed run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    pub rounds: Vec<usize>,
    /// `errors[r][node]` belongs to `rounds[r]`.
    pub errors: Vec<Vec<f64>>,
}

impl ConvergenceTrace {
    pub fn push(&mut self, round: usize, per_node: Vec<f64>) {
        self.rounds.push(round);
        self.errors.push(per_node);
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Error sequence of one node across rounds.
    pub fn node(&self, node: usize) -> Vec<f64> {
        self.errors.iter().map(|e| e[node]).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,node,error\n");
        for (round, errs) in self.rounds.iter().zip(self.errors.iter()) {
            for (node, e) in errs.iter().enumerate() {
                out.push_str(&format!("{round},{node},{e:.6e}\n"));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::speech_like;
    use crate::stft::{WindowKind, WindowSpec};

    #[test]
    fn identical_signals() {
        let x = speech_like(1.0, 16_000, 3);
        let r = evaluate(&x, &x, 16_000).unwrap();
        assert_eq!(r.cd, 0.0);
        assert_eq!(r.fsnr, FSNR_MAX_DB);
    }

    #[test]
    fn cd_ignores_gain() {
        let x = speech_like(1.0, 16_000, 4);
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        assert!(cepstral_distance(&x, &y, 16_000).unwrap() < 1e-6);
    }

    #[test]
    fn silent_reference_is_undefined() {
        let z = vec![0.0; 16_000];
        assert!(matches!(cepstral_distance(&z, &z, 16_000), Err(Error::UndefinedMetric(_))));
        assert!(matches!(fw_segmental_snr(&z, &z, 16_000), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn length_mismatch_is_invalid() {
        let x = speech_like(1.0, 16_000, 5);
        assert!(matches!(
            cepstral_distance(&x, &x[..1000], 16_000),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn metrics_stay_in_range() {
        let x = speech_like(1.0, 16_000, 6);
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v + ((i * 7919) % 13) as f64 * 0.05).collect();
        let r = evaluate(&x, &y, 16_000).unwrap();
        assert!((0.0..=CD_CLAMP_DB).contains(&r.cd));
        assert!((FSNR_MIN_DB..=FSNR_MAX_DB).contains(&r.fsnr));
    }

    #[test]
    fn lpc_cepstrum_of_one_pole() {
        // 1 / (1 - 0.5 z^-1) has cepstrum c_n = 0.5^n / n.
        let c = lpc_cepstrum(&[1.0, -0.5, 0.0, 0.0]);
        for (n, v) in c.iter().enumerate() {
            let n = n + 1;
            assert!((v - 0.5f64.powi(n as i32) / n as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_error_cases() {
        let w = WindowSpec::new(4, 1, WindowKind::Hann).unwrap();
        let mut a = Spectrogram::zeros(3, w, 16_000);
        for n in 0..3 {
            a.set(n, 1, Complex64::new(n as f64 + 1.0, -1.0));
        }
        assert_eq!(convergence_error(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b.bins_mut().for_each(|bin| bin.iter_mut().for_each(|z| *z *= 1.1));
        assert!((convergence_error(&b, &a).unwrap() - 0.1).abs() < 1e-12);
        let zero = Spectrogram::zeros(3, w, 16_000);
        assert!(matches!(convergence_error(&a, &zero), Err(Error::UndefinedMetric(_))));
    }
}
