//! Short-time Fourier analysis and weighted overlap-add synthesis.
//!
//! Analysis and synthesis both use a periodic square-root Hann window, so
//! their product is a Hann window and satisfies constant overlap-add at any
//! hop that divides the frame into an even number of steps (75% overlap is
//! the default). Spectra are one-sided: `frame_len / 2 + 1` bins.

use std::f64::consts::PI;

use num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

/// Maximum relative deviation of the overlap-added window product.
const COLA_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Square-root periodic Hann analysis/synthesis pair.
    Hann,
    /// Rectangular analysis and synthesis. COLA-valid when the hop divides the frame.
    Rectangular,
}

/// Frame length, hop and window shape of an STFT.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    frame_len: usize,
    hop: usize,
    kind: WindowKind,
}

impl WindowSpec {
    pub fn new(frame_len: usize, hop: usize, kind: WindowKind) -> Result<Self> {
        if frame_len < 2 || frame_len % 2 != 0 {
            return Err(Error::Config(format!(
                "frame length must be even and at least 2, got {frame_len}"
            )));
        }
        if hop == 0 || hop > frame_len {
            return Err(Error::Config(format!(
                "hop must satisfy 0 < hop <= frame_len, got hop {hop} for frame {frame_len}"
            )));
        }
        let spec = Self {
            frame_len,
            hop,
            kind,
        };
        let deviation = spec.cola_deviation();
        if deviation > COLA_TOLERANCE {
            return Err(Error::Config(format!(
                "{kind:?} window with frame {frame_len} and hop {hop} violates constant \
                 overlap-add (relative deviation {deviation:.3e})"
            )));
        }
        Ok(spec)
    }

    /// 32 ms frames with 75% overlap at the given sample rate.
    pub fn speech_default(sample_rate: u32) -> Result<Self> {
        let frame_len = (sample_rate as usize * 32) / 1000;
        let frame_len = frame_len + frame_len % 2;
        Self::new(frame_len, frame_len / 4, WindowKind::Hann)
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn kind(&self) -> WindowKind {
        self.kind
    }

    /// Number of one-sided frequency bins.
    pub fn n_bins(&self) -> usize {
        self.frame_len / 2 + 1
    }

    /// Number of frames needed to cover `len` samples, padding the tail.
    pub fn n_frames_for(&self, len: usize) -> usize {
        if len <= self.frame_len {
            1
        } else {
            1 + (len - self.frame_len).div_ceil(self.hop)
        }
    }

    pub fn analysis_window(&self) -> Vec<f64> {
        match self.kind {
            WindowKind::Hann => periodic_hann(self.frame_len)
                .into_iter()
                .map(f64::sqrt)
                .collect(),
            WindowKind::Rectangular => vec![1.0; self.frame_len],
        }
    }

    /// Synthesis window, scaled so that analysis times synthesis overlap-adds to one.
    pub fn synthesis_window(&self) -> Vec<f64> {
        let gain = self.overlap_gain();
        self.analysis_window().into_iter().map(|w| w / gain).collect()
    }

    fn product_window(&self) -> Vec<f64> {
        self.analysis_window().iter().map(|w| w * w).collect()
    }

    fn overlap_sums(&self) -> Vec<f64> {
        let product = self.product_window();
        (0..self.hop)
            .map(|phase| product.iter().skip(phase).step_by(self.hop).sum())
            .collect()
    }

    fn overlap_gain(&self) -> f64 {
        let sums = self.overlap_sums();
        sums.iter().sum::<f64>() / sums.len() as f64
    }

    fn cola_deviation(&self) -> f64 {
        let sums = self.overlap_sums();
        let mean = sums.iter().sum::<f64>() / sums.len() as f64;
        if mean <= 0.0 {
            return f64::INFINITY;
        }
        sums.iter()
            .map(|s| (s - mean).abs() / mean)
            .fold(0.0, f64::max)
    }
}

fn periodic_hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// Complex time-frequency representation of one channel, `n_frames x n_bins`.
///
/// Storage is bin-major so that the per-frequency processing in the
/// prediction filters reads contiguous frame sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    n_frames: usize,
    n_bins: usize,
    sample_rate: u32,
    window: WindowSpec,
    data: Vec<Complex64>,
}

impl Spectrogram {
    pub fn zeros(n_frames: usize, window: WindowSpec, sample_rate: u32) -> Self {
        let n_bins = window.n_bins();
        Self {
            n_frames,
            n_bins,
            sample_rate,
            window,
            data: vec![Complex64::new(0.0, 0.0); n_frames * n_bins],
        }
    }

    /// Builds a spectrogram from bin-major data (`data[k * n_frames + n]`).
    pub fn from_bin_major(
        n_frames: usize,
        window: WindowSpec,
        sample_rate: u32,
        data: Vec<Complex64>,
    ) -> Result<Self> {
        let n_bins = window.n_bins();
        if n_frames == 0 {
            return Err(Error::InvalidInput("spectrogram needs at least one frame".into()));
        }
        if data.len() != n_frames * n_bins {
            return Err(Error::InvalidInput(format!(
                "expected {} values for {n_frames} frames x {n_bins} bins, got {}",
                n_frames * n_bins,
                data.len()
            )));
        }
        if data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidInput("spectrogram contains non-finite values".into()));
        }
        Ok(Self {
            n_frames,
            n_bins,
            sample_rate,
            window,
            data,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn window(&self) -> &WindowSpec {
        &self.window
    }

    #[inline]
    pub fn get(&self, frame: usize, bin: usize) -> Complex64 {
        self.data[bin * self.n_frames + frame]
    }

    #[inline]
    pub fn set(&mut self, frame: usize, bin: usize, value: Complex64) {
        self.data[bin * self.n_frames + frame] = value;
    }

    /// All frames of one frequency bin.
    pub fn bin(&self, bin: usize) -> &[Complex64] {
        &self.data[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    pub fn bin_mut(&mut self, bin: usize) -> &mut [Complex64] {
        &mut self.data[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    pub fn bins_mut(&mut self) -> std::slice::ChunksExactMut<'_, Complex64> {
        self.data.chunks_exact_mut(self.n_frames)
    }

    pub fn as_bin_major(&self) -> &[Complex64] {
        &self.data
    }

    /// Same layout and framing, different content.
    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.n_frames == other.n_frames && self.n_bins == other.n_bins
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn mean_power(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

/// Analyses a real signal into a one-sided spectrogram.
///
/// Frame `n` covers samples `[n * hop, n * hop + frame_len)`; samples past
/// the end of the signal are zero.
pub fn stft(signal: &[f64], window: &WindowSpec, sample_rate: u32) -> Result<Spectrogram> {
    if signal.is_empty() {
        return Err(Error::InvalidInput("cannot analyse an empty signal".into()));
    }
    if signal.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidInput("signal contains non-finite samples".into()));
    }
    let frame_len = window.frame_len();
    let hop = window.hop();
    let n_frames = window.n_frames_for(signal.len());
    let analysis = window.analysis_window();

    let mut planner = RealFftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(frame_len);
    let mut frame = fft.make_input_vec();
    let mut spectrum = fft.make_output_vec();
    let mut scratch = fft.make_scratch_vec();

    let mut out = Spectrogram::zeros(n_frames, *window, sample_rate);
    for n in 0..n_frames {
        let start = n * hop;
        for (i, slot) in frame.iter_mut().enumerate() {
            *slot = signal.get(start + i).copied().unwrap_or(0.0) * analysis[i];
        }
        fft.process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
            .map_err(|e| Error::Numerical(format!("forward FFT failed: {e}")))?;
        for (k, value) in spectrum.iter().enumerate() {
            out.set(n, k, *value);
        }
    }
    Ok(out)
}

/// Weighted overlap-add resynthesis. Output length is `(N - 1) * hop + frame_len`.
pub fn istft(spec: &Spectrogram) -> Result<Vec<f64>> {
    let window = spec.window();
    let frame_len = window.frame_len();
    let hop = window.hop();
    if spec.n_bins() != window.n_bins() {
        return Err(Error::InvalidInput(format!(
            "{} bins do not match frame length {frame_len}",
            spec.n_bins()
        )));
    }
    let synthesis = window.synthesis_window();
    let n_frames = spec.n_frames();

    let mut planner = RealFftPlanner::<f64>::new();
    let ifft = planner.plan_fft_inverse(frame_len);
    let mut spectrum = ifft.make_input_vec();
    let mut frame = ifft.make_output_vec();
    let mut scratch = ifft.make_scratch_vec();

    let mut out = vec![0.0; (n_frames - 1) * hop + frame_len];
    let scale = 1.0 / frame_len as f64;
    let last = spectrum.len() - 1;
    for n in 0..n_frames {
        for (k, slot) in spectrum.iter_mut().enumerate() {
            *slot = spec.get(n, k);
        }
        // DC and Nyquist of a real frame are real.
        spectrum[0].im = 0.0;
        spectrum[last].im = 0.0;
        ifft.process_with_scratch(&mut spectrum, &mut frame, &mut scratch)
            .map_err(|e| Error::Numerical(format!("inverse FFT failed: {e}")))?;
        let start = n * hop;
        for (i, x) in frame.iter().enumerate() {
            out[start + i] += x * scale * synthesis[i];
        }
    }
    Ok(out)
}

/// Analyses `signal` with `frame_len - hop` zeros on both sides, so that
/// every original sample lies under a full set of overlapping frames.
pub fn stft_padded(signal: &[f64], window: &WindowSpec, sample_rate: u32) -> Result<Spectrogram> {
    let pad = window.frame_len() - window.hop();
    let mut padded = vec![0.0; signal.len() + 2 * pad];
    padded[pad..pad + signal.len()].copy_from_slice(signal);
    stft(&padded, window, sample_rate)
}

/// Inverse of [`stft_padded`] for a signal of `len` samples.
pub fn istft_padded(spec: &Spectrogram, len: usize) -> Result<Vec<f64>> {
    let pad = spec.window().frame_len() - spec.window().hop();
    let full = istft(spec)?;
    if full.len() < pad + len {
        return Err(Error::InvalidInput(format!(
            "{} frames cannot hold {len} samples",
            spec.n_frames()
        )));
    }
    Ok(full[pad..pad + len].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_window() -> WindowSpec {
        WindowSpec::speech_default(16_000).unwrap()
    }

    #[test]
    fn speech_default_is_32ms_with_75_percent_overlap() {
        let w = default_window();
        assert_eq!(w.frame_len(), 512);
        assert_eq!(w.hop(), 128);
        assert_eq!(w.n_bins(), 257);
    }

    #[test]
    fn rejects_bad_hops() {
        assert!(matches!(
            WindowSpec::new(512, 0, WindowKind::Hann),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            WindowSpec::new(512, 513, WindowKind::Hann),
            Err(Error::Config(_))
        ));
        // Hann alone does not overlap-add to a constant without overlap.
        assert!(matches!(
            WindowSpec::new(512, 512, WindowKind::Hann),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            WindowSpec::new(512, 100, WindowKind::Rectangular),
            Err(Error::Config(_))
        ));
        assert!(WindowSpec::new(512, 512, WindowKind::Rectangular).is_ok());
        assert!(WindowSpec::new(512, 256, WindowKind::Hann).is_ok());
    }

    #[test]
    fn empty_signal_is_invalid() {
        assert!(matches!(
            stft(&[], &default_window(), 16_000),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn zero_signal_gives_zero_spectrogram() {
        let spec = stft(&vec![0.0; 16_000], &default_window(), 16_000).unwrap();
        assert!(spec.as_bin_major().iter().all(|z| z.norm() == 0.0));
        let back = istft(&spec).unwrap();
        assert!(back.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn frame_count_pads_trailing_partial_frame() {
        let w = default_window();
        assert_eq!(w.n_frames_for(512), 1);
        assert_eq!(w.n_frames_for(100), 1);
        assert_eq!(w.n_frames_for(513), 2);
        assert_eq!(w.n_frames_for(640), 2);
        assert_eq!(w.n_frames_for(641), 3);
    }

    #[test]
    fn bin_centre_sinusoid_peaks_at_its_bin() {
        let w = default_window();
        let m = 37;
        let signal: Vec<f64> = (0..8000)
            .map(|t| (2.0 * PI * m as f64 * t as f64 / 512.0).sin())
            .collect();
        let spec = stft(&signal, &w, 16_000).unwrap();
        // Frames fully inside the signal.
        for n in 0..(8000 - 512) / 128 {
            let peak = (0..spec.n_bins())
                .max_by(|&a, &b| spec.get(n, a).norm().total_cmp(&spec.get(n, b).norm()))
                .unwrap();
            assert_eq!(peak, m, "frame {n}");
        }
    }

    #[test]
    fn single_frame_stays_local() {
        let w = default_window();
        let mut spec = Spectrogram::zeros(10, w, 16_000);
        for k in 0..spec.n_bins() {
            spec.set(4, k, Complex64::new(1.0, 0.5));
        }
        let out = istft(&spec).unwrap();
        assert_eq!(out.len(), 9 * 128 + 512);
        for (t, x) in out.iter().enumerate() {
            if !(4 * 128..4 * 128 + 512).contains(&t) {
                assert_eq!(*x, 0.0, "sample {t}");
            }
        }
        assert!(out.iter().any(|x| x.abs() > 0.0));
    }

    #[test]
    fn rejects_mismatched_bins() {
        let w = default_window();
        let other = WindowSpec::new(256, 64, WindowKind::Hann).unwrap();
        let mut spec = Spectrogram::zeros(3, w, 16_000);
        spec.window = other;
        assert!(matches!(istft(&spec), Err(Error::InvalidInput(_))));
    }
}
