//! Weighted prediction error dereverberation.
//!
//! The late reverberation of a reference channel is predicted from delayed
//! frames of one or more channels and subtracted. Prediction weights and the
//! desired-signal PSD are estimated by alternating a per-bin weighted least
//! squares solve with the PSD update `sigma = max(|D|^2, eps)`.

mod linalg;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::stft::Spectrogram;

pub use linalg::{solve_weights, HermitianMatrix, RESIDUAL_TOLERANCE};

/// Lower bound on the desired-signal PSD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PsdFloor {
    /// Fixed power value.
    Absolute(f64),
    /// Fraction of the mean power of the reference channel.
    Relative(f64),
}

impl PsdFloor {
    pub fn resolve(&self, reference: &Spectrogram) -> f64 {
        match *self {
            PsdFloor::Absolute(eps) => eps,
            PsdFloor::Relative(frac) => {
                let p = reference.mean_power();
                if p > 0.0 {
                    frac * p
                } else {
                    frac
                }
            }
        }
    }

    fn value(&self) -> f64 {
        match *self {
            PsdFloor::Absolute(v) | PsdFloor::Relative(v) => v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WpeParams {
    /// Prediction delay in frames.
    pub delay: usize,
    /// Prediction taps per channel.
    pub filter_order: usize,
    pub psd_floor: PsdFloor,
    pub max_iters: usize,
    /// Stop when the relative Frobenius change of the output falls below this.
    pub convergence_tol: f64,
    /// Diagonal loading as a fraction of `trace(Z) / dim`.
    pub ridge: f64,
}

impl Default for WpeParams {
    fn default() -> Self {
        Self {
            delay: 4,
            filter_order: 26,
            psd_floor: PsdFloor::Relative(1e-8),
            max_iters: 10,
            convergence_tol: 1e-4,
            ridge: 1e-8,
        }
    }
}

impl WpeParams {
    pub fn new(delay: usize, filter_order: usize) -> Self {
        Self {
            delay,
            filter_order,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.delay < 1 {
            return Err(Error::Config("prediction delay must be at least one frame".into()));
        }
        if self.filter_order < 1 {
            return Err(Error::Config("filter order must be at least one tap".into()));
        }
        let eps = self.psd_floor.value();
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::Config(format!("PSD floor must be positive, got {eps}")));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("at least one iteration is required".into()));
        }
        if !(self.convergence_tol >= 0.0) {
            return Err(Error::Config("convergence tolerance must be non-negative".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Config("ridge factor must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Per-frame desired-signal power, `n_frames x n_bins`, bin-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PsdEstimate {
    n_frames: usize,
    n_bins: usize,
    data: Vec<f64>,
}

impl PsdEstimate {
    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn get(&self, frame: usize, bin: usize) -> f64 {
        self.data[bin * self.n_frames + frame]
    }

    pub fn bin(&self, bin: usize) -> &[f64] {
        &self.data[bin * self.n_frames..(bin + 1) * self.n_frames]
    }

    /// Multiplies every entry by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|s| s * factor).collect(),
            ..self.clone()
        }
    }

    pub fn min(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// `sigma(n, k) = max(|D(n, k)|^2, floor)`.
pub fn update_psd(desired: &Spectrogram, floor: f64) -> PsdEstimate {
    PsdEstimate {
        n_frames: desired.n_frames(),
        n_bins: desired.n_bins(),
        data: desired
            .as_bin_major()
            .iter()
            .map(|d| d.norm_sqr().max(floor))
            .collect(),
    }
}

/// Writes `S(n - delay - l)` for `l = 0..out.len()` into `out`; frames
/// before the start of the signal are zero.
#[inline]
pub(crate) fn fill_delayed(frames: &[Complex64], n: usize, delay: usize, out: &mut [Complex64]) {
    for (l, slot) in out.iter_mut().enumerate() {
        let back = delay + l;
        *slot = if n >= back {
            frames[n - back]
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
}

/// The delayed observation vector `(S(n-tau, k), ..., S(n-tau-L+1, k))`.
pub fn build_delayed_vector(
    spec: &Spectrogram,
    n: usize,
    k: usize,
    params: &WpeParams,
) -> Result<Vec<Complex64>> {
    if n >= spec.n_frames() || k >= spec.n_bins() {
        return Err(Error::InvalidInput(format!(
            "frame {n}, bin {k} outside a {}x{} spectrogram",
            spec.n_frames(),
            spec.n_bins()
        )));
    }
    let mut out = vec![Complex64::new(0.0, 0.0); params.filter_order];
    fill_delayed(spec.bin(k), n, params.delay, &mut out);
    Ok(out)
}

#[inline]
fn inner_conj(weights: &[Complex64], x: &[Complex64]) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (w, v) in weights.iter().zip(x.iter()) {
        acc += w.conj() * v;
    }
    acc
}

/// `reference - weights^H * stacked`
pub fn predict_desired(
    reference: Complex64,
    stacked: &[Complex64],
    weights: &[Complex64],
) -> Result<Complex64> {
    if stacked.len() != weights.len() {
        return Err(Error::InvalidInput(format!(
            "{} weights for a stacked vector of length {}",
            weights.len(),
            stacked.len()
        )));
    }
    Ok(reference - inner_conj(weights, stacked))
}

/// Regression vectors of one frequency bin, one row per frame.
#[derive(Debug, Clone)]
pub struct Regressors {
    dim: usize,
    rows: Vec<Complex64>,
}

impl Regressors {
    pub fn zeros(n_frames: usize, dim: usize) -> Self {
        Self {
            dim,
            rows: vec![Complex64::new(0.0, 0.0); n_frames * dim],
        }
    }

    pub fn from_rows(rows: &[Vec<Complex64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("regression rows differ in length".into()));
        }
        Ok(Self {
            dim,
            rows: rows.concat(),
        })
    }

    /// Delayed vectors of each channel stacked channel by channel.
    pub fn stacked(channels: &[&[Complex64]], delay: usize, order: usize) -> Self {
        let n_frames = channels.first().map_or(0, |c| c.len());
        let mut out = Self::zeros(n_frames, channels.len() * order);
        for n in 0..n_frames {
            let row = out.row_mut(n);
            for (c, frames) in channels.iter().enumerate() {
                fill_delayed(frames, n, delay, &mut row[c * order..(c + 1) * order]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_frames(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.rows.len() / self.dim
        }
    }

    #[inline]
    pub fn row(&self, n: usize) -> &[Complex64] {
        &self.rows[n * self.dim..(n + 1) * self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, n: usize) -> &mut [Complex64] {
        &mut self.rows[n * self.dim..(n + 1) * self.dim]
    }
}

/// Builds `Z = sum_n x_n x_n^H / sigma_n` and `q = sum_n x_n conj(target_n) / sigma_n`.
///
/// `target` is the reference observation. Using it, rather than the previous
/// desired estimate, yields the same fixed point with the solve expressed
/// directly in the weights instead of as an increment.
pub fn accumulate_normal_equations(
    regressors: &Regressors,
    target: &[Complex64],
    sigma: &[f64],
) -> Result<(HermitianMatrix, Vec<Complex64>)> {
    let n_frames = regressors.n_frames();
    if target.len() != n_frames || sigma.len() != n_frames {
        return Err(Error::InvalidInput(format!(
            "{n_frames} regression rows, {} targets, {} PSD values",
            target.len(),
            sigma.len()
        )));
    }
    let d = regressors.dim();
    let mut z = HermitianMatrix::zeros(d);
    let mut q = vec![Complex64::new(0.0, 0.0); d];
    let mut scaled = vec![Complex64::new(0.0, 0.0); d];
    for n in 0..n_frames {
        let s = sigma[n];
        if !(s > 0.0) {
            return Err(Error::InvalidInput(format!("PSD value {s} at frame {n} is not positive")));
        }
        let x = regressors.row(n);
        for (u, v) in scaled.iter_mut().zip(x.iter()) {
            *u = v / s;
        }
        let t = target[n].conj();
        for i in 0..d {
            let ui = scaled[i];
            let zrow = &mut z.row_mut(i)[i..];
            for (zij, xj) in zrow.iter_mut().zip(x[i..].iter()) {
                *zij += ui * xj.conj();
            }
            q[i] += ui * t;
        }
    }
    z.mirror_upper();
    if !z.is_finite() || q.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
        return Err(Error::Numerical("normal equations overflowed".into()));
    }
    Ok((z, q))
}

/// Weighted least-squares prediction weights for one bin.
pub(crate) fn solve_bin(
    regressors: &Regressors,
    target: &[Complex64],
    sigma: &[f64],
    ridge_factor: f64,
) -> Result<Vec<Complex64>> {
    let (z, q) = accumulate_normal_equations(regressors, target, sigma)?;
    let d = z.dim();
    let trace = z.trace();
    if trace == 0.0 {
        return Ok(vec![Complex64::new(0.0, 0.0); d]);
    }
    solve_weights(&z, &q, ridge_factor * trace / d as f64)
}

/// `D(n) = target(n) - w^H x_n` for every frame.
pub(crate) fn predict_bin(
    regressors: &Regressors,
    target: &[Complex64],
    weights: &[Complex64],
    out: &mut [Complex64],
) {
    for (n, (o, t)) in out.iter_mut().zip(target.iter()).enumerate() {
        *o = t - inner_conj(weights, regressors.row(n));
    }
}

/// The negative log-likelihood `sum |D|^2 / sigma + ln(pi sigma)` over all frames and bins.
pub fn wpe_cost(desired: &Spectrogram, psd: &PsdEstimate) -> f64 {
    desired
        .as_bin_major()
        .iter()
        .zip(psd.data.iter())
        .map(|(d, s)| d.norm_sqr() / s + (std::f64::consts::PI * s).ln())
        .sum()
}

/// Relative Frobenius distance `||a - b|| / ||b||`.
pub(crate) fn relative_change(current: &[Complex64], previous: &[Complex64]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in current.iter().zip(previous.iter()) {
        num += (a - b).norm_sqr();
        den += b.norm_sqr();
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Cost after the weight update, under the PSD used for that update.
    pub cost: f64,
    /// Relative change of the desired signal against the previous iterate.
    pub relative_change: f64,
}

#[derive(Debug, Clone)]
pub struct WpeOutput {
    pub desired: Spectrogram,
    /// Per-bin stacked prediction weights.
    pub weights: Vec<Vec<Complex64>>,
    pub trace: Vec<IterationDiagnostics>,
    pub converged: bool,
}

/// Runs WPE on `observations` with `observations[ref_channel]` as the
/// reference. A single observation gives single-channel WPE.
pub fn run_wpe(
    observations: &[Spectrogram],
    ref_channel: usize,
    params: &WpeParams,
) -> Result<WpeOutput> {
    params.validate()?;
    let reference = observations.get(ref_channel).ok_or_else(|| {
        Error::InvalidInput(format!(
            "reference channel {ref_channel} out of range for {} channels",
            observations.len()
        ))
    })?;
    if observations.iter().any(|o| !o.same_shape(reference)) {
        return Err(Error::InvalidInput(
            "all channels must share frame and bin counts".into(),
        ));
    }
    let floor = params.psd_floor.resolve(reference);
    let n_bins = reference.n_bins();
    let n_frames = reference.n_frames();

    let mut desired = reference.clone();
    let mut weights = vec![vec![Complex64::new(0.0, 0.0); observations.len() * params.filter_order]; n_bins];
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=params.max_iters {
        let psd = update_psd(&desired, floor);
        let solved: Vec<(Vec<Complex64>, Vec<Complex64>)> = (0..n_bins)
            .into_par_iter()
            .map(|k| {
                let channels: Vec<&[Complex64]> = observations.iter().map(|o| o.bin(k)).collect();
                let regressors = Regressors::stacked(&channels, params.delay, params.filter_order);
                let target = reference.bin(k);
                let w = solve_bin(&regressors, target, psd.bin(k), params.ridge)
                    .map_err(|e| e.context(format!("iteration {iteration}, bin {k}")))?;
                let mut out = vec![Complex64::new(0.0, 0.0); n_frames];
                predict_bin(&regressors, target, &w, &mut out);
                Ok((w, out))
            })
            .collect::<Result<_>>()?;

        let mut next = Spectrogram::zeros(n_frames, *reference.window(), reference.sample_rate());
        for (k, (w, d)) in solved.into_iter().enumerate() {
            next.bin_mut(k).copy_from_slice(&d);
            weights[k] = w;
        }
        let change = relative_change(next.as_bin_major(), desired.as_bin_major());
        trace.push(IterationDiagnostics {
            iteration,
            cost: wpe_cost(&next, &psd),
            relative_change: change,
        });
        desired = next;
        if change < params.convergence_tol {
            converged = true;
            break;
        }
    }

    Ok(WpeOutput {
        desired,
        weights,
        trace,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stft::{WindowKind, WindowSpec};

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn ramp_spec(n_frames: usize) -> Spectrogram {
        let w = WindowSpec::new(4, 1, WindowKind::Hann).unwrap();
        let mut s = Spectrogram::zeros(n_frames, w, 16_000);
        for k in 0..s.n_bins() {
            for n in 0..n_frames {
                s.set(n, k, c(n as f64 + 1.0, k as f64));
            }
        }
        s
    }

    #[test]
    fn params_validation() {
        assert!(WpeParams::default().validate().is_ok());
        let mut p = WpeParams::default();
        p.delay = 0;
        assert!(matches!(p.validate(), Err(Error::Config(_))));
        let mut p = WpeParams::default();
        p.psd_floor = PsdFloor::Absolute(0.0);
        assert!(p.validate().is_err());
        let mut p = WpeParams::default();
        p.filter_order = 0;
        assert!(p.validate().is_err());
        let mut p = WpeParams::default();
        p.max_iters = 0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn delayed_vector_before_signal_start_is_zero() {
        let spec = ramp_spec(10);
        let p = WpeParams::new(3, 4);
        for n in 0..3 {
            let v = build_delayed_vector(&spec, n, 1, &p).unwrap();
            assert!(v.iter().all(|z| *z == c(0.0, 0.0)));
        }
        // Partially covered: only S(0) available.
        let v = build_delayed_vector(&spec, 3, 1, &p).unwrap();
        assert_eq!(v, vec![spec.get(0, 1), c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
    }

    #[test]
    fn delayed_vector_single_tap() {
        let spec = ramp_spec(10);
        let v = build_delayed_vector(&spec, 6, 2, &WpeParams::new(2, 1)).unwrap();
        assert_eq!(v, vec![spec.get(4, 2)]);
    }

    #[test]
    fn delayed_vector_out_of_range() {
        let spec = ramp_spec(5);
        assert!(build_delayed_vector(&spec, 5, 0, &WpeParams::new(1, 1)).is_err());
    }

    #[test]
    fn predict_with_zero_weights_or_zero_stack() {
        let r = c(0.3, -0.7);
        let x = vec![c(1.0, 2.0), c(-1.0, 0.5)];
        assert_eq!(predict_desired(r, &x, &[c(0.0, 0.0); 2]).unwrap(), r);
        assert_eq!(predict_desired(r, &[c(0.0, 0.0); 2], &x).unwrap(), r);
        assert!(predict_desired(r, &x, &[c(1.0, 0.0)]).is_err());
    }

    #[test]
    fn psd_floor_is_applied() {
        let w = WindowSpec::new(4, 1, WindowKind::Hann).unwrap();
        let mut d = Spectrogram::zeros(2, w, 16_000);
        d.set(0, 0, c(0.5f64.sqrt(), 0.0));
        let psd = update_psd(&d, 1e-4);
        assert!((psd.get(0, 0) - 0.5).abs() < 1e-15);
        assert_eq!(psd.get(1, 0), 1e-4);
        assert_eq!(psd.min(), 1e-4);
    }

    #[test]
    fn rank_one_accumulation() {
        let reg = Regressors::from_rows(&[vec![c(1.0, 0.0), c(0.0, 0.0)]]).unwrap();
        let refv = c(2.0, 3.0);
        let (z, q) = accumulate_normal_equations(&reg, &[refv], &[1.0]).unwrap();
        assert_eq!(z.get(0, 0), c(1.0, 0.0));
        assert_eq!(z.get(0, 1), c(0.0, 0.0));
        assert_eq!(z.get(1, 1), c(0.0, 0.0));
        assert_eq!(q, vec![refv.conj(), c(0.0, 0.0)]);
    }

    #[test]
    fn accumulation_rejects_non_positive_psd() {
        let reg = Regressors::from_rows(&[vec![c(1.0, 0.0)]]).unwrap();
        assert!(accumulate_normal_equations(&reg, &[c(1.0, 0.0)], &[0.0]).is_err());
        assert!(accumulate_normal_equations(&reg, &[c(1.0, 0.0)], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn reference_channel_out_of_range() {
        let spec = ramp_spec(6);
        assert!(matches!(
            run_wpe(&[spec], 1, &WpeParams::new(1, 1)),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn mismatched_channel_shapes() {
        assert!(run_wpe(&[ramp_spec(6), ramp_spec(7)], 0, &WpeParams::new(1, 1)).is_err());
    }
}
