//! Integer-sample alignment of node signals by GCC-PHAT.

use num_complex::Complex64;
use realfft::RealFftPlanner;

use crate::error::{Error, Result};

/// Lag of `b` relative to `a` in samples, searched over `[-max_lag, max_lag]`.
/// Positive when `b` is a delayed copy of `a`.
pub fn gcc_phat_lag(a: &[f64], b: &[f64], max_lag: usize) -> Result<i64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("GCC-PHAT needs non-empty signals".into()));
    }
    if max_lag >= a.len().min(b.len()) {
        return Err(Error::InvalidInput(format!(
            "max lag {max_lag} must be shorter than both signals ({} and {} samples)",
            a.len(),
            b.len()
        )));
    }
    if a.iter().all(|&x| x == 0.0) || b.iter().all(|&x| x == 0.0) {
        return Err(Error::UndefinedLag("an input signal is all zeros".into()));
    }

    let size = (a.len() + b.len()).next_power_of_two();
    let mut planner = RealFftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(size);
    let inv = planner.plan_fft_inverse(size);
    let fft_err = |e: realfft::FftError| Error::Numerical(format!("GCC-PHAT FFT failed: {e}"));

    let mut pa = vec![0.0; size];
    pa[..a.len()].copy_from_slice(a);
    let mut pb = vec![0.0; size];
    pb[..b.len()].copy_from_slice(b);
    let mut fa = fwd.make_output_vec();
    let mut fb = fwd.make_output_vec();
    fwd.process(&mut pa, &mut fa).map_err(fft_err)?;
    fwd.process(&mut pb, &mut fb).map_err(fft_err)?;

    let mut cross: Vec<Complex64> = fa.iter().zip(fb.iter()).map(|(x, y)| x.conj() * y).collect();
    let peak = cross.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let guard = peak * 1e-12;
    for c in cross.iter_mut() {
        let mag = c.norm();
        *c = if mag > guard {
            *c / mag
        } else {
            Complex64::new(0.0, 0.0)
        };
    }
    let last = cross.len() - 1;
    cross[0].im = 0.0;
    cross[last].im = 0.0;
    let mut corr = inv.make_output_vec();
    inv.process(&mut cross, &mut corr).map_err(fft_err)?;

    let max_lag = max_lag as i64;
    let mut best_lag = 0i64;
    let mut best = f64::NEG_INFINITY;
    for lag in -max_lag..=max_lag {
        let idx = if lag >= 0 {
            lag as usize
        } else {
            (size as i64 + lag) as usize
        };
        if corr[idx] > best {
            best = corr[idx];
            best_lag = lag;
        }
    }
    if !best.is_finite() {
        return Err(Error::UndefinedLag("cross-correlation is not finite".into()));
    }
    Ok(best_lag)
}

/// `out[t] = x[t + lag]`, zero outside the signal.
pub fn shift_signal(x: &[f64], lag: i64) -> Vec<f64> {
    let len = x.len() as i64;
    (0..len)
        .map(|t| {
            let src = t + lag;
            if (0..len).contains(&src) {
                x[src as usize]
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synchronized {
    pub signals: Vec<Vec<f64>>,
    /// Lag of each input against the reference; the aligned signal is the
    /// input advanced by this many samples.
    pub lags: Vec<i64>,
}

/// Aligns every signal to `observations[reference]`.
pub fn synchronize(
    observations: &[Vec<f64>],
    reference: usize,
    max_lag: usize,
) -> Result<Synchronized> {
    let ref_sig = observations.get(reference).ok_or_else(|| {
        Error::InvalidInput(format!(
            "reference {reference} out of range for {} signals",
            observations.len()
        ))
    })?;
    let mut signals = Vec::with_capacity(observations.len());
    let mut lags = Vec::with_capacity(observations.len());
    for (i, sig) in observations.iter().enumerate() {
        let lag = if i == reference {
            0
        } else {
            gcc_phat_lag(ref_sig, sig, max_lag).map_err(|e| e.context(format!("node {i}")))?
        };
        signals.push(shift_signal(sig, lag));
        lags.push(lag);
    }
    Ok(Synchronized { signals, lags })
}
